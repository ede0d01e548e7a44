"""Collection manifests: which images exist, their annotations, and splits.

A manifest is a line-delimited JSON file (one record per line, a metadata
header first). Paths are stored relative to the dataset root so the file
is human-diffable and relocatable alongside the data.
"""
from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path


class ManifestError(ValueError):
    pass


@dataclass
class ManifestRecord:
    image: str
    split: str = "train"
    saliency: str | None = None
    mask: str | None = None
    foreground: str | None = None
    landmarks: list | None = None  # L x [u, v], normalized
    bbox: list | None = None  # [u0, v0, u1, v1], fractions

    def bbox_area_frac(self) -> float | None:
        if self.bbox is None:
            return None
        u0, v0, u1, v1 = self.bbox
        return max(0.0, u1 - u0) * max(0.0, v1 - v0)


@dataclass
class CollectionManifest:
    root: Path
    records: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def split(self, name: str):
        return [r for r in self.records if r.split == name]

    def resolve(self, rel: str) -> Path:
        return self.root / rel

    def save(self, path) -> None:
        path = Path(path)
        meta = dict(self.meta)
        meta["root_rel"] = os.path.relpath(self.root, path.parent)
        with path.open("w") as fh:
            fh.write(json.dumps({"meta": meta}, sort_keys=True) + "\n")
            for r in self.records:
                fh.write(json.dumps(asdict(r), sort_keys=True) + "\n")

    @classmethod
    def load(cls, path, validate: bool = True) -> "CollectionManifest":
        path = Path(path)
        if not path.exists():
            raise ManifestError(f"manifest not found: {path}")
        lines = path.read_text().splitlines()
        if not lines:
            raise ManifestError(f"manifest {path} is empty")
        header = json.loads(lines[0])
        meta = header.get("meta", {})
        root = path.parent / meta.get("root_rel", ".")
        records = [ManifestRecord(**json.loads(ln)) for ln in lines[1:] if ln.strip()]
        manifest = cls(root=root.resolve(), records=records, meta=meta)
        if validate:
            manifest.validate_files()
        return manifest

    def validate_files(self) -> None:
        for r in self.records:
            for rel in (r.image, r.saliency, r.mask, r.foreground):
                if rel is None:
                    continue
                p = self.resolve(rel)
                if not p.exists():
                    raise ManifestError(f"referenced file missing: {p}")
        splits = {}
        for r in self.records:
            splits.setdefault(r.split, set()).add(r.image)
        names = list(splits)
        for i, a in enumerate(names):
            for b in names[i + 1 :]:
                overlap = splits[a] & splits[b]
                if overlap:
                    raise ManifestError(
                        f"splits {a!r} and {b!r} overlap on {sorted(overlap)[:3]}"
                    )


def _load_synthetic_records(root: Path):
    ann_path = root / "annotations.jsonl"
    if not ann_path.exists():
        raise ManifestError(f"no annotations.jsonl under {root}")
    records = []
    for line in ann_path.read_text().splitlines():
        if not line.strip():
            continue
        ann = json.loads(line)
        records.append(
            ManifestRecord(
                image=ann["image"],
                saliency=ann.get("saliency"),
                mask=ann.get("mask"),
                foreground=ann.get("foreground"),
                landmarks=ann.get("centers"),
                bbox=ann.get("bbox"),
            )
        )
    return records


def _load_image_dir_records(root: Path):
    image_dir = root / "images"
    if not image_dir.is_dir():
        raise ManifestError(f"no images/ directory under {root}")
    records = []
    for p in sorted(image_dir.iterdir()):
        if p.suffix.lower() not in (".png", ".jpg", ".jpeg"):
            continue
        rec = ManifestRecord(image=f"images/{p.name}")
        sal = root / "saliency" / f"{p.stem}.png"
        if sal.exists():
            rec.saliency = f"saliency/{p.stem}.png"
        fg = root / "foreground" / f"{p.stem}.png"
        if fg.exists():
            rec.foreground = f"foreground/{p.stem}.png"
        records.append(rec)
    return records


def build_manifest(
    root,
    kind: str = "synthetic",
    min_area_frac: float | None = None,
    exclude=None,
    test_count: int = 0,
    val_count: int = 0,
    require_saliency: bool = True,
) -> CollectionManifest:
    """Scan a dataset root into a manifest with deterministic ordering.

    Records are ordered lexicographically by image path; the final
    ``test_count`` (and ``val_count`` before them) become the held-out
    splits. Filters are applied before splitting and their effect is
    recorded in the manifest metadata.
    """
    root = Path(root).resolve()
    if not root.is_dir():
        raise ManifestError(f"dataset root not readable: {root}")
    if kind == "synthetic":
        records = _load_synthetic_records(root)
    elif kind == "image_dir":
        records = _load_image_dir_records(root)
    else:
        raise ManifestError(f"unknown dataset kind {kind!r}")

    records.sort(key=lambda r: r.image)
    n_scanned = len(records)

    excluded_by_list = 0
    if exclude:
        exclude = set(exclude)
        kept = []
        for r in records:
            if Path(r.image).stem in exclude:
                excluded_by_list += 1
            else:
                kept.append(r)
        records = kept

    excluded_by_area = 0
    if min_area_frac is not None:
        kept = []
        for r in records:
            area = r.bbox_area_frac()
            if area is None:
                raise ManifestError(f"area filter needs bbox annotations ({r.image})")
            if area >= min_area_frac:
                kept.append(r)
            else:
                excluded_by_area += 1
        records = kept

    if not records:
        raise ManifestError(
            f"no images survive filtering: scanned {n_scanned}, "
            f"excluded {excluded_by_list} by list, {excluded_by_area} by area filter"
        )
    if test_count + val_count >= len(records):
        raise ManifestError(
            f"holdout ({test_count}+{val_count}) leaves no training images out of {len(records)}"
        )

    n = len(records)
    for i, r in enumerate(records):
        if i >= n - test_count:
            r.split = "test"
        elif i >= n - test_count - val_count:
            r.split = "val"
        else:
            r.split = "train"

    manifest = CollectionManifest(
        root=root,
        records=records,
        meta={
            "kind": kind,
            "root_rel": ".",
            "filters": {
                "min_area_frac": min_area_frac,
                "excluded_by_list": excluded_by_list,
                "excluded_by_area": excluded_by_area,
                "scanned": n_scanned,
            },
            "splits": {"test": test_count, "val": val_count, "train": n - test_count - val_count},
        },
    )
    manifest.validate_files()
    if require_saliency:
        missing = [r.image for r in manifest.records if r.saliency is None]
        if missing and kind == "synthetic":
            raise ManifestError(f"synthetic records missing saliency: {missing[:3]}")
    return manifest
