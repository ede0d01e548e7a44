import numpy as np
import pytest
import torch

from scops.features import (
    FeatureProviderError,
    SyntheticFeatureProvider,
    VggFeatureProvider,
    build_provider,
    load_saliency,
    mask_features,
)


class TestSyntheticProvider:
    def test_channel_layout_and_determinism(self):
        img = np.random.default_rng(0).random((10, 12, 3)).astype(np.float32)
        a = SyntheticFeatureProvider().extract(img)
        b = SyntheticFeatureProvider().extract(img)
        assert a.shape == (8, 10, 12)
        assert torch.equal(a, b)
        assert float(a.min()) >= 0.0

    def test_black_image_keeps_coordinate_ramps(self):
        feats = SyntheticFeatureProvider().extract(np.zeros((8, 8, 3), np.float32))
        assert torch.all(feats[:3] == 0)
        assert torch.all(feats[5:] == 0)  # projections of black are zero
        assert float(feats[3].max()) == 1.0 and float(feats[3].min()) == 0.0
        assert float(feats[4].max()) == 1.0

    def test_frozen_no_grad(self):
        img = torch.rand(3, 8, 8, requires_grad=True)
        feats = SyntheticFeatureProvider().extract(img)
        assert not feats.requires_grad


class TestMaskFeatures:
    def test_identity_mask_is_bit_exact(self):
        v = torch.rand(5, 6, 6)
        assert torch.equal(mask_features(v, torch.ones(6, 6)), v)

    def test_zero_mask(self):
        v = torch.rand(5, 6, 6)
        assert torch.all(mask_features(v, torch.zeros(6, 6)) == 0)

    def test_single_pixel_halved(self):
        v = torch.rand(4, 3, 3)
        d = torch.ones(3, 3)
        d[1, 2] = 0.5
        out = mask_features(v, d)
        assert torch.allclose(out[:, 1, 2], v[:, 1, 2] * 0.5)
        out[:, 1, 2] = v[:, 1, 2]
        assert torch.equal(out, v)

    def test_scalar_associativity(self):
        v = torch.rand(4, 5, 5, dtype=torch.float64)
        d1 = torch.full((5, 5), 0.5, dtype=torch.float64)
        d2 = torch.full((5, 5), 0.25, dtype=torch.float64)
        a = mask_features(mask_features(v, d1), d2)
        b = mask_features(v, d1 * d2)
        assert torch.allclose(a, b, atol=1e-15)

    def test_size_mismatch(self):
        with pytest.raises(ValueError):
            mask_features(torch.rand(4, 5, 5), torch.rand(6, 6))


class TestSaliency:
    def test_scaling_convention(self, tmp_path):
        from PIL import Image

        arr = np.zeros((6, 6), np.uint8)
        arr[0, 0] = 255
        arr[1, 1] = 128
        Image.fromarray(arr, mode="L").save(tmp_path / "s.png")
        sal = load_saliency(tmp_path / "s.png")
        assert float(sal[0, 0]) == pytest.approx(1.0)
        assert float(sal[1, 1]) == pytest.approx(128 / 255, abs=1e-6)
        assert float(sal.min()) >= 0.0 and float(sal.max()) <= 1.0

    def test_resize(self, tmp_path):
        from PIL import Image

        Image.fromarray(np.full((4, 4), 200, np.uint8), mode="L").save(tmp_path / "s.png")
        sal = load_saliency(tmp_path / "s.png", size=(8, 10))
        assert sal.shape == (8, 10)

    def test_missing_policies(self, tmp_path, caplog):
        with pytest.raises(FileNotFoundError):
            load_saliency(tmp_path / "absent.png")
        with caplog.at_level("WARNING"):
            sal = load_saliency(tmp_path / "absent.png", size=(4, 4), policy="ones")
        assert torch.all(sal == 1.0)
        assert any("falling back" in r.message for r in caplog.records)
        with pytest.raises(ValueError):
            load_saliency(tmp_path / "absent.png", policy="bogus")


class TestVggProvider:
    @pytest.mark.slow
    def test_channel_count_is_1024(self):
        torch.manual_seed(0)
        provider = VggFeatureProvider(weights_path=None)
        feats = provider.extract(np.random.default_rng(0).random((48, 48, 3)).astype(np.float32))
        assert feats.shape == (1024, 48, 48)
        assert float(feats.min()) >= 0.0

    def test_missing_weights_error_mentions_download(self, tmp_path):
        with pytest.raises(FeatureProviderError, match="download"):
            VggFeatureProvider(weights_path=str(tmp_path / "none.pth"))

    def test_registry(self):
        assert isinstance(build_provider("synthetic"), SyntheticFeatureProvider)
        with pytest.raises(FeatureProviderError):
            build_provider("bogus")
