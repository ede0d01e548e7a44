import numpy as np
import pytest

from scops.dff import NmfError, dff_segment, nmf
from scops.features import SyntheticFeatureProvider


def factorizable_instance(m=200, c=16, k=3, seed=0):
    rng = np.random.default_rng(seed)
    return rng.uniform(0, 1, (m, k)) @ rng.uniform(0, 1, (k, c))


class TestNmf:
    def test_recovers_rank_k_instance(self):
        v = factorizable_instance()
        res = nmf(v, 3, max_iters=500)
        rel = res.residual_history[-1] / np.linalg.norm(v)
        assert rel < 1e-3

    def test_rank_one_outer_product(self):
        rng = np.random.default_rng(1)
        v = np.outer(rng.uniform(0.1, 1, 50), rng.uniform(0.1, 1, 8))
        res = nmf(v, 1, max_iters=500, tol=0.0)
        assert res.residual_history[-1] / np.linalg.norm(v) < 1e-6

    def test_residual_history_non_increasing(self):
        for seed in range(5):
            rng = np.random.default_rng(seed)
            v = rng.uniform(0, 1, (60, 12))
            res = nmf(v, 4, max_iters=200, tol=0.0, seed=seed)
            h = np.array(res.residual_history)
            assert (np.diff(h) <= 1e-10 * h[0]).all()

    def test_seed_determinism(self):
        v = factorizable_instance(m=50, c=10)
        a = nmf(v, 3, max_iters=60, seed=7)
        b = nmf(v, 3, max_iters=60, seed=7)
        assert np.array_equal(a.coefficients, b.coefficients)
        assert np.array_equal(a.basis, b.basis)
        assert a.residual_history == b.residual_history

    def test_scale_gauge_leaves_reconstruction_unchanged(self):
        v = factorizable_instance(m=40, c=8)
        res = nmf(v, 3, max_iters=100)
        recon = res.coefficients @ res.basis
        alpha = np.array([2.0, 0.5, 7.0])
        recon_rescaled = (res.coefficients / alpha) @ (res.basis * alpha[:, None])
        assert np.abs(recon - recon_rescaled).max() < 1e-9

    def test_factor_non_negativity(self):
        res = nmf(factorizable_instance(m=30, c=6), 2, max_iters=50)
        assert (res.coefficients >= 0).all()
        assert (res.basis >= 0).all()

    def test_errors(self):
        with pytest.raises(NmfError):
            nmf(np.zeros((10, 5)), 2)
        with pytest.raises(NmfError):
            nmf(-np.ones((10, 5)), 2)
        with pytest.raises(NmfError):
            nmf(np.ones((10, 5)), 6)  # k > min(M, C)
        with pytest.raises(NmfError):
            nmf(np.ones((10, 5, 2)), 2)


class TestDffSegment:
    def _images(self, n, seed=0):
        rng = np.random.default_rng(seed)
        images = []
        for _ in range(n):
            img = np.full((16, 16, 3), 0.3, np.float32)
            r0, c0 = rng.integers(2, 8), rng.integers(2, 8)
            img[r0 : r0 + 5, c0 : c0 + 5] = (0.9, 0.1, 0.1)
            images.append(img)
        return images

    def test_requires_a_collection(self):
        with pytest.raises(NmfError, match="collection"):
            dff_segment(self._images(1), SyntheticFeatureProvider(), 2)

    def test_identical_images_get_identical_segmentations(self):
        img = self._images(1)[0]
        labels, _, _ = dff_segment([img, img.copy()], SyntheticFeatureProvider(), 2)
        assert np.array_equal(labels[0], labels[1])

    def test_responses_share_model_normalization_path(self):
        labels, responses, _ = dff_segment(self._images(4), SyntheticFeatureProvider(), 2)
        assert len(labels) == 4
        for lab, resp in zip(labels, responses):
            assert lab.shape == (16, 16)
            assert resp.shape == (3, 16, 16)
            assert set(np.unique(lab)) <= {0, 1, 2}

    def test_saliency_mask_count_checked(self):
        with pytest.raises(NmfError):
            dff_segment(self._images(3), SyntheticFeatureProvider(), 2, saliency_maps=[np.ones((16, 16))])
