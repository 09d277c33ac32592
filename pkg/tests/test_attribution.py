import numpy as np
import pytest

from visprobe.attribution import (
    AttentionTensors,
    attribution_mask,
    bilinear_upsample,
    gradcam_map,
    gradcam_sensitive_regions,
)
from visprobe.errors import FlatAttribution, ShapeError
from visprobe.testbed import ToyAttentionPolicy

from conftest import make_region


def triple_loop_oracle(attn, grad):
    """Naive per-entry accumulation of the head-averaged product."""
    h, j = attn.shape
    out = np.zeros(j)
    for jj in range(j):
        acc = 0.0
        for hh in range(h):
            acc += grad[hh, jj] * attn[hh, jj]
        out[jj] = acc / h
    side = int(np.sqrt(j))
    return out.reshape(side, side)


class TestGradcamMap:
    def test_forced_arithmetic(self):
        a = np.array([[0.4, 0.3, 0.2, 0.1], [0.5, 0.5, 0.5, 0.5]])
        da = np.array([[1.0, 1.0, 1.0, 1.0], [0.0, 0.0, 0.0, 0.0]])
        t = AttentionTensors(attn=a, grad=da)
        got = gradcam_map(t)
        assert got.shape == (2, 2)
        assert np.allclose(got.ravel(), [0.2, 0.15, 0.1, 0.05])

    def test_zero_gradients_zero_map(self):
        rng = np.random.default_rng(0)
        a = np.abs(rng.normal(size=(4, 16)))
        t = AttentionTensors(attn=a, grad=np.zeros((4, 16)))
        assert not gradcam_map(t).any()

    def test_triple_loop_oracle_h12_j256(self):
        rng = np.random.default_rng(1)
        a = np.abs(rng.normal(size=(12, 256)))
        da = rng.normal(size=(12, 256))
        t = AttentionTensors(attn=a, grad=da)
        got = gradcam_map(t)
        want = triple_loop_oracle(a, da)
        assert np.allclose(got, want, rtol=1e-12, atol=0)

    def test_linear_in_gradients(self):
        rng = np.random.default_rng(2)
        a = np.abs(rng.normal(size=(6, 64)))
        g1 = rng.normal(size=(6, 64))
        g2 = rng.normal(size=(6, 64))
        m1 = gradcam_map(AttentionTensors(attn=a, grad=g1))
        m2 = gradcam_map(AttentionTensors(attn=a, grad=g2))
        m12 = gradcam_map(AttentionTensors(attn=a, grad=2.0 * g1 + 3.0 * g2))
        assert np.allclose(m12, 2.0 * m1 + 3.0 * m2, rtol=1e-12)

    def test_shape_errors(self):
        with pytest.raises(ShapeError):
            AttentionTensors(attn=np.ones((2, 5)), grad=np.ones((2, 5)))  # 5 not square
        with pytest.raises(ShapeError):
            AttentionTensors(attn=np.ones((2, 4)), grad=np.ones((3, 4)))
        with pytest.raises(ShapeError):
            AttentionTensors(attn=-np.ones((2, 4)), grad=np.ones((2, 4)))


class TestAttributionMask:
    def test_cutoff_example(self):
        m = np.array([[0.2, 0.15], [0.1, 0.05]])
        got = attribution_mask(m, (2, 2), fraction=0.25, smooth_kernel=1)
        # cutoff = 0.05 + 0.75*(0.2-0.05) = 0.1625: only the 0.2 cell survives
        assert got.mask.tolist() == [[True, False], [False, False]]

    def test_flat_map_raises(self):
        with pytest.raises(FlatAttribution):
            attribution_mask(np.full((4, 4), 0.3), (4, 4), smooth_kernel=1)

    def test_upsampled_cutoff_against_per_pixel_oracle(self):
        rng = np.random.default_rng(3)
        m = rng.random((16, 16))
        got = attribution_mask(m, (256, 256), fraction=0.25, smooth_kernel=1)
        up = bilinear_upsample(m, 256, 256)
        cutoff = up.min() + 0.75 * (up.max() - up.min())
        want = up >= cutoff
        assert np.array_equal(got.mask, want)

    def test_affine_invariance(self):
        rng = np.random.default_rng(4)
        base = rng.random((16, 16))
        ref = attribution_mask(base, (128, 128), smooth_kernel=5).mask
        for a, b in ((2.0, 0.0), (0.5, 0.0), (3.0, 1.7), (10.0, -4.2)):
            got = attribution_mask(a * base + b, (128, 128), smooth_kernel=5).mask
            assert np.array_equal(got, ref)

    def test_smoothing_changes_mask_support(self):
        m = np.zeros((8, 8))
        m[4, 4] = 1.0
        hard = attribution_mask(m, (64, 64), smooth_kernel=1).mask
        soft = attribution_mask(m, (64, 64), smooth_kernel=5).mask
        assert hard.sum() != soft.sum()

    def test_fraction_validation(self):
        with pytest.raises(ValueError):
            attribution_mask(np.eye(4), (4, 4), fraction=0.0)


class TestRegionFlagging:
    def _tensors_for_map(self, m):
        # single head: attention = |map| + const, gradients chosen so the
        # gradcam product reproduces the map exactly
        flat = m.ravel()[None, :]
        a = np.ones_like(flat)
        return AttentionTensors(attn=a, grad=flat)

    def test_full_cover_flagged(self):
        m = np.zeros((4, 4))
        m[:2, :2] = 1.0
        region = make_region(
            np.kron(m > 0, np.ones((16, 16), dtype=bool)), label="covered"
        )
        rep = gradcam_sensitive_regions(
            self._tensors_for_map(m), [region], smooth_kernel=1
        )
        assert rep.entries[0].sensitive

    def test_disjoint_not_flagged(self):
        m = np.zeros((4, 4))
        m[0, 0] = 1.0
        far = np.zeros((64, 64), dtype=bool)
        far[48:, 48:] = True
        rep = gradcam_sensitive_regions(
            self._tensors_for_map(m), [make_region(far, label="far")], smooth_kernel=1
        )
        assert not rep.entries[0].sensitive

    def test_boundary_overlap_inclusive(self):
        # build a region whose overlap with the attribution mask is exactly
        # half its area, straddling the mask's right edge
        m = np.zeros((4, 4))
        m[:, :2] = 1.0
        attr = attribution_mask(m, (64, 64), fraction=0.25, smooth_kernel=1).mask
        assert attr[:, 0].all() and not attr[:, -1].any()
        cover = int(attr[0].sum())  # columns 0..cover-1 are attributed
        width = min(cover, 64 - cover)
        region_mask = np.zeros((64, 64), dtype=bool)
        region_mask[:, cover - width : cover + width] = True
        rep = gradcam_sensitive_regions(
            self._tensors_for_map(m),
            [make_region(region_mask, label="straddle")],
            overlap_frac=0.5,
            smooth_kernel=1,
        )
        assert rep.entries[0].score == pytest.approx(0.5)
        assert rep.entries[0].sensitive  # >= is inclusive

    def test_flat_attribution_flags_nothing(self):
        t = AttentionTensors(attn=np.ones((2, 16)), grad=np.ones((2, 16)))
        region = make_region(np.ones((32, 32), dtype=bool), label="all")
        rep = gradcam_sensitive_regions(t, [region], smooth_kernel=1)
        assert not rep.entries[0].sensitive

    def test_report_shape_matches_probe_reports(self):
        m = np.zeros((4, 4))
        m[0, 0] = 1.0
        region = make_region(np.ones((16, 16), dtype=bool), label="r")
        rep = gradcam_sensitive_regions(self._tensors_for_map(m), [region], smooth_kernel=1)
        d = rep.to_json_dict()
        assert d["schema"] == "probe/1"
        assert set(d["entries"][0]) == {
            "label", "kind", "score", "threshold", "sensitive", "perturbation",
        }


class TestToyAttentionPolicy:
    def test_attention_is_stochastic_matrix(self, standard_render):
        img, _ = standard_render
        toy = ToyAttentionPolicy()
        a = toy.attention(img)
        assert a.shape == (toy.heads, toy.tokens)
        assert (a >= 0).all()
        # averaged softmax rows still sum to one
        assert np.allclose(a.sum(axis=1), 1.0)

    def test_analytic_gradients_match_finite_differences(self, standard_render):
        img, _ = standard_render
        toy = ToyAttentionPolicy()
        a = toy.attention(img)
        analytic = toy.gradients(a)
        eps = 1e-6
        worst = 0.0
        rng = np.random.default_rng(0)
        # probe a random subset of entries with central differences
        entries = [(int(h), int(j)) for h, j in
                   zip(rng.integers(0, a.shape[0], 200), rng.integers(0, a.shape[1], 200))]
        for h, j in entries:
            ap = a.copy()
            ap[h, j] += eps
            am = a.copy()
            am[h, j] -= eps
            fd = (toy.probe_loss(ap) - toy.probe_loss(am)) / (2 * eps)
            denom = max(abs(analytic[h, j]), 1e-12)
            worst = max(worst, abs(fd - analytic[h, j]) / denom)
        assert worst <= 1e-4

    def test_tensors_deterministic(self, standard_render):
        img, _ = standard_render
        t1 = ToyAttentionPolicy().tensors(img)
        t2 = ToyAttentionPolicy().tensors(img)
        assert np.array_equal(t1.attn, t2.attn)
        assert np.array_equal(t1.grad, t2.grad)
