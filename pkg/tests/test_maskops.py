import numpy as np
import pytest
import torch
from hypothesis import given
from hypothesis import strategies as st

import oracles
from vrpseg import maskops
from vrpseg.errors import EmptyMask, NonFiniteInput, ShapeMismatch, ZeroVector


def random_case(seed, c=None, h=None, w=None):
    rng = np.random.default_rng(seed)
    c = c or int(rng.integers(1, 9))
    h = h or int(rng.integers(1, 17))
    w = w or int(rng.integers(1, 17))
    feats = rng.normal(size=(c, h, w))
    mask = (rng.random((h, w)) < 0.4).astype(np.uint8)
    mask[rng.integers(h), rng.integers(w)] = 1
    return feats, mask


# mask_avg_pool


def test_pool_of_constant_features_is_the_constant():
    v = torch.tensor([1.5, -2.0, 3.0])
    feats = v[:, None, None].expand(3, 5, 4)
    mask = torch.zeros(5, 4)
    mask[1:3, 2] = 1
    assert torch.allclose(maskops.mask_avg_pool(feats, mask), v)


def test_pool_single_pixel_returns_its_column():
    feats = torch.randn(4, 6, 6, generator=torch.Generator().manual_seed(0))
    mask = torch.zeros(6, 6)
    mask[2, 5] = 1
    assert torch.equal(maskops.mask_avg_pool(feats, mask), feats[:, 2, 5])


def test_pool_worked_example():
    feats = torch.tensor([[[1.0, 2.0], [3.0, 4.0]]])
    mask = torch.tensor([[1, 0], [0, 1]])
    assert maskops.mask_avg_pool(feats, mask).tolist() == [2.5]


def test_pool_errors():
    with pytest.raises(EmptyMask):
        maskops.mask_avg_pool(torch.ones(2, 3, 3), torch.zeros(3, 3))
    with pytest.raises(ShapeMismatch):
        maskops.mask_avg_pool(torch.ones(2, 3, 3), torch.ones(3, 4))


@given(st.integers(0, 10_000))
def test_pool_matches_brute_force(seed):
    feats, mask = random_case(seed)
    got = maskops.mask_avg_pool(torch.as_tensor(feats), torch.as_tensor(mask)).numpy()
    want = np.array(oracles.mask_avg_pool(feats.tolist(), mask.tolist()))
    np.testing.assert_allclose(got, want, rtol=1e-6, atol=1e-12)


def test_pool_batched_equals_per_item():
    feats = torch.randn(3, 5, 8, 8, generator=torch.Generator().manual_seed(1))
    masks = (torch.rand(3, 8, 8, generator=torch.Generator().manual_seed(2)) > 0.5).float()
    batched = maskops.mask_avg_pool(feats, masks)
    for i in range(3):
        assert torch.allclose(batched[i], maskops.mask_avg_pool(feats[i], masks[i]), atol=1e-6)


# min_max_normalize


def test_min_max_worked_example():
    assert maskops.min_max_normalize(torch.tensor([0.0, 5.0, 10.0])).tolist() == [0.0, 0.5, 1.0]


def test_min_max_constant_is_all_ones():
    assert torch.equal(maskops.min_max_normalize(torch.full((3, 4), 7.0)), torch.ones(3, 4))


def test_min_max_rejects_non_finite():
    with pytest.raises(NonFiniteInput):
        maskops.min_max_normalize(torch.tensor([0.0, float("nan")]))
    with pytest.raises(NonFiniteInput):
        maskops.min_max_normalize(torch.tensor([0.0, float("inf")]))


@given(st.lists(st.floats(-1e3, 1e3), min_size=2, max_size=50))
def test_min_max_endpoints(values):
    x = torch.tensor(values, dtype=torch.float64)
    out = maskops.min_max_normalize(x)
    assert float(out.min()) >= 0.0 and float(out.max()) <= 1.0
    if float(x.max() - x.min()) > maskops.CONSTANT_TOL:
        assert float(out.min()) == 0.0 and float(out.max()) == 1.0


# pseudo-mask


def test_pseudo_mask_identical_maps_full_mask_is_all_ones():
    f = torch.randn(8, 4, 4, generator=torch.Generator().manual_seed(3))
    assert torch.equal(maskops.pseudo_mask(f, f.clone(), torch.ones(4, 4)), torch.ones(4, 4))


def test_pseudo_mask_one_hot_match():
    ref = torch.zeros(4, 2, 2)
    ref[0, 0, 0] = 1.0  # the only foreground reference pixel
    ref[1, 1, 1] = 1.0
    mask = torch.tensor([[1, 0], [0, 0]])
    tgt = torch.zeros(4, 3, 3)
    tgt[0, 1, 2] = 2.0  # matches the reference feature direction
    tgt[2] = 1.0  # every other pixel is orthogonal to it
    tgt[2, 1, 2] = 0.0
    expected = torch.zeros(3, 3)
    expected[1, 2] = 1.0
    assert torch.equal(maskops.pseudo_mask(ref, tgt, mask), expected)


@given(st.integers(0, 10_000))
def test_pseudo_mask_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    c = int(rng.integers(1, 6))
    ref, mask = random_case(seed, c=c, h=int(rng.integers(1, 7)), w=int(rng.integers(1, 7)))
    tgt, _ = random_case(seed + 1, c=c, h=int(rng.integers(1, 7)), w=int(rng.integers(1, 7)))
    got = maskops.pseudo_mask(torch.as_tensor(ref), torch.as_tensor(tgt), torch.as_tensor(mask)).numpy()
    want = np.array(oracles.pseudo_mask(ref.tolist(), tgt.tolist(), mask.tolist()))
    np.testing.assert_allclose(got, want, rtol=1e-6, atol=1e-9)


@given(st.integers(0, 10_000), st.floats(0.01, 100.0), st.floats(0.01, 100.0))
def test_pseudo_mask_scale_invariant(seed, a, b):
    ref, mask = random_case(seed, c=4, h=5, w=5)
    tgt, _ = random_case(seed + 7, c=4, h=6, w=3)
    ref, tgt, mask = torch.as_tensor(ref), torch.as_tensor(tgt), torch.as_tensor(mask)
    base = maskops.pseudo_mask(ref, tgt, mask)
    scaled = maskops.pseudo_mask(a * ref, b * tgt, mask)
    assert torch.allclose(base, scaled, atol=1e-6)


@given(st.integers(0, 10_000))
def test_pseudo_mask_range(seed):
    ref, mask = random_case(seed, c=3)
    tgt, _ = random_case(seed + 3, c=3)
    pm = maskops.pseudo_mask(torch.as_tensor(ref), torch.as_tensor(tgt), torch.as_tensor(mask))
    raw = maskops.max_similarity(torch.as_tensor(ref), torch.as_tensor(tgt), torch.as_tensor(mask))
    assert float(pm.min()) >= 0 and float(pm.max()) <= 1
    if float(raw.max() - raw.min()) > maskops.CONSTANT_TOL:
        assert float(pm.min()) == 0.0 and float(pm.max()) == 1.0


def test_zero_vector_has_similarity_zero_or_raises_when_strict():
    ref = torch.ones(2, 2, 2)
    tgt = torch.ones(2, 2, 2)
    tgt[:, 0, 0] = 0.0
    raw = maskops.max_similarity(ref, tgt, torch.ones(2, 2))
    assert torch.isfinite(raw).all()
    assert float(raw[0, 0]) == 0.0
    with pytest.raises(ZeroVector):
        maskops.pseudo_mask(ref, tgt, torch.ones(2, 2), strict=True)


def test_pseudo_mask_errors():
    f = torch.ones(3, 2, 2)
    with pytest.raises(EmptyMask):
        maskops.pseudo_mask(f, f, torch.zeros(2, 2))
    with pytest.raises(ShapeMismatch):
        maskops.pseudo_mask(f, torch.ones(4, 2, 2), torch.ones(2, 2))
    with pytest.raises(ShapeMismatch):
        maskops.pseudo_mask(f, f, torch.ones(3, 3))


def test_cosine_matrix_matches_brute_force():
    rng = np.random.default_rng(5)
    a, b = rng.normal(size=(7, 5)), rng.normal(size=(4, 5))
    got = maskops.cosine_similarity_matrix(torch.as_tensor(a), torch.as_tensor(b)).numpy()
    want = np.array([[oracles.cosine(list(u), list(v)) for v in b] for u in a])
    np.testing.assert_allclose(got, want, rtol=1e-6)


# resize_mask


def test_resize_identity():
    m = torch.tensor([[1, 0, 1], [0, 1, 0]])
    assert torch.equal(maskops.resize_mask(m, 2, 3), m)


def test_resize_upsample_worked_example():
    out = maskops.resize_mask(torch.tensor([[1, 0], [0, 0]]), 4, 4)
    expected = torch.zeros(4, 4, dtype=out.dtype)
    expected[:2, :2] = 1
    assert torch.equal(out, expected)


@given(st.integers(1, 20), st.integers(1, 20))
def test_resize_all_ones(h, w):
    assert torch.equal(maskops.resize_mask(torch.ones(5, 7), h, w), torch.ones(h, w))


@given(st.integers(0, 10_000), st.integers(1, 20), st.integers(1, 20))
def test_resize_matches_index_oracle_and_stays_binary(seed, h, w):
    _, mask = random_case(seed)
    out = maskops.resize_mask(torch.as_tensor(mask), h, w)
    assert out.tolist() == oracles.nearest_resize(mask.tolist(), h, w)
    assert maskops.is_binary(out)
    assert torch.equal(maskops.resize_mask(out, h, w), out)


def test_resize_keep_nonempty_uses_centroid_cell():
    m = torch.zeros(16, 16)
    m[13, 14] = 1  # lost by plain nearest sampling at 4x4
    assert maskops.resize_mask(m, 4, 4).sum() == 0
    kept = maskops.resize_mask(m, 4, 4, keep_nonempty=True)
    assert kept.sum() == 1 and kept[3, 3] == 1


def test_resize_rejects_bad_size():
    with pytest.raises(ValueError):
        maskops.resize_mask(torch.ones(2, 2), 0, 3)


def test_numpy_inputs_accepted():
    feats = np.ones((2, 3, 3))
    mask = np.eye(3)
    assert maskops.mask_avg_pool(feats, mask).tolist() == [1.0, 1.0]
