import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sfnet import gradcheck
from sfnet.csf_layer import PatchGeometry, csf_backward, csf_forward, extract_patches, overlap_add, unsup_grads
from sfnet.elastic_net import ElasticNetParams, solve
from sfnet.sf_layer import init_dictionary


def naive_patches(img, hq, wq):
    h, w, c = img.shape
    out = np.empty((h - hq + 1, w - wq + 1, hq * wq * c))
    for r in range(h - hq + 1):
        for s in range(w - wq + 1):
            vec = []
            for dr in range(hq):
                for dc in range(wq):
                    for ch in range(c):
                        vec.append(img[r + dr, s + dc, ch])
            out[r, s] = vec
    return out


def test_geometry_of_a_mnist_sized_layer():
    g = PatchGeometry(28, 28, 1, 5, 5)
    assert (g.out_h, g.out_w, g.patch_dim, g.n_patches) == (24, 24, 25, 576)


def test_patch_larger_than_image_is_rejected():
    with pytest.raises(ValueError, match="does not fit"):
        PatchGeometry(4, 4, 1, 5, 5)


def test_patches_in_row_col_channel_order(rng):
    img = rng.standard_normal((5, 6, 3))
    geom = PatchGeometry(5, 6, 3, 2, 3)
    np.testing.assert_array_equal(extract_patches(img, geom), naive_patches(img, 2, 3))


def test_overlap_add_counts_coverage():
    geom = PatchGeometry(4, 4, 1, 3, 3)
    cover = overlap_add(np.ones((1, geom.n_patches, geom.patch_dim)), geom)[0, :, :, 0]
    np.testing.assert_array_equal(cover, [[1, 2, 2, 1], [2, 4, 4, 2], [2, 4, 4, 2], [1, 2, 2, 1]])


@settings(max_examples=40, deadline=None)
@given(h=st.integers(1, 7), w=st.integers(1, 7), c=st.integers(1, 3), hq=st.integers(1, 4), wq=st.integers(1, 4),
       seed=st.integers(0, 2**31))
def test_overlap_add_is_adjoint_of_extraction(h, w, c, hq, wq, seed):
    if hq > h or wq > w:
        return
    rng = np.random.default_rng(seed)
    geom = PatchGeometry(h, w, c, hq, wq)
    x = rng.standard_normal((2, h, w, c))
    g = rng.standard_normal((2, geom.out_h, geom.out_w, geom.patch_dim))
    lhs = np.sum(extract_patches(x, geom) * g)
    rhs = np.sum(x * overlap_add(g, geom))
    assert lhs == pytest.approx(rhs, rel=1e-10, abs=1e-10)


def test_forward_codes_every_patch(rng):
    geom = PatchGeometry(6, 5, 2, 3, 2)
    P = init_dictionary(geom.patch_dim, 7, rng)
    x = rng.standard_normal((2, 6, 5, 2))
    params = ElasticNetParams(0.3, 0.01)
    codes, ctx = csf_forward(x, P, params, geom)
    assert codes.shape == (2, 4, 4, 7)
    patches = extract_patches(x, geom)
    for n, r, s in [(0, 0, 0), (1, 3, 2), (0, 2, 3)]:
        np.testing.assert_allclose(codes[n, r, s], solve(patches[n, r, s], P, params).alpha, atol=1e-12)


def test_one_by_one_patches_match_per_pixel_coding(rng):
    geom = PatchGeometry(3, 3, 2, 1, 1)
    P = init_dictionary(2, 3, rng)
    x = rng.standard_normal((1, 3, 3, 2))
    params = ElasticNetParams(0.1, 0.01)
    codes, _ = csf_forward(x, P, params, geom)
    np.testing.assert_allclose(codes[0, 1, 2], solve(x[0, 1, 2], P, params).alpha, atol=1e-12)


def test_dictionary_rows_must_match_patch(rng):
    geom = PatchGeometry(6, 6, 1, 3, 3)
    with pytest.raises(ValueError, match="rows"):
        csf_forward(np.zeros((1, 6, 6, 1)), np.eye(8), ElasticNetParams(0.1, 0.01), geom)


def test_backward_rejects_wrong_shape(rng):
    geom = PatchGeometry(5, 5, 1, 3, 3)
    P = init_dictionary(9, 4, rng)
    _, ctx = csf_forward(rng.standard_normal((1, 5, 5, 1)), P, ElasticNetParams(0.1, 0.01), geom)
    with pytest.raises(ValueError, match="does not match"):
        csf_backward(ctx, P, np.zeros((1, 3, 3, 5)))


def test_unsup_input_gradient_is_overlapped_residual(rng):
    geom = PatchGeometry(4, 4, 1, 2, 2)
    P = init_dictionary(4, 6, rng)
    x = rng.standard_normal((1, 4, 4, 1))
    codes, ctx = csf_forward(x, P, ElasticNetParams(0.2, 0.01), geom)
    _, gx = unsup_grads(ctx)
    res = extract_patches(x, geom) - codes @ P.T
    np.testing.assert_allclose(gx, overlap_add(res, geom))


def test_finite_differences_on_stable_instances(rng):
    worst, _ = gradcheck.stable_instances(gradcheck.csf_instance, rng, 5)
    assert max(worst.values()) < 1e-5


def test_multichannel_finite_differences(rng):
    worst, _ = gradcheck.stable_instances(gradcheck.csf_instance, rng, 3, h=5, w=4, c=2, size=2, K=6)
    assert max(worst.values()) < 1e-5
