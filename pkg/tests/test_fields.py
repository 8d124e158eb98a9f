import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nfseg import fields
from nfseg.diffcore import Tensor, finite_diff_check
from nfseg.errors import ContractViolation


def brute_bilinear(F, x, y):
    """Scalar-loop half-pixel bilinear interpolation with border clamping."""
    c, h, w = F.shape
    u = min(max(x * w - 0.5, 0.0), w - 1.0)
    v = min(max(y * h - 0.5, 0.0), h - 1.0)
    out = np.zeros(c)
    for i in range(h):
        for j in range(w):
            wx = max(0.0, 1.0 - abs(u - j))
            wy = max(0.0, 1.0 - abs(v - i))
            out += wx * wy * F[:, i, j]
    return out


@pytest.mark.parametrize("x,l,expected", [
    (0.0, 4, [0, 0, 0, 0, 0, 1, 1, 1, 1, 1]),
    (1.0, 4, [0, 0, 0, 0, 0, -1, 1, 1, 1, 1]),
    (0.5, 4, [1, 0, 0, 0, 0, 0, -1, 1, 1, 1]),
])
def test_fourier_embed_exact_values(x, l, expected):
    np.testing.assert_allclose(fields.fourier_embed(x, l), expected, atol=1e-12)


@settings(max_examples=200)
@given(st.floats(0, 1), st.integers(0, 8))
def test_fourier_embed_matches_formula(x, l):
    e = fields.fourier_embed(x, l)
    assert e.shape == (2 * (l + 1),)
    assert np.abs(e).max() <= 1.0
    ang = np.pi * x * 2.0 ** np.arange(l + 1)
    np.testing.assert_allclose(e, np.concatenate([np.sin(ang), np.cos(ang)]), atol=1e-9)


def test_fourier_embed_range_check():
    with pytest.raises(ContractViolation):
        fields.fourier_embed(1.5, 2)
    with pytest.raises(ContractViolation):
        fields.fourier_embed(-0.1, 2)


def test_embed_point_examples():
    assert fields.embed_point((0.3, 0.7), 4).shape == (20,)
    np.testing.assert_allclose(fields.embed_point((0, 0), 1), [0, 0, 1, 1, 0, 0, 1, 1], atol=1e-12)
    np.testing.assert_allclose(fields.embed_point((0.5, 0), 1), [1, 0, 0, -1, 0, 0, 1, 1],
                               atol=1e-12)


def test_global_code_examples():
    np.testing.assert_array_equal(fields.global_code(np.full((3, 2, 5), 1.25)).data, 1.25)
    F = np.arange(4.0).reshape(1, 2, 2)
    assert fields.global_code(F).data[0] == 1.5


def test_global_code_gradient_is_uniform():
    F = Tensor(np.random.default_rng(0).normal(size=(2, 3, 4)), requires_grad=True)
    fields.global_code(F).sum().backward()
    np.testing.assert_allclose(F.grad, 1 / 12)
    assert finite_diff_check(lambda F: fields.global_code(F).sum(), [F]) < 1e-8


def test_global_code_spatial_permutation_invariance():
    rng = np.random.default_rng(1)
    F = rng.normal(size=(4, 3, 5))
    perm = rng.permutation(15)
    G = F.reshape(4, 15)[:, perm].reshape(4, 3, 5)
    np.testing.assert_allclose(fields.global_code(F).data, fields.global_code(G).data, atol=1e-12)


def test_local_code_examples():
    F = np.array([[[0.0, 4.0], [8.0, 12.0]]])
    assert fields.local_code(F, (0.25, 0.25)).data[0] == 0.0
    assert fields.local_code(F, (0.5, 0.5)).data[0] == pytest.approx(6.0)
    assert fields.local_code(F, (0.5, 0.25)).data[0] == pytest.approx(2.0)


def test_local_code_outside_unit_square():
    with pytest.raises(ContractViolation):
        fields.local_code(np.zeros((1, 2, 2)), (1.2, 0.5))


def test_local_code_exact_at_cell_centers():
    rng = np.random.default_rng(2)
    F = rng.normal(size=(3, 5, 7))
    centers = fields.cell_centers(5, 7)
    out = fields.local_code(F, centers).data
    np.testing.assert_array_equal(out, F.reshape(3, -1).T)


def test_local_code_matches_brute_force():
    rng = np.random.default_rng(3)
    for _ in range(200):
        c, h, w = rng.integers(1, 4), rng.integers(1, 6), rng.integers(1, 6)
        F = rng.normal(size=(c, h, w))
        pts = rng.uniform(size=(5, 2))
        got = fields.local_code(F, pts).data
        for p, g in zip(pts, got):
            np.testing.assert_allclose(g, brute_bilinear(F, *p), atol=1e-12)


def test_local_code_gradient():
    rng = np.random.default_rng(4)
    F = Tensor(rng.normal(size=(2, 3, 4, 3)))
    pts = rng.uniform(size=(2, 6, 2))
    R = rng.normal(size=(2, 6, 3))
    assert finite_diff_check(lambda F: (fields.local_code(F, pts) * R).sum(), [F]) < 1e-8


def test_local_code_is_lipschitz_on_dense_path():
    rng = np.random.default_rng(5)
    F = rng.normal(size=(2, 4, 4))
    xs = np.linspace(0, 1, 401)
    pts = np.stack([xs, np.full_like(xs, 0.37)], axis=-1)
    vals = fields.local_code(F, pts).data
    step = xs[1] - xs[0]
    bound = (F.max() - F.min()) * 4  # map range times cells per unit length
    assert (np.abs(np.diff(vals, axis=0)) <= bound * step + 1e-12).all()


def test_combined_code():
    F = np.full((3, 2, 2), 0.5)
    out = fields.combined_code(F, (0.3, 0.8)).data
    np.testing.assert_array_equal(out, np.full(6, 0.5))
    G = np.random.default_rng(6).normal(size=(3, 2, 2))
    a = fields.combined_code(G, (0.1, 0.1)).data
    b = fields.combined_code(G, (0.9, 0.6)).data
    np.testing.assert_array_equal(a[:3], b[:3])
    assert not np.allclose(a[3:], b[3:])
    expected = np.concatenate([fields.global_code(G).data, fields.local_code(G, (0.9, 0.6)).data])
    assert b.tobytes() == expected.tobytes()


def test_combined_code_full_scale_width():
    F = np.zeros((512, 8, 8), dtype=np.float32)
    assert fields.combined_code(F, (0.5, 0.5)).shape == (1024,)


def test_feature_tokens():
    F = np.zeros((2, 512, 8, 8), dtype=np.float32)
    assert fields.feature_tokens(F, 4).shape == (2, 64, 532)
    one = fields.feature_tokens(np.ones((3, 1, 1)), 4).data
    assert one.shape == (1, 3 + 20)
    np.testing.assert_allclose(one[0, 3:], fields.embed_point((0.5, 0.5), 4))
    G = np.arange(6.0).reshape(1, 2, 3)
    tok = fields.feature_tokens(G, 1).data
    assert tok[1, 0] == G[0, 0, 1]
    np.testing.assert_allclose(tok[1, 1:], fields.embed_point((1.5 / 3, 0.5 / 2), 1))
    assert fields.feature_tokens(G, 1, positional=False).shape == (6, 1)


def test_build_conditioning_global_rows_identical():
    rng = np.random.default_rng(7)
    F = rng.normal(size=(2, 4, 3, 3))
    coords = rng.uniform(size=(2, 5, 2))
    cond = fields.build_conditioning("global", F, coords)
    assert cond.value.shape == (2, 5, 4)
    assert (cond.value.data == cond.value.data[:, :1]).all()
    comb = fields.build_conditioning("combined", F, coords)
    assert comb.dim == 8
    tok = fields.build_conditioning("tokens", F, coords, l=4)
    assert tok.value.shape == (2, 9, 4 + 20)


def test_pointset_validation():
    with pytest.raises(ContractViolation):
        fields.PointSet(np.array([[0.2, 1.1]]))
    with pytest.raises(ContractViolation):
        fields.PointSet(np.array([[0.2, 0.1]]), labels=np.array([1, 2]))
