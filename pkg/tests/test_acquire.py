import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mrfdiff.acquire import (KSpace, NormalOperator, add_noise, adjoint, adjoint_full, forward, forward_full,
                             make_coils, make_sampling, truncate_kspace)


def _cplx(rng, shape):
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


def _adjoint_gap(kind, R, c, seed, basis):
    rng = np.random.default_rng(seed)
    n = 16
    coils = make_coils(n, c, seed=seed)
    pat = make_sampling(kind, n, basis.source_l, R, seed=seed)
    x = _cplx(rng, (n, n, basis.s))
    Ax = forward(x, basis, coils, pat)
    y = KSpace(_cplx(rng, Ax.data.shape), pat, coils)
    lhs = np.vdot(y.data, Ax.data)
    rhs = np.vdot(adjoint(y, basis), x)
    return abs(lhs - rhs) / (np.linalg.norm(x) * np.linalg.norm(y.data))


@settings(max_examples=30, deadline=None)
@given(kind=st.sampled_from(["vd", "radial"]), R=st.sampled_from([1, 5, 20]), c=st.sampled_from([1, 4, 8]),
       seed=st.integers(0, 2 ** 16))
def test_adjoint_property(small_basis, kind, R, c, seed):
    assert _adjoint_gap(kind, R, c, seed, small_basis) < 1e-8


def test_full_adjoint(rng):
    n, l = 12, 7
    coils = make_coils(n, 3)
    pat = make_sampling("vd", n, l, 4, seed=3)
    x = _cplx(rng, (n, n, l))
    Ax = forward_full(x, coils, pat)
    y = KSpace(_cplx(rng, Ax.data.shape), pat, coils)
    assert abs(np.vdot(y.data, Ax.data) - np.vdot(adjoint_full(y), x)) < 1e-9 * np.linalg.norm(x) * np.linalg.norm(y.data)


def test_fully_sampled_single_coil_is_identity(small_basis, rng):
    n = 16
    coils = make_coils(n, 1)
    pat = make_sampling("vd", n, small_basis.source_l, 1)
    x = _cplx(rng, (n, n, small_basis.s))
    np.testing.assert_allclose(adjoint(forward(x, small_basis, coils, pat), small_basis), x, atol=1e-10)


def test_coils_normalized():
    sens = make_coils(32, 8, seed=5).sens
    np.testing.assert_allclose(np.sum(np.abs(sens) ** 2, axis=0), 1.0, atol=1e-12)


@pytest.mark.parametrize("kind", ["vd", "radial"])
def test_sampling_counts_and_center(kind):
    n, l, R = 32, 20, 8
    pat = make_sampling(kind, n, l, R, seed=2)
    counts = pat.masks.reshape(l, -1).sum(1)
    assert np.all(counts == round(n * n / R))
    assert np.all(pat.masks[:, 0, 0])
    assert not np.array_equal(pat.masks[0], pat.masks[1])
    again = make_sampling(kind, n, l, R, seed=2)
    np.testing.assert_array_equal(pat.masks, again.masks)


def test_sampling_validation():
    with pytest.raises(ValueError):
        make_sampling("vd", 16, 4, 0.5)
    with pytest.raises(ValueError):
        make_sampling("spiral", 16, 4, 2)
    with pytest.raises(ValueError):
        make_sampling("vd", 4, 4, 100)


def test_dimension_mismatch(small_basis, rng):
    coils = make_coils(16, 2)
    pat = make_sampling("vd", 16, 100, 4)
    with pytest.raises(ValueError):
        forward(_cplx(rng, (16, 16, 5)), small_basis, coils, pat)
    with pytest.raises(ValueError):
        forward_full(_cplx(rng, (16, 16, 99)), coils, pat)


def test_normal_operator_matches_composition(small_basis, rng):
    n = 16
    coils = make_coils(n, 4, seed=1)
    pat = make_sampling("vd", n, small_basis.source_l, 6, seed=1)
    x = _cplx(rng, (n, n, small_basis.s))
    ref = adjoint(forward(x, small_basis, coils, pat), small_basis)
    np.testing.assert_allclose(NormalOperator(small_basis, coils, pat)(x), ref, atol=1e-10)


def test_truncate_kspace_matches_direct(small_basis, rng):
    n = 16
    coils = make_coils(n, 2)
    pat = make_sampling("vd", n, 40, 4, seed=9)
    x = _cplx(rng, (n, n, 40))
    y = forward_full(x, coils, pat)
    direct = forward_full(x[..., :10], coils, pat.truncate(10))
    np.testing.assert_array_equal(truncate_kspace(y, 10).data, direct.data)


def test_noise_statistics_and_seed():
    n = 16
    coils = make_coils(n, 2)
    pat = make_sampling("vd", n, 50, 2)
    y = forward_full(np.zeros((n, n, 50), complex), coils, pat)
    a = add_noise(y, 0.3, seed=4)
    assert np.std(a.data) == pytest.approx(0.3, rel=0.05)
    np.testing.assert_array_equal(a.data, add_noise(y, 0.3, seed=4).data)
    assert add_noise(y, 0.0) is y
