import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy import integrate, linalg, optimize

from gridwatch.errors import (
    ConvergenceFailure,
    EmptySpectrum,
    InvalidRatio,
    ShapeMismatch,
    ZeroVarianceRow,
)
from gridwatch.spectra import (
    RING_PRODUCT,
    RawWindow,
    covariance,
    eigen,
    esd_histogram,
    haar_orthogonal,
    mp_l1_distance,
    mp_reference,
    ring_product,
    ring_reference,
    singular_value_equivalent,
    standardize,
)


# ---------------------------------------------------------------- windows


def test_raw_window_invariants():
    w = RawWindow(np.zeros((3, 4)), 5, 8, [(0, "ua"), (0, "ub"), (0, "uc")])
    assert w.shape == (3, 4)
    with pytest.raises(ShapeMismatch):
        RawWindow(np.zeros((3, 4)), 5, 9)
    with pytest.raises(InvalidRatio):
        RawWindow(np.zeros((5, 4)), 1, 4)
    with pytest.raises(ShapeMismatch):
        RawWindow(np.zeros((2, 1)), 1, 1)


def test_standardize_examples():
    z = standardize(np.array([[1.0, 2.0, 3.0], [-1.0, 1.0, 0.0]])).values
    np.testing.assert_allclose(z[0], [-1.224745, 0.0, 1.224745], atol=1e-6)
    np.testing.assert_allclose(standardize(np.array([[-1.0, 1.0]])).values, [[-1.0, 1.0]], atol=1e-12)


def test_standardize_zero_variance_reports_row():
    with pytest.raises(ZeroVarianceRow) as exc:
        standardize(np.array([[1.0, 2.0, 3.0], [5.0, 5.0, 5.0]]))
    assert exc.value.row == 1


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (4, 9), elements=st.floats(-1e3, 1e3, allow_nan=False)))
def test_standardize_contract_and_idempotence(x):
    if np.any(x.std(axis=1) < 1e-3):
        return
    z = standardize(x).values
    np.testing.assert_allclose(z.mean(axis=1), 0.0, atol=1e-9)
    np.testing.assert_allclose(z.std(axis=1), 1.0, atol=1e-9)
    np.testing.assert_allclose(standardize(z).values, z, atol=1e-9)
    cov = covariance(z).values
    np.testing.assert_allclose(cov, cov.T, atol=1e-12)
    assert abs(np.trace(cov) - 4) < 1e-6
    lam = eigen(cov).eigenvalues
    assert lam.min() > -1e-9
    assert abs(lam.sum() - 4) < 1e-5


# ---------------------------------------------------------------- covariance / eigen


def test_covariance_examples(rng):
    np.testing.assert_allclose(covariance(standardize(rng.standard_normal((1, 50)))).values, [[1.0]], atol=1e-12)
    row = standardize(rng.standard_normal((1, 30))).values
    sigma = covariance(np.vstack([row, row])).values
    np.testing.assert_allclose(sigma, [[1, 1], [1, 1]], atol=1e-12)
    np.testing.assert_allclose(eigen(sigma).eigenvalues, [2, 0], atol=1e-12)

    x = rng.standard_normal((2, 40))
    x[1] += 0.7 * x[0]
    rho = np.corrcoef(x)[0, 1]
    assert covariance(standardize(x)).values[0, 1] == pytest.approx(rho, abs=1e-9)


def test_eigen_simple_cases():
    assert eigen(np.eye(3)).eigenvalues.tolist() == pytest.approx([1, 1, 1])
    sp = eigen(np.diag([1.0, 2.0]))
    assert sp.eigenvalues.tolist() == pytest.approx([2, 1])
    np.testing.assert_allclose(np.abs(sp.eigenvectors), np.eye(2)[:, [1, 0]], atol=1e-12)


def _charpoly_roots(m: np.ndarray) -> np.ndarray:
    """Eigenvalues by bracketing sign changes of det(m - x I) on a fine grid."""
    p = m.shape[0]
    f = lambda x: np.linalg.det(m - x * np.eye(p))  # noqa: E731
    hi = np.abs(m).sum(axis=1).max() + 1.0  # Gershgorin bound
    grid = np.linspace(-1.0, hi, 20001)
    vals = np.array([f(g) for g in grid])
    roots = [optimize.brentq(f, a, b, xtol=1e-14)
             for a, b, fa, fb in zip(grid[:-1], grid[1:], vals[:-1], vals[1:]) if fa * fb < 0]
    return np.sort(roots)[::-1]


def test_eigen_matches_characteristic_polynomial_oracle(rng):
    a = rng.standard_normal((5, 8))
    m = a @ a.T / 8
    sp = eigen(m)
    np.testing.assert_allclose(sp.eigenvalues, _charpoly_roots(m), atol=1e-6)
    v, lam = sp.eigenvectors, sp.eigenvalues
    np.testing.assert_allclose(np.linalg.norm(v, axis=0), 1.0, atol=1e-9)
    np.testing.assert_allclose(m @ v, v * lam, atol=1e-6)
    assert np.max(np.abs(m - (v * lam) @ v.T)) < 1e-6


def test_eigen_errors():
    with pytest.raises(ConvergenceFailure):
        eigen(np.array([[np.nan, 0.0], [0.0, 1.0]]))
    with pytest.raises(ShapeMismatch):
        eigen(np.zeros((2, 3)))


# ---------------------------------------------------------------- reference laws


def test_mp_reference_edges():
    mp = mp_reference(1.0)
    assert (mp.a, mp.b) == (0.0, 4.0)
    mp = mp_reference(0.25)
    assert mp.a == pytest.approx(0.25) and mp.b == pytest.approx(2.25)
    mp = mp_reference(0.5, sigma2=2.0)
    assert mp.a == pytest.approx(2 * (1 - np.sqrt(0.5)) ** 2)
    for bad in (0.0, -0.1, 1.5, float("nan")):
        with pytest.raises(InvalidRatio):
            mp_reference(bad)
    with pytest.raises(InvalidRatio):
        mp_reference(0.5, sigma2=0.0)


@pytest.mark.parametrize("c,s2", [(0.5, 1.0), (0.1, 1.0), (1.0, 1.0), (0.4, 2.5)])
def test_mp_pdf_integrates_to_one_and_cdf_matches_quadrature(c, s2):
    mp = mp_reference(c, s2)
    total, _ = integrate.quad(mp.pdf, mp.a, mp.b, limit=200)
    assert total == pytest.approx(1.0, abs=1e-3)
    for x in np.linspace(mp.a, mp.b, 7)[1:-1]:
        want, _ = integrate.quad(mp.pdf, mp.a, x, limit=200)
        assert float(mp.cdf(x)) == pytest.approx(want, abs=1e-8)
    assert float(mp.cdf(mp.b + 1)) == pytest.approx(1.0)
    assert float(mp.cdf(mp.a - 1e-3)) == 0.0


def test_mp_singular_ratio_has_atom_at_zero():
    mp = mp_reference(2.0, allow_singular=True)
    assert mp.atom == pytest.approx(0.5)
    cont, _ = integrate.quad(mp.pdf, mp.a, mp.b, limit=200)
    assert cont == pytest.approx(0.5, abs=1e-3)
    # cdf covers the continuous part only
    assert float(mp.cdf(mp.b + 1)) == pytest.approx(0.5)


def test_ring_reference():
    assert ring_reference(1.0).inner_radius == 0.0
    assert ring_reference(0.5).inner_radius == pytest.approx(0.707107, abs=1e-6)
    assert ring_reference(0.5, 2).inner_radius == pytest.approx(0.5)
    with pytest.raises(InvalidRatio):
        ring_reference(0.5, 0)
    with pytest.raises(InvalidRatio):
        ring_reference(1.2)
    ref = ring_reference(0.5, 2)
    # density |z|^(2/L-2) / (pi c L) integrates to 1 over the annulus
    r_in = ref.inner_radius
    total, _ = integrate.quad(lambda r: 2 * np.pi * r * ref.pdf(r), r_in, 1.0)
    assert total == pytest.approx(1.0, abs=1e-6)


# ---------------------------------------------------------------- ring product


def test_haar_is_orthogonal_and_seeded():
    u = haar_orthogonal(6, 3)
    np.testing.assert_allclose(u @ u.T, np.eye(6), atol=1e-12)
    np.testing.assert_array_equal(u, haar_orthogonal(6, 3))


def test_singular_value_equivalent(rng):
    np.testing.assert_allclose(singular_value_equivalent(np.eye(4), 7), haar_orthogonal(4, 7), atol=1e-12)
    x = rng.standard_normal((4, 8))
    a = singular_value_equivalent(x, 11)
    np.testing.assert_allclose(np.linalg.svd(a, compute_uv=False), np.linalg.svd(x, compute_uv=False),
                               atol=1e-6)
    np.testing.assert_array_equal(a, singular_value_equivalent(x, 11))
    with pytest.raises(ShapeMismatch):
        singular_value_equivalent(rng.standard_normal((5, 3)), 0)


def test_ring_product_small_oracle():
    x = np.array([[1.0, -1.0, 2.0, 0.5], [0.0, 1.0, -1.0, 1.0]])
    seed = 5
    spec = ring_product([x], 1, seed=seed)
    u = haar_orthogonal(2, np.random.SeedSequence(seed).spawn(1)[0])
    z = np.real(linalg.sqrtm(x @ x.T)) @ u
    zhat = z / (np.sqrt(2) * z.std(axis=1, keepdims=True))
    want = np.linalg.eigvals(zhat)
    got = spec.eigenvalues
    np.testing.assert_allclose(sorted(np.abs(got)), sorted(np.abs(want)), atol=1e-9)
    np.testing.assert_allclose(np.sort_complex(got), np.sort_complex(want), atol=1e-9)
    np.testing.assert_allclose(zhat.var(axis=1), 0.5, atol=1e-9)
    assert spec.eigenvectors is None and spec.source_kind == RING_PRODUCT


def test_ring_product_shapes():
    a = np.ones((2, 4)) + np.eye(2, 4)
    with pytest.raises(ShapeMismatch):
        ring_product([a], 2)
    with pytest.raises(ShapeMismatch):
        ring_product([a, np.ones((3, 4))], 2)


def test_ring_product_with_several_windows_stays_in_disk(rng):
    ws = [standardize(rng.standard_normal((100, 250))) for _ in range(2)]
    ev = ring_product(ws, 2, seed=1).eigenvalues
    ref = ring_reference(0.4, 2)
    assert ref.annulus_fraction(ev, 0.05) > 0.9


# ---------------------------------------------------------------- histogram and fit


def test_esd_histogram():
    h = esd_histogram(np.ones(4), bins=5)
    assert np.count_nonzero(h.counts) == 1
    with pytest.raises(EmptySpectrum):
        esd_histogram(np.array([]), bins=5)
    ev = np.random.default_rng(2).gamma(2.0, size=300)
    h = esd_histogram(ev, bins=20)
    assert h.bin_edges[0] == ev.min() and h.bin_edges[-1] == ev.max()
    assert np.sum(h.normalized_density * h.widths) == pytest.approx(1.0, abs=1e-9)
    assert h.counts.sum() == 300
    ring = esd_histogram(np.array([1j, -1, 0.5]), bins=5)
    assert ring.bin_edges[0] == 0.5 and ring.bin_edges[-1] == 1.0


def test_mp_l1_distance_is_small_for_exact_quantiles():
    mp = mp_reference(0.4)
    from scipy.optimize import brentq

    qs = (np.arange(4000) + 0.5) / 4000
    ev = np.array([brentq(lambda x: float(mp.cdf(x)) - q, mp.a, mp.b) for q in qs])
    assert mp_l1_distance(ev, mp) < 0.01
    assert mp_l1_distance(ev * 3, mp) > 1.0


def test_mp_law_convergence_sanity():
    x = np.random.default_rng(0).standard_normal((200, 800))
    ev = eigen(covariance(standardize(x))).eigenvalues
    mp = mp_reference(0.25)
    assert np.mean((ev >= mp.a - 0.05) & (ev <= mp.b + 0.05)) >= 0.99
