import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import quad
from scipy.optimize import brentq

from elliptic_laplacian import theory as th
from elliptic_laplacian.ensemble import EnsembleConfig, make_gaussian_atoms, sample_elliptic
from elliptic_laplacian.gaussexp import CovarianceSpec, QuadratureSpec, expect_kernel_inv
from elliptic_laplacian.spectra import singular_values, stieltjes_of_empirical, symmetrize

CFG = th.SolverConfig()
MU1 = CovarianceSpec(1.0)
HALF = CovarianceSpec(0.5)
POINT = CovarianceSpec.point_mass()

# independent oracle: scipy adaptive quadrature + Brent on
# int phi(g) / (g^2 + w^2) dg = 1 for the standard normal density phi
W_AT_ZERO_MU1 = 0.7517915246935619
# same for mu = 0.5 at lam = 0.3 + 0.2i via 2D adaptive quadrature
W_AT_LAM_MU_HALF = 0.6261702207984247


def test_qpoint_validation():
    with pytest.raises(ValueError):
        th.QPoint(0j, 0.5)
    assert th.QPoint(1j, 0.1j).on_axis


def test_config_validation():
    with pytest.raises(ValueError):
        th.SolverConfig(damping=0.0)
    with pytest.raises(ValueError):
        th.SolverConfig(accel="anderson")
    assert CFG.replace(tol=1e-8).tol == 1e-8


@pytest.mark.parametrize("z,gamma,K", [(0.5 + 0.2j, 0.5, MU1), (1 - 1j, -0.3, HALF), (2.0, 1.0, MU1)])
def test_large_height_asymptote(z, gamma, K):
    T = 1e3
    p = th.solve_fixed_point(z, 1j * T, gamma, K, CFG)
    assert abs(p.alpha - 1j / T) <= 10 / T**3
    assert abs(p.beta - (-z / T**2)) <= 10 / T**3


@pytest.mark.parametrize("accel", ["none", "newton", "auto"])
@pytest.mark.parametrize("z,gamma,K", [(0.5, 0.5, MU1), (0.7 + 0.4j, 0.0, HALF), (0.3j, -0.5, CovarianceSpec(0.8))])
def test_on_axis_purely_imaginary(z, gamma, K, accel):
    eps = 0.05
    p = th.continue_in_eta(z, 1j * eps, gamma, K, CFG.replace(accel=accel))
    assert abs(p.alpha.real) <= 10 * CFG.tol
    assert 0 < p.alpha.imag < 1 / eps
    assert th.fixed_point_residual(p, gamma, K) <= 1e-10


def test_picard_and_newton_agree_off_axis():
    eta = 0.8 + 0.1j
    a = th.continue_in_eta(0.6 + 0.3j, eta, 0.5, HALF, CFG.replace(accel="none"))
    b = th.continue_in_eta(0.6 + 0.3j, eta, 0.5, HALF, CFG.replace(accel="newton"))
    assert abs(a.alpha - b.alpha) < 1e-10 and abs(a.beta - b.beta) < 1e-10


def test_empirical_resolvent_oracle():
    z, eps, gamma = 0.5, 0.05, 0.5
    p = th.continue_in_eta(z, 1j * eps, gamma, MU1, CFG)
    vals = []
    for seed in range(20):
        S = sample_elliptic(EnsembleConfig(1000, make_gaussian_atoms(1.0, gamma), seed=seed))
        vals.append(stieltjes_of_empirical(symmetrize(singular_values(S.M, z)), 1j * eps).imag)
    assert abs(p.alpha.imag - np.mean(vals)) <= 0.02


def test_continuation_matches_direct_solve():
    z, eta = 0.8 + 0.1j, 0.2j
    a = th.continue_in_eta(z, eta, 0.5, MU1, CFG)
    b = th.solve_fixed_point(z, eta, 0.5, MU1, CFG, init=(a.alpha, a.beta, a.beta_star))
    assert abs(a.alpha - b.alpha) <= 10 * CFG.tol and abs(a.beta - b.beta) <= 10 * CFG.tol


@pytest.mark.parametrize("eta", [0.05j, 1.1 + 0.05j])
@pytest.mark.parametrize("K", [MU1, HALF], ids=["mu1", "mu.5"])
def test_two_starting_heights(eta, K):
    a = th.continue_in_eta(0.9 + 0.2j, eta, 0.4, K, CFG, start_height=1e2)
    b = th.continue_in_eta(0.9 + 0.2j, eta, 0.4, K, CFG, start_height=1e3)
    assert abs(a.alpha - b.alpha) <= 10 * CFG.tol and abs(a.beta - b.beta) <= 10 * CFG.tol


def test_herglotz_along_path():
    z, gamma = 1.2 - 0.3j, 0.5
    level = CFG.start_height
    u = None
    while level > 0.02:
        level *= CFG.eta_step
        out = th.solve_batch(z, 0.4 + 1j * level, gamma, HALF, CFG, init=u)
        assert out.converged[0] and out.u[0, 0].imag > 0
        u = out.u[0]


def test_uniqueness_from_random_starts():
    rng = np.random.default_rng(3)
    z, eps, gamma = 0.7 + 0.2j, 0.05, 0.5
    sols = []
    for _ in range(10):
        b = complex(*rng.normal(size=2))
        p = th.solve_fixed_point(z, 1j * eps, gamma, MU1, CFG, init=(1j * rng.uniform(0.1, 5), b, np.conj(b)))
        sols.append([p.alpha, p.beta, p.beta_star])
    sols = np.array(sols)
    assert np.abs(sols - sols[0]).max() <= 1e-8


def test_beta_conjugation_pairing_mu1():
    eps = 0.05
    for z in (0.6 + 0.4j, -1 + 0.2j):
        a = th.continue_in_eta(z, 1j * eps, 0.5, MU1, CFG)
        b = th.continue_in_eta(np.conj(z), 1j * eps, 0.5, MU1, CFG)
        assert abs(b.beta - np.conj(a.beta)) < 1e-10
        assert abs(a.beta_star - np.conj(a.beta)) < 1e-10


def test_solver_error_on_budget():
    with pytest.raises(th.SolverError) as info:
        th.solve_fixed_point(0.5, 0.01j, 0.5, MU1, CFG.replace(max_iters=2, accel="none"))
    assert info.value.z == 0.5 and info.value.residual > 0


def test_eta_below_minimum_rejected():
    with pytest.raises(ValueError):
        th.continue_in_eta(0.5, 1e-4j, 0.5, MU1, CFG)
    with pytest.raises(ValueError):
        th.solve_fixed_point(0.5, 0.1j, 1.5, MU1, CFG)


# --- singular-value law ---------------------------------------------------------


def test_density_nu_grid_precondition():
    with pytest.raises(ValueError):
        th.density_nu(1.0, np.linspace(0, 3, 50), 0.5, MU1, CFG)


@pytest.fixture(scope="module")
def nu_mu1():
    return th.density_nu(1.0, th.default_s_grid(1.0, CFG), 0.5, MU1, CFG)


def test_density_nu_mass_and_positivity(nu_mu1):
    assert not nu_mu1.missing.any()
    assert np.all(nu_mu1.density >= 0)
    assert abs(nu_mu1.total_mass - 1) <= 0.02
    assert abs(nu_mu1.mass - 1) <= 1e-12
    assert nu_mu1.meta["eps"] == CFG.inversion_eps


def test_density_nu_cdf(nu_mu1):
    F = nu_mu1.cdf(nu_mu1.grid)
    assert F[0] == 0.0 and abs(F[-1] - 1.0) < 1e-12 and np.all(np.diff(F) >= 0)


def test_density_nu_edges_resolved(nu_mu1):
    # grid refinement trigger (neighbour jump > 0.1) never fires at the default step
    assert np.abs(np.diff(nu_mu1.density)).max() < 0.1


def test_point_mass_second_moment():
    # the point-mass hook leaves the circular element; compare with a large i.i.d. matrix
    c = CFG.replace(inversion_eps=0.002, s_step=0.002)
    nu = th.density_nu(0.0, th.default_s_grid(0.0, c), 0.0, POINT, c)
    rng = np.random.default_rng(0)
    n = 2000
    s = singular_values(rng.standard_normal((n, n)) / np.sqrt(n)).points
    assert abs(nu.moment(2) - np.mean(s**2)) <= 0.02


def test_two_alpha_formulas(nu_mu1):
    # Cauchy smoothing composes: eps * int nu_{eps_inv}(t) / (t^2 + eps^2) dt = Im alpha(i (eps + eps_inv))
    eps = 0.05
    t = nu_mu1.grid
    raw = nu_mu1.density * nu_mu1.total_mass
    val = eps * np.trapezoid(raw / (t**2 + eps**2), t)
    p = th.continue_in_eta(1.0, 1j * (eps + CFG.inversion_eps), 0.5, MU1, CFG)
    assert abs(p.alpha.imag - val) <= 1e-3


def test_two_alpha_formulas_sharp_law():
    # with a much smaller inversion smoothing the density stands in for the limit law itself
    fine = CFG.replace(inversion_eps=0.001, s_step=0.0005)
    nu = th.density_nu(0.5, th.default_s_grid(0.5, fine), 0.5, MU1, fine)
    eps = 0.05
    t = nu.grid
    val = eps * np.trapezoid(nu.density * nu.total_mass / (t**2 + eps**2), t)
    p = th.continue_in_eta(0.5, 1j * eps, 0.5, MU1, CFG)
    assert abs(p.alpha.imag - val) <= 1e-3


def test_density_nu_cache_roundtrip(tmp_path):
    cache = th.SolverCache(tmp_path / "c.thry")
    s = th.default_s_grid(0.3, CFG)
    a = th.density_nu(0.3, s, 0.5, MU1, CFG, cache)
    assert cache.misses == len(s) and cache.hits == 0
    again = th.SolverCache(tmp_path / "c.thry")
    b = th.density_nu(0.3, s, 0.5, MU1, CFG, again)
    assert again.hits == len(s) and again.misses == 0
    np.testing.assert_array_equal(a.density, b.density)
    assert (tmp_path / "c.thry").read_text().splitlines()[0] == "THRY1"


def test_cache_rejects_foreign_file(tmp_path):
    (tmp_path / "x").write_text("NOTACACHE\n")
    with pytest.raises(ValueError):
        th.SolverCache(tmp_path / "x")


def test_cache_keys_distinguish_parameters():
    k = th.SolverCache.key
    base = k("alpha", 1, 0.1j, 0.5, MU1, CFG)
    assert base != k("alpha", 1, 0.1j, 0.4, MU1, CFG)
    assert base != k("alpha", 1, 0.1j, 0.5, HALF, CFG)
    assert base != k("alpha", 1, 0.1j, 0.5, MU1, CFG.replace(quad=QuadratureSpec(128)))
    assert base == k("alpha", 1, 0.1j, 0.5, MU1, CFG)


# --- subordination quantities -------------------------------------------------------


def test_xi_membership_examples():
    assert not th.xi_membership(2j, MU1)
    assert th.xi_membership(0j, MU1)
    for lam in (0j, 3 + 3j, -5j):
        assert th.xi_membership(lam, HALF)


def test_solve_w_outside_xi():
    assert th.solve_w(2j, MU1) == 0.0
    d = th.subordination_data(2j, 0.5, MU1)
    assert not d.in_xi and d.w == 0.0


def test_solve_w_against_independent_quadrature():
    assert abs(th.solve_w(0j, MU1) - W_AT_ZERO_MU1) <= 1e-8
    assert abs(th.solve_w(0.3 + 0.2j, HALF) - W_AT_LAM_MU_HALF) <= 1e-8


def test_solve_w_oracle_is_sane():
    # re-derive one oracle inline so the frozen number cannot drift silently
    phi = lambda g: np.exp(-g * g / 2) / np.sqrt(2 * np.pi)
    f = lambda w: quad(lambda g: phi(g) / (g * g + w * w), -np.inf, np.inf, epsabs=1e-13)[0] - 1
    assert abs(brentq(f, 0.1, 2, xtol=1e-13) - W_AT_ZERO_MU1) < 1e-9


def test_solve_w_residuals_random_points():
    rng = np.random.default_rng(7)
    lam = rng.uniform(-2.5, 2.5, 100) + 1j * rng.uniform(-1.0, 1.0, 100)
    tol = 1e-12
    for K in (MU1, HALF):
        inside = np.asarray(th.xi_membership(lam, K))
        w = th.solve_w(lam, K, tol=tol)
        assert np.all(w[~inside] == 0.0)
        resolved = inside & (w > tol)
        res = np.abs(expect_kernel_inv(lam[resolved], w[resolved], K) - 1.0)
        assert resolved.sum() >= 40 and res.max() <= tol
        # the rest have roots below tol (rank-2 K far out) and are floored there
        floored = inside & ~resolved
        assert np.all(expect_kernel_inv(lam[floored], tol, K) <= 1.0)


@settings(max_examples=30, deadline=None)
@given(x=st.floats(-3, 3), y=st.floats(-3, 3), mu=st.sampled_from([0.5, 1.0]))
def test_subordination_data_invariants(x, y, mu):
    K = CovarianceSpec(mu)
    d = th.subordination_data(complex(x, y), 0.5, K)
    if not d.in_xi:
        assert d.w == 0.0
    elif d.w > 1e-12:
        assert abs(expect_kernel_inv(d.lam, d.w, K) - 1) <= 1e-12
    else:
        assert expect_kernel_inv(d.lam, 1e-12, K) <= 1.0
    assert abs(d.phi.conjugate() - th.phi_map(complex(x, -y), 0.5, K)) <= 1e-9


def test_phi_examples():
    lam = np.array([0.3 + 0.1j, -1 + 2j, 1.5 - 0.2j])
    np.testing.assert_array_equal(th.phi_map(lam, 0.0, MU1), lam)
    a = th.phi_map(lam, 0.5, MU1)
    b = th.phi_map(np.conj(lam), 0.5, MU1)
    np.testing.assert_allclose(b, np.conj(a), atol=1e-12)
    assert abs(th.phi_map(0j, 0.5, MU1)) < 1e-12


def test_phi_continuity_on_grid():
    xs = np.linspace(-3, 3, 61)
    h = xs[1] - xs[0]
    for K in (MU1, HALF):
        lam = xs[None, :] + 1j * xs[:, None]
        phi = th.phi_map(lam, 0.5, K)
        jx = np.abs(np.diff(phi, axis=1))
        jy = np.abs(np.diff(phi, axis=0))
        lip = max(np.median(jx), np.median(jy)) / h
        assert jx.max() <= 10 * h * lip and jy.max() <= 10 * h * lip


# --- gamma = 1 cross-check ---------------------------------------------------------


@pytest.fixture(scope="module")
def freeconv():
    return th.semicircle_gaussian_freeconv(np.arange(-8, 8 + 1e-9, 0.005), CFG)


def test_freeconv_symmetry_and_mass(freeconv):
    d = freeconv.density
    assert np.abs(d - d[::-1]).max() <= 1e-8 * d.max()
    assert abs(freeconv.total_mass - 1) <= 0.01


def test_freeconv_second_moment(freeconv):
    assert abs(freeconv.moment(2) - 2.0) <= 0.04
    S = sample_elliptic(EnsembleConfig(2000, make_gaussian_atoms(1.0, 1.0), seed=1))
    ev = np.linalg.eigvalsh(S.M.real)
    assert abs(np.mean(ev**2) - freeconv.moment(2)) <= 0.04


def test_freeconv_grid_precondition():
    with pytest.raises(ValueError):
        th.semicircle_gaussian_freeconv(np.linspace(-4, 4, 100))


def test_gaussian_cauchy_large_argument():
    z = np.array([50j, 30 + 10j])
    np.testing.assert_allclose(th.gaussian_cauchy(z), 1 / z + 1 / z**3, rtol=1e-5)
