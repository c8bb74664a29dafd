"""Acceptance criteria as callable checks.

Each ``criterion_k(ctx)`` returns a list of :class:`ExperimentReport`, one
per sub-check. ``ctx`` memoises the expensive pieces (matrix samples,
spectra, potential grids) so criteria that share inputs compute them once.
"""
from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import brown, compare, spectra, theory
from .compare import ExperimentReport
from .ensemble import EnsembleConfig, make_gaussian_atoms, make_rademacher_atoms, row_sum_check, sample_elliptic
from .gaussexp import CovarianceSpec, QuadratureSpec, expect_block_resolvent, expect_kernel_inv, monte_carlo
from .theory import SolverConfig

Z_LIST = (0j, 1 + 0j, 1j)
NU_CASES = ((0.0, 0.5), (0.5, 1.0), (-0.5, 1.0))  # (gamma, mu)
BROWN_CASES = ((0.5, 1.0), (0.0, 0.5))
ROUTE_GAMMAS = (0.0, 0.25, 0.5)
H = 0.05
TV_AGG = 5


class Context:
    """Shared inputs for the criteria; ``n``/``trials`` are the matrix sizes used."""

    def __init__(self, n=2000, trials=5, seed=20240, cfg=SolverConfig(), threads=1, cache=None, log=None):
        self.n, self.trials, self.seed = n, trials, seed
        self.cfg = cfg
        self.threads = max(1, int(threads))
        self.cache = cache
        self.log = log or (lambda msg: None)
        self._memo = {}
        self.timings = {}

    def memo(self, key, fn):
        if key not in self._memo:
            t0 = time.perf_counter()
            self._memo[key] = fn()
            self.timings[key] = time.perf_counter() - t0
            self.log(f"computed {key} in {self.timings[key]:.1f}s")
        return self._memo[key]

    def map(self, fn, items):
        items = list(items)
        if self.threads == 1:
            return [fn(x) for x in items]
        with ThreadPoolExecutor(self.threads) as ex:
            return list(ex.map(fn, items))

    def config(self, gamma, mu, trial, n=None, diag_law="zero"):
        return EnsembleConfig(n or self.n, make_gaussian_atoms(mu, gamma), diag_law,
                              compare.trial_seed(self.seed, trial))

    def samples(self, gamma, mu):
        return self.memo(("samples", gamma, mu),
                         lambda: self.map(lambda t: sample_elliptic(self.config(gamma, mu, t)), range(self.trials)))

    def singular_values(self, gamma, mu, z):
        def run():
            sv = self.map(lambda S: spectra.singular_values(S.M, z, seed=S.seed).points, self.samples(gamma, mu))
            return spectra.EmpiricalMeasure1D(np.concatenate(sv))
        return self.memo(("sv", gamma, mu, z), run)

    def eigenvalues(self, gamma, mu):
        def run():
            ev = self.map(lambda S: spectra.eigenvalues(S.M, S.seed), self.samples(gamma, mu))
            return spectra.EmpiricalMeasure2D.pooled(ev)
        return self.memo(("eig", gamma, mu), run)

    def nu(self, gamma, mu, z):
        K = CovarianceSpec(mu)
        return self.memo(("nu", gamma, mu, z),
                         lambda: theory.density_nu(z, theory.default_s_grid(z, self.cfg), gamma, K, self.cfg, self.cache))

    def brown(self, gamma, mu):
        K = CovarianceSpec(mu)
        return self.memo(("brown", gamma, mu),
                         lambda: brown.brown_from_potential(brown.default_rect(K, gamma), H, gamma, K, self.cfg, self.cache))

    def pushforward(self, gamma, mu):
        K = CovarianceSpec(mu)
        return self.memo(("push", gamma, mu), lambda: brown.pushforward(self.brown(0.0, mu), gamma, K, self.cfg))


def _report(name, value, threshold, passed, **params):
    return ExperimentReport(name, params, [value], bool(passed), float(threshold), {"value": float(value)})


# ---------------------------------------------------------------------------


def criterion_1(ctx: Context):
    """KS between pooled empirical singular values and density_nu."""
    out = []
    for gamma, mu in NU_CASES:
        for z in Z_LIST:
            d = compare.ks_distance(ctx.singular_values(gamma, mu, z), ctx.nu(gamma, mu, z))
            out.append(_report("c1_ks_nu", d, 0.05, d <= 0.05, gamma=gamma, mu=mu, z=z, n=ctx.n, trials=ctx.trials))
    return out


def criterion_2(ctx: Context):
    """Binned TV between pooled eigenvalues and the potential-route Brown measure.

    Reported twice: at the literal ``h = 0.05`` bins, and with ``5 x 5``
    bins merged (``0.25``), which is above the multinomial noise floor of
    ``n * trials`` points.
    """
    out = []
    for gamma, mu in BROWN_CASES:
        pts = ctx.eigenvalues(gamma, mu)
        target = ctx.brown(gamma, mu)
        for agg in (1, TV_AGG):
            d = compare.tv2d_binned(pts, target, agg=agg)
            out.append(_report(f"c2_tv_brown_agg{agg}", d, 0.1, d <= 0.1, gamma=gamma, mu=mu, h=H * agg,
                               n=ctx.n, trials=ctx.trials))
            if agg == 1:
                out[-1].extra["noise_floor"] = tv_noise_floor(target, pts.n, agg)
    return out


def tv_noise_floor(target, npoints, agg=1, reps=20, seed=0):
    """Mean binned TV of ``npoints`` exact draws from ``target`` against ``target`` itself."""
    rng = np.random.default_rng(seed)
    q = compare.aggregate(target.bin_masses() / target.bin_masses().sum(), agg).ravel()
    vals = [0.5 * np.abs(rng.multinomial(npoints, q) / npoints - q).sum() for _ in range(reps)]
    return float(np.mean(vals))


def criterion_3(ctx: Context):
    """Potential route vs pushforward route for mu = 1."""
    out = []
    for gamma in ROUTE_GAMMAS:
        a, b = ctx.brown(gamma, 1.0), ctx.pushforward(gamma, 1.0)
        d = compare.tv2d_measures(a, b)
        thr = 1e-12 if gamma == 0.0 else 0.05
        if gamma == 0.0:
            # the gamma = 0 pushforward must reproduce its base exactly
            d = max(d, float(np.abs(a.density - b.density).max()))
        out.append(_report("c3_route_tv", d, thr, d <= thr, gamma=gamma, mu=1.0, h=H))
    return out


def criterion_4(ctx: Context):
    out = []
    # (a) gamma = 1 real Gaussian: M is symmetric
    S = ctx.memo(("samples4a",), lambda: sample_elliptic(ctx.config(1.0, 1.0, 0)))
    ev = spectra.eigenvalues(S.M, S.seed).points
    x = np.arange(-8.0, 8.0 + 1e-9, 0.005)
    target = ctx.memo(("freeconv",), lambda: theory.semicircle_gaussian_freeconv(x, ctx.cfg))
    d = compare.ks_distance(spectra.EmpiricalMeasure1D(ev.real), target)
    out.append(_report("c4a_ks_freeconv", d, 0.05, d <= 0.05, gamma=1.0, mu=1.0, n=ctx.n,
                       max_imag=float(np.abs(ev.imag).max())))
    # (b) pure elliptic matrix with its own diagonal
    n = 1000
    S = sample_elliptic(ctx.config(0.5, 1.0, 0, n=n, diag_law="iid-standard"))
    eig = spectra.eigenvalues(S.elliptic, S.seed)
    f = compare.ellipsoid_coverage(eig, 0.5, 1.05)
    out.append(_report("c4b_ellipsoid", f, 0.99, f >= 0.99, gamma=0.5, inflate=1.05, n=n))
    return out


def criterion_5(ctx: Context, mc_samples=10**7, kernels=20):
    cfg = ctx.cfg
    out = []
    cases = [(0.5 + 0.2j, 1.0, 0.5), (1.0 + 0.5j, 0.5, 0.0), (0.3j, 0.8, -0.5), (1.5, 0.0, 0.3)]  # (z, mu, gamma)
    # fixed-point residual at Im eta >= 0.05, on and off the axis
    worst = 0.0
    for z, mu, g in cases:
        K = CovarianceSpec(mu)
        for eta in (0.05j, 0.7 + 0.05j, 1.3 + 0.2j):
            p = theory.continue_in_eta(z, eta, g, K, cfg)
            worst = max(worst, theory.fixed_point_residual(p, g, K, cfg.quad))
    out.append(_report("c5_residual", worst, 1e-10, worst <= 1e-10))
    # uniqueness probe from 10 random Herglotz starts, and Re alpha on the axis
    rng = np.random.default_rng(ctx.seed)
    spread = reals = 0.0
    eps = 0.05
    for z, mu, g in cases:
        K = CovarianceSpec(mu)
        sols = []
        for _ in range(10):
            a = 1j * rng.uniform(0.1, 3.0)
            b = complex(*rng.normal(size=2))
            p = theory.solve_fixed_point(z, 1j * eps, g, K, cfg, init=(a, b, np.conj(b)))
            sols.append([p.alpha, p.beta, p.beta_star])
            reals = max(reals, abs(p.alpha.real))
        sols = np.array(sols)
        spread = max(spread, float(np.abs(sols - sols[0]).max()))
    out.append(_report("c5_uniqueness", spread, 1e-8, spread <= 1e-8, eps=eps, starts=10))
    out.append(_report("c5_axis_re_alpha", reals, 1e-9, reals <= 1e-9, eps=eps))
    # order doubling
    dcfg = cfg.replace(quad=cfg.quad.doubled())
    diff = 0.0
    for z, mu, g in cases:
        K = CovarianceSpec(mu)
        for eta in (0.05j, 0.7 + 0.05j):
            p1 = theory.continue_in_eta(z, eta, g, K, cfg)
            p2 = theory.continue_in_eta(z, eta, g, K, dcfg)
            diff = max(diff, abs(p1.alpha - p2.alpha), abs(p1.beta - p2.beta))
    out.append(_report("c5_self_convergence", diff, 1e-10, diff < 1e-10, order=cfg.quad.order))
    # quadrature vs Monte Carlo on random kernels
    zmax = 0.0
    for k in range(kernels):
        mu = float(rng.choice([0.0, 0.3, 0.5, 1.0]))
        K = CovarianceSpec(mu)
        lam = complex(*rng.uniform(-2, 2, size=2))
        if k % 2 == 0:
            w = float(rng.uniform(0.1, 2.0))
            quad = float(expect_kernel_inv(lam, w, K, cfg.quad))
            mc, se = monte_carlo(lambda G: 1.0 / (np.abs(G - lam) ** 2 + w * w), K, mc_samples, seed=k)
            zs = abs(quad - mc) / se
        else:
            q = np.array([[1j * rng.uniform(0.3, 2.0), lam], [np.conj(lam), 1j * rng.uniform(0.3, 2.0)]])
            quad = expect_block_resolvent(q, K, cfg.quad)
            mc, se = monte_carlo(lambda G: _block_inv(q, G), K, mc_samples, seed=k, batch=500_000)
            zs = max(np.max(np.abs(quad.real - mc.real) / se.real), np.max(np.abs(quad.imag - mc.imag) / se.imag))
        zmax = max(zmax, float(zs))
    out.append(_report("c5_quadrature_vs_mc", zmax, 3.0, zmax <= 3.0, kernels=kernels, samples=mc_samples))
    return out


def _block_inv(q, G):
    """Entries of ``(q - [[0, G], [conj G, 0]])^{-1}`` for a vector of ``G``, shape ``(N, 2, 2)``."""
    b, c = q[0, 1] - G, q[1, 0] - np.conj(G)
    a, d = np.full_like(b, q[0, 0]), np.full_like(b, q[1, 1])
    det = a * d - b * c
    return np.stack([np.stack([d, -b], -1), np.stack([-c, a], -1)], -2) / det[:, None, None]


def criterion_6(ctx: Context):
    out = []
    worst_rs = worst_k = 0.0
    for gamma, mu in NU_CASES:
        for S in ctx.samples(gamma, mu):
            worst_rs = max(worst_rs, row_sum_check(S) / S.row_sum_bound())
            kv = np.linalg.norm(S.M @ np.ones(S.n)) / (S.n ** 1.5 * np.finfo(float).eps * np.abs(S.X).max())
            worst_k = max(worst_k, kv)
    out.append(_report("c6_row_sums", worst_rs, 1.0, worst_rs <= 1.0, note="ratio to n*eps*max|X|"))
    out.append(_report("c6_kernel_vector", worst_k, 1.0, worst_k <= 1.0, note="ratio to n^1.5*eps*max|X|"))
    pair = frob = 0.0
    for k, (gamma, mu) in enumerate(NU_CASES):
        for n in (2, 17, 200):
            S = sample_elliptic(ctx.config(gamma, mu, 100 + k, n=n))
            z = 0.3 - 0.4j
            h = np.sort(np.linalg.eigvalsh(spectra.hermitize(S.M, z)))
            s = spectra.singular_values(S.M, z).points
            pair = max(pair, float(np.abs(h - np.sort(np.concatenate([-s, s]))).max()))
            fro = np.linalg.norm(S.M - z * np.eye(n)) ** 2
            frob = max(frob, abs((s ** 2).sum() - fro) / fro)
    out.append(_report("c6_hermitization_pairing", pair, 1e-8, pair <= 1e-8))
    out.append(_report("c6_frobenius", frob, 1e-10, frob <= 1e-10))
    cfg = ctx.config(0.5, 0.5, 7, n=300)
    same = all(np.array_equal(getattr(sample_elliptic(cfg), a), getattr(sample_elliptic(cfg), a)) for a in "XDLM")
    out.append(_report("c6_reproducible", float(same), 1.0, same))
    return out


def criterion_7(ctx: Context):
    out = []
    for atoms in (make_gaussian_atoms(1.0, 0.5), make_rademacher_atoms(0.9)):
        rep = compare.lsv_experiment(EnsembleConfig(200, atoms, seed=ctx.seed), 1.0, trials=50, c_exp=3.0)
        rate = 1.0 - rep.extra["fraction_below"]
        out.append(_report("c7_lsv_pass_rate", rate, 0.95, rate >= 0.95, kind=atoms.kind, gamma=atoms.gamma,
                           margin_log10=rep.extra["margin_log10"]))
    ratios = []
    for t in range(10):
        S = sample_elliptic(ctx.config(0.5, 1.0, 1000 + t, n=1000))
        ratios.append(compare.moderate_sv_check(S, 1.0, 0.01).extra["min_ratio"])
    r = float(min(ratios))
    out.append(_report("c7_moderate_sv", r, 0.01, r >= 0.01, seeds=10, n=1000))
    return out


def criterion_8(ctx: Context):
    out = []
    nu_mass = [ctx.nu(g, mu, z).total_mass for g, mu in NU_CASES for z in Z_LIST]
    bad = max(abs(m - 1.0) for m in nu_mass)
    out.append(_report("c8_nu_mass", bad, 0.02, bad <= 0.02, note="max |raw mass - 1|"))
    measures = [ctx.brown(g, mu) for g, mu in BROWN_CASES] + [ctx.brown(g, 1.0) for g in ROUTE_GAMMAS]
    bad = max(abs(m.total_mass - 1.0) for m in measures)
    out.append(_report("c8_brown_mass", bad, 0.02, bad <= 0.02, note="max |raw mass - 1|"))
    clip = max(m.clipped_mass for m in measures)
    out.append(_report("c8_clipped_mass", clip, 0.005, clip <= 0.005))
    return out


CRITERIA = {1: criterion_1, 2: criterion_2, 3: criterion_3, 4: criterion_4,
            5: criterion_5, 6: criterion_6, 7: criterion_7, 8: criterion_8}

# criteria whose failure is a known, analysed limitation (see README)
KNOWN_UNATTAINABLE = {"c2_tv_brown_agg1"}


def run_all(ctx: Context, which=None, emit=print):
    reports = []
    for k in sorted(which or CRITERIA):
        t0 = time.perf_counter()
        reps = CRITERIA[k](ctx)
        for r in reps:
            emit(f"[criterion {k}] {r.summary()}")
        ctx.timings[f"criterion_{k}"] = time.perf_counter() - t0
        reports.extend(reps)
    return reports
