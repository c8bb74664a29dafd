"""The 2x2 fixed-point equation and the objects derived from it.

Unknown: ``Gamma = [[a, b], [c, a]]`` solving

    Gamma = -E[(q + Sigma(Gamma) - A_G)^{-1}],
    q = [[eta, z], [conj z, eta]],  Sigma([[a, b], [c, d]]) = [[d, g c], [g b, a]],
    A_G = [[0, G], [conj G, 0]],    G ~ N(0, K_mu).

``alpha = a`` is the Stieltjes transform of the symmetrised singular-value law
of ``a + g_gamma - z`` at ``eta``; ``beta = b``.

On the imaginary axis ``eta = i*eps`` the solution has ``alpha = i*(W - eps)``
and ``c = conj(b)``. Writing ``lam = z + gamma*conj(beta)`` the equation
reduces to

    W - eps = W * E[1/D],   beta = -E[(lam - G)/D],   D = |lam - G|^2 + W^2,

which only needs the kernel table of :mod:`.gaussexp`. Off the axis the full
block resolvent is used.
"""
from __future__ import annotations

import dataclasses
import hashlib
import os
import threading
from dataclasses import dataclass, field

import numpy as np
from scipy.special import wofz

from .gaussexp import (
    CovarianceSpec,
    QuadratureSpec,
    expect_block_resolvent,
    kernel_moments,
)


class SolverError(RuntimeError):
    """Fixed-point solve failed; carries the offending point."""

    def __init__(self, msg, z=None, eta=None, residual=None):
        super().__init__(msg)
        self.z = z
        self.eta = eta
        self.residual = residual


class HerglotzError(SolverError):
    """The iterate left the upper half plane (``Im alpha <= 0``)."""


@dataclass(frozen=True)
class QPoint:
    z: complex
    eta: complex

    def __post_init__(self):
        if not complex(self.eta).imag > 0:
            raise ValueError(f"Im(eta) must be positive, got {self.eta}")

    @property
    def on_axis(self) -> bool:
        return complex(self.eta).real == 0.0

    def matrix(self) -> np.ndarray:
        z, eta = complex(self.z), complex(self.eta)
        return np.array([[eta, z], [np.conj(z), eta]])


@dataclass(frozen=True)
class SolverConfig:
    """Tolerances and discretisation for every theory computation.

    ``accel`` picks the iteration: ``"none"`` is damped Picard only,
    ``"newton"`` always uses Newton steps with Picard as fallback, and
    ``"auto"`` uses Newton only where a map evaluation is expensive
    (off-axis solves with a rank-2 covariance).
    """

    tol: float = 1e-12
    damping: float = 0.5
    max_iters: int = 20000
    eta_min: float = 1e-3
    eta_step: float = 0.7
    start_height: float = 1e3
    inversion_eps: float = 0.01
    s_step: float = 0.01
    accel: str = "auto"
    quad: QuadratureSpec = field(default_factory=QuadratureSpec)

    def __post_init__(self):
        if not 0.0 < self.damping <= 1.0:
            raise ValueError("damping must lie in (0, 1]")
        if not 0.0 < self.eta_step < 1.0:
            raise ValueError("eta_step must lie in (0, 1)")
        if self.accel not in ("none", "newton", "auto"):
            raise ValueError(f"unknown accel {self.accel!r}")
        if self.tol <= 0 or self.inversion_eps <= 0 or self.start_height <= 0:
            raise ValueError("tol, inversion_eps and start_height must be positive")

    def replace(self, **kw) -> SolverConfig:
        return dataclasses.replace(self, **kw)


@dataclass
class StieltjesPair:
    alpha: complex
    beta: complex
    beta_star: complex
    residual: float
    iterations: int
    z: complex = 0j
    eta: complex = 1j

    def matrix(self) -> np.ndarray:
        return np.array([[self.alpha, self.beta], [self.beta_star, self.alpha]])


@dataclass
class SubordinationData:
    lam: complex
    in_xi: bool
    w: float
    phi: complex


@dataclass
class Measure1D:
    """Grid-backed density; ``density`` is normalised, ``total_mass`` is raw."""

    grid: np.ndarray
    density: np.ndarray
    total_mass: float
    missing: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def cdf_table(self) -> np.ndarray:
        d = np.nan_to_num(self.density)
        cum = np.concatenate([[0.0], np.cumsum(0.5 * (d[1:] + d[:-1]) * np.diff(self.grid))])
        return cum / cum[-1] if cum[-1] > 0 else cum

    def cdf(self, t):
        return np.interp(t, self.grid, self.cdf_table(), left=0.0, right=1.0)

    def moment(self, k: int) -> float:
        d = np.nan_to_num(self.density)
        return float(np.trapezoid(self.grid**k * d, self.grid))

    @property
    def mass(self) -> float:
        return float(np.trapezoid(np.nan_to_num(self.density), self.grid))


# ---------------------------------------------------------------------------
# the two maps


def _axis_map(W, beta, z, eps, gamma, K, quad):
    """One application of the on-axis map: returns ``(W_new, beta_new)``."""
    lam = z + gamma * np.conj(beta)
    m = kernel_moments(lam, W, K, quad)
    return eps + W * m[..., 0], -(m[..., 1] + 1j * m[..., 2])


def _general_map(u, z, eta, gamma, K, quad):
    """``u[:, 0:3] = (a, b, c)`` mapped through the right-hand side."""
    a, b, c = u[:, 0], u[:, 1], u[:, 2]
    om = np.empty((len(a), 2, 2), dtype=complex)
    om[:, 0, 0] = eta + a
    om[:, 1, 1] = eta + a
    om[:, 0, 1] = z + gamma * c
    om[:, 1, 0] = np.conj(z) + gamma * b
    R = expect_block_resolvent(om, K, quad)
    return -np.stack([R[:, 0, 0], R[:, 0, 1], R[:, 1, 0]], axis=1)


def initial_guess(z, eta):
    """Large-``eta`` asymptotics ``Gamma ~ -q^{-1}``; arrays of ``(a, b, c)``."""
    z = np.asarray(z, dtype=complex)
    eta = np.asarray(eta, dtype=complex)
    det = eta * eta - z * np.conj(z)
    return np.stack(np.broadcast_arrays(-eta / det, z / det, np.conj(z) / det), axis=-1)


def _use_newton(cfg, K, on_axis):
    if cfg.accel == "newton":
        return True
    return cfg.accel == "auto" and not on_axis and K.rank == 2


# ---------------------------------------------------------------------------
# batch solvers; every array is 1D over points


@dataclass
class _Batch:
    u: np.ndarray
    residual: np.ndarray
    iterations: np.ndarray
    converged: np.ndarray


def _picard_axis(z, eps, gamma, K, cfg, u):
    W = eps + u[:, 0].imag
    beta = u[:, 1].copy()
    n = len(W)
    res = np.full(n, np.inf)
    its = np.zeros(n, dtype=int)
    idx = np.arange(n)
    d = cfg.damping
    for _ in range(cfg.max_iters):
        Wn, bn = _axis_map(W[idx], beta[idx], z[idx], eps[idx], gamma, K, cfg.quad)
        r = np.maximum(np.abs(Wn - W[idx]), np.abs(bn - beta[idx]))
        res[idx] = r
        its[idx] += 1
        go = ~(r <= cfg.tol)
        move = idx[go]
        W[move] = (1 - d) * W[move] + d * Wn[go]
        beta[move] = (1 - d) * beta[move] + d * bn[go]
        idx = move
        if not len(idx):
            break
    out = np.stack([1j * (W - eps), beta, np.conj(beta)], axis=1)
    return _Batch(out, res, its, res <= cfg.tol)


def _newton_axis(z, eps, gamma, K, cfg, u, maxit=60):
    """Newton on ``(Im alpha, Re lam, Im lam)`` for the on-axis system."""
    A = u[:, 0].imag.copy()
    lam = z + gamma * np.conj(u[:, 1])
    n = len(A)
    res = np.full(n, np.inf)
    its = np.zeros(n, dtype=int)
    beta = u[:, 1].copy()
    idx = np.arange(n)
    for _ in range(maxit):
        x, y, e = lam[idx].real, lam[idx].imag, eps[idx]
        W = e + A[idx]
        m = kernel_moments(lam[idx], W, K, cfg.quad, jac=True)
        K0, K1x, K1y, J2, JX, JY, JXX, JXY, JYY = np.moveaxis(m, -1, 0)
        bn = -(K1x + 1j * K1y)
        # fixed-point residual in alpha/beta units; the current beta is the
        # one implied by lam
        r_alpha = np.abs(W * K0 - A[idx])
        r_beta = np.abs(bn - np.conj((lam[idx] - z[idx]) / gamma)) if gamma != 0.0 else 0.0
        r = np.maximum(r_alpha, r_beta)
        res[idx] = r
        its[idx] += 1
        beta[idx] = bn
        go = ~(r <= cfg.tol)
        if not go.any():
            break
        F = np.stack([A[idx] - W * K0, x - z[idx].real + gamma * K1x, y - z[idx].imag - gamma * K1y], axis=1)
        J = np.empty((len(idx), 3, 3))
        J[:, 0, 0] = 1.0 - K0 + 2.0 * W * W * J2
        J[:, 0, 1] = 2.0 * W * JX
        J[:, 0, 2] = 2.0 * W * JY
        J[:, 1, 0] = -2.0 * gamma * W * JX
        J[:, 1, 1] = 1.0 + gamma * (K0 - 2.0 * JXX)
        J[:, 1, 2] = -2.0 * gamma * JXY
        J[:, 2, 0] = 2.0 * gamma * W * JY
        J[:, 2, 1] = 2.0 * gamma * JXY
        J[:, 2, 2] = 1.0 - gamma * (K0 - 2.0 * JYY)
        step = np.linalg.solve(J[go], -F[go][..., None])[..., 0]
        sel = idx[go]
        Anew = A[sel] + step[:, 0]
        # keep W > eps: never let the step cross Im alpha = 0
        Anew = np.where(Anew > 0, Anew, 0.5 * A[sel])
        A[sel] = Anew
        lam[sel] = lam[sel] + step[:, 1] + 1j * step[:, 2]
        if gamma == 0.0:
            lam[sel] = z[sel]
        idx = sel
    out = np.stack([1j * A, beta, np.conj(beta)], axis=1)
    return _Batch(out, res, its, res <= cfg.tol)


def _picard_general(z, eta, gamma, K, cfg, u, maxit=None):
    u = u.copy()
    n = len(u)
    res = np.full(n, np.inf)
    its = np.zeros(n, dtype=int)
    idx = np.arange(n)
    d = cfg.damping
    for _ in range(cfg.max_iters if maxit is None else maxit):
        Fu = _general_map(u[idx], z[idx], eta[idx], gamma, K, cfg.quad)
        r = np.abs(Fu - u[idx]).max(axis=1)
        res[idx] = r
        its[idx] += 1
        go = ~(r <= cfg.tol)
        move = idx[go]
        u[move] = (1 - d) * u[move] + d * Fu[go]
        idx = move
        if not len(idx):
            break
    return _Batch(u, res, its, res <= cfg.tol)


def _newton_general(z, eta, gamma, K, cfg, u, maxit=40):
    """Newton with a forward-difference complex Jacobian.

    The right-hand side is holomorphic in ``(a, b, c)``, so one complex
    difference per unknown gives the full Jacobian. With ``gamma = 0`` only
    ``a`` enters the map and ``b, c`` are read off afterwards.
    """
    cols = [0, 1, 2] if gamma != 0.0 else [0]
    k = len(cols)
    u = u.copy()
    n = len(u)
    res = np.full(n, np.inf)
    its = np.zeros(n, dtype=int)
    idx = np.arange(n)
    Fu_all = _general_map(u, z, eta, gamma, K, cfg.quad)
    if gamma == 0.0:
        u[:, 1:] = Fu_all[:, 1:]
    r_all = np.abs(Fu_all - u).max(axis=1)
    res[:] = r_all
    its[:] = 1
    Fu = Fu_all
    for _ in range(maxit):
        go = ~(res[idx] <= cfg.tol)
        idx = idx[go]
        Fu = Fu[go]
        if not len(idx):
            break
        zi, ei, ui = z[idx], eta[idx], u[idx]
        J = np.empty((len(idx), k, k), dtype=complex)
        for j, col in enumerate(cols):
            h = 1e-7 * (1.0 + np.abs(ui[:, col]))
            up = ui.copy()
            up[:, col] += h
            Fp = _general_map(up, zi, ei, gamma, K, cfg.quad)
            J[:, :, j] = (Fp[:, cols] - Fu[:, cols]) / h[:, None]
        J -= np.eye(k)
        rhs = -(Fu[:, cols] - ui[:, cols])
        step = np.linalg.solve(J, rhs[..., None])[..., 0]
        its[idx] += k
        # backtracking per point; fall back to a Picard step
        t = np.ones(len(idx))
        pending = np.arange(len(idx))
        newF = Fu.copy()
        newU = ui.copy()
        for _ls in range(6):
            trial = ui[pending].copy()
            trial[:, cols] += t[pending, None] * step[pending]
            ok = trial[:, 0].imag > 0
            Ft = np.full_like(trial, np.nan)
            if ok.any():
                Ft[ok] = _general_map(trial[ok], zi[pending][ok], ei[pending][ok], gamma, K, cfg.quad)
                its[idx[pending][ok]] += 1
            if gamma == 0.0:
                trial[:, 1:] = np.where(ok[:, None], Ft[:, 1:], trial[:, 1:])
            rt = np.abs(Ft - trial).max(axis=1)
            acc = ok & (rt < res[idx[pending]])
            newU[pending[acc]] = trial[acc]
            newF[pending[acc]] = Ft[acc]
            res[idx[pending[acc]]] = rt[acc]
            pending = pending[~acc]
            t[pending] *= 0.5
            if not len(pending):
                break
        if len(pending):
            d = cfg.damping
            pic = (1 - d) * ui[pending] + d * Fu[pending]
            Fp = _general_map(pic, zi[pending], ei[pending], gamma, K, cfg.quad)
            its[idx[pending]] += 1
            if gamma == 0.0:
                pic[:, 1:] = Fp[:, 1:]
            newU[pending] = pic
            newF[pending] = Fp
            res[idx[pending]] = np.abs(Fp - pic).max(axis=1)
        u[idx] = newU
        Fu = newF
    return _Batch(u, res, its, res <= cfg.tol)


def _solve_level(z, eta, gamma, K, cfg, u):
    on_axis = bool(np.all(eta.real == 0.0))
    newton = _use_newton(cfg, K, on_axis)
    if on_axis:
        eps = eta.imag
        if newton:
            out = _newton_axis(z, eps, gamma, K, cfg, u)
            bad = ~out.converged
            if bad.any():
                pic = _picard_axis(z[bad], eps[bad], gamma, K, cfg, out.u[bad])
                _merge(out, bad, pic)
            return out
        return _picard_axis(z, eps, gamma, K, cfg, u)
    if newton:
        out = _newton_general(z, eta, gamma, K, cfg, u)
        bad = ~out.converged
        if bad.any():
            pic = _picard_general(z[bad], eta[bad], gamma, K, cfg, out.u[bad])
            _merge(out, bad, pic)
        return out
    return _picard_general(z, eta, gamma, K, cfg, u)


def _merge(out, mask, other):
    out.u[mask] = other.u
    out.residual[mask] = other.residual
    out.iterations[mask] += other.iterations
    out.converged[mask] = other.converged


def solve_batch(z, eta, gamma, K, cfg=SolverConfig(), init=None):
    """Direct solve at each ``(z, eta)`` (broadcast, flattened) from ``init``."""
    z, eta = (np.ravel(a) for a in np.broadcast_arrays(np.asarray(z, complex), np.asarray(eta, complex)))
    if np.any(eta.imag <= 0):
        raise ValueError("Im(eta) must be positive")
    _check_gamma(gamma)
    u = initial_guess(z, eta) if init is None else np.array(np.broadcast_to(init, (len(z), 3)), dtype=complex)
    return _solve_level(z, eta, float(gamma), K, cfg, u)


def continuation_batch(z, eta, gamma, K, cfg=SolverConfig(), start_height=None):
    """Descend from ``Im eta = start_height`` to the targets by factor ``eta_step``.

    Returns the final :class:`_Batch`. Non-converged points stay flagged and
    are carried along; Herglotz violations are flagged as non-converged too.
    """
    z, eta = (np.ravel(a) for a in np.broadcast_arrays(np.asarray(z, complex), np.asarray(eta, complex)))
    _check_gamma(gamma)
    gamma = float(gamma)
    target = eta.imag
    if np.any(target < cfg.eta_min):
        raise ValueError(f"Im(eta) below eta_min={cfg.eta_min}")
    T = float(cfg.start_height if start_height is None else start_height)
    h = np.maximum(T, target)
    u = initial_guess(z, eta.real + 1j * h)
    total = _Batch(u, np.zeros(len(z)), np.zeros(len(z), dtype=int), np.ones(len(z), dtype=bool))
    prev = np.full(len(z), np.nan)
    level = T
    while True:
        cur = np.maximum(level, target)
        act = (cur != prev) & total.converged
        if act.any():
            step = _solve_level(z[act], eta.real[act] + 1j * cur[act], gamma, K, cfg, total.u[act])
            herg = step.u[:, 0].imag > 0
            total.u[act] = step.u
            total.residual[act] = step.residual
            total.iterations[act] += step.iterations
            total.converged[act] = step.converged & herg
            prev = np.where(act, cur, prev)
        if np.all(level <= target):
            break
        level *= cfg.eta_step
    return total


def _check_gamma(gamma):
    if np.iscomplexobj(gamma) or not -1.0 <= float(gamma) <= 1.0:
        raise ValueError(f"gamma must be real with |gamma| <= 1, got {gamma}")


def _pair(batch, i, z, eta):
    u = batch.u[i]
    return StieltjesPair(complex(u[0]), complex(u[1]), complex(u[2]), float(batch.residual[i]),
                         int(batch.iterations[i]), complex(z), complex(eta))


def solve_fixed_point(z, eta, gamma, K, cfg=SolverConfig(), init=None) -> StieltjesPair:
    """Damped iteration from ``init`` (a ``(alpha, beta, beta_star)`` triple).

    Without ``init`` the large-``eta`` asymptote is used as the start.
    """
    z, eta = complex(z), complex(eta)
    QPoint(z, eta)
    out = solve_batch(z, eta, gamma, K, cfg, init=init)
    p = _pair(out, 0, z, eta)
    if not out.converged[0]:
        raise SolverError(f"no convergence after {p.iterations} iterations (residual {p.residual:.3e})",
                          z, eta, p.residual)
    if not p.alpha.imag > 0:
        raise HerglotzError(f"Im(alpha) = {p.alpha.imag:.3e} <= 0", z, eta, p.residual)
    return p


def continue_in_eta(z, target_eta, gamma, K, cfg=SolverConfig(), start_height=None) -> StieltjesPair:
    z, eta = complex(z), complex(target_eta)
    out = continuation_batch(z, eta, gamma, K, cfg, start_height)
    p = _pair(out, 0, z, eta)
    if not out.converged[0]:
        raise SolverError(f"continuation failed at eta={eta} (residual {p.residual:.3e})", z, eta, p.residual)
    return p


def fixed_point_residual(p: StieltjesPair, gamma, K, quad=QuadratureSpec()) -> float:
    """Entrywise max of ``|Gamma + E(q + Sigma(Gamma) - A)^{-1}|`` through the general map."""
    u = np.array([[p.alpha, p.beta, p.beta_star]])
    F = _general_map(u, np.array([p.z]), np.array([p.eta]), float(gamma), K, quad)
    return float(np.abs(F - u).max())


# ---------------------------------------------------------------------------
# singular-value law


def default_s_grid(z, cfg=SolverConfig(), margin=3.0):
    """``[0, 2 + |z| + margin]`` at step ``cfg.s_step``; ``margin`` is in standard deviations."""
    top = 2.0 + abs(complex(z)) + margin
    return np.arange(0.0, top + 0.5 * cfg.s_step, cfg.s_step)


def density_nu(z, s_grid, gamma, K, cfg=SolverConfig(), cache=None) -> Measure1D:
    """Density of the singular-value law on ``[0, inf)`` from ``(2/pi) Im alpha(s + i eps)``."""
    s = np.asarray(s_grid, dtype=float)
    if s.ndim != 1 or np.any(np.diff(s) <= 0) or s[0] < 0:
        raise ValueError("s_grid must be increasing and nonnegative")
    z = complex(z)
    if s[-1] <= 2.0 + abs(z) + 2.0:
        raise ValueError(f"s_grid must extend beyond {2.0 + abs(z) + 2.0}")
    eps = cfg.inversion_eps
    eta = s + 1j * eps
    vals = None
    keys = None
    if cache is not None:
        keys = [cache.key("alpha", z, e, gamma, K, cfg) for e in eta]
        hits = [cache.get(k) for k in keys]
        if all(h is not None for h in hits):
            vals = np.array([h[0] for h in hits])
            conv = np.array([bool(h[1]) for h in hits])
    if vals is None:
        out = continuation_batch(np.full(len(s), z), eta, gamma, K, cfg)
        vals = out.u[:, 0].imag
        conv = out.converged
        if cache is not None:
            cache.put_many((k, (v, float(c))) for k, v, c in zip(keys, vals, conv))
    dens = np.where(conv, 2.0 / np.pi * vals, np.nan)
    raw = float(np.trapezoid(np.nan_to_num(dens), s))
    meta = {"z": z, "gamma": float(gamma), "mu": K.mu, "scale": K.scale, "eps": eps,
            "order": cfg.quad.order, "method": cfg.quad.method, "tol": cfg.tol}
    return Measure1D(s, dens / raw, raw, ~conv, meta)


# ---------------------------------------------------------------------------
# subordination quantities at eps = 0


def xi_membership(lam, K, quad=QuadratureSpec()):
    """``E|G - lam|^{-2} > 1`` (divergent counts as inside)."""
    val = kernel_moments(np.asarray(lam, complex), 0.0, K, quad)[..., 0]
    out = val > 1.0
    return bool(out) if np.ndim(out) == 0 else out


def solve_w(lam, K, quad=QuadratureSpec(), tol=1e-12):
    """Root ``w > 0`` of ``E[1/(|G - lam|^2 + w^2)] = 1``, or 0 outside Xi.

    Vectorised bisection on a bracket grown geometrically from ``[tol, 1]``,
    stopped at relative width ``tol``. Roots below ``tol`` are reported as ``tol``.
    """
    lam = np.asarray(lam, dtype=complex)
    shape = lam.shape
    lam = lam.ravel()
    inside = np.atleast_1d(xi_membership(lam, K, quad))

    def f(w, pts):
        return kernel_moments(pts, w, K, quad)[..., 0] - 1.0

    w = np.zeros(len(lam))
    pts = lam[inside]
    if len(pts):
        lo = np.full(len(pts), tol)
        hi = np.ones(len(pts))
        for _ in range(200):
            fh = f(hi, pts)
            grow = fh > 0
            if not grow.any():
                break
            lo = np.where(grow, hi, lo)
            hi = np.where(grow, 2.0 * hi, hi)
        else:
            raise SolverError("w bracket failed to grow")
        # a root below tol is reported as tol
        flo = f(lo, pts)
        small = flo <= 0
        # geometric midpoints: small roots (rank-2 K far from the bulk) need relative accuracy
        for _ in range(400):
            if np.all((hi - lo) <= tol * hi):
                break
            mid = np.sqrt(lo * hi)
            fm = f(mid, pts)
            up = fm > 0
            lo = np.where(up, mid, lo)
            hi = np.where(up, hi, mid)
        w[inside] = np.where(small, tol, np.sqrt(lo * hi))
    w = w.reshape(shape)
    return float(w) if w.ndim == 0 else w


def phi_map(lam, gamma, K, quad=QuadratureSpec(), w=None):
    """``lam + gamma * E[(conj lam - conj G)/(|lam - G|^2 + w(lam)^2)]``."""
    lam = np.asarray(lam, dtype=complex)
    if gamma == 0.0:
        return lam[()] if lam.ndim == 0 else lam.copy()
    if w is None:
        w = solve_w(lam, K, quad)
    m = kernel_moments(lam, w, K, quad)
    if np.any(np.isinf(m[..., 0])):
        raise ArithmeticError("divergent expectation in phi_map")
    out = lam + gamma * (m[..., 1] - 1j * m[..., 2])
    return out[()] if out.ndim == 0 else out


def subordination_data(lam, gamma, K, quad=QuadratureSpec()) -> SubordinationData:
    lam = complex(lam)
    w = solve_w(lam, K, quad)
    return SubordinationData(lam, bool(xi_membership(lam, K, quad)), w, complex(phi_map(lam, gamma, K, quad, w=w)))


# ---------------------------------------------------------------------------
# gamma = 1 scalar cross-check


def gaussian_cauchy(zeta):
    """``E[1/(zeta - X)]``, ``X ~ N(0, 1)``, for ``Im zeta > 0``."""
    return -1j * np.sqrt(np.pi / 2) * wofz(np.asarray(zeta) / np.sqrt(2.0))


def semicircle_gaussian_freeconv(x_grid, cfg=SolverConfig(), eps=1e-6) -> Measure1D:
    """Density of semicircle(var 1) boxplus N(0, 1) by scalar subordination.

    ``G(zeta) = G_N(zeta - G(zeta))``, damped, descending from ``start_height``.
    The law has an analytic density, so we can go much closer to the axis
    than the singular-value solver does.
    """
    x = np.asarray(x_grid, dtype=float)
    if x[0] > -5.0 or x[-1] < 5.0:
        raise ValueError("grid must span [-5, 5]")
    h = cfg.start_height
    G = 1.0 / (x + 1j * h)
    d = cfg.damping
    total = 0
    while True:
        h = max(h * cfg.eta_step, eps)
        zeta = x + 1j * h
        for it in range(cfg.max_iters):
            Gn = gaussian_cauchy(zeta - G)
            r = np.abs(Gn - G).max()
            G = (1 - d) * G + d * Gn
            if r <= cfg.tol:
                break
        else:
            raise SolverError(f"free convolution did not converge at height {h}", eta=1j * h, residual=r)
        total += it + 1
        if h == eps:
            break
    dens = np.maximum(-G.imag / np.pi, 0.0)
    raw = float(np.trapezoid(dens, x))
    return Measure1D(x, dens / raw, raw, None, {"eps": eps, "iterations": total})


# ---------------------------------------------------------------------------
# on-disk cache


class SolverCache:
    """Append-only record file: header ``THRY1``, then ``key v1 v2 ...`` (hex floats).

    Reads are lock-free on an in-memory dict; writes take a lock and append.
    """

    HEADER = "THRY1"

    def __init__(self, path):
        self.path = os.fspath(path)
        self._data: dict[str, tuple] = {}
        self._lock = threading.Lock()
        self.hits = 0
        self.misses = 0
        if os.path.exists(self.path):
            with open(self.path) as fh:
                head = fh.readline().strip()
                if head != self.HEADER:
                    raise ValueError(f"{self.path}: bad cache header {head!r}")
                for line in fh:
                    parts = line.split()
                    if parts:
                        self._data[parts[0]] = tuple(float.fromhex(p) for p in parts[1:])
        else:
            with open(self.path, "w") as fh:
                fh.write(self.HEADER + "\n")

    @staticmethod
    def key(kind, z, eta, gamma, K, cfg) -> str:
        parts = (kind, complex(z), complex(eta), float(gamma), K.mu, K.scale,
                 cfg.quad.order, cfg.quad.method, cfg.tol)
        return hashlib.sha256(repr(parts).encode()).hexdigest()[:32]

    def get(self, key):
        v = self._data.get(key)
        if v is None:
            self.misses += 1
        else:
            self.hits += 1
        return v

    def put_many(self, items):
        items = list(items)
        with self._lock:
            with open(self.path, "a") as fh:
                for k, vals in items:
                    vals = tuple(float(v) for v in vals)
                    self._data[k] = vals
                    fh.write(k + " " + " ".join(v.hex() for v in vals) + "\n")

    def __len__(self):
        return len(self._data)
