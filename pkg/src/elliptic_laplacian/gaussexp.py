"""Expectations over the limiting Gaussian ``G ~ N(0, K_mu)``.

Two families of integrands appear in the theory:

* kernel integrands ``1/(|G - lam|^2 + w^2)`` and ``(lam - G)/(...)``, which
  are all the on-axis (``eta = i eps``) problem needs. These go through the
  proper-time kernels in :mod:`._kernels`.
* the full 2x2 block resolvent ``(Omega - [[0, G], [conj G, 0]])^{-1}`` for
  arbitrary ``Omega``. Along the axis of ``G`` with the larger variance the
  integrand is a rational function and is integrated exactly with the
  Faddeeva function; the transverse axis (rank-2 covariances only) uses
  composite Gauss-Legendre panels graded toward the near-singularity.

A plain tensor Gauss-Hermite rule is kept as ``method="hermite"``. It is
exact for polynomials but converges slowly on the near-singular kernels.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numpy.polynomial.hermite_e import hermegauss
from numpy.polynomial.legendre import leggauss
from scipy.special import wofz

from ._kernels import proper_time_moments


class DivergentIntegral(ArithmeticError):
    """Raised when a caller refuses an infinite expectation."""


@dataclass(frozen=True)
class CovarianceSpec:
    """Law of ``G``: ``Re G ~ N(0, scale*mu)``, ``Im G ~ N(0, scale*(1-mu))``.

    ``scale=0`` is the test-only point mass ``G = 0``.
    """

    mu: float
    scale: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.mu <= 1.0:
            raise ValueError(f"mu must lie in [0, 1], got {self.mu}")
        if self.scale < 0.0:
            raise ValueError("scale must be nonnegative")

    @classmethod
    def point_mass(cls) -> CovarianceSpec:
        return cls(mu=1.0, scale=0.0)

    @property
    def var_re(self) -> float:
        return self.scale * self.mu

    @property
    def var_im(self) -> float:
        return self.scale * (1.0 - self.mu)

    @property
    def matrix(self) -> np.ndarray:
        return np.diag([self.var_re, self.var_im])

    @property
    def rank(self) -> int:
        return int(self.var_re > 0) + int(self.var_im > 0)

    def sample(self, rng: np.random.Generator, size) -> np.ndarray:
        re = rng.standard_normal(size) * np.sqrt(self.var_re)
        im = rng.standard_normal(size) * np.sqrt(self.var_im)
        return re + 1j * im


@dataclass(frozen=True)
class QuadratureSpec:
    """Discretisation controls.

    ``order`` is the Gauss-Hermite node count per axis for ``method="hermite"``.
    For ``method="exact"`` it sets the proper-time node count (``3*order``)
    and the Gauss-Legendre nodes per transverse panel (``order//4``), so that
    doubling ``order`` refines every discretisation.
    """

    order: int = 64
    method: str = "exact"

    def __post_init__(self):
        if self.order < 4:
            raise ValueError("order must be >= 4")
        if self.method not in ("exact", "hermite"):
            raise ValueError(f"unknown quadrature method {self.method!r}")

    @property
    def proper_time_nodes(self) -> int:
        return 3 * self.order

    @property
    def panel_nodes(self) -> int:
        return max(4, self.order // 4)

    def doubled(self) -> QuadratureSpec:
        return QuadratureSpec(order=2 * self.order, method=self.method)


@lru_cache(maxsize=32)
def gauss_hermite(order: int) -> tuple[np.ndarray, np.ndarray]:
    """Nodes and weights for ``E f(Z)``, ``Z ~ N(0, 1)``; weights sum to 1."""
    x, w = hermegauss(order)
    w = w / w.sum()
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


def hermite_nodes(K: CovarianceSpec, order: int) -> tuple[np.ndarray, np.ndarray]:
    """Complex nodes for ``G`` and their weights under the tensor rule."""
    x, wx = gauss_hermite(order)
    one = (np.zeros(1), np.ones(1))
    xr, wr = (x * np.sqrt(K.var_re), wx) if K.var_re > 0 else one
    xi, wi = (x * np.sqrt(K.var_im), wx) if K.var_im > 0 else one
    g = (xr[:, None] + 1j * xi[None, :]).ravel()
    wt = (wr[:, None] * wi[None, :]).ravel()
    return g, wt


# ---------------------------------------------------------------------------
# kernel integrands


def kernel_moments(lam, w, K: CovarianceSpec, quad: QuadratureSpec = QuadratureSpec(), jac=False):
    """Kernel table (see :mod:`._kernels`) at points ``lam`` with widths ``w``."""
    lam = np.asarray(lam, dtype=complex)
    w = np.asarray(w, dtype=float)
    if quad.method == "hermite":
        return _kernel_moments_hermite(lam, w, K, quad.order, jac)
    return proper_time_moments(lam.real, lam.imag, w, K.var_re, K.var_im, quad.proper_time_nodes, jac)


def _kernel_moments_hermite(lam, w, K, order, jac):
    g, wt = hermite_nodes(K, order)
    lam, w = np.broadcast_arrays(lam, w)
    d = lam[..., None] - g
    dx, dy = d.real, d.imag
    D = dx * dx + dy * dy + (w * w)[..., None]
    inv = 1.0 / D
    cols = [inv, dx * inv, dy * inv]
    if jac:
        inv2 = inv * inv
        cols += [inv2, dx * inv2, dy * inv2, dx * dx * inv2, dx * dy * inv2, dy * dy * inv2]
    out = np.zeros(lam.shape + (9,))
    for c, arr in enumerate(cols):
        out[..., c] = arr @ wt
    if K.rank == 2:
        out[..., :][(w == 0.0)] = np.inf
    elif K.rank == 1:
        on_line = (lam.imag == 0.0) if K.var_im == 0.0 else (lam.real == 0.0)
        out[(w == 0.0) & on_line] = np.inf
    else:
        out[(w == 0.0) & (lam == 0)] = np.inf
    return out


def expect_kernel_inv(lam, w, K: CovarianceSpec, quad: QuadratureSpec = QuadratureSpec(), allow_inf=True):
    """``E[(|G - lam|^2 + w^2)^{-1}]``; ``inf`` when the integral diverges."""
    if np.any(np.asarray(w) < 0):
        raise ValueError("w must be nonnegative")
    val = kernel_moments(lam, w, K, quad)[..., 0]
    if not allow_inf and np.any(np.isinf(val)):
        raise DivergentIntegral("E|G - lam|^-2 diverges at w = 0")
    return val[()] if np.ndim(val) == 0 else val


def expect_phi_numerator(lam, w, K: CovarianceSpec, quad: QuadratureSpec = QuadratureSpec()):
    """``E[(conj(lam) - conj(G)) / (|lam - G|^2 + w^2)]``."""
    m = kernel_moments(lam, w, K, quad)
    val = m[..., 1] - 1j * m[..., 2]
    return val[()] if np.ndim(val) == 0 else val


# ---------------------------------------------------------------------------
# full 2x2 block resolvent


def _cauchy_normal(r, s):
    """``E[1/(T - r)]`` for ``T ~ N(0, s^2)`` and non-real ``r`` (array)."""
    r = np.asarray(r, dtype=complex)
    up = r.imag >= 0
    ru = np.where(up, r, np.conj(r))
    val = 1j * np.sqrt(np.pi / 2) / s * wofz(ru / (s * np.sqrt(2.0)))
    return np.where(up, val, np.conj(val))


def _cauchy_normal_deriv(r, s):
    """``E[1/(T - r)^2]``, the r-derivative of :func:`_cauchy_normal`."""
    r = np.asarray(r, dtype=complex)
    up = r.imag >= 0
    ru = np.where(up, r, np.conj(r))
    zeta = ru / (s * np.sqrt(2.0))
    dw = -2.0 * zeta * wofz(zeta) + 2j / np.sqrt(np.pi)
    val = 1j * np.sqrt(np.pi / 2) / s * dw / (s * np.sqrt(2.0))
    return np.where(up, val, np.conj(val))


def _exact_axis_terms(a, b, P, s):
    """``E_T[1/det]`` and ``E_T[T/det]`` with ``det = P - (a - T)(b - T)``.

    ``T ~ N(0, s^2)``; ``a, b, P`` broadcast. ``det = -(T - r1)(T - r2)``.
    """
    m = 0.5 * (a + b)
    delta = np.sqrt(0.25 * (a - b) ** 2 + P)
    r1, r2 = m + delta, m - delta
    near = np.abs(delta) < 1e-6 * (1.0 + np.abs(m))
    dsafe = np.where(near, 1.0, delta)
    f1, f2 = _cauchy_normal(r1, s), _cauchy_normal(r2, s)
    diff = (f1 - f2) / (2.0 * dsafe)
    diff_x = (r1 * f1 - r2 * f2) / (2.0 * dsafe)
    if np.any(near):
        fm = _cauchy_normal(m, s)
        dfm = _cauchy_normal_deriv(m, s)
        diff = np.where(near, dfm, diff)
        diff_x = np.where(near, fm + m * dfm, diff_x)
    return -diff, -diff_x


def _transverse_rule(centers, widths, s, nper):
    """Composite Gauss-Legendre on ``[-L, L]`` graded toward every centre.

    ``centers`` and ``widths`` have shape ``(N, C)``. Panel edges step away
    from each centre geometrically (``width * 2^k``). Returns ``nodes,
    weights`` of shape ``(N, M)`` with the ``N(0, s^2)`` density folded into
    the weights, which sum to 1 up to the tail beyond 10 sd.
    """
    centers = np.atleast_2d(np.asarray(centers, dtype=float))
    widths = np.atleast_2d(np.maximum(np.asarray(widths, dtype=float), 1e-10 * s))
    L = 10.0 * s
    c = np.clip(centers, -L, L)
    nlev = int(np.ceil(np.log2(2.0 * L / widths.min()))) + 1
    steps = widths[..., None] * 2.0 ** np.arange(nlev)
    npts = len(c)
    edges = np.concatenate(
        [np.full((npts, 1), -L), (c[..., None] - steps).reshape(npts, -1), c,
         (c[..., None] + steps).reshape(npts, -1), np.full((npts, 1), L)], axis=1)
    edges = np.clip(edges, -L, L)
    edges.sort(axis=1)
    lo, hi = edges[:, :-1], edges[:, 1:]
    x, wx = leggauss(nper)
    mid, half = 0.5 * (lo + hi), 0.5 * (hi - lo)
    nodes = (mid[..., None] + half[..., None] * x).reshape(npts, -1)
    wts = (half[..., None] * wx).reshape(npts, -1)
    wts = wts * np.exp(-0.5 * (nodes / s) ** 2) / (s * np.sqrt(2 * np.pi))
    return nodes, wts


def _transverse_singularity(w11w22, w12, w21, s_exact, exact_is_re):
    """Transverse values where the exact-axis integrand is nearly singular.

    Returns ``(centers, widths)`` of shape ``(N, 3)``: the two points where
    the exact-axis roots coalesce (branch points of the transverse
    integrand), and the point where a root comes closest to the real axis.
    """
    sq = np.sqrt(w11w22)
    if exact_is_re:
        base = -0.5j * (w12 - w21)
    else:
        base = 0.5 * (w12 + w21)
    branch = np.stack([base + sq, base - sq], axis=-1)
    center = base.real
    lo = np.minimum(center, 0.0) - 8.0 * s_exact - 1.0
    hi = np.maximum(center, 0.0) + 8.0 * s_exact + 1.0
    x0 = lo[..., None] + (hi - lo)[..., None] * np.linspace(0.0, 1.0, 81)
    A = (w12[..., None] - x0) if exact_is_re else (w12[..., None] - 1j * x0)
    B = (w21[..., None] - x0) if exact_is_re else (w21[..., None] + 1j * x0)
    if exact_is_re:
        disc = np.sqrt((A + B) ** 2 - 4.0 * w11w22[..., None])
        us = np.stack([0.5 * ((A - B) + disc), 0.5 * ((A - B) - disc)])
        T = -1j * us
    else:
        # exact axis is Im G = y0, transverse X solves (A - X)(B - X) = P
        disc = np.sqrt((A - B) ** 2 + 4.0 * w11w22[..., None])
        T = np.stack([0.5 * ((A + B) + disc), 0.5 * ((A + B) - disc)])
    T = np.moveaxis(T, 0, -1).reshape(T.shape[1:-1] + (-1,))
    idx = np.argmin(np.abs(T.imag), axis=-1)
    best = np.take_along_axis(T, idx[..., None], axis=-1)
    pts = np.concatenate([branch, best], axis=-1)
    return pts.real, np.abs(pts.imag)


def expect_block_resolvent(q_eff, K: CovarianceSpec, quad: QuadratureSpec = QuadratureSpec()):
    """``E[(q_eff - [[0, G], [conj G, 0]])^{-1}]`` for one or many 2x2 matrices.

    ``q_eff`` has shape ``(..., 2, 2)``.
    """
    q = np.asarray(q_eff, dtype=complex)
    batch = q.shape[:-2]
    q = q.reshape(-1, 2, 2)
    w11, w12, w21, w22 = q[:, 0, 0], q[:, 0, 1], q[:, 1, 0], q[:, 1, 1]
    P = w11 * w22
    if quad.method == "hermite" or K.rank == 0:
        if K.rank == 0:
            g, wt = np.zeros(1, dtype=complex), np.ones(1)
        else:
            g, wt = hermite_nodes(K, quad.order)
        det = P[:, None] - (w12[:, None] - g) * (w21[:, None] - np.conj(g))
        if np.any(det == 0):
            raise ZeroDivisionError("singular 2x2 block at a quadrature node")
        inv = 1.0 / det
        e_inv = inv @ wt
        e_g = (inv * g) @ wt
        e_gc = (inv * np.conj(g)) @ wt
    else:
        exact_is_re = K.var_re >= K.var_im
        s_ex = np.sqrt(K.var_re if exact_is_re else K.var_im)
        s_tr = np.sqrt(K.var_im if exact_is_re else K.var_re)
        if s_tr > 0:
            c, width = _transverse_singularity(P, w12, w21, s_ex, exact_is_re)
            tn, tw = _transverse_rule(c, 0.5 * width, s_tr, quad.panel_nodes)
        else:
            tn, tw = np.zeros((len(P), 1)), np.ones((len(P), 1))
        if exact_is_re:
            # G = X + i y: (w12 - G)(w21 - conj G) = (a - X)(b - X)
            a = w12[:, None] - 1j * tn
            b = w21[:, None] + 1j * tn
        else:
            # G = x + i Y: (w12 - G)(w21 - conj G) = (Y - c1)(Y - c2)
            a = -1j * (w12[:, None] - tn)
            b = 1j * (w21[:, None] - tn)
        e1, eT = _exact_axis_terms(a, b, P[:, None], s_ex)
        if exact_is_re:
            e_g_n, e_gc_n = eT + 1j * tn * e1, eT - 1j * tn * e1
        else:
            e_g_n, e_gc_n = tn * e1 + 1j * eT, tn * e1 - 1j * eT
        e_inv = (e1 * tw).sum(axis=1)
        e_g = (e_g_n * tw).sum(axis=1)
        e_gc = (e_gc_n * tw).sum(axis=1)
    out = np.empty((len(P), 2, 2), dtype=complex)
    out[:, 0, 0] = w22 * e_inv
    out[:, 1, 1] = w11 * e_inv
    out[:, 0, 1] = e_g - w12 * e_inv
    out[:, 1, 0] = e_gc - w21 * e_inv
    return out.reshape(batch + (2, 2))


# ---------------------------------------------------------------------------
# Monte Carlo oracle


def monte_carlo(f, K: CovarianceSpec, nsamples: int, seed: int = 0, batch: int = 1_000_000):
    """Sample mean and standard error of ``f(G)`` (``f`` vectorised, may return complex)."""
    rng = np.random.default_rng(seed)
    s1 = s2r = s2i = 0.0
    done = 0
    while done < nsamples:
        m = min(batch, nsamples - done)
        v = np.asarray(f(K.sample(rng, m)))
        s1 = s1 + v.sum(axis=0)
        s2r = s2r + (v.real ** 2).sum(axis=0)
        s2i = s2i + (np.imag(v) ** 2).sum(axis=0)
        done += m
    mean = s1 / nsamples
    var_r = s2r / nsamples - np.real(mean) ** 2
    var_i = s2i / nsamples - np.imag(mean) ** 2
    se_r = np.sqrt(np.maximum(var_r, 0) / (nsamples - 1))
    se_i = np.sqrt(np.maximum(var_i, 0) / (nsamples - 1))
    if np.iscomplexobj(mean):
        return mean, se_r + 1j * se_i
    return mean, se_r
