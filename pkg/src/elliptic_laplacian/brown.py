"""Brown measure of ``a + g_gamma`` on rectangular grids.

Two constructions:

* potential route: ``U(z) = int log t d nu_z(t)`` on a grid, then
  ``(1/2pi) * Laplacian`` by the five-point stencil;
* pushforward route: the ``gamma = 0`` measure moved by ``Phi_gamma``.

``U`` is always the smoothed potential ``U_eps = (1/2) int log(t^2 + eps^2) d nu~(t)``,
which is what integrating ``log t`` against the Cauchy-smoothed density gives.
Besides that direct trapezoid (slow, one solve per ``(z, s)``), it can be
computed from on-axis solves alone, because ``d/de U_e = Im alpha(i e)``:

    U_eps = (1/2) log(eps^2 + c^2) - int_eps^inf (Im alpha(i e) - e/(e^2 + c^2)) de

with ``c^2 = int t^2 d nu~ = |z|^2 + 1 + E|a|^2``. The integrand is
``O(e^-5)`` at infinity and smooth in ``log e``; Gauss-Legendre panels in
``log e`` descended with warm starts make this the grid workhorse.
"""
from __future__ import annotations

import hashlib
import json
import warnings
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.interpolate import RegularGridInterpolator

from . import theory as th
from .gaussexp import CovarianceSpec
from .theory import SolverConfig

LADDER_TOP = 1e3


@dataclass
class PotentialGrid:
    x_grid: np.ndarray
    y_grid: np.ndarray
    U: np.ndarray
    eps_used: float
    meta: dict = field(default_factory=dict)

    @property
    def h(self) -> float:
        return float(self.x_grid[1] - self.x_grid[0])


@dataclass
class Measure2D:
    """Density per unit area on bin centres ``x_grid x y_grid`` (``density[iy, ix]``).

    ``density`` is normalised to mass 1; ``total_mass`` is the raw mass.
    """

    x_grid: np.ndarray
    y_grid: np.ndarray
    density: np.ndarray
    total_mass: float
    clipped_mass: float = 0.0
    meta: dict = field(default_factory=dict)

    @property
    def h(self) -> float:
        return float(self.x_grid[1] - self.x_grid[0])

    def bin_masses(self) -> np.ndarray:
        return self.density * self.h**2

    @property
    def mass(self) -> float:
        return float(self.bin_masses().sum())

    def checksum(self) -> str:
        return hashlib.sha256(np.ascontiguousarray(self.density, dtype="<f8").tobytes()).hexdigest()

    def sample(self, rng, size) -> np.ndarray:
        """Points drawn from the binned density (uniform inside each bin)."""
        p = self.bin_masses().ravel()
        idx = rng.choice(p.size, size=size, p=p / p.sum())
        iy, ix = np.unravel_index(idx, self.density.shape)
        h = self.h
        return (self.x_grid[ix] + h * (rng.random(size) - 0.5)) + 1j * (self.y_grid[iy] + h * (rng.random(size) - 0.5))


def grid_axes(rect, h):
    """Node coordinates covering ``rect = (x0, x1, y0, y1)`` at step ``h``."""
    x0, x1, y0, y1 = (float(v) for v in rect)
    if not (x1 > x0 and y1 > y0 and h > 0):
        raise ValueError("bad rectangle or step")
    nx = int(round((x1 - x0) / h)) + 1
    ny = int(round((y1 - y0) / h)) + 1
    return x0 + h * np.arange(nx), y0 + h * np.arange(ny)


def default_rect(K: CovarianceSpec, gamma: float = 0.0, margin: float = 3.0):
    s = 2.0 + margin
    return (-s, s, -s, s)


# ---------------------------------------------------------------------------
# log potential


def ladder_nodes(eps, top=LADDER_TOP, per_unit=8):
    """Gauss-Legendre rule in ``u = log e`` on ``[log eps, log top]``, returned in ``e``.

    Nodes come out in decreasing order; weights include the ``de = e du`` factor.
    """
    u0, u1 = np.log(eps), np.log(top)
    npan = max(1, int(np.ceil(u1 - u0)))
    edges = np.linspace(u0, u1, npan + 1)
    x, w = leggauss(per_unit)
    mid, half = 0.5 * (edges[1:] + edges[:-1]), 0.5 * (edges[1:] - edges[:-1])
    u = (mid[:, None] + half[:, None] * x).ravel()
    wu = (half[:, None] * w).ravel()
    e = np.exp(u)
    order = np.argsort(-e)
    return e[order], (wu * e)[order]


def second_moment(z, K: CovarianceSpec):
    return np.abs(z) ** 2 + 1.0 + K.scale


def log_potential_ladder(z, gamma, K, cfg=SolverConfig(), per_unit=8, chunk=4096):
    """Smoothed log potential at every ``z`` (any shape) via the eps-ladder."""
    z = np.asarray(z, dtype=complex)
    shape = z.shape
    zf = z.ravel()
    eps = cfg.inversion_eps
    e, we = ladder_nodes(eps, LADDER_TOP, per_unit)
    c2 = second_moment(zf, K)
    out = np.empty(len(zf))
    ncfg = cfg.replace(accel="newton")
    failed = 0
    for lo in range(0, len(zf), chunk):
        zc = zf[lo:lo + chunk]
        cc = c2[lo:lo + chunk]
        u = th.initial_guess(zc, 1j * e[0])
        prev = None
        acc = np.zeros(len(zc))
        for k, (ek, wk) in enumerate(zip(e, we)):
            guess = u
            if prev is not None:
                # linear predictor in log e from the two previous levels
                r = np.log(ek / e[k - 1]) / np.log(e[k - 1] / e[k - 2])
                guess = u + r * (u - prev)
                bad = ~(guess[:, 0].imag > 0)
                guess[bad] = u[bad]
            step = th._solve_level(zc, np.full(len(zc), 1j * ek), float(gamma), K, ncfg, guess)
            failed += int((~step.converged).sum())
            prev, u = u, step.u
            acc += wk * (u[:, 0].imag - ek / (ek * ek + cc))
        out[lo:lo + chunk] = 0.5 * np.log(eps * eps + cc) - acc
    if failed:
        raise th.SolverError(f"{failed} on-axis solves failed on the eps ladder")
    return out.reshape(shape)[()] if out.ndim else out


def log_potential(z, gamma, K, cfg=SolverConfig(), method="ladder", s0=1e-3):
    """``int log t d nu_z(t)`` at the smoothing ``cfg.inversion_eps``.

    ``method="trapezoid"`` integrates ``log t`` against the raw (not
    renormalised) :func:`density_nu` on ``[s0, s_max]``, takes the piece
    below ``s0`` as ``c * (s0 log s0 - s0)`` with ``c`` the density at ``s0``,
    and adds the Cauchy tail beyond ``s_max``, where the smoothed density is
    ``(2 eps/pi) / t^2`` to leading order.
    """
    z = complex(z)
    if method == "ladder":
        return float(log_potential_ladder(z, gamma, K, cfg))
    if method != "trapezoid":
        raise ValueError(f"unknown method {method!r}")
    s = th.default_s_grid(z, cfg)
    s = np.concatenate([[s0], s[s > s0]])
    nu = th.density_nu(z, s, gamma, K, cfg)
    if nu.missing.any():
        raise th.SolverError(f"density_nu failed at {int(nu.missing.sum())} points", z=z)
    raw = nu.density * nu.total_mass
    head = raw[0] * (s0 * np.log(s0) - s0)
    smax = s[-1]
    tail = 2.0 * cfg.inversion_eps / np.pi * (np.log(smax) + 1.0) / smax
    return float(head + np.trapezoid(np.log(s) * raw, s) + tail)


def potential_grid(rect, h, gamma, K, cfg=SolverConfig(), cache=None) -> PotentialGrid:
    """Smoothed potential on the nodes of ``rect``; ``cache`` is an optional :class:`SolverCache`."""
    xs, ys = grid_axes(rect, h)
    Z = xs[None, :] + 1j * ys[:, None]
    if cache is None:
        U = log_potential_ladder(Z, gamma, K, cfg)
    else:
        eta = 1j * cfg.inversion_eps
        keys = [cache.key("U", z, eta, gamma, K, cfg) for z in Z.ravel()]
        hits = [cache.get(k) for k in keys]
        todo = np.array([v is None for v in hits])
        U = np.array([np.nan if v is None else v[0] for v in hits])
        if todo.any():
            U[todo] = log_potential_ladder(Z.ravel()[todo], gamma, K, cfg)
            cache.put_many((k, (u,)) for k, u, t in zip(keys, U, todo) if t)
        U = U.reshape(Z.shape)
    if not np.all(np.isfinite(U)):
        raise th.SolverError("non-finite potential on the grid")
    return PotentialGrid(xs, ys, U, cfg.inversion_eps, _meta(gamma, K, cfg, h))


def _meta(gamma, K, cfg, h):
    return {"gamma": float(gamma), "mu": K.mu, "scale": K.scale, "eps": cfg.inversion_eps, "h": float(h),
            "order": cfg.quad.order, "method": cfg.quad.method, "tol": cfg.tol}


# ---------------------------------------------------------------------------
# potential route


def laplacian_density(pg: PotentialGrid):
    """``(1/2pi) * five-point Laplacian`` on interior nodes."""
    U, h = pg.U, pg.h
    lap = (U[2:, 1:-1] + U[:-2, 1:-1] + U[1:-1, 2:] + U[1:-1, :-2] - 4.0 * U[1:-1, 1:-1]) / (h * h)
    return lap / (2.0 * np.pi)


def measure_from_potential(pg: PotentialGrid, route="potential") -> Measure2D:
    dens = laplacian_density(pg)
    h = pg.h
    neg = dens < 0
    clipped = float(-dens[neg].sum() * h * h)
    dens = np.where(neg, 0.0, dens)
    mass = float(dens.sum() * h * h)
    meta = dict(pg.meta, route=route, clipped_mass=clipped, mass=mass)
    if mass < 0.95:
        warnings.warn(f"rectangle misses {1 - mass:.3f} of the mass", RuntimeWarning, stacklevel=2)
        meta["insufficient_rect"] = True
    return Measure2D(pg.x_grid[1:-1], pg.y_grid[1:-1], dens / mass, mass, clipped, meta)


def brown_from_potential(rect, h, gamma, K, cfg=SolverConfig(), cache=None) -> Measure2D:
    if h > 0.1:
        raise ValueError("grid step must be <= 0.1")
    return measure_from_potential(potential_grid(rect, h, gamma, K, cfg, cache))


# ---------------------------------------------------------------------------
# pushforward route


def deposit(points, masses, x_grid, y_grid, scheme="cic"):
    """Deposit point masses on the grid nodes.

    ``cic`` splits each mass bilinearly over the four surrounding nodes, which
    avoids the moire a regular lattice of atoms produces under nearest-bin
    assignment once ``Phi`` stretches it. ``nearest`` is plain binning.
    Points outside the grid land on the boundary nodes.
    """
    h = x_grid[1] - x_grid[0]
    nx, ny = len(x_grid), len(y_grid)
    fx = (points.real - x_grid[0]) / h
    fy = (points.imag - y_grid[0]) / h
    if scheme == "nearest":
        ix = np.clip(np.rint(fx).astype(int), 0, nx - 1)
        iy = np.clip(np.rint(fy).astype(int), 0, ny - 1)
        flat = np.bincount(iy * nx + ix, weights=masses, minlength=nx * ny)
        return flat.reshape(ny, nx)
    if scheme != "cic":
        raise ValueError(f"unknown deposit scheme {scheme!r}")
    fx = np.clip(fx, 0.0, nx - 1.0)
    fy = np.clip(fy, 0.0, ny - 1.0)
    x0 = np.minimum(np.floor(fx).astype(int), nx - 2)
    y0 = np.minimum(np.floor(fy).astype(int), ny - 2)
    tx, ty = fx - x0, fy - y0
    flat = np.zeros(nx * ny)
    for jy, wy in ((0, 1.0 - ty), (1, ty)):
        for jx, wx in ((0, 1.0 - tx), (1, tx)):
            flat += np.bincount((y0 + jy) * nx + x0 + jx, weights=masses * wx * wy, minlength=nx * ny)
    return flat.reshape(ny, nx)


def pushforward(base: Measure2D, gamma, K, cfg=SolverConfig(), sub=4, scheme="cic") -> Measure2D:
    """Move ``base`` (a ``gamma = 0`` Brown measure) by ``Phi_gamma``.

    Each bin is split into ``sub x sub`` equal-mass atoms; ``Phi`` is solved
    at the bin centres and interpolated bilinearly to the atoms, then atoms
    are deposited with :func:`deposit`. ``gamma = 0`` returns the base unchanged.
    """
    meta = dict(base.meta, route="pushforward", gamma=float(gamma), sub=sub, scheme=scheme)
    if gamma == 0.0:
        return Measure2D(base.x_grid.copy(), base.y_grid.copy(), base.density.copy(), base.total_mass,
                         base.clipped_mass, meta)
    xs, ys, h = base.x_grid, base.y_grid, base.h
    lam = xs[None, :] + 1j * ys[:, None]
    phi = th.phi_map(lam, float(gamma), K, cfg.quad)
    interp_re = RegularGridInterpolator((ys, xs), phi.real, bounds_error=False, fill_value=None)
    interp_im = RegularGridInterpolator((ys, xs), phi.imag, bounds_error=False, fill_value=None)
    off = ((np.arange(sub) + 0.5) / sub - 0.5) * h
    mass = base.bin_masses() / sub**2
    out = np.zeros_like(base.density)
    for dy in off:
        for dx in off:
            pts = np.stack([(ys[:, None] + dy + 0 * xs[None, :]).ravel(), (xs[None, :] + dx + 0 * ys[:, None]).ravel()], axis=1)
            tgt = interp_re(pts) + 1j * interp_im(pts)
            out += deposit(tgt, mass.ravel(), xs, ys, scheme)
    return Measure2D(xs.copy(), ys.copy(), out / (h * h), base.total_mass, base.clipped_mass, meta)


def brown_pushforward(rect, h, gamma, K, cfg=SolverConfig(), sub=4, base=None, cache=None) -> Measure2D:
    if base is None:
        base = brown_from_potential(rect, h, 0.0, K, cfg, cache)
    return pushforward(base, gamma, K, cfg, sub=sub)


# ---------------------------------------------------------------------------
# export


def write_measure_csv(path, m: Measure2D):
    """Header line ``x0,y0,h,nx,ny,gamma,mu,eps,mass`` + values, then row-major density."""
    meta = m.meta
    head = ["x0", "y0", "h", "nx", "ny", "gamma", "mu", "eps", "mass"]
    vals = [m.x_grid[0], m.y_grid[0], m.h, len(m.x_grid), len(m.y_grid), meta.get("gamma", 0.0),
            meta.get("mu", float("nan")), meta.get("eps", float("nan")), m.total_mass]
    with open(path, "w") as fh:
        fh.write(",".join(head) + "\n")
        fh.write(",".join(repr(float(v)) if not isinstance(v, int) else str(v) for v in vals) + "\n")
        for row in m.density:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


def read_measure_csv(path) -> Measure2D:
    with open(path) as fh:
        names = fh.readline().strip().split(",")
        vals = dict(zip(names, fh.readline().strip().split(",")))
        dens = np.loadtxt(fh, delimiter=",", ndmin=2)
    h = float(vals["h"])
    nx, ny = int(vals["nx"]), int(vals["ny"])
    xs = float(vals["x0"]) + h * np.arange(nx)
    ys = float(vals["y0"]) + h * np.arange(ny)
    meta = {"gamma": float(vals["gamma"]), "mu": float(vals["mu"]), "eps": float(vals["eps"])}
    return Measure2D(xs, ys, dens.reshape(ny, nx), float(vals["mass"]), 0.0, meta)


def summary_record(m: Measure2D, **extra) -> str:
    rec = {k: v for k, v in m.meta.items()}
    rec.update(x0=float(m.x_grid[0]), y0=float(m.y_grid[0]), nx=len(m.x_grid), ny=len(m.y_grid),
               total_mass=m.total_mass, clipped_mass=m.clipped_mass, sha256=m.checksum())
    rec.update(extra)
    return json.dumps(rec, sort_keys=True, default=str)
