"""Distances between empirical spectra and predicted laws, and the
singular-value experiments."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .brown import Measure2D
from .ensemble import EnsembleConfig, MatrixSample, sample_elliptic
from .spectra import EmpiricalMeasure1D, EmpiricalMeasure2D
from .theory import Measure1D


class CoverageError(ValueError):
    def __init__(self, msg, coverage=None):
        super().__init__(msg)
        self.coverage = coverage


# ---------------------------------------------------------------------------
# reports


def _encode(v):
    if isinstance(v, complex):
        return {"__complex__": [v.real, v.imag]}
    if isinstance(v, np.generic):
        return _encode(v.item())
    if isinstance(v, np.ndarray):
        return [_encode(x) for x in v.tolist()]
    if isinstance(v, (list, tuple)):
        return [_encode(x) for x in v]
    if isinstance(v, dict):
        return {str(k): _encode(x) for k, x in v.items()}
    return v


def _decode(v):
    if isinstance(v, dict):
        if set(v) == {"__complex__"}:
            re, im = v["__complex__"]
            return complex(re, im)
        return {k: _decode(x) for k, x in v.items()}
    if isinstance(v, list):
        return [_decode(x) for x in v]
    return v


@dataclass
class ExperimentReport:
    name: str
    parameters: dict
    statistics: list
    passed: bool
    threshold: float
    extra: dict = field(default_factory=dict)

    def to_json(self) -> str:
        rec = {"name": self.name, "parameters": self.parameters, "statistics": self.statistics,
               "pass": bool(self.passed), "threshold": self.threshold, "extra": self.extra}
        return json.dumps(_encode(rec), sort_keys=True)

    @classmethod
    def from_json(cls, line: str) -> ExperimentReport:
        rec = _decode(json.loads(line))
        return cls(rec["name"], rec["parameters"], rec["statistics"], rec["pass"], rec["threshold"], rec["extra"])

    def summary(self) -> str:
        mark = "PASS" if self.passed else "FAIL"
        val = self.extra.get("value")
        shown = f" value={val:.4g}" if isinstance(val, (int, float)) else ""
        return f"{mark} {self.name}{shown} threshold={self.threshold:.4g}"


def append_reports(path, reports):
    with open(path, "a") as fh:
        for r in reports:
            fh.write(r.to_json() + "\n")


def read_reports(path):
    with open(path) as fh:
        return [ExperimentReport.from_json(line) for line in fh if line.strip()]


# ---------------------------------------------------------------------------
# metrics


def ks_distance(samples: EmpiricalMeasure1D, target) -> float:
    """Sup distance between the empirical CDF and ``target`` (Measure1D or callable CDF).

    Evaluated at the sample points (both one-sided limits) and at the target
    grid nodes.
    """
    if samples.n == 0:
        raise ValueError("no samples")
    cdf = target.cdf if isinstance(target, Measure1D) else target
    t = samples.points
    # both one-sided limits of both CDFs, so ties and atoms in the target are handled
    d = max(np.abs(samples.cdf(t) - cdf(t)).max(),
            np.abs(samples.cdf(t, left=True) - cdf(np.nextafter(t, -np.inf))).max())
    if isinstance(target, Measure1D):
        g = target.grid
        d = max(d, np.abs(samples.cdf(g) - cdf(g)).max())
    return float(min(1.0, d))


def bin_points(points, x_grid, y_grid):
    """Counts on the bins centred at the grid nodes; also the number inside."""
    h = x_grid[1] - x_grid[0]
    p = np.asarray(points, dtype=complex).ravel()
    ix = np.floor((p.real - (x_grid[0] - 0.5 * h)) / h).astype(np.int64)
    iy = np.floor((p.imag - (y_grid[0] - 0.5 * h)) / h).astype(np.int64)
    ok = (ix >= 0) & (ix < len(x_grid)) & (iy >= 0) & (iy < len(y_grid))
    counts = np.bincount(iy[ok] * len(x_grid) + ix[ok], minlength=len(x_grid) * len(y_grid))
    return counts.reshape(len(y_grid), len(x_grid)).astype(float), int(ok.sum())


def aggregate(masses, k: int):
    """Sum ``k x k`` blocks (the last block row/column may be partial)."""
    if k == 1:
        return masses
    ny, nx = masses.shape
    py, px = -ny % k, -nx % k
    m = np.pad(masses, ((0, py), (0, px)))
    return m.reshape(m.shape[0] // k, k, m.shape[1] // k, k).sum(axis=(1, 3))


def tv2d_binned(points: EmpiricalMeasure2D, target: Measure2D, agg: int = 1, min_coverage: float = 0.99) -> float:
    """Half the L1 distance between bin masses; ``agg`` merges ``agg x agg`` bins first.

    Empirical mass falling outside the target grid counts toward the distance.
    """
    if points.n == 0:
        raise ValueError("no points")
    counts, inside = bin_points(points.points, target.x_grid, target.y_grid)
    cov = inside / points.n
    if cov < min_coverage:
        raise CoverageError(f"target grid covers only {cov:.4f} of the points", cov)
    p = aggregate(counts / points.n, agg)
    q = target.bin_masses()
    q = aggregate(q / q.sum(), agg)
    return float(min(1.0, 0.5 * (np.abs(p - q).sum() + (1.0 - cov))))


def tv2d_measures(a: Measure2D, b: Measure2D, agg: int = 1) -> float:
    """Binned TV between two grid measures on the same grid."""
    if a.density.shape != b.density.shape or not (
        np.allclose(a.x_grid, b.x_grid, atol=1e-12) and np.allclose(a.y_grid, b.y_grid, atol=1e-12)
    ):
        raise CoverageError("measures live on different grids")
    p = aggregate(a.bin_masses() / a.bin_masses().sum(), agg)
    q = aggregate(b.bin_masses() / b.bin_masses().sum(), agg)
    return float(0.5 * np.abs(p - q).sum())


def ellipsoid_coverage(eigs: EmpiricalMeasure2D, gamma: float, inflate: float = 1.0) -> float:
    """Fraction inside ``(x/((1+g) r))^2 + (y/((1-g) r))^2 <= 1``, ``r = inflate``."""
    if abs(gamma) >= 1.0:
        raise ValueError("degenerate ellipse for |gamma| = 1")
    p = eigs.points
    a, b = (1.0 + gamma) * inflate, (1.0 - gamma) * inflate
    return float(np.mean((p.real / a) ** 2 + (p.imag / b) ** 2 <= 1.0))


# ---------------------------------------------------------------------------
# experiments


def trial_seed(seed: int, trial: int) -> int:
    """Independent 64-bit seed for trial ``trial`` of a run seeded by ``seed``."""
    state = np.random.SeedSequence([int(seed), int(trial)]).generate_state(2, np.uint32)
    return int(state[0]) | (int(state[1]) << 32)


def least_singular_value(A) -> float:
    from scipy.linalg import svdvals

    A = np.asarray(A)
    if np.iscomplexobj(A) and not np.any(A.imag):
        A = A.real
    return float(svdvals(A, check_finite=False)[-1])


def lsv_experiment(config: EnsembleConfig, z: complex, trials: int = 50, c_exp: float = 3.0,
                   max_fraction: float = 0.05) -> ExperimentReport:
    """Per trial ``s_n(L - z sqrt(n))``; pass iff at most ``max_fraction`` fall below ``n^-c_exp``."""
    z = complex(z)
    if z == 0:
        raise ValueError("the least-singular-value bound needs z != 0")
    if config.atoms.anticonc is None:
        raise ValueError("atoms do not carry anti-concentration constants")
    n = config.n
    thr = float(n) ** (-c_exp)
    vals = []
    for t in range(trials):
        cfg = EnsembleConfig(n, config.atoms, config.diag_law, trial_seed(config.seed, t), config.recenter)
        S = sample_elliptic(cfg)
        vals.append(least_singular_value(S.L - z * np.sqrt(n) * np.eye(n)))
    vals = np.array(vals)
    frac = float(np.mean(vals <= thr))
    params = {"n": n, "trials": trials, "z": z, "gamma": config.atoms.gamma, "mu": config.atoms.mu,
              "kind": config.atoms.kind, "seed": config.seed, "c_exp": c_exp}
    extra = {"value": frac, "fraction_below": frac, "min_s": float(vals.min()),
             "margin_log10": float(np.log10(vals.min() / thr))}
    return ExperimentReport("lsv", params, vals.tolist(), frac <= max_fraction, thr, extra)


def moderate_sv_check(sample, z: complex = 0j, eps_const: float = 0.01) -> ExperimentReport:
    """``min_i s_{n-i}(M - z) n / i`` over ``a_n <= i <= n-1``, ``a_n = n/log^2 n``.

    ``sample`` is a :class:`MatrixSample` or a square matrix standing in for ``M``.
    """
    from scipy.linalg import svdvals

    if isinstance(sample, MatrixSample):
        M, seed = sample.M, sample.seed
    else:
        M, seed = np.asarray(sample), None
    n = M.shape[0]
    if n < 100:
        raise ValueError("moderate_sv_check needs n >= 100")
    B = M - complex(z) * np.eye(n)
    if np.iscomplexobj(B) and not np.any(B.imag):
        B = B.real
    s = svdvals(B, check_finite=False)  # descending: s[k-1] = s_k
    a_n = n / math.log(n) ** 2
    i = np.arange(math.ceil(a_n), n)
    ratio = s[n - i - 1] * n / i
    rmin = float(ratio.min())
    params = {"n": n, "z": complex(z), "seed": seed, "eps_const": eps_const, "a_n": a_n}
    return ExperimentReport("moderate_sv", params, [rmin], rmin >= eps_const, eps_const,
                            {"value": rmin, "min_ratio": rmin, "argmin_i": int(i[ratio.argmin()])})
