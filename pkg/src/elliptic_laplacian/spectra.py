"""Empirical eigenvalue and singular-value measures."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla


class EigensolverError(RuntimeError):
    def __init__(self, msg, seed=None):
        super().__init__(msg if seed is None else f"{msg} (matrix seed {seed})")
        self.seed = seed


@dataclass
class EmpiricalMeasure1D:
    points: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.points = np.sort(np.asarray(self.points, dtype=float))

    @property
    def n(self) -> int:
        return len(self.points)

    def cdf(self, t, left=False):
        """``F(t) = #{x <= t}/n``; with ``left`` the limit ``F(t-)``."""
        side = "left" if left else "right"
        return np.searchsorted(self.points, t, side=side) / self.n

    def median(self) -> float:
        return float(np.median(self.points))


@dataclass
class EmpiricalMeasure2D:
    points: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=complex).ravel()

    @property
    def n(self) -> int:
        return len(self.points)

    @staticmethod
    def pooled(measures) -> EmpiricalMeasure2D:
        measures = list(measures)
        return EmpiricalMeasure2D(np.concatenate([m.points for m in measures]),
                                  {"pooled": len(measures)})


def _is_real(A):
    return not np.iscomplexobj(A) or not np.any(A.imag)


def eigenvalues(M, seed=None) -> EmpiricalMeasure2D:
    """All eigenvalues (LAPACK ``geev``), real arithmetic when ``M`` is real."""
    M = np.asarray(M)
    if not np.all(np.isfinite(M)):
        raise ValueError("matrix has non-finite entries")
    A = M.real if _is_real(M) else M
    try:
        if np.array_equal(A, A.conj().T):
            ev = sla.eigvalsh(A, check_finite=False).astype(complex)
        else:
            ev = sla.eigvals(A, overwrite_a=False, check_finite=False)
    except np.linalg.LinAlgError as exc:
        raise EigensolverError(f"eigensolver failed: {exc}", seed) from exc
    return EmpiricalMeasure2D(ev, {"seed": seed})


def hermitize(M, z=0j) -> np.ndarray:
    """``[[0, M - z], [(M - z)^*, 0]]``."""
    M = np.asarray(M, dtype=complex)
    n = M.shape[0]
    B = M - z * np.eye(n)
    H = np.zeros((2 * n, 2 * n), dtype=complex)
    H[:n, n:] = B
    H[n:, :n] = B.conj().T
    return H


def singular_values(M, z=0j, method="svd", seed=None) -> EmpiricalMeasure1D:
    """Singular values of ``M - z``.

    ``method="svd"`` (default) is accurate down to ``eps*||M||``;
    ``"gram"`` goes through ``eigvalsh((M-z)^*(M-z))`` and is faster but
    cannot resolve values below about ``sqrt(eps)*||M||``.
    """
    M = np.asarray(M)
    n = M.shape[0]
    B = M - z * np.eye(n)
    if _is_real(B):
        B = B.real
    try:
        if method == "svd":
            s = sla.svdvals(B, check_finite=False)
        elif method == "gram":
            ev = sla.eigvalsh(B.conj().T @ B, check_finite=False)
            s = np.sqrt(np.maximum(ev, 0.0))
        else:
            raise ValueError(f"unknown method {method!r}")
    except np.linalg.LinAlgError as exc:
        raise EigensolverError(f"singular value solver failed: {exc}", seed) from exc
    return EmpiricalMeasure1D(s, {"z": complex(z), "seed": seed})


def symmetrize(nu: EmpiricalMeasure1D) -> EmpiricalMeasure1D:
    """Atoms ``{+-s_i}``, each of mass ``1/(2n)``."""
    if np.any(nu.points < 0):
        raise ValueError("symmetrize needs nonnegative points")
    return EmpiricalMeasure1D(np.concatenate([-nu.points, nu.points]), dict(nu.meta, symmetric=True))


def stieltjes_of_empirical(nu_sym: EmpiricalMeasure1D, eta) -> complex:
    """``mean(1/(t_k - eta))``."""
    eta = complex(eta)
    if not eta.imag > 0:
        raise ValueError("Im(eta) must be positive")
    return complex(np.mean(1.0 / (nu_sym.points - eta)))


def write_spectrum_csv(path, measure, **header):
    """One atom per line; ``re,im`` for 2D and ``s`` for 1D.

    ``header`` (n, seed, z, gamma, mu, ...) goes into a leading comment line.
    """
    is2d = isinstance(measure, EmpiricalMeasure2D)
    head = dict(n=measure.n)
    head.update(header)
    with open(path, "w") as fh:
        fh.write("# " + " ".join(f"{k}={v}" for k, v in head.items()) + "\n")
        fh.write("re,im\n" if is2d else "s\n")
        if is2d:
            for p in measure.points:
                fh.write(f"{float(p.real)!r},{float(p.imag)!r}\n")
        else:
            for p in measure.points:
                fh.write(f"{float(p)!r}\n")


def read_spectrum_csv(path):
    with open(path) as fh:
        head = fh.readline()
        cols = fh.readline().strip()
        meta = dict(kv.split("=", 1) for kv in head[1:].split())
        data = np.loadtxt(fh, delimiter=",", ndmin=2)
    if cols == "re,im":
        return EmpiricalMeasure2D(data[:, 0] + 1j * data[:, 1], meta)
    return EmpiricalMeasure1D(data[:, 0], meta)
