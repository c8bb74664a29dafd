"""Atom-variable families, elliptic matrices and their Laplacians.

A pair ``(xi1, xi2)`` from the (mu, gamma)-family has

    Var Re xi = mu,           Cov(Re xi1, Re xi2) = mu*gamma,
    Var Im xi = 1 - mu,       Cov(Im xi1, Im xi2) = -(1 - mu)*gamma,

and real parts uncorrelated with imaginary parts. Mirrored entries
``(X_ij, X_ji)``, ``i < j``, are i.i.d. copies; ``L = X - D`` with ``D`` the
diagonal of row sums and ``M = L/sqrt(n)``.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np
from scipy.special import erf

GAUSSIAN = "jointly-gaussian"
RADEMACHER = "correlated-rademacher"
DIAG_LAWS = ("zero", "iid-standard")
# |gamma| this close to 1 leaves the Rademacher pair numerically determined
RADEMACHER_GAP = 1e-6
ELSP_MAGIC = b"ELSP1"


@dataclass(frozen=True)
class AtomFamily:
    kind: str
    mu: float
    gamma: float
    mean_shift: complex = 0j
    anticonc: tuple | None = None

    def sample_pairs(self, rng: np.random.Generator, size: int):
        """Draw ``size`` pairs; returns two complex arrays."""
        if self.kind == GAUSSIAN:
            g = self.gamma
            t = np.sqrt(max(0.0, 1.0 - g * g))
            z = rng.standard_normal((4, size))
            re1 = z[0]
            re2 = g * z[0] + t * z[1]
            im1 = z[2]
            im2 = -g * z[2] + t * z[3]
            sr, si = np.sqrt(self.mu), np.sqrt(1.0 - self.mu)
            x1 = sr * re1 + 1j * (si * im1)
            x2 = sr * re2 + 1j * (si * im2)
        elif self.kind == RADEMACHER:
            x2 = np.where(rng.random(size) < 0.5, 1.0, -1.0)
            same = rng.random(size) < 0.5 * (1.0 + self.gamma)
            x1 = np.where(same, x2, -x2).astype(complex)
            x2 = x2.astype(complex)
        else:
            raise ValueError(f"unknown atom kind {self.kind!r}")
        m = complex(self.mean_shift)
        if m != 0:
            x1 = x1 + m
            x2 = x2 + m
        return x1, x2

    def sample_single(self, rng: np.random.Generator, size: int):
        """Marginal law of one atom (used for an i.i.d. diagonal)."""
        return self.sample_pairs(rng, size)[0] - complex(self.mean_shift)


def _gaussian_anticonc(mu, gamma, delta0=0.5):
    # conditional law of xi1 given xi2 is Gaussian with the variances scaled
    # by 1 - gamma^2; a disc of radius delta0 captures at most the mass of a
    # strip along the wider axis
    sd = np.sqrt(max(mu, 1.0 - mu) * (1.0 - gamma * gamma))
    if sd == 0.0:
        return None
    return (delta0, float(1.0 - erf(delta0 / (sd * np.sqrt(2.0)))))


def make_gaussian_atoms(mu: float, gamma: float, mean_shift: complex = 0j) -> AtomFamily:
    """Jointly Gaussian pair. ``|gamma| = 1`` is allowed (Hermitian-type limit)."""
    if not 0.0 <= mu <= 1.0:
        raise ValueError(f"mu must lie in [0, 1], got {mu}")
    if not -1.0 <= gamma <= 1.0:
        raise ValueError(f"|gamma| must be <= 1, got {gamma}")
    return AtomFamily(GAUSSIAN, float(mu), float(gamma), complex(mean_shift), _gaussian_anticonc(mu, gamma))


def make_rademacher_atoms(gamma: float, mean_shift: complex = 0j) -> AtomFamily:
    """Signs with ``P(xi1 = xi2) = (1 + gamma)/2``; requires ``|gamma| < 1``."""
    if not abs(gamma) < 1.0 or 1.0 - abs(gamma) < RADEMACHER_GAP:
        raise ValueError(f"|gamma| must be < 1 - {RADEMACHER_GAP}, got {gamma}")
    return AtomFamily(RADEMACHER, 1.0, float(gamma), complex(mean_shift), (0.5, 0.5 * (1.0 - abs(gamma))))


# ---------------------------------------------------------------------------
# validation


@dataclass
class Check:
    name: str
    value: float
    target: float
    stderr: float
    passed: bool


@dataclass
class ValidationReport:
    family: AtomFamily
    nsamples: int
    tol_sigmas: float
    checks: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def lines(self):
        for c in self.checks:
            mark = "PASS" if c.passed else "FAIL"
            yield f"{mark} {c.name}: {c.value:+.5f} target {c.target:+.5f} (se {c.stderr:.1e})"


def validate_family(atoms: AtomFamily, nsamples: int = 10**6, tol_sigmas: float = 4.0, seed: int = 0,
                    sampler=None) -> ValidationReport:
    """Monte Carlo check of the family's second moments.

    ``sampler(rng, size)`` overrides ``atoms.sample_pairs`` (test hook).
    """
    if nsamples < 10**4:
        raise ValueError("nsamples must be >= 1e4")
    rng = np.random.Generator(np.random.Philox(seed))
    x1, x2 = (sampler or atoms.sample_pairs)(rng, nsamples)
    m = complex(atoms.mean_shift)
    x1, x2 = x1 - m, x2 - m
    mu, g = atoms.mu, atoms.gamma
    rep = ValidationReport(atoms, nsamples, tol_sigmas)
    terms = [
        ("E|xi1|^2", np.abs(x1) ** 2, 1.0),
        ("E|xi2|^2", np.abs(x2) ** 2, 1.0),
        ("E[(Re xi1)^2]", x1.real**2, mu),
        ("E[(Re xi2)^2]", x2.real**2, mu),
        ("E[Re xi1 Re xi2]", x1.real * x2.real, mu * g),
        ("E[Im xi1 Im xi2]", x1.imag * x2.imag, -(1.0 - mu) * g),
        ("E[Re xi1 Im xi2]", x1.real * x2.imag, 0.0),
        ("E[Im xi1 Re xi2]", x1.imag * x2.real, 0.0),
        ("E[Re xi1 Im xi1]", x1.real * x1.imag, 0.0),
        ("E[Re xi1]", x1.real, 0.0),
        ("E[Im xi1]", x1.imag, 0.0),
    ]
    for name, arr, target in terms:
        val = float(arr.mean())
        se = float(arr.std(ddof=1) / np.sqrt(nsamples))
        ok = abs(val - target) <= tol_sigmas * se if se > 0 else abs(val - target) <= 1e-12
        rep.checks.append(Check(name, val, target, se, bool(ok)))
    return rep


# ---------------------------------------------------------------------------
# matrices


@dataclass(frozen=True)
class EnsembleConfig:
    n: int
    atoms: AtomFamily
    diag_law: str = "zero"
    seed: int = 0
    recenter: bool = False

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 1:
            raise ValueError(f"n must be a positive integer, got {self.n}")
        if self.diag_law not in DIAG_LAWS:
            raise ValueError(f"diag_law must be one of {DIAG_LAWS}")
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        if not self.recenter and complex(self.atoms.mean_shift) != 0:
            raise ValueError("a nonzero mean_shift requires recenter=True")


@dataclass(frozen=True)
class MatrixSample:
    n: int
    X: np.ndarray
    D: np.ndarray
    L: np.ndarray
    M: np.ndarray
    seed: int

    @property
    def elliptic(self) -> np.ndarray:
        """``X/sqrt(n)`` (the pure elliptic matrix, without the Laplacian part)."""
        return self.X / np.sqrt(self.n)

    def row_sum_bound(self) -> float:
        return self.n * np.finfo(float).eps * float(np.abs(self.X).max(initial=0.0))


def _row_stream(seed: int, *key) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), *key])))


def sample_elliptic(config: EnsembleConfig) -> MatrixSample:
    """Draw ``X`` and build ``D``, ``L`` and ``M``.

    Row ``i``'s mirrored pairs ``(X_ij, X_ji)``, ``j > i``, come from their own
    counter-based stream keyed by ``(seed, 0, i)``, the diagonal from
    ``(seed, 1)``, so the result does not depend on generation order.
    """
    n, atoms = int(config.n), config.atoms
    try:
        X = np.zeros((n, n), dtype=complex)
    except MemoryError as exc:
        raise MemoryError(f"cannot allocate a {n}x{n} complex matrix") from exc
    for i in range(n - 1):
        x1, x2 = atoms.sample_pairs(_row_stream(config.seed, 0, i), n - 1 - i)
        X[i, i + 1:] = x1
        X[i + 1:, i] = x2
    if config.diag_law == "iid-standard":
        X[np.diag_indices(n)] = atoms.sample_single(_row_stream(config.seed, 1), n)
    d = X.sum(axis=1)
    D = np.diag(d)
    L = X - D
    M = L.copy()
    m = complex(atoms.mean_shift)
    if config.recenter and m != 0:
        M[np.diag_indices(n)] += (n - 1) * m
    M /= np.sqrt(n)
    for a in (X, D, L, M):
        a.setflags(write=False)
    return MatrixSample(n, X, D, L, M, int(config.seed))


def row_sum_check(sample: MatrixSample) -> float:
    """``max_i |sum_j L_ij|``."""
    return float(np.abs(sample.L.sum(axis=1)).max(initial=0.0))


# ---------------------------------------------------------------------------
# I/O


def write_matrix_csv(path, A):
    """Row-major CSV, each cell ``re,im`` (so a row has ``2n`` fields)."""
    A = np.asarray(A, dtype=complex)
    with open(path, "w") as fh:
        for row in A:
            fh.write(",".join(f"{float(v.real)!r},{float(v.imag)!r}" for v in row) + "\n")


def read_matrix_csv(path) -> np.ndarray:
    raw = np.loadtxt(path, delimiter=",", ndmin=2)
    return raw[:, 0::2] + 1j * raw[:, 1::2]


def write_matrix_binary(path, A):
    """``ELSP1``, little-endian u64 ``n``, then ``2 n^2`` doubles (re, im interleaved)."""
    A = np.ascontiguousarray(A, dtype=np.complex128)
    n = A.shape[0]
    if A.shape != (n, n):
        raise ValueError("matrix must be square")
    with open(path, "wb") as fh:
        fh.write(ELSP_MAGIC)
        fh.write(struct.pack("<Q", n))
        fh.write(A.view(np.float64).astype("<f8").tobytes())


def read_matrix_binary(path) -> np.ndarray:
    with open(path, "rb") as fh:
        if fh.read(len(ELSP_MAGIC)) != ELSP_MAGIC:
            raise ValueError(f"{path}: not an ELSP1 file")
        (n,) = struct.unpack("<Q", fh.read(8))
        data = np.frombuffer(fh.read(16 * n * n), dtype="<f8")
    if data.size != 2 * n * n:
        raise ValueError(f"{path}: truncated payload")
    return data.astype(np.float64).view(np.complex128).reshape(n, n)
