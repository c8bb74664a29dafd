"""Command-line front end.

    elliptic-laplacian sample   --n 500 --gamma 0.5 --mu 1 --seed 7 --z 1+0i --out run/
    elliptic-laplacian theory   --gamma 0.5 --mu 1 --z 0,1,i --out run/
    elliptic-laplacian compare  --suite ks --out run/
    elliptic-laplacian validate-atoms --mu 0.5 --gamma 0.5

Options may also come from a ``key=value`` file given by ``--config``;
command-line values win over the file, which wins over the defaults.
Exit codes: 0 ok, 1 a check failed, 2 usage, 3 numerical failure, 4 I/O.
"""
from __future__ import annotations

import argparse
import dataclasses
import functools
import hashlib
import os
import subprocess
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__, acceptance, brown, compare, spectra, theory
from .ensemble import (EnsembleConfig, make_gaussian_atoms, make_rademacher_atoms, sample_elliptic,
                       validate_family, write_matrix_binary)
from .gaussexp import CovarianceSpec, QuadratureSpec
from .theory import SolverCache, SolverConfig, SolverError

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_NUMERIC, EXIT_IO = 0, 1, 2, 3, 4
SUITES = ("ks", "tv2d", "ellipsoid", "lsv", "moderate-sv", "acceptance")


class UsageError(Exception):
    pass


@functools.lru_cache(maxsize=1)
def version_string() -> str:
    """``v<release>`` plus ``git describe`` of the source tree when available."""
    base = f"v{__version__}"
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty", "--tags"], cwd=Path(__file__).parent,
                             capture_output=True, text=True, timeout=5)
    except (OSError, subprocess.SubprocessError):
        return base
    desc = out.stdout.strip()
    return f"{base}-g{desc}" if out.returncode == 0 and desc else base


# ---------------------------------------------------------------------------
# configuration


def parse_complex(text: str) -> complex:
    """``1+0i``, ``-2.5i``, ``i``, ``0.3-1j`` ..."""
    s = str(text).strip().replace(" ", "").replace("I", "i").replace("i", "j")
    if s in ("j", "+j"):
        return 1j
    if s == "-j":
        return -1j
    s = s.replace("+j", "+1j").replace("-j", "-1j")
    try:
        return complex(s)
    except ValueError:
        raise UsageError(f"not a complex number: {text!r}") from None


def format_complex(z: complex) -> str:
    z = complex(z)
    return f"{z.real!r}{'+' if z.imag >= 0 else '-'}{abs(z.imag)!r}i"


def parse_zlist(text) -> tuple:
    return tuple(parse_complex(t) for t in str(text).split(",") if t.strip())


def _parse_rect(text):
    vals = [float(v) for v in str(text).replace(" ", "").split(",")]
    if len(vals) != 4:
        raise UsageError("--rect needs x0,x1,y0,y1")
    return tuple(vals)


@dataclass(frozen=True)
class RunConfig:
    n: int = 500
    gamma: float = 0.5
    mu: float = 1.0
    atoms: str = "gaussian"
    diag: str = "zero"
    seed: int = 0
    z: tuple = (1 + 0j,)
    eps: float = 0.01
    grid_h: float = 0.05
    rect: tuple | None = None
    threads: int = field(default_factory=lambda: os.cpu_count() or 1)
    out: str = "."
    suite: str = "ks"
    trials: int = 5
    order: int = 64
    tol: float = 1e-12
    brown: bool = True
    cache: str = ""

    def __post_init__(self):
        if self.n < 1:
            raise UsageError("--n must be positive")
        if not 0.0 <= self.mu <= 1.0:
            raise UsageError("--mu must lie in [0, 1]")
        if not -1.0 <= self.gamma <= 1.0:
            raise UsageError("--gamma must lie in [-1, 1]")
        if self.atoms not in ("gaussian", "rademacher"):
            raise UsageError("--atoms is gaussian or rademacher")
        if self.diag not in ("zero", "iid-standard"):
            raise UsageError("--diag is zero or iid-standard")
        if not 0 <= self.seed < 2**64:
            raise UsageError("--seed must be a 64-bit unsigned integer")
        if self.eps <= 0 or self.grid_h <= 0 or self.grid_h > 0.1:
            raise UsageError("--eps must be positive and --grid-h in (0, 0.1]")
        if self.threads < 1 or self.trials < 1 or self.order < 2:
            raise UsageError("--threads, --trials must be positive and --order >= 2")
        if self.suite not in SUITES:
            raise UsageError(f"--suite must be one of {', '.join(SUITES)}")
        if not self.z:
            raise UsageError("--z needs at least one value")

    # canonical text form: sorted key=value lines
    def to_text(self) -> str:
        lines = []
        for f in sorted(dataclasses.fields(self), key=lambda f: f.name):
            lines.append(f"{f.name}={_fmt(getattr(self, f.name))}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_mapping(cls, raw: dict, base: RunConfig | None = None) -> RunConfig:
        vals = {} if base is None else dataclasses.asdict(base)
        names = {f.name: f for f in dataclasses.fields(cls)}
        for k, v in raw.items():
            k = k.replace("-", "_")
            if k not in names:
                raise UsageError(f"unknown option {k!r}")
            vals[k] = _coerce(k, v)
        return cls(**vals)

    @classmethod
    def from_text(cls, text: str, base: RunConfig | None = None) -> RunConfig:
        raw = {}
        for ln, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"config line {ln}: expected key=value")
            k, v = line.split("=", 1)
            raw[k.strip()] = v.strip()
        return cls.from_mapping(raw, base)

    def solver(self) -> SolverConfig:
        return SolverConfig(tol=self.tol, inversion_eps=self.eps, quad=QuadratureSpec(self.order))

    def atom_family(self):
        if self.atoms == "rademacher":
            if self.mu != 1.0:
                raise UsageError("rademacher atoms need --mu 1")
            return make_rademacher_atoms(self.gamma)
        return make_gaussian_atoms(self.mu, self.gamma)

    def ensemble(self, seed=None) -> EnsembleConfig:
        return EnsembleConfig(self.n, self.atom_family(), self.diag, self.seed if seed is None else seed)

    def params(self) -> dict:
        """Everything except output location and parallelism (those do not affect results)."""
        d = {f.name: _fmt(getattr(self, f.name)) for f in dataclasses.fields(self)}
        for k in ("out", "threads", "cache"):
            d.pop(k)
        return d


def _fmt(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ",".join(format_complex(x) if isinstance(x, complex) else repr(float(x)) for x in v)
    if v is None:
        return "auto"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _coerce(key, v):
    if not isinstance(v, str):
        return v
    try:
        if key in ("n", "seed", "threads", "trials", "order"):
            return int(v)
        if key in ("gamma", "mu", "eps", "grid_h", "tol"):
            return float(v)
        if key == "z":
            return parse_zlist(v)
        if key == "rect":
            return None if v in ("", "auto") else _parse_rect(v)
        if key == "brown":
            if v.lower() not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(v)
            return v.lower() in ("true", "1", "yes")
    except ValueError:
        raise UsageError(f"bad value for {key}: {v!r}") from None
    return v


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="elliptic-laplacian", description="Spectra of elliptic Laplacian matrices and their limit laws.")
    p.add_argument("--version", action="version", version=version_string())
    sub = p.add_subparsers(dest="command", required=True)
    common = _Parser(add_help=False)
    S = argparse.SUPPRESS
    common.add_argument("--config", default=None, help="key=value file")
    common.add_argument("--n", type=int, default=S)
    common.add_argument("--gamma", type=float, default=S)
    common.add_argument("--mu", type=float, default=S)
    common.add_argument("--atoms", choices=("gaussian", "rademacher"), default=S)
    common.add_argument("--diag", choices=("zero", "iid-standard"), default=S)
    common.add_argument("--seed", type=int, default=S)
    common.add_argument("--z", type=str, default=S, help="comma-separated list, e.g. 0,1,i or 1+0i")
    common.add_argument("--eps", type=float, default=S, help="inversion smoothing")
    common.add_argument("--grid-h", dest="grid_h", type=float, default=S)
    common.add_argument("--rect", type=str, default=S, help="x0,x1,y0,y1")
    common.add_argument("--threads", type=int, default=S)
    common.add_argument("--out", type=str, default=S)
    common.add_argument("--suite", choices=SUITES, default=S)
    common.add_argument("--trials", type=int, default=S)
    common.add_argument("--order", type=int, default=S, help="quadrature order")
    common.add_argument("--tol", type=float, default=S)
    common.add_argument("--no-brown", dest="brown", action="store_false", default=S)
    common.add_argument("--cache", type=str, default=S, help="THRY1 cache file (default OUT/theory.cache)")
    for name, hlp in (("sample", "sample matrices and write spectra"),
                      ("theory", "predicted laws: nu_z densities and Brown measures"),
                      ("compare", "empirical vs predicted, and singular-value experiments"),
                      ("validate-atoms", "Monte Carlo check of the atom moments")):
        sp = sub.add_parser(name, parents=[common], help=hlp)
        if name == "validate-atoms":
            sp.add_argument("--nsamples", type=int, default=10**6)
            sp.add_argument("--tol-sigmas", dest="tol_sigmas", type=float, default=4.0)
    return p


def resolve_config(args) -> RunConfig:
    """Defaults, then the ``--config`` file, then explicit flags."""
    cfg = RunConfig()
    if args.config:
        try:
            text = Path(args.config).read_text()
        except OSError as exc:
            raise OSError(f"cannot read config {args.config}: {exc}") from exc
        cfg = RunConfig.from_text(text, cfg)
    names = {f.name for f in dataclasses.fields(RunConfig)}
    flags = {k: v for k, v in vars(args).items() if k in names}
    return RunConfig.from_mapping(flags, cfg)


# ---------------------------------------------------------------------------
# output helpers


def _header(cfg: RunConfig, **extra) -> dict:
    h = {"version": version_string()}
    h.update(cfg.params())
    h.update({k: _fmt(v) if isinstance(v, (tuple, complex)) else v for k, v in extra.items()})
    return h


def _header_line(h: dict) -> str:
    return "# " + " ".join(f"{k}={str(v).replace(' ', '')}" for k, v in h.items()) + "\n"


def _ztag(z: complex) -> str:
    z = complex(z)
    return f"{z.real:g}{z.imag:+g}i".replace("+", "p").replace("-", "m").replace(".", "d")


def _sha(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_density_csv(path, m: theory.Measure1D, header: dict):
    with open(path, "w") as fh:
        fh.write(_header_line(dict(header, raw_mass=repr(m.total_mass))))
        fh.write("s,density,missing\n")
        miss = m.missing if m.missing is not None else np.zeros(len(m.grid), bool)
        for s, d, bad in zip(m.grid, m.density, miss):
            fh.write(f"{float(s)!r},{float(d)!r},{int(bad)}\n")


def read_density_csv(path) -> theory.Measure1D:
    with open(path) as fh:
        head = fh.readline()
        fh.readline()
        data = np.loadtxt(fh, delimiter=",", ndmin=2)
    meta = dict(kv.split("=", 1) for kv in head[1:].split())
    return theory.Measure1D(data[:, 0], data[:, 1], float(meta.get("raw_mass", "nan")), data[:, 2] > 0, meta)


def _write_measure2d(path, m: brown.Measure2D, header: dict):
    brown.write_measure_csv(path, m)
    # parameter set goes into the sidecar summary record so the measure CSV keeps its fixed header
    with open(str(path) + ".json", "w") as fh:
        fh.write(brown.summary_record(m, **header) + "\n")


# ---------------------------------------------------------------------------
# commands


def cmd_sample(cfg: RunConfig, out: Path, emit=print) -> int:
    out.mkdir(parents=True, exist_ok=True)
    seeds = [cfg.seed] if cfg.trials == 1 else [compare.trial_seed(cfg.seed, t) for t in range(cfg.trials)]
    manifest = []
    for t, seed in enumerate(seeds):
        S = sample_elliptic(cfg.ensemble(seed))
        tag = f"t{t}"
        head = _header(cfg, trial=t, trial_seed=seed)
        write_matrix_binary(out / f"M_{tag}.elsp", S.M)
        ev = spectra.eigenvalues(S.M, seed)
        spectra.write_spectrum_csv(out / f"eigenvalues_{tag}.csv", ev, **head)
        line = [f"trial={t}", f"n={S.n}", f"seed={seed}", f"trace={format_complex(complex(np.trace(S.M)))}"]
        for z in cfg.z:
            sv = spectra.singular_values(S.M, z, seed=seed)
            spectra.write_spectrum_csv(out / f"singular_values_{tag}_z{_ztag(z)}.csv", sv, **dict(head, z=format_complex(z)))
            line.append(f"s_min(z={format_complex(z)})={sv.points[0]:.6g}")
        emit(" ".join(line))
        manifest.append(tag)
    files = sorted(p.name for p in out.iterdir() if p.name.startswith(("M_", "eigenvalues_", "singular_values_")))
    with open(out / "sample_manifest.txt", "w") as fh:
        fh.write(_header_line(_header(cfg)))
        for name in files:
            fh.write(f"{name} {_sha(out / name)}\n")
    return EXIT_OK


def _cache(cfg: RunConfig, out: Path):
    return SolverCache(cfg.cache or out / "theory.cache")


def cmd_theory(cfg: RunConfig, out: Path, emit=print) -> int:
    out.mkdir(parents=True, exist_ok=True)
    scfg = cfg.solver()
    K = CovarianceSpec(cfg.mu)
    cache = _cache(cfg, out)
    t0 = time.perf_counter()
    for z in cfg.z:
        m = theory.density_nu(z, theory.default_s_grid(z, scfg), cfg.gamma, K, scfg, cache)
        if m.missing.any():
            i = int(np.argmax(m.missing))
            raise SolverError(f"density_nu failed at {int(m.missing.sum())} points, first s={m.grid[i]:.4g}",
                              z, m.grid[i] + 1j * scfg.inversion_eps)
        write_density_csv(out / f"nu_z{_ztag(z)}.csv", m, _header(cfg, z=format_complex(z)))
        emit(f"nu z={format_complex(z)} raw_mass={m.total_mass:.6f} points={len(m.grid)}")
    if cfg.brown:
        rect = cfg.rect or brown.default_rect(K, cfg.gamma)
        pot = brown.brown_from_potential(rect, cfg.grid_h, cfg.gamma, K, scfg, cache)
        base = pot if cfg.gamma == 0.0 else brown.brown_from_potential(rect, cfg.grid_h, 0.0, K, scfg, cache)
        push = brown.pushforward(base, cfg.gamma, K, scfg)
        for name, m in (("potential", pot), ("pushforward", push)):
            _write_measure2d(out / f"brown_{name}.csv", m, _header(cfg, route=name))
            emit(f"brown {name} mass={m.total_mass:.6f} clipped={m.clipped_mass:.2e} sha256={m.checksum()[:16]}")
        emit(f"route tv={compare.tv2d_measures(pot, push):.4g}")
    emit(f"cache hits={cache.hits} misses={cache.misses} time={time.perf_counter() - t0:.1f}s")
    return EXIT_OK


def _need(path: Path):
    if not path.exists():
        raise FileNotFoundError(f"missing input {path}")
    return path


def _pooled_1d(out: Path, z):
    files = sorted(out.glob(f"singular_values_t*_z{_ztag(z)}.csv"))
    if not files:
        raise FileNotFoundError(f"no singular_values files for z={format_complex(z)} in {out}")
    return spectra.EmpiricalMeasure1D(np.concatenate([spectra.read_spectrum_csv(f).points for f in files]))


def _pooled_2d(out: Path):
    files = sorted(out.glob("eigenvalues_t*.csv"))
    if not files:
        raise FileNotFoundError(f"no eigenvalue files in {out}")
    return spectra.EmpiricalMeasure2D.pooled(spectra.read_spectrum_csv(f) for f in files)


def cmd_compare(cfg: RunConfig, out: Path, emit=print) -> int:
    reports = []
    params = cfg.params()
    if cfg.suite == "ks":
        for z in cfg.z:
            target = read_density_csv(_need(out / f"nu_z{_ztag(z)}.csv"))
            d = compare.ks_distance(_pooled_1d(out, z), target)
            reports.append(compare.ExperimentReport("ks", dict(params, z=format_complex(z)), [d], d <= 0.05, 0.05,
                                                    {"value": d}))
    elif cfg.suite == "tv2d":
        target = brown.read_measure_csv(_need(out / "brown_potential.csv"))
        try:
            d = compare.tv2d_binned(_pooled_2d(out), target)
        except compare.CoverageError as exc:
            raise ArithmeticError(f"coverage failure: {exc}") from exc
        reports.append(compare.ExperimentReport("tv2d", params, [d], d <= 0.1, 0.1, {"value": d}))
    elif cfg.suite == "ellipsoid":
        if abs(cfg.gamma) >= 1:
            raise UsageError("ellipsoid suite needs |gamma| < 1")
        vals = []
        for t in range(cfg.trials):
            S = sample_elliptic(dataclasses.replace(cfg.ensemble(compare.trial_seed(cfg.seed, t)), diag_law="iid-standard"))
            vals.append(compare.ellipsoid_coverage(spectra.eigenvalues(S.elliptic, S.seed), cfg.gamma, 1.05))
        f = float(min(vals))
        reports.append(compare.ExperimentReport("ellipsoid", params, vals, f >= 0.99, 0.99, {"value": f}))
    elif cfg.suite == "lsv":
        z = cfg.z[0]
        rep = compare.lsv_experiment(cfg.ensemble(), z, cfg.trials, 3.0)
        for t, s in enumerate(rep.statistics):
            reports.append(compare.ExperimentReport("lsv_trial", dict(params, trial=t, z=format_complex(z)), [s],
                                                    s > rep.threshold, rep.threshold, {"value": s}))
        reports.append(rep)
    elif cfg.suite == "moderate-sv":
        z = cfg.z[0]
        ratios = []
        for t in range(cfg.trials):
            S = sample_elliptic(cfg.ensemble(compare.trial_seed(cfg.seed, t)))
            ratios.append(compare.moderate_sv_check(S, z, 0.01).extra["min_ratio"])
        r = float(min(ratios))
        reports.append(compare.ExperimentReport("moderate_sv", dict(params, z=format_complex(z)), ratios, r >= 0.01,
                                                0.01, {"value": r}))
    else:
        ctx = acceptance.Context(n=2000, trials=5, seed=cfg.seed, cfg=cfg.solver(), threads=cfg.threads,
                                 cache=_cache(cfg, out), log=lambda m: emit("  " + m))
        reports = acceptance.run_all(ctx, emit=lambda s: None)
    out.mkdir(parents=True, exist_ok=True)
    compare.append_reports(out / "reports.jsonl", reports)
    for r in reports:
        emit(r.summary())
    return EXIT_OK if all(r.passed for r in reports) else EXIT_FAIL


def cmd_validate_atoms(cfg: RunConfig, args, emit=print) -> int:
    rep = validate_family(cfg.atom_family(), args.nsamples, args.tol_sigmas, seed=cfg.seed)
    for line in rep.lines():
        emit(line)
    return EXIT_OK if rep.passed else EXIT_FAIL


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        cfg = resolve_config(args)
        out = Path(cfg.out)
        if args.command == "sample":
            return cmd_sample(cfg, out)
        if args.command == "theory":
            return cmd_theory(cfg, out)
        if args.command == "compare":
            return cmd_compare(cfg, out)
        return cmd_validate_atoms(cfg, args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ValueError as exc:
        # invalid parameter combinations caught by the library constructors
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (SolverError, ArithmeticError, np.linalg.LinAlgError, spectra.EigensolverError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
