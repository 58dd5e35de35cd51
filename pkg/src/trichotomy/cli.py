"""Command-line experiment runner.

    trichotomy --config run.json [--out DIR] [--seed N] [--quiet]

The config is a JSON object whose ``mode`` is one of ``gen``, ``solve``,
``verify``, ``sweep`` or ``howland``.  Exit status: 0 when every requested
check passes, 1 for invalid input, 2 for a numerical failure, 3 when a check
is violated.
"""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import io
import json
import math
import os
import sys
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .certify import RateParams, TrichotomyCertificate, certify
from .errors import NumericalFailure, ValidationError
from .howland import PeriodicSystem, floquet_split, lift_certificate, lift_matrix, perturb_periodic, random_periodic
from .linops import format_matrix, random_perturbation, random_trichotomic, read_matrix, write_matrix
from .seqspace import compute_budget
from .solver import (
    PerturbationProblem,
    family_norms,
    guard_band,
    perturbed_projectors,
    solve_perturbed,
)
from .verify import check_bounds, verify_all

EXIT_OK, EXIT_INVALID, EXIT_NUMERICAL, EXIT_VIOLATION = 0, 1, 2, 3
MODES = ("gen", "solve", "verify", "sweep", "howland")

_DEFAULTS = {
    "alpha": None,
    "horizon": 80,
    "cert_horizon": None,
    "fp_tol": 1e-12,
    "tail_tol": 1e-13,
    "max_iter": 10_000,
    "tol": 1e-8,
    "cond": 1.0,
    "seed": 0,
    "perturbation_seed": None,
    "delta": None,
    "delta_grid": None,
    "delta_relative": True,
    "period": 1,
}
_KNOWN = set(_DEFAULTS) | {
    "mode", "dims", "moduli", "rho0", "rho", "rho0_hat", "rho_hat",
    "matrix_a", "matrix_b", "certificate", "system",
}


@dataclass
class ExperimentConfig:
    """Validated run configuration.  Paths inside the config are resolved against its directory."""

    mode: str
    rho0: float
    rho: float
    rho0_hat: float
    rho_hat: float
    params: dict = field(default_factory=dict)
    base: Path = Path(".")

    def __getitem__(self, key):
        return self.params[key]

    def get(self, key, default=None):
        v = self.params.get(key)
        return default if v is None else v

    def path(self, key) -> Path | None:
        v = self.params.get(key)
        if v is None:
            return None
        p = Path(v)
        return p if p.is_absolute() else self.base / p

    @property
    def rates(self) -> RateParams:
        return RateParams(self.rho0_hat, self.rho_hat)

    @classmethod
    def from_dict(cls, data: dict, base: Path = Path("."), seed: int | None = None) -> "ExperimentConfig":
        if not isinstance(data, dict):
            raise ValidationError("config must be a JSON object")
        unknown = sorted(set(data) - _KNOWN)
        if unknown:
            raise ValidationError(f"unknown config keys: {', '.join(unknown)}")
        mode = data.get("mode")
        if mode not in MODES:
            raise ValidationError(f"'mode' must be one of {', '.join(MODES)}, got {mode!r}")
        missing = [k for k in ("rho0", "rho", "rho0_hat", "rho_hat") if k not in data]
        if missing:
            raise ValidationError(f"missing rate keys: {', '.join(missing)}")
        try:
            rho0, rho, rho0_hat, rho_hat = (float(data[k]) for k in ("rho0", "rho", "rho0_hat", "rho_hat"))
        except (TypeError, ValueError) as exc:
            raise ValidationError(f"rates must be numbers: {exc}") from exc
        if not (0.0 < rho0 < rho0_hat < rho_hat < rho):
            raise ValidationError(
                f"rates must interlace 0 < rho0 < rho0_hat < rho_hat < rho, got {rho0}, {rho0_hat}, {rho_hat}, {rho}"
            )
        params = dict(_DEFAULTS)
        params.update({k: v for k, v in data.items() if k not in ("mode", "rho0", "rho", "rho0_hat", "rho_hat")})
        if seed is not None:
            params["seed"] = seed
        cfg = cls(mode, rho0, rho, rho0_hat, rho_hat, params, base)
        cfg._validate()
        return cfg

    def _validate(self) -> None:
        p = self.params
        has_file = p.get("matrix_a") is not None or p.get("certificate") is not None
        if self.mode == "howland":
            if p.get("system") is None and (p.get("dims") is None or p.get("moduli") is None):
                raise ValidationError("howland needs 'system' or both 'dims' and 'moduli'")
            if int(p["period"]) < 1:
                raise ValidationError("'period' must be at least 1")
        elif not has_file and (p.get("dims") is None or p.get("moduli") is None):
            raise ValidationError("need 'matrix_a' / 'certificate' or both 'dims' and 'moduli'")
        if p.get("dims") is not None:
            dims = p["dims"]
            if not (isinstance(dims, list) and len(dims) == 3 and all(isinstance(x, int) and x >= 0 for x in dims)):
                raise ValidationError("'dims' must be three non-negative integers")
        if self.mode == "sweep" and not isinstance(p.get("delta_grid"), list):
            raise ValidationError("sweep needs a 'delta_grid' list")
        if self.mode == "sweep" and any(not isinstance(x, (int, float)) or x < 0 for x in p["delta_grid"]):
            raise ValidationError("'delta_grid' entries must be non-negative numbers")
        if p.get("delta") is not None and (not isinstance(p["delta"], (int, float)) or p["delta"] < 0):
            raise ValidationError("'delta' must be a non-negative number")
        for k in ("horizon", "max_iter"):
            if not isinstance(p[k], int) or p[k] < 1:
                raise ValidationError(f"'{k}' must be a positive integer")
        if not isinstance(p["seed"], int) or p["seed"] < 0:
            raise ValidationError("'seed' must be a non-negative integer")


def _atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if math.isfinite(x) else str(x)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, Path):
        return str(obj)
    return obj


def write_report(path: Path, payload: dict) -> None:
    body = dict(_jsonable(payload))
    body["timestamp"] = _dt.datetime.now(_dt.timezone.utc).isoformat()
    _atomic_write(path, json.dumps(body, indent=2, sort_keys=True) + "\n")


def write_csv(path: Path, header, rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow(["" if v is None else format(v, ".17g") if isinstance(v, float) else v for v in row])
    _atomic_write(path, buf.getvalue())


def _cert_horizon(cfg: ExperimentConfig) -> int:
    need = cfg["horizon"] + guard_band(cfg.rates, cfg.rho0, cfg.rho, cfg["tail_tol"])
    return max(int(cfg.get("cert_horizon", need)), need)


def _instance(cfg: ExperimentConfig) -> TrichotomyCertificate:
    cert_path = cfg.path("certificate")
    if cert_path is not None:
        cert = TrichotomyCertificate.from_json(cert_path.read_text())
        if cert.rho0 != cfg.rho0 or cert.rho != cfg.rho:
            raise ValidationError("certificate rates differ from the config's rho0 / rho")
        return cert
    if cfg.path("matrix_a") is not None:
        A = read_matrix(cfg.path("matrix_a"))
        alpha = cfg.get("alpha")
        if alpha is None:
            raise ValidationError("'alpha' is required when 'matrix_a' is read from a file")
    else:
        A, split = random_trichotomic(*cfg["dims"], cfg["moduli"], cfg["seed"], float(cfg["cond"]))
        alpha = cfg.get("alpha", split.alpha)
    return certify(A, float(alpha), cfg.rho0, cfg.rho, _cert_horizon(cfg))


def _perturbation(cfg: ExperimentConfig, cert: TrichotomyCertificate, delta=None) -> np.ndarray:
    """``matrix_b`` from file, else a seeded random matrix of norm ``delta`` (relative to delta_max by default)."""
    if delta is None and cfg.path("matrix_b") is not None:
        return read_matrix(cfg.path("matrix_b"))
    if delta is None:
        delta = cfg.get("delta")
    if delta is None:
        raise ValidationError("need 'matrix_b' or 'delta'")
    if cfg["delta_relative"]:
        delta = float(delta) * compute_budget(cert, cfg.rates, np.zeros_like(cert.matrix)).delta_max
    seed = cfg.get("perturbation_seed", cfg["seed"] + 1000)
    return random_perturbation(cert.dim, float(delta), seed)


def _problem(cfg, cert, B) -> PerturbationProblem:
    return PerturbationProblem(
        cert.matrix, cert, B, cfg.rates, cfg["horizon"], float(cfg["fp_tol"]), float(cfg["tail_tol"]), cfg["max_iter"]
    )


def run_gen(cfg: ExperimentConfig, out: Path) -> tuple[int, dict]:
    cert = _instance(cfg)
    write_matrix(out / "matrix_a.txt", cert.matrix)
    _atomic_write(out / "certificate.json", cert.to_json() + "\n")
    files = ["matrix_a.txt", "certificate.json"]
    if cfg.get("delta") is not None or cfg.path("matrix_b") is not None:
        write_matrix(out / "matrix_b.txt", _perturbation(cfg, cert))
        files.append("matrix_b.txt")
    report = {"mode": "gen", "files": files, "kappa": cert.kappa, "alpha": cert.alpha, "horizon": cert.horizon}
    write_report(out / "gen_report.json", report)
    return EXIT_OK, report


def _solve(cfg, out):
    cert = _instance(cfg)
    B = _perturbation(cfg, cert)
    p = _problem(cfg, cert, B)
    try:
        Z, srep = solve_perturbed(p)
    except NumericalFailure as exc:
        write_report(out / "solve_report.json", {"mode": cfg.mode, "input": p.echo(), "error": str(exc)})
        raise
    return p, Z, srep


def _family_csv(path: Path, Z) -> None:
    norms = family_norms(Z)
    N = Z.horizon
    rows = []
    for n in range(-N, N + 1):
        s = float(norms["stable"][n]) if n >= 0 else None
        u = float(norms["unstable"][n]) if n >= 0 else None
        rows.append([n, s, u, float(norms["central"][N + n])])
    write_csv(path, ["n", "stable", "unstable", "central"], rows)


def run_solve(cfg: ExperimentConfig, out: Path) -> tuple[int, dict]:
    p, Z, srep = _solve(cfg, out)
    split = perturbed_projectors(Z, p.cert.alpha, p.fp_tol)
    report = {
        "mode": "solve",
        "input": p.echo(),
        "solve": srep.to_dict(),
        "projectors": {k: format_matrix(P) for k, P in split.projectors().items()},
    }
    write_report(out / "solve_report.json", report)
    _family_csv(out / "family_norms.csv", Z)
    return (EXIT_OK if srep.converged else EXIT_NUMERICAL), report


def run_verify(cfg: ExperimentConfig, out: Path) -> tuple[int, dict]:
    p, Z, srep = _solve(cfg, out)
    rep = verify_all(p, Z, srep.budget, float(cfg["tol"]))
    report = {"mode": "verify", "input": p.echo(), "solve": srep.to_dict(), "verify": rep.to_dict()}
    write_report(out / "verify_report.json", report)
    if not srep.converged:
        return EXIT_NUMERICAL, report
    return (EXIT_OK if rep.passed else EXIT_VIOLATION), report


def run_sweep(cfg: ExperimentConfig, out: Path) -> tuple[int, dict]:
    cert = _instance(cfg)
    rows, points = [], []
    ok = True
    for i, d in enumerate(cfg["delta_grid"]):
        B = _perturbation(cfg, cert, d)
        p = _problem(cfg, cert, B)
        Z, srep = solve_perturbed(p)
        rep = check_bounds(p, Z, srep.budget)
        bound = srep.budget.distance_bound(cert.kappa)
        dist = max(rep.info["projector_distances"].values())
        passed = rep.passed and srep.converged
        ok &= passed
        rows.append([p.delta, bound, float(dist), float(rep.info["envelope_slack"]), passed])
        point = {"index": i, "grid_value": d, "solve": srep.to_dict(), "bounds": rep.to_dict()}
        points.append(point)
        write_report(out / "sweep" / f"point_{i:04d}.json", point)
    write_csv(out / "sweep.csv", ["delta", "bound", "max_projector_distance", "envelope_slack", "pass"], rows)
    report = {"mode": "sweep", "kappa": cert.kappa, "points": len(rows), "pass": ok}
    write_report(out / "sweep_report.json", report)
    return (EXIT_OK if ok else EXIT_VIOLATION), report


def run_howland(cfg: ExperimentConfig, out: Path) -> tuple[int, dict]:
    if cfg.path("system") is not None:
        sys_ = PeriodicSystem.from_json(cfg.path("system").read_text())
    else:
        sys_ = random_periodic(int(cfg["period"]), tuple(cfg["dims"]), cfg["moduli"], cfg["seed"], float(cfg["cond"]))
    alpha = cfg.get("alpha")
    if alpha is None:
        raise ValidationError("howland needs 'alpha'")
    T, d = sys_.period, sys_.dimension
    if sys_.perturbation is not None and cfg.get("delta") is None:
        Bs = sys_.perturbation
    else:
        delta = cfg.get("delta")
        if delta is None:
            raise ValidationError("need a 'perturbation' in the system file or 'delta'")
        if cfg["delta_relative"]:
            fam = floquet_split(sys_, float(alpha), cfg.rho0, cfg.rho, _cert_horizon(cfg))
            cert = lift_certificate(sys_, fam, _cert_horizon(cfg))
            delta = float(delta) * compute_budget(cert, cfg.rates, np.zeros_like(cert.matrix)).delta_max
        seed = cfg.get("perturbation_seed", cfg["seed"] + 1000)
        Bs = tuple(random_perturbation(d, float(delta), seed + k) for k in range(T))
    res = perturb_periodic(
        sys_, Bs, cfg.rates, float(alpha), cfg.rho0, cfg.rho,
        cfg["horizon"], float(cfg["fp_tol"]), float(cfg["tail_tol"]), cfg["max_iter"], float(cfg["tol"]),
    )
    _atomic_write(out / "periodic_system.json", PeriodicSystem(sys_.blocks, Bs).to_json() + "\n")
    report = {
        "mode": "howland",
        "period": T,
        "dimension": d,
        "solve": res.solve_report.to_dict(),
        "family": res.family.to_dict(),
        "perturbed_family": res.perturbed.to_dict(),
        "verify": res.report.to_dict(),
        "lift": format_matrix(lift_matrix(sys_.blocks)),
    }
    write_report(out / "howland_report.json", report)
    ok = res.report.passed and res.solve_report.converged
    return (EXIT_OK if ok else EXIT_VIOLATION), report


RUNNERS = {"gen": run_gen, "solve": run_solve, "verify": run_verify, "sweep": run_sweep, "howland": run_howland}


def load_config(path: Path, seed: int | None = None) -> ExperimentConfig:
    try:
        data = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ValidationError(f"cannot read config: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ValidationError(f"config is not valid JSON: {exc}") from exc
    return ExperimentConfig.from_dict(data, Path(path).resolve().parent, seed)


def _summary(code: int, report: dict) -> str:
    status = {EXIT_OK: "pass", EXIT_NUMERICAL: "numerical failure", EXIT_VIOLATION: "check violation"}[code]
    line = f"{report.get('mode')}: {status}"
    fails = report.get("verify", {}).get("checks", {})
    bad = [k for k, v in fails.items() if not v.get("pass")]
    if bad:
        line += f" ({', '.join(bad)})"
    return line


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="trichotomy", description="Compute and verify perturbed trichotomies.")
    ap.add_argument("--config", required=True, type=Path, help="JSON experiment config")
    ap.add_argument("--out", default=Path("out"), type=Path, help="output directory (default ./out)")
    ap.add_argument("--seed", type=int, default=None, help="override the config seed")
    ap.add_argument("--quiet", action="store_true", help="print nothing on success")
    args = ap.parse_args(argv)
    out = args.out
    try:
        if args.seed is not None and args.seed < 0:
            raise ValidationError("--seed must be non-negative")
        cfg = load_config(args.config, args.seed)
        out.mkdir(parents=True, exist_ok=True)
        code, report = RUNNERS[cfg.mode](cfg, out)
    except (ValidationError, OSError) as exc:
        return _fail(EXIT_INVALID, exc, out)
    except NumericalFailure as exc:
        return _fail(EXIT_NUMERICAL, exc, out)
    if not args.quiet:
        print(_summary(code, report))
    return code


def _fail(code: int, exc: Exception, out: Path) -> int:
    err = {"error": type(exc).__name__, "message": str(exc), "exit_code": code}
    print(json.dumps(err), file=sys.stderr)
    try:
        write_report(out / "error.json", err)
    except OSError:
        pass
    return code


if __name__ == "__main__":
    sys.exit(main())
