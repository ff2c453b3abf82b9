"""Command-line front end: reads JSON/CSV inputs, writes JSON reports."""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import clt
from .frechet import (
    EQUALITY_TOL,
    DiscreteMeasure,
    InvalidMeasure,
    NonConvergence,
    frechet_mean,
    theta_set,
    verify_mean,
)
from .geodesic import brute_force_distance, eval_geodesic, geodesic
from .logmap import (
    TangentVector,
    derivative_matrix,
    directional_derivative_matrix,
    log_map,
    psi,
    translated_log,
)
from .orthant_complex import (
    AxisOutOfRange,
    FlagViolation,
    InvalidPoint,
    OrthantError,
    OrthantSpace,
    Point,
    build_space,
)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_FAILED = 2
EXIT_USAGE = 64


class UsageError(Exception):
    pass


def _encode(value) -> str:
    """JSON text with every real written to 17 significant digits."""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if value is None:
        return "null"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        value = float(value)
        if not math.isfinite(value):
            return "null"
        return format(value, ".17g")
    if isinstance(value, str):
        return json.dumps(value)
    if isinstance(value, np.ndarray):
        return _encode(value.tolist())
    if isinstance(value, dict):
        items = (f"{json.dumps(str(k))}: {_encode(v)}" for k, v in value.items())
        return "{" + ", ".join(items) + "}"
    if isinstance(value, (list, tuple)):
        return "[" + ", ".join(_encode(v) for v in value) + "]"
    raise TypeError(f"cannot encode {type(value).__name__}")


def dumps(value) -> str:
    return _encode(value) + "\n"


def _read_json(path: str):
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}: invalid JSON ({exc})") from exc


def load_space(path: str) -> OrthantSpace:
    data = _read_json(path)
    try:
        return build_space(int(data["ambient_dim"]), data["maximal_orthants"])
    except (KeyError, TypeError) as exc:
        raise UsageError(f"{path}: expected ambient_dim and maximal_orthants") from exc


def _coords(raw: dict) -> dict[int, float]:
    return {int(k): float(v) for k, v in raw.items()}


def load_coords(path: str) -> dict[int, float]:
    """Coordinates from {"coords": {...}} JSON or axis,value CSV rows."""
    if path.endswith(".csv"):
        with open(path, newline="") as fh:
            rows = [r for r in csv.reader(fh) if r and not r[0].startswith("#")]
        if rows and not rows[0][0].strip().lstrip("-").isdigit():
            rows = rows[1:]
        return {int(a): float(v) for a, v in rows}
    data = _read_json(path)
    if "coords" not in data:
        raise UsageError(f"{path}: expected a coords object")
    return _coords(data["coords"])


def load_point(space: OrthantSpace, path: str) -> Point:
    return space.point(load_coords(path))


def load_measure(space: OrthantSpace, path: str) -> DiscreteMeasure:
    data = _read_json(path)
    try:
        atoms = data["atoms"]
        points = [space.point(_coords(a["coords"])) for a in atoms]
        weights = [float(a.get("weight", 1.0)) for a in atoms]
    except (KeyError, TypeError) as exc:
        raise UsageError(f"{path}: expected atoms with coords and weight") from exc
    return DiscreteMeasure(points, np.asarray(weights))


def _axes(text: str) -> frozenset:
    try:
        return frozenset(int(a) for a in text.split(",") if a.strip())
    except ValueError as exc:
        raise UsageError(f"bad axis list {text!r}") from exc


def _point_json(p: Point) -> dict:
    return {"coords": {str(a): v for a, v in p.coords.items()}}


def _threads(args) -> int:
    if args.threads is not None:
        return max(1, args.threads)
    env = os.environ.get("ORTHANT_STATS_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError as exc:
            raise UsageError("ORTHANT_STATS_THREADS must be an integer") from exc
    return os.cpu_count() or 1


_NUM = {"type": "number"}
_AXES = {"type": "array", "items": {"type": "integer"}}
_COORDS = {"type": "object", "additionalProperties": _NUM}
_VECTOR = {"type": "array", "items": _NUM}
_MATRIX = {"type": "array", "items": _VECTOR}
_SUPPORT = {
    "type": "object",
    "properties": {
        "k": {"type": "integer"},
        "A": {"type": "array", "items": _AXES},
        "B": {"type": "array", "items": _AXES},
    },
    "required": ["k", "A", "B"],
}
_CERTIFICATE = {
    "type": "object",
    "properties": {
        "candidate": _COORDS,
        "stratum": _AXES,
        "fixed_point_residual": _NUM,
        "tolerance": _NUM,
        "sphere_samples": {"type": "integer"},
        "passed": {"type": "boolean"},
        "directional": {
            "type": "array",
            "items": {
                "type": "object",
                "properties": {"stratum": _AXES, "max_value": _NUM, "direction": _VECTOR},
            },
        },
    },
    "required": ["candidate", "fixed_point_residual", "tolerance", "passed", "directional"],
}
_THETA = {
    "type": "object",
    "properties": {
        "stratum": _AXES,
        "extra_axes": _AXES,
        "resolution": {"type": "integer"},
        "flagged": {"type": "integer"},
        "total": {"type": "integer"},
        "empty": {"type": "boolean"},
        "full": {"type": "boolean"},
        "centroid": {"type": ["array", "null"], "items": _NUM},
        "angle_range": _VECTOR,
    },
    "required": ["stratum", "flagged", "total", "empty", "full"],
}


def _schema(properties: dict, required: list) -> dict:
    return {
        "$schema": "https://json-schema.org/draft/2020-12/schema",
        "type": "object",
        "properties": properties,
        "required": required,
    }


SCHEMAS = {
    "validate": _schema(
        {
            "valid": {"type": "boolean"},
            "ambient_dim": {"type": "integer"},
            "max_dim": {"type": "integer"},
            "strata": {"type": "integer"},
            "maximal_orthants": {"type": "array", "items": _AXES},
            "offending_orthant": _AXES,
            "error": {"type": "string"},
        },
        ["valid"],
    ),
    "geodesic": _schema(
        {
            "support": _SUPPORT,
            "length": _NUM,
            "breakpoints": {
                "type": "array",
                "items": {"type": "object", "properties": {"t": _NUM, "point": {"type": "object"}}},
            },
            "point": {"type": "object", "properties": {"coords": _COORDS}},
            "oracle_length": _NUM,
        },
        ["support", "length"],
    ),
    "logmap": _schema(
        {"phi": _VECTOR, "log": _VECTOR, "psi": _VECTOR, "matrix": _MATRIX},
        ["phi", "log"],
    ),
    "frechet-mean": _schema(
        {
            "mean": {"type": "object", "properties": {"coords": _COORDS}},
            "stratum": _AXES,
            "certificate": _CERTIFICATE,
            "theta": _THETA,
        },
        ["mean", "certificate"],
    ),
    "verify-mean": _schema({"certificate": _CERTIFICATE}, ["certificate"]),
    "theta": _schema({"theta": _THETA}, ["theta"]),
    "clt-sim": _schema(
        {
            "n": {"type": "integer"},
            "reps": {"type": "integer"},
            "seed": {"type": "integer"},
            "x_star": _COORDS,
            "strata_counts": {"type": "object", "additionalProperties": {"type": "integer"}},
            "mean_scaled": _VECTOR,
            "covariance_scaled": _MATRIX,
            "draws_file": {"type": ["string", "null"]},
            "prediction": {"type": "object"},
            "support_report": {"type": "object"},
        },
        ["n", "reps", "seed", "x_star", "strata_counts"],
    ),
}


def cmd_validate(args):
    data = _read_json(args.space)
    try:
        space = build_space(int(data["ambient_dim"]), data["maximal_orthants"])
    except FlagViolation as exc:
        return EXIT_FAILED, {"valid": False, "offending_orthant": sorted(exc.axes), "error": str(exc)}
    except OrthantError as exc:
        return EXIT_FAILED, {"valid": False, "error": str(exc)}
    except (KeyError, TypeError) as exc:
        raise UsageError(f"{args.space}: expected ambient_dim and maximal_orthants") from exc
    return EXIT_OK, {
        "valid": True,
        "ambient_dim": space.ambient_dim,
        "max_dim": space.max_dim,
        "strata": len(space.strata),
        "maximal_orthants": [sorted(s) for s in space.maximal],
    }


def cmd_geodesic(args):
    space = load_space(args.space)
    x1 = load_point(space, args.from_)
    x2 = load_point(space, args.to)
    g = geodesic(space, x1, x2)
    out = {
        "support": g.support.as_dict(),
        "length": g.length,
        "breakpoints": [{"t": t, "point": _point_json(p)} for t, p in g.breakpoints],
    }
    if args.t is not None:
        out["point"] = _point_json(eval_geodesic(space, x1, x2, args.t))
    if args.oracle:
        out["oracle_length"] = brute_force_distance(space, x1, x2)
    return EXIT_OK, out


def cmd_logmap(args):
    space = load_space(args.space)
    base = load_point(space, args.base)
    x = load_point(space, args.point)
    out = {"phi": translated_log(space, base, x), "log": log_map(space, base, x)}
    w = None
    if args.direction:
        coords = np.zeros(space.ambient_dim)
        for a, v in load_coords(args.direction).items():
            coords[a] = v
        extra = frozenset(np.flatnonzero(coords).tolist()) - base.support
        w = TangentVector(base.support, extra, coords)
        out["psi"] = psi(space, base, w, x)
    if args.derivative:
        if w is not None and w.extra:
            out["matrix"] = directional_derivative_matrix(space, base, x, w)
        else:
            out["matrix"] = derivative_matrix(space, base, x)
    return EXIT_OK, out


def cmd_frechet_mean(args):
    space = load_space(args.space)
    mu = load_measure(space, args.measure)
    if args.verify_only:
        mean = load_point(space, args.verify_only)
    else:
        mean = frechet_mean(space, mu, sphere_samples=args.grid, certificate_tol=args.tol)
    cert = verify_mean(space, mu, mean, sphere_samples=args.grid, tol=args.tol)
    out = {"mean": _point_json(mean), "stratum": sorted(mean.support), "certificate": cert.as_dict()}
    if args.theta:
        out["theta"] = theta_set(space, mu, mean, _axes(args.theta), args.grid, args.tol).as_dict()
    return (EXIT_OK if cert.passed else EXIT_FAILED), out


def cmd_verify_mean(args):
    space = load_space(args.space)
    mu = load_measure(space, args.measure)
    candidate = load_point(space, args.candidate)
    cert = verify_mean(space, mu, candidate, sphere_samples=args.grid, tol=args.tol)
    return (EXIT_OK if cert.passed else EXIT_FAILED), {"certificate": cert.as_dict()}


def cmd_theta(args):
    space = load_space(args.space)
    mu = load_measure(space, args.measure)
    mean = load_point(space, args.mean) if args.mean else frechet_mean(space, mu)
    theta = theta_set(space, mu, mean, _axes(args.tau), args.grid, args.tol)
    return EXIT_OK, {"theta": theta.as_dict()}


def cmd_clt_sim(args):
    space = load_space(args.space)
    mu = load_measure(space, args.measure)
    x_star = load_point(space, args.mean) if args.mean else frechet_mean(space, mu)
    emp = clt.monte_carlo(
        space, mu, args.n, args.reps, args.seed, x_star=x_star, threads=_threads(args)
    )
    counts: dict[str, int] = {}
    for s in emp.strata:
        key = ",".join(map(str, s)) or "origin"
        counts[key] = counts.get(key, 0) + 1
    out = {
        "n": args.n,
        "reps": args.reps,
        "seed": args.seed,
        "x_star": {str(a): v for a, v in x_star.coords.items()},
        "strata_counts": dict(sorted(counts.items())),
        "mean_scaled": emp.scaled.mean(axis=0),
        "covariance_scaled": np.atleast_2d(np.cov(emp.scaled.T)) if args.reps > 1 else None,
        "draws_file": args.out,
    }
    code = EXIT_OK
    if args.predict:
        try:
            pred = clt.predict(space, mu, x_star, grid_resolution=args.grid)
        except clt.PreconditionFailed as exc:
            out["prediction"] = {"preconditions_failed": exc.failures}
            code = EXIT_FAILED
        else:
            out["prediction"] = pred.as_dict()
            report = clt.support_frequencies(emp, pred)
            out["support_report"] = report
            if report["violations"] or report["outside_tangent_cone"]:
                code = EXIT_FAILED
    if args.out:
        with open(args.out, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["rep", "stratum"] + [f"z{a}" for a in range(space.ambient_dim)])
            for rep, stratum, z in emp.as_rows():
                writer.writerow([rep, ";".join(map(str, stratum))] + [format(float(v), ".17g") for v in z])
    return code, out


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        sys.exit(EXIT_USAGE)


class _SchemaAction(argparse.Action):
    def __init__(self, option_strings, dest, command=None, stream=None, **kwargs):
        self.command = command
        self.stream = stream
        super().__init__(option_strings, dest, nargs=0, **kwargs)

    def __call__(self, parser, namespace, values, option_string=None):
        (self.stream or sys.stdout).write(dumps(SCHEMAS[self.command]))
        sys.exit(EXIT_OK)


def build_parser(stdout=None) -> argparse.ArgumentParser:
    parser = _Parser(prog="orthant-stats", allow_abbrev=False, description="Geodesics, log maps and means in orthant spaces.")
    parser.add_argument(
        "--tol", type=float, default=EQUALITY_TOL,
        help=f"equality tolerance for mean conditions (default {EQUALITY_TOL:g})",
    )
    parser.add_argument(
        "--threads", type=int, default=None,
        help="worker threads for Monte Carlo (default ORTHANT_STATS_THREADS or all cores)",
    )
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    def add(name, func, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument(
            "--schema", action=_SchemaAction, command=name, stream=stdout,
            help="print the output JSON schema and exit",
        )
        p.set_defaults(func=func)
        return p

    p = add("validate", cmd_validate, "check a space file")
    p.add_argument("--space", required=True)

    p = add("geodesic", cmd_geodesic, "geodesic support, length and points")
    p.add_argument("--space", required=True)
    p.add_argument("--from", dest="from_", required=True)
    p.add_argument("--to", required=True)
    p.add_argument("--t", type=float, default=None, help="parameter in [0, 1]")
    p.add_argument("--oracle", action="store_true", help="also run the brute-force distance")

    p = add("logmap", cmd_logmap, "translated log map and derivatives")
    p.add_argument("--space", required=True)
    p.add_argument("--base", required=True)
    p.add_argument("--point", required=True)
    p.add_argument("--direction", default=None, help="tangent direction file for the directional limit")
    p.add_argument("--derivative", action="store_true")

    p = add("frechet-mean", cmd_frechet_mean, "Fréchet mean with certificate")
    p.add_argument("--space", required=True)
    p.add_argument("--measure", required=True)
    p.add_argument("--verify-only", default=None, help="candidate file; skip the search")
    p.add_argument("--theta", default=None, help="comma-separated axes of a co-bounding stratum")
    p.add_argument("--grid", type=int, default=64, help="sphere grid points per angular dimension")

    p = add("verify-mean", cmd_verify_mean, "certify a candidate mean")
    p.add_argument("--space", required=True)
    p.add_argument("--measure", required=True)
    p.add_argument("--candidate", required=True)
    p.add_argument("--grid", type=int, default=64)

    p = add("theta", cmd_theta, "directions of equality into a stratum")
    p.add_argument("--space", required=True)
    p.add_argument("--measure", required=True)
    p.add_argument("--tau", required=True, help="comma-separated axes")
    p.add_argument("--mean", default=None, help="mean file; computed when absent")
    p.add_argument("--grid", type=int, default=256)

    p = add("clt-sim", cmd_clt_sim, "Monte Carlo of scaled sample means")
    p.add_argument("--space", required=True)
    p.add_argument("--measure", required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--reps", type=int, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--mean", default=None, help="mean file; computed when absent")
    p.add_argument("--predict", action="store_true", help="add the Gaussian prediction and support report")
    p.add_argument("--out", default=None, help="CSV file for the draws")
    p.add_argument("--grid", type=int, default=64)
    return parser


def _check_paths(args):
    for name in ("space", "from_", "to", "base", "point", "direction", "measure",
                 "verify_only", "candidate", "mean"):
        path = getattr(args, name, None)
        if path is not None and not Path(path).exists():
            raise UsageError(f"no such file: {path}")
    if args.tol <= 0:
        raise UsageError("--tol must be positive")
    if getattr(args, "grid", 1) < 1:
        raise UsageError("--grid must be positive")
    for name in ("n", "reps"):
        if getattr(args, name, 1) < 1:
            raise UsageError(f"--{name} must be positive")


def run(argv=None, stdout=None) -> int:
    stdout = stdout or sys.stdout
    parser = build_parser(stdout)
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # usage errors, --help and --schema all exit from inside argparse
        return int(exc.code or 0)
    if args.command is None:
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    try:
        _check_paths(args)
        code, out = args.func(args)
    except UsageError as exc:
        sys.stderr.write(f"orthant-stats: {exc}\n")
        return EXIT_USAGE
    except (FlagViolation, AxisOutOfRange, InvalidPoint, InvalidMeasure) as exc:
        stdout.write(dumps({"valid": False, "error": f"{type(exc).__name__}: {exc}"}))
        return EXIT_FAILED
    except NonConvergence as exc:
        report = {"error": str(exc)}
        if exc.certificate is not None:
            report["certificate"] = exc.certificate.as_dict()
        stdout.write(dumps(report))
        return EXIT_ERROR
    except (OrthantError, ValueError) as exc:
        stdout.write(dumps({"error": f"{type(exc).__name__}: {exc}"}))
        return EXIT_ERROR
    stdout.write(dumps(out))
    return code


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
