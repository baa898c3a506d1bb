"""Command-line entry point.

Every subcommand reads a JSON config (``--config``), writes one artifact
(``--out``, default stdout) whose header carries the SHA-256 of the
canonicalised config, and exits with 0 on success, 1 when a certification
or verification fails (including violated speed hypotheses and captured
trajectories) and 2 when the config does not match its schema.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import sys
from concurrent.futures import ThreadPoolExecutor

import jsonschema
import numpy as np

from . import __version__
from . import bounds as B
from . import potential as P
from . import scattering as S
from . import xray as X
from .dynamics import ConvergenceError, IntegrationError, PicardConfig, integrate_oracle

EXIT_OK, EXIT_FAIL, EXIT_SCHEMA = 0, 1, 2
CHUNK = 4096

_num = {"type": "number"}
_vec = {"type": "array", "items": _num, "minItems": 2}
_POTENTIAL = {
    "type": "object",
    "required": ["variant"],
    "properties": {
        "variant": {"enum": ["isotropic", "anisotropic", "bumps", "free"]},
        "parameters": {"type": "object"},
        "alpha": _num, "beta0": _num, "beta1": _num, "beta2": _num,
        "c": {"type": "number", "exclusiveMinimum": 0},
        "d": {"type": "integer", "minimum": 2},
    },
    "additionalProperties": False,
}
_PICARD = {
    "type": "object",
    "properties": {"r": _num, "tol": _num, "max_iter": {"type": "integer"},
                   "order": {"type": "integer"}, "n_core": {"type": "integer"}},
    "additionalProperties": False,
}
SCHEMAS = {
    "potential-check": {
        "type": "object", "required": ["potential"],
        "properties": {"potential": _POTENTIAL,
                       "certify": {"type": "object",
                                   "properties": {"n_radii": {"type": "integer", "minimum": 10},
                                                  "max_radius": {"type": "number", "minimum": 1000},
                                                  "n_directions": {"type": "integer", "minimum": 4},
                                                  "tol": _num},
                                   "additionalProperties": False}},
        "additionalProperties": False,
    },
    "trajectory": {
        "type": "object", "required": ["potential", "v_minus", "x_minus"],
        "properties": {"potential": _POTENTIAL, "v_minus": _vec, "x_minus": _vec, "tol": _num,
                       "horizon": _num, "samples": {"type": "integer", "minimum": 2},
                       "window": _num},
        "additionalProperties": False,
    },
    "scatter": {
        "type": "object", "required": ["potential", "speeds"],
        "properties": {"potential": _POTENTIAL,
                       "speeds": {"type": "array", "items": _num, "minItems": 1},
                       "n_angles": {"type": "integer", "minimum": 1},
                       "offsets": {"type": "array", "items": _num, "minItems": 1},
                       "lines": {"type": "array", "items": {
                           "type": "object", "required": ["theta", "x"],
                           "properties": {"theta": _vec, "x": _vec},
                           "additionalProperties": False}},
                       "method": {"enum": ["oracle", "functionals"]},
                       "picard": _PICARD, "tol": _num},
        "additionalProperties": False,
    },
    "bounds": {
        "type": "object", "required": ["r", "s"],
        "properties": {"potential": _POTENTIAL, "c": _num, "d": {"type": "integer"},
                       "alpha": _num, "beta0": _num, "beta1": _num, "beta2": _num,
                       "r": _num, "s": _num, "x_norm": _num, "T": _num},
        "additionalProperties": False,
    },
    "verify-t31": {
        "type": "object", "required": ["potential", "v_minus", "x_minus"],
        "properties": {"potential": _POTENTIAL, "v_minus": _vec, "x_minus": _vec,
                       "picard": _PICARD, "tol": _num},
        "additionalProperties": False,
    },
    "verify-t32": {
        "type": "object", "required": ["potential", "theta", "x", "speeds"],
        "properties": {"potential": _POTENTIAL, "theta": _vec, "x": _vec,
                       "speeds": {"type": "array", "items": _num, "minItems": 2},
                       "check": {"type": "boolean"}},
        "additionalProperties": False,
    },
    "reconstruct": {
        "type": "object", "required": ["potential"],
        "properties": {"potential": _POTENTIAL,
                       "source": {"enum": ["oracle", "xray"]},
                       "reconstruction": {"type": "object", "properties": {
                           "n_angles": {"type": "integer", "minimum": 4},
                           "n_offsets": {"type": "integer", "minimum": 8},
                           "R": _num, "max_speed": _num,
                           "n_speeds": {"type": "integer", "minimum": 3},
                           "n_pixels": {"type": "integer", "minimum": 2},
                           "extent": _num, "window": {"enum": ["hann", "ramp"]}, "tol": _num},
                           "additionalProperties": False},
                       "sinogram_out": {"type": "string"}},
        "additionalProperties": False,
    },
}


class SchemaError(ValueError):
    pass


class Failure(RuntimeError):
    """Verification failed; the payload is still written."""


def config_hash(command: str, cfg: dict, tol: float | None) -> str:
    canon = json.dumps({"command": command, "config": cfg, "tol": tol}, sort_keys=True,
                       separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()


def _load(command: str, path: str) -> dict:
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise SchemaError(f"cannot read config {path}: {exc}") from exc
    try:
        jsonschema.validate(cfg, SCHEMAS[command])
    except jsonschema.ValidationError as exc:
        loc = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise SchemaError(f"config error at {loc}: {exc.message}") from exc
    return cfg


def _model(cfg: dict) -> P.PotentialModel:
    try:
        return P.from_config(cfg["potential"])
    except (KeyError, ValueError, TypeError) as exc:
        raise SchemaError(f"invalid potential: {exc}") from exc


def _header(command: str, digest: str) -> list[str]:
    return [f"config_sha256={digest}", f"command={command}", f"relscatter={__version__}"]


def _json_text(command: str, digest: str, payload: dict) -> str:
    doc = {"config_sha256": digest, "command": command, "relscatter": __version__, **payload}
    return json.dumps(_plain(doc), sort_keys=True, indent=2) + "\n"


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if np.isfinite(v) else repr(v)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def _write(out: str | None, text: str) -> None:
    if out is None or out == "-":
        sys.stdout.write(text)
    else:
        with open(out, "w", newline="") as fh:
            fh.write(text)


def _csv_text(header: list[str], columns: list[str], rows) -> str:
    buf = io.StringIO()
    for line in header:
        buf.write(f"# {line}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([repr(float(v)) if not isinstance(v, str) else v for v in r])
    return buf.getvalue()


# --- commands -------------------------------------------------------------------

def cmd_potential_check(cfg, args, digest):
    model = _model(cfg)
    opts = dict(cfg.get("certify", {}))
    tol = args.tol if args.tol is not None else opts.pop("tol", 1e-9)
    opts.pop("tol", None)
    rep = P.certify_decay(model, tol=tol, **opts)
    payload = {"report": rep.to_dict(), "model": P.model_config(model)}
    _write(args.out, _json_text("potential-check", digest, payload))
    if not rep.certified:
        raise Failure("decay certification failed: " + "; ".join(rep.failures()))


def cmd_trajectory(cfg, args, digest):
    model = _model(cfg)
    tol = args.tol if args.tol is not None else cfg.get("tol", 1e-10)
    v = np.asarray(cfg["v_minus"], float)
    x = np.asarray(cfg["x_minus"], float)
    horizon = float(cfg.get("horizon", 1e5))
    try:
        datum = S.scattering_via_oracle(model, v, x, tol=tol, horizon=horizon)
    except S.CaptureError as exc:
        _write(args.out, _json_text("trajectory", digest, {"capture": exc.report}))
        raise Failure(str(exc)) from exc
    s = float(np.linalg.norm(v))
    L = 1.0 + float(np.linalg.norm(x)) + model.core_radius
    window = float(cfg.get("window", 20.0)) * L / s
    n = int(cfg.get("samples", 201))
    samples = np.linspace(-window, window, n)
    traj = integrate_oracle(model, v, x, tol=tol, t_eval=samples)
    keep = np.isin(traj.t, samples)
    traj.t, traj.x, traj.p, traj.E = traj.t[keep], traj.x[keep], traj.p[keep], traj.E[keep]
    d = model.d
    header = _header("trajectory", digest) + [
        f"energy_drift={datum.diagnostics['energy_drift']!r}",
        f"speed_change={datum.speed_change()!r}",
        f"a_sc={','.join(repr(float(a)) for a in datum.a_sc)}",
        f"b_sc={','.join(repr(float(b)) for b in datum.b_sc)}"]
    drift = np.abs(traj.E - traj.E[0]) / abs(traj.E[0])
    cols = (["t"] + [f"x{i + 1}" for i in range(d)] + [f"p{i + 1}" for i in range(d)]
            + ["E", "energy_drift"])
    rows = ([traj.t[k], *traj.x[k], *traj.p[k], traj.E[k], drift[k]] for k in range(traj.t.size))
    _write(args.out, _csv_text(header, cols, rows))


def _scatter_lines(cfg, d):
    if "lines" in cfg:
        th = np.array([ln["theta"] for ln in cfg["lines"]], float)
        x = np.array([ln["x"] for ln in cfg["lines"]], float)
        if th.shape[1] != d or x.shape[1] != d:
            raise SchemaError("line vectors must match the potential dimension")
        return th, x
    if d != 2:
        raise SchemaError("angle/offset grids are only available in the plane; give explicit lines")
    n = int(cfg.get("n_angles", 8))
    offsets = cfg.get("offsets", [0.0, 0.5, 1.0])
    return X.planar_lines(2 * np.pi * np.arange(n) / n, offsets)


def _parallel_batches(fn, items, threads: int):
    if threads <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def cmd_scatter(cfg, args, digest):
    model = _model(cfg)
    th, x = _scatter_lines(cfg, model.d)
    norms = np.linalg.norm(th, axis=1)
    if np.any(np.abs(norms - 1.0) > 1e-12):
        raise SchemaError("line directions must be unit vectors")
    tol = args.tol if args.tol is not None else cfg.get("tol", 1e-10)
    method = cfg.get("method", "oracle")
    rows = []
    d = model.d
    for s in cfg["speeds"]:
        v = s * th
        if method == "oracle":
            chunks = [(lo, min(lo + CHUNK, len(v))) for lo in range(0, len(v), CHUNK)]
            parts = _parallel_batches(
                lambda ab: S.scattering_batch(model, v[ab[0]:ab[1]], x[ab[0]:ab[1]], tol=tol),
                chunks, args.threads)
            a = np.concatenate([p_["a_sc"] for p_ in parts])
            b = np.concatenate([p_["b_sc"] for p_ in parts])
            dv = np.concatenate([p_["speed_change"] for p_ in parts])
        else:
            pc = PicardConfig(**{"tol": tol, **cfg.get("picard", {})})
            out = [S.scattering_via_functionals(model, v[i], x[i], pc)[0] for i in range(len(v))]
            a = np.array([o.a_sc for o in out])
            b = np.array([o.b_sc for o in out])
            dv = np.array([o.speed_change() for o in out])
        for i in range(len(v)):
            rows.append([s, *th[i], *x[i], *a[i], *b[i], dv[i]])
    cols = (["speed"] + [f"theta{i + 1}" for i in range(d)] + [f"x{i + 1}" for i in range(d)]
            + [f"a_sc{i + 1}" for i in range(d)] + [f"b_sc{i + 1}" for i in range(d)]
            + ["speed_residual"])
    _write(args.out, _csv_text(_header("scatter", digest) + [f"method={method}"], cols, rows))


def cmd_bounds(cfg, args, digest):
    if "potential" in cfg:
        model = _model(cfg)
        p = B.inputs_from_model(model, r=cfg["r"], s=cfg["s"], x_norm=cfg.get("x_norm", 0.0),
                                T=cfg.get("T", 0.0))
    else:
        missing = [k for k in ("c", "d", "alpha", "beta0", "beta1", "beta2") if k not in cfg]
        if missing:
            raise SchemaError(f"bounds config needs either a potential or {missing}")
        p = B.BoundInputs(c=cfg["c"], d=cfg["d"], alpha=cfg["alpha"], beta0=cfg["beta0"],
                          beta1=cfg["beta1"], beta2=cfg["beta2"], r=cfg["r"], s=cfg["s"],
                          x_norm=cfg.get("x_norm", 0.0), T=cfg.get("T", 0.0))
    bs = B.eval_bounds(p)
    payload = bs.to_dict()
    payload["rhs"] = B.check_theorem11_rhs(p, check=False)
    _write(args.out, _json_text("bounds", digest, payload))


def cmd_verify_t31(cfg, args, digest):
    model = _model(cfg)
    pc = PicardConfig(**cfg.get("picard", {}))
    if args.tol is not None:
        pc = PicardConfig(**{**pc.__dict__, "tol": args.tol})
    rep = S.verify_theorem31(model, cfg["v_minus"], cfg["x_minus"], pc)
    _write(args.out, _json_text("verify-t31", digest, rep.to_dict()))
    if not rep.ok:
        bad = [k for k, m in rep.margins.items() if m.margin < 0]
        raise Failure(f"negative margins: {bad}")


def cmd_verify_t32(cfg, args, digest):
    model = _model(cfg)
    rep = S.verify_theorem32(model, cfg["theta"], cfg["x"], cfg["speeds"],
                             check=cfg.get("check", True))
    _write(args.out, _json_text("verify-t32", digest, rep.to_dict()))


def cmd_reconstruct(cfg, args, digest):
    model = _model(cfg)
    if model.d != 2:
        raise SchemaError("reconstruction is implemented in the plane (d = 2)")
    opts = dict(cfg.get("reconstruction", {}))
    if args.tol is not None:
        opts["tol"] = args.tol
    spec = X.ReconstructionSpec(**opts)
    source_kind = cfg.get("source", "oracle")

    def source(v, x):
        if source_kind == "xray":
            # exact line integrals, rescaled back to velocity data at this speed
            s = np.linalg.norm(v, axis=1)
            eps = np.sqrt(1.0 - (s / model.c) ** 2)
            return X.xray_of_force(model, v / s[:, None], x).value * (eps / s)[:, None]
        chunks = [(lo, min(lo + CHUNK, len(v))) for lo in range(0, len(v), CHUNK)]
        parts = _parallel_batches(
            lambda ab: S.scattering_batch(model, v[ab[0]:ab[1]], x[ab[0]:ab[1]], tol=spec.tol)["a_sc"],
            chunks, args.threads)
        return np.concatenate(parts)

    res = X.reconstruct_force(source, spec, model.c, truth=model.F)
    header = _header("reconstruct", digest) + [
        f"speeds={','.join(repr(float(s)) for s in res.speeds)}",
        f"rel_l2={res.rel_l2!r}"]
    if "sinogram_out" in cfg:
        res.sinogram.to_csv(cfg["sinogram_out"], header=_header("reconstruct", digest))
    _write(args.out, _csv_text(header, ["x", "y", "F1", "F2"], res.rows()))


COMMANDS = {
    "potential-check": cmd_potential_check,
    "trajectory": cmd_trajectory,
    "scatter": cmd_scatter,
    "bounds": cmd_bounds,
    "verify-t31": cmd_verify_t31,
    "verify-t32": cmd_verify_t32,
    "reconstruct": cmd_reconstruct,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="JSON configuration file")
    common.add_argument("--out", default=None, help="output file (default: stdout)")
    common.add_argument("--threads", type=int, default=1, help="worker threads for batched work")
    common.add_argument("--tol", type=float, default=None, help="override the accuracy target")
    parser = argparse.ArgumentParser(prog="relscatter",
                                     description="Relativistic small-angle scattering toolkit")
    parser.add_argument("--version", action="version", version=f"relscatter {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sub.add_parser(name, parents=[common])
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.threads < 1:
        parser.error("--threads must be at least 1")
    try:
        cfg = _load(args.command, args.config)
        digest = config_hash(args.command, cfg, args.tol)
        COMMANDS[args.command](cfg, args, digest)
    except SchemaError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    except B.HypothesisError as exc:
        print(f"precondition violated {exc}", file=sys.stderr)
        return EXIT_FAIL
    except Failure as exc:
        print(f"failed: {exc}", file=sys.stderr)
        return EXIT_FAIL
    except (ConvergenceError, IntegrationError) as exc:
        print(f"failed: {exc}", file=sys.stderr)
        return EXIT_FAIL
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
