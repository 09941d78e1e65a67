"""Command-line driver: ``reachavoid {solve,validate,levelset,epsladder,audit,rerun}``.

Every command writes ``run_manifest.json`` into its output directory listing
the resolved parameters, the exact argument vector needed to repeat the run
and the SHA-256 of every file written. Errors go to stderr as one JSON object
and map to exit codes: 2 I/O, 3 invalid parameters, 4 corrupt artifacts,
5 acceptance-band (or check) violation.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .grid import GridMismatchError
from .hjb import CorruptArtifactError, eps_ladder, load_value_field, save_value_field, solve
from .mc import estimate, functional_equivalence_audit, select_probes
from .payoff import Mode, PayoffError, build_payoff
from .reachset import extract, nestedness_check, save_reachset
from .scenario import ScenarioError, config_hash, scenario_from_config, validate

EXIT_OK, EXIT_IO, EXIT_PARAM, EXIT_CORRUPT, EXIT_BAND = 0, 2, 3, 4, 5
BAND_ABOVE, BAND_BELOW = 0.05, 0.10


class CliError(Exception):
    def __init__(self, code: int, kind: str, message: str):
        super().__init__(message)
        self.code, self.kind, self.message = code, kind, message


# ---------------------------------------------------------------- helpers

def _threads(args) -> int:
    if getattr(args, "threads", None):
        return int(args.threads)
    return int(os.environ.get("RA_THREADS", "1") or 1)


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _load_config(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise CliError(EXIT_IO, "io", f"scenario not found: {path}")
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise CliError(EXIT_PARAM, "invalid-parameters", f"scenario file is not valid JSON: {exc}") from None


def _scenario(config: dict):
    try:
        sc = scenario_from_config(config)
    except (ScenarioError, TypeError, ValueError) as exc:
        raise CliError(EXIT_PARAM, "invalid-parameters", str(exc)) from None
    return sc


def _resolve_eps(args, config, grid) -> float:
    if args.eps is not None:
        return float(args.eps)
    cells = args.eps_cells if args.eps_cells is not None else config.get("eps_cells", 3)
    return float(cells) * grid.cell_diagonal


def _write_json(path: Path, obj) -> Path:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def _finish(out_dir: Path, subcommand: str, argv: list, params: dict, files: list, start: float) -> dict:
    rel = sorted({str(Path(f).resolve().relative_to(out_dir.resolve())) for f in files})
    manifest = {
        "tool": "reachavoid",
        "tool_version": __version__,
        "subcommand": subcommand,
        "argv": argv,
        "parameters": params,
        "wall_clock_s": time.perf_counter() - start,
        "outputs": {f: _sha256(out_dir / f) for f in rel},
    }
    _write_json(out_dir / "run_manifest.json", manifest)
    return manifest


def _load_value_dir(value_dir):
    value_dir = Path(value_dir)
    if not value_dir.is_dir():
        raise CliError(EXIT_IO, "io", f"value dir not found: {value_dir}")
    try:
        config = json.loads((value_dir / "scenario.json").read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise CliError(EXIT_CORRUPT, "corrupt-artifact", f"cannot read scenario copy: {exc}") from None
    sc = _scenario(config)
    try:
        vf, pf, manifest = load_value_field(value_dir, sc)
    except (CorruptArtifactError, PayoffError, GridMismatchError) as exc:
        raise CliError(EXIT_CORRUPT, "corrupt-artifact", str(exc)) from None
    if manifest.get("scenario_hash") != config_hash(config):
        raise CliError(EXIT_CORRUPT, "corrupt-artifact", "scenario hash does not match the value field")
    return sc, config, vf, pf, manifest


def _parse_times(text: str, T: float) -> list:
    out = []
    for tok in text.split(","):
        tok = tok.strip()
        if not tok:
            continue
        try:
            out.append(float(tok[:-1] or 1.0) * T if tok.endswith("T") else float(tok))
        except ValueError:
            raise CliError(EXIT_PARAM, "invalid-parameters", f"bad time {tok!r}") from None
    if not out:
        raise CliError(EXIT_PARAM, "invalid-parameters", "no times given")
    return out


def _parse_probes(text: str) -> list:
    pts = []
    for tok in text.split(";"):
        if tok.strip():
            try:
                x, y = (float(v) for v in tok.split(","))
            except ValueError:
                raise CliError(EXIT_PARAM, "invalid-parameters", f"bad probe {tok!r}; use 'x,y;x,y'") from None
            pts.append((x, y))
    return pts


# ---------------------------------------------------------------- commands

def cmd_solve(args, argv) -> int:
    start = time.perf_counter()
    config = _load_config(args.scenario)
    sc = _scenario(config)
    report = validate(sc, n_samples=args.validate_samples, seed=0)
    if not report.ok:
        raise CliError(EXIT_PARAM, "invalid-parameters", "; ".join(report.failures))
    eps = _resolve_eps(args, config, sc.grid)
    try:
        mode = Mode.parse(args.mode)
        payoff = build_payoff(sc.target_A, sc.avoid_B, eps, mode)
        vf, pf = solve(sc, payoff, safety=args.safety)
    except (PayoffError, ValueError) as exc:
        raise CliError(EXIT_PARAM, "invalid-parameters", str(exc)) from None
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = save_value_field(out, vf, pf, fmt=args.format,
                             extra={"scenario_hash": config_hash(config), "safety": args.safety,
                                    "validation": report.to_dict()})
    files.append(_write_json(out / "scenario.json", config))
    params = {"eps": eps, "mode": mode.value, "safety": args.safety, "dt": vf.dt, "K": vf.K,
              "cfl_used": vf.cfl_used, "format": args.format, "threads": _threads(args),
              "scenario_hash": config_hash(config)}
    man = _finish(out, "solve", argv, params, files, start)
    print(json.dumps({"ok": True, "out_dir": str(out), "K": vf.K, "dt": vf.dt, "eps": eps,
                      "wall_clock_s": man["wall_clock_s"]}))
    return EXIT_OK


def cmd_validate(args, argv) -> int:
    start = time.perf_counter()
    sc, config, vf, pf, manifest = _load_value_dir(args.value_dir)
    dt_mc = args.dt_mc if args.dt_mc is not None else vf.dt / 4.0
    if not dt_mc > 0 or args.n_paths < 100:
        raise CliError(EXIT_PARAM, "invalid-parameters", "need dt_mc > 0 and n_paths >= 100")
    k0 = vf.slice_index(args.t0)
    t0 = k0 * vf.dt
    v0 = vf.slices[k0]
    if args.probes:
        nodes = [tuple(int(v) for v in sc.grid.nearest(x, y)) for x, y in _parse_probes(args.probes)]
    else:
        try:
            nodes = select_probes(v0, sc.target_A, n=args.n_probes)
        except ValueError as exc:
            raise CliError(EXIT_PARAM, "invalid-parameters", str(exc)) from None
    mode = vf.payoff.mode
    rows, starts = [], []
    for n, (i, j) in enumerate(nodes):
        x, y = (float(c) for c in sc.grid.node(i, j))
        starts.append((t0, (x, y)))
        est = estimate(sc, vf.payoff, pf, (t0, (x, y)), mode, args.n_paths, dt_mc, args.seed,
                       path_offset=n * args.n_paths, threads=_threads(args))
        v_pde = float(v0[i, j])
        v_mc = est.payoff_mean
        ok = (v_mc <= v_pde + BAND_ABOVE) and (v_mc >= v_pde - BAND_BELOW)
        rows.append({"x": x, "y": y, "i": i, "j": j, "t": t0, "V_pde": v_pde, "V_mc": v_mc,
                     "F1_mean": est.mean, "half_width_95": est.half_width_95, "abs_diff": abs(v_mc - v_pde),
                     "in_band": bool(ok)})
    audit = functional_equivalence_audit(sc, vf.payoff, pf, starts, args.audit_paths, dt_mc,
                                         seed=args.seed + 1, threads=_threads(args))
    out = Path(args.out_dir) if args.out_dir else Path(args.value_dir) / "validation"
    out.mkdir(parents=True, exist_ok=True)
    files = [_write_json(out / "validation.json", {"probes": rows, "audit": audit.to_dict(),
                                                    "band": {"above": BAND_ABOVE, "below": BAND_BELOW},
                                                    "dt_mc": dt_mc, "n_paths": args.n_paths, "seed": args.seed})]
    table = out / "validation.csv"
    keys = ["x", "y", "t", "V_pde", "V_mc", "F1_mean", "half_width_95", "abs_diff", "in_band"]
    table.write_text(",".join(keys) + "\n" + "".join(
        ",".join(repr(r[k]) if isinstance(r[k], float) else str(r[k]) for k in keys) + "\n" for r in rows),
        encoding="utf-8")
    files.append(table)
    params = {"n_paths": args.n_paths, "dt_mc": dt_mc, "seed": args.seed, "audit_paths": args.audit_paths,
              "t0": t0, "probes": [[r["x"], r["y"]] for r in rows], "threads": _threads(args)}
    _finish(out, "validate", argv, params, files, start)
    for r in rows:
        print(f"V_pde={r['V_pde']:.4f} V_mc={r['V_mc']:.4f} CI=±{r['half_width_95']:.4f} "
              f"|diff|={r['abs_diff']:.4f} at ({r['x']:.3f}, {r['y']:.3f}) {'ok' if r['in_band'] else 'OUT OF BAND'}")
    print(f"audit: {len(audit.violations)} violations over {audit.n_paths} paths")
    return EXIT_OK if all(r["in_band"] for r in rows) and audit.ok else EXIT_BAND


def cmd_levelset(args, argv) -> int:
    start = time.perf_counter()
    if not (0.0 <= args.p < 1.0):
        raise CliError(EXIT_PARAM, "invalid-parameters", f"p must satisfy 0 <= p < 1, got {args.p}")
    sc, config, vf, pf, manifest = _load_value_dir(args.value_dir)
    times = _parse_times(args.times, vf.T)
    if any(not (0 <= t <= vf.T * (1 + 1e-12)) for t in times):
        raise CliError(EXIT_PARAM, "invalid-parameters", f"times must lie in [0, {vf.T}]")
    out = Path(args.out_dir) if args.out_dir else Path(args.value_dir) / "levelsets"
    out.mkdir(parents=True, exist_ok=True)
    files = []
    for t in times:
        rs = extract(vf, t, args.p)
        files += save_reachset(rs, out / f"reach_p{args.p:g}_k{rs.slice_index:05d}")
    try:
        rep = nestedness_check(vf, args.p, sorted(set(times)))
    except ValueError as exc:
        raise CliError(EXIT_PARAM, "invalid-parameters", str(exc)) from None
    files.append(_write_json(out / "nestedness.json", rep.to_dict()))
    _finish(out, "levelset", argv, {"p": args.p, "times": times}, files, start)
    print(json.dumps({"nested": rep.ok, "sizes": rep.sizes, "n_violations": len(rep.violations)}))
    return EXIT_OK if rep.ok else EXIT_BAND


def cmd_epsladder(args, argv) -> int:
    start = time.perf_counter()
    config = _load_config(args.scenario)
    sc = _scenario(config)
    try:
        vals = [float(v) for v in args.eps_list.split(",") if v.strip()]
    except ValueError:
        raise CliError(EXIT_PARAM, "invalid-parameters", "eps list must be comma-separated numbers") from None
    if not vals or any(b >= a for a, b in zip(vals, vals[1:])):
        raise CliError(EXIT_PARAM, "invalid-parameters", "eps list must be non-empty and strictly decreasing")
    eps = [v * sc.grid.cell_diagonal for v in vals] if args.units == "cells" else vals
    try:
        rep = eps_ladder(sc, sc.target_A, sc.avoid_B, eps, Mode.parse(args.mode), args.safety)
    except (PayoffError, ValueError) as exc:
        raise CliError(EXIT_PARAM, "invalid-parameters", str(exc)) from None
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = [_write_json(out / "eps_ladder.json", rep.to_dict())]
    _finish(out, "epsladder", argv, {"eps": eps, "mode": args.mode, "safety": args.safety,
                                      "scenario_hash": config_hash(config)}, files, start)
    print(json.dumps(rep.to_dict()))
    return EXIT_OK if rep.ok else EXIT_BAND


def cmd_audit(args, argv) -> int:
    start = time.perf_counter()
    sc, config, vf, pf, manifest = _load_value_dir(args.value_dir)
    dt_mc = args.dt_mc if args.dt_mc is not None else vf.dt / 4.0
    if args.n_starts < 1 or args.n_paths < 1:
        raise CliError(EXIT_PARAM, "invalid-parameters", "need n_starts >= 1 and n_paths >= 1")
    free = ~vf.payoff.stop_region.mask & ~sc.grid.edge_mask()
    cand = np.argwhere(free)
    rng = np.random.default_rng(args.seed)
    pick = cand[rng.choice(cand.shape[0], size=args.n_starts, replace=False)]
    starts = [(0.0, tuple(float(c) for c in sc.grid.node(int(i), int(j)))) for i, j in pick]
    rep = functional_equivalence_audit(sc, vf.payoff, pf, starts, args.n_paths, dt_mc, args.seed,
                                       threads=_threads(args))
    out = Path(args.out_dir) if args.out_dir else Path(args.value_dir) / "audit"
    out.mkdir(parents=True, exist_ok=True)
    files = [_write_json(out / "audit.json", dict(rep.to_dict(), starts=[list(s[1]) for s in starts]))]
    _finish(out, "audit", argv, {"n_paths": args.n_paths, "n_starts": args.n_starts, "seed": args.seed,
                                  "dt_mc": dt_mc}, files, start)
    print(json.dumps({"ok": rep.ok, "n_paths": rep.n_paths, "n_violations": len(rep.violations)}))
    return EXIT_OK if rep.ok else EXIT_BAND


def cmd_rerun(args, argv) -> int:
    path = Path(args.manifest)
    try:
        man = json.loads(path.read_text(encoding="utf-8"))
        old = list(man["argv"])
    except FileNotFoundError:
        raise CliError(EXIT_IO, "io", f"manifest not found: {path}") from None
    except (OSError, ValueError, KeyError) as exc:
        raise CliError(EXIT_CORRUPT, "corrupt-artifact", f"bad run manifest: {exc}") from None
    new = _replace_opt(old, "--out-dir", args.out_dir) if args.out_dir else old
    if args.threads:
        new = _replace_opt(new, "--threads", str(args.threads))
    return main(new)


def _replace_opt(argv: list, opt: str, value: str) -> list:
    out = list(argv)
    if opt in out:
        out[out.index(opt) + 1] = value
    else:
        out += [opt, value]
    return out


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="reachavoid", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"reachavoid {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    def threads(p):
        p.add_argument("--threads", type=int, default=None, help="worker cap (default: RA_THREADS or 1)")

    p = sub.add_parser("solve", help="solve the HJB equation for a scenario file")
    p.add_argument("scenario")
    p.add_argument("--eps", type=float, default=None, help="mollification radius in metres")
    p.add_argument("--eps-cells", type=float, default=None, help="mollification radius in cell diagonals")
    p.add_argument("--safety", type=float, default=1.0)
    p.add_argument("--mode", default="within-horizon", choices=["within-horizon", "terminal-time", "within", "terminal"])
    p.add_argument("--format", default="csv", choices=["csv", "binary"])
    p.add_argument("--validate-samples", type=int, default=1000)
    p.add_argument("--out-dir", required=True)
    threads(p)

    p = sub.add_parser("validate", help="Monte Carlo cross-check of a solved value field")
    p.add_argument("value_dir")
    p.add_argument("--n-paths", type=int, default=10_000)
    p.add_argument("--dt-mc", type=float, default=None, help="default: solver dt / 4")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--probes", default=None, help="'x,y;x,y;...' (default: automatic selection)")
    p.add_argument("--n-probes", type=int, default=5)
    p.add_argument("--t0", type=float, default=0.0)
    p.add_argument("--audit-paths", type=int, default=500, help="audit paths per probe")
    p.add_argument("--out-dir", default=None)
    threads(p)

    p = sub.add_parser("levelset", help="extract reach sets {V > p}")
    p.add_argument("value_dir")
    p.add_argument("--p", type=float, default=0.9)
    p.add_argument("--times", default="0", help="comma list; 'T' and '0.5T' allowed")
    p.add_argument("--out-dir", default=None)

    p = sub.add_parser("epsladder", help="solve for a decreasing list of eps and compare")
    p.add_argument("scenario")
    p.add_argument("--eps-list", default="4,3,2")
    p.add_argument("--units", default="cells", choices=["cells", "m"])
    p.add_argument("--mode", default="within-horizon")
    p.add_argument("--safety", type=float, default=1.0)
    p.add_argument("--out-dir", required=True)

    p = sub.add_parser("audit", help="pathwise functional equivalence audit")
    p.add_argument("value_dir")
    p.add_argument("--n-paths", type=int, default=500, help="paths per start")
    p.add_argument("--n-starts", type=int, default=20)
    p.add_argument("--dt-mc", type=float, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", default=None)
    threads(p)

    p = sub.add_parser("rerun", help="repeat a run from its run_manifest.json")
    p.add_argument("manifest")
    p.add_argument("--out-dir", default=None)
    p.add_argument("--threads", type=int, default=None)
    return ap


COMMANDS = {"solve": cmd_solve, "validate": cmd_validate, "levelset": cmd_levelset,
            "epsladder": cmd_epsladder, "audit": cmd_audit, "rerun": cmd_rerun}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return EXIT_PARAM if exc.code not in (0, None) else EXIT_OK
    try:
        return COMMANDS[args.command](args, argv)
    except CliError as exc:
        print(json.dumps({"error": exc.kind, "message": exc.message, "exit_code": exc.code}), file=sys.stderr)
        return exc.code
    except OSError as exc:
        print(json.dumps({"error": "io", "message": str(exc), "exit_code": EXIT_IO}), file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
