"""Command-line experiment driver.

Each subcommand reads one TOML config (defaults fill missing keys), runs
one experiment and writes JSON and CSV files into ``--out``.  Outputs
carry the resolved config hash and seed, and rerunning with the same config
and seed reproduces them byte for byte for any ``--threads`` value.

Exit codes: 0 success, 1 configuration error, 2 validation failure,
3 runtime error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import config as C

EXIT_OK, EXIT_CONFIG, EXIT_VALIDATION, EXIT_RUNTIME = 0, 1, 2, 3
COMMANDS = ("validate", "orbit", "returns", "recurrence", "measures", "basin", "geometry", "ball")


class ValidationFailed(RuntimeError):
    pass


class Output:
    """Writes provenance-stamped JSON and CSV files into one directory."""

    def __init__(self, directory: Path, cfg: dict, seed: int, command: str):
        self.dir = Path(directory)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.hash = C.config_hash(cfg)
        self.seed = seed
        self.cfg = cfg
        self.command = command
        self.formats = set(cfg["output"]["formats"])

    def json(self, name: str, payload: dict) -> None:
        if "json" not in self.formats:
            return
        doc = {"command": self.command, "config_hash": self.hash, "seed": self.seed,
               "config": self.cfg, "result": _plain(payload)}
        (self.dir / name).write_text(json.dumps(doc, sort_keys=True, indent=2) + "\n")

    def csv(self, name: str, header, rows) -> None:
        if "csv" not in self.formats:
            return
        buf = io.StringIO()
        buf.write(f"# config_hash={self.hash} seed={self.seed}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_cell(v) for v in r])
        (self.dir / name).write_text(buf.getvalue())

    def text(self, name: str, body: str) -> None:
        (self.dir / name).write_text(f"# config_hash={self.hash} seed={self.seed}\n" + body)


def _cell(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, np.integer):
        return int(v)
    return v


def _plain(o):
    if isinstance(o, dict):
        return {str(k): _plain(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_plain(v) for v in o]
    if isinstance(o, np.ndarray):
        return _plain(o.tolist())
    if isinstance(o, (np.floating, float)):
        f = float(o)
        return f if np.isfinite(f) else str(f)
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, np.bool_):
        return bool(o)
    return o


# --- commands ---------------------------------------------------------------

def _require_valid(model, kernel):
    from .model import validate_params
    rep = validate_params(model)
    problems = [str(f.name) + ": " + f.detail for f in rep.failures]
    problems += ["noise_support: " + p for p in kernel.validate_against(model.t_star)]
    if problems:
        raise ValidationFailed("; ".join(problems))


def cmd_validate(cfg, model, kernel, seed, out: Output) -> int:
    from .model import validate_params
    rep = validate_params(model)
    noise = kernel.validate_against(model.t_star)
    d = rep.to_dict()
    d["checks"].append({"name": "noise_support_in_window", "passed": not noise,
                        "detail": "; ".join(noise) or "0 < t0 - epsilon and t0 + epsilon < t_star"})
    d["ok"] = rep.ok and not noise
    out.json("validation.json", d)
    for c in d["checks"]:
        print(f"{'PASS' if c['passed'] else 'FAIL'}  {c['name']}: {c['detail']}")
    return EXIT_OK if d["ok"] else EXIT_VALIDATION


def cmd_orbit(cfg, model, kernel, seed, out: Output) -> int:
    from .orbits import birkhoff_average, dist_q, observable_family, random_orbit, return_times
    run = cfg["run"]
    rec = random_orbit(model, kernel, run["x0"], run["steps"], seed)
    ts = rec.sequence.values
    out.csv("orbit.csv", ["step", "z", "x1", "x2", "label", "t_used"],
            [(k, *p, tag, ts[k] if k < len(ts) else "") for k, (p, tag) in
             enumerate(zip(rec.points, rec.label_names()))])
    avgs = {o.name: birkhoff_average(rec, o)._asdict() for o in observable_family(model) + [dist_q()]}
    out.json("orbit.json", {"n_steps": rec.n_steps, "escaped_at": rec.escaped_at,
                            "birkhoff_averages": avgs, "returns": return_times(rec).to_dict()})
    return EXIT_OK


def cmd_returns(cfg, model, kernel, seed, out: Output) -> int:
    from .orbits import bookkeeping_violations, random_orbit, return_times
    run = cfg["run"]
    rec = random_orbit(model, kernel, run["x0"], run["steps"], seed)
    rt = return_times(rec)
    out.csv("returns.csv", ["k", "r", "R"], [(k + 1, r, R) for k, (r, R) in enumerate(zip(rt.times, rt.cumulative))])
    d = rt.to_dict()
    d["bookkeeping_violations"] = bookkeeping_violations(rec.labels)
    d["escaped_at"] = rec.escaped_at
    out.json("returns.json", d)
    return EXIT_OK


def cmd_recurrence(cfg, model, kernel, seed, out: Output) -> int:
    from .orbits import classify_recurrence, scan_returns
    run = cfg["run"]
    rep = classify_recurrence(model, kernel, run["x0"], run["n_sequences"], run["horizon"], run["burn_in"], seed)
    scan = scan_returns(model, kernel, run["x0"], run["n_sequences"], run["horizon"], run["burn_in"], seed)
    out.csv("recurrence.csv", ["sequence", "recurrent", "n_returns", "max_gap", "last_return", "escaped_at"],
            [(j, int(r), n, g, l, e) for j, (r, n, g, l, e) in
             enumerate(zip(scan.recurrent, scan.n_returns, scan.max_gap, scan.last_return, scan.escaped_at))])
    out.json("recurrence.json", rep.to_dict())
    return EXIT_OK


def cmd_measures(cfg, model, kernel, seed, out: Output) -> int:
    from . import measures as M
    run = cfg["run"]
    results, hists = [], []
    try:
        for res in run["resolutions"]:
            grid = M.Grid3.covering(model, res)
            P = M.build_ulam(model, kernel, grid, run["samples_per_cell"], seed)
            ms = M.stationary_components(P, q_box=model.regions.Q_box)
            resid = [M.stationarity_residual(c.histogram(grid), model, kernel,
                                             n_quadrature=run["n_quadrature"]).value for c in ms.physical]
            s = M.summary(ms, resid)
            s["row_sum_error"] = P.row_sum_error()
            results.append(s)
            for i, c in enumerate(ms.physical):
                text = M.component_csv(grid, c)
                out.text(f"component_{res}_{i}.csv", text)
            if run["write_operator"]:
                out.text(f"operator_{res}.coo", P.coo_text())
            if ms.physical:
                hists.append(max(ms.physical, key=lambda c: c.density.sum()).histogram(grid))
            del P
    except KeyboardInterrupt:
        out.json("measures.json", {"partial": True, "resolutions": results})
        raise
    payload = {"resolutions": results, "count_l": [r["count_l"] for r in results],
               "count_l_stable": len({r["count_l"] for r in results}) == 1}
    if len(hists) >= 2:
        payload["abs_continuity"] = M.abs_continuity_diagnostic(hists).to_dict()
    out.json("measures.json", payload)
    return EXIT_OK


def cmd_basin(cfg, model, kernel, seed, out: Output) -> int:
    from . import measures as M
    run = cfg["run"]
    grid = M.Grid3.covering(model, run["resolutions"][0])
    P = M.build_ulam(model, kernel, grid, run["samples_per_cell"], seed)
    ms = M.stationary_components(P, q_box=model.regions.Q_box)
    bp = M.basin_partition(model, kernel, run["x0"], ms, run["basin_sequences"], run["basin_horizon"], seed,
                           run["basin_threshold"])
    hist = M.cesaro_measure(model, kernel, run["x0"], run["cesaro_steps"], run["basin_sequences"], grid, seed)
    w = M.mixture_fit(hist, ms)
    d = bp.to_dict()
    d.update({"count_l": ms.count_l, "mixture_weights": w, "mixture_tv": M.mixture_distance(hist, ms, w),
              "cesaro_escaped_mass": hist.escaped_mass})
    out.json("basin.json", d)
    out.csv("basin.csv", ["sequence", "component", "distance"],
            [(j, int(a), float(r)) for j, (a, r) in enumerate(zip(bp.assignments, bp.distances))])
    return EXIT_OK


def cmd_geometry(cfg, model, kernel, seed, out: Output) -> int:
    from . import geometry as G
    run = cfg["run"]
    cone = G.ConeParams(run["cone_c0"], run["cone_b0"])
    rep = G.verify_return_cone(model, kernel, cone, run["cone_samples"], seed)
    curve = G.perturbation_curve(model, run["disk_base"], kernel, run["curve_resolution"])
    disk = G.return_disk(model, run["disk_base"], kernel, run["disk_resolution"], seed, cone)
    out.json("geometry.json", {"cone": rep.to_dict(), "curve": curve.to_dict(), "curve_passes": curve.passes(cone),
                               "disk": disk.to_dict(), "disk_passes": disk.passed})
    n = len(disk.u)
    out.csv("disk.csv", ["u", "s", "z", "x1", "x2"],
            [(disk.u[i], disk.s[j], *disk.points[i, j]) for i in range(n) for j in range(n)])
    return EXIT_OK


def cmd_ball(cfg, model, kernel, seed, out: Output) -> int:
    from . import geometry as G
    from .orbits import endpoints
    run = cfg["run"]
    spacing = run["grid_spacing"] or None
    reports = []
    for i, x in enumerate(run["regular_points"]):
        rep = G.verify_ball(model, kernel, x, run["ball_sequences"], spacing, seed)
        reports.append(dict(point=list(x), **rep.to_dict()))
        pts = endpoints(model, kernel, x, rep.returns[2], run["ball_sequences"], seed)
        out.csv(f"ball_{i}.csv", ["z", "x1", "x2"], pts.tolist())
    out.json("ball.json", {"points": reports})
    return EXIT_OK


HANDLERS = {"validate": cmd_validate, "orbit": cmd_orbit, "returns": cmd_returns, "recurrence": cmd_recurrence,
            "measures": cmd_measures, "basin": cmd_basin, "geometry": cmd_geometry, "ball": cmd_ball}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="randtangency", description=__doc__.split("\n\n")[0])
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="TOML config; missing keys take the shipped defaults")
        sp.add_argument("--seed", type=int, help="unsigned 64-bit seed, overrides noise.seed")
        sp.add_argument("--out", help="output directory, overrides output.directory")
        sp.add_argument("--threads", type=int, default=0, help="worker threads, 0 = automatic")
    return ap


def _set_threads(n: int) -> None:
    import numba
    limit = numba.config.NUMBA_NUM_THREADS
    numba.set_num_threads(max(1, min(n if n > 0 else (os.cpu_count() or 1), limit)))


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = C.load(args.config)
        if args.seed is not None:
            if not 0 <= args.seed < 2 ** 64:
                raise C.ConfigError("--seed must be an unsigned 64-bit integer")
            cfg["noise"]["seed"] = args.seed
        if args.out is not None:
            cfg["output"]["directory"] = args.out
        model = C.model_from(cfg)
        kernel = C.kernel_from(cfg)
    except C.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    seed = int(cfg["noise"].get("seed", 0))
    _set_threads(args.threads)
    # provenance excludes the output directory so reruns elsewhere hash equal
    prov = {k: v for k, v in cfg.items() if k != "output"}
    prov["output"] = {"formats": cfg["output"]["formats"]}
    out = Output(Path(cfg["output"]["directory"]), prov, seed, args.command)
    try:
        if args.command != "validate":
            _require_valid(model, kernel)
        return HANDLERS[args.command](cfg, model, kernel, seed, out)
    except ValidationFailed as exc:
        print(f"validation failed: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except KeyboardInterrupt:
        print("interrupted; partial results written", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:  # any runtime failure maps to one exit code
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
