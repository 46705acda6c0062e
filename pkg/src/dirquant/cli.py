"""Command-line front end: simulate, fit, adjust, contour, check.

Every stage writes under ``--out``. ``fit`` echoes the resolved
configuration into ``spec.json``; later stages read it back so the whole
run directory is described by one file. Failures print a JSON error report
to stderr, write ``error.json`` and exit with a nonzero status.
"""

import argparse
import csv
import hashlib
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import config as config_mod
from . import plotting
from .errors import DirquantError, InvalidArgument, InvalidState
from .ingest import ingest, model_data
from .orchestrator import (FitResult, adjust_all, coefficient_table, plan, prepare, regions_at,
                           run_all, subgradient_reports, summarize)
from .regions import nesting_check, region_to_contour
from .sampler import DrawStore
from .synthetic import GeneratorSpec, generate

log = logging.getLogger("dirquant")


def _fmt(x):
    return repr(float(x))


def _write_csv(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _write_json(path, obj):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _read_json(path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def _require(path, stage):
    if not Path(path).exists():
        raise InvalidState(f"missing artifact {str(path)!r}; run `{stage}` first")


def _digest(path):
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()


def fit_name(d, tau):
    return f"u{d}_tau{tau:g}"


# -- stage helpers ---------------------------------------------------------

def _load_model(cfg):
    spec = config_mod.model_spec(cfg)
    if cfg["data"]["path"] is None:
        raise InvalidArgument("no input data: set data.path or pass --data")
    d = cfg["data"]
    numeric = list(dict.fromkeys(d["responses"] + d["linear"] + [s["variable"] for s in cfg["spline"]]))
    table = ingest(d["path"], numeric=numeric, categorical=list(d["categorical"]))
    data = model_data(table, spec)
    return spec, prepare(spec, data)


def _run_config(out, config_path, overrides):
    """Resolved config for a later stage: spec.json, optionally patched by gp/contour/check sections."""
    spec_path = Path(out) / "spec.json"
    _require(spec_path, "fit")
    cfg = _read_json(spec_path)
    extra = {}
    if config_path is not None:
        extra = config_mod.load(config_path)
        for key in ("gp", "contour", "check"):
            cfg[key] = extra[key]
    for key, section in (overrides or {}).items():
        if key in ("gp", "contour", "check", "run"):
            cfg[key].update(section)
    return config_mod.resolve(cfg)


def _load_fits(out, spec):
    out = Path(out)
    _require(out / "model.json", "fit")
    model = _read_json(out / "model.json")
    report = _read_json(out / "fit_report.json")
    failed = {(f["direction"], f["tau_index"]): f["error"] for f in report["failures"]}
    results = []
    for task in plan(spec):
        key = (task.direction, task.tau_index)
        if key in failed:
            results.append(FitResult(task=task, failed=True, error=failed[key]))
            continue
        path = out / "fits" / (fit_name(task.direction, task.tau) + ".npy")
        _require(path, "fit")
        store = DrawStore.load(path, model["draw_names"], model["n_coef"])
        results.append(FitResult.from_draws(task, store))
    return results, model


def _load_adjusted(out, spec, n_coef):
    path = Path(out) / "adjust" / "coefficients.csv"
    if not path.exists():
        return None
    manifest = Path(out) / "adjust" / "manifest.json"
    if not manifest.exists() or _read_json(manifest)["summary_sha256"] != _digest(Path(out) / "summary.csv"):
        raise InvalidState("adjusted coefficients do not match the current fits; rerun `adjust`")
    coefs = np.empty((spec.directions, len(spec.taus), n_coef))
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    for r in rows:
        coefs[int(r["direction"]), int(r["tau_index"]), int(r["column"])] = float(r["adjusted"])
    return coefs


# -- subcommands -----------------------------------------------------------

def cmd_simulate(cfg, out):
    s = cfg["simulate"]
    gen = GeneratorSpec(kind=s["kind"], n=int(s["n"]), k=int(s["k"]), params=dict(s["params"]),
                        seed=int(s["seed"]))
    Y, X = generate(gen)
    header = [f"y{j + 1}" for j in range(Y.shape[1])] + (["x"] if X.shape[1] else [])
    rows = [[_fmt(v) for v in row] for row in np.hstack([Y, X])]
    _write_csv(out / "data.csv", header, rows)
    _write_json(out / "simulate.json", {"generator": s, "rows": int(gen.n), "columns": header})
    log.info("wrote %d rows to %s", gen.n, out / "data.csv")


def cmd_fit(cfg, out):
    spec, prepared = _load_model(cfg)
    _write_json(out / "spec.json", cfg)
    results = run_all(spec, None, workers=int(cfg["run"]["workers"]), prepared=prepared)
    fits = out / "fits"
    fits.mkdir(exist_ok=True)
    ok = [r for r in results if not r.failed]
    if not ok:
        raise InvalidState("every task failed; see fit_report.json")
    names = ok[0].names
    rows, failures = [], []
    for r in results:
        t = r.task
        if r.failed:
            failures.append({"direction": t.direction, "tau_index": t.tau_index, "tau": t.tau,
                             "error": r.error})
            continue
        base = fit_name(t.direction, t.tau)
        r.draws.to_csv(fits / f"{base}.csv")
        r.draws.save(fits / f"{base}.npy")
        for row in summarize(r):
            rows.append([t.direction, _fmt(t.tau), row["parameter"], _fmt(row["mean"]),
                         _fmt(row["sd"]), _fmt(row["q025"]), _fmt(row["q975"])])
    _write_csv(out / "summary.csv", ["direction", "tau", "parameter", "mean", "sd", "q025", "q975"], rows)

    _, (_, layout, _) = prepared.design(0)
    model = {
        "responses": spec.responses,
        "scales": prepared.scales.tolist(),
        "linear_names": prepared.data.x_names,
        "splines": [s.to_dict() for s in prepared.splines],
        "coef_names": layout.names,
        "draw_names": names,
        "n_coef": layout.n_columns,
        "taus": list(spec.taus),
        "directions": [{"index": d.index, "u": d.u.tolist(), "gamma": d.gamma.tolist()}
                       for d in prepared.directions],
    }
    _write_json(out / "model.json", model)
    _write_json(out / "fit_report.json", {
        "tasks": len(results),
        "failed": len(failures),
        "failures": failures,
        "retained_draws": spec.mcmc.n_retained,
        "v_floor_total": int(sum(r.v_floor_count for r in ok)),
    })
    if failures:
        log.warning("%d of %d tasks failed; regions will refuse to build", len(failures), len(results))


def cmd_adjust(cfg, out):
    spec, prepared = _load_model(cfg)
    results, model = _load_fits(out, spec)
    gp = config_mod.gp_config(cfg)
    adj = adjust_all(prepared, spec, results, gp, cfg["gp"]["mapping"], int(cfg["gp"]["max_check_points"]))
    d_out = out / "adjust"
    d_out.mkdir(exist_ok=True)
    bw_rows, coef_rows = [], []
    for a in adj:
        bw_rows.append([a.direction, int(a.crossed), "" if a.bandwidth is None else _fmt(a.bandwidth),
                        a.raw_crossing_count, int(a.adjusted.monotone)])
        rows = []
        bw = "" if a.bandwidth is None else _fmt(a.bandwidth)
        raw = a.grid.raw
        lv = a.adjusted.at_levels
        idx = [int(np.argmin(np.abs(a.adjusted.p_grid - t))) for t in spec.taus]
        for c in range(raw.shape[0]):
            for l, tau in enumerate(spec.taus):
                rows.append([c, _fmt(tau), _fmt(raw[c, l]), _fmt(lv[c, l]),
                             _fmt(np.sqrt(max(a.adjusted.var[c, idx[l]], 0.0))), bw])
        _write_csv(d_out / f"u{a.direction}.csv", ["point", "tau", "raw", "adjusted", "sd", "bandwidth"], rows)
        raw_coefs = np.array([r.coef for r in results if r.task.direction == a.direction])
        for l, tau in enumerate(spec.taus):
            for j, name in enumerate(model["coef_names"]):
                coef_rows.append([a.direction, l, _fmt(tau), j, name, _fmt(raw_coefs[l, j]), _fmt(a.coef[l, j])])
    _write_csv(d_out / "bandwidths.csv", ["direction", "crossed", "bandwidth", "raw_crossings", "monotone"], bw_rows)
    _write_csv(d_out / "coefficients.csv",
               ["direction", "tau_index", "tau", "column", "parameter", "raw", "adjusted"], coef_rows)

    _write_json(d_out / "manifest.json", {"summary_sha256": _digest(out / "summary.csv"),
                                          "mapping": cfg["gp"]["mapping"]})
    crossed = [a for a in adj if a.crossed]
    plotting.bandwidths([a.direction for a in adj],
                        [np.nan if a.bandwidth is None else a.bandwidth for a in adj],
                        d_out / "bandwidths.svg")
    if crossed:
        worst = max(crossed, key=lambda a: a.raw_crossing_count)
        plotting.crossing_profile(np.array(spec.taus), worst.grid.raw, worst.adjusted.at_levels,
                                  d_out / f"crossing_u{worst.direction}.svg", worst.direction)
    log.info("%d of %d directions needed adjustment", len(crossed), len(adj))


def _coefficients(out, spec, results, model):
    adjusted = _load_adjusted(out, spec, model["n_coef"])
    if adjusted is not None:
        return adjusted, "adjusted"
    log.warning("no adjusted coefficients found; using raw fits")
    return coefficient_table(results, spec), "raw"


def _points(cfg):
    pts = cfg["contour"]["points"] or [{}]
    return [dict(p) for p in pts]


def cmd_contour(cfg, out):
    spec, prepared = _load_model(cfg)
    results, model = _load_fits(out, spec)
    coefs, source = _coefficients(out, spec, results, model)
    if spec.k not in (2, 3):
        raise InvalidArgument(f"regions are only built for 2 or 3 responses, got {spec.k}")
    c_out = out / "contours"
    c_out.mkdir(exist_ok=True)
    payload = {"source": source, "scales": prepared.scales.tolist(), "responses": spec.responses,
               "points": []}
    for i, point in enumerate(_points(cfg)):
        regions = regions_at(prepared, spec, coefs, point)
        contours = [region_to_contour(regions[t], prepared.scales) for t in spec.taus]
        payload["points"].append({"covariate_point": point, "contours": [c.to_dict() for c in contours]})
        if cfg["contour"]["svg"]:
            title = ", ".join(f"{k}={v}" for k, v in point.items()) or None
            if spec.k == 2:
                plotting.contours_2d(contours, c_out / f"point{i}.svg", spec.responses,
                                     prepared.Y * prepared.scales if not point else None, title)
            else:
                plotting.contours_3d(contours, c_out / f"point{i}.svg", spec.responses, title)
    _write_json(c_out / "contours.json", payload)


def cmd_check(cfg, out):
    spec, prepared = _load_model(cfg)
    results, model = _load_fits(out, spec)
    raw = coefficient_table(results, spec)
    coefs, source = _coefficients(out, spec, results, model)
    tol = float(cfg["check"]["subgradient_tolerance"])
    slack = float(cfg["check"]["nesting_slack"])
    k_out = out / "check"
    k_out.mkdir(exist_ok=True)

    sub = subgradient_reports(prepared, spec, raw)
    rows = [[_fmt(r.tau), d, _fmt(f), _fmt(abs(f - r.tau))]
            for r in sub for d, f in enumerate(r.per_direction)]
    _write_csv(k_out / "subgradient.csv", ["tau", "direction", "fraction", "deviation"], rows)
    plotting.subgradient(spec.taus, [r.per_direction for r in sub], k_out / "subgradient.svg")

    nest_rows, nesting = [], []
    if len(spec.taus) >= 2 and spec.k in (2, 3):
        for i, point in enumerate(_points(cfg)):
            rep = nesting_check(regions_at(prepared, spec, coefs, point), slack)
            nesting.append({"point": i, "covariate_point": point, "nested": rep.nested,
                            "violations": len(rep.violations), "max_violation": rep.max_violation})
            nest_rows += [[i, _fmt(v["tau_low"]), _fmt(v["tau_high"]), v["direction"], v["vertex"],
                           _fmt(v["magnitude"])] for v in rep.violations]
    _write_csv(k_out / "nesting.csv", ["point", "tau_low", "tau_high", "direction", "vertex", "magnitude"],
               nest_rows)
    sub_summary = [{"tau": r.tau, "mean_abs_deviation": r.mean_abs_deviation,
                    "passed": r.mean_abs_deviation <= tol} for r in sub]
    passed = all(s["passed"] for s in sub_summary) and all(n["nested"] for n in nesting)
    _write_json(k_out / "report.json", {"passed": passed, "coefficients": source,
                                        "subgradient_tolerance": tol, "nesting_slack": slack,
                                        "subgradient": sub_summary, "nesting": nesting})
    if not passed:
        log.warning("check failed; see %s", k_out / "report.json")


COMMANDS = {"simulate": cmd_simulate, "fit": cmd_fit, "adjust": cmd_adjust,
            "contour": cmd_contour, "check": cmd_check}


def _taus(text):
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid tau list {text!r}") from None


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML configuration file")
    common.add_argument("--out", required=True, help="run directory")
    common.add_argument("--seed", type=int, help="base seed (simulate: generator seed)")
    common.add_argument("--workers", type=int, help="parallel fit workers")
    common.add_argument("--tau", type=_taus, help="comma-separated quantile levels")
    common.add_argument("--directions", type=int, help="number of directions")
    common.add_argument("--data", help="input CSV (overrides data.path)")
    common.add_argument("-v", "--verbose", action="store_true")
    parser = argparse.ArgumentParser(prog="dirquant", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in COMMANDS.items():
        sub.add_parser(name, parents=[common], help=fn.__name__.replace("cmd_", ""))
    return parser


def _overrides(args):
    o = {}
    if args.seed is not None:
        o.setdefault("simulate" if args.command == "simulate" else "model", {})["seed"] = args.seed
    if args.tau is not None:
        o.setdefault("model", {})["taus"] = args.tau
    if args.directions is not None:
        o.setdefault("model", {})["directions"] = args.directions
    if args.data is not None:
        o.setdefault("data", {})["path"] = str(Path(args.data).resolve())
    if args.workers is not None:
        o.setdefault("run", {})["workers"] = args.workers
    return o


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    out = Path(args.out)
    try:
        if args.command in ("simulate", "fit"):
            out.mkdir(parents=True, exist_ok=True)
        overrides = _overrides(args)
        if args.command in ("simulate", "fit"):
            cfg = config_mod.load(args.config, overrides)
        else:
            cfg = _run_config(out, args.config, overrides)
            cfg = _merge_model_overrides(cfg, overrides)
        COMMANDS[args.command](cfg, out)
    except (DirquantError, OSError) as exc:
        report = exc.report() if isinstance(exc, DirquantError) else {"error": "io-error", "message": str(exc)}
        report["command"] = args.command
        if out.is_dir():
            _write_json(out / "error.json", report)
        print(json.dumps(report), file=sys.stderr)
        return 2
    return 0


def _merge_model_overrides(cfg, overrides):
    """Later stages refuse model changes that would not match the fitted draws."""
    for key in ("model", "data"):
        for name, value in overrides.get(key, {}).items():
            if cfg[key].get(name) == value:
                continue
            raise InvalidArgument(f"--{name} differs from the fitted run; refit instead")
    return cfg


if __name__ == "__main__":
    sys.exit(main())
