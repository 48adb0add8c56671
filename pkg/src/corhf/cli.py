"""Command-line front end: ``corhf run | demo | summarize``.

Experiments are described by a YAML file whose top-level keys mirror
:class:`corhf.experiments.ExperimentConfig`; any key can be overridden from
the command line. Outputs are plain CSV (UTF-8, LF, header row) plus a JSON
manifest in the output directory.
"""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import glob
import hashlib
import io
import json
import logging
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np
import yaml

from corhf import __version__
from corhf.core import substream
from corhf.experiments import SCENARIOS, l63_config, l96_config, run_demo_2d, run_trial

logger = logging.getLogger("corhf")

OUTPUT_ENV = "CORHF_OUTPUT_DIR"
RESULTS_COLUMNS = ("trial", "step", "filter", "n_ens", "rmse_forecast", "rmse_analysis",
                   "degenerate_count")
SUMMARY_COLUMNS = ("filter", "n_ens", "mean_rmse_analysis", "stddev_rmse_analysis",
                   "mean_rmse_forecast", "stddev_rmse_forecast", "n_trials")
FILTER_KINDS = ("enkf", "rhf", "qceff", "corhf", "bpf")

DEFAULTS = {
    "experiment": "l63",
    "seed": 0,
    "n_steps": 1000,
    "n_spinup": 100,
    "n_trials": 1,
    "n_ens": [40],
    "filters": None,  # per-experiment default
    "init_spread": 1.0,
    "truth_spinup_time": 10.0,
    "bpf_n_ens": 10_000,
    "copula": {"alpha": None, "r_loc": 2.0},
    "observation": {"sqrt_distance": False},
    "tails": {"capped": False},
    "bpf": {"jitter": 0.02},
}
_DEFAULT_ALPHA = {"l63": 0.3, "l96": 1.0}


class UsageError(Exception):
    """Bad command line or configuration (exit status 2)."""


# -- configuration -------------------------------------------------------------------


def _merge(base, extra, where=""):
    out = dict(base)
    for key, val in extra.items():
        if key not in base:
            raise UsageError(f"unknown config field {where}{key!r}")
        if isinstance(base[key], dict):
            if not isinstance(val, dict):
                raise UsageError(f"config field {where}{key!r} must be a mapping")
            out[key] = _merge(base[key], val, f"{where}{key}.")
        else:
            out[key] = val
    return out


def load_config(path):
    """Read a YAML experiment file and merge it over the defaults."""
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"config file not found: {p}")
    text = p.read_text(encoding="utf-8")
    try:
        data = yaml.safe_load(text) or {}
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        loc = f" (line {mark.line + 1}, column {mark.column + 1})" if mark else ""
        raise UsageError(f"malformed config {p}{loc}: {getattr(exc, 'problem', exc)}")
    if not isinstance(data, dict):
        raise UsageError(f"config {p} must be a mapping at top level")
    return _merge(DEFAULTS, data), text


def apply_overrides(conf, args):
    conf = json.loads(json.dumps(conf))  # deep copy
    simple = {"seed": args.seed, "n_steps": args.n_steps, "n_trials": args.n_trials,
              "n_spinup": args.n_spinup, "experiment": args.experiment}
    for key, val in simple.items():
        if val is not None:
            conf[key] = val
    if args.n_ens:
        conf["n_ens"] = _int_list(args.n_ens, "--n-ens")
    if args.filter:
        conf["filters"] = [f.strip() for f in ",".join(args.filter).split(",") if f.strip()]
    if args.alpha is not None:
        conf["copula"]["alpha"] = args.alpha
    if args.r_loc is not None:
        conf["copula"]["r_loc"] = args.r_loc
    return conf


def _int_list(values, flag):
    try:
        return [int(v) for v in ",".join(values).split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"{flag} expects integers, got {values!r}")


def build_experiment(conf):
    """Turn a merged config mapping into an :class:`ExperimentConfig`."""
    kind = conf["experiment"]
    if kind not in ("l63", "l96"):
        raise UsageError(f"field 'experiment' must be 'l63' or 'l96', got {kind!r}")
    filters = conf["filters"]
    if filters is None:
        filters = list(FILTER_KINDS) if kind == "l63" else ["enkf", "rhf", "qceff", "corhf"]
    if isinstance(filters, str):
        filters = [filters]
    bad = [f for f in filters if f not in FILTER_KINDS]
    if bad:
        raise UsageError(f"field 'filters': unknown filter(s) {bad}; valid: {list(FILTER_KINDS)}")
    n_ens = conf["n_ens"]
    n_ens = [n_ens] if isinstance(n_ens, int) else list(n_ens)
    if not n_ens or any(not isinstance(n, int) or n < 2 for n in n_ens):
        raise UsageError("field 'n_ens' must be integers >= 2")
    alpha = conf["copula"]["alpha"]
    alpha = _DEFAULT_ALPHA[kind] if alpha is None else alpha
    common = dict(
        n_steps=conf["n_steps"], n_spinup=conf["n_spinup"], n_trials=conf["n_trials"],
        n_ens=tuple(n_ens), alpha=alpha, filters=tuple(filters), seed=conf["seed"],
        bpf_jitter=conf["bpf"]["jitter"], init_spread=conf["init_spread"],
        truth_spinup_time=conf["truth_spinup_time"], bpf_n_ens=conf["bpf_n_ens"],
    )
    try:
        if kind == "l63":
            return l63_config(capped_tail=bool(conf["tails"]["capped"]),
                              sqrt_distance=bool(conf["observation"]["sqrt_distance"]), **common)
        return l96_config(r_loc=conf["copula"]["r_loc"], **common)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid config: {exc}")


def config_digest(conf):
    blob = json.dumps(conf, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


# -- output helpers --------------------------------------------------------------------


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _write_csv(path, header, rows):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def output_dir(arg):
    d = Path(arg or os.environ.get(OUTPUT_ENV) or "corhf-output")
    d.mkdir(parents=True, exist_ok=True)
    return d


def _now():
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


def _trial_worker(conf, trial):
    # configs hold closures, so workers rebuild theirs from the plain mapping
    cfg = build_experiment(conf)
    res = run_trial(cfg, trial)
    failures = [(r.filter, r.n_ens, r.failed) for r in res.runs if r.failed]
    return trial, res.rows(), failures


def trial_rmse(rows, n_spinup):
    """Per-(trial, filter, n_ens) forecast/analysis RMSE from per-step rows.

    Per-step values are ``sqrt(||e||^2 / n_st)``, so the trial RMSE is the root
    mean of their squares over the steps after ``n_spinup``.
    """
    acc = {}
    for trial, step, filt, n_ens, rf, ra, _ in rows:
        if int(step) <= n_spinup:
            continue
        a = acc.setdefault((int(trial), filt, int(n_ens)), ([], []))
        a[0].append(float(rf) ** 2)
        a[1].append(float(ra) ** 2)
    return {k: (math.sqrt(math.fsum(f) / len(f)), math.sqrt(math.fsum(a) / len(a)))
            for k, (f, a) in acc.items()}


def summarize_rows(per_trial):
    """Mean and sample stddev across trials, per ``(filter, n_ens)``."""
    groups = {}
    for (trial, filt, n_ens), (rf, ra) in per_trial.items():
        groups.setdefault((filt, n_ens), []).append((trial, rf, ra))
    out = []
    for (filt, n_ens) in sorted(groups):
        vals = sorted(groups[(filt, n_ens)])
        f = np.array([v[1] for v in vals])
        a = np.array([v[2] for v in vals])
        sd = (lambda x: float(np.std(x, ddof=1)) if x.size > 1 else 0.0)
        out.append((filt, n_ens, math.fsum(a) / a.size, sd(a), math.fsum(f) / f.size, sd(f),
                    a.size))
    return out


# -- commands --------------------------------------------------------------------------


def cmd_run(args):
    if args.config:
        conf, text = load_config(args.config)
    else:
        conf, text = json.loads(json.dumps(DEFAULTS)), None
    conf = apply_overrides(conf, args)
    cfg = build_experiment(conf)
    out = output_dir(args.out)
    started = _now()
    trials = range(cfg.n_trials)
    results, failures = {}, []
    if args.jobs and args.jobs > 1 and cfg.n_trials > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            futs = [pool.submit(_trial_worker, conf, t) for t in trials]
            for fut in futs:
                t, rows, fail = fut.result()
                results[t] = rows
                failures += [(t,) + f for f in fail]
    else:
        for t in trials:
            _, rows, fail = _trial_worker(conf, t)
            results[t] = rows
            failures += [(t,) + f for f in fail]
            logger.info("trial %d done", t)
    rows = [r for t in sorted(results) for r in results[t]]
    results_path = out / "results.csv"
    summary_path = out / "summary.csv"
    _write_csv(results_path, RESULTS_COLUMNS, rows)
    _write_csv(summary_path, SUMMARY_COLUMNS, summarize_rows(trial_rmse(rows, cfg.n_spinup)))
    manifest = {
        "tool": "corhf", "version": __version__, "config_digest": config_digest(conf),
        "config": conf, "config_path": str(args.config) if args.config else None,
        "config_text_sha256": hashlib.sha256(text.encode()).hexdigest() if text else None,
        "seed": conf["seed"], "n_spinup": cfg.n_spinup, "started": started, "finished": _now(),
        "outputs": {"results": results_path.name, "summary": summary_path.name},
        "failures": [{"trial": t, "filter": f, "n_ens": n, "error": e} for t, f, n, e in failures],
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    for t, f, n, e in failures:
        print(f"trial {t}: {f} (n_ens={n}) failed: {e}", file=sys.stderr)
    print(f"wrote {results_path}, {summary_path}")
    return 1 if failures else 0


def cmd_demo(args):
    if args.scenario not in SCENARIOS:
        raise UsageError(f"unknown scenario {args.scenario!r}; valid: {', '.join(sorted(SCENARIOS))}")
    filt = (args.filter or ["corhf"])[0]
    if filt not in ("enkf", "rhf", "qceff", "corhf"):
        raise UsageError(f"demo filter must be one of enkf, rhf, qceff, corhf; got {filt!r}")
    n_ens = _int_list(args.n_ens, "--n-ens")[0] if args.n_ens else 100
    seed = 0 if args.seed is None else args.seed
    alpha = 1.0 if args.alpha is None else args.alpha
    rng = substream(seed, "demo", args.scenario, filt, n_ens)
    d = run_demo_2d(args.scenario, filt, n_ens, rng, alpha=alpha)
    out = output_dir(args.out)
    paths = []
    for role, x, z in (("prior", d["prior"], d["z"]), ("analysis", d["analysis"], d["z_analysis"])):
        # one-dimensional scenarios report the first observable as x2
        second = x[1] if x.shape[0] > 1 else z[0]
        path = out / f"{args.scenario}_{filt}_{role}.csv"
        _write_csv(path, ("x1", "x2", "role"),
                   ((float(a), float(b), role) for a, b in zip(x[0], second)))
        paths.append(path)
    print("wrote " + ", ".join(str(p) for p in paths))
    return 0


def cmd_summarize(args):
    files = sorted({f for pat in args.results for f in glob.glob(pat)})
    if not files:
        raise UsageError(f"no results files match {args.results}")
    per_trial = {}
    for f in files:
        spin = args.n_spinup
        man = Path(f).with_name("manifest.json")
        if spin is None:
            spin = json.loads(man.read_text())["n_spinup"] if man.is_file() else 0
        with open(f, encoding="utf-8", newline="") as fh:
            r = csv.reader(fh)
            header = next(r, None)
            if tuple(header or ()) != RESULTS_COLUMNS:
                raise UsageError(f"{f} is not a results file (header {header})")
            # trials from different files are distinct runs even when indices repeat
            for (trial, filt, n), v in trial_rmse(list(r), spin).items():
                per_trial[((f, trial), filt, n)] = v
    rows = summarize_rows(per_trial)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SUMMARY_COLUMNS)
    w.writerows([[_fmt(v) for v in row] for row in rows])
    if args.out:
        Path(args.out).write_text(buf.getvalue(), encoding="utf-8")
    else:
        sys.stdout.write(buf.getvalue())
    return 0


# -- entry point -----------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser():
    p = _Parser(prog="corhf", description="Copula rank histogram filter experiments.")
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    r = sub.add_parser("run", help="run a twin experiment")
    r.add_argument("--config")
    r.add_argument("--experiment", choices=("l63", "l96"))
    r.add_argument("--seed", type=int)
    r.add_argument("--filter", action="append", help="filter kind(s), comma separated")
    r.add_argument("--n-ens", action="append", help="ensemble size(s), comma separated")
    r.add_argument("--n-trials", type=int)
    r.add_argument("--n-steps", type=int)
    r.add_argument("--n-spinup", type=int)
    r.add_argument("--alpha", type=float)
    r.add_argument("--r-loc", type=float)
    r.add_argument("--jobs", type=int, default=1)
    r.add_argument("--out")
    r.set_defaults(func=cmd_run)

    d = sub.add_parser("demo", help="prior/analysis scatter data for a 2-D scenario")
    d.add_argument("scenario")
    d.add_argument("--filter", action="append")
    d.add_argument("--n-ens", action="append")
    d.add_argument("--seed", type=int)
    d.add_argument("--alpha", type=float)
    d.add_argument("--out")
    d.set_defaults(func=cmd_demo)

    s = sub.add_parser("summarize", help="aggregate results CSVs across trials")
    s.add_argument("results", nargs="+", help="results CSV path(s) or glob(s)")
    s.add_argument("--n-spinup", type=int)
    s.add_argument("--out")
    s.set_defaults(func=cmd_summarize)
    return p


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        if not getattr(args, "func", None):
            raise UsageError("a command is required: run, demo or summarize")
        return args.func(args)
    except UsageError as exc:
        print(f"corhf: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001
        print(f"corhf: runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
