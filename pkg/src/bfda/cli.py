"""``bfda`` command line: simulate, fit, evaluate, diagnose.

Every command reads an optional JSON config, applies ``--set section.key=value``
overrides and writes its outputs plus a ``manifest.json`` into ``--out``.
Exit codes: 0 success, 2 config error, 3 data error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import copy
import csv
import hashlib
import json
import logging
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, fields
from pathlib import Path

import numpy as np

from . import __version__
from .dataset import DatasetError, canonical_round, load_dataset, save_dataset
from .empirical_bayes import HYPER_CONFIG_KEYS, hyperparams_from_config
from .gibbs import Chain, SamplerConfig, SamplerError, run_chain
from .metrics import (ReplicateReport, aggregate_replicates, correlation_from_cov, evaluate_replicate,
                      rimse_curve, rimse_signals, rimse_surface, sample_covariance)
from .posterior import load_summary, monitored_scalars, rhat_report, summarize, write_summary
from .simulation import SimSpec, bls_oracle, simulate, true_moments

log = logging.getLogger("bfda")

EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 2, 3, 4

DEFAULT_CONFIG = {
    "simulation": {"replicates": 1},
    "hyper": {},
    "sampler": {},
    "fit": {"data": None, "chains": 1, "level": 0.95, "cov_ci": "auto", "save_chains": True,
            "dump_full": False},
    "evaluate": {"summary": [], "truth": []},
    "diagnose": {"chains": []},
}


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# config handling


def _parse_value(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def load_config(path=None, sets=()) -> dict:
    """Merge defaults, a JSON config file and ``key=value`` overrides."""
    cfg = copy.deepcopy(DEFAULT_CONFIG)
    if path is not None:
        try:
            user = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(user, dict):
            raise ConfigError("config must be a JSON object")
        for section, values in user.items():
            if section not in cfg:
                raise ConfigError(f"unknown config section {section!r}")
            if not isinstance(values, dict):
                raise ConfigError(f"config section {section!r} must be an object")
            cfg[section].update(values)
    for item in sets:
        key, sep, value = item.partition("=")
        section, dot, name = key.partition(".")
        if not sep or not dot or not name:
            raise ConfigError(f"--set expects section.key=value, got {item!r}")
        if section not in cfg:
            raise ConfigError(f"unknown config section {section!r}")
        cfg[section][name] = _parse_value(value)
    return cfg


def config_hash(cfg) -> str:
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def _atomic_json(path, obj):
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(json.dumps(obj, indent=2, sort_keys=True, default=str), encoding="utf-8")
    tmp.replace(path)


def _write_manifest(out, command, cfg, seeds, inputs, outputs, t0, **extra):
    manifest = {
        "command": command, "config_hash": config_hash(cfg), "config": cfg, "seeds": seeds,
        "version": __version__, "inputs": [str(p) for p in inputs],
        "outputs": [str(p) for p in outputs], "wall_time": time.perf_counter() - t0,
    }
    manifest.update(extra)
    _atomic_json(Path(out) / "manifest.json", manifest)


def _workers(n_tasks) -> int:
    raw = os.environ.get("BFDA_THREADS")
    cap = os.cpu_count() or 1
    if raw:
        try:
            cap = int(raw)
        except ValueError as exc:
            raise ConfigError(f"BFDA_THREADS must be an integer, got {raw!r}") from exc
        if cap < 1:
            raise ConfigError("BFDA_THREADS must be >= 1")
    return max(1, min(cap, n_tasks))


def _build(cls, values, what):
    known = {f.name for f in fields(cls)}
    bad = set(values) - known
    if bad:
        raise ConfigError(f"unknown {what} keys: {sorted(bad)}")
    return cls(**values)


# ---------------------------------------------------------------------------
# simulate


def _write_truth(directory, spec, truth, ids):
    d = Path(directory)
    mu, Sigma = true_moments(spec)
    t = spec.grid
    with (d / "truth.csv").open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["curve_id", "t", "z"])
        for i in range(truth.shape[1]):
            for j in range(t.size):
                w.writerow([ids[i], repr(float(t[j])), repr(float(truth[j, i]))])
    with (d / "truth_mean.csv").open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "mu"])
        w.writerows([repr(float(a)), repr(float(b))] for a, b in zip(t, mu))
    np.savetxt(d / "truth_cov.csv", Sigma, delimiter=",", fmt="%.17g")
    _atomic_json(d / "spec.json", spec.to_dict())
    return [d / "truth.csv", d / "truth_mean.csv", d / "truth_cov.csv", d / "spec.json"]


def cmd_simulate(args, cfg) -> int:
    t0 = time.perf_counter()
    sim = dict(cfg["simulation"])
    reps = int(sim.pop("replicates", 1))
    if args.seed is not None:
        sim["seed"] = args.seed
    if args.retain is not None:
        sim["retain_fraction"] = args.retain
    if "domain" in sim:
        sim["domain"] = tuple(sim["domain"])
    try:
        base = _build(SimSpec, sim, "simulation")
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    if reps < 1:
        raise ConfigError("simulation.replicates must be >= 1")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    outputs, seeds = [], []
    for r in range(reps):
        spec = SimSpec(**{**asdict(base), "seed": base.seed + r})
        d = out if reps == 1 else out / f"rep_{r + 1:03d}"
        d.mkdir(parents=True, exist_ok=True)
        truth, data = simulate(spec)
        save_dataset(data, d / "data.csv")
        outputs += [d / "data.csv", *_write_truth(d, spec, truth, data.ids)]
        seeds.append(spec.seed)
    _write_manifest(out, "simulate", cfg, seeds, [], outputs, t0, replicates=reps)
    print(f"wrote {reps} dataset(s) to {out}")
    return 0


# ---------------------------------------------------------------------------
# fit


def _fit_one(data, hyper, sampler_cfg):
    return run_chain(data, hyper, sampler_cfg)


def cmd_fit(args, cfg) -> int:
    t0 = time.perf_counter()
    fit = cfg["fit"]
    data_path = args.data or fit.get("data")
    if not data_path:
        raise ConfigError("fit needs a dataset (--data or fit.data)")
    hyper_cfg = dict(cfg["hyper"])
    bad = set(hyper_cfg) - HYPER_CONFIG_KEYS
    if bad:
        raise ConfigError(f"unknown hyper keys: {sorted(bad)}")
    if args.scale_kernel is not None:
        hyper_cfg["scale_kernel"] = args.scale_kernel
    sampler = dict(cfg["sampler"])
    if args.seed is not None:
        sampler["seed"] = args.seed
    if args.burnin is not None:
        sampler["n_burnin"] = args.burnin
    if args.iters is not None:
        sampler["n_samples"] = args.iters - sampler.get("n_burnin", SamplerConfig.n_burnin)
    chains = int(args.chains if args.chains is not None else fit.get("chains", 1))
    if chains < 1:
        raise ConfigError("need at least one chain")
    try:
        base = _build(SamplerConfig, sampler, "sampler")
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc

    data = load_dataset(data_path)
    try:
        hyper = hyperparams_from_config(data, hyper_cfg)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, DatasetError):
            raise
        raise ConfigError(f"hyperparameters: {exc}") from exc

    configs = [SamplerConfig(**{**asdict(base), "chain_id": base.chain_id + k}) for k in range(chains)]
    workers = _workers(chains)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_fit_one, [data] * chains, [hyper] * chains, configs))
    else:
        results = [_fit_one(data, hyper, c) for c in configs]

    cov_ci = fit.get("cov_ci", "auto")
    if cov_ci == "auto":
        n_cov = sum(c.cov_full.shape[0] for c in results)
        cov_ci = n_cov >= 100
        if not cov_ci:
            log.warning("only %d covariance draws stored; skipping covariance intervals", n_cov)
    summary = summarize(results, level=float(fit.get("level", 0.95)), cov_ci=bool(cov_ci))
    out = Path(args.out)
    outputs = write_summary(summary, out / "summary")
    if fit.get("save_chains", True):
        for k, ch in enumerate(results):
            outputs.append(ch.save(out / "chains" / f"chain_{k}", full=bool(fit.get("dump_full", False))))
    _write_manifest(out, "fit", cfg, [c.seed for c in configs], [data_path], outputs, t0,
                    workers=workers, chain_ids=[c.chain_id for c in configs],
                    dims={"p": int(summary.grid.size), "n": len(summary.ids),
                          "draws_per_chain": [c.n_draws for c in results]})
    se = summary.sigma_eps2
    print(f"sigma_eps2 mean {float(se.mean):.4f} CI [{float(se.lower):.4f}, {float(se.upper):.4f}]")
    for name, value in summary.rhat.items():
        print(f"rhat {name} {value:.4f}")
    return 0


# ---------------------------------------------------------------------------
# evaluate


def _load_truth(directory, points):
    d = Path(directory)
    rows: dict = {}
    with (d / "truth.csv").open(newline="", encoding="utf-8") as fh:
        for r in csv.DictReader(fh):
            rows.setdefault(r["curve_id"], []).append((float(r["t"]), float(r["z"])))
    t_full = canonical_round(np.array([a for a, _ in next(iter(rows.values()))]))
    Z = np.column_stack([[b for _, b in v] for v in rows.values()])
    means = np.loadtxt(d / "truth_mean.csv", delimiter=",", skiprows=1, ndmin=2)[:, 1]
    Sigma = np.loadtxt(d / "truth_cov.csv", delimiter=",", ndmin=2)
    pos = np.searchsorted(t_full, canonical_round(points))
    if np.any(pos >= t_full.size) or not np.allclose(t_full[np.minimum(pos, t_full.size - 1)], points):
        raise DatasetError("summary grid is not a subset of the truth grid")
    spec = json.loads((d / "spec.json").read_text()) if (d / "spec.json").exists() else None
    return Z[pos], means[pos], Sigma[np.ix_(pos, pos)], pos, spec


def _baselines(summary, truth_dir, Zt, mu_t, Sigma_t, pos, spec):
    g = summary.grid
    rows = {}
    se_cov = sample_covariance(summary.signals.mean)
    rows["se_bayesian"] = ReplicateReport(rimse_cov=rimse_surface(se_cov, Sigma_t, g),
                                          rimse_cor=rimse_surface(correlation_from_cov(se_cov),
                                                                  correlation_from_cov(Sigma_t), g))
    data_path = Path(truth_dir) / "data.csv"
    if not data_path.exists():
        return rows
    data = load_dataset(data_path)
    if data.is_common_grid() and data.curves[0].t.size == g.size:
        Y = data.value_matrix()
        C = sample_covariance(Y)
        rows["sample"] = ReplicateReport(
            rimse_signals=rimse_signals(Y, Zt, g), rimse_mean=rimse_curve(Y.mean(axis=1), mu_t, g),
            rimse_cov=rimse_surface(C, Sigma_t, g),
            rimse_cor=rimse_surface(correlation_from_cov(C), correlation_from_cov(Sigma_t), g))
        if spec is not None:
            s2 = float(spec["sigma_eps"]) ** 2
            sm, _ = bls_oracle(data, mu_t, Sigma_t, s2)
            rows["bls"] = ReplicateReport(rimse_signals=rimse_signals(sm, Zt, g))
    return rows


_REPORT_FIELDS = [f.name for f in fields(ReplicateReport)]


def _fmt_opt(v):
    return "" if v is None else repr(float(v))


def cmd_evaluate(args, cfg) -> int:
    t0 = time.perf_counter()
    ev = cfg["evaluate"]
    summaries = args.summary or ev.get("summary") or []
    truths = args.truth or ev.get("truth") or []
    if isinstance(summaries, str):
        summaries = [summaries]
    if isinstance(truths, str):
        truths = [truths]
    if not summaries or len(summaries) != len(truths):
        raise ConfigError("evaluate needs matching lists of --summary and --truth directories")
    per_method: dict = {}
    table = []
    for r, (sdir, tdir) in enumerate(zip(summaries, truths), start=1):
        summary = load_summary(sdir)
        Zt, mu_t, Sigma_t, pos, spec = _load_truth(tdir, summary.grid)
        if Zt.shape != summary.signals.mean.shape:
            raise DatasetError(f"truth {Zt.shape} and summary {summary.signals.mean.shape} differ")
        reports = {"bayesian": evaluate_replicate(summary, Zt, mu_t, Sigma_t)}
        reports.update(_baselines(summary, tdir, Zt, mu_t, Sigma_t, pos, spec))
        for method, rep in reports.items():
            per_method.setdefault(method, []).append(rep)
            table.append([str(r), method] + [_fmt_opt(getattr(rep, k)) for k in _REPORT_FIELDS])
    if len(summaries) >= 2:
        for method, reps in per_method.items():
            agg = aggregate_replicates(reps)
            table.append(["mean", method] + [_fmt_opt(agg[k][0]) if k in agg else "" for k in _REPORT_FIELDS])
            table.append(["se", method] + [_fmt_opt(agg[k][1]) if k in agg else "" for k in _REPORT_FIELDS])
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "results.csv"
    tmp = out / "results.csv.tmp"
    with tmp.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["replicate", "method"] + _REPORT_FIELDS)
        w.writerows(table)
    tmp.replace(path)
    _write_manifest(out, "evaluate", cfg, [], [*summaries, *truths], [path], t0)
    shown = table if len(summaries) == 1 else [r for r in table if r[0] in ("mean", "se")]
    print(",".join(["replicate", "method"] + _REPORT_FIELDS))
    for row in shown:
        print(",".join(row))
    return 0


# ---------------------------------------------------------------------------
# diagnose


def cmd_diagnose(args, cfg) -> int:
    t0 = time.perf_counter()
    paths = args.chains or cfg["diagnose"].get("chains") or []
    if len(paths) < 2:
        raise ConfigError("diagnose needs at least 2 chain directories")
    resolved = [Path(p).resolve() for p in paths]
    if len(set(resolved)) != len(resolved):
        raise ConfigError("need independent chains: the same chain path was given more than once")
    chains = [Chain.load(p) for p in resolved]
    rhat = rhat_report(chains)
    traces = {}
    for path, ch in zip(paths, chains):
        stats = {}
        for name, x in monitored_scalars(ch).items():
            q = np.quantile(x, [0.025, 0.5, 0.975])
            stats[name] = {"mean": float(x.mean()), "sd": float(x.std(ddof=1)),
                           "q025": float(q[0]), "median": float(q[1]), "q975": float(q[2])}
        traces[str(path)] = stats
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    tmp = out / "rhat.csv.tmp"
    with tmp.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["scalar", "rhat"])
        w.writerows([k, repr(v)] for k, v in rhat.items())
    tmp.replace(out / "rhat.csv")
    _atomic_json(out / "traces.json", traces)
    _write_manifest(out, "diagnose", cfg, [], paths, [out / "rhat.csv", out / "traces.json"], t0)
    for k, v in rhat.items():
        flag = "" if v < 1.1 else "  (not converged)"
        print(f"{k:>16s}  {v:.4f}{flag}")
    return 0


# ---------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bfda", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"bfda {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--set", dest="sets", action="append", default=[], metavar="SECTION.KEY=VALUE",
                       help="override a config value (JSON-parsed); repeatable")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", default=".", help="output directory")
        p.add_argument("-v", "--verbose", action="store_true")
        return p

    s = common(sub.add_parser("simulate", help="generate synthetic datasets with known truth"))
    s.add_argument("--retain", type=float, help="fraction of grid points kept per curve")
    f = common(sub.add_parser("fit", help="run the Gibbs sampler and summarize the posterior"))
    f.add_argument("--data", help="dataset file (CSV long format or JSON)")
    f.add_argument("--chains", type=int)
    f.add_argument("--scale-kernel", choices=["matern", "empirical", "file"])
    f.add_argument("--iters", type=int, help="total sweeps including burn-in")
    f.add_argument("--burnin", type=int)
    e = common(sub.add_parser("evaluate", help="score summaries against simulation truth"))
    e.add_argument("--summary", action="append", help="summary directory; repeatable")
    e.add_argument("--truth", action="append", help="truth directory paired with --summary")
    d = common(sub.add_parser("diagnose", help="split R-hat across chain dumps"))
    d.add_argument("--chains", nargs="+", help="chain directories")
    return parser


COMMANDS = {"simulate": cmd_simulate, "fit": cmd_fit, "evaluate": cmd_evaluate, "diagnose": cmd_diagnose}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, args.sets)
        return COMMANDS[args.command](args, cfg)
    except DatasetError as exc:
        print(f"bfda: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (SamplerError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"bfda: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, ValueError, TypeError) as exc:
        print(f"bfda: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
