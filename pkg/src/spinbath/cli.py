"""Command-line front end: generate, recover, sweep, report, baseline.

Exit codes: 0 success, 2 invalid configuration or input, 3 file I/O failure,
4 any other runtime failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from . import datagen, engine, metrics
from .catalog import CatalogError, LatticeCatalog
from .config import (RunConfig, apply_overrides, build_scenario, flag_table, load_config,
                     parse_flag_value, scenario_seeds)
from .forward import ExperimentSpec
from .likelihood import ObservedSignal
from .samplers import Target

log = logging.getLogger("spinbath")

EXIT_OK, EXIT_VALIDATION, EXIT_IO, EXIT_RUNTIME = 0, 2, 3, 4

SWEEP_AXES = {
    # axis: (config section, key, figure file stem)
    "n_tau": ("scenario", "n_tau", "fig2"),
    "noise_sd": ("scenario", "noise_sd", "fig3"),
    "sigma2": ("likelihood", "sigma2", "fig5"),
    "r_spin": ("proposal", "r_spin", "fig6"),
    "delta": ("scenario", "hyperfine_perturbation_khz", "fig8"),
    "zeta": ("likelihood", "zeta", "tableE"),
}


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON run configuration")
    p.add_argument("--workers", type=int, help="parallel ensembles (same as --run.workers)")
    p.add_argument("--log-level", default="INFO")
    group = p.add_argument_group("configuration keys (override the config file)")
    for section, key, default in flag_table():
        group.add_argument(f"--{section}.{key}", dest=f"{section}.{key}", default=argparse.SUPPRESS,
                           metavar=type(default).__name__.upper() if default is not None else "VALUE",
                           help=f"default: {default}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="spinbath", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="synthesize a coherence dataset and its manifest")
    _add_common(p)

    p = sub.add_parser("recover", help="sample the posterior for a coherence dataset")
    _add_common(p)
    p.add_argument("--signal", required=True, help="CSV with columns tau_ms,coherence")
    p.add_argument("--manifest", help="ground-truth manifest (enables truth metrics)")
    p.add_argument("--reference", help="reference couplings CSV (label,a_par,a_perp) for the comparison table")

    p = sub.add_parser("sweep", help="rerun generate+recover over one hyperparameter axis")
    _add_common(p)
    p.add_argument("--axis", required=True, choices=sorted(SWEEP_AXES))
    p.add_argument("--values", required=True, help="comma-separated values")

    p = sub.add_parser("report", help="recompute metrics from a stored posterior file")
    _add_common(p)
    p.add_argument("--posterior", required=True)
    p.add_argument("--manifest")
    p.add_argument("--burn-in", type=int)

    p = sub.add_parser("baseline", help="hypergeometric chance-detection table")
    _add_common(p)
    p.add_argument("--n-sites", type=int, help="default: size of the configured catalog")
    p.add_argument("--n-draw", type=int, default=50)
    p.add_argument("--class-sizes", default="1,2,3,6,9,12,18,24")
    return parser


def resolve_config(args: argparse.Namespace) -> RunConfig:
    cfg = load_config(args.config)
    defaults = {(s, k): d for s, k, d in flag_table()}
    overrides = {}
    for dotted, raw in vars(args).items():
        if "." not in dotted:
            continue
        section, key = dotted.split(".", 1)
        current = getattr(getattr(cfg, section), key)
        overrides[(section, key)] = parse_flag_value(raw, current if current is not None
                                                     else defaults[(section, key)])
    if args.workers is not None:
        overrides[("run", "workers")] = args.workers
    if ("proposal", "r_spin") in overrides and ("catalog", "radius") not in overrides:
        overrides[("catalog", "radius")] = overrides[("proposal", "r_spin")]
    cfg = apply_overrides(cfg, overrides) if overrides else cfg
    path = cfg.catalog.resolved_path()
    if path != cfg.catalog.path:
        cfg = cfg.replace("catalog", path=path)
    return cfg


def _outdir(cfg: RunConfig) -> Path:
    out = Path(cfg.run.output)
    out.mkdir(parents=True, exist_ok=True)
    cfg.write(out)
    return out


def recovery_catalog(cfg: RunConfig, catalog: LatticeCatalog, seed: int) -> LatticeCatalog:
    delta = cfg.scenario.hyperfine_perturbation_khz
    if delta == 0:
        return catalog
    return datagen.perturb_catalog(catalog, delta, np.random.default_rng([seed, 2]))


def recover(cfg: RunConfig, catalog: LatticeCatalog, signal: ObservedSignal, seed: int,
            trace_dir: Path | None = None) -> tuple[engine.PosteriorEnsemble, Target]:
    rec_catalog = recovery_catalog(cfg, catalog, seed)
    spec = ExperimentSpec(signal.tau, cfg.experiment.n_pulses, cfg.experiment.b_field,
                          cfg.experiment.gamma_n)
    target = Target(rec_catalog, spec, signal, cfg.likelihood, cfg.forward.mode,
                    cfg.forward.envelope_scale_ms)
    posterior = engine.run(target, cfg.proposal, cfg.schedule, seed, cfg.run.n_workers(), trace_dir)
    return posterior, target


def write_recovery_outputs(out: Path, cfg: RunConfig, catalog: LatticeCatalog,
                           posterior: engine.PosteriorEnsemble, target: Target | None,
                           truth: Sequence[int] | None, reference: str | None = None) -> metrics.RecoveryReport:
    report = metrics.recovery_report(posterior, catalog, truth, cfg.metrics.bin_edges,
                                     cfg.metrics.plausible_threshold)
    report.lambda_posterior = metrics.lambda_histogram(posterior, cfg.metrics.lambda_bins)
    (out / "report.json").write_text(json.dumps(report.to_dict(), indent=2) + "\n")
    metrics.write_rows(out / "fig2b.csv", metrics.coupling_posterior(posterior, catalog),
                       ("class", "a_par", "a_perp", "frequency"))
    lp = report.lambda_posterior
    metrics.write_rows(out / "fig2c.csv", [
        {"lambda_lo": lo, "lambda_hi": hi, "count": c}
        for lo, hi, c in zip(lp.edges[:-1], lp.edges[1:], lp.counts)])
    if target is not None:
        traces = engine.error_trace(posterior, target)
        rows = [{"ensemble": e, "step": i, "mean_abs_error": v}
                for e, tr in traces.items() for i, v in enumerate(tr.tolist())]
        metrics.write_rows(out / "fig4a.csv", rows, ("ensemble", "step", "mean_abs_error"))
    if reference:
        rows = metrics.table1_rows(posterior, catalog, metrics.read_reference_table(reference),
                                   cfg.experiment.gamma_n * cfg.experiment.b_field)
        metrics.write_rows(out / "table1.csv", rows, metrics.TABLE1_COLUMNS)
    return report


def cmd_generate(cfg: RunConfig, args) -> int:
    catalog = cfg.catalog.load()
    out = _outdir(cfg)
    scenario = build_scenario(cfg, catalog, cfg.run.seed)
    data = datagen.synthesize(scenario, catalog)
    datagen.write_signal(out / "signal.csv", data.signal)
    datagen.write_manifest(out / "manifest.json", data)
    log.info("wrote %d-point signal for a %d-spin bath to %s", len(data.signal),
             len(scenario.truth_sites), out)
    return EXIT_OK


def cmd_recover(cfg: RunConfig, args) -> int:
    catalog = cfg.catalog.load()
    signal = datagen.read_signal(args.signal)
    truth = None
    if args.manifest:
        truth = datagen.read_manifest(args.manifest)["truth_site_ids"]
    out = _outdir(cfg)
    posterior, target = recover(cfg, catalog, signal, cfg.run.seed, out / "traces")
    posterior.write_jsonl(out / "posterior.jsonl")
    report = write_recovery_outputs(out, cfg, catalog, posterior, target, truth, args.reference)
    log.info("k mode %d, lambda mode %.3f; outputs in %s", report.k_mode,
             report.lambda_posterior.mode, out)
    return EXIT_OK


def sweep_rows(cfg: RunConfig, axis: str, values: Sequence, catalog: LatticeCatalog,
               out: Path | None = None) -> tuple[list[dict], list[dict]]:
    """Per-scenario records and per-(value, bin) means for one sweep axis."""
    section, key, _ = SWEEP_AXES[axis]
    per_scenario, summary = [], []
    seeds = scenario_seeds(cfg.run.seed, cfg.scenario.n_scenarios)
    for value in values:
        vcfg = cfg.replace(section, **{key: value})
        if axis == "zeta":
            vcfg = vcfg.replace("likelihood", mode="wasserstein_mixed")
        if axis == "r_spin":
            vcfg = vcfg.replace("catalog", radius=value)
        cat = catalog if axis != "r_spin" else catalog.with_radius(value)
        records = []
        for i, seed in enumerate(seeds):
            data = datagen.synthesize(build_scenario(vcfg, cat, seed), cat)
            posterior, _ = recover(vcfg, cat, data.signal, seed)
            truth = data.scenario.truth_sites
            report = metrics.recovery_report(posterior, cat, truth, vcfg.metrics.bin_edges)
            detected = metrics.detected_spin_count(report.detection, truth, cat, report.k_mode)
            rec = {"axis": axis, "value": value, "scenario": i, "seed": seed, "k_true": len(truth),
                   "k_mode": report.k_mode, "discrepancy": report.discrepancy,
                   "detected_spins": detected, "detection_by_bin": report.detection_by_bin,
                   "false_positive_rate": report.false_positive_rate,
                   "lambda_mode": report.lambda_posterior.mode}
            records.append(rec)
            if out is not None:
                sdir = out / f"{axis}={value}" / f"scenario_{i}"
                sdir.mkdir(parents=True, exist_ok=True)
                vcfg.replace("run", seed=seed, output=str(sdir)).write(sdir)
                (sdir / "report.json").write_text(json.dumps(report.to_dict(), indent=2) + "\n")
            log.info("%s=%s scenario %d: k_mode=%d detected=%d", axis, value, i, report.k_mode, detected)
        per_scenario.extend(records)
        edges = vcfg.metrics.bin_edges
        for lo, hi in zip(edges[:-1], edges[1:]):
            label = metrics.bin_label(lo, hi)
            det = [r["detection_by_bin"][label] for r in records if label in r["detection_by_bin"]]
            fp = [r["false_positive_rate"][label] for r in records if label in r["false_positive_rate"]]
            summary.append({
                "axis": axis, "value": value, "magnitude_bin": label,
                "detection_rate": float(np.mean(det)) if det else "",
                "false_positive_rate": float(np.mean(fp)) if fp else "",
                "discrepancy": float(np.mean([r["discrepancy"] for r in records])),
                "detected_spins": float(np.mean([r["detected_spins"] for r in records])),
                "n_scenarios": len(records)})
    return per_scenario, summary


SUMMARY_COLUMNS = ("axis", "value", "magnitude_bin", "detection_rate", "false_positive_rate",
                   "discrepancy", "detected_spins", "n_scenarios")


def write_sweep_tables(out: Path, axis: str, summary: list[dict]) -> list[Path]:
    stem = SWEEP_AXES[axis][2]
    written = [out / f"sweep_{axis}.csv"]
    metrics.write_rows(written[0], summary, SUMMARY_COLUMNS)
    if stem in ("fig2", "fig3"):
        for suffix, cols in (("d", ("value", "magnitude_bin", "detection_rate")),
                             ("e", ("value", "discrepancy")),
                             ("f", ("value", "magnitude_bin", "false_positive_rate"))):
            rows = summary if suffix != "e" else list({r["value"]: r for r in summary}.values())
            path = out / f"{stem}{suffix}.csv"
            metrics.write_rows(path, rows, cols)
            written.append(path)
    elif stem == "tableE":
        rows = list({r["value"]: r for r in summary}.values())
        path = out / "tableE.csv"
        metrics.write_rows(path, [{"zeta": r["value"], "detected_spins": r["detected_spins"]}
                                  for r in rows], ("zeta", "detected_spins"))
        written.append(path)
    else:
        path = out / f"{stem}.csv"
        metrics.write_rows(path, summary, SUMMARY_COLUMNS)
        written.append(path)
    return written


def parse_values(raw: str, axis: str) -> list:
    kind = int if axis == "n_tau" else float
    try:
        values = [kind(v) for v in raw.split(",") if v.strip()]
    except ValueError:
        raise ValueError(f"--values: expected comma-separated {kind.__name__}s") from None
    if not values:
        raise ValueError("--values is empty")
    return values


def cmd_sweep(cfg: RunConfig, args) -> int:
    values = parse_values(args.values, args.axis)
    catalog = cfg.catalog.load()
    out = _outdir(cfg)
    per_scenario, summary = sweep_rows(cfg, args.axis, values, catalog, out)
    with (out / f"sweep_{args.axis}_scenarios.jsonl").open("w") as fh:
        for rec in per_scenario:
            fh.write(json.dumps(rec) + "\n")
    for path in write_sweep_tables(out, args.axis, summary):
        log.info("wrote %s", path)
    return EXIT_OK


def cmd_report(cfg: RunConfig, args) -> int:
    catalog = cfg.catalog.load()
    burn_in = args.burn_in if args.burn_in is not None else cfg.schedule.burn_in
    posterior = engine.PosteriorEnsemble.read_jsonl(args.posterior, burn_in)
    truth = datagen.read_manifest(args.manifest)["truth_site_ids"] if args.manifest else None
    out = _outdir(cfg)
    report = write_recovery_outputs(out, cfg, catalog, posterior, None, truth)
    print(json.dumps(report.to_dict(), indent=2))
    return EXIT_OK


def cmd_baseline(cfg: RunConfig, args) -> int:
    n_sites = args.n_sites if args.n_sites is not None else cfg.catalog.load().n_sites
    sizes = [int(s) for s in args.class_sizes.split(",") if s.strip()]
    rows = metrics.baseline_table(n_sites, args.n_draw, sizes)
    out = _outdir(cfg)
    metrics.write_rows(out / "baseline.csv", rows, ("class_size", "at_least_once", "at_least_twice"))
    print(f"n_sites={n_sites} n_draw={args.n_draw}")
    for r in rows:
        print(f"m={r['class_size']:>3}  P(>=1)={r['at_least_once']:.4f}  P(>=2)={r['at_least_twice']:.4f}")
    return EXIT_OK


COMMANDS = {"generate": cmd_generate, "recover": cmd_recover, "sweep": cmd_sweep,
            "report": cmd_report, "baseline": cmd_baseline}


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.INFO),
                        format="%(asctime)s %(levelname)s %(message)s", stream=sys.stderr)
    try:
        cfg = resolve_config(args)
        return COMMANDS[args.command](cfg, args)
    except (ValueError, CatalogError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except Exception as exc:  # noqa: BLE001
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
