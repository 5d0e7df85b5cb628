"""Command-line entry point: ``raiaudit {validate,audit,simulate,synth,score}``.

Exit codes: 0 success, 1 configuration error, 2 data error, 3 runtime error.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
from dataclasses import dataclass, field
from datetime import date
from pathlib import Path

from . import __version__
from .analysis import (AuditData, GridPoint, SweepConfig, emit_report, estimates_to_csv, multiplier_experiment,
                       pct, rank_correlation, rows_to_csv, run_sweep, subgroup_rows)
from .cohort import load_taxonomy, parse_cohort, serialize_cohort
from .errors import AuditError, ConfigError, DataError
from .matching import BinScheme, estimate_effect, replicate_seed
from .pipeline import feedback_to_csv, parse_scenario, run_feedback
from .rates import parse_survey_aggregate, parse_survey_micro, rate_table_to_csv
from .scores import RAI_ORDER, NormalizationConfig, load_ogrs3, score_cohort
from .synth import (disparity_spec, generate, load_population_spec, micro_to_csv, survey_to_csv)

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_RUNTIME = 0, 1, 2, 3


@dataclass
class RunConfig:
    base_dir: Path
    cohort: Path
    survey_aggregate: Path | None
    survey_micro: Path | None
    taxonomy: Path | None
    ogrs3: Path | None
    output_dir: Path
    year_range: tuple
    master_seed: int
    sweep: SweepConfig
    normalization: NormalizationConfig
    reference_date: date | None = None
    threads: int = 1
    headline: dict = field(default_factory=dict)
    multiplier_race: str = "black"
    multiplier_factors: tuple = (1.0, 2.0, 3.0, 5.0)
    subgroups: bool = True


def _path(base: Path, value, name, required=True):
    if value in (None, ""):
        if required:
            raise ConfigError(f"paths.{name} is required")
        return None
    p = Path(value)
    return p if p.is_absolute() else base / p


def load_run_config(path, overrides=None) -> RunConfig:
    overrides = overrides or {}
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    base = path.resolve().parent
    paths = raw.get("paths", {})
    seed = overrides.get("seed", raw.get("master_seed"))
    if seed is None:
        raise ConfigError("master_seed must be set explicitly (or pass --seed)")
    try:
        years = tuple(int(y) for y in raw["year_range"])
        if len(years) != 2 or years[1] < years[0]:
            raise ValueError
    except (KeyError, TypeError, ValueError):
        raise ConfigError("year_range must be [start, end] with start <= end") from None
    sw = dict(raw.get("sweep", {}))
    n_seeds = int(overrides.get("n_seeds") or raw.get("n_seeds", sw.pop("n_seeds", 5)))
    sw.pop("n_seeds", None)
    allowed = {"lambda_values", "omega_values", "delta_t_values", "bin_schemes", "rate_methods", "comparisons"}
    unknown = set(sw) - allowed
    if unknown:
        raise ConfigError(f"unknown sweep keys: {', '.join(sorted(unknown))}")
    span = years[1] - years[0] + 1
    if "delta_t_values" not in sw:
        sw["delta_t_values"] = [d for d in (5, 10, 15, 20) if d <= span] or [span]
    for dt in sw["delta_t_values"]:
        if not isinstance(dt, int) or not 1 <= dt <= span:
            raise ConfigError(f"delta_t {dt!r} must be an integer in 1..{span}")
    try:
        sweep = SweepConfig(n_seeds=n_seeds, master_seed=int(seed), **sw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad sweep settings: {exc}") from None
    ref = raw.get("reference_date")
    if ref is not None:
        try:
            ref = date.fromisoformat(ref)
        except (TypeError, ValueError):
            raise ConfigError(f"reference_date {ref!r} is not an ISO date") from None
    mult = raw.get("multipliers", {})
    out_dir = overrides.get("output_dir") or paths.get("output_dir") or "out"
    cfg = RunConfig(
        base_dir=base,
        cohort=_path(base, paths.get("cohort"), "cohort"),
        survey_aggregate=_path(base, paths.get("survey_aggregate"), "survey_aggregate", required=False),
        survey_micro=_path(base, paths.get("survey_micro"), "survey_micro", required=False),
        taxonomy=_path(base, paths.get("taxonomy"), "taxonomy", required=False),
        ogrs3=_path(base, paths.get("ogrs3"), "ogrs3", required=False),
        output_dir=Path(out_dir) if "output_dir" in overrides and overrides["output_dir"] else _path(base, out_dir, "output_dir"),
        year_range=years,
        master_seed=int(seed),
        sweep=sweep,
        normalization=NormalizationConfig.from_dict(raw.get("normalization")),
        reference_date=ref,
        threads=int(overrides.get("threads") or raw.get("threads", 1)),
        headline=dict(raw.get("headline", {})),
        multiplier_race=str(mult.get("race", "black")),
        multiplier_factors=tuple(float(f) for f in mult.get("factors", (1, 2, 3, 5))),
        subgroups=bool(raw.get("subgroups", True)),
    )
    if cfg.threads < 1:
        raise ConfigError("threads must be at least 1")
    for name in ("cohort", "survey_aggregate", "survey_micro", "taxonomy", "ogrs3"):
        p = getattr(cfg, name)
        if p is not None and not p.is_file():
            raise ConfigError(f"paths.{name}: file not found: {p}")
    if cfg.survey_aggregate is None:
        raise ConfigError("paths.survey_aggregate is required to estimate arrest rates")
    return cfg


def _read(path: Path) -> bytes:
    try:
        return path.read_bytes()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from None


def load_inputs(cfg: RunConfig):
    """Parse every referenced file; returns (AuditData, taxonomy)."""
    taxonomy = load_taxonomy(cfg.taxonomy)
    coeffs = load_ogrs3(cfg.ogrs3)
    coeffs.check_covers(taxonomy)
    cohort = parse_cohort(_read(cfg.cohort), taxonomy)
    survey = parse_survey_aggregate(_read(cfg.survey_aggregate)) if cfg.survey_aggregate else []
    micro = parse_survey_micro(_read(cfg.survey_micro)) if cfg.survey_micro else []
    data = AuditData(cohort, coeffs, cfg.year_range, cfg.reference_date, cfg.normalization, survey, micro)
    return data, taxonomy


def headline_point(cfg: RunConfig) -> tuple[GridPoint, BinScheme]:
    h = cfg.headline
    span = cfg.year_range[1] - cfg.year_range[0] + 1
    point = GridPoint(h.get("lambda", 1.0), float(h.get("omega", 1.0)), int(h.get("delta_t", min(10, span))),
                      h.get("rate_method", cfg.sweep.rate_methods[0]), cfg.multiplier_race, 1.0)
    if not 1 <= point.delta_t <= span:
        raise ConfigError(f"headline delta_t {point.delta_t} outside 1..{span}")
    scheme = BinScheme.parse(h["bins"]) if "bins" in h else cfg.sweep.bin_schemes[-1]
    return point, scheme


def _write(out_dir: Path, name: str, payload: bytes):
    out_dir.mkdir(parents=True, exist_ok=True)
    tmp = out_dir / (name + ".tmp")
    tmp.write_bytes(payload)
    os.replace(tmp, out_dir / name)


def _baseline_table(estimates_by_comp) -> list:
    lines = ["| Comparison | " + " | ".join(str(r) for r in RAI_ORDER) + " |",
             "|---|" + "---|" * len(RAI_ORDER)]
    for comp, est in estimates_by_comp.items():
        if isinstance(est, Exception):
            lines.append(f"| {comp} | " + " | ".join("NA" for _ in RAI_ORDER) + " |")
            continue
        lines.append(f"| {comp} | " + " | ".join(pct(est[r].ae, est[r].ae_std) for r in RAI_ORDER) + " |")
    return lines


SUBGROUP_COLUMNS = ("sex", "age_band", "comparison", "rai", "baseline_ae", "baseline_std", "simulated_ae",
                    "simulated_std", "difference", "proportional_increase", "n_cells")


def cmd_audit(cfg: RunConfig) -> list:
    """Run the audit and write the five result files; returns written paths."""
    data, _ = load_inputs(cfg)
    point, scheme = headline_point(cfg)
    sweep = cfg.sweep
    n_seeds = sweep.n_seeds

    baseline = {}
    for comp in sweep.comparisons:
        try:
            baseline[comp] = estimate_effect(lambda s: data.base, scheme, comp, "arrests", n_seeds)
        except AuditError as exc:
            baseline[comp] = exc
    baseline_est = [e[r] for e in baseline.values() if not isinstance(e, Exception) for r in RAI_ORDER]

    head_cfg = SweepConfig((point.lam,), (point.omega,), (point.delta_t,), (scheme,), (point.rate_method,),
                           ((cfg.multiplier_race, 1.0),), sweep.comparisons, n_seeds, cfg.master_seed)
    simulated = run_sweep(data, head_cfg)
    sweep_rows = run_sweep(data, sweep, cfg.threads)
    mult_rows = multiplier_experiment(data, head_cfg, cfg.multiplier_factors, cfg.multiplier_race, cfg.threads)

    sub_rows, warnings = [], []
    if cfg.subgroups:
        for comp in sweep.comparisons:
            try:
                rows, warns = subgroup_rows(data, point, scheme, comp, n_seeds, cfg.master_seed)
            except AuditError as exc:
                rows, warns = [], [f"{comp}: {exc}"]
            sub_rows += rows
            warnings += [f"{comp}: {w}" for w in warns]

    # rank correlations at the headline point, first replicate
    crimes = data.table_builder(point)(mix_seed_for(point, cfg.master_seed))
    corr_lines = ["| RAI | vs arrests | vs arrests + simulated crimes |", "|---|---|---|"]
    for j, rai in enumerate(RAI_ORDER):
        try:
            ra = rank_correlation(data.base.scores[:, j], data.base.arrests.sum(axis=1))
            rc = rank_correlation(crimes.scores[:, j], crimes.crimes.sum(axis=1))
        except AuditError:
            ra = rc = None
        corr_lines.append(f"| {rai} | {_corr(ra)} | {_corr(rc)} |")

    report = ["# RAI arrest-rate audit", "",
              f"- cohort size: {len(data.cohort)} (scored: {len(data.base)})",
              f"- years: {cfg.year_range[0]}-{cfg.year_range[1]}, reference date {data.reference_date.isoformat()}",
              f"- master seed: {cfg.master_seed}, seeds per estimate: {n_seeds}",
              f"- headline setting: lambda={point.lam}, omega={point.omega:g}, delta_t={point.delta_t}, "
              f"bins={scheme.label}, rates={point.rate_method}", "",
              "## Baseline (matched on arrests)", ""] + _baseline_table(baseline) + [""]
    report += ["## Simulated (matched on arrests plus simulated crimes)", "",
               emit_report(simulated, "markdown").decode("utf-8"), "## Direction", ""]
    for r in simulated:
        if r.error:
            report.append(f"- {r.comparison} {r.rai}: error: {r.error}")
        else:
            verdict = "exceeds" if r.simulated_ae > r.baseline_ae else "does not exceed"
            report.append(f"- {r.comparison} {r.rai}: simulated AE {verdict} baseline AE "
                          f"({pct(r.simulated_ae)} vs {pct(r.baseline_ae)})")
    # a race multiplier only moves comparisons that involve that race
    affected = [r for r in mult_rows if cfg.multiplier_race in r.comparison]
    report += ["", f"## Arrest-rate multipliers ({cfg.multiplier_race})", "",
               emit_report(affected, "markdown").decode("utf-8") if affected else "- no affected comparison", ""]
    report += ["## Subgroups", ""]
    if sub_rows:
        report += ["| Comparison | Sex | Age | RAI | Baseline AE | Simulated AE | Difference |",
                   "|---|---|---|---|---|---|---|"]
        report += [f"| {r['comparison']} | {r['sex']} | {r['age_band']} | {r['rai']} | "
                   f"{pct(r['baseline_ae'], r['baseline_std'])} | {pct(r['simulated_ae'], r['simulated_std'])} | "
                   f"{pct(r['difference'])} |" for r in sub_rows] + [""]
    report += [f"- warning: {w}" for w in warnings] + [""]
    errors = sum(1 for r in sweep_rows if r.error)
    report += ["## Sweep summary", "", f"- grid rows: {len(sweep_rows)}, rows with errors: {errors}"]
    for rai in RAI_ORDER:
        diffs = [r.difference for r in sweep_rows if r.rai == str(rai) and not r.error and not math.isnan(r.difference)]
        if diffs:
            report.append(f"- {rai}: difference in effect ranges {pct(min(diffs))} to {pct(max(diffs))}")
    report += ["", "## Rank correlations (scores vs counts)", ""] + corr_lines + [""]

    out = cfg.output_dir
    files = {
        "baseline.csv": estimates_to_csv(baseline_est),
        "simulated.csv": emit_report(simulated, "csv"),
        "sweep.csv": emit_report(sweep_rows + [r for r in mult_rows if r.multiplier != 1.0], "csv"),
        "subgroups.csv": rows_to_csv(sub_rows, SUBGROUP_COLUMNS),
        "report.md": "\n".join(report).encode("utf-8"),
    }
    for name, payload in files.items():
        _write(out, name, payload)
    return [out / n for n in files]


def mix_seed_for(point: GridPoint, master_seed: int) -> int:
    return replicate_seed(point.augmentation_seed(master_seed), 0)


def _corr(v) -> str:
    return "NA" if v is None else f"{v:.3f}"


def cmd_validate(cfg: RunConfig) -> list:
    load_inputs(cfg)
    headline_point(cfg)
    return []


SCORE_COLUMNS = ("person_id", "reference_date") + tuple(f"{r}_raw" for r in RAI_ORDER) + tuple(
    f"{r}_normalized" for r in RAI_ORDER)


def cmd_score(cfg: RunConfig) -> Path:
    taxonomy = load_taxonomy(cfg.taxonomy)
    coeffs = load_ogrs3(cfg.ogrs3)
    cohort = parse_cohort(_read(cfg.cohort), taxonomy)
    cutoff = cfg.reference_date or date(cfg.year_range[1], 12, 31)
    bundles = score_cohort(cohort, cutoff, coeffs, cfg.normalization)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SCORE_COLUMNS)
    for pid, b in bundles.items():
        w.writerow([pid, b.reference_date.isoformat()] + [repr(float(b.raw[r])) for r in RAI_ORDER]
                   + [repr(float(b.normalized[r])) for r in RAI_ORDER])
    _write(cfg.output_dir, "scores.csv", buf.getvalue().encode("utf-8"))
    return cfg.output_dir / "scores.csv"


def cmd_simulate(scenario_path, output_dir: Path) -> Path:
    try:
        raw = json.loads(Path(scenario_path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read scenario {scenario_path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"scenario is not valid JSON: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError("scenario must be a JSON object")
    records = run_feedback(parse_scenario(raw))
    _write(output_dir, "feedback.csv", feedback_to_csv(records))
    return output_dir / "feedback.csv"


def cmd_synth(spec_path, output_dir: Path, size=None, seed=None) -> list:
    if spec_path:
        spec = load_population_spec(spec_path)
    else:
        spec = disparity_spec(size_per_group=size or 1000, seed=2024 if seed is None else seed, hispanic_size=(size or 1000) // 2)
    result = generate(spec)
    files = {
        "cohort.csv": serialize_cohort(result.observed, include_observed=False),
        "ground_truth.csv": serialize_cohort(result.ground_truth, include_observed=True),
        "survey_aggregate.csv": survey_to_csv(result.survey_rows),
        "survey_micro.csv": micro_to_csv(result.micro_rows),
        "true_rates.csv": rate_table_to_csv(result.rates),
    }
    span = spec.year_range[1] - spec.year_range[0] + 1
    config = {
        "paths": {"cohort": "cohort.csv", "survey_aggregate": "survey_aggregate.csv",
                  "survey_micro": "survey_micro.csv", "output_dir": "audit"},
        "year_range": list(spec.year_range),
        "master_seed": spec.seed,
        "n_seeds": 3,
        "sweep": {"lambda_values": [0.5, 1.0, "estimated"], "omega_values": [1.0, 5.0],
                  "delta_t_values": [d for d in (5, 10) if d <= span] or [span],
                  "bin_schemes": ["50+"], "rate_methods": ["averaging", "regression"],
                  "comparisons": ["black-white", "hispanic-white"]},
        "headline": {"lambda": 1.0, "omega": 1.0, "delta_t": min(5, span), "bins": "50+",
                     "rate_method": "averaging"},
    }
    files["audit_config.json"] = (json.dumps(config, indent=2, sort_keys=True) + "\n").encode("utf-8")
    for name, payload in files.items():
        _write(output_dir, name, payload)
    return [output_dir / n for n in files]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="raiaudit", description="Audit risk assessment instruments for arrest-rate bias.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config=True):
        if config:
            p.add_argument("config", help="run configuration JSON")
        p.add_argument("--seed", type=int, help="override master_seed")
        p.add_argument("--threads", type=int, help="worker processes for the sweep")
        p.add_argument("--output-dir", help="override the output directory")
        p.add_argument("--n-seeds", type=int, help="override seeds per estimate")

    common(sub.add_parser("validate", help="check a config and the files it references"))
    common(sub.add_parser("audit", help="run baseline, simulated, sweep and subgroup analyses"))
    common(sub.add_parser("score", help="score a cohort to CSV"))
    p = sub.add_parser("simulate", help="run the predictive-policing feedback scenario")
    p.add_argument("scenario", help="scenario JSON")
    p.add_argument("--output-dir", default=".", help="where feedback.csv is written")
    p = sub.add_parser("synth", help="generate a synthetic cohort and matching audit config")
    p.add_argument("spec", nargs="?", help="population spec JSON (default: built-in 2:1 disparity population)")
    p.add_argument("--output-dir", default="synthetic")
    p.add_argument("--size", type=int, help="people per group for the built-in population")
    p.add_argument("--seed", type=int, help="seed for the built-in population")
    return parser


def _overrides(args) -> dict:
    return {"seed": args.seed, "threads": args.threads, "output_dir": args.output_dir, "n_seeds": args.n_seeds}


def _fail(code, exc, kind):
    print(json.dumps({"status": "error", "kind": kind, "type": type(exc).__name__, "message": str(exc)},
                     sort_keys=True), file=sys.stderr)
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "simulate":
            print(cmd_simulate(args.scenario, Path(args.output_dir)))
        elif args.command == "synth":
            for p in cmd_synth(args.spec, Path(args.output_dir), args.size, args.seed):
                print(p)
        else:
            overrides = {k: v for k, v in _overrides(args).items() if v is not None}
            cfg = load_run_config(args.config, overrides)
            if args.command == "validate":
                cmd_validate(cfg)
                print("ok")
            elif args.command == "audit":
                for p in cmd_audit(cfg):
                    print(p)
            elif args.command == "score":
                print(cmd_score(cfg))
    except ConfigError as exc:
        return _fail(EXIT_CONFIG, exc, "config")
    except DataError as exc:
        return _fail(EXIT_DATA, exc, "data")
    except Exception as exc:  # noqa: BLE001 - every other failure is a runtime error
        return _fail(EXIT_RUNTIME, exc, "runtime")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
