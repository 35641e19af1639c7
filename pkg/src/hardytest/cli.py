"""Command-line entry point for reproducible batch runs.

Subcommands: ``optimize``, ``simulate``, ``analyze``, ``tomography`` and
``spacetime``. A single JSON config file carries one section per
subsystem ("simulation", "analysis", "spacetime"); command-line flags
override config values, which override built-in defaults. Every report
embeds the tool version, a hash of the effective configuration and the
seed, so a run can be reproduced from its report alone.

Exit codes: 0 success, 2 configuration or domain error, 3 I/O error,
4 data-format error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import (
    DEFAULT_BLOCK_SIZE,
    hardy_value_from_counts,
    nosignaling_ztests,
    pbr_pvalue,
)
from .design import (
    HardyReport,
    ImperfectionModel,
    ideal_hardy_probabilities,
    hardy_value_from_distribution,
    max_hardy_value,
    optimal_design,
    predict_distribution,
)
from .errors import DataFormatError, DomainError, HardyTestError, ValidationError
from .quantum import make_state
from .records import (
    CountsTable,
    read_counts_json,
    read_records_csv,
    write_counts_json,
)
from .simulate import SimulationConfig, simulate
from .spacetime import SpacetimeConfig, full_report
from .tomography import read_tomo_json, reconstruct

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_FORMAT = 4


def _config_hash(payload: dict) -> str:
    canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()[:16]


def _load_config(path: str | None) -> dict:
    if path is None:
        return {}
    with open(path, "r", encoding="utf-8") as handle:
        try:
            payload = json.load(handle)
        except json.JSONDecodeError as exc:
            raise DataFormatError(f"config is not valid JSON: {exc}", exc.lineno) from exc
    if not isinstance(payload, dict):
        raise DataFormatError("config root must be a JSON object")
    return payload


def _emit(report: dict, out_dir: str | None, filename: str) -> None:
    text = json.dumps(report, indent=2, sort_keys=True)
    print(text)
    if out_dir is not None:
        directory = Path(out_dir)
        directory.mkdir(parents=True, exist_ok=True)
        (directory / filename).write_text(text + "\n", encoding="utf-8")


def _meta(effective_config: dict, seed: int | None = None) -> dict:
    meta = {"version": __version__, "config_hash": _config_hash(effective_config)}
    if seed is not None:
        meta["seed"] = seed
    return meta


def _imperfections_from_section(section: dict) -> ImperfectionModel:
    kwargs = {}
    for name in ("visibility", "dark_prob", "mean_pairs"):
        if name in section:
            kwargs[name] = float(section[name])
    if "eta" in section:
        return ImperfectionModel.symmetric(float(section["eta"]), **kwargs)
    try:
        etas = {k: float(section[k]) for k in ("eta_a0", "eta_a1", "eta_b0", "eta_b1")}
    except KeyError as exc:
        raise ValidationError(
            "simulation config needs either 'eta' or all four per-path efficiencies"
        ) from exc
    return ImperfectionModel(**etas, **kwargs)


def _simulation_config(section: dict, args) -> SimulationConfig:
    merged = dict(section)
    if args.seed is not None:
        merged["seed"] = args.seed
    if getattr(args, "trials", None) is not None:
        merged["n_trials"] = args.trials
    imperfections = _imperfections_from_section(merged)
    if "design_eta" in merged:
        design_eta = float(merged["design_eta"])
    elif "eta" in merged:
        design_eta = float(merged["eta"])
    else:
        design_eta = float(
            np.mean([merged[k] for k in ("eta_a0", "eta_a1", "eta_b0", "eta_b1")])
        )
    if "n_trials" not in merged:
        raise ValidationError("simulation config must set n_trials")
    if "seed" not in merged:
        raise ValidationError("simulation config must set a seed (--seed or config)")
    kwargs = {}
    if "setting_weights" in merged:
        kwargs["setting_weights"] = np.asarray(merged["setting_weights"], dtype=float)
    return SimulationConfig(
        design=optimal_design(design_eta),
        imperfections=imperfections,
        n_trials=int(merged["n_trials"]),
        seed=int(merged["seed"]),
        pair_mode=str(merged.get("pair_mode", "poisson")),
        n_partitions=int(merged.get("n_partitions", 1)),
        **kwargs,
    )


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_optimize(args, config: dict) -> int:
    eta = args.eta
    design = optimal_design(eta)
    p00, p0u, pu0 = ideal_hardy_probabilities(design.theta, eta)
    row = {
        "eta": eta,
        "theta": design.theta,
        "theta_a1": design.theta_a1,
        "theta_a2": design.theta_a2,
        "theta_b1": design.theta_b1,
        "theta_b2": design.theta_b2,
        "p00_a2b2": 0.0,
        "p01_a1b2": 0.0,
        "p10_a2b1": 0.0,
        "p00_a1b1": p00,
        "p0u_a1b2": p0u,
        "pu0_a2b1": pu0,
        "max_hardy_value": max_hardy_value(eta),
    }
    if args.fidelity is not None:
        visibility = (4.0 * args.fidelity - 1.0) / 3.0
        if not 0.0 <= visibility <= 1.0:
            raise DomainError(f"fidelity {args.fidelity!r} maps outside visibility [0, 1]")
        section = config.get("simulation", {})
        mean_pairs = float(section.get("mean_pairs", ImperfectionModel.symmetric(eta).mean_pairs))
        # the fidelity-curve prediction is dark-count free by convention
        model = ImperfectionModel.symmetric(
            eta, visibility=visibility, dark_prob=0.0, mean_pairs=mean_pairs
        )
        dist = predict_distribution(design, model, pair_mode="poisson")
        row["fidelity"] = args.fidelity
        row["visibility"] = visibility
        row["predicted_hardy_value"] = hardy_value_from_distribution(dist).hardy_value

    if args.format == "csv":
        header = ",".join(row)
        values = ",".join(f"{v:.9g}" for v in row.values())
        print(header)
        print(values)
        if args.out is not None:
            directory = Path(args.out)
            directory.mkdir(parents=True, exist_ok=True)
            (directory / "optimize.csv").write_text(f"{header}\n{values}\n", encoding="utf-8")
    else:
        report = {**row, "meta": _meta({"eta": eta, "fidelity": args.fidelity})}
        _emit(report, args.out, "optimize.json")
    return EXIT_OK


def cmd_simulate(args, config: dict) -> int:
    section = config.get("simulation", {})
    sim_config = _simulation_config(section, args)
    out_dir = Path(args.out) if args.out is not None else Path.cwd()
    out_dir.mkdir(parents=True, exist_ok=True)
    record_path = (out_dir / "records.csv") if args.records else None
    result = simulate(sim_config, workers=args.workers, record_path=record_path)
    write_counts_json(out_dir / "counts.json", result.counts)

    report_config = {
        "simulation": {**section, "seed": sim_config.seed, "n_trials": sim_config.n_trials}
    }
    hardy = hardy_value_from_counts(result.counts)
    report = {
        "hardy": hardy.as_dict(),
        "n_trials": sim_config.n_trials,
        "stats": {
            "vacuum_trials": result.stats.vacuum_trials,
            "multi_pair_trials": result.stats.multi_pair_trials,
            "double_clicks_alice": result.stats.double_clicks_alice,
            "double_clicks_bob": result.stats.double_clicks_bob,
        },
        "outputs": {
            "counts": "counts.json",
            "records": "records.csv" if record_path else None,
        },
        "meta": _meta(report_config, seed=sim_config.seed),
    }
    _emit(report, args.out, "simulate_report.json")
    return EXIT_OK


def cmd_analyze(args, config: dict) -> int:
    section = config.get("analysis", {})
    block_size = int(args.block_size or section.get("block_size", DEFAULT_BLOCK_SIZE))
    sigma_method = args.sigma_method or section.get("sigma_method", "binomial")
    prediction = section.get("prediction", "cumulative")

    if (args.records is None) == (args.counts is None):
        raise ValidationError("analyze needs exactly one of --records or --counts")

    if args.records is not None:
        records = read_records_csv(args.records)
        counts = CountsTable.from_records(records)
        pbr = pbr_pvalue(records, block_size=block_size, prediction=prediction)
    else:
        counts = read_counts_json(args.counts)
        # counts carry no trial order; the whole table is one block (R = 1)
        pbr = pbr_pvalue([counts])

    hardy = hardy_value_from_counts(counts, sigma_method=sigma_method)
    report = {
        "hardy": hardy.as_dict(),
        "log10_p_bound": pbr.log10_p_bound,
        "blocks": pbr.blocks,
        "block_size": pbr.block_size,
        "ztests": [z.as_dict() for z in nosignaling_ztests(counts)],
        "meta": _meta(
            {
                "analysis": {
                    "block_size": block_size,
                    "sigma_method": sigma_method,
                    "prediction": prediction,
                },
                "input": str(args.records or args.counts),
            },
            seed=args.seed,
        ),
    }
    _emit(report, args.out, "analysis_report.json")
    return EXIT_OK


def cmd_tomography(args, config: dict) -> int:
    counts = read_tomo_json(args.counts)
    target = make_state(args.target_theta) if args.target_theta is not None else None
    rho, fidelity = reconstruct(counts, target=target)
    report = {
        "rho_real": rho.entries.real.tolist(),
        "rho_imag": rho.entries.imag.tolist(),
        "fidelity": fidelity,
        "target_theta": args.target_theta,
        "meta": _meta({"input": str(args.counts), "target_theta": args.target_theta}),
    }
    _emit(report, args.out, "tomography_report.json")
    return EXIT_OK


def cmd_spacetime(args, config: dict) -> int:
    section = config.get("spacetime", {})
    cfg = SpacetimeConfig.from_dict(section)
    report = full_report(cfg)
    report["meta"] = _meta({"spacetime": section})
    _emit(report, args.out, "spacetime_report.json")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser and dispatch
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hardytest",
        description="Design, simulate and analyze loophole-free Hardy tests.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON config file with per-subsystem sections")
        p.add_argument("--seed", type=int, default=None, help="seed override")
        p.add_argument("--out", default=None, help="directory for report/output files")
        p.add_argument("--workers", type=int, default=1,
                       help="worker threads (never affects results)")

    p_opt = sub.add_parser("optimize", help="optimal design for a detection efficiency")
    common(p_opt)
    p_opt.add_argument("--eta", type=float, required=True, help="detection efficiency")
    p_opt.add_argument("--fidelity", type=float, default=None,
                       help="also predict the Hardy value at this state fidelity")
    p_opt.add_argument("--format", choices=("json", "csv"), default="json")
    p_opt.set_defaults(func=cmd_optimize)

    p_sim = sub.add_parser("simulate", help="run the Monte Carlo engine")
    common(p_sim)
    p_sim.add_argument("--trials", type=int, default=None, help="n_trials override")
    p_sim.add_argument("--records", action="store_true",
                       help="also write the per-trial record stream")
    p_sim.set_defaults(func=cmd_simulate)

    p_ana = sub.add_parser("analyze", help="Hardy value, PBR bound and Z-tests")
    common(p_ana)
    p_ana.add_argument("--records", default=None, help="trial record CSV")
    p_ana.add_argument("--counts", default=None, help="counts JSON")
    p_ana.add_argument("--block-size", type=int, default=None)
    p_ana.add_argument("--sigma-method", choices=("binomial", "bootstrap"), default=None)
    p_ana.set_defaults(func=cmd_analyze)

    p_tomo = sub.add_parser("tomography", help="maximum-likelihood state reconstruction")
    common(p_tomo)
    p_tomo.add_argument("--counts", required=True, help="36-basis counts JSON")
    p_tomo.add_argument("--target-theta", type=float, default=None,
                        help="report fidelity to the design state at this angle")
    p_tomo.set_defaults(func=cmd_tomography)

    p_st = sub.add_parser("spacetime", help="space-like separation margins")
    common(p_st)
    p_st.set_defaults(func=cmd_spacetime)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = _load_config(args.config)
        return args.func(args, config)
    except DataFormatError as exc:
        location = f" (line {exc.line_number})" if exc.line_number else ""
        print(f"error: {exc}{location}", file=sys.stderr)
        return EXIT_FORMAT
    except (DomainError, ValidationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except HardyTestError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
