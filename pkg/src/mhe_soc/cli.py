"""Command-line entry point: simulate, estimate, variability, benchmark."""
from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import benchmark, ecm, parallel, plant
from .config import MODES, RunConfig
from .exceptions import ConfigError, NonFiniteObjective, NonFiniteState
from .mhe import MovingHorizonEstimator
from .record import run_estimator
from .window import variability_series

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2


def _dump_json(data: dict, path: Path) -> None:
    with open(path, "w") as fh:
        json.dump(data, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _load_config(args) -> RunConfig:
    """Config file (or defaults) with command-line overrides applied before validation."""
    if args.config:
        path = Path(args.config)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        try:
            document = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: not valid JSON ({exc})") from exc
        base_dir = path.parent
    else:
        document, base_dir = {}, None
    if not isinstance(document, dict):
        raise ConfigError("config must be a JSON object")
    if getattr(args, "seed", None) is not None:
        document.setdefault("plant", {}).setdefault("noise", {})["seed"] = args.seed
    if getattr(args, "horizon", None) is not None:
        document.setdefault("plant", {})["horizon_s"] = args.horizon
    if getattr(args, "mode", None) is not None:
        document.setdefault("estimator", {})["mode"] = args.mode
    if args.no_timing:
        document.setdefault("output", {})["record_timing"] = False
    return RunConfig(document, base_dir=base_dir)


def _out_dir(args, cfg: RunConfig) -> Path:
    out = Path(args.out_dir) if args.out_dir else Path(cfg.data["output"]["dir"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _truth(args, cfg: RunConfig) -> plant.TruthLog:
    if getattr(args, "truth", None):
        path = Path(args.truth)
        if not path.is_file():
            raise ConfigError(f"truth log not found: {path}")
        return plant.TruthLog.from_csv(path)
    params = cfg.plant_params()
    p = cfg.data["plant"]
    return plant.simulate(params, cfg.profile(params), cfg.noise(), z0=p["z0"], horizon_s=p["horizon_s"])


def _truth_params(truth: plant.TruthLog, cfg: RunConfig) -> ecm.EcmParameters:
    """Parameters behind a truth log, used to build the default perturbed initial guess."""
    if "params" in truth.metadata:
        return ecm.EcmParameters.from_dict(truth.metadata["params"])
    return cfg.plant_params()


def _artifact_meta(cfg: RunConfig, truth: plant.TruthLog) -> dict:
    meta = {"config_sha256": cfg.hash(), "config": cfg.data}
    for key in ("seed", "rng", "noise_mean", "noise_std", "params_sha256"):
        if key in truth.metadata:
            meta[key] = truth.metadata[key]
    return meta


def cmd_simulate(args) -> int:
    cfg = _load_config(args)
    out = _out_dir(args, cfg)
    truth = _truth(args, cfg)
    truth.metadata["config_sha256"] = cfg.hash()
    truth.write(out / "truth.csv")
    print(f"wrote {out / 'truth.csv'} ({len(truth)} samples, clamped={truth.clamped})")
    return EXIT_OK


def cmd_estimate(args) -> int:
    cfg = _load_config(args)
    out = _out_dir(args, cfg)
    truth = _truth(args, cfg)
    guess = cfg.guess_params(_truth_params(truth, cfg))
    z0 = cfg.data["estimator"]["z0_guess"]
    timing = cfg.record_timing
    meta = _artifact_meta(cfg, truth)
    if cfg.data["estimator"]["mode"] == "parallel":
        res = parallel.run(truth, guess, cfg.parallel_config(), z0=z0)
        res.fast.to_csv(out / "estimate_fast.csv", timing)
        res.slow.to_csv(out / "estimate_slow.csv", timing)
        summary = {**meta, **res.summary(timing)}
        if timing:
            summary["wall_time_s"] = {"fast": res.fast.step_times().tolist(), "slow": res.slow.step_times().tolist()}
        _dump_json(summary, out / "summary.json")
        print(f"fast RMSE_Z={summary['fast']['rmse_Z']:.5f}  slow RMSE_Z={summary['slow']['rmse_Z']:.5f}")
        return EXIT_OK
    est = MovingHorizonEstimator(guess, cfg.mhe_config(), z0=z0)
    rec = run_estimator(truth, est, label=cfg.data["estimator"]["mode"])
    rec.to_csv(out / "estimate.csv", timing)
    summary = {**meta, **rec.summary(timing)}
    _dump_json(summary, out / "summary.json")
    print(f"RMSE_Z={summary['rmse_Z']:.5f}  RMSE_Vb={summary['rmse_Vb']:.5f}")
    return EXIT_OK


def _parse_nts(text: str) -> list[int]:
    try:
        values = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"--nts expects comma-separated integers, got {text!r}") from None
    if not values or min(values) < 1:
        raise ConfigError("--nts values must be positive integers")
    return values


def cmd_variability(args) -> int:
    nts = _parse_nts(args.nts)
    if args.window < 1:
        raise ConfigError("--window must be >= 1")
    cfg = _load_config(args)
    out = _out_dir(args, cfg)
    truth = _truth(args, cfg)
    y = truth.Vb_noisy if args.noisy else truth.Vb_clean
    start = args.window * max(nts)
    if start >= len(y):
        raise ConfigError(f"trace of {len(y)} samples is too short for N={args.window}, n_ts={max(nts)}")
    means = {}
    for n_ts in nts:
        series = variability_series(y, args.window, n_ts, start)
        with open(out / f"variability_nts{n_ts}.csv", "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["t", "delta_y"])
            for t, d in zip(truth.t[start:], series[start:]):
                writer.writerow([repr(float(t)), repr(float(d))])
        means[str(n_ts)] = float(np.mean(series[start:]))
        print(f"n_ts={n_ts:>3}  mean delta_y={means[str(n_ts)]:.6g}")
    _dump_json({**_artifact_meta(cfg, truth), "N": args.window, "signal": "noisy" if args.noisy else "clean",
                "from_index": start, "mean_delta_y": means}, out / "variability_summary.json")
    return EXIT_OK


def cmd_benchmark(args) -> int:
    cfg = _load_config(args)
    out = _out_dir(args, cfg)
    rows = benchmark.suite(args.suite)
    truth = _truth(args, cfg)
    guess = cfg.guess_params(_truth_params(truth, cfg))
    timing = cfg.record_timing
    records = benchmark.run_suite(rows, truth, guess, z0=cfg.data["estimator"]["z0_guess"], timing=timing)
    table = benchmark.report_rows(records, timing)
    meta = {**_artifact_meta(cfg, truth), "suite": args.suite}
    if timing:
        meta["machine"] = benchmark.machine_profile()
    benchmark.write_report(table, out / "benchmark.csv", out / "benchmark.json", meta)
    for row in table:
        wall = "-" if row["mean_wall_time_s"] is None else f"{1e3 * row['mean_wall_time_s']:.3f} ms"
        print(f"{row['label']:<20} RMSE_Z={row['rmse_Z']:.5f}  mean step {wall}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mhe-soc", description="Moving horizon SOC estimation experiments.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, truth=True):
        p.add_argument("--config", help="JSON run configuration")
        p.add_argument("--out-dir", help="output directory (overrides output.dir)")
        p.add_argument("--seed", type=int, help="noise seed (overrides plant.noise.seed)")
        p.add_argument("--horizon", type=float, help="simulation horizon in seconds")
        p.add_argument("--no-timing", action="store_true", help="write zero wall times so outputs are byte-stable")
        if truth:
            p.add_argument("--truth", help="existing truth CSV; simulated from the config if omitted")

    p = sub.add_parser("simulate", help="simulate the plant and write a truth log")
    common(p, truth=False)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("estimate", help="run one estimator over a truth log")
    common(p)
    p.add_argument("--mode", choices=MODES, help="estimator layout (overrides estimator.mode)")
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("variability", help="signal variability of the voltage trace per down-sampling factor")
    common(p)
    p.add_argument("--nts", default="1,5,10,20", help="comma-separated down-sampling factors")
    p.add_argument("--window", type=int, default=30, help="buffer length N")
    p.add_argument("--noisy", action="store_true", help="use the noisy voltage instead of the clean one")
    p.set_defaults(func=cmd_variability)

    p = sub.add_parser("benchmark", help="run a benchmark suite")
    common(p)
    p.add_argument("--suite", default="paper-tables", choices=benchmark.SUITES)
    p.set_defaults(func=cmd_benchmark)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NonFiniteState, NonFiniteObjective, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValueError, OSError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
