"""Command-line front end: presets, config handling, dataset serialization
and report emission.

Subcommands:
    simulate   write a raw pulse dataset (CSV)
    analyze    run the receiver pipeline + witness on a dataset
    bounds     tabulate tolerable-variance threshold curves
    witness    simulate + analyze in one step

Exit codes: 0 success, 2 config error, 3 data error.  Set ``CVQKD_LOG`` to
a logging level name to change verbosity.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import dataclass

import numpy as np

from cvqkd.channel import KIND_CAL, KIND_SIG, PULSE_DTYPE, simulate_blocked_signal, simulate_frames
from cvqkd.params import ChannelModel, ParameterError, ProtocolParams
from cvqkd.receiver import apply_gains, calibrate, demodulate_frames, estimate_moments
from cvqkd.witness import tolerable_variance_threshold, witness_decision

log = logging.getLogger("cvqkd")

CSV_HEADER = "frame,slot,kind,bit,s2,s3,lo_monitor"
KIND_NAMES = {KIND_CAL: "cal", KIND_SIG: "sig"}
KIND_CODES = {"cal": KIND_CAL, "sig": KIND_SIG}

PRESETS = {
    "back_to_back": {"eta_channel": 1.0, "eta_detector": 0.70},
    "fiber_2km": {"eta_channel": 0.64, "eta_detector": 0.70},
    "custom": {},
}

PROTOCOL_KEYS = {"alpha", "alpha_cal", "n_lo", "frame_cal_pulses",
                 "frame_sig_pulses", "block_size", "pulse_rate_hz"}
CHANNEL_KEYS = {"eta_channel", "eta_detector", "excess_noise",
                "phase_drift_std_per_frame", "lo_relative_std",
                "electronic_noise_var", "quadrature_skew"}
RUN_KEYS = {"preset", "n_frames", "seed", "out", "cal_pulses"}
ALL_KEYS = PROTOCOL_KEYS | CHANNEL_KEYS | RUN_KEYS


class ConfigError(ValueError):
    pass


class DataError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    preset: str
    protocol: ProtocolParams
    channel: ChannelModel
    n_frames: int
    seed: int
    out: str | None = None
    cal_pulses: int = 100_000

    def __post_init__(self):
        if self.preset not in PRESETS:
            raise ConfigError(f"unknown preset {self.preset!r}")
        if self.n_frames < 1:
            raise ConfigError(f"n_frames must be >= 1, got {self.n_frames}")
        if self.seed < 0:
            raise ConfigError(f"seed must be >= 0, got {self.seed}")


def make_config(raw: dict) -> RunConfig:
    """Validate a flat key-value mapping and build a RunConfig.

    Unknown keys are rejected; a non-custom preset owns the transmission
    values and conflicts with explicit eta settings.
    """
    unknown = set(raw) - ALL_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    preset = raw.get("preset", "custom")
    if preset not in PRESETS:
        raise ConfigError(f"unknown preset {preset!r}")
    forced = PRESETS[preset]
    for key, val in forced.items():
        if key in raw and raw[key] != val:
            raise ConfigError(
                f"preset {preset!r} fixes {key}={val}, config says {raw[key]}")

    proto_kwargs = {k: raw[k] for k in PROTOCOL_KEYS if k in raw}
    chan_kwargs = {k: raw[k] for k in CHANNEL_KEYS if k in raw}
    chan_kwargs.update(forced)
    try:
        protocol = ProtocolParams(**proto_kwargs)
        channel = ChannelModel(**chan_kwargs)
    except (ParameterError, TypeError) as exc:
        raise ConfigError(str(exc)) from exc
    return RunConfig(preset=preset, protocol=protocol, channel=channel,
                     n_frames=int(raw.get("n_frames", 1000)),
                     seed=int(raw.get("seed", 0)),
                     out=raw.get("out"),
                     cal_pulses=int(raw.get("cal_pulses", 100_000)))


def load_config(path: str) -> dict:
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON in {path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    return raw


def _fmt(x: float) -> str:
    return f"{x:.9g}"


def write_pulses(path: str, records: np.ndarray) -> None:
    with open(path, "w") as fh:
        fh.write(CSV_HEADER + "\n")
        for r in records:
            fh.write(f"{r['frame']},{r['slot']},{KIND_NAMES[r['kind']]},"
                     f"{r['bit']},{_fmt(r['s2'])},{_fmt(r['s3'])},"
                     f"{_fmt(r['lo_monitor'])}\n")


def read_pulses(path: str) -> np.ndarray:
    try:
        fh = open(path)
    except OSError as exc:
        raise DataError(f"cannot read dataset {path}: {exc}") from exc
    with fh:
        header = fh.readline().strip()
        if header != CSV_HEADER:
            raise DataError(f"row 1: bad header {header!r}, "
                            f"expected {CSV_HEADER!r}")
        rows = []
        for lineno, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != 7:
                raise DataError(f"row {lineno}: expected 7 fields, "
                                f"got {len(parts)}")
            try:
                kind = KIND_CODES[parts[2]]
                rows.append((int(parts[0]), int(parts[1]), kind,
                             int(parts[3]), float(parts[4]),
                             float(parts[5]), float(parts[6])))
            except (KeyError, ValueError) as exc:
                raise DataError(f"row {lineno}: {exc}") from exc
    if not rows:
        raise DataError("dataset contains no pulse rows")
    return np.array(rows, dtype=PULSE_DTYPE)


def run_simulate(cfg: RunConfig, out: str) -> np.ndarray:
    records = simulate_frames(cfg.protocol, cfg.channel, cfg.n_frames,
                              cfg.seed)
    write_pulses(out, records)
    lo = records["lo_monitor"]
    print(f"wrote {len(records)} pulses ({cfg.n_frames} frames) to {out}")
    print(f"LO monitor: mean {np.mean(lo):.6g} photons/pulse, "
          f"relative std {np.std(lo) / np.mean(lo):.3g}")
    return records


def analyze_records(records: np.ndarray, cfg: RunConfig) -> dict:
    """Receiver chain + witness on in-memory records; returns the report."""
    p, ch = cfg.protocol, cfg.channel
    blocked = simulate_blocked_signal(p, ch, cfg.cal_pulses, cfg.seed)
    cal = calibrate(blocked)
    calibrated = apply_gains(records, cal)
    signal, phases = demodulate_frames(calibrated, p.frame_size,
                                       p.frame_cal_pulses)
    moments = estimate_moments(signal, cal, p.block_size)
    verdict = witness_decision(moments, p.alpha, cal=cal)

    states = []
    for k, sm in enumerate(moments.states):
        states.append({
            "mean_s2": sm.mean_s2, "mean_s3": sm.mean_s3,
            "intrinsic_var_s2": sm.var_s2, "intrinsic_var_s3": sm.var_s3,
            "measured_mean_s2": float(moments.meas_means[k, 0]),
            "measured_mean_s3": float(moments.meas_means[k, 1]),
            "measured_var_s2": float(moments.meas_vars[k, 0]),
            "measured_var_s3": float(moments.meas_vars[k, 1]),
            "cross_sym": sm.cross_sym,
            "s1_lower_norm": sm.s1_lower_norm,
        })
    return {
        "preset": cfg.preset,
        "alpha": p.alpha,
        "n_pulses_used": moments.n_pulses_used,
        "n_frames_analyzed": int(len(phases)),
        "lo_mean": moments.lo_mean,
        "lo_relative_std": moments.lo_std / moments.lo_mean,
        "gain_s2": cal.gain_s2,
        "gain_s3": cal.gain_s3,
        "snl_reduction_worst": cal.snl_reduction_worst,
        "states": states,
        "eta_hat": verdict.eta_hat,
        "excess_hat": verdict.excess_hat,
        "measured_variance": verdict.measured_variance,
        "bound_variance": verdict.bound_variance,
        "snl_shift": verdict.snl_shift,
        "margin_3sigma": verdict.margin_3sigma,
        "feasibility_residual": verdict.feasibility_residual,
        "certifiable": verdict.certifiable,
        "entangled": verdict.entangled,
    }


def write_report(report: dict, out: str | None) -> None:
    text = json.dumps(report, indent=2, sort_keys=True)
    if out:
        with open(out, "w") as fh:
            fh.write(text + "\n")
        print(f"wrote report to {out}")
    print(f"eta_hat={report['eta_hat']:.4f} "
          f"excess_hat={report['excess_hat']:.4f} "
          f"measured_variance={report['measured_variance']:.4f} "
          f"bound={report['bound_variance']:.4f} "
          f"entangled={report['entangled']}")


def run_bounds(alphas, etas, n_lo: float, out: str | None) -> list[tuple]:
    rows = []
    lines = ["alpha,eta,threshold_variance"]
    for eta in etas:
        for alpha in alphas:
            thr = tolerable_variance_threshold(alpha, eta, n_lo)
            rows.append((alpha, eta, thr))
            lines.append(f"{_fmt(alpha)},{_fmt(eta)},{_fmt(thr)}")
            log.info("threshold alpha=%g eta=%g -> %g", alpha, eta, thr)
    text = "\n".join(lines) + "\n"
    if out:
        with open(out, "w") as fh:
            fh.write(text)
        print(f"wrote {len(rows)} thresholds to {out}")
    else:
        sys.stdout.write(text)
    return rows


def _parse_float_list(text: str) -> list[float]:
    try:
        vals = [float(t) for t in text.split(",") if t.strip()]
    except ValueError as exc:
        raise ConfigError(f"bad number list {text!r}") from exc
    if not vals:
        raise ConfigError(f"empty number list {text!r}")
    return vals


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cvqkd",
        description="Two-state CV-QKD link simulation and entanglement "
                    "witnessing")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="JSON config file")
        sp.add_argument("--preset", choices=sorted(PRESETS))
        sp.add_argument("--alpha", type=float)
        sp.add_argument("--frames", type=int)
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out")

    sp = sub.add_parser("simulate", help="write a raw pulse dataset")
    common(sp)

    sp = sub.add_parser("analyze", help="analyze an existing dataset")
    common(sp)
    sp.add_argument("dataset", help="pulse CSV written by 'simulate'")

    sp = sub.add_parser("witness", help="simulate + analyze in one step")
    common(sp)
    sp.add_argument("--dataset-out", help="also keep the raw dataset")

    sp = sub.add_parser("bounds", help="tabulate threshold curves")
    sp.add_argument("--alphas", default="0.1,0.2,0.3,0.4,0.5,0.6")
    sp.add_argument("--etas", default="1.0,0.7,0.448")
    sp.add_argument("--n-lo", type=float, default=1e8)
    sp.add_argument("--out")
    return parser


def _config_from_args(args) -> RunConfig:
    raw = load_config(args.config) if args.config else {}
    if args.preset is not None:
        raw["preset"] = args.preset
    if args.alpha is not None:
        raw["alpha"] = args.alpha
    if args.frames is not None:
        raw["n_frames"] = args.frames
    if args.seed is not None:
        raw["seed"] = args.seed
    if args.out is not None:
        raw["out"] = args.out
    return make_config(raw)


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("CVQKD_LOG", "WARNING").upper())
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "simulate":
            cfg = _config_from_args(args)
            out = cfg.out or "pulses.csv"
            run_simulate(cfg, out)
        elif args.command == "analyze":
            cfg = _config_from_args(args)
            records = read_pulses(args.dataset)
            report = analyze_records(records, cfg)
            write_report(report, cfg.out)
        elif args.command == "witness":
            cfg = _config_from_args(args)
            records = simulate_frames(cfg.protocol, cfg.channel,
                                      cfg.n_frames, cfg.seed)
            if args.dataset_out:
                write_pulses(args.dataset_out, records)
            report = analyze_records(records, cfg)
            write_report(report, cfg.out)
        elif args.command == "bounds":
            alphas = _parse_float_list(args.alphas)
            etas = _parse_float_list(args.etas)
            run_bounds(alphas, etas, args.n_lo, args.out)
    except (ConfigError, ParameterError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (DataError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
