"""Monte Carlo generation of raw pulse outcomes.

Pulses are organized in frames (4 bright calibration pulses followed by 28
signal pulses by default).  The interferometric phase performs a Gaussian
random walk sampled once per frame; loss, excess noise, LO power jitter and
electronic noise act per pulse.

All randomness is drawn from per-frame substreams seeded by
``(seed, frame_index)``, so frame generation is order-independent: a
parallel producer would emit bitwise the same records as the sequential
loop used here.
"""

from __future__ import annotations

import math

import numpy as np

from cvqkd.params import ChannelModel, ParameterError, ProtocolParams

KIND_CAL = 0
KIND_SIG = 1

PULSE_DTYPE = np.dtype([
    ("frame", np.int64),
    ("slot", np.int16),
    ("kind", np.int8),
    ("bit", np.int8),        # 0/1 for signal pulses, calibration sign index
    ("s2", np.float64),
    ("s3", np.float64),
    ("lo_monitor", np.float64),
])

# fixed alternating calibration pattern; the sign flips cancel DC offsets in
# the phase estimator
CAL_SIGNS = np.array([+1.0, -1.0, +1.0, -1.0])


def _substream(seed: int, tag: int, index: int) -> np.random.Generator:
    # independent, reproducible substream per (tag, index); tag 0 is framed
    # generation, tag 1 the blocked-signal runs
    return np.random.default_rng([seed, tag, index])


def _noise_std(ch: ChannelModel) -> float:
    # measured (heterodyne) variance per component in calibrated units:
    # shot noise 1, half the intrinsic excess noise, plus electronics
    return math.sqrt(1.0 + 0.5 * ch.excess_noise + ch.electronic_noise_var)


def simulate_frames(p: ProtocolParams, ch: ChannelModel, n_frames: int,
                    seed: int, phase0: float = 0.0) -> np.ndarray:
    """Simulate ``n_frames`` full frames; returns a PULSE_DTYPE array.

    Conditional outcome model per pulse of true amplitude a:

        <s2> = sqrt(2 eta_eff) a cos(phi)
        <s3> = sqrt(2 eta_eff) a cos(phi + pi/2 + skew)

    with per-component measured variance 1 + excess/2 + electronic.
    """
    if n_frames < 1:
        raise ParameterError(f"n_frames must be >= 1, got {n_frames}")
    n_cal = p.frame_cal_pulses
    n_sig = p.frame_sig_pulses
    fs = p.frame_size
    if n_cal != len(CAL_SIGNS):
        raise ParameterError("calibration pattern expects 4 pulses per frame")

    scale = math.sqrt(2.0 * ch.eta_effective)
    sigma = _noise_std(ch)

    out = np.empty(n_frames * fs, dtype=PULSE_DTYPE)
    phase = phase0
    for k in range(n_frames):
        rng = _substream(seed, 0, k)
        # draw order is part of the determinism contract
        dphi = rng.normal(0.0, ch.phase_drift_std_per_frame)
        bits = rng.integers(0, 2, size=n_sig)
        noise = rng.normal(0.0, sigma, size=(fs, 2))
        lo = p.n_lo * (1.0 + rng.normal(0.0, ch.lo_relative_std, size=fs))

        phase += dphi
        phase = math.remainder(phase, 2.0 * math.pi)

        amps = np.empty(fs)
        amps[:n_cal] = CAL_SIGNS * p.alpha_cal
        amps[n_cal:] = np.where(bits == 0, p.alpha, -p.alpha)

        c2 = math.cos(phase)
        c3 = math.cos(phase + math.pi / 2.0 + ch.quadrature_skew)

        rows = out[k * fs:(k + 1) * fs]
        rows["frame"] = k
        rows["slot"] = np.arange(fs)
        rows["kind"][:n_cal] = KIND_CAL
        rows["kind"][n_cal:] = KIND_SIG
        rows["bit"][:n_cal] = (CAL_SIGNS < 0).astype(np.int8)
        rows["bit"][n_cal:] = bits
        rows["s2"] = scale * amps * c2 + noise[:, 0]
        rows["s3"] = scale * amps * c3 + noise[:, 1]
        rows["lo_monitor"] = lo
    return out


def simulate_blocked_signal(p: ProtocolParams, ch: ChannelModel,
                            n_pulses: int, seed: int) -> np.ndarray:
    """Shot-noise calibration run: signal arm physically blocked, so every
    outcome is vacuum plus electronic noise regardless of the pulse slot."""
    if n_pulses < 1:
        raise ParameterError(f"n_pulses must be >= 1, got {n_pulses}")
    sigma = math.sqrt(1.0 + ch.electronic_noise_var)
    out = np.empty(n_pulses, dtype=PULSE_DTYPE)
    fs = p.frame_size
    chunk = 1 << 16
    for start in range(0, n_pulses, chunk):
        stop = min(start + chunk, n_pulses)
        rng = _substream(seed, 1, start // chunk)
        n = stop - start
        rows = out[start:stop]
        idx = np.arange(start, stop)
        rows["frame"] = idx // fs
        rows["slot"] = idx % fs
        rows["kind"] = np.where(rows["slot"] < p.frame_cal_pulses,
                                KIND_CAL, KIND_SIG)
        rows["bit"] = 0
        noise = rng.normal(0.0, sigma, size=(n, 2))
        rows["s2"] = noise[:, 0]
        rows["s3"] = noise[:, 1]
        rows["lo_monitor"] = p.n_lo * (
            1.0 + rng.normal(0.0, ch.lo_relative_std, size=n))
    return out


class PolarizationResponse:
    """Malus-type LO monitor power versus two pre-compensation angles.

    Smooth and unimodal per period with maximum ``n_lo`` at a hidden
    optimum; used as the objective of the simplex polarization loop.
    """

    def __init__(self, n_lo: float, optimum=(0.3, -0.7)):
        self.n_lo = n_lo
        self.optimum = (float(optimum[0]), float(optimum[1]))

    def __call__(self, angles) -> float:
        d1 = angles[0] - self.optimum[0]
        d2 = angles[1] - self.optimum[1]
        return self.n_lo * math.cos(d1) ** 2 * math.cos(d2) ** 2


def polarization_drift_power(angles, n_lo: float = 1e8,
                             optimum=(0.3, -0.7)) -> float:
    """Functional form of :class:`PolarizationResponse` for one-off calls."""
    return PolarizationResponse(n_lo, optimum)(angles)
