"""From raw pulse records to conditional intrinsic Stokes moments.

Processing chain: shot-noise calibration (blocked-signal run), per-frame
phase estimation from the calibration pulses, remapping of the outcome
plane, block mean removal, conditional moment estimation with the
heterodyne vacuum-penalty correction, and channel-parameter estimation.
Also hosts the simplex loop used for polarization pre-compensation.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from cvqkd.channel import CAL_SIGNS, KIND_SIG, PULSE_DTYPE
from cvqkd.params import ParameterError
from cvqkd.stokes import StokesMoments, s1_lower_bound_norm, heterodyne_to_intrinsic

MIN_CALIBRATION_PULSES = 10_000
SNL_SUBBLOCK = 4096


class InsufficientDataError(ValueError):
    pass


class PhaseUnresolvableError(ValueError):
    pass


@dataclass(frozen=True)
class CalibrationResult:
    """Gains and worst-case bookkeeping from a blocked-signal run."""

    gain_s2: float
    gain_s3: float
    lo_ref: float
    snl_reduction_worst: float


@dataclass(frozen=True)
class MomentSet:
    """Conditional intrinsic moments per signal state, plus LO statistics
    and the raw (heterodyne) summaries they were derived from."""

    state0: StokesMoments
    state1: StokesMoments
    n_pulses_used: int
    lo_mean: float
    lo_std: float
    meas_means: np.ndarray   # shape (2, 2): [state, component]
    meas_vars: np.ndarray    # shape (2, 2)

    @property
    def states(self):
        return (self.state0, self.state1)

    @property
    def mean_intrinsic_variance(self) -> float:
        return float(np.mean([[s.var_s2, s.var_s3] for s in self.states]))

    @property
    def mean_measured_variance(self) -> float:
        return float(np.mean(self.meas_vars))


def calibrate(blocked: np.ndarray) -> CalibrationResult:
    """Fix the shot-noise scale from a blocked-signal run.

    Gains map the blocked-run sample variance to exactly 1 per component.
    ``snl_reduction_worst`` is the worst sub-block value of the last term of
    the <S1> bound, <s2^2 + s3^2> / (2 <n_LO>), in gain-normalized units; it
    quantifies how far the LO-monitor bound is degraded by residual noise
    power in the Stokes components.
    """
    n = len(blocked)
    if n < MIN_CALIBRATION_PULSES:
        raise InsufficientDataError(
            f"need >= {MIN_CALIBRATION_PULSES} blocked pulses, got {n}")
    v2 = float(np.var(blocked["s2"]))
    v3 = float(np.var(blocked["s3"]))
    if v2 <= 0 or v3 <= 0:
        raise InsufficientDataError("degenerate blocked-run variance")
    g2 = 1.0 / math.sqrt(v2)
    g3 = 1.0 / math.sqrt(v3)
    lo_ref = float(np.mean(blocked["lo_monitor"]))

    worst = 0.0
    for start in range(0, n - SNL_SUBBLOCK + 1, SNL_SUBBLOCK):
        sl = blocked[start:start + SNL_SUBBLOCK]
        num = np.mean((g2 * sl["s2"]) ** 2) + np.mean((g3 * sl["s3"]) ** 2)
        term = float(num / (2.0 * np.mean(sl["lo_monitor"])))
        worst = max(worst, term)
    return CalibrationResult(gain_s2=g2, gain_s3=g3, lo_ref=lo_ref,
                             snl_reduction_worst=worst)


def apply_gains(records: np.ndarray, cal: CalibrationResult) -> np.ndarray:
    out = records.copy()
    out["s2"] = records["s2"] * cal.gain_s2
    out["s3"] = records["s3"] * cal.gain_s3
    return out


def estimate_phase(s2, s3, signs=CAL_SIGNS, alpha_cal: float | None = None) -> float:
    """Apparent rotation angle of the calibration mean vector.

    Maximum-likelihood under the Gaussian model: the sign-weighted sums
    recover the calibration displacement vector, whose polar angle is the
    frame rotation to undo.  Result in (-pi, pi].
    """
    if alpha_cal is not None and alpha_cal == 0:
        raise PhaseUnresolvableError("zero calibration amplitude")
    s2 = np.asarray(s2, dtype=float)
    s3 = np.asarray(s3, dtype=float)
    signs = np.asarray(signs, dtype=float)[: len(s2)]
    num = float(np.sum(signs * s3))
    den = float(np.sum(signs * s2))
    if num == 0.0 and den == 0.0:
        raise PhaseUnresolvableError("calibration pulses carry no amplitude")
    return math.atan2(num, den)


def remap(s2, s3, phi_hat: float):
    """Rotate outcome pairs by R(-phi_hat); norm preserving."""
    if not math.isfinite(phi_hat):
        raise ParameterError(f"phi_hat must be finite, got {phi_hat}")
    c, s = math.cos(phi_hat), math.sin(phi_hat)
    s2 = np.asarray(s2, dtype=float)
    s3 = np.asarray(s3, dtype=float)
    return c * s2 + s * s3, -s * s2 + c * s3


def unwrap_nearest(phases: np.ndarray) -> np.ndarray:
    """Nearest-branch continuation: each step adds the multiple of 2 pi
    minimizing the frame-to-frame jump."""
    phases = np.asarray(phases, dtype=float)
    diffs = np.diff(phases)
    diffs = (diffs + math.pi) % (2.0 * math.pi) - math.pi
    out = np.empty_like(phases)
    out[0] = phases[0]
    out[1:] = phases[0] + np.cumsum(diffs)
    return out


def demodulate_frames(records: np.ndarray, frame_size: int,
                      n_cal: int = 4) -> tuple[np.ndarray, np.ndarray]:
    """Per-frame phase estimation and remapping of calibrated records.

    Expects gain-corrected records covering whole frames.  Returns the
    remapped signal-slot records and the per-frame phase estimates.
    """
    n = len(records)
    if n == 0 or n % frame_size != 0:
        raise ParameterError("records must cover whole frames")
    n_frames = n // frame_size
    s2 = records["s2"].reshape(n_frames, frame_size)
    s3 = records["s3"].reshape(n_frames, frame_size)
    signs = np.asarray(CAL_SIGNS)[:n_cal]
    den = (signs * s2[:, :n_cal]).sum(axis=1)
    num = (signs * s3[:, :n_cal]).sum(axis=1)
    phases = np.arctan2(num, den)

    c = np.cos(phases)[:, None]
    s = np.sin(phases)[:, None]
    r2 = c * s2 + s * s3
    r3 = -s * s2 + c * s3

    out = records.copy()
    out["s2"] = r2.reshape(-1)
    out["s3"] = r3.reshape(-1)
    return out[out["kind"] == KIND_SIG], phases


def estimate_moments(records: np.ndarray, cal: CalibrationResult | None,
                     block_size: int = 1024,
                     n_lo: float | None = None) -> MomentSet:
    """Conditional intrinsic Stokes moments from remapped signal records.

    Per block of ``block_size`` pulses the unconditional mean is removed
    (slow-drift compensation); conditional displacements per bit then give
    means, a pooled covariance, and the symmetrized cross moments.  The
    heterodyne vacuum penalty is undone and the per-state <S1>/n_LO lower
    bound is evaluated from the per-state intrinsic second moments.
    """
    n_blocks = len(records) // block_size
    if n_blocks == 0:
        raise InsufficientDataError(
            f"need at least one full block of {block_size} pulses")
    used = n_blocks * block_size
    if used < len(records):
        warnings.warn(f"dropping {len(records) - used} trailing pulses "
                      f"(partial block)", stacklevel=2)
    recs = records[:used]

    s2 = recs["s2"].reshape(n_blocks, block_size).astype(float)
    s3 = recs["s3"].reshape(n_blocks, block_size).astype(float)
    s2 = (s2 - s2.mean(axis=1, keepdims=True)).reshape(-1)
    s3 = (s3 - s3.mean(axis=1, keepdims=True)).reshape(-1)
    bits = recs["bit"]

    lo_mean = float(np.mean(recs["lo_monitor"]))
    lo_std = float(np.std(recs["lo_monitor"]))
    if n_lo is None:
        n_lo = lo_mean

    masks = [bits == 0, bits == 1]
    if not all(int(m.sum()) for m in masks):
        raise InsufficientDataError("one signal state has no pulses")

    meas_means = np.array([[np.mean(s2[m]), np.mean(s3[m])] for m in masks])
    # pooled (within-state) fluctuations
    d2 = s2 - meas_means[bits, 0]
    d3 = s3 - meas_means[bits, 1]
    pooled_v2 = float(np.mean(d2 ** 2))
    pooled_v3 = float(np.mean(d3 ** 2))
    pooled_cov = float(np.mean(d2 * d3))
    meas_vars = np.array([[pooled_v2, pooled_v3]] * 2)

    states = []
    for k in range(2):
        m2i, v2i = heterodyne_to_intrinsic(meas_means[k, 0], pooled_v2)
        m3i, v3i = heterodyne_to_intrinsic(meas_means[k, 1], pooled_v3)
        cov_i = 2.0 * pooled_cov
        q2 = v2i + m2i ** 2
        q3 = v3i + m3i ** 2
        cross = cov_i + m2i * m3i
        s1n = s1_lower_bound_norm(n_lo, q2 + q3)
        states.append(StokesMoments(mean_s2=m2i, mean_s3=m3i,
                                    second_s2=q2, second_s3=q3,
                                    cross_sym=cross, s1_lower_norm=s1n))
    return MomentSet(state0=states[0], state1=states[1],
                     n_pulses_used=used, lo_mean=lo_mean, lo_std=lo_std,
                     meas_means=meas_means, meas_vars=meas_vars)


def estimate_channel(m: MomentSet, alpha: float) -> tuple[float, float]:
    """Invert the loss and excess-noise footprint of the channel.

    Intrinsic conditional means sit at +-2 sqrt(eta) alpha, so the half
    separation over 2 alpha squares to eta; excess noise is the mean
    intrinsic variance above shot noise.
    """
    if alpha <= 0:
        raise ParameterError("attenuation unidentifiable at alpha = 0")
    half_sep = 0.5 * (m.state0.mean_s2 - m.state1.mean_s2)
    eta_hat = (half_sep / (2.0 * alpha)) ** 2
    excess_hat = m.mean_intrinsic_variance - 1.0
    return eta_hat, excess_hat


@dataclass(frozen=True)
class SimplexResult:
    angles: tuple[float, float]
    value: float
    n_evals: int
    converged: bool


def simplex_precompensate(objective, start, max_evals: int = 500,
                          initial_step: float = 0.25,
                          xatol: float = 1e-5) -> SimplexResult:
    """Nelder-Mead maximization of the polarization response.

    Deterministic, bounded by ``max_evals`` objective calls.  A flat
    objective (no variation across any visited simplex) or an exhausted
    budget yields the best point so far with ``converged=False``.
    """
    x0 = np.asarray(start, dtype=float)
    n = x0.size
    evals = 0

    def f(x):
        nonlocal evals
        evals += 1
        return -float(objective(x))

    # initial simplex: axis steps around the start
    simplex = [x0.copy()]
    for i in range(n):
        v = x0.copy()
        v[i] += initial_step
        simplex.append(v)
    values = [f(v) for v in simplex]

    saw_variation = max(values) - min(values) > 0.0
    while evals < max_evals:
        order = np.argsort(values)
        simplex = [simplex[i] for i in order]
        values = [values[i] for i in order]
        best, worst, second = values[0], values[-1], values[-2]

        spread = max(np.max(np.abs(np.asarray(s) - simplex[0]))
                     for s in simplex[1:])
        frange = worst - best
        if saw_variation and spread < xatol and \
                frange <= 1e-12 * max(1.0, abs(best)):
            return SimplexResult(tuple(simplex[0]), -best, evals, True)

        centroid = np.mean(simplex[:-1], axis=0)
        xr = centroid + (centroid - simplex[-1])
        fr = f(xr)
        if fr < best:
            xe = centroid + 2.0 * (centroid - simplex[-1])
            fe = f(xe)
            if fe < fr:
                simplex[-1], values[-1] = xe, fe
            else:
                simplex[-1], values[-1] = xr, fr
        elif fr < second:
            simplex[-1], values[-1] = xr, fr
        else:
            xc = centroid + 0.5 * (simplex[-1] - centroid)
            fc = f(xc)
            if fc < worst:
                simplex[-1], values[-1] = xc, fc
            else:
                for i in range(1, len(simplex)):
                    simplex[i] = simplex[0] + 0.5 * (simplex[i] - simplex[0])
                    values[i] = f(simplex[i])
                    if evals >= max_evals:
                        break
        if max(values) - min(values) > 0.0:
            saw_variation = True

    i = int(np.argmin(values))
    return SimplexResult(tuple(simplex[i]), -values[i], evals, False)
