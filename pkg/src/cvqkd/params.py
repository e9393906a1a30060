"""Physical parameters, unit conventions and the two-state source model.

Unit convention used throughout the package ("calibrated units"): a
shot-noise-limited measurement with the signal arm blocked has variance
exactly 1 per Stokes component.  All measured and intrinsic moments are
expressed on this scale.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

DEG = math.pi / 180.0


class ParameterError(ValueError):
    """Raised when a physical parameter violates its domain constraints."""


@dataclass(frozen=True)
class ProtocolParams:
    """Signal/LO amplitudes and the framing of the pulse train.

    alpha            coherent amplitude of the binary signal states
    alpha_cal        amplitude of the bright calibration pulses
    n_lo             mean LO photon number per pulse
    frame_cal_pulses calibration slots at the head of each frame
    frame_sig_pulses signal slots per frame
    block_size       signal pulses per slow-drift mean-removal block
    pulse_rate_hz    repetition rate (bookkeeping only)
    """

    alpha: float = 0.5
    alpha_cal: float = 20.0
    n_lo: float = 1e8
    frame_cal_pulses: int = 4
    frame_sig_pulses: int = 28
    block_size: int = 1024
    pulse_rate_hz: float = 1e6

    def __post_init__(self):
        if self.alpha < 0:
            raise ParameterError(f"alpha must be >= 0, got {self.alpha}")
        if self.alpha_cal < 0:
            raise ParameterError(f"alpha_cal must be >= 0, got {self.alpha_cal}")
        if self.n_lo <= 0:
            raise ParameterError(f"n_lo must be > 0, got {self.n_lo}")
        if self.frame_cal_pulses < 1 or self.frame_sig_pulses < 1:
            raise ParameterError("frame must contain calibration and signal slots")
        if self.block_size < 2:
            raise ParameterError(f"block_size must be >= 2, got {self.block_size}")
        # strong-LO regime: the linearized detection model is only valid when
        # the LO dwarfs the signal
        if self.n_lo < 1e4 * self.alpha ** 2:
            raise ParameterError(
                f"strong-LO regime violated: n_lo={self.n_lo} < 1e4*alpha^2")
        if self.n_lo < 1e4 * self.alpha_cal ** 2:
            raise ParameterError(
                f"strong-LO regime violated for calibration pulses: "
                f"n_lo={self.n_lo} < 1e4*alpha_cal^2")

    @property
    def frame_size(self) -> int:
        return self.frame_cal_pulses + self.frame_sig_pulses


@dataclass(frozen=True)
class ChannelModel:
    """Loss, noise and drift statistics of the optical link.

    eta_channel / eta_detector   power transmissions; their product is the
                                 effective transmission seen by the signal
    excess_noise                 output-referred excess variance on the
                                 intrinsic Stokes scale (shot-noise units)
    phase_drift_std_per_frame    std of the interferometric phase random walk
                                 per 32-pulse frame (radians)
    lo_relative_std              relative std of the per-pulse LO power
    electronic_noise_var         additive electronic variance (SNU)
    quadrature_skew              deviation of the HD1/HD2 quadrature angle
                                 from pi/2 (imperfect wave-plate setting)
    """

    eta_channel: float = 1.0
    eta_detector: float = 0.70
    excess_noise: float = 0.0
    phase_drift_std_per_frame: float = 4.0 * DEG
    lo_relative_std: float = 6e-3
    electronic_noise_var: float = 0.01
    quadrature_skew: float = 0.0

    def __post_init__(self):
        for name in ("eta_channel", "eta_detector"):
            v = getattr(self, name)
            if not 0.0 < v <= 1.0:
                raise ParameterError(f"{name} must be in (0, 1], got {v}")
        for name in ("excess_noise", "phase_drift_std_per_frame",
                     "lo_relative_std", "electronic_noise_var"):
            if getattr(self, name) < 0:
                raise ParameterError(f"{name} must be >= 0")

    @property
    def eta_effective(self) -> float:
        return self.eta_channel * self.eta_detector


@dataclass(frozen=True)
class SourceState:
    """The two nonorthogonal signal states, summarized by their overlap."""

    alpha: float
    overlap: float

    @classmethod
    def from_alpha(cls, alpha: float) -> "SourceState":
        return cls(alpha=alpha, overlap=source_overlap(alpha))


def source_overlap(alpha: float) -> float:
    """Overlap <-alpha|alpha> = exp(-2 alpha^2) of the two signal states."""
    if alpha < 0:
        raise ParameterError(f"alpha must be >= 0, got {alpha}")
    return math.exp(-2.0 * alpha ** 2)


def effective_transmission(ch: ChannelModel) -> float:
    """Total power transmission from channel input to detected mode."""
    return ch.eta_effective
