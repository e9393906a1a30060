"""Simulation and entanglement witnessing for a two-state CV-QKD link.

The package models a binary coherent-state protocol with a strong local
oscillator, a lossy / noisy / phase-drifting fiber channel and a
double-homodyne (heterodyne) receiver.  Measured Stokes moments are fed to
an expectation-value-matrix partial-transpose test which certifies the
presence of quantum correlations in the recorded data.
"""

from cvqkd.params import ProtocolParams, ChannelModel, SourceState, source_overlap, effective_transmission
from cvqkd.stokes import StokesMoments, s1_lower_bound, heterodyne_to_intrinsic
from cvqkd.channel import simulate_frames, simulate_blocked_signal, PULSE_DTYPE
from cvqkd.receiver import CalibrationResult, MomentSet, calibrate, estimate_phase, remap, estimate_moments, estimate_channel
from cvqkd.witness import EvmInstance, WitnessVerdict, build_evm, partial_transpose, separability_feasible, tolerable_variance_threshold, witness_decision

__all__ = [
    "ProtocolParams", "ChannelModel", "SourceState",
    "source_overlap", "effective_transmission",
    "StokesMoments", "s1_lower_bound", "heterodyne_to_intrinsic",
    "simulate_frames", "simulate_blocked_signal", "PULSE_DTYPE",
    "CalibrationResult", "MomentSet", "calibrate", "estimate_phase",
    "remap", "estimate_moments", "estimate_channel",
    "EvmInstance", "WitnessVerdict", "build_evm", "partial_transpose",
    "separability_feasible", "tolerable_variance_threshold", "witness_decision",
]
