"""Stokes-operator relations, the LO-monitor bound on <S1>, and the
heterodyne vacuum-penalty correction.

Normalization: lowercase moments are LO-normalized, s_i = S_i / sqrt(n_LO)
for first moments and S_i^2 / n_LO for second moments, so that a
shot-noise-limited beam has unit variance per component.
"""

from __future__ import annotations

from dataclasses import dataclass

from cvqkd.params import ParameterError

# heterodyne_to_intrinsic rejects data below the vacuum-port floor; allow a
# hair of sampling slack
VAR_FLOOR_TOL = 1e-9


class UnphysicalDataError(ValueError):
    """Measured statistics violate a physical floor (mis-calibration)."""


@dataclass(frozen=True)
class StokesMoments:
    """First and second conditional Stokes moments of one signal state,
    on the LO-normalized (intrinsic) scale."""

    mean_s2: float
    mean_s3: float
    second_s2: float
    second_s3: float
    cross_sym: float          # <{S2,S3}>/2, normalized
    s1_lower_norm: float      # lower bound on <S1>/n_LO

    def __post_init__(self):
        tol = 1e-9
        var2 = self.second_s2 - self.mean_s2 ** 2
        var3 = self.second_s3 - self.mean_s3 ** 2
        if var2 < -tol or var3 < -tol:
            raise ParameterError(
                f"negative variance: var_s2={var2}, var_s3={var3}")
        # Cauchy-Schwarz on the centered cross moment
        bound = (max(var2, 0.0) * max(var3, 0.0)) ** 0.5 \
            + abs(self.mean_s2 * self.mean_s3)
        if abs(self.cross_sym) > bound + tol:
            raise ParameterError(
                f"cross moment {self.cross_sym} violates Cauchy-Schwarz "
                f"bound {bound}")

    @property
    def var_s2(self) -> float:
        return self.second_s2 - self.mean_s2 ** 2

    @property
    def var_s3(self) -> float:
        return self.second_s3 - self.mean_s3 ** 2


def s1_lower_bound(n_lo: float, sum_second_raw: float) -> float:
    """Lower bound on <S1> from the LO monitor and the measured
    <S2^2 + S3^2> (unnormalized photon-number units).

    Uses S2^2 + S3^2 = 2(S0 + 2 n_LO n_s) together with <S0> >= <n_LO>:
    <S1> >= 1 + <n_LO> - <S2^2 + S3^2> / (2 <n_LO>).
    """
    if n_lo <= 0:
        raise ParameterError(f"n_lo must be > 0, got {n_lo}")
    if sum_second_raw < 0:
        raise ParameterError(f"<S2^2+S3^2> must be >= 0, got {sum_second_raw}")
    return 1.0 + n_lo - sum_second_raw / (2.0 * n_lo)


def s1_lower_bound_norm(n_lo: float, sum_second_norm: float) -> float:
    """Same bound with both input and output on the LO-normalized scale.

    ``sum_second_norm`` is <S2^2 + S3^2>/n_LO; the result is the bound on
    <S1>/n_LO, which tends to 1 in the strong-LO limit.
    """
    return s1_lower_bound(n_lo, sum_second_norm * n_lo) / n_lo


def heterodyne_to_intrinsic(meas_mean: float, meas_var: float):
    """Undo the vacuum-port penalty of the double-homodyne measurement.

    The simultaneous measurement of both Stokes components splits the signal
    with a vacuum mode, halving the mean photocurrent scale and adding one
    vacuum unit of noise.  In calibrated units the intrinsic moments of the
    actual two-mode state are recovered as

        mean -> sqrt(2) * mean,   var -> 2 * var - 1.

    Returns ``(intrinsic_mean, intrinsic_var)``.
    """
    if meas_var < 0.5 - VAR_FLOOR_TOL:
        raise UnphysicalDataError(
            f"measured variance {meas_var} below the vacuum-port floor 0.5; "
            "check shot-noise calibration")
    return 2.0 ** 0.5 * meas_mean, 2.0 * meas_var - 1.0


def intrinsic_to_heterodyne(mean: float, var: float):
    """Inverse of :func:`heterodyne_to_intrinsic` (model-side direction)."""
    return mean / 2.0 ** 0.5, (var + 1.0) / 2.0
