"""Shot-noise calibration: the three strategies producing the SNU
reference (ADC units squared per shot-noise unit) used for normalization
and security analysis.

Two-time methods measure dark (LO blocked) and LO-on/signal-blocked
records and difference the variances; the one-time method normalizes by
the total noise, which silently folds the electronic noise into the
vacuum reference (downstream analysis then attributes the corresponding
loss to the channel).
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .records import QuadratureRecord


class CalibrationError(ValueError):
    pass


@dataclass(frozen=True)
class CalibrationRecord:
    snu_value: float  # ADC units^2 per SNU
    electronic_noise_est: float | None  # nu_el in SNU; None for one_time
    method: str  # two_time_pre | two_time_realtime | one_time
    sample_count: int
    lo_power_monitor: float | None = None
    timestamp_index: int = 0

    def __post_init__(self):
        if self.snu_value <= 0:
            raise CalibrationError("snu_value must be > 0")
        if self.method not in ("two_time_pre", "two_time_realtime", "one_time"):
            raise CalibrationError(f"unknown calibration method {self.method!r}")
        if self.method == "one_time":
            if self.electronic_noise_est is not None:
                raise CalibrationError("one_time leaves nu_el unset")
        elif self.electronic_noise_est is None or self.electronic_noise_est < 0:
            raise CalibrationError("two-time methods require nu_el >= 0")

    def to_dict(self) -> dict:
        return asdict(self)


def record_variance(record: QuadratureRecord) -> tuple[float, int]:
    """Per-quadrature variance pooled over both quadratures for complex
    records; returns (variance, scalar sample count)."""
    x = record.samples
    if np.iscomplexobj(x):
        vals = np.concatenate([x.real, x.imag])
    else:
        vals = np.asarray(x, dtype=float)
    return float(np.var(vals)), int(vals.size)


def calibrate_two_time_pre(dark_record: QuadratureRecord,
                           lo_record: QuadratureRecord,
                           lo_power_monitor: float = 1.0,
                           timestamp_index: int = 0) -> CalibrationRecord:
    """SNU from the variance difference of the LO-on and dark records;
    nu_el referred to the SNU."""
    var_dark, n_dark = record_variance(dark_record)
    var_lo, n_lo = record_variance(lo_record)
    if var_lo <= var_dark:
        raise CalibrationError(
            f"LO-on variance {var_lo:.4g} does not exceed dark variance {var_dark:.4g}"
        )
    snu = var_lo - var_dark
    return CalibrationRecord(
        snu_value=snu,
        electronic_noise_est=var_dark / snu,
        method="two_time_pre",
        sample_count=min(n_dark, n_lo),
        lo_power_monitor=lo_power_monitor,
        timestamp_index=timestamp_index,
    )


def calibrate_realtime(pre: CalibrationRecord, lo_monitor_power: float,
                       timestamp_index: int | None = None) -> CalibrationRecord:
    """Rescale the pre-calibrated SNU by the monitored LO power (snu = k * P).

    The electronic noise is fixed in ADC units, so its SNU value rescales
    inversely with the reference.
    """
    if lo_monitor_power <= 0:
        raise CalibrationError("LO monitor power must be > 0")
    if pre.electronic_noise_est is None or pre.lo_power_monitor is None:
        raise CalibrationError("realtime calibration requires a two-time pre-calibration")
    ratio = lo_monitor_power / pre.lo_power_monitor
    return CalibrationRecord(
        snu_value=pre.snu_value * ratio,
        electronic_noise_est=pre.electronic_noise_est / ratio,
        method="two_time_realtime",
        sample_count=pre.sample_count,
        lo_power_monitor=lo_monitor_power,
        timestamp_index=pre.timestamp_index + 1 if timestamp_index is None else timestamp_index,
    )


def calibrate_one_time(total_record: QuadratureRecord,
                       timestamp_index: int = 0) -> CalibrationRecord:
    """SNU from the total (shot + electronic) noise variance; nu_el stays
    unknown and must be treated as channel noise downstream."""
    var_total, n = record_variance(total_record)
    if var_total <= 0:
        raise CalibrationError("total-noise record has zero variance")
    return CalibrationRecord(
        snu_value=var_total,
        electronic_noise_est=None,
        method="one_time",
        sample_count=n,
        timestamp_index=timestamp_index,
    )
