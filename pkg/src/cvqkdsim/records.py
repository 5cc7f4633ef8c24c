"""Core data containers shared across the TX/channel/RX chain.

Unit convention: quadrature amplitudes are expressed in shot-noise units
(SNU); the vacuum state has unit variance per quadrature at symbol rate.
For oversampled streams, white noise sources are specified per
symbol-equivalent bandwidth, i.e. a per-sample variance of ``sps * var``
lands as ``var`` at symbol rate after a unit-noise-gain matched filter.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

UNIT_ADC = "adc"
UNIT_SNU = "snu"


@dataclass
class Waveform:
    """Complex baseband sample stream prior to detection.

    Attributes:
        samples: complex128 array of baseband samples.
        sps: samples per symbol (1 for symbol-rate data).
        symbol_rate_hz: symbol rate, used to convert to physical time for
            dispersion and phase-noise models.
    """

    samples: np.ndarray
    sps: int = 1
    symbol_rate_hz: float = 100e6

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.complex128)
        if self.sps < 1:
            raise ValueError("sps must be >= 1")

    @property
    def sample_rate_hz(self) -> float:
        return self.symbol_rate_hz * self.sps

    def copy(self) -> "Waveform":
        return Waveform(self.samples.copy(), self.sps, self.symbol_rate_hz)


@dataclass
class QuadratureRecord:
    """Detected quadrature data with an explicit unit tag.

    For heterodyne detection ``samples`` is complex (q + ip per entry); for
    homodyne it is real with ``basis`` giving the measured quadrature per
    symbol (0 = q, 1 = p).
    """

    samples: np.ndarray
    units: str = UNIT_ADC
    sps: int = 1
    detection: str = "heterodyne"
    basis: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.units not in (UNIT_ADC, UNIT_SNU):
            raise ValueError(f"unknown unit tag {self.units!r}")
        if self.detection not in ("heterodyne", "homodyne"):
            raise ValueError(f"unknown detection kind {self.detection!r}")

    def copy(self) -> "QuadratureRecord":
        return QuadratureRecord(
            self.samples.copy(),
            self.units,
            self.sps,
            self.detection,
            None if self.basis is None else self.basis.copy(),
            dict(self.meta),
        )
