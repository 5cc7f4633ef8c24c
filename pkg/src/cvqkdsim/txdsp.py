"""Transmitter-side DSP: Gaussian symbol generation, pulse shaping and
frame assembly (preamble, pilot tone, digital up-conversion).

The transmitted complex symbol ``a = q + ip`` carries the two modulated
quadratures; ``q`` and ``p`` are i.i.d. zero-mean Gaussians of variance
``V_A`` (SNU). The frame waveform is scaled so that the per-quadrature
mean square of the payload section equals ``V_A`` per sample.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


class TxError(ValueError):
    pass


@dataclass(frozen=True)
class ModulationParams:
    """Gaussian modulation settings: variance per quadrature (SNU), symbol
    count and the 64-bit seed of the counter-based symbol PRNG."""

    variance_per_quadrature: float
    symbol_count: int
    rng_seed: int = 0

    def __post_init__(self):
        if not math.isfinite(self.variance_per_quadrature):
            raise TxError("modulation variance must be finite")
        if self.variance_per_quadrature < 0:
            raise TxError("modulation variance must be >= 0")
        if self.symbol_count < 1:
            raise TxError("symbol count must be >= 1")


@dataclass(frozen=True)
class PulseShape:
    """Root-raised-cosine pulse description.

    ``filter_span`` is the two-sided span in symbols (even); the tap vector
    has ``filter_span * samples_per_symbol + 1`` entries and unit energy.
    """

    rolloff: float = 0.2
    samples_per_symbol: int = 4
    filter_span: int = 32

    def __post_init__(self):
        if not 0.0 <= self.rolloff <= 1.0:
            raise TxError("rolloff must lie in [0, 1]")
        if self.samples_per_symbol < 2:
            raise TxError("samples_per_symbol must be >= 2")
        if self.filter_span < 2 or self.filter_span % 2:
            raise TxError("filter_span must be a positive even integer")


@dataclass(frozen=True)
class FrameLayout:
    """Frame structure: Zadoff-Chu preamble, pilot tone and up-conversion.

    Frequencies are in cycles/sample. ``pilot_amplitude`` is relative to
    the RMS of the complex quantum-signal payload; ``preamble_amplitude``
    of None matches the preamble to the payload RMS (1.0 for an all-zero
    payload).
    """

    sync_length: int = 64
    zc_root: int = 1
    pilot_frequency: float = 0.35
    pilot_amplitude: float = 20.0
    payload_symbols: int = 4096
    carrier_offset: float = 0.125
    preamble_amplitude: float | None = None

    def __post_init__(self):
        if not 0.0 < self.pilot_frequency < 0.5:
            raise TxError("pilot_frequency must lie in (0, 0.5)")
        if self.sync_length < 2:
            raise TxError("sync_length must be >= 2")
        if math.gcd(self.sync_length, self.zc_root) != 1:
            raise TxError("zc_root must be coprime with sync_length")
        if self.payload_symbols < 1:
            raise TxError("payload_symbols must be >= 1")


def symbol_rng(seed: int) -> np.random.Generator:
    """Counter-based (Philox) generator used at the QRNG injection point."""
    return np.random.Generator(np.random.Philox(key=np.uint64(seed)))


def generate_symbols(p: ModulationParams) -> np.ndarray:
    """Draw ``n`` i.i.d. complex Gaussian symbols, N(0, V_A) per quadrature.

    Deterministic for a fixed seed (Philox counter stream, ziggurat
    normals; fixed per release).
    """
    rng = symbol_rng(p.rng_seed)
    draws = rng.standard_normal((p.symbol_count, 2))
    sigma = math.sqrt(p.variance_per_quadrature)
    return sigma * draws[:, 0] + 1j * sigma * draws[:, 1]


def rrc_taps(s: PulseShape) -> np.ndarray:
    """Root-raised-cosine impulse response, unit energy.

    The closed form is singular at t = 0 and t = +-Tsym/(4*rolloff); the
    analytic limits are used there. rolloff = 0 degenerates to a sinc.
    """
    sps = s.samples_per_symbol
    beta = s.rolloff
    n = s.filter_span * sps + 1
    t = (np.arange(n) - (n - 1) / 2) / sps  # in symbols

    h = np.empty(n)
    if beta == 0.0:
        h = np.sinc(t)
    else:
        near_zero = np.isclose(t, 0.0)
        sing = np.isclose(np.abs(t), 1.0 / (4.0 * beta))
        regular = ~(near_zero | sing)

        tr = t[regular]
        num = np.sin(np.pi * tr * (1 - beta)) + 4 * beta * tr * np.cos(np.pi * tr * (1 + beta))
        den = np.pi * tr * (1 - (4 * beta * tr) ** 2)
        h[regular] = num / den
        h[near_zero] = 1 + beta * (4 / np.pi - 1)
        h[sing] = (beta / math.sqrt(2)) * (
            (1 + 2 / np.pi) * math.sin(np.pi / (4 * beta))
            + (1 - 2 / np.pi) * math.cos(np.pi / (4 * beta))
        )
    return h / math.sqrt(np.sum(h * h))


def zadoff_chu(length: int, root: int) -> np.ndarray:
    """Zadoff-Chu sequence: unit amplitude, zero circular autocorrelation
    at every nonzero shift when gcd(root, length) = 1."""
    if math.gcd(length, root) != 1:
        raise TxError("zc root must be coprime with length")
    k = np.arange(length)
    if length % 2 == 0:
        phase = -np.pi * root * k * k / length
    else:
        phase = -np.pi * root * k * (k + 1) / length
    return np.exp(1j * phase)


def _shape_symbols(symbols: np.ndarray, s: PulseShape) -> np.ndarray:
    """Upsample and RRC-filter; gain sqrt(sps) keeps the per-quadrature
    sample mean square equal to the symbol quadrature variance."""
    sps = s.samples_per_symbol
    up = np.zeros(len(symbols) * sps, dtype=np.complex128)
    up[::sps] = symbols
    taps = rrc_taps(s)
    return math.sqrt(sps) * np.convolve(up, taps)


def pilot_signal_gap(s: PulseShape, f: FrameLayout) -> float:
    """Spectral gap between the pilot and the -3 dB edge of the shaped,
    up-converted signal band (negative means overlap)."""
    half_band = 0.5 / s.samples_per_symbol  # RRC half-power point
    return abs(f.pilot_frequency - f.carrier_offset) - half_band


def build_frame(symbols: np.ndarray, s: PulseShape, f: FrameLayout,
                symbol_rate_hz: float = 100e6):
    """Assemble one frame: shaped [ZC preamble || payload], digitally
    up-converted by ``carrier_offset``, with the pilot tone added.

    Returns a Waveform of length (sync_length + payload)*sps + span*sps.
    """
    from .records import Waveform

    symbols = np.asarray(symbols, dtype=np.complex128)
    if len(symbols) != f.payload_symbols:
        raise TxError(
            f"payload has {len(symbols)} symbols, layout expects {f.payload_symbols}"
        )
    if pilot_signal_gap(s, f) <= 0:
        raise TxError("pilot tone overlaps the up-converted signal band")

    payload_rms = math.sqrt(np.mean(np.abs(symbols) ** 2)) if len(symbols) else 0.0
    pre_amp = f.preamble_amplitude
    if pre_amp is None:
        pre_amp = payload_rms if payload_rms > 0 else 1.0

    preamble = pre_amp * zadoff_chu(f.sync_length, f.zc_root)
    frame_syms = np.concatenate([preamble, symbols])
    base = _shape_symbols(frame_syms, s)

    n = np.arange(len(base))
    wave = base * np.exp(2j * np.pi * f.carrier_offset * n)
    wave = wave + f.pilot_amplitude * payload_rms * np.exp(2j * np.pi * f.pilot_frequency * n)
    return Waveform(wave, s.samples_per_symbol, symbol_rate_hz)


def payload_interior_samples(s: PulseShape, f: FrameLayout) -> tuple[int, int]:
    """Sample range fully inside the payload section (clear of the preamble
    transient and frame edges), for energy-accounting checks."""
    sps = s.samples_per_symbol
    delay = (s.filter_span * sps) // 2
    start = (f.sync_length + s.filter_span) * sps + delay
    stop = (f.sync_length + f.payload_symbols - s.filter_span) * sps + delay
    return start, stop
