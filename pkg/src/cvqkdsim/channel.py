"""Fiber-channel and detection models: loss, input-referred excess noise,
Wiener laser phase noise, chromatic dispersion, frequency offset, coherent
detection with shot/electronic noise, and ADC quantization.

Noise bookkeeping: the waveform holds the noiseless mean field in SNU
amplitude units; vacuum (shot) noise enters at detection with unit
variance per quadrature per symbol-equivalent bandwidth. White noise
applied to a stream oversampled by ``sps`` gets per-sample variance
``sps * var`` so that a unit-noise-gain matched filter lands back on
``var`` at symbol rate. Excess noise ``xi`` is referred to the channel
input: the per-quadrature noise measured at the output is ``T * xi``,
consistent with the linear model sigma^2 = 1 + t^2 xi.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.constants import c as _C_LIGHT

from .records import UNIT_ADC, QuadratureRecord, Waveform


class ChannelError(ValueError):
    pass


@dataclass(frozen=True)
class ChannelParams:
    distance_km: float = 0.0
    attenuation_db_per_km: float = 0.2
    excess_noise_xi: float = 0.0  # SNU, channel input referred
    linewidth_hz: float = 0.0  # combined TX + LO
    symbol_rate_hz: float = 100e6
    cd_ps_per_nm_km: float = 20.0
    center_wavelength_nm: float = 1550.0
    freq_offset: float = 0.0  # cycles/sample

    def __post_init__(self):
        if self.distance_km < 0:
            raise ChannelError("distance must be >= 0")
        if self.excess_noise_xi < 0:
            raise ChannelError("excess noise must be >= 0")
        if not 0 < transmittance(self) <= 1:
            raise ChannelError("transmittance fell outside (0, 1]")


@dataclass(frozen=True)
class DetectorModel:
    """Coherent receiver model.

    ``adc_fullscale`` is expressed in shot-noise standard deviations at the
    record's sample rate. ``gain`` converts SNU amplitudes to raw ADC units
    (the quantity the shot-noise calibration has to recover: one SNU of
    variance reads as gain**2 ADC units squared).
    """

    kind: str = "heterodyne"
    efficiency_eta: float = 1.0
    electronic_noise_nu_el: float = 0.0  # SNU per quadrature
    adc_bits: int = 12
    adc_fullscale: float = 32.0
    quadrature_choice_seed: int = 0
    gain: float = 1.0

    def __post_init__(self):
        if self.kind not in ("homodyne", "heterodyne"):
            raise ChannelError(f"unknown detector kind {self.kind!r}")
        if not 0 < self.efficiency_eta <= 1:
            raise ChannelError("efficiency must lie in (0, 1]")
        if self.electronic_noise_nu_el < 0:
            raise ChannelError("electronic noise must be >= 0")
        if self.adc_bits < 4:
            raise ChannelError("adc_bits must be >= 4")
        if self.gain <= 0:
            raise ChannelError("gain must be > 0")


@dataclass
class ChannelTruth:
    """Ground-truth channel realization kept in the oracle side-band of the
    experiment bundle; estimation code paths never receive this object."""

    transmittance: float
    excess_noise_xi: float
    freq_offset: float
    phase_trace: np.ndarray | None = None
    meta: dict = field(default_factory=dict)


def transmittance(c: ChannelParams) -> float:
    """T = 10^(-alpha * L / 10)."""
    return 10.0 ** (-c.attenuation_db_per_km * c.distance_km / 10.0)


def beta2_s2_per_m(c: ChannelParams) -> float:
    """Group-velocity dispersion from the D coefficient (ps/nm/km)."""
    d_si = c.cd_ps_per_nm_km * 1e-6  # s/m^2
    lam = c.center_wavelength_nm * 1e-9
    return -d_si * lam * lam / (2 * math.pi * _C_LIGHT)


def _cd_response(n: int, sample_rate_hz: float, c: ChannelParams, sign: float) -> np.ndarray:
    omega = 2 * math.pi * np.fft.fftfreq(n, d=1.0 / sample_rate_hz)
    phase = sign * beta2_s2_per_m(c) * omega * omega * (c.distance_km * 1e3) / 2.0
    return np.exp(-1j * phase)


def apply_cd(wave: Waveform, c: ChannelParams, sign: float = 1.0) -> Waveform:
    """All-pass dispersion filter exp(-i * sign * beta2 * w^2 * L / 2)."""
    if c.distance_km == 0 or c.cd_ps_per_nm_km == 0:
        return wave.copy()
    spec = np.fft.fft(wave.samples)
    out = np.fft.ifft(spec * _cd_response(len(spec), wave.sample_rate_hz, c, sign))
    return Waveform(out, wave.sps, wave.symbol_rate_hz)


def apply_fiber(wave: Waveform, c: ChannelParams, rng: np.random.Generator):
    """Run the waveform through the fiber model.

    Returns (waveform, ChannelTruth). Amplitude scales by sqrt(T); complex
    excess noise of per-quadrature variance T*xi (symbol bandwidth) is
    added; Wiener phase noise with increment variance
    2*pi*linewidth/sample_rate is applied multiplicatively; then chromatic
    dispersion and the carrier frequency offset.
    """
    x = wave.samples
    if not np.all(np.isfinite(x)):
        raise ChannelError("waveform contains non-finite samples")

    t_lin = transmittance(c)
    out = math.sqrt(t_lin) * x

    if c.excess_noise_xi > 0:
        sigma = math.sqrt(t_lin * c.excess_noise_xi * wave.sps)
        out = out + sigma * (rng.standard_normal(len(x)) + 1j * rng.standard_normal(len(x)))

    phase = None
    if c.linewidth_hz > 0:
        var_inc = 2 * math.pi * c.linewidth_hz / wave.sample_rate_hz
        phase = np.cumsum(math.sqrt(var_inc) * rng.standard_normal(len(x)))
        out = out * np.exp(1j * phase)

    shifted = Waveform(out, wave.sps, wave.symbol_rate_hz)
    shifted = apply_cd(shifted, c, sign=1.0)
    if c.freq_offset != 0.0:
        n = np.arange(len(x))
        shifted.samples = shifted.samples * np.exp(2j * np.pi * c.freq_offset * n)

    truth = ChannelTruth(t_lin, c.excess_noise_xi, c.freq_offset, phase)
    return shifted, truth


def _basis_coins(d: DetectorModel, n_symbols: int) -> np.ndarray:
    rng = np.random.Generator(np.random.Philox(key=np.uint64(d.quadrature_choice_seed)))
    return rng.integers(0, 2, size=n_symbols).astype(np.int8)


def detect(wave: Waveform, d: DetectorModel, rng: np.random.Generator,
           lo_on: bool = True) -> QuadratureRecord:
    """Coherent detection to a raw-ADC-unit QuadratureRecord.

    Heterodyne: both quadratures, signal scaled by 1/sqrt(2), unit vacuum
    noise per quadrature. Homodyne: one quadrature per symbol chosen by a
    seeded fair coin. Efficiency enters as beam-splitter loss (sqrt(eta)
    on the signal; the replacement vacuum keeps the shot noise at exactly
    one unit). With the LO blocked (``lo_on=False``) only electronic noise
    reaches the ADC.
    """
    x = wave.samples
    n = len(x)
    bw = wave.sps  # white-noise variance multiplier (symbol-bandwidth units)
    g = d.gain
    shot_sigma = g * math.sqrt(bw)

    meta = {
        "gain": g,
        "shot_sigma": shot_sigma,
        "lo_on": lo_on,
        "nu_el": d.electronic_noise_nu_el,
        "eta": d.efficiency_eta,
    }

    def _elec(size):
        if d.electronic_noise_nu_el == 0:
            return 0.0
        return math.sqrt(d.electronic_noise_nu_el * bw) * rng.standard_normal(size)

    if d.kind == "heterodyne":
        if lo_on:
            sig = math.sqrt(d.efficiency_eta / 2.0) * x
            noise = rng.standard_normal(n) + 1j * rng.standard_normal(n)
            y = sig + math.sqrt(bw) * noise + (_elec(n) + 1j * _elec(n))
        else:
            y = _elec(n) + 1j * _elec(n)
            if np.isscalar(y):
                y = np.zeros(n, dtype=np.complex128)
        return QuadratureRecord(g * np.asarray(y, dtype=np.complex128), UNIT_ADC,
                                wave.sps, "heterodyne", None, meta)

    # homodyne: one quadrature per symbol period
    n_symbols = max(1, n // wave.sps)
    basis = _basis_coins(d, n_symbols)
    theta = (np.pi / 2.0) * np.repeat(basis, wave.sps)[:n]
    if lo_on:
        proj = np.real(x * np.exp(-1j * theta))
        y = math.sqrt(d.efficiency_eta) * proj + math.sqrt(bw) * rng.standard_normal(n) + _elec(n)
    else:
        y = _elec(n)
        if np.isscalar(y):
            y = np.zeros(n)
    return QuadratureRecord(g * np.asarray(y, dtype=float), UNIT_ADC,
                            wave.sps, "homodyne", basis, meta)


def adc_quantize(record: QuadratureRecord, adc_bits: int, adc_fullscale: float) -> QuadratureRecord:
    """Uniform mid-rise quantization over [-FS, +FS] with saturation.

    ``adc_fullscale`` is in shot-noise standard deviations (taken from the
    record metadata); the clip fraction is reported in the result metadata.
    """
    if adc_bits < 4:
        raise ChannelError("adc_bits must be >= 4")
    fs = adc_fullscale * record.meta.get("shot_sigma", 1.0)
    q = 2.0 * fs / (2 ** adc_bits)

    def _quant(v):
        clipped = np.clip(v, -fs, fs)
        out = (np.floor(clipped / q) + 0.5) * q
        return np.clip(out, -(fs - q / 2), fs - q / 2)

    x = record.samples
    if np.iscomplexobj(x):
        clip = np.mean((np.abs(x.real) > fs) | (np.abs(x.imag) > fs))
        y = _quant(x.real) + 1j * _quant(x.imag)
    else:
        clip = np.mean(np.abs(x) > fs)
        y = _quant(x)

    out = record.copy()
    out.samples = y
    out.meta["clip_fraction"] = float(clip)
    out.meta["adc_bits"] = adc_bits
    out.meta["adc_fullscale"] = adc_fullscale
    return out


def vacuum_waveform(n_samples: int, sps: int = 1, symbol_rate_hz: float = 100e6) -> Waveform:
    """Signal-blocked input for calibration acquisitions."""
    return Waveform(np.zeros(n_samples, dtype=np.complex128), sps, symbol_rate_hz)
