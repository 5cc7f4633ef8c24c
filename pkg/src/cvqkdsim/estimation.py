"""Sifting, maximum-likelihood channel estimation with finite-size
worst-case bounds, and secret-key-rate computation with the abort rule.

Linear model (SNU-normalized data): Y = t X + Z with Z ~ N(0, sigma^2),
sigma^2 = k + t^2 xi + k nu_el, where the vacuum constant k is 1 for
homodyne and 2 for heterodyne data (heterodyne records are normalized so
that the vacuum reads two units and t^2 = eta T).

For reverse reconciliation Eve is bounded by the Holevo quantity of the
Gaussian collective-attack analysis, evaluated on the entanglement-based
two-mode covariance matrix built from the worst-case parameter bounds.
Direct reconciliation uses the classic beam-splitting bound (Eve receives
the complementary channel port), whose zero crossing at T = 1/2 is the
3 dB loss limit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import erfinv

CONVENTIONS = ("paper_erf", "normal_quantile")


class EstimationError(ValueError):
    pass


@dataclass(frozen=True)
class ChannelEstimate:
    t_hat: float
    sigma2_hat: float
    xi_hat: float
    sd_t: float
    sd_sigma2: float
    t_min: float
    sigma2_max: float
    epsilon_pe: float
    m_disclosed: int
    quantile_convention: str = "paper_erf"
    vacuum_const: float = 1.0
    nu_el_used: float | None = None
    sub_vacuum: bool = False


@dataclass(frozen=True)
class SecurityResult:
    mutual_info_bits_per_symbol: float
    holevo_bound_bits: float
    skr_asymptotic: float
    skr_finite: float
    reconciliation_beta: float
    abort: bool
    reconciliation_direction: str
    snr_per_quadrature: float = 0.0
    symplectic_eigenvalues: tuple = ()


def z_quantile(epsilon_pe: float, convention: str = "paper_erf") -> float:
    """Confidence-interval multiplier.

    ``paper_erf`` uses z = erfinv(1 - eps/2) verbatim; ``normal_quantile``
    is the standard Gaussian one-sided quantile sqrt(2) * erfinv(1 - eps).
    """
    if not 0 < epsilon_pe < 1:
        raise EstimationError("epsilon_pe must lie in (0, 1)")
    if convention == "paper_erf":
        return float(erfinv(1.0 - epsilon_pe / 2.0))
    if convention == "normal_quantile":
        return float(math.sqrt(2.0) * erfinv(1.0 - epsilon_pe))
    raise EstimationError(f"unknown quantile convention {convention!r}")


def confidence_bounds(t_hat: float, sd_t: float, sigma2_hat: float,
                      sd_sigma2: float, z: float) -> tuple[float, float]:
    """Worst-case parameter bounds: t_min = t - z sd, sigma2_max = s2 + z sd."""
    return t_hat - z * sd_t, sigma2_hat + z * sd_sigma2


def sift(alice_symbols: np.ndarray, bob_values: np.ndarray,
         bob_basis: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Pair Alice's registers with Bob's measurements.

    Homodyne (``bob_basis`` given): Alice keeps the quadrature Bob measured
    (0 = q, 1 = p); output length equals the symbol count. Heterodyne:
    identity keeping both quadratures, (q, p) interleaved, length 2L.
    """
    alice_symbols = np.asarray(alice_symbols)
    if bob_basis is None:
        if len(bob_values) != len(alice_symbols):
            raise EstimationError("register length mismatch")
        x = np.empty(2 * len(alice_symbols))
        x[0::2] = alice_symbols.real
        x[1::2] = alice_symbols.imag
        y = np.asarray(bob_values)
        if np.iscomplexobj(y):
            yi = np.empty(2 * len(y))
            yi[0::2] = y.real
            yi[1::2] = y.imag
            y = yi
        elif len(y) != 2 * len(alice_symbols):
            raise EstimationError("heterodyne values must hold both quadratures")
        return x, y

    bob_basis = np.asarray(bob_basis)
    if not (len(bob_basis) == len(bob_values) == len(alice_symbols)):
        raise EstimationError("register length mismatch")
    x = np.where(bob_basis == 0, alice_symbols.real, alice_symbols.imag)
    return x, np.asarray(bob_values, dtype=float)


def estimate_channel(x: np.ndarray, y: np.ndarray, epsilon_pe: float = 0.01,
                     convention: str = "paper_erf", vacuum_const: float = 1.0,
                     nu_el: float | None = None) -> ChannelEstimate:
    """ML estimation of the linear channel model on disclosed samples.

    t_hat = sum(xy)/sum(x^2); sigma2_hat is the mean squared residual;
    the standard deviations sd_t = sqrt(sigma2/sum(x^2)) and
    sd_sigma2 = sigma2 * sqrt(2/m) feed the worst-case bounds. xi_hat
    refers the above-vacuum noise back through t^2 using the detection's
    vacuum constant; a sub-vacuum (negative) value is preserved and
    flagged rather than clamped.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise EstimationError("x and y must be 1-d arrays of equal length")
    m = len(x)
    if m < 2:
        raise EstimationError("need at least two samples")
    sxx = float(np.dot(x, x))
    if sxx == 0.0:
        raise EstimationError("sum(x^2) is zero; cannot estimate t")
    t_hat = float(np.dot(x, y)) / sxx
    if t_hat <= 0:
        raise EstimationError(f"estimated t = {t_hat:.4g} <= 0: unusable channel")
    resid = y - t_hat * x
    sigma2_hat = float(np.dot(resid, resid)) / m
    sd_t = math.sqrt(sigma2_hat / sxx)
    sd_sigma2 = sigma2_hat * math.sqrt(2.0 / m)
    z = z_quantile(epsilon_pe, convention)
    t_min, sigma2_max = confidence_bounds(t_hat, sd_t, sigma2_hat, sd_sigma2, z)

    nu = 0.0 if nu_el is None else nu_el
    xi_hat = (sigma2_hat - vacuum_const * (1.0 + nu)) / (t_hat * t_hat)
    return ChannelEstimate(
        t_hat=t_hat, sigma2_hat=sigma2_hat, xi_hat=xi_hat,
        sd_t=sd_t, sd_sigma2=sd_sigma2, t_min=t_min, sigma2_max=sigma2_max,
        epsilon_pe=epsilon_pe, m_disclosed=m, quantile_convention=convention,
        vacuum_const=vacuum_const, nu_el_used=nu_el,
        sub_vacuum=bool(xi_hat < 0),
    )


def gaussian_entropy(x: float) -> float:
    """g(x) = (x+1) log2(x+1) - x log2(x); the entropy of a thermal state
    with mean photon number x (symplectic eigenvalue nu = 2x + 1)."""
    if x <= 0.0:
        return 0.0
    return (x + 1.0) * math.log2(x + 1.0) - x * math.log2(x)


def symplectic_eigenvalues(a: float, b: float, c: float) -> tuple[float, float]:
    """Symplectic spectrum of the two-mode covariance matrix
    [[a I, c sigma_z], [c sigma_z, b I]]."""
    delta = a * a + b * b - 2.0 * c * c
    det = (a * b - c * c) ** 2
    disc = max(delta * delta - 4.0 * det, 0.0)
    root = math.sqrt(disc)
    nu1 = math.sqrt(max((delta + root) / 2.0, 0.0))
    nu2 = math.sqrt(max((delta - root) / 2.0, 0.0))
    return nu1, nu2


def _check_physical(*nus: float) -> None:
    for nu in nus:
        if nu < 1.0 - 1e-9:
            raise EstimationError(
                f"non-physical covariance: symplectic eigenvalue {nu:.12g} < 1"
            )


def holevo_bound_rr(t_eff2: float, xi_eff: float, v_a: float, kind: str) -> tuple[float, tuple]:
    """Holevo bound chi(Y;E) for reverse reconciliation under Gaussian
    collective attacks, from the entanglement-based covariance matrix with
    channel parameters (T = t_eff2, xi = xi_eff) attributed to Eve."""
    v = v_a + 1.0
    a = v
    b = t_eff2 * (v_a + xi_eff) + 1.0
    c = math.sqrt(max(t_eff2 * (v * v - 1.0), 0.0))
    nu1, nu2 = symplectic_eigenvalues(a, b, c)
    if kind == "heterodyne":
        nu3 = a - c * c / (b + 1.0)
    else:
        nu3 = math.sqrt(max(a * (a - c * c / b), 0.0))
    _check_physical(nu1, nu2, nu3)
    chi = (
        gaussian_entropy((nu1 - 1.0) / 2.0)
        + gaussian_entropy((nu2 - 1.0) / 2.0)
        - gaussian_entropy((nu3 - 1.0) / 2.0)
    )
    return chi, (nu1, nu2, nu3)


def eve_information_dr(t_eff2: float, v_a: float, kind: str) -> float:
    """Beam-splitting bound on Eve's information for direct reconciliation:
    Eve detects the complementary port (transmittance 1 - T) with the same
    detection convention as Bob. Crosses I_AB at exactly T = 1/2 for a
    noiseless channel, reproducing the 3 dB loss limit."""
    k = 2.0 if kind == "heterodyne" else 1.0
    quads = 2.0 if kind == "heterodyne" else 1.0
    snr_e = (1.0 - t_eff2) * v_a / k
    return quads * 0.5 * math.log2(1.0 + snr_e)


def compute_skr(est: ChannelEstimate, v_a: float, detector, beta: float,
                direction: str, n_key: int, epsilons: dict | None = None,
                disclosed_fraction: float = 0.0, use_worst_case: bool = True,
                include_hash_penalty: bool = False) -> SecurityResult:
    """Secret key rate from a channel estimate.

    Eve's bound is evaluated at the worst-case parameters (t_min,
    sigma2_max) while the mutual information uses the point estimates.
    When the estimate carries a calibrated nu_el (two-time methods), that
    noise is excised from the channel budget before it is attributed to
    Eve; one-time calibration leaves it inside the SNU reference, which
    surfaces as extra channel loss. The finite-size term is
    Delta = disclosed_fraction [+ (2/n_key) log2(1/eps_h) when the hashing
    penalty is accounted here rather than at key-length time].
    """
    if not 0.0 <= beta <= 1.0:
        raise EstimationError("beta must lie in [0, 1]")
    if direction not in ("DR", "RR"):
        raise EstimationError("direction must be DR or RR")
    if v_a < 0:
        raise EstimationError("modulation variance must be >= 0")
    kind = detector.kind if hasattr(detector, "kind") else str(detector)
    k = est.vacuum_const
    quads = 2.0 if kind == "heterodyne" else 1.0

    t2_point = est.t_hat ** 2
    if est.sigma2_hat <= 0:
        raise EstimationError("sigma2_hat must be positive for SKR computation")
    snr = t2_point * v_a / est.sigma2_hat
    i_ab = quads * 0.5 * math.log2(1.0 + snr)

    t_w = est.t_min if use_worst_case else est.t_hat
    s2_w = est.sigma2_max if use_worst_case else est.sigma2_hat
    if t_w <= 0:
        raise EstimationError("worst-case t is non-positive; channel unusable")
    t_eff2 = min(t_w * t_w, 1.0)
    nu = 0.0 if est.nu_el_used is None else est.nu_el_used
    xi_eve = max((s2_w - k * (1.0 + nu)) / t_eff2, 0.0)

    if direction == "RR":
        chi, nus = holevo_bound_rr(t_eff2, xi_eve, v_a, kind)
    else:
        chi, nus = eve_information_dr(t_eff2, v_a, kind), ()

    skr_asym = beta * i_ab - chi
    epsilons = epsilons or {}
    delta = disclosed_fraction
    if include_hash_penalty:
        eps_h = epsilons.get("eps_h", 1e-10)
        if n_key < 1:
            raise EstimationError("n_key must be >= 1")
        delta += (2.0 / n_key) * math.log2(1.0 / eps_h)
    skr_finite = skr_asym - delta

    return SecurityResult(
        mutual_info_bits_per_symbol=i_ab,
        holevo_bound_bits=chi,
        skr_asymptotic=skr_asym,
        skr_finite=skr_finite,
        reconciliation_beta=beta,
        abort=bool(skr_finite <= 0.0),
        reconciliation_direction=direction,
        snr_per_quadrature=snr,
        symplectic_eigenvalues=nus,
    )


def decide_abort(sec: SecurityResult) -> str:
    """Protocol decision: abort iff skr_finite <= 0 (the boundary itself is
    not secure)."""
    return "abort" if sec.skr_finite <= 0.0 else "continue"
