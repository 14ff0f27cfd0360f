"""Parameters, loop coefficients and joint-mode spectra.

Two harmonically trapped particles exchange light through a pair of one-way
transmission lines that close into a loop.  The loop is characterized by a
power transmittance ``eta`` and a round-trip optical phase ``theta``.  All
rates are expressed in units of the bare trap frequency ``omega0`` unless a
physical value for ``omega0`` is supplied explicitly.

The collective coordinates q_pm = (q_1 +/- q_2)/sqrt(2) decouple: each joint
mode keeps a harmonic spectrum with a loop-shifted frequency and a modified
measurement-backaction (recoil) rate.  The relative mode can be driven
dynamically unstable (omega_minus_sq < 0), which is the resource exploited by
the transient entanglement protocol in :mod:`loopmech.transient`.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass

from .errors import NumericalError

__all__ = [
    "SystemParams",
    "ModePair",
    "LoopCoefficients",
    "ModeSpectrum",
    "NoiseCorrelations",
    "StabilityBand",
    "loop_coefficients",
    "mode_spectrum",
    "input_noise_correlations",
    "stability_boundary",
    "delay_validity",
]

_TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class SystemParams:
    """Static configuration of the loop-coupled pair.

    Parameters
    ----------
    gamma_q : float
        Measurement-backaction (photon recoil) rate of a bare particle, in
        units of ``omega0``.
    eta : float
        Loop power transmittance, ``0 <= eta < 1``.
    theta : float
        Round-trip optical phase in radians, ``[0, 2*pi)``.
    omega0 : float
        Trap frequency.  Defaults to 1 so that times and rates are
        dimensionless; pass a physical value (rad/s) for delay estimates.
    eta_c : float
        Detection efficiency of the collection optics.
    eta_m : float
        Fraction of the collected light diverted to the in-loop measurement
        tap.  When the tap is in use (``eta_m > 0``) the light left for the
        loop fixes ``eta = eta_c * (1 - eta_m)``.
    gamma_mech : float
        Residual mechanical damping rate (gas collisions), used only to
        shift the stability boundary.
    """

    gamma_q: float
    eta: float = 0.0
    theta: float = 0.0
    omega0: float = 1.0
    eta_c: float = 1.0
    eta_m: float = 0.0
    gamma_mech: float = 0.0

    def __post_init__(self):
        if not self.omega0 > 0.0:
            raise ValueError(f"omega0 must be positive, got {self.omega0}")
        if self.gamma_q < 0.0:
            raise ValueError(f"gamma_q must be non-negative, got {self.gamma_q}")
        if not 0.0 <= self.eta < 1.0:
            raise ValueError(f"eta must lie in [0, 1), got {self.eta}")
        if not 0.0 <= self.theta < _TWO_PI:
            raise ValueError(f"theta must lie in [0, 2*pi), got {self.theta}")
        if not 0.0 <= self.eta_c <= 1.0:
            raise ValueError(f"eta_c must lie in [0, 1], got {self.eta_c}")
        if not 0.0 <= self.eta_m <= 1.0:
            raise ValueError(f"eta_m must lie in [0, 1], got {self.eta_m}")
        if self.gamma_mech < 0.0:
            raise ValueError(f"gamma_mech must be non-negative, got {self.gamma_mech}")
        if self.eta_m > 0.0:
            # With the tap active, the loop only sees the light that the tap
            # leaves over; any mismatch means the parameters are inconsistent.
            implied = self.eta_c * (1.0 - self.eta_m)
            if abs(self.eta - implied) > 1e-9:
                raise ValueError(
                    "inconsistent split: eta_c*(1 - eta_m) = "
                    f"{implied:.9g} but eta = {self.eta:.9g}"
                )


@dataclass(frozen=True)
class ModePair:
    """A per-joint-mode pair of values, index +1 (common) / -1 (relative)."""

    plus: float
    minus: float

    def __getitem__(self, sign: int) -> float:
        if sign == +1:
            return self.plus
        if sign == -1:
            return self.minus
        raise KeyError(f"mode sign must be +1 or -1, got {sign}")


@dataclass(frozen=True)
class LoopCoefficients:
    """Closed-loop optical gain factors and quadrature coupling weights.

    ``alpha = sqrt(eta) * exp(i*theta)`` is the round-trip amplitude; the
    geometric series over round trips resums into ``g_loop = alpha /
    (1 - alpha**2)``.  ``rho_opt`` is the enhancement of the optical noise
    power circulating in the loop, and f1/f2/g1/g2 are the real weights with
    which position and input noise quadratures feed back on each particle.
    ``s1``/``s2`` (dispersive and reactive feedback per joint mode) and ``sc``
    (the in-loop measurement's cosine weight) drive everything downstream.
    """

    alpha: complex
    g_loop: complex
    g_eta: float
    rho_opt: float
    f1: float
    f2: float
    g1: float
    g2: float
    s1: ModePair
    s2: ModePair
    sc: ModePair


@dataclass(frozen=True)
class ModeSpectrum:
    """Joint-mode frequencies and recoil rates.

    ``omega_plus_sq``/``omega_minus_sq`` are the squared normal-mode
    frequencies (negative = dynamically unstable).  ``n_plus_sq``/
    ``n_minus_sq`` are the loop-filtered noise weights; the per-mode recoil
    rates are ``gamma_pm = 2 * gamma_q * n_pm_sq``.  ``r_pm = omega0 /
    omega_pm`` (complex for an unstable mode) rescales the flow-matrix
    quadratures.
    """

    omega0: float
    omega_plus_sq: float
    omega_minus_sq: float
    n_plus_sq: float
    n_minus_sq: float
    gamma_plus: float
    gamma_minus: float
    r_plus: complex
    r_minus: complex
    stable: bool

    def omega(self, sign: int) -> complex:
        """Principal square root of the squared mode frequency."""
        return cmath.sqrt(complex(self.omega_sq(sign)))

    def omega_sq(self, sign: int) -> float:
        return self.omega_plus_sq if sign == +1 else self.omega_minus_sq

    def gamma(self, sign: int) -> float:
        return self.gamma_plus if sign == +1 else self.gamma_minus


@dataclass(frozen=True)
class NoiseCorrelations:
    """Second moments of the optical noise entering the two tweezers."""

    variance: float
    cross_correlation: float


@dataclass(frozen=True)
class StabilityBand:
    """Phase interval (theta_minus, theta_plus) where the relative mode is unstable."""

    theta_minus: float
    theta_plus: float


def loop_coefficients(params: SystemParams) -> LoopCoefficients:
    """Evaluate the resummed loop gain and all quadrature coupling weights.

    Parameters
    ----------
    params : SystemParams

    Returns
    -------
    LoopCoefficients

    Notes
    -----
    Every weight is a rational function of ``sqrt(eta)`` and trigonometric
    functions of ``theta``; the common denominators are
    ``1 - 2*eta*cos(2*theta) + eta**2`` for the single-particle weights and
    ``1 + eta -/+ 2*sqrt(eta)*cos(theta)`` for the joint-mode weights.
    At ``eta = 0`` the loop is open: every weight vanishes and
    ``g_eta`` (the vacuum-to-loop noise ratio sqrt((1-eta)/eta)) diverges.
    """
    eta, theta = params.eta, params.theta
    sq = math.sqrt(eta)
    alpha = sq * cmath.exp(1j * theta)
    g_loop = alpha / (1.0 - alpha * alpha)
    g_eta = math.sqrt((1.0 - eta) / eta) if eta > 0.0 else math.inf

    den2 = 1.0 - 2.0 * eta * math.cos(2.0 * theta) + eta * eta
    rho_opt = (1.0 - eta * eta) / den2
    f1 = sq * (1.0 + eta) * math.sin(theta) / den2
    f2 = sq * (1.0 - eta) * math.cos(theta) / den2
    g1 = eta * math.sin(2.0 * theta) / den2
    g2 = eta * (math.cos(2.0 * theta) - eta) / den2

    s1 = {}
    s2 = {}
    sc = {}
    for sign in (+1, -1):
        den = 1.0 + eta - sign * 2.0 * sq * math.cos(theta)
        s1[sign] = -sign * sq * math.sin(theta) / den
        s2[sign] = (eta - sign * sq * math.cos(theta)) / den
        sc[sign] = (sign * sq * math.cos(theta) - 1.0) / den

    return LoopCoefficients(
        alpha=alpha,
        g_loop=g_loop,
        g_eta=g_eta,
        rho_opt=rho_opt,
        f1=f1,
        f2=f2,
        g1=g1,
        g2=g2,
        s1=ModePair(s1[+1], s1[-1]),
        s2=ModePair(s2[+1], s2[-1]),
        sc=ModePair(sc[+1], sc[-1]),
    )


def mode_spectrum(params: SystemParams) -> ModeSpectrum:
    """Normal-mode frequencies and recoil rates of the joint modes.

    Returns
    -------
    ModeSpectrum
        ``omega_minus_sq < 0`` flags the dynamical instability of the
        relative mode; ``r_pm`` is then purely imaginary and the flow
        matrices turn trigonometric functions into hyperbolic ones.

    Raises
    ------
    NumericalError
        If the two equivalent forms of the frequency shift (direct and via
        the dispersive weight ``s1``) disagree beyond 1e-12, which would
        indicate a coefficient transcription error upstream.
    """
    w0 = params.omega0
    eta, theta, gq = params.eta, params.theta, params.gamma_q
    sq = math.sqrt(eta)

    coeff = loop_coefficients(params)
    out = {}
    for sign in (+1, -1):
        den = 1.0 + eta - sign * 2.0 * sq * math.cos(theta)
        w_sq = w0 * (w0 + sign * 4.0 * gq * sq * math.sin(theta) / den)
        # Same quantity through the dispersive feedback weight; both forms
        # must match or the coefficient algebra is broken.
        w_sq_alt = w0 * w0 - 4.0 * gq * w0 * coeff.s1[sign]
        scale = max(w0 * w0, abs(w_sq))
        if abs(w_sq - w_sq_alt) > 1e-12 * scale:
            raise NumericalError(
                f"inconsistent mode frequency for sign {sign:+d}: "
                f"{w_sq!r} vs {w_sq_alt!r}"
            )
        n_sq = 0.5 * (1.0 - eta) / den
        out[sign] = (w_sq, n_sq)

    wp_sq, np_sq = out[+1]
    wm_sq, nm_sq = out[-1]
    r_plus = w0 / cmath.sqrt(complex(wp_sq)) if wp_sq != 0.0 else complex(math.inf)
    r_minus = w0 / cmath.sqrt(complex(wm_sq)) if wm_sq != 0.0 else complex(math.inf)
    return ModeSpectrum(
        omega0=w0,
        omega_plus_sq=wp_sq,
        omega_minus_sq=wm_sq,
        n_plus_sq=np_sq,
        n_minus_sq=nm_sq,
        gamma_plus=2.0 * params.gamma_q * np_sq,
        gamma_minus=2.0 * params.gamma_q * nm_sq,
        r_plus=r_plus,
        r_minus=r_minus,
        stable=wm_sq >= 0.0 and wp_sq >= 0.0,
    )


def input_noise_correlations(params: SystemParams) -> NoiseCorrelations:
    """Loop-enhanced optical noise entering the two tweezers.

    The loop recirculates vacuum noise, so each tweezer sees an input
    variance ``rho_opt / 2`` instead of the bare ``1/2``, and the two inputs
    acquire a cross-correlation ``sqrt(eta) * cos(theta) * rho_opt /
    (1 - eta**2)`` because they sample the same circulating field.
    """
    coeff = loop_coefficients(params)
    eta, theta = params.eta, params.theta
    cross = math.sqrt(eta) * math.cos(theta) * coeff.rho_opt / (1.0 - eta * eta)
    return NoiseCorrelations(variance=0.5 * coeff.rho_opt, cross_correlation=cross)


def stability_boundary(params: SystemParams) -> StabilityBand | None:
    """Phase band in which the relative joint mode is dynamically unstable.

    The roots of ``omega_minus_sq(theta) = 0`` satisfy a quadratic in
    ``cos(theta)``; with ``A = omega0 / (4 * gamma_q * sqrt(eta))`` (or its
    damped generalization ``A = (gamma_mech**2/4 + omega0**2) /
    (4 * gamma_q * omega0 * sqrt(eta))``),

        cos(theta_pm) = -(2 A^2 sqrt(eta) (1+eta) pm sqrt(1 - A^2 (eta-1)^2))
                         / (1 + 4 A^2 eta)

    Returns
    -------
    StabilityBand or None
        ``None`` when the discriminant is negative or both roots fall
        outside [-1, 1] (no instability at any phase).

    Raises
    ------
    ValueError
        If ``eta == 0`` or ``gamma_q == 0`` (no loop feedback, boundary
        undefined).
    """
    eta, gq, w0, gm = params.eta, params.gamma_q, params.omega0, params.gamma_mech
    if eta <= 0.0:
        raise ValueError("stability boundary undefined for eta = 0 (open loop)")
    if gq <= 0.0:
        raise ValueError("stability boundary undefined for gamma_q = 0")
    sq = math.sqrt(eta)
    if gm > 0.0:
        a = (0.25 * gm * gm + w0 * w0) / (4.0 * gq * w0 * sq)
    else:
        a = w0 / (4.0 * gq * sq)

    disc = 1.0 - a * a * (eta - 1.0) ** 2
    if disc < 0.0:
        return None
    den = 1.0 + 4.0 * a * a * eta
    root = math.sqrt(disc)
    shift = 2.0 * a * a * sq * (1.0 + eta)
    cos_hi = -(shift - root) / den  # larger cosine -> smaller theta
    cos_lo = -(shift + root) / den
    if cos_hi < -1.0 or cos_lo > 1.0:
        return None
    # A root sliding past +/-1 would clip the band at 0 or pi, but sin(theta)
    # vanishes there and the mode re-stabilizes, so clamping is safe.
    theta_minus = math.acos(min(1.0, cos_hi))
    theta_plus = math.acos(max(-1.0, cos_lo))
    return StabilityBand(theta_minus=theta_minus, theta_plus=theta_plus)


def delay_validity(
    params: SystemParams, loop_length: float, group_velocity: float
) -> float:
    """Worst-case ratio of propagation delay to dynamical timescale.

    The loop description treats light propagation as instantaneous.  The
    resummed round trips amplify an effective path by the noise-power factor
    ``F = (1 - eta**2) / (1 - eta)**2``, so the approximation holds while

        ratio = omega0 * loop_length / (F * group_velocity) << 1

    ``params.omega0`` must be the physical angular frequency (rad/s) and
    ``loop_length``/``group_velocity`` in matching units.  Ratios above
    roughly 0.1 mean retardation corrections can no longer be neglected.
    """
    if loop_length < 0.0:
        raise ValueError("loop_length must be non-negative")
    if group_velocity <= 0.0:
        raise ValueError("group_velocity must be positive")
    eta = params.eta
    amplification = (1.0 - eta * eta) / (1.0 - eta) ** 2
    return params.omega0 * loop_length / (amplification * group_velocity)
