"""In-loop homodyne readout and conditional steady states.

A tap diverts a fraction ``eta_m`` of the collected light (efficiency
``eta_c``) to a homodyne receiver while the rest keeps feeding the loop.
The measured field carries each joint mode with an analyzer-angle-dependent
gain, and the imprecision noise is partially correlated with the backaction
force; at the optimal angle those correlations vanish and the information
rate is maximal.  Conditioning on the record then steers each joint mode
into a steady state of the same family as the single-particle case, with
the mode frequency, mode recoil rate and an effective efficiency
``eta_c*eta_m/(1 - eta)`` taking the bare roles.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import DegenerateAngleError, UnstableModeError
from .gaussian import Basis, TwoModeState, wiener_block
from .model import ModePair, SystemParams, loop_coefficients, mode_spectrum

__all__ = [
    "MeasurementSettings",
    "ConditionalMap",
    "measurement_settings",
    "optimal_angle",
    "imprecision_backaction_correlator",
    "signal_gain",
    "effective_efficiency",
    "conditional_joint_state",
    "conditional_witness_map",
]


@dataclass(frozen=True)
class MeasurementSettings:
    """Analyzer configuration resolved against the loop coefficients.

    ``signal_gain`` holds the per-mode position-to-record transduction and
    ``imprecision_weights`` the per-mode coefficients (w_xb, w_yb, w_xc,
    w_yc) with which the two vacuum inputs enter the measured quadrature.
    """

    analyzer_angle: float
    signal_gain: ModePair
    imprecision_weights: dict[int, tuple[float, float, float, float]]


def _tap_rate(params: SystemParams) -> float:
    """Backaction rate associated with the measured light."""
    return params.eta_c * params.eta_m * params.gamma_q


def optimal_angle(params: SystemParams) -> ModePair:
    """Analyzer angles maximizing the per-mode information rate.

    tan(phi_pm) = -sc_pm / s1_pm, equivalently
    cot(theta) -/+ 1/(sqrt(eta) sin(theta)); both forms are checked against
    each other.  Angles are folded into [0, pi).

    Raises
    ------
    DegenerateAngleError
        For sin(theta) = 0, where the two forms degenerate and the measured
        information collapses onto the phase quadrature.
    ValueError
        If no light reaches the receiver (eta_c*eta_m = 0).
    """
    if params.eta_c * params.eta_m <= 0.0:
        raise ValueError("no measured light: eta_c * eta_m must be positive")
    if params.eta == 0.0:
        # Open loop: the record only carries the phase quadrature.
        return ModePair(0.5 * math.pi, 0.5 * math.pi)
    if math.sin(params.theta) == 0.0:
        raise DegenerateAngleError(
            "optimal angle undefined at sin(theta) = 0; only the phase "
            "quadrature carries information there"
        )
    coeff = loop_coefficients(params)
    sq = math.sqrt(params.eta)
    angles = {}
    for sign in (+1, -1):
        phi = math.atan2(-coeff.sc[sign], coeff.s1[sign]) % math.pi
        tan_main = 1.0 / math.tan(params.theta) - sign / (sq * math.sin(params.theta))
        phi_main = math.atan(tan_main) % math.pi
        # Angles are defined modulo pi; compare on the circle.
        gap = abs((phi - phi_main + 0.5 * math.pi) % math.pi - 0.5 * math.pi)
        if gap > 1e-9:
            raise AssertionError(
                f"angle forms disagree for sign {sign:+d}: {phi!r} vs {phi_main!r}"
            )
        angles[sign] = phi
    return ModePair(angles[+1], angles[-1])


def imprecision_backaction_correlator(
    params: SystemParams, sign: int, phi: float
) -> float:
    """Correlation between the record's noise floor and the recoil force.

    C(phi) = sqrt(eta_c*eta_m) * (sin(phi)*s1 + cos(phi)*sc); it vanishes at
    the optimal analyzer angle, where the signal gain is simultaneously
    extremal (the correlator is proportional to the gain's phi-derivative).
    """
    coeff = loop_coefficients(params)
    root = math.sqrt(params.eta_c * params.eta_m)
    return root * (
        math.sin(phi) * coeff.s1[sign] + math.cos(phi) * coeff.sc[sign]
    )


def signal_gain(params: SystemParams, sign: int, phi: float) -> float:
    """Transduction of the joint-mode position into the record.

    sqrt(4*Gamma_m) * (sin(phi)*sc - cos(phi)*s1) with Gamma_m the measured
    backaction rate eta_c*eta_m*gamma_q.  At the optimal angle the magnitude
    closes to sqrt(4*Gamma_m / (1 + eta -/+ 2*sqrt(eta)*cos(theta))).
    """
    coeff = loop_coefficients(params)
    root = math.sqrt(4.0 * _tap_rate(params))
    return root * (math.sin(phi) * coeff.sc[sign] - math.cos(phi) * coeff.s1[sign])


def measurement_settings(params: SystemParams, phi: float) -> MeasurementSettings:
    """Bundle the per-mode gains and imprecision noise weights at angle phi.

    The measured quadrature mixes the loop vacuum input b and the tap vacuum
    input c; the stored weights are the coefficients of (X_b, Y_b, X_c, Y_c)
    in the recorded noise for each joint mode.
    """
    coeff = loop_coefficients(params)
    eta_m = params.eta_m
    bar_m = 1.0 - eta_m
    bar_c = 1.0 - params.eta_c
    sinp, cosp = math.sin(phi), math.cos(phi)
    weights = {}
    gains = {}
    for sign in (+1, -1):
        s1, s2, sc = coeff.s1[sign], coeff.s2[sign], coeff.sc[sign]
        root_b = math.sqrt(eta_m * bar_c)
        if bar_m > 0.0:
            diag_c = math.sqrt(bar_m) + eta_m * s2 / math.sqrt(bar_m)
            off_c = eta_m * s1 / math.sqrt(bar_m)
        else:
            # Fully tapped loop: the c input is the only port left.
            diag_c = 0.0
            off_c = 0.0
        w_xb = cosp * root_b * sc + sinp * root_b * s1
        w_yb = -cosp * root_b * s1 + sinp * root_b * sc
        w_xc = cosp * diag_c + sinp * off_c
        w_yc = -cosp * off_c + sinp * diag_c
        weights[sign] = (w_xb, w_yb, w_xc, w_yc)
        gains[sign] = signal_gain(params, sign, phi)
    return MeasurementSettings(
        analyzer_angle=phi,
        signal_gain=ModePair(gains[+1], gains[-1]),
        imprecision_weights=weights,
    )


def effective_efficiency(params: SystemParams) -> ModePair:
    """Detection efficiency seen by each joint mode, eta_c*eta_m/(1 - eta).

    The loop recirculation makes the tap sample the motional signal more
    than once, so the effective efficiency exceeds the bare product; it is
    the same for both modes.  A consistent split eta = eta_c*(1 - eta_m)
    keeps the value at or below 1 (unity exactly when eta_c = 1); roundoff
    excursions above 1 are clamped.
    """
    if params.eta_c * params.eta_m <= 0.0:
        raise ValueError("no measured light: eta_c * eta_m must be positive")
    value = min(params.eta_c * params.eta_m / (1.0 - params.eta), 1.0)
    return ModePair(value, value)


def conditional_joint_state(params: SystemParams) -> TwoModeState:
    """Steady state of both joint modes under the optimal in-loop readout.

    Each mode settles into the single-mode conditional family evaluated at
    its own frequency and recoil rate with the effective efficiency
    eta_c*eta_m/(1 - eta).  Requires both modes dynamically stable.
    """
    spectrum = mode_spectrum(params)
    if spectrum.omega_minus_sq <= 0.0 or spectrum.omega_plus_sq <= 0.0:
        raise UnstableModeError(
            "conditional steady state undefined: a joint mode is unstable"
        )
    eff = effective_efficiency(params)
    cov = np.zeros((4, 4))
    for sign, rows in ((+1, slice(0, 2)), (-1, slice(2, 4))):
        omega = math.sqrt(spectrum.omega_sq(sign))
        cov[rows, rows] = wiener_block(omega, spectrum.gamma(sign), eff[sign])
    return TwoModeState(cov=cov, basis=Basis.JOINT)


@dataclass(frozen=True)
class ConditionalMap:
    theta_grid: np.ndarray
    gammaq_grid: np.ndarray
    nu_min: np.ndarray  # NaN on masked (unstable) cells
    log_negativity: np.ndarray
    stable: np.ndarray


def conditional_witness_map(
    params: SystemParams,
    theta_grid: np.ndarray,
    gammaq_grid: np.ndarray,
) -> ConditionalMap:
    """Steady-state witness over a (theta, gamma_q) grid.

    Unstable cells have no steady state and are masked (NaN) with the
    stability flag cleared.
    """
    from .gaussian import log_negativity as _en, nu_min as _nu  # local to avoid cycle

    theta_grid = np.asarray(theta_grid, dtype=float)
    gammaq_grid = np.asarray(gammaq_grid, dtype=float)
    nu = np.full((theta_grid.size, gammaq_grid.size), np.nan)
    en = np.full_like(nu, np.nan)
    stable = np.zeros(nu.shape, dtype=bool)
    for i, th in enumerate(theta_grid):
        for j, gq in enumerate(gammaq_grid):
            cell = replace(params, theta=float(th), gamma_q=float(gq))
            spec = mode_spectrum(cell)
            stable[i, j] = spec.stable
            if not spec.stable:
                continue
            state = conditional_joint_state(cell)
            nu[i, j] = _nu(state)
            en[i, j] = _en(state)
    return ConditionalMap(
        theta_grid=theta_grid,
        gammaq_grid=gammaq_grid,
        nu_min=nu,
        log_negativity=en,
        stable=stable,
    )
