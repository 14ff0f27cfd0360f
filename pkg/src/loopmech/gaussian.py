"""Two-mode Gaussian states: bases, witnesses and conditional preparation.

Covariance matrices are 4x4, symmetric, ordered (q1, p1, q2, p2) in the
single-particle basis or (q+, p+, q-, p-) in the joint-mode basis, with the
vacuum at variance 1/2 per quadrature ([q, p] = i).

The separability witness ``nu_min`` is the smallest symplectic eigenvalue of
the partially transposed state; values below 1 certify entanglement and map
onto a logarithmic negativity in decibels via ``log_negativity``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import NonPhysicalStateError, NumericalError
from .model import SystemParams

__all__ = [
    "BASIS_SWAP",
    "SYMPLECTIC_FORM",
    "Basis",
    "TwoModeState",
    "EllipseSummary",
    "basis_change",
    "nu_min",
    "log_negativity",
    "symplectic_eigenvalues",
    "witness_from_joint_cov",
    "wiener_block",
    "wiener_initial_state",
    "vacuum_state",
    "ellipse_summary",
]


class Basis(Enum):
    SINGLE_PARTICLE = "single_particle"
    JOINT = "joint"


# Orthogonal, symmetric, involutory: the same matrix maps either way between
# (q1, p1, q2, p2) and (q+, p+, q-, p-).
BASIS_SWAP = np.array(
    [
        [1.0, 0.0, 1.0, 0.0],
        [0.0, 1.0, 0.0, 1.0],
        [1.0, 0.0, -1.0, 0.0],
        [0.0, 1.0, 0.0, -1.0],
    ]
) / math.sqrt(2.0)

# Symplectic form for two modes, block diag([[0, 1], [-1, 0]]).
SYMPLECTIC_FORM = np.array(
    [
        [0.0, 1.0, 0.0, 0.0],
        [-1.0, 0.0, 0.0, 0.0],
        [0.0, 0.0, 0.0, 1.0],
        [0.0, 0.0, -1.0, 0.0],
    ]
)

_SYM_TOL = 1e-10


@dataclass(frozen=True)
class TwoModeState:
    """A 4x4 covariance matrix tagged with the basis it lives in."""

    cov: np.ndarray
    basis: Basis

    def __post_init__(self):
        cov = np.asarray(self.cov, dtype=float)
        if cov.shape != (4, 4):
            raise ValueError(f"covariance must be 4x4, got shape {cov.shape}")
        asym = np.max(np.abs(cov - cov.T))
        scale = max(1.0, float(np.max(np.abs(cov))))
        if asym > _SYM_TOL * scale:
            raise ValueError(f"covariance not symmetric (max asymmetry {asym:g})")
        object.__setattr__(self, "cov", 0.5 * (cov + cov.T))

    def block(self, i: int) -> np.ndarray:
        """2x2 diagonal block of mode i (0 or 1)."""
        s = 2 * i
        return self.cov[s : s + 2, s : s + 2]


@dataclass(frozen=True)
class EllipseSummary:
    """Principal-axis summary of one mode's 2x2 covariance block."""

    semi_axes: tuple[float, float]  # standard deviations, descending
    orientation: float  # major-axis angle in [0, pi)
    squeezing_db: float  # positive when the minor variance beats vacuum


def vacuum_state(basis: Basis = Basis.SINGLE_PARTICLE) -> TwoModeState:
    return TwoModeState(cov=0.5 * np.eye(4), basis=basis)


def basis_change(state: TwoModeState) -> TwoModeState:
    """Flip between the single-particle and joint-mode bases."""
    other = (
        Basis.JOINT if state.basis is Basis.SINGLE_PARTICLE else Basis.SINGLE_PARTICLE
    )
    return TwoModeState(cov=BASIS_SWAP @ state.cov @ BASIS_SWAP.T, basis=other)


def _single_particle_cov(state: TwoModeState) -> np.ndarray:
    if state.basis is Basis.SINGLE_PARTICLE:
        return state.cov
    return BASIS_SWAP @ state.cov @ BASIS_SWAP.T


# Relative error of the witness grows like machine epsilon times the
# condition number of the covariance.  Past 1e13 the value carries no
# reliable digits in float64.
_WITNESS_CONDITION_MAX = 1e13

def _condition_estimate(sp: np.ndarray, det: np.ndarray) -> np.ndarray:
    """Frobenius condition number of stacked 4x4 matrices.

    Uses the adjugate (Cayley-Hamilton form) so that singular input yields
    inf instead of raising.  Overestimates the 2-norm condition number by
    at most a factor of 4.
    """
    sp2 = sp @ sp
    sp3 = sp2 @ sp
    c1 = np.trace(sp, axis1=-2, axis2=-1)
    t2 = np.trace(sp2, axis1=-2, axis2=-1)
    t3 = np.trace(sp3, axis1=-2, axis2=-1)
    c2 = 0.5 * (c1 * c1 - t2)
    c3 = (c1 ** 3 - 3.0 * c1 * t2 + 2.0 * t3) / 6.0
    adj = (
        -sp3
        + c1[..., None, None] * sp2
        - c2[..., None, None] * sp
        + c3[..., None, None] * np.eye(4)
    )
    fro = np.sqrt(np.sum(sp * sp, axis=(-2, -1)))
    adj_fro = np.sqrt(np.sum(adj * adj, axis=(-2, -1)))
    with np.errstate(divide="ignore", invalid="ignore"):
        return fro * adj_fro / np.abs(det)


def _witness_core(cov_sp: np.ndarray, strict: bool):
    """Witness from stacked single-particle-basis covariances (..., 4, 4)."""
    # nu is homogeneous of degree 1 in the covariance; normalizing each
    # matrix by its largest entry keeps the determinants representable even
    # for strongly amplified (unstable-mode) states.
    mag = np.max(np.abs(cov_sp), axis=(-2, -1))
    mag = np.where(mag > 0.0, mag, 1.0)
    sp = cov_sp / mag[..., None, None]

    def det2(b):
        return b[..., 0, 0] * b[..., 1, 1] - b[..., 0, 1] * b[..., 1, 0]

    d = det2(sp[..., :2, :2]) + det2(sp[..., 2:, 2:]) - 2.0 * det2(sp[..., :2, 2:])
    det = np.linalg.det(sp)
    unreliable = ~(_condition_estimate(sp, det) < _WITNESS_CONDITION_MAX)
    if np.any(unreliable) and strict:
        raise NumericalError(
            "witness not resolvable in double precision: determinant "
            f"cancellation depth exceeds {_WITNESS_CONDITION_MAX:g}"
        )
    scale = np.maximum(1.0, d * d)
    inner = d * d - 4.0 * det
    bad = (inner < -1e-9 * scale) & ~unreliable
    if np.any(bad) and strict:
        raise NonPhysicalStateError(
            "negative witness radicand beyond tolerance; covariance is not a state"
        )
    denom = d + np.sqrt(np.maximum(inner, 0.0))
    with np.errstate(divide="ignore", invalid="ignore"):
        nu_sq = 8.0 * det / denom
    bad_outer = ((denom <= 0.0) | (nu_sq < -1e-9 * scale)) & ~unreliable & ~bad
    if np.any(bad_outer) and strict:
        raise NonPhysicalStateError(
            "negative squared witness beyond tolerance; covariance is not a state"
        )
    nu = mag * np.sqrt(np.maximum(nu_sq, 0.0))
    nu = np.where(unreliable | bad | bad_outer, np.nan, nu)
    with np.errstate(divide="ignore", invalid="ignore"):
        en = np.where(nu < 1.0, -10.0 * np.log10(np.maximum(nu, 1e-300)), 0.0)
    en = np.where(np.isnan(nu), np.nan, en)
    return nu, en


def nu_min(state: TwoModeState) -> float:
    """Smallest symplectic eigenvalue of the partial transpose.

    Defined in closed form from the 2x2 blocks alpha, beta, gamma of the
    single-particle covariance matrix:

        nu_min = sqrt(2*d - 2*sqrt(d**2 - 4*det(cov))),
        d = det(alpha) + det(beta) - 2*det(gamma)

    (evaluated in the algebraically equivalent product form
    8*det(cov)/(d + sqrt(d**2 - 4*det(cov))), which stays accurate when
    4*det(cov) << d**2).  Values below 1 witness entanglement between the
    two particles.

    Raises
    ------
    NonPhysicalStateError
        If a radicand is negative beyond -1e-9 relative; smaller excursions
        are clamped to zero.
    NumericalError
        If the determinant cancellation is too deep for float64 to leave
        any reliable digits in the result.
    """
    nu, _ = _witness_core(_single_particle_cov(state), strict=True)
    return float(nu)


def log_negativity(state: TwoModeState) -> float:
    """Logarithmic negativity in decibels, -10*min(0, log10(nu_min))."""
    nu = nu_min(state)
    if nu >= 1.0:
        return 0.0
    return -10.0 * math.log10(nu)


def witness_from_joint_cov(cov: np.ndarray, strict: bool = True):
    """Vectorized witness over stacked joint-basis covariance matrices.

    Parameters
    ----------
    cov : ndarray, shape (..., 4, 4)
    strict : bool
        With ``strict`` a covariance outside the physical set (beyond
        tolerance) or too ill-conditioned to evaluate raises; otherwise
        such entries come back NaN (useful for noisy covariance estimates).

    Returns
    -------
    (nu, en) : ndarrays with the leading shape of ``cov``
    """
    cov = np.asarray(cov, dtype=float)
    sp = np.einsum("ij,...jk,lk->...il", BASIS_SWAP, cov, BASIS_SWAP)
    return _witness_core(sp, strict)


def symplectic_eigenvalues(state: TwoModeState) -> tuple[float, float]:
    """Symplectic spectrum, normalized so the vacuum gives (1, 1).

    Both values must be >= 1 for a physical state (checked to -1e-9).
    """
    w = np.linalg.eigvals(1j * SYMPLECTIC_FORM @ state.cov)
    nus = np.sort(np.abs(w.real))
    pair = (2.0 * float(nus[0]), 2.0 * float(nus[2]))
    if pair[0] < 1.0 - 1e-9:
        raise NonPhysicalStateError(
            f"symplectic eigenvalue {pair[0]:.12g} below 1; covariance is not a state"
        )
    return pair


def wiener_block(omega: float, gamma: float, efficiency: float) -> np.ndarray:
    """Steady conditional covariance of one continuously watched mode.

    Parameters
    ----------
    omega : float
        Mode frequency.
    gamma : float
        Measurement-backaction rate feeding the momentum.
    efficiency : float
        Fraction of the scattered information actually detected, in (0, 1].

    Returns
    -------
    ndarray
        2x2 block [[Q2, E], [E, P2]] with

            Omega_W**2 = omega**2 * sqrt(1 + efficiency*(4*gamma/omega)**2)
            Gamma_W    = sqrt(2*Omega_W**2 - 2*omega**2)
            Q2 = Gamma_W / (8*efficiency*gamma)
            P2 = Q2 * Omega_W**2 / omega**2
            E  = Gamma_W**2 / (16*efficiency*gamma*omega)

        The determinant is 1/(4*efficiency) identically: pure at unit
        efficiency, physically mixed below it.
    """
    if not 0.0 < efficiency <= 1.0:
        raise ValueError(f"efficiency must lie in (0, 1], got {efficiency}")
    if gamma <= 0.0:
        raise ValueError(f"gamma must be positive, got {gamma}")
    if omega <= 0.0:
        raise ValueError(f"omega must be positive, got {omega}")
    w_sq = omega * omega * math.sqrt(1.0 + efficiency * (4.0 * gamma / omega) ** 2)
    g_w = math.sqrt(2.0 * w_sq - 2.0 * omega * omega)
    q2 = g_w / (8.0 * efficiency * gamma)
    p2 = q2 * w_sq / (omega * omega)
    e = g_w * g_w / (16.0 * efficiency * gamma * omega)
    return np.array([[q2, e], [e, p2]])


def wiener_initial_state(
    params: SystemParams, detection_efficiency: float
) -> TwoModeState:
    """Product state prepared by continuously watching each particle.

    Before the loop is closed, all collected light from each tweezer goes to
    a homodyne receiver; the conditional steady state of each particle is the
    single-mode block of :func:`wiener_block` evaluated at the bare trap
    frequency and recoil rate.  Used as the launch state for the transient
    protocol.
    """
    block = wiener_block(params.omega0, params.gamma_q, detection_efficiency)
    cov = np.zeros((4, 4))
    cov[:2, :2] = block
    cov[2:, 2:] = block
    return TwoModeState(cov=cov, basis=Basis.SINGLE_PARTICLE)


def ellipse_summary(block: np.ndarray) -> EllipseSummary:
    """Principal axes of a 2x2 covariance block.

    Returns semi-axes as standard deviations in descending order, the major
    axis orientation folded into [0, pi) (0 for isotropic blocks), and the
    squeezing of the minor variance below vacuum in dB.
    """
    block = np.asarray(block, dtype=float)
    if block.shape != (2, 2):
        raise ValueError(f"expected a 2x2 block, got shape {block.shape}")
    if abs(block[0, 1] - block[1, 0]) > _SYM_TOL * max(1.0, float(np.abs(block).max())):
        raise ValueError("block not symmetric")
    vals, vecs = np.linalg.eigh(0.5 * (block + block.T))
    if vals[0] <= 0.0:
        raise NonPhysicalStateError(f"non-positive variance {vals[0]:g} in block")
    if vals[1] - vals[0] <= 1e-12 * vals[1]:
        orientation = 0.0
    else:
        major = vecs[:, 1]
        orientation = math.atan2(major[1], major[0]) % math.pi
    return EllipseSummary(
        semi_axes=(math.sqrt(vals[1]), math.sqrt(vals[0])),
        orientation=orientation,
        squeezing_db=-10.0 * math.log10(vals[0] / 0.5),
    )
