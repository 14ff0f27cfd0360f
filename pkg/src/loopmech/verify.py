"""Open-loop measurement records and backward state estimation.

Once the loop is opened the particles evolve independently under continuous
position monitoring, whose backaction erases the prepared state.  This module
simulates the measurement records, runs the backward (retrodiction) filter on
them, reconstructs the covariance the loop had prepared, and reports witness
values with statistical and systematic confidence intervals.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import NonPhysicalStateError, NumericalError
from .gaussian import (
    SYMPLECTIC_FORM,
    Basis,
    TwoModeState,
    basis_change,
    symplectic_eigenvalues,
    witness_from_joint_cov,
)
from .model import SystemParams
from .transient import evolve, optimal_negativity, wiener_sigma0_policy, witness_series

# Trajectories per work unit.  Fixed so per-trajectory arithmetic, and hence
# the assembled ensemble, is bit-identical for every thread count.
_SIM_BLOCK = 128

# Two-sided 2-sigma quantiles of the standard normal, in percent.
_TWO_SIGMA_PERCENTILES = (2.275013194817921, 97.72498680518208)


# ---------------------------------------------------------------------------
# measurement model


@dataclass(frozen=True)
class MeasurementModel:
    """Linear model dx = A x dt + dw, record z = C^T x + v.

    State order is (q_plus, p_plus, q_minus, p_minus); with the loop open the
    two blocks are decoupled, so the same matrices describe the bare-particle
    coordinates as well.  W and V are white-noise intensities: <w w^T> = W dt,
    <v v^T> = V dt at the record level.
    """

    A: np.ndarray
    W: np.ndarray
    C: np.ndarray
    V: np.ndarray
    sigma_sym: np.ndarray = field(default_factory=lambda: SYMPLECTIC_FORM.copy())

    def __post_init__(self) -> None:
        a = np.array(self.A, dtype=float)
        w = np.array(self.W, dtype=float)
        c = np.array(self.C, dtype=float)
        v = np.array(self.V, dtype=float)
        s = np.array(self.sigma_sym, dtype=float)
        if a.shape != (4, 4) or w.shape != (4, 4) or s.shape != (4, 4):
            raise ValueError("A, W and sigma_sym must be 4x4")
        if c.shape != (4, 2) or v.shape != (2, 2):
            raise ValueError("C must be 4x2 and V 2x2")
        for name, m in (("W", w), ("V", v)):
            if not np.allclose(m, m.T, atol=1e-12):
                raise ValueError(f"{name} must be symmetric")
            if np.min(np.linalg.eigvalsh(m)) < -1e-12:
                raise ValueError(f"{name} must be positive semidefinite")
        for name, m in (("A", a), ("W", w), ("C", c), ("V", v), ("sigma_sym", s)):
            m.setflags(write=False)
            object.__setattr__(self, name, m)

    def noise_gain(self) -> np.ndarray:
        """Matrix B with B B^T = W (eigenvector square root)."""
        vals, vecs = np.linalg.eigh(self.W)
        return vecs * np.sqrt(np.clip(vals, 0.0, None))

    def record_gain(self) -> np.ndarray:
        """Matrix L with L L^T = V."""
        vals, vecs = np.linalg.eigh(self.V)
        return vecs * np.sqrt(np.clip(vals, 0.0, None))


def _model_from_scalars(omega0: float, gamma_q: float, eta_c: float) -> MeasurementModel:
    rot = np.array([[0.0, omega0], [-omega0, 0.0]])
    a = np.zeros((4, 4))
    a[:2, :2] = rot
    a[2:, 2:] = rot
    w = np.diag([0.0, 2.0 * gamma_q, 0.0, 2.0 * gamma_q])
    c = np.zeros((4, 2))
    gain = math.sqrt(4.0 * eta_c * gamma_q)
    c[0, 0] = gain
    c[2, 1] = gain
    v = 0.5 * np.eye(2)
    return MeasurementModel(A=a, W=w, C=c, V=v)


def build_measurement_model(params: SystemParams) -> MeasurementModel:
    """Open-loop monitoring model for the two decoupled particles.

    Every photon that reaches the detection path is assumed measured, so only
    the collection efficiency eta_c enters the observation gain
    sqrt(4 * eta_c * gamma_q) on each position coordinate.
    """
    return _model_from_scalars(params.omega0, params.gamma_q, params.eta_c)


# ---------------------------------------------------------------------------
# trajectory simulation


@dataclass(frozen=True)
class TrajectoryRecord:
    """One simulated monitoring run.

    ``record[k]`` is the binned measurement over step k, with variance V/dt;
    ``states`` holds the latent path including both endpoints when kept.
    """

    times: np.ndarray
    states: np.ndarray | None
    record: np.ndarray
    stream_id: int


def trajectory_stream(master_seed: int, index: int) -> np.random.Generator:
    """Counter-based RNG stream for one trajectory.

    Streams are independent across indices and reproducible from
    (master_seed, index) alone, regardless of how work is scheduled.
    """
    seq = np.random.SeedSequence(entropy=master_seed, spawn_key=(0, index))
    return np.random.Generator(np.random.Philox(seq))


def _bootstrap_stream(master_seed: int) -> np.random.Generator:
    seq = np.random.SeedSequence(entropy=master_seed, spawn_key=(1, 0))
    return np.random.Generator(np.random.Philox(seq))


def _initial_cholesky(sigma_init: TwoModeState) -> np.ndarray:
    if sigma_init.basis is not Basis.JOINT:
        sigma_init = basis_change(sigma_init)
    symplectic_eigenvalues(sigma_init)
    try:
        return np.linalg.cholesky(sigma_init.cov)
    except np.linalg.LinAlgError as exc:
        raise NonPhysicalStateError(
            "initial covariance is not positive definite"
        ) from exc


def _step_count(dt: float, t_max: float) -> int:
    if dt <= 0.0 or t_max <= 0.0:
        raise ValueError("dt and t_max must be positive")
    n = int(round(t_max / dt))
    if n < 1 or abs(n * dt - t_max) > 1e-9 * max(1.0, t_max):
        raise ValueError("t_max must be an integer multiple of dt")
    return n


def _simulate_block(
    model: MeasurementModel,
    chol: np.ndarray | None,
    dt: float,
    n_steps: int,
    master_seed: int,
    indices: Sequence[int],
    state_indices: Sequence[int],
    x0: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Draw per-trajectory streams for a block and integrate it.

    Draw order per trajectory is fixed (initial point, then u1, u2, record
    noise), so any batching of trajectories gives identical results.
    """
    m = len(indices)
    n = n_steps
    x0s = np.empty((m, 4))
    u1 = np.empty((m, n, 4))
    u2 = np.empty((m, n, 4))
    xi = np.empty((m, n, 2))
    for row, idx in enumerate(indices):
        gen = trajectory_stream(master_seed, idx)
        if chol is not None:
            x0s[row] = chol @ gen.standard_normal(4)
        else:
            x0s[row] = x0[row]
        u1[row] = gen.standard_normal((n, 4))
        u2[row] = gen.standard_normal((n, 4))
        xi[row] = gen.standard_normal((n, 2))
    return _simulate_block_from_draws(model, x0s, dt, n, u1, u2, xi, state_indices)


def simulate_trajectory(
    model: MeasurementModel,
    sigma_init: TwoModeState | None,
    dt: float,
    t_max: float,
    stream: np.random.Generator | int | None = None,
    *,
    stream_id: int = 0,
    x0: np.ndarray | None = None,
    keep_states: bool = True,
) -> TrajectoryRecord:
    """Simulate one monitoring run of length t_max.

    The initial point is drawn from the Gaussian with covariance
    ``sigma_init`` unless ``x0`` pins it explicitly.  Passing an integer as
    ``stream`` treats it as a master seed for (seed, stream_id).
    """
    n = _step_count(dt, t_max)
    if x0 is None:
        if sigma_init is None:
            raise ValueError("either sigma_init or x0 is required")
        chol = _initial_cholesky(sigma_init)
        x0_arr = None
    else:
        chol = None
        x0_arr = np.asarray(x0, dtype=float).reshape(1, 4)
    sidx = range(n + 1) if keep_states else (0,)
    if isinstance(stream, np.random.Generator):
        # Ad-hoc generator: same fixed draw order as the seeded path.
        gen = stream
        if chol is not None:
            x0_arr = (chol @ gen.standard_normal(4)).reshape(1, 4)
        record, states = _simulate_block_from_draws(
            model, x0_arr, dt, n,
            gen.standard_normal((1, n, 4)),
            gen.standard_normal((1, n, 4)),
            gen.standard_normal((1, n, 2)),
            sidx,
        )
    else:
        seed = 0 if stream is None else int(stream)
        record, states = _simulate_block(
            model, chol, dt, n, seed, [stream_id], sidx, x0_arr
        )
    times = dt * np.arange(n + 1)
    return TrajectoryRecord(
        times=times,
        states=states[:, 0, :] if keep_states else None,
        record=record[0],
        stream_id=stream_id,
    )


def _simulate_block_from_draws(model, x0s, dt, n, u1, u2, xi, state_indices):
    """Integration core shared by seeded and generator-driven entry points."""
    a = model.A
    b = model.noise_gain()
    lv = model.record_gain()
    prop = np.eye(4) + a * dt + (a @ a) * (dt * dt / 2.0)
    ab = a @ b
    sqdt = math.sqrt(dt)
    m = x0s.shape[0]
    drive = (sqdt * u1) @ b.T
    drive += (dt * sqdt * (0.5 * u1 + u2 / (2.0 * math.sqrt(3.0)))) @ ab.T
    record_noise = (xi / sqdt) @ lv.T
    record = np.empty((m, n, 2))
    keep = {int(k): j for j, k in enumerate(state_indices)}
    states = np.empty((len(state_indices), m, 4))
    x = x0s
    if 0 in keep:
        states[keep[0]] = x
    for k in range(n):
        record[:, k] = x @ model.C + record_noise[:, k]
        x = x @ prop.T + drive[:, k]
        if k + 1 in keep:
            states[keep[k + 1]] = x
    return record, states


@dataclass(frozen=True)
class SimulationBatch:
    """Records (and optional state snapshots) for an ensemble of runs."""

    times: np.ndarray
    records: np.ndarray
    state_indices: tuple[int, ...]
    states: np.ndarray | None


def simulate_ensemble(
    model: MeasurementModel,
    sigma_init: TwoModeState,
    dt: float,
    t_max: float,
    n_trajectories: int,
    master_seed: int,
    *,
    state_indices: Sequence[int] = (),
    threads: int = 1,
) -> SimulationBatch:
    """Simulate independent monitoring runs with per-trajectory RNG streams.

    Results are bit-identical for any ``threads`` value: work is split into
    fixed-size blocks and reassembled in index order.
    """
    if n_trajectories < 1:
        raise ValueError("n_trajectories must be positive")
    n = _step_count(dt, t_max)
    chol = _initial_cholesky(sigma_init)
    sidx = tuple(int(k) for k in state_indices)
    for k in sidx:
        if not 0 <= k <= n:
            raise ValueError("state index outside the step range")

    blocks = [
        range(start, min(start + _SIM_BLOCK, n_trajectories))
        for start in range(0, n_trajectories, _SIM_BLOCK)
    ]

    def run(block: range) -> tuple[np.ndarray, np.ndarray]:
        return _simulate_block(model, chol, dt, n, master_seed, block, sidx)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(run, blocks))
    else:
        parts = [run(block) for block in blocks]

    records = np.concatenate([p[0] for p in parts], axis=0)
    states = (
        np.concatenate([p[1] for p in parts], axis=1) if sidx else None
    )
    return SimulationBatch(
        times=dt * np.arange(n + 1),
        records=records,
        state_indices=sidx,
        states=states,
    )


# ---------------------------------------------------------------------------
# backward filter


@dataclass(frozen=True)
class RiccatiSolution:
    """Backward filter covariance: transient path and steady value.

    ``times`` are distances before the end of the record; ``path[j]`` is the
    filter covariance once measurements spanning ``times[j]`` have been
    folded in.  ``residual`` is the max-norm defect of the steady value in
    the algebraic equation A V + V A^T + 2 V C C^T V = W.
    """

    times: np.ndarray
    path: np.ndarray
    steady: np.ndarray
    residual: float
    converged_at: float


def riccati_retrodiction(
    model: MeasurementModel,
    t_max: float,
    dt: float = 1e-3,
    *,
    prior_scale: float = 1e6,
    tol: float = 1e-10,
    residual_tol: float = 1e-10,
    max_tau: float = 200.0,
) -> RiccatiSolution:
    """Integrate the backward filter covariance to its steady state.

    The uninformative start (isotropic prior ``prior_scale``) makes the
    covariance form stiff, so the integration runs on the information matrix
    U = V^-1, dU/dtau = U A + A^T U - U W U + C V_meas^-1 C^T, with classic
    RK4.  Both the per-step relative change and the algebraic residual must
    pass before the solution counts as converged.
    """
    if np.max(np.abs(model.C)) == 0.0:
        raise ValueError("observation matrix is zero: no information to filter")
    if dt <= 0.0 or t_max < 0.0:
        raise ValueError("dt must be positive and t_max non-negative")
    a = model.A
    w = model.W
    info_rate = model.C @ np.linalg.inv(model.V) @ model.C.T

    def rhs(u: np.ndarray) -> np.ndarray:
        ua = u @ a
        return ua + ua.T - u @ w @ u + info_rate

    n_path = int(round(t_max / dt))
    path = np.empty((n_path + 1, 4, 4))
    u = np.eye(4) / prior_scale
    v = np.linalg.inv(u)
    path[0] = v
    steady = None
    converged_at = math.nan
    residual = math.inf
    k = 0
    max_steps = int(round(max_tau / dt))
    while k < max_steps:
        k1 = rhs(u)
        k2 = rhs(u + 0.5 * dt * k1)
        k3 = rhs(u + 0.5 * dt * k2)
        k4 = rhs(u + dt * k3)
        u = u + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        u = 0.5 * (u + u.T)
        k += 1
        v_new = np.linalg.inv(u)
        if k <= n_path:
            path[k] = v_new
        change = np.max(np.abs(v_new - v)) / max(1.0, np.max(np.abs(v_new)))
        v = v_new
        if change < tol:
            res_mat = a @ v + v @ a.T + v @ info_rate @ v - w
            residual = float(np.max(np.abs(res_mat)))
            if residual < residual_tol:
                steady = 0.5 * (v + v.T)
                converged_at = k * dt
                break
    if steady is None:
        raise NumericalError(
            "backward filter covariance did not converge "
            f"within tau = {max_tau} (last residual {residual:.3e})"
        )
    if k < n_path:
        path[k + 1 :] = steady
    return RiccatiSolution(
        times=dt * np.arange(n_path + 1),
        path=path,
        steady=steady,
        residual=residual,
        converged_at=converged_at,
    )


def retrodict(
    model: MeasurementModel,
    record: np.ndarray,
    v_e: np.ndarray,
    dt: float,
) -> np.ndarray:
    """Backward state estimate from one measurement record.

    Starting from a vanishing estimate at the end of the record, each reverse
    step folds in the measurement taken over that step:

        x[k] = x[k+1] + dt * (M x[k+1] + G z[k]),
        G = V_E C V_meas^-1,  M = -A - G C^T.

    ``v_e`` is either the steady covariance (4, 4) or a per-time path of
    shape (n+1, 4, 4) aligned with the record grid.  Returns the estimates at
    every grid time, index 0 first.
    """
    record = np.asarray(record, dtype=float)
    if record.ndim != 2 or record.shape[1] != 2:
        raise ValueError("record must have shape (n, 2)")
    n = record.shape[0]
    v_e = np.asarray(v_e, dtype=float)
    if v_e.shape == (4, 4):
        path = None
    elif v_e.shape == (n + 1, 4, 4):
        path = v_e
    else:
        raise ValueError("v_e must be (4, 4) or (n+1, 4, 4)")
    vinv = np.linalg.inv(model.V)
    out = np.zeros((n + 1, 4))
    x = np.zeros(4)
    for k in range(n - 1, -1, -1):
        if path is None:
            v_here = v_e
        else:
            # Reverse-time distance to the record end at the step start.
            v_here = path[n - (k + 1)]
        gain = v_here @ model.C @ vinv
        drift = -model.A - gain @ model.C.T
        x = x + dt * (drift @ x + gain @ record[k])
        out[k] = x
    return out


def _retrodict_batch(
    model: MeasurementModel,
    records: np.ndarray,
    v_steady: np.ndarray,
    dt: float,
    keep_indices: Sequence[int],
) -> np.ndarray:
    """Steady-gain backward pass over a whole ensemble at once."""
    n = records.shape[1]
    gain = v_steady @ model.C @ np.linalg.inv(model.V)
    drift = -model.A - gain @ model.C.T
    step = np.eye(4) + dt * drift
    keep = {int(k): j for j, k in enumerate(keep_indices)}
    out = np.empty((len(keep_indices), records.shape[0], 4))
    x = np.zeros((records.shape[0], 4))
    if n in keep:
        out[keep[n]] = x
    for k in range(n - 1, -1, -1):
        x = x @ step.T + dt * (records[:, k] @ gain.T)
        if k in keep:
            out[keep[k]] = x
    return out


# ---------------------------------------------------------------------------
# ensemble statistics


@dataclass(frozen=True)
class EnsembleEstimate:
    """Covariance reconstructed from retrodicted state vectors."""

    cov: np.ndarray
    n_samples: int
    physical: bool


def ensemble_estimate(samples: np.ndarray, v_steady: np.ndarray) -> EnsembleEstimate:
    """Sample covariance of the estimates minus the filter covariance.

    The retrodicted vectors scatter with the covariance of the underlying
    state plus the filter error, so subtracting the steady filter covariance
    recovers the state.  Small ensembles can land outside the physical set;
    the result is returned as-is with ``physical`` flagging it.
    """
    samples = np.asarray(samples, dtype=float)
    if samples.ndim != 2 or samples.shape[1] != 4:
        raise ValueError("samples must have shape (n, 4)")
    if samples.shape[0] < 2:
        raise ValueError("at least two samples are required")
    cov = np.cov(samples, rowvar=False, ddof=1)
    est = 0.5 * (cov + cov.T) - np.asarray(v_steady, dtype=float)
    try:
        symplectic_eigenvalues(TwoModeState(cov=est, basis=Basis.JOINT))
        physical = True
    except (NonPhysicalStateError, ValueError):
        physical = False
    return EnsembleEstimate(cov=est, n_samples=samples.shape[0], physical=physical)


@dataclass(frozen=True)
class BootstrapInterval:
    """Percentile interval at the two-sided 2-sigma level."""

    lower: float
    upper: float
    n_failed: int


def bootstrap_ci(
    samples: np.ndarray,
    statistic: Callable[[np.ndarray], float],
    n_resamples: int = 1000,
    seed: int = 0,
) -> BootstrapInterval:
    """Percentile bootstrap over trajectory-level resampling.

    Resamples where the statistic is undefined (NaN or a non-physical
    covariance estimate) are dropped and counted in ``n_failed``.
    Deterministic for a given seed.
    """
    samples = np.asarray(samples, dtype=float)
    if samples.ndim != 2:
        raise ValueError("samples must be two-dimensional")
    if n_resamples < 2:
        raise ValueError("n_resamples must be at least 2")
    n = samples.shape[0]
    rng = _bootstrap_stream(seed)
    idx = rng.integers(0, n, size=(n_resamples, n))
    values = np.empty(n_resamples)
    for j in range(n_resamples):
        try:
            values[j] = statistic(samples[idx[j]])
        except (NonPhysicalStateError, ValueError):
            values[j] = math.nan
    good = values[~np.isnan(values)]
    n_failed = n_resamples - good.size
    if good.size == 0:
        return BootstrapInterval(lower=math.nan, upper=math.nan, n_failed=n_failed)
    lo, hi = np.percentile(good, _TWO_SIGMA_PERCENTILES)
    return BootstrapInterval(lower=float(lo), upper=float(hi), n_failed=n_failed)


def witness_statistic(v_steady: np.ndarray) -> Callable[[np.ndarray], float]:
    """Statistic mapping retrodicted samples to the witness of the estimate."""

    def stat(samples: np.ndarray) -> float:
        est = ensemble_estimate(samples, v_steady)
        nu, _ = witness_from_joint_cov(est.cov[np.newaxis], strict=False)
        return float(nu[0])

    return stat


@dataclass(frozen=True)
class SystematicBudget:
    """First-order parameter-error propagation on the filter witness."""

    relative_2sigma: float
    base_value: float
    components: dict[str, float]


def systematic_error(
    params: SystemParams,
    rel_errors: tuple[float, float, float] = (1e-3, 0.05, 0.05),
    *,
    fd_step: float = 1e-4,
    riccati_dt: float = 1e-3,
) -> SystematicBudget:
    """Systematic 2-sigma of the witness of the steady filter covariance.

    ``rel_errors`` are the relative 1-sigma uncertainties on (omega0,
    gamma_q, eta_c).  Central differences with relative step ``fd_step``
    propagate them to nu_min[V_E], assumed uncorrelated and combined in
    quadrature, then doubled.
    """
    if any(r < 0.0 for r in rel_errors):
        raise ValueError("relative errors must be non-negative")

    base = (params.omega0, params.gamma_q, params.eta_c)

    def nu_of(scales: tuple[float, float, float]) -> float:
        mdl = _model_from_scalars(*(b * s for b, s in zip(base, scales)))
        sol = riccati_retrodiction(mdl, t_max=0.0, dt=riccati_dt / params.omega0)
        nu, _ = witness_from_joint_cov(sol.steady[np.newaxis], strict=True)
        return float(nu[0])

    nu0 = nu_of((1.0, 1.0, 1.0))
    names = ("omega0", "gamma_q", "eta_c")
    components: dict[str, float] = {}
    total_sq = 0.0
    for i, (name, rel) in enumerate(zip(names, rel_errors)):
        if rel == 0.0:
            components[name] = 0.0
            continue
        up = [1.0, 1.0, 1.0]
        dn = [1.0, 1.0, 1.0]
        up[i] += fd_step
        dn[i] -= fd_step
        slope = (nu_of(tuple(up)) - nu_of(tuple(dn))) / (2.0 * fd_step * nu0)
        contrib = abs(slope) * rel
        components[name] = contrib
        total_sq += contrib * contrib
    return SystematicBudget(
        relative_2sigma=2.0 * math.sqrt(total_sq),
        base_value=nu0,
        components=components,
    )


# ---------------------------------------------------------------------------
# full protocol


@dataclass(frozen=True)
class VerifyConfig:
    """Knobs for the certification run.

    All times are dimensionless (omega0 * t); defaults match a record of
    800 steps retrodicted onto a 21-point report grid over the first period
    fraction where the witness is informative.
    """

    n_trajectories: int = 1000
    dt: float = 1e-2
    t_max: float = 8.0
    report_t_max: float = 1.0
    n_report: int = 21
    seed: int = 0
    n_resamples: int = 1000
    rel_errors: tuple[float, float, float] = (1e-3, 0.05, 0.05)
    threads: int = 1
    riccati_dt: float = 1e-3


@dataclass(frozen=True)
class RetrodictionReport:
    """Theory curve, retrodicted curve and its confidence bands."""

    params: SystemParams
    config: VerifyConfig
    times: np.ndarray
    theory_nu: np.ndarray
    retrodicted_nu: np.ndarray
    ci_stat: np.ndarray
    ci_sys_relative: float
    ci_sys_absolute: float
    ci_combined: np.ndarray
    sigma0_theory: np.ndarray
    sigma0_estimate: np.ndarray
    filter_nu: float
    riccati_residual: float
    failed_resamples: tuple[int, ...]
    warnings: tuple[str, ...]

    def to_dict(self) -> dict:
        def num(x: float) -> float | None:
            x = float(x)
            return None if math.isnan(x) else x

        p = self.params
        c = self.config
        meta = {
            "params": {
                "gamma_q": p.gamma_q,
                "eta": p.eta,
                "theta": p.theta,
                "omega0": p.omega0,
                "eta_c": p.eta_c,
                "eta_m": p.eta_m,
                "gamma_mech": p.gamma_mech,
            },
            "config": {
                "n_trajectories": c.n_trajectories,
                "dt": c.dt,
                "t_max": c.t_max,
                "report_t_max": c.report_t_max,
                "n_report": c.n_report,
                "seed": c.seed,
                "n_resamples": c.n_resamples,
                "rel_errors": list(c.rel_errors),
                # thread count is an execution detail, not part of the result:
                # the same seed gives bit-identical numbers at any thread count
                "riccati_dt": c.riccati_dt,
            },
            "time_unit": "omega0 * t",
            "filter_nu": num(self.filter_nu),
            "riccati_residual": num(self.riccati_residual),
            "sigma0_theory": self.sigma0_theory.tolist(),
            "sigma0_estimate": self.sigma0_estimate.tolist(),
            "failed_resamples": list(self.failed_resamples),
            "warnings": list(self.warnings),
        }
        return {
            "metadata": meta,
            "theory_curve": [
                {"time": num(t), "nu_min": num(v)}
                for t, v in zip(self.times, self.theory_nu)
            ],
            "retrodicted_curve": [
                {"time": num(t), "nu_min": num(v)}
                for t, v in zip(self.times, self.retrodicted_nu)
            ],
            "ci_stat": [
                {"time": num(t), "lower": num(lo), "upper": num(hi)}
                for t, (lo, hi) in zip(self.times, self.ci_stat)
            ],
            "ci_sys": {
                "relative_2sigma": num(self.ci_sys_relative),
                "absolute_2sigma": num(self.ci_sys_absolute),
            },
            "ci_combined": [
                {"time": num(t), "lower": num(lo), "upper": num(hi)}
                for t, (lo, hi) in zip(self.times, self.ci_combined)
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2, allow_nan=False)


def verify_experiment(
    params: SystemParams, config: VerifyConfig | None = None
) -> RetrodictionReport:
    """End-to-end certification of the loop-prepared entangled state.

    Prepares the optimal transient state, opens the loop, simulates monitored
    records, retrodicts the state at each report time and compares the
    witness with the open-loop theory curve, with bootstrap (statistical) and
    parameter-propagation (systematic) 2-sigma bands added in quadrature.
    Reports are byte-identical for a given seed, for any thread count.
    """
    if config is None:
        config = VerifyConfig()
    if params.eta <= 0.0:
        raise ValueError("state preparation needs a closed loop (eta > 0)")
    if params.gamma_q <= 0.0 or params.eta_c <= 0.0:
        raise ValueError("monitoring needs gamma_q > 0 and eta_c > 0")
    if config.n_trajectories < 2:
        raise ValueError("at least two trajectories are required")
    if not 0.0 < config.report_t_max <= config.t_max:
        raise ValueError("report grid must fit inside the record")

    scale = 1.0 / params.omega0
    dt = config.dt * scale
    t_max = config.t_max * scale
    n_steps = _step_count(dt, t_max)

    report_times = np.linspace(0.0, config.report_t_max, config.n_report)
    report_idx = np.rint(report_times / config.dt).astype(int)
    if np.max(np.abs(report_idx * config.dt - report_times)) > 1e-9:
        raise ValueError("report grid does not land on simulation steps")
    if np.any(np.diff(report_idx) <= 0):
        raise ValueError("report grid is finer than the simulation step")

    launch = wiener_sigma0_policy(params)
    best = optimal_negativity(launch, params)
    sigma0 = evolve(launch, params, best.t_star)
    open_params = SystemParams(
        gamma_q=params.gamma_q,
        eta=0.0,
        theta=0.0,
        omega0=params.omega0,
        eta_c=params.eta_c,
        eta_m=0.0,
    )

    model = build_measurement_model(params)
    riccati = riccati_retrodiction(model, t_max=t_max, dt=config.riccati_dt * scale)
    filter_nu, _ = witness_from_joint_cov(riccati.steady[np.newaxis], strict=True)

    theory = witness_series(sigma0, open_params, report_times * scale)

    batch = simulate_ensemble(
        model,
        sigma0,
        dt,
        t_max,
        config.n_trajectories,
        config.seed,
        threads=config.threads,
    )
    estimates = _retrodict_batch(
        model, batch.records, riccati.steady, dt, report_idx.tolist()
    )

    stat = witness_statistic(riccati.steady)
    retro_nu = np.empty(config.n_report)
    ci_stat = np.empty((config.n_report, 2))
    failed: list[int] = []
    any_nonphysical = False
    for r in range(config.n_report):
        est = ensemble_estimate(estimates[r], riccati.steady)
        if not est.physical:
            any_nonphysical = True
        nu_r, _ = witness_from_joint_cov(est.cov[np.newaxis], strict=False)
        retro_nu[r] = nu_r[0]
        interval = bootstrap_ci(
            estimates[r], stat, n_resamples=config.n_resamples, seed=config.seed
        )
        ci_stat[r] = (interval.lower, interval.upper)
        failed.append(interval.n_failed)

    budget = systematic_error(params, config.rel_errors)
    sys_abs = budget.relative_2sigma * float(filter_nu[0])
    lower = retro_nu - np.sqrt((retro_nu - ci_stat[:, 0]) ** 2 + sys_abs**2)
    upper = retro_nu + np.sqrt((ci_stat[:, 1] - retro_nu) ** 2 + sys_abs**2)
    ci_combined = np.column_stack([lower, upper])

    warnings: list[str] = []
    if config.n_trajectories < 100:
        warnings.append("insufficient ensemble")
    if any_nonphysical:
        warnings.append("non-physical covariance estimate at some report times")
    if any(f > 0 for f in failed):
        warnings.append("some bootstrap resamples were dropped")

    sigma0_est = ensemble_estimate(estimates[0], riccati.steady)
    return RetrodictionReport(
        params=params,
        config=config,
        times=report_times,
        theory_nu=theory.nu_min,
        retrodicted_nu=retro_nu,
        ci_stat=ci_stat,
        ci_sys_relative=budget.relative_2sigma,
        ci_sys_absolute=sys_abs,
        ci_combined=ci_combined,
        sigma0_theory=sigma0.cov,
        sigma0_estimate=sigma0_est.cov,
        filter_nu=float(filter_nu[0]),
        riccati_residual=riccati.residual,
        failed_resamples=tuple(failed),
        warnings=tuple(warnings),
    )
