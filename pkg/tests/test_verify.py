import json
import math

import numpy as np
import pytest
from scipy.linalg import solve_continuous_are

from loopmech import (
    Basis,
    MeasurementModel,
    NumericalError,
    SystemParams,
    VerifyConfig,
    basis_change,
    bootstrap_ci,
    build_measurement_model,
    ensemble_estimate,
    evolve,
    optimal_negativity,
    retrodict,
    riccati_retrodiction,
    simulate_ensemble,
    simulate_trajectory,
    systematic_error,
    trajectory_stream,
    verify_experiment,
    wiener_sigma0_policy,
    witness_from_joint_cov,
    witness_statistic,
)

P10 = SystemParams(gamma_q=2.0, eta=0.5, theta=2.0 * math.pi / 3.0, eta_c=0.5)


@pytest.fixture(scope="module")
def model():
    return build_measurement_model(P10)


@pytest.fixture(scope="module")
def steady_filter(model):
    return riccati_retrodiction(model, t_max=0.0)


def test_measurement_model_structure(model):
    rot = np.array([[0.0, 1.0], [-1.0, 0.0]])
    want_a = np.zeros((4, 4))
    want_a[:2, :2] = rot
    want_a[2:, 2:] = rot
    np.testing.assert_array_equal(model.A, want_a)
    np.testing.assert_array_equal(model.W, np.diag([0.0, 4.0, 0.0, 4.0]))
    want_c = np.zeros((4, 2))
    want_c[0, 0] = want_c[2, 1] = 2.0  # sqrt(4 * 0.5 * 2.0)
    np.testing.assert_array_equal(model.C, want_c)
    np.testing.assert_array_equal(model.V, 0.5 * np.eye(2))
    b = model.noise_gain()
    np.testing.assert_allclose(b @ b.T, model.W, atol=1e-12)
    lv = model.record_gain()
    np.testing.assert_allclose(lv @ lv.T, model.V, atol=1e-12)


def test_measurement_model_validation():
    with pytest.raises(ValueError):
        MeasurementModel(
            A=np.zeros((4, 4)), W=np.zeros((4, 4)), C=np.zeros((4, 2)),
            V=-np.eye(2),
        )
    with pytest.raises(ValueError):
        MeasurementModel(
            A=np.zeros((3, 3)), W=np.zeros((4, 4)), C=np.zeros((4, 2)),
            V=0.5 * np.eye(2),
        )


def test_noiseless_step_tracks_rotation(model):
    # W = V = 0 leaves the pure rotation; the order-2 propagator must hold
    # a tight global error over one period
    silent = MeasurementModel(
        A=model.A, W=np.zeros((4, 4)), C=model.C, V=np.zeros((2, 2))
    )
    rec = simulate_trajectory(
        silent, None, dt=1e-3, t_max=1.0, x0=np.array([1.0, 0.0, 0.0, 0.0])
    )
    exact = np.array([math.cos(1.0), -math.sin(1.0), 0.0, 0.0])
    assert np.max(np.abs(rec.states[-1] - exact)) < 1e-6


def test_riccati_needs_information(model):
    dark = MeasurementModel(A=model.A, W=model.W, C=np.zeros((4, 2)), V=model.V)
    with pytest.raises(ValueError):
        riccati_retrodiction(dark, t_max=1.0)
    # nearly-dark record: convergence cannot happen inside max_tau
    faint = build_measurement_model(
        SystemParams(gamma_q=1e-12, eta=0.5, theta=2.0, eta_c=0.5)
    )
    with pytest.raises(NumericalError):
        riccati_retrodiction(faint, t_max=1.0, max_tau=20.0)


def test_riccati_matches_algebraic_solution(model, steady_filter):
    v_are = solve_continuous_are(-model.A.T, model.C, model.W, 0.5 * np.eye(2))
    assert np.max(np.abs(steady_filter.steady - v_are)) < 1e-9
    assert steady_filter.residual < 1e-10
    assert math.isfinite(steady_filter.converged_at)
    nu, _ = witness_from_joint_cov(steady_filter.steady[np.newaxis], strict=True)
    # both particle blocks settle at purity eta_c: nu = 1/sqrt(eta_c)
    assert float(nu[0]) == pytest.approx(math.sqrt(2.0), abs=1e-7)


def test_riccati_path_layout(model):
    sol = riccati_retrodiction(model, t_max=10.0)
    assert sol.path.shape == (10001, 4, 4)
    assert sol.times[0] == 0.0 and sol.times[-1] == pytest.approx(10.0)
    # uninformative start, then contraction onto the steady value
    assert sol.path[0][0, 0] == pytest.approx(1e6, rel=1e-6)
    np.testing.assert_allclose(sol.steady, sol.steady.T, atol=1e-12)
    gap = np.max(np.abs(sol.path - sol.steady), axis=(1, 2))
    assert gap[2000] < gap[500] < gap[100]
    # convergence lands inside this window, so the tail is the steady value
    assert sol.converged_at < 10.0
    np.testing.assert_array_equal(sol.path[-1], sol.steady)


def test_retrodict_is_linear(model, steady_filter):
    rng = np.random.default_rng(12)
    n = 60
    za = rng.standard_normal((n, 2))
    zb = rng.standard_normal((n, 2))
    v = steady_filter.steady
    xa = retrodict(model, za, v, dt=1e-2)
    xb = retrodict(model, zb, v, dt=1e-2)
    xab = retrodict(model, za + zb, v, dt=1e-2)
    np.testing.assert_allclose(xab, xa + xb, atol=1e-12)
    assert np.all(retrodict(model, np.zeros((n, 2)), v, dt=1e-2) == 0.0)
    with pytest.raises(ValueError):
        retrodict(model, za[:, :1], v, dt=1e-2)
    with pytest.raises(ValueError):
        retrodict(model, za, v[:3, :3], dt=1e-2)


def test_ensemble_estimate_recovers_known_state(steady_filter):
    launch = wiener_sigma0_policy(P10)
    best = optimal_negativity(launch, P10)
    st = evolve(launch, P10, best.t_star)
    sigma_true = (st if st.basis is Basis.JOINT else basis_change(st)).cov
    v_st = steady_filter.steady
    rng = np.random.default_rng(3)
    chol = np.linalg.cholesky(sigma_true + v_st)
    samples = rng.standard_normal((4000, 4)) @ chol.T
    est = ensemble_estimate(samples, v_st)
    assert est.n_samples == 4000
    assert est.physical
    # sampling noise on the largest entries is a few percent at this size
    assert np.max(np.abs(est.cov - sigma_true)) < 0.15 * np.max(np.abs(sigma_true))
    # the uncorrected second moment stays physical by construction
    assert np.min(np.linalg.eigvalsh(est.cov + v_st)) > -1e-10
    # v_steady = 0 reduces to the plain sample covariance
    plain = ensemble_estimate(samples, np.zeros((4, 4)))
    np.testing.assert_allclose(
        plain.cov, np.cov(samples, rowvar=False, ddof=1), atol=1e-12
    )
    with pytest.raises(ValueError):
        ensemble_estimate(samples[:1], v_st)
    with pytest.raises(ValueError):
        ensemble_estimate(samples[:, :3], v_st)


def test_witness_statistic_tracks_true_value(steady_filter):
    launch = wiener_sigma0_policy(P10)
    best = optimal_negativity(launch, P10)
    st = evolve(launch, P10, best.t_star)
    sigma_true = (st if st.basis is Basis.JOINT else basis_change(st)).cov
    v_st = steady_filter.steady
    rng = np.random.default_rng(3)
    rng.standard_normal((1000, 1))  # keep the draw order of the frozen run
    chol = np.linalg.cholesky(sigma_true + v_st)
    samples = rng.standard_normal((4000, 4)) @ chol.T
    stat = witness_statistic(v_st)
    nu_true, _ = witness_from_joint_cov(sigma_true[np.newaxis], strict=True)
    assert stat(samples) == pytest.approx(float(nu_true[0]), rel=0.08)


def test_bootstrap_interval_scaling_and_determinism():
    rng = np.random.default_rng(3)
    data = rng.standard_normal((1000, 1))
    mean = lambda s: float(np.mean(s))
    small = bootstrap_ci(data[:250], mean, n_resamples=2000, seed=5)
    big = bootstrap_ci(data, mean, n_resamples=2000, seed=5)
    ratio = (small.upper - small.lower) / (big.upper - big.lower)
    assert 1.4 < ratio < 2.6  # ~2 expected for a 4x sample-size step
    again = bootstrap_ci(data, mean, n_resamples=2000, seed=5)
    assert (again.lower, again.upper) == (big.lower, big.upper)
    assert big.n_failed == 0


def test_bootstrap_counts_failed_resamples():
    rng = np.random.default_rng(4)
    data = rng.standard_normal((40, 1))
    data[7, 0] = np.nan
    mean = lambda s: float(np.mean(s))
    ci = bootstrap_ci(data, mean, n_resamples=400, seed=0)
    assert 0 < ci.n_failed < 400
    assert math.isfinite(ci.lower) and ci.lower <= ci.upper
    all_bad = bootstrap_ci(
        np.full((10, 1), np.nan), mean, n_resamples=50, seed=0
    )
    assert all_bad.n_failed == 50
    assert math.isnan(all_bad.lower) and math.isnan(all_bad.upper)
    with pytest.raises(ValueError):
        bootstrap_ci(data, mean, n_resamples=1)
    with pytest.raises(ValueError):
        bootstrap_ci(data[:, 0], mean)


def test_systematic_budget_pins():
    budget = systematic_error(P10)
    assert budget.relative_2sigma == pytest.approx(0.05, abs=1e-4)
    assert budget.base_value == pytest.approx(math.sqrt(2.0), abs=1e-6)
    # the filter witness depends on the parameters only through eta_c
    assert budget.components["omega0"] < 1e-9
    assert budget.components["gamma_q"] < 1e-4
    assert budget.components["eta_c"] == pytest.approx(0.025, abs=1e-4)
    with pytest.raises(ValueError):
        systematic_error(P10, rel_errors=(-0.1, 0.0, 0.0))


def test_trajectory_streams_are_independent():
    a1 = trajectory_stream(0, 3).standard_normal(8)
    a2 = trajectory_stream(0, 3).standard_normal(8)
    b = trajectory_stream(0, 4).standard_normal(8)
    c = trajectory_stream(1, 3).standard_normal(8)
    np.testing.assert_array_equal(a1, a2)
    assert not np.array_equal(a1, b)
    assert not np.array_equal(a1, c)


def test_simulate_ensemble_thread_invariance(model):
    sigma0 = wiener_sigma0_policy(P10)
    kw = dict(dt=1e-2, t_max=0.5, n_trajectories=150, master_seed=9)
    a = simulate_ensemble(model, sigma0, state_indices=(0, 50), threads=1, **kw)
    b = simulate_ensemble(model, sigma0, state_indices=(0, 50), threads=2, **kw)
    assert a.records.shape == (150, 50, 2)
    np.testing.assert_array_equal(a.records, b.records)
    np.testing.assert_array_equal(a.states, b.states)
    # a block-sized ensemble is a prefix of a larger one: streams are per-index
    small = simulate_ensemble(model, sigma0, dt=1e-2, t_max=0.5,
                              n_trajectories=10, master_seed=9)
    np.testing.assert_array_equal(small.records, a.records[:10])
    with pytest.raises(ValueError):
        simulate_ensemble(model, sigma0, dt=1e-2, t_max=0.5,
                          n_trajectories=4, master_seed=9, state_indices=(99,))


def test_verify_experiment_smoke():
    cfg = VerifyConfig(
        n_trajectories=10, dt=1e-2, t_max=2.0, report_t_max=0.5,
        n_report=6, seed=1, n_resamples=50,
    )
    report = verify_experiment(P10, cfg)
    assert "insufficient ensemble" in report.warnings
    assert report.times.shape == report.theory_nu.shape == (6,)
    assert report.ci_stat.shape == report.ci_combined.shape == (6, 2)
    # combined band contains the statistical one
    ok = np.isfinite(report.ci_stat).all(axis=1)
    assert np.all(report.ci_combined[ok, 0] <= report.ci_stat[ok, 0] + 1e-12)
    assert np.all(report.ci_combined[ok, 1] >= report.ci_stat[ok, 1] - 1e-12)
    assert report.theory_nu[0] == pytest.approx(0.5607394927424352, rel=1e-9)
    doc = json.loads(report.to_json())
    assert set(doc) == {
        "metadata", "theory_curve", "retrodicted_curve",
        "ci_stat", "ci_sys", "ci_combined",
    }
    assert len(doc["theory_curve"]) == 6
    assert "insufficient ensemble" in doc["metadata"]["warnings"]
    # byte-identical rerun at the same seed
    assert verify_experiment(P10, cfg).to_json() == report.to_json()


def test_verify_experiment_validation():
    with pytest.raises(ValueError):
        verify_experiment(SystemParams(gamma_q=2.0, eta=0.0, theta=0.0, eta_c=0.5))
    with pytest.raises(ValueError):
        verify_experiment(P10, VerifyConfig(n_trajectories=1))
    with pytest.raises(ValueError):
        # 0.5 / 6 does not land on the dt grid
        verify_experiment(P10, VerifyConfig(report_t_max=0.5, n_report=7))
