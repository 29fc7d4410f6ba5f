import math

import numpy as np
import pytest

from specbal.balancer import BalanceProblem
from specbal.errors import ConfigError
from specbal.spectral_core import random_matrix_set
from specbal.walk import (
    FiniteSupport,
    Gaussian,
    MaxRadialVariance,
    MinRadialVariance,
    RoundRobin,
    Strategy,
    UniformRandom,
    WalkConfig,
    exit_time_bound,
    exit_time_stats,
    fit_decay,
    locate_r0,
    lyapunov_drift,
    make_strategy,
    return_frequencies,
    simple_walk_steps,
    simulate_walks,
    transience_experiment,
)


def steps_of(paths):
    return np.diff(paths, axis=1).reshape(-1, paths.shape[-1])


def covariance_within(steps, cov, z):
    """Entrywise comparison of the empirical second moments with ``cov`` in standard errors."""
    n = len(steps)
    prods = steps[:, :, None] * steps[:, None, :]
    se = prods.std(axis=0, ddof=1) / math.sqrt(n)
    dev = np.abs(prods.mean(axis=0) - cov)
    return np.all(dev <= z * se + 1e-15), dev / np.maximum(se, 1e-300)


# --- step laws


def test_finite_support_validation():
    with pytest.raises(ConfigError, match="centred"):
        FiniteSupport([[1.0, 0.0], [0.5, 0.0]])
    with pytest.raises(ConfigError, match="sum"):
        FiniteSupport([[1.0], [-1.0]], [0.5, 0.6])
    with pytest.raises(ConfigError):
        FiniteSupport([[1.0], [-1.0]], [1.5, -0.5])
    fs = simple_walk_steps(3)
    assert np.allclose(fs.covariance, np.eye(3) / 3)


def test_gaussian_requires_pd():
    with pytest.raises(ValueError):
        Gaussian(np.diag([1.0, 0.0]))


def test_pushforward_covariances():
    A = np.array([[1.0, 2.0], [0.0, 1.0]])
    g = Gaussian(np.diag([2.0, 1.0])).pushforward(A)
    assert np.allclose(g.covariance, A @ np.diag([2.0, 1.0]) @ A.T)
    f = simple_walk_steps(2).pushforward(A)
    assert np.allclose(f.covariance, A @ A.T / 2)


# --- strategies


def test_make_strategy():
    assert make_strategy("fixed:1").index == 1
    assert make_strategy("fixed(2)").index == 2
    assert isinstance(make_strategy("round_robin"), RoundRobin)
    with pytest.raises(ConfigError):
        make_strategy("greedy")
    with pytest.raises(ConfigError):
        make_strategy("fixed:x")


def test_builtin_choices():
    covs = [np.diag([4.0, 1.0]), np.diag([1.0, 4.0])]
    y = np.array([[1.0, 0.0], [0.0, 1.0], [0.0, 0.0]])
    assert MaxRadialVariance().bind(covs).choose(0, y, None).tolist() == [0, 1, 0]
    assert MinRadialVariance().bind(covs).choose(0, y, None).tolist() == [1, 0, 0]
    rr = RoundRobin().bind(covs)
    assert [rr.choose(t, y, None)[0] for t in range(4)] == [0, 1, 0, 1]
    ur = UniformRandom().bind(covs)
    assert ur.choose(0, y, None, np.array([0.1, 0.6, 0.99])).tolist() == [0, 1, 1]


def test_fixed_index_out_of_range():
    with pytest.raises(ConfigError):
        simulate_walks(WalkConfig([Gaussian(np.eye(2))], "fixed:3", horizon=5, n_walks=2))


class Recorder(Strategy):
    """Plugin that alternates per walk and records what it is shown."""

    name = "recorder"

    def init_state(self, n):
        return {"calls": [], "flip": np.zeros(n, dtype=np.intp)}

    def choose(self, t, y, state, u=None):
        state["calls"].append((t, np.array(y)))
        state["flip"] ^= 1
        return state["flip"].copy()


def test_plugin_sees_only_the_past():
    rec = Recorder()
    seen = {}
    original = rec.init_state

    def keep(n):
        seen["state"] = original(n)
        return seen["state"]

    rec.init_state = keep
    cfg = WalkConfig([Gaussian(np.eye(2)), Gaussian(4 * np.eye(2))], rec, horizon=20, n_walks=3,
                     record_paths=3, seed=4)
    stats = simulate_walks(cfg)
    calls = seen["state"]["calls"]
    assert [t for t, _ in calls] == list(range(20))
    for t, y in calls:
        # the position shown at step t is X_t, never a later one
        assert np.array_equal(y, stats.paths[:, t])


# --- configuration


def test_config_errors():
    g2, g3 = Gaussian(np.eye(2)), Gaussian(np.eye(3))
    with pytest.raises(ConfigError, match="n_walks"):
        WalkConfig([g2], n_walks=0)
    with pytest.raises(ConfigError, match="dimension"):
        WalkConfig([g2, g3])
    with pytest.raises(ConfigError, match="preconditioner"):
        WalkConfig([g2], preconditioner=np.eye(3))
    with pytest.raises(ConfigError, match="checkpoint"):
        WalkConfig([g2], horizon=10, checkpoints=(5, 20))
    with pytest.raises(ConfigError, match="positive definite"):
        WalkConfig([FiniteSupport([[1.0, 0.0], [-1.0, 0.0]])])


# --- simulation


def test_isotropic_return_frequencies_decrease():
    cfg = WalkConfig([Gaussian(np.eye(3))], "fixed:0", horizon=600, return_radius=3.0,
                     checkpoints=(10, 30, 100, 300), n_walks=2000, seed=1)
    st = simulate_walks(cfg)
    assert np.all(np.diff(st.p_hat) < 0)
    assert np.allclose(st.std_err, np.sqrt(st.p_hat * (1 - st.p_hat) / 2000))
    assert st.rows()[0].keys() == {"strategy", "T", "p_hat", "std_err", "n_walks", "T_max", "seed"}


def test_simple_walk_covariance():
    cfg = WalkConfig([simple_walk_steps(3)], horizon=500, n_walks=40, record_paths=40, seed=2)
    ok, z = covariance_within(steps_of(simulate_walks(cfg).paths), np.eye(3) / 3, 3.0)
    assert ok, z


@pytest.mark.parametrize("i", [0, 1])
def test_fixed_strategy_covariance_fidelity(i):
    ms = random_matrix_set(np.random.default_rng(6), 3, 2)
    cfg = WalkConfig([Gaussian(M) for M in ms], f"fixed:{i}", horizon=1000, n_walks=100,
                     record_paths=100, seed=9)
    steps = steps_of(simulate_walks(cfg).paths)
    assert len(steps) == 100_000
    ok, z = covariance_within(steps, ms[i], 5.0)
    assert ok, z


def test_preconditioner_consistency():
    rng = np.random.default_rng(0)
    ms = random_matrix_set(rng, 4, 2)
    P = rng.standard_normal((4, 4))
    dists = [Gaussian(ms[0]), FiniteSupport(np.vstack([np.eye(4), -np.eye(4)]) @ np.diag([1, 2, 3, 4.0]))]
    common = dict(strategy="max_radial_variance", horizon=300, n_walks=30, record_paths=30, seed=3)
    a = simulate_walks(WalkConfig(dists, preconditioner=P, **common)).paths
    b = simulate_walks(WalkConfig([d.pushforward(P) for d in dists], **common)).paths
    assert np.max(np.abs(a - b)) <= 1e-12 * max(1.0, np.max(np.abs(a)))


def test_reproducible_across_batches_and_jobs():
    ms = random_matrix_set(np.random.default_rng(1), 3, 2)
    cfg = WalkConfig([Gaussian(M) for M in ms], "uniform_random", horizon=400, return_radius=3,
                     checkpoints=(10, 100, 400), n_walks=150, seed=11, drift_alpha=0.5)
    a = simulate_walks(cfg)
    b = simulate_walks(cfg, batch_size=17)
    c = simulate_walks(cfg, n_jobs=2, batch_size=50)
    for other in (b, c):
        assert np.array_equal(a.last_visit, other.last_visit)
        assert np.array_equal(a.p_hat, other.p_hat)
        assert np.array_equal(a.drift, other.drift, equal_nan=True)


def test_return_frequencies_monotone():
    rng = np.random.default_rng(0)
    last = rng.integers(0, 1000, 500)
    p, _ = return_frequencies(last, [0, 10, 100, 500, 999])
    assert np.all(np.diff(p) <= 0)


# --- drift


def test_drift_of_zero_step_is_zero():
    assert lyapunov_drift(FiniteSupport(np.zeros((1, 3))), 1.0, np.array([5.0, 0, 0])) == (0.0, 0.0)


def test_drift_finite_support_is_exact():
    fs = simple_walk_steps(2)
    x = np.array([3.0, 4.0])
    phi = lambda y: min(np.linalg.norm(y) ** -0.5, 1.0)
    expected = np.mean([phi(x + p) - phi(x) for p in fs.points])
    est, se = lyapunov_drift(fs, 0.5, x)
    assert se == 0.0 and est == pytest.approx(expected, abs=1e-15)


def test_drift_control_variate_is_unbiased():
    # plain Monte Carlo mean with many samples agrees with the control-variate estimate
    g = Gaussian(np.diag([3.0, 1.0, 0.5]))
    x = np.array([2.0, 1.0, -1.0])
    est, se = lyapunov_drift(g, 1.0, x, n_samples=200_000, seed=1)
    rng = np.random.default_rng(7)
    Z = rng.standard_normal((400_000, 3)) @ g.factor.T
    vals = np.minimum(np.linalg.norm(x + Z, axis=1) ** -1.0, 1.0) - np.linalg.norm(x) ** -1.0
    plain_se = vals.std() / math.sqrt(len(vals))
    assert abs(est - vals.mean()) <= 4 * math.hypot(se, plain_se)


def test_r0_none_for_negative_control():
    g = Gaussian(np.diag([10.0, 1.0, 1.0]))
    assert locate_r0(g, 0.05, [1.0, 0, 0], n_samples=20_000, r_max=1e3) is None


def test_r0_bisection_for_isotropic_steps():
    g = Gaussian(np.eye(3))
    r0 = locate_r0(g, 0.05, [1.0, 0, 0], n_samples=50_000, seed=3)
    assert r0 is not None
    est, se = lyapunov_drift(g, 0.05, np.array([r0, 0, 0]), 50_000, seed=3)
    assert est <= -3 * se
    for r in (2 * r0, 4 * r0, 8 * r0):
        assert lyapunov_drift(g, 0.05, np.array([r, 0, 0]), 50_000, seed=3)[0] < 0


# --- exit times


def test_exit_time_bound_formula():
    b = exit_time_bound([np.eye(3)])
    assert (b["c"], b["K"], b["Q"]) == (3.0, 3.0, 8.0)
    assert b["Q_prime"] == pytest.approx(108.0)


def test_immediate_exit():
    cfg = WalkConfig([Gaussian(np.eye(3))], n_walks=500, seed=0)
    ex = exit_time_stats(cfg, 0.05, deltas=(0.5,))
    assert np.mean(ex.exit_times == 1) > 0.99
    assert ex.censored == 0


def test_exit_times_small_radius():
    cfg = WalkConfig([Gaussian(np.eye(3))], n_walks=500, seed=5)
    ex = exit_time_stats(cfg, 4.0, deltas=(0.5, 1.0))
    assert ex.censored == 0
    assert ex.mean_exit_time <= ex.mean_bound
    # Wald: E[tau] Tr = E|X_tau|^2 >= R^2
    assert ex.mean_exit_time >= 0.9 * 16 / 3
    assert set(ex.staying) == {0.5, 1.0}


# --- decay fits


def test_fit_decay_exact_power_law():
    T = np.array([10.0, 100, 1000])
    slope, intercept, n = fit_decay(T, 3 * T**-0.75)
    assert slope == pytest.approx(-0.75) and intercept == pytest.approx(math.log(3)) and n == 3
    assert math.isnan(fit_decay([10, 100], [0.5, 0.0])[0])


def test_transience_experiment_small():
    ms = random_matrix_set(np.random.default_rng(2), 5, 2)
    rep = transience_experiment(BalanceProblem(ms, 3), strategies=("max_radial_variance", "round_robin"),
                                checkpoints=(10, 30, 100), n_walks=300, horizon=300, seed=1)
    assert [d.strategy for d in rep.decays] == ["max_radial_variance", "round_robin"]
    assert rep.predicted_slope == -0.5
    # observed covariances A^T M A are balanced below 1/k
    for M in ms:
        C = rep.A @ M @ rep.A.T
        assert np.linalg.eigvalsh(C)[-1] / np.trace(C) < 1 / 3
    assert len(rep.rows()) == 6
    assert set(rep.summary()["strategies"]) == {"max_radial_variance", "round_robin"}


def test_transience_k2_strictly_decreasing():
    ms = random_matrix_set(np.random.default_rng(12), 3, 2)
    rep = transience_experiment(BalanceProblem(ms, 2), checkpoints=(10, 32, 100, 316, 1000),
                                n_walks=3000, seed=12)
    p = np.asarray(rep.decays[0].stats.p_hat)
    # consecutive events are nested, so the drop is itself a binomial fraction
    q = p[:-1] - p[1:]
    assert np.all(q > 3 * np.sqrt(q * (1 - q) / 3000))


def test_isotropic_baseline_slope():
    cfg = WalkConfig([Gaussian(np.eye(3))], "fixed:0", horizon=9500, return_radius=3.0,
                     checkpoints=(100, 316, 1000, 3162), n_walks=4000, seed=13)
    st = simulate_walks(cfg)
    slope, _, n = fit_decay(st.checkpoints, st.p_hat)
    assert n == 4 and slope <= -(3 - 2) / 2 + 0.25
