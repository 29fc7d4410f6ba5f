"""Adaptive random walks ``X_{t+1} = X_t + xi^{I_t}_{t+1}`` with selectable step laws.

At every step a strategy picks one of ``l`` centred step distributions
using only the current time, the observed position and its own per-walk
state.  Each walk draws from its own counter-based streams keyed by
``(seed, walk index)``, and all per-walk arithmetic is row-local (no BLAS
reductions across walks), so the statistics do not depend on batch size,
job count or execution order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, InfeasibleError
from .spectral_core import check_pd, sym_eig

DEFAULT_BATCH = 10_000
DEFAULT_CHUNK = 256
MEAN_ATOL = 1e-12


def _rowmat(X, M):
    """``X @ M.T`` computed row by row, bit-identical for any number of rows."""
    return np.einsum("nj,kj->nk", X, M)


def _rowdot(X, Y):
    return np.einsum("nj,nj->n", X, Y)


# The simulation keeps positions as (d, n) arrays, one column per walk; the
# einsum contractions below vectorize along walks and are column-local.


def _colmat(M, XT):
    return np.einsum("kj,jn->kn", M, XT)


def _coldot(XT, YT):
    return np.einsum("jn,jn->n", XT, YT)


# ---------------------------------------------------------------- step laws


class Gaussian:
    """Centred Gaussian step with the given covariance (``factor @ factor.T``)."""

    kind = "gaussian"
    uses_normals = True
    uses_uniform = False

    def __init__(self, covariance, factor=None):
        cov = np.asarray(covariance, dtype=float)
        cov = check_pd(cov, "covariance")
        if factor is None:
            factor = np.linalg.cholesky(cov)
        self.covariance = cov
        self.factor = np.asarray(factor, dtype=float)
        self.dim = cov.shape[0]

    def sample(self, z, u):
        """Steps as columns from standard normals ``z`` of shape ``(d, n)``."""
        return _colmat(self.factor, z)

    def pushforward(self, A):
        A = np.asarray(A, dtype=float)
        F = A @ self.factor
        return Gaussian(F @ F.T, factor=F)

    def __repr__(self):
        return f"Gaussian(dim={self.dim})"


class FiniteSupport:
    """Step law on finitely many points; mean zero within ``MEAN_ATOL``.

    A singular covariance (even ``Z = 0``) is allowed here; simulations
    require positive-definite covariances through :class:`WalkConfig`.
    """

    kind = "finite"
    uses_normals = False
    uses_uniform = True

    def __init__(self, points, probabilities=None):
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        n = len(pts)
        p = np.full(n, 1.0 / n) if probabilities is None else np.asarray(probabilities, dtype=float)
        if p.shape != (n,) or np.any(p < 0) or not np.all(np.isfinite(pts)):
            raise ConfigError("finite support needs one non-negative probability per finite point")
        if abs(p.sum() - 1.0) > 1e-12:
            raise ConfigError(f"probabilities sum to {p.sum():.17g}, not 1")
        mean = p @ pts
        if np.max(np.abs(mean)) > MEAN_ATOL * max(1.0, np.max(np.abs(pts))):
            raise ConfigError(f"step law is not centred (mean {mean.tolist()})")
        self.points = pts
        self.probabilities = p
        self._cum = np.cumsum(p)
        self._cum[-1] = 1.0
        self.dim = pts.shape[1]
        self.covariance = (pts * p[:, None]).T @ pts

    def sample(self, z, u):
        """Steps as columns from uniforms ``u`` of shape ``(n,)``."""
        idx = np.minimum(np.searchsorted(self._cum, u, side="right"), len(self.points) - 1)
        return self.points[idx].T

    def pushforward(self, A):
        return FiniteSupport(_rowmat(self.points, np.asarray(A, dtype=float)), self.probabilities)

    def __repr__(self):
        return f"FiniteSupport(dim={self.dim}, points={len(self.points)})"


def simple_walk_steps(d):
    """The +/- e_j law (covariance ``Id / d``)."""
    eye = np.eye(d)
    return FiniteSupport(np.vstack([eye, -eye]))


# --------------------------------------------------------------- strategies


class Strategy:
    """Base class for index-selection rules.

    ``choose`` sees the step time ``t``, the observed positions ``y`` (one
    row per walk), the per-walk ``state`` created by :meth:`init_state`, and,
    when ``uses_uniform`` is set, one fresh uniform per walk.  Nothing about
    future steps is reachable from these arguments.
    """

    name = "strategy"
    uses_uniform = False

    def bind(self, covariances):
        """Receive the observed step covariances before a run."""
        self.covariances = [np.asarray(c, dtype=float) for c in covariances]
        self.count = len(self.covariances)
        return self

    def init_state(self, n):
        return None

    def choose(self, t, y, state, u=None):
        raise NotImplementedError


class Fixed(Strategy):
    uses_uniform = False

    def __init__(self, index=0):
        self.index = int(index)
        self.name = f"fixed({self.index})"

    def bind(self, covariances):
        super().bind(covariances)
        if not 0 <= self.index < self.count:
            raise ConfigError(f"fixed index {self.index} outside 0..{self.count - 1}")
        return self

    def choose(self, t, y, state, u=None):
        return np.full(len(y), self.index, dtype=np.intp)


class RoundRobin(Strategy):
    name = "round_robin"

    def choose(self, t, y, state, u=None):
        return np.full(len(y), t % self.count, dtype=np.intp)


class UniformRandom(Strategy):
    name = "uniform_random"
    uses_uniform = True

    def choose(self, t, y, state, u=None):
        return np.minimum((u * self.count).astype(np.intp), self.count - 1)


class _Radial(Strategy):
    """Pick by the variance ``y^T C_i y / |y|^2`` along the current radial direction."""

    sign = 1.0

    def choose(self, t, y, state, u=None):
        yt = np.ascontiguousarray(y.T)
        q = np.stack([_coldot(yt, _colmat(C, yt)) for C in self.covariances])
        # argmax picks the lowest index on ties, including y = 0
        return np.argmax(self.sign * q, axis=0).astype(np.intp)


class MaxRadialVariance(_Radial):
    name = "max_radial_variance"
    sign = 1.0


class MinRadialVariance(_Radial):
    name = "min_radial_variance"
    sign = -1.0


STRATEGIES = {
    "round_robin": RoundRobin,
    "uniform_random": UniformRandom,
    "max_radial_variance": MaxRadialVariance,
    "min_radial_variance": MinRadialVariance,
}


def make_strategy(spec):
    """Build a strategy from a name such as ``"round_robin"`` or ``"fixed:1"`` (0-based)."""
    if isinstance(spec, Strategy):
        return spec
    spec = str(spec).strip()
    if spec.startswith("fixed"):
        rest = spec[len("fixed"):].strip("():= ")
        try:
            return Fixed(int(rest) if rest else 0)
        except ValueError:
            raise ConfigError(f"bad fixed strategy {spec!r}") from None
    if spec not in STRATEGIES:
        raise ConfigError(f"unknown strategy {spec!r}; choose fixed:<i> or one of {sorted(STRATEGIES)}")
    return STRATEGIES[spec]()


# ------------------------------------------------------------ configuration


@dataclass
class WalkConfig:
    distributions: list
    strategy: object = "fixed:0"
    preconditioner: np.ndarray = None
    horizon: int = 10_000
    return_radius: float = 1.0
    checkpoints: tuple = ()
    n_walks: int = 1000
    seed: int = 0
    record_paths: int = 0
    drift_alpha: float = None
    drift_radius: float = 0.0

    def __post_init__(self):
        dists = list(self.distributions)
        if not dists:
            raise ConfigError("at least one step distribution is required")
        d = dists[0].dim
        for i, dist in enumerate(dists):
            if dist.dim != d:
                raise ConfigError(f"distribution {i} has dimension {dist.dim}, expected {d}")
            try:
                check_pd(dist.covariance, f"covariance of distribution {i}")
            except ValueError as exc:
                raise ConfigError(str(exc)) from None
        self.distributions = dists
        if self.preconditioner is not None:
            A = np.asarray(self.preconditioner, dtype=float)
            if A.shape != (d, d) or not np.all(np.isfinite(A)):
                raise ConfigError(f"preconditioner must be a finite {d}x{d} matrix, got shape {A.shape}")
            self.preconditioner = A
        self.strategy = make_strategy(self.strategy)
        self.checkpoints = tuple(int(T) for T in self.checkpoints)
        self.horizon = int(self.horizon)
        if int(self.n_walks) < 1:
            raise ConfigError(f"n_walks must be >= 1, got {self.n_walks}")
        self.n_walks = int(self.n_walks)
        if self.horizon < 1:
            raise ConfigError("horizon must be >= 1")
        if any(T < 0 for T in self.checkpoints):
            raise ConfigError("checkpoints must be non-negative")
        if self.checkpoints and self.horizon < max(self.checkpoints):
            raise ConfigError(f"horizon {self.horizon} is below the last checkpoint {max(self.checkpoints)}")
        if not self.return_radius > 0:
            raise ConfigError("return radius must be positive")
        if self.drift_alpha is not None and not self.drift_alpha > 0:
            raise ConfigError("drift alpha must be positive")

    @property
    def dim(self):
        return self.distributions[0].dim

    def observed_covariances(self):
        A = self.preconditioner
        if A is None:
            return [dist.covariance for dist in self.distributions]
        return [A @ dist.covariance @ A.T for dist in self.distributions]

    def echo(self):
        return {
            "distributions": [repr(dist) for dist in self.distributions],
            "strategy": self.strategy.name,
            "preconditioner": None if self.preconditioner is None else self.preconditioner.tolist(),
            "horizon": self.horizon,
            "return_radius": float(self.return_radius),
            "checkpoints": list(self.checkpoints),
            "n_walks": self.n_walks,
            "seed": int(self.seed),
        }


# --------------------------------------------------------------- simulation


def _streams(seed, index):
    """Independent normal and uniform streams of one walk."""
    return tuple(
        np.random.Generator(np.random.Philox(np.random.SeedSequence(int(seed), spawn_key=(int(index), s))))
        for s in (0, 1)
    )


class _Observers:
    """Per-batch bookkeeping of return times, exit times, drift and paths."""

    def __init__(self, config, start, n, exit_radius=None, horizon=None):
        self.r2 = float(config.return_radius) ** 2
        self.last_visit = np.zeros(n, dtype=np.int64)
        self.exit_r2 = None if exit_radius is None else float(exit_radius) ** 2
        self.exit_time = np.full(n, -1, dtype=np.int64)
        self.alpha = config.drift_alpha
        self.drift_r = float(config.drift_radius)
        self.drift_sum = np.zeros(n)
        self.drift_count = np.zeros(n, dtype=np.int64)
        m = max(0, min(config.record_paths - start, n))
        self.paths = np.zeros((m, horizon + 1, config.dim)) if m else None
        self.m = m

    def update(self, t, y_prev, y):
        """Record time ``t``; positions are (d, n) columns."""
        r2 = _coldot(y, y)
        self.last_visit[r2 < self.r2] = t
        if self.exit_r2 is not None:
            fresh = (self.exit_time < 0) & (r2 > self.exit_r2)
            self.exit_time[fresh] = t
        if self.alpha is not None:
            r2p = _coldot(y_prev, y_prev)
            use = r2p >= self.drift_r ** 2
            inc = _phi_r2(r2, self.alpha) - _phi_r2(r2p, self.alpha)
            self.drift_sum += np.where(use, inc, 0.0)
            self.drift_count += use
        if self.paths is not None:
            self.paths[:, t] = y[:, : self.m].T

    def all_exited(self):
        return self.exit_r2 is not None and bool(np.all(self.exit_time >= 0))


def _run_batch(config, start, stop, horizon, exit_radius=None):
    n = stop - start
    d = config.dim
    dists = config.distributions
    A = config.preconditioner
    strategy = config.strategy
    strategy.bind(config.observed_covariances())
    need_z = any(dist.uses_normals for dist in dists)
    need_u = any(dist.uses_uniform for dist in dists)
    n_u = int(need_u) + int(strategy.uses_uniform)
    gens = [_streams(config.seed, w) for w in range(start, stop)]
    X = np.zeros((d, n))
    Y = np.zeros((d, n))
    state = strategy.init_state(n)
    obs = _Observers(config, start, n, exit_radius, horizon)
    t = 0
    while t < horizon:
        C = min(DEFAULT_CHUNK, horizon - t)
        Z = np.zeros((C, d, n)) if need_z else None
        U = np.zeros((C, max(n_u, 1), n))
        for w, (gz, gu) in enumerate(gens):
            if need_z:
                Z[:, :, w] = gz.standard_normal((C, d))
            if n_u:
                U[:, :n_u, w] = gu.random((C, n_u))
        for s in range(C):
            z = None if Z is None else Z[s]
            u_step = U[s, 0]
            u_strat = U[s, n_u - 1] if strategy.uses_uniform else None
            idx = strategy.choose(t, Y.T, state, u_strat)
            step = dists[0].sample(z, u_step)
            for i in range(1, len(dists)):
                mask = idx == i
                if mask.any():
                    step = np.where(mask, dists[i].sample(z, u_step), step)
            X = X + step
            Y_prev = Y
            Y = X if A is None else _colmat(A, X)
            t += 1
            obs.update(t, Y_prev, Y)
        if obs.all_exited():
            break
    return obs


def _run(config, horizon, exit_radius=None, n_jobs=1, batch_size=DEFAULT_BATCH):
    bounds = [(a, min(a + batch_size, config.n_walks)) for a in range(0, config.n_walks, batch_size)]
    if n_jobs == 1 or len(bounds) == 1:
        parts = [_run_batch(config, a, b, horizon, exit_radius) for a, b in bounds]
    else:
        from joblib import Parallel, delayed

        parts = Parallel(n_jobs=n_jobs)(
            delayed(_run_batch)(config, a, b, horizon, exit_radius) for a, b in bounds
        )
    return parts


@dataclass
class WalkStats:
    """Return-frequency estimates and per-walk records of one simulation."""

    strategy: str
    checkpoints: tuple
    p_hat: np.ndarray
    std_err: np.ndarray
    n_walks: int
    horizon: int
    seed: int
    return_radius: float
    last_visit: np.ndarray
    drift: np.ndarray = None
    paths: np.ndarray = None

    def rows(self):
        return [
            {
                "strategy": self.strategy,
                "T": int(T),
                "p_hat": float(p),
                "std_err": float(se),
                "n_walks": self.n_walks,
                "T_max": self.horizon,
                "seed": int(self.seed),
            }
            for T, p, se in zip(self.checkpoints, self.p_hat, self.std_err)
        ]


def return_frequencies(last_visit, checkpoints):
    """``p(T)`` = fraction of walks whose last visit to the ball is after ``T``, with binomial SEs."""
    last_visit = np.asarray(last_visit)
    n = len(last_visit)
    p = np.array([np.count_nonzero(last_visit > T) / n for T in checkpoints])
    return p, np.sqrt(p * (1 - p) / n)


def simulate_walks(config, n_jobs=1, batch_size=DEFAULT_BATCH):
    """Run ``config.n_walks`` walks from the origin for ``config.horizon`` steps.

    ``n_jobs`` and ``batch_size`` only affect execution, never the result.
    """
    parts = _run(config, config.horizon, None, n_jobs, batch_size)
    last = np.concatenate([o.last_visit for o in parts])
    p, se = return_frequencies(last, config.checkpoints)
    drift = None
    if config.drift_alpha is not None:
        s = np.concatenate([o.drift_sum for o in parts])
        c = np.concatenate([o.drift_count for o in parts])
        drift = np.divide(s, c, out=np.full(len(s), np.nan), where=c > 0)
    paths = None
    if config.record_paths:
        paths = np.concatenate([o.paths for o in parts if o.paths is not None])
    return WalkStats(
        strategy=config.strategy.name,
        checkpoints=config.checkpoints,
        p_hat=p,
        std_err=se,
        n_walks=config.n_walks,
        horizon=config.horizon,
        seed=int(config.seed),
        return_radius=float(config.return_radius),
        last_visit=last,
        drift=drift,
        paths=paths,
    )


# -------------------------------------------------------------------- drift


def _phi_r2(r2, alpha):
    """``min(|x|^-alpha, 1)`` from squared norms."""
    with np.errstate(divide="ignore"):
        return np.minimum(np.power(r2, -0.5 * alpha), 1.0)


def lyapunov_drift(dist, alpha, x, n_samples=100_000, seed=0):
    """Estimate ``E[phi(x + Z) - phi(x)]`` for ``phi(y) = min(|y|^-alpha, 1)``.

    Returns ``(estimate, std_error)``.  For finite support the expectation is
    computed exactly (error 0).  For Gaussian steps the zero-mean control
    variate ``grad phi(x) . Z`` is subtracted from each sample, which leaves
    the mean unchanged and removes the first-order noise.
    """
    if not alpha > 0:
        raise ConfigError(f"alpha must be positive, got {alpha}")
    x = np.asarray(x, dtype=float)
    base = float(_phi_r2(x @ x, alpha))
    if isinstance(dist, FiniteSupport):
        Z = dist.points
        vals = _phi_r2(_rowdot(x + Z, x + Z), alpha) - base
        return float(dist.probabilities @ vals), 0.0
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(int(seed))))
    Z = _rowmat(rng.standard_normal((int(n_samples), dist.dim)), dist.factor)
    r = math.sqrt(x @ x)
    grad = -alpha * r ** (-alpha - 2) * x if r > 1 else np.zeros_like(x)
    vals = _phi_r2(_rowdot(x + Z, x + Z), alpha) - base - Z @ grad
    return float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(len(vals)))


def locate_r0(dist, alpha, direction, n_samples=100_000, seed=0, r_min=1.0, r_max=1e6, z=3.0, rtol=1e-3):
    """Radius along ``direction`` beyond which the drift is ``<= -z`` standard errors.

    ``phi`` is capped at 1 inside the unit ball, so the drift is trivially
    non-positive near ``|x| = 1``; the sign change that matters is the last
    one.  Radii ``r_min * 2^j`` up to ``r_max`` are scanned for the largest
    one that fails the test, and the gap to the next grid radius is then
    bisected.  All radii share the same samples.  Returns ``None`` when the
    test fails at ``r_max``.
    """
    u = np.asarray(direction, dtype=float)
    u = u / np.linalg.norm(u)

    def negative(r):
        est, se = lyapunov_drift(dist, alpha, r * u, n_samples, seed)
        return est < 0 and est <= -z * se

    grid = [float(r_min)]
    while grid[-1] * 2 <= r_max:
        grid.append(grid[-1] * 2)
    flags = [negative(r) for r in grid]
    if not flags[-1]:
        return None
    failing = [r for r, ok in zip(grid, flags) if not ok]
    if not failing:
        return float(r_min)
    lo = failing[-1]
    hi = 2 * lo
    while hi - lo > rtol * hi:
        mid = 0.5 * (lo + hi)
        if negative(mid):
            hi = mid
        else:
            lo = mid
    return float(hi)


# --------------------------------------------------------------- exit times


def exit_time_bound(covariances):
    """Constant ``Q'`` with ``E[tau] <= Q' R^2`` for exits from ``B(0, R)``.

    ``c = min Tr``, ``K = max Tr``, ``Q = 8K/c`` and ``Q' = 4(1+Q)^2/c``.
    """
    traces = [float(np.trace(C)) for C in covariances]
    c, K = min(traces), max(traces)
    Q = 8 * K / c
    return {"c": c, "K": K, "Q": Q, "Q_prime": 4 * (1 + Q) ** 2 / c}


@dataclass
class ExitTimeStats:
    radius: float
    exit_times: np.ndarray
    horizon: int
    censored: int
    mean_exit_time: float
    staying: dict = field(default_factory=dict)
    bound: dict = field(default_factory=dict)

    @property
    def mean_bound(self):
        return self.bound["Q_prime"] * self.radius ** 2


def exit_time_stats(config, R, deltas=(0.5,), n_jobs=1, batch_size=DEFAULT_BATCH):
    """First times ``tau`` with ``|Y_t| > R``, run until every walk exits or ``max ceil(R^(2+delta))``.

    ``staying[delta]`` is the fraction of walks with ``tau > ceil(R^(2+delta))``.
    Walks that never exit are censored; ``mean_exit_time`` then averages
    only the observed exits and is a lower bound.
    """
    marks = {float(dl): int(math.ceil(R ** (2 + dl))) for dl in deltas}
    horizon = max(marks.values()) if marks else int(math.ceil(R * R)) * 100
    parts = _run(config, horizon, R, n_jobs, batch_size)
    tau = np.concatenate([o.exit_time for o in parts])
    done = tau >= 0
    staying = {dl: float(np.mean(~done | (tau > t))) for dl, t in marks.items()}
    return ExitTimeStats(
        radius=float(R),
        exit_times=tau,
        horizon=horizon,
        censored=int(np.count_nonzero(~done)),
        mean_exit_time=float(tau[done].mean()) if done.any() else math.inf,
        staying=staying,
        bound=exit_time_bound(config.observed_covariances()),
    )


# ---------------------------------------------------------------- transience


def fit_decay(checkpoints, p_hat):
    """Least-squares slope and intercept of ``log p`` against ``log T`` over positive ``p``."""
    T = np.asarray(checkpoints, dtype=float)
    p = np.asarray(p_hat, dtype=float)
    keep = (p > 0) & (T > 0)
    if keep.sum() < 2:
        return math.nan, math.nan, int(keep.sum())
    slope, intercept = np.polyfit(np.log(T[keep]), np.log(p[keep]), 1)
    return float(slope), float(intercept), int(keep.sum())


@dataclass
class StrategyDecay:
    strategy: str
    stats: WalkStats
    slope: float
    intercept: float
    n_fit: int


@dataclass
class TransienceReport:
    A: np.ndarray
    k: int
    radius: float
    predicted_slope: float
    decays: list

    def rows(self):
        return [row for dec in self.decays for row in dec.stats.rows()]

    def summary(self):
        return {
            "k": self.k,
            "radius": self.radius,
            "predicted_slope": self.predicted_slope,
            "strategies": {
                dec.strategy: {"slope": dec.slope, "intercept": dec.intercept, "points_fitted": dec.n_fit}
                for dec in self.decays
            },
        }


def default_return_radius(covariances):
    """Six standard deviations of the widest step: ``6 sqrt(max Tr)``."""
    return 6.0 * math.sqrt(max(float(np.trace(C)) for C in covariances))


def transience_experiment(
    problem,
    strategies=("max_radial_variance",),
    checkpoints=(100, 316, 1000, 3162, 10_000),
    n_walks=10_000,
    horizon=None,
    seed=0,
    radius=None,
    A=None,
    balancer_config=None,
    n_jobs=1,
):
    """Walks with Gaussian steps ``N(0, M_i)`` observed through the balancing matrix.

    ``A`` defaults to the output of :func:`balance`.  Observed covariances
    are ``A M_i A^T``, whose ratios are ``< 1/k`` when ``A^T`` balances the
    family.  For each strategy the log-log decay of the return frequency is
    fitted by least squares.
    """
    from .balancer import balance

    if A is None:
        problem.require_feasible()
        res = balance(problem, balancer_config)
        if not res.converged:
            raise InfeasibleError(f"balancing did not converge ({res.status.value})")
        A = res.A
    # the walk observes Y = P X with P M P^T = A^T M A
    P = np.asarray(A, dtype=float).T
    dists = [Gaussian(M) for M in problem.matrices]
    horizon = max(checkpoints) * 3 if horizon is None else int(horizon)
    obs_cov = [P @ M @ P.T for M in problem.matrices]
    radius = default_return_radius(obs_cov) if radius is None else float(radius)
    decays = []
    for name in strategies:
        cfg = WalkConfig(
            distributions=dists,
            strategy=make_strategy(name),
            preconditioner=P,
            horizon=horizon,
            return_radius=radius,
            checkpoints=tuple(checkpoints),
            n_walks=n_walks,
            seed=seed,
        )
        stats = simulate_walks(cfg, n_jobs=n_jobs)
        slope, intercept, n_fit = fit_decay(stats.checkpoints, stats.p_hat)
        decays.append(StrategyDecay(stats.strategy, stats, slope, intercept, n_fit))
    return TransienceReport(P, problem.k, radius, -(problem.k - 2) / 2, decays)
