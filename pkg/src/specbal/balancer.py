"""Descent on the balance score ``f(A) = max_i lambda_1(A^T M_i A) / Tr(A^T M_i A)`` over D_R.

Each iteration works with a symmetric positive-definite ``A`` normalized to
``s_1(A) = 1``.  Away from the ratio constraints the step direction ``v`` is
orthogonal to the top ``k - 1`` eigenvectors of every active ``A M_i A``, so
those eigenvalues are frozen while the traces grow.  When some consecutive
singular-value ratio sits at ``R`` the direction is taken from the kernel of
the active quadratic form, spread out so the perturbed matrix stays in D_R.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import AlreadyBalanced, ConfigError, DegenerateError, InfeasibleError
from .perturbation import (
    U_CONDITION_GUARD,
    PerturbationPlan,
    canonical_kernel_vector,
    check_u_condition,
    eta_from_u,
    qform_build,
    qform_kernel,
    rank_one_update,
    spread_point,
    spread_ratio_bound,
    top_eigenspace,
    u_from_eta,
)
from .spectral_core import (
    DOMAIN_TOL,
    MatrixSet,
    as_matrix_set,
    check_pd,
    ratios_unchecked,
    spectral_profile,
    sym_eig,
    transformed,
)

AUTO_R_START = 16.0
AUTO_R_ESCALATIONS = 4
MIN_DECREASE = 1e-14


class Status(str, enum.Enum):
    CONVERGED = "Converged"
    ITERATION_LIMIT = "IterationLimit"
    INFEASIBLE = "Infeasible"


def max_family_size(d, k):
    """Largest l allowed by ``l <= floor((d - 1) / (k - 1))``."""
    return (d - 1) // (k - 1)


@dataclass(frozen=True)
class BalanceProblem:
    matrices: MatrixSet
    k: int

    def __post_init__(self):
        object.__setattr__(self, "matrices", as_matrix_set(self.matrices))
        if int(self.k) != self.k or self.k < 2:
            raise ConfigError(f"k must be an integer >= 2, got {self.k}")

    @property
    def dim(self):
        return self.matrices.dim

    @property
    def count(self):
        return self.matrices.count

    @property
    def feasible(self):
        d, k = self.dim, self.k
        return d > k and self.count <= max_family_size(d, k)

    def require_feasible(self):
        d, k, ell = self.dim, self.k, self.count
        if not d > k:
            raise InfeasibleError(f"need d > k, got d={d}, k={k}")
        bound = max_family_size(d, k)
        if ell > bound:
            raise InfeasibleError(
                f"need l <= floor((d-1)/(k-1)) = floor({d - 1}/{k - 1}) = {bound}, got l={ell}"
            )


@dataclass(frozen=True)
class BalancerConfig:
    R: object = "auto"
    target_margin: float = 1e-6
    max_iterations: int = 2000
    active_tol: float = 1e-8
    step_shrink: float = 0.5
    min_step: float = 1e-12
    seed: int = 0
    c0: float = 0.25
    # Also treat every member with ratio >= 1/k as active.
    widen_active: bool = True

    def __post_init__(self):
        if self.R != "auto":
            try:
                R = float(self.R)
            except (TypeError, ValueError):
                raise ConfigError(f"R must be 'auto' or a real > 1, got {self.R!r}") from None
            if not R > 1:
                raise ConfigError(f"R must exceed 1, got {R}")
            object.__setattr__(self, "R", R)
        for name in ("target_margin", "active_tol", "min_step"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        if not 0 < self.step_shrink < 1:
            raise ConfigError("step_shrink must lie in (0, 1)")
        if not 0 < self.c0 < 1:
            raise ConfigError("c0 must lie in (0, 1)")
        if self.max_iterations < 0:
            raise ConfigError("max_iterations must be non-negative")

    def r_schedule(self):
        if self.R == "auto":
            return [AUTO_R_START * 2**e for e in range(AUTO_R_ESCALATIONS + 1)]
        return [float(self.R)]


class StepRecord(NamedTuple):
    iteration: int
    kind: str
    epsilon: float
    f_before: float
    f_after: float
    R: float


@dataclass
class BalanceResult:
    A: np.ndarray
    final_score: float
    per_matrix_ratios: np.ndarray
    iterations: int
    step_log: list
    status: Status
    k: int
    R: float
    stalls: list = field(default_factory=list)

    @property
    def converged(self):
        return self.status is Status.CONVERGED

    def to_json(self):
        return {
            "A": self.A.tolist(),
            "final_score": float(self.final_score),
            "ratios": [float(r) for r in self.per_matrix_ratios],
            "k": int(self.k),
            "status": self.status.value,
            "iterations": int(self.iterations),
            "R": float(self.R),
            "stalls": [list(s) for s in self.stalls],
        }


class LineStep(NamedTuple):
    epsilon: float
    A: np.ndarray
    score: float


def active_set(A, mset, k, active_tol, widen=False):
    """Indices whose ratio is within ``active_tol`` of the score.

    With ``widen`` every index with ratio ``>= 1/k`` is included as well;
    since ``l (k - 1) <= d - 1`` the constraint count stays below ``d``.
    """
    r = ratios_unchecked(np.asarray(A, dtype=float), mset)
    f = r.max()
    mask = r >= f - active_tol
    if widen:
        mask |= r >= 1.0 / k
    return tuple(int(i) for i in np.nonzero(mask)[0])


def top_eigenvectors(A, M, count):
    _, V = sym_eig(transformed(A, M))
    return V[:, :count]


def interior_direction(A, mset, active, k):
    """Unit ``v`` orthogonal to the top ``k - 1`` eigenvectors of ``A M_i A`` for ``i`` in ``active``."""
    A = np.asarray(A, dtype=float)
    d = A.shape[0]
    if not active:
        return np.eye(d)[0]
    C = np.vstack([top_eigenvectors(A, mset[i], k - 1).T for i in active])
    return canonical_kernel_vector(C, d)


def eigenvector_preservation_check(A, M, v, q, epsilon):
    """Whether ``q`` is still an eigenvector, same eigenvalue, after ``A -> A (Id + eps v v^T)``."""
    A = np.asarray(A, dtype=float)
    q = np.asarray(q, dtype=float)
    lam = float(q @ transformed(A, M) @ q)
    moved = transformed(rank_one_update(A, v, epsilon), M) @ q
    return bool(np.linalg.norm(moved - lam * q) <= 1e-9 * abs(lam))


def _first_order_step_bound(profile, eta, R):
    """Largest eps for which the linearized consecutive ratios stay within R."""
    s = profile.singular_values
    coords = profile.singular_vectors.T @ eta
    mass = np.array([sum(coords[j] ** 2 for j in profile.block_of(i)) for i in range(len(s))])
    bound = math.inf
    for j in range(len(s) - 1):
        growth = 2.0 * (mass[j] - mass[j + 1])
        if growth <= 0:
            continue
        room = 2.0 * math.log(R * s[j + 1] / s[j]) if s[j] < R * s[j + 1] else 0.0
        bound = min(bound, room / growth)
    return bound


def _c0_candidates(c0, d, R):
    needed = 1.0 / (R / math.sqrt(2 * d) - 1.0) if R > 2 * math.sqrt(2 * d) else 0.999
    top = min(max(needed * (1 + 1e-9), c0), 0.999)
    return [c0] + [float(c) for c in np.geomspace(c0, top, 8)[1:] if c > c0]


def _lift_lower_blocks(profile, u, R, margin=1e-3):
    """Scale up the lower block of each tight pair until the u-condition holds."""
    u = np.array(u, dtype=float)
    limit = 0.5 * R * R * (1 - U_CONDITION_GUARD)
    for j in sorted(profile.tight_set):
        upper = sum(u[i] ** 2 for i in profile.block_of(j))
        lower_idx = list(profile.block_of(j + 1))
        lower = sum(u[i] ** 2 for i in lower_idx)
        need = upper / limit * (1 + margin)
        if lower >= need or need == 0:
            continue
        if lower > 0:
            u[lower_idx] *= math.sqrt(need / lower)
        else:
            u[lower_idx] = math.sqrt(need / len(lower_idx))
    return u


def predicted_log_slopes(A, mset, active, profile, u):
    """First-order rate of ``log f_i`` along ``eta(u)``, for each active ``i``.

    ``d/d eps log lambda_1 = 2 |P_F eta|^2`` and
    ``d/d eps log Tr = 2 <A M A eta, eta> / Tr``; with ``A eta = W u`` both
    are quadratic in ``u``.  Normalized by ``|eta|^2``.
    """
    eta = eta_from_u(profile, u)
    W = profile.singular_vectors
    Wu = W @ u
    out = []
    for i in active:
        C = transformed(A, mset[i])
        _, F = top_eigenspace(C)
        top = float(np.sum((F.T @ eta) ** 2))
        out.append(2.0 * (top - float(Wu @ mset[i] @ Wu) / np.trace(C)))
    return np.array(out) / float(eta @ eta)


def boundary_direction(A, mset, active, k, R, c0):
    """Direction for a point with tight ratio constraints.

    The kernel vector ``u~`` of the active quadratic form is spread by
    :func:`spread_point` (at ``c0``, then larger values).  Lifting the lower
    block of each tight pair gives further candidates, both from ``u~`` and
    from the interior direction.  Among candidates that satisfy the
    u-condition the one with the most negative predicted slope of the
    active ratios is returned.  ``epsilon_max`` is the first-order
    admissible step for the unit-normalized ``eta``.
    """
    A = np.asarray(A, dtype=float)
    d = A.shape[0]
    profile = spectral_profile(A, R)
    q = qform_build(A, mset, active, k)
    u_tilde = qform_kernel(q, d)
    if not profile.tight_set:
        u, used = u_tilde, None
    else:
        candidates = []
        for c in _c0_candidates(c0, d, R):
            candidates.append((spread_point(u_tilde, c)[0], c))
        u_interior = u_from_eta(profile, interior_direction(A, mset, active, k))
        for base in (u_tilde, u_interior):
            candidates.append((_lift_lower_blocks(profile, base, R), None))
        feasible = [(u, c) for u, c in candidates if check_u_condition(profile, u, R)]
        if not feasible:
            raise InfeasibleError(
                f"no spread of the kernel direction satisfies the ratio condition at R={R} "
                f"(sufficient R is {spread_ratio_bound(c0, d):.3g})"
            )
        scores = [predicted_log_slopes(A, mset, active, profile, u).max() for u, _ in feasible]
        u, used = feasible[int(np.argmin(scores))]
    eta = eta_from_u(profile, u)
    unit = eta / np.linalg.norm(eta)
    eps = _first_order_step_bound(profile, unit, R)
    return PerturbationPlan(eta, u, float(min(eps, 0.5)) if eps > 0 else 0.5, profile, u_tilde, used)


def _polar_normalized(An):
    P, s, _ = np.linalg.svd(An)
    s = s / s[0]
    B = (P * s) @ P.T
    return 0.5 * (B + B.T), s


def line_search(A, mset, eta, R, config):
    """Backtrack from ``eps = 0.5`` on the unit-normalized ``eta``.

    Accepts the first step whose polar, normalized successor lies in D_R and
    lowers the score by at least 1e-14.  Returns a :class:`LineStep`, or None
    (no improvement) once ``eps`` drops below ``config.min_step``.
    """
    A = np.asarray(A, dtype=float)
    eta = np.asarray(eta, dtype=float)
    norm = np.linalg.norm(eta)
    if not norm > 0:
        return None
    eta = eta / norm
    f0 = ratios_unchecked(A, mset).max()
    eps = 0.5
    while eps >= config.min_step:
        B, s = _polar_normalized(rank_one_update(A, eta, eps))
        if s[-1] > 0 and np.all(s[:-1] <= R * (1 + DOMAIN_TOL) * s[1:]):
            f1 = ratios_unchecked(B, mset).max()
            if f1 <= f0 - MIN_DECREASE:
                return LineStep(float(eps), B, float(f1))
        eps *= config.step_shrink
    return None


def _descend(mset, k, A, R, config, log, stalls, it0):
    target = 1.0 / k - config.target_margin
    it = it0
    for _ in range(config.max_iterations):
        r = ratios_unchecked(A, mset)
        f = r.max()
        if f < target:
            return A, Status.CONVERGED, it
        active = active_set(A, mset, k, config.active_tol, config.widen_active)
        profile = spectral_profile(A, R)
        try:
            if profile.tight_set:
                kind = "boundary"
                eta = boundary_direction(A, mset, active, k, R, config.c0).eta
            else:
                kind = "interior"
                eta = interior_direction(A, mset, active, k)
        except (InfeasibleError, AlreadyBalanced) as exc:
            stalls.append((it, R, f"{kind}: {exc}"))
            return A, Status.ITERATION_LIMIT, it
        step = line_search(A, mset, eta, R, config)
        if step is None:
            stalls.append((it, R, f"{kind}: no improving step"))
            return A, Status.ITERATION_LIMIT, it
        log.append(StepRecord(it, kind, step.epsilon, float(f), step.score, R))
        A = step.A
        it += 1
    if ratios_unchecked(A, mset).max() < target:
        return A, Status.CONVERGED, it
    return A, Status.ITERATION_LIMIT, it


def balance(problem, config=None):
    """Find ``A`` in D_R with every balance ratio below ``1/k - target_margin``.

    With ``R = "auto"`` the search starts at R = 16 and, whenever the
    iteration budget runs out or the descent stalls, doubles R (up to four
    times) and continues from the current point, which stays admissible.
    Raises :class:`InfeasibleError` if ``d <= k`` or
    ``l > floor((d - 1) / (k - 1))``.
    """
    config = BalancerConfig() if config is None else config
    problem.require_feasible()
    mset, k = problem.matrices, problem.k
    A = np.eye(problem.dim)
    log, stalls = [], []
    it = 0
    status = Status.ITERATION_LIMIT
    for R in config.r_schedule():
        A, status, it = _descend(mset, k, A, R, config, log, stalls, it)
        if status is Status.CONVERGED:
            break
    r = ratios_unchecked(A, mset)
    return BalanceResult(A, float(r.max()), r, it, log, status, k, R, stalls)


def inverse_sqrt(M):
    w, V = sym_eig(M)
    return (V / np.sqrt(w)) @ V.T


def pair_balance(M1, M2):
    """Closed-form balancing of two 3 x 3 forms below ratio 1/2.

    Whiten ``M1``, diagonalize the whitened ``M2`` as ``diag(a, b, c)`` with
    ``a >= b >= c`` and shrink the top axis by ``sqrt(b / a)``.  Both forms
    then have two equal leading eigenvalues and a smaller third one.
    """
    try:
        M1 = check_pd(M1, "M1")
        M2 = check_pd(M2, "M2")
    except Exception as exc:
        raise DegenerateError(str(exc)) from None
    if M1.shape != (3, 3) or M2.shape != (3, 3):
        raise ConfigError("pair_balance handles 3 x 3 matrices only")
    W = inverse_sqrt(M1)
    (a, b, _), V = sym_eig(W @ M2 @ W)
    # Orient each eigenvector so its largest entry is positive.
    signs = np.sign(V[np.argmax(np.abs(V), axis=0), range(3)])
    V = V * signs
    return W @ V @ np.diag([math.sqrt(b / a), 1.0, 1.0])
