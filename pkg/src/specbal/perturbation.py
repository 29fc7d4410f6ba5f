"""First-order perturbation machinery for rank-one updates ``A (Id + eps eta eta^T)``.

Contains the eigenvalue slope formula, the u-coordinates ``u_j = s_j <eta, w_j>``,
the feasibility conditions that keep a perturbed matrix inside D_R, and the
quadratic form whose kernel gives directions that leave active top
eigenvalues unchanged to first order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import (
    AlreadyBalanced,
    ConfigError,
    DegenerateError,
    InfeasibleError,
    InternalError,
)
from .spectral_core import (
    MULTIPLICITY_RTOL,
    SpectralProfile,
    eigen_blocks,
    spectral_profile,
    sym_eig,
    tight_indices,
    transformed,
)

# Slack on the u-condition so that it implies the strict eta-condition in
# floating point (tight ratios are only R up to RATIO_TOL, blocks only equal
# up to MULTIPLICITY_RTOL).
U_CONDITION_GUARD = 1e-6
KERNEL_RTOL = 1e-10


@dataclass(frozen=True)
class PerturbationPlan:
    eta: np.ndarray
    u: np.ndarray
    epsilon_max: float
    profile: SpectralProfile
    u_tilde: np.ndarray = None
    c0: float = None


@dataclass(frozen=True)
class QForm:
    """``Q(u) = sum <u, v_{i,m}>^2`` over the rows of ``vectors``.

    ``owners[r]`` is the family index ``i`` that produced row ``r``.
    """

    vectors: np.ndarray
    owners: tuple
    bounds: tuple = ()

    def __call__(self, u):
        u = np.asarray(u, dtype=float)
        if len(self.vectors) == 0:
            return 0.0
        return float(np.sum((self.vectors @ u) ** 2))

    def __len__(self):
        return len(self.vectors)


def rank_one_update(A, eta, epsilon):
    """``A @ (Id + epsilon * eta eta^T)``."""
    A = np.asarray(A, dtype=float)
    eta = np.asarray(eta, dtype=float)
    d = A.shape[0]
    return A @ (np.eye(d) + epsilon * np.outer(eta, eta))


def first_order_eigen_slopes(B, eta):
    """Derivatives at ``eps = 0`` of the eigenvalues of ``(Id + eps eta eta^T) B (Id + eps eta eta^T)``.

    For the leading index ``j`` of each eigenvalue cluster the slope is
    ``2 lambda_j |P_{E_j} eta|^2``; trailing copies inside a cluster do not
    move and get slope 0.  Returned as an array indexed like the descending
    eigenvalues of ``B``.
    """
    w, V = sym_eig(B)
    if w[-1] <= 0:
        raise DegenerateError("B must be positive definite")
    eta = np.asarray(eta, dtype=float)
    slopes = np.zeros(len(w))
    for block in eigen_blocks(w, MULTIPLICITY_RTOL):
        coords = V[:, list(block)].T @ eta
        slopes[block[0]] = 2.0 * w[block[0]] * float(coords @ coords)
    return slopes


def u_from_eta(profile, eta):
    return profile.singular_values * (profile.singular_vectors.T @ np.asarray(eta, dtype=float))


def eta_from_u(profile, u):
    return profile.singular_vectors @ (np.asarray(u, dtype=float) / profile.singular_values)


def tight_ratio_set(profile, R):
    return tight_indices(profile.singular_values, R)


def _block_mass(profile, coords, j):
    return float(sum(coords[k] ** 2 for k in profile.block_of(j)))


def check_eta_condition(profile, eta, R):
    """``|P_{E_j} eta|^2 < |P_{E_{j+1}} eta|^2 / 2`` for every tight ``j``."""
    coords = profile.singular_vectors.T @ np.asarray(eta, dtype=float)
    for j in tight_ratio_set(profile, R):
        if not _block_mass(profile, coords, j) < 0.5 * _block_mass(profile, coords, j + 1):
            return False
    return True


def check_u_condition(profile, u, R):
    """Block sums of ``u^2``: tight block ``j`` at most ``R^2/2`` times block ``j+1``.

    Evaluated with a relative guard band of ``U_CONDITION_GUARD``, which
    makes it a sufficient condition for :func:`check_eta_condition`.
    """
    u = np.asarray(u, dtype=float)
    for j in tight_ratio_set(profile, R):
        upper = _block_mass(profile, u, j)
        lower = _block_mass(profile, u, j + 1)
        if not upper <= 0.5 * R * R * (1 - U_CONDITION_GUARD) * lower:
            return False
    return True


def top_eigenspace(C, rtol=MULTIPLICITY_RTOL):
    """Orthonormal basis (columns) of the eigenspace of the largest eigenvalue."""
    w, V = sym_eig(C)
    block = eigen_blocks(w, rtol)[0]
    return w, V[:, list(block)]


def qform_build(A, mset, active, k):
    """Stack the vectors ``v_{i,m} = (<q_{i,m}, w_j> / s_j)_j`` for ``i`` in ``active``.

    ``q_{i,m}`` runs over an orthonormal basis of the top eigenspace of
    ``A M_i A``.  ``A`` must be symmetric positive definite.  Raises
    :class:`AlreadyBalanced` if a top eigenspace has dimension ``>= k``.
    """
    A = np.asarray(A, dtype=float)
    if np.linalg.eigvalsh(0.5 * (A + A.T))[0] <= 0:
        raise DegenerateError("A must be positive definite")
    # same basis as the u-coordinates of spectral_profile
    profile = spectral_profile(A)
    w_A, W = profile.singular_values, profile.singular_vectors
    rows, owners, bounds = [], [], []
    for i in active:
        M = mset[i]
        _, F = top_eigenspace(transformed(A, M))
        if F.shape[1] >= k:
            raise AlreadyBalanced(f"matrix {i}: top eigenspace has dimension {F.shape[1]} >= k={k}")
        lam = np.linalg.eigvalsh(M)
        bounds.append(k * lam[-1] / lam[0])
        for m in range(F.shape[1]):
            rows.append((W.T @ F[:, m]) / w_A)
            owners.append(int(i))
    d = A.shape[0]
    vectors = np.array(rows) if rows else np.zeros((0, d))
    return QForm(vectors, tuple(owners), tuple(bounds))


def canonical_kernel_vector(C, d):
    """Unit vector annihilated by every row of ``C`` (least right singular vector).

    When the kernel has dimension > 1 the vector with the largest first
    component is chosen (the normalized projection of ``e_1``, falling back
    to ``e_2``, ...), with its first nonzero component made positive.
    """
    C = np.asarray(C, dtype=float).reshape(-1, d)
    if len(C) == 0:
        N = np.eye(d)
    else:
        _, sv, Vt = np.linalg.svd(C)
        scale = sv[0] if sv[0] > 0 else 1.0
        rank = int(np.sum(sv > KERNEL_RTOL * scale))
        if rank >= d:
            raise InfeasibleError(f"constraint matrix has full rank {d}; no kernel direction")
        N = Vt[rank:].T
    for e in range(d):
        v = N @ N[e]
        norm = np.linalg.norm(v)
        if norm > 1e-8:
            v = v / norm
            lead = v[np.nonzero(np.abs(v) > 1e-12)[0][0]]
            return v if lead > 0 else -v
    raise InternalError("empty kernel basis")  # pragma: no cover


def qform_kernel(q, d):
    """Unit ``u`` with ``Q(u) = 0`` (numerically)."""
    if len(q) >= d and np.linalg.matrix_rank(q.vectors) >= d:
        raise InfeasibleError(f"{len(q)} vectors span R^{d}; the form is not degenerate")
    return canonical_kernel_vector(q.vectors, d)


def spread_ratio_bound(c0, d):
    """Ratio bound paired with :func:`spread_point`: ``sqrt(2 d (1 + c0)^2 / c0^2)``."""
    return math.sqrt(2 * d) * (1 + c0) / c0


def spread_point(u_tilde, c0):
    """Point within distance ``c0`` of the unit vector ``u_tilde`` whose coordinates are all large.

    Shifts every coordinate away from zero by ``c0 / sqrt(d)`` (``sign(0) = +1``),
    so ``|u - u_tilde| = c0``, ``min u_k^2 >= c0^2 / d`` and
    ``sum u_k^2 <= (1 + c0)^2``.  Returns ``(u, R)`` where ``R`` is
    :func:`spread_ratio_bound`; then ``sum u_k^2 <= R^2/2 * min u_k^2``.
    """
    if not 0 < c0 < 1:
        raise ConfigError(f"c0 must lie in (0, 1), got {c0}")
    u_tilde = np.asarray(u_tilde, dtype=float)
    d = len(u_tilde)
    sigma = np.where(u_tilde >= 0, 1.0, -1.0)
    return u_tilde + (c0 / math.sqrt(d)) * sigma, spread_ratio_bound(c0, d)


def trace_growth_check(A, M, eta, epsilon):
    """Compare ``Tr(A_eta(eps)^T M A_eta(eps))`` with ``Tr(A^T M A) + 2 lambda_d(M) eps |A eta|^2``.

    Returns ``(lhs, rhs, lhs >= rhs)``, the comparison allowing 1e-12
    relative rounding.
    """
    A = np.asarray(A, dtype=float)
    M = np.asarray(M, dtype=float)
    eta = np.asarray(eta, dtype=float)
    lhs = float(np.trace(transformed(rank_one_update(A, eta, epsilon), M)))
    c = 2.0 * np.linalg.eigvalsh(0.5 * (M + M.T))[0]
    Aeta = A @ eta
    rhs = float(np.trace(transformed(A, M)) + c * epsilon * (Aeta @ Aeta))
    return lhs, rhs, bool(lhs - rhs >= -1e-12 * max(1.0, abs(rhs)))

