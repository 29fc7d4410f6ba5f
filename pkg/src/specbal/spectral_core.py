"""Dense symmetric linear algebra and the normalized matrix domain D_R.

Matrices are plain ``numpy.ndarray`` objects.  A family of positive-definite
forms is held in a :class:`MatrixSet`; the balance ratio of a form ``M`` under
a change of basis ``A`` is ``lambda_1(A^T M A) / Tr(A^T M A)``.

All indices are 0-based.  In particular the tight set of a profile contains
``j`` when the pair ``(s_j, s_{j+1})`` (0-based) sits on the ratio bound.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DegenerateError, InputError

PD_RTOL = 1e-10
MULTIPLICITY_RTOL = 1e-8
DOMAIN_TOL = 1e-9
RATIO_TOL = 1e-7
RANK_RTOL = 1e-12
SYMMETRY_RTOL = 1e-9


def _as_square(A, name="matrix"):
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise InputError(f"{name} must be square, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise InputError(f"{name} has non-finite entries")
    return A


def symmetrize(M, name="matrix"):
    """Return ``(M + M^T)/2`` after checking the asymmetry is within rounding.

    Entries with ``|m_ij - m_ji| <= 1e-9 * max|m|`` are averaged; anything
    larger is an :class:`InputError`.
    """
    M = _as_square(M, name)
    scale = np.max(np.abs(M)) if M.size else 0.0
    asym = np.max(np.abs(M - M.T)) if M.size else 0.0
    if asym > SYMMETRY_RTOL * scale:
        raise InputError(f"{name} is not symmetric (max |m_ij - m_ji| = {asym:.3g})")
    return 0.5 * (M + M.T)


def sym_eig(M):
    """Eigen-decomposition of a symmetric matrix, eigenvalues descending.

    Returns ``(w, V)`` with ``M @ V[:, j] == w[j] * V[:, j]`` and ``V``
    orthonormal.  Only the symmetric part of ``M`` is used.
    """
    M = _as_square(M)
    w, V = np.linalg.eigh(0.5 * (M + M.T))
    return w[::-1].copy(), V[:, ::-1].copy()


def check_pd(M, name="matrix"):
    """Symmetrize ``M`` and verify ``lambda_min > PD_RTOL * lambda_1``."""
    M = symmetrize(M, name)
    w = np.linalg.eigvalsh(M)
    if w[-1] <= 0 or w[0] <= PD_RTOL * w[-1]:
        raise InputError(
            f"{name} is not positive definite (eigenvalues in [{w[0]:.3g}, {w[-1]:.3g}])"
        )
    return M


@dataclass(frozen=True)
class MatrixSet:
    """The family M_1..M_l of symmetric positive-definite d x d forms."""

    members: tuple

    def __post_init__(self):
        if len(self.members) == 0:
            raise InputError("a matrix set needs at least one member")
        d = self.members[0].shape[0]
        for i, M in enumerate(self.members):
            if M.shape != (d, d):
                raise InputError(f"matrix {i} has shape {M.shape}, expected {(d, d)}")

    @classmethod
    def from_arrays(cls, arrays):
        """Validate (symmetry, finiteness, positive definiteness) and freeze."""
        members = []
        for i, M in enumerate(arrays):
            try:
                M = check_pd(M, name=f"matrix {i}")
            except InputError as exc:
                raise InputError(str(exc)) from None
            M.setflags(write=False)
            members.append(M)
        return cls(tuple(members))

    @property
    def dim(self):
        return self.members[0].shape[0]

    @property
    def count(self):
        return len(self.members)

    def __len__(self):
        return len(self.members)

    def __iter__(self):
        return iter(self.members)

    def __getitem__(self, i):
        return self.members[i]

    def subset(self, indices):
        return MatrixSet(tuple(self.members[i] for i in indices))

    def stacked(self):
        return np.stack(self.members)


def as_matrix_set(obj):
    if isinstance(obj, MatrixSet):
        return obj
    return MatrixSet.from_arrays(list(obj))


def singular_values(A):
    return np.linalg.svd(_as_square(A), compute_uv=False)


def check_rank(s):
    if s[-1] <= RANK_RTOL * s[0]:
        rel = s[-1] / s[0] if s[0] > 0 else 0.0
        raise DegenerateError(f"matrix is rank deficient (s_d / s_1 = {rel:.3g})")


def polar_decompose(A):
    """Left polar decomposition ``A = B @ U``.

    ``B = (A A^T)^{1/2}`` is symmetric positive semi-definite and ``U`` is
    orthogonal.  Computed from the SVD ``A = P S Q^T`` as ``B = P S P^T`` and
    ``U = P Q^T``; ``B`` has the same singular values as ``A``.
    """
    A = _as_square(A)
    P, s, Qt = np.linalg.svd(A)
    B = (P * s) @ P.T
    return 0.5 * (B + B.T), P @ Qt


def transformed(A, M):
    """``A^T M A``, symmetrized."""
    C = A.T @ M @ A
    return 0.5 * (C + C.T)


def _ratio_unchecked(A, M):
    w = np.linalg.eigvalsh(transformed(A, M))
    return w[-1] / w.sum()


def ratios_unchecked(A, mset):
    """Balance ratios of every member without the rank check (hot loops)."""
    return np.array([_ratio_unchecked(A, M) for M in mset])


def balance_ratio(A, M):
    """``lambda_1(A^T M A) / Tr(A^T M A)``, a number in ``[1/d, 1]``."""
    A = _as_square(A, "A")
    check_rank(singular_values(A))
    return float(_ratio_unchecked(A, np.asarray(M, dtype=float)))


def balance_ratios(A, mset):
    A = _as_square(A, "A")
    check_rank(singular_values(A))
    return ratios_unchecked(A, mset)


def balance_score(A, mset):
    """Maximum balance ratio over the family."""
    return float(np.max(balance_ratios(A, mset)))


def _check_R(R):
    if not R > 1:
        raise ConfigError(f"R must exceed 1, got {R}")


def in_domain(A, R):
    """Membership in D_R: top singular value 1 and consecutive ratios at most R."""
    _check_R(R)
    s = singular_values(A)
    if abs(s[0] - 1.0) > DOMAIN_TOL:
        return False
    if s[-1] <= 0:
        return False
    return bool(np.all(s[:-1] <= R * (1 + DOMAIN_TOL) * s[1:]))


def normalize_to_domain(A):
    """Rescale ``A`` so that its top singular value is 1."""
    A = _as_square(A, "A")
    s = singular_values(A)
    check_rank(s)
    return A / s[0]


def eigen_blocks(values, rtol=MULTIPLICITY_RTOL):
    """Partition a descending sequence into maximal runs of (relatively) equal values."""
    values = np.asarray(values, dtype=float)
    blocks = []
    start = 0
    for j in range(1, len(values)):
        top = abs(values[j - 1])
        if top == 0 or (values[j - 1] - values[j]) >= rtol * top:
            blocks.append(tuple(range(start, j)))
            start = j
    blocks.append(tuple(range(start, len(values))))
    return tuple(blocks)


@dataclass(frozen=True)
class SpectralProfile:
    """Singular data of a full-rank matrix together with its tight set.

    ``singular_vectors[:, j]`` is ``w_j``; for symmetric positive-definite
    ``A`` these satisfy ``A w_j = s_j w_j``.
    """

    singular_values: np.ndarray
    singular_vectors: np.ndarray
    blocks: tuple
    tight_set: tuple

    @property
    def dim(self):
        return len(self.singular_values)

    def block_of(self, j):
        for b in self.blocks:
            if j in b:
                return b
        raise IndexError(j)


def tight_indices(s, R, rtol=RATIO_TOL):
    s = np.asarray(s, dtype=float)
    return tuple(int(j) for j in np.nonzero(s[:-1] >= R * (1 - rtol) * s[1:])[0])


def spectral_profile(A, R=None):
    """Build the :class:`SpectralProfile` of ``A``.

    The tight set is empty when ``R`` is None.
    """
    A = _as_square(A, "A")
    _, s, Vt = np.linalg.svd(A)
    check_rank(s)
    tight = () if R is None else tight_indices(s, R)
    return SpectralProfile(s, Vt.T.copy(), eigen_blocks(s), tight)


def random_orthogonal(rng, d):
    Q, R = np.linalg.qr(rng.standard_normal((d, d)))
    return Q * np.sign(np.diag(R))


def random_spd(rng, d, max_cond=1e3, dof=None):
    """Wishart-style SPD draw ``G G^T / dof`` rejected until ``cond <= max_cond``."""
    dof = d + 2 if dof is None else dof
    for _ in range(10_000):
        G = rng.standard_normal((d, dof))
        M = G @ G.T / dof
        M = 0.5 * (M + M.T)
        if np.linalg.cond(M) <= max_cond:
            return M
    raise RuntimeError("could not draw a well-conditioned matrix")


def random_matrix_set(rng, d, count, max_cond=1e3):
    return MatrixSet.from_arrays([random_spd(rng, d, max_cond) for _ in range(count)])
