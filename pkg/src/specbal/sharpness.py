"""Diagonal families for which no change of basis balances every member.

With ``(k - 1) l = d`` member ``i`` is ``1`` on the coordinate block
``I(i) = {(k-1) i, ..., (k-1)(i+1) - 1}`` (0-based) and ``epsilon < 1/d``
elsewhere.  For any ``A`` whose largest row norm is 1, every transformed
trace is at most ``k - 1 + d epsilon < k``, while the member owning the
row of largest norm has top eigenvalue at least 1.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, InternalError
from .spectral_core import MatrixSet, ratios_unchecked, singular_values, check_rank


@dataclass(frozen=True)
class SharpFamily:
    d: int
    k: int
    epsilon: float
    matrices: MatrixSet

    @property
    def count(self):
        return self.matrices.count

    def block(self, i):
        """Coordinates (0-based) carrying the unit entries of member ``i``."""
        w = self.k - 1
        return range(w * i, w * (i + 1))

    def owner(self, coordinate):
        return coordinate // (self.k - 1)


def sharp_family(d, k, epsilon=None):
    if k < 2:
        raise ConfigError(f"k must be >= 2, got {k}")
    if d % (k - 1):
        raise ConfigError(f"k - 1 = {k - 1} does not divide d = {d}")
    if epsilon is None:
        epsilon = 1.0 / (2 * d)
    if not 0 < epsilon < 1.0 / d:
        raise ConfigError(f"epsilon must lie in (0, 1/d) = (0, {1.0 / d:.6g}), got {epsilon}")
    ell = d // (k - 1)
    members = []
    for i in range(ell):
        diag = np.full(d, float(epsilon))
        diag[(k - 1) * i : (k - 1) * (i + 1)] = 1.0
        members.append(np.diag(diag))
    return SharpFamily(d, k, float(epsilon), MatrixSet.from_arrays(members))


def row_witness(A, family):
    """Member owning the row of largest norm; its ratio exceeds 1/k by the block argument."""
    A = np.asarray(A, dtype=float)
    return family.owner(int(np.argmax(np.linalg.norm(A, axis=1))))


def normalized_traces(A, family):
    """Transformed traces after scaling ``A`` to largest row norm 1."""
    A = np.asarray(A, dtype=float)
    A = A / np.linalg.norm(A, axis=1).max()
    return np.array([np.trace(A.T @ M @ A) for M in family.matrices])


def witness_violation(A, family):
    """First member (index order) with ratio ``> 1/k`` under ``A``.

    Returns ``(i0, ratio)``.  Raises :class:`InternalError` with a full dump
    if no member violates, which the block argument rules out.
    """
    A = np.asarray(A, dtype=float)
    check_rank(singular_values(A))
    r = ratios_unchecked(A, family.matrices)
    bad = np.nonzero(r > 1.0 / family.k)[0]
    if len(bad) == 0:
        raise InternalError(
            "no member violates 1/k; this contradicts the block argument.\n"
            f"d={family.d} k={family.k} epsilon={family.epsilon}\n"
            f"A=\n{np.array2string(A, precision=17)}\n"
            f"ratios={r.tolist()}\nrow witness={row_witness(A, family)}\n"
            f"normalized traces={normalized_traces(A, family).tolist()}"
        )
    return int(bad[0]), float(r[bad[0]])
