"""Simultaneous spectral balancing of positive-definite matrix families.

A change of basis ``A`` balances ``M`` to level ``k`` when
``lambda_1(A^T M A) / Tr(A^T M A) < 1/k``.  The package finds such an ``A``
for families of up to ``floor((d - 1)/(k - 1))`` members, builds families
of the next size that cannot be balanced, and simulates adaptive random
walks whose step covariances are balanced.
"""

__version__ = "0.1.0"

from .errors import (  # noqa: E402
    AlreadyBalanced,
    ConfigError,
    DegenerateError,
    InfeasibleError,
    InputError,
    InternalError,
    SpecbalError,
)
from .spectral_core import (  # noqa: E402
    MatrixSet,
    balance_ratio,
    balance_ratios,
    balance_score,
    polar_decompose,
    random_matrix_set,
)
from .balancer import (  # noqa: E402
    BalanceProblem,
    BalancerConfig,
    BalanceResult,
    Status,
    balance,
    pair_balance,
)
from .sharpness import sharp_family, witness_violation  # noqa: E402

__all__ = [
    "__version__",
    "AlreadyBalanced",
    "BalanceProblem",
    "BalanceResult",
    "BalancerConfig",
    "ConfigError",
    "DegenerateError",
    "InfeasibleError",
    "InputError",
    "InternalError",
    "MatrixSet",
    "SpecbalError",
    "Status",
    "balance",
    "balance_ratio",
    "balance_ratios",
    "balance_score",
    "pair_balance",
    "polar_decompose",
    "random_matrix_set",
    "sharp_family",
    "witness_violation",
]
