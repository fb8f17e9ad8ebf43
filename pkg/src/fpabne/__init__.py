"""Equilibria of first-price auctions with discrete bids.

Exact interim allocation and regret, equilibrium verification and
conversion, an approximation scheme for uniform tie-breaking, and the
encoding of generalized circuits as auctions.
"""

from .allocation import (
    best_response,
    exante_regret,
    interim_regret_sup,
    interim_utility,
    win_prob,
    win_probs,
)
from .equilibrium import (
    VerificationReport,
    convert_to_wellsupported,
    verify,
    verify_approximate,
    verify_epsdelta,
    verify_wellsupported,
)
from .model import (
    AtomSplit,
    AuctionInstance,
    BidMarginals,
    BidSpace,
    ModelError,
    MonotoneStrategy,
    TieBreakingRule,
    ValueDistribution,
    marginals_of,
    monotone_analogue,
    validate_instance,
)
from .ptas import PtasParams, solve_ptas

__version__ = "0.1.0"
