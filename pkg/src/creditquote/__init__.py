"""Dynamic pricing for RFQ credit markets with censored best-competitor
feedback: two-stage multi-task learning, benchmark policies, a synthetic
market simulator, diagnostics, and RFQ-log replay."""

from .bond import BondPrimitives, price, price_derivs, yield_of_price
from .distributions import NoiseSpec
from .estimation import lambda_schedule, stage1_fit, stage2_fit
from .likelihood import Observation, ObservationBatch, batch_objective
from .policies import PolicyConfig, episode_index, make_policy
from .pricing import QuoteProblem, optimal_quote
from .simulator import (ArrivalSpec, ModelConfig, generate_model, run_path)

__version__ = "0.1.0"

__all__ = [
    "ArrivalSpec", "BondPrimitives", "ModelConfig", "NoiseSpec",
    "Observation", "ObservationBatch", "PolicyConfig", "QuoteProblem",
    "batch_objective", "episode_index", "generate_model", "lambda_schedule",
    "make_policy", "optimal_quote", "price", "price_derivs", "run_path",
    "stage1_fit", "stage2_fit", "yield_of_price",
]
