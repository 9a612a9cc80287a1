"""stalegrad: online learning with delayed (stale) gradient updates.

A deterministic delay simulator, a shared-parameter asynchronous engine, and
a feature-sharded pipeline engine over one set of update arithmetic, plus
mirror-descent variants, closed-form regret-bound evaluators, feature
hashing, and an experiment harness exposed as a FastAPI service with a thin
CLI client.
"""

__version__ = "0.1.0"

from .core import FeasibleRegion, ScaledVector, Schedule, SparseVector, axpy, eta, project
from .engine import DelayBuffer, RunConfig, RunResult, run, step
from .ledger import RegretLedger
from .losses import LossConstants, LossSpec, constants_for, example_gradient, margin_loss
from .streams import HashConfig, QuadraticExample, SparseExample

__all__ = [
    "__version__",
    "FeasibleRegion", "ScaledVector", "Schedule", "SparseVector", "axpy", "eta", "project",
    "DelayBuffer", "RunConfig", "RunResult", "run", "step",
    "RegretLedger",
    "LossConstants", "LossSpec", "constants_for", "example_gradient", "margin_loss",
    "HashConfig", "QuadraticExample", "SparseExample",
]
