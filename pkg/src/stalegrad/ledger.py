"""Per-step accounting of progressive loss, error, and regret."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class RegretLedger:
    """Row t holds the loss incurred at step t (1-based), warm-up included.

    err_indicator is 1.0 for a progressive-validation mistake, 0.0 otherwise,
    NaN for unlabelled examples. comparator_losses holds f_t(x*) for the same
    stream once a comparator has been attached; regret is stored unclamped
    (it can be negative against a stochastic comparator).
    """

    losses: np.ndarray
    err_indicator: np.ndarray
    tau: int = 0
    comparator_losses: np.ndarray | None = None
    valid: bool = True
    notes: list[str] = field(default_factory=list)

    def __len__(self) -> int:
        return int(self.losses.shape[0])

    @property
    def steps(self) -> np.ndarray:
        return np.arange(1, len(self) + 1)

    @property
    def cum_loss(self) -> np.ndarray:
        return np.cumsum(self.losses)

    @property
    def err_rate(self) -> np.ndarray:
        """Progressive error rate: mistakes among the first t examples, / t."""
        return np.cumsum(self.err_indicator) / self.steps

    def attach_comparator(self, comparator_losses: np.ndarray) -> None:
        comparator_losses = np.asarray(comparator_losses, dtype=np.float64)
        if comparator_losses.shape != self.losses.shape:
            raise ValueError("comparator losses must align with the ledger rows")
        self.comparator_losses = comparator_losses

    @property
    def regret_curve(self) -> np.ndarray:
        if self.comparator_losses is None:
            raise ValueError("no comparator attached")
        return self.cum_loss - np.cumsum(self.comparator_losses)

    def total_loss(self) -> float:
        return float(np.sum(self.losses))

    def final_err(self) -> float:
        return float(self.err_rate[-1])

    def regret(self, include_warmup: bool = True) -> float:
        """Total regret; with include_warmup=False, summed over t > tau only
        (the window the worst-case guarantees are stated for)."""
        if self.comparator_losses is None:
            raise ValueError("no comparator attached")
        start = 0 if include_warmup else min(self.tau, len(self))
        return float(np.sum(self.losses[start:]) - np.sum(self.comparator_losses[start:]))
