"""Mapping competition scores to per-sample loss weights.

The mapping is affine: w_i = sigma + rho * s_i.  Positive rho boosts
group winners (high-score samples), negative rho boosts losers, zero
degenerates to uniform weighting.  Weights multiply per-sample losses
directly with no batch renormalization.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError

__all__ = [
    "STRATEGIES",
    "WeightingConfig",
    "compute_weights",
    "weight_curve",
    "write_weight_curve",
]

STRATEGIES = ("ns_ws", "ns_lf", "uniform", "focal_like")


@dataclass(frozen=True)
class WeightingConfig:
    """Affine score-to-weight map plus a strategy label.

    The label must agree with the sign of rho: ns_ws needs rho > 0,
    ns_lf needs rho < 0, uniform and focal_like need rho == 0 (the
    focal variant gets its shape from the loss, not from weights).
    """

    sigma: float
    rho: float
    strategy: str = "uniform"

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ConfigError(
                f"unknown strategy {self.strategy!r}, expected one of {STRATEGIES}"
            )
        if self.sigma < 0:
            raise ConfigError(f"sigma must be non-negative, got {self.sigma}")
        wanted = _strategy_for(self.rho)
        actual = "uniform" if self.strategy == "focal_like" else self.strategy
        if actual != wanted:
            raise ConfigError(
                f"strategy {self.strategy!r} inconsistent with rho={self.rho} "
                f"(sign implies {wanted!r})"
            )

    @classmethod
    def from_parameters(cls, sigma: float, rho: float,
                        focal: bool = False) -> "WeightingConfig":
        """Label the strategy from the sign of rho."""
        label = _strategy_for(rho)
        if focal:
            if rho != 0.0:
                raise ConfigError("focal_like requires rho == 0")
            label = "focal_like"
        return cls(sigma=float(sigma), rho=float(rho), strategy=label)

    @property
    def bounds(self) -> tuple[float, float]:
        """Closed interval containing every weight this config can emit."""
        lo, hi = sorted((self.sigma, self.sigma + self.rho))
        return lo, hi


def _strategy_for(rho: float) -> str:
    if rho > 0:
        return "ns_ws"
    if rho < 0:
        return "ns_lf"
    return "uniform"


def compute_weights(scores, cfg: WeightingConfig) -> np.ndarray:
    """w_i = sigma + rho * s_i, refusing to emit negative weights.

    A negative weight means sigma is too small for the chosen rho < 0;
    that is a configuration problem, not a numeric one, so it raises
    instead of silently flipping gradient signs.
    """
    s = np.asarray(scores, dtype=np.float64)
    if s.size and (s.min() <= 0.0 or s.max() >= 1.0):
        raise ConfigError(
            "scores must lie strictly inside (0, 1); "
            f"got range [{s.min()}, {s.max()}]"
        )
    w = cfg.sigma + cfg.rho * s
    if s.size and w.min() < 0.0:
        raise ConfigError(
            f"sigma={cfg.sigma} with rho={cfg.rho} yields negative weight "
            f"{w.min()} at score {s[np.argmin(w)]}; raise sigma to at least "
            f"{abs(cfg.rho)}"
        )
    if not np.all(np.isfinite(w)):
        raise ConfigError("non-finite weight produced; check sigma and rho")
    return w


def weight_curve(n: int, cfg: WeightingConfig) -> list[tuple[int, float]]:
    """(rank, weight) pairs for n scores sorted descending.

    The generating scores are the evenly spaced mid-points (k + 0.5)/n in
    descending order: a neutral stand-in distribution that exercises the
    full (0, 1) score range.  Rank 0 is the highest score, so the curve is
    non-increasing for rho > 0 and non-decreasing for rho < 0.
    """
    if n < 1:
        raise ConfigError(f"curve needs at least one sample, got {n}")
    descending = (np.arange(n, dtype=np.float64)[::-1] + 0.5) / n
    weights = compute_weights(descending, cfg)
    return [(rank, float(w)) for rank, w in enumerate(weights)]


def write_weight_curve(path, n: int, cfg: WeightingConfig) -> None:
    """Export the curve as two-column CSV: rank, weight."""
    rows = weight_curve(n, cfg)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["rank", "weight"])
        for rank, w in rows:
            writer.writerow([rank, f"{w:.17g}"])
