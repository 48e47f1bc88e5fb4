"""Distribution-level math: softmax, KL divergence, self-uncertainty, metrics.

Self-uncertainty of a categorical distribution p is measured against two
references: a near-one-hot distribution at the argmax of p (full certainty)
and the uniform distribution (full ambiguity),

    u = KL(p || q_onehot) - KL(p || q_uniform),

which collapses to the expected log-likelihood ratio
E_{x~p}[log(q_uniform(x) / q_onehot(x))]. The expectation form is the
production path (better conditioned: the KL(p||p)-like entropy terms cancel
exactly instead of numerically); the dual-KL form is retained as a reference
implementation for the equivalence test. u > 0 iff p is closer in KL to full
ambiguity than to full certainty.

All arithmetic is 64-bit; convention 0*log0 = 0 throughout.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from . import kernels

__all__ = [
    "DEFAULT_EPSILON",
    "MetricKind",
    "ReferenceConfig",
    "as_dist",
    "as_logits",
    "baseline_metric",
    "entropy",
    "gate_sigmoid",
    "kl_divergence",
    "make_high_reference",
    "make_low_reference",
    "normalized_entropy",
    "self_uncertainty",
    "self_uncertainty_dual_kl",
    "softmax",
    "step_uncertainty",
]

DEFAULT_EPSILON = 1e-12

# Probability floor used only inside self_certainty_decay, whose KL direction
# divides by p and would hit -inf on exact zeros.
_SCD_FLOOR = 1e-30

# Clamp bounds keeping sigmoid output strictly inside (0, 1) in float64.
_SIG_LO = 5e-324
_SIG_HI = float(np.nextafter(1.0, 0.0))


class MetricKind(enum.Enum):
    """Uncertainty metric selector: the primary measure plus four baselines."""

    SELF_UNCERTAINTY = "self_uncertainty"
    NORMALIZED_ENTROPY = "normalized_entropy"
    INVERSE_PMAX = "inverse_pmax"
    GINI = "gini"
    SELF_CERTAINTY_DECAY = "self_certainty_decay"


@dataclass(frozen=True)
class ReferenceConfig:
    """Vocabulary size and epsilon for the one-hot/uniform reference pair."""

    vocab_size: int
    epsilon: float = DEFAULT_EPSILON

    def __post_init__(self):
        if self.vocab_size < 2:
            raise ValueError(f"vocab_size must be >= 2, got {self.vocab_size}")
        if not (0.0 < self.epsilon <= 1e-6):
            raise ValueError(f"epsilon must be in (0, 1e-6], got {self.epsilon}")
        # 1 - eps > 1/V holds for all eps <= 1e-6, V >= 2; assert anyway.
        if not (1.0 - self.epsilon > 1.0 / self.vocab_size):
            raise ValueError("epsilon too large for this vocab_size")


def as_logits(values) -> np.ndarray:
    """Validate and return a finite 1-D float64 logit vector (V >= 2)."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 1 or arr.shape[0] < 2:
        raise ValueError(f"logits must be 1-D with >= 2 entries, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("logits must be finite")
    return arr


def as_dist(values) -> np.ndarray:
    """Validate a categorical distribution: >= 0, sums to 1 within 1e-9."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 1 or arr.shape[0] < 2:
        raise ValueError(f"dist must be 1-D with >= 2 entries, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)) or np.any(arr < 0.0):
        raise ValueError("dist entries must be finite and >= 0")
    total = float(arr.sum())
    if abs(total - 1.0) > 1e-9:
        raise ValueError(f"dist must sum to 1 within 1e-9, got {total!r}")
    return arr


def softmax(logits, temperature: float = 1.0) -> np.ndarray:
    """Max-stabilized softmax of logits/temperature."""
    arr = as_logits(logits)
    if not (temperature > 0.0 and math.isfinite(temperature)):
        raise ValueError(f"temperature must be a positive finite real, got {temperature}")
    return kernels.softmax_t(arr, temperature)


def make_low_reference(dist, cfg: ReferenceConfig) -> np.ndarray:
    """Near-one-hot reference: mass 1-eps at the argmax of dist (lowest index
    on ties), eps/(V-1) elsewhere."""
    p = as_dist(dist)
    if p.shape[0] != cfg.vocab_size:
        raise ValueError("dist length does not match cfg.vocab_size")
    v = cfg.vocab_size
    out = np.full(v, cfg.epsilon / (v - 1))
    out[int(np.argmax(p))] = 1.0 - cfg.epsilon
    return out


def make_high_reference(cfg: ReferenceConfig) -> np.ndarray:
    """Uniform reference over the vocabulary (full ambiguity)."""
    return np.full(cfg.vocab_size, 1.0 / cfg.vocab_size)


def kl_divergence(p, q) -> float:
    """KL(p || q) in nats; 0*log0 = 0; errors if q=0 where p>0."""
    pa = as_dist(p)
    qa = as_dist(q)
    if pa.shape != qa.shape:
        raise ValueError(f"dimension mismatch: {pa.shape} vs {qa.shape}")
    if np.any((pa > 0.0) & (qa == 0.0)):
        raise ValueError("KL undefined: p(x) > 0 where q(x) = 0")
    return kernels.kl_div(pa, qa)


def entropy(p) -> float:
    """Shannon entropy in nats."""
    return kernels.entropy_nats(as_dist(p))


def normalized_entropy(p) -> float:
    """Entropy normalized by log V, in [0, 1]."""
    pa = as_dist(p)
    return kernels.entropy_nats(pa) / math.log(pa.shape[0])


def self_uncertainty(dist, cfg: ReferenceConfig) -> float:
    """Dual-reference self-uncertainty via the expected log-ratio form."""
    p = as_dist(dist)
    if p.shape[0] != cfg.vocab_size:
        raise ValueError("dist length does not match cfg.vocab_size")
    return kernels.self_uncertainty_llr(p, cfg.epsilon)


def self_uncertainty_dual_kl(dist, cfg: ReferenceConfig) -> float:
    """Reference implementation: KL(p||q_onehot) - KL(p||q_uniform).

    Kept for the equivalence test against :func:`self_uncertainty`; the
    expectation form is the one used everywhere else.
    """
    p = as_dist(dist)
    return kl_divergence(p, make_low_reference(p, cfg)) - kl_divergence(
        p, make_high_reference(cfg)
    )


def gate_sigmoid(u: float) -> float:
    """Logistic sigmoid clamped strictly inside (0, 1).

    sigma(0) = 0.5 exactly; the clamp keeps downstream temperatures strictly
    inside their open intervals even where float64 sigmoid saturates.
    """
    if not math.isfinite(u):
        raise ValueError(f"u must be finite, got {u}")
    if u >= 0.0:
        s = 1.0 / (1.0 + math.exp(-u))
    else:
        e = math.exp(u)
        s = e / (1.0 + e)
    return min(max(s, _SIG_LO), _SIG_HI)


def _gini(p: np.ndarray) -> float:
    return 1.0 - float(p @ p)


def _self_certainty_decay(p: np.ndarray, cfg: ReferenceConfig) -> float:
    pf = np.maximum(p, _SCD_FLOOR)
    q = make_high_reference(cfg)
    return math.exp(-kernels.kl_div(q, pf))


def baseline_metric(kind: MetricKind, dist, cfg: ReferenceConfig) -> float:
    """Evaluate one uncertainty metric, mapped to [0, 1].

    0 = maximum certainty, 1 = maximum uncertainty. The four baselines hit
    the extremes exactly (one-hot -> 0, uniform -> 1, up to the 1e-30 floor
    in self_certainty_decay); self_uncertainty reports its sigmoid gate
    value, which only approaches the extremes.
    """
    p = as_dist(dist)
    if p.shape[0] != cfg.vocab_size:
        raise ValueError("dist length does not match cfg.vocab_size")
    if kind == MetricKind.SELF_UNCERTAINTY:
        return gate_sigmoid(kernels.self_uncertainty_llr(p, cfg.epsilon))
    if kind == MetricKind.NORMALIZED_ENTROPY:
        return kernels.entropy_nats(p) / math.log(cfg.vocab_size)
    if kind == MetricKind.INVERSE_PMAX:
        return 1.0 - float(p.max())
    if kind == MetricKind.GINI:
        return _gini(p)
    if kind == MetricKind.SELF_CERTAINTY_DECAY:
        return _self_certainty_decay(p, cfg)
    raise ValueError(f"unknown metric kind: {kind!r}")


def step_uncertainty(token_uncertainties: Iterable[float]) -> float:
    """Arithmetic mean of per-token uncertainties (step-level aggregate)."""
    us = list(token_uncertainties)
    if not us:
        raise ValueError("token_uncertainties must be non-empty")
    return math.fsum(us) / len(us)
