"""Token sampling: the adaptive temperature gate plus standard baselines.

Strategies: ``greedy``, ``fixed_temperature``, ``top_k``, ``top_p`` and
``adaptive``. The adaptive path computes token-level uncertainty on the
temperature-1 softmax of the active segment's logits and samples at
tau = T0 * sigmoid(u) — low uncertainty collapses toward argmax, high
uncertainty approaches the full exploration temperature T0. Uncertainty is
reported for every strategy (telemetry); tau only when adaptive.

Vocabularies may be factorized into per-position segments; uncertainty is
always computed on the active segment's (masked) logits only.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Union

import numpy as np

from . import kernels
from .rng import RngState
from .uncertainty import (
    DEFAULT_EPSILON,
    MetricKind,
    ReferenceConfig,
    baseline_metric,
    gate_sigmoid,
    step_uncertainty,
)

__all__ = [
    "STRATEGIES",
    "SamplerConfig",
    "Segment",
    "StepDecode",
    "TokenDecode",
    "VocabLayout",
    "adaptive_temperature",
    "decode_step",
    "decode_token",
]

STRATEGIES = ("greedy", "fixed_temperature", "top_k", "top_p", "adaptive")

LogitProvider = Callable[[int, tuple], np.ndarray]


@dataclass(frozen=True)
class Segment:
    name: str
    start: int
    stop: int  # exclusive

    def __post_init__(self):
        if not (0 <= self.start < self.stop):
            raise ValueError(f"bad segment range [{self.start}, {self.stop})")

    @property
    def size(self) -> int:
        return self.stop - self.start


@dataclass(frozen=True, eq=False)
class VocabLayout:
    """Per-position vocabulary segments plus an action-token mask.

    With a single segment every position shares it (flat vocabulary);
    with multiple segments position k uses segments[k].
    """

    segments: tuple[Segment, ...]
    vocab_size: int
    action_mask: Optional[np.ndarray] = None  # True = sampleable action token

    def __post_init__(self):
        if not self.segments:
            raise ValueError("layout needs at least one segment")
        spans = sorted((s.start, s.stop) for s in self.segments)
        for (a0, a1), (b0, b1) in zip(spans, spans[1:]):
            if b0 < a1:
                raise ValueError("segments must be disjoint")
        if spans[-1][1] > self.vocab_size:
            raise ValueError("segment exceeds vocab_size")
        mask = self.action_mask
        if mask is None:
            mask = np.ones(self.vocab_size, dtype=bool)
        else:
            mask = np.asarray(mask, dtype=bool)
            if mask.shape != (self.vocab_size,):
                raise ValueError("action_mask length must equal vocab_size")
        object.__setattr__(self, "action_mask", mask)
        valid = []
        for seg in self.segments:
            idx = np.flatnonzero(mask[seg.start:seg.stop]) + seg.start
            if idx.size < 2:
                raise ValueError(f"segment {seg.name!r} has < 2 unmasked tokens")
            valid.append(idx)
        object.__setattr__(self, "_valid", tuple(valid))

    @classmethod
    def factorized(cls, sizes: Sequence[int], names: Optional[Sequence[str]] = None,
                   action_mask: Optional[np.ndarray] = None) -> "VocabLayout":
        """Contiguous per-position segments of the given sizes."""
        if names is None:
            names = [f"seg{i}" for i in range(len(sizes))]
        segs, start = [], 0
        for name, size in zip(names, sizes):
            segs.append(Segment(name, start, start + size))
            start += size
        return cls(segments=tuple(segs), vocab_size=start, action_mask=action_mask)

    def segment_index(self, position: int) -> int:
        if len(self.segments) == 1:
            return 0
        if not (0 <= position < len(self.segments)):
            raise ValueError(
                f"position {position} has no segment (layout has {len(self.segments)})"
            )
        return position

    def valid_indices(self, position: int) -> np.ndarray:
        """Global token indices decodable at this position (unmasked)."""
        return self._valid[self.segment_index(position)]


@dataclass(frozen=True)
class SamplerConfig:
    """Decoding strategy and its hyperparameters.

    ``sampled_prefix_len`` limits sampling to the first tokens of each step;
    positions beyond it decode greedily ("all" samples every position).
    """

    strategy: str
    t0: float = 1.0
    fixed_t: float = 1.0
    k: int = 40
    p: float = 0.9
    epsilon: float = DEFAULT_EPSILON
    sampled_prefix_len: Union[int, str] = "all"

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}; choose from {STRATEGIES}")
        for name in ("t0", "fixed_t"):
            v = getattr(self, name)
            if not (isinstance(v, (int, float)) and math.isfinite(v) and v > 0):
                raise ValueError(f"{name} must be a positive finite real, got {v!r}")
        if not (isinstance(self.k, int) and self.k >= 1):
            raise ValueError(f"k must be a positive integer, got {self.k!r}")
        if not (0.0 < self.p <= 1.0):
            raise ValueError(f"p must be in (0, 1], got {self.p!r}")
        if not (0.0 < self.epsilon <= 1e-6):
            raise ValueError(f"epsilon must be in (0, 1e-6], got {self.epsilon!r}")
        spl = self.sampled_prefix_len
        if spl != "all" and not (isinstance(spl, int) and spl >= 1):
            raise ValueError(f"sampled_prefix_len must be 'all' or a positive int, got {spl!r}")

    def prefix_len(self, n_tokens: int) -> int:
        if self.sampled_prefix_len == "all":
            return n_tokens
        return min(int(self.sampled_prefix_len), n_tokens)


@dataclass(frozen=True)
class TokenDecode:
    """Per-token telemetry: emitted token plus the uncertainty gate values."""

    token: int
    u: float
    gate: float
    tau: Optional[float]  # None unless the adaptive path sampled this token
    p_max: float


@dataclass(frozen=True)
class StepDecode:
    tokens: tuple[int, ...]
    records: tuple[TokenDecode, ...]
    u_step: float
    prefix_len: int


def adaptive_temperature(u: float, t0: float) -> float:
    """tau = t0 * sigmoid(u), strictly inside (0, t0), monotone in u."""
    if not (t0 > 0 and math.isfinite(t0)):
        raise ValueError(f"t0 must be a positive finite real, got {t0!r}")
    return t0 * gate_sigmoid(u)


def _sample_index(probs: np.ndarray, rng: RngState) -> int:
    # Inverse-CDF draw: one uniform per sampled token.
    cum = np.cumsum(probs)
    j = int(np.searchsorted(cum, rng.uniform(), side="right"))
    return min(j, probs.shape[0] - 1)


def _measure(probs: np.ndarray, metric: MetricKind, epsilon: float) -> tuple[float, float]:
    """(uncertainty value, sampling gate) for the active segment."""
    if metric == MetricKind.SELF_UNCERTAINTY:
        u = kernels.self_uncertainty_llr(probs, epsilon)
        return u, gate_sigmoid(u)
    cfg = ReferenceConfig(vocab_size=probs.shape[0], epsilon=epsilon)
    m = baseline_metric(metric, probs, cfg)
    return m, m  # the metric value substitutes the sigmoid gate directly


def decode_token(logits, cfg: SamplerConfig, layout: VocabLayout, rng: RngState,
                 position: int = 0, metric: MetricKind = MetricKind.SELF_UNCERTAINTY,
                 force_greedy: bool = False) -> TokenDecode:
    """Decode one token from full-vocabulary logits.

    Logits are restricted to the active segment with masked tokens removed
    (equivalent to setting them to -inf before the softmax); a masked token
    can therefore never be emitted. Uncertainty is computed on the
    temperature-1 softmax of the restricted logits for every strategy.
    """
    arr = np.asarray(logits, dtype=np.float64)
    if arr.shape != (layout.vocab_size,):
        raise ValueError(f"expected {layout.vocab_size} logits, got shape {arr.shape}")
    idx = layout.valid_indices(position)
    seg_logits = arr[idx]
    if not np.all(np.isfinite(seg_logits)):
        raise ValueError("active-segment logits must be finite")

    probs = kernels.softmax_t(seg_logits, 1.0)
    u, gate = _measure(probs, metric, cfg.epsilon)
    p_max = float(probs.max())

    strategy = "greedy" if force_greedy else cfg.strategy
    tau: Optional[float] = None
    if strategy == "greedy":
        j = int(np.argmax(seg_logits))  # first occurrence = lowest index
    elif strategy == "fixed_temperature":
        j = kernels.sample_softmax_t(seg_logits, cfg.fixed_t, rng.uniform())
    elif strategy == "top_k":
        if cfg.k > idx.size:
            raise ValueError(f"top_k k={cfg.k} exceeds segment vocabulary {idx.size}")
        order = np.argsort(-seg_logits, kind="stable")
        kept = order[:cfg.k]
        j = int(kept[_sample_index(kernels.softmax_t(seg_logits[kept], cfg.fixed_t), rng)])
    elif strategy == "top_p":
        base = kernels.softmax_t(seg_logits, cfg.fixed_t)
        order = np.argsort(-base, kind="stable")
        cum = np.cumsum(base[order])
        over = np.flatnonzero(cum >= cfg.p)
        n_keep = int(over[0]) + 1 if over.size else order.size
        kept = order[:n_keep]
        renorm = base[kept] / base[kept].sum()
        j = int(kept[_sample_index(renorm, rng)])
    else:  # adaptive
        tau = adaptive_temperature(u, cfg.t0) if metric == MetricKind.SELF_UNCERTAINTY \
            else cfg.t0 * gate
        j = kernels.sample_softmax_t(seg_logits, tau, rng.uniform())

    return TokenDecode(token=int(idx[j]), u=u, gate=gate, tau=tau, p_max=p_max)


def decode_step(provider: LogitProvider, n_tokens: int, cfg: SamplerConfig,
                layout: VocabLayout, rng: RngState,
                metric: MetricKind = MetricKind.SELF_UNCERTAINTY,
                u_mean_scope: str = "sampled_prefix") -> StepDecode:
    """Autoregressively decode one control step of ``n_tokens`` tokens.

    ``provider(k, prefix)`` must return the full-vocabulary logit vector for
    position k given the already-decoded tokens. Positions at or beyond the
    sampled prefix decode greedily. The step-level uncertainty u_t averages
    token u values over the sampled prefix (default) or all positions.
    """
    if n_tokens < 1:
        raise ValueError("n_tokens must be >= 1")
    if u_mean_scope not in ("sampled_prefix", "all"):
        raise ValueError(f"u_mean_scope must be 'sampled_prefix' or 'all', got {u_mean_scope!r}")
    prefix = cfg.prefix_len(n_tokens)
    tokens: list[int] = []
    records: list[TokenDecode] = []
    for k in range(n_tokens):
        rec = decode_token(provider(k, tuple(tokens)), cfg, layout, rng,
                           position=k, metric=metric, force_greedy=(k >= prefix))
        records.append(rec)
        tokens.append(rec.token)
    scope = records[:prefix] if u_mean_scope == "sampled_prefix" else records
    u_step = step_uncertainty([r.u for r in scope])
    return StepDecode(tokens=tuple(tokens), records=tuple(records),
                      u_step=u_step, prefix_len=prefix)
