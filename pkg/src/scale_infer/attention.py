"""Temperature-scalable attention: encoder stand-in, gamma schedule, readouts.

The attention temperature gamma divides pre-softmax scores (on top of the
usual sqrt(d) factor): gamma > 1 flattens attention rows, gamma < 1 sharpens
them. The schedule maps an uncertainty signal to gamma = kappa^tanh(signal),
bounded strictly inside (1/kappa, kappa), with ablation variants (fixed sign,
instantaneous signal, off) and two placement targets: inside every encoder
layer (unimodal) or only at the policy's visual readout (crossmodal).

The encoder is a small seeded random-weight transformer; query and key
projections are tied per head so attention scores track feature similarity
(untied random projections would scramble it), which is what lets visually
similar tokens capture attention.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import kernels
from .rng import RngState

__all__ = [
    "MODULATION_STRATEGIES",
    "MODULATION_TARGETS",
    "AttentionTemperature",
    "EncodeResult",
    "EncoderParams",
    "ModulationConfig",
    "attention_weights",
    "crossmodal_scaled_readout",
    "encode",
    "encode_with_readout",
    "gamma_schedule",
    "scaled_attention",
]

MODULATION_STRATEGIES = ("off", "adaptive_delta", "adaptive_instant", "fixed_sign")
MODULATION_TARGETS = ("encoder_unimodal", "policy_crossmodal")


@dataclass(frozen=True)
class ModulationConfig:
    strategy: str = "off"
    target: str = "encoder_unimodal"
    kappa: float = 2.0

    def __post_init__(self):
        if self.strategy not in MODULATION_STRATEGIES:
            raise ValueError(
                f"unknown modulation strategy {self.strategy!r}; choose from {MODULATION_STRATEGIES}"
            )
        if self.target not in MODULATION_TARGETS:
            raise ValueError(
                f"unknown modulation target {self.target!r}; choose from {MODULATION_TARGETS}"
            )
        if not (self.kappa > 1.0 and math.isfinite(self.kappa)):
            raise ValueError(f"kappa must be a finite real > 1, got {self.kappa!r}")


@dataclass(frozen=True)
class AttentionTemperature:
    """A gamma value certified to lie strictly inside (1/kappa, kappa)."""

    gamma: float
    kappa: float

    def __post_init__(self):
        if not (self.kappa > 1.0 and math.isfinite(self.kappa)):
            raise ValueError(f"kappa must be a finite real > 1, got {self.kappa!r}")
        if not (1.0 / self.kappa < self.gamma < self.kappa):
            raise ValueError(
                f"gamma {self.gamma!r} outside open interval (1/{self.kappa}, {self.kappa})"
            )


def gamma_schedule(signal: float, cfg: ModulationConfig) -> AttentionTemperature:
    """Map an uncertainty signal to an attention temperature.

    adaptive_delta / adaptive_instant: kappa^tanh(signal) (the caller feeds
    the previous step's deviation or raw step uncertainty respectively);
    fixed_sign: the extreme of the matching sign; off: always 1. Outputs are
    clamped one ulp inside (1/kappa, kappa) so the open bound holds even
    where tanh saturates in float64.
    """
    if not math.isfinite(signal):
        raise ValueError(f"signal must be finite, got {signal!r}")
    kap = cfg.kappa
    hi = float(np.nextafter(kap, 1.0))
    lo = float(np.nextafter(1.0 / kap, 1.0))
    if cfg.strategy == "off":
        g = 1.0
    elif cfg.strategy == "fixed_sign":
        g = hi if signal > 0.0 else (lo if signal < 0.0 else 1.0)
    else:
        g = min(max(kap ** math.tanh(signal), lo), hi)
    return AttentionTemperature(gamma=g, kappa=kap)


def _as_matrix(name: str, m) -> np.ndarray:
    arr = np.asarray(m, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {arr.shape}")
    return arr


def attention_weights(q, k, gamma: float) -> np.ndarray:
    """Row-wise softmax(q k^T / (sqrt(d) * gamma)) without the value product."""
    qm, km = _as_matrix("q", q), _as_matrix("k", k)
    if qm.shape[1] != km.shape[1]:
        raise ValueError(f"inner dimensions differ: {qm.shape} vs {km.shape}")
    if not (gamma > 0.0 and math.isfinite(gamma)):
        raise ValueError(f"gamma must be a positive finite real, got {gamma!r}")
    z = (qm @ km.T) / (np.sqrt(qm.shape[1]) * gamma)
    z -= z.max(axis=1, keepdims=True)
    w = np.exp(z)
    w /= w.sum(axis=1, keepdims=True)
    return w


def scaled_attention(q_mat, k_mat, v_mat, gamma: float) -> np.ndarray:
    """softmax(Q K^T / (sqrt(d) * gamma)) V; gamma=1 is standard attention."""
    vm = _as_matrix("v", v_mat)
    w = attention_weights(q_mat, k_mat, gamma)
    if w.shape[1] != vm.shape[0]:
        raise ValueError(f"v has {vm.shape[0]} rows, expected {w.shape[1]}")
    return w @ vm


def crossmodal_scaled_readout(policy_query, visual_keys, visual_values, gamma: float) -> np.ndarray:
    """Scaled attention applied at the policy's visual-readout stage.

    Identical math to :func:`scaled_attention`; this entry point exists so
    the modulation target that leaves the encoder at gamma=1 and scales only
    the readout is a distinct, individually testable step. Bypassed entirely
    when the target is the unimodal encoder.
    """
    return scaled_attention(policy_query, visual_keys, visual_values, gamma)


@dataclass(frozen=True, eq=False)
class EncoderParams:
    """Deterministic random-weight encoder parameters.

    wq/wk/wv: (L, H, d_model, d_head); wo: (L, d_model, d_model);
    w_pool: (d_model, d_model). wk is tied to wq (see module docstring).
    """

    seed: int
    wq: np.ndarray = field(repr=False)
    wk: np.ndarray = field(repr=False)
    wv: np.ndarray = field(repr=False)
    wo: np.ndarray = field(repr=False)
    w_pool: np.ndarray = field(repr=False)

    def __post_init__(self):
        if self.wq.ndim != 4:
            raise ValueError("wq must be (L, H, d_model, d_head)")
        if self.wk.shape != self.wq.shape or self.wv.shape != self.wq.shape:
            raise ValueError("wq/wk/wv shapes must match")
        l, h, dm, dh = self.wq.shape
        if dh * h != dm:
            raise ValueError(f"d_head*H must equal d_model, got {dh}*{h} != {dm}")
        if self.wo.shape != (l, dm, dm) or self.w_pool.shape != (dm, dm):
            raise ValueError("wo must be (L, d_model, d_model) and w_pool (d_model, d_model)")
        for name in ("wq", "wk", "wv", "wo", "w_pool"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise ValueError(f"{name} contains non-finite entries")

    @property
    def n_layers(self) -> int:
        return self.wq.shape[0]

    @property
    def n_heads(self) -> int:
        return self.wq.shape[1]

    @property
    def d_model(self) -> int:
        return self.wq.shape[2]

    @property
    def d_head(self) -> int:
        return self.wq.shape[3]

    @classmethod
    def create(cls, seed: int, n_layers: int = 2, n_heads: int = 2,
               d_model: int = 32, feature_dims: int = 24) -> "EncoderParams":
        """Generate encoder weights deterministically from a 64-bit seed.

        Query/key projections are per-head coordinate slices (tied, scaled
        so each head weights the leading ``feature_dims`` equally): attention
        scores then track token-feature similarity exactly, which the
        position readout depends on. Value, output and pooling projections
        are seeded random.
        """
        if d_model % n_heads != 0:
            raise ValueError("d_model must be divisible by n_heads")
        if not (0 < feature_dims <= d_model):
            raise ValueError("feature_dims must be in (0, d_model]")
        d_head = d_model // n_heads
        rng = RngState(seed).spawn(101)
        wq = np.zeros((n_layers, n_heads, d_model, d_head))
        for h in range(n_heads):
            lo = h * d_head
            overlap = max(1, min(lo + d_head, feature_dims) - min(lo, feature_dims))
            scale = math.sqrt(d_head / overlap)
            for i in range(d_head):
                wq[:, h, lo + i, i] = scale
        wv = rng.normals(n_layers * n_heads * d_model * d_head).reshape(
            n_layers, n_heads, d_model, d_head) / math.sqrt(d_model)
        # Small output scale keeps the residual stream dominant, preserving
        # the feature-similarity structure the readout depends on.
        wo = rng.normals(n_layers * d_model * d_model).reshape(
            n_layers, d_model, d_model) * (0.3 / math.sqrt(d_model))
        w_pool = rng.normals(d_model * d_model).reshape(d_model, d_model) / math.sqrt(d_model)
        return cls(seed=seed, wq=wq, wk=wq.copy(), wv=wv, wo=wo, w_pool=w_pool)


@dataclass(frozen=True, eq=False)
class EncodeResult:
    feat: np.ndarray        # (d_model,) pooled feature vector
    task_query: np.ndarray  # (H, d_head) final-layer task-token queries
    keys: np.ndarray        # (H, n, d_head) final-layer keys
    attn_entropy: float     # mean attention-row entropy across layers/heads


def encode_with_readout(observation, params: EncoderParams, gamma: float) -> EncodeResult:
    """Run the encoder at temperature gamma (same gamma in every layer).

    Also returns the final layer's task-token query and key matrices so a
    downstream readout can re-derive the task token's attention over the
    scene without a second encoder pass.
    """
    obs = np.asarray(observation, dtype=np.float64)
    if obs.ndim != 2 or obs.shape[0] < 1:
        raise ValueError(f"observation must be a non-empty (n, d_model) matrix, got {obs.shape}")
    if obs.shape[1] != params.d_model:
        raise ValueError(f"observation feature dim {obs.shape[1]} != d_model {params.d_model}")
    if not np.all(np.isfinite(obs)):
        raise ValueError("observation features must be finite")
    if not (gamma > 0.0 and math.isfinite(gamma)):
        raise ValueError(f"gamma must be a positive finite real, got {gamma!r}")
    feat, task_q, keys, ent = kernels.encoder_forward(
        np.ascontiguousarray(obs), params.wq, params.wk, params.wv,
        params.wo, params.w_pool, float(gamma))
    return EncodeResult(feat=feat, task_query=task_q, keys=keys, attn_entropy=float(ent))


def encode(observation, params: EncoderParams, gamma: float = 1.0) -> np.ndarray:
    """Feature vector v_t = encoder(observation; gamma)."""
    return encode_with_readout(observation, params, gamma).feat
