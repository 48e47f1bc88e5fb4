"""Closed-loop adaptive inference: EMA tracking, per-step control, episodes.

Each control step decodes K action tokens and aggregates their uncertainties
into a step-level u_t, tracked by an exponential moving average. The
deviation du_t = u_t - ema_{t-1} (against the pre-update average) drives the
attention temperature of the NEXT step in single-pass mode — one encoder
pass and one decode pass per step. The two-step oracle mode instead probes
the current step first (gamma=1, greedy) to compute du_t, then re-encodes
and decodes at the modulated temperature: two passes per step, the
upper-bound reference.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace
from typing import Optional, Protocol, Sequence

import numpy as np

from . import attention
from .attention import EncodeResult, EncoderParams, ModulationConfig, gamma_schedule
from .decoding import LogitProvider, SamplerConfig, StepDecode, VocabLayout, decode_step
from .rng import RngState
from .uncertainty import MetricKind

__all__ = [
    "EmaState",
    "EpisodeResult",
    "PassCounters",
    "Policy",
    "StepResult",
    "StrategyConfig",
    "UncertaintyRecord",
    "ema_update",
    "modulation_signal",
    "oracle_step",
    "run_episode",
    "scale_step",
]


@dataclass(frozen=True)
class EmaState:
    """Running average of step-level uncertainty.

    The first update seeds the average with the observed value (so the first
    step's deviation is 0 and perception starts unmodulated).
    """

    alpha: float = 0.8
    value: float = math.nan
    initialized: bool = False

    def __post_init__(self):
        if not (0.0 < self.alpha < 1.0):
            raise ValueError(f"alpha must be in (0, 1), got {self.alpha!r}")


def ema_update(state: EmaState, u: float) -> EmaState:
    """Fold one observation into the average: v <- alpha*v + (1-alpha)*u."""
    if not math.isfinite(u):
        raise ValueError(f"u must be finite, got {u!r}")
    if not state.initialized:
        return replace(state, value=float(u), initialized=True)
    return replace(state, value=state.alpha * state.value + (1.0 - state.alpha) * u)


@dataclass(frozen=True)
class StrategyConfig:
    """The full inference recipe: sampling, modulation, signal bookkeeping."""

    sampler: SamplerConfig
    modulation: ModulationConfig = ModulationConfig()
    ema_alpha: float = 0.8
    inference_mode: str = "single_pass"
    u_mean_scope: str = "sampled_prefix"
    metric: MetricKind = MetricKind.SELF_UNCERTAINTY

    def __post_init__(self):
        if self.inference_mode not in ("single_pass", "two_step_oracle"):
            raise ValueError(
                f"inference_mode must be 'single_pass' or 'two_step_oracle', got {self.inference_mode!r}"
            )
        if self.u_mean_scope not in ("sampled_prefix", "all"):
            raise ValueError(
                f"u_mean_scope must be 'sampled_prefix' or 'all', got {self.u_mean_scope!r}"
            )
        if not (0.0 < self.ema_alpha < 1.0):
            raise ValueError(f"ema_alpha must be in (0, 1), got {self.ema_alpha!r}")
        if not isinstance(self.metric, MetricKind):
            raise ValueError(f"metric must be a MetricKind, got {self.metric!r}")


@dataclass(frozen=True)
class UncertaintyRecord:
    """Per-step telemetry: tokens, uncertainties, EMA state, gamma."""

    step_index: int
    tokens: tuple[int, ...]
    token_us: tuple[float, ...]
    token_taus: tuple[Optional[float], ...]
    token_pmax: tuple[float, ...]
    u_step: float
    ema: float            # post-update running average
    deviation: float      # u_step minus the PRE-update average (0 on step 1)
    gamma_used: float
    probe_u: Optional[float] = None  # oracle mode: probe-pass u_t (== u_step)


@dataclass
class PassCounters:
    """Instrumented forward-pass counts (incremented at the call sites)."""

    encoder_passes: int = 0
    decode_passes: int = 0


@dataclass(frozen=True)
class StepResult:
    tokens: tuple[int, ...]
    record: UncertaintyRecord
    deviation: float
    ema: EmaState


class Policy(Protocol):
    """What the controller needs from a token policy.

    ``observation.tokens`` must be an (n, d_model) feature matrix with the
    task token at row 0; the provider returned by :meth:`logit_provider`
    yields full-vocabulary logits per position given the decoded prefix.
    """

    layout: VocabLayout
    n_tokens: int
    encoder: EncoderParams

    def logit_provider(self, observation, enc: EncodeResult, gamma: float,
                       target: str) -> LogitProvider: ...

    def to_action(self, tokens: Sequence[int]): ...


def modulation_signal(cfg: ModulationConfig, prev: Optional[UncertaintyRecord]) -> float:
    """Signal feeding the gamma schedule: the previous step's deviation
    (adaptive_delta) or raw step uncertainty (adaptive_instant, fixed_sign);
    0 before the first step and whenever modulation is off."""
    if prev is None or cfg.strategy == "off":
        return 0.0
    if cfg.strategy == "adaptive_delta":
        return prev.deviation
    return prev.u_step


def _encode_for_target(observation, policy: Policy, gamma: float, target: str,
                       counters: PassCounters) -> tuple[EncodeResult, float]:
    # Unimodal target: gamma scales every encoder layer. Crossmodal target:
    # the encoder runs unmodulated and gamma applies only at the readout.
    enc_gamma = gamma if target == "encoder_unimodal" else 1.0
    enc = attention.encode_with_readout(observation.tokens, policy.encoder, enc_gamma)
    counters.encoder_passes += 1
    return enc, enc_gamma


def _decode(observation, policy: Policy, enc: EncodeResult, gamma: float,
            sampler: SamplerConfig, cfg: StrategyConfig, rng: RngState,
            counters: PassCounters) -> StepDecode:
    provider = policy.logit_provider(observation, enc, gamma, cfg.modulation.target)
    out = decode_step(provider, policy.n_tokens, sampler, policy.layout, rng,
                      metric=cfg.metric, u_mean_scope=cfg.u_mean_scope)
    counters.decode_passes += 1
    return out


def scale_step(observation, policy: Policy, signal_prev: float, state: EmaState,
               cfg: StrategyConfig, rng: RngState, step_index: int = 0,
               counters: Optional[PassCounters] = None) -> StepResult:
    """One single-pass control step.

    ``signal_prev`` is the previous step's modulation signal (0 on the first
    step): the gamma for THIS step is already determined before the
    observation is encoded, so exactly one encoder pass and one decode pass
    occur.
    """
    if cfg.inference_mode != "single_pass":
        raise ValueError("scale_step requires inference_mode='single_pass'")
    counters = counters if counters is not None else PassCounters()
    gamma = gamma_schedule(signal_prev, cfg.modulation).gamma
    enc, _ = _encode_for_target(observation, policy, gamma, cfg.modulation.target, counters)
    step = _decode(observation, policy, enc, gamma, cfg.sampler, cfg, rng, counters)
    deviation = step.u_step - state.value if state.initialized else 0.0
    new_state = ema_update(state, step.u_step)
    record = UncertaintyRecord(
        step_index=step_index, tokens=step.tokens,
        token_us=tuple(r.u for r in step.records),
        token_taus=tuple(r.tau for r in step.records),
        token_pmax=tuple(r.p_max for r in step.records),
        u_step=step.u_step, ema=new_state.value, deviation=deviation,
        gamma_used=gamma)
    return StepResult(tokens=step.tokens, record=record, deviation=deviation, ema=new_state)


def oracle_step(observation, policy: Policy, state: EmaState, cfg: StrategyConfig,
                rng: RngState, step_index: int = 0,
                counters: Optional[PassCounters] = None) -> StepResult:
    """One two-pass oracle control step.

    Probe pass: encode at gamma=1 and decode greedily to measure the CURRENT
    step's u_t and deviation. Execution pass: re-encode at the temperature
    scheduled from that deviation and decode with the configured sampler;
    those tokens are the ones emitted. The EMA consumes the probe-pass u_t.
    """
    if cfg.inference_mode != "two_step_oracle":
        raise ValueError("oracle_step requires inference_mode='two_step_oracle'")
    counters = counters if counters is not None else PassCounters()

    probe_sampler = replace(cfg.sampler, strategy="greedy")
    enc1 = attention.encode_with_readout(observation.tokens, policy.encoder, 1.0)
    counters.encoder_passes += 1
    probe = _decode(observation, policy, enc1, 1.0, probe_sampler, cfg, rng, counters)
    deviation = probe.u_step - state.value if state.initialized else 0.0

    signal = deviation if cfg.modulation.strategy == "adaptive_delta" else probe.u_step
    gamma = gamma_schedule(signal, cfg.modulation).gamma
    enc2, _ = _encode_for_target(observation, policy, gamma, cfg.modulation.target, counters)
    execu = _decode(observation, policy, enc2, gamma, cfg.sampler, cfg, rng, counters)

    new_state = ema_update(state, probe.u_step)
    record = UncertaintyRecord(
        step_index=step_index, tokens=execu.tokens,
        token_us=tuple(r.u for r in execu.records),
        token_taus=tuple(r.tau for r in execu.records),
        token_pmax=tuple(r.p_max for r in execu.records),
        u_step=probe.u_step, ema=new_state.value, deviation=deviation,
        gamma_used=gamma, probe_u=probe.u_step)
    return StepResult(tokens=execu.tokens, record=record, deviation=deviation, ema=new_state)


@dataclass(frozen=True)
class EpisodeResult:
    """Outcome and full telemetry of one closed-loop episode."""

    strategy: str
    seed: int
    success: bool
    steps: int
    reason: str  # "success" | "wrong_drop" | "timeout"
    trace: tuple[UncertaintyRecord, ...]
    step_times: tuple[float, ...]  # seconds, same length as trace
    encoder_passes: int
    decode_passes: int


def run_episode(env, policy: Policy, cfg: StrategyConfig, seed: int,
                max_steps: Optional[int] = None, strategy_name: str = "") -> EpisodeResult:
    """Drive one episode to termination or the step cap.

    ``env`` must offer ``reset() -> observation`` and
    ``step(action) -> (observation, done, success, reason)`` plus a
    ``horizon`` attribute; ``max_steps`` overrides the cap (0 means an
    immediate timeout with no steps taken).
    """
    rng = RngState(seed)
    obs = env.reset()
    state = EmaState(alpha=cfg.ema_alpha)
    cap = int(env.horizon) if max_steps is None else int(max_steps)
    counters = PassCounters()
    trace: list[UncertaintyRecord] = []
    times: list[float] = []
    prev: Optional[UncertaintyRecord] = None
    success = False
    reason = "timeout"
    for t in range(cap):
        tic = time.perf_counter()
        if cfg.inference_mode == "single_pass":
            res = scale_step(obs, policy, modulation_signal(cfg.modulation, prev),
                             state, cfg, rng, step_index=t, counters=counters)
        else:
            res = oracle_step(obs, policy, state, cfg, rng, step_index=t, counters=counters)
        action = policy.to_action(res.tokens)
        obs, done, succ, why = env.step(action)
        times.append(time.perf_counter() - tic)
        trace.append(res.record)
        state = res.ema
        prev = res.record
        if done:
            success = bool(succ)
            reason = why
            break
    return EpisodeResult(strategy=strategy_name, seed=int(seed), success=success,
                         steps=len(trace), reason=reason, trace=tuple(trace),
                         step_times=tuple(times), encoder_passes=counters.encoder_passes,
                         decode_passes=counters.decode_passes)
