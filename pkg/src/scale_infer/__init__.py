"""Self-uncertainty-adaptive decoding and attention modulation for
autoregressive token policies, with a synthetic closed-loop verification
world and an experiment harness.

Core pipeline: per-token self-uncertainty (expected log-likelihood ratio
between a uniform and a one-hot reference under the predicted
distribution) gates the sampling temperature; its step-level EMA deviation
drives the attention temperature of the next step's encoder pass.
"""
from . import (attention, cli, controller, decoding, harness, kernels, rng,
               simworld, uncertainty)
from .attention import EncoderParams, ModulationConfig, gamma_schedule, scaled_attention
from .controller import EmaState, StrategyConfig, ema_update, run_episode, scale_step
from .decoding import SamplerConfig, VocabLayout, adaptive_temperature, decode_step, decode_token
from .harness import ExperimentSpec, SummaryTable, bench_latency, load_spec, run_experiment
from .rng import RngState, derive_seed
from .simworld import ActionCommand, EnvConfig, ExpertPolicy, SimEnv, perceive
from .uncertainty import (MetricKind, ReferenceConfig, baseline_metric, kl_divergence,
                          self_uncertainty, softmax, step_uncertainty)

__version__ = "0.1.0"

__all__ = [
    "ActionCommand", "EmaState", "EncoderParams", "EnvConfig", "ExperimentSpec",
    "ExpertPolicy", "MetricKind", "ModulationConfig", "ReferenceConfig", "RngState",
    "SamplerConfig", "SimEnv", "StrategyConfig", "SummaryTable", "VocabLayout",
    "__version__", "adaptive_temperature", "attention", "baseline_metric",
    "bench_latency", "cli", "controller", "decode_step", "decode_token", "decoding",
    "derive_seed", "ema_update", "gamma_schedule", "harness", "kernels",
    "kl_divergence", "load_spec", "perceive", "rng", "run_episode", "run_experiment",
    "scale_step", "scaled_attention", "self_uncertainty", "simworld", "softmax",
    "step_uncertainty", "uncertainty",
]
