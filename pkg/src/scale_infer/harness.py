"""Experiment runner: seeded strategy matrices, CSV summaries, latency
benchmarks and the p_max-bin success analysis.

Outputs are deterministic: summary.csv and raw.jsonl depend only on the
experiment spec and master seed (wall-clock fields are confined to
timing.csv and the ``mean_step_ms`` key of raw records). Episode seeds
derive from (master seed, seed-rep, episode index) and never from the
strategy, so every strategy sees the identical environment sequence and
adding a strategy cannot perturb another's results.
"""
from __future__ import annotations

import dataclasses
import io
import json
import math
import statistics
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np
from scipy import stats as sps

from . import controller, kernels
from .attention import EncoderParams, ModulationConfig, gamma_schedule
from .controller import (EmaState, PassCounters, StrategyConfig, UncertaintyRecord,
                         ema_update, modulation_signal, run_episode)
from .decoding import SamplerConfig
from .rng import RngState, derive_seed
from .simworld import EnvConfig, ExpertPolicy, SimEnv
from .uncertainty import MetricKind

__all__ = [
    "ConfigError",
    "ExperimentSpec",
    "SummaryTable",
    "analyze_pmax_bins",
    "bench_latency",
    "build_strategy",
    "linear_fit_r2",
    "load_spec",
    "run_experiment",
    "selftest",
    "strategy_presets",
    "two_proportion_z",
]

# Child-stream tags, disjoint from (rep, episode) pairs by path length.
_ENCODER_TAG = 1001
_EPISODE_CHUNK = 125


class ConfigError(Exception):
    """Invalid experiment spec; the CLI maps this to exit code 2."""


# -- strategy presets ----------------------------------------------------


def strategy_presets() -> dict:
    """Named strategy configurations for experiment specs.

    `scale` is the full method: uncertainty-gated sampling temperature plus
    deviation-driven attention modulation, single-pass. The `metric_*`
    entries swap the gate signal for a surrogate confidence metric.
    """
    greedy = SamplerConfig(strategy="greedy")
    adaptive = SamplerConfig(strategy="adaptive", t0=1.0)
    delta_uni = ModulationConfig(strategy="adaptive_delta", target="encoder_unimodal")
    scale = StrategyConfig(sampler=adaptive, modulation=delta_uni)
    presets = {
        "greedy": StrategyConfig(sampler=greedy),
        "fixed_t": StrategyConfig(sampler=SamplerConfig(strategy="fixed_temperature",
                                                        fixed_t=1.0)),
        # k is capped by the largest action segment at desk scale.
        "top_k": StrategyConfig(sampler=SamplerConfig(strategy="top_k", k=3, fixed_t=0.7)),
        "top_p": StrategyConfig(sampler=SamplerConfig(strategy="top_p", p=0.9, fixed_t=1.0)),
        "adaptive_decode": StrategyConfig(sampler=adaptive),
        "adaptive_attention": StrategyConfig(sampler=greedy, modulation=delta_uni),
        "scale": scale,
        "scale_t03": replace(scale, sampler=replace(adaptive, t0=0.3)),
        "scale_alpha066": replace(scale, ema_alpha=0.66),
        "scale_instant": replace(scale, modulation=replace(delta_uni, strategy="adaptive_instant")),
        "scale_fixed_sign": replace(scale, modulation=replace(delta_uni, strategy="fixed_sign")),
        "scale_crossmodal": replace(scale, modulation=replace(delta_uni, target="policy_crossmodal")),
        "scale_oracle": replace(scale, inference_mode="two_step_oracle"),
    }
    for kind in (MetricKind.NORMALIZED_ENTROPY, MetricKind.INVERSE_PMAX,
                 MetricKind.GINI, MetricKind.SELF_CERTAINTY_DECAY):
        presets[f"metric_{kind.value}"] = StrategyConfig(sampler=adaptive, metric=kind)
    return presets


def build_strategy(entry: Union[str, dict], where: str = "strategies") -> tuple:
    """Resolve a spec entry (preset name or {name, preset, overrides}) to
    a (name, StrategyConfig) pair."""
    presets = strategy_presets()
    if isinstance(entry, str):
        if entry not in presets:
            raise ConfigError(f"{where}: unknown preset {entry!r}; "
                              f"known: {', '.join(sorted(presets))}")
        return entry, presets[entry]
    if not isinstance(entry, dict):
        raise ConfigError(f"{where}: expected preset name or object, got {type(entry).__name__}")

    allowed = {"name", "preset", "sampler", "modulation", "ema_alpha",
               "inference_mode", "u_mean_scope", "metric"}
    unknown = set(entry) - allowed
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}; allowed: {sorted(allowed)}")
    base_name = entry.get("preset", entry.get("name"))
    if base_name not in presets:
        raise ConfigError(f"{where}: unknown preset {base_name!r}")
    name = entry.get("name", base_name)
    if not isinstance(name, str) or not name:
        raise ConfigError(f"{where}: strategy name must be a non-empty string")
    cfg = presets[base_name]
    try:
        if "sampler" in entry:
            cfg = replace(cfg, sampler=replace(cfg.sampler, **entry["sampler"]))
        if "modulation" in entry:
            cfg = replace(cfg, modulation=replace(cfg.modulation, **entry["modulation"]))
        scalar = {k: entry[k] for k in ("ema_alpha", "inference_mode", "u_mean_scope")
                  if k in entry}
        if "metric" in entry:
            scalar["metric"] = MetricKind(entry["metric"])
        if scalar:
            cfg = replace(cfg, **scalar)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where} ({name!r}): {exc}") from exc
    return name, cfg


# -- experiment spec -----------------------------------------------------


@dataclass(frozen=True)
class ExperimentSpec:
    """A strategy matrix over the simworld: every strategy runs
    n_episodes x n_seeds episodes on identical environment seeds."""

    env: EnvConfig
    strategies: tuple  # ((name, StrategyConfig), ...)
    n_episodes: int = 100
    n_seeds: int = 3
    master_seed: int = 0
    out_dir: Optional[str] = None

    def __post_init__(self):
        if self.n_episodes < 1:
            raise ValueError("n_episodes must be >= 1")
        if self.n_seeds < 1:
            raise ValueError("n_seeds must be >= 1")
        if not self.strategies:
            raise ValueError("at least one strategy required")
        names = [n for n, _ in self.strategies]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate strategy names: {names}")


def load_spec(source: Union[str, Path, dict], master_seed: Optional[int] = None,
              out_dir: Optional[str] = None) -> ExperimentSpec:
    """Parse an experiment spec from a JSON file or an equivalent dict.

    JSON syntax errors carry file:line:column; schema errors name the
    offending key. ``master_seed`` / ``out_dir`` override the file values.
    """
    label = "<spec>"
    if isinstance(source, dict):
        raw = source
    else:
        label = str(source)
        try:
            text = Path(source).read_text()
        except OSError as exc:
            raise ConfigError(f"{label}: {exc}") from exc
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{label}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"{label}: top level must be a JSON object")

    allowed = {"env", "strategies", "n_episodes", "n_seeds", "master_seed", "out_dir"}
    unknown = set(raw) - allowed
    if unknown:
        raise ConfigError(f"{label}: unknown keys {sorted(unknown)}; allowed: {sorted(allowed)}")

    env_dict = raw.get("env", {})
    if not isinstance(env_dict, dict):
        raise ConfigError(f"{label}: 'env' must be an object")
    valid_env = {f.name for f in dataclasses.fields(EnvConfig)}
    bad = set(env_dict) - valid_env
    if bad:
        raise ConfigError(f"{label}: env: unknown keys {sorted(bad)}; allowed: {sorted(valid_env)}")
    try:
        env = EnvConfig(**env_dict)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{label}: env: {exc}") from exc

    entries = raw.get("strategies")
    if not isinstance(entries, list) or not entries:
        raise ConfigError(f"{label}: 'strategies' must be a non-empty list")
    strategies = tuple(build_strategy(e, where=f"{label}: strategies[{i}]")
                       for i, e in enumerate(entries))

    def _int_field(key, default):
        v = raw.get(key, default)
        if not isinstance(v, int) or isinstance(v, bool):
            raise ConfigError(f"{label}: '{key}' must be an integer")
        return v

    try:
        return ExperimentSpec(
            env=env, strategies=strategies,
            n_episodes=_int_field("n_episodes", 100),
            n_seeds=_int_field("n_seeds", 3),
            master_seed=master_seed if master_seed is not None
            else _int_field("master_seed", 0),
            out_dir=out_dir if out_dir is not None else raw.get("out_dir"),
        )
    except ValueError as exc:
        raise ConfigError(f"{label}: {exc}") from exc


# -- episode execution ---------------------------------------------------


def episode_seeds(master_seed: int, rep: int, episode: int) -> tuple:
    """(env_seed, decode_seed) for one episode cell; strategy-independent."""
    base = derive_seed(master_seed, rep, episode)
    return derive_seed(base, 0), derive_seed(base, 1)


def _record_from_result(res, name: str, rep: int, episode: int,
                        env_seed: int, decode_seed: int) -> dict:
    pmaxes = [p for rec in res.trace for p in rec.token_pmax]
    us = [rec.u_step for rec in res.trace]
    return {
        "strategy": name,
        "rep": rep,
        "episode": episode,
        "env_seed": int(env_seed),
        "decode_seed": int(decode_seed),
        "success": bool(res.success),
        "steps": int(res.steps),
        "reason": res.reason,
        "mean_pmax": round(float(np.mean(pmaxes)), 6) if pmaxes else None,
        "mean_u": round(float(np.mean(us)), 6) if us else None,
        "u_steps": [round(float(u), 6) for u in us],
        "pmax_steps": [round(float(np.mean(rec.token_pmax)), 6) for rec in res.trace],
        "gamma_steps": [round(float(rec.gamma_used), 6) for rec in res.trace],
        "encoder_passes": int(res.encoder_passes),
        "decode_passes": int(res.decode_passes),
        "mean_step_ms": round(1e3 * float(np.mean(res.step_times)), 4)
        if res.step_times else 0.0,
    }


def _run_block(args) -> list:
    """One (strategy, rep, episode-slice) cell; module-level for pickling."""
    name, strat, env_cfg, encoder, master_seed, rep, ep_lo, ep_hi = args
    policy = ExpertPolicy(env_cfg, encoder)
    out = []
    for ep in range(ep_lo, ep_hi):
        env_seed, decode_seed = episode_seeds(master_seed, rep, ep)
        env = SimEnv(replace(env_cfg, seed=env_seed))
        res = run_episode(env, policy, strat, decode_seed, strategy_name=name)
        out.append(_record_from_result(res, name, rep, ep, env_seed, decode_seed))
    return out


def _worker_init():
    kernels.warmup()


# -- summary -------------------------------------------------------------

_SUMMARY_COLUMNS = ("strategy", "n_seeds", "n_episodes", "successes",
                    "success_rate_pct", "stderr_pct", "mean_steps",
                    "encoder_passes_per_step", "decode_passes_per_step")
_TIMING_COLUMNS = ("strategy", "median_step_ms", "mean_step_ms")


@dataclass(frozen=True)
class SummaryTable:
    """Per-strategy success rates (mean +- stderr over seed reps), step and
    pass-count statistics. ``to_csv`` output is deterministic; wall-clock
    timing lives in the separate ``timing_csv``."""

    rows: tuple  # one dict per strategy, _SUMMARY_COLUMNS + timing keys

    def __post_init__(self):
        for row in self.rows:
            if not (0.0 <= row["success_rate_pct"] <= 100.0):
                raise ValueError(f"success rate out of [0,100]: {row}")

    def row(self, strategy: str) -> dict:
        for r in self.rows:
            if r["strategy"] == strategy:
                return r
        raise KeyError(strategy)

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(",".join(_SUMMARY_COLUMNS) + "\n")
        for r in self.rows:
            buf.write(",".join([
                r["strategy"], str(r["n_seeds"]), str(r["n_episodes"]),
                str(r["successes"]),
                f"{r['success_rate_pct']:.4f}", f"{r['stderr_pct']:.4f}",
                f"{r['mean_steps']:.4f}",
                f"{r['encoder_passes_per_step']:.4f}",
                f"{r['decode_passes_per_step']:.4f}",
            ]) + "\n")
        return buf.getvalue()

    def timing_csv(self) -> str:
        buf = io.StringIO()
        buf.write(",".join(_TIMING_COLUMNS) + "\n")
        for r in self.rows:
            buf.write(f"{r['strategy']},{r['median_step_ms']:.4f},{r['mean_step_ms']:.4f}\n")
        return buf.getvalue()


def summarize(records: Sequence[dict], strategy_order: Sequence[str],
              n_seeds: int) -> SummaryTable:
    """Aggregate raw episode records; rates are recomputable from the
    records exactly (mean over seed-rep rates, stderr over reps)."""
    rows = []
    for name in strategy_order:
        recs = [r for r in records if r["strategy"] == name]
        if not recs:
            raise ValueError(f"no records for strategy {name!r}")
        rep_rates = []
        for rep in range(n_seeds):
            rr = [r for r in recs if r["rep"] == rep]
            if rr:
                rep_rates.append(100.0 * sum(r["success"] for r in rr) / len(rr))
        stderr = (statistics.stdev(rep_rates) / math.sqrt(len(rep_rates))
                  if len(rep_rates) > 1 else 0.0)
        total_steps = sum(r["steps"] for r in recs)
        rows.append({
            "strategy": name,
            "n_seeds": len(rep_rates),
            "n_episodes": len(recs),
            "successes": sum(r["success"] for r in recs),
            "success_rate_pct": float(np.mean(rep_rates)),
            "stderr_pct": float(stderr),
            "mean_steps": total_steps / len(recs),
            "encoder_passes_per_step": sum(r["encoder_passes"] for r in recs) / total_steps,
            "decode_passes_per_step": sum(r["decode_passes"] for r in recs) / total_steps,
            "median_step_ms": float(statistics.median(r["mean_step_ms"] for r in recs)),
            "mean_step_ms": float(np.mean([r["mean_step_ms"] for r in recs])),
        })
    return SummaryTable(rows=tuple(rows))


def run_experiment(spec: ExperimentSpec, jobs: int = 1):
    """Run the full (strategy x seed-rep x episode) matrix.

    Returns (SummaryTable, raw records). When ``spec.out_dir`` is set,
    writes summary.csv, timing.csv and raw.jsonl there; I/O failures are
    reported per file and do not discard completed results.
    """
    if jobs < 1:
        raise ValueError("jobs must be >= 1")
    encoder = EncoderParams.create(derive_seed(spec.master_seed, _ENCODER_TAG))
    blocks = []
    for name, strat in spec.strategies:
        for rep in range(spec.n_seeds):
            for lo in range(0, spec.n_episodes, _EPISODE_CHUNK):
                hi = min(lo + _EPISODE_CHUNK, spec.n_episodes)
                blocks.append((name, strat, spec.env, encoder,
                               spec.master_seed, rep, lo, hi))

    records: list = []
    if jobs == 1:
        for b in blocks:
            records.extend(_run_block(b))
    else:
        with ProcessPoolExecutor(max_workers=jobs, initializer=_worker_init) as pool:
            # map() preserves submission order -> deterministic output order
            for chunk in pool.map(_run_block, blocks):
                records.extend(chunk)

    table = summarize(records, [n for n, _ in spec.strategies], spec.n_seeds)
    if spec.out_dir is not None:
        write_outputs(spec.out_dir, table, records)
    return table, records


def write_outputs(out_dir: Union[str, Path], table: SummaryTable,
                  records: Sequence[dict]) -> list:
    """Write summary.csv / timing.csv / raw.jsonl; returns per-file errors."""
    out = Path(out_dir)
    errors = []
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        return [f"{out}: {exc}"]
    targets = {
        "summary.csv": table.to_csv(),
        "timing.csv": table.timing_csv(),
        "raw.jsonl": "".join(json.dumps(r, sort_keys=True, separators=(",", ":")) + "\n"
                             for r in records),
    }
    for fname, payload in targets.items():
        try:
            (out / fname).write_text(payload)
        except OSError as exc:
            errors.append(f"{out / fname}: {exc}")
    return errors


# -- statistics ----------------------------------------------------------


def two_proportion_z(successes_a: int, n_a: int, successes_b: int, n_b: int) -> tuple:
    """Pooled two-proportion z-test; returns (z, one-sided p) for the
    alternative rate_a > rate_b."""
    if n_a < 1 or n_b < 1:
        raise ValueError("sample sizes must be positive")
    pa, pb = successes_a / n_a, successes_b / n_b
    pooled = (successes_a + successes_b) / (n_a + n_b)
    var = pooled * (1.0 - pooled) * (1.0 / n_a + 1.0 / n_b)
    if var == 0.0:
        return 0.0, 0.5
    z = (pa - pb) / math.sqrt(var)
    return float(z), float(sps.norm.sf(z))


def linear_fit_r2(x: Sequence[float], y: Sequence[float]) -> tuple:
    """Least-squares line fit; returns (slope, intercept, r_squared)."""
    xa, ya = np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64)
    if xa.size < 2 or xa.size != ya.size:
        raise ValueError("need >= 2 paired points")
    slope, intercept = np.polyfit(xa, ya, 1)
    resid = ya - (slope * xa + intercept)
    ss_tot = float(np.sum((ya - ya.mean()) ** 2))
    ss_res = float(np.sum(resid ** 2))
    r2 = 1.0 if ss_tot == 0.0 and ss_res == 0.0 else 1.0 - ss_res / ss_tot
    return float(slope), float(intercept), float(r2)


# -- p_max bin analysis --------------------------------------------------


def analyze_pmax_bins(records: Sequence[dict], n_bins: int) -> list:
    """Success rate by episode-mean p_max, over n_bins equal-width bins
    spanning the observed range. Rows: {bin_lo, bin_hi, n_episodes,
    successes, success_rate_pct (None for empty bins)}."""
    if n_bins < 1:
        raise ValueError("n_bins must be >= 1")
    pts = [(float(r["mean_pmax"]), bool(r["success"])) for r in records
           if r.get("mean_pmax") is not None]
    if not pts:
        raise ValueError("no records with p_max telemetry")
    lo = min(p for p, _ in pts)
    hi = max(p for p, _ in pts)
    width = (hi - lo) / n_bins
    counts = [0] * n_bins
    wins = [0] * n_bins
    for p, s in pts:
        idx = 0 if width == 0.0 else min(int((p - lo) / width), n_bins - 1)
        counts[idx] += 1
        wins[idx] += s
    rows = []
    for i in range(n_bins):
        rows.append({
            "bin_lo": lo + i * width,
            "bin_hi": hi if i == n_bins - 1 else lo + (i + 1) * width,
            "n_episodes": counts[i],
            "successes": wins[i],
            "success_rate_pct": 100.0 * wins[i] / counts[i] if counts[i] else None,
        })
    return rows


def pmax_bins_csv(rows: Sequence[dict]) -> str:
    buf = io.StringIO()
    buf.write("bin_lo,bin_hi,n_episodes,successes,success_rate_pct\n")
    for r in rows:
        rate = "" if r["success_rate_pct"] is None else f"{r['success_rate_pct']:.4f}"
        buf.write(f"{r['bin_lo']:.6f},{r['bin_hi']:.6f},{r['n_episodes']},"
                  f"{r['successes']},{rate}\n")
    return buf.getvalue()


# -- latency bench -------------------------------------------------------


def _run_episode_nsample(env, policy, cfg: StrategyConfig, seed: int, n_samples: int):
    """Closed-loop episode drawing n_samples independent decodes per step
    (the first sample is executed; no verifier). Returns per-step seconds."""
    rng = RngState(seed)
    obs = env.reset()
    state = EmaState(alpha=cfg.ema_alpha)
    counters = PassCounters()
    prev: Optional[UncertaintyRecord] = None
    times = []
    for t in range(env.horizon):
        tic = time.perf_counter()
        gamma = gamma_schedule(modulation_signal(cfg.modulation, prev),
                               cfg.modulation).gamma
        enc, _ = controller._encode_for_target(obs, policy, gamma,
                                               cfg.modulation.target, counters)
        outs = [controller._decode(obs, policy, enc, gamma, cfg.sampler, cfg,
                                   rng, counters) for _ in range(n_samples)]
        step = outs[0]
        deviation = step.u_step - state.value if state.initialized else 0.0
        state = ema_update(state, step.u_step)
        prev = UncertaintyRecord(
            step_index=t, tokens=step.tokens,
            token_us=tuple(r.u for r in step.records),
            token_taus=tuple(r.tau for r in step.records),
            token_pmax=tuple(r.p_max for r in step.records),
            u_step=step.u_step, ema=state.value, deviation=deviation,
            gamma_used=gamma)
        action = policy.to_action(step.tokens)
        obs, done, _, _ = env.step(action)
        times.append(time.perf_counter() - tic)
        if done:
            break
    return times


def bench_latency(spec: ExperimentSpec, n_samples_list: Sequence[int],
                  episodes_per_n: int = 8, warmup_episodes: int = 2,
                  overhead_episodes: int = 100) -> dict:
    """Wall-clock scaling of N-independent-sample decoding plus the
    single-pass adaptive-vs-greedy overhead ratio.

    Returns {"rows": [{n, median_step_ms, mean_step_ms, steps}...],
    "fit": {slope_ms, intercept_ms, r_squared},
    "overhead": {greedy_ms, adaptive_ms, ratio}} — medians of per-episode
    median step times, monotonic clock, warmup episodes excluded.
    """
    if not n_samples_list:
        raise ValueError("n_samples_list must be non-empty")
    presets = strategy_presets()
    scale_cfg, greedy_cfg = presets["scale"], presets["greedy"]
    encoder = EncoderParams.create(derive_seed(spec.master_seed, _ENCODER_TAG))
    policy = ExpertPolicy(spec.env, encoder)
    kernels.warmup()

    def episode_times(cfg, ep, n):
        env_seed, decode_seed = episode_seeds(spec.master_seed, 0, ep)
        env = SimEnv(replace(spec.env, seed=env_seed))
        return _run_episode_nsample(env, policy, cfg, decode_seed, n)

    rows = []
    for n in n_samples_list:
        if n < 1:
            raise ValueError(f"n_samples must be >= 1, got {n}")
        per_episode_medians = []
        all_times = []
        for ep in range(warmup_episodes + episodes_per_n):
            times = episode_times(scale_cfg, ep, int(n))
            if ep >= warmup_episodes:
                per_episode_medians.append(statistics.median(times))
                all_times.extend(times)
        rows.append({
            "n": int(n),
            "median_step_ms": 1e3 * statistics.median(per_episode_medians),
            "mean_step_ms": 1e3 * float(np.mean(all_times)),
            "steps": len(all_times),
        })

    slope, intercept, r2 = linear_fit_r2([r["n"] for r in rows],
                                         [r["median_step_ms"] for r in rows])
    fit = {"slope_ms": slope, "intercept_ms": intercept, "r_squared": r2}

    overhead = None
    if overhead_episodes > 0:
        med = {}
        for label, cfg in (("greedy", greedy_cfg), ("adaptive", scale_cfg)):
            eps = []
            for ep in range(warmup_episodes + overhead_episodes):
                times = episode_times(cfg, ep, 1)
                if ep >= warmup_episodes:
                    eps.append(statistics.median(times))
            med[label] = 1e3 * statistics.median(eps)
        overhead = {"greedy_ms": med["greedy"], "adaptive_ms": med["adaptive"],
                    "ratio": med["adaptive"] / med["greedy"]}

    return {"rows": rows, "fit": fit, "overhead": overhead}


def bench_csv(result: dict) -> str:
    buf = io.StringIO()
    buf.write("n,median_step_ms,mean_step_ms,steps\n")
    for r in result["rows"]:
        buf.write(f"{r['n']},{r['median_step_ms']:.4f},{r['mean_step_ms']:.4f},{r['steps']}\n")
    return buf.getvalue()


# -- selftest ------------------------------------------------------------


def selftest(verbose: bool = True) -> bool:
    """Fast invariant battery over every module; True when all checks pass."""
    from . import attention as attn
    from . import decoding, uncertainty
    from .simworld import make_layout

    checks = []

    def check(name, fn):
        try:
            fn()
            checks.append((name, True, ""))
        except Exception as exc:  # noqa: BLE001 - report, don't crash
            checks.append((name, False, f"{type(exc).__name__}: {exc}"))

    def _identity():
        rng = RngState(11)
        for v in (2, 3, 17, 257):
            for eps in (1e-10, 1e-12, 1e-14):
                logits = 4.0 * rng.normals(v)
                p = uncertainty.softmax(logits)
                ref = uncertainty.ReferenceConfig(vocab_size=v, epsilon=eps)
                a = uncertainty.self_uncertainty(p, ref)
                b = uncertainty.self_uncertainty_dual_kl(p, ref)
                assert abs(a - b) <= 1e-9 * max(1.0, abs(b)), (v, eps, a, b)

    def _gate():
        assert uncertainty.gate_sigmoid(0.0) == 0.5
        us = np.linspace(-80, 80, 2001)
        taus = np.array([decoding.adaptive_temperature(u, 1.0) for u in us])
        assert np.all(taus > 0.0) and np.all(taus < 1.0)
        assert np.all(np.diff(taus) >= 0.0)

    def _schedule():
        cfg = ModulationConfig(strategy="adaptive_delta")
        assert gamma_schedule(0.0, cfg).gamma == 1.0
        rng = RngState(12)
        for d in 10.0 * rng.normals(2000):
            g = gamma_schedule(float(d), cfg).gamma
            assert 0.5 < g < 2.0
        st = EmaState(alpha=0.8)
        acc = None
        for i in range(200):
            u = float(i % 7) - 3.0
            st = ema_update(st, u)
            acc = u if acc is None else 0.8 * acc + 0.2 * u
            assert abs(st.value - acc) <= 1e-12

    def _attention():
        rng = RngState(13)
        for _ in range(100):
            q = rng.normals(8).reshape(1, 8)
            k = rng.normals(48).reshape(6, 8)
            ents = []
            for g in (0.5, 1.0, 2.0):
                w = attn.attention_weights(q, k, g)[0]
                nz = w[w > 0.0]
                ents.append(float(-(nz * np.log(nz)).sum()))
            assert ents[0] < ents[1] < ents[2], ents

    def _reachability():
        cfg = EnvConfig(n_distractors=0, obstacle_density=0.0, ambiguity_noise=0.0)
        encoder = EncoderParams.create(7)
        policy = ExpertPolicy(cfg, encoder)
        strat = strategy_presets()["greedy"]
        for seed in range(20):
            env = SimEnv(replace(cfg, seed=seed))
            res = run_episode(env, policy, strat, derive_seed(99, seed))
            assert res.success, f"clean seed {seed} failed: {res.reason}"

    def _determinism():
        spec = ExperimentSpec(env=EnvConfig(horizon=30),
                              strategies=(("scale", strategy_presets()["scale"]),),
                              n_episodes=5, n_seeds=1, master_seed=3)
        t1, _ = run_experiment(spec)
        t2, _ = run_experiment(spec)
        assert t1.to_csv() == t2.to_csv()

    def _layout():
        layout = make_layout(5)
        assert layout.vocab_size == 13 and len(layout.segments) == 3

    check("identity_dual_kl_vs_expectation", _identity)
    check("gate_contract", _gate)
    check("gamma_schedule_and_ema", _schedule)
    check("attention_entropy_monotone", _attention)
    check("clean_world_reachability", _reachability)
    check("experiment_determinism", _determinism)
    check("action_layout", _layout)

    ok = all(passed for _, passed, _ in checks)
    if verbose:
        for name, passed, msg in checks:
            line = f"{'ok' if passed else 'FAIL'}  {name}"
            print(line if passed else f"{line}  ({msg})")
    return ok
