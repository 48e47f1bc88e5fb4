"""Sampling strategies, vocabulary layout, and the adaptive temperature gate."""
from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from scale_infer.decoding import (
    STRATEGIES,
    SamplerConfig,
    Segment,
    VocabLayout,
    adaptive_temperature,
    decode_step,
    decode_token,
)
from scale_infer.rng import RngState
from scale_infer.uncertainty import (
    MetricKind,
    ReferenceConfig,
    baseline_metric,
    gate_sigmoid,
    self_uncertainty,
    softmax,
)

FLAT8 = VocabLayout.factorized([8])


def brute_topk_set(logits: np.ndarray, k: int) -> list:
    order = np.argsort(-logits, kind="stable")
    return sorted(int(i) for i in order[:k])


def brute_topp_set(probs: np.ndarray, p: float) -> list:
    order = np.argsort(-probs, kind="stable")
    kept, acc = [], 0.0
    for i in order:
        kept.append(int(i))
        acc += float(probs[i])
        if acc >= p:
            break
    return sorted(kept)


# -- layout ----------------------------------------------------------------


def test_factorized_layout_shapes():
    layout = VocabLayout.factorized([5, 5, 3], names=("dx", "dy", "grip"))
    assert layout.vocab_size == 13
    assert [s.name for s in layout.segments] == ["dx", "dy", "grip"]
    assert [(s.start, s.stop) for s in layout.segments] == [(0, 5), (5, 10), (10, 13)]
    np.testing.assert_array_equal(layout.valid_indices(2), [10, 11, 12])


def test_single_segment_layout_serves_every_position():
    assert FLAT8.segment_index(0) == 0
    assert FLAT8.segment_index(7) == 0
    np.testing.assert_array_equal(FLAT8.valid_indices(3), np.arange(8))


def test_layout_validation():
    with pytest.raises(ValueError):
        VocabLayout(segments=(), vocab_size=4)
    with pytest.raises(ValueError):
        VocabLayout(segments=(Segment("a", 0, 3), Segment("b", 2, 5)), vocab_size=5)
    with pytest.raises(ValueError):
        VocabLayout(segments=(Segment("a", 0, 6),), vocab_size=4)
    with pytest.raises(ValueError):
        Segment("bad", 3, 3)
    mask = np.ones(5, dtype=bool)
    mask[1:] = False  # one unmasked token in the only segment
    with pytest.raises(ValueError):
        VocabLayout(segments=(Segment("a", 0, 5),), vocab_size=5, action_mask=mask)
    with pytest.raises(ValueError):
        VocabLayout.factorized([4, 4]).segment_index(2)


def test_masked_tokens_never_emitted():
    mask = np.array([True, False, True, True, False, True], dtype=bool)
    layout = VocabLayout.factorized([6], action_mask=mask)
    cfg = SamplerConfig(strategy="fixed_temperature", fixed_t=5.0)
    rng = RngState(41)
    logits = np.array([0.0, 50.0, 0.0, 0.0, 50.0, 0.0])  # masked ones dominate
    seen = {decode_token(logits, cfg, layout, rng).token for _ in range(400)}
    assert seen <= {0, 2, 3, 5}
    assert len(seen) > 1  # flat unmasked logits at high temperature do spread


# -- sampler config ---------------------------------------------------------


def test_sampler_config_validation():
    assert set(STRATEGIES) == {"greedy", "fixed_temperature", "top_k", "top_p",
                               "adaptive"}
    with pytest.raises(ValueError):
        SamplerConfig(strategy="beam")
    with pytest.raises(ValueError):
        SamplerConfig(strategy="adaptive", t0=0.0)
    with pytest.raises(ValueError):
        SamplerConfig(strategy="top_k", k=0)
    with pytest.raises(ValueError):
        SamplerConfig(strategy="top_p", p=1.5)
    with pytest.raises(ValueError):
        SamplerConfig(strategy="greedy", sampled_prefix_len=0)
    cfg = SamplerConfig(strategy="greedy", sampled_prefix_len=2)
    assert cfg.prefix_len(5) == 2
    assert cfg.prefix_len(1) == 1
    assert SamplerConfig(strategy="greedy").prefix_len(7) == 7


# -- greedy ------------------------------------------------------------------


def test_greedy_takes_argmax_lowest_index_on_ties():
    cfg = SamplerConfig(strategy="greedy")
    rng = RngState(0)
    rec = decode_token(np.array([1.0, 3.0, 3.0, 0.0, 1.0, 1.0, 1.0, 1.0]),
                       cfg, FLAT8, rng)
    assert rec.token == 1
    assert rec.tau is None
    assert rng.n_draws == 0  # greedy consumes no randomness


def test_token_record_reports_segment_uncertainty():
    logits = np.array([3.0, 2.0, 1.0, 0.0, -40.0, -40.0, -40.0, -40.0])
    rec = decode_token(logits, SamplerConfig(strategy="greedy"), FLAT8, RngState(0))
    p = softmax(logits)
    want_u = self_uncertainty(p, ReferenceConfig(vocab_size=8))
    assert math.isclose(rec.u, want_u, rel_tol=1e-12)
    assert math.isclose(rec.gate, gate_sigmoid(want_u), rel_tol=1e-12)
    assert math.isclose(rec.p_max, float(p.max()), rel_tol=1e-12)


# -- top-k / top-p against brute-force oracles -------------------------------


def test_topk_kept_set_matches_brute_force():
    rng_np = np.random.default_rng(5)
    for _ in range(40):
        v = int(rng_np.integers(2, 9))
        layout = VocabLayout.factorized([v])
        logits = rng_np.normal(0.0, 2.0, v)
        k = int(rng_np.integers(1, v + 1))
        cfg = SamplerConfig(strategy="top_k", k=k, fixed_t=1.2)
        rng = RngState(int(rng_np.integers(2**31)))
        seen = {decode_token(logits, cfg, layout, rng).token for _ in range(600)}
        kept = brute_topk_set(logits, k)
        assert seen <= set(kept)
        big = [i for i in kept
               if softmax(logits[kept], 1.2)[kept.index(i)] > 0.02]
        assert set(big) <= seen


def test_topp_kept_set_matches_brute_force():
    rng_np = np.random.default_rng(9)
    for _ in range(40):
        v = int(rng_np.integers(2, 9))
        layout = VocabLayout.factorized([v])
        logits = rng_np.normal(0.0, 2.0, v)
        p_nucleus = float(rng_np.uniform(0.3, 0.99))
        cfg = SamplerConfig(strategy="top_p", p=p_nucleus, fixed_t=1.0)
        base = softmax(logits)
        kept = brute_topp_set(base, p_nucleus)
        rng = RngState(int(rng_np.integers(2**31)))
        seen = {decode_token(logits, cfg, layout, rng).token for _ in range(600)}
        assert seen <= set(kept)
        renorm = base[kept] / base[kept].sum()
        big = [tok for tok, pr in zip(kept, renorm) if pr > 0.02]
        assert set(big) <= seen


def test_topp_one_keeps_everything():
    logits = np.array([2.0, 0.0, -2.0, -4.0])
    layout = VocabLayout.factorized([4])
    cfg = SamplerConfig(strategy="top_p", p=1.0, fixed_t=3.0)
    rng = RngState(2)
    seen = {decode_token(logits, cfg, layout, rng).token for _ in range(3000)}
    assert seen == {0, 1, 2, 3}


def test_topk_frozen_renormalization_frequencies():
    # k=2 on (1, 0, -1) renormalizes to (0.731058578630005, 0.268941421369995).
    logits = np.array([1.0, 0.0, -1.0])
    layout = VocabLayout.factorized([3])
    cfg = SamplerConfig(strategy="top_k", k=2, fixed_t=1.0)
    rng = RngState(123)
    n = 20_000
    counts = np.zeros(3)
    for _ in range(n):
        counts[decode_token(logits, cfg, layout, rng).token] += 1
    assert counts[2] == 0
    chi = stats.chisquare(counts[:2], n * np.array([0.731058578630005,
                                                    0.268941421369995]))
    assert chi.pvalue > 0.001


def test_topk_exceeding_segment_rejected():
    layout = VocabLayout.factorized([4])
    cfg = SamplerConfig(strategy="top_k", k=9)
    with pytest.raises(ValueError):
        decode_token(np.zeros(4), cfg, layout, RngState(0))


# -- adaptive gate ------------------------------------------------------------


def test_adaptive_temperature_contract():
    assert adaptive_temperature(0.0, 2.0) == 1.0  # T0 * sigma(0)
    for u in (-1e308, -50.0, 0.0, 50.0, 1e308):
        for t0 in (0.3, 1.0):
            tau = adaptive_temperature(u, t0)
            assert 0.0 < tau < t0 or (u == 0.0 and tau == 0.5 * t0)
    with pytest.raises(ValueError):
        adaptive_temperature(1.0, 0.0)


@given(st.floats(-1e6, 1e6), st.floats(-1e6, 1e6))
@settings(max_examples=200, deadline=None)
def test_adaptive_temperature_monotone(a, b):
    lo, hi = sorted((a, b))
    assert adaptive_temperature(lo, 1.0) <= adaptive_temperature(hi, 1.0)


def test_adaptive_records_tau():
    logits = np.array([2.0, 1.5, 1.0, 0.5, 0.0, -0.5, -1.0, -1.5])
    cfg = SamplerConfig(strategy="adaptive", t0=1.0)
    rec = decode_token(logits, cfg, FLAT8, RngState(3))
    assert rec.tau is not None
    assert math.isclose(rec.tau, adaptive_temperature(rec.u, 1.0), rel_tol=1e-15)
    assert 0.0 < rec.tau < 1.0


def test_adaptive_tau_scales_with_t0():
    logits = np.array([1.0, 0.5, 0.0, -0.5, -1.0, -1.5, -2.0, -2.5])
    rec1 = decode_token(logits, SamplerConfig(strategy="adaptive", t0=1.0),
                        FLAT8, RngState(3))
    rec03 = decode_token(logits, SamplerConfig(strategy="adaptive", t0=0.3),
                         FLAT8, RngState(3))
    assert math.isclose(rec03.tau, 0.3 * rec1.tau, rel_tol=1e-12)


def test_adaptive_near_onehot_behaves_like_argmax():
    logits = np.zeros(8)
    logits[5] = 40.0
    cfg = SamplerConfig(strategy="adaptive", t0=1.0)
    rng = RngState(17)
    assert all(decode_token(logits, cfg, FLAT8, rng).token == 5
               for _ in range(2000))


def test_adaptive_surrogate_metric_substitutes_gate():
    logits = np.array([1.0, 0.7, 0.4, 0.1, -0.2, -0.5, -0.8, -1.1])
    p = softmax(logits)
    for kind in (MetricKind.NORMALIZED_ENTROPY, MetricKind.GINI,
                 MetricKind.INVERSE_PMAX, MetricKind.SELF_CERTAINTY_DECAY):
        rec = decode_token(logits, SamplerConfig(strategy="adaptive", t0=1.0),
                           FLAT8, RngState(1), metric=kind)
        want = baseline_metric(kind, p, ReferenceConfig(vocab_size=8))
        assert math.isclose(rec.u, want, rel_tol=1e-12)
        assert math.isclose(rec.gate, want, rel_tol=1e-12)
        assert math.isclose(rec.tau, want, rel_tol=1e-12)  # t0=1: tau == gate


# -- step decoding ------------------------------------------------------------


def _three_segment_provider(per_position_logits):
    def provider(k, prefix):
        return per_position_logits[k](prefix)
    return provider


def test_decode_step_autoregressive_prefix_conditioning():
    layout = VocabLayout.factorized([3, 3, 2])
    seen_prefixes = []

    def provider(k, prefix):
        seen_prefixes.append((k, prefix))
        full = np.zeros(8)
        if k == 2 and prefix[0] == 1:  # condition position 2 on position 0
            full[7] = 5.0
        else:
            full[6] = 5.0
        full[layout.segments[0].start + 1] = 5.0
        full[layout.segments[1].start + 2] = 5.0
        return full

    cfg = SamplerConfig(strategy="greedy")
    out = decode_step(provider, 3, cfg, layout, RngState(0))
    assert out.tokens == (1, 5, 7)
    assert seen_prefixes == [(0, ()), (1, (1,)), (2, (1, 5))]
    assert out.prefix_len == 3
    assert math.isclose(out.u_step,
                        sum(r.u for r in out.records) / 3, rel_tol=1e-15)


def test_decode_step_prefix_sampling_boundary():
    layout = VocabLayout.factorized([4, 4, 4])
    flat = np.zeros(12)

    def provider(k, prefix):
        out = flat.copy()
        out[layout.segments[k].start] = 0.5  # mild argmax at first bin
        return out

    cfg = SamplerConfig(strategy="adaptive", t0=1.0, sampled_prefix_len=1)
    out = decode_step(provider, 3, cfg, layout, RngState(5))
    assert out.prefix_len == 1
    assert out.records[0].tau is not None        # sampled
    assert out.records[1].tau is None            # greedy beyond the prefix
    assert out.records[2].tau is None
    assert out.records[1].token == layout.segments[1].start
    assert out.records[2].token == layout.segments[2].start
    # u_step averages the sampled prefix only by default
    assert math.isclose(out.u_step, out.records[0].u, rel_tol=1e-15)
    out_all = decode_step(provider, 3, cfg, layout, RngState(5),
                          u_mean_scope="all")
    assert math.isclose(out_all.u_step,
                        sum(r.u for r in out_all.records) / 3, rel_tol=1e-15)


def test_decode_step_validation():
    layout = VocabLayout.factorized([4])
    cfg = SamplerConfig(strategy="greedy")
    with pytest.raises(ValueError):
        decode_step(lambda k, p: np.zeros(4), 0, cfg, layout, RngState(0))
    with pytest.raises(ValueError):
        decode_step(lambda k, p: np.zeros(4), 1, cfg, layout, RngState(0),
                    u_mean_scope="some")
    with pytest.raises(ValueError):
        decode_token(np.zeros(3), cfg, layout, RngState(0))  # wrong length
    bad = np.zeros(4)
    bad[1] = np.inf
    with pytest.raises(ValueError):
        decode_token(bad, cfg, layout, RngState(0))


def test_decoding_deterministic_given_seed():
    layout = VocabLayout.factorized([6])
    logits = np.array([1.0, 0.8, 0.6, 0.4, 0.2, 0.0])
    cfg = SamplerConfig(strategy="adaptive", t0=1.0)
    rng1, rng2 = RngState(1234), RngState(1234)
    seq1 = [decode_token(logits, cfg, layout, rng1).token for _ in range(50)]
    seq2 = [decode_token(logits, cfg, layout, rng2).token for _ in range(50)]
    assert seq1 == seq2
    assert len(set(seq1)) > 1  # high-entropy logits actually explore
