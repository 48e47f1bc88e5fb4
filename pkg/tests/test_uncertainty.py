"""Distribution math: softmax, dual-reference uncertainty, gate, metrics.

Frozen numeric constants come from an independent 50-digit computation of
the same formulas; they are asserted at 1e-12 unless noted.
"""
from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from scale_infer.uncertainty import (
    DEFAULT_EPSILON,
    MetricKind,
    ReferenceConfig,
    as_dist,
    as_logits,
    baseline_metric,
    entropy,
    gate_sigmoid,
    kl_divergence,
    make_high_reference,
    make_low_reference,
    normalized_entropy,
    self_uncertainty,
    self_uncertainty_dual_kl,
    softmax,
    step_uncertainty,
)

ONEHOT4 = [1.0, 0.0, 0.0, 0.0]
UNIFORM4 = [0.25, 0.25, 0.25, 0.25]
SKEW4 = [0.7, 0.1, 0.1, 0.1]

# (dist, epsilon) -> u, frozen from the independent high-precision oracle.
U_ORACLE = {
    ("onehot4", 1e-10): -1.38629436101989,
    ("onehot4", 1e-12): -1.38629436111889,
    ("onehot4", 1e-14): -1.38629436111988,
    ("uniform4", 1e-10): 16.7070530528615,
    ("uniform4", 1e-12): 20.1609306923279,
    ("uniform4", 1e-14): 23.6148083318187,
    ("skew4", 1e-10): 5.85104460453268,
    ("skew4", 1e-12): 7.23259566025981,
    ("skew4", 1e-14): 8.61414671605554,
}
DISTS = {"onehot4": ONEHOT4, "uniform4": UNIFORM4, "skew4": SKEW4}


def random_dist(rng: np.random.Generator, v: int, sharp: bool) -> np.ndarray:
    logits = rng.normal(0.0, 6.0 if sharp else 1.0, v)
    e = np.exp(logits - logits.max())
    return e / e.sum()


# -- softmax --------------------------------------------------------------


def test_softmax_frozen_oracle():
    got = softmax([3.0, 2.0, 1.0, 0.0])
    want = [0.643914259887972, 0.236882818089910,
            0.0871443187420326, 0.0320586032800850]
    np.testing.assert_allclose(got, want, rtol=0, atol=1e-15)
    got_t = softmax([3.0, 2.0, 1.0, 0.0], temperature=0.5)
    want_t = [0.864954876799376, 0.117058913238533,
              0.0158422011785069, 0.00214400878358463]
    np.testing.assert_allclose(got_t, want_t, rtol=0, atol=1e-15)


@given(st.lists(st.floats(-50, 50), min_size=2, max_size=64),
       st.floats(0.01, 100.0))
@settings(max_examples=200, deadline=None)
def test_softmax_is_distribution(logits, temperature):
    p = softmax(logits, temperature)
    assert np.all(p >= 0.0)
    assert math.isclose(float(p.sum()), 1.0, abs_tol=1e-12)


def test_softmax_low_temperature_approaches_argmax():
    p = softmax([2.0, 1.0, 0.0], temperature=1e-3)
    assert p[0] > 1.0 - 1e-12


def test_softmax_rejects_bad_inputs():
    with pytest.raises(ValueError):
        softmax([1.0])
    with pytest.raises(ValueError):
        softmax([1.0, float("nan")])
    with pytest.raises(ValueError):
        softmax([1.0, 2.0], temperature=0.0)
    with pytest.raises(ValueError):
        softmax([1.0, 2.0], temperature=-1.0)


# -- references -----------------------------------------------------------


def test_low_reference_mass_and_tiebreak():
    cfg = ReferenceConfig(vocab_size=4, epsilon=1e-12)
    q = make_low_reference([0.25, 0.25, 0.25, 0.25], cfg)
    assert q[0] == 1.0 - 1e-12  # tie -> lowest index
    np.testing.assert_allclose(q[1:], 1e-12 / 3, rtol=0, atol=0)
    assert math.isclose(float(q.sum()), 1.0, abs_tol=1e-9)


def test_high_reference_uniform():
    q = make_high_reference(ReferenceConfig(vocab_size=5))
    np.testing.assert_array_equal(q, np.full(5, 0.2))


def test_reference_config_validation():
    with pytest.raises(ValueError):
        ReferenceConfig(vocab_size=1)
    with pytest.raises(ValueError):
        ReferenceConfig(vocab_size=4, epsilon=0.0)
    with pytest.raises(ValueError):
        ReferenceConfig(vocab_size=4, epsilon=1e-3)


# -- KL / entropy ---------------------------------------------------------


def test_kl_frozen_oracle():
    assert math.isclose(kl_divergence(ONEHOT4, UNIFORM4),
                        1.38629436111989, abs_tol=1e-12)
    assert kl_divergence(UNIFORM4, UNIFORM4) == 0.0


def test_kl_zero_times_log_zero_convention():
    # p has zeros where q > 0: those terms contribute exactly 0.
    assert math.isclose(kl_divergence([0.5, 0.5, 0.0], [0.25, 0.25, 0.5]),
                        math.log(2.0), abs_tol=1e-12)


def test_kl_rejects_support_violation():
    with pytest.raises(ValueError):
        kl_divergence([0.5, 0.5], [1.0, 0.0])


def test_entropy_values():
    assert entropy(ONEHOT4) == 0.0
    assert math.isclose(entropy(UNIFORM4), math.log(4.0), abs_tol=1e-12)
    assert math.isclose(normalized_entropy(UNIFORM4), 1.0, abs_tol=1e-12)
    assert math.isclose(normalized_entropy(SKEW4), 0.678389824723520,
                        abs_tol=1e-12)


# -- self-uncertainty: the two formulations agree -------------------------


@pytest.mark.parametrize("name", sorted(DISTS))
@pytest.mark.parametrize("eps", [1e-10, 1e-12, 1e-14])
def test_u_frozen_oracle(name, eps):
    cfg = ReferenceConfig(vocab_size=4, epsilon=eps)
    want = U_ORACLE[(name, eps)]
    assert math.isclose(self_uncertainty(DISTS[name], cfg), want, abs_tol=1e-11)
    assert math.isclose(self_uncertainty_dual_kl(DISTS[name], cfg), want,
                        abs_tol=1e-11)


def test_u_formulations_agree_on_random_suite():
    rng = np.random.default_rng(20240831)
    for i in range(300):
        v = int(rng.integers(2, 513))
        eps = float(10.0 ** rng.uniform(-14, -10))
        p = random_dist(rng, v, sharp=bool(i % 2))
        cfg = ReferenceConfig(vocab_size=v, epsilon=eps)
        a = self_uncertainty(p, cfg)
        b = self_uncertainty_dual_kl(p, cfg)
        assert math.isclose(a, b, rel_tol=1e-9, abs_tol=1e-12), (v, eps, a, b)


@given(st.integers(2, 64), st.integers(0, 2**32 - 1))
@settings(max_examples=150, deadline=None)
def test_u_sign_tracks_distribution_shape(v, seed):
    # Uniform is maximally far from one-hot: u positive. A (near) one-hot is
    # the low reference itself: u negative.
    cfg = ReferenceConfig(vocab_size=v)
    assert self_uncertainty(np.full(v, 1.0 / v), cfg) > 0.0
    onehot = np.zeros(v)
    onehot[seed % v] = 1.0
    assert self_uncertainty(onehot, cfg) < 0.0


def test_u_scales_with_epsilon_sharpness():
    # Smaller epsilon -> harsher one-hot reference -> larger u for any
    # non-one-hot distribution.
    us = [self_uncertainty(SKEW4, ReferenceConfig(4, eps))
          for eps in (1e-10, 1e-12, 1e-14)]
    assert us[0] < us[1] < us[2]


# -- gate sigmoid ---------------------------------------------------------


def test_gate_sigmoid_center_exact():
    assert gate_sigmoid(0.0) == 0.5


def test_gate_sigmoid_frozen_values():
    assert math.isclose(gate_sigmoid(-math.log(4.0)), 0.2, abs_tol=1e-15)
    assert math.isclose(gate_sigmoid(7.23259566025981), 0.999277879143619,
                        abs_tol=1e-12)


def test_gate_sigmoid_open_interval_at_saturation():
    for u in (-1e308, -750.0, -40.0, 40.0, 750.0, 1e308):
        s = gate_sigmoid(u)
        assert 0.0 < s < 1.0


@given(st.floats(-1e6, 1e6), st.floats(-1e6, 1e6))
@settings(max_examples=300, deadline=None)
def test_gate_sigmoid_monotone(a, b):
    lo, hi = sorted((a, b))
    assert gate_sigmoid(lo) <= gate_sigmoid(hi)


def test_gate_sigmoid_rejects_non_finite():
    with pytest.raises(ValueError):
        gate_sigmoid(float("nan"))
    with pytest.raises(ValueError):
        gate_sigmoid(float("inf"))


# -- baseline metrics -----------------------------------------------------

METRIC_ORACLE_SKEW = {
    MetricKind.NORMALIZED_ENTROPY: 0.678389824723520,
    MetricKind.INVERSE_PMAX: 0.3,
    MetricKind.GINI: 0.48,
    MetricKind.SELF_CERTAINTY_DECAY: 0.650630624679114,
}


@pytest.mark.parametrize("kind,want", sorted(METRIC_ORACLE_SKEW.items(),
                                             key=lambda kv: kv[0].value))
def test_metric_frozen_oracle(kind, want):
    cfg = ReferenceConfig(vocab_size=4)
    assert math.isclose(baseline_metric(kind, SKEW4, cfg), want, abs_tol=1e-12)


def test_metric_extremes():
    cfg = ReferenceConfig(vocab_size=4)
    # One-hot -> 0 (the certainty-decay floor leaves ~1.3e-22, inside 1e-9).
    assert baseline_metric(MetricKind.NORMALIZED_ENTROPY, ONEHOT4, cfg) == 0.0
    assert baseline_metric(MetricKind.INVERSE_PMAX, ONEHOT4, cfg) == 0.0
    assert abs(baseline_metric(MetricKind.GINI, ONEHOT4, cfg)) <= 1e-12
    assert baseline_metric(MetricKind.SELF_CERTAINTY_DECAY, ONEHOT4, cfg) <= 1e-9
    # Uniform -> the metric's closed-form maximum.
    assert math.isclose(baseline_metric(MetricKind.NORMALIZED_ENTROPY,
                                        UNIFORM4, cfg), 1.0, abs_tol=1e-12)
    assert math.isclose(baseline_metric(MetricKind.SELF_CERTAINTY_DECAY,
                                        UNIFORM4, cfg), 1.0, abs_tol=1e-12)
    assert baseline_metric(MetricKind.INVERSE_PMAX, UNIFORM4, cfg) == 0.75
    assert math.isclose(baseline_metric(MetricKind.GINI, UNIFORM4, cfg), 0.75,
                        abs_tol=1e-12)


def test_metric_self_uncertainty_is_gate_value():
    cfg = ReferenceConfig(vocab_size=4)
    got = baseline_metric(MetricKind.SELF_UNCERTAINTY, SKEW4, cfg)
    assert math.isclose(got, gate_sigmoid(self_uncertainty(SKEW4, cfg)),
                        abs_tol=1e-15)
    assert math.isclose(
        baseline_metric(MetricKind.SELF_UNCERTAINTY, ONEHOT4, cfg),
        gate_sigmoid(-math.log(4.0)), abs_tol=1e-9)


@given(st.integers(2, 32), st.integers(0, 2**32 - 1))
@settings(max_examples=100, deadline=None)
def test_metrics_stay_in_unit_interval(v, seed):
    rng = np.random.default_rng(seed)
    p = random_dist(rng, v, sharp=bool(seed % 2))
    cfg = ReferenceConfig(vocab_size=v)
    for kind in MetricKind:
        m = baseline_metric(kind, p, cfg)
        assert 0.0 <= m <= 1.0, (kind, m)


# -- validation and aggregation -------------------------------------------


def test_as_dist_validation():
    with pytest.raises(ValueError):
        as_dist([0.5, 0.6])
    with pytest.raises(ValueError):
        as_dist([1.2, -0.2])
    with pytest.raises(ValueError):
        as_dist([1.0])
    with pytest.raises(ValueError):
        as_logits([[1.0, 2.0]])


def test_vocab_size_mismatch_rejected():
    cfg = ReferenceConfig(vocab_size=5)
    with pytest.raises(ValueError):
        self_uncertainty(SKEW4, cfg)
    with pytest.raises(ValueError):
        baseline_metric(MetricKind.GINI, SKEW4, cfg)


def test_step_uncertainty_mean():
    assert step_uncertainty([1.0, 2.0, 6.0]) == 3.0
    with pytest.raises(ValueError):
        step_uncertainty([])


def test_default_epsilon():
    assert DEFAULT_EPSILON == 1e-12
