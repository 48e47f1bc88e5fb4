"""Pure-NumPy implementations of the hot kernels (fallback backend)."""
from __future__ import annotations

import numpy as np

# Smallest positive subnormal; substituting it for temperature 0 turns the
# softmax into a limiting argmax (ties split evenly) without dividing by zero.
_TINY_T = 5e-324


def softmax_t(logits: np.ndarray, temperature: float) -> np.ndarray:
    """softmax(logits / temperature) with max-subtraction.

    Tolerates -inf entries (masked tokens) and arbitrarily small positive
    temperatures; at temperature -> 0 the result approaches a point mass on
    the max entry (uniform over exact ties).
    """
    t = temperature if temperature > _TINY_T else _TINY_T
    z = (logits - logits.max()) / t
    e = np.exp(z)
    return e / e.sum()


def sample_softmax_t(logits: np.ndarray, temperature: float, r: float) -> int:
    """Inverse-CDF sample from softmax(logits / temperature) at uniform r.

    Fused so the per-token sampling path costs one kernel call. The running
    sum is kept in unnormalized exp space and compared against r times the
    sequential total, which makes the selected index a pure function of
    (logits, temperature, r) with backend-independent rounding.
    """
    t = temperature if temperature > _TINY_T else _TINY_T
    e = np.exp((logits - logits.max()) / t)
    cum = np.cumsum(e)
    j = int(np.searchsorted(cum, r * cum[-1], side="right"))
    return min(j, logits.shape[0] - 1)


def kl_div(p: np.ndarray, q: np.ndarray) -> float:
    mask = p > 0.0
    pm = p[mask]
    return float(np.sum(pm * np.log(pm / q[mask])))


def entropy_nats(p: np.ndarray) -> float:
    pm = p[p > 0.0]
    return float(-np.sum(pm * np.log(pm)))


def self_uncertainty_llr(probs: np.ndarray, epsilon: float) -> float:
    """E_{x~p}[log(q_uniform(x) / q_onehot(x))] for the two reference dists.

    q_onehot puts 1-epsilon on the argmax of probs (lowest index on ties) and
    epsilon/(V-1) elsewhere; q_uniform is 1/V. Computed as an expectation of
    the per-token log-ratio, which only ever takes two distinct values.
    """
    v = probs.shape[0]
    amax = int(np.argmax(probs))
    log_qh = -np.log(float(v))
    llr_other = log_qh - (np.log(epsilon) - np.log(v - 1.0))
    llr_amax = log_qh - np.log1p(-epsilon)
    ll = np.full(v, llr_other)
    ll[amax] = llr_amax
    return float(probs @ ll)


def encoder_forward(x, wq, wk, wv, wo, w_pool, gamma):
    """L layers of (scaled multi-head self-attention, residual, ReLU), pooled.

    Parameters
    ----------
    x : (n, d_model) float64 token features, row 0 = task token
    wq, wk, wv : (L, H, d_model, d_head) projection stacks
    wo : (L, d_model, d_model) per-layer output projections
    w_pool : (d_model, d_model) final pooling projection
    gamma : attention temperature applied in every layer (score divisor
        is sqrt(d_head) * gamma)

    Returns
    -------
    feat : (d_model,) pooled feature vector
    task_q : (H, d_head) final-layer query rows of the task token
    keys : (H, n, d_head) final-layer key matrices
    attn_entropy : mean Shannon entropy (nats) of all attention rows,
        across layers and heads
    """
    n_layers, n_heads, d_model, d_head = wq.shape
    n = x.shape[0]
    inv = 1.0 / (np.sqrt(d_head) * gamma)
    h = x
    task_q = np.zeros((n_heads, d_head))
    keys = np.zeros((n_heads, n, d_head))
    ent_sum = 0.0
    for layer in range(n_layers):
        attn_out = np.empty((n, d_model))
        for head in range(n_heads):
            q = h @ wq[layer, head]
            k = h @ wk[layer, head]
            v = h @ wv[layer, head]
            if layer == n_layers - 1:
                task_q[head] = q[0]
                keys[head] = k
            z = (q @ k.T) * inv
            z = z - z.max(axis=1, keepdims=True)
            w = np.exp(z)
            w /= w.sum(axis=1, keepdims=True)
            wp = w[w > 0.0]
            ent_sum += float(-np.sum(wp * np.log(wp)))
            attn_out[:, head * d_head:(head + 1) * d_head] = w @ v
        h = h + attn_out @ wo[layer]
    feat = (h.sum(axis=0) / n) @ w_pool
    return feat, task_q, keys, ent_sum / (n_layers * n_heads * n)
