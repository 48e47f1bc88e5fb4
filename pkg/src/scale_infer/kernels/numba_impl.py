"""numba @njit implementations of the hot kernels (default backend)."""
from __future__ import annotations

import numpy as np
from numba import njit

_TINY_T = 5e-324


@njit(cache=True)
def softmax_t(logits, temperature):
    t = temperature if temperature > _TINY_T else _TINY_T
    m = logits.max()
    e = np.exp((logits - m) / t)
    return e / e.sum()


@njit(cache=True)
def sample_softmax_t(logits, temperature, r):
    # Same contract and rounding as numpy_impl.sample_softmax_t: sequential
    # cumulative sum in unnormalized exp space, threshold r * total.
    t = temperature if temperature > _TINY_T else _TINY_T
    v = logits.shape[0]
    m = logits.max()
    e = np.exp((logits - m) / t)
    total = 0.0
    for i in range(v):
        total += e[i]
    thresh = r * total
    acc = 0.0
    for i in range(v):
        acc += e[i]
        if acc > thresh:
            return i
    return v - 1


@njit(cache=True)
def kl_div(p, q):
    tot = 0.0
    for i in range(p.shape[0]):
        if p[i] > 0.0:
            tot += p[i] * np.log(p[i] / q[i])
    return tot


@njit(cache=True)
def entropy_nats(p):
    tot = 0.0
    for i in range(p.shape[0]):
        if p[i] > 0.0:
            tot -= p[i] * np.log(p[i])
    return tot


@njit(cache=True)
def self_uncertainty_llr(probs, epsilon):
    v = probs.shape[0]
    amax = 0
    best = probs[0]
    for i in range(1, v):
        if probs[i] > best:  # strict: lowest index wins ties
            best = probs[i]
            amax = i
    log_qh = -np.log(float(v))
    llr_other = log_qh - (np.log(epsilon) - np.log(v - 1.0))
    llr_amax = log_qh - np.log1p(-epsilon)
    tot = 0.0
    for i in range(v):
        tot += probs[i] * (llr_amax if i == amax else llr_other)
    return tot


@njit(cache=True)
def encoder_forward(x, wq, wk, wv, wo, w_pool, gamma):
    # Same contract as numpy_impl.encoder_forward.
    n_layers, n_heads, d_model, d_head = wq.shape
    n = x.shape[0]
    inv = 1.0 / (np.sqrt(d_head) * gamma)
    h = x.copy()
    task_q = np.zeros((n_heads, d_head))
    keys = np.zeros((n_heads, n, d_head))
    ent_sum = 0.0
    for layer in range(n_layers):
        attn_out = np.empty((n, d_model))
        for head in range(n_heads):
            q = np.ascontiguousarray(h) @ np.ascontiguousarray(wq[layer, head])
            k = np.ascontiguousarray(h) @ np.ascontiguousarray(wk[layer, head])
            v = np.ascontiguousarray(h) @ np.ascontiguousarray(wv[layer, head])
            if layer == n_layers - 1:
                for j in range(d_head):
                    task_q[head, j] = q[0, j]
                for i in range(n):
                    for j in range(d_head):
                        keys[head, i, j] = k[i, j]
            z = q @ k.T
            for i in range(n):
                m = z[i, 0]
                for j in range(1, n):
                    if z[i, j] > m:
                        m = z[i, j]
                s = 0.0
                for j in range(n):
                    z[i, j] = np.exp((z[i, j] - m) * inv)
                    s += z[i, j]
                for j in range(n):
                    z[i, j] /= s
                for j in range(n):
                    if z[i, j] > 0.0:
                        ent_sum -= z[i, j] * np.log(z[i, j])
            w = z @ v
            for i in range(n):
                for j in range(d_head):
                    attn_out[i, head * d_head + j] = w[i, j]
        ho = attn_out @ np.ascontiguousarray(wo[layer])
        for i in range(n):
            for j in range(d_model):
                h[i, j] = h[i, j] + ho[i, j]
    pooled = np.zeros(d_model)
    for i in range(n):
        for j in range(d_model):
            pooled[j] += h[i, j]
    feat = (pooled / n) @ w_pool
    return feat, task_q, keys, ent_sum / (n_layers * n_heads * n)
