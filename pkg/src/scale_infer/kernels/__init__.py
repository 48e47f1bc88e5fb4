"""Backend dispatch for the hot numeric kernels.

Two interchangeable implementations live here: a numba ``@njit`` backend and a
pure-NumPy fallback. The active backend is chosen at import time from the
``SCALE_BACKEND`` environment variable (``numba`` or ``numpy``; default is
numba when importable) and can be switched at runtime with :func:`set_backend`
or the :func:`use_backend` context manager — the latter exists mostly for the
backend-comparison benchmark.
"""
from __future__ import annotations

import contextlib
import os

import numpy as np

from . import numpy_impl

_IMPLS = {"numpy": numpy_impl}

try:
    from . import numba_impl

    _IMPLS["numba"] = numba_impl
except ImportError:  # pragma: no cover - numba is a hard dep, but stay usable
    numba_impl = None

_env = os.environ.get("SCALE_BACKEND", "").strip().lower()
if _env and _env not in _IMPLS:
    raise RuntimeError(
        f"SCALE_BACKEND={_env!r} is not available; choose one of {sorted(_IMPLS)}"
    )
_active = _env if _env else ("numba" if "numba" in _IMPLS else "numpy")


def available_backends() -> tuple[str, ...]:
    return tuple(sorted(_IMPLS))


def active_backend() -> str:
    return _active


def set_backend(name: str) -> None:
    """Switch the kernel backend for subsequent calls."""
    global _active
    if name not in _IMPLS:
        raise ValueError(f"unknown backend {name!r}; choose one of {sorted(_IMPLS)}")
    _active = name


@contextlib.contextmanager
def use_backend(name: str):
    """Temporarily switch backends (used by the comparison benchmark)."""
    prev = _active
    set_backend(name)
    try:
        yield
    finally:
        set_backend(prev)


def softmax_t(logits: np.ndarray, temperature: float) -> np.ndarray:
    """Max-stabilized softmax of ``logits / temperature``."""
    return _IMPLS[_active].softmax_t(logits, temperature)


def sample_softmax_t(logits: np.ndarray, temperature: float, r: float) -> int:
    """Fused inverse-CDF draw from softmax(logits / temperature) at uniform r."""
    return _IMPLS[_active].sample_softmax_t(logits, temperature, r)


def kl_div(p: np.ndarray, q: np.ndarray) -> float:
    """KL(p || q) in nats with the 0*log0 = 0 convention."""
    return _IMPLS[_active].kl_div(p, q)


def entropy_nats(p: np.ndarray) -> float:
    return _IMPLS[_active].entropy_nats(p)


def self_uncertainty_llr(probs: np.ndarray, epsilon: float) -> float:
    """Expected log-likelihood ratio of the uniform over the one-hot reference."""
    return _IMPLS[_active].self_uncertainty_llr(probs, epsilon)


def encoder_forward(x, wq, wk, wv, wo, w_pool, gamma):
    """Full encoder stack; see ``numpy_impl.encoder_forward`` for the contract."""
    return _IMPLS[_active].encoder_forward(x, wq, wk, wv, wo, w_pool, gamma)


def warmup() -> None:
    """Trigger JIT compilation of the active backend on tiny inputs."""
    impl = _IMPLS[_active]
    l = np.array([0.5, -0.25, 0.0])
    p = impl.softmax_t(l, 1.0)
    impl.sample_softmax_t(l, 1.0, 0.5)
    impl.kl_div(p, p)
    impl.entropy_nats(p)
    impl.self_uncertainty_llr(p, 1e-12)
    x = np.linspace(-1.0, 1.0, 3 * 8).reshape(3, 8)
    wq = np.full((1, 2, 8, 4), 0.01)
    wo = np.full((1, 8, 8), 0.01)
    pool = np.eye(8)
    impl.encoder_forward(x, wq, wq, wq, wo, pool, 1.0)
