"""Recurrent layer kernels with a compiled core and a pure-Python fallback.

The compiled Cython backend wins by 5-10x on the small batches that
dominate Monte Carlo forecasting, while numpy's BLAS matmuls win on full
training batches, so ``auto`` (the default) dispatches on batch size.
Set EPIENS_BACKEND=python|compiled to force a single backend, e.g. when
bitwise reproducibility across installs matters more than speed.
``python -m epiens.benchmark`` compares the two.
"""

from __future__ import annotations

import os

from . import reference

_KERNEL_NAMES = (
    "rnn_forward",
    "rnn_backward",
    "gru_forward",
    "gru_backward",
    "lstm_forward",
    "lstm_backward",
)

# Measured crossover: compiled loops beat BLAS-backed numpy below ~14 rows.
SMALL_BATCH = 12

_choice = os.environ.get("EPIENS_BACKEND", "auto").lower()
if _choice not in ("auto", "python", "compiled"):
    raise ImportError(f"EPIENS_BACKEND must be auto, python, or compiled; got {_choice!r}")

_fast = None
if _choice in ("auto", "compiled"):
    try:
        import importlib

        _fast = importlib.import_module("._fast", __name__)
    except ImportError:
        if _choice == "compiled":
            raise ImportError("EPIENS_BACKEND=compiled but the extension is not built")
        _fast = None


def get_backend(name: str | None = None):
    """The kernel module for a backend name (None: the preferred one)."""
    if name in (None, "active"):
        return _fast if _fast is not None else reference
    if name == "python":
        return reference
    if name == "compiled":
        if _fast is None:
            raise ValueError("compiled backend is not built")
        return _fast
    raise ValueError(f"unknown backend {name!r}")


def available_backends():
    return ["python"] + (["compiled"] if _fast is not None else [])


if _choice == "python" or _fast is None:
    BACKEND = "python"
    _small, _large = reference, reference
elif _choice == "compiled":
    BACKEND = "compiled"
    _small, _large = _fast, _fast
else:
    BACKEND = "hybrid"
    _small, _large = _fast, reference


def _dispatch(name):
    small = getattr(_small, name)
    large = getattr(_large, name)
    if small is large:
        return small

    def kernel(X, *args, _small_fn=small, _large_fn=large):
        fn = _small_fn if X.shape[0] <= SMALL_BATCH else _large_fn
        return fn(X, *args)

    kernel.__name__ = name
    return kernel


rnn_forward = _dispatch("rnn_forward")
rnn_backward = _dispatch("rnn_backward")
gru_forward = _dispatch("gru_forward")
gru_backward = _dispatch("gru_backward")
lstm_forward = _dispatch("lstm_forward")
lstm_backward = _dispatch("lstm_backward")

__all__ = list(_KERNEL_NAMES) + ["BACKEND", "SMALL_BATCH", "get_backend", "available_backends"]
