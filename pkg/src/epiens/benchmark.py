"""Benchmark the compiled recurrent kernels against the numpy fallback.

Run as ``python -m epiens.benchmark``. Times forward+backward passes at
the production shape (batch 32, window 3, two 32-unit layers) and a full
small training run, for each available backend.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from .nn import kernels


def _time(fn, repeats: int) -> float:
    fn()  # warm up
    t0 = time.perf_counter()
    for _ in range(repeats):
        fn()
    return (time.perf_counter() - t0) / repeats


def bench_kernels(backend_name: str, B=32, T=3, I=4, H=32, repeats=200):
    impl = kernels.get_backend(backend_name)
    rng = np.random.default_rng(0)
    X = rng.normal(size=(B, T, I))
    dH = rng.normal(size=(B, T, H))
    rows = []

    W, U, b = rng.normal(size=(H, I)), rng.normal(size=(H, H)) * 0.3, rng.normal(size=H)
    Hs = impl.rnn_forward(X, W, U, b)
    rows.append(("rnn fwd+bwd", _time(
        lambda: impl.rnn_backward(X, W, U, impl.rnn_forward(X, W, U, b), dH), repeats)))

    W3, U3, b3 = rng.normal(size=(3, H, I)), rng.normal(size=(3, H, H)) * 0.3, rng.normal(size=(3, H))
    rows.append(("gru fwd+bwd", _time(
        lambda: impl.gru_backward(X, W3, U3, *impl.gru_forward(X, W3, U3, b3), dH), repeats)))

    W4, U4, b4 = rng.normal(size=(4, H, I)), rng.normal(size=(4, H, H)) * 0.3, rng.normal(size=(4, H))
    rows.append(("lstm fwd+bwd", _time(
        lambda: impl.lstm_backward(X, W4, U4, *impl.lstm_forward(X, W4, U4, b4), dH), repeats)))
    return rows


def bench_training(backend_name: str, epochs=60):
    """A representative small training run end to end."""
    import os

    from .nn.recurrent import StackedRecurrentNet, TrainConfig, train
    from .panel import WindowSample

    impl = kernels.get_backend(backend_name)
    saved = {name: getattr(kernels, name) for name in kernels._KERNEL_NAMES}
    for name in kernels._KERNEL_NAMES:
        setattr(kernels, name, getattr(impl, name))
    try:
        rng = np.random.default_rng(3)
        samples = [WindowSample("R0", t, rng.random((3, 1)), float(rng.random()), 1)
                   for t in range(40)]
        net = StackedRecurrentNet("lstm", 1, (32, 32), 16, 0.2, seed=1)
        t0 = time.perf_counter()
        train(net, samples, TrainConfig(epochs=epochs, patience=None), seed=0)
        return time.perf_counter() - t0
    finally:
        for name, fn in saved.items():
            setattr(kernels, name, fn)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=200)
    args = parser.parse_args(argv)

    backends = kernels.available_backends()
    print(f"available backends: {', '.join(backends)} (active: {kernels.BACKEND})")
    print("batch 1 is the Monte Carlo sampling path; batch 32 is the training path\n")

    rows = {}
    for B, repeats in ((1, args.repeats * 5), (32, args.repeats)):
        for b in backends:
            for name, t in bench_kernels(b, B=B, repeats=repeats):
                rows.setdefault(f"{name} (B={B})", {})[b] = t
    for b in backends:
        rows.setdefault("lstm training (60 epochs)", {})[b] = bench_training(b)

    width = max(len(n) for n in rows)
    header = f"{'kernel':<{width}}  " + "  ".join(f"{b:>12}" for b in backends)
    if len(backends) == 2:
        header += "  speedup"
    print(header)
    for name, times in rows.items():
        line = f"{name:<{width}}  " + "  ".join(f"{times[b] * 1e6:>10.1f}us" for b in backends)
        if len(backends) == 2:
            line += f"  {times[backends[0]] / times[backends[1]]:>6.1f}x"
        print(line)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
