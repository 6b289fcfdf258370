#!/usr/bin/env python3
"""Time every hot kernel under both backends and print a speedup table.

    python3 benchmarks/bench_kernels.py [--rows 2048] [--repeats 30]

Shapes default to the training hot path: rows = batch*seq positions, the
wide axis is the vocabulary for the output-layer kernels and the hidden
width for the layer-norm ones.  The first jitted call is excluded from
timing (compilation).  Outputs of the two paths are cross-checked before
timing; they agree to float32 accumulation noise, not bit-exactly.
"""

import argparse
import statistics
import time

import numpy as np

from adapterbot.kernels import KERNELS, NUMBA_AVAILABLE, layer_norm_fwd_np, softmax_fwd_np


def build_cases(rng, rows, dim, vocab):
    """kernel name -> zero-arg builder returning a fresh argument tuple."""
    logits = rng.standard_normal((rows, vocab)).astype(np.float32)
    probs = softmax_fwd_np(logits)
    targets = rng.integers(0, vocab, size=rows).astype(np.int64)
    weights = (rng.random(rows) > 0.3).astype(np.float32)
    weights[0] = 1.0  # keep the weighted mean defined
    x = rng.standard_normal((rows, dim)).astype(np.float32)
    gy = rng.standard_normal((rows, dim)).astype(np.float32)
    gamma = rng.standard_normal(dim).astype(np.float32)
    beta = rng.standard_normal(dim).astype(np.float32)
    _, xhat, rstd = layer_norm_fwd_np(x, gamma, beta, 1e-5)
    flat = rng.standard_normal(rows * dim).astype(np.float32)
    grad = rng.standard_normal(rows * dim).astype(np.float32)
    ids = rng.integers(0, vocab, size=rows).astype(np.int64)

    return {
        "softmax_fwd": lambda: (logits.copy(),),
        "softmax_bwd": lambda: (probs, rng.standard_normal(probs.shape).astype(np.float32)),
        "layer_norm_fwd": lambda: (x, gamma, beta, 1e-5),
        "layer_norm_bwd": lambda: (gy, xhat, rstd, gamma),
        "cross_entropy_fwd": lambda: (logits, targets, weights),
        "cross_entropy_bwd": lambda: (probs, targets, weights, 1.0),
        "nll_rows": lambda: (logits, targets),
        # the last three mutate their arrays, so every call gets fresh copies
        "adam_step": lambda: (flat.copy(), grad, flat.copy(), np.abs(flat).copy(),
                              3, 6e-4, 0.9, 0.999, 1e-8),
        "embedding_grad": lambda: (np.zeros((vocab, dim), dtype=np.float32),
                                   ids, gy),
    }


def _outputs(fn, args):
    """Normalize a kernel call to a list of arrays for agreement checks."""
    out = fn(*args)
    arrays = []
    if out is not None:
        out = out if isinstance(out, tuple) else (out,)
        arrays.extend(np.asarray(o) for o in out)
    arrays.extend(a for a in args if isinstance(a, np.ndarray))  # in-place
    return arrays


def check_agreement(name, build):
    pair = KERNELS[name]
    if pair["numba"] is None:
        return
    args = build()
    got_np = _outputs(pair["numpy"], tuple(
        a.copy() if isinstance(a, np.ndarray) else a for a in args))
    got_nb = _outputs(pair["numba"], tuple(
        a.copy() if isinstance(a, np.ndarray) else a for a in args))
    for a, b in zip(got_np, got_nb):
        if not np.allclose(a, b, rtol=1e-4, atol=1e-5):
            raise SystemExit(f"{name}: backend outputs disagree "
                             f"(max abs diff {np.abs(a - b).max():.3e})")


def bench(fn, build, repeats):
    fn(*build())  # warmup / jit
    times = []
    for _ in range(repeats):
        args = build()
        t0 = time.perf_counter()
        fn(*args)
        times.append(time.perf_counter() - t0)
    return statistics.median(times)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--rows", type=int, default=2048)
    ap.add_argument("--dim", type=int, default=64)
    ap.add_argument("--vocab", type=int, default=261)
    ap.add_argument("--repeats", type=int, default=30)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    rng = np.random.default_rng(args.seed)
    cases = build_cases(rng, args.rows, args.dim, args.vocab)
    print(f"rows={args.rows} dim={args.dim} vocab={args.vocab} "
          f"repeats={args.repeats} numba={'yes' if NUMBA_AVAILABLE else 'NO'}")
    header = f"{'kernel':<20}{'numpy':>12}{'numba':>12}{'speedup':>10}"
    print(header)
    print("-" * len(header))
    for name, build in cases.items():
        check_agreement(name, build)
        t_np = bench(KERNELS[name]["numpy"], build, args.repeats)
        if KERNELS[name]["numba"] is not None:
            t_nb = bench(KERNELS[name]["numba"], build, args.repeats)
            print(f"{name:<20}{t_np * 1e3:>9.3f} ms{t_nb * 1e3:>9.3f} ms"
                  f"{t_np / t_nb:>9.1f}x")
        else:
            print(f"{name:<20}{t_np * 1e3:>9.3f} ms{'-':>12}{'-':>10}")


if __name__ == "__main__":
    main()
