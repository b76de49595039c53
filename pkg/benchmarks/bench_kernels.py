"""Time the compiled kernels against the numpy fallback.

Run ``python benchmarks/bench_kernels.py [--repeat N]``. Each kernel is run
on the same inputs under both backends; the script checks the outputs agree
and prints the best wall time of ``--repeat`` runs and the speed-up.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from mobilab.kernels import get_backend


def _inputs(rng):
    n_groups, per = 20_000, 34
    codes = np.repeat(np.arange(n_groups), per)
    values = rng.normal(size=(len(codes), 8))
    k = 233
    X = rng.normal(size=(5_000, k))
    gram = X.T @ X / len(X)
    xty = X.T @ (X[:, :10] @ rng.normal(size=10) + rng.normal(size=len(X))) / len(X)
    lam = 0.01 * np.abs(xty).max()
    return {
        "group_means": (values, codes, n_groups),
        "group_demean": (values, codes, n_groups),
        "group_logsumexp": (values[:, 0].copy(), codes, n_groups),
        "cd_gram": (gram, xty, np.zeros(k), np.full(k, lam), np.zeros(k), 1e-10, 10_000),
    }


def _best(fn, args, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn(*args)
        times.append(time.perf_counter() - t0)
    return min(times), out


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=3)
    args = parser.parse_args(argv)
    py = get_backend("python")
    try:
        cc = get_backend("compiled")
    except ImportError:
        print("compiled extension not built; only the numpy fallback is available")
        return 1
    inputs = _inputs(np.random.default_rng(0))
    print(f"{'kernel':<18}{'python (s)':>12}{'compiled (s)':>14}{'speed-up':>10}{'max |diff|':>12}")
    for name, call_args in inputs.items():
        tp, op = _best(getattr(py, name), call_args, args.repeat)
        tc, oc = _best(getattr(cc, name), call_args, args.repeat)
        a = op[0] if isinstance(op, tuple) else op
        b = oc[0] if isinstance(oc, tuple) else oc
        diff = float(np.max(np.abs(np.asarray(a) - np.asarray(b))))
        print(f"{name:<18}{tp:>12.4f}{tc:>14.4f}{tp / tc:>10.1f}{diff:>12.2e}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
