"""Numba vs numpy kernel timings, plus one end-to-end training run per backend.

    python benchmarks/bench_kernels.py [--m 5000 --n 2000 --l 10]

Kernel timings call both implementations directly.  Training runs in a
subprocess because the backend is fixed at import time by SL1MAX_DISABLE_NUMBA.
"""
import argparse
import json
import os
import subprocess
import sys
import timeit

import numpy as np

from sl1max import kernels as K
from sl1max._accel import HAVE_NUMBA
from sl1max.evaluation import synth_generate


def best_of(fn, repeat=5, number=20):
    return min(timeit.repeat(fn, repeat=repeat, number=number)) / number


def kernel_table(m, n, l, seed):
    data = synth_generate(m, n, l, 0.1, seed=seed)
    indptr, indices, values = data.csc_arrays
    rng = np.random.default_rng(seed)
    S = rng.normal(size=(m, l)) * 0.1
    row_off = np.full(m, -np.log(m * l))
    shift = 0.0
    k = n * l
    p, q = rng.random(k), rng.random(k)
    lam, beta = rng.normal(size=k), rng.uniform(0, 0.1, k)
    cd = rng.integers(0, l, 64)
    cj = rng.integers(0, n, 64)
    rows = rng.choice(m, size=min(m, 500), replace=False)
    cases = {
        "column_expectations": lambda mod: lambda: getattr(K, mod + "column_expectations")(
            indptr, indices, values, S, row_off, shift),
        "candidate_expectations(64)": lambda mod: lambda: getattr(K, mod + "candidate_expectations")(
            indptr, indices, values, S, row_off, shift, cd, cj),
        "propose_all": lambda mod: lambda: getattr(K, mod + "propose_all")(p, q, lam, beta, 30.0),
        "update_column": lambda mod: lambda: getattr(K, mod + "update_column")(
            indptr, indices, values, S.copy(), row_off, shift, 0, 1, 1e-3),
        "row_logsumexp(500)": lambda mod: lambda: getattr(K, mod + "row_logsumexp")(S, rows),
    }
    out = []
    for name, make in cases.items():
        make("nb_")()  # compile outside the timed region
        t_np = best_of(make("np_"))
        t_nb = best_of(make("nb_"))
        out.append((name, t_np, t_nb))
    return out


TRAIN_SNIPPET = """
import json, sys, time
from sl1max._accel import backend_name
from sl1max.evaluation import fit, synth_generate
m, n, l = map(int, sys.argv[1:4])
warm = synth_generate(50, 10, 3, 0.0, seed=0)
fit(warm, "cond"); fit(warm, "joint")
data = synth_generate(m, n, l, 0.1, seed=1)
res = {"backend": backend_name()}
for kind in ("cond", "joint", "ensemble-cond"):
    t0 = time.perf_counter()
    fit(data, kind)
    res[kind] = time.perf_counter() - t0
print(json.dumps(res))
"""


def train_times(m, n, l, disable):
    env = dict(os.environ)
    env.pop("SL1MAX_DISABLE_NUMBA", None)
    if disable:
        env["SL1MAX_DISABLE_NUMBA"] = "1"
    out = subprocess.run([sys.executable, "-c", TRAIN_SNIPPET, str(m), str(n), str(l)], env=env,
                         capture_output=True, text=True, check=True)
    return json.loads(out.stdout.strip().splitlines()[-1])


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--m", type=int, default=5000)
    ap.add_argument("--n", type=int, default=2000)
    ap.add_argument("--l", type=int, default=10)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--skip-train", action="store_true")
    args = ap.parse_args()
    if not HAVE_NUMBA:
        sys.exit("numba is not installed; nothing to compare")

    print(f"kernels on m={args.m} n={args.n} l={args.l}")
    print(f"{'kernel':28s} {'numpy [ms]':>11s} {'numba [ms]':>11s} {'speedup':>8s}")
    for name, t_np, t_nb in kernel_table(args.m, args.n, args.l, args.seed):
        print(f"{name:28s} {1e3 * t_np:11.3f} {1e3 * t_nb:11.3f} {t_np / t_nb:8.1f}")

    if args.skip_train:
        return
    print("\nend-to-end training (default config), seconds")
    runs = [train_times(args.m, args.n, args.l, disable) for disable in (True, False)]
    print(f"{'kind':16s} " + " ".join(f"{r['backend']:>8s}" for r in runs))
    for kind in ("cond", "joint", "ensemble-cond"):
        print(f"{kind:16s} " + " ".join(f"{r[kind]:8.2f}" for r in runs))


if __name__ == "__main__":
    main()
