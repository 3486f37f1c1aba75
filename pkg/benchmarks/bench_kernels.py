"""Compare the numba and pure-numpy kernel backends.

Each backend runs in its own interpreter (the backend is fixed at import
time by ``SMGLEARN_BACKEND``).  Usage::

    python benchmarks/bench_kernels.py [--repeats 200]
"""

import argparse
import json
import os
import subprocess
import sys

WORKER = r"""
import json, sys, time
import numpy as np
from smglearn import kernels, model
from smglearn.access import SubjectPool
from smglearn.dualmeta import MetaStepConfig, train_round
from smglearn.sitegen import default_stream, generate_site

reps = int(sys.argv[1])
specs = default_stream(6, 0)
s1, s6 = generate_site(specs[0]), generate_site(specs[5])
theta = model.init_params(0)
batch = model.Batch.from_subjects(s1.train[:5])
sizes = model.DEFAULT_NET.sizes

def bench(f, n=reps):
    f()
    ts = []
    for _ in range(n):
        t0 = time.perf_counter()
        f()
        ts.append(time.perf_counter() - t0)
    return float(np.median(ts))

m, v = np.zeros_like(theta), np.zeros_like(theta)
g = np.ones_like(theta)
pa = np.random.default_rng(0).random((60, 2))
out = {
    "backend": kernels.BACKEND,
    "loss_grad": bench(lambda: kernels.mlp_loss_grad(theta, batch.x, batch.y, sizes)),
    "forward": bench(lambda: kernels.mlp_forward(theta, batch.x, sizes)),
    "adam_update": bench(lambda: kernels.adam_update(theta.copy(), g, m, v, 1.0,
                                                     5e-4, 0.9, 0.999, 1e-8)),
    "box_blur": bench(lambda: kernels.box_blur(s1.train[0].image, 2)),
    "mean_min_distance": bench(lambda: kernels.mean_min_distance(pa, pa[::-1])),
}
def round_():
    train_round(theta, SubjectPool(s6.train), SubjectPool(s1.train[:2]), cfg=MetaStepConfig(),
                iterations=200, rng=np.random.default_rng(0), mode="dual")
out["train_round_200it"] = bench(round_, 3)
print(json.dumps(out))
"""


def run(backend, repeats):
    env = dict(os.environ, SMGLEARN_BACKEND=backend)
    res = subprocess.run([sys.executable, "-c", WORKER, str(repeats)], env=env,
                         capture_output=True, text=True, check=True)
    return json.loads(res.stdout.strip().splitlines()[-1])


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeats", type=int, default=200)
    args = ap.parse_args()
    fast, slow = run("numba", args.repeats), run("numpy", args.repeats)
    print(f"{'kernel':<20}{'numba':>12}{'numpy':>12}{'speedup':>9}")
    for k in fast:
        if k == "backend":
            continue
        print(f"{k:<20}{fast[k] * 1e6:>10.1f}us{slow[k] * 1e6:>10.1f}us{slow[k] / fast[k]:>8.2f}x")


if __name__ == "__main__":
    main()
