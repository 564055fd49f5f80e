"""Compare the compiled and pure-Python step kernels.

    python benchmarks/bench_kernels.py [--steps N] [--chains C]

Both backends advance the same ensemble from the same seed; the script checks
that the trajectories agree bit for bit and reports steps per second.
"""

import argparse
import time

import numpy as np

from sgubu import kernels
from sgubu.gradients import MinibatchGradient, NoiseInjectedGradient, SpikeNoise
from sgubu.integrators import run_chain
from sgubu.model import QuadraticMixturePotential, standard_gaussian


def cases(dim):
    toy = QuadraticMixturePotential.toy()
    gauss = standard_gaussian(dim)
    yield "toy minibatch", MinibatchGradient(toy, 1), 0.05, 5.0
    yield f"gaussian d={dim} spike", NoiseInjectedGradient(gauss, SpikeNoise(10.0, dim, 0.1)), 0.05, 2.0


def timed(kind, est, h, gamma, steps, chains, backend):
    t0 = time.perf_counter()
    res = run_chain(kind, est, h, gamma, steps, 0, max(1, steps // 10), seed=1, n_chains=chains, backend=backend)
    return time.perf_counter() - t0, res.positions


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    ap.add_argument("--steps", type=int, default=20_000)
    ap.add_argument("--chains", type=int, default=8)
    ap.add_argument("--dim", type=int, default=16)
    args = ap.parse_args()
    backends = ["python"] + (["cython"] if kernels.compiled_available() else [])
    print(f"backends: {', '.join(backends)}; default {kernels.DEFAULT.NAME}")
    print(f"{'case':28s} {'kind':5s} {'backend':8s} {'seconds':>9s} {'steps/s':>12s} {'speedup':>8s}")
    for name, est, h, gamma in cases(args.dim):
        for kind in ("ubu", "em", "sgld"):
            results = {}
            for b in backends:
                results[b] = timed(kind, est, h, gamma, args.steps, args.chains, b)
            base = results["python"][0]
            for b, (secs, pos) in results.items():
                rate = args.steps / secs
                print(f"{name:28s} {kind:5s} {b:8s} {secs:9.3f} {rate:12.0f} {base / secs:8.1f}x")
            if "cython" in results and not np.array_equal(results["cython"][1], results["python"][1]):
                raise SystemExit(f"backends disagree on {name} / {kind}")
    print("trajectories identical across backends")


if __name__ == "__main__":
    main()
