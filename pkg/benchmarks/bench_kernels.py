"""Compare the compiled kernel backend against the NumPy fallback.

The backend is fixed at import time, so each side runs in a subprocess
with REASONER_KERNELS set.  Workloads mirror the two hot loops: gradient
evaluations of the synthetic riddle posterior (tiny vectors, overhead
bound) and of an MLP digit model (matvec bound), plus leapfrog
transitions.

Usage: python benchmarks/bench_kernels.py [--repeats N]
"""

import argparse
import json
import os
import subprocess
import sys
import time

WORKLOADS = ("riddle-gradient", "mlp-gradient", "leapfrog")


def build_mlp_graph():
    import numpy as np
    from reasoner import network as N
    from reasoner import probmodel as P
    from reasoner import tensor as T

    rng = np.random.default_rng(7)

    def dense(n_out, n_in):
        return N.LayerSpec("dense",
                           weight=T.Tensor(rng.normal(size=(n_out, n_in)) /
                                           np.sqrt(n_in), const=True),
                           bias=T.Tensor(np.zeros(n_out), const=True))

    gen = N.NetworkBundle("gen", [16], "image",
                          [dense(48, 16), N.LayerSpec("tanh"),
                           dense(64, 48), N.LayerSpec("sigmoid")])
    cls = N.NetworkBundle("cls", [64], "probabilities",
                          [dense(48, 64), N.LayerSpec("tanh"),
                           dense(10, 48), N.LayerSpec("softmax")])
    doc = {
        "latents": [{"name": "z", "dim": 16}],
        "pipelines": [
            {"name": "img", "input": "z", "steps": [{"net": "gen"}]},
            {"name": "p", "input": "img", "steps": [{"net": "cls"}]},
        ],
        "constraints": [{"type": "categorical", "input": "p", "target": 3,
                         "alpha": 100.0}],
    }
    return P.compile_spec(doc, networks={"gen": gen, "cls": cls})


def run_workload(name, repeats):
    import numpy as np
    from reasoner import hmc
    from reasoner import probmodel as P

    here = os.path.dirname(os.path.abspath(__file__))
    riddle = os.path.join(here, "..", "specs", "riddle_synthetic.json")
    if name == "riddle-gradient":
        graph = P.compile_file(riddle)
        xi = np.random.default_rng(1).standard_normal(graph.total_dim)
        calls = 400 * repeats
        start = time.perf_counter()
        for _ in range(calls):
            graph.logp_and_grad(xi)
        return calls / (time.perf_counter() - start)
    if name == "mlp-gradient":
        graph = build_mlp_graph()
        xi = np.random.default_rng(1).standard_normal(16)
        calls = 300 * repeats
        start = time.perf_counter()
        for _ in range(calls):
            graph.logp_and_grad(xi)
        return calls / (time.perf_counter() - start)
    graph = build_mlp_graph()
    config = hmc.HmcConfig(n_chains=2, n_samples=30 * repeats,
                           warmup_iterations=0, master_seed=1,
                           initial_step_size=0.02)
    start = time.perf_counter()
    hmc.sample(graph, config)
    transitions = 2 * 15 * repeats
    return transitions / (time.perf_counter() - start)


def child_main():
    name = sys.argv[sys.argv.index("--workload") + 1]
    repeats = int(sys.argv[sys.argv.index("--repeats") + 1])
    from reasoner import KERNEL_BACKEND
    rate = run_workload(name, repeats)
    print(json.dumps({"backend": KERNEL_BACKEND, "rate": rate}))


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--repeats", type=int, default=3)
    parser.add_argument("--workload", default=None, help=argparse.SUPPRESS)
    args = parser.parse_args()
    if args.workload:
        return child_main()

    results = {}
    for backend in ("c", "py"):
        for name in WORKLOADS:
            env = dict(os.environ, REASONER_KERNELS=backend)
            out = subprocess.run(
                [sys.executable, os.path.abspath(__file__), "--workload",
                 name, "--repeats", str(args.repeats)],
                capture_output=True, text=True, env=env, check=True)
            payload = json.loads(out.stdout.strip().splitlines()[-1])
            results[(payload["backend"], name)] = payload["rate"]

    print(f"{'workload':<18} {'compiled/s':>12} {'numpy/s':>12} {'speedup':>9}")
    for name in WORKLOADS:
        c = results[("compiled", name)]
        p = results[("python", name)]
        print(f"{name:<18} {c:>12.0f} {p:>12.0f} {c / p:>8.2f}x")


if __name__ == "__main__":
    sys.exit(main())
