"""Multi-seed experiment orchestration and run manifests.

Per-run randomness derives from the run index, and periodic evaluation
batches use dedicated streams, so results are independent of scheduling
and reproduce byte-for-byte under a fixed master seed.  REASONER_THREADS
caps worker processes for the embarrassingly parallel multi-seed runs.
"""

import hashlib
import json
import os

import numpy as np

from . import vi
from .diagnostics import riddle_metrics
from .hmc import mix_seed

ENGINE_VERSION = "0.1.0"


def thread_budget():
    raw = os.environ.get("REASONER_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise ValueError(f"REASONER_THREADS must be an integer, got {raw!r}")


def parallel_map(fn, items):
    """Order-preserving map, forking workers when REASONER_THREADS > 1."""
    budget = thread_budget()
    if budget <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    from concurrent.futures import ProcessPoolExecutor
    with ProcessPoolExecutor(max_workers=min(budget, len(items))) as pool:
        return list(pool.map(fn, items))


def decode_tuple(graph, xi, pipeline_names):
    """Argmax class per probability pipeline."""
    probs, _ = graph.snapshot(xi, pipeline_names)
    return tuple(int(np.argmax(probs[name])) for name in pipeline_names)


class _RiddleRun:
    """Picklable single-seed riddle fit (needed for process pools)."""

    def __init__(self, graph, schedule, base_config, pipeline_names,
                 batch_every, batch_size):
        self.graph = graph
        self.schedule = schedule
        self.base_config = base_config
        self.pipeline_names = pipeline_names
        self.batch_every = batch_every
        self.batch_size = batch_size

    def __call__(self, seed):
        graph = self.graph
        schedule = self.schedule
        final_alpha = schedule.final_alpha
        total = schedule.total_iterations
        tempered = [t.name for t in graph.terms if t.tempered]
        batches = []

        def observe(iteration, stage_alpha, state):
            if iteration % self.batch_every and iteration != total:
                return
            batch_rng = np.random.Generator(
                np.random.PCG64(mix_seed(seed, 1_000_000 + iteration)))
            draws = vi.sample_approximation(state, self.batch_size,
                                            batch_rng).draws[0]
            decoded, sat = [], []
            for xi in draws:
                probs, sats = graph.snapshot(xi, self.pipeline_names)
                decoded.append([int(np.argmax(probs[n]))
                                for n in self.pipeline_names])
                sat.append([sats[name] for name in tempered])
            elbo_rng = np.random.Generator(
                np.random.PCG64(mix_seed(seed, 2_000_000 + iteration)))
            zetas = vi.antithetic_zetas(elbo_rng, self.base_config.n_pairs,
                                        state.dim)
            elbo = vi.elbo_value_fixed_samples(graph, state.mean,
                                               state.log_std, zetas,
                                               final_alpha)
            batches.append({"iter": iteration, "elbo_final_alpha": elbo,
                            "decoded": decoded, "sat": sat})

        config = vi.ViConfig(**{**self.base_config.__dict__,
                                "seed": seed,
                                "callback": observe,
                                "callback_every": 1})
        state, trace = vi.fit_linesearch(graph, schedule, config)
        return {"seed": seed, "batches": batches,
                "final_mean": state.mean.tolist(),
                "final_log_std": state.log_std.tolist(),
                "trace": trace}


def run_riddle(graph, schedule, n_seeds, pipeline_names, truth,
               master_seed=0, config=None, batch_every=50, batch_size=10,
               method="mf-linesearch", keep_traces=False):
    """Fit the riddle posterior across seeds; aggregate progress metrics.

    Run k uses seed master_seed + k.  Returns (runs, RiddleMetrics); each
    run record carries the periodic decoded batches the metrics aggregate.
    """
    if method != "mf-linesearch":
        raise ValueError("multi-seed riddle runs use the annealed line search")
    base = config or vi.ViConfig()
    job = _RiddleRun(graph, schedule, base, list(pipeline_names),
                     batch_every, batch_size)
    runs = parallel_map(job, [master_seed + k for k in range(n_seeds)])
    if not keep_traces:
        for run in runs:
            run.pop("trace", None)
    metrics = riddle_metrics(runs, truth)
    return runs, metrics


# ---------------------------------------------------------------------------
# manifests and atomic output helpers


def sha256_file(path):
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def write_json(path, payload):
    tmp = f"{path}.tmp.{os.getpid()}"
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True, indent=2)
        fh.write("\n")
    os.replace(tmp, path)


def write_jsonl(path, records):
    tmp = f"{path}.tmp.{os.getpid()}"
    with open(tmp, "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(record, sort_keys=True) + "\n")
    os.replace(tmp, path)


def write_manifest(path, spec_path, config, outputs):
    """Run manifest: inputs, config, and content hashes of every artifact.

    Wall-clock time is reported on stderr, never persisted: outputs must be
    byte-identical across reruns with the same seed.
    """
    manifest = {
        "engine_version": ENGINE_VERSION,
        "spec": {"path": os.path.abspath(spec_path),
                 "sha256": sha256_file(spec_path)},
        "config": config,
        "outputs": [{"path": os.path.abspath(p), "sha256": sha256_file(p)}
                    for p in sorted(outputs)],
    }
    write_json(path, manifest)
    return manifest
