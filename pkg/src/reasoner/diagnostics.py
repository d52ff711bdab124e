"""Sample-ensemble evaluation: accuracies, Frechet distances, riddle metrics.

Everything here is a pure function over immutable archives and run records,
so callers may parallelize freely.
"""

import numpy as np

from . import network as N
from . import tensor as T
from .archive import SampleArchive

_EIG_FLOOR = -1e-9


class EnsembleStats:
    """Gaussian summary (mean, covariance, count) of a feature ensemble."""

    def __init__(self, mean, cov, n):
        self.mean = np.asarray(mean, dtype=np.float64)
        self.cov = np.asarray(cov, dtype=np.float64)
        self.n = int(n)
        if self.cov.shape != (self.mean.size, self.mean.size):
            raise ValueError(
                f"covariance {self.cov.shape} does not match mean "
                f"{self.mean.shape}")
        if self.n < 2:
            raise ValueError("ensemble statistics need n >= 2")

    @classmethod
    def from_samples(cls, x):
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[0] < 2:
            raise ValueError(f"need (n >= 2, d) samples, got {x.shape}")
        return cls(x.mean(axis=0), np.cov(x, rowvar=False, ddof=1).reshape(
            x.shape[1], x.shape[1]), x.shape[0])

    @property
    def dim(self):
        return self.mean.size


def _sqrt_psd(matrix, label):
    sym = 0.5 * (matrix + matrix.T)
    eigvals, eigvecs = np.linalg.eigh(sym)
    if eigvals.min() < _EIG_FLOOR:
        raise ValueError(
            f"{label}: eigenvalue {eigvals.min():.3e} below the PSD "
            f"tolerance {_EIG_FLOOR}")
    eigvals = np.clip(eigvals, 0.0, None)
    return (eigvecs * np.sqrt(eigvals)) @ eigvecs.T


def frechet_distance(stats_a, stats_b):
    """||mu_a - mu_b||^2 + Tr(S_a + S_b - 2 (S_a^1/2 S_b S_a^1/2)^1/2)."""
    if stats_a.dim != stats_b.dim:
        raise ValueError(
            f"feature dims differ: {stats_a.dim} vs {stats_b.dim}")
    diff = stats_a.mean - stats_b.mean
    root_a = _sqrt_psd(stats_a.cov, "covariance A")
    inner = root_a @ stats_b.cov @ root_a
    sym = 0.5 * (inner + inner.T)
    eigvals = np.linalg.eigvalsh(sym)
    if eigvals.min() < _EIG_FLOOR:
        raise ValueError(
            f"covariance B: eigenvalue {eigvals.min():.3e} below the PSD "
            f"tolerance {_EIG_FLOOR}")
    trace_sqrt = np.sqrt(np.clip(eigvals, 0.0, None)).sum()
    d2 = float(diff @ diff) + float(np.trace(stats_a.cov)) \
        + float(np.trace(stats_b.cov)) - 2.0 * float(trace_sqrt)
    return max(0.0, d2)


def _decode(net, rows):
    return np.asarray([N.forward(net, T.Tensor(row)).arr for row in rows])


def constraint_accuracy(archive, decoder, target):
    """Fraction of retained draws whose argmax class matches the target."""
    draws = archive.flat() if isinstance(archive, SampleArchive) else np.asarray(archive)
    if draws.size == 0:
        raise ValueError("empty archive")
    probs = _decode(decoder, draws)
    return float(np.mean(np.argmax(probs, axis=1) == int(target)))


def embed_images(images, embedding_net):
    """Gaussian statistics of raw images pushed through the embedding."""
    feats = _decode(embedding_net, np.asarray(images, dtype=np.float64))
    return EnsembleStats.from_samples(feats)


def embed_ensemble(archive, generator, embedding_net):
    """Statistics of generated-and-embedded retained draws."""
    draws = archive.flat() if isinstance(archive, SampleArchive) else np.asarray(archive)
    if draws.shape[0] == 0:
        raise ValueError("empty archive")
    if generator is not None:
        images = _decode(generator, draws)
    else:
        images = draws
    return embed_images(images, embedding_net)


def warmup_fid_series(archive, generator, embedding_net, reference,
                      n_points=20, window=None):
    """Frechet-to-reference over the warmup section, per chain.

    Cumulative by default; pass ``window`` for a sliding-window series so
    burn-in decay can be separated from the growing-sample-count effect.
    """
    if archive.n_warmup < 2:
        raise ValueError("archive holds no warmup draws")
    series = {}
    checkpoints = np.unique(np.linspace(2, archive.n_warmup, n_points,
                                        dtype=int))
    for chain in range(archive.n_chains):
        images = _decode(generator, archive.warmup[chain]) \
            if generator is not None else archive.warmup[chain]
        feats = _decode(embedding_net, images)
        points = []
        for count in checkpoints:
            lo = 0 if window is None else max(0, count - int(window))
            if count - lo < 2:
                continue
            stats = EnsembleStats.from_samples(feats[lo:count])
            points.append((int(count), frechet_distance(stats, reference)))
        series[chain] = points
    return series


# ---------------------------------------------------------------------------
# riddle progress metrics


class RiddleMetrics:
    """Per-checkpoint series averaged over runs, plus cumulative successes."""

    def __init__(self, iters, elbo_final_alpha, accuracy, score,
                 frac_any_correct, frac_all_correct, final_success_rate,
                 n_runs):
        self.iters = iters
        self.elbo_final_alpha = elbo_final_alpha
        self.accuracy = accuracy
        self.score = score
        self.frac_any_correct = frac_any_correct
        self.frac_all_correct = frac_all_correct
        self.final_success_rate = final_success_rate
        self.n_runs = n_runs

    def as_dict(self):
        return {
            "iters": list(self.iters),
            "elbo_final_alpha": list(self.elbo_final_alpha),
            "accuracy": list(self.accuracy),
            "score": list(self.score),
            "frac_any_correct": list(self.frac_any_correct),
            "frac_all_correct": list(self.frac_all_correct),
            "final_success_rate": self.final_success_rate,
            "n_runs": self.n_runs,
        }


def riddle_metrics(runs, truth):
    """Aggregate per-seed run records over a shared checkpoint schedule.

    Each run record holds ``batches``: a list of {iter, elbo_final_alpha,
    decoded, sat} checkpoints, where ``decoded`` lists the class tuple of
    each batch sample and ``sat`` the per-sample per-constraint satisfaction
    probabilities.
    """
    if not runs:
        raise ValueError("no runs to aggregate")
    truth = tuple(int(d) for d in truth)
    iters = [b["iter"] for b in runs[0]["batches"]]
    for run in runs:
        if [b["iter"] for b in run["batches"]] != iters:
            raise ValueError("runs do not share the checkpoint schedule")

    n_runs = len(runs)
    n_points = len(iters)
    elbo = np.zeros(n_points)
    accuracy = np.zeros(n_points)
    score = np.zeros(n_points)
    any_correct = np.zeros((n_runs, n_points), dtype=bool)
    all_correct = np.zeros((n_runs, n_points), dtype=bool)
    final_success = 0
    for r, run in enumerate(runs):
        for p, batch in enumerate(run["batches"]):
            decoded = [tuple(int(d) for d in sample)
                       for sample in batch["decoded"]]
            hits = [sample == truth for sample in decoded]
            elbo[p] += batch["elbo_final_alpha"]
            accuracy[p] += np.mean(hits)
            score[p] += float(np.mean(batch["sat"]))
            any_correct[r, p] = any(hits)
            all_correct[r, p] = all(hits) and bool(hits)
        if all_correct[r, -1]:
            final_success += 1
    elbo /= n_runs
    accuracy /= n_runs
    score /= n_runs
    frac_any = np.maximum.accumulate(any_correct, axis=1).mean(axis=0)
    frac_all = np.maximum.accumulate(all_correct, axis=1).mean(axis=0)
    return RiddleMetrics(iters, elbo, accuracy, score, frac_any, frac_all,
                         final_success / n_runs, n_runs)


# ---------------------------------------------------------------------------
# image dumps


def write_pgm(path, image):
    """8-bit binary PGM with linear [min, max] scaling per image."""
    import os
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 2:
        raise ValueError(f"PGM writer needs a 2-d image, got {image.shape}")
    lo, hi = float(image.min()), float(image.max())
    if hi > lo:
        scaled = np.round((image - lo) / (hi - lo) * 255.0)
    else:
        scaled = np.zeros_like(image)
    data = scaled.astype(np.uint8)
    tmp = f"{path}.tmp.{os.getpid()}"
    with open(tmp, "wb") as fh:
        fh.write(f"P5\n{image.shape[1]} {image.shape[0]}\n255\n".encode("ascii"))
        fh.write(data.tobytes())
    os.replace(tmp, path)
