import numpy as np
import pytest

from reasoner import diagnostics as D
from reasoner import network as N
from reasoner.archive import SampleArchive
from conftest import write_mlp_bundle


def stats_of(mean, cov, n=100):
    return D.EnsembleStats(np.asarray(mean, dtype=float),
                           np.asarray(cov, dtype=float), n)


class TestFrechet:
    def test_self_distance_zero(self, rng):
        x = rng.normal(size=(200, 6))
        stats = D.EnsembleStats.from_samples(x)
        assert D.frechet_distance(stats, stats) < 1e-8

    def test_shifted_gaussian_analytic(self, rng):
        mu = rng.normal(size=8)
        a = stats_of(np.zeros(8), np.eye(8))
        b = stats_of(mu, np.eye(8))
        assert D.frechet_distance(a, b) == pytest.approx(float(mu @ mu),
                                                         abs=1e-8)

    def test_matches_scipy_sqrtm_oracle(self, rng):
        from scipy import linalg
        for _ in range(10):
            qa = rng.normal(size=(6, 6))
            qb = rng.normal(size=(6, 6))
            cov_a = qa @ qa.T + 0.1 * np.eye(6)
            cov_b = qb @ qb.T + 0.1 * np.eye(6)
            mu_a, mu_b = rng.normal(size=6), rng.normal(size=6)
            got = D.frechet_distance(stats_of(mu_a, cov_a), stats_of(mu_b, cov_b))
            diff = mu_a - mu_b
            want = float(diff @ diff) + np.trace(
                cov_a + cov_b - 2.0 * linalg.sqrtm(cov_a @ cov_b).real)
            assert got == pytest.approx(want, abs=1e-6)

    def test_symmetry(self, rng):
        qa = rng.normal(size=(4, 4))
        qb = rng.normal(size=(4, 4))
        a = stats_of(rng.normal(size=4), qa @ qa.T + 0.1 * np.eye(4))
        b = stats_of(rng.normal(size=4), qb @ qb.T + 0.1 * np.eye(4))
        assert D.frechet_distance(a, b) == pytest.approx(
            D.frechet_distance(b, a), abs=1e-9)

    def test_zero_iff_equal(self, rng):
        q = rng.normal(size=(4, 4))
        cov = q @ q.T + 0.1 * np.eye(4)
        a = stats_of(np.zeros(4), cov)
        b = stats_of(np.zeros(4), cov * 1.5)
        assert D.frechet_distance(a, a) < 1e-10
        assert D.frechet_distance(a, b) > 1e-3

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            D.frechet_distance(stats_of(np.zeros(3), np.eye(3)),
                               stats_of(np.zeros(4), np.eye(4)))

    def test_non_psd_rejected(self):
        bad = np.diag([1.0, -0.5])
        with pytest.raises(ValueError):
            D.frechet_distance(stats_of(np.zeros(2), bad),
                               stats_of(np.zeros(2), np.eye(2)))

    def test_subsample_distance_shrinks_with_n(self, rng):
        pool = rng.normal(size=(20000, 4)) @ np.diag([1.0, 2.0, 0.5, 1.5])
        reference = D.EnsembleStats.from_samples(pool)
        med = {}
        for n in (100, 1000):
            values = []
            for _ in range(20):
                idx = rng.choice(len(pool), size=n, replace=False)
                values.append(D.frechet_distance(
                    D.EnsembleStats.from_samples(pool[idx]), reference))
            med[n] = np.median(values)
        assert med[1000] < med[100]


class TestAccuracyAndEmbedding:
    def test_all_correct(self, tmp_path, rng):
        # decoder that always answers class 2 regardless of input
        bias = np.zeros(5)
        bias[2] = 50.0
        N.write_bundle(tmp_path / "c.nwb", "c", [3], "probabilities",
                       [{"kind": "dense", "W": np.zeros((5, 3)), "b": bias},
                        {"kind": "softmax"}])
        net = N.load_bundle(tmp_path / "c.nwb")
        archive = SampleArchive(rng.normal(size=(2, 20, 3)))
        assert D.constraint_accuracy(archive, net, 2) == 1.0
        assert D.constraint_accuracy(archive, net, 3) == 0.0

    def test_permutation_invariance(self, tmp_path, rng):
        path = write_mlp_bundle(tmp_path / "c.nwb", rng, [3, 8, 5],
                                "probabilities", name="c")
        net = N.load_bundle(path)
        draws = rng.normal(size=(1, 40, 3))
        acc = D.constraint_accuracy(SampleArchive(draws), net, 1)
        perm = draws[:, rng.permutation(40), :]
        assert D.constraint_accuracy(SampleArchive(perm), net, 1) == acc

    def test_empty_archive_rejected(self, tmp_path, rng):
        path = write_mlp_bundle(tmp_path / "c.nwb", rng, [3, 5],
                                "probabilities", name="c")
        with pytest.raises(ValueError):
            D.constraint_accuracy(SampleArchive(np.zeros((1, 0, 3))),
                                  N.load_bundle(path), 0)

    def test_duplicated_halves_identical_stats(self, tmp_path, rng):
        emb_path = write_mlp_bundle(tmp_path / "e.nwb", rng, [4, 6],
                                    "logits", final=None, name="emb")
        emb = N.load_bundle(emb_path)
        half = rng.normal(size=(30, 4))
        doubled = np.concatenate([half, half])
        a = D.embed_images(half, emb)
        b = D.embed_images(doubled, emb)
        assert np.allclose(a.mean, b.mean)
        # duplicating halves scales the n-1 denominator, not the shape
        assert np.allclose(a.cov, b.cov * (2 * 30 - 1) / (2 * (30 - 1)),
                           atol=1e-12)

    def test_dataset_vs_itself_zero(self, tmp_path, rng):
        emb_path = write_mlp_bundle(tmp_path / "e.nwb", rng, [4, 6],
                                    "logits", final=None, name="emb")
        emb = N.load_bundle(emb_path)
        images = rng.normal(size=(50, 4))
        stats = D.embed_images(images, emb)
        assert D.frechet_distance(stats, stats) < 1e-8

    def test_warmup_fid_series_per_chain(self, tmp_path, rng):
        gen_path = write_mlp_bundle(tmp_path / "g.nwb", rng, [3, 8], "image",
                                    final="sigmoid", name="g")
        emb_path = write_mlp_bundle(tmp_path / "e.nwb", rng, [8, 5],
                                    "logits", final=None, name="e")
        gen, emb = N.load_bundle(gen_path), N.load_bundle(emb_path)
        archive = SampleArchive(rng.normal(size=(2, 10, 3)),
                                warmup=rng.normal(size=(2, 60, 3)))
        reference = D.embed_ensemble(archive, gen, emb)
        series = D.warmup_fid_series(archive, gen, emb, reference, n_points=6)
        assert set(series) == {0, 1}
        for points in series.values():
            assert len(points) >= 4
            assert all(f >= 0 for _, f in points)
        windowed = D.warmup_fid_series(archive, gen, emb, reference,
                                       n_points=6, window=30)
        assert set(windowed) == {0, 1}


def _run_record(batches):
    return {"seed": 0, "trace": [], "batches": batches}


def _batch(iteration, decoded, sat, elbo=-1.0):
    return {"iter": iteration, "decoded": decoded, "sat": sat,
            "elbo_final_alpha": elbo}


class TestRiddleMetrics:
    def test_all_correct_run(self):
        truth = (1, 3, 4)
        batches = [_batch(10, [[1, 3, 4]] * 4, [[1.0] * 5] * 4),
                   _batch(20, [[1, 3, 4]] * 4, [[1.0] * 5] * 4)]
        metrics = D.riddle_metrics([_run_record(batches)], truth)
        assert metrics.accuracy[-1] == 1.0
        assert metrics.frac_all_correct[-1] == 1.0
        assert metrics.final_success_rate == 1.0

    def test_cheating_mode_score_above_accuracy(self):
        # samples satisfy four of five constraints but decode wrong
        truth = (1, 3, 4)
        sat = [[1.0, 1.0, 1.0, 1.0, 0.0]] * 4
        batches = [_batch(10, [[3, 5, 8]] * 4, sat)]
        metrics = D.riddle_metrics([_run_record(batches)], truth)
        assert metrics.accuracy[-1] == 0.0
        assert metrics.score[-1] == pytest.approx(0.8)
        assert metrics.score[-1] > metrics.accuracy[-1]
        assert metrics.final_success_rate == 0.0

    def test_zero_runs_rejected(self):
        with pytest.raises(ValueError):
            D.riddle_metrics([], (1, 3, 4))

    def test_mismatched_schedules_rejected(self):
        a = _run_record([_batch(10, [[1, 3, 4]], [[1.0]])])
        b = _run_record([_batch(20, [[1, 3, 4]], [[1.0]])])
        with pytest.raises(ValueError):
            D.riddle_metrics([a, b], (1, 3, 4))

    def test_cumulative_fractions_monotone(self, rng):
        truth = (1, 3, 4)
        runs = []
        for seed in range(10):
            batches = []
            got_it = False
            for it in range(5):
                if rng.uniform() < 0.3:
                    got_it = True
                decoded = [[1, 3, 4]] if got_it else [[0, 0, 0]]
                batches.append(_batch(it * 100, decoded, [[0.5] * 5]))
            runs.append(_run_record(batches))
        metrics = D.riddle_metrics(runs, truth)
        assert (np.diff(metrics.frac_any_correct) >= 0).all()
        assert (np.diff(metrics.frac_all_correct) >= 0).all()
        assert all(0 <= v <= 1 for v in metrics.accuracy)
        assert all(0 <= v <= 1 for v in metrics.score)


class TestPgm:
    def test_writes_linear_scaled(self, tmp_path):
        img = np.array([[0.0, 0.5], [1.0, 0.25]])
        D.write_pgm(tmp_path / "x.pgm", img)
        blob = (tmp_path / "x.pgm").read_bytes()
        assert blob.startswith(b"P5\n2 2\n255\n")
        assert list(blob[-4:]) == [0, 128, 255, 64]

    def test_constant_image(self, tmp_path):
        D.write_pgm(tmp_path / "c.pgm", np.full((2, 2), 7.0))
        assert (tmp_path / "c.pgm").read_bytes()[-4:] == b"\x00" * 4
