"""Acceptance suite: one test per release criterion, stated tolerances.

Run with `pytest tests/test_acceptance.py -v -s` to see one line per
criterion.  The multi-seed riddle criterion dominates the runtime (its
budget is ten minutes of single-core work).
"""

import hashlib
import itertools
import json
import math
import os
import time

import numpy as np

from reasoner import cli
from reasoner import diagnostics as D
from reasoner import hmc
from reasoner import network as N
from reasoner import probmodel as P
from reasoner import runner
from reasoner import tensor as T
from reasoner import vi
from conftest import finite_diff_grad, linear_gaussian_graph, rel_err

SPEC_DIR = os.path.join(os.path.dirname(__file__), "..", "specs")
RIDDLE_SPEC = os.path.join(SPEC_DIR, "riddle_synthetic.json")


def _report(name):
    print(f"\nACCEPTANCE {name}: PASS", flush=True)


def _random_graph(rng, flavor):
    """Small random model covering one likelihood-type mix."""
    if flavor == 0:   # prior only
        return P.compile_spec({"latents": [{"name": "z", "dim": 6}]})
    if flavor == 1:   # gaussian through degradations
        a = rng.normal(size=(16, 5))
        bundle = N.NetworkBundle("g", [5], "image", [
            N.LayerSpec("dense", weight=T.Tensor(a, const=True),
                        bias=T.Tensor(rng.normal(size=16), const=True)),
            N.LayerSpec("sigmoid")])
        doc = {
            "latents": [{"name": "z", "dim": 5}],
            "pipelines": [
                {"name": "img", "input": "z", "steps": [{"net": "g"}]},
                {"name": "small", "input": "img",
                 "steps": [{"op": "coarsen", "shape": [4, 4], "factor": 2}]},
                {"name": "meas", "input": "small",
                 "steps": [{"op": "mask", "masked": [1]}]},
            ],
            "constraints": [{"type": "gaussian", "input": "meas",
                             "target": rng.normal(size=3).tolist(),
                             "noise_cov": 0.5}],
        }
        return P.compile_spec(doc, networks={"g": bundle})
    if flavor == 2:   # tempered categorical on an MLP classifier
        w1 = rng.normal(size=(12, 6))
        w2 = rng.normal(size=(8, 12))
        bundle = N.NetworkBundle("c", [6], "probabilities", [
            N.LayerSpec("dense", weight=T.Tensor(w1, const=True),
                        bias=T.Tensor(np.zeros(12), const=True)),
            N.LayerSpec("tanh"),
            N.LayerSpec("dense", weight=T.Tensor(w2, const=True),
                        bias=T.Tensor(np.zeros(8), const=True)),
            N.LayerSpec("softmax")])
        doc = {
            "latents": [{"name": "z", "dim": 6}],
            "pipelines": [{"name": "p", "input": "z", "steps": [{"net": "c"}]}],
            "constraints": [{"type": "categorical", "input": "p",
                             "target": int(rng.integers(0, 8)),
                             "alpha": float(rng.uniform(1, 50))}],
        }
        return P.compile_spec(doc, networks={"c": bundle})
    if flavor == 3:   # logic tensors of every arity over softmax pipelines
        entries2 = [[i, i + 2] for i in range(8)]
        entries3 = [[i, j, i + j] for i in range(10) for j in range(10)
                    if i + j <= 9]
        doc = {
            "latents": [{"name": f"d{i}", "dim": 10} for i in range(3)],
            "pipelines": [{"name": f"p{i}", "input": f"d{i}",
                           "steps": [{"op": "softmax"}]} for i in range(3)],
            "constraints": [
                {"type": "logic", "inputs": ["p0"],
                 "entries": [[1], [3], [5]], "alpha": 2.0},
                {"type": "logic", "inputs": ["p0", "p1"],
                 "entries": entries2, "alpha": 1.5},
                {"type": "logic", "inputs": ["p0", "p1", "p2"],
                 "entries": entries3, "alpha": 3.0},
            ],
        }
        return P.compile_spec(doc)
    # expectation-value attribute into a gaussian
    doc = {
        "latents": [{"name": "z", "dim": 10}],
        "pipelines": [
            {"name": "p", "input": "z", "steps": [{"op": "softmax"}]},
            {"name": "attr", "input": "p",
             "steps": [{"op": "expectation", "values": list(range(10))}]},
        ],
        "constraints": [{"type": "gaussian", "input": "attr",
                         "target": [4.0], "noise_cov": 1.0}],
    }
    return P.compile_spec(doc)


def test_gradient_correctness_all_likelihood_types():
    """100 random (graph, xi) pairs, reverse mode vs central differences."""
    started = time.monotonic()
    rng = np.random.default_rng(101)
    checked = 0
    while checked < 100:
        graph = _random_graph(rng, checked % 5)
        for _ in range(5):
            xi = rng.uniform(-2, 2, size=graph.total_dim)
            _, grad = graph.logp_and_grad(xi)
            fd = finite_diff_grad(graph.log_density, xi)
            assert rel_err(grad, fd, floor=1e-4) < 1e-4
            checked += 1
    elapsed = time.monotonic() - started
    assert elapsed < 60.0
    _report(f"gradient correctness (100 pairs, {elapsed:.1f}s)")


def test_linear_gaussian_oracle_hmc_and_vi():
    started = time.monotonic()
    rng = np.random.default_rng(202)

    # (a) HMC moments against the closed form, 4 chains x 2000 draws
    graph, oracle = linear_gaussian_graph(rng, d_latent=6, d_obs=9)
    config = hmc.HmcConfig(n_chains=4, n_samples=8000,
                           warmup_iterations=600, master_seed=1)
    archive = hmc.sample(graph, config)
    ess = hmc.effective_sample_size(archive)
    flat = archive.flat()
    sd = np.sqrt(np.diag(oracle.cov))
    for d in range(6):
        se_mean = sd[d] / math.sqrt(ess[d])
        assert abs(flat[:, d].mean() - oracle.mean[d]) < 4 * se_mean
        se_var = oracle.cov[d, d] * math.sqrt(2.0 / ess[d])
        assert abs(flat[:, d].var(ddof=1) - oracle.cov[d, d]) < 4 * se_var

    # (b) mean-field VI: 1-dim KL and 10-dim marginal means
    graph1, oracle1 = linear_gaussian_graph(rng, d_latent=1, d_obs=3)
    state1, _ = vi.fit_adam(graph1, vi.AnnealSchedule([(1.0, 1500)]),
                            vi.ViConfig(seed=4, learning_rate=0.05))
    cov_q = np.diag(state1.sigma ** 2)
    inv_p = oracle1.precision
    delta = oracle1.mean - state1.mean
    kl = 0.5 * (np.trace(inv_p @ cov_q) + delta @ inv_p @ delta - 1
                + np.log(np.linalg.det(oracle1.cov) / np.prod(state1.sigma ** 2)))
    assert kl < 1e-3

    graph10, oracle10 = linear_gaussian_graph(rng, d_latent=10, d_obs=14)
    state10, _ = vi.fit_adam(graph10, vi.AnnealSchedule([(1.0, 2000)]),
                             vi.ViConfig(seed=4, learning_rate=0.05))
    assert np.max(np.abs(state10.mean - oracle10.mean)) < 1e-2

    elapsed = time.monotonic() - started
    assert elapsed < 120.0
    _report(f"linear-Gaussian oracle: HMC moments, VI KL={kl:.2e} "
            f"({elapsed:.1f}s)")


def test_leapfrog_reversibility_and_energy():
    graph = P.compile_spec({"latents": [{"name": "z", "dim": 1}]})
    gen = np.random.default_rng(20260809)
    inv_mass = np.ones(1)

    graph6 = P.compile_spec({"latents": [{"name": "z", "dim": 6}]})
    xi = gen.standard_normal(6)
    rho = gen.standard_normal(6)
    xi2, rho2 = hmc.leapfrog(graph6, xi, rho, 0.1, 10, np.ones(6))
    xi3, rho3 = hmc.leapfrog(graph6, xi2, -rho2, 0.1, 10, np.ones(6))
    reversal = max(np.max(np.abs(xi3 - xi)), np.max(np.abs(-rho3 - rho)))
    assert reversal < 1e-10

    per_step, trajectory = [], []
    for _ in range(20):
        q = gen.standard_normal(1)
        p = gen.standard_normal(1)
        energies = [hmc.hamiltonian(graph, q, p, inv_mass)]
        for _ in range(10):
            q, p = hmc.leapfrog(graph, q, p, 0.1, 1, inv_mass)
            energies.append(hmc.hamiltonian(graph, q, p, inv_mass))
        energies = np.asarray(energies)
        per_step.append(np.abs(np.diff(energies)).max())
        trajectory.append(abs(energies[-1] - energies[0]))
    # trajectory-total |dH| is (eps^2/8)*d||q||^2 on this target and exceeds
    # 1e-3 for typical states; the bounded quantity is the per-step error
    assert max(per_step) < 1e-3
    assert float(np.median(trajectory)) < 1e-3
    _report(f"leapfrog: reversal {reversal:.1e}, max per-step |dH| "
            f"{max(per_step):.1e}")


def test_diagnostics_oracles():
    rng = np.random.default_rng(303)

    iid = rng.standard_normal((4, 5000, 3))
    assert float(hmc.gelman_rubin(iid).mean()) < 1.01
    displaced = np.concatenate([rng.standard_normal((1, 2000, 2)),
                                rng.standard_normal((1, 2000, 2)) + 10.0])
    assert (hmc.gelman_rubin(displaced) > 2.0).all()

    phi, n = 0.9, 10000
    chains = np.empty((2, n, 1))
    for c in range(2):
        x = 0.0
        noise = rng.standard_normal(n) * math.sqrt(1 - phi * phi)
        for t in range(n):
            x = phi * x + noise[t]
            chains[c, t, 0] = x
    ess = float(hmc.effective_sample_size(chains)[0])
    analytic = 2 * n * (1 - phi) / (1 + phi)
    assert abs(ess - analytic) / analytic < 0.30

    mu = rng.normal(size=8)
    shifted = D.frechet_distance(
        D.EnsembleStats(np.zeros(8), np.eye(8), 100),
        D.EnsembleStats(mu, np.eye(8), 100))
    assert abs(shifted - float(mu @ mu)) < 1e-8

    from scipy import linalg
    qa, qb = rng.normal(size=(6, 6)), rng.normal(size=(6, 6))
    cov_a = qa @ qa.T + 0.1 * np.eye(6)
    cov_b = qb @ qb.T + 0.1 * np.eye(6)
    mu_a, mu_b = rng.normal(size=6), rng.normal(size=6)
    got = D.frechet_distance(D.EnsembleStats(mu_a, cov_a, 50),
                             D.EnsembleStats(mu_b, cov_b, 50))
    want = float((mu_a - mu_b) @ (mu_a - mu_b)) + float(np.trace(
        cov_a + cov_b - 2.0 * linalg.sqrtm(cov_a @ cov_b).real))
    assert abs(got - want) < 1e-6
    _report(f"diagnostics oracles: ESS {ess:.0f} vs {analytic:.0f}, "
            f"frechet err {abs(got - want):.1e}")


def test_logic_tensor_oracles():
    rng = np.random.default_rng(404)
    entries_a = [(i, i + 2) for i in range(8)]
    entries_b = [(i, j, i + j) for i in range(10) for j in range(10)
                 if i + j <= 9]

    def enumerate_contract(entries, probs):
        total = 0.0
        table = {tuple(e) for e in entries}
        for combo in itertools.product(*[range(len(p)) for p in probs]):
            if combo in table:
                value = 1.0
                for p, i in zip(probs, combo):
                    value *= p[i]
                total += value
        return total

    worst = 0.0
    for entries, dims in ((entries_a, (10, 10)), (entries_b, (10, 10, 10))):
        logic = P.LogicTensor(entries, dims)
        for _ in range(20):
            probs = [rng.dirichlet(np.ones(d)) for d in dims]
            got = float(P.contract_logic(
                logic, [T.Tensor(p) for p in probs]).arr)
            worst = max(worst, abs(got - enumerate_contract(entries, probs)))
        assert worst < 1e-12
        for _ in range(10):
            combo = tuple(rng.integers(0, 10, size=len(dims)))
            onehots = []
            for d, i in zip(dims, combo):
                v = np.zeros(d)
                v[i] = 1.0
                onehots.append(T.Tensor(v))
            value = float(P.contract_logic(logic, onehots).arr)
            assert value == (1.0 if combo in {tuple(e) for e in entries}
                             else 0.0)
    _report(f"logic tensors: max enumeration error {worst:.1e}")


def test_synthetic_riddle_success_rate():
    """50 annealed line-search seeds solve the three-digit riddle."""
    started = time.monotonic()
    graph = P.compile_file(RIDDLE_SPEC)
    schedule = vi.AnnealSchedule()   # alpha 0.5/1/3/10, 500 iterations each
    runs, metrics = runner.run_riddle(
        graph, schedule, n_seeds=50, pipeline_names=["p1", "p2", "p3"],
        truth=(1, 3, 4), master_seed=0, batch_every=500, batch_size=10)
    elapsed = time.monotonic() - started
    assert metrics.final_success_rate >= 0.80
    assert elapsed < 600.0
    _report(f"synthetic riddle: {metrics.final_success_rate:.0%} of 50 seeds "
            f"all-correct (1,3,4) in {elapsed:.0f}s")


def test_determinism_byte_identical_commands(tmp_path):
    rng = np.random.default_rng(505)
    a = rng.normal(size=(6, 4))
    N.write_bundle(tmp_path / "g.nwb", "gen", [4], "image",
                   [{"kind": "dense", "W": a, "b": np.zeros(6)}])
    doc = {
        "latents": [{"name": "z", "dim": 4}],
        "networks": [{"name": "gen", "bundle": "g.nwb"}],
        "pipelines": [{"name": "img", "input": "z", "steps": [{"net": "gen"}]}],
        "constraints": [{"name": "meas", "type": "gaussian", "input": "img",
                         "target": rng.normal(size=6).tolist(),
                         "noise_cov": 1.0}],
    }
    spec = tmp_path / "lg.json"
    spec.write_text(json.dumps(doc))
    ext = json.loads(spec.read_text())
    ext["constraints"][0]["target"] = "external"
    spec_ext = tmp_path / "lg_ext.json"
    spec_ext.write_text(json.dumps(ext))
    data = tmp_path / "y.json"
    data.write_text(json.dumps({"meas": rng.normal(size=6).tolist()}))

    commands = {
        "sample-hmc": ["sample", str(spec), "--method", "hmc", "--chains",
                       "2", "--draws", "300", "--warmup", "150", "--seed",
                       "3", "--out", str(tmp_path / "h")],
        "sample-mf": ["sample", str(spec), "--method", "mf-linesearch",
                      "--iterations", "60", "--draws", "40", "--seed", "3",
                      "--out", str(tmp_path / "m")],
        "reconstruct": ["reconstruct", str(spec_ext), "--data", str(data),
                        "--iterations", "60", "--seed", "3",
                        "--out", str(tmp_path / "r")],
        "sweep": ["sample", RIDDLE_SPEC, "--method", "mf-linesearch",
                  "--seeds", "2", "--truth", "1,3,4", "--schedule",
                  "0.5:30,10:30", "--batch-every", "30",
                  "--out", str(tmp_path / "s")],
    }
    for name, argv in commands.items():
        assert cli.main(list(argv)) == 0
        produced = sorted(str(p) for p in tmp_path.iterdir()
                          if p.is_file() and p.suffix in
                          (".nsa", ".json", ".jsonl", ".pgm")
                          and p.name.split(".")[0] in "hmrs")
        first = {p: hashlib.sha256(open(p, "rb").read()).hexdigest()
                 for p in produced}
        assert cli.main(list(argv)) == 0
        second = {p: hashlib.sha256(open(p, "rb").read()).hexdigest()
                  for p in produced}
        assert first == second, f"{name} outputs changed across reruns"
        for p in produced:
            os.unlink(p)
    _report("determinism: byte-identical outputs for sample/reconstruct/sweep")
