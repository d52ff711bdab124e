"""Command-line entry point.

Commands: validate (ProblemSpec documents or NWB1 bundles), sample
(HMC or mean-field VI, single- or multi-seed), reconstruct (bind external
measurement data, emit posterior images and per-term residuals), report
(accuracy / Frechet / riddle metrics over archives).

Exit codes: 0 ok, 1 runtime failure, 2 invalid input.  Every produced file
is written atomically and listed with its hash in the run manifest; outputs
are byte-identical across reruns with the same seed.
"""

import argparse
import json
import os
import sys
import time

import numpy as np

from . import diagnostics as D
from . import hmc
from . import network
from . import probmodel as P
from . import runner
from . import tensor
from . import vi
from .archive import ArchiveError, SampleArchive

EXIT_OK, EXIT_RUNTIME, EXIT_INVALID = 0, 1, 2


def _fail(message, code):
    print(f"error: {message}", file=sys.stderr)
    return code


def _load_spec_document(path):
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def _compile(path):
    doc = _load_spec_document(path)
    return P.compile_spec(doc, base_dir=os.path.dirname(os.path.abspath(path)))


def _parse_shape(text):
    return tuple(int(part) for part in text.lower().split("x"))


def _dump_images(prefix, vectors, shape, limit=8):
    paths = []
    for index, vec in enumerate(vectors[:limit]):
        path = f"{prefix}.sample{index}.pgm"
        D.write_pgm(path, np.asarray(vec).reshape(shape))
        paths.append(path)
    return paths


# ---------------------------------------------------------------------------
# validate


def cmd_validate(args):
    path = args.path
    if not os.path.exists(path):
        return _fail(f"no such file: {path}", EXIT_INVALID)
    with open(path, "rb") as fh:
        magic = fh.read(4)
    if magic == network.MAGIC:
        try:
            net = network.load_bundle(path)
            reports = network.verify_fixtures(net)
        except network.BundleError as err:
            return _fail(str(err), EXIT_INVALID)
        bad = [r for r in reports if not r["ok"]]
        print(json.dumps({
            "kind": "bundle", "name": net.name,
            "input_shape": list(net.input_shape),
            "output_shape": list(net.output_shape),
            "output_kind": net.output_kind,
            "fixtures": len(reports),
            "fixture_failures": bad,
        }, sort_keys=True, indent=2))
        if bad:
            return _fail(f"{len(bad)} fixture(s) beyond tolerance", EXIT_INVALID)
        return EXIT_OK

    try:
        doc = _load_spec_document(path)
    except json.JSONDecodeError as err:
        return _fail(f"{path}:{err.lineno}:{err.colno}: {err.msg}", EXIT_INVALID)
    errors = P.validate_spec(doc)
    if errors:
        for item in errors:
            print(f"{path}: {item}", file=sys.stderr)
        return EXIT_INVALID
    try:
        graph = P.compile_spec(doc, base_dir=os.path.dirname(
            os.path.abspath(path)))
    except (P.SpecError, network.BundleError) as err:
        return _fail(str(err), EXIT_INVALID)
    print(json.dumps({
        "kind": "problem-spec",
        "latents": {b.name: b.dim for b in graph.blocks},
        "total_dim": graph.total_dim,
        "pipelines": [name for name, _, _ in graph.pipelines],
        "constraints": [t.name for t in graph.terms],
        "external_data": [t.name for t in graph.external_terms()],
    }, sort_keys=True, indent=2))
    return EXIT_OK


# ---------------------------------------------------------------------------
# sample


def _vi_schedule(args):
    if args.schedule:
        return vi.AnnealSchedule.parse(args.schedule)
    if args.iterations:
        return vi.AnnealSchedule([(1.0, args.iterations)])
    return vi.AnnealSchedule()


def _vi_config(args, seed=None):
    return vi.ViConfig(n_pairs=args.pairs,
                       seed=args.seed if seed is None else seed,
                       learning_rate=args.learning_rate)


def _run_vi(graph, args):
    schedule = _vi_schedule(args)
    fit = vi.fit_adam if args.method == "mf-adam" else vi.fit_linesearch
    state, trace = fit(graph, schedule, _vi_config(args))
    rng = np.random.Generator(np.random.PCG64(hmc.mix_seed(args.seed, 7)))
    archive = vi.sample_approximation(state, args.draws, rng,
                                      master_seed=args.seed)
    metrics = {
        "method": args.method,
        "iterations": schedule.total_iterations,
        "final_elbo_mean_last_50": float(np.mean(
            [r["elbo_estimate"] for r in trace[-50:]])),
        "final_grad_norm": trace[-1]["grad_norm"],
    }
    return state, trace, archive, metrics


def _run_hmc(graph, args):
    config = hmc.HmcConfig(
        n_chains=args.chains,
        n_samples=args.draws,
        leapfrog_steps=args.leapfrog_steps,
        target_acceptance=args.target_acceptance,
        warmup_iterations=args.warmup,
        master_seed=args.seed,
    )
    archive = hmc.sample(graph, config)
    rhat = hmc.gelman_rubin(archive)
    ess = hmc.effective_sample_size(archive)
    metrics = {
        "method": "hmc",
        "rhat_mean": float(rhat.mean()),
        "rhat_max": float(rhat.max()),
        "ess_mean": float(ess.mean()),
        "ess_min": float(ess.min()),
        "acceptance_per_chain": archive.acceptance_per_chain,
    }
    return archive, metrics


def cmd_sample(args):
    try:
        graph = _compile(args.spec)
    except (P.SpecError, network.BundleError, json.JSONDecodeError) as err:
        return _fail(str(err), EXIT_INVALID)
    if graph.external_terms():
        return _fail("spec declares external measurement data; use "
                     "'reasoner reconstruct' with --data", EXIT_INVALID)
    prefix = args.out
    os.makedirs(os.path.dirname(os.path.abspath(prefix)), exist_ok=True)
    started = time.time()
    outputs = []

    if args.seeds > 1:
        if args.method != "mf-linesearch":
            return _fail("--seeds sweeps require --method mf-linesearch",
                         EXIT_INVALID)
        if not args.truth:
            return _fail("--seeds sweeps require --truth", EXIT_INVALID)
        truth = tuple(int(t) for t in args.truth.split(","))
        pipeline_names = args.pipelines.split(",") if args.pipelines else \
            [name for name, _, _ in graph.pipelines][:len(truth)]
        runs, metrics = runner.run_riddle(
            graph, _vi_schedule(args), args.seeds, pipeline_names, truth,
            master_seed=args.seed, config=_vi_config(args),
            batch_every=args.batch_every, batch_size=args.batch_size)
        runs_path = f"{prefix}.runs.jsonl"
        runner.write_jsonl(runs_path, runs)
        report_path = f"{prefix}.riddle.json"
        payload = metrics.as_dict()
        payload["truth"] = list(truth)
        payload["pipelines"] = pipeline_names
        runner.write_json(report_path, payload)
        outputs += [runs_path, report_path]
        print(f"success rate: {metrics.final_success_rate:.2%} over "
              f"{metrics.n_runs} seeds")
    else:
        try:
            if args.method == "hmc":
                archive, metrics = _run_hmc(graph, args)
                trace = None
            else:
                _, trace, archive, metrics = _run_vi(graph, args)
        except hmc.DivergenceError as err:
            runner.write_json(f"{prefix}.error.json", {"error": str(err)})
            return _fail(str(err), EXIT_RUNTIME)
        except vi.ElboDivergenceError as err:
            vi.write_trace(f"{prefix}.trace.jsonl", err.trace)
            runner.write_json(f"{prefix}.error.json", {"error": str(err)})
            return _fail(f"{err} (partial trace saved)", EXIT_RUNTIME)
        archive_path = f"{prefix}.nsa"
        archive.save(archive_path)
        metrics_path = f"{prefix}.metrics.json"
        runner.write_json(metrics_path, metrics)
        outputs += [archive_path, metrics_path]
        if trace is not None:
            trace_path = f"{prefix}.trace.jsonl"
            vi.write_trace(trace_path, trace)
            outputs.append(trace_path)
        if args.dump_images:
            if not args.image_pipeline or not args.image_shape:
                return _fail("--dump-images needs --image-pipeline and "
                             "--image-shape", EXIT_INVALID)
            shape = _parse_shape(args.image_shape)
            vectors = [graph.pipeline_values(xi, [args.image_pipeline])
                       [args.image_pipeline] for xi in archive.flat()[:8]]
            outputs += _dump_images(prefix, vectors, shape)

    manifest_path = f"{prefix}.manifest.json"
    runner.write_manifest(manifest_path, args.spec, _public_config(args),
                          outputs)
    print(f"wall clock: {time.time() - started:.1f}s", file=sys.stderr)
    for path in outputs + [manifest_path]:
        print(path)
    return EXIT_OK


def _public_config(args):
    skip = {"func", "spec", "out", "data", "compare"}
    return {k: v for k, v in vars(args).items()
            if k not in skip and not callable(v)}


# ---------------------------------------------------------------------------
# reconstruct


def _load_measurement(path):
    with open(path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    if isinstance(payload, list):
        return {None: np.asarray(payload, dtype=np.float64)}
    if isinstance(payload, dict):
        out = {}
        for name, value in payload.items():
            if isinstance(value, dict):
                value = value["data"]
            out[name] = np.asarray(value, dtype=np.float64).reshape(-1)
        return out
    raise ValueError("measurement file must be a JSON array or object")


def _bind_measurement(graph, data):
    external = graph.external_terms()
    if None in data:
        if len(external) != 1:
            raise ValueError(
                f"flat measurement array is ambiguous: spec has "
                f"{len(external)} external terms")
        data = {external[0].name: data[None]}
    graph.bind_external(data)


def _reconstruct_one(spec_path, data, args):
    graph = _compile(spec_path)
    _bind_measurement(graph, data)
    if args.method == "hmc":
        archive, metrics = _run_hmc(graph, args)
        mean_latent = archive.flat().mean(axis=0)
        trace = None
    else:
        state, trace, archive, metrics = _run_vi(graph, args)
        mean_latent = state.mean
    scalar_stats = {}
    for name, _, _ in graph.pipelines:
        values = np.asarray([graph.pipeline_values(xi, [name])[name]
                             for xi in archive.flat()])
        if values.shape[1] == 1:
            scalar_stats[name] = {"mean": float(values.mean()),
                                  "std": float(values.std(ddof=1))}
    residuals = {}
    mean_values = graph.pipeline_values(mean_latent)
    sats = graph.term_satisfactions(mean_latent)
    for term in graph.terms:
        if isinstance(term, P.GaussianTerm):
            pred = mean_values[term.pipeline].reshape(-1)
            resid = pred - term.target.arr
            residuals[term.name] = {
                "rms_residual": float(np.sqrt(np.mean(resid ** 2))),
                "noise_std_mean": float(np.sqrt(term.noise_var).mean()),
            }
        else:
            residuals[term.name] = {"satisfaction": sats[term.name]}
    return graph, archive, trace, metrics, {
        "posterior_mean_latent": mean_latent.tolist(),
        "scalar_pipeline_stats": scalar_stats,
        "per_term": residuals,
    }


def cmd_reconstruct(args):
    try:
        data = _load_measurement(args.data)
        graph, archive, trace, metrics, report = _reconstruct_one(
            args.spec, data, args)
    except (P.SpecError, network.BundleError, P.ExternalDataError,
            ValueError) as err:
        return _fail(str(err), EXIT_INVALID)
    except (hmc.DivergenceError, vi.ElboDivergenceError) as err:
        return _fail(str(err), EXIT_RUNTIME)
    prefix = args.out
    os.makedirs(os.path.dirname(os.path.abspath(prefix)), exist_ok=True)
    started = time.time()
    outputs = []
    archive_path = f"{prefix}.nsa"
    archive.save(archive_path)
    outputs.append(archive_path)
    if trace is not None:
        vi.write_trace(f"{prefix}.trace.jsonl", trace)
        outputs.append(f"{prefix}.trace.jsonl")
    if args.image_pipeline and args.image_shape:
        shape = _parse_shape(args.image_shape)
        mean_latent = np.asarray(report["posterior_mean_latent"])
        decoded = [graph.pipeline_values(xi, [args.image_pipeline])
                   [args.image_pipeline] for xi in archive.flat()[:4]]
        mean_image = np.mean(
            [graph.pipeline_values(xi, [args.image_pipeline])
             [args.image_pipeline] for xi in archive.flat()], axis=0)
        D.write_pgm(f"{prefix}.mean.pgm", mean_image.reshape(shape))
        outputs.append(f"{prefix}.mean.pgm")
        outputs += _dump_images(prefix, decoded, shape, limit=4)
    report["metrics"] = metrics
    if args.compare:
        try:
            _, _, _, _, other = _reconstruct_one(args.compare, data, args)
        except (P.SpecError, network.BundleError, P.ExternalDataError,
                ValueError) as err:
            return _fail(str(err), EXIT_INVALID)
        comparison = {}
        for name, stats in report["scalar_pipeline_stats"].items():
            if name in other["scalar_pipeline_stats"]:
                comparison[name] = {
                    "primary_std": stats["std"],
                    "compare_std": other["scalar_pipeline_stats"][name]["std"],
                }
        report["comparison"] = {"spec": os.path.abspath(args.compare),
                                "scalar_pipelines": comparison}
    report_path = f"{prefix}.report.json"
    runner.write_json(report_path, report)
    outputs.append(report_path)
    manifest_path = f"{prefix}.manifest.json"
    runner.write_manifest(manifest_path, args.spec, _public_config(args),
                          outputs)
    print(f"wall clock: {time.time() - started:.1f}s", file=sys.stderr)
    for path in outputs + [manifest_path]:
        print(path)
    return EXIT_OK


# ---------------------------------------------------------------------------
# report


def _pipeline_input(graph, name):
    for pipe_name, input_name, _ in graph.pipelines:
        if pipe_name == name:
            return input_name
    return None


def _accuracy_metrics(graph, archive, args):
    independent = None
    if args.classifier:
        independent = network.load_bundle(args.classifier)
    draws = archive.flat()
    out = {}
    for term in graph.terms:
        if not isinstance(term, P.CategoricalTerm):
            continue
        hits = 0
        indep_hits = 0
        source = _pipeline_input(graph, term.pipeline)
        for xi in draws:
            wanted = [term.pipeline] + ([source] if independent is not None
                                        and source else [])
            values = graph.pipeline_values(xi, wanted)
            hits += int(np.argmax(values[term.pipeline])) == term.target
            if independent is not None and source:
                probs = network.forward(
                    independent, tensor.Tensor(values[source].reshape(-1)))
                indep_hits += int(np.argmax(probs.arr)) == term.target
        entry = {"target": term.target,
                 "in_model_accuracy": hits / len(draws)}
        if independent is not None and source:
            entry["independent_accuracy"] = indep_hits / len(draws)
        out[term.name] = entry
    return out


def _load_ref_stats(path, label):
    with open(path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    entry = payload["labels"][str(label)] if label is not None \
        else payload["pooled"]
    return D.EnsembleStats(np.asarray(entry["mean"]),
                           np.asarray(entry["cov"]), int(entry["n"]))


def _fid_metrics(graph, archive, args):
    if not (args.embedding and args.ref_stats and args.image_pipeline):
        raise ValueError("fid metrics need --embedding, --ref-stats and "
                         "--image-pipeline")
    embedding = network.load_bundle(args.embedding)
    reference = _load_ref_stats(args.ref_stats, args.ref_label)
    images = np.asarray([graph.pipeline_values(xi, [args.image_pipeline])
                         [args.image_pipeline] for xi in archive.flat()])
    stats = D.embed_images(images, embedding)
    out = {"frechet": D.frechet_distance(stats, reference),
           "n_samples": int(images.shape[0])}
    if archive.n_warmup >= 2 and args.warmup_fid:
        series = {}
        for chain in range(archive.n_chains):
            imgs = np.asarray(
                [graph.pipeline_values(xi, [args.image_pipeline])
                 [args.image_pipeline] for xi in archive.warmup[chain]])
            feats = np.asarray([network.forward(
                embedding, tensor.Tensor(img)).arr for img in imgs])
            points = []
            checkpoints = np.unique(np.linspace(
                2, archive.n_warmup, 12, dtype=int))
            for count in checkpoints:
                stats_c = D.EnsembleStats.from_samples(feats[:count])
                points.append([int(count),
                               D.frechet_distance(stats_c, reference)])
            series[str(chain)] = points
        out["warmup_series_cumulative"] = series
    return out


def _riddle_metrics_from_runs(args):
    if not (args.runs and args.truth):
        raise ValueError("riddle metrics need --runs and --truth")
    runs = []
    with open(args.runs, "r", encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                runs.append(json.loads(line))
    truth = tuple(int(t) for t in args.truth.split(","))
    return D.riddle_metrics(runs, truth).as_dict()


def cmd_report(args):
    try:
        archive = SampleArchive.load(args.archive) if args.archive else None
        graph = _compile(args.spec) if args.spec else None
    except (ArchiveError, P.SpecError, network.BundleError) as err:
        return _fail(str(err), EXIT_INVALID)
    if graph is not None and archive is not None \
            and archive.dim != graph.total_dim:
        return _fail(f"archive dim {archive.dim} != spec latent dim "
                     f"{graph.total_dim}", EXIT_INVALID)
    wanted = args.metrics.split(",")
    report = {}
    try:
        for metric in wanted:
            if metric == "acc":
                report["acc"] = _accuracy_metrics(graph, archive, args)
            elif metric == "fid":
                report["fid"] = _fid_metrics(graph, archive, args)
            elif metric == "riddle":
                report["riddle"] = _riddle_metrics_from_runs(args)
            else:
                return _fail(f"unknown metric {metric!r}", EXIT_INVALID)
    except (ValueError, network.BundleError) as err:
        return _fail(str(err), EXIT_INVALID)
    if args.out:
        runner.write_json(f"{args.out}.report.json", report)
        if args.csv and "riddle" in report:
            _riddle_csv(f"{args.out}.riddle.csv", report["riddle"])
            print(f"{args.out}.riddle.csv")
        print(f"{args.out}.report.json")
    else:
        print(json.dumps(report, sort_keys=True, indent=2))
    return EXIT_OK


def _riddle_csv(path, payload):
    import csv
    tmp = f"{path}.tmp.{os.getpid()}"
    with open(tmp, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iter", "elbo_final_alpha", "accuracy", "score",
                         "frac_any_correct", "frac_all_correct"])
        for row in zip(payload["iters"], payload["elbo_final_alpha"],
                       payload["accuracy"], payload["score"],
                       payload["frac_any_correct"],
                       payload["frac_all_correct"]):
            writer.writerow(row)
    os.replace(tmp, path)


# ---------------------------------------------------------------------------


def build_parser():
    parser = argparse.ArgumentParser(
        prog="reasoner",
        description="Bayesian reasoning over chained generative and "
                    "classifier networks")
    sub = parser.add_subparsers(dest="command", required=True)

    v = sub.add_parser("validate", help="validate a ProblemSpec or bundle")
    v.add_argument("path")
    v.set_defaults(func=cmd_validate)

    def sampling_flags(p):
        p.add_argument("--method", default="hmc",
                       choices=["hmc", "mf-adam", "mf-linesearch"])
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--chains", type=int, default=4)
        p.add_argument("--draws", type=int, default=4000,
                       help="total retained draws (hmc) or q samples (vi)")
        p.add_argument("--warmup", type=int, default=1000)
        p.add_argument("--leapfrog-steps", type=int, default=10)
        p.add_argument("--target-acceptance", type=float, default=0.6)
        p.add_argument("--schedule", default=None,
                       help="alpha:iters,... annealing stages (vi)")
        p.add_argument("--iterations", type=int, default=None,
                       help="single-stage vi budget (alpha 1)")
        p.add_argument("--pairs", type=int, default=5,
                       help="antithetic sample pairs per ELBO estimate")
        p.add_argument("--learning-rate", type=float, default=0.1)
        p.add_argument("--image-pipeline", default=None)
        p.add_argument("--image-shape", default=None, help="e.g. 8x8")

    s = sub.add_parser("sample", help="draw posterior samples")
    s.add_argument("spec")
    s.add_argument("--out", required=True, help="output path prefix")
    sampling_flags(s)
    s.add_argument("--seeds", type=int, default=1,
                   help="run a multi-seed sweep (mf-linesearch only)")
    s.add_argument("--truth", default=None,
                   help="comma-separated solution tuple for sweeps")
    s.add_argument("--pipelines", default=None,
                   help="probability pipelines to decode in sweeps")
    s.add_argument("--batch-every", type=int, default=50)
    s.add_argument("--batch-size", type=int, default=10)
    s.add_argument("--dump-images", action="store_true")
    s.set_defaults(func=cmd_sample)

    r = sub.add_parser("reconstruct",
                       help="posterior from degraded measurement data")
    r.add_argument("spec")
    r.add_argument("--data", required=True, help="measurement JSON file")
    r.add_argument("--out", required=True)
    r.add_argument("--compare", default=None,
                   help="second spec for a with/without comparison")
    sampling_flags(r)
    r.set_defaults(func=cmd_reconstruct, method="mf-linesearch", seeds=1)

    q = sub.add_parser("report", help="metrics over an archive")
    q.add_argument("archive", nargs="?", default=None)
    q.add_argument("spec", nargs="?", default=None)
    q.add_argument("--metrics", required=True, help="acc,fid,riddle")
    q.add_argument("--classifier", default=None,
                   help="independently trained classifier bundle (acc)")
    q.add_argument("--embedding", default=None, help="embedding bundle (fid)")
    q.add_argument("--ref-stats", default=None,
                   help="reference statistics JSON (fid)")
    q.add_argument("--ref-label", default=None, help="reference label (fid)")
    q.add_argument("--image-pipeline", default=None)
    q.add_argument("--warmup-fid", action="store_true")
    q.add_argument("--runs", default=None, help="runs.jsonl from a sweep")
    q.add_argument("--truth", default=None)
    q.add_argument("--out", default=None)
    q.add_argument("--csv", action="store_true")
    q.set_defaults(func=cmd_report)

    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
