"""Train every toy network and export the artifact directory.

Artifacts: generator.nwb, digit_classifier.nwb,
digit_classifier_independent.nwb, odd_classifier.nwb, circle_classifier.nwb,
embedding.nwb, reference_stats.json, zoo_manifest.json.  Builds are
deterministic given the seeds baked in below.
"""

import argparse
import hashlib
import json
import os
import sys

import numpy as np

from . import __version__
from .data import circle_labels, digits_dataset, parity_labels, split
from .export import reference_forward, write_bundle
from .train import (embedding_from_classifier, train_classifier,
                    train_generator)

SEEDS = {
    "generator": 11,
    "digit": 21,
    "digit_independent": 22,
    "odd": 23,
    "circle": 24,
    "embedding": 25,
    "split": 7,
    "split_independent": 8,
}
ACCURACY_FLOORS = {"digit_classifier": 0.93,
                   "digit_classifier_independent": 0.93,
                   "odd_classifier": 0.93, "circle_classifier": 0.90}


class BuildError(RuntimeError):
    pass


def _sha256(path):
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        digest.update(fh.read())
    return digest.hexdigest()


def _class_balance(decoder_layers, classifier_layers, n_draws=2000, seed=99):
    """Frequency of each decoded class over prior draws of the generator."""
    rng = np.random.default_rng(seed)
    counts = np.zeros(10)
    latent_dim = np.asarray(decoder_layers[0]["W"]).shape[1]
    for _ in range(n_draws):
        xi = rng.standard_normal(latent_dim)
        image = reference_forward(decoder_layers, xi)
        probs = reference_forward(classifier_layers, image)
        counts[int(np.argmax(probs))] += 1
    return (counts / n_draws).tolist()


def build(out_dir):
    os.makedirs(out_dir, exist_ok=True)
    x, y = digits_dataset()
    (x_train, y_train), (x_test, y_test) = split(x, y, SEEDS["split"])
    (xi_train, yi_train), (xi_test, yi_test) = split(
        x, y, SEEDS["split_independent"])

    fixture_rng = np.random.default_rng(1234)
    artifacts = {}
    metrics = {}

    def export(filename, *args, **kwargs):
        path = os.path.join(out_dir, filename)
        write_bundle(path, *args, **kwargs)
        artifacts[filename] = path
        return path

    print("training generator (VAE decoder)...", flush=True)
    decoder, gen_info = train_generator(x_train, SEEDS["generator"])

    print("training classifiers...", flush=True)
    digit_layers, digit_acc = train_classifier(
        x_train, y_train, x_test, y_test, 10, SEEDS["digit"])
    indep_layers, indep_acc = train_classifier(
        xi_train, yi_train, xi_test, yi_test, 10,
        SEEDS["digit_independent"])
    odd_layers, odd_acc = train_classifier(
        x_train, parity_labels(y_train), x_test, parity_labels(y_test), 2,
        SEEDS["odd"], hidden=32)
    circle_layers, circle_acc = train_classifier(
        x_train, circle_labels(y_train), x_test, circle_labels(y_test), 2,
        SEEDS["circle"], hidden=32)
    embed_source, embed_acc = train_classifier(
        x_train, y_train, x_test, y_test, 10, SEEDS["embedding"], hidden=32)
    embedding_layers = embedding_from_classifier(embed_source)

    metrics["digit_classifier"] = digit_acc
    metrics["digit_classifier_independent"] = indep_acc
    metrics["odd_classifier"] = odd_acc
    metrics["circle_classifier"] = circle_acc
    metrics["embedding_source_classifier"] = embed_acc
    for name, floor in ACCURACY_FLOORS.items():
        if metrics[name] < floor:
            raise BuildError(
                f"{name} held-out accuracy {metrics[name]:.3f} below the "
                f"{floor} floor")

    balance = _class_balance(decoder, digit_layers)
    metrics["generator_class_balance"] = balance
    if min(balance) < 0.02:
        raise BuildError(f"generator collapsed: class balance {balance}")

    parity_agreement = _parity_agreement(digit_layers, odd_layers, x_test)
    metrics["odd_vs_digit_parity_agreement"] = parity_agreement

    print("exporting bundles...", flush=True)
    gen_fixtures = [np.zeros(16)] + [fixture_rng.standard_normal(16)
                                     for _ in range(7)]
    export("generator.nwb", "digit-generator", [16], "image", decoder,
           fixture_inputs=gen_fixtures,
           metadata={"seed": SEEDS["generator"],
                     "training": gen_info,
                     "class_balance": balance})
    image_fixtures = [x_test[i] for i in range(8)]
    export("digit_classifier.nwb", "digit-classifier", [64], "probabilities",
           digit_layers, fixture_inputs=image_fixtures,
           metadata={"seed": SEEDS["digit"], "test_accuracy": digit_acc})
    export("digit_classifier_independent.nwb", "digit-classifier-independent",
           [64], "probabilities", indep_layers,
           fixture_inputs=[xi_test[i] for i in range(8)],
           metadata={"seed": SEEDS["digit_independent"],
                     "test_accuracy": indep_acc})
    export("odd_classifier.nwb", "odd-classifier", [64], "probabilities",
           odd_layers, fixture_inputs=image_fixtures,
           metadata={"seed": SEEDS["odd"], "test_accuracy": odd_acc,
                     "classes": ["even", "odd"]})
    export("circle_classifier.nwb", "circle-classifier", [64],
           "probabilities", circle_layers, fixture_inputs=image_fixtures,
           metadata={"seed": SEEDS["circle"], "test_accuracy": circle_acc,
                     "classes": ["no-circle", "circle"]})
    export("embedding.nwb", "digit-embedding", [64], "logits",
           embedding_layers, fixture_inputs=image_fixtures,
           metadata={"seed": SEEDS["embedding"], "feature_dim": 32,
                     "source_test_accuracy": embed_acc})

    print("computing reference embedding statistics...", flush=True)
    feats = np.asarray([reference_forward(embedding_layers, xi) for xi in x])
    stats = {"labels": {}, "pooled": _stats_entry(feats)}
    for label in range(10):
        stats["labels"][str(label)] = _stats_entry(feats[y == label])
    stats_path = os.path.join(out_dir, "reference_stats.json")
    with open(stats_path, "w", encoding="utf-8") as fh:
        json.dump(stats, fh, sort_keys=True)
        fh.write("\n")
    artifacts["reference_stats.json"] = stats_path

    manifest = {
        "zoo_version": __version__,
        "seeds": SEEDS,
        "metrics": metrics,
        "artifacts": {name: {"path": os.path.abspath(path),
                             "sha256": _sha256(path)}
                      for name, path in sorted(artifacts.items())},
    }
    manifest_path = os.path.join(out_dir, "zoo_manifest.json")
    with open(manifest_path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=2)
        fh.write("\n")
    print(json.dumps(metrics, sort_keys=True, indent=2))
    return manifest


def _parity_agreement(digit_layers, odd_layers, images):
    agree = 0
    for image in images:
        digit = int(np.argmax(reference_forward(digit_layers, image)))
        parity = int(np.argmax(reference_forward(odd_layers, image)))
        agree += (digit % 2) == parity
    return agree / len(images)


def _stats_entry(feats):
    return {"mean": feats.mean(axis=0).tolist(),
            "cov": np.cov(feats, rowvar=False, ddof=1).tolist(),
            "n": int(len(feats))}


def main(argv=None):
    parser = argparse.ArgumentParser(prog="modelzoo")
    sub = parser.add_subparsers(dest="command", required=True)
    b = sub.add_parser("build", help="train and export every artifact")
    b.add_argument("--out", default="artifacts")
    args = parser.parse_args(argv)
    try:
        build(args.out)
    except BuildError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
