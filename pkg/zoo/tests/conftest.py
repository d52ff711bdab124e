import json
import os
import subprocess

import pytest

ZOO_DIR = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
ARTIFACT_DIR = os.path.join(ZOO_DIR, "artifacts")


@pytest.fixture(scope="session")
def artifacts():
    """Build the artifact directory once if it is missing."""
    manifest = os.path.join(ARTIFACT_DIR, "zoo_manifest.json")
    if not os.path.exists(manifest):
        from modelzoo.build import build
        build(ARTIFACT_DIR)
    return ARTIFACT_DIR


@pytest.fixture(scope="session")
def manifest(artifacts):
    with open(os.path.join(artifacts, "zoo_manifest.json")) as fh:
        return json.load(fh)


def reasoner_cli(*argv, check=True):
    """The engine is consumed strictly through its CLI and file formats."""
    result = subprocess.run(["reasoner", *argv], capture_output=True,
                            text=True)
    if check and result.returncode != 0:
        raise AssertionError(
            f"reasoner {' '.join(argv)} failed ({result.returncode}):\n"
            f"{result.stderr}")
    return result
