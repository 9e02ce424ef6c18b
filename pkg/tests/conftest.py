import sys
import time
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from relict.volio import SegmentationMask, Volume3D  # noqa: E402


@pytest.fixture
def rng():
    return np.random.default_rng(20250810)


@pytest.fixture(scope="session")
def replica_scenario(tmp_path_factory):
    """Shared replica scenario corpora: built once, timed for the runtime budget."""
    from e2e_fixture import build_fixture
    from relict.volio import load_corpus

    root = tmp_path_factory.mktemp("replica_scenario")
    started = time.perf_counter()
    info = build_fixture(root)
    build_seconds = time.perf_counter() - started
    return {
        "info": info,
        "build_seconds": build_seconds,
        "training": load_corpus(info.training_manifest),
        "synthetic": load_corpus(info.synthetic_manifest),
        "distorted": load_corpus(info.distorted_manifest),
    }


def make_volume(values, vol_id="vol", spacing=(1.0, 1.0, 1.0)):
    return Volume3D(id=vol_id, voxels=np.asarray(values, dtype=float), spacing=spacing)


def make_mask(labels, mask_id="mask", spacing=(1.0, 1.0, 1.0)):
    return SegmentationMask(
        id=mask_id, labels=np.asarray(labels, dtype=np.int64), spacing=spacing
    )


def random_volume(rng, shape=(8, 8, 8), vol_id="vol", spacing=(1.0, 1.0, 1.0)):
    return make_volume(rng.standard_normal(shape), vol_id=vol_id, spacing=spacing)


def random_mask(rng, shape=(8, 8, 8), n_labels=1, mask_id="mask", spacing=(1.0, 1.0, 1.0)):
    labels = rng.integers(0, n_labels + 1, size=shape)
    return make_mask(labels, mask_id=mask_id, spacing=spacing)


def write_corpus(root, role, volumes, masks=None, embeddings=None, feature_maps=None):
    """Write volumes (dict id -> Volume3D) plus optional modalities and a manifest."""
    import json

    from relict.volio import write_embedding, write_feature_map, write_mask, write_volume

    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    entries = []
    for image_id, volume in volumes.items():
        entry = {"id": image_id, "volume": f"{image_id}.nii.gz"}
        write_volume(volume, root / entry["volume"])
        if masks and image_id in masks:
            entry["mask"] = f"{image_id}_mask.nii.gz"
            write_mask(masks[image_id], root / entry["mask"])
        if embeddings and image_id in embeddings:
            entry["embedding"] = f"{image_id}.rvec"
            write_embedding(embeddings[image_id], root / entry["embedding"])
        if feature_maps and image_id in feature_maps:
            entry["feature_map"] = f"{image_id}.rmap"
            write_feature_map(feature_maps[image_id], root / entry["feature_map"])
        entries.append(entry)
    manifest = root / f"{role}.json"
    manifest.write_text(json.dumps({"role": role, "entries": entries}, indent=1))
    return manifest
