"""Fixtures: a seeded locally-generated VGG19 weights file (pretrained
checkpoints cannot be fetched in hermetic environments; every assertion
here is architecture-driven, not value-driven) and toy PNG images."""

import numpy as np
import pytest
import torch

from vggdump.dump import LAYER_INDEX, feature_prefix


@pytest.fixture(scope="session")
def weights_file(tmp_path_factory):
    torch.manual_seed(0)
    prefix = feature_prefix(max(LAYER_INDEX.values()))
    path = tmp_path_factory.mktemp("weights") / "vgg19_features.pth"
    torch.save(prefix.state_dict(), path)
    return str(path)


def write_toy_png(path, seed, size=160):
    from PIL import Image

    rng = np.random.Generator(np.random.PCG64(seed))
    base = rng.random((size // 4, size // 4, 3))
    img = np.asarray(
        Image.fromarray((base * 255).astype(np.uint8)).resize((size, size), Image.BICUBIC)
    )
    tile = (rng.random((4, 4, 3)) - 0.5) * 80
    reps = size // 4
    img = np.clip(img.astype(np.float64) + np.tile(tile, (reps, reps, 1)), 0, 255)
    Image.fromarray(img.astype(np.uint8)).save(path, format="PNG")
    return str(path)


@pytest.fixture(scope="session")
def toy_image_png(tmp_path_factory):
    return write_toy_png(tmp_path_factory.mktemp("imgs") / "toy.png", seed=1)
