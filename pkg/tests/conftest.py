import time
from types import SimpleNamespace

import pytest

import focusfuse as ff
from helpers import TRAIN_SIGMAS, textured_image


@pytest.fixture(scope="session")
def trained():
    """One quality model trained on synthetic blurred textures, shared by the
    monotonicity, end-to-end fusion, and scoring tests. Records wall time."""
    start = time.perf_counter()
    images = [textured_image(seed) for seed in range(8)]
    data = ff.gen_training_data(images, TRAIN_SIGMAS)
    model, losses = ff.train(
        ff.init_model(0), data, ff.HyperParams(learning_rate=0.1, batch_size=32, epochs=40, seed=0)
    )
    elapsed = time.perf_counter() - start
    return SimpleNamespace(model=model, losses=losses, elapsed=elapsed, n_patches=len(data))
