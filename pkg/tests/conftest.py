import os

import numpy as np
import pytest

from muprune import Dataset, MlpModel, TrainConfig, make_rng, synth_blobs

MNIST_DIR = os.path.join(os.path.dirname(__file__), "..", "data", "mnist-6k")


def mnist_available() -> bool:
    return os.path.isfile(
        os.path.join(MNIST_DIR, "train-images-idx3-ubyte.gz")
    )


needs_mnist = pytest.mark.skipif(
    not mnist_available(), reason="bundled MNIST subset not present"
)


@pytest.fixture
def rng():
    return make_rng(0)


@pytest.fixture
def blobs_ds():
    # small but separable enough that a few epochs move the loss
    return synth_blobs(120, 5, 3, make_rng(7), spread=0.6)


@pytest.fixture
def small_model():
    return MlpModel.initialized([5, 8, 3], "logits", seed=3)


@pytest.fixture
def quick_cfg():
    return TrainConfig(epochs=3, batch_size=32, optimizer="rmsprop",
                       learning_rate=1e-2, seed=0)


@pytest.fixture
def regression_pair():
    rng = make_rng(11)
    x = rng.standard_normal((40, 4))
    y = x @ np.array([0.5, -1.0, 0.0, 2.0]) + 0.01 * rng.standard_normal(40)
    return Dataset(x, y, name="tiny-reg"), MlpModel.initialized([4, 1], "linear", seed=2)
