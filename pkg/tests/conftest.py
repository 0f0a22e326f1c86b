import os
import sys

import pytest

curPath = os.path.abspath(os.path.dirname(__file__))
rootPath = os.path.split(curPath)[0]
sys.path.append(rootPath)

from dpc_explain.modeling_autoencoder import AutoencoderSpec, build_prototypes, train_autoencoder
from dpc_explain.modeling_classifier import ClassifierSpec, train_classifier
from dpc_explain.modeling_dense import RngState
from dpc_explain.optimization import OptimizerConfig
from dpc_explain.utils_data import synth_blobs, train_test_split


@pytest.fixture
def rng():
    return RngState(42)


@pytest.fixture
def blobs():
    return synth_blobs(RngState(7), 100, 4, 2, 1.5)


@pytest.fixture(scope="session")
def toy_pipeline():
    """Non-private autoencoder, prototypes and target model on well separated 2-D blobs."""
    rng = RngState(2024)
    dataset = synth_blobs(rng.spawn("data"), 200, 2, 2, 1.5)
    train, test = train_test_split(rng.spawn("split"), dataset, 0.2)
    spec = AutoencoderSpec([8])
    training = train_autoencoder(spec, train, spec.budget(float("inf")), 200, 32, rng.spawn("autoencoder"),
                                 optimizer=OptimizerConfig(lr=1e-2))
    target = train_classifier(ClassifierSpec([16], 2), train, 60, 32, OptimizerConfig(lr=1e-2), rng=rng.spawn("target"))
    return {
        "train": train,
        "test": test,
        "autoencoder": training.autoencoder,
        "training": training,
        "prototypes": build_prototypes(training.autoencoder, train),
        "target": target,
    }
