"""
Artifact file names and JSON/CSV helpers shared by the experiment commands.
"""
from __future__ import absolute_import, division, print_function, unicode_literals

import json
import logging
import os
from hashlib import sha256
from io import open

import pandas as pd
import torch

from .errors import IngestionError
from .modeling_dense import DTYPE, DenseNet

logger = logging.getLogger(__name__)  # pylint: disable=invalid-name

CONFIG_NAME = "config.json"
SCHEMA_NAME = "schema.json"
AUTOENCODER_NAME = "autoencoder.json"
NOISE_NAME = "noise.json"
PROTOTYPES_NAME = "prototypes.json"
TARGET_MODEL_NAME = "target_model.json"
QUERIES_NAME = "queries.csv"
COUNTERFACTUALS_NAME = "counterfactuals.csv"
DECODED_COUNTERFACTUALS_NAME = "counterfactuals_decoded.csv"
REPORT_NAME = "report.csv"
SWEEP_NAME = "sweep.csv"
PLOT_DATA_NAME = "plot_data.csv"
SWEEP_FAILURES_NAME = "sweep_failures.csv"

METRICS_SUFFIX = ".metrics.json"
REPORT_SUFFIX = ".report.json"

CSV_FLOAT_FORMAT = "%.17g"


def config_fingerprint(config_json):
    """Short repeatable hash of a configuration's JSON text."""
    return sha256(config_json.encode("utf-8")).hexdigest()[:16]


def save_json(obj, path):
    # repr floats round-trip exactly through json
    with open(path, "w", encoding="utf-8") as writer:
        writer.write(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def load_json(path):
    if not os.path.isfile(path):
        raise FileNotFoundError("Artifact not found: {}".format(path))
    with open(path, "r", encoding="utf-8") as reader:
        text = reader.read()
    try:
        return json.loads(text)
    except ValueError as e:
        raise IngestionError("Malformed JSON in {}: {}".format(path, e))


def save_network(net, path, **extra):
    obj = {"net": net.to_dict()}
    obj.update(extra)
    save_json(obj, path)


def load_network(path):
    obj = load_json(path)
    return DenseNet.from_dict(obj["net"]), obj


def save_prototypes(prototypes, path):
    save_json({"prototypes": [p.to_dict() for p in prototypes]}, path)


def load_prototypes(path):
    from .modeling_autoencoder import Prototype

    return [Prototype.from_dict(p) for p in load_json(path)["prototypes"]]


def feature_names(dim):
    return ["f{}".format(i) for i in range(dim)]


def write_csv(frame, path):
    frame.to_csv(path, index=False, float_format=CSV_FLOAT_FORMAT, encoding="utf-8")


def write_features(features, path):
    write_csv(pd.DataFrame(features.numpy(), columns=feature_names(features.shape[1])), path)


def read_features(path):
    """Normalized feature rows written by :func:`write_features`."""
    frame = pd.read_csv(path, encoding="utf-8")
    try:
        features = torch.tensor(frame.to_numpy(dtype="float64"), dtype=DTYPE)
    except ValueError as e:
        raise IngestionError("Non-numeric feature values in {}: {}".format(path, e))
    if features.numel() and (features.abs() > 1.0).any():
        rows = torch.nonzero((features.abs() > 1.0).any(dim=1)).reshape(-1)
        raise IngestionError("Row {} of {} lies outside [-1, 1]".format(int(rows[0]) + 1, path), row=int(rows[0]) + 1)
    return features
