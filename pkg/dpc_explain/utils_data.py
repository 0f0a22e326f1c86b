# coding=utf-8
""" Dataset loading and normalization utilities.

Every feature is mapped into [-1, 1]: numeric columns by min-max scaling with the
schema bounds, categorical columns by one-hot blocks coded hot = 1 / cold = -1.
The label column never enters the feature matrix.
"""

import gzip
import json
import logging
import math
import struct
from dataclasses import dataclass, field
from io import open
from typing import List, Optional

import numpy as np
import pandas as pd
import torch

from .errors import IngestionError, ParameterError, StructuralError
from .modeling_dense import DTYPE

logger = logging.getLogger(__name__)

IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801


@dataclass
class ColumnSpec:
    name: str
    kind: str
    min: Optional[float] = None
    max: Optional[float] = None
    values: Optional[List[str]] = None

    def __post_init__(self):
        if self.kind == "numeric":
            if self.min is None or self.max is None or not self.min < self.max:
                raise ParameterError("Invalid bounds for numeric column {}: [{}, {}]".format(self.name, self.min, self.max))
        elif self.kind == "categorical":
            if not self.values:
                raise ParameterError("Categorical column {} needs a value list".format(self.name))
            self.values = [str(v) for v in self.values]
        else:
            raise ParameterError("Invalid column kind: {} - should be 'numeric' or 'categorical'".format(self.kind))

    @property
    def width(self):
        return 1 if self.kind == "numeric" else len(self.values)

    def to_dict(self):
        if self.kind == "numeric":
            return {"name": self.name, "kind": self.kind, "min": self.min, "max": self.max}
        return {"name": self.name, "kind": self.kind, "values": list(self.values)}


@dataclass
class FeatureSchema:
    columns: List[ColumnSpec]
    label: str = "label"
    label_values: Optional[List[str]] = None

    @property
    def feature_dim(self):
        return sum(column.width for column in self.columns)

    def column(self, name):
        for column in self.columns:
            if column.name == name:
                return column
        raise ParameterError("Column {} is not part of the schema".format(name))

    def feature_slices(self):
        """Column name -> slice of the encoded feature vector."""
        slices = {}
        start = 0
        for column in self.columns:
            slices[column.name] = slice(start, start + column.width)
            start += column.width
        return slices

    @classmethod
    def numeric(cls, names, low, high, label="label"):
        return cls([ColumnSpec(name, "numeric", low, high) for name in names], label=label)

    def to_dict(self):
        return {
            "label": self.label,
            "label_values": self.label_values,
            "columns": [column.to_dict() for column in self.columns],
        }

    @classmethod
    def from_dict(cls, obj):
        columns = [
            ColumnSpec(c["name"], c["kind"], c.get("min"), c.get("max"), c.get("values")) for c in obj["columns"]
        ]
        label_values = obj.get("label_values")
        return cls(columns, obj.get("label", "label"), None if label_values is None else [str(v) for v in label_values])

    @classmethod
    def from_json_file(cls, json_file):
        with open(json_file, "r", encoding="utf-8") as reader:
            return cls.from_dict(json.load(reader))


@dataclass(eq=False)
class Dataset:
    """Normalized features ``(N, d)`` in [-1, 1] with class-index labels ``(N,)``."""

    features: torch.Tensor
    labels: torch.Tensor
    class_count: int
    schema: Optional[FeatureSchema] = None

    def __post_init__(self):
        self.features = self.features.to(DTYPE)
        self.labels = self.labels.long()
        if self.features.dim() != 2 or self.labels.shape != (self.features.shape[0],):
            raise StructuralError(
                "Features {} and labels {} do not line up".format(tuple(self.features.shape), tuple(self.labels.shape))
            )
        if self.features.numel() and (~torch.isfinite(self.features) | (self.features.abs() > 1.0)).any():
            raise ParameterError("Feature entries must be finite and lie in [-1, 1]")
        if self.labels.numel() and (self.labels.min() < 0 or self.labels.max() >= self.class_count):
            raise ParameterError("Labels must lie in [0, {})".format(self.class_count))
        if self.schema is not None and self.schema.feature_dim != self.features.shape[1]:
            raise StructuralError("Schema describes {} features, data has {}".format(
                self.schema.feature_dim, self.features.shape[1]))

    def __len__(self):
        return self.features.shape[0]

    @property
    def feature_dim(self):
        return self.features.shape[1]

    def subset(self, indices):
        indices = torch.as_tensor(indices, dtype=torch.long)
        return Dataset(self.features[indices], self.labels[indices], self.class_count, self.schema)

    def class_counts(self):
        return torch.bincount(self.labels, minlength=self.class_count)


def normalize_numeric(values, low, high):
    return 2.0 * (values - low) / (high - low) - 1.0


def denormalize_numeric(values, low, high):
    return (values + 1.0) / 2.0 * (high - low) + low


def onehot_block(index, width):
    block = -np.ones(width)
    block[index] = 1.0
    return block


def load_schema(path):
    try:
        return FeatureSchema.from_json_file(path)
    except FileNotFoundError:
        raise
    except (KeyError, TypeError, ValueError) as e:
        raise IngestionError("Malformed schema file {}: {}".format(path, e))


def load_csv(path, schema):
    """Read a comma-separated file with a header row into a normalized Dataset."""
    frame = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    missing = [c.name for c in schema.columns if c.name not in frame.columns]
    if schema.label not in frame.columns:
        missing.append(schema.label)
    if missing:
        raise IngestionError("Columns {} of the schema are missing from {}".format(missing, path))

    features = np.empty((len(frame), schema.feature_dim))
    clamped = 0
    slices = schema.feature_slices()
    for column in schema.columns:
        raw = frame[column.name].tolist()
        target = slices[column.name]
        if column.kind == "numeric":
            for row, value in enumerate(raw):
                try:
                    number = float(value)
                except ValueError:
                    raise IngestionError(
                        "Row {}, column {}: {!r} is not numeric".format(row + 1, column.name, value),
                        row=row + 1,
                        column=column.name,
                    )
                if not math.isfinite(number):
                    raise IngestionError(
                        "Row {}, column {}: {!r} is not a finite number".format(row + 1, column.name, value),
                        row=row + 1,
                        column=column.name,
                    )
                if number < column.min or number > column.max:
                    clamped += 1
                    number = min(max(number, column.min), column.max)
                features[row, target.start] = normalize_numeric(number, column.min, column.max)
        else:
            positions = {value: i for i, value in enumerate(column.values)}
            for row, value in enumerate(raw):
                if value not in positions:
                    raise IngestionError(
                        "Row {}, column {}: unknown categorical value {!r}".format(row + 1, column.name, value),
                        row=row + 1,
                        column=column.name,
                    )
                features[row, target] = onehot_block(positions[value], column.width)
    if clamped:
        logger.warning("Clamped %d out-of-bounds numeric values while reading %s", clamped, path)

    raw_labels = frame[schema.label].tolist()
    if schema.label_values is not None:
        positions = {value: i for i, value in enumerate(schema.label_values)}
        labels = []
        for row, value in enumerate(raw_labels):
            if value not in positions:
                raise IngestionError(
                    "Row {}, column {}: unknown label {!r}".format(row + 1, schema.label, value),
                    row=row + 1,
                    column=schema.label,
                )
            labels.append(positions[value])
        class_count = len(schema.label_values)
    else:
        try:
            labels = [int(value) for value in raw_labels]
        except ValueError as e:
            raise IngestionError("Labels of {} are not class indices: {}".format(path, e), column=schema.label)
        class_count = max(labels) + 1 if labels else 1

    logger.info("Loaded %d rows with %d features from %s", len(frame), schema.feature_dim, path)
    return Dataset(torch.tensor(features, dtype=DTYPE), torch.tensor(labels, dtype=torch.long), class_count, schema)


def _read_idx(path, expected_magic):
    opener = gzip.open if str(path).endswith(".gz") else open
    with opener(path, "rb") as f:
        data = f.read()
    if len(data) < 4:
        raise IngestionError("Truncated IDX header in {}".format(path), offset=len(data))
    (magic,) = struct.unpack(">i", data[:4])
    if magic != expected_magic:
        raise IngestionError(
            "Magic number mismatch in {} ({:#010x}, expected {:#010x})".format(path, magic, expected_magic), offset=0
        )
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(data) < header:
        raise IngestionError("Truncated IDX dimensions in {}".format(path), offset=len(data))
    dims = struct.unpack(">" + "i" * ndim, data[4:header])
    count = int(np.prod(dims))
    if len(data) < header + count:
        raise IngestionError(
            "Truncated IDX payload in {}: expected {} bytes, file ends".format(path, header + count), offset=len(data)
        )
    return np.frombuffer(data, dtype=np.uint8, count=count, offset=header).reshape(dims)


def load_idx(images_path, labels_path):
    """MNIST-style IDX image/label pair; pixels x -> x / 127.5 - 1, images flattened row-major."""
    images = _read_idx(images_path, IDX_IMAGE_MAGIC)
    labels = _read_idx(labels_path, IDX_LABEL_MAGIC)
    if images.shape[0] != labels.shape[0]:
        raise IngestionError(
            "{} images but {} labels".format(images.shape[0], labels.shape[0]), offset=4
        )
    count, rows, cols = images.shape
    features = torch.tensor(images.reshape(count, rows * cols).astype(np.float64) / 127.5 - 1.0, dtype=DTYPE)
    schema = FeatureSchema.numeric(["pixel_{}_{}".format(r, c) for r in range(rows) for c in range(cols)], 0.0, 255.0)
    class_count = int(labels.max()) + 1 if count else 1
    logger.info("Loaded %d images of %dx%d from %s", count, rows, cols, images_path)
    return Dataset(features, torch.tensor(labels.astype(np.int64)), class_count, schema)


def synth_blobs(rng, n_per_class, d, class_count, separation, spread=0.25):
    """Gaussian blobs whose class means sit ``separation`` apart, clamped to [-1, 1].

    Means lie on signed coordinate axes: classes 2k and 2k+1 share axis k with
    opposite signs, which keeps every pair of means at least ``separation`` apart.
    """
    if d < 2:
        raise ParameterError("Invalid dimension: {} - should be >= 2".format(d))
    if separation < 0:
        raise ParameterError("Invalid separation: {} - should be >= 0".format(separation))
    if class_count < 1 or n_per_class < 1:
        raise ParameterError("Need at least one class and one sample per class")
    if class_count > 2 * d:
        raise ParameterError(
            "Invalid class count: {} - signed axes of dimension {} hold at most {} classes".format(class_count, d, 2 * d)
        )
    radius = separation / 2.0 if class_count <= 2 else separation / np.sqrt(2.0)
    features, labels = [], []
    for label in range(class_count):
        mean = torch.zeros(d, dtype=DTYPE)
        mean[label // 2] = radius if label % 2 == 0 else -radius
        features.append(mean + rng.normal((n_per_class, d), std=spread))
        labels.append(torch.full((n_per_class,), label, dtype=torch.long))
    features = torch.clamp(torch.cat(features), -1.0, 1.0)
    schema = FeatureSchema.numeric(["x{}".format(i) for i in range(d)], -1.0, 1.0)
    return Dataset(features, torch.cat(labels), class_count, schema)


def with_leaky_attribute(dataset, rng, strength=0.9, name="group"):
    """Append a binary categorical column equal to ``label % 2`` with probability ``strength``."""
    n = len(dataset)
    coin = rng.uniform((n,)) < strength
    random_value = rng.integers(0, 2, (n,))
    value = torch.where(coin, dataset.labels % 2, random_value)
    block = -torch.ones((n, 2), dtype=DTYPE)
    block[torch.arange(n), value] = 1.0
    columns = list(dataset.schema.columns) if dataset.schema is not None else [
        ColumnSpec("x{}".format(i), "numeric", -1.0, 1.0) for i in range(dataset.feature_dim)
    ]
    schema = FeatureSchema(
        columns + [ColumnSpec(name, "categorical", values=["{}0".format(name), "{}1".format(name)])],
        label=dataset.schema.label if dataset.schema is not None else "label",
        label_values=dataset.schema.label_values if dataset.schema is not None else None,
    )
    return Dataset(torch.cat([dataset.features, block], dim=1), dataset.labels, dataset.class_count, schema)


def decode_record(vector, schema):
    """Map an encoded feature vector back to column values."""
    vector = torch.as_tensor(vector, dtype=DTYPE).reshape(-1)
    record = {}
    for column, part in zip(schema.columns, schema.feature_slices().values()):
        block = vector[part]
        if column.kind == "numeric":
            record[column.name] = float(denormalize_numeric(block[0], column.min, column.max))
        else:
            record[column.name] = column.values[int(torch.argmax(block))]
    return record


def train_test_split(rng, dataset, test_fraction=0.2):
    if not 0.0 < test_fraction < 1.0:
        raise ParameterError("Invalid test fraction: {} - should be in ]0, 1[".format(test_fraction))
    order = rng.permutation(len(dataset))
    n_test = int(round(len(dataset) * test_fraction))
    return dataset.subset(order[n_test:]), dataset.subset(order[:n_test])


@dataclass(eq=False)
class SubsetSplit:
    train: torch.Tensor
    test: torch.Tensor

    @property
    def indices(self):
        return torch.cat([self.train, self.test])


@dataclass(eq=False)
class SplitPlan:
    """Four disjoint subsets of a parent dataset, each halved into train/test.

    Subset 0 belongs to the model owner; subsets 1-3 are the adversary's.
    """

    subsets: List[SubsetSplit]
    parent_size: int
    subset_size: int = 0
    seed: Optional[int] = None

    @property
    def target(self):
        return self.subsets[0]

    @property
    def shadows(self):
        return self.subsets[1:]

    def adversary_indices(self):
        return torch.cat([s.indices for s in self.shadows])

    def to_dict(self):
        return {
            "parent_size": self.parent_size,
            "subset_size": self.subset_size,
            "seed": self.seed,
            "subsets": [{"train": s.train.tolist(), "test": s.test.tolist()} for s in self.subsets],
        }


def make_split_plan(rng, dataset, subset_size, subset_count=4):
    n = len(dataset)
    if subset_size < 2 or subset_count * subset_size > n:
        raise ParameterError(
            "Invalid subset size: {} - {} subsets need {} rows, dataset has {}".format(
                subset_size, subset_count, subset_count * subset_size, n
            )
        )
    order = rng.permutation(n)
    half = (subset_size + 1) // 2
    subsets = []
    for k in range(subset_count):
        block = order[k * subset_size:(k + 1) * subset_size]
        subsets.append(SubsetSplit(train=block[:half].clone(), test=block[half:].clone()))
    return SplitPlan(subsets=subsets, parent_size=n, subset_size=subset_size, seed=rng.seed)


class DataProcessor(object):
    """Base class for dataset sources named in an experiment configuration."""

    def get_dataset(self, config, rng):
        raise NotImplementedError()


class CsvProcessor(DataProcessor):
    def get_dataset(self, config, rng):
        schema = load_schema(config.schema_path)
        return load_csv(config.dataset_path, schema)


class IdxProcessor(DataProcessor):
    def get_dataset(self, config, rng):
        return load_idx(config.dataset_path, config.labels_path)


class SynthProcessor(DataProcessor):
    def get_dataset(self, config, rng):
        synth = config.synth
        dataset = synth_blobs(
            rng,
            synth.get("n_per_class", 1000),
            synth.get("dim", 8),
            synth.get("class_count", 2),
            synth.get("separation", 1.5),
            synth.get("spread", 0.25),
        )
        if synth.get("leaky_attribute", False):
            dataset = with_leaky_attribute(dataset, rng.spawn("attribute"), synth.get("attribute_strength", 0.9))
        return dataset


processors = {
    "csv": CsvProcessor,
    "idx": IdxProcessor,
    "synth": SynthProcessor,
}
