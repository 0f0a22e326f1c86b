import gzip
import json
import struct

import numpy as np
import pytest
import torch

from dpc_explain.errors import IngestionError, ParameterError
from dpc_explain.modeling_classifier import ClassifierSpec, evaluate_classifier, train_classifier
from dpc_explain.modeling_dense import RngState
from dpc_explain.optimization import OptimizerConfig
from dpc_explain.utils_data import (
    Dataset,
    FeatureSchema,
    decode_record,
    load_csv,
    load_idx,
    make_split_plan,
    normalize_numeric,
    synth_blobs,
    with_leaky_attribute,
)

SCHEMA = {
    "label": "approved",
    "label_values": ["no", "yes"],
    "columns": [
        {"name": "income", "kind": "numeric", "min": 0, "max": 100},
        {"name": "grade", "kind": "categorical", "values": ["A", "B", "C"]},
    ],
}


@pytest.fixture
def schema():
    return FeatureSchema.from_dict(SCHEMA)


def _write(path, text):
    path.write_text(text, encoding="utf-8")
    return str(path)


def _idx(path, magic, dims, payload, compress=False):
    data = struct.pack(">i", magic) + struct.pack(">" + "i" * len(dims), *dims) + bytes(payload)
    opener = gzip.open if compress else open
    with opener(str(path), "wb") as f:
        f.write(data)
    return str(path)


class TestLoadCsv:
    def test_fixture_matches_hand_computation(self, tmp_path, schema):
        path = _write(tmp_path / "loans.csv", "income,grade,approved\n50,B,yes\n0,A,no\n100,C,yes\n")
        dataset = load_csv(path, schema)
        expected = [[0.0, -1.0, 1.0, -1.0], [-1.0, 1.0, -1.0, -1.0], [1.0, -1.0, -1.0, 1.0]]
        np.testing.assert_array_equal(dataset.features.numpy(), expected)
        assert dataset.labels.tolist() == [1, 0, 1]
        assert dataset.class_count == 2

    def test_unknown_categorical_names_row_and_column(self, tmp_path, schema):
        path = _write(tmp_path / "bad.csv", "income,grade,approved\n50,B,yes\n20,Z,no\n")
        with pytest.raises(IngestionError) as info:
            load_csv(path, schema)
        assert info.value.row == 2
        assert info.value.column == "grade"

    def test_out_of_bounds_numeric_is_clamped(self, tmp_path, schema, caplog):
        path = _write(tmp_path / "wide.csv", "income,grade,approved\n150,A,no\n-10,A,no\n")
        dataset = load_csv(path, schema)
        assert dataset.features[:, 0].tolist() == [1.0, -1.0]
        assert "Clamped 2" in caplog.text

    @pytest.mark.parametrize("cell", ["nan", "inf", "-inf"])
    def test_non_finite_numeric_names_row_and_column(self, tmp_path, schema, cell):
        path = _write(tmp_path / "holes.csv", "income,grade,approved\n50,B,yes\n{},A,no\n".format(cell))
        with pytest.raises(IngestionError) as info:
            load_csv(path, schema)
        assert info.value.row == 2
        assert info.value.column == "income"

    def test_missing_column(self, tmp_path, schema):
        path = _write(tmp_path / "short.csv", "income,approved\n50,yes\n")
        with pytest.raises(IngestionError):
            load_csv(path, schema)

    def test_schema_round_trip(self, tmp_path, schema):
        path = _write(tmp_path / "schema.json", json.dumps(schema.to_dict()))
        assert FeatureSchema.from_json_file(path).to_dict() == schema.to_dict()


class TestLoadIdx:
    def test_pixel_scaling(self, tmp_path):
        images = _idx(tmp_path / "img.idx", 0x00000803, (2, 2, 2), [0, 255, 128, 128, 128, 128, 128, 128])
        labels = _idx(tmp_path / "lab.idx", 0x00000801, (2,), [3, 1])
        dataset = load_idx(images, labels)
        assert dataset.feature_dim == 4
        np.testing.assert_array_equal(dataset.features[0, :2].numpy(), [-1.0, 1.0])
        np.testing.assert_allclose(dataset.features[1].numpy(), 128 / 127.5 - 1, rtol=0, atol=1e-15)
        assert abs(128 / 127.5 - 1 - 0.0039216) < 1e-7
        assert dataset.labels.tolist() == [3, 1]

    def test_mnist_shape_and_gzip(self, tmp_path):
        images = _idx(tmp_path / "img.idx.gz", 0x00000803, (1, 28, 28), [0] * 784, compress=True)
        labels = _idx(tmp_path / "lab.idx.gz", 0x00000801, (1,), [0], compress=True)
        assert load_idx(images, labels).feature_dim == 784

    def test_magic_mismatch(self, tmp_path):
        images = _idx(tmp_path / "img.idx", 0x00000801, (1, 2, 2), [0] * 4)
        labels = _idx(tmp_path / "lab.idx", 0x00000801, (1,), [0])
        with pytest.raises(IngestionError) as info:
            load_idx(images, labels)
        assert info.value.offset == 0

    def test_truncation_reports_offset(self, tmp_path):
        images = _idx(tmp_path / "img.idx", 0x00000803, (2, 2, 2), [0] * 5)
        labels = _idx(tmp_path / "lab.idx", 0x00000801, (2,), [0, 1])
        with pytest.raises(IngestionError) as info:
            load_idx(images, labels)
        assert info.value.offset == 16 + 5


class TestSynthBlobs:
    def test_deterministic(self):
        a = synth_blobs(RngState(3), 50, 3, 2, 1.0)
        b = synth_blobs(RngState(3), 50, 3, 2, 1.0)
        assert torch.equal(a.features, b.features)

    def test_entries_in_range(self):
        dataset = synth_blobs(RngState(3), 200, 4, 4, 3.0)
        assert float(dataset.features.abs().max()) <= 1.0
        assert dataset.class_counts().tolist() == [200] * 4

    def test_zero_separation_gives_matching_classes(self):
        dataset = synth_blobs(RngState(8), 300, 2, 2, 0.0)
        means = [dataset.features[dataset.labels == c].mean(dim=0) for c in range(2)]
        assert float((means[0] - means[1]).abs().max()) < 0.1

    def test_separable_blobs_are_learned(self):
        rng = RngState(4)
        train = synth_blobs(rng.spawn("train"), 200, 2, 2, 1.5)
        test = synth_blobs(rng.spawn("test"), 200, 2, 2, 1.5)
        net = train_classifier(ClassifierSpec([], 2), train, 100, 32, OptimizerConfig(lr=1e-2), rng=rng.spawn("clf"))
        assert evaluate_classifier(net, test) > 0.95

    def test_dimension_checked(self):
        with pytest.raises(ParameterError):
            synth_blobs(RngState(1), 10, 1, 2, 1.0)

    def test_every_pair_of_means_is_separated(self):
        dataset = synth_blobs(RngState(5), 400, 3, 6, 0.6, spread=0.1)
        means = torch.stack([dataset.features[dataset.labels == c].mean(dim=0) for c in range(6)])
        distances = torch.cdist(means, means)
        off_diagonal = distances[~torch.eye(6, dtype=torch.bool)]
        assert float(off_diagonal.min()) >= 0.6 - 0.03

    def test_more_classes_than_signed_axes(self):
        with pytest.raises(ParameterError):
            synth_blobs(RngState(0), 200, 2, 5, 1.5)


class TestDataset:
    def test_non_finite_entries_rejected(self):
        features = torch.tensor([[0.0], [float("nan")]], dtype=torch.float64)
        with pytest.raises(ParameterError):
            Dataset(features, torch.tensor([0, 1]), 2)

    def test_out_of_range_entries_rejected(self):
        with pytest.raises(ParameterError):
            Dataset(torch.tensor([[1.5]], dtype=torch.float64), torch.tensor([0]), 1)


class TestSplitPlan:
    def test_four_disjoint_halves(self, rng):
        dataset = synth_blobs(rng, 200, 2, 2, 1.0)
        plan = make_split_plan(RngState(9), dataset, 100)
        indices = torch.cat([s.indices for s in plan.subsets])
        assert indices.numel() == 400
        assert torch.unique(indices).numel() == 400
        for subset in plan.subsets:
            assert abs(subset.train.numel() - subset.test.numel()) <= 1

    def test_too_large(self, rng):
        dataset = synth_blobs(rng, 200, 2, 2, 1.0)
        with pytest.raises(ParameterError):
            make_split_plan(RngState(9), dataset, 101)

    def test_reproducible(self, rng):
        dataset = synth_blobs(rng, 200, 2, 2, 1.0)
        assert make_split_plan(RngState(9), dataset, 99).to_dict() == make_split_plan(RngState(9), dataset, 99).to_dict()

    def test_disjoint_over_many_seeds(self, rng):
        dataset = synth_blobs(rng, 60, 2, 2, 1.0)
        for seed in range(1000):
            plan = make_split_plan(RngState(seed), dataset, 29)
            indices = torch.cat([s.indices for s in plan.subsets])
            assert torch.unique(indices).numel() == indices.numel() == 116


class TestEncoding:
    def test_normalization_idempotent_on_unit_bounds(self):
        x = torch.linspace(-1, 1, 101, dtype=torch.float64)
        assert float((normalize_numeric(x, -1.0, 1.0) - x).abs().max()) <= 1e-12

    def test_decode_record(self, schema):
        record = decode_record([0.0, -1.0, 0.3, -0.9], schema)
        assert record == {"income": 50.0, "grade": "B"}

    def test_leaky_attribute_tracks_label(self):
        dataset = with_leaky_attribute(synth_blobs(RngState(2), 500, 3, 2, 1.0), RngState(3), strength=1.0)
        assert dataset.feature_dim == 5
        group = torch.argmax(dataset.features[:, 3:], dim=1)
        assert torch.equal(group, dataset.labels % 2)
        assert dataset.schema.column("group").kind == "categorical"
