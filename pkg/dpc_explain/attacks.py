# coding=utf-8
""" Adversary side: transfer sets, surrogate extraction, membership and attribute
inference.

The adversary holds its queries, the target model's outputs on them, the
counterfactuals returned for them, and the shadow subsets of a SplitPlan. No
function here receives the target's training data any other way.
"""

import json
import logging
from dataclasses import dataclass, field
from io import open
from typing import Dict, List, Optional

import numpy as np
import torch
from sklearn.metrics import accuracy_score

from .counterfactual import baseline_counterfactuals, search_counterfactuals
from .errors import NumericError, ParameterError
from .modeling_classifier import (
    evaluate_classifier,
    fit_network,
    per_class_accuracy,
    predict_label,
    predict_proba,
    train_classifier,
    widen_spec,
)
from .modeling_dense import DTYPE, init_dense_net, predict
from .optimization import OptimizerConfig
from .utils_data import Dataset

logger = logging.getLogger(__name__)

ATTACK_HIDDEN_WIDTHS = (1024, 512, 256, 64)


@dataclass(eq=False)
class TransferSet:
    """Adversary-labeled data: queries first, then counterfactual rows."""

    inputs: torch.Tensor
    labels: torch.Tensor
    provenance: List[str]
    skipped: int = 0

    def __len__(self):
        return self.inputs.shape[0]

    def to_dataset(self, class_count):
        return Dataset(self.inputs, self.labels, class_count)

    def counts(self):
        return {"query": self.provenance.count("query"), "counterfactual": self.provenance.count("counterfactual")}


class DPCGenerator(object):
    """Counterfactuals searched from the noisy class prototypes."""

    kind = "dpc"

    def __init__(self, autoencoder, prototypes, config):
        self.autoencoder = autoencoder
        self.prototypes = prototypes
        self.config = config

    def generate(self, queries, target_model, rng):
        return search_counterfactuals(self.prototypes, queries, target_model, self.autoencoder, self.config, rng)


class BaselineGenerator(object):
    """Counterfactuals from data-space gradient ascent on the target model."""

    kind = "nondp"

    def __init__(self, steps=200, step_size=0.05):
        self.steps = steps
        self.step_size = step_size

    def generate(self, queries, target_model, rng):
        return baseline_counterfactuals(queries, target_model, self.steps, self.step_size)


def _generate_rows(generator, queries, target_model, rng):
    """Generator output per query, ``None`` where the generator failed."""
    try:
        return generator.generate(queries, target_model, rng)
    except (NumericError, ParameterError) as e:
        logger.warning("Batch generation failed (%s), retrying query by query", e)
    results = []
    for row in range(queries.shape[0]):
        try:
            results.extend(generator.generate(queries[row:row + 1], target_model, rng))
        except (NumericError, ParameterError) as e:
            logger.warning("Generator failed on query %d: %s", row, e)
            results.append(None)
    return results


def build_transfer_set(queries, target_model, generator=None, per_query=1, rng=None):
    """{X_q, f(X_q)} plus ``per_query`` counterfactuals per query labeled by f."""
    queries = torch.as_tensor(queries, dtype=DTYPE)
    if per_query < 0:
        raise ParameterError("Invalid per_query: {} - should be >= 0".format(per_query))
    if per_query > 0 and (generator is None or rng is None):
        raise ParameterError("Counterfactual rows need a generator and an RngState")
    inputs = [queries]
    provenance = ["query"] * queries.shape[0]
    skipped = 0
    for round_index in range(per_query):
        results = _generate_rows(generator, queries, target_model, rng.spawn("round-{}".format(round_index)))
        samples = [r.sample for r in results if r is not None]
        skipped += sum(r is None for r in results)
        if samples:
            inputs.append(torch.stack(samples))
            provenance.extend(["counterfactual"] * len(samples))
    inputs = torch.cat(inputs)
    if skipped:
        logger.warning("Skipped %d queries the generator failed on", skipped)
    return TransferSet(inputs, predict_label(target_model, inputs), provenance, skipped)


@dataclass
class AttackReport:
    kind: str
    metric: str
    value: float
    config: Dict = field(default_factory=dict)
    seed: Optional[int] = None
    breakdown: Dict = field(default_factory=dict)
    details: Dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "kind": self.kind,
            "metric": self.metric,
            "value": self.value,
            "config": dict(self.config),
            "seed": self.seed,
            "breakdown": dict(self.breakdown),
            "details": dict(self.details),
        }

    @classmethod
    def from_dict(cls, obj):
        return cls(
            kind=obj["kind"],
            metric=obj["metric"],
            value=float(obj["value"]),
            config=obj.get("config", {}),
            seed=obj.get("seed"),
            breakdown=obj.get("breakdown", {}),
            details=obj.get("details", {}),
        )

    def to_json_string(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def to_json_file(self, json_file_path):
        with open(json_file_path, "w", encoding="utf-8") as writer:
            writer.write(self.to_json_string())


def extract_surrogate(transfer_set, spec, known_architecture, rng, test_set, target_model=None, epochs=100,
                      batch_size=64, echo=None):
    """Train f' on the transfer set and score it on the target's held-out test set."""
    if len(transfer_set) == 0:
        raise ParameterError("Cannot extract a surrogate from an empty transfer set")
    surrogate_spec = spec if known_architecture else widen_spec(spec)
    surrogate = train_classifier(
        surrogate_spec, transfer_set.to_dataset(spec.class_count), epochs, batch_size, rng=rng
    )
    details = {
        "transfer_rows": len(transfer_set),
        "skipped": transfer_set.skipped,
        "hidden_widths": surrogate_spec.hidden_widths,
    }
    details.update(transfer_set.counts())
    if target_model is not None:
        agreement = predict_label(surrogate, test_set.features) == predict_label(target_model, test_set.features)
        details["fidelity"] = float(agreement.to(DTYPE).mean())
    config = dict(echo or {})
    config.setdefault("scenario", "known" if known_architecture else "unknown")
    report = AttackReport(
        kind="extract",
        metric="surrogate_accuracy",
        value=evaluate_classifier(surrogate, test_set),
        config=config,
        seed=rng.seed,
        breakdown=per_class_accuracy(surrogate, test_set),
        details=details,
    )
    logger.info("Surrogate accuracy = %.4f (%s architecture)", report.value, config["scenario"])
    return surrogate, report


@dataclass(eq=False)
class ShadowModel:
    net: object
    members: Dataset
    non_members: Dataset


def train_shadow_models(dataset, plan, spec, rng, epochs=100, batch_size=64):
    """One shadow model per adversary subset of ``plan``, trained on its train half."""
    shadows = []
    for index, subset in enumerate(plan.shadows):
        members = dataset.subset(subset.train)
        non_members = dataset.subset(subset.test)
        net = train_classifier(spec, members, epochs, batch_size, rng=rng.spawn("shadow-{}".format(index)))
        shadows.append(ShadowModel(net, members, non_members))
    return shadows


def membership_candidates(dataset, plan):
    """Target subset rows with membership flags: train half = 1, test half = 0."""
    target = plan.target
    features = torch.cat([dataset.features[target.train], dataset.features[target.test]])
    membership = torch.cat([torch.ones(target.train.shape[0], dtype=torch.long),
                            torch.zeros(target.test.shape[0], dtype=torch.long)])
    return features, membership


def _check_shadows(shadow_models):
    if len(shadow_models) < 3:
        raise ParameterError("Invalid shadow models: {} - should be >= 3".format(len(shadow_models)))


def _confidence(net, features):
    return predict_proba(net, features).max(dim=-1).values


def _membership_breakdown(predicted, membership):
    breakdown = {}
    for flag, name in ((1, "members"), (0, "non_members")):
        rows = membership == flag
        if rows.any():
            breakdown[name] = float((predicted[rows] == flag).to(DTYPE).mean())
    return breakdown


def threshold_membership_inference(surrogate, shadow_models, candidates, echo=None, seed=None):
    """Flag a candidate as member when the surrogate's top probability is on the
    member side of the midpoint between shadow member and non-member confidence."""
    _check_shadows(shadow_models)
    features, membership = candidates
    member_conf = torch.cat([_confidence(s.net, s.members.features) for s in shadow_models])
    non_member_conf = torch.cat([_confidence(s.net, s.non_members.features) for s in shadow_models])
    member_mean, non_member_mean = float(member_conf.mean()), float(non_member_conf.mean())
    threshold = 0.5 * (member_mean + non_member_mean)
    confidence = _confidence(surrogate, features)
    if member_mean >= non_member_mean:
        predicted = (confidence >= threshold).long()
    else:
        predicted = (confidence < threshold).long()
    report = AttackReport(
        kind="membership",
        metric="membership_accuracy",
        value=float(accuracy_score(membership.numpy(), predicted.numpy())),
        config=dict(echo or {}, method="threshold"),
        seed=seed,
        breakdown=_membership_breakdown(predicted, membership),
        details={"threshold": threshold, "member_mean": member_mean, "non_member_mean": non_member_mean},
    )
    logger.info("Threshold membership accuracy = %.4f (threshold %.4f)", report.value, threshold)
    return report


@dataclass
class AttackNetSpec:
    """Dense relu attack network [u, 1024, 512, 256, 64, out]."""

    input_dim: int
    output_dim: int = 1
    hidden_widths: List[int] = field(default_factory=lambda: list(ATTACK_HIDDEN_WIDTHS))
    epochs: int = 30
    batch_size: int = 64
    lr: float = 1e-2
    lr_decay: float = 1e-7

    @property
    def layer_widths(self):
        return [self.input_dim] + list(self.hidden_widths) + [self.output_dim]

    def build(self, rng):
        activations = ["relu"] * len(self.hidden_widths) + ["sigmoid" if self.output_dim == 1 else "softmax"]
        return init_dense_net(self.input_dim, list(self.hidden_widths) + [self.output_dim], activations, rng,
                              bias=True)

    def optimizer(self):
        return OptimizerConfig(name="adagrad", lr=self.lr, lr_decay=self.lr_decay)

    def fit(self, features, targets, rng):
        net = self.build(rng.spawn("init"))
        loss = "binary" if self.output_dim == 1 else "softmax"
        return fit_network(net, features, targets, self.epochs, self.batch_size, rng.spawn("batches"),
                           optimizer=self.optimizer(), loss=loss, tag="attack")


def learned_membership_inference(surrogate, shadow_models, attack_spec, candidates, rng, echo=None,
                                 shuffle_labels=False):
    """Attack net on prediction vectors: shadow train halves are members, test halves not."""
    _check_shadows(shadow_models)
    features, membership = candidates
    inputs, labels = [], []
    for shadow in shadow_models:
        inputs.extend([predict_proba(shadow.net, shadow.members.features),
                       predict_proba(shadow.net, shadow.non_members.features)])
        labels.extend([torch.ones(len(shadow.members), dtype=DTYPE), torch.zeros(len(shadow.non_members), dtype=DTYPE)])
    inputs, labels = torch.cat(inputs), torch.cat(labels)
    if inputs.shape[1] != attack_spec.input_dim:
        raise ParameterError("Attack net expects {} inputs, prediction vectors have {}".format(
            attack_spec.input_dim, inputs.shape[1]))
    if shuffle_labels:
        labels = labels[rng.spawn("shuffle").permutation(labels.shape[0])]

    net = attack_spec.fit(inputs, labels, rng)
    predicted = (predict(net, predict_proba(surrogate, features)).reshape(-1) >= 0.5).long()
    report = AttackReport(
        kind="membership",
        metric="membership_accuracy",
        value=float(accuracy_score(membership.numpy(), predicted.numpy())),
        config=dict(echo or {}, method="learned"),
        seed=rng.seed,
        breakdown=_membership_breakdown(predicted, membership),
        details={"attack_widths": attack_spec.layer_widths, "shadow_rows": int(inputs.shape[0]),
                 "shuffled_labels": shuffle_labels},
    )
    logger.info("Learned membership accuracy = %.4f", report.value)
    return report


def attribute_view(features, schema, attribute):
    """(known features, surrogate input with the attribute block zeroed, attribute values)."""
    column = schema.column(attribute)
    if column.kind != "categorical":
        raise ParameterError("Attribute {} is not categorical".format(attribute))
    block = schema.feature_slices()[attribute]
    keep = torch.ones(features.shape[1], dtype=torch.bool)
    keep[block] = False
    hidden = features.clone()
    hidden[:, block] = 0.0
    return features[:, keep], hidden, torch.argmax(features[:, block], dim=1), column


def attribute_inference(surrogate, attack_spec, target_attribute, known_data, candidates, rng, echo=None):
    """Predict a hidden categorical attribute from the known features and f''s output.

    ``known_data`` is adversary data with the attribute visible (shadow subsets);
    ``candidates`` are the rows whose attribute is to be recovered.
    """
    schema = known_data.schema
    if schema is None or target_attribute not in [c.name for c in schema.columns]:
        raise ParameterError("Attribute {} is absent from the schema".format(target_attribute))
    train_known, train_hidden, train_values, column = attribute_view(known_data.features, schema, target_attribute)
    test_known, test_hidden, test_values, _ = attribute_view(candidates.features, schema, target_attribute)
    train_inputs = torch.cat([train_known, predict_proba(surrogate, train_hidden)], dim=1)
    test_inputs = torch.cat([test_known, predict_proba(surrogate, test_hidden)], dim=1)
    if train_inputs.shape[1] != attack_spec.input_dim or attack_spec.output_dim != column.width:
        raise ParameterError("Attack net {} does not fit {} inputs and {} values".format(
            attack_spec.layer_widths, train_inputs.shape[1], column.width))

    net = attack_spec.fit(train_inputs, train_values, rng)
    predicted = torch.argmax(predict(net, test_inputs), dim=-1)
    breakdown = {}
    frequencies = np.bincount(test_values.numpy(), minlength=column.width)
    present = np.flatnonzero(frequencies)
    for index, value in enumerate(column.values):
        rows = test_values == index
        if rows.any():
            breakdown[value] = float((predicted[rows] == index).to(DTYPE).mean())
    report = AttackReport(
        kind="attribute",
        metric="attribute_accuracy",
        value=float(accuracy_score(test_values.numpy(), predicted.numpy())),
        config=dict(echo or {}, attribute=target_attribute),
        seed=rng.seed,
        breakdown=breakdown,
        details={
            "majority_value": column.values[int(present[np.argmax(frequencies[present])])],
            "minority_value": column.values[int(present[np.argmin(frequencies[present])])],
            "attack_widths": attack_spec.layer_widths,
        },
    )
    logger.info("Attribute inference accuracy = %.4f on %s", report.value, target_attribute)
    return report

