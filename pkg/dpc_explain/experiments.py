# coding=utf-8
""" Experiment commands: train the private autoencoder, explain queries, run the
attack campaigns, sweep the privacy budget and merge reports. """

from __future__ import absolute_import, division, print_function

import glob
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np
import pandas as pd
from torch.utils.tensorboard import SummaryWriter

from .attacks import (
    AttackNetSpec,
    AttackReport,
    BaselineGenerator,
    DPCGenerator,
    attribute_inference,
    build_transfer_set,
    extract_surrogate,
    learned_membership_inference,
    membership_candidates,
    threshold_membership_inference,
    train_shadow_models,
)
from .configuration_utils import ATTACK_KINDS, ExperimentConfig
from .counterfactual import search_counterfactuals
from .errors import ConfigError, DPCError, ParameterError
from .file_utils import (
    AUTOENCODER_NAME,
    COUNTERFACTUALS_NAME,
    DECODED_COUNTERFACTUALS_NAME,
    METRICS_SUFFIX,
    NOISE_NAME,
    PLOT_DATA_NAME,
    PROTOTYPES_NAME,
    QUERIES_NAME,
    REPORT_NAME,
    REPORT_SUFFIX,
    SCHEMA_NAME,
    SWEEP_FAILURES_NAME,
    SWEEP_NAME,
    TARGET_MODEL_NAME,
    config_fingerprint,
    feature_names,
    load_json,
    load_network,
    load_prototypes,
    read_features,
    save_json,
    save_network,
    save_prototypes,
    write_csv,
    write_features,
)
from .modeling_autoencoder import Autoencoder, AutoencoderSpec, build_prototypes, train_autoencoder
from .modeling_classifier import evaluate_classifier, train_classifier
from .modeling_dense import RngState, set_seed
from .utils_data import FeatureSchema, decode_record, make_split_plan, processors, train_test_split

logger = logging.getLogger(__name__)

REPORT_COLUMNS = ["metric", "dataset", "epsilon", "generator", "scenario", "seed", "value"]
METRIC_NAMES = ("FR", "AD", "MSE", "surrogate_accuracy", "membership_accuracy", "attribute_accuracy")


@dataclass
class MetricRow:
    metric: str
    value: float
    dataset: str
    epsilon: float
    seed: int
    generator: str = "dpc"
    scenario: str = "none"

    def __post_init__(self):
        if self.metric not in METRIC_NAMES:
            raise ParameterError("Invalid metric: {} - should be one of {}".format(self.metric, METRIC_NAMES))
        if self.metric == "FR" and not 0.0 <= self.value <= 1.0:
            raise ParameterError("Invalid flipping ratio: {} - should be in [0, 1]".format(self.value))
        if self.metric == "AD" and not self.value >= 0.0:
            raise ParameterError("Invalid average distance: {} - should be >= 0".format(self.value))

    def to_dict(self):
        return {column: getattr(self, column) for column in REPORT_COLUMNS}

    @classmethod
    def from_dict(cls, obj):
        return cls(
            metric=obj["metric"],
            value=float(obj["value"]),
            dataset=obj["dataset"],
            epsilon=float(obj["epsilon"]),
            seed=int(obj["seed"]),
            generator=obj.get("generator", "dpc"),
            scenario=obj.get("scenario", "none"),
        )

    @classmethod
    def from_report(cls, report):
        config = report.config
        generator = config.get("generator", "dpc")
        if "method" in config:
            generator = "{}/{}".format(generator, config["method"])
        return cls(
            metric=report.metric,
            value=report.value,
            dataset=config.get("dataset", ""),
            epsilon=float(config.get("epsilon", float("nan"))),
            seed=int(report.seed if report.seed is not None else -1),
            generator=generator,
            scenario=config.get("scenario", "none"),
        )


def _set_up(config, seed):
    seed = config.seeds[0] if seed is None else int(seed)
    set_seed(seed)
    return seed, RngState(seed)


def load_dataset(config, rng):
    return processors[config.dataset_kind]().get_dataset(config, rng.spawn("data"))


def run_directory(config, seed):
    path = os.path.join(config.out_dir, "seed-{}".format(seed))
    os.makedirs(path, exist_ok=True)
    return path


def _tb_writer(config, name):
    if config.tensorboard_dir is None:
        return None
    return SummaryWriter(os.path.join(config.tensorboard_dir, name))


def write_metrics(rows, path, config):
    save_json({"config_hash": config_fingerprint(config.to_json_string()), "rows": [r.to_dict() for r in rows]}, path)


def load_autoencoder(run_dir):
    net, obj = load_network(os.path.join(run_dir, AUTOENCODER_NAME))
    return Autoencoder(net, AutoencoderSpec.from_dict(obj["spec"]))


def cmd_train_ae(config, seed=None):
    """Train the private autoencoder and the target model, write the artifacts and
    return the held-out reconstruction MSE row."""
    seed, rng = _set_up(config, seed)
    dataset = load_dataset(config, rng)
    train, test = train_test_split(rng.spawn("split"), dataset, config.test_fraction)
    spec = config.autoencoder_spec()
    budget = spec.budget(config.epsilon_value, config.accounting, dataset.feature_dim)
    tb_writer = _tb_writer(config, "autoencoder-seed-{}".format(seed))

    training = train_autoencoder(
        spec,
        train,
        budget,
        config.ae_epochs,
        config.ae_batch_size,
        rng.spawn("autoencoder"),
        optimizer=config.autoencoder_optimizer(),
        held_out=test,
        tb_writer=tb_writer,
        disable_progress=config.disable_progress,
        reduction=config.ae_loss_reduction,
    )
    prototypes = build_prototypes(training.autoencoder, train)
    classifier_spec = config.classifier_spec(dataset.class_count)
    target = train_classifier(
        classifier_spec,
        train,
        config.classifier_epochs,
        config.classifier_batch_size,
        config.classifier_optimizer(),
        rng.spawn("target"),
        test_data=test,
        tb_writer=tb_writer,
        disable_progress=config.disable_progress,
    )
    if tb_writer is not None:
        tb_writer.close()

    run_dir = run_directory(config, seed)
    config.save_pretrained(run_dir)
    save_network(training.autoencoder.net, os.path.join(run_dir, AUTOENCODER_NAME), spec=spec.to_dict(),
                 budget=budget.to_dict(), noise_file=NOISE_NAME)
    save_json(training.noisy.to_dict(), os.path.join(run_dir, NOISE_NAME))
    save_prototypes(prototypes, os.path.join(run_dir, PROTOTYPES_NAME))
    save_network(target, os.path.join(run_dir, TARGET_MODEL_NAME), spec=classifier_spec.to_dict(),
                 test_accuracy=evaluate_classifier(target, test))
    if dataset.schema is not None:
        save_json(dataset.schema.to_dict(), os.path.join(run_dir, SCHEMA_NAME))
    write_features(test.features, os.path.join(run_dir, QUERIES_NAME))

    rows = [MetricRow("MSE", training.held_out_mse, config.name, config.epsilon_value, seed)]
    write_metrics(rows, os.path.join(run_dir, "train_ae" + METRICS_SUFFIX), config)
    logger.info("***** Eval results *****")
    logger.info("  MSE = %.6g (epsilon=%s, seed=%d)", training.held_out_mse, config.epsilon, seed)
    return rows


def counterfactual_columns(dim):
    names = feature_names(dim)
    return ["query_" + n for n in names], ["cf_" + n for n in names]


def flipping_ratio_and_distance(frame):
    """FR and AD from a counterfactual table.

    A query counts as flipped when any of its counterfactuals reaches the target;
    its distance is the mean Euclidean distance to its counterfactual set.
    """
    if len(frame) == 0:
        raise ParameterError("No counterfactuals to score")
    query_columns = [c for c in frame.columns if c.startswith("query_f")]
    cf_columns = [c for c in frame.columns if c.startswith("cf_f")]
    distance = np.linalg.norm(frame[cf_columns].to_numpy() - frame[query_columns].to_numpy(), axis=1)
    per_query = pd.DataFrame({
        "query_index": frame["query_index"].to_numpy(),
        "flipped": frame["flipped"].to_numpy().astype(bool),
        "distance": distance,
    }).groupby("query_index").agg(flipped=("flipped", "max"), distance=("distance", "mean"))
    return float(per_query["flipped"].mean()), float(per_query["distance"].mean())


def cmd_explain(config, queries_path=None, seed=None):
    """Search ``counterfactuals_per_query`` counterfactuals per query from the saved
    prototypes and score FR/AD from the written table."""
    seed = config.seeds[0] if seed is None else int(seed)
    run_dir = os.path.join(config.out_dir, "seed-{}".format(seed))
    autoencoder = load_autoencoder(run_dir)
    prototypes = load_prototypes(os.path.join(run_dir, PROTOTYPES_NAME))
    target, _ = load_network(os.path.join(run_dir, TARGET_MODEL_NAME))
    queries = read_features(queries_path or os.path.join(run_dir, QUERIES_NAME))[:config.explain_queries]
    if queries.shape[0] == 0:
        raise ParameterError("No queries to explain")

    count = config.counterfactuals_per_query
    # the first counterfactual starts at the bare prototype, the rest from jittered starts
    plain_config = config.search_config(init_noise=0.0)
    jittered_config = config.search_config(init_noise=config.explain_init_noise)
    rng = RngState(seed).spawn("search")
    query_columns, cf_columns = counterfactual_columns(queries.shape[1])
    records = []
    start = time.perf_counter()
    for k in range(count):
        search_config = plain_config if k == 0 else jittered_config
        results = search_counterfactuals(prototypes, queries, target, autoencoder, search_config,
                                         rng.spawn("counterfactual-{}".format(k)))
        for index, result in enumerate(results):
            record = {
                "query_index": index,
                "cf_index": k,
                "target_class": result.target_class,
                "predicted_class": result.predicted_class,
                "flipped": int(result.flipped),
                "best_loss": result.best_loss,
            }
            record.update(zip(query_columns, queries[index].tolist()))
            record.update(zip(cf_columns, result.sample.tolist()))
            records.append(record)
    elapsed = time.perf_counter() - start
    logger.info("Explanation time per query = %.4f s (%d counterfactuals each)", elapsed / queries.shape[0], count)

    path = os.path.join(run_dir, COUNTERFACTUALS_NAME)
    write_csv(pd.DataFrame.from_records(records), path)
    flip_ratio, average_distance = flipping_ratio_and_distance(pd.read_csv(path, encoding="utf-8"))

    schema_path = os.path.join(run_dir, SCHEMA_NAME)
    if os.path.isfile(schema_path):
        schema = FeatureSchema.from_dict(load_json(schema_path))
        decoded = [dict(decode_record([r[c] for c in cf_columns], schema), query_index=r["query_index"],
                        cf_index=r["cf_index"]) for r in records]
        write_csv(pd.DataFrame.from_records(decoded), os.path.join(run_dir, DECODED_COUNTERFACTUALS_NAME))

    rows = [
        MetricRow("FR", flip_ratio, config.name, config.epsilon_value, seed),
        MetricRow("AD", average_distance, config.name, config.epsilon_value, seed),
    ]
    write_metrics(rows, os.path.join(run_dir, "explain" + METRICS_SUFFIX), config)
    logger.info("***** Eval results *****")
    logger.info("  FR = %.4f", flip_ratio)
    logger.info("  AD = %.4f", average_distance)
    return rows


def _sample_queries(pool, count, rng):
    if count > len(pool):
        logger.warning("Only %d adversary rows available for %d queries", len(pool), count)
        count = len(pool)
    return pool.features[rng.permutation(len(pool))[:count]]


def cmd_attack(config, kind, seed=None):
    """Train the target and the private explainer on the owner subset of a SplitPlan,
    then attack through both the non-private baseline and the private generator."""
    if kind not in ATTACK_KINDS:
        raise ConfigError("Invalid attack kind: {} - should be one of {}".format(kind, ATTACK_KINDS))
    seed, rng = _set_up(config, seed)
    dataset = load_dataset(config, rng)
    if kind == "attribute":
        if dataset.schema is None or config.attribute not in [c.name for c in dataset.schema.columns]:
            raise ConfigError("Attribute {} is absent from the dataset schema".format(config.attribute))
    plan = make_split_plan(rng.spawn("plan"), dataset, config.subset_size)
    owner_train = dataset.subset(plan.target.train)
    owner_test = dataset.subset(plan.target.test)

    spec = config.classifier_spec(dataset.class_count)
    target = train_classifier(spec, owner_train, config.classifier_epochs, config.classifier_batch_size,
                              config.classifier_optimizer(), rng.spawn("target"), test_data=owner_test)
    ae_spec = config.autoencoder_spec()
    training = train_autoencoder(
        ae_spec,
        owner_train,
        ae_spec.budget(config.epsilon_value, config.accounting, dataset.feature_dim),
        config.ae_epochs,
        config.ae_batch_size,
        rng.spawn("autoencoder"),
        optimizer=config.autoencoder_optimizer(),
        disable_progress=config.disable_progress,
        reduction=config.ae_loss_reduction,
    )
    generators = {
        "nondp": BaselineGenerator(config.baseline_steps, config.baseline_step_size),
        "dpc": DPCGenerator(training.autoencoder, build_prototypes(training.autoencoder, owner_train),
                            config.search_config()),
    }

    pool = dataset.subset(plan.adversary_indices())
    attack_rng = rng.spawn("attack")
    echo = {"dataset": config.name, "epsilon": config.epsilon_value}
    reports = []
    if kind == "extract":
        for count in config.queries:
            queries = _sample_queries(pool, count, attack_rng.spawn("queries-{}".format(count)))
            transfer_sets = {"base": build_transfer_set(queries, target, per_query=0)}
            if config.per_query > 0:
                for name, generator in generators.items():
                    transfer_sets[name] = build_transfer_set(
                        queries, target, generator, config.per_query,
                        attack_rng.spawn("transfer-{}-{}".format(name, count)))
            for name, transfer_set in transfer_sets.items():
                for scenario in config.scenarios:
                    _, report = extract_surrogate(
                        transfer_set, spec, scenario == "known",
                        attack_rng.spawn("surrogate-{}-{}-{}".format(name, scenario, count)),
                        owner_test, target, config.classifier_epochs, config.classifier_batch_size,
                        echo=dict(echo, queries=count, generator=name, scenario=scenario))
                    reports.append(report)
    else:
        count = max(config.queries)
        scenario = config.scenarios[0]
        queries = _sample_queries(pool, count, attack_rng.spawn("queries-{}".format(count)))
        surrogates = {}
        for name, generator in generators.items():
            transfer_set = build_transfer_set(queries, target, generator, config.per_query,
                                              attack_rng.spawn("transfer-{}-{}".format(name, count)))
            surrogates[name], _ = extract_surrogate(
                transfer_set, spec, scenario == "known", attack_rng.spawn("surrogate-{}".format(name)), owner_test,
                target, config.classifier_epochs, config.classifier_batch_size)
        if kind == "membership":
            shadows = train_shadow_models(dataset, plan, spec, attack_rng.spawn("shadows"),
                                          config.classifier_epochs, config.classifier_batch_size)
            candidates = membership_candidates(dataset, plan)
            attack_spec = AttackNetSpec(input_dim=dataset.class_count, epochs=config.attack_epochs)
            for name, surrogate in surrogates.items():
                run_echo = dict(echo, queries=count, generator=name, scenario=scenario)
                reports.append(threshold_membership_inference(surrogate, shadows, candidates, run_echo, seed))
                reports.append(learned_membership_inference(
                    surrogate, shadows, attack_spec, candidates, attack_rng.spawn("membership-{}".format(name)),
                    run_echo))
        else:
            width = dataset.schema.column(config.attribute).width
            attack_spec = AttackNetSpec(input_dim=dataset.feature_dim - width + dataset.class_count,
                                        output_dim=width, epochs=config.attack_epochs)
            for name, surrogate in surrogates.items():
                reports.append(attribute_inference(
                    surrogate, attack_spec, config.attribute, pool, owner_train,
                    attack_rng.spawn("attribute-{}".format(name)),
                    dict(echo, queries=count, generator=name, scenario=scenario)))

    attack_dir = os.path.join(run_directory(config, seed), "attack")
    os.makedirs(attack_dir, exist_ok=True)
    rows = []
    for index, report in enumerate(reports):
        name = "{}-{:03d}-{}-{}{}".format(kind, index, report.config.get("generator", "none"),
                                           report.config.get("scenario", "none"), REPORT_SUFFIX)
        report.to_json_file(os.path.join(attack_dir, name))
        rows.append(MetricRow.from_report(report).to_dict())
    write_csv(pd.DataFrame(rows, columns=REPORT_COLUMNS), os.path.join(attack_dir, "attack_{}.csv".format(kind)))
    return reports


def run_sweep_cell(config_dict, epsilon, seed):
    """One (epsilon, seed) pipeline run; returns metric rows or a failure record."""
    config = ExperimentConfig.from_dict(config_dict)
    config.update({"epsilon": epsilon, "out_dir": os.path.join(config.out_dir, "epsilon-{}".format(epsilon))})
    try:
        rows = cmd_train_ae(config, seed) + cmd_explain(config, None, seed)
    except DPCError as e:
        logger.error("Sweep cell epsilon=%s seed=%s failed: %s", epsilon, seed, e)
        return [], {"epsilon": epsilon, "seed": seed, "error": type(e).__name__, "message": str(e)}
    except Exception as e:
        # unexpected crashes become failure rows too
        logger.exception("Sweep cell epsilon=%s seed=%s crashed", epsilon, seed)
        return [], {"epsilon": epsilon, "seed": seed, "error": type(e).__name__, "message": str(e)}
    return [r.to_dict() for r in rows], None


def cmd_sweep(config, epsilons=None, workers=None):
    """Run the pipeline for every (epsilon, seed) cell and aggregate per epsilon."""
    epsilons = [float(e) for e in (epsilons or config.epsilons)]
    workers = workers or config.workers
    cells = [(epsilon, seed) for epsilon in epsilons for seed in config.seeds]
    config_dict = config.to_dict()
    logger.info("***** Running sweep *****")
    logger.info("  Num cells = %d", len(cells))
    logger.info("  Workers = %d", workers)

    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as executor:
            futures = [executor.submit(run_sweep_cell, config_dict, epsilon, seed) for epsilon, seed in cells]
            outcomes = [future.result() for future in futures]
    else:
        outcomes = [run_sweep_cell(config_dict, epsilon, seed) for epsilon, seed in cells]

    rows = [row for cell_rows, _ in outcomes for row in cell_rows]
    failures = [failure for _, failure in outcomes if failure is not None]
    os.makedirs(config.out_dir, exist_ok=True)
    frame = pd.DataFrame(rows, columns=REPORT_COLUMNS)
    write_csv(frame, os.path.join(config.out_dir, SWEEP_NAME))
    plot = frame.groupby(["metric", "epsilon"])["value"].agg(["mean", "std", "count"]).reset_index()
    write_csv(plot, os.path.join(config.out_dir, PLOT_DATA_NAME))
    write_csv(pd.DataFrame(failures, columns=["epsilon", "seed", "error", "message"]),
              os.path.join(config.out_dir, SWEEP_FAILURES_NAME))
    if failures:
        logger.warning("%d of %d sweep cells failed", len(failures), len(cells))
    return frame, plot


def _skipped_row(path):
    return {"metric": "skipped", "dataset": path, "epsilon": math.nan, "generator": "", "scenario": "",
            "seed": "", "value": math.nan}


def cmd_report(directory):
    """Merge every metrics and attack report file under ``directory`` into report.csv."""
    if not os.path.isdir(directory):
        raise ConfigError("Report directory not found: {}".format(directory))
    paths = glob.glob(os.path.join(directory, "**", "*" + METRICS_SUFFIX), recursive=True)
    paths += glob.glob(os.path.join(directory, "**", "*" + REPORT_SUFFIX), recursive=True)
    rows = []
    for path in sorted(paths, key=lambda p: os.path.relpath(p, directory)):
        relative = os.path.relpath(path, directory)
        try:
            obj = load_json(path)
            if path.endswith(REPORT_SUFFIX):
                file_rows = [MetricRow.from_report(AttackReport.from_dict(obj)).to_dict()]
            else:
                file_rows = [MetricRow.from_dict(row).to_dict() for row in obj["rows"]]
        except (DPCError, KeyError, TypeError, ValueError) as e:
            logger.warning("Skipping malformed report %s: %s", relative, e)
            file_rows = [_skipped_row(relative)]
        rows.extend(file_rows)
    frame = pd.DataFrame(rows, columns=REPORT_COLUMNS)
    write_csv(frame, os.path.join(directory, REPORT_NAME))
    logger.info("Merged %d rows from %d files into %s", len(frame), len(paths), REPORT_NAME)
    return frame
