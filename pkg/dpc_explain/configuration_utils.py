# coding=utf-8
""" Experiment configuration: one JSON document plus command-line overrides. """

from __future__ import absolute_import, division, print_function, unicode_literals

import copy
import json
import logging
import math
import os
from io import open

from .counterfactual import SEARCH_PRESETS, SearchConfig
from .errors import ConfigError, DPCError
from .file_utils import CONFIG_NAME
from .functional_mechanism import REDUCTIONS
from .modeling_autoencoder import AutoencoderSpec
from .modeling_classifier import ClassifierSpec
from .optimization import OptimizerConfig

logger = logging.getLogger(__name__)

DATASET_KINDS = ("synth", "csv", "idx")
ATTACK_KINDS = ("extract", "membership", "attribute")


class ExperimentConfig(object):
    r""" Everything one experiment run needs.

        Parameters:
            ``dataset_kind``: ``synth``, ``csv`` or ``idx``. ``csv`` reads ``dataset_path`` with ``schema_path``,
            ``idx`` reads images from ``dataset_path`` and labels from ``labels_path``.
            ``synth``: blob parameters (n_per_class, dim, class_count, separation, spread, leaky_attribute).
            ``epsilon``: privacy budget of the autoencoder objective, ``inf`` trains without noise.
            ``search_preset``: ``mixed``, ``image`` or ``binary``; explicit ``alpha``/``beta``/``gamma`` win.
            ``seeds``: experiment seeds; every random stage derives its stream from one of them.
    """

    def __init__(self, **kwargs):
        self.dataset_kind = kwargs.pop("dataset_kind", "synth")
        self.dataset_name = kwargs.pop("dataset_name", None)
        self.dataset_path = kwargs.pop("dataset_path", None)
        self.labels_path = kwargs.pop("labels_path", None)
        self.schema_path = kwargs.pop("schema_path", None)
        self.synth = kwargs.pop("synth", {"n_per_class": 1000, "dim": 8, "class_count": 2, "separation": 1.5})
        self.test_fraction = kwargs.pop("test_fraction", 0.2)

        self.encoder_widths = kwargs.pop("encoder_widths", [16])
        self.tied_weights = kwargs.pop("tied_weights", False)
        self.epsilon = kwargs.pop("epsilon", 1.0)
        self.accounting = kwargs.pop("accounting", "coordinate")
        self.ae_epochs = kwargs.pop("ae_epochs", 300)
        self.ae_batch_size = kwargs.pop("ae_batch_size", 64)
        self.ae_learning_rate = kwargs.pop("ae_learning_rate", 1e-3)
        self.ae_loss_reduction = kwargs.pop("ae_loss_reduction", "mean")

        self.classifier_widths = kwargs.pop("classifier_widths", [32, 16])
        self.classifier_activation = kwargs.pop("classifier_activation", "tanh")
        self.classifier_epochs = kwargs.pop("classifier_epochs", 100)
        self.classifier_batch_size = kwargs.pop("classifier_batch_size", 64)
        self.classifier_learning_rate = kwargs.pop("classifier_learning_rate", 1e-3)

        self.search_preset = kwargs.pop("search_preset", "mixed")
        self.alpha = kwargs.pop("alpha", None)
        self.beta = kwargs.pop("beta", None)
        self.gamma = kwargs.pop("gamma", None)
        self.search_iterations = kwargs.pop("search_iterations", 500)
        self.search_step_size = kwargs.pop("search_step_size", 0.05)
        self.target_class = kwargs.pop("target_class", None)
        self.counterfactuals_per_query = kwargs.pop("counterfactuals_per_query", 10)
        self.explain_init_noise = kwargs.pop("explain_init_noise", 0.05)
        self.explain_queries = kwargs.pop("explain_queries", 500)
        self.baseline_steps = kwargs.pop("baseline_steps", 200)
        self.baseline_step_size = kwargs.pop("baseline_step_size", 0.05)

        self.subset_size = kwargs.pop("subset_size", 500)
        self.queries = kwargs.pop("queries", [250, 500, 1000, 2000])
        self.per_query = kwargs.pop("per_query", 1)
        self.scenarios = kwargs.pop("scenarios", ["known", "unknown"])
        self.attribute = kwargs.pop("attribute", "group")
        self.attack_epochs = kwargs.pop("attack_epochs", 30)

        self.epsilons = kwargs.pop("epsilons", [5e-4, 0.01, 0.1, 1.0])
        self.workers = kwargs.pop("workers", 1)
        self.seeds = kwargs.pop("seeds", [42])
        self.out_dir = kwargs.pop("out_dir", "output")
        self.tensorboard_dir = kwargs.pop("tensorboard_dir", None)
        self.disable_progress = kwargs.pop("disable_progress", True)

        for key, value in kwargs.items():
            logger.warning("Unknown configuration key %s = %r ignored", key, value)

    def validate(self):
        if self.dataset_kind not in DATASET_KINDS:
            raise ConfigError("Invalid dataset_kind: {} - should be one of {}".format(self.dataset_kind, DATASET_KINDS))
        try:
            epsilon = float(self.epsilon)
        except (TypeError, ValueError):
            raise ConfigError("Invalid epsilon: {} - should be a number".format(self.epsilon))
        if not epsilon > 0:
            raise ConfigError("Invalid epsilon: {} - should be > 0".format(self.epsilon))
        if not self.seeds:
            raise ConfigError("Invalid seeds: {} - should be a nonempty list".format(self.seeds))
        if self.ae_loss_reduction not in REDUCTIONS:
            raise ConfigError("Invalid ae_loss_reduction: {} - should be one of {}".format(
                self.ae_loss_reduction, REDUCTIONS))
        if self.search_preset not in SEARCH_PRESETS:
            raise ConfigError("Invalid search_preset: {} - should be one of {}".format(
                self.search_preset, sorted(SEARCH_PRESETS)))
        if self.dataset_kind == "csv":
            self._require_file("dataset_path")
            self._require_file("schema_path")
        elif self.dataset_kind == "idx":
            self._require_file("dataset_path")
            self._require_file("labels_path")
        elif self.schema_path is not None:
            self._require_file("schema_path")
        try:
            self.autoencoder_spec()
            self.search_config()
        except DPCError as e:
            raise ConfigError(str(e))
        return self

    def _require_file(self, key):
        path = getattr(self, key)
        if path is None:
            raise ConfigError("dataset_kind {} needs {}".format(self.dataset_kind, key))
        if not os.path.isfile(path):
            raise ConfigError("File not found: {} ({})".format(path, key))

    @property
    def name(self):
        return self.dataset_name or self.dataset_kind

    @property
    def epsilon_value(self):
        return float(self.epsilon)

    def autoencoder_spec(self):
        return AutoencoderSpec(encoder_widths=list(self.encoder_widths), tied_weights=self.tied_weights)

    def classifier_spec(self, class_count):
        return ClassifierSpec(list(self.classifier_widths), class_count, self.classifier_activation)

    def autoencoder_optimizer(self):
        return OptimizerConfig(name="adam", lr=self.ae_learning_rate)

    def classifier_optimizer(self):
        return OptimizerConfig(name="adam", lr=self.classifier_learning_rate)

    def search_config(self, init_noise=0.0):
        alpha, beta, gamma = SEARCH_PRESETS[self.search_preset]
        return SearchConfig(
            alpha=alpha if self.alpha is None else self.alpha,
            beta=beta if self.beta is None else self.beta,
            gamma=gamma if self.gamma is None else self.gamma,
            iterations=self.search_iterations,
            step_size=self.search_step_size,
            target_class=self.target_class,
            init_noise=init_noise,
        )

    def update(self, overrides):
        """Set every non-None entry of ``overrides``; flags win over file values."""
        for key, value in overrides.items():
            if value is None:
                continue
            if not hasattr(self, key):
                raise ConfigError("Unknown configuration key: {}".format(key))
            setattr(self, key, value)
        return self

    def copy(self, **overrides):
        config = copy.deepcopy(self)
        return config.update(overrides)

    def save_pretrained(self, save_directory):
        """Write ``config.json`` into ``save_directory``."""
        if not os.path.isdir(save_directory):
            raise ConfigError("Saving path should be a directory: {}".format(save_directory))
        self.to_json_file(os.path.join(save_directory, CONFIG_NAME))

    @classmethod
    def from_dict(cls, json_object):
        return cls(**copy.deepcopy(json_object))

    @classmethod
    def from_json_file(cls, json_file):
        if not os.path.isfile(json_file):
            raise ConfigError("Configuration file not found: {}".format(json_file))
        with open(json_file, "r", encoding="utf-8") as reader:
            text = reader.read()
        try:
            return cls.from_dict(json.loads(text))
        except (TypeError, ValueError) as e:
            raise ConfigError("Malformed configuration file {}: {}".format(json_file, e))

    def __eq__(self, other):
        return isinstance(other, ExperimentConfig) and self.__dict__ == other.__dict__

    def __repr__(self):
        return str(self.to_json_string())

    def to_dict(self):
        output = copy.deepcopy(self.__dict__)
        if isinstance(output["epsilon"], float) and math.isinf(output["epsilon"]):
            output["epsilon"] = "inf"
        output["epsilons"] = ["inf" if isinstance(e, float) and math.isinf(e) else e for e in output["epsilons"]]
        return output

    def to_json_string(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def to_json_file(self, json_file_path):
        with open(json_file_path, "w", encoding="utf-8") as writer:
            writer.write(self.to_json_string())
