__version__ = "0.1.0"

from .errors import (DPCError, StructuralError, ParameterError, ConfigError,
                     IngestionError, NumericError, TrainingError)
from .modeling_dense import (DTYPE, RngState, DenseLayer, DenseNet, GradientSet,
                             set_seed, forward, backward, predict, init_dense_net,
                             affine_norm_layer, sample_laplace, laplace_inverse_cdf)
from .optimization import AdamState, AdagradState, OptimizerConfig, adam_step, adagrad_step
from .utils_data import (ColumnSpec, FeatureSchema, Dataset, SplitPlan, load_csv, load_idx,
                         load_schema, synth_blobs, make_split_plan, train_test_split,
                         decode_record, with_leaky_attribute, processors)
from .functional_mechanism import (PrivacyBudget, CoefficientGroups, NoisyCoefficients,
                                   basis_g, sensitivity_bound, aggregate_coefficients, perturb,
                                   noise_term, plain_loss, perturbed_loss,
                                   coordinate_sensitivity_oracle, empirical_privacy_ratio)
from .modeling_autoencoder import (AutoencoderSpec, Autoencoder, Prototype, train_autoencoder,
                                   fit_reconstruction, noise_weight, build_prototypes, reconstruction_mse)
from .counterfactual import (SEARCH_PRESETS, SearchConfig, CounterfactualResult,
                             counterfactual_loss, search_counterfactual, search_counterfactuals,
                             baseline_counterfactual, baseline_counterfactuals, unbiasedness_probe)
from .modeling_classifier import (ClassifierSpec, widen_spec, train_classifier, predict_proba,
                                  predict_label, evaluate_classifier)
from .attacks import (TransferSet, AttackReport, AttackNetSpec, ShadowModel, DPCGenerator,
                      BaselineGenerator, build_transfer_set, extract_surrogate, train_shadow_models,
                      membership_candidates, threshold_membership_inference,
                      learned_membership_inference, attribute_inference)
from .configuration_utils import ExperimentConfig
