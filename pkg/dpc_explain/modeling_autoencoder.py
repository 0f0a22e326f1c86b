# coding=utf-8
""" Sigmoid autoencoder trained on the perturbed reconstruction objective, and the
class prototypes built from its latent space. """

import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional

import torch
from tqdm import trange

from .errors import NumericError, ParameterError, StructuralError, TrainingError
from .functional_mechanism import (
    REDUCTIONS,
    PrivacyBudget,
    aggregate_coefficients,
    perturb,
    perturbed_loss,
    plain_loss,
    sensitivity_bound,
)
from .modeling_dense import (
    DTYPE,
    DenseLayer,
    DenseNet,
    affine_norm_layer,
    forward,
    init_dense_layer,
    predict,
)
from .optimization import OptimizerConfig

logger = logging.getLogger(__name__)


@dataclass
class AutoencoderSpec:
    """Encoder widths; the decoder mirrors them in reverse.

    Every hidden layer after the first is preceded by an affine_norm layer so
    its input lies in (-1, 1), and the reconstruction is sigmoid + affine_norm.
    """

    encoder_widths: List[int] = field(default_factory=lambda: [16])
    tied_weights: bool = False
    activation: str = "sigmoid"

    def __post_init__(self):
        self.encoder_widths = [int(w) for w in self.encoder_widths]
        if not self.encoder_widths or any(w < 1 for w in self.encoder_widths):
            raise ParameterError("Invalid encoder widths: {} - should be positive".format(self.encoder_widths))
        if self.activation != "sigmoid":
            raise ParameterError("Invalid activation: {} - the perturbed objective needs 'sigmoid'".format(self.activation))
        if self.tied_weights and len(self.encoder_widths) != 1:
            raise ParameterError("Tied weights are only available for a single hidden layer")

    @property
    def width(self):
        """K: the widest hidden layer."""
        return max(self.encoder_widths)

    @property
    def latent_dim(self):
        return self.encoder_widths[-1]

    @property
    def decoder_widths(self):
        return list(reversed(self.encoder_widths[:-1]))

    @property
    def encoder_layer_count(self):
        return 2 * len(self.encoder_widths) - 1

    def budget(self, epsilon, accounting="coordinate", dim=1):
        return PrivacyBudget.for_width(self.width, epsilon, accounting, dim)

    def build(self, input_dim, rng):
        layers = []
        dim = input_dim
        for index, width in enumerate(self.encoder_widths):
            if index > 0:
                layers.append(affine_norm_layer(dim))
            layers.append(init_dense_layer(dim, width, self.activation, rng))
            dim = width
        for width in self.decoder_widths + [input_dim]:
            layers.append(affine_norm_layer(dim))
            if self.tied_weights:
                layers.append(DenseLayer(weights=layers[0].weights.T.clone(), activation=self.activation))
            else:
                layers.append(init_dense_layer(dim, width, self.activation, rng))
            dim = width
        layers.append(affine_norm_layer(input_dim))
        return Autoencoder(DenseNet(layers, input_dim), self)

    def to_dict(self):
        return {"encoder_widths": list(self.encoder_widths), "tied_weights": self.tied_weights,
                "activation": self.activation}

    @classmethod
    def from_dict(cls, obj):
        return cls(**obj)


@dataclass(eq=False)
class Autoencoder:
    net: DenseNet
    spec: AutoencoderSpec

    def __post_init__(self):
        if len(self.net.layers) != 2 * self.spec.encoder_layer_count + 2:
            raise StructuralError("Network with {} layers does not match encoder widths {}".format(
                len(self.net.layers), self.spec.encoder_widths))

    @property
    def input_dim(self):
        return self.net.input_dim

    @property
    def encoder(self):
        return self.net.slice(0, self.spec.encoder_layer_count)

    @property
    def decoder(self):
        return self.net.slice(self.spec.encoder_layer_count)

    def encode(self, x):
        return predict(self.encoder, x)

    def decode(self, z):
        return predict(self.decoder, z)

    def reconstruct(self, x):
        return predict(self.net, x)

    def with_parameters(self, params):
        return Autoencoder(self.net.with_parameters(params), self.spec)

    def to_dict(self):
        return {"spec": self.spec.to_dict(), "net": self.net.to_dict()}

    @classmethod
    def from_dict(cls, obj):
        return cls(DenseNet.from_dict(obj["net"]), AutoencoderSpec.from_dict(obj["spec"]))


def _tie(grads):
    # single hidden layer: params are [W_enc, W_dec] with W_dec = W_enc^T
    shared = grads[0] + grads[1].T
    return [shared, shared.T]


def reconstruction_mse(autoencoder, dataset):
    """Mean squared reconstruction error per feature entry."""
    features = dataset.features if hasattr(dataset, "features") else dataset
    error = autoencoder.reconstruct(features) - features
    return float((error * error).mean())


@dataclass(eq=False)
class AutoencoderTraining:
    autoencoder: Autoencoder
    noisy: Optional[object]
    losses: List[float] = field(default_factory=list)
    held_out_mse: Optional[float] = None


def noise_weight(batch_rows, n, batches_per_epoch, reduction="mean"):
    """Share of the noise term one batch carries."""
    if reduction == "sum":
        return batch_rows / n
    return 1.0 / batches_per_epoch


def fit_reconstruction(autoencoder, dataset, epochs, batch_size, rng, noisy=None, optimizer=None,
                       held_out=None, tb_writer=None, disable_progress=True, reduction="mean"):
    """Minimize the reconstruction objective, perturbed when ``noisy`` is given.

    With ``reduction="mean"`` each batch averages its squared errors and carries
    the noise term divided by the number of batches per epoch. With ``"sum"`` a
    batch adds its squared errors and carries the noise term with weight
    ``len(batch) / N``. Either way one epoch sees exactly one copy of the noise.
    """
    if batch_size < 1:
        raise ParameterError("Invalid batch size: {} - should be >= 1".format(batch_size))
    if reduction not in REDUCTIONS:
        raise ParameterError("Invalid reduction: {} - should be one of {}".format(reduction, REDUCTIONS))
    optimizer = optimizer or OptimizerConfig()
    features = dataset.features
    n = features.shape[0]
    batches_per_epoch = max(1, math.ceil(n / batch_size))
    params = autoencoder.net.parameters()
    state = optimizer.init_state(params)

    logger.info("***** Running training *****")
    logger.info("  Num examples = %d", n)
    logger.info("  Num Epochs = %d", epochs)
    logger.info("  Batch size = %d", batch_size)
    logger.info("  Objective = %s", "plain" if noisy is None else "perturbed")
    logger.info("  Reduction = %s", reduction)

    losses = []
    for epoch in trange(int(epochs), desc="Epoch", disable=disable_progress):
        order = rng.permutation(n)
        epoch_loss = 0.0
        for start in range(0, n, batch_size):
            batch = features[order[start:start + batch_size]]
            try:
                if noisy is None:
                    loss, grads = plain_loss(autoencoder.net, batch, reduction)
                else:
                    loss, grads = perturbed_loss(autoencoder.net, batch, noisy,
                                                 noise_weight(batch.shape[0], n, batches_per_epoch, reduction),
                                                 reduction)
                grad_list = grads.as_list()
                if autoencoder.spec.tied_weights:
                    grad_list = _tie(grad_list)
                params, state = optimizer.step(params, grad_list, state)
            except NumericError as e:
                raise TrainingError("Training diverged at epoch {}: {}".format(epoch, e), epoch=epoch)
            autoencoder = autoencoder.with_parameters(params)
            epoch_loss += loss
        if not math.isfinite(epoch_loss):
            raise TrainingError("Training diverged at epoch {}".format(epoch), epoch=epoch)
        losses.append(epoch_loss)
        if tb_writer is not None:
            tb_writer.add_scalar("loss", epoch_loss, epoch)
            if held_out is not None:
                tb_writer.add_scalar("held_out_mse", reconstruction_mse(autoencoder, held_out), epoch)

    held_out_mse = reconstruction_mse(autoencoder, held_out) if held_out is not None else None
    if held_out_mse is not None:
        logger.info("Held-out reconstruction MSE = %.6g", held_out_mse)
    return AutoencoderTraining(autoencoder, noisy, losses, held_out_mse)


def train_autoencoder(spec, dataset, budget, epochs, batch_size, rng, optimizer=None, held_out=None,
                      tb_writer=None, disable_progress=True, reduction="mean"):
    """Draw the objective noise once, then train on the perturbed objective.

    The weights come from the ``init`` sub-stream, the noise from ``noise`` and
    the batch order from ``batches``.
    """
    if budget.sensitivity < sensitivity_bound(spec.width):
        raise ParameterError("Budget sensitivity {} is below the bound {} for width {}".format(
            budget.sensitivity, sensitivity_bound(spec.width), spec.width))
    autoencoder = spec.build(dataset.feature_dim, rng.spawn("init"))
    groups = aggregate_coefficients(dataset, spec.width)
    noisy = perturb(groups, budget, rng.spawn("noise"))
    return fit_reconstruction(
        autoencoder,
        dataset,
        epochs,
        batch_size,
        rng.spawn("batches"),
        noisy=noisy,
        optimizer=optimizer,
        held_out=held_out,
        tb_writer=tb_writer,
        disable_progress=disable_progress,
        reduction=reduction,
    )


@dataclass(eq=False)
class Prototype:
    class_id: int
    vector: torch.Tensor
    member_count: int

    def to_dict(self):
        return {"class_id": self.class_id, "vector": self.vector.tolist(), "member_count": self.member_count}

    @classmethod
    def from_dict(cls, obj):
        return cls(int(obj["class_id"]), torch.tensor(obj["vector"], dtype=DTYPE), int(obj["member_count"]))


def build_prototypes(autoencoder, dataset):
    """Mean latent encoding per class; classes without members are left out."""
    latent = autoencoder.encode(dataset.features)
    prototypes = []
    for class_id in range(dataset.class_count):
        members = dataset.labels == class_id
        count = int(members.sum())
        if count == 0:
            logger.warning("Class %d has no members, no prototype built", class_id)
            continue
        prototypes.append(Prototype(class_id, latent[members].mean(dim=0), count))
    return prototypes


def prototype_for(prototypes, class_id):
    for prototype in prototypes:
        if prototype.class_id == class_id:
            return prototype
    raise ParameterError("No prototype for class {}".format(class_id))
