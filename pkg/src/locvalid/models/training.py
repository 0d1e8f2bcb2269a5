"""Batch-of-one training with Adam and a class-weighted cross-entropy."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import ndimage

from locvalid.exceptions import DegenerateFitError, TrainingError
from locvalid.metrics.ranking import classification_auc
from locvalid.models.networks import BackboneConfig, Network
from locvalid.tensor import Tensor, backward, sigmoid, weighted_bce
from locvalid.utils.validation import check_binary_labels

logger = logging.getLogger(__name__)

FINETUNE_LEARNING_RATE = 1e-5


@dataclass
class TrainConfig:
    """Optimiser and augmentation settings.

    ``pos_weight=None`` uses ``#negatives / #positives`` of the training labels.
    """

    learning_rate: float = 1e-3
    epochs: int = 10
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    augment: bool = True
    flip_prob: float = 0.5
    max_shift: float = 0.10
    max_rotation: float = 15.0
    pos_weight: Optional[float] = None
    shuffle: bool = True
    seed: int = 0


@dataclass
class TrainLog:
    epochs: list = field(default_factory=list)
    step_losses: list = field(default_factory=list)


class Adam:
    """Adam over a dict of named parameter tensors.

    Tensors are immutable, so each step replaces the entries of ``params``.
    """

    def __init__(self, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, params: dict) -> None:
        self.t += 1
        b1t = 1.0 - self.beta1 ** self.t
        b2t = 1.0 - self.beta2 ** self.t
        for name, p in params.items():
            g = p.grad
            if g is None:
                continue
            m = self.m.get(name, 0.0) * self.beta1 + (1.0 - self.beta1) * g
            v = self.v.get(name, 0.0) * self.beta2 + (1.0 - self.beta2) * g * g
            self.m[name], self.v[name] = m, v
            new = p.data - self.lr * (m / b1t) / (np.sqrt(v / b2t) + self.eps)
            params[name] = Tensor(new, requires_grad=True, name=name)


def augment_slices(slices: np.ndarray, rng: np.random.Generator, flip_prob=0.5, max_shift=0.10, max_rotation=15.0) -> np.ndarray:
    """Random flip, translation and rotation of each slice independently.

    Nearest-neighbour resampling about the slice centre; pixels mapped from
    outside the slice are zero.
    """
    out = np.empty_like(slices)
    s, _, h, w = slices.shape
    centre = np.array([(h - 1) / 2.0, (w - 1) / 2.0])
    for i in range(s):
        img = slices[i, 0]
        if rng.random() < flip_prob:
            img = img[:, ::-1]
        theta = np.deg2rad(rng.uniform(-max_rotation, max_rotation))
        shift = rng.uniform(-max_shift, max_shift, 2) * np.array([h, w])
        rot = np.array([[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]])
        # output coordinate o maps to input rot @ (o - centre - shift) + centre
        offset = centre - rot @ (centre + shift)
        out[i, 0] = ndimage.affine_transform(img, rot, offset=offset, order=0, mode="constant", cval=0.0)
    return out


def balanced_pos_weight(y: np.ndarray) -> float:
    n_pos = int(np.sum(y == 1))
    n_neg = int(np.sum(y == 0))
    if n_pos == 0 or n_neg == 0:
        raise TrainingError("class-weighted loss needs both classes in the training labels")
    return n_neg / n_pos


def run_training(
    network: Network,
    cases: Sequence[dict],
    labels: Sequence[int],
    config: TrainConfig,
    eval_set: Optional[tuple] = None,
) -> TrainLog:
    """Optimise ``network`` in place, one case per Adam step.

    Args:
        network: Network to train.
        cases: ``{plane: (s, 1, H, W) array}`` per case.
        labels: 0/1 per case.
        config: Optimiser settings. With an explicit ``pos_weight`` a
            single-class set is accepted (useful for overfitting checks).
        eval_set: Optional ``(cases, labels)`` scored after every epoch.

    Returns:
        Per-epoch mean loss and AUCs, plus every step's loss.
    """
    y = np.asarray(labels, dtype=np.float64)
    if len(cases) == 0:
        raise TrainingError("training set is empty")
    pos_weight = config.pos_weight if config.pos_weight is not None else balanced_pos_weight(y)
    rng = np.random.default_rng(config.seed)
    opt = Adam(config.learning_rate, config.beta1, config.beta2, config.eps)
    log = TrainLog()
    for epoch in range(config.epochs):
        order = rng.permutation(len(cases)) if config.shuffle else np.arange(len(cases))
        losses, probs = np.zeros(len(cases)), np.zeros(len(cases))
        for i in order:
            inputs = cases[i]
            if config.augment:
                inputs = {
                    p: augment_slices(x, rng, config.flip_prob, config.max_shift, config.max_rotation)
                    for p, x in inputs.items()
                }
            prob = sigmoid(network.forward(inputs))
            loss = weighted_bce(prob, y[i], pos_weight)
            backward(loss)
            opt.step(network.params)
            losses[i], probs[i] = loss.item(), prob.item()
            log.step_losses.append(losses[i])
        entry = {"epoch": epoch + 1, "loss": float(losses.mean()), "train_auc": _safe_auc(probs, y)}
        if eval_set is not None:
            ev_cases, ev_y = eval_set
            entry["val_auc"] = _safe_auc(predict_network(network, ev_cases), np.asarray(ev_y))
        logger.info("epoch %d loss %.4f train_auc %s", entry["epoch"], entry["loss"], entry["train_auc"])
        log.epochs.append(entry)
    return log


def _safe_auc(p, y):
    try:
        return classification_auc(p, y)
    except Exception:
        return None


def predict_network(network: Network, cases: Sequence[dict]) -> np.ndarray:
    """Probabilities for each case, no augmentation."""
    return np.array([sigmoid(network.forward(c)).item() for c in cases])


def train_toy(strategy, cases, labels, config: TrainConfig, backbone=None, plane="axial", eval_set=None):
    """Build and train one network, or three networks plus a fusion model for MPLR.

    Returns:
        ``(model, log)`` where ``model`` is a fitted
        :class:`~locvalid.models.estimators.MultiViewAttentionClassifier`.

    Raises:
        TrainingError: If the labels contain a single class.
    """
    from locvalid.models.estimators import MultiViewAttentionClassifier

    try:
        check_binary_labels(labels)
    except DegenerateFitError as exc:
        raise TrainingError(str(exc)) from None
    backbone = backbone or BackboneConfig()
    clf = MultiViewAttentionClassifier(
        strategy=strategy,
        plane=plane,
        channels=backbone.channels,
        strides=backbone.strides,
        feature_dim=backbone.feature_dim,
        attention=backbone.attention,
        attention_layer=backbone.attention_layer,
        learning_rate=config.learning_rate,
        epochs=config.epochs,
        augment=config.augment,
        pos_weight=config.pos_weight,
        random_state=config.seed,
    )
    clf.fit(cases, labels, eval_set=eval_set)
    return clf, clf.history_
