"""Scikit-learn style estimators for the multi-view attention networks."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted

from locvalid.exceptions import DegenerateFitError, DimensionError, TrainingError
from locvalid.models.networks import BackboneConfig, Network
from locvalid.models.training import TrainConfig, TrainLog, predict_network, run_training
from locvalid.tensor.ops import _sigmoid
from locvalid.utils.validation import check_binary_labels, check_cases
from locvalid.volume import PLANES, FusionStrategy


@dataclass(frozen=True)
class LRWeights:
    coef: np.ndarray
    intercept: float
    n_iter: int


def mplr_fit(train_probs, labels, tol: float = 1e-8, max_iter: int = 100_000) -> LRWeights:
    """Logistic regression on per-plane probabilities by gradient descent.

    Minimises the mean unweighted logistic loss with a fixed step ``1 / L``
    (``L`` the loss's gradient Lipschitz constant) until the largest gradient
    component drops below ``tol`` or ``max_iter`` steps have run.

    Raises:
        DegenerateFitError: Fewer than two samples or a single class.
    """
    P = check_array(train_probs, dtype=np.float64)
    y = check_binary_labels(labels, n=P.shape[0]).astype(np.float64)
    if P.shape[0] < 2:
        raise DegenerateFitError("need at least two samples")
    n = P.shape[0]
    X = np.hstack([P, np.ones((n, 1))])
    lipschitz = np.linalg.eigvalsh(X.T @ X).max() / (4.0 * n)
    step = 1.0 / lipschitz
    theta = np.zeros(X.shape[1])
    it = 0
    for it in range(1, max_iter + 1):
        grad = X.T @ (_sigmoid(X @ theta) - y) / n
        if np.max(np.abs(grad)) < tol:
            break
        theta -= step * grad
    return LRWeights(theta[:-1].copy(), float(theta[-1]), it)


def mplr_predict(weights: LRWeights, probs) -> np.ndarray:
    """``sigmoid(coef . p + intercept)`` for a 3-vector or an ``(n, 3)`` matrix."""
    P = np.asarray(probs, dtype=np.float64)
    return _sigmoid(P @ weights.coef + weights.intercept)


class LogisticFusion(ClassifierMixin, BaseEstimator):
    """Combine per-plane probabilities with a logistic regression.

    Args:
        tol: Stop when the largest gradient component is below this.
        max_iter: Cap on gradient-descent steps.
    """

    def __init__(self, tol=1e-8, max_iter=100_000):
        self.tol = tol
        self.max_iter = max_iter

    def fit(self, X, y):
        w = mplr_fit(X, y, self.tol, self.max_iter)
        self.coef_ = w.coef
        self.intercept_ = w.intercept
        self.n_iter_ = w.n_iter
        self.classes_ = np.array([0, 1])
        self.n_features_in_ = w.coef.shape[0]
        return self

    @property
    def weights_(self) -> LRWeights:
        return LRWeights(self.coef_, self.intercept_, self.n_iter_)

    def decision_function(self, X):
        check_is_fitted(self, "coef_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise DimensionError(f"expected {self.n_features_in_} columns, got {X.shape[1]}", axis="feature")
        return X @ self.coef_ + self.intercept_

    def predict_proba(self, X):
        p = _sigmoid(self.decision_function(X))
        return np.column_stack([1.0 - p, p])

    def predict(self, X):
        return (self.predict_proba(X)[:, 1] > 0.5).astype(int)


class MultiViewAttentionClassifier(ClassifierMixin, BaseEstimator):
    """Slice-stack classifier with spatial attention and plane fusion.

    ``X`` is a sequence of cases. A case is a :class:`~locvalid.volume.Volume`
    or ``(s, H, W)`` array for ``strategy="single"``, or a ``{plane: Volume}``
    mapping / ``(axial, coronal, sagittal)`` tuple for the multi-plane
    strategies. Stacks may differ in length between cases and planes.

    Args:
        strategy: ``"single"``, ``"mpfusenet"``, ``"mp2"`` or ``"mplr"``.
        plane: Plane used by ``"single"``; also the default plane Grad-Cam
            explains for ``"mplr"``.
        channels: Output channels of each 3x3 convolution stage.
        strides: Downsampling factor of each stage.
        feature_dim: Width of the first fully connected layer.
        attention: Whether the spatial attention block is used.
        attention_layer: Stage the attention block follows.
        learning_rate: Adam step size. 1e-3 suits random initialisation; the
            fine-tuning value of 1e-5 is available as ``FINETUNE_LEARNING_RATE``.
        epochs: Passes over the training cases (one case per step).
        augment: Random per-slice flip/shift/rotation during training.
        pos_weight: Positive-class loss weight; ``None`` uses
            ``#negatives / #positives``.
        random_state: Seed for initialisation, shuffling and augmentation.
    """

    def __init__(
        self,
        strategy="single",
        plane="axial",
        channels=(8, 16, 32),
        strides=(2, 2, 2),
        feature_dim=1000,
        attention=True,
        attention_layer=-1,
        learning_rate=1e-3,
        epochs=10,
        augment=True,
        pos_weight=None,
        random_state=0,
    ):
        self.strategy = strategy
        self.plane = plane
        self.channels = channels
        self.strides = strides
        self.feature_dim = feature_dim
        self.attention = attention
        self.attention_layer = attention_layer
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.augment = augment
        self.pos_weight = pos_weight
        self.random_state = random_state

    @property
    def backbone_config(self) -> BackboneConfig:
        return BackboneConfig(
            channels=tuple(self.channels),
            strides=tuple(self.strides),
            attention=bool(self.attention),
            attention_layer=int(self.attention_layer),
            feature_dim=int(self.feature_dim),
        )

    @property
    def planes(self) -> tuple[str, ...]:
        return (self.plane,) if FusionStrategy(self.strategy) is FusionStrategy.SINGLE else PLANES

    def _train_config(self, seed) -> TrainConfig:
        return TrainConfig(
            learning_rate=self.learning_rate,
            epochs=self.epochs,
            augment=self.augment,
            pos_weight=self.pos_weight,
            seed=seed,
        )

    def _arrays(self, X):
        return [{p: v.slices for p, v in c.items()} for c in check_cases(X, self.planes)]

    def init_networks(self) -> "MultiViewAttentionClassifier":
        """Create untrained networks (used by :meth:`fit` and checkpoint loading)."""
        strategy = FusionStrategy(self.strategy)
        if self.plane not in PLANES:
            raise ValueError(f"plane must be one of {PLANES}")
        cfg = self.backbone_config
        seeds = np.random.SeedSequence(self.random_state).generate_state(len(PLANES) + 1)
        self.network_ = None
        self.plane_models_ = None
        self.fusion_ = None
        if strategy is FusionStrategy.MPLR:
            self.plane_models_ = {
                p: Network.build("single", cfg, (p,), int(seeds[k])) for k, p in enumerate(PLANES)
            }
        else:
            self.network_ = Network.build(strategy, cfg, self.planes, int(seeds[0]))
        self.classes_ = np.array([0, 1])
        return self

    def fit(self, X, y, eval_set=None):
        """Train on cases ``X`` with 0/1 labels ``y``.

        Args:
            eval_set: Optional ``(X_val, y_val)`` scored after each epoch.

        Raises:
            TrainingError: If ``y`` has a single class.
        """
        cases = self._arrays(X)
        try:
            y = check_binary_labels(y, n=len(cases))
        except DegenerateFitError as exc:
            raise TrainingError(str(exc)) from None
        ev = None
        if eval_set is not None:
            ev = (self._arrays(eval_set[0]), np.asarray(eval_set[1]))
        self.init_networks()
        train_seed = int(np.random.SeedSequence(self.random_state).generate_state(len(PLANES) + 2)[-1])
        if self.plane_models_ is not None:
            log = TrainLog()
            probs = np.zeros((len(cases), len(PLANES)))
            for k, p in enumerate(PLANES):
                sub = [{p: c[p]} for c in cases]
                sub_ev = None if ev is None else ([{p: c[p]} for c in ev[0]], ev[1])
                plog = run_training(self.plane_models_[p], sub, y, self._train_config(train_seed + k), sub_ev)
                log.epochs.extend({"plane": p, **e} for e in plog.epochs)
                log.step_losses.extend(plog.step_losses)
                probs[:, k] = predict_network(self.plane_models_[p], sub)
            self.fusion_ = LogisticFusion().fit(probs, y)
            self.history_ = log
        else:
            self.fusion_ = None
            self.history_ = run_training(self.network_, cases, y, self._train_config(train_seed), ev)
        return self

    def plane_probabilities(self, X) -> np.ndarray:
        """``(n, 3)`` per-plane probabilities of an MPLR model."""
        check_is_fitted(self, "classes_")
        if self.plane_models_ is None:
            raise ValueError("plane_probabilities is only defined for strategy='mplr'")
        cases = self._arrays(X)
        return np.column_stack(
            [predict_network(self.plane_models_[p], [{p: c[p]} for c in cases]) for p in PLANES]
        )

    def decision_function(self, X) -> np.ndarray:
        """Logit of the positive class per case."""
        check_is_fitted(self, "classes_")
        if self.plane_models_ is not None:
            if self.fusion_ is None:
                raise ValueError("MPLR fusion has not been fitted")
            return self.fusion_.decision_function(self.plane_probabilities(X))
        return np.array([self.network_.forward(c).item() for c in self._arrays(X)])

    def predict_proba(self, X) -> np.ndarray:
        p = _sigmoid(self.decision_function(X))
        return np.column_stack([1.0 - p, p])

    def predict(self, X) -> np.ndarray:
        return (self.predict_proba(X)[:, 1] > 0.5).astype(int)
