"""Grad-Cam saliency maps and their binarisation.

Grad-Cam weights each channel of a spatial layer by the spatial mean of the
gradient of the class logit with respect to it, sums the weighted maps and
keeps the positive part. Maps are bilinearly upsampled to the slice size and
then divided by their own per-slice maximum, so every importance is in
``[0, 1]``.
"""

from __future__ import annotations

from typing import Optional

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from locvalid.tensor import backward
from locvalid.utils.validation import check_case, check_saliency
from locvalid.volume import Volume

DEFAULT_THRESHOLD = 0.6


def threshold_mask(saliency, x: float = DEFAULT_THRESHOLD) -> np.ndarray:
    """Boolean mask of pixels whose importance is strictly above ``x``."""
    s = check_saliency(saliency)
    if not 0.0 <= x < 1.0:
        raise ValueError(f"threshold must lie in [0, 1), got {x}")
    return s > x


class SaliencyThresholder(TransformerMixin, BaseEstimator):
    """Transformer turning saliency maps into Grad-Cam masks.

    Stateless; ``fit`` only validates the threshold so the object composes with
    scikit-learn pipelines.

    Args:
        threshold: Pixel-importance cut; pixels strictly above it are kept.
    """

    def __init__(self, threshold: float = DEFAULT_THRESHOLD):
        self.threshold = threshold

    def fit(self, X=None, y=None):
        if not 0.0 <= self.threshold < 1.0:
            raise ValueError(f"threshold must lie in [0, 1), got {self.threshold}")
        self.threshold_ = float(self.threshold)
        return self

    def transform(self, X):
        return threshold_mask(X, self.threshold)


def bilinear_resize(maps: np.ndarray, height: int, width: int) -> np.ndarray:
    """Resize ``(..., h, w)`` maps with bilinear interpolation (pixel-centre aligned)."""
    maps = np.asarray(maps, dtype=np.float64)
    h, w = maps.shape[-2:]

    def axis_weights(n_in, n_out):
        src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
        src = np.clip(src, 0.0, n_in - 1)
        lo = np.floor(src).astype(int)
        hi = np.minimum(lo + 1, n_in - 1)
        return lo, hi, src - lo

    r0, r1, fr = axis_weights(h, height)
    c0, c1, fc = axis_weights(w, width)
    top = maps[..., r0, :] * (1 - fr)[:, None] + maps[..., r1, :] * fr[:, None]
    return top[..., c0] * (1 - fc) + top[..., c1] * fc


def _resolve_network(model, plane: Optional[str]):
    """Return ``(network, plane)`` from an estimator or a bare network."""
    from locvalid.models.networks import Network

    if isinstance(model, Network):
        net = model
    elif getattr(model, "plane_models_", None) is not None:
        plane = plane or model.plane
        if plane not in model.plane_models_:
            raise ValueError(f"MPLR model has no {plane} sub-model")
        net = model.plane_models_[plane]
    elif getattr(model, "network_", None) is not None:
        net = model.network_
    else:
        raise TypeError("model must be a fitted classifier or a Network")
    if plane is None:
        plane = net.planes[0]
    if plane not in net.planes:
        raise ValueError(f"model has no {plane} plane; planes are {net.planes}")
    return net, plane


def _as_case(net, case) -> dict[str, Volume]:
    # a lone Volume feeds a single-plane network whatever its plane tag
    if isinstance(case, Volume) and len(net.planes) == 1:
        return {net.planes[0]: case}
    return check_case(case, net.planes)


def raw_gradcam(model, case, plane: Optional[str] = None, layer: int = -1) -> np.ndarray:
    """Un-normalised coarse Grad-Cam maps ``(s, h, w)`` for every slice of a plane."""
    net, plane = _resolve_network(model, plane)
    vols = _as_case(net, case)
    n_stages = net.config.n_stages
    if not -n_stages <= layer < n_stages:
        raise IndexError(f"layer {layer} out of range for {n_stages} stages")
    trace: dict = {}
    logit = net.forward({p: v.slices for p, v in vols.items()}, trace)
    feat = trace[f"{plane}/layer{layer % n_stages}"]
    backward(logit.reshape(()))
    grad = feat.grad if feat.grad is not None else np.zeros(feat.shape)
    weights = grad.mean(axis=(2, 3))
    return np.maximum(np.einsum("sc,schw->shw", weights, feat.data), 0.0)


def normalise_maps(maps: np.ndarray) -> np.ndarray:
    """Divide each ``(h, w)`` map by its maximum; all-zero maps stay zero."""
    maps = np.asarray(maps, dtype=np.float64)
    peak = maps.max(axis=(-2, -1), keepdims=True)
    out = np.zeros_like(maps)
    np.divide(maps, peak, out=out, where=peak > 0)
    return np.clip(out, 0.0, 1.0)


def gradcam_volume(model, case, plane: Optional[str] = None, layer: int = -1) -> np.ndarray:
    """Grad-Cam saliency ``(s, H, W)`` in ``[0, 1]`` for every slice of ``plane``."""
    net, plane = _resolve_network(model, plane)
    vols = _as_case(net, case)
    height, width = vols[plane].image_shape
    raw = raw_gradcam(net, vols, plane, layer)
    return normalise_maps(bilinear_resize(raw, height, width))


def gradcam(model, volume, target_slice_index: int, layer: int = -1, plane: Optional[str] = None) -> np.ndarray:
    """Grad-Cam saliency map of one slice.

    Args:
        model: Fitted :class:`~locvalid.models.MultiViewAttentionClassifier`
            or a :class:`~locvalid.models.networks.Network`.
        volume: The case: a :class:`Volume` for single-plane models, or the
            plane mapping multi-plane models need.
        target_slice_index: Slice whose map is returned.
        layer: Backbone stage whose output is explained; ``-1`` is the last
            stage, which is the attended volume when attention sits there.
        plane: Plane to explain for multi-plane models.

    Raises:
        IndexError: If ``target_slice_index`` is out of range.
    """
    net, plane = _resolve_network(model, plane)
    vols = _as_case(net, volume)
    n = vols[plane].n_slices
    if not 0 <= target_slice_index < n:
        raise IndexError(f"slice index {target_slice_index} out of range for {n} slices")
    return gradcam_volume(net, vols, plane, layer)[target_slice_index]
