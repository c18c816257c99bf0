"""Excitation Backprop: top-down propagation of marginal winning probabilities.

Each neuron passes its winning probability to the neurons it reads from,
in proportion to ``max(w, 0) * activation`` (normalized over those inputs).
The per-layer rules below are composed by :func:`excitation_backprop`,
which walks the layer DAG from the signal layer down to a target layer.
Contrastive attention (:func:`contrastive_backprop`) subtracts the
propagation of a virtual "dual" output unit whose weights are negated.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Union

import numpy as np

from . import tensor as T
from .errors import (DualUndefined, NegativeActivation, NegativeWeight, ShapeMismatch,
                     SignalBelowTarget, UnsupportedLayerKind)
from .netgraph import ActivationCache, ModelBundle

AffineWeights = Union[T.ConvParams, T.PoolParams, np.ndarray]

PASS_THROUGH_KINDS = frozenset({"relu", "elu", "lrn", "dropout"})


@dataclass(frozen=True)
class TopDownSignal:
    """Non-negative prior over the neurons of ``layer_id``."""

    layer_id: str
    values: np.ndarray
    mass: float = field(init=False)

    def __post_init__(self):
        v = T.as_tensor(self.values)
        if not np.all(np.isfinite(v)):
            raise ValueError("top-down signal must be finite")
        if np.any(v < 0):
            raise NegativeWeight("top-down signal must be non-negative")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "mass", float(v.sum()))

    def __add__(self, other: "TopDownSignal") -> "TopDownSignal":
        if other.layer_id != self.layer_id:
            raise ShapeMismatch("cannot add signals defined on different layers")
        return TopDownSignal(self.layer_id, self.values + other.values)

    def scaled(self, factor: float) -> "TopDownSignal":
        return TopDownSignal(self.layer_id, self.values * factor)


@dataclass(frozen=True)
class MWPField:
    """Marginal winning probabilities over the neurons of one layer."""

    layer_id: str
    values: np.ndarray

    @property
    def mass(self) -> float:
        return float(self.values.sum())


@dataclass(frozen=True)
class AttentionMap:
    values: np.ndarray  # 1 x H x W
    source_layer: str = ""
    signal_descriptor: str = ""

    def __post_init__(self):
        v = T.as_tensor(self.values)
        if v.ndim == 2:
            v = v[None]
        if v.ndim != 3 or v.shape[0] != 1:
            raise ShapeMismatch(f"attention map must be 1 x H x W, got {v.shape}")
        object.__setattr__(self, "values", v)

    @property
    def image(self) -> np.ndarray:
        return self.values[0]

    @property
    def shape(self):
        return self.values.shape[1:]


# -- per-layer rules ----------------------------------------------------------

def _affine_pair(weights: AffineWeights, bottom_shape):
    """Forward and adjoint maps for the excitatory part of an affine layer."""
    if isinstance(weights, T.ConvParams):
        wp = weights.positive()
        return (lambda x: T.conv2d_forward(x, wp),
                lambda y: T.conv2d_backward_data(y, wp, bottom_shape[1:]))
    if isinstance(weights, T.PoolParams):
        p = weights
        return (lambda x: T.avgpool_forward(x, p.window, p.stride, p.padding),
                lambda y: T.avgpool_backward_data(y, p.window, p.stride, p.padding, bottom_shape))
    w = np.asarray(weights, dtype=np.float64)
    if w.ndim != 2:
        raise ShapeMismatch(f"fc weights must be a matrix, got shape {w.shape}")
    wp = np.maximum(w, 0.0)
    return (lambda x: T.fc_forward(x, wp),
            lambda y: T.fc_backward_data(y, wp, bottom_shape))


def eb_step_affine(bottom_act, layer_weights: AffineWeights, top_mwp,
                   shift_lambda: float = 0.0) -> np.ndarray:
    """One Excitation Backprop step through a conv, fc or average-pool layer.

    ``layer_weights`` is a :class:`ConvParams`, a :class:`PoolParams` (average
    pooling) or an out x in fc matrix. Bias never takes part. With
    ``shift_lambda`` the bottom responses are shifted up by that amount,
    which admits activations bounded below by ``-shift_lambda``.
    """
    a = np.asarray(bottom_act, dtype=np.float64)
    if shift_lambda:
        a = a + shift_lambda
    if np.any(a < 0):
        raise NegativeActivation(
            f"bottom activations (shifted by {shift_lambda}) must be non-negative; "
            f"min is {a.min():.6g}")
    fwd, adj = _affine_pair(layer_weights, a.shape)
    x = fwd(a)
    top = np.asarray(top_mwp, dtype=np.float64)
    if top.shape != x.shape:
        raise ShapeMismatch(f"top MWP shape {top.shape} does not match layer output {x.shape}")
    y = T.safe_div(top, x)
    return a * adj(y)


def eb_step_relu(top_mwp) -> np.ndarray:
    # zero-activation neurons already hold zero mass from the affine step above
    return top_mwp


def eb_step_lrn(top_mwp) -> np.ndarray:
    return top_mwp


def eb_step_maxpool(top_mwp, mask, bottom_shape) -> np.ndarray:
    """Route each pooled value to its argmax input; overlapping picks add up."""
    top = np.asarray(top_mwp, dtype=np.float64)
    mask = np.asarray(mask)
    if mask.shape != top.shape:
        raise ShapeMismatch(f"pool mask {mask.shape} does not match top MWP {top.shape}")
    size = int(np.prod(bottom_shape))
    out = np.bincount(mask.ravel(), weights=top.ravel(), minlength=size)
    if out.size != size:
        raise ShapeMismatch("pool mask indexes outside the bottom layer")
    return out.reshape(bottom_shape)


def eb_step_concat(top_mwp, segment_extents: Sequence[int]) -> List[np.ndarray]:
    top = np.asarray(top_mwp, dtype=np.float64)
    if sum(segment_extents) != top.shape[0]:
        raise ShapeMismatch(
            f"segments {list(segment_extents)} do not sum to {top.shape[0]} channels")
    bounds = np.cumsum([0, *segment_extents])
    return [top[lo:hi] for lo, hi in zip(bounds[:-1], bounds[1:])]


def affine_weights(model: ModelBundle, layer_id: str, input_shape=None) -> AffineWeights:
    layer = model.layer(layer_id)
    if layer.kind == "conv":
        return model.conv_params(layer_id)
    if layer.kind == "fc":
        return model.weights[layer_id]["weight"]
    if layer.kind == "avgpool":
        return model.pool_params(layer_id, input_shape)
    raise UnsupportedLayerKind(f"{layer_id!r} ({layer.kind}) is not an affine layer")


def step_layer(model: ModelBundle, cache: ActivationCache, layer_id: str, top_mwp,
               shift_lambda: float = 0.0) -> Dict[str, np.ndarray]:
    """Push ``top_mwp`` from ``layer_id`` to each of its inputs."""
    layer = model.layer(layer_id)
    k = layer.kind
    if k in PASS_THROUGH_KINDS:
        return {layer.inputs[0]: top_mwp}
    if k in ("conv", "fc", "avgpool"):
        src = layer.inputs[0]
        bottom = cache.responses[src]
        w = affine_weights(model, layer_id, bottom.shape)
        try:
            return {src: eb_step_affine(bottom, w, top_mwp, shift_lambda)}
        except NegativeActivation as exc:
            raise NegativeActivation(f"layer {layer_id!r} reading {src!r}: {exc}") from None
    if k == "maxpool":
        src = layer.inputs[0]
        return {src: eb_step_maxpool(top_mwp, cache.masks[layer_id], cache.responses[src].shape)}
    if k == "flatten":
        src = layer.inputs[0]
        return {src: np.reshape(top_mwp, cache.responses[src].shape)}
    if k == "concat":
        extents = [cache.responses[s].shape[0] for s in layer.inputs]
        out: Dict[str, np.ndarray] = {}
        for src, part in zip(layer.inputs, eb_step_concat(top_mwp, extents)):
            out[src] = out[src] + part if src in out else part
        return out
    raise UnsupportedLayerKind(f"Excitation Backprop cannot pass through {k} layer {layer_id!r}")


# -- DAG sweep ----------------------------------------------------------------

def _descendants(model: ModelBundle, layer_id: str) -> set:
    seen = {layer_id}
    stack = [layer_id]
    while stack:
        for user in model.consumers(stack.pop()):
            if user not in seen:
                seen.add(user)
                stack.append(user)
    return seen


def _sweep(model, cache, pending: Dict[str, np.ndarray], target_layer: str,
           shift_lambda: float) -> Dict[str, np.ndarray]:
    """Reverse-topological walk; MWP arriving from several consumers is summed."""
    reach = _descendants(model, target_layer)
    stop = model.position(target_layer)
    done: Dict[str, np.ndarray] = {}
    for layer in reversed(model.layers[stop:]):
        if layer.id not in pending:
            continue
        mwp = pending.pop(layer.id)
        done[layer.id] = mwp
        if layer.id == target_layer:
            break
        if layer.id not in reach:
            continue
        for src, part in step_layer(model, cache, layer.id, mwp, shift_lambda).items():
            pending[src] = pending[src] + part if src in pending else part
    return done


def _check_signal(model, cache, signal: TopDownSignal, target_layer: str):
    model.layer(target_layer)
    model.layer(signal.layer_id)
    if target_layer not in model.ancestors(signal.layer_id):
        raise SignalBelowTarget(
            f"target {target_layer!r} does not feed signal layer {signal.layer_id!r}")
    expected = cache.responses[signal.layer_id].shape
    if signal.values.shape != expected:
        raise ShapeMismatch(
            f"signal shape {signal.values.shape} does not match layer "
            f"{signal.layer_id!r} output {expected}")


def excitation_backprop(model: ModelBundle, cache: ActivationCache, signal: TopDownSignal,
                        target_layer: str, shift_lambda: float = 0.0) -> MWPField:
    """Marginal winning probabilities of ``target_layer`` neurons."""
    _check_signal(model, cache, signal, target_layer)
    done = _sweep(model, cache, {signal.layer_id: signal.values}, target_layer, shift_lambda)
    values = done.get(target_layer)
    if values is None:
        values = np.zeros_like(cache.responses[target_layer])
    return MWPField(target_layer, np.array(values, dtype=np.float64))


def propagate_layers(model: ModelBundle, cache: ActivationCache, signal: TopDownSignal,
                     target_layer: Optional[str] = None,
                     shift_lambda: float = 0.0) -> Dict[str, MWPField]:
    """MWP of every layer between the signal layer and ``target_layer``.

    One sweep; ``target_layer`` defaults to the input layer. Layers the signal
    never reaches are reported as zero fields.
    """
    target_layer = target_layer or model.input_layer.id
    _check_signal(model, cache, signal, target_layer)
    done = _sweep(model, cache, {signal.layer_id: signal.values}, target_layer, shift_lambda)
    lo, hi = model.position(target_layer), model.position(signal.layer_id)
    out = {}
    for layer in model.layers[lo:hi + 1]:
        v = done.get(layer.id)
        if v is None:
            v = np.zeros_like(cache.responses[layer.id])
        out[layer.id] = MWPField(layer.id, np.array(v, dtype=np.float64))
    return out


def contrastive_backprop(model: ModelBundle, cache: ActivationCache, signal: TopDownSignal,
                         target_layer: str, shift_lambda: float = 0.0,
                         truncate: bool = True) -> MWPField:
    """Contrastive MWP: signal propagated through (top step - dual top step).

    The difference after the first step is signed; it travels down with the
    ordinary rules and is cut at zero only at ``target_layer`` (unless
    ``truncate`` is False).
    """
    _check_signal(model, cache, signal, target_layer)
    top = model.layer(signal.layer_id)
    if top.kind not in ("conv", "fc"):
        raise DualUndefined(
            f"signal layer {top.id!r} is {top.kind}; the dual unit needs weights")
    if target_layer == top.id:
        raise SignalBelowTarget("contrastive attention needs a target below the signal layer")
    src = top.inputs[0]
    bottom = cache.responses[src]
    w = affine_weights(model, top.id)
    dual = w.negated() if isinstance(w, T.ConvParams) else -w
    diff = (eb_step_affine(bottom, w, signal.values, shift_lambda)
            - eb_step_affine(bottom, dual, signal.values, shift_lambda))
    done = _sweep(model, cache, {src: diff}, target_layer, shift_lambda)
    values = done.get(target_layer)
    if values is None:
        values = np.zeros_like(cache.responses[target_layer])
    values = np.array(values, dtype=np.float64)
    if truncate:
        values = np.maximum(values, 0.0)
        if not np.any(values > 0):
            warnings.warn(f"contrastive MWP at {target_layer!r} has no positive part",
                          RuntimeWarning, stacklevel=2)
    return MWPField(target_layer, values)


# -- maps ---------------------------------------------------------------------

def mwp_to_attention_map(field: MWPField, out_extents, descriptor: str = "") -> AttentionMap:
    """Channel-summed MWP, bicubic-resized to ``out_extents`` and clamped at 0."""
    v = np.asarray(field.values, dtype=np.float64)
    if np.any(v < 0):
        raise NegativeActivation("MWP field has negative entries")
    h, w = (int(e) for e in out_extents)
    m = T.channel_sum(v)
    if m.shape[1:] != (h, w):
        m = T.bicubic_resize(m, h, w, clamp=True)
    return AttentionMap(m, field.layer_id, descriptor)


def combine_maps(maps: Sequence[AttentionMap], weights: Optional[Sequence[float]] = None,
                 descriptor: str = "") -> AttentionMap:
    """Weighted arithmetic mean of equally sized maps."""
    if not maps:
        raise ValueError("need at least one map")
    weights = [1.0] * len(maps) if weights is None else list(weights)
    if len(weights) != len(maps):
        raise ShapeMismatch(f"{len(maps)} maps but {len(weights)} weights")
    if any(not w >= 0 for w in weights):
        raise NegativeWeight("map weights must be non-negative")
    total = float(sum(weights))
    if total <= 0:
        raise ValueError("map weights sum to zero")
    shapes = {m.values.shape for m in maps}
    if len(shapes) != 1:
        raise ShapeMismatch(f"maps differ in extents: {sorted(shapes)}")
    acc = np.zeros(maps[0].values.shape)
    for m, w in zip(maps, weights):
        acc += w * m.values
    return AttentionMap(acc / total, maps[0].source_layer, descriptor)
