"""Model description, the ``ebnet-v1`` storage format and the forward pass.

A model is a manifest (UTF-8 JSON) plus a weight blob of raw little-endian
float64 values. Layers list their producers in ``inputs``; the loader
validates the graph and orders it topologically::

    {"format": "ebnet-v1", "output_layer": "fc8",
     "metadata": {"attention_layer": "pool2", "mean": [0, 0, 0]},
     "layers": [
        {"id": "data", "kind": "input", "inputs": [], "shape": [3, null, null]},
        {"id": "conv1", "kind": "conv", "inputs": ["data"], "stride": 1,
         "padding": 1, "weight_offset": 0, "weight_shape": [8, 3, 3, 3],
         "bias_offset": 216, "bias_shape": [8]},
        ...]}

Offsets count float64 elements, not bytes.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import tensor as T
from .errors import (CycleDetected, DanglingInput, IndexOutOfRange, MissingWeights,
                     NegativeWeight, ParseError, ShapeMismatch, UnknownLayer,
                     UnsupportedLayerKind)

logger = logging.getLogger(__name__)

FORMAT = "ebnet-v1"

LAYER_KINDS = frozenset({
    "input", "conv", "fc", "relu", "elu", "maxpool", "avgpool", "lrn",
    "concat", "flatten", "softmax", "dropout",
})
AFFINE_KINDS = frozenset({"conv", "fc", "avgpool"})
WEIGHTED_KINDS = frozenset({"conv", "fc"})

_KIND_ALIASES = {"dropout-identity": "dropout", "innerproduct": "fc", "pool": "maxpool"}


@dataclass(frozen=True)
class LayerSpec:
    id: str
    kind: str
    inputs: Tuple[str, ...] = ()
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "inputs", tuple(self.inputs))


@dataclass
class ModelBundle:
    """Validated, topologically ordered layer graph plus weights.

    ``weights`` maps a layer id to ``{"weight": array, "bias": array or None}``.
    Treat instances as immutable once built.
    """

    layers: List[LayerSpec]
    weights: Dict[str, dict]
    output_layer: str
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self._index = {layer.id: i for i, layer in enumerate(self.layers)}
        consumers: Dict[str, List[str]] = {layer.id: [] for layer in self.layers}
        for layer in self.layers:
            for src in layer.inputs:
                consumers[src].append(layer.id)
        self._consumers = consumers

    def layer(self, layer_id: str) -> LayerSpec:
        try:
            return self.layers[self._index[layer_id]]
        except KeyError:
            raise UnknownLayer(f"no layer named {layer_id!r}") from None

    def position(self, layer_id: str) -> int:
        self.layer(layer_id)
        return self._index[layer_id]

    def consumers(self, layer_id: str) -> List[str]:
        return list(self._consumers[layer_id])

    @property
    def input_layer(self) -> LayerSpec:
        return self.layers[0]

    def ancestors(self, layer_id: str) -> set:
        """All layers whose output reaches ``layer_id`` (inclusive)."""
        seen = {layer_id}
        stack = [layer_id]
        while stack:
            for src in self.layer(stack.pop()).inputs:
                if src not in seen:
                    seen.add(src)
                    stack.append(src)
        return seen

    def conv_params(self, layer_id: str) -> T.ConvParams:
        layer = self.layer(layer_id)
        if layer.kind != "conv":
            raise UnsupportedLayerKind(f"{layer_id!r} is a {layer.kind} layer, not conv")
        w = self.weights[layer_id]
        return T.ConvParams(w["weight"], layer.params.get("stride", 1),
                            layer.params.get("padding", 0), w.get("bias"))

    def pool_params(self, layer_id: str, input_shape=None) -> T.PoolParams:
        p = self.layer(layer_id).params
        if p.get("global"):
            if input_shape is None:
                raise ShapeMismatch(f"global pool {layer_id!r} needs its input shape")
            return T.PoolParams(tuple(input_shape[1:]), tuple(input_shape[1:]), (0, 0))
        return T.PoolParams(p["window"], p.get("stride", p["window"]), p.get("padding", 0))

    @property
    def attention_layer(self) -> Optional[str]:
        return self.metadata.get("attention_layer")


@dataclass
class ActivationCache:
    """Forward responses for every executed layer, plus max-pool masks."""

    responses: Dict[str, np.ndarray]
    masks: Dict[str, np.ndarray]
    input_shape: Tuple[int, ...]


# -- validation --------------------------------------------------------------

def _norm_kind(kind) -> str:
    k = str(kind).lower()
    k = _KIND_ALIASES.get(k, k)
    if k not in LAYER_KINDS:
        raise ParseError(f"unknown layer kind {kind!r}")
    return k


def toposort(layers: Sequence[LayerSpec]) -> List[LayerSpec]:
    """Order layers so producers precede consumers (stable w.r.t. input order)."""
    by_id: Dict[str, LayerSpec] = {}
    for layer in layers:
        if layer.id in by_id:
            raise ParseError(f"duplicate layer id {layer.id!r}")
        by_id[layer.id] = layer
    for layer in layers:
        for src in layer.inputs:
            if src not in by_id:
                raise DanglingInput(f"layer {layer.id!r} reads undefined input {src!r}")
    pending = {layer.id: len(set(layer.inputs)) for layer in layers}
    users: Dict[str, List[str]] = {layer.id: [] for layer in layers}
    for layer in layers:
        for src in set(layer.inputs):
            users[src].append(layer.id)
    order = []
    ready = [layer.id for layer in layers if pending[layer.id] == 0]
    rank = {layer.id: i for i, layer in enumerate(layers)}
    while ready:
        ready.sort(key=rank.__getitem__)
        lid = ready.pop(0)
        order.append(by_id[lid])
        for user in users[lid]:
            pending[user] -= 1
            if pending[user] == 0:
                ready.append(user)
    if len(order) != len(layers):
        stuck = sorted(k for k, v in pending.items() if v > 0)
        raise CycleDetected(f"layer graph has a cycle through {stuck}")
    return order


def _check_channels(layers: List[LayerSpec], weights: Dict[str, dict]) -> None:
    """Propagate channel counts and check weight shapes where they are known."""
    channels: Dict[str, Optional[int]] = {}
    for layer in layers:
        ins = [channels[s] for s in layer.inputs]
        k = layer.kind
        if k == "input":
            shape = layer.params.get("shape")
            channels[layer.id] = None if shape is None else shape[0]
            continue
        if k in WEIGHTED_KINDS and layer.id not in weights:
            raise MissingWeights(f"{k} layer {layer.id!r} has no weights")
        if k == "concat":
            if int(layer.params.get("axis", 0)) != 0:
                raise ShapeMismatch(f"concat {layer.id!r}: only the channel axis is supported")
            channels[layer.id] = None if None in ins else sum(ins)
            continue
        if len(layer.inputs) != 1:
            raise ShapeMismatch(f"{k} layer {layer.id!r} takes exactly one input")
        c = ins[0]
        if k == "conv":
            w = weights[layer.id]["weight"]
            if w.ndim != 4:
                raise ShapeMismatch(f"conv {layer.id!r}: weight must be 4-d, got {w.shape}")
            if c is not None and w.shape[1] != c:
                raise ShapeMismatch(
                    f"conv {layer.id!r}: kernel expects {w.shape[1]} channels, input has {c}")
            channels[layer.id] = w.shape[0]
        elif k == "fc":
            w = weights[layer.id]["weight"]
            if w.ndim != 2:
                raise ShapeMismatch(f"fc {layer.id!r}: weight must be 2-d, got {w.shape}")
            channels[layer.id] = w.shape[0]
        elif k == "flatten":
            channels[layer.id] = None
        else:
            channels[layer.id] = c
        b = weights.get(layer.id, {}).get("bias")
        if k in WEIGHTED_KINDS and b is not None and b.size != weights[layer.id]["weight"].shape[0]:
            raise ShapeMismatch(f"{layer.id!r}: bias size {b.size} does not match outputs")


def build_model(layers: Sequence[LayerSpec], weights: Dict[str, dict], output_layer: str,
                metadata: Optional[dict] = None) -> ModelBundle:
    """Validate a layer list and assemble a :class:`ModelBundle`."""
    layers = [LayerSpec(l.id, _norm_kind(l.kind), l.inputs, dict(l.params)) for l in layers]
    ordered = toposort(layers)
    inputs = [l for l in ordered if l.kind == "input"]
    if len(inputs) != 1 or ordered[0].kind != "input":
        raise ParseError(f"model needs exactly one input layer, found {len(inputs)}")
    for layer in ordered[1:]:
        if not layer.inputs:
            raise ParseError(f"layer {layer.id!r} has no inputs")
    ids = {l.id for l in ordered}
    if output_layer not in ids:
        raise UnknownLayer(f"output_layer {output_layer!r} is not defined")
    softmax = [l for l in ordered if l.kind == "softmax"]
    if softmax and (len(softmax) > 1 or softmax[0] is not ordered[-1]):
        raise ParseError("softmax is only allowed as the final layer")
    if ordered[-1].kind == "softmax" and output_layer == ordered[-1].id:
        raise ParseError("output_layer must be the pre-softmax layer")
    norm_weights = {}
    for lid, w in weights.items():
        if lid not in ids:
            raise UnknownLayer(f"weights given for undefined layer {lid!r}")
        bias = w.get("bias")
        norm_weights[lid] = {
            "weight": np.ascontiguousarray(w["weight"], dtype=np.float64),
            "bias": None if bias is None else np.ascontiguousarray(bias, dtype=np.float64).reshape(-1),
        }
    _check_channels(ordered, norm_weights)
    model = ModelBundle(ordered, norm_weights, output_layer, dict(metadata or {}))
    shape = ordered[0].params.get("shape")
    if shape is not None and None not in shape:
        forward(model, np.zeros(shape))  # dry run: surfaces spatial/width mismatches at load time
    return model


# -- storage format -----------------------------------------------------------

_STRUCTURAL_KEYS = {"id", "kind", "inputs", "weight_offset", "weight_shape",
                    "bias_offset", "bias_shape"}


def _take(blob: np.ndarray, offset, shape, what: str) -> np.ndarray:
    try:
        offset = int(offset)
        shape = tuple(int(s) for s in shape)
    except (TypeError, ValueError):
        raise ParseError(f"{what}: malformed offset/shape") from None
    n = int(np.prod(shape)) if shape else 1
    if offset < 0 or offset + n > blob.size:
        raise ParseError(
            f"{what}: elements [{offset}, {offset + n}) exceed weight blob of {blob.size}")
    return blob[offset:offset + n].reshape(shape).copy()


def load_model(manifest_bytes: bytes, weight_bytes: bytes) -> ModelBundle:
    try:
        doc = json.loads(manifest_bytes.decode("utf-8") if isinstance(manifest_bytes, bytes)
                         else manifest_bytes)
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ParseError(f"manifest is not valid JSON: {exc}") from None
    if not isinstance(doc, dict) or doc.get("format") != FORMAT:
        raise ParseError(f"manifest format must be {FORMAT!r}")
    if len(weight_bytes) % 8:
        raise ParseError(f"weight blob length {len(weight_bytes)} is not a multiple of 8")
    blob = np.frombuffer(weight_bytes, dtype="<f8").astype(np.float64)
    if not np.all(np.isfinite(blob)):
        raise ParseError("weight blob contains non-finite values")
    try:
        raw_layers = doc["layers"]
        output_layer = doc["output_layer"]
    except KeyError as exc:
        raise ParseError(f"manifest missing {exc}") from None

    layers, weights, used = [], {}, 0
    for entry in raw_layers:
        try:
            lid, kind = str(entry["id"]), entry["kind"]
        except (KeyError, TypeError):
            raise ParseError(f"layer entry lacks id/kind: {entry!r}") from None
        params = {k: v for k, v in entry.items() if k not in _STRUCTURAL_KEYS}
        layers.append(LayerSpec(lid, kind, tuple(entry.get("inputs", [])), params))
        if "weight_offset" in entry:
            w = _take(blob, entry["weight_offset"], entry["weight_shape"], f"layer {lid!r} weight")
            b = None
            if "bias_offset" in entry:
                b = _take(blob, entry["bias_offset"], entry["bias_shape"], f"layer {lid!r} bias")
                used = max(used, int(entry["bias_offset"]) + b.size)
            weights[lid] = {"weight": w, "bias": b}
            used = max(used, int(entry["weight_offset"]) + w.size)
    if used != blob.size:
        raise ParseError(f"weight blob holds {blob.size} values, manifest declares {used}")
    return build_model(layers, weights, output_layer, doc.get("metadata"))


def dump_model(model: ModelBundle) -> Tuple[bytes, bytes]:
    """Serialize to (manifest bytes, weight bytes); inverse of :func:`load_model`."""
    entries, chunks, offset = [], [], 0
    for layer in model.layers:
        entry = {"id": layer.id, "kind": layer.kind, "inputs": list(layer.inputs)}
        entry.update(layer.params)
        w = model.weights.get(layer.id)
        if w is not None:
            entry["weight_offset"] = offset
            entry["weight_shape"] = list(w["weight"].shape)
            chunks.append(w["weight"].reshape(-1))
            offset += w["weight"].size
            if w.get("bias") is not None:
                entry["bias_offset"] = offset
                entry["bias_shape"] = list(w["bias"].shape)
                chunks.append(w["bias"].reshape(-1))
                offset += w["bias"].size
        entries.append(entry)
    doc = {"format": FORMAT, "output_layer": model.output_layer, "layers": entries}
    if model.metadata:
        doc["metadata"] = model.metadata
    blob = np.concatenate(chunks) if chunks else np.zeros(0)
    return (json.dumps(doc, indent=1).encode("utf-8"), blob.astype("<f8").tobytes())


def save_model(model: ModelBundle, manifest_path, weights_path=None) -> None:
    from pathlib import Path
    manifest_path = Path(manifest_path)
    weights_path = Path(weights_path) if weights_path else manifest_path.with_suffix(".bin")
    manifest, blob = dump_model(model)
    manifest_path.write_bytes(manifest)
    weights_path.write_bytes(blob)


def read_model(manifest_path, weights_path=None) -> ModelBundle:
    """Load a model from disk; the blob defaults to the manifest path with ``.bin``."""
    from pathlib import Path
    manifest_path = Path(manifest_path)
    weights_path = Path(weights_path) if weights_path else manifest_path.with_suffix(".bin")
    return load_model(manifest_path.read_bytes(), weights_path.read_bytes())


# -- forward pass -------------------------------------------------------------

def _softmax(x):
    z = x - x.max(axis=0, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=0, keepdims=True)


def _run_layer(model: ModelBundle, layer: LayerSpec, ins: List[np.ndarray], masks: dict):
    k, p = layer.kind, layer.params
    x = ins[0]
    if k == "conv":
        return T.conv2d_forward(x, model.conv_params(layer.id))
    if k == "fc":
        w = model.weights[layer.id]
        return T.fc_forward(x, w["weight"], w["bias"])
    if k == "relu":
        return np.maximum(x, 0.0)
    if k == "elu":
        a = float(p.get("alpha", 1.0))
        return np.where(x > 0, x, a * np.expm1(np.minimum(x, 0.0)))
    if k == "maxpool":
        pp = model.pool_params(layer.id, x.shape)
        out, masks[layer.id] = T.maxpool_forward(x, pp.window, pp.stride, pp.padding)
        return out
    if k == "avgpool":
        pp = model.pool_params(layer.id, x.shape)
        return T.avgpool_forward(x, pp.window, pp.stride, pp.padding)
    if k == "lrn":
        return T.lrn_forward(x, int(p.get("local_size", 5)), float(p.get("alpha", 1e-4)),
                             float(p.get("beta", 0.75)), float(p.get("k", 1.0)))
    if k == "concat":
        hw = {t.shape[1:] for t in ins}
        if len(hw) != 1:
            raise ShapeMismatch(f"concat inputs differ spatially: {sorted(hw)}")
        return np.concatenate(ins, axis=0)
    if k == "flatten":
        return x.reshape(-1, 1, 1).copy()
    if k == "softmax":
        return _softmax(x)
    if k == "dropout":
        return x.copy()
    raise UnsupportedLayerKind(f"cannot execute layer kind {k!r}")


def check_input(model: ModelBundle, image) -> np.ndarray:
    x = T.as_tensor(image, ndim=3)
    declared = model.input_layer.params.get("shape")
    if declared is not None:
        for got, want in zip(x.shape, declared):
            if want is not None and got != want:
                raise ShapeMismatch(
                    f"layer {model.input_layer.id!r}: image shape {x.shape} does not match "
                    f"declared {tuple(declared)}")
    return x


def forward(model: ModelBundle, image) -> ActivationCache:
    """Bottom-up sweep recording every layer's response and every pool mask."""
    x = check_input(model, image)
    responses = {model.input_layer.id: x}
    masks: Dict[str, np.ndarray] = {}
    for layer in model.layers[1:]:
        ins = [responses[s] for s in layer.inputs]
        try:
            responses[layer.id] = _run_layer(model, layer, ins, masks)
        except ShapeMismatch as exc:
            raise ShapeMismatch(f"layer {layer.id!r}: {exc}") from None
    return ActivationCache(responses, masks, tuple(x.shape))


# -- top-down signals ---------------------------------------------------------

def class_signal(model: ModelBundle, class_indices: Sequence[int],
                 weights: Optional[Sequence[float]] = None, *,
                 output_shape=None, confidence_map=None, layer_id: Optional[str] = None):
    """Prior over output units selecting ``class_indices``.

    For spatial output layers pass ``output_shape`` (from the activation
    cache) and optionally ``confidence_map``: an H x W map shared by all chosen
    classes, or a C x H x W tensor whose selected channels are used. Without a
    map each chosen channel is spread uniformly. The result sums to 1 when its
    total is positive.
    """
    from .excitation import TopDownSignal

    layer_id = layer_id or model.output_layer
    layer = model.layer(layer_id)
    if output_shape is None:
        if layer.kind != "fc":
            raise ShapeMismatch(f"output_shape is required for {layer.kind} layer {layer_id!r}")
        output_shape = (model.weights[layer_id]["weight"].shape[0], 1, 1)
    output_shape = tuple(int(s) for s in output_shape)
    n_classes = output_shape[0]
    idx = [int(i) for i in class_indices]
    if weights is None:
        weights = [1.0] * len(idx)
    if len(weights) != len(idx):
        raise ShapeMismatch(f"{len(idx)} class indices but {len(weights)} weights")
    for i in idx:
        if not 0 <= i < n_classes:
            raise IndexOutOfRange(f"class index {i} outside [0, {n_classes})")
    for w in weights:
        if not w >= 0:
            raise NegativeWeight(f"signal weight {w} must be non-negative")

    values = np.zeros(output_shape)
    if confidence_map is not None:
        cmap = np.asarray(confidence_map, dtype=np.float64)
        if cmap.ndim == 2:
            cmap = np.broadcast_to(cmap, output_shape)
        if cmap.shape != output_shape:
            raise ShapeMismatch(f"confidence map {cmap.shape} vs output layer {output_shape}")
        if np.any(cmap < 0):
            raise NegativeWeight("confidence map must be non-negative")
        for i, w in zip(idx, weights):
            values[i] += w * cmap[i]
    else:
        hw = output_shape[1] * output_shape[2]
        for i, w in zip(idx, weights):
            values[i] += w / hw
    total = values.sum()
    if total > 0:
        values /= total
    return TopDownSignal(layer_id, values)
