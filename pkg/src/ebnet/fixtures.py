"""Synthetic networks and datasets with known answers.

These builders back the CLI's bundled toy model, the oracle cross-checks
and the end-to-end evaluation fixtures.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np

from .evaluation import box_area
from .imageio import write_image
from .netgraph import LayerSpec, ModelBundle, build_model

COLORS = ("red", "green", "blue")


def _rng(seed_or_rng) -> np.random.Generator:
    if isinstance(seed_or_rng, np.random.Generator):
        return seed_or_rng
    return np.random.default_rng(seed_or_rng)


def random_mlp(rng, widths: List[int], activation: str = "relu",
               weight_scale: float = 1.0) -> ModelBundle:
    """fc/activation stack over a widths[0] x 1 x 1 input; the last fc is the output."""
    rng = _rng(rng)
    layers = [LayerSpec("data", "input", (), {"shape": [widths[0], 1, 1]})]
    weights = {}
    prev = "data"
    n = len(widths) - 1
    for i in range(n):
        fc = f"fc{i + 1}"
        layers.append(LayerSpec(fc, "fc", (prev,)))
        weights[fc] = {"weight": rng.normal(0.0, weight_scale, (widths[i + 1], widths[i])),
                       "bias": rng.normal(0.0, 0.1, widths[i + 1])}
        prev = fc
        if i < n - 1:
            act = f"{activation}{i + 1}"
            layers.append(LayerSpec(act, activation, (prev,)))
            prev = act
    return build_model(layers, weights, prev)


def random_mlp_case(rng, min_layers: int = 3, max_layers: int = 5, max_width: int = 32):
    """Random MLP (3-5 affine layers), non-negative input and Dirichlet output signal."""
    rng = _rng(rng)
    depth = int(rng.integers(min_layers, max_layers + 1))
    widths = [int(w) for w in rng.integers(min(8, max_width), max_width + 1, depth + 1)]
    model = random_mlp(rng, widths)
    image = rng.uniform(0.0, 1.0, (widths[0], 1, 1))
    signal = rng.dirichlet(np.ones(widths[-1])).reshape(-1, 1, 1)
    return model, image, signal


def toy_convnet(rng=0, in_channels: int = 2, size: int = 8, mid: int = 4,
                classes: int = 3) -> ModelBundle:
    """conv -> relu -> maxpool -> conv -> relu -> fc, small enough for the chain oracle."""
    rng = _rng(rng)
    pooled = size // 2
    layers = [
        LayerSpec("data", "input", (), {"shape": [in_channels, size, size]}),
        LayerSpec("conv1", "conv", ("data",), {"stride": 1, "padding": 1}),
        LayerSpec("relu1", "relu", ("conv1",)),
        LayerSpec("pool1", "maxpool", ("relu1",), {"window": 2, "stride": 2}),
        LayerSpec("conv2", "conv", ("pool1",), {"stride": 1, "padding": 1}),
        LayerSpec("relu2", "relu", ("conv2",)),
        LayerSpec("fc3", "fc", ("relu2",)),
        LayerSpec("prob", "softmax", ("fc3",)),
    ]
    weights = {
        "conv1": {"weight": rng.normal(0, 0.5, (mid, in_channels, 3, 3)),
                  "bias": rng.normal(0, 0.1, mid)},
        "conv2": {"weight": rng.normal(0, 0.5, (mid, mid, 3, 3)),
                  "bias": rng.normal(0, 0.1, mid)},
        "fc3": {"weight": rng.normal(0, 0.5, (classes, mid * pooled * pooled)),
                "bias": np.zeros(classes)},
    }
    meta = {"attention_layer": "pool1", "mean": [0.0] * in_channels,
            "classes": [f"class{i}" for i in range(classes)]}
    return build_model(layers, weights, "fc3", meta)


def zoo_net(rng=0) -> ModelBundle:
    """Branching net touching every layer kind the engine propagates through."""
    rng = _rng(rng)
    layers = [
        LayerSpec("data", "input", (), {"shape": [2, 6, 6]}),
        LayerSpec("conv1", "conv", ("data",), {"stride": 1, "padding": 1}),
        LayerSpec("relu1", "relu", ("conv1",)),
        LayerSpec("norm1", "lrn", ("relu1",), {"local_size": 3, "alpha": 0.5, "beta": 0.75, "k": 1.0}),
        LayerSpec("pool1", "maxpool", ("norm1",), {"window": 3, "stride": 2, "padding": 1}),
        LayerSpec("br_a", "conv", ("pool1",), {"stride": 1, "padding": 0}),
        LayerSpec("relu_a", "relu", ("br_a",)),
        LayerSpec("br_b", "conv", ("pool1",), {"stride": 1, "padding": 1}),
        LayerSpec("relu_b", "relu", ("br_b",)),
        LayerSpec("cat", "concat", ("relu_a", "relu_b")),
        LayerSpec("drop", "dropout", ("cat",)),
        LayerSpec("avg", "avgpool", ("drop",), {"window": 2, "stride": 1, "padding": 1}),
        LayerSpec("flat", "flatten", ("avg",)),
        LayerSpec("fc", "fc", ("flat",)),
    ]
    weights = {
        "conv1": {"weight": rng.normal(0, 0.6, (3, 2, 3, 3)), "bias": rng.normal(0, .1, 3)},
        "br_a": {"weight": rng.normal(0, 0.6, (2, 3, 1, 1)), "bias": None},
        "br_b": {"weight": rng.normal(0, 0.6, (2, 3, 3, 3)), "bias": rng.normal(0, .1, 2)},
        "fc": {"weight": rng.normal(0, 0.6, (4, 4 * 4 * 4)), "bias": None},
    }
    return build_model(layers, weights, "fc")


def midsize_cnn(rng=0, size: int = 64, classes: int = 10) -> ModelBundle:
    """Three conv/relu/maxpool stages plus fc; about 3.2e7 multiply-adds forward."""
    rng = _rng(rng)
    chans = [3, 32, 64, 64]
    layers = [LayerSpec("data", "input", (), {"shape": [3, size, size]})]
    weights = {}
    prev = "data"
    for s in range(3):
        conv, relu, pool = f"conv{s + 1}", f"relu{s + 1}", f"pool{s + 1}"
        fan_in = chans[s] * 9
        weights[conv] = {"weight": rng.normal(0, np.sqrt(2.0 / fan_in), (chans[s + 1], chans[s], 3, 3)),
                         "bias": np.full(chans[s + 1], 0.01)}
        layers += [LayerSpec(conv, "conv", (prev,), {"stride": 1, "padding": 1}),
                   LayerSpec(relu, "relu", (conv,)),
                   LayerSpec(pool, "maxpool", (relu,), {"window": 2, "stride": 2})]
        prev = pool
    flat = chans[-1] * (size // 8) ** 2
    weights["fc"] = {"weight": rng.normal(0, np.sqrt(1.0 / flat), (classes, flat)), "bias": None}
    layers.append(LayerSpec("fc", "fc", (prev,)))
    return build_model(layers, weights, "fc", {"attention_layer": "pool2"})


def forward_macs(model: ModelBundle, cache) -> int:
    """Multiply-adds spent in conv and fc layers for one forward pass."""
    total = 0
    for layer in model.layers:
        if layer.kind in ("conv", "fc"):
            w = model.weights[layer.id]["weight"]
            out = cache.responses[layer.id]
            per_out = int(np.prod(w.shape[1:]))
            total += per_out * (out.size if layer.kind == "conv" else w.shape[0])
    return total


# -- colored-square detector -----------------------------------------------------

def detector_net(size: int = 64) -> ModelBundle:
    """Three-class detector: class k fires on squares of primary color k."""
    n = len(COLORS)
    eye = np.eye(n)
    color = (2 * eye - 1).reshape(n, n, 1, 1)                  # own channel +1, others -1
    blur = np.where(eye[:, :, None, None] > 0, 1.0 / 9, -0.1) * np.ones((n, n, 3, 3))
    head = np.where(eye > 0, 1.0, -0.5)
    layers = [
        LayerSpec("data", "input", (), {"shape": [3, None, None]}),
        LayerSpec("color", "conv", ("data",), {"stride": 1, "padding": 0}),
        LayerSpec("relu1", "relu", ("color",)),
        LayerSpec("pool1", "maxpool", ("relu1",), {"window": 2, "stride": 2}),
        LayerSpec("blur", "conv", ("pool1",), {"stride": 1, "padding": 1}),
        LayerSpec("relu2", "relu", ("blur",)),
        LayerSpec("pool2", "maxpool", ("relu2",), {"window": 2, "stride": 2}),
        LayerSpec("gap", "avgpool", ("pool2",), {"global": True}),
        LayerSpec("score", "fc", ("gap",)),
        LayerSpec("prob", "softmax", ("score",)),
    ]
    weights = {"color": {"weight": color, "bias": None},
               "blur": {"weight": blur, "bias": None},
               "score": {"weight": head, "bias": None}}
    meta = {"attention_layer": "pool1", "classes": list(COLORS), "mean": [0.0, 0.0, 0.0],
            "pixel_scale": 1.0, "resize": 0}
    return build_model(layers, weights, "score", meta)


def _draw(img, rng, cls, box):
    x0, y0, x1, y1 = box
    val = np.full(3, 0.05)
    val[cls] = rng.uniform(0.8, 1.0)
    img[:, y0:y1 + 1, x0:x1 + 1] = val[:, None, None]


def detector_image(rng, size: int = 64, objects=()) -> np.ndarray:
    """Noisy dark background with colored squares ``(class, box)``."""
    img = rng.uniform(0.0, 0.08, (3, size, size))
    for cls, box in objects:
        _draw(img, rng, cls, box)
    return img


def _square_in_quadrant(rng, size, quadrant, side):
    half = size // 2
    qy, qx = divmod(quadrant, 2)
    lo_x, lo_y = qx * half + 2, qy * half + 2
    x0 = int(rng.integers(lo_x, qx * half + half - side - 1))
    y0 = int(rng.integers(lo_y, qy * half + half - side - 1))
    return (x0, y0, x0 + side - 1, y0 + side - 1)


def make_detector_dataset(out_dir, n_images: int = 20, seed: int = 0, size: int = 64):
    """Write images + a JSONL manifest; returns (manifest path, difficult pairs).

    The image kinds cycle through: one large square alone, one small square
    alone, several small squares, and a large square with a small distracter.
    The returned set lists the (image path, category) pairs that meet the
    difficult-subset criteria by construction.
    """
    rng = np.random.default_rng(seed)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    difficult = set()
    lines = []
    for i in range(n_images):
        kind = i % 4
        quads = [int(q) for q in rng.permutation(4)]
        classes = [int(c) for c in rng.permutation(3)]
        objects = []
        if kind in (0, 3):
            side = int(rng.integers(34, 40))
            x0 = int(rng.integers(2, size - side - 2))
            y0 = int(rng.integers(2, size - side - 2))
            objects.append((classes[0], (x0, y0, x0 + side - 1, y0 + side - 1)))
            if kind == 3:
                # small distracter in the corner quadrant farthest from the big square
                cx, cy = x0 + side // 2, y0 + side // 2
                q = (0 if cy >= size // 2 else 2) + (0 if cx >= size // 2 else 1)
                sx = 1 if q % 2 == 0 else size - 11
                sy = 1 if q < 2 else size - 11
                objects.append((classes[1], (sx, sy, sx + 9, sy + 9)))
        elif kind == 1:
            side = int(rng.integers(8, 16))
            objects.append((classes[0], _square_in_quadrant(rng, size, quads[0], side)))
        else:
            for j in range(int(rng.integers(2, 4))):
                side = int(rng.integers(8, 16))
                objects.append((classes[j], _square_in_quadrant(rng, size, quads[j], side)))
        if kind == 3 and _overlaps(objects):
            objects = objects[:1]
        img = detector_image(rng, size, objects)
        name = f"img{i:03d}.ppm"
        write_image(out / name, img)
        regions = [{"category": COLORS[c], "bbox": list(b)} for c, b in objects]
        lines.append(json.dumps({"image": name, "regions": regions, "size": [size, size]}))
        present = {COLORS[c] for c, _ in objects}
        for c, b in objects:
            if box_area(b) < size * size / 4 and len(present) > 1:
                difficult.add((str(out / name), COLORS[c]))
    manifest = out / "manifest.jsonl"
    manifest.write_text("\n".join(lines) + "\n")
    return manifest, difficult


def _overlaps(objects) -> bool:
    (_, a), (_, b) = objects[0], objects[1]
    return not (a[2] < b[0] or b[2] < a[0] or a[3] < b[1] or b[3] < a[1])


# -- attention-map fixtures ---------------------------------------------------------

def gaussian_blob(rng, h: int = 48, w: int = 64):
    """Random anisotropic Gaussian map and its parameters (amp, cy, cx, sy, sx)."""
    rng = _rng(rng)
    amp = float(rng.uniform(0.5, 2.0))
    cy, cx = float(rng.uniform(h * 0.25, h * 0.75)), float(rng.uniform(w * 0.25, w * 0.75))
    sy, sx = float(rng.uniform(2.0, h / 5)), float(rng.uniform(2.0, w / 5))
    yy, xx = np.mgrid[0:h, 0:w]
    m = amp * np.exp(-((yy - cy) ** 2 / (2 * sy ** 2) + (xx - cx) ** 2 / (2 * sx ** 2)))
    return m, (amp, cy, cx, sy, sx)


def blob_level_box(params, tau: float, h: int, w: int) -> Optional[Tuple[int, int, int, int]]:
    """Tightest box of grid pixels where the Gaussian is >= tau, from the ellipse.

    Uses the closed form: a pixel passes iff its normalized squared distance
    is <= 2 ln(amp / tau). The extreme columns are reached on the row nearest
    the center (and vice versa), so the box follows from 1-D solves.
    """
    amp, cy, cx, sy, sx = params
    if tau <= 0:
        return (0, 0, w - 1, h - 1)
    if tau > amp:
        return None
    budget = 2.0 * np.log(amp / tau)
    ys, xs = np.arange(h), np.arange(w)
    best_dy = ((ys - cy) ** 2 / sy ** 2).min()
    best_dx = ((xs - cx) ** 2 / sx ** 2).min()
    cols = xs[(xs - cx) ** 2 / sx ** 2 + best_dy <= budget]
    rows = ys[(ys - cy) ** 2 / sy ** 2 + best_dx <= budget]
    if cols.size == 0 or rows.size == 0:
        return None
    return int(cols.min()), int(rows.min()), int(cols.max()), int(rows.max())
