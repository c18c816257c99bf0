"""Command-line front end.

Subcommands::

    ebnet inspect          --model M
    ebnet attend           --model M --image IMG [--class C ... | --signal-map F]
    ebnet oracle-check     [--model M] [--samples N]
    ebnet point-game       --model M --manifest DS.jsonl
    ebnet locate           --model M --manifest DS.jsonl [--alpha A ...]
    ebnet score-proposals  --model M --manifest DS.jsonl --proposals P.jsonl

Every command prints a JSON report on stdout; with ``--out`` the report,
maps and figures are also written there. Exit status is 0 only when no
entry failed. Setting ``EBNET_CACHE_DIR`` reuses forward passes across runs.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from . import evaluation as ev
from . import oracle
from .errors import EBNetError, EmptyAttention, EmptyProposal, ParseError, ShapeMismatch
from .excitation import (TopDownSignal, contrastive_backprop, excitation_backprop,
                         mwp_to_attention_map)
from .imageio import load_map, read_image, save_map
from .netgraph import ActivationCache, ModelBundle, class_signal, forward, load_model
from .tensor import bicubic_resize

logger = logging.getLogger("ebnet")

DEFAULT_ALPHAS = [0.5 * i for i in range(21)]


@dataclass
class RunConfig:
    model: Optional[Path] = None
    weights: Optional[Path] = None
    images: List[Path] = field(default_factory=list)
    manifest: Optional[Path] = None
    proposals: Optional[Path] = None
    classes: List[str] = field(default_factory=list)
    signal_map: Optional[Path] = None
    layer: Optional[str] = None
    contrastive: bool = False
    shift_lambda: float = 0.0
    alphas: List[float] = field(default_factory=list)
    gamma: float = 0.5
    margin: int = 15
    samples: int = 0
    signals: int = 5
    seed: int = 0
    out: Optional[Path] = None
    jobs: int = 1
    resize: Optional[int] = None
    categories: Optional[List[str]] = None
    figures: bool = True
    tolerance: float = 1e-9

    def __post_init__(self):
        if self.classes and self.signal_map is not None:
            raise ValueError("give either --class or --signal-map, not both")


class Engine:
    """A loaded model plus preprocessing and (optionally cached) forward passes."""

    def __init__(self, model: ModelBundle, digest: str, resize_default: int = 224,
                 resize: Optional[int] = None):
        self.model = model
        self.digest = digest
        meta = model.metadata
        if resize is not None:
            self.resize = resize
        else:
            self.resize = int(meta.get("resize", resize_default))
        self.mean = np.asarray(meta.get("mean", [0.0]), dtype=np.float64).reshape(-1, 1, 1)
        self.pixel_scale = float(meta.get("pixel_scale", 1.0))
        self.cache_dir = os.environ.get("EBNET_CACHE_DIR")

    @classmethod
    def from_files(cls, manifest_path, weights_path=None, **kw) -> "Engine":
        manifest_path = Path(manifest_path)
        weights_path = Path(weights_path) if weights_path else manifest_path.with_suffix(".bin")
        mbytes, wbytes = manifest_path.read_bytes(), weights_path.read_bytes()
        try:
            model = load_model(mbytes, wbytes)
        except EBNetError as exc:
            raise type(exc)(f"{manifest_path}: {exc}") from None
        return cls(model, hashlib.sha256(mbytes + wbytes).hexdigest(), **kw)

    def preprocess(self, image: np.ndarray) -> np.ndarray:
        x = np.asarray(image, dtype=np.float64) * self.pixel_scale
        if self.resize:
            _, h, w = x.shape
            s = self.resize / min(h, w)
            nh, nw = max(1, round(h * s)), max(1, round(w * s))
            if (nh, nw) != (h, w):
                x = bicubic_resize(x, nh, nw)
        return x - self.mean

    def forward(self, x: np.ndarray) -> ActivationCache:
        if not self.cache_dir:
            return forward(self.model, x)
        key = hashlib.sha256(self.digest.encode() + x.tobytes() + str(x.shape).encode()).hexdigest()
        path = Path(self.cache_dir) / f"{key}.npz"
        if path.exists():
            with np.load(path) as z:
                responses = {k[2:]: z[k] for k in z.files if k.startswith("r:")}
                masks = {k[2:]: z[k] for k in z.files if k.startswith("m:")}
            return ActivationCache(responses, masks, tuple(x.shape))
        cache = forward(self.model, x)
        path.parent.mkdir(parents=True, exist_ok=True)
        arrays = {f"r:{k}": v for k, v in cache.responses.items()}
        arrays.update({f"m:{k}": v for k, v in cache.masks.items()})
        tmp = path.with_suffix(".tmp.npz")
        np.savez(tmp, **arrays)
        os.replace(tmp, path)
        return cache

    def class_index(self, name) -> int:
        classes = self.model.metadata.get("classes")
        if classes and str(name) in classes:
            return classes.index(str(name))
        try:
            return int(name)
        except ValueError:
            raise ParseError(f"unknown class {name!r}") from None

    def signal(self, cache: ActivationCache, indices, weights=None, signal_map=None):
        out_id = self.model.output_layer
        shape = cache.responses[out_id].shape
        cmap = signal_map
        if cmap is None and shape[1] * shape[2] > 1:
            # fully convolutional output: the class confidence map weights locations
            cmap = np.maximum(cache.responses[out_id], 0.0)
        return class_signal(self.model, indices, weights, output_shape=shape, confidence_map=cmap)

    def map_signal(self, cache: ActivationCache, path) -> TopDownSignal:
        """Signal read from a file: a ``.npy`` array of the output shape, or a 2-D
        map shared by every output channel (resized to the output extents)."""
        out_id = self.model.output_layer
        shape = cache.responses[out_id].shape
        path = Path(path)
        arr = np.load(path) if path.suffix == ".npy" else load_map(path)
        arr = np.asarray(arr, dtype=np.float64)
        if arr.ndim == 2:
            if shape[1] * shape[2] == 1:
                raise ShapeMismatch(f"{path}: spatial signal map given but output layer "
                                    f"{out_id!r} is {shape}")
            if arr.shape != shape[1:]:
                arr = bicubic_resize(arr[None], shape[1], shape[2], clamp=True)[0]
            arr = np.broadcast_to(arr, shape)
        if arr.shape != shape:
            raise ShapeMismatch(f"{path}: signal {arr.shape} vs output layer {shape}")
        total = arr.sum()
        return TopDownSignal(out_id, arr / total if total > 0 else np.array(arr))

    def attention(self, cache, signal: TopDownSignal, out_hw, layer=None, contrastive=False,
                  shift_lambda=0.0):
        layer = layer or self.model.attention_layer or self.model.input_layer.id
        if contrastive:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                field_ = contrastive_backprop(self.model, cache, signal, layer, shift_lambda)
        else:
            field_ = excitation_backprop(self.model, cache, signal, layer, shift_lambda)
        kind = "c-mwp" if contrastive else "mwp"
        return field_, mwp_to_attention_map(field_, out_hw, f"{kind}@{layer}")


# -- helpers --------------------------------------------------------------------

def _parse_class(spec: str):
    name, _, weight = spec.partition(":")
    return name, float(weight) if weight else 1.0


def _parallel(fn, items, jobs: int):
    if jobs <= 1:
        return [fn(i) for i in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def _outdir(cfg: RunConfig) -> Optional[Path]:
    if cfg.out is None:
        return None
    cfg.out.mkdir(parents=True, exist_ok=True)
    return cfg.out


def _finish(report: dict, cfg: RunConfig, name: str) -> dict:
    out = _outdir(cfg)
    if out is not None:
        (out / f"{name}.json").write_text(json.dumps(report, indent=1, sort_keys=True))
    return report


def _engine(cfg: RunConfig, resize_default: int = 224) -> Engine:
    if cfg.model is None:
        raise ParseError("--model is required")
    return Engine.from_files(cfg.model, cfg.weights, resize_default=resize_default,
                             resize=cfg.resize)


def _entry_error(idx: int, entry, exc: Exception) -> dict:
    image = entry if isinstance(entry, str) else getattr(entry, "image", None)
    return {"entry": idx, "image": image,
            "error": type(exc).__name__, "message": str(exc)}


# -- commands -----------------------------------------------------------------------

def cmd_inspect(cfg: RunConfig):
    """Print layers, shapes and metadata of a model."""
    eng = _engine(cfg)
    m = eng.model
    rows = []
    for layer in m.layers:
        row = {"id": layer.id, "kind": layer.kind, "inputs": list(layer.inputs)}
        w = m.weights.get(layer.id)
        if w is not None:
            row["weight_shape"] = list(w["weight"].shape)
        rows.append(row)
    return {"output_layer": m.output_layer, "metadata": m.metadata, "layers": rows}, 0


def cmd_attend(cfg: RunConfig):
    """Write attention maps for one or more images."""
    if not cfg.images:
        raise ParseError("--image is required")
    if not cfg.classes and cfg.signal_map is None:
        raise ParseError("give a signal with --class or --signal-map")
    eng = _engine(cfg)
    out = _outdir(cfg)
    records, errors = [], []
    for i, path in enumerate(cfg.images):
        try:
            raw = read_image(path)
            cache = eng.forward(eng.preprocess(raw))
            if cfg.signal_map is not None:
                sig = eng.map_signal(cache, cfg.signal_map)
                desc = f"map:{cfg.signal_map}"
            else:
                pairs = [_parse_class(c) for c in cfg.classes]
                sig = eng.signal(cache, [eng.class_index(c) for c, _ in pairs],
                                 [w for _, w in pairs])
                desc = ",".join(cfg.classes)
            fld, amap = eng.attention(cache, sig, raw.shape[1:], cfg.layer, cfg.contrastive,
                                      cfg.shift_lambda)
            rec = {"image": str(path), "layer": fld.layer_id, "signal": desc,
                   "contrastive": cfg.contrastive, "lambda": cfg.shift_lambda,
                   "signal_mass": sig.mass, "mass_retained": fld.mass,
                   "map_shape": list(amap.shape),
                   "argmax": list(ev.argmax_point(amap)),
                   "map_max": float(amap.image.max())}
            if out is not None:
                stem = f"{Path(path).stem}_{'cmwp' if cfg.contrastive else 'mwp'}"
                rec["pgm"] = str(save_map(out / f"{stem}.pgm", amap.image))
                rec["ebmap"] = str(save_map(out / f"{stem}.ebmap", amap.image))
                if cfg.figures:
                    from .plotting import attention_overlay
                    rec["figure"] = str(attention_overlay(raw, amap.image, out / f"{stem}.png",
                                                          amap.signal_descriptor))
            records.append(rec)
        except (EBNetError, OSError) as exc:
            errors.append(_entry_error(i, str(path), exc))
    report = _finish({"maps": records, "errors": errors}, cfg, "attend")
    return report, 0 if not errors else 1


def _random_input(model: ModelBundle, rng) -> np.ndarray:
    shape = model.input_layer.params.get("shape")
    if shape is None or any(s is None for s in shape):
        raise ParseError("oracle-check needs --image for models without a fixed input shape")
    return rng.uniform(0.0, 1.0, tuple(shape))


def cmd_oracle_check(cfg: RunConfig):
    """Compare layer-wise MWP with the Markov-chain oracle."""
    rng = np.random.default_rng(cfg.seed)
    if cfg.model is None:
        from .fixtures import toy_convnet
        model, name = toy_convnet(cfg.seed), "bundled toy convnet"
        eng = Engine(model, "toy", resize=0)
    else:
        eng = _engine(cfg, resize_default=0)
        model, name = eng.model, str(cfg.model)
    x = eng.preprocess(read_image(cfg.images[0])) if cfg.images else _random_input(model, rng)
    cache = eng.forward(x)
    chain = oracle.build_chain(model, cache, model.output_layer, cfg.layer, cfg.shift_lambda)
    n_out = cache.responses[model.output_layer].size
    shape = cache.responses[model.output_layer].shape
    worst, per_signal = 0.0, []
    signals = []
    for _ in range(max(cfg.signals, 1)):
        sig = TopDownSignal(model.output_layer, rng.dirichlet(np.ones(n_out)).reshape(shape))
        signals.append(sig)
        errs = oracle.cross_check(model, cache, sig, cfg.shift_lambda, chain)
        per_signal.append(errs)
        worst = max(worst, max(errs.values()))
    report = {"model": name, "states": chain.n_states, "signals": len(signals),
              "max_relative_error": worst, "tolerance": cfg.tolerance,
              "per_layer": {k: max(e[k] for e in per_signal) for k in per_signal[0]}}
    ok = worst <= cfg.tolerance
    if cfg.samples:
        sig = signals[0]
        start = chain.start_vector(sig.values)
        visits = oracle.expected_visits(chain, start)
        counts = oracle.sample_winner_paths(chain, start, cfg.samples, cfg.seed)
        p = visits[:-1] / start.sum()
        freq = counts[:-1] / cfg.samples
        sel = p >= 1e-3
        band = 3 * np.sqrt(p * np.clip(1 - p, 0, None) / cfg.samples)
        within = np.abs(freq - p) <= band
        frac = float(within[sel].mean()) if sel.any() else 1.0
        report["monte_carlo"] = {"samples": cfg.samples, "neurons_checked": int(sel.sum()),
                                 "fraction_within_3sd": frac}
        ok = ok and frac >= 0.99
    report["passed"] = bool(ok)
    return _finish(report, cfg, "oracle_check"), 0 if ok else 1


def _load_dataset(cfg: RunConfig):
    if cfg.manifest is None:
        raise ParseError("--manifest is required")
    return ev.load_manifest(cfg.manifest)


def cmd_point_game(cfg: RunConfig):
    """Run the pointing game over a dataset manifest."""
    eng = _engine(cfg)
    manifest = _load_dataset(cfg)
    categories = cfg.categories or manifest.categories
    difficult = {(e.image, c) for e in ev.filter_difficult(manifest).entries
                 for c in e.target_categories}

    def run(item):
        idx, entry = item
        try:
            raw = read_image(entry.image)
            h, w = raw.shape[1:]
            if entry.size is not None and tuple(entry.size) != (h, w):
                raise ShapeMismatch(f"manifest size {entry.size} vs image {(h, w)}")
            entry.size = (h, w)
            cache = eng.forward(eng.preprocess(raw))
            rows = []
            for cat in entry.target_categories:
                sig = eng.signal(cache, [eng.class_index(cat)])
                row = {"entry": idx, "image": entry.image, "category": cat,
                       "difficult": (entry.image, cat) in difficult}
                for method, contrast in (("mwp", False), ("c-mwp", True)):
                    _, amap = eng.attention(cache, sig, (h, w), cfg.layer, contrast)
                    row[method] = ev.pointing_hit(amap, entry.regions_of(cat), cfg.margin)
                    row[f"{method}_point"] = list(ev.argmax_point(amap))
                rows.append(row)
            return rows, None
        except (EBNetError, OSError) as exc:
            return [], _entry_error(idx, entry, exc)

    outcomes = _parallel(run, list(enumerate(manifest.entries)), cfg.jobs)
    rows = [r for rs, _ in outcomes for r in rs]
    errors = [e for _, e in outcomes if e is not None]
    methods = {}
    for method in ("mwp", "c-mwp"):
        res = {"all": ev.pointing_game([(r["category"], r[method]) for r in rows], categories)}
        hard = [(r["category"], r[method]) for r in rows if r["difficult"]]
        res["difficult"] = ev.pointing_game(hard) if hard else None
        methods[method] = res
    report = {"margin": cfg.margin, "layer": cfg.layer or eng.model.attention_layer,
              "methods": methods, "results": rows, "errors": errors,
              "difficult_pairs": len(difficult)}
    out = _outdir(cfg)
    if out is not None and cfg.figures:
        from .plotting import pointing_accuracy
        report["figure"] = str(pointing_accuracy(report, out / "point_game.png"))
    return _finish(report, cfg, "point_game"), 0 if not errors else 1


def cmd_locate(cfg: RunConfig):
    """Sweep bounding-box thresholds for dominant-object localization."""
    manifest = _load_dataset(cfg)
    alphas = cfg.alphas or DEFAULT_ALPHAS
    eng = None
    if any("map" not in e.extra for e in manifest.entries):
        eng = _engine(cfg)

    def run(item):
        idx, entry = item
        try:
            target = entry.target_categories[0]
            gts = [r.bbox if r.bbox is not None else ev.mask_bbox(r.mask)
                   for r in entry.regions_of(target)]
            if "map" in entry.extra:
                m = load_map(entry.extra["map"])
            else:
                raw = read_image(entry.image)
                cache = eng.forward(eng.preprocess(raw))
                sig = eng.signal(cache, [eng.class_index(target)])
                m = eng.attention(cache, sig, raw.shape[1:], cfg.layer, cfg.contrastive)[1].image
            if not np.any(m > 0):
                raise EmptyAttention("attention map is all zero")
            boxes = []
            for a in alphas:
                try:
                    boxes.append(ev.extract_bbox(m, a))
                except EmptyAttention:
                    boxes.append(None)
            return {"entry": idx, "image": entry.image, "category": target,
                    "gt": [list(g) for g in gts],
                    "boxes": [None if b is None else list(b) for b in boxes]}, None
        except (EBNetError, OSError, IndexError) as exc:
            return {"entry": idx, "image": entry.image, "gt": [], "boxes": [None] * len(alphas)}, \
                _entry_error(idx, entry, exc)

    outcomes = _parallel(run, list(enumerate(manifest.entries)), cfg.jobs)
    rows = [r for r, _ in outcomes]
    errors = [e for _, e in outcomes if e is not None]
    sweep = []
    for k, a in enumerate(alphas):
        boxes = [None if r["boxes"][k] is None else tuple(r["boxes"][k]) for r in rows]
        gts = [[tuple(g) for g in r["gt"]] for r in rows]
        sweep.append({"alpha": a, "error": ev.localization_error(boxes, gts)})
    best = min(sweep, key=lambda s: (s["error"], s["alpha"]))
    report = {"sweep": sweep, "best_alpha": best["alpha"], "best_error": best["error"],
              "iou_threshold": 0.5, "contrastive": cfg.contrastive, "entries": rows,
              "errors": errors}
    out = _outdir(cfg)
    if out is not None and cfg.figures:
        from .plotting import alpha_sweep
        report["figure"] = str(alpha_sweep(report, out / "locate.png"))
    return _finish(report, cfg, "locate"), 0 if not errors else 1


def cmd_score_proposals(cfg: RunConfig):
    """Rank segment proposals by attention and report recall."""
    manifest = _load_dataset(cfg)
    if cfg.proposals is None:
        raise ParseError("--proposals is required")
    proposals = ev.load_proposals(cfg.proposals)
    eng = None
    if any("maps" not in e.extra for e in manifest.entries):
        eng = _engine(cfg, resize_default=300)
    ks = (1, 5, 10)

    def phrase_map(entry, phrase, raw, cache):
        maps = entry.extra.get("maps", {})
        if phrase in maps:
            return load_map(maps[phrase])
        from .excitation import combine_maps
        words = [w for w in phrase.split() if _known(eng, w)]
        if not words:
            raise EmptyAttention(f"no word of {phrase!r} is a known class")
        word_maps = []
        for wd in words:
            sig = eng.signal(cache, [eng.class_index(wd)])
            word_maps.append(eng.attention(cache, sig, raw.shape[1:], cfg.layer,
                                           cfg.contrastive)[1])
        return combine_maps(word_maps).image

    def run(item):
        idx, entry = item
        try:
            segs = proposals.get(entry.image)
            if not segs:
                raise EmptyProposal(f"no proposals for {entry.image}")
            raw = cache = None
            if "maps" not in entry.extra or any(c not in entry.extra["maps"]
                                                for c in entry.target_categories):
                raw = read_image(entry.image)
                cache = eng.forward(eng.preprocess(raw))
            rows = []
            for phrase in entry.target_categories:
                m = phrase_map(entry, phrase, raw, cache)
                scored = ev.nms(ev.score_segments(m, segs, cfg.gamma), 0.7)
                gt = [r.bbox if r.bbox is not None else ev.mask_bbox(r.mask)
                      for r in entry.regions_of(phrase)]
                rows.append({"entry": idx, "image": entry.image, "phrase": phrase,
                             "boxes": [{"bbox": list(s.bbox), "score": s.score} for s in scored],
                             "recall": {str(k): ev.recall_at_k(scored, gt, k) for k in ks}})
            return rows, None
        except (EBNetError, OSError) as exc:
            return [], _entry_error(idx, entry, exc)

    outcomes = _parallel(run, list(enumerate(manifest.entries)), cfg.jobs)
    rows = [r for rs, _ in outcomes for r in rs]
    errors = [e for _, e in outcomes if e is not None]
    recall = {str(k): (float(np.mean([r["recall"][str(k)] for r in rows])) if rows else 0.0)
              for k in ks}
    report = {"gamma": cfg.gamma, "nms_iou": 0.7, "recall": recall, "phrases": rows,
              "errors": errors}
    out = _outdir(cfg)
    if out is not None and cfg.figures and rows:
        from .plotting import recall_bars
        report["figure"] = str(recall_bars(report, out / "score_proposals.png"))
    return _finish(report, cfg, "score_proposals"), 0 if not errors else 1


def _known(eng: Engine, word: str) -> bool:
    try:
        eng.class_index(word)
        return True
    except ParseError:
        return False


COMMANDS = {
    "inspect": cmd_inspect,
    "attend": cmd_attend,
    "oracle-check": cmd_oracle_check,
    "point-game": cmd_point_game,
    "locate": cmd_locate,
    "score-proposals": cmd_score_proposals,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--model", type=Path, help="model manifest (JSON)")
    common.add_argument("--weights", type=Path, help="weight blob (default: manifest with .bin)")
    common.add_argument("--image", dest="images", type=Path, action="append", default=[],
                        help="PPM/PGM input image (repeatable)")
    common.add_argument("--manifest", type=Path, help="dataset manifest (JSON lines)")
    common.add_argument("--proposals", type=Path, help="proposal file (JSON lines)")
    common.add_argument("--class", dest="classes", action="append", default=[],
                        help="class name or index, optionally NAME:WEIGHT (repeatable)")
    common.add_argument("--signal-map", type=Path, help="spatial top-down signal map")
    common.add_argument("--layer", help="layer to read attention from")
    common.add_argument("--contrastive", action="store_true", help="contrastive MWP")
    common.add_argument("--lambda", dest="shift_lambda", type=float, default=0.0,
                        help="activation shift for lower-bounded activations")
    common.add_argument("--alpha", dest="alphas", type=float, action="append", default=[],
                        help="bbox threshold factor (repeatable; default sweep 0:0.5:10)")
    common.add_argument("--gamma", type=float, default=0.5, help="segment area exponent")
    common.add_argument("--margin", type=int, default=15, help="pointing tolerance in pixels")
    common.add_argument("--samples", type=int, default=0, help="Monte-Carlo winner paths")
    common.add_argument("--signals", type=int, default=5, help="random signals for oracle-check")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--out", type=Path, help="output directory")
    common.add_argument("--jobs", type=int, default=1, help="worker threads for batch commands")
    common.add_argument("--resize", type=int, default=None,
                        help="shortest-side resize before the forward pass (0 disables)")
    common.add_argument("--categories", type=lambda s: s.split(","), default=None,
                        help="comma-separated categories to score (point-game)")
    common.add_argument("--no-figures", dest="figures", action="store_false",
                        help="skip matplotlib figures")
    common.add_argument("--tolerance", type=float, default=1e-9,
                        help="oracle-check relative error bound")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="ebnet", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in COMMANDS.items():
        sub.add_parser(name, parents=[common], help=(fn.__doc__ or name).split("\n")[0])
    return parser


def config_from_args(args: argparse.Namespace) -> RunConfig:
    fields = RunConfig.__dataclass_fields__
    return RunConfig(**{k: v for k, v in vars(args).items() if k in fields})


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = config_from_args(args)
        report, code = COMMANDS[args.command](cfg)
    except (EBNetError, OSError, ValueError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    json.dump(report, sys.stdout, indent=1, sort_keys=True, default=_json_default)
    sys.stdout.write("\n")
    return code


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, Path):
        return str(o)
    raise TypeError(f"cannot serialize {type(o).__name__}")


if __name__ == "__main__":
    sys.exit(main())
