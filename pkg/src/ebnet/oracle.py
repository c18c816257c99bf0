"""Brute-force winner-take-all oracle built on an explicit absorbing Markov chain.

Every neuron between the signal layer and a bottom layer becomes a chain
state. Transition probabilities are evaluated one neuron at a time with plain
Python loops, sharing nothing with the tensor kernels used by
:mod:`ebnet.excitation`. Bottom-layer neurons are absorbing; so is one extra
*sink* state that receives the walk whenever a neuron has no excitatory
evidence (or leads somewhere outside the modelled layers).

Expected visits come from the fundamental matrix, via a dense solve of
``(I - Q^T) v = s``; :func:`sample_winner_paths` simulates the walks.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Optional, Tuple

import numpy as np

from .errors import (NegativeActivation, SingularSystem, TooLarge, UnsupportedLayerKind)
from .netgraph import ActivationCache, ModelBundle

DEFAULT_MAX_STATES = 5000

_IDENTITY_KINDS = {"relu", "elu", "lrn", "dropout", "flatten"}


@dataclass
class ChainModel:
    """Absorbing chain in canonical form ``[[Q, R], [0, I]]``.

    States ``0 .. n_transient-1`` are transient, the rest absorbing; the last
    absorbing state is the sink. ``blocks`` maps a layer id to the first
    state of its neurons and the layer's tensor shape.
    """

    n_transient: int
    n_absorbing: int
    Q: np.ndarray
    R: np.ndarray
    state_index: Dict[Tuple[str, int], int]
    blocks: Dict[str, Tuple[int, tuple]]
    top_layer: str
    bottom_layer: str

    @property
    def n_states(self) -> int:
        return self.n_transient + self.n_absorbing

    @property
    def sink(self) -> int:
        return self.n_states - 1

    def start_vector(self, values) -> np.ndarray:
        """Embed a distribution over the top layer into transient-state space."""
        start, shape = self.blocks[self.top_layer]
        v = np.asarray(values, dtype=np.float64).reshape(-1)
        if v.size != int(np.prod(shape)):
            raise ValueError(f"start values have {v.size} entries, top layer has {shape}")
        s = np.zeros(self.n_transient)
        s[start:start + v.size] = v
        return s

    def layer_values(self, visits: np.ndarray, layer_id: str) -> np.ndarray:
        start, shape = self.blocks[layer_id]
        n = int(np.prod(shape))
        return np.asarray(visits[start:start + n]).reshape(shape)


def _layer_set(model: ModelBundle, top: str, bottom: str):
    up = model.ancestors(top)
    down = {bottom}
    for layer in model.layers[model.position(bottom):]:
        if any(s in down for s in layer.inputs):
            down.add(layer.id)
    return [l for l in model.layers if l.id in up and l.id in down]


def _unravel(flat: int, shape) -> Tuple[int, ...]:
    out = []
    for extent in reversed(shape):
        out.append(flat % extent)
        flat //= extent
    return tuple(reversed(out))


def _children(model, cache, layer, neuron: int, shift_lambda: float):
    """(child layer, child flat index, unnormalized weight) for one neuron.

    Normalization happens in the caller. Pass-through layers return a
    single child with weight 1.
    """
    k = layer.kind
    p = layer.params
    out_shape = cache.responses[layer.id].shape
    if k in _IDENTITY_KINDS:
        return [(layer.inputs[0], neuron, 1.0)]
    if k == "concat":
        c, y, x = _unravel(neuron, out_shape)
        for src in layer.inputs:
            sc, sh, sw = cache.responses[src].shape
            if c < sc:
                return [(src, (c * sh + y) * sw + x, 1.0)]
            c -= sc
        raise AssertionError("concat channel out of range")
    src = layer.inputs[0]
    act = cache.responses[src]
    in_shape = act.shape
    flat_act = act.reshape(-1)

    def excite(idx, w):
        a = float(flat_act[idx]) + shift_lambda
        if a < 0:
            raise NegativeActivation(
                f"oracle: activation {a:.6g} of {src!r}[{idx}] is negative after shift")
        return a * w if w > 0 else 0.0

    if k == "fc":
        row = model.weights[layer.id]["weight"][neuron]
        kids = []
        for j in range(row.shape[0]):
            wt = excite(j, float(row[j]))
            if wt > 0:
                kids.append((src, j, wt))
        return kids

    c_in, h, w = in_shape
    o, y, x = _unravel(neuron, out_shape)
    if k == "conv":
        kernel = model.weights[layer.id]["weight"]
        _, _, kh, kw = kernel.shape
        sh, sw = _pair(p.get("stride", 1))
        ph, pw = _pair(p.get("padding", 0))
        kids = []
        for c in range(c_in):
            for i in range(kh):
                iy = y * sh - ph + i
                if not 0 <= iy < h:
                    continue
                for j in range(kw):
                    ix = x * sw - pw + j
                    if not 0 <= ix < w:
                        continue
                    idx = (c * h + iy) * w + ix
                    wt = excite(idx, float(kernel[o, c, i, j]))
                    if wt > 0:
                        kids.append((src, idx, wt))
        return kids

    if p.get("global"):
        (kh, kw), (sh, sw), (ph, pw) = (h, w), (h, w), (0, 0)
    else:
        kh, kw = _pair(p["window"])
        sh, sw = _pair(p.get("stride", p["window"]))
        ph, pw = _pair(p.get("padding", 0))
    window = []
    for i in range(kh):
        iy = y * sh - ph + i
        for j in range(kw):
            ix = x * sw - pw + j
            if 0 <= iy < h and 0 <= ix < w:
                window.append((o * h + iy) * w + ix)
    if k == "avgpool":
        kids = []
        for idx in window:
            wt = excite(idx, 1.0 / (kh * kw))
            if wt > 0:
                kids.append((src, idx, wt))
        return kids
    if k == "maxpool":
        best = window[0]
        for idx in window[1:]:
            if flat_act[idx] > flat_act[best]:
                best = idx
        return [(src, best, 1.0)]
    raise UnsupportedLayerKind(f"oracle cannot model {k} layer {layer.id!r}")


def _pair(v):
    if isinstance(v, (int, np.integer)):
        return int(v), int(v)
    return int(v[0]), int(v[1])


def build_chain(model: ModelBundle, cache: ActivationCache, top_layer: Optional[str] = None,
                bottom_layer: Optional[str] = None, shift_lambda: float = 0.0,
                max_states: int = DEFAULT_MAX_STATES) -> ChainModel:
    """Enumerate neurons and per-neuron transition probabilities."""
    top = top_layer or model.output_layer
    bottom = bottom_layer or model.input_layer.id
    layers = _layer_set(model, top, bottom)
    if not layers or layers[0].id != bottom or layers[-1].id != top:
        raise ValueError(f"layer {bottom!r} does not feed {top!r}")
    sizes = {l.id: int(cache.responses[l.id].size) for l in layers}
    n_states = sum(sizes.values()) + 1
    if n_states > max_states:
        raise TooLarge(f"chain would have {n_states} states (cap {max_states})")

    # transient states: top layer first, walking down; absorbing: bottom then sink
    blocks: Dict[str, Tuple[int, tuple]] = {}
    state_index: Dict[Tuple[str, int], int] = {}
    nxt = 0
    for layer in reversed(layers[1:]):
        blocks[layer.id] = (nxt, cache.responses[layer.id].shape)
        nxt += sizes[layer.id]
    n_t = nxt
    blocks[bottom] = (nxt, cache.responses[bottom].shape)
    for lid, (start, _) in blocks.items():
        for off in range(sizes[lid]):
            state_index[(lid, off)] = start + off
    n_a = sizes[bottom] + 1
    sink = n_t + n_a - 1

    P = np.zeros((n_t, n_t + n_a))
    for layer in layers[1:]:
        if layer.kind in ("input", "softmax"):
            raise UnsupportedLayerKind(f"oracle cannot model {layer.kind} layer {layer.id!r}")
        start = blocks[layer.id][0]
        for neuron in range(sizes[layer.id]):
            row = start + neuron
            kids = _children(model, cache, layer, neuron, shift_lambda)
            total = 0.0
            for _, _, wt in kids:
                total += wt
            if total <= 0.0:
                P[row, sink] = 1.0
                continue
            for lid, idx, wt in kids:
                col = state_index.get((lid, idx), sink)
                P[row, col] += wt / total
    return ChainModel(n_t, n_a, P[:, :n_t].copy(), P[:, n_t:].copy(),
                      state_index, blocks, top, bottom)


def expected_visits(chain: ChainModel, start_distribution) -> np.ndarray:
    """Expected visit count of every state for walks started from ``start_distribution``.

    Returns transient visits followed by absorbing-state visits (sink last).
    """
    s = np.asarray(start_distribution, dtype=np.float64).reshape(-1)
    if s.size != chain.n_transient:
        raise ValueError(f"start distribution has {s.size} entries, chain has "
                         f"{chain.n_transient} transient states")
    if np.any(s < 0):
        raise ValueError("start distribution must be non-negative")
    a = np.eye(chain.n_transient) - chain.Q.T
    try:
        v = np.linalg.solve(a, s)
    except np.linalg.LinAlgError as exc:
        raise SingularSystem(str(exc)) from None
    return np.concatenate([v, chain.R.T @ v])


def neumann_visits(chain: ChainModel, start_distribution, tol: float = 1e-12,
                   max_terms: int = 100000) -> np.ndarray:
    """Transient visits as the truncated series ``sum_k (Q^T)^k s``."""
    term = np.asarray(start_distribution, dtype=np.float64).copy()
    total = term.copy()
    qt = chain.Q.T
    for _ in range(max_terms):
        term = qt @ term
        total += term
        if np.abs(term).max(initial=0.0) < tol:
            break
    return total


def _transition_csr(chain: ChainModel):
    full = np.hstack([chain.Q, chain.R])
    rows, cols = np.nonzero(full)
    probs = full[rows, cols]
    indptr = np.searchsorted(rows, np.arange(chain.n_transient + 1))
    # cumulative probability within each row, offset by 2*row so the whole
    # array is monotone and one searchsorted serves every walker
    cum = np.empty_like(probs)
    for r in range(chain.n_transient):
        lo, hi = indptr[r], indptr[r + 1]
        cum[lo:hi] = np.cumsum(probs[lo:hi]) + 2.0 * r
    return indptr, cols, cum


def sample_winner_paths(chain: ChainModel, start_distribution, n_samples: int,
                        seed: int = 0, batch: int = 20000) -> np.ndarray:
    """Visit counts per state over ``n_samples`` seeded winner-selection walks."""
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    s = np.asarray(start_distribution, dtype=np.float64).reshape(-1)
    if s.size != chain.n_transient or s.sum() <= 0:
        raise ValueError("start distribution must cover the transient states with positive mass")
    rng = np.random.default_rng(seed)
    start_cum = np.cumsum(s / s.sum())
    indptr, cols, cum = _transition_csr(chain)
    row_total = np.array([cum[indptr[r + 1] - 1] - 2.0 * r if indptr[r + 1] > indptr[r] else 0.0
                          for r in range(chain.n_transient)])
    counts = np.zeros(chain.n_states, dtype=np.int64)
    done = 0
    while done < n_samples:
        m = min(batch, n_samples - done)
        done += m
        state = np.searchsorted(start_cum, rng.random(m) * start_cum[-1], side="right")
        state = np.minimum(state, chain.n_transient - 1)
        counts += np.bincount(state, minlength=chain.n_states)
        while state.size:
            u = rng.random(state.size) * row_total[state] + 2.0 * state
            pos = np.searchsorted(cum, u, side="right")
            pos = np.minimum(pos, indptr[state + 1] - 1)
            state = cols[pos]
            counts += np.bincount(state, minlength=chain.n_states)
            state = state[state < chain.n_transient]
    return counts


def relative_error(engine, oracle, floor: float = 1e-15) -> float:
    """Largest componentwise relative error; entries below ``floor`` times the
    largest oracle magnitude are compared on that absolute scale."""
    a = np.asarray(engine, dtype=np.float64).reshape(-1)
    b = np.asarray(oracle, dtype=np.float64).reshape(-1)
    scale = max(np.abs(b).max(initial=0.0), np.abs(a).max(initial=0.0))
    if scale == 0:
        return 0.0
    den = np.maximum(np.abs(b), floor * scale)
    return float(np.max(np.abs(a - b) / den))


def cross_check(model: ModelBundle, cache: ActivationCache, signal, shift_lambda: float = 0.0,
                chain: Optional[ChainModel] = None, bottom_layer: Optional[str] = None):
    """Per-layer relative error between the layer-wise engine and the chain oracle."""
    from .excitation import propagate_layers

    chain = chain or build_chain(model, cache, signal.layer_id, bottom_layer, shift_lambda)
    visits = expected_visits(chain, chain.start_vector(signal.values))
    engine = propagate_layers(model, cache, signal, chain.bottom_layer, shift_lambda)
    return {lid: relative_error(engine[lid].values, chain.layer_values(visits, lid))
            for lid in chain.blocks}


def write_chain(chain: ChainModel, path) -> None:
    """Dump the full transition matrix in MatrixMarket coordinate format."""
    full = np.hstack([chain.Q, chain.R])
    rows, cols = np.nonzero(full)
    with open(path, "w") as fh:
        fh.write("%%MatrixMarket matrix coordinate real general\n")
        fh.write(f"% transient={chain.n_transient} absorbing={chain.n_absorbing} "
                 f"sink={chain.sink}\n")
        fh.write(f"{full.shape[0]} {full.shape[1]} {rows.size}\n")
        for r, c in zip(rows, cols):
            fh.write(f"{r + 1} {c + 1} {full[r, c]:.17g}\n")
