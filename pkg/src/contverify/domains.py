"""Box and symbolic-interval abstract domains, and layer-wise state abstractions.

A :class:`StateAbstraction` stores one concretized box per layer output.  Every box
over-approximates the states reachable from ``input_box``.  The stronger *chain*
property -- every point of ``S_i`` is mapped by ``g_{i+1}`` into ``S_{i+1}`` -- is only
guaranteed from layer ``chain_start`` onward; reuse checks that rely on the stored
boxes being closed under the remaining layers must consult it.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .box import Box, box_contains
from .network import RELU, Layer, Network, check_range

BOX = "box"
SYMBOLIC = "symbolic"
MODES = (BOX, SYMBOLIC)


def _interval_affine(weights: np.ndarray, bias: np.ndarray, lo: np.ndarray, hi: np.ndarray):
    wp = np.maximum(weights, 0.0)
    wn = np.minimum(weights, 0.0)
    return wp @ lo + wn @ hi + bias, wp @ hi + wn @ lo + bias


def propagate_box(layer: Layer, in_box: Box) -> Box:
    """Interval image of ``in_box`` under one layer.

    Each output neuron is an affine function of independent interval inputs, so the
    per-neuron bounds are exact (the attained extremes sit on box corners).
    """
    if in_box.dim != layer.in_dim:
        raise ValueError(f"box dimension {in_box.dim} != layer input dimension {layer.in_dim}")
    lo, hi = _interval_affine(layer.weights, layer.bias, in_box.lo, in_box.hi)
    if layer.activation == RELU:
        lo, hi = np.maximum(lo, 0.0), np.maximum(hi, 0.0)
    return Box(lo, hi)


def propagate_box_range(net: Network, from_layer: int, to_layer: int, in_box: Box) -> list[Box]:
    check_range(net, from_layer, to_layer)
    out = []
    box = in_box
    for k in range(from_layer, to_layer + 1):
        box = propagate_box(net.layer(k), box)
        out.append(box)
    return out


def interval_bounds(net: Network, from_layer: int, to_layer: int, lo: np.ndarray,
                    hi: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Interval image over a layer range as raw arrays, skipping Box construction."""
    for layer in net.layers[from_layer - 1:to_layer]:
        lo, hi = _interval_affine(layer.weights, layer.bias, lo, hi)
        if layer.activation == RELU:
            lo, hi = np.maximum(lo, 0.0), np.maximum(hi, 0.0)
    return lo, hi


@dataclass
class SymInterval:
    """Affine lower/upper forms of each neuron over the variables of ``input_box``.

    ``layer_boxes`` holds the concretized post-activation box of every propagated
    layer (the last one equals ``box``).  ``influence`` accumulates, per input
    dimension, the absolute symbolic coefficients reaching unstable and output
    neurons; the branch-and-bound split heuristic reads it.
    """

    input_box: Box
    lower_coef: np.ndarray
    lower_const: np.ndarray
    upper_coef: np.ndarray
    upper_const: np.ndarray
    box: Box
    layer_boxes: list[Box] = field(default_factory=list)
    influence: np.ndarray | None = None
    n_unstable: int = 0

    def upper_argmax(self, j: int) -> np.ndarray:
        """Corner of the input box maximizing the upper form of neuron ``j``."""
        return np.where(self.upper_coef[j] >= 0, self.input_box.hi, self.input_box.lo)

    def lower_argmin(self, j: int) -> np.ndarray:
        return np.where(self.lower_coef[j] >= 0, self.input_box.lo, self.input_box.hi)


def _form_max(coef, const, box):
    return const + np.maximum(coef, 0.0) @ box.hi + np.minimum(coef, 0.0) @ box.lo


def _form_min(coef, const, box):
    return const + np.maximum(coef, 0.0) @ box.lo + np.minimum(coef, 0.0) @ box.hi


def propagate_symbolic(net: Network, from_layer: int, to_layer: int, in_box: Box) -> SymInterval:
    """Symbolic interval propagation over layers ``from_layer..to_layer``.

    Concretized bounds are intersected with the interval image of the previous layer's
    box, so the result is never looser than :func:`propagate_box`.
    """
    check_range(net, from_layer, to_layer)
    d = in_box.dim
    if d != net.layer_in_dim(from_layer):
        raise ValueError(
            f"box dimension {d} != layer {from_layer} input dimension "
            f"{net.layer_in_dim(from_layer)}")
    lc = lk = uc = uk = None
    prev = in_box
    influence = np.zeros(d)
    n_unstable = 0
    boxes = []
    for k in range(from_layer, to_layer + 1):
        layer = net.layer(k)
        w, b = layer.weights, layer.bias
        if lc is None:
            # forms over the input box start as the identity, so the first layer is w, b
            z_uc = z_lc = w
            z_uk = z_lk = b
        else:
            wp, wn = np.maximum(w, 0.0), np.minimum(w, 0.0)
            z_uc = wp @ uc + wn @ lc
            z_uk = wp @ uk + wn @ lk + b
            z_lc = wp @ lc + wn @ uc
            z_lk = wp @ lk + wn @ uk + b
        ia_lo, ia_hi = _interval_affine(w, b, prev.lo, prev.hi)
        zl = np.maximum(_form_min(z_lc, z_lk, in_box), ia_lo)
        zu = np.minimum(_form_max(z_uc, z_uk, in_box), ia_hi)
        zu = np.maximum(zu, zl)  # guards rounding crossover on degenerate boxes
        if layer.activation == RELU:
            dead = zu <= 0.0
            unstable = (zl < 0.0) & ~dead
            n_unstable += int(unstable.sum())
            if unstable.any():
                influence += np.abs(z_uc[unstable]).sum(axis=0) + np.abs(z_lc[unstable]).sum(axis=0)
            # lower form: keep where active, else the constant 0
            keep_lower = zl >= 0.0
            z_lc = np.where(keep_lower[:, None], z_lc, 0.0)
            z_lk = np.where(keep_lower, z_lk, 0.0)
            # upper form: keep if nonnegative over the box, else concretize
            u_min = _form_min(z_uc, z_uk, in_box)
            keep_upper = (~dead) & (u_min >= 0.0)
            const_upper = (~dead) & ~keep_upper
            z_uc = np.where(keep_upper[:, None], z_uc, 0.0)
            z_uk = np.where(keep_upper, z_uk, np.where(const_upper, zu, 0.0))
            out = Box(np.maximum(zl, 0.0), np.maximum(zu, 0.0))
        else:
            out = Box(zl, zu)
        lc, lk, uc, uk = z_lc, z_lk, z_uc, z_uk
        prev = out
        boxes.append(out)
    influence += np.abs(uc).sum(axis=0) + np.abs(lc).sum(axis=0)
    return SymInterval(in_box, lc, lk, uc, uk, prev, boxes, influence, n_unstable)


@dataclass(frozen=True, eq=False)
class StateAbstraction:
    """Per-layer boxes ``S_1..S_n`` for a network over ``input_box``.

    ``chain_start`` (1-based) is the first layer from which the stored boxes are closed
    under the network: for every ``i >= chain_start`` and ``x`` in ``S_i``,
    ``g_{i+1}(x)`` lies in ``S_{i+1}``.  ``chain_start == 1`` is a full state abstraction.
    """

    boxes: tuple[Box, ...]
    input_box: Box
    network_hash: str
    mode: str = BOX
    chain_start: int = 1

    def __post_init__(self):
        object.__setattr__(self, "boxes", tuple(self.boxes))
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}")
        if not 1 <= self.chain_start <= max(len(self.boxes), 1):
            raise ValueError(f"chain_start {self.chain_start} outside 1..{len(self.boxes)}")

    @property
    def n(self) -> int:
        return len(self.boxes)

    def S(self, i: int) -> Box:
        """1-based access matching the usual ``S_i`` notation."""
        if not 1 <= i <= self.n:
            raise IndexError(f"S_{i} outside 1..{self.n}")
        return self.boxes[i - 1]

    @property
    def output_box(self) -> Box:
        return self.boxes[-1]

    def closed_from(self, i: int) -> bool:
        """Whether the stored chain certifies everything downstream of ``S_i``."""
        return i >= self.chain_start

    def to_dict(self) -> dict:
        return {
            "boxes": [b.to_list() for b in self.boxes],
            "input_box": self.input_box.to_list(),
            "network_hash": self.network_hash,
            "mode": self.mode,
            "chain_start": self.chain_start,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "StateAbstraction":
        return cls(tuple(Box.from_list(b) for b in doc["boxes"]), Box.from_list(doc["input_box"]),
                   doc["network_hash"], doc.get("mode", BOX), int(doc.get("chain_start", 1)))


def check_dims(net: Network, sa: StateAbstraction) -> None:
    if sa.n != net.n_layers:
        raise ValueError(f"abstraction has {sa.n} boxes, network has {net.n_layers} layers")
    for k, (box, width) in enumerate(zip(sa.boxes, net.widths), start=1):
        if box.dim != width:
            raise ValueError(f"S_{k} has dimension {box.dim}, layer {k} has width {width}")
    if sa.input_box.dim != net.input_dim:
        raise ValueError("abstraction input box does not match the network input dimension")


def link_holds(net: Network, sa: StateAbstraction, i: int, slack: float = 0.0) -> bool:
    """``forall x in S_i: g_{i+1}(x) in S_{i+1}``; ``i == 0`` checks the input bullet."""
    source = sa.input_box if i == 0 else sa.S(i)
    return box_contains(sa.S(i + 1), propagate_box(net.layer(i + 1), source), slack)


def first_closed_layer(net: Network, boxes: Sequence[Box], slack: float = 0.0) -> int:
    """Smallest ``s`` such that every link ``S_i -> S_{i+1}`` with ``i >= s`` holds."""
    s = len(boxes)
    while s > 1 and box_contains(boxes[s - 1], propagate_box(net.layer(s), boxes[s - 2]), slack):
        s -= 1
    return s


def build_state_abstraction(net: Network, d_in: Box, mode: str = SYMBOLIC) -> StateAbstraction:
    """Per-layer boxes over ``d_in``; box mode yields a chain closed from layer 1."""
    if d_in.dim != net.input_dim:
        raise ValueError(f"d_in has dimension {d_in.dim}, network expects {net.input_dim}")
    if mode == BOX:
        boxes = propagate_box_range(net, 1, net.n_layers, d_in)
        start = 1
    elif mode == SYMBOLIC:
        boxes = propagate_symbolic(net, 1, net.n_layers, d_in).layer_boxes
        start = first_closed_layer(net, boxes)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    return StateAbstraction(tuple(boxes), d_in, net.digest(), mode, start)


def _widen_layer(box: Box, rho: float, relu: bool) -> Box:
    if rho == 0.0:
        return box
    pad = rho * (box.width + 1.0)
    lo = box.lo - pad
    if relu:
        lo = np.maximum(lo, np.minimum(box.lo, 0.0))
    return Box(lo, box.hi + pad)


def _closure(net: Network, start_box: Box, s: int, rho: float) -> list[Box]:
    """Boxes ``S_s..S_n`` with ``S_s`` widened and each later box the widened image."""
    n = net.n_layers
    out = [_widen_layer(start_box, rho, net.layer(s).activation == RELU) if s < n else start_box]
    for k in range(s + 1, n + 1):
        img = propagate_box(net.layer(k), out[-1])
        out.append(_widen_layer(img, rho, net.layer(k).activation == RELU) if k < n else img)
    return out


def certify_chain(net: Network, d_in: Box, d_out: Box, reach: Sequence[Box],
                  mode: str = SYMBOLIC, max_slack: float = 0.05,
                  iters: int = 30) -> StateAbstraction:
    """Turn reachable-set boxes into a proof chain ending inside ``d_out``.

    Picks the earliest layer ``s`` from which the interval closure of the stored boxes
    still lands in ``d_out``; boxes before ``s`` stay as given.  The closed part is then
    inflated by the largest relative slack in ``[0, max_slack]`` (bisection) for which the
    final image, inflated the same way, still fits in ``d_out``.  That slack is what
    lets a slightly fine-tuned network pass the single-layer reuse checks later on.
    """
    n = net.n_layers
    reach = list(reach)
    if len(reach) != n:
        raise ValueError("need one reachable box per layer")
    first = propagate_box(net.layer(1), d_in)
    reach[0] = reach[0].hull(first) if reach[0].dim == first.dim else reach[0]
    digest = net.digest()

    def fits(s: int, rho: float) -> bool:
        boxes = _closure(net, reach[s - 1], s, rho)
        final = boxes[-1]
        if rho > 0.0 and s < n:
            final = final.widen(rho * (final.width + 1.0))
        return box_contains(d_out, final)

    for s in range(1, n + 1):
        if not fits(s, 0.0):
            continue
        rho = 0.0
        if s < n and max_slack > 0.0:
            if fits(s, max_slack):
                rho = max_slack
            else:
                lo, hi = 0.0, max_slack
                for _ in range(iters):
                    mid = 0.5 * (lo + hi)
                    lo, hi = (mid, hi) if fits(s, mid) else (lo, mid)
                rho = lo
        boxes = reach[:s - 1] + _closure(net, reach[s - 1], s, rho)
        return StateAbstraction(tuple(boxes), d_in, digest, mode, s)
    raise ValueError("reachable output box is not contained in d_out; nothing to certify")


def with_hash(sa: StateAbstraction, digest: str) -> StateAbstraction:
    return replace(sa, network_hash=digest)
