"""Complete (up to budget) containment checking by branch-and-bound over input boxes.

Every node is bounded by symbolic interval propagation; a node whose concretized
output box fits the target is closed, otherwise cheap concrete candidates (the box
center and, per violated output side, the corner extremizing its symbolic form) are
evaluated as counterexamples before the box is bisected.
"""

from __future__ import annotations

import enum
import heapq
import time
from dataclasses import dataclass, field

import numpy as np

from .box import Box, box_contains
from .domains import SYMBOLIC, StateAbstraction, SymInterval, certify_chain, interval_bounds, \
    propagate_symbolic
from .network import Network, VerificationProblem, check_range, eval_range


class Verdict(str, enum.Enum):
    PROVEN = "proven"
    REFUTED = "refuted"
    UNKNOWN = "unknown"


@dataclass(frozen=True)
class Budget:
    max_splits: int = 100_000
    max_time: float = 60.0
    min_box_width: float = 1e-9

    def __post_init__(self):
        if self.max_splits <= 0 or self.max_time <= 0 or self.min_box_width <= 0:
            raise ValueError("budget limits must be positive")


DEFAULT_BUDGET = Budget()


@dataclass(frozen=True)
class ContainmentQuery:
    network: Network
    from_layer: int
    to_layer: int
    input_set: Box
    target_set: Box

    def __post_init__(self):
        check_range(self.network, self.from_layer, self.to_layer)
        if self.input_set.dim != self.network.layer_in_dim(self.from_layer):
            raise ValueError(
                f"input set has dimension {self.input_set.dim}, layer {self.from_layer} "
                f"expects {self.network.layer_in_dim(self.from_layer)}")
        if self.target_set.dim != self.network.layer(self.to_layer).out_dim:
            raise ValueError(
                f"target set has dimension {self.target_set.dim}, layer {self.to_layer} "
                f"outputs {self.network.layer(self.to_layer).out_dim}")


@dataclass
class CheckStats:
    splits: int = 0
    nodes: int = 0
    max_depth: int = 0
    wall_time: float = 0.0


@dataclass
class CheckResult:
    verdict: Verdict
    witness: np.ndarray | None = None
    stats: CheckStats = field(default_factory=CheckStats)
    reason: str = ""
    label: str = ""
    spurious: bool = False
    # hull of per-leaf concretized layer boxes (only for proven checks that asked for it)
    layer_boxes: list[Box] | None = field(default=None, repr=False)
    # sub-checks of a composite obligation, each with its own verdict and timing
    parts: list["CheckResult"] = field(default_factory=list, repr=False)

    @property
    def proven(self) -> bool:
        return self.verdict is Verdict.PROVEN

    @property
    def refuted(self) -> bool:
        return self.verdict is Verdict.REFUTED

    @property
    def max_part_time(self) -> float:
        return max((p.stats.wall_time for p in self.parts), default=self.stats.wall_time)

    @property
    def total_part_time(self) -> float:
        return sum(p.stats.wall_time for p in self.parts) if self.parts else self.stats.wall_time

    def summary(self) -> dict:
        out = {
            "label": self.label,
            "verdict": self.verdict.value,
            "splits": self.stats.splits,
            "max_depth": self.stats.max_depth,
            "time": self.stats.wall_time,
        }
        if self.witness is not None:
            out["witness"] = [float(v) for v in self.witness]
        if self.reason:
            out["reason"] = self.reason
        if self.spurious:
            out["spurious"] = True
        if self.parts:
            out["parts"] = [p.summary() for p in self.parts]
            out["max_part_time"] = self.max_part_time
        return out


def violates(target: Box, y: np.ndarray) -> bool:
    return bool(np.any(y > target.hi) or np.any(y < target.lo))


def _fits(target: Box, out: Box, margin: float) -> bool:
    if margin == 0.0:
        return box_contains(target, out)
    return bool(np.all(out.lo >= target.lo + margin) and np.all(out.hi <= target.hi - margin))


def _interval_fits(net: Network, a: int, b: int, box: Box, target: Box, margin: float) -> bool:
    lo, hi = interval_bounds(net, a, b, box.lo, box.hi)
    return bool(np.all(lo >= target.lo + margin) and np.all(hi <= target.hi - margin))


def _candidates(box: Box, sym: SymInterval, target: Box) -> list[np.ndarray]:
    cands = [box.center]
    out = sym.box
    for j in np.flatnonzero(out.hi > target.hi):
        cands.append(sym.upper_argmax(j))
    for j in np.flatnonzero(out.lo < target.lo):
        cands.append(sym.lower_argmin(j))
    return cands


def _split_dim(box: Box, sym: SymInterval) -> int:
    width = box.width
    score = width * sym.influence if sym.influence is not None else width
    if not np.any(score > 0):
        score = width
    return int(np.argmax(score))


def check_containment(q: ContainmentQuery, budget: Budget = DEFAULT_BUDGET,
                      sound_margin: float = 0.0, collect_boxes: bool = False) -> CheckResult:
    """Decide ``forall x in input_set: g_to(...g_from(x)) in target_set``.

    A refutation always carries a witness that was re-evaluated concretely.  ``Unknown``
    is only returned when the split/time budget runs out or a box shrinks below
    ``budget.min_box_width`` without being decided.
    """
    net, a, b = q.network, q.from_layer, q.to_layer
    target = q.target_set
    stats = CheckStats()
    t0 = time.perf_counter()
    stack: list[tuple[Box, int]] = [(q.input_set, 0)]
    hull: list[Box] | None = None
    undecided = 0

    def done(verdict, witness=None, reason=""):
        stats.wall_time = time.perf_counter() - t0
        boxes = hull if (verdict is Verdict.PROVEN and collect_boxes) else None
        return CheckResult(verdict, witness, stats, reason, layer_boxes=boxes)

    while stack:
        if stats.splits >= budget.max_splits:
            return done(Verdict.UNKNOWN, reason="split budget exhausted")
        if time.perf_counter() - t0 > budget.max_time:
            return done(Verdict.UNKNOWN, reason="time budget exhausted")
        box, depth = stack.pop()
        stats.nodes += 1
        stats.max_depth = max(stats.max_depth, depth)
        # plain intervals are cheap and often enough; symbolic bounds only when they are not
        if not collect_boxes and _interval_fits(net, a, b, box, target, sound_margin):
            continue
        sym = propagate_symbolic(net, a, b, box)
        if _fits(target, sym.box, sound_margin):
            if collect_boxes:
                hull = list(sym.layer_boxes) if hull is None else [
                    h.hull(s) for h, s in zip(hull, sym.layer_boxes)]
            continue
        for x in _candidates(box, sym, target):
            if violates(target, eval_range(net, a, b, x)):
                return done(Verdict.REFUTED, np.array(x, dtype=np.float64))
        if np.max(box.width, initial=0.0) < budget.min_box_width:
            undecided += 1
            continue
        left, right = box.split(_split_dim(box, sym))
        stats.splits += 1
        stack.append((right, depth + 1))
        stack.append((left, depth + 1))
    if undecided:
        return done(Verdict.UNKNOWN, reason=f"{undecided} boxes below minimum width undecided")
    return done(Verdict.PROVEN)


def max_output(net: Network, from_layer: int, to_layer: int, input_set: Box, neuron: int,
               budget: Budget = DEFAULT_BUDGET, tol: float = 1e-4) -> tuple[float, float]:
    """Certified enclosure ``(lower, upper)`` of the maximum of one neuron over a box.

    ``lower`` is witnessed by a concrete input; ``upper`` is the largest symbolic upper
    bound among the boxes still open.  Best-first search stops once the gap is at most
    ``tol`` or the budget runs out.
    """
    if budget.max_splits <= 0:
        raise ValueError("budget must allow at least one split")
    check_range(net, from_layer, to_layer)
    if not 0 <= neuron < net.layer(to_layer).out_dim:
        raise IndexError(f"neuron {neuron} outside layer {to_layer}")
    t0 = time.perf_counter()

    def value(x):
        return float(eval_range(net, from_layer, to_layer, x)[neuron])

    best = -np.inf
    heap: list[tuple[float, int, Box, SymInterval]] = []
    counter = 0

    def push(box):
        nonlocal best, counter
        sym = propagate_symbolic(net, from_layer, to_layer, box)
        for x in (box.center, sym.upper_argmax(neuron)):
            best = max(best, value(x))
        heapq.heappush(heap, (-float(sym.box.hi[neuron]), counter, box, sym))
        counter += 1

    push(input_set)
    splits = 0
    while heap:
        upper = -heap[0][0]
        if upper - best <= tol or splits >= budget.max_splits or \
                time.perf_counter() - t0 > budget.max_time:
            break
        _, _, box, sym = heapq.heappop(heap)
        if np.max(box.width, initial=0.0) < budget.min_box_width:
            heapq.heappush(heap, (-float(sym.box.hi[neuron]), counter, box, sym))
            counter += 1
            break
        left, right = box.split(_split_dim(box, sym))
        splits += 1
        push(left)
        push(right)
    upper = max(-heap[0][0], best) if heap else best
    return best, upper


def verify_full(problem: VerificationProblem, budget: Budget = DEFAULT_BUDGET,
                mode: str = SYMBOLIC, sound_margin: float = 0.0,
                chain_slack: float = 0.05) -> tuple[CheckResult, StateAbstraction | None]:
    """From-scratch verification of ``forall x in d_in: f(x) in d_out``.

    On success also returns the state abstraction certified from the analysis boxes.
    """
    net = problem.network
    q = ContainmentQuery(net, 1, net.n_layers, problem.d_in, problem.d_out)
    res = check_containment(q, budget, sound_margin, collect_boxes=True)
    res.label = "full"
    if not res.proven:
        return res, None
    sa = certify_chain(net, problem.d_in, problem.d_out, res.layer_boxes, mode, chain_slack)
    return res, sa
