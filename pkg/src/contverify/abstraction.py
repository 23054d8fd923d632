"""Network abstraction by neuron merging, for scalar-output ReLU networks.

Two abstract networks are built per source network: an *upper* one with
``f_hat_up(x) >= f(x)`` and a *lower* one with ``f_hat_lo(x) <= f(x)``, both for every
``x >= d_in.lo`` componentwise (so in particular on ``d_in``).

Construction, per objective (``+1`` upper, ``-1`` lower):

1. Sign-split.  Walking backwards from the output, every hidden neuron is duplicated
   into at most four copies keyed by ``(sign, direction)``: ``sign`` is the sign of the
   outgoing edges the copy keeps, ``direction`` is ``+1`` ("inc") when raising the
   copy's value can only raise the objective.  Copies share the original incoming
   weights, so the split network computes exactly ``f``.
2. Merge.  Within one layer and one category, groups of copies are merged greedily
   (closest incoming vectors first).  An abstract edge from group ``U`` into group
   ``m`` carries ``max_a sum_{u in U} w_au`` for inc groups and ``min`` for dec groups;
   biases follow the same rule.  Because hidden values and the re-anchored inputs
   ``x - d_in.lo`` are nonnegative, an inc group then dominates each member and a dec
   group is dominated by each member, layer by layer.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .box import Box
from .domains import StateAbstraction, certify_chain, propagate_box_range
from .exact import DEFAULT_BUDGET, Budget, CheckResult, CheckStats, ContainmentQuery, Verdict, \
    check_containment, violates
from .lipschitz import LipschitzBound, lipschitz_upper_bound
from .network import Layer, Network, eval_network

log = logging.getLogger(__name__)

UPPER = "upper"
LOWER = "lower"
_OBJECTIVE = {UPPER: 1, LOWER: -1}
# copy order inside one original neuron: pos/inc, neg/inc, pos/dec, neg/dec
_CATEGORY_ORDER = ((1, 1), (-1, 1), (1, -1), (-1, -1))
_REL_TOL = 1e-12
N_SAMPLES = 1000


def _category_name(sign: int, direction: int) -> str:
    return f"{'pos' if sign > 0 else 'neg'}/{'inc' if direction > 0 else 'dec'}"


@dataclass(frozen=True)
class MergePlan:
    """How an abstract network was derived, re-applicable to another parameter set.

    ``split[k]`` lists the sign-split copies of hidden layer ``k + 1`` as
    ``(original index, sign, direction)``; ``groups[k]`` partitions their indices.
    Groups with direction ``+1`` use the max rule, ``-1`` the min rule.
    """

    objective: str
    split: tuple[tuple[tuple[int, int, int], ...], ...]
    groups: tuple[tuple[tuple[int, ...], ...], ...]

    def rule(self, layer: int, group: int) -> str:
        first = self.groups[layer][group][0]
        return "max" if self.split[layer][first][2] > 0 else "min"

    def group_direction(self, layer: int) -> np.ndarray:
        return np.array([self.split[layer][g[0]][2] for g in self.groups[layer]], dtype=float)

    def to_dict(self) -> dict:
        return {
            "objective": self.objective,
            "split": [[list(c) for c in layer] for layer in self.split],
            "groups": [[list(g) for g in layer] for layer in self.groups],
            "rules": [[self.rule(k, j) for j in range(len(layer))]
                      for k, layer in enumerate(self.groups)],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "MergePlan":
        split = tuple(tuple(tuple(int(v) for v in c) for c in layer) for layer in doc["split"])
        groups = tuple(tuple(tuple(int(v) for v in g) for g in layer) for layer in doc["groups"])
        plan = cls(doc["objective"], split, groups)
        plan.validate()
        return plan

    def validate(self) -> None:
        for k, (copies, groups) in enumerate(zip(self.split, self.groups)):
            seen = sorted(i for g in groups for i in g)
            if seen != list(range(len(copies))):
                raise ValueError(f"layer {k + 1}: groups do not partition the split neurons")
            for g in groups:
                cats = {copies[i][1:] for i in g}
                if len(cats) != 1:
                    raise ValueError(f"layer {k + 1}: group {list(g)} mixes categories")


@dataclass(frozen=True, eq=False)
class AbstractSide:
    objective: str
    network: Network
    plan: MergePlan
    # first-layer biases in coordinates x - anchor (exact values used by relation checks)
    first_bias_t: np.ndarray
    # proof data filled in once the side has been verified against d_out
    state: StateAbstraction | None = None
    lipschitz: LipschitzBound | None = None

    @property
    def sign(self) -> int:
        return _OBJECTIVE[self.objective]


@dataclass(frozen=True, eq=False)
class AbstractNetwork:
    upper: AbstractSide
    lower: AbstractSide
    source_hash: str
    d_in: Box
    margin: float = 0.0
    source_widths: tuple[int, ...] = ()

    @property
    def network(self) -> Network:
        return self.upper.network

    @property
    def sides(self) -> tuple[AbstractSide, AbstractSide]:
        return self.upper, self.lower

    @property
    def anchor(self) -> np.ndarray:
        return self.d_in.lo

    @property
    def proven(self) -> bool:
        return all(s.state is not None for s in self.sides)

    def widths(self) -> list[int]:
        return self.upper.network.widths


@dataclass
class RelationReport:
    holds: bool
    reason: str = ""
    details: list[str] = field(default_factory=list)

    def __bool__(self) -> bool:
        return self.holds


def _require_scalar(net: Network) -> None:
    if net.output_dim != 1:
        raise ValueError("network abstraction supports scalar-output networks only")
    if net.n_layers < 2:
        raise ValueError("network abstraction needs at least one hidden layer")


def _sign_split(net: Network, objective: int):
    """Per hidden layer, the tuple of copies ``(orig, sign, direction)``."""
    n = net.n_layers
    split: list[tuple] = [()] * (n - 1)
    targets = [(0, objective)]  # (original index, direction) of the layer above
    for k in range(n - 1, 0, -1):
        w_above = net.layer(k + 1).weights
        copies = []
        for u in range(net.layer(k).out_dim):
            cats = set()
            for orig_t, dir_t in targets:
                w = w_above[orig_t, u]
                if w != 0.0:
                    s = 1 if w > 0 else -1
                    cats.add((s, s * dir_t))
            copies.extend((u, s, d) for s, d in _CATEGORY_ORDER if (s, d) in cats)
        split[k - 1] = tuple(copies)
        targets = [(c[0], c[2]) for c in copies]
    return tuple(split)


def _split_weights(net: Network, split, objective: int):
    """Weights/biases of the sign-split network, or a flip diagnostic.

    Edges are routed to the copy matching their own sign and the target's direction.  A
    nonzero edge whose copy does not exist in ``split`` means the plan cannot be applied.
    """
    n = net.n_layers
    mats, biases = [], []
    for k in range(1, n + 1):
        layer = net.layer(k)
        if k < n:
            rows = split[k - 1]
        else:
            rows = tuple((o, 0, objective) for o in range(layer.out_dim))
        row_orig = np.array([r[0] for r in rows], dtype=int)
        row_dir = np.array([r[2] for r in rows], dtype=int)
        w = layer.weights[row_orig] if len(rows) else np.zeros((0, layer.in_dim))
        if k == 1:
            mats.append(w.copy())
        else:
            cols = split[k - 2]
            index = {c: j for j, c in enumerate(cols)}
            m = np.zeros((len(rows), len(cols)))
            for i, (v, d_v) in enumerate(zip(row_orig, row_dir)):
                for u in range(layer.in_dim):
                    wv = layer.weights[v, u]
                    if wv == 0.0:
                        continue
                    s = 1 if wv > 0 else -1
                    j = index.get((u, s, s * d_v))
                    if j is None:
                        return None, None, (
                            f"layer {k}: edge {u}->{v} now routes to category "
                            f"{_category_name(s, s * d_v)} which the plan does not have")
                    m[i, j] = wv
            mats.append(m)
        biases.append(layer.bias[row_orig].copy())
    return mats, biases, ""


def _grouped_sums(mat: np.ndarray, col_groups) -> np.ndarray:
    """Sum columns within each source group."""
    if col_groups is None:
        return mat
    return np.stack([mat[:, list(g)].sum(axis=1) for g in col_groups], axis=1) \
        if col_groups else np.zeros((mat.shape[0], 0))


def _representatives(mats, biases, plan: MergePlan, objective: int, anchor: np.ndarray):
    """Abstract weights and (anchored) biases before margins, layer by layer.

    Returns a list of ``(W, b, direction)`` where ``direction`` holds +1 (max rule) or
    -1 (min rule) per abstract row.  Layer-1 biases are in anchored coordinates.
    """
    n = len(mats)
    out = []
    for k in range(n):
        src_groups = plan.groups[k - 1] if k > 0 else None
        summed = _grouped_sums(mats[k], src_groups)
        b = biases[k] + (mats[k] @ anchor if k == 0 else 0.0)
        if k < n - 1:
            rows = plan.groups[k]
            direction = plan.group_direction(k)
        else:
            rows = tuple((i,) for i in range(mats[k].shape[0]))
            direction = np.full(len(rows), float(objective))
        w_abs = np.zeros((len(rows), summed.shape[1]))
        b_abs = np.zeros(len(rows))
        for i, g in enumerate(rows):
            idx = list(g)
            pick = np.max if direction[i] > 0 else np.min
            w_abs[i] = pick(summed[idx], axis=0)
            b_abs[i] = pick(b[idx])
        out.append((w_abs, b_abs, direction))
    return out


def _greedy_groups(mat: np.ndarray, bias: np.ndarray, copies, target: int):
    """Merge copies of one layer, closest representative vectors first."""
    feats = np.hstack([mat, bias[:, None]])
    groups = [[i] for i in range(len(copies))]
    cats = [copies[i][1:] for i in range(len(copies))]
    reps = feats.copy()
    alive = list(range(len(groups)))

    def rep_of(g, direction):
        return feats[g].max(axis=0) if direction > 0 else feats[g].min(axis=0)

    diff = reps[:, None, :] - reps[None, :, :]
    dist = np.sqrt(np.sum(diff * diff, axis=2))
    same = np.array([[cats[i] == cats[j] for j in range(len(cats))] for i in range(len(cats))],
                    dtype=bool) if cats else np.zeros((0, 0), dtype=bool)
    dist = np.where(same, dist, np.inf)
    np.fill_diagonal(dist, np.inf)
    while len(alive) > target:
        sub = dist[np.ix_(alive, alive)]
        if sub.size == 0 or not np.isfinite(sub).any():
            break
        flat = int(np.argmin(sub))  # row-major argmin = lowest (i, j) among ties
        i, j = alive[flat // len(alive)], alive[flat % len(alive)]
        i, j = min(i, j), max(i, j)
        groups[i] = sorted(groups[i] + groups[j])
        groups[j] = []
        alive.remove(j)
        reps[i] = rep_of(groups[i], cats[i][1])
        row = np.sqrt(np.sum((reps - reps[i]) ** 2, axis=1))
        row = np.where(same[i], row, np.inf)
        row[i] = np.inf
        dist[i, :] = row
        dist[:, i] = row
        dist[j, :] = np.inf
        dist[:, j] = np.inf
    return tuple(tuple(groups[i]) for i in alive)


def _assemble(reps, margin: float, anchor: np.ndarray, activations, input_dim: int,
              name: str) -> tuple[Network, np.ndarray]:
    layers = []
    first_bias_t = None
    for k, ((w, b, direction), act) in enumerate(zip(reps, activations)):
        w = w + direction[:, None] * margin
        b = b + direction * margin
        if k == 0:
            first_bias_t = b.copy()
            b = b - w @ anchor
        layers.append(Layer(w, b, act))
    return Network(tuple(layers), input_dim, name), first_bias_t


def _build_side(net: Network, d_in: Box, target: int, objective_name: str, margin: float):
    objective = _OBJECTIVE[objective_name]
    split = _sign_split(net, objective)
    mats, biases, _ = _split_weights(net, split, objective)
    groups = []
    for k, copies in enumerate(split):
        if len(copies) <= target:
            groups.append(tuple((i,) for i in range(len(copies))))
        else:
            groups.append(_greedy_groups(mats[k], biases[k], copies, target))
    plan = MergePlan(objective_name, split, tuple(groups))
    reps = _representatives(mats, biases, plan, objective, d_in.lo)
    acts = [layer.activation for layer in net.layers]
    abs_net, bias_t = _assemble(reps, margin, d_in.lo, acts, net.input_dim,
                                f"{net.name}-abs-{objective_name}")
    return AbstractSide(objective_name, abs_net, plan, bias_t)


def _sample_violations(net: Network, side: AbstractSide, box: Box, n: int, seed: int) -> int:
    rng = np.random.default_rng(seed)
    xs = np.vstack([box.sample(rng, n), box.lo, box.hi, box.center])
    f = eval_network(net, xs)[:, 0]
    g = eval_network(side.network, xs)[:, 0]
    tol = 1e-9 * (1.0 + np.abs(f))
    bad = (f - g > tol) if side.sign > 0 else (g - f > tol)
    return int(bad.sum())


def abstract_network(net: Network, d_in: Box, target_neurons_per_layer: int,
                     margin: float = 0.0, seed: int = 0) -> AbstractNetwork:
    """Build the upper and lower merged abstractions of ``net`` valid on ``d_in``.

    ``margin`` is added to every abstract weight and bias in the direction that keeps
    the abstraction sound, so later fine-tunings smaller than it still satisfy the
    dominance test of :func:`check_abstraction_relation`.
    """
    _require_scalar(net)
    if target_neurons_per_layer < 1:
        raise ValueError("target_neurons_per_layer must be at least 1")
    if margin < 0:
        raise ValueError("margin must be non-negative")
    if d_in.dim != net.input_dim:
        raise ValueError("d_in dimension does not match the network")
    sides = [_build_side(net, d_in, target_neurons_per_layer, name, margin)
             for name in (UPPER, LOWER)]
    for side in sides:
        bad = _sample_violations(net, side, d_in, N_SAMPLES, seed)
        if bad:
            raise RuntimeError(
                f"{side.objective} abstraction violated its contract on {bad} samples")
    return AbstractNetwork(sides[0], sides[1], net.digest(), d_in, margin, tuple(net.widths))


def abstraction_relation(f_prime: Network, abs_net: AbstractNetwork, domain: Box | None = None,
                         n_samples: int = N_SAMPLES, seed: int = 0) -> RelationReport:
    """Whether ``abs_net`` still over-approximates ``f_prime`` on ``domain``.

    Sufficient test: re-apply both merge plans to ``f_prime`` and require every
    representative weight and bias to be dominated by the stored abstract value in the
    direction of its rule, then confirm on random samples.  ``domain`` defaults to the
    abstraction's ``d_in``; any box works since the first layer is re-anchored at its
    lower corner.
    """
    domain = abs_net.d_in if domain is None else domain
    _require_scalar(f_prime)
    if f_prime.input_dim != abs_net.d_in.dim or tuple(f_prime.widths) != abs_net.source_widths:
        raise ValueError("architecture of f_prime does not match the abstracted network")
    if domain.dim != f_prime.input_dim:
        raise ValueError("domain dimension does not match the network")
    details = []
    for side in abs_net.sides:
        objective = side.sign
        mats, biases, flip = _split_weights(f_prime, side.plan.split, objective)
        if mats is None:
            return RelationReport(False, f"{side.objective}: category flip ({flip})")
        reps = _representatives(mats, biases, side.plan, objective, domain.lo)
        for k, ((w_rep, b_rep, direction), layer) in enumerate(zip(reps, side.network.layers)):
            if k == 0:
                stored_b = side.first_bias_t + layer.weights @ (domain.lo - abs_net.anchor)
            else:
                stored_b = layer.bias
            d = direction[:, None]
            w_gap = d * (w_rep - layer.weights)
            b_gap = direction * (b_rep - stored_b)
            w_tol = _REL_TOL * (1.0 + np.abs(layer.weights))
            b_tol = _REL_TOL * (1.0 + np.abs(stored_b))
            if np.any(w_gap > w_tol) or np.any(b_gap > b_tol):
                worst = max(float(np.max(w_gap, initial=-np.inf)),
                            float(np.max(b_gap, initial=-np.inf)))
                return RelationReport(
                    False, f"{side.objective}: layer {k + 1} dominance violated by {worst:.3g}")
        bad = _sample_violations(f_prime, side, domain, n_samples, seed)
        if bad:
            return RelationReport(False, f"{side.objective}: {bad} sampled violations")
        details.append(f"{side.objective}: dominated")
    return RelationReport(True, "", details)


def check_abstraction_relation(f_prime: Network, abs_net: AbstractNetwork,
                               domain: Box | None = None) -> bool:
    report = abstraction_relation(f_prime, abs_net, domain)
    if not report:
        log.info("abstraction relation fails: %s", report.reason)
    return report.holds


def _side_target(side: AbstractSide, d_in: Box, d_out: Box) -> Box:
    """``d_out`` with the side that this abstraction does not bound relaxed to its range."""
    out = propagate_box_range(side.network, 1, side.network.n_layers, d_in)[-1]
    if side.sign > 0:
        return Box(np.minimum(d_out.lo, out.lo), d_out.hi)
    return Box(d_out.lo, np.maximum(d_out.hi, out.hi))


def _check_sides(abs_net: AbstractNetwork, d_out: Box, budget: Budget, domain: Box | None = None):
    domain = abs_net.d_in if domain is None else domain
    results = []
    for side in abs_net.sides:
        target = _side_target(side, domain, d_out)
        q = ContainmentQuery(side.network, 1, side.network.n_layers, domain, target)
        res = check_containment(q, budget, collect_boxes=True)
        res.label = f"abstraction-{side.objective}"
        results.append((side, target, res))
    return results


def _combine(results, f: Network | None, d_out: Box) -> CheckResult:
    stats = CheckStats()
    for _, _, r in results:
        stats.splits += r.stats.splits
        stats.nodes += r.stats.nodes
        stats.max_depth = max(stats.max_depth, r.stats.max_depth)
        stats.wall_time += r.stats.wall_time
    for side, _, r in results:
        if r.refuted:
            x = r.witness
            if f is not None and violates(d_out, eval_network(f, x)):
                return CheckResult(Verdict.REFUTED, x, stats, f"witness from {side.objective} "
                                   "abstraction is a real counterexample", "abstraction")
            return CheckResult(Verdict.UNKNOWN, x, stats,
                               f"{side.objective} abstraction refuted; counterexample "
                               f"{'is spurious' if f is not None else 'not checked on f'}",
                               "abstraction", spurious=f is not None)
    for side, _, r in results:
        if not r.proven:
            return CheckResult(Verdict.UNKNOWN, None, stats,
                               f"{side.objective} abstraction: {r.reason}", "abstraction")
    return CheckResult(Verdict.PROVEN, None, stats, "", "abstraction")


def verify_via_abstraction(abs_net: AbstractNetwork, d_out: Box,
                           budget: Budget = DEFAULT_BUDGET, f: Network | None = None) -> CheckResult:
    """Prove ``f(d_in) in d_out`` through the abstraction.

    A refutation of the abstraction is only reported as a refutation of ``f`` when the
    witness also violates ``d_out`` on ``f``; otherwise the verdict is Unknown with the
    abstract witness attached (``spurious`` set once ``f`` confirmed it).
    """
    if d_out.dim != 1:
        raise ValueError("d_out must be one-dimensional")
    return _combine(_check_sides(abs_net, d_out, budget), f, d_out)


def prove_abstraction(abs_net: AbstractNetwork, d_out: Box, budget: Budget = DEFAULT_BUDGET,
                      f: Network | None = None, norm: str = "LINF",
                      chain_slack: float = 0.0) -> tuple[CheckResult, AbstractNetwork]:
    """Like :func:`verify_via_abstraction` but, on success, also records per-side proof
    data (state abstraction over ``d_in`` and a Lipschitz bound) for later reuse."""
    results = _check_sides(abs_net, d_out, budget)
    verdict = _combine(results, f, d_out)
    if not verdict.proven:
        return verdict, abs_net
    sides = []
    for side, target, r in results:
        state = certify_chain(side.network, abs_net.d_in, target, r.layer_boxes,
                              max_slack=chain_slack)
        sides.append(replace(side, state=state,
                             lipschitz=lipschitz_upper_bound(side.network, norm)))
    return verdict, replace(abs_net, upper=sides[0], lower=sides[1])


def side_target(side: AbstractSide, d_in: Box, d_out: Box) -> Box:
    return _side_target(side, d_in, d_out)
