"""Re-verification of a modified problem by reusing a stored proof.

Two kinds of change are handled.  A domain enlargement keeps the network and grows
``d_in``; the stored chain ``S_1..S_n`` of the old network is then re-entered from the
enlarged domain (layer-2 composite, layer ``j+1``, or a Lipschitz inflation of ``S_n``).
A parameter change replaces the network by a fine-tuned one; the stored boxes are then
re-checked link by link against the new layers, over segments of layers, or through a
stored merged abstraction.  Every reuse check is sufficient only: a failed or undecided
check never says anything about the property itself and the cascade moves on, ending in
a from-scratch verification.
"""

from __future__ import annotations

import enum
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .abstraction import abstract_network, abstraction_relation, prove_abstraction
from .box import Box, box_contains
from .domains import BOX, SYMBOLIC, StateAbstraction, check_dims, propagate_box, \
    propagate_box_range, propagate_symbolic
from .exact import DEFAULT_BUDGET, Budget, CheckResult, CheckStats, ContainmentQuery, Verdict, \
    check_containment, verify_full, violates
from .lipschitz import LipschitzBound, compute_kappa, inflate, lipschitz_upper_bound
from .network import Network, VerificationProblem, eval_network
from .store import ArtifactError, ProofArtifact, Prop, artifact_applicability

log = logging.getLogger(__name__)

FIXING = "Fixing"
FULL = "Full"
ALREADY_PROVEN = "already-proven"

DEFAULT_SVUDC_STRATEGY = ("Prop3", "Prop1", "Prop2")
DEFAULT_SVBTV_STRATEGY = ("Prop6", "Prop4", FIXING, "Prop5")
MECHANISMS = ("Prop1", "Prop2", "Prop3", "Prop4", "Prop5", "Prop6", FIXING)


class Outcome(str, enum.Enum):
    PROVEN_BY_REUSE = "ProvenByReuse"
    PROVEN_BY_FALLBACK = "ProvenByFallback"
    REFUTED = "Refuted"
    UNKNOWN = "Unknown"


def _result(verdict: Verdict, label: str, reason: str = "", t0: float | None = None,
            parts: list[CheckResult] | None = None) -> CheckResult:
    stats = CheckStats()
    if parts:
        stats.splits = sum(p.stats.splits for p in parts)
        stats.nodes = sum(p.stats.nodes for p in parts)
        stats.max_depth = max(p.stats.max_depth for p in parts)
    if t0 is not None:
        stats.wall_time = time.perf_counter() - t0
    return CheckResult(verdict, None, stats, reason, label, parts=list(parts or []))


def _check(net: Network, a: int, b: int, inp: Box, target: Box, budget: Budget,
           label: str, sound_margin: float = 0.0) -> CheckResult:
    res = check_containment(ContainmentQuery(net, a, b, inp, target), budget, sound_margin)
    res.label = label
    return res


def _require_own(f: Network, S: StateAbstraction) -> None:
    if S.network_hash != f.digest():
        raise ValueError("state abstraction was built for a different network")
    check_dims(f, S)


def _require_superset(S: StateAbstraction, enlarged: Box) -> None:
    if not box_contains(enlarged, S.input_box):
        raise ValueError("enlarged domain must contain the proven input box")


# domain enlargement

def check_svudc_lipschitz(S: StateAbstraction, lipschitz: LipschitzBound | None, enlarged: Box,
                          d_out: Box, kappa: float | None = None) -> CheckResult:
    """Inflate ``S_n`` by ``ell * kappa`` and test containment in ``d_out``.

    ``kappa`` defaults to the distance of ``enlarged`` from the proven domain; a supplied
    value smaller than that distance is raised to it, since it would not bound the
    enlargement.
    """
    t0 = time.perf_counter()
    if lipschitz is None:
        return _result(Verdict.UNKNOWN, "Prop3", "no Lipschitz bound stored", t0)
    _require_superset(S, enlarged)
    k = compute_kappa(S.input_box, enlarged, lipschitz.norm)
    if kappa is not None:
        if kappa < 0:
            raise ValueError("kappa must be non-negative")
        if kappa < k:
            log.warning("supplied kappa %.6g is below the domain distance %.6g; using the latter",
                        kappa, k)
        k = max(k, kappa)
    grown = inflate(S.output_box, lipschitz.value, k)
    if box_contains(d_out, grown):
        return _result(Verdict.PROVEN, "Prop3", f"kappa={k:.6g}", t0)
    return _result(Verdict.UNKNOWN, "Prop3",
                   f"S_n widened by {lipschitz.value * k:.6g} leaves d_out", t0)


def check_svudc_layers12(f: Network, enlarged: Box, S: StateAbstraction,
                         budget: Budget = DEFAULT_BUDGET, sound_margin: float = 0.0) -> CheckResult:
    """Exact check that the first two layers map ``enlarged`` into the stored ``S_2``.

    Proven certifies the property on ``enlarged`` because the stored chain carries
    ``S_2`` into ``d_out``.  Single-layer networks have no ``S_2`` and are left to a
    full verification.
    """
    _require_own(f, S)
    if f.n_layers < 2:
        return _result(Verdict.UNKNOWN, "Prop1", "network has a single layer")
    if not S.closed_from(2):
        return _result(Verdict.UNKNOWN, "Prop1",
                       f"stored chain is only certified from S_{S.chain_start}")
    return _check(f, 1, 2, enlarged, S.S(2), budget, "Prop1", sound_margin)


def check_svudc_layer_jplus1(f: Network, enlarged: Box, S: StateAbstraction,
                             budget: Budget = DEFAULT_BUDGET, mode: str | None = None,
                             sound_margin: float = 0.0) -> CheckResult:
    """Find a layer ``j`` whose fresh box over ``enlarged`` maps back into ``S_{j+1}``.

    ``j == 1`` is the two-layer composite check; for larger ``j`` the fresh boxes
    ``S'_j`` come from propagating ``enlarged`` in ``mode`` (the artifact's own mode by
    default) and layer ``j+1`` is checked exactly from ``S'_j`` into ``S_{j+1}``.
    """
    _require_own(f, S)
    t0 = time.perf_counter()
    n = f.n_layers
    parts = []
    first = check_svudc_layers12(f, enlarged, S, budget, sound_margin)
    first.label = "Prop2@j=1"
    parts.append(first)
    if first.proven:
        return _result(Verdict.PROVEN, "Prop2", "j=1", t0, parts)
    mode = mode or S.mode
    if n >= 3:
        if mode == SYMBOLIC:
            fresh = propagate_symbolic(f, 1, n, enlarged).layer_boxes
        elif mode == BOX:
            fresh = propagate_box_range(f, 1, n, enlarged)
        else:
            raise ValueError(f"unknown mode {mode!r}")
        for j in range(2, n):
            if not S.closed_from(j + 1):
                continue
            res = _check(f, j + 1, j + 1, fresh[j - 1], S.S(j + 1), budget, f"Prop2@j={j}",
                         sound_margin)
            parts.append(res)
            if res.proven:
                return _result(Verdict.PROVEN, "Prop2", f"j={j}", t0, parts)
    return _result(Verdict.UNKNOWN, "Prop2", "no layer re-enters the stored chain", t0, parts)


# parameter change

def svbtv_segments(n: int, cuts: Sequence[int]) -> list[tuple[int, int]]:
    """Layer ranges ``(from, to)`` delimited by ``cuts``; ``[]`` is the whole network."""
    cuts = [int(c) for c in cuts]
    if n < 1:
        raise ValueError("network needs at least one layer")
    for c in cuts:
        if not 1 <= c <= n - 1:
            raise ValueError(f"cut {c} outside 1..{n - 1}")
    if any(b <= a for a, b in zip(cuts, cuts[1:])):
        raise ValueError(f"cuts must be strictly increasing, got {cuts}")
    bounds = [0, *cuts, n]
    return [(bounds[k] + 1, bounds[k + 1]) for k in range(len(bounds) - 1)]


def default_cuts(n: int) -> list[int]:
    """Every second layer: ``[2, 4, ...]`` below ``n``."""
    return list(range(2, n, 2))


def _run_parts(jobs, workers: int) -> list[CheckResult]:
    if workers <= 1 or len(jobs) <= 1:
        return [job() for job in jobs]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda job: job(), jobs))


def _segment_checks(f_prime: Network, enlarged: Box, S: StateAbstraction, d_out: Box,
                    segments, budget: Budget, label: str, workers: int,
                    sound_margin: float) -> CheckResult:
    check_dims(f_prime, S)
    if d_out.dim != f_prime.output_dim:
        raise ValueError("d_out dimension does not match the network output")
    _require_superset(S, enlarged)
    t0 = time.perf_counter()
    n = f_prime.n_layers
    jobs = []
    for a, b in segments:
        inp = enlarged if a == 1 else S.S(a - 1)
        target = d_out if b == n else S.S(b)
        name = f"{label}[{a}-{b}]"
        jobs.append(lambda a=a, b=b, inp=inp, target=target, name=name:
                    _check(f_prime, a, b, inp, target, budget, name, sound_margin))
    parts = _run_parts(jobs, workers)
    failed = [p.label for p in parts if not p.proven]
    if failed:
        return _result(Verdict.UNKNOWN, label, "failed: " + ", ".join(failed), t0, parts)
    return _result(Verdict.PROVEN, label, "", t0, parts)


def check_svbtv_single_layer(f_prime: Network, enlarged: Box, S: StateAbstraction, d_out: Box,
                             budget: Budget = DEFAULT_BUDGET, workers: int = 1,
                             sound_margin: float = 0.0) -> CheckResult:
    """One check per layer of ``f_prime`` against the stored boxes, the last into ``d_out``.

    ``parts[k]`` is the check of layer ``k+1``; its input is ``enlarged`` for ``k == 0``
    and ``S_k`` otherwise.
    """
    segs = svbtv_segments(f_prime.n_layers, range(1, f_prime.n_layers))
    return _segment_checks(f_prime, enlarged, S, d_out, segs, budget, "Prop4", workers,
                           sound_margin)


def check_svbtv_multi_layer(f_prime: Network, enlarged: Box, S: StateAbstraction, d_out: Box,
                            cuts: Sequence[int] | None = None, budget: Budget = DEFAULT_BUDGET,
                            workers: int = 1, sound_margin: float = 0.0) -> CheckResult:
    """Like :func:`check_svbtv_single_layer` but over multi-layer segments between ``cuts``."""
    n = f_prime.n_layers
    segs = svbtv_segments(n, default_cuts(n) if cuts is None else cuts)
    if len(segs) == 1:
        return _result(Verdict.UNKNOWN, "Prop5", "no cut points; that is a full verification")
    return _segment_checks(f_prime, enlarged, S, d_out, segs, budget, "Prop5", workers,
                           sound_margin)


def fix_abstraction(f_prime: Network, S: StateAbstraction, failing_layer, d_out: Box,
                    budget: Budget = DEFAULT_BUDGET, sound_margin: float = 0.0) -> CheckResult:
    """Repair a chain broken at exactly one link.

    ``failing_layer`` is ``i`` when the link ``S_i -> S_{i+1}`` failed for ``f_prime``
    and every other single-layer check passed (``i == 0`` is the input link).  The
    replacement ``S'_{i+1}`` is the hull of the old box and the interval image of
    ``S_i``; it is pushed forward until some image fits the stored ``S_{k+1}`` again.
    If none does, the sub-network from layer ``i+1`` is checked exactly from ``S_i``
    into ``d_out``.
    """
    t0 = time.perf_counter()
    if not isinstance(failing_layer, (int, np.integer)):
        failing = list(failing_layer)
        if len(failing) != 1:
            return _result(Verdict.UNKNOWN, FIXING,
                           f"{len(failing)} failing links; repair handles exactly one", t0)
        failing_layer = failing[0]
    i = int(failing_layer)
    n = f_prime.n_layers
    check_dims(f_prime, S)
    if not 0 <= i <= n - 1:
        raise ValueError(f"failing link {i} outside 0..{n - 1}")
    if i == 0:
        return _result(Verdict.UNKNOWN, FIXING, "first layer fails; nothing to reuse", t0)
    if i == n - 1:
        return _result(Verdict.UNKNOWN, FIXING, "output link fails; nothing downstream", t0)
    cur = S.S(i + 1).hull(propagate_box(f_prime.layer(i + 1), S.S(i)))
    for k in range(i + 1, n - 1):
        img = propagate_box(f_prime.layer(k + 1), cur)
        if box_contains(S.S(k + 1), img):
            return _result(Verdict.PROVEN, FIXING, f"re-enters S_{k + 1}", t0)
        cur = img
    res = _check(f_prime, i + 1, n, S.S(i), d_out, budget, f"{FIXING}[{i + 1}-{n}]",
                 sound_margin)
    if res.proven:
        return _result(Verdict.PROVEN, FIXING, "sub-network check", t0, [res])
    return _result(Verdict.UNKNOWN, FIXING, f"sub-network check: {res.verdict.value}", t0, [res])


def _side_lipschitz_ok(side, enlarged: Box, d_out: Box, kappa: float | None) -> bool:
    if side.lipschitz is None or side.state is None:
        return False
    k = compute_kappa(side.state.input_box, enlarged, side.lipschitz.norm)
    if kappa is not None:
        k = max(k, kappa)
    grown = inflate(side.state.output_box, side.lipschitz.value, k)
    if side.sign > 0:
        return bool(np.all(grown.hi <= d_out.hi))
    return bool(np.all(grown.lo >= d_out.lo))


def check_svbtv_network_abs(f_prime: Network, artifact: ProofArtifact, d_out: Box,
                            enlarged: Box | None = None, budget: Budget = DEFAULT_BUDGET,
                            kappa: float | None = None, sound_margin: float = 0.0) -> CheckResult:
    """Reuse the stored merged abstraction of the old network.

    Proven when the abstraction still over-approximates ``f_prime`` and its own proof
    covers the domain.  On an enlarged domain the relation is tested on the enlarged box
    and each side's stored proof is extended with the Lipschitz inflation, or failing
    that with the two-layer composite check on that side.
    """
    t0 = time.perf_counter()
    abs_net = artifact.net_abs
    if abs_net is None:
        return _result(Verdict.UNKNOWN, "Prop6", "artifact has no network abstraction", t0)
    if abs_net.source_hash != artifact.network_hash:
        return _result(Verdict.UNKNOWN, "Prop6", "network abstraction is stale", t0)
    if not abs_net.proven:
        return _result(Verdict.UNKNOWN, "Prop6", "network abstraction was never proven", t0)
    if f_prime.output_dim != 1:
        return _result(Verdict.UNKNOWN, "Prop6", "abstraction needs a scalar output", t0)
    grown = enlarged is not None and not box_contains(abs_net.d_in, enlarged)
    domain = abs_net.d_in.hull(enlarged) if grown else abs_net.d_in
    try:
        report = abstraction_relation(f_prime, abs_net, domain)
    except ValueError as exc:
        return _result(Verdict.UNKNOWN, "Prop6", str(exc), t0)
    if not report:
        return _result(Verdict.UNKNOWN, "Prop6", f"relation fails: {report.reason}", t0)
    if not grown:
        return _result(Verdict.PROVEN, "Prop6", "relation holds", t0)
    parts = []
    for side in abs_net.sides:
        if _side_lipschitz_ok(side, domain, d_out, kappa):
            continue
        st = side.state
        if side.network.n_layers >= 2 and st.closed_from(2):
            res = _check(side.network, 1, 2, domain, st.S(2), budget,
                         f"Prop6+Prop1[{side.objective}]", sound_margin)
            parts.append(res)
            if res.proven:
                continue
        return _result(Verdict.UNKNOWN, "Prop6",
                       f"{side.objective} abstraction not proven on the enlarged domain", t0,
                       parts)
    return _result(Verdict.PROVEN, "Prop6", "relation holds; enlarged domain covered", t0, parts)


# orchestration

@dataclass
class ReuseOutcome:
    verdict: Outcome
    mechanism: str | None
    subproblem_stats: list[CheckResult] = field(default_factory=list)
    reuse_time: float = 0.0
    full_time_estimate: float | None = None
    cascade_time: float = 0.0
    change: str = ""
    witness: np.ndarray | None = None
    artifact: ProofArtifact | None = None
    warnings: tuple[str, ...] = ()

    @property
    def proven(self) -> bool:
        return self.verdict in (Outcome.PROVEN_BY_REUSE, Outcome.PROVEN_BY_FALLBACK)

    @property
    def ratio(self) -> float | None:
        if not self.full_time_estimate:
            return None
        return self.reuse_time / self.full_time_estimate

    def report(self) -> dict:
        out = {
            "verdict": self.verdict.value,
            "mechanism": self.mechanism,
            "change": self.change,
            "reuse_time": self.reuse_time,
            "cascade_time": self.cascade_time,
            "full_time": self.full_time_estimate,
            "ratio": self.ratio,
            "checks": [r.summary() for r in self.subproblem_stats],
        }
        if self.witness is not None:
            out["witness"] = [float(v) for v in self.witness]
        if self.warnings:
            out["warnings"] = list(self.warnings)
        return out


def _mechanism_time(res: CheckResult) -> float:
    """Time charged to a reuse check; independent sub-checks count by the slowest one."""
    if res.label in ("Prop4", "Prop5"):
        return res.max_part_time
    return res.stats.wall_time


def verify_and_record(problem: VerificationProblem, budget: Budget = DEFAULT_BUDGET,
                      mode: str = SYMBOLIC, norm: str = "LINF", sound_margin: float = 0.0,
                      chain_slack: float = 0.05, abstraction_target: int | None = None,
                      abstraction_margin: float = 0.0,
                      abstraction_slack: float = 0.0) -> tuple[CheckResult, ProofArtifact | None]:
    """From-scratch verification that, when proven, also assembles a proof artifact.

    ``abstraction_target`` (neurons per hidden layer) additionally builds and proves a
    merged abstraction of the network; a failed abstraction proof is dropped silently
    since the artifact is still valid without it.
    """
    t0 = time.perf_counter()
    res, state = verify_full(problem, budget, mode, sound_margin, chain_slack)
    t_verify = time.perf_counter() - t0
    if not res.proven:
        return res, None
    net = problem.network
    timings = {"verify": t_verify}
    t1 = time.perf_counter()
    lip = lipschitz_upper_bound(net, norm)
    timings["lipschitz"] = time.perf_counter() - t1
    net_abs = None
    if abstraction_target is not None and net.output_dim == 1:
        t2 = time.perf_counter()
        candidate = abstract_network(net, problem.d_in, abstraction_target, abstraction_margin)
        abs_res, candidate = prove_abstraction(candidate, problem.d_out, budget, net, norm,
                                               abstraction_slack)
        if abs_res.proven:
            net_abs = candidate
        else:
            log.info("abstraction not proven (%s); artifact stored without it", abs_res.reason)
        timings["abstraction"] = time.perf_counter() - t2
    artifact = ProofArtifact(net.digest(), problem.d_in, problem.d_out, state, lip, net_abs,
                             timings=timings)
    return res, artifact


def _normalize_strategy(strategy) -> list[str]:
    out = []
    for item in strategy:
        name = item.value if isinstance(item, Prop) else str(item)
        canon = {m.lower(): m for m in MECHANISMS}.get(name.lower())
        if canon is None:
            raise ValueError(f"unknown mechanism {item!r}; expected one of {', '.join(MECHANISMS)}")
        out.append(canon)
    return out


def reverify(new_problem: VerificationProblem, artifact: ProofArtifact, strategy=None,
             budget: Budget = DEFAULT_BUDGET, *, mode: str | None = None, cuts=None,
             kappa: float | None = None, workers: int = 1, sound_margin: float = 0.0,
             fallback: bool = True, chain_slack: float = 0.05,
             norm: str | None = None) -> ReuseOutcome:
    """Verify ``new_problem`` by reusing ``artifact``; fall back to a full verification.

    The artifact must be the proof of the previous version of the problem.  Mechanisms
    outside the applicable set for the kind of change are skipped.  With an unchanged
    problem nothing runs and the mechanism is ``"already-proven"``.  A new input set that
    does not contain the proven one is treated as their hull.
    """
    t0 = time.perf_counter()
    try:
        artifact.validate()
    except ArtifactError:
        raise
    except ValueError as exc:
        raise ArtifactError(str(exc)) from exc
    net = new_problem.network
    app = artifact_applicability(artifact, net, new_problem.d_in, new_problem.d_out)
    for w in app.warnings:
        log.warning(w)
    if not app.network_changed and app.change != "d_out":
        # the stored chain must hold for this very network before anything is reused
        artifact.validate(net)
    d_out = new_problem.d_out
    S = artifact.state_abs
    enlarged = app.enlarged
    if app.already_proven:
        return ReuseOutcome(Outcome.PROVEN_BY_REUSE, ALREADY_PROVEN, change=app.change,
                            cascade_time=time.perf_counter() - t0,
                            full_time_estimate=artifact.timings.get("verify"),
                            artifact=artifact, warnings=app.warnings)
    if strategy is None:
        strategy = DEFAULT_SVBTV_STRATEGY if app.network_changed else DEFAULT_SVUDC_STRATEGY
    allowed = {p.value for p in app.props}
    if app.network_changed and {"Prop4"} & allowed:
        allowed.add(FIXING)
    checks: list[CheckResult] = []
    single: CheckResult | None = None
    for mech in _normalize_strategy(strategy):
        if mech not in allowed:
            continue
        if mech == "Prop3":
            res = check_svudc_lipschitz(S, artifact.lipschitz, enlarged, d_out, kappa)
        elif mech == "Prop1":
            res = check_svudc_layers12(net, enlarged, S, budget, sound_margin)
        elif mech == "Prop2":
            res = check_svudc_layer_jplus1(net, enlarged, S, budget, mode, sound_margin)
        elif mech == "Prop4":
            res = single = check_svbtv_single_layer(net, enlarged, S, d_out, budget, workers,
                                                    sound_margin)
        elif mech == "Prop5":
            res = check_svbtv_multi_layer(net, enlarged, S, d_out, cuts, budget, workers,
                                          sound_margin)
        elif mech == "Prop6":
            res = check_svbtv_network_abs(net, artifact, d_out,
                                          enlarged if app.change == "network+domain" else None,
                                          budget, kappa, sound_margin)
        else:
            if single is None:
                single = check_svbtv_single_layer(net, enlarged, S, d_out, budget, workers,
                                                  sound_margin)
                checks.append(single)
            if single.proven:
                continue
            failing = [k for k, p in enumerate(single.parts) if not p.proven]
            res = fix_abstraction(net, S, failing, d_out, budget, sound_margin)
        checks.append(res)
        if res.proven:
            return ReuseOutcome(Outcome.PROVEN_BY_REUSE, mech, checks, _mechanism_time(res),
                                artifact.timings.get("verify"), time.perf_counter() - t0,
                                app.change, warnings=app.warnings)
    if not fallback:
        return ReuseOutcome(Outcome.UNKNOWN, None, checks, 0.0, artifact.timings.get("verify"),
                            time.perf_counter() - t0, app.change, warnings=app.warnings)
    t1 = time.perf_counter()
    res, fresh = verify_and_record(new_problem, budget, mode or S.mode,
                                   norm or (artifact.lipschitz.norm if artifact.lipschitz
                                            else "LINF"),
                                   sound_margin, chain_slack)
    full_time = time.perf_counter() - t1
    checks.append(res)
    if res.proven:
        verdict = Outcome.PROVEN_BY_FALLBACK
    elif res.refuted:
        verdict = Outcome.REFUTED
    else:
        verdict = Outcome.UNKNOWN
    witness = res.witness if res.refuted else None
    if witness is not None:
        # a refutation is only reported with a witness that fails on the new network
        assert violates(d_out, eval_network(net, witness))
    return ReuseOutcome(verdict, FULL, checks, full_time, full_time, time.perf_counter() - t0,
                        app.change, witness, fresh, app.warnings)
