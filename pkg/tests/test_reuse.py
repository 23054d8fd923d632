import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import oracles
from contverify.box import Box, box_contains
from contverify.domains import BOX, StateAbstraction, propagate_box_range, propagate_symbolic
from contverify.exact import Budget, Verdict, verify_full
from contverify.lipschitz import LipschitzBound
from contverify.network import IDENTITY, RELU, Layer, Network, VerificationProblem, \
    eval_network, perturb, random_network
from contverify.reuse import (ALREADY_PROVEN, FIXING, FULL, Outcome, check_svbtv_multi_layer,
                              check_svbtv_network_abs, check_svbtv_single_layer,
                              check_svudc_layer_jplus1, check_svudc_layers12,
                              check_svudc_lipschitz, default_cuts, fix_abstraction, reverify,
                              svbtv_segments, verify_and_record)
from contverify.store import ProofArtifact

seeds = st.integers(0, 2**31 - 1)
GENEROUS = Budget(max_splits=50000)


def scalar_chain(spec, input_dim=1):
    """Network from ``(weights, bias, activation)`` triples."""
    return Network(tuple(Layer(np.array(w, dtype=float), np.array(b, dtype=float), a)
                         for w, b, a in spec), input_dim)


def saturating_net(second_weight=1.0):
    # x -> relu(x) -> relu(w x) -> relu(y - 5) == 0 -> identity
    return scalar_chain([([[1.0]], [0.0], RELU), ([[second_weight]], [0.0], RELU),
                         ([[1.0]], [-5.0], RELU), ([[1.0]], [0.0], IDENTITY)])


def record(net, d_in, d_out, **kw):
    res, art = verify_and_record(VerificationProblem(net, d_in, d_out), **kw)
    assert res.proven, res.reason
    return art


# domain change

def test_toy_enlargement_proven_by_two_layer_check(toy_net, unit_square, enlarged_square):
    art = record(toy_net, unit_square, Box([0.0], [12.0]))
    res = check_svudc_layers12(toy_net, enlarged_square, art.state_abs)
    assert res.proven
    out = reverify(VerificationProblem(toy_net, enlarged_square, Box([0.0], [12.0])), art)
    assert out.verdict is Outcome.PROVEN_BY_REUSE and out.mechanism == "Prop1"
    assert out.proven and out.change == "domain"


def test_two_layer_check_on_same_domain_needs_no_split(toy_net, unit_square):
    art = record(toy_net, unit_square, Box([0.0], [12.0]))
    res = check_svudc_layers12(toy_net, unit_square, art.state_abs)
    assert res.proven and res.stats.splits == 0


def test_two_layer_check_refutes_large_enlargement(toy_net, unit_square):
    art = record(toy_net, unit_square, Box([0.0], [12.0]))
    big = Box.cube(-3.0, 3.0, 2)
    s2 = art.state_abs.S(2)
    assert oracles.grid_violates(oracles.raw_layers(toy_net), big.lo, big.hi, s2.lo, s2.hi)
    res = check_svudc_layers12(toy_net, big, art.state_abs)
    assert res.refuted
    assert not box_contains(s2, Box.point(eval_network(toy_net, res.witness)))


def test_two_layer_check_rejects_foreign_abstraction(toy_net, unit_square):
    art = record(toy_net, unit_square, Box([0.0], [12.0]))
    with pytest.raises(ValueError):
        check_svudc_layers12(perturb(toy_net, 1e-3, 0), unit_square, art.state_abs)


def test_saturating_layer_reenters_at_j2():
    net = saturating_net()
    d_in, enlarged, d_out = Box([0.0], [1.0]), Box([0.0], [2.0]), Box([-0.5], [0.5])
    art = record(net, d_in, d_out)
    S = art.state_abs
    layers = oracles.raw_layers(net)
    # enlargement leaves S_2 but the whole net stays safe
    assert oracles.grid_violates(layers, enlarged.lo, enlarged.hi, S.S(2).lo, S.S(2).hi,
                                 stop=2)
    assert not oracles.grid_violates(layers, enlarged.lo, enlarged.hi, d_out.lo, d_out.hi)
    assert not check_svudc_layers12(net, enlarged, S).proven
    res = check_svudc_layer_jplus1(net, enlarged, S)
    assert res.proven and res.reason == "j=2"
    out = reverify(VerificationProblem(net, enlarged, d_out), art)
    assert out.mechanism == "Prop2" and out.verdict is Outcome.PROVEN_BY_REUSE


def test_layer_jplus1_exhausts_to_unknown(toy_net, unit_square):
    art = record(toy_net, unit_square, Box([0.0], [12.0]))
    res = check_svudc_layer_jplus1(toy_net, Box.cube(-3.0, 3.0, 2), art.state_abs)
    assert res.verdict is Verdict.UNKNOWN


def lipschitz_fixture():
    # y = 7 x1 - 6 over [1,2]^2 gives S_n = [1, 8]; ell = 100 over-approximates 7
    net = scalar_chain([([[1.0, 0.0], [0.0, 1.0]], [0.0, 0.0], RELU),
                        ([[7.0, 0.0]], [-6.0], IDENTITY)], input_dim=2)
    d_in, d_out = Box.cube(1.0, 2.0, 2), Box([-10.0], [10.0])
    sa = StateAbstraction((Box.cube(1.0, 2.0, 2), Box([1.0], [8.0])), d_in, net.digest(), BOX, 1)
    art = ProofArtifact(net.digest(), d_in, d_out, sa, LipschitzBound(100.0, "L2"))
    art.validate(net)
    return net, art


def test_lipschitz_reuse_with_fixed_kappa():
    net, art = lipschitz_fixture()
    enlarged = Box.cube(0.99, 2.01, 2)
    res = check_svudc_lipschitz(art.state_abs, art.lipschitz, enlarged, art.d_out, kappa=0.02)
    assert res.proven and "0.02" in res.reason
    out = reverify(VerificationProblem(net, enlarged, art.d_out), art, kappa=0.02)
    assert out.mechanism == "Prop3" and out.verdict is Outcome.PROVEN_BY_REUSE


def test_lipschitz_reuse_computed_kappa():
    net, art = lipschitz_fixture()
    res = check_svudc_lipschitz(art.state_abs, art.lipschitz, Box.cube(0.99, 2.01, 2),
                                art.d_out)
    assert res.proven


def test_lipschitz_reuse_kappa_too_large_falls_back():
    net, art = lipschitz_fixture()
    enlarged = Box.cube(0.99, 2.01, 2)
    assert not check_svudc_lipschitz(art.state_abs, art.lipschitz, enlarged, art.d_out,
                                     kappa=0.05).proven
    out = reverify(VerificationProblem(net, enlarged, art.d_out), art, kappa=0.05)
    # 7 * [0.99, 2.01] - 6 leaves S_2 = [1, 8], so only a fresh proof remains
    assert out.verdict is Outcome.PROVEN_BY_FALLBACK and out.mechanism == FULL
    assert out.artifact is not None and out.artifact.d_in == enlarged


def test_user_kappa_never_below_distance():
    net, art = lipschitz_fixture()
    far = Box.cube(0.0, 3.0, 2)
    assert not check_svudc_lipschitz(art.state_abs, art.lipschitz, far, art.d_out,
                                     kappa=0.0).proven


def test_lipschitz_reuse_without_bound_is_unknown():
    _, art = lipschitz_fixture()
    res = check_svudc_lipschitz(art.state_abs, None, art.d_in, art.d_out)
    assert res.verdict is Verdict.UNKNOWN


# parameter change

def test_segments_shape():
    assert svbtv_segments(6, [2, 4]) == [(1, 2), (3, 4), (5, 6)]
    assert svbtv_segments(3, []) == [(1, 3)]
    assert svbtv_segments(3, [1, 2]) == [(1, 1), (2, 2), (3, 3)]
    assert default_cuts(6) == [2, 4]
    assert default_cuts(2) == []


@pytest.mark.parametrize("cuts", [[0], [6], [3, 2], [2, 2]])
def test_invalid_cuts(cuts):
    with pytest.raises(ValueError):
        svbtv_segments(6, cuts)


def test_single_layer_unchanged_network(toy_net, unit_square):
    art = record(toy_net, unit_square, Box([0.0], [12.0]))
    res = check_svbtv_single_layer(toy_net, unit_square, art.state_abs, art.d_out)
    assert res.proven and len(res.parts) == 2


def test_single_layer_small_perturbation():
    net = random_network(3, [8, 8, 1], 2)
    d_in = Box.cube(-1.0, 1.0, 3)
    reach = propagate_symbolic(net, 1, 3, d_in).box
    art = record(net, d_in, reach.widen(0.5 * reach.width + 0.1))
    f2 = perturb(net, 1e-4, 9)
    # the certified slack dominates the perturbation's interval growth
    prev = d_in
    for k, box in enumerate(art.state_abs.boxes[:-1]):
        img = propagate_box_range(f2, k + 1, k + 1, prev)[-1]
        assert box_contains(box, img)
        prev = box
    assert check_svbtv_single_layer(f2, d_in, art.state_abs, art.d_out).proven


def test_single_layer_doubled_weights_refuted(toy_net, unit_square):
    art = record(toy_net, unit_square, Box([0.0], [12.0]))
    doubled = Network((Layer(2 * toy_net.layers[0].weights, toy_net.layers[0].bias, RELU),
                       toy_net.layers[1]), 2)
    res = check_svbtv_single_layer(doubled, unit_square, art.state_abs, art.d_out)
    assert not res.proven
    assert res.parts[0].refuted
    s1 = art.state_abs.S(1)
    assert oracles.grid_violates(oracles.raw_layers(doubled), [-1, -1], [1, 1], s1.lo, s1.hi,
                                 stop=1)


def test_multi_layer_skips_broken_box():
    d_in, d_out = Box([0.0], [1.0]), Box([-0.5], [0.5])
    art = record(saturating_net(), d_in, d_out)
    f2 = saturating_net(2.0)
    S = art.state_abs
    assert not check_svbtv_single_layer(f2, d_in, S, d_out).proven
    assert not check_svbtv_multi_layer(f2, d_in, S, d_out, [2]).proven
    res = check_svbtv_multi_layer(f2, d_in, S, d_out, [1])
    assert res.proven and [p.label for p in res.parts] == ["Prop5[1-1]", "Prop5[2-4]"]
    assert not oracles.grid_violates(oracles.raw_layers(f2), d_in.lo, d_in.hi, d_out.lo,
                                     d_out.hi)


def test_multi_layer_without_cuts_is_unknown(toy_net, unit_square):
    art = record(toy_net, unit_square, Box([0.0], [12.0]))
    res = check_svbtv_multi_layer(toy_net, unit_square, art.state_abs, art.d_out, [])
    assert res.verdict is Verdict.UNKNOWN


@given(seed=seeds, eps=st.sampled_from([1e-4, 1e-2, 0.3]))
def test_cut_every_layer_matches_single_layer(seed, eps):
    net = random_network(2, [6, 6, 1], seed)
    d_in = Box.cube(-1.0, 1.0, 2)
    reach = propagate_symbolic(net, 1, 3, d_in).box
    art = record(net, d_in, reach.widen(0.3 * reach.width + 0.05))
    f2 = perturb(net, eps, seed + 1)
    a = check_svbtv_single_layer(f2, d_in, art.state_abs, art.d_out)
    b = check_svbtv_multi_layer(f2, d_in, art.state_abs, art.d_out, [1, 2])
    assert a.verdict == b.verdict


def test_fixing_reenters_downstream():
    d_in, d_out = Box([0.0], [1.0]), Box([-0.5], [0.5])
    art = record(saturating_net(), d_in, d_out)
    f2 = saturating_net(2.0)
    single = check_svbtv_single_layer(f2, d_in, art.state_abs, d_out)
    assert [k for k, p in enumerate(single.parts) if not p.proven] == [1]
    res = fix_abstraction(f2, art.state_abs, 1, d_out)
    assert res.proven and res.reason == "re-enters S_3"
    out = reverify(VerificationProblem(f2, d_in, d_out), art)
    assert out.mechanism == FIXING and out.verdict is Outcome.PROVEN_BY_REUSE


def test_fixing_via_subnetwork_check():
    # x -> relu(x) -> relu(w x) -> identity, with room left in d_out
    def net(w):
        return scalar_chain([([[1.0]], [0.0], RELU), ([[w]], [0.0], RELU),
                             ([[1.0]], [0.0], IDENTITY)])
    d_in, d_out = Box([0.0], [1.0]), Box([-1.0], [3.0])
    art = record(net(1.0), d_in, d_out, chain_slack=0.0)
    f2 = net(2.0)
    res = fix_abstraction(f2, art.state_abs, 1, d_out)
    assert res.proven and res.reason == "sub-network check"
    assert verify_full(VerificationProblem(f2, d_in, d_out))[0].proven
    out = reverify(VerificationProblem(f2, d_in, d_out), art)
    assert out.mechanism == FIXING


def test_fixing_gives_up_on_first_and_last_link_and_many_failures():
    d_in, d_out = Box([0.0], [1.0]), Box([-0.5], [0.5])
    art = record(saturating_net(), d_in, d_out)
    f2 = saturating_net(2.0)
    assert fix_abstraction(f2, art.state_abs, 0, d_out).verdict is Verdict.UNKNOWN
    assert fix_abstraction(f2, art.state_abs, 3, d_out).verdict is Verdict.UNKNOWN
    assert fix_abstraction(f2, art.state_abs, [1, 2], d_out).verdict is Verdict.UNKNOWN
    with pytest.raises(ValueError):
        fix_abstraction(f2, art.state_abs, 4, d_out)


# network abstraction reuse

@pytest.fixture
def abs_artifact(toy_net, unit_square):
    return record(toy_net, unit_square, Box([-1.0], [25.0]), abstraction_target=1,
                  abstraction_margin=1e-3)


def test_network_abs_unchanged(toy_net, abs_artifact):
    assert check_svbtv_network_abs(toy_net, abs_artifact, abs_artifact.d_out).proven


def test_network_abs_small_fine_tuning(toy_net, unit_square, abs_artifact):
    f2 = perturb(toy_net, 1e-4, 3)
    assert check_svbtv_network_abs(f2, abs_artifact, abs_artifact.d_out).proven
    out = reverify(VerificationProblem(f2, unit_square, abs_artifact.d_out), abs_artifact)
    assert out.mechanism == "Prop6"
    assert not verify_full(VerificationProblem(f2, unit_square, abs_artifact.d_out))[0].refuted


def test_network_abs_with_enlargement(toy_net, unit_square, abs_artifact):
    f2 = perturb(toy_net, 1e-4, 3)
    grown = Box(unit_square.lo, unit_square.hi + 0.05)
    res = check_svbtv_network_abs(f2, abs_artifact, abs_artifact.d_out, grown)
    assert res.proven
    assert verify_full(VerificationProblem(f2, grown, abs_artifact.d_out))[0].proven


def test_network_abs_breaks_on_large_change(toy_net, abs_artifact):
    f2 = perturb(toy_net, 0.5, 3)
    assert check_svbtv_network_abs(f2, abs_artifact, abs_artifact.d_out).verdict \
        is Verdict.UNKNOWN


def test_network_abs_missing_is_unknown(toy_net, unit_square):
    art = record(toy_net, unit_square, Box([0.0], [12.0]))
    res = check_svbtv_network_abs(toy_net, art, art.d_out)
    assert res.verdict is Verdict.UNKNOWN and "no network abstraction" in res.reason


# orchestration

def test_unchanged_problem_runs_nothing(toy_net, unit_square):
    art = record(toy_net, unit_square, Box([0.0], [12.0]))
    out = reverify(VerificationProblem(toy_net, unit_square, art.d_out), art)
    assert out.mechanism == ALREADY_PROVEN and out.proven and not out.subproblem_stats


def sign_flip_case():
    w1 = [[1.0, -2.0], [-2.0, 1.0], [1.0, -1.0]]
    net = scalar_chain([(w1, [0.0] * 3, RELU), ([[2.0, 2.0, -1.0]], [5.0], IDENTITY)], 2)
    flipped = scalar_chain([(w1, [0.0] * 3, RELU), ([[-2.0, -2.0, 1.0]], [-5.0], IDENTITY)], 2)
    return net, flipped, Box.cube(-1.0, 1.0, 2), Box([2.0], [12.0])


def test_sign_flip_refuted_with_witness():
    net, flipped, d_in, d_out = sign_flip_case()
    art = record(net, d_in, d_out)
    out = reverify(VerificationProblem(flipped, d_in, d_out), art)
    assert out.verdict is Outcome.REFUTED and out.mechanism == FULL
    y = eval_network(flipped, out.witness)
    assert y[0] < d_out.lo[0]
    assert out.subproblem_stats[-1].witness is not None


def test_strategy_order_and_names(toy_net, unit_square, enlarged_square):
    art = record(toy_net, unit_square, Box([0.0], [12.0]))
    prob = VerificationProblem(toy_net, enlarged_square, art.d_out)
    out = reverify(prob, art, strategy=["prop2", "Prop1"])
    assert out.mechanism == "Prop2"
    with pytest.raises(ValueError):
        reverify(prob, art, strategy=["Prop9"])
    out = reverify(prob, art, strategy=[], fallback=False)
    assert out.verdict is Outcome.UNKNOWN and out.mechanism is None


def test_changed_d_out_goes_to_full(toy_net, unit_square):
    art = record(toy_net, unit_square, Box([0.0], [12.0]))
    out = reverify(VerificationProblem(toy_net, unit_square, Box([0.0], [13.0])), art)
    assert out.verdict is Outcome.PROVEN_BY_FALLBACK and out.change == "d_out"


def test_report_mentions_mechanism(toy_net, unit_square, enlarged_square):
    art = record(toy_net, unit_square, Box([0.0], [12.0]))
    out = reverify(VerificationProblem(toy_net, enlarged_square, art.d_out), art)
    rep = out.report()
    assert rep["mechanism"] == "Prop1" and rep["verdict"] == "ProvenByReuse"
    assert out.ratio is not None and out.ratio > 0


@st.composite
def reuse_cases(draw):
    seed = draw(seeds)
    depth = draw(st.integers(2, 4))
    widths = [draw(st.integers(2, 8)) for _ in range(depth - 1)] + [1]
    net = random_network(2, widths, seed)
    d_in = Box.cube(-1.0, 1.0, 2)
    reach = propagate_symbolic(net, 1, depth, d_in).box
    d_out = reach.widen(draw(st.floats(0.0, 0.5)) * reach.width + 1e-3)
    grow = draw(st.floats(0.0, 0.3))
    eps = draw(st.sampled_from([0.0, 1e-4, 1e-2, 0.2]))
    f2 = perturb(net, eps, seed + 1) if eps else net
    return net, f2, d_in, d_in.widen(grow), d_out


@given(reuse_cases())
def test_reuse_is_sound_and_subsumes_two_layer_check(case):
    net, f2, d_in, new_in, d_out = case
    art = record(net, d_in, d_out)
    prob = VerificationProblem(f2, new_in, d_out)
    out = reverify(prob, art, budget=Budget(max_splits=5000))
    if out.verdict is Outcome.PROVEN_BY_REUSE:
        assert not verify_full(prob, GENEROUS)[0].refuted
    if out.verdict is Outcome.REFUTED:
        assert not box_contains(d_out, Box.point(eval_network(f2, out.witness)))
    if f2 is net and check_svudc_layers12(net, new_in, art.state_abs).proven:
        assert out.mechanism != FULL


@given(seed=seeds)
def test_verdicts_independent_of_workers(seed):
    net = random_network(2, [6, 6, 6, 1], seed)
    d_in = Box.cube(-1.0, 1.0, 2)
    reach = propagate_symbolic(net, 1, 4, d_in).box
    art = record(net, d_in, reach.widen(0.2 * reach.width + 1e-3))
    f2 = perturb(net, 1e-2, seed)
    a = check_svbtv_single_layer(f2, d_in, art.state_abs, art.d_out, workers=1)
    b = check_svbtv_single_layer(f2, d_in, art.state_abs, art.d_out, workers=4)
    assert [p.verdict for p in a.parts] == [p.verdict for p in b.parts]
    ra = reverify(VerificationProblem(f2, d_in, art.d_out), art, workers=1)
    rb = reverify(VerificationProblem(f2, d_in, art.d_out), art, workers=4)
    assert (ra.verdict, ra.mechanism) == (rb.verdict, rb.mechanism)
