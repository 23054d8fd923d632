import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import oracles
from contverify.box import Box, box_contains, distance_to_box
from contverify.domains import (BOX, SYMBOLIC, StateAbstraction, build_state_abstraction,
                                certify_chain, link_holds, propagate_box, propagate_box_range,
                                propagate_symbolic)
from contverify.network import IDENTITY, RELU, Layer, Network, eval_network, layer_activations, \
    random_network

seeds = st.integers(0, 2**31 - 1)


@st.composite
def boxes(draw, dim=None):
    d = dim or draw(st.integers(1, 4))
    lo = np.array(draw(st.lists(st.floats(-10, 10), min_size=d, max_size=d)))
    w = np.array(draw(st.lists(st.floats(0, 5), min_size=d, max_size=d)))
    return Box(lo, lo + w)


# box basics

def test_box_rejects_inverted_and_nonfinite():
    with pytest.raises(ValueError):
        Box([1.0], [0.0])
    with pytest.raises(ValueError):
        Box([np.nan], [0.0])
    with pytest.raises(ValueError):
        Box([0.0, 1.0], [1.0])


def test_contains_known_values():
    assert box_contains(Box([0.0], [12.0]), Box([0.0], [6.2]))
    assert not box_contains(Box([0.0], [12.0]), Box([0.0], [12.4]))
    assert box_contains(Box([0.0], [12.0]), Box([0.0], [12.4]), slack=0.4)


def test_contains_dimension_mismatch():
    with pytest.raises(ValueError):
        box_contains(Box.cube(0, 1, 2), Box.cube(0, 1, 3))


@given(a=boxes(dim=3), b=boxes(dim=3), c=boxes(dim=3))
def test_contains_is_partial_order(a, b, c):
    assert box_contains(a, a)
    if box_contains(a, b) and box_contains(b, a):
        assert a == b
    if box_contains(a, b) and box_contains(b, c):
        assert box_contains(a, c)


@given(a=boxes(dim=2), s=st.floats(0, 3))
def test_slack_matches_definition(a, s):
    inner = a.widen(s)
    assert box_contains(a, inner, slack=s * (1 + 1e-12) + 1e-12)


@given(b=boxes(dim=2), seed=seeds)
def test_split_covers_box(b, seed):
    left, right = b.split(int(np.argmax(b.width)))
    assert box_contains(b, left) and box_contains(b, right)
    assert left.hull(right) == b


@given(b=boxes(dim=3), seed=seeds)
def test_distance_to_box_against_oracle(b, seed):
    pts = np.random.default_rng(seed).uniform(-20, 20, size=(30, 3))
    for norm in ("L1", "L2", "LINF"):
        got = distance_to_box(pts, b, norm)
        for p, g in zip(pts, got):
            assert g == pytest.approx(oracles.point_box_distance(p, b.lo, b.hi, norm), abs=1e-9)


def test_box_list_roundtrip():
    b = Box([-1.0, 0.5], [2.0, 0.5])
    assert Box.from_list(b.to_list()) == b


# transformers

def test_toy_layer1_box(toy_net, unit_square):
    out = propagate_box(toy_net.layer(1), unit_square)
    assert out == Box([0, 0, 0], [3, 3, 2])


def test_toy_layer2_box_enlarged(toy_net):
    out = propagate_box(toy_net.layer(2), Box([0, 0, 0], [3.1, 3.1, 2.1]))
    np.testing.assert_allclose(out.hi, [12.4], atol=1e-9)
    assert out.lo[0] == 0.0


def test_identity_layer_box_unchanged():
    b = Box([-1.0, 2.0], [3.0, 5.0])
    assert propagate_box(Layer(np.eye(2), np.zeros(2), IDENTITY), b) == b


def test_propagate_box_dimension_mismatch(toy_net):
    with pytest.raises(ValueError):
        propagate_box(toy_net.layer(1), Box.cube(0, 1, 3))


@given(seed=seeds)
def test_box_transformer_matches_reference(seed):
    net = random_network(3, [5, 4, 2], seed)
    d_in = Box.cube(-1.0, 1.0, 3)
    ref = oracles.interval_chain(oracles.raw_layers(net), d_in.lo.tolist(), d_in.hi.tolist())
    for got, (lo, hi) in zip(propagate_box_range(net, 1, 3, d_in), ref):
        np.testing.assert_allclose(got.lo, lo, atol=1e-12)
        np.testing.assert_allclose(got.hi, hi, atol=1e-12)


def test_affine_symbolic_is_exact():
    w1 = np.array([[1.0, -2.0], [0.5, 1.0]])
    w2 = np.array([[1.0, 1.0]])
    net = Network((Layer(w1, [0.0, 1.0], RELU), Layer(w2, [0.0], IDENTITY)), 2)
    # with a ReLU first layer that stays active on the box the map is affine
    d_in = Box([1.0, 0.0], [2.0, 0.25])
    sym = propagate_symbolic(net, 1, 2, d_in)
    corners = np.array([[a, b] for a in (1.0, 2.0) for b in (0.0, 0.25)])
    ys = eval_network(net, corners)[:, 0]
    np.testing.assert_allclose([sym.box.lo[0], sym.box.hi[0]], [ys.min(), ys.max()], atol=1e-12)


def test_pure_identity_symbolic_exact():
    w = np.array([[1.0, -1.0], [2.0, 3.0]])
    net = Network((Layer(w, [0.5, -0.5], IDENTITY),), 2)
    d_in = Box([-1.0, 0.0], [1.0, 2.0])
    sym = propagate_symbolic(net, 1, 1, d_in)
    # x1 - x2 + 0.5 and 2 x1 + 3 x2 - 0.5 over the box, by hand
    assert sym.box == Box([-2.5, -2.5], [1.5, 7.5])


def test_symbolic_toy_net_not_looser(toy_net, enlarged_square):
    sym = propagate_symbolic(toy_net, 1, 2, enlarged_square)
    box = propagate_box_range(toy_net, 1, 2, enlarged_square)[-1]
    assert sym.box.hi[0] <= 12.4 + 1e-9
    assert box_contains(box, sym.box)
    assert sym.box.hi[0] >= 6.2 - 1e-9


@given(seed=seeds)
def test_symbolic_sound_and_tighter(seed):
    net = random_network(3, [6, 5, 2], seed)
    d_in = Box([-1.0, 0.0, -0.5], [1.0, 0.5, 0.5])
    sym = propagate_symbolic(net, 1, 3, d_in)
    box = propagate_box_range(net, 1, 3, d_in)
    xs = d_in.sample(np.random.default_rng(seed), 100)
    acts = layer_activations(net, xs)
    for k in range(3):
        assert box_contains(box[k], sym.layer_boxes[k], slack=1e-9)
        assert np.all(acts[k] >= sym.layer_boxes[k].lo - 1e-9)
        assert np.all(acts[k] <= sym.layer_boxes[k].hi + 1e-9)
    # affine forms bound the output pointwise
    y = acts[-1]
    lower = xs @ sym.lower_coef.T + sym.lower_const
    upper = xs @ sym.upper_coef.T + sym.upper_const
    assert np.all(lower <= y + 1e-9) and np.all(y <= upper + 1e-9)


# state abstractions

def test_toy_state_abstraction_box_mode(toy_net, unit_square):
    sa = build_state_abstraction(toy_net, unit_square, BOX)
    assert sa.S(2) == Box([0.0], [12.0])
    assert sa.chain_start == 1
    assert sa.network_hash == toy_net.digest()


def test_single_identity_layer_state():
    net = Network((Layer(np.array([[2.0, 0.0], [0.0, -1.0]]), [1.0, 0.0], IDENTITY),), 2)
    sa = build_state_abstraction(net, Box([0.0, 0.0], [1.0, 3.0]), BOX)
    assert sa.S(1) == Box([1.0, -3.0], [3.0, 0.0])


@given(seed=seeds)
def test_state_abstraction_soundness_and_order(seed):
    net = random_network(2, [8, 8, 1], seed)
    d_in = Box.cube(-1.0, 1.0, 2)
    sb = build_state_abstraction(net, d_in, BOX)
    ss = build_state_abstraction(net, d_in, SYMBOLIC)
    acts = layer_activations(net, d_in.sample(np.random.default_rng(seed), 1000))
    for k in range(3):
        assert box_contains(sb.boxes[k], ss.boxes[k], slack=1e-9)
        for sa in (sb, ss):
            assert np.all(acts[k] >= sa.boxes[k].lo - 1e-9)
            assert np.all(acts[k] <= sa.boxes[k].hi + 1e-9)
    # the symbolic chain is certified from chain_start on
    for i in range(ss.chain_start, ss.n):
        assert link_holds(net, ss, i)


@given(seed=seeds, grow=st.floats(0, 1))
def test_box_mode_monotone(seed, grow):
    net = random_network(3, [5, 4, 1], seed)
    small = Box.cube(-0.5, 0.5, 3)
    big = small.widen(grow)
    a = build_state_abstraction(net, small, BOX)
    b = build_state_abstraction(net, big, BOX)
    for x, y in zip(a.boxes, b.boxes):
        assert box_contains(y, x, slack=1e-12)


def test_point_domain_reduces_to_evaluation(toy_net):
    x = np.array([0.3, -0.7])
    sa = build_state_abstraction(toy_net, Box.point(x), SYMBOLIC)
    np.testing.assert_allclose(sa.output_box.lo, eval_network(toy_net, x), atol=1e-12)
    np.testing.assert_allclose(sa.output_box.hi, eval_network(toy_net, x), atol=1e-12)


def test_state_abstraction_dict_roundtrip(toy_net, unit_square):
    sa = build_state_abstraction(toy_net, unit_square, SYMBOLIC)
    back = StateAbstraction.from_dict(sa.to_dict())
    assert back.boxes == sa.boxes and back.chain_start == sa.chain_start
    assert back.mode == sa.mode and back.input_box == sa.input_box


@given(seed=seeds)
def test_certified_chain_is_closed_and_fits(seed):
    net = random_network(3, [6, 6, 1], seed)
    d_in = Box.cube(-1.0, 1.0, 3)
    reach = propagate_symbolic(net, 1, 3, d_in)
    d_out = reach.box.widen(0.1 * reach.box.width + 1e-6)
    sa = certify_chain(net, d_in, d_out, reach.layer_boxes)
    assert box_contains(d_out, sa.output_box)
    first = 0 if sa.chain_start == 1 else sa.chain_start
    for i in range(first, sa.n):
        assert link_holds(net, sa, i)
    # never smaller than what was reached
    for k in range(sa.n):
        assert box_contains(sa.boxes[k], reach.layer_boxes[k], slack=1e-9)


def test_certify_rejects_unreachable_target(toy_net, unit_square):
    reach = propagate_box_range(toy_net, 1, 2, unit_square)
    with pytest.raises(ValueError):
        certify_chain(toy_net, unit_square, Box([0.0], [5.0]), reach)
