"""Re-verifying a fine-tuned network against the stored per-layer boxes."""

import numpy as np

from contverify.box import Box
from contverify.domains import propagate_symbolic
from contverify.network import IDENTITY, RELU, Layer, Network, VerificationProblem, perturb, \
    random_network, toy_network
from contverify.reuse import check_svbtv_multi_layer, check_svbtv_single_layer, \
    fix_abstraction, reverify, verify_and_record

# %% a small perturbation fits inside the slack of every stored box
net = random_network(4, [16, 16, 16, 16, 16, 1], seed=7)
d_in = Box.cube(-1.0, 1.0, 4)
reach = propagate_symbolic(net, 1, 6, d_in).box
d_out = reach.widen(0.25 * reach.width)
res, art = verify_and_record(VerificationProblem(net, d_in, d_out))
tuned = perturb(net, 1e-4, seed=1)
single = check_svbtv_single_layer(tuned, d_in, art.state_abs, d_out, workers=4)
print("per-layer checks:", [p.verdict.value for p in single.parts])
print(f"slowest check {single.max_part_time:.4f}s of {single.total_part_time:.4f}s total")
multi = check_svbtv_multi_layer(tuned, d_in, art.state_abs, d_out, cuts=[2, 4])
print("segments:", [p.label for p in multi.parts], multi.verdict.value)


# %% one broken box, repaired downstream
def chain(w2):
    layer_defs = [([[1.0]], [0.0], RELU), ([[w2]], [0.0], RELU), ([[1.0]], [-5.0], RELU),
            ([[1.0]], [0.0], IDENTITY)]
    return Network(tuple(Layer(np.array(w), np.array(b), a) for w, b, a in layer_defs), 1)


d_in, d_out = Box([0.0], [1.0]), Box([-0.5], [0.5])
_, art = verify_and_record(VerificationProblem(chain(1.0), d_in, d_out))
doubled = chain(2.0)
single = check_svbtv_single_layer(doubled, d_in, art.state_abs, d_out)
print("per-layer checks:", [p.verdict.value for p in single.parts])
print("repair:", fix_abstraction(doubled, art.state_abs, 1, d_out).reason)
print("reverify:", reverify(VerificationProblem(doubled, d_in, d_out), art).mechanism)

# %% merged abstraction: fine-tunings below the margin keep the old proof
toy = toy_network()
unit = Box.cube(-1.0, 1.0, 2)
_, art = verify_and_record(VerificationProblem(toy, unit, Box([-1.0], [25.0])),
                           abstraction_target=1, abstraction_margin=1e-3)
print("abstract widths:", art.net_abs.widths())
out = reverify(VerificationProblem(perturb(toy, 1e-4, 3), unit, art.d_out), art)
print("reverify:", out.verdict.value, "via", out.mechanism)

# %% a real break is reported with an input that shows it
flipped = Network((toy.layers[0], Layer(-toy.layers[1].weights, [-1.0], IDENTITY)), 2)
_, art = verify_and_record(VerificationProblem(
    Network((toy.layers[0], Layer(toy.layers[1].weights, [1.0], IDENTITY)), 2), unit,
    Box([0.0], [13.0])))
out = reverify(VerificationProblem(flipped, unit, art.d_out), art)
print("reverify:", out.verdict.value, "witness", out.witness)
