"""Two-input, three-neuron network: bounds, a proof, and reuse on a larger box."""

import numpy as np

from contverify.box import Box
from contverify.domains import BOX, build_state_abstraction
from contverify.exact import max_output
from contverify.network import VerificationProblem, eval_network, toy_network
from contverify.reuse import check_svudc_layers12, reverify, verify_and_record

net = toy_network()
unit = Box.cube(-1.0, 1.0, 2)
bigger = Box.cube(-1.0, 1.1, 2)

# %% plain interval bounds of the output neuron
for box in (unit, bigger):
    print(box, "->", build_state_abstraction(net, box, BOX).output_box)

# %% the true maximum on the bigger box sits at a corner
lo, hi = max_output(net, 1, 2, bigger, 0)
print(f"max output on {bigger}: in [{lo:.6f}, {hi:.6f}]")
print("f(-1, 1.1) =", eval_network(net, np.array([-1.0, 1.1]))[0])

# %% prove the output stays in [0, 12] on the unit box and keep the proof
d_out = Box([0.0], [12.0])
res, art = verify_and_record(VerificationProblem(net, unit, d_out))
print("verify:", res.verdict.value, "stored S_2 =", art.state_abs.S(2))

# %% on the bigger box, the first two layers still land inside the stored S_2
print("two-layer check:", check_svudc_layers12(net, bigger, art.state_abs).verdict.value)
out = reverify(VerificationProblem(net, bigger, d_out), art)
print(f"reverify: {out.verdict.value} via {out.mechanism}")

# %% a bound that does not hold comes back with a concrete input
res, _ = verify_and_record(VerificationProblem(net, unit, Box([0.0], [5.0])))
print("verify [0, 5]:", res.verdict.value, "witness", res.witness,
      "->", eval_network(net, res.witness))
