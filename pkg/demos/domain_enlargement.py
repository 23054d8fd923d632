"""Growing the input box: Lipschitz inflation and re-entry at a later layer."""

import numpy as np

from contverify.box import Box
from contverify.domains import BOX, StateAbstraction
from contverify.lipschitz import LipschitzBound, compute_kappa, inflate
from contverify.network import IDENTITY, RELU, Layer, Network, VerificationProblem
from contverify.reuse import check_svudc_layer_jplus1, check_svudc_layers12, reverify, \
    verify_and_record
from contverify.store import ProofArtifact


def chain(spec, input_dim=1):
    return Network(tuple(Layer(np.array(w, float), np.array(b, float), a) for w, b, a in spec),
                   input_dim)


# %% Lipschitz inflation: y = 7 x1 - 6 on [1, 2]^2 reaches [1, 8]
net = chain([([[1, 0], [0, 1]], [0, 0], RELU), ([[7, 0]], [-6], IDENTITY)], input_dim=2)
d_in, d_out = Box.cube(1.0, 2.0, 2), Box([-10.0], [10.0])
sa = StateAbstraction((d_in, Box([1.0], [8.0])), d_in, net.digest(), BOX)
# a deliberately loose bound; it only has to be at least the true constant
art = ProofArtifact(net.digest(), d_in, d_out, sa, LipschitzBound(100.0, "L2"))
enlarged = Box.cube(0.99, 2.01, 2)
print("kappa =", compute_kappa(d_in, enlarged, "L2"))
for kappa in (0.02, 0.05):
    print(f"kappa {kappa}: S_n grows to {inflate(sa.output_box, 100.0, kappa)}")
out = reverify(VerificationProblem(net, enlarged, d_out), art, kappa=0.02)
print("reverify:", out.verdict.value, "via", out.mechanism)

# %% re-entry: layer 3 clamps everything to zero, so a wider input is harmless
net = chain([([[1]], [0], RELU), ([[1]], [0], RELU), ([[1]], [-5], RELU), ([[1]], [0], IDENTITY)])
res, art = verify_and_record(VerificationProblem(net, Box([0.0], [1.0]), Box([-0.5], [0.5])))
wide = Box([0.0], [2.0])
print("two-layer check:", check_svudc_layers12(net, wide, art.state_abs).verdict.value)
res = check_svudc_layer_jplus1(net, wide, art.state_abs)
print("later-layer check:", res.verdict.value, res.reason)
