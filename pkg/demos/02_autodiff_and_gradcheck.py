"""Record a training-mode pipeline on the reverse-mode tape and verify its
gradients against central finite differences.

The training forward pass swaps every sign for tanh(50 .) and hard
thresholding for a straight-through top-k mask, which makes the whole
encoder/decoder pipeline differentiable in the sensing matrix, the
quantization thresholds, and every per-layer step size and shrinkage
threshold.
"""

import numpy as np

from onebitcs import autodiff as ad
from onebitcs.numerics import RngStream
from onebitcs.signals import SignalSpec, sample_signal
from onebitcs.training import accumulated_loss
from onebitcs.unfolded import initialize_model, make_param_vars, record_pipeline

n, m, layers = 8, 16, 3
rng = RngStream(7)
enc, dec = initialize_model("lg_rfpi", n, m, layers, rng.child("init"),
                            step_size=0.05, penalty=4.0)
x = sample_signal(SignalSpec(n, 3), rng.child("x")).values

# one forward/backward on the tape
tape = ad.Tape()
pv = make_param_vars(tape, enc, dec)
z0, estimates, final = record_pipeline(tape, "lg_rfpi", pv, x, layers, None,
                                       enc.smoothness)
loss = accumulated_loss(estimates, x, pv, "lg_rfpi", lam=1.0)
grads = ad.backward(tape, loss)
print(f"recorded {len(tape.nodes)} tape nodes, loss {float(loss.value):.4f}")
for name in ("phi", "thresholds", "delta[0]", "tau[0]"):
    g = np.asarray(grads[name])
    print(f"  d loss / d {name:<10} shape {str(g.shape):<10} max |g| = {np.max(np.abs(g)):.4f}")

# finite-difference verification of the same graph
def builder(tape, pvars):
    _, ests, _ = record_pipeline(tape, "lg_rfpi", pvars, x, layers, None,
                                 enc.smoothness)
    return accumulated_loss(ests, x, pvars, "lg_rfpi", lam=1.0)

params = {"phi": enc.phi, "thresholds": enc.thresholds}
for i in range(layers):
    params[f"delta[{i}]"] = np.asarray(dec.delta[i])
    params[f"tau[{i}]"] = dec.tau[i]
err = ad.grad_check(builder, params, h=1e-6)
print(f"\nworst finite-difference relative error over all coordinates: {err:.2e}")
print("(coordinates flowing through saturated tanh(50 .) carry gradients below")
print("the finite-difference resolution; see kink_margin for the filtering the")
print("acceptance suite applies)")
