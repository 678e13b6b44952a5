"""The tape-based autodiff core, checked against finite differences."""
import numpy as np

from sacd.agent import MLP, loss_gradient_errors
from sacd.diffcore import Tape, gradient_check, value_and_grad

rng = np.random.default_rng(0)

# A tiny regression graph built by hand: mean((relu(x W) - y)^2)
x = rng.normal(size=(8, 3))
y = rng.normal(size=(8, 2))
params = {"W": rng.normal(size=(3, 2))}


def graph(tape: Tape, nodes):
    pred = tape.relu(tape.matmul(tape.const(x), nodes["W"]))
    return tape.mean(tape.square(tape.sub(pred, tape.const(y))))


loss, grads = value_and_grad(graph, params)
print("loss", loss)
print("dL/dW\n", grads["W"])
print("relative error vs central differences: %.2e" % gradient_check(graph, params, 1e-6))

# The same check on an MLP, then on the three actor-critic losses.
net = MLP([3, 16, 2], rng)
err = gradient_check(lambda t, n: t.mean(t.square(net.build(t, x, n))), net.params, 1e-6)
print("\nMLP output energy, relative error: %.2e" % err)

for name, e in loss_gradient_errors(rng).items():
    print(f"{name:12s} {e:.2e}")
