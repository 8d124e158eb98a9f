"""
Checking gradients against finite differences
=============================================

Every layer in the package carries a hand-written backward pass. The
reliable way to trust one is to compare it with central differences in
float64. Here we do that for a tiny two-layer classifier, then for every
kernel through the bundled suite.
"""

import numpy as np

from nfseg.diffcore import Linear, Tensor, finite_diff_check, ops

rng = np.random.default_rng(0)
x = Tensor(rng.normal(size=(6, 4)))
labels = rng.integers(0, 3, size=6)
first = Linear(4, 5, rng, dtype=np.float64)
second = Linear(5, 3, rng, dtype=np.float64)


def loss(x, *params):
    # params are the layer weights themselves, so perturbing them moves the loss
    return ops.softmax_cross_entropy(second(ops.relu(first(x))), labels)


value = loss(x)
value.backward()
print("loss", float(value.data))
print("dL/dW1 (analytic), first row:", first.weight.grad[0])

params = [first.weight, first.bias, second.weight, second.bias]
print("max relative error vs central differences:", finite_diff_check(loss, [x] + params))

# %%
# The same check for every kernel and decoder strategy (this is what
# ``nfseg gradcheck`` prints); a handful of trials keeps it quick.
from nfseg.harness.gradsuite import run_suite  # noqa: E402

for name, (err, tol) in run_suite(trials=3).items():
    print(f"{name:<34} {err:.1e}  tolerance {tol:.0e}")
