"""A tour of the tensor core: taped ops, backward, and the gradient checker.

Run:  python demos/01_autodiff_basics.py
"""

import numpy as np

from settraj import tensor as tx

# Tensors wrap float64 numpy arrays. Ops compute eagerly and, when a Tape is
# active, record how to push gradients back.
a = tx.DiffTensor([[1.0, 2.0], [3.0, 4.0]])
b = tx.DiffTensor([[0.5], [-1.0]])

with tx.Tape() as tape:
    prod = tx.matmul(a, b)            # [2 x 1]
    loss = tx.mul(prod, prod).sum()   # scalar
    tx.backward(loss, tape)

print("product:", prod.values.ravel())
print("loss:", loss.item())
print("d loss / d a:\n", a.grad)

# softmax rows are stable even for huge logits
logits = tx.DiffTensor([[1000.0, 0.0, -1000.0]])
print("\nsoftmax of [1000, 0, -1000]:", tx.softmax_rows(logits).values.ravel())

# The finite-difference oracle is the ground truth for every backward rule.
rng = np.random.default_rng(0)
x = tx.DiffTensor(rng.normal(size=(3, 4)))
gain = tx.DiffTensor(np.ones(4))
bias = tx.DiffTensor(np.zeros(4))


def pipeline(t):
    h = tx.layer_norm(t, gain, bias)
    return tx.euclidean_norm(tx.relu(h)).sum()


report = tx.grad_check(pipeline, x, step=1e-5, tol=1e-4)
print(f"\ngradient check: max relative error {report.max_rel_error:.3e} "
      f"-> {'pass' if report.passed else 'FAIL'}")

# Non-finite results raise immediately instead of propagating NaNs.
try:
    huge = tx.DiffTensor(np.full((2, 2), 1e308))
    tx.matmul(huge, huge)
except tx.NumericsError as exc:
    print("\noverflow is an error:", exc)
