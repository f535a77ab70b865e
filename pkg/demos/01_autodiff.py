"""
Reverse-mode gradients and finite-difference checks
===================================================

Build a small expression, backpropagate, and compare against central
differences.
"""

# %%
import numpy as np
from nial import Tensor, grad_check
from nial import tensor as T

rng = np.random.default_rng(0)
x = Tensor(rng.normal(size=(2, 3, 16)), requires_grad=True)
w = Tensor(rng.normal(size=(4, 3, 5)), requires_grad=True)

# %%
# conv -> relu -> pool -> sum, then one backward pass fills x.grad and w.grad
y = T.maxpool1d(T.relu(T.conv1d(x, w, padding=2)), 2)
loss = y.sum()
loss.backward()
print("output shape", y.shape, "loss", loss.item())
print("|dL/dw|", np.abs(w.grad).max())

# %%
# grad_check returns the worst relative error over all input entries
err = grad_check(lambda _: T.maxpool1d(T.relu(T.conv1d(x, w, padding=2)), 2).sum(), [x, w])
print(f"max relative error {err:.2e}")
