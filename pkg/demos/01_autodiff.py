"""
Expression graphs and exact derivatives
=======================================

Scalar expressions are immutable graphs. ``differentiate`` returns another
graph, so derivatives of any order come for free.
"""
import math

from stefan_pinn import autodiff as ad

t = ad.variable("t")
x = ad.variable("x")

# %% the moving boundary of the one-phase problem and its speed
s = 2 - ad.sqrt(3 - 2 * t)
speed = ad.differentiate(s, "t")
print("s(0.5)  =", ad.evaluate(s, {"t": 0.5}))
print("s'(0.5) =", ad.evaluate(speed, {"t": 0.5}), " (1/sqrt(2) =", 1 / math.sqrt(2), ")")

# %% a second derivative, checked against a central difference
u = ad.tanh(x * t) * ad.exp(-x)
u_xx = ad.differentiate(ad.differentiate(u, "x"), "x")
b = {"x": 0.3, "t": 0.8}
h = 1e-4
fd = (ad.evaluate(u, {**b, "x": 0.3 + h}) - 2 * ad.evaluate(u, b)
      + ad.evaluate(u, {**b, "x": 0.3 - h})) / h ** 2
print("u_xx exact %.10f   finite difference %.10f" % (ad.evaluate(u_xx, b), fd))

# %% reverse mode: all partials in one sweep
print("grad u at (0.3, 0.8):", ad.gradient(u, ["x", "t"], b))

# %% compile a graph to a numpy function for batches of points
import numpy as np

f = ad.vectorize([u, u_xx], ["x", "t"])
values, curvature = f(np.linspace(0, 1, 5), np.full(5, 0.8))
print(values)
print(curvature)

# %% errors carry the path to the offending node
try:
    ad.evaluate(1 + ad.sqrt(x), {"x": -1.0})
except ad.NonFiniteError as err:
    print("caught:", err)
