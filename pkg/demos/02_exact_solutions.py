"""
The three benchmark problems and their closed forms
===================================================

Every loss term vanishes when the networks are replaced by the exact
solution; this is the main correctness oracle for the loss assembly.
"""
import math

import numpy as np

from stefan_pinn import REGISTRY, get_problem
from stefan_pinn import autodiff as ad
from stefan_pinn.problems import (
    build_losses, exact_boundary, exact_latents, exact_solution, normal_derivative_2d,
)
from stefan_pinn.sampling import draw_batches, make_rng, sample_measurements

print(REGISTRY)

# %% point values
print(exact_solution("1d1p:direct", (0.5, 0.5)))          # -0.125
print(exact_solution("1d2p:direct", (0.5, 0.5)))          # blended value and both phases
print(exact_boundary("1d1p:direct", 0.0), 2 - math.sqrt(3))
print(exact_boundary("2d1p:direct", (0.5, 0.4)))          # 1.25

# %% zero loss under the closed forms
for pid in REGISTRY:
    spec = get_problem(pid)
    data = sample_measurements(pid, 50, 0.0, seed=0) if spec.id.uses_data else None
    batches = draw_batches(spec, make_rng(0), 64, data)
    consts = {"k1": 2.0, "k2": 1.0} if spec.trainable else None
    losses = build_losses(pid, exact_latents(pid), consts, batches)
    worst = max(ad.evaluate(e, {}) for e in losses.values())
    print(f"{pid:12s} {len(losses):2d} terms, largest {worst:.1e}")

# %% the heat flux through the 2D interface is constant
y, t = 0.3, 0.6
s = 0.5 * y + 1.25 * t + 0.5
u = math.exp(1.25 * t - s + 0.5 * y + 0.5)
print(normal_derivative_2d(-u, 0.5 * u, 0.5), -math.sqrt(5) / 2)

# %% where the one-phase solution lives
tt = np.linspace(0, 1, 6)
print(np.c_[tt, 2 - np.sqrt(3 - 2 * tt)])
