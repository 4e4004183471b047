"""
Recovering u and s from a few noisy measurements
================================================

In the data-driven inverse problems there are no initial or boundary
conditions: M interior samples of u plus the physics are all we have.
Noise is Gaussian with standard deviation delta * max|u|.
"""
import sys

from stefan_pinn import TrainConfig, train
from stefan_pinn.sampling import sample_measurements, solution_sup_norm

iterations = int(sys.argv[1]) if len(sys.argv) > 1 else 2000

# %% the measurements
print("max |u| =", solution_sup_norm("1d1p:inv2"))
data = sample_measurements("1d1p:inv2", M=10, delta=0.05, seed=0)
print("sigma =", data.sigma)
for p, v in zip(data.points[:5], data.values[:5]):
    print(p, v)

# %% noise-free and noisy runs share measurement locations
for delta in (0.0, 0.1):
    cfg = TrainConfig(iterations=iterations, data_count=100, noise_level=delta, seed=0)
    f = train("1d1p:inv2", cfg).report.final
    print(f"delta={delta:4.2f}  u {f['rel_l2_u']:.3e}  s {f['rel_l2_s']:.3e}")
