"""
Identifying two diffusivities with adaptive loss weights
========================================================

The two-phase data problem with unknown k1, k2 starts from k = 0.1. With a
fixed unit weight on the data term the networks tend to stall; rebalancing
that weight from gradient statistics lets k1 and k2 move to 2 and 1.
"""
import sys

from stefan_pinn import TrainConfig, train

iterations = int(sys.argv[1]) if len(sys.argv) > 1 else 3000

for adaptive in (True, False):
    cfg = TrainConfig(iterations=iterations, data_count=200, adaptive_weights=adaptive, seed=0)
    rep = train("1d2p:inv2k", cfg).report
    f = rep.final
    label = "adaptive" if adaptive else "fixed   "
    print(f"{label} k1={f['k1']:.4f} k2={f['k2']:.4f}  u {f['rel_l2_u']:.2e}  s {f['rel_l2_s']:.2e}")
    if adaptive:
        lam = rep.history["lambda"]
        print("   data weight every 500 iterations:", [round(v, 2) for v in lam[::5]])
