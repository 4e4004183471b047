"""
Solving a direct one-phase problem
==================================

Two networks are trained together: u(x, t) for the temperature and s(t)
for the free boundary. The full run uses 40000 iterations; pass a smaller
count on the command line for a quick look, e.g. ``python 03_direct_problem.py 2000``.
"""
import sys
from pathlib import Path

from stefan_pinn import TrainConfig, train
from stefan_pinn.metrics import evaluation_grid

iterations = int(sys.argv[1]) if len(sys.argv) > 1 else 2000
out = Path("demo_output/direct_1d1p")
out.mkdir(parents=True, exist_ok=True)

result = train("1d1p:direct", TrainConfig(iterations=iterations, seed=0))
rep = result.report
print(f"{iterations} iterations in {rep.runtime_seconds:.0f}s")
print("final losses:", {k: f"{v:.2e}" for k, v in rep.final_losses.items()})
print(f"relative L2 error  u: {rep.final['rel_l2_u']:.3e}   s: {rep.final['rel_l2_s']:.3e}")

# %% loss history, one row every 100 iterations
hist = rep.history
for i in range(0, len(hist["iter"]), max(1, len(hist["iter"]) // 8)):
    print(hist["iter"][i], f"{hist['total'][i]:.3e}")

# %% plot-ready CSVs: u on a grid restricted to the learned domain, and s(t)
grid = evaluation_grid("1d1p:direct", result.model)
grid.to_csv(out / "error_grid.csv")
grid.boundary_to_csv(out / "boundary.csv")
rep.write_json(out / "report.json")
print("wrote", sorted(p.name for p in out.iterdir()))
