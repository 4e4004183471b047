"""
The command-line driver
=======================

``stefan-pinn run`` trains one problem and writes report.json,
error_grid.csv, boundary.csv, model.bin (and data.csv when measurements are
used). ``stefan-pinn sweep`` fills a grid of measurement counts and noise
levels. The same entry point is callable from Python.
"""
import json
from pathlib import Path

from stefan_pinn.cli import main
from stefan_pinn.network import load_checkpoint

out = Path("demo_output/cli")
cfg = out / "small.json"
out.mkdir(parents=True, exist_ok=True)
cfg.write_text(json.dumps({"iterations": 300, "hidden": [20, 20], "record_every": 50}))

# %% one run
main(["run", "--problem", "2d1p:inv2", "--data", "50", "--config", str(cfg),
      "--out", str(out / "run")])
u_net, s_net = load_checkpoint(out / "run" / "model.bin")
print("u-net layers", u_net.layer_sizes, " s-net layers", s_net.layer_sizes)

# %% a 2 x 2 sweep; cells land in M{M}_sigma{delta}_seed{seed}/
main(["sweep", "--problem", "1d1p:inv2", "--data-list", "10,50", "--noise-list", "0,0.05",
      "--config", str(cfg), "--out", str(out / "sweep")])
print((out / "sweep" / "sweep_u.csv").read_text())
