"""Command-line interface: ``stefan-pinn run`` and ``stefan-pinn sweep``.

Exit codes: 0 success, 2 usage or configuration error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import statistics
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from .network import save_checkpoint
from .problems import REGISTRY, ProblemError, ProblemId
from .trainer import ConfigError, TrainConfig, TrainingDiverged, train

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 2, 3


class UsageError(Exception):
    pass


def _float_list(text: str) -> list[float]:
    try:
        vals = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")
    if not vals:
        raise argparse.ArgumentTypeError("list must be nonempty")
    return vals


def _int_list(text: str) -> list[int]:
    vals = _float_list(text)
    if any(v != int(v) for v in vals):
        raise argparse.ArgumentTypeError(f"expected integers, got {text!r}")
    return [int(v) for v in vals]


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="stefan-pinn",
                                description="Physics-informed networks for Stefan problems.")
    p.add_argument("-v", "--verbose", action="store_true", help="log training progress")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--problem", required=True, help=f"one of: {', '.join(REGISTRY)}")
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--iterations", type=int, default=None)
        sp.add_argument("--batch-size", type=int, default=None)
        sp.add_argument("--lr", type=float, default=None)
        sp.add_argument("--adaptive", dest="adaptive", action="store_true", default=None,
                        help="gradient-statistics weighting of the data term")
        sp.add_argument("--no-adaptive", dest="adaptive", action="store_false")
        sp.add_argument("--config", type=Path, help="JSON file of training settings; flags win")
        sp.add_argument("--out", type=Path, required=True, help="output directory")

    run = sub.add_parser("run", help="train and evaluate one problem")
    common(run)
    run.add_argument("--data", type=int, default=None, help="number of measurements M")
    run.add_argument("--noise", type=float, default=None, help="noise level as a fraction")

    sweep = sub.add_parser("sweep", help="grid of measurement counts x noise levels")
    common(sweep)
    sweep.add_argument("--data-list", type=_int_list, required=True)
    sweep.add_argument("--noise-list", type=_float_list, required=True)
    sweep.add_argument("--seeds", type=int, default=1, help="seeds per cell (median reported)")
    sweep.add_argument("--jobs", type=int, default=1)
    return p


def _config(args, **overrides) -> TrainConfig:
    base = {}
    if args.config is not None:
        try:
            base = json.loads(args.config.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}")
        if not isinstance(base, dict):
            raise UsageError("config file must hold a JSON object")
        base.pop("problem", None)
    flags = {"seed": args.seed, "iterations": args.iterations, "batch_size": args.batch_size,
             "lr": args.lr, "adaptive_weights": args.adaptive, **overrides}
    base.update({k: v for k, v in flags.items() if v is not None})
    return TrainConfig.from_dict(base)


def _write_run(out: Path, result) -> None:
    out.mkdir(parents=True, exist_ok=True)
    result.report.write_json(out / "report.json")
    from .metrics import evaluation_grid

    g = evaluation_grid(result.report.problem, result.model)
    g.to_csv(out / "error_grid.csv")
    g.boundary_to_csv(out / "boundary.csv")
    save_checkpoint(out / "model.bin", [n for n in (result.nets["u"], result.nets.get("s")) if n])
    if result.dataset is not None:
        result.dataset.to_csv(out / "data.csv")


def _train_cell(problem: str, cfg: TrainConfig, out: Path):
    try:
        result = train(problem, cfg)
    except TrainingDiverged as exc:
        out.mkdir(parents=True, exist_ok=True)
        exc.report.write_json(out / "report.json")
        return None, str(exc)
    _write_run(out, result)
    return result.report.final, None


def cmd_run(args) -> int:
    pid = ProblemId.parse(args.problem)
    cfg = _config(args, data_count=args.data, noise_level=args.noise).resolved(pid)
    try:
        result = train(pid, cfg)
    except TrainingDiverged as exc:
        args.out.mkdir(parents=True, exist_ok=True)
        exc.report.write_json(args.out / "report.json")
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    _write_run(args.out, result)
    f = result.report.final
    print(f"rel_l2_u = {f['rel_l2_u']:.3e}")
    print(f"rel_l2_s = {f['rel_l2_s']:.3e}")
    for key in ("rel_l2_u_left", "rel_l2_ux_left", "k1", "k2"):
        if key in f:
            print(f"{key} = {f[key]:.6g}")
    return EXIT_OK


def _cell_dir(out: Path, M: int, delta: float, seed: int) -> Path:
    return out / f"M{M}_sigma{delta:g}_seed{seed}"


def cmd_sweep(args) -> int:
    pid = ProblemId.parse(args.problem)
    if not pid.uses_data:
        raise UsageError(f"sweeps need an inverse type II problem, got {pid}")
    if args.seeds < 1 or args.jobs < 1:
        raise UsageError("--seeds and --jobs must be >= 1")
    base = _config(args, data_count=args.data_list[0], noise_level=args.noise_list[0])
    base.resolved(pid)
    cells = []
    for M in args.data_list:
        for delta in args.noise_list:
            for k in range(args.seeds):
                cfg = TrainConfig.from_dict({**_asdict(base), "data_count": M, "noise_level": delta,
                                             "seed": base.seed + k}).resolved(pid)
                cells.append((M, delta, cfg, _cell_dir(args.out, M, delta, cfg.seed)))

    if args.jobs == 1:
        outcomes = [_train_cell(str(pid), cfg, d) for _, _, cfg, d in cells]
    else:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            futures = [pool.submit(_train_cell, str(pid), cfg, d) for _, _, cfg, d in cells]
            outcomes = [f.result() for f in futures]

    failed = [err for _, err in outcomes if err]
    for err in failed:
        print(f"error: {err}", file=sys.stderr)
    table_u, table_s = {}, {}
    for (M, delta, _, _), (final, _) in zip(cells, outcomes):
        if final is not None:
            table_u.setdefault((M, delta), []).append(final["rel_l2_u"])
            table_s.setdefault((M, delta), []).append(final["rel_l2_s"])
    args.out.mkdir(parents=True, exist_ok=True)
    for name, table in (("u", table_u), ("s", table_s)):
        med = {key: statistics.median(v) for key, v in table.items()}
        _write_long(args.out / f"sweep_{name}.csv", args.data_list, args.noise_list, med)
        _write_wide(args.out / f"sweep_{name}_table.csv", args.data_list, args.noise_list, med)
        print(f"relative L2 error of {name}")
        print(_format_table(args.data_list, args.noise_list, med))
    return EXIT_NUMERIC if failed else EXIT_OK


def _asdict(cfg: TrainConfig) -> dict:
    import dataclasses

    return dataclasses.asdict(cfg)


def _write_long(path, Ms, deltas, med) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["M", "sigma", "rel_l2"])
        for M in Ms:
            for d in deltas:
                w.writerow([M, repr(float(d)), repr(float(med[(M, d)])) if (M, d) in med else "nan"])


def _write_wide(path, Ms, deltas, med) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["M", *(repr(float(d)) for d in deltas)])
        for M in Ms:
            w.writerow([M, *(repr(float(med[(M, d)])) if (M, d) in med else "nan" for d in deltas)])


def _format_table(Ms, deltas, med) -> str:
    head = "M \\ noise".ljust(10) + "".join(f"{d * 100:>10g}%" for d in deltas)
    rows = [head]
    for M in Ms:
        rows.append(f"{M:<10d}" + "".join(
            f"{med[(M, d)]:>11.2e}" if (M, d) in med else f"{'nan':>11}" for d in deltas))
    return "\n".join(rows)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        if args.command == "run":
            return cmd_run(args)
        return cmd_sweep(args)
    except (UsageError, ConfigError, ProblemError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
