"""Experiment driver: networks, per-iteration losses, Adam, history, final errors."""
from __future__ import annotations

import dataclasses
import json
import logging
import time
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .batched import BatchedLoss
from .metrics import TrainedModel, summarize
from .network import DEFAULT_HIDDEN, Mlp, glorot_init
from .optim import LossWeights, NonFiniteGradientError, adam_init, adam_step, adaptive_lambda, \
    project_positive
from .problems import ProblemId, get_problem
from .sampling import RNG_ALGORITHM, Dataset, draw_batches, make_rng, sample_measurements

log = logging.getLogger(__name__)

RESIDUAL_GROUP = "interior"
DATA_TERM = "data"


class ConfigError(ValueError):
    pass


class TrainingDiverged(ArithmeticError):
    def __init__(self, message: str, report: "TrainReport"):
        super().__init__(message)
        self.report = report


@dataclass
class TrainConfig:
    iterations: int = 40000
    batch_size: int = 128
    lr: float = 1e-3
    seed: int = 0
    adaptive_weights: bool | None = None  # None: on for 1d2p:inv2k only
    data_count: int | None = None
    noise_level: float = 0.0
    hidden: tuple[int, ...] = DEFAULT_HIDDEN
    activation: str = "tanh"
    record_every: int = 100

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
        d = dict(d)
        if "hidden" in d:
            d["hidden"] = tuple(int(h) for h in d["hidden"])
        return cls(**d)

    def resolved(self, problem_id) -> "TrainConfig":
        """Validated copy with problem-dependent defaults filled in."""
        pid = ProblemId.parse(problem_id)
        adaptive = self.adaptive_weights
        if adaptive is None:
            adaptive = pid.mode == "inv2k"
        cfg = dataclasses.replace(self, adaptive_weights=bool(adaptive), hidden=tuple(self.hidden))
        if cfg.iterations < 0 or cfg.batch_size < 1 or cfg.record_every < 1:
            raise ConfigError("iterations must be >= 0; batch_size and record_every >= 1")
        if not cfg.lr > 0:
            raise ConfigError(f"learning rate must be positive, got {cfg.lr}")
        if not cfg.noise_level >= 0:
            raise ConfigError(f"noise level must be >= 0, got {cfg.noise_level}")
        if not cfg.hidden or any(h < 1 for h in cfg.hidden):
            raise ConfigError(f"hidden sizes must be positive, got {cfg.hidden}")
        if cfg.activation != "tanh":
            raise ConfigError(f"only tanh activations are supported, got {cfg.activation!r}")
        if pid.uses_data:
            if cfg.data_count is None or cfg.data_count < 1:
                raise ConfigError(f"{pid} needs a measurement count (data_count >= 1)")
        elif cfg.data_count is not None:
            raise ConfigError(f"{pid} does not use measurements; drop data_count")
        if cfg.adaptive_weights and not pid.uses_data:
            raise ConfigError(f"adaptive weights rebalance the data term; {pid} has none")
        return cfg


@dataclass
class TrainReport:
    problem: str
    config: dict
    history: dict = field(default_factory=dict)
    final_losses: dict = field(default_factory=dict)
    final: dict = field(default_factory=dict)
    runtime_seconds: float = 0.0
    notes: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"problem": self.problem, "config": self.config, "final": self.final,
                "final_losses": self.final_losses, "history": self.history,
                "runtime_seconds": self.runtime_seconds, "notes": self.notes}

    def write_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1)

    @classmethod
    def read_json(cls, path) -> "TrainReport":
        with open(path) as fh:
            d = json.load(fh)
        return cls(d["problem"], d["config"], d.get("history", {}), d.get("final_losses", {}),
                   d.get("final", {}), d.get("runtime_seconds", 0.0), d.get("notes", []))


class TrainResult(NamedTuple):
    nets: dict
    constants: dict
    report: TrainReport
    dataset: Dataset | None = None

    @property
    def model(self) -> TrainedModel:
        return TrainedModel(get_problem(self.report.problem), self.nets["u"], self.nets.get("s"),
                            dict(self.constants))


def _config_echo(pid, cfg: TrainConfig) -> dict:
    d = dataclasses.asdict(cfg)
    d["hidden"] = list(cfg.hidden)
    d["rng"] = RNG_ALGORITHM
    d["dtype"] = "float64"
    return d


def train(problem_id, config: TrainConfig | None = None, dataset: Dataset | None = None) -> TrainResult:
    """Train the solution and boundary networks of one problem.

    Deterministic given ``config.seed``. Raises :class:`TrainingDiverged` (carrying
    the partial report) on a non-finite loss or gradient.
    """
    spec = get_problem(problem_id)
    cfg = (config or TrainConfig()).resolved(spec.id)
    pid = str(spec.id)
    seeds = np.random.SeedSequence(cfg.seed).spawn(3)
    if spec.id.uses_data and dataset is None:
        dataset = sample_measurements(pid, cfg.data_count, cfg.noise_level, cfg.seed)

    u = glorot_init(make_rng(seeds[0]), [len(spec.coords), *cfg.hidden, len(spec.u_outputs)])
    s = glorot_init(make_rng(seeds[1]), [len(spec.s_coords), *cfg.hidden, 1]) \
        if spec.learn_boundary else None
    batch_rng = make_rng(seeds[2])
    consts = dict(spec.constants)
    engine = BatchedLoss(spec)
    nu = u.n_params
    ns = s.n_params if s is not None else 0
    theta = np.concatenate([u.params, s.params if s is not None else np.empty(0),
                            np.array([consts[k] for k in spec.trainable], dtype=np.float64)])
    adam = adam_init(theta.size, lr=cfg.lr)
    weights = LossWeights(adaptive=cfg.adaptive_weights, target=DATA_TERM)
    if cfg.adaptive_weights:
        weights[DATA_TERM] = 1.0

    report = TrainReport(pid, _config_echo(pid, cfg))
    if spec.id.mode == "inv2k" and not cfg.adaptive_weights:
        report.notes.append("fixed-weight baseline trained for the configured iteration count")
    hist = report.history
    hist["iter"] = []
    hist["total"] = []
    hist["loss_terms"] = {n: [] for n in spec.loss_names}
    if cfg.adaptive_weights:
        hist["lambda"] = []
    for k in spec.trainable:
        hist[k] = []

    def record(i, ev):
        hist["iter"].append(i)
        hist["total"].append(ev.total)
        for n in spec.loss_names:
            hist["loss_terms"][n].append(ev.losses[n])
        if cfg.adaptive_weights:
            hist["lambda"].append(weights[DATA_TERM])
        for k in spec.trainable:
            hist[k].append(consts[k])

    t0 = time.perf_counter()

    def fail(i, why):
        report.runtime_seconds = time.perf_counter() - t0
        report.final = {"diverged_at": i}
        raise TrainingDiverged(f"{pid}: {why} at iteration {i}", report)

    for i in range(cfg.iterations):
        batches = draw_batches(spec, batch_rng, cfg.batch_size, dataset)
        ev = engine(u, s, consts, batches, weights.weights, want_group_grads=cfg.adaptive_weights)
        if not np.isfinite(ev.total):
            fail(i, "non-finite loss")
        if i % cfg.record_every == 0:
            record(i, ev)
        try:
            theta, adam = adam_step(adam, theta, ev.grad)
        except NonFiniteGradientError as exc:
            fail(i, str(exc))
        for j, k in enumerate(spec.trainable):
            theta[nu + ns + j] = project_positive(theta[nu + ns + j])
            consts[k] = float(theta[nu + ns + j])
        u = Mlp(u.layer_sizes, theta[:nu])
        if s is not None:
            s = Mlp(s.layer_sizes, theta[nu:nu + ns])
        if cfg.adaptive_weights:
            g_r = ev.group_grads[RESIDUAL_GROUP][:nu]
            g_d = ev.group_grads[spec.group_of(DATA_TERM)][:nu]
            weights[DATA_TERM] = adaptive_lambda(g_r, g_d, weights[DATA_TERM], weights.alpha)
        if log.isEnabledFor(logging.INFO) and (i + 1) % 1000 == 0:
            log.info("%s iter %d loss %.3e", pid, i + 1, ev.total)

    final_batches = draw_batches(spec, batch_rng, cfg.batch_size, dataset)
    ev = engine(u, s, consts, final_batches, weights.weights)
    if not np.isfinite(ev.total):
        fail(cfg.iterations, "non-finite loss")
    record(cfg.iterations, ev)
    report.final_losses = dict(ev.losses)
    report.runtime_seconds = time.perf_counter() - t0

    nets = {"u": u, "s": s}
    result = TrainResult(nets, consts, report, dataset)
    report.final = evaluate(result.model, pid)
    for k in spec.trainable:
        report.final[k] = consts[k]
    if cfg.adaptive_weights:
        report.final["lambda"] = weights[DATA_TERM]
    return result


def evaluate(model, problem_id, resolution=None) -> dict:
    """Relative L2 / max errors of u and s on the default evaluation grids."""
    return summarize(problem_id, model, resolution)
