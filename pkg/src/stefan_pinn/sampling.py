"""Collocation batches and synthetic measurement datasets."""
from __future__ import annotations

import csv
import functools
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

RNG_ALGORITHM = "numpy.random.Generator(Philox)"


@dataclass(frozen=True)
class Rect:
    bounds: tuple[tuple[float, float], ...]

    def __post_init__(self):
        b = tuple((float(lo), float(hi)) for lo, hi in self.bounds)
        if not b or any(not lo < hi for lo, hi in b):
            raise ValueError(f"need lo < hi in every dimension, got {self.bounds}")
        object.__setattr__(self, "bounds", b)

    @property
    def dim(self) -> int:
        return len(self.bounds)

    @property
    def lo(self) -> np.ndarray:
        return np.array([b[0] for b in self.bounds])

    @property
    def hi(self) -> np.ndarray:
        return np.array([b[1] for b in self.bounds])


def make_rng(seed) -> np.random.Generator:
    """Philox-backed generator; accepts an int, a SeedSequence or a Generator."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.Generator(np.random.Philox(seed))


def uniform_rect(rng: np.random.Generator, rect: Rect, n: int) -> np.ndarray:
    """``n`` i.i.d. uniform points in ``rect``, shape (n, dim)."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    return rng.uniform(rect.lo, rect.hi, size=(n, rect.dim))


def draw_batches(spec, rng: np.random.Generator, batch_size: int, dataset: "Dataset | None" = None):
    """One fresh sample per loss-term group: ``{group: {coord: array}}``."""
    out = {}
    for group in spec.groups:
        if group.site == "data":
            if dataset is None:
                raise ValueError(f"{spec.id} needs a measurement dataset")
            cols = {c: dataset.points[:, i] for i, c in enumerate(spec.coords)}
            cols["u_obs"] = dataset.values
            out[group.name] = cols
            continue
        cols = {}
        for c, r in group.region.items():
            if isinstance(r, tuple):
                cols[c] = rng.uniform(r[0], r[1], size=batch_size)
            else:
                cols[c] = np.full(batch_size, float(r))
        out[group.name] = cols
    return out


@dataclass(frozen=True)
class Dataset:
    coords: tuple[str, ...]
    points: np.ndarray
    values: np.ndarray
    delta: float
    seed: int
    sigma: float

    def __len__(self):
        return len(self.values)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([*self.coords, "u", "delta", "seed"])
            for p, v in zip(self.points, self.values):
                w.writerow([*(repr(float(c)) for c in p), repr(float(v)), repr(self.delta), self.seed])

    @classmethod
    def from_csv(cls, path) -> "Dataset":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        header, body = rows[0], rows[1:]
        nc = len(header) - 3
        arr = np.array([[float(v) for v in r[:nc + 2]] for r in body]).reshape(-1, nc + 2)
        seed = int(body[0][-1]) if body else 0
        delta = float(arr[0, nc + 1]) if len(arr) else 0.0
        return cls(tuple(header[:nc]), arr[:, :nc], arr[:, nc], delta, seed, float("nan"))


def _grid_axes(spec, per_dim: int) -> list[np.ndarray]:
    return [np.linspace(lo, hi, per_dim) for lo, hi in spec.box.bounds]


@functools.lru_cache(maxsize=None)
def solution_sup_norm(problem_id: str, per_dim: int = 401) -> float:
    """max |u| over the closed exact domain by dense grid search."""
    from .problems import get_problem

    spec = get_problem(problem_id)
    axes = _grid_axes(spec, per_dim)
    best = 0.0
    # chunk over the first axis to bound memory in 3D
    for x in axes[0]:
        grids = np.meshgrid(*axes[1:], indexing="ij")
        coords = [np.full_like(grids[0], x), *grids]
        u = np.asarray(spec.exact_u(*coords))
        if spec.family != "1d2p":
            s = np.asarray(spec.exact_boundary(*[coords[spec.coords.index(c)] for c in spec.s_coords]))
            u = np.where(x <= s, u, 0.0)
        best = max(best, float(np.max(np.abs(u))))
    return best


def _inside(spec, pts: np.ndarray) -> np.ndarray:
    x = pts[:, 0]
    if spec.family == "1d2p":
        lo, hi = spec.box.bounds[0]
        return (x > lo) & (x < hi)
    s = spec.exact_boundary(*[pts[:, spec.coords.index(c)] for c in spec.s_coords])
    ok = (x > 0.0) & (x < s)
    for i, (lo, hi) in enumerate(spec.box.bounds[1:], start=1):
        ok &= (pts[:, i] > lo) & (pts[:, i] < hi)
    return ok


def sample_measurements(problem_id, M: int, delta: float, seed=0) -> Dataset:
    """``M`` noisy samples of the exact solution inside the exact domain.

    Points and noise come from separate child streams of ``seed``, so datasets
    that differ only in ``delta`` share their measurement locations. The noise
    standard deviation is ``delta * max|u|``.
    """
    from .problems import get_problem

    if M < 1:
        raise ValueError(f"M must be >= 1, got {M}")
    if not delta >= 0:
        raise ValueError(f"noise level must be >= 0, got {delta}")
    spec = get_problem(problem_id)
    seed_int = int(seed) if not isinstance(seed, np.random.SeedSequence) else int(seed.entropy)
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed_int)
    point_ss, noise_ss = ss.spawn(2)
    rng = make_rng(point_ss)
    chunks, have = [], 0
    while have < M:
        cand = uniform_rect(rng, spec.box, max(2 * M, 64))
        cand = cand[_inside(spec, cand)]
        chunks.append(cand)
        have += len(cand)
    pts = np.concatenate(chunks)[:M]
    exact = np.asarray(spec.exact_u(*pts.T), dtype=np.float64)
    sigma = float(delta) * solution_sup_norm(str(spec.id)) if delta > 0 else 0.0
    noise = make_rng(noise_ss).standard_normal(M) * sigma if sigma > 0 else np.zeros(M)
    return Dataset(spec.coords, pts, exact + noise, float(delta), seed_int, sigma)


def grid(axes: Sequence[np.ndarray]) -> np.ndarray:
    """Cartesian product of 1-D axes as an (N, d) array, first axis slowest."""
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)
