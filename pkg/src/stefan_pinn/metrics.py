"""Error measures, evaluation grids and plot-ready CSV exports."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .network import Mlp
from .problems import ProblemSpec, blend_two_phase, domain_mask, get_problem
from .sampling import grid

DEFAULT_RESOLUTION = {"1d1p": (100, 100), "1d2p": (100, 100), "2d1p": (45, 20, 11)}
BOUNDARY_RESOLUTION = {"1d1p": (200,), "1d2p": (200,), "2d1p": (20, 200)}


def _pair(pred, exact) -> tuple[np.ndarray, np.ndarray]:
    p = np.asarray(pred, dtype=np.float64).ravel()
    e = np.asarray(exact, dtype=np.float64).ravel()
    if p.shape != e.shape:
        raise ValueError(f"length mismatch: {p.size} predicted vs {e.size} exact")
    if p.size == 0:
        raise ValueError("empty vectors")
    return p, e


def relative_l2(pred, exact) -> float:
    p, e = _pair(pred, exact)
    denom = np.linalg.norm(e)
    if denom == 0:
        raise ValueError("exact values have zero norm; relative error undefined")
    return float(np.linalg.norm(p - e) / denom)


def linf_error(pred, exact) -> float:
    p, e = _pair(pred, exact)
    return float(np.max(np.abs(p - e)))


# -- models -------------------------------------------------------------------

class ExactModel:
    """Closed-form solution wrapped in the model interface."""

    def __init__(self, problem_id):
        self.spec = get_problem(problem_id)
        ins = [ad.variable(c) for c in self.spec.coords]
        phases = [ad._as_expr(p) for p in self.spec.exact_phases(*ins)]
        self._phases = ad.vectorize(phases, self.spec.coords)
        self._dphases = {
            i: ad.vectorize([ad.differentiate(p, c) for p in phases], self.spec.coords)
            for i, c in enumerate(self.spec.coords)}

    def phases(self, X: np.ndarray) -> np.ndarray:
        return np.stack(self._phases(*np.asarray(X, dtype=np.float64).T), axis=1)

    def phase_derivative(self, X: np.ndarray, axis: int) -> np.ndarray:
        return np.stack(self._dphases[axis](*np.asarray(X, dtype=np.float64).T), axis=1)

    def boundary(self, S: np.ndarray) -> np.ndarray:
        return np.asarray(self.spec.exact_boundary(*np.asarray(S, dtype=np.float64).T),
                          dtype=np.float64) * np.ones(len(S))


@dataclass
class TrainedModel:
    spec: ProblemSpec
    u_net: Mlp
    s_net: Mlp | None
    constants: dict

    def phases(self, X: np.ndarray) -> np.ndarray:
        return self.u_net(np.asarray(X, dtype=np.float64))

    def phase_derivative(self, X: np.ndarray, axis: int) -> np.ndarray:
        return self.u_net.jet(np.asarray(X, dtype=np.float64), first=(axis,)).d(axis)

    def boundary(self, S: np.ndarray) -> np.ndarray:
        S = np.asarray(S, dtype=np.float64)
        if self.s_net is None:
            return np.asarray(self.spec.exact_boundary(*S.T), dtype=np.float64) * np.ones(len(S))
        return self.s_net(S)[:, 0]


def predict_u(spec: ProblemSpec, model, X: np.ndarray) -> np.ndarray:
    """Solution values; two-phase outputs blended across the model's own boundary."""
    ph = model.phases(X)
    if ph.shape[1] == 1:
        return ph[:, 0]
    s = model.boundary(_boundary_inputs(spec, X))
    return blend_two_phase(ph[:, 0], ph[:, 1], s, X[:, 0])


def _boundary_inputs(spec: ProblemSpec, X: np.ndarray) -> np.ndarray:
    return np.stack([X[:, spec.coords.index(c)] for c in spec.s_coords], axis=1)


# -- grids --------------------------------------------------------------------

@dataclass
class EvalGrid:
    coords: tuple[str, ...]
    points: np.ndarray
    exact: np.ndarray
    predicted: np.ndarray
    s_coords: tuple[str, ...]
    s_points: np.ndarray
    s_exact: np.ndarray
    s_predicted: np.ndarray

    def __post_init__(self):
        if not (len(self.points) == len(self.exact) == len(self.predicted)) or not len(self.points):
            raise ValueError("evaluation grid needs equal, nonempty point/value arrays")

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([*self.coords, "u_exact", "u_pred", "abs_err"])
            for p, e, q in zip(self.points, self.exact, self.predicted):
                w.writerow([*(repr(float(c)) for c in p), repr(float(e)), repr(float(q)),
                            repr(float(abs(q - e)))])

    def boundary_to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([*self.s_coords, "s_exact", "s_pred", "abs_err"])
            for p, e, q in zip(self.s_points, self.s_exact, self.s_predicted):
                w.writerow([*(repr(float(c)) for c in p), repr(float(e)), repr(float(q)),
                            repr(float(abs(q - e)))])


def _axes(bounds, resolution) -> list[np.ndarray]:
    return [np.linspace(lo, hi, n) for (lo, hi), n in zip(bounds, resolution)]


def evaluation_grid(problem_id, model, resolution: Sequence[int] | None = None,
                    boundary_resolution: Sequence[int] | None = None,
                    mask_with: str = "predicted") -> EvalGrid:
    """Uniform grid over the sampling box, restricted to the model's domain.

    ``resolution`` follows the coordinate order (x, t) or (x, y, t);
    ``boundary_resolution`` follows the boundary coordinates (t) or (y, t).
    ``mask_with='exact'`` restricts by the exact boundary instead.
    """
    spec = get_problem(problem_id)
    resolution = tuple(resolution or DEFAULT_RESOLUTION[spec.family])
    boundary_resolution = tuple(boundary_resolution or BOUNDARY_RESOLUTION[spec.family])
    if len(resolution) != len(spec.coords):
        raise ValueError(f"resolution needs {len(spec.coords)} entries")
    X = grid(_axes(spec.box.bounds, resolution))
    S_in = _boundary_inputs(spec, X)
    s_for_mask = model.boundary(S_in) if mask_with == "predicted" else \
        np.asarray(spec.exact_boundary(*S_in.T), dtype=np.float64)
    mask = domain_mask(spec.id, X, s_for_mask)
    if not mask.any():
        raise ValueError("no grid point lies inside the predicted domain")
    X = X[mask]
    exact = np.asarray(spec.exact_u(*X.T), dtype=np.float64)
    pred = predict_u(spec, model, X)

    s_bounds = [spec.box.bounds[spec.coords.index(c)] for c in spec.s_coords]
    S = grid(_axes(s_bounds, boundary_resolution))
    s_exact = np.asarray(spec.exact_boundary(*S.T), dtype=np.float64) * np.ones(len(S))
    return EvalGrid(spec.coords, X, exact, pred, spec.s_coords, S, s_exact, model.boundary(S))


def summarize(problem_id, model, resolution=None) -> dict[str, float]:
    """Relative L2 and max errors of u and s (plus left-boundary recovery for 1d1p:inv1)."""
    spec = get_problem(problem_id)
    g = evaluation_grid(spec.id, model, resolution)
    out = {
        "rel_l2_u": relative_l2(g.predicted, g.exact),
        "linf_u": linf_error(g.predicted, g.exact),
        "rel_l2_s": relative_l2(g.s_predicted, g.s_exact),
        "linf_s": linf_error(g.s_predicted, g.s_exact),
    }
    ge = evaluation_grid(spec.id, model, resolution, mask_with="exact")
    out["rel_l2_u_exact_mask"] = relative_l2(ge.predicted, ge.exact)
    if str(spec.id) == "1d1p:inv1":
        t = np.linspace(0.0, 1.0, BOUNDARY_RESOLUTION["1d1p"][0])
        X = np.stack([np.zeros_like(t), t], axis=1)
        exact = ExactModel(spec.id)
        out["rel_l2_u_left"] = relative_l2(model.phases(X)[:, 0], exact.phases(X)[:, 0])
        out["rel_l2_ux_left"] = relative_l2(model.phase_derivative(X, 0)[:, 0],
                                            exact.phase_derivative(X, 0)[:, 0])
    return out
