"""The nine benchmark Stefan problems.

Each problem is a list of loss terms. A term owns a residual written once as a
function of named pointwise quantities:

* coordinates ``x``, ``y``, ``t``;
* solution values and derivatives ``u``, ``u_x``, ``u_xx``, ``u_t`` ... (or
  ``u1``, ``u1_x``, ``u2_t`` ... for the two-output network);
* boundary values and derivatives ``s``, ``s_t``, ``s_y``;
* constants ``k1``, ``k2``; measured values ``u_obs``.

The same residual function is used by :func:`build_losses` (which feeds it
:class:`~stefan_pinn.autodiff.Expr` objects) and by the batched training engine
(which compiles it to numpy, together with its partial derivatives).

Terms are grouped; a group is one sample of points shared by its terms. In an
``interface`` group the solution is evaluated at ``x = s(...)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from . import autodiff as ad
from .network import Mlp, forward
from .sampling import Rect

FAMILIES = ("1d1p", "1d2p", "2d1p")
MODES = ("direct", "inv1", "inv2", "inv2k")
REGISTRY = (
    "1d1p:direct", "1d1p:inv1", "1d1p:inv2",
    "1d2p:direct", "1d2p:inv1", "1d2p:inv2", "1d2p:inv2k",
    "2d1p:direct", "2d1p:inv1", "2d1p:inv2",
)


class ProblemError(ValueError):
    pass


@dataclass(frozen=True)
class ProblemId:
    family: str
    mode: str

    @classmethod
    def parse(cls, text: "str | ProblemId") -> "ProblemId":
        if isinstance(text, ProblemId):
            return text
        if str(text) not in REGISTRY:
            raise ProblemError(f"unknown problem {text!r}; expected one of {', '.join(REGISTRY)}")
        family, mode = str(text).split(":")
        return cls(family, mode)

    def __str__(self):
        return f"{self.family}:{self.mode}"

    @property
    def uses_data(self) -> bool:
        return self.mode in ("inv2", "inv2k")


# -- generic math: Expr in, Expr out; arrays in, arrays out ---------------------

def _is_expr(*vals) -> bool:
    return any(isinstance(v, ad.Expr) for v in vals)


def _exp(v):
    return ad.exp(v) if _is_expr(v) else np.exp(v)


def _sqrt(v):
    return ad.sqrt(v) if _is_expr(v) else np.sqrt(v)


def blend_two_phase(u1, u2, s, x):
    """Phase-1 value where ``x <= s``, phase-2 value where ``x > s``."""
    if _is_expr(u1, u2, s, x):
        inside = ad.step(s - x)
        return inside * u1 + (1.0 - inside) * u2
    return np.where(np.asarray(x) <= np.asarray(s), u1, u2)


def normal_derivative_2d(u_x, u_y, s_y):
    """du/dn on the surface x = s(y, t), normal taken along grad(x - s)."""
    return (u_x - s_y * u_y) / _sqrt(1.0 + s_y * s_y)


def stefan_velocity_residual(u1_x, u2_x, s_dot, alpha1: float = -2.0, alpha2: float = 1.0):
    """Interface speed minus the weighted jump in heat flux."""
    return s_dot - (alpha1 * u1_x + alpha2 * u2_x)


# -- closed forms -------------------------------------------------------------

def _u_1d1p(x, t):
    return -0.5 * x * x + 2.0 * x - 0.5 - t


def _s_1d1p(t):
    return 2.0 - _sqrt(3.0 - 2.0 * t)


def _u1_1d2p(x, t):
    return 2.0 * (_exp((t + 0.5 - x) / 2.0) - 1.0)


def _u2_1d2p(x, t):
    return _exp(t + 0.5 - x) - 1.0


def _s_1d2p(t):
    return t + 0.5


def _u_2d1p(x, y, t):
    return _exp(1.25 * t - x + 0.5 * y + 0.5) - 1.0


def _s_2d1p(y, t):
    return 0.5 * y + 1.25 * t + 0.5


K1, K2 = 2.0, 1.0
S0_1D1P = 2.0 - math.sqrt(3.0)


# -- term tables --------------------------------------------------------------

Residual = Callable[[Mapping[str, object]], object]


@dataclass(frozen=True)
class Term:
    name: str
    group: str
    residual: Residual
    loss: str = ""

    @property
    def loss_name(self) -> str:
        return self.loss or self.name


@dataclass(frozen=True)
class Group:
    """A sample of points. ``region`` maps each sampled coordinate to a
    ``(lo, hi)`` range or a fixed value; ``site`` is ``point``, ``interface``
    (x comes from the boundary) or ``data`` (points come from a dataset)."""

    name: str
    site: str
    region: Mapping[str, object] = field(default_factory=dict)


@dataclass(frozen=True)
class ProblemSpec:
    id: ProblemId
    coords: tuple[str, ...]
    s_coords: tuple[str, ...]
    box: Rect
    u_outputs: tuple[str, ...]
    groups: tuple[Group, ...]
    terms: tuple[Term, ...]
    constants: Mapping[str, float]
    trainable: tuple[str, ...] = ()
    learn_boundary: bool = True

    @property
    def family(self) -> str:
        return self.id.family

    @property
    def loss_names(self) -> list[str]:
        return list(dict.fromkeys(t.loss_name for t in self.terms))

    def group(self, name: str) -> Group:
        for g in self.groups:
            if g.name == name:
                return g
        raise KeyError(name)

    def group_of(self, loss_name: str) -> str:
        for t in self.terms:
            if t.loss_name == loss_name:
                return t.group
        raise KeyError(loss_name)

    def terms_in(self, group: str) -> list[Term]:
        return [t for t in self.terms if t.group == group]

    # closed forms, positional in self.coords / self.s_coords
    def exact_phases(self, *coords):
        if self.family == "1d1p":
            return [_u_1d1p(*coords)]
        if self.family == "1d2p":
            return [_u1_1d2p(*coords), _u2_1d2p(*coords)]
        return [_u_2d1p(*coords)]

    def exact_boundary(self, *s_coords):
        if self.family == "1d1p":
            return _s_1d1p(*s_coords)
        if self.family == "1d2p":
            return _s_1d2p(*s_coords)
        return _s_2d1p(*s_coords)

    def exact_u(self, *coords):
        """Exact solution; two-phase fields are blended across the exact interface."""
        phases = self.exact_phases(*coords)
        if len(phases) == 1:
            return phases[0]
        s = self.exact_boundary(coords[-1])
        return blend_two_phase(phases[0], phases[1], s, coords[0])

    def s_of(self, coords: Mapping[str, object]):
        return [coords[c] for c in self.s_coords]


def _box(family: str) -> Rect:
    return {
        "1d1p": Rect(((0.0, 1.0), (0.0, 1.0))),
        "1d2p": Rect(((0.0, 2.0), (0.0, 1.0))),
        "2d1p": Rect(((0.0, 2.25), (0.0, 1.0), (0.0, 1.0))),
    }[family]


def _spec_1d1p(pid: ProblemId) -> ProblemSpec:
    T = (0.0, 1.0)
    X = (0.0, 1.0)
    groups = {
        "interior": Group("interior", "point", {"x": X, "t": T}),
        "initial": Group("initial", "point", {"x": X, "t": 0.0}),
        "left": Group("left", "point", {"x": 0.0, "t": T}),
        "interface": Group("interface", "interface", {"t": T}),
        "s_initial": Group("s_initial", "point", {"t": 0.0}),
        "data": Group("data", "data"),
    }
    r = Term("r", "interior", lambda q: q["u_t"] - q["u_xx"])
    u0 = Term("u0", "initial", lambda q: q["u"] - (-0.5 * q["x"] * q["x"] + 2.0 * q["x"] - 0.5))
    uNc = Term("uNc", "left", lambda q: q["u_x"] - 2.0)
    sbc = Term("sbc", "interface", lambda q: q["u"])
    sNc = Term("sNc", "interface", lambda q: q["u_x"] - _sqrt(3.0 - 2.0 * q["t"]))
    s0 = Term("s0", "s_initial", lambda q: q["s"] - S0_1D1P)
    data = Term("data", "data", lambda q: q["u"] - q["u_obs"])
    table = {
        "direct": [r, u0, uNc, sbc, sNc, s0],
        "inv1": [r, u0, uNc, sbc, sNc],
        "inv2": [data, r, sbc, sNc, s0],
    }
    return _assemble(pid, ("x", "t"), ("t",), ("u",), groups, table[pid.mode], {},
                     learn_boundary=pid.mode != "inv1")


def _spec_1d2p(pid: ProblemId) -> ProblemSpec:
    T = (0.0, 1.0)
    X = (0.0, 2.0)
    groups = {
        "interior": Group("interior", "point", {"x": X, "t": T}),
        "initial": Group("initial", "point", {"x": X, "t": 0.0}),
        "final": Group("final", "point", {"x": X, "t": 1.0}),
        "left": Group("left", "point", {"x": 0.0, "t": T}),
        "right": Group("right", "point", {"x": 2.0, "t": T}),
        "interface": Group("interface", "interface", {"t": T}),
        "s_initial": Group("s_initial", "point", {"t": 0.0}),
        "data": Group("data", "data"),
    }
    r1 = Term("r1", "interior", lambda q: q["u1_t"] - q["k1"] * q["u1_xx"])
    r2 = Term("r2", "interior", lambda q: q["u2_t"] - q["k2"] * q["u2_xx"])
    u0_1 = Term("u0_1", "initial", lambda q: q["u1"] - _u1_1d2p(q["x"], 0.0))
    u0_2 = Term("u0_2", "initial", lambda q: q["u2"] - _u2_1d2p(q["x"], 0.0))
    ubc_1 = Term("ubc_1", "left", lambda q: q["u1"] - _u1_1d2p(0.0, q["t"]))
    ubc_2 = Term("ubc_2", "right", lambda q: q["u2"] - _u2_1d2p(2.0, q["t"]))
    uT_1 = Term("uT_1", "final", lambda q: q["u1"] - _u1_1d2p(q["x"], 1.0))
    uT_2 = Term("uT_2", "final", lambda q: q["u2"] - _u2_1d2p(q["x"], 1.0))
    sbc_1 = Term("sbc_1", "interface", lambda q: q["u1"])
    sbc_2 = Term("sbc_2", "interface", lambda q: q["u2"])
    sNc = Term("sNc", "interface",
               lambda q: stefan_velocity_residual(q["u1_x"], q["u2_x"], q["s_t"]))
    s0 = Term("s0", "s_initial", lambda q: q["s"] - 0.5)
    data = Term("data", "data",
                lambda q: blend_two_phase(q["u1"], q["u2"], q["s"], q["x"]) - q["u_obs"])
    table = {
        "direct": [r1, r2, u0_1, u0_2, ubc_1, ubc_2, sbc_1, sbc_2, sNc, s0],
        "inv1": [r1, r2, u0_1, u0_2, uT_1, uT_2, sbc_1, sbc_2, sNc, s0],
        "inv2": [r1, r2, sbc_1, sbc_2, sNc, s0, data],
        "inv2k": [r1, r2, sbc_1, sbc_2, sNc, s0, data],
    }
    if pid.mode == "inv2k":
        return _assemble(pid, ("x", "t"), ("t",), ("u1", "u2"), groups, table[pid.mode],
                         {"k1": 0.1, "k2": 0.1}, trainable=("k1", "k2"))
    return _assemble(pid, ("x", "t"), ("t",), ("u1", "u2"), groups, table[pid.mode],
                     {"k1": K1, "k2": K2})


def _spec_2d1p(pid: ProblemId) -> ProblemSpec:
    T = (0.0, 1.0)
    X = (0.0, 2.25)
    Y = (0.0, 1.0)
    groups = {
        "interior": Group("interior", "point", {"x": X, "y": Y, "t": T}),
        "initial": Group("initial", "point", {"x": X, "y": Y, "t": 0.0}),
        "final": Group("final", "point", {"x": X, "y": Y, "t": 1.0}),
        "bottom": Group("bottom", "point", {"x": X, "y": 0.0, "t": T}),
        "left": Group("left", "point", {"x": 0.0, "y": Y, "t": T}),
        "top": Group("top", "point", {"x": X, "y": 1.0, "t": T}),
        "interface": Group("interface", "interface", {"y": Y, "t": T}),
        "s_initial": Group("s_initial", "point", {"y": Y, "t": 0.0}),
        "data": Group("data", "data"),
    }

    def flux(q):
        norm = _sqrt(1.0 + q["s_y"] * q["s_y"])
        return normal_derivative_2d(q["u_x"], q["u_y"], q["s_y"]) + q["s_t"] / norm

    r = Term("r", "interior", lambda q: q["u_t"] - (q["u_xx"] + q["u_yy"]))
    u0 = Term("u0", "initial", lambda q: q["u"] - _u_2d1p(q["x"], q["y"], 0.0))
    uT = Term("uT", "final", lambda q: q["u"] - _u_2d1p(q["x"], q["y"], 1.0))
    ubc = [
        Term("ubc_bottom", "bottom", lambda q: q["u"] - _u_2d1p(q["x"], 0.0, q["t"]), "ubc"),
        Term("ubc_left", "left", lambda q: q["u"] - _u_2d1p(0.0, q["y"], q["t"]), "ubc"),
        Term("ubc_top", "top", lambda q: q["u"] - _u_2d1p(q["x"], 1.0, q["t"]), "ubc"),
    ]
    sbc = Term("sbc", "interface", lambda q: q["u"])
    sNc = Term("sNc", "interface", flux)
    s0 = Term("s0", "s_initial", lambda q: q["s"] - (0.5 * q["y"] + 0.5))
    data = Term("data", "data", lambda q: q["u"] - q["u_obs"])
    table = {
        "direct": [r, u0, *ubc, sbc, sNc, s0],
        "inv1": [r, u0, uT, sbc, sNc, s0],
        "inv2": [data, r, sbc, sNc, s0],
    }
    return _assemble(pid, ("x", "y", "t"), ("y", "t"), ("u",), groups, table[pid.mode], {})


def _assemble(pid, coords, s_coords, outputs, groups, terms, constants, trainable=(),
              learn_boundary=True) -> ProblemSpec:
    used = list(dict.fromkeys(t.group for t in terms))
    return ProblemSpec(pid, coords, s_coords, _box(pid.family), outputs,
                       tuple(groups[g] for g in used), tuple(terms), dict(constants),
                       tuple(trainable), learn_boundary)


def get_problem(problem_id) -> ProblemSpec:
    pid = ProblemId.parse(problem_id)
    return {"1d1p": _spec_1d1p, "1d2p": _spec_1d2p, "2d1p": _spec_2d1p}[pid.family](pid)


def exact_solution(problem_id, point: Sequence[float]):
    """Exact u at a point; for two-phase problems also the two phase fields."""
    spec = get_problem(problem_id)
    point = tuple(float(p) for p in point)
    if len(point) != len(spec.coords):
        raise ProblemError(f"expected {len(spec.coords)} coordinates, got {len(point)}")
    u = float(spec.exact_u(*point))
    if len(spec.u_outputs) == 1:
        return u
    return u, tuple(float(v) for v in spec.exact_phases(*point))


def exact_boundary(problem_id, coords: Sequence[float]) -> float:
    spec = get_problem(problem_id)
    coords = tuple(float(c) for c in np.atleast_1d(coords))
    if len(coords) != len(spec.s_coords):
        raise ProblemError(f"expected {len(spec.s_coords)} boundary coordinates, got {len(coords)}")
    return float(spec.exact_boundary(*coords))


def domain_mask(problem_id, points: np.ndarray, s_predicted: np.ndarray) -> np.ndarray:
    """True where a point lies in the (predicted) physical domain."""
    spec = get_problem(problem_id)
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    if spec.family == "1d2p":
        return np.ones(len(points), dtype=bool)
    return points[:, 0] <= np.asarray(s_predicted, dtype=np.float64).reshape(-1)


# -- symbolic loss assembly ----------------------------------------------------

Latent = Callable[[Sequence[ad.Expr]], Sequence[ad.Expr]]


def _as_latent(obj, prefix: str) -> Latent:
    if isinstance(obj, Mlp):
        return lambda inputs: forward(obj, inputs, prefix)
    if callable(obj):
        return obj
    raise ProblemError(f"latent {prefix!r} must be an Mlp or a callable, got {type(obj).__name__}")


def exact_latents(problem_id) -> dict[str, Latent]:
    """Closed forms shaped like the networks (u phases, boundary)."""
    spec = get_problem(problem_id)
    return {"u": lambda inputs: list(spec.exact_phases(*inputs)),
            "s": lambda inputs: [spec.exact_boundary(*inputs)]}


_DERIV_SUFFIXES = ("", "_x", "_y", "_t", "_xx", "_yy")


def quantity_names(spec: ProblemSpec) -> dict[str, list[str]]:
    u = [o + sfx for o in spec.u_outputs for sfx in _DERIV_SUFFIXES
         if all(ch in spec.coords for ch in sfx[1:])]
    s = ["s"] + [f"s_{c}" for c in spec.s_coords]
    return {"u": u, "s": s, "coords": list(spec.coords),
            "constants": list(spec.constants), "data": ["u_obs"]}


def split_quantity(name: str) -> tuple[str, str]:
    """``'u1_xx'`` -> ``('u1', 'xx')``; ``'s'`` -> ``('s', '')``."""
    base, _, deriv = name.partition("_")
    return base, deriv


def _symbolic_quantities(spec: ProblemSpec, u_latent: Latent, s_latent: Latent):
    """Quantity Exprs over input variables named after the coordinates."""
    uin = [ad.variable(c) for c in spec.coords]
    sin = [ad.variable(c) for c in spec.s_coords]
    uq, sq = {}, {}
    for name, expr in zip(spec.u_outputs, u_latent(uin)):
        expr = ad._as_expr(expr)
        uq[name] = expr
        for c in spec.coords:
            d = ad.differentiate(expr, c)
            uq[f"{name}_{c}"] = d
            uq[f"{name}_{c}{c}"] = ad.differentiate(d, c)
    (s_expr,) = s_latent(sin)
    s_expr = ad._as_expr(s_expr)
    sq["s"] = s_expr
    for c in spec.s_coords:
        sq[f"s_{c}"] = ad.differentiate(s_expr, c)
    return uq, sq


class _LazyQuantities(dict):
    """Substitutes point values into quantity Exprs on first access."""

    def __init__(self, sources: Mapping[str, ad.Expr], mapping: Mapping, extra: Mapping):
        super().__init__(extra)
        self._sources = sources
        self._mapping = mapping

    def __missing__(self, key):
        if key not in self._sources:
            raise KeyError(f"quantity {key!r} not available")
        val = ad.substitute(self._sources[key], self._mapping)
        self[key] = val
        return val


def build_losses(problem_id, nets: Mapping[str, object], constants: Mapping[str, object] | None,
                 batches: Mapping[str, Mapping[str, np.ndarray]],
                 weights: Mapping[str, float] | None = None) -> dict[str, ad.Expr]:
    """Every loss term of the problem as a scalar Expr (mean of squared residuals).

    ``nets`` maps ``'u'`` (and ``'s'`` unless the boundary is known) to an
    :class:`Mlp` or to a callable taking input Exprs and returning output Exprs.
    Network parameters become variables ``('u', i)`` / ``('s', i)``.
    ``constants`` overrides the problem constants (floats or Exprs, e.g.
    variables for trainable diffusivities). ``batches`` maps group names to
    coordinate arrays as produced by :func:`stefan_pinn.sampling.draw_batches`.
    Terms sharing a loss name are summed.
    """
    spec = get_problem(problem_id)
    if "u" not in nets:
        raise ProblemError("missing network 'u'")
    u_latent = _as_latent(nets["u"], "u")
    if spec.learn_boundary:
        if "s" not in nets:
            raise ProblemError("missing network 's'")
        s_latent = _as_latent(nets["s"], "s")
    else:
        s_latent = exact_latents(spec.id)["s"]
    consts = dict(spec.constants)
    consts.update(constants or {})
    uq, sq = _symbolic_quantities(spec, u_latent, s_latent)

    losses: dict[str, ad.Expr] = {}
    for group in spec.groups:
        if group.name not in batches:
            raise ProblemError(f"missing batch for group {group.name!r}")
        batch = batches[group.name]
        n = len(next(iter(batch.values())))
        terms = spec.terms_in(group.name)
        sums = [ad.constant(0.0) for _ in terms]
        for i in range(n):
            point = {c: float(v[i]) for c, v in batch.items()}
            s_map = {c: point[c] for c in spec.s_coords if c in point}
            s_vals = _LazyQuantities(sq, s_map, {})
            u_map = dict(point)
            if group.site == "interface":
                u_map["x"] = s_vals["s"]
            extra = {c: ad._as_expr(u_map[c]) for c in spec.coords if c in u_map}
            extra.update({k: ad._as_expr(v) for k, v in consts.items()})
            if "u_obs" in point:
                extra["u_obs"] = ad.constant(point["u_obs"])
            q = _ChainQuantities(_LazyQuantities(uq, u_map, extra), s_vals, s_map,
                                 spec.s_coords)
            for j, term in enumerate(terms):
                res = ad._as_expr(term.residual(q))
                sums[j] = sums[j] + ad.square(res)
        for term, total in zip(terms, sums):
            w = 1.0 if weights is None else float(weights.get(term.loss_name, 1.0))
            mean = total / float(n)
            val = mean if w == 1.0 else w * mean
            name = term.loss_name
            losses[name] = losses[name] + val if name in losses else val
    return losses


class _ChainQuantities(Mapping):
    """u-side quantities first, then boundary quantities."""

    def __init__(self, uvals, svals, s_map, s_coords):
        self._u, self._s = uvals, svals
        self._s_ok = all(c in s_map for c in s_coords)

    def __getitem__(self, key):
        if key == "s" or key.startswith("s_"):
            if not self._s_ok:
                raise KeyError(f"boundary quantity {key!r} needs the boundary coordinates")
            return self._s[key]
        return self._u[key]

    def __iter__(self):
        return iter(())

    def __len__(self):
        return 0


def total_loss(losses: Mapping[str, ad.Expr]) -> ad.Expr:
    out = ad.constant(0.0)
    for v in losses.values():
        out = out + v
    return out
