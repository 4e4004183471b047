"""Batched loss values and parameter gradients for training.

Each group's residuals are compiled once, together with their partial
derivatives in every quantity they use. Per call, the networks are evaluated
with :meth:`Mlp.jet` at the group's points; per-point cotangents of the
quantities flow back through :meth:`Mlp.jet_backward`. In interface groups the
solution is evaluated at ``x = s``, so the input gradient in ``x`` is added to
the boundary cotangent.
"""
from __future__ import annotations

import ctypes
import functools
import sys
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from . import autodiff as ad
from .network import Mlp
from .problems import ProblemSpec, ProblemError, quantity_names, split_quantity


@functools.lru_cache(maxsize=None)
def tune_allocator() -> bool:
    """Keep freed blocks in the glibc heap instead of returning them to the OS.

    Training allocates many same-sized ~100 kB temporaries per step; with the
    default thresholds each one is a fresh mmap and page-faults on first touch,
    which roughly doubles the step time. No-op elsewhere.
    """
    if not sys.platform.startswith("linux"):
        return False
    try:
        libc = ctypes.CDLL("libc.so.6")
        M_TRIM_THRESHOLD, M_TOP_PAD, M_MMAP_THRESHOLD = -1, -2, -3
        ok = libc.mallopt(M_MMAP_THRESHOLD, 1 << 28)
        ok &= libc.mallopt(M_TRIM_THRESHOLD, 1 << 30)
        ok &= libc.mallopt(M_TOP_PAD, 1 << 26)
        return bool(ok)
    except (OSError, AttributeError):
        return False


@dataclass
class LossEval:
    losses: dict[str, float]
    total: float
    grad: np.ndarray
    group_grads: dict[str, np.ndarray] = field(default_factory=dict)


@dataclass
class _Compiled:
    group: str
    site: str
    names: list[str]
    program: object
    # per term: (loss name, output index of r, [(symbol, output index of dr/dsymbol)])
    terms: list[tuple[str, int, list[tuple[str, int]]]]
    u_first: tuple[int, ...]
    u_second: tuple[int, ...]
    s_first: tuple[int, ...]
    needs_u: bool
    needs_s: bool


class BatchedLoss:
    def __init__(self, spec: ProblemSpec):
        tune_allocator()
        self.spec = spec
        qn = quantity_names(spec)
        self._u_q = set(qn["u"])
        self._s_q = set(qn["s"])
        symbols = {n: ad.variable(n) for n in
                   [*qn["u"], *qn["s"], *qn["coords"], *qn["constants"], *qn["data"]]}
        self._compiled = [self._compile(g, symbols) for g in spec.groups]
        if not spec.learn_boundary:
            ins = [ad.variable("s_in_" + c) for c in spec.s_coords]
            s = ad._as_expr(spec.exact_boundary(*ins))
            outs = [s] + [ad.differentiate(s, v.name) for v in ins]
            self._s_exact = ad.vectorize(outs, [v.name for v in ins])

    def _axis(self, coords, letter):
        return coords.index(letter)

    def _compile(self, group, symbols) -> _Compiled:
        spec = self.spec
        terms = spec.terms_in(group.name)
        exprs, table, used_all = [], [], set()
        for term in terms:
            try:
                r = ad._as_expr(term.residual(symbols))
            except KeyError as exc:
                raise ProblemError(f"term {term.name!r} uses unknown quantity {exc}") from None
            used = sorted(ad.free_variables(r))
            used_all.update(used)
            ri = len(exprs)
            exprs.append(r)
            partials = []
            for sym in used:
                partials.append((sym, len(exprs)))
                exprs.append(ad.differentiate(r, sym))
            table.append((term.loss_name, ri, partials))
        names = sorted(used_all | ({"s"} if group.site == "interface" else set()))
        u_first, u_second, s_first = [], [], []
        for n in names:
            base, d = split_quantity(n)
            if n in self._u_q and d:
                ax = self._axis(spec.coords, d[0])
                (u_first if len(d) == 1 else u_second).append(ax)
            elif n in self._s_q and d:
                s_first.append(self._axis(spec.s_coords, d))
        needs_u = any(n in self._u_q for n in names)
        needs_s = any(n in self._s_q for n in names)
        return _Compiled(group.name, group.site, names, ad.vectorize(exprs, names), table,
                         tuple(sorted(set(u_first))), tuple(sorted(set(u_second))),
                         tuple(sorted(set(s_first))), needs_u, needs_s)

    def n_params(self, u_net: Mlp, s_net: Mlp | None) -> int:
        n = u_net.n_params + (s_net.n_params if self.spec.learn_boundary else 0)
        return n + len(self.spec.trainable)

    def __call__(self, u_net: Mlp, s_net: Mlp | None, constants: Mapping[str, float],
                 batches: Mapping[str, Mapping[str, np.ndarray]],
                 weights: Mapping[str, float] | None = None,
                 want_group_grads: bool = False) -> LossEval:
        spec = self.spec
        if spec.learn_boundary and s_net is None:
            raise ProblemError(f"{spec.id} needs a boundary network")
        consts = dict(spec.constants)
        consts.update(constants)
        weights = weights or {}
        nu = u_net.n_params
        ns = s_net.n_params if spec.learn_boundary else 0
        losses: dict[str, float] = {}
        grad = np.zeros(nu + ns + len(spec.trainable))
        group_grads = {}
        total = 0.0
        for comp in self._compiled:
            batch = batches[comp.group]
            g = np.zeros_like(grad) if want_group_grads else grad
            total += self._group(comp, u_net, s_net, consts, batch, weights, losses, g, nu, ns)
            if want_group_grads:
                group_grads[comp.group] = g
                grad += g
        return LossEval(losses, total, grad, group_grads)

    def _group(self, comp: _Compiled, u_net, s_net, consts, batch, weights, losses, grad, nu, ns):
        spec = self.spec
        vals: dict[str, np.ndarray] = {}
        N = len(next(iter(batch.values())))
        sjet = None
        if comp.needs_s or comp.site == "interface":
            S_in = [np.asarray(batch[c], dtype=np.float64) for c in spec.s_coords]
            if spec.learn_boundary:
                sjet = s_net.jet(np.stack(S_in, axis=1), first=comp.s_first)
                vals["s"] = sjet.value[:, 0]
                for ax in comp.s_first:
                    vals[f"s_{spec.s_coords[ax]}"] = sjet.d(ax)[:, 0]
            else:
                outs = self._s_exact(*S_in)
                vals["s"] = outs[0]
                for i, c in enumerate(spec.s_coords):
                    vals[f"s_{c}"] = outs[1 + i]
        for c in spec.coords:
            if c in batch:
                vals[c] = np.asarray(batch[c], dtype=np.float64)
        if comp.site == "interface":
            vals["x"] = vals["s"]
        if "u_obs" in batch:
            vals["u_obs"] = np.asarray(batch["u_obs"], dtype=np.float64)
        for k, v in consts.items():
            vals[k] = np.float64(v)
        ujet = None
        if comp.needs_u:
            X = np.stack([vals[c] for c in spec.coords], axis=1)
            ujet = u_net.jet(X, first=comp.u_first + comp.u_second, second=comp.u_second)
            for j, out in enumerate(spec.u_outputs):
                vals[out] = ujet.value[:, j]
                for ax in ujet.first:
                    vals[f"{out}_{spec.coords[ax]}"] = ujet.d(ax)[:, j]
                for ax in ujet.second:
                    vals[f"{out}_{spec.coords[ax] * 2}"] = ujet.dd(ax)[:, j]
        try:
            outs = comp.program(*[vals[n] for n in comp.names])
        except KeyError as exc:
            raise ProblemError(f"group {comp.group!r} lacks quantity {exc}") from None

        cot: dict[str, np.ndarray] = {}
        total = 0.0
        for loss_name, ri, partials in comp.terms:
            r = outs[ri]
            val = float(np.mean(r * r))
            losses[loss_name] = losses.get(loss_name, 0.0) + val
            w = float(weights.get(loss_name, 1.0))
            total += w * val
            scale = (2.0 * w / N) * r
            for sym, pi in partials:
                c = scale * outs[pi]
                cot[sym] = cot[sym] + c if sym in cot else c

        if ujet is not None:
            n_out = len(spec.u_outputs)
            g_val = np.zeros((N, n_out))
            g_first = {ax: np.zeros((N, n_out)) for ax in ujet.first}
            g_second = {ax: np.zeros((N, n_out)) for ax in ujet.second}
            for j, out in enumerate(spec.u_outputs):
                if out in cot:
                    g_val[:, j] = cot[out]
                for ax in ujet.first:
                    key = f"{out}_{spec.coords[ax]}"
                    if key in cot:
                        g_first[ax][:, j] = cot[key]
                for ax in ujet.second:
                    key = f"{out}_{spec.coords[ax] * 2}"
                    if key in cot:
                        g_second[ax][:, j] = cot[key]
            interface = comp.site == "interface" and spec.learn_boundary
            gu, gX = u_net.jet_backward(ujet, g_val, g_first, g_second, want_input_grad=interface)
            grad[:nu] += gu
            if interface:
                x_cot = gX[:, 0] + (cot["x"] if "x" in cot else 0.0)
                cot["s"] = cot["s"] + x_cot if "s" in cot else x_cot
        if sjet is not None:
            s_val = cot.get("s")
            g_first = {ax: cot[f"s_{spec.s_coords[ax]}"][:, None] for ax in comp.s_first
                       if f"s_{spec.s_coords[ax]}" in cot}
            if s_val is not None or g_first:
                gs, _ = s_net.jet_backward(
                    sjet, None if s_val is None else np.broadcast_to(s_val, (N,))[:, None], g_first)
                grad[nu:nu + ns] += gs
        for i, k in enumerate(spec.trainable):
            if k in cot:
                grad[nu + ns + i] += float(np.sum(cot[k]))
        return total
