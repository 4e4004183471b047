"""Fully-connected tanh networks.

Two evaluation paths share one flat parameter vector:

* :func:`forward` builds :class:`~stefan_pinn.autodiff.Expr` outputs over input
  and parameter variables (exact, small networks, used as a reference);
* :meth:`Mlp.jet` / :meth:`Mlp.jet_backward` evaluate a batch of points together
  with first and pure second input-derivatives, and back-propagate cotangents of
  all of those to the parameters and the inputs (training path).

Parameter layout is, per layer, the row-major ``(n_in, n_out)`` weight matrix
followed by the bias vector.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Hashable, Sequence

import numpy as np

from . import autodiff as ad
from .sampling import make_rng

DEFAULT_HIDDEN = (100, 100, 100)


def param_count(layer_sizes: Sequence[int]) -> int:
    return sum(a * b + b for a, b in zip(layer_sizes[:-1], layer_sizes[1:]))


def _check_sizes(layer_sizes) -> tuple[int, ...]:
    sizes = tuple(int(n) for n in layer_sizes)
    if len(sizes) < 2 or any(n <= 0 for n in sizes):
        raise ValueError(f"layer_sizes needs >= 2 positive entries, got {list(layer_sizes)}")
    return sizes


@dataclass
class Mlp:
    layer_sizes: tuple[int, ...]
    params: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.layer_sizes = _check_sizes(self.layer_sizes)
        self.params = np.asarray(self.params, dtype=np.float64)
        if self.params.shape != (param_count(self.layer_sizes),):
            raise ValueError(
                f"expected {param_count(self.layer_sizes)} parameters, got {self.params.shape}")

    @property
    def n_params(self) -> int:
        return self.params.size

    @property
    def n_in(self) -> int:
        return self.layer_sizes[0]

    @property
    def n_out(self) -> int:
        return self.layer_sizes[-1]

    def layers(self, flat: np.ndarray | None = None) -> list[tuple[np.ndarray, np.ndarray]]:
        """(W, b) views into ``flat`` (defaults to the network's own parameters)."""
        flat = self.params if flat is None else flat
        out, k = [], 0
        for a, b in zip(self.layer_sizes[:-1], self.layer_sizes[1:]):
            W = flat[k:k + a * b].reshape(a, b)
            k += a * b
            out.append((W, flat[k:k + b]))
            k += b
        return out

    def __call__(self, X: np.ndarray) -> np.ndarray:
        """Plain batched forward pass, ``X`` of shape (N, n_in) -> (N, n_out)."""
        H = np.asarray(X, dtype=np.float64)
        layers = self.layers()
        for W, b in layers[:-1]:
            H = np.tanh(H @ W + b)
        W, b = layers[-1]
        return H @ W + b

    def jet(self, X: np.ndarray, first: Sequence[int] = (), second: Sequence[int] = ()) -> "Jet":
        """Outputs plus input-derivatives at a batch of points.

        ``first`` lists input axes i for du/dx_i, ``second`` axes for d2u/dx_i2
        (each implies the matching first derivative).
        """
        X = np.asarray(X, dtype=np.float64)
        N, d = X.shape
        if d != self.n_in:
            raise ValueError(f"expected {self.n_in} inputs, got {d}")
        first = tuple(dict.fromkeys(tuple(first) + tuple(second)))
        second = tuple(dict.fromkeys(second))
        nf = len(first)
        S = 1 + nf + len(second)
        H = np.zeros((S * N, d))
        H[:N] = X
        for k, i in enumerate(first):
            H[(1 + k) * N:(2 + k) * N, i] = 1.0
        fidx = [first.index(i) for i in second]
        cache = []
        layers = self.layers()
        for W, b in layers[:-1]:
            Z = H @ W
            Z[:N] += b
            out = np.empty_like(Z)
            a = out[:N]
            np.tanh(Z[:N], out=a)
            s = a * a
            np.subtract(1.0, s, out=s)
            if nf:
                np.multiply(Z[N:(1 + nf) * N].reshape(nf, N, -1), s,
                            out=out[N:(1 + nf) * N].reshape(nf, N, -1))
            # second streams: s * (d2z - 2 a dz^2); the bracket is kept for backward
            brackets = []
            for k, fk in enumerate(fidx):
                dz = Z[(1 + fk) * N:(2 + fk) * N]
                rows = slice((1 + nf + k) * N, (2 + nf + k) * N)
                q = dz * dz
                q *= a
                q *= -2.0
                q += Z[rows]
                np.multiply(s, q, out=out[rows])
                brackets.append(q)
            cache.append((H, Z, a, s, brackets))
            H = out
        W, b = layers[-1]
        Y = H @ W
        Y[:N] += b
        cache.append((H,))
        return Jet(N, first, second, Y, cache)

    def jet_backward(self, jet: "Jet", g_value=None, g_first=None, g_second=None,
                     want_input_grad: bool = False):
        """Pull cotangents of jet outputs back to parameters (and inputs).

        ``g_first`` / ``g_second`` map input axis -> (N, n_out) cotangent.
        Returns ``(grad_params_flat, grad_X or None)``.
        """
        N, first, second = jet.n, jet.first, jet.second
        nf = len(first)
        G = np.zeros_like(jet.Y)
        if g_value is not None:
            G[:N] = g_value
        for i, g in (g_first or {}).items():
            k = first.index(i)
            G[(1 + k) * N:(2 + k) * N] = g
        for i, g in (g_second or {}).items():
            k = second.index(i)
            G[(1 + nf + k) * N:(2 + nf + k) * N] = g
        fidx = [first.index(i) for i in second]

        flat = np.empty(self.n_params)
        grads = self.layers(flat)
        layers = self.layers()
        H, = jet.cache[-1]
        W, _ = layers[-1]
        gW, gb = grads[-1]
        np.matmul(H.T, G, out=gW)
        np.sum(G[:N], axis=0, out=gb)
        GH = G @ W.T
        grad_X = None
        for li in range(len(layers) - 2, -1, -1):
            H, Z, a, s, brackets = jet.cache[li]
            W, _ = layers[li]
            GZ = np.empty_like(Z)
            g_a = GH[:N]
            g_s = None
            for k in range(nf):
                rows = slice((1 + k) * N, (2 + k) * N)
                t = GH[rows] * Z[rows]
                if g_s is None:
                    g_s = t
                else:
                    g_s += t
                np.multiply(GH[rows], s, out=GZ[rows])
            for k, fk in enumerate(fidx):
                rows = slice((1 + nf + k) * N, (2 + nf + k) * N)
                frows = slice((1 + fk) * N, (2 + fk) * N)
                dz = Z[frows]
                sg = GZ[rows]
                np.multiply(s, GH[rows], out=sg)
                g_s += GH[rows] * brackets[k]
                t = sg * dz
                t2 = t * a
                t2 *= 4.0
                GZ[frows] -= t2
                t *= dz
                t *= 2.0
                g_a -= t
            if g_s is not None:
                g_s *= a
                g_s *= 2.0
                g_a -= g_s
            np.multiply(g_a, s, out=GZ[:N])
            gW, gb = grads[li]
            np.matmul(H.T, GZ, out=gW)
            np.sum(GZ[:N], axis=0, out=gb)
            if li > 0:
                GH = GZ @ W.T
            elif want_input_grad:
                grad_X = GZ[:N] @ W.T
        return flat, grad_X


@dataclass
class Jet:
    n: int
    first: tuple[int, ...]
    second: tuple[int, ...]
    Y: np.ndarray = field(repr=False)
    cache: list = field(repr=False)

    @property
    def value(self) -> np.ndarray:
        return self.Y[:self.n]

    def d(self, axis: int) -> np.ndarray:
        k = self.first.index(axis)
        return self.Y[(1 + k) * self.n:(2 + k) * self.n]

    def dd(self, axis: int) -> np.ndarray:
        k = len(self.first) + self.second.index(axis)
        return self.Y[(1 + k) * self.n:(2 + k) * self.n]


def glorot_init(seed, layer_sizes: Sequence[int]) -> Mlp:
    """Uniform(-b, b) weights with b = sqrt(6 / (fan_in + fan_out)); zero biases."""
    sizes = _check_sizes(layer_sizes)
    rng = make_rng(seed)
    parts = []
    for a, b in zip(sizes[:-1], sizes[1:]):
        bound = np.sqrt(6.0 / (a + b))
        parts.append(rng.uniform(-bound, bound, size=a * b))
        parts.append(np.zeros(b))
    return Mlp(sizes, np.concatenate(parts))


def get_params(net: Mlp) -> np.ndarray:
    return net.params.copy()


def set_params(net: Mlp, flat) -> Mlp:
    flat = np.asarray(flat, dtype=np.float64)
    if flat.shape != (net.n_params,):
        raise ValueError(f"expected {net.n_params} parameters, got {flat.shape}")
    return Mlp(net.layer_sizes, flat.copy())


def param_names(net: Mlp, prefix: Hashable) -> list[tuple]:
    return [(prefix, i) for i in range(net.n_params)]


def forward(net: Mlp, inputs: Sequence, prefix: Hashable = "theta") -> list[ad.Expr]:
    """Symbolic forward pass; parameter i becomes the variable ``(prefix, i)``."""
    if len(inputs) != net.n_in:
        raise ValueError(f"expected {net.n_in} inputs, got {len(inputs)}")
    h = [ad._as_expr(v) for v in inputs]
    k = 0
    n_layers = len(net.layer_sizes) - 1
    for li, (a, b) in enumerate(zip(net.layer_sizes[:-1], net.layer_sizes[1:])):
        w0, b0 = k, k + a * b
        k = b0 + b
        nxt = []
        for j in range(b):
            z = ad.variable((prefix, b0 + j))
            for i in range(a):
                z = h[i] * ad.variable((prefix, w0 + i * b + j)) + z
            nxt.append(ad.tanh(z) if li < n_layers - 1 else z)
        h = nxt
    return h


def save_checkpoint(path, nets: Sequence[Mlp]) -> None:
    """One record per network: uint32 layer count, uint32 sizes, float64 params (LE)."""
    with open(path, "wb") as fh:
        for net in nets:
            fh.write(struct.pack("<I", len(net.layer_sizes)))
            fh.write(struct.pack(f"<{len(net.layer_sizes)}I", *net.layer_sizes))
            fh.write(net.params.astype("<f8").tobytes())


def load_checkpoint(path) -> list[Mlp]:
    data = Path(path).read_bytes()
    nets, pos = [], 0
    while pos < len(data):
        (L,) = struct.unpack_from("<I", data, pos)
        pos += 4
        sizes = struct.unpack_from(f"<{L}I", data, pos)
        pos += 4 * L
        n = param_count(sizes)
        params = np.frombuffer(data, dtype="<f8", count=n, offset=pos).astype(np.float64)
        pos += 8 * n
        nets.append(Mlp(sizes, params))
    return nets
