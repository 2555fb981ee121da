"""Fully connected Q-network with ReLU hidden layers, Adam and checkpoints."""

from __future__ import annotations

import os
import struct
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import kernels
from .kernels import _pykernels

HIDDEN = (1200, 600)
MAGIC = "SPARTQ"
VERSION = "v1"


class CheckpointError(ValueError):
    pass


def q_network_dims(g: int) -> list[int]:
    return [(g + 1) * (g + 1) * 3, *HIDDEN, 2 * g * g]


class Mlp:
    """Dense layers ``x @ W + b``; weights are stored (fan_in, fan_out)."""

    def __init__(self, dims, rng: np.random.Generator | int | None = None, dtype=np.float32):
        self.dims = [int(d) for d in dims]
        if len(self.dims) < 2 or min(self.dims) < 1:
            raise ValueError(f"bad layer dims {dims}")
        self.dtype = np.dtype(dtype)
        if not isinstance(rng, np.random.Generator):
            rng = np.random.default_rng(rng)
        self.weights = []
        self.biases = []
        last = len(self.dims) - 2
        for k, (fan_in, fan_out) in enumerate(zip(self.dims[:-1], self.dims[1:])):
            # He-uniform for ReLU layers, LeCun-uniform for the linear head
            limit = np.sqrt((3.0 if k == last else 6.0) / fan_in)
            self.weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)).astype(self.dtype))
            self.biases.append(np.zeros(fan_out, dtype=self.dtype))

    @classmethod
    def zeros(cls, dims, dtype=np.float32) -> "Mlp":
        net = cls.__new__(cls)
        net.dims = [int(d) for d in dims]
        net.dtype = np.dtype(dtype)
        net.weights = [np.zeros((a, b), dtype=net.dtype) for a, b in zip(net.dims[:-1], net.dims[1:])]
        net.biases = [np.zeros(b, dtype=net.dtype) for b in net.dims[1:]]
        return net

    def params(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def copy(self) -> "Mlp":
        net = Mlp.__new__(Mlp)
        net.dims = list(self.dims)
        net.dtype = self.dtype
        net.weights = [w.copy() for w in self.weights]
        net.biases = [b.copy() for b in self.biases]
        return net

    def astype(self, dtype) -> "Mlp":
        net = self.copy()
        net.dtype = np.dtype(dtype)
        net.weights = [w.astype(dtype) for w in net.weights]
        net.biases = [b.astype(dtype) for b in net.biases]
        return net

    def _check_input(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=self.dtype)
        if x.ndim == 1:
            x = x[None, :]
        if x.ndim != 2 or x.shape[1] != self.dims[0]:
            raise ValueError(f"expected input width {self.dims[0]}, got shape {x.shape}")
        return x

    def forward_cache(self, x) -> tuple[np.ndarray, list[np.ndarray]]:
        """Output plus the per-layer inputs needed by ``backward``."""
        a = self._check_input(x)
        acts = [a]
        last = len(self.weights) - 1
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = a @ w + b
            a = z if k == last else np.maximum(z, 0)
            acts.append(a)
        return a, acts

    def forward(self, x) -> np.ndarray:
        return self.forward_cache(x)[0]

    def l2(self) -> float:
        """Sum of squared weights (biases excluded)."""
        return float(sum(np.sum(np.square(w), dtype=np.float64) for w in self.weights))


@dataclass
class GradientSet:
    dw: list[np.ndarray]
    db: list[np.ndarray]

    def flat(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.dw, self.db):
            out += [w, b]
        return out

    def all_finite(self) -> bool:
        return all(np.isfinite(g).all() for g in self.flat())


def forward(net: Mlp, states) -> np.ndarray:
    return net.forward(states)


def backward(net: Mlp, states, upstream, l2: float = 0.0, cache=None) -> GradientSet:
    """Gradients of ``sum(upstream * Q) + l2 * sum(W**2)`` w.r.t. all parameters.

    ``cache`` is the activation list from ``forward_cache`` on ``states``.
    """
    if cache is None:
        _, cache = net.forward_cache(states)
    dz = np.asarray(upstream, dtype=net.dtype)
    if dz.ndim == 1:
        dz = dz[None, :]
    if dz.shape != cache[-1].shape:
        raise ValueError(f"upstream shape {dz.shape} does not match output {cache[-1].shape}")
    n = len(net.weights)
    dw = [None] * n
    db = [None] * n
    for k in range(n - 1, -1, -1):
        a_prev = cache[k]
        dw[k] = a_prev.T @ dz
        if l2:
            dw[k] = dw[k] + (2.0 * l2) * net.weights[k]
        db[k] = dz.sum(axis=0, dtype=np.float64).astype(net.dtype)
        if k > 0:
            dz = (dz @ net.weights[k].T) * (a_prev > 0)
    return GradientSet(dw, db)


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_net(cls, net: Mlp, lr: float = 1e-3) -> "AdamState":
        return cls([np.zeros_like(p) for p in net.params()], [np.zeros_like(p) for p in net.params()], lr=lr)


def adam_step(net: Mlp, grads: GradientSet, opt: AdamState) -> Mlp:
    """Bias-corrected Adam update applied in place; refuses non-finite grads."""
    params = net.params()
    flat = grads.flat()
    if len(flat) != len(params) or any(g.shape != p.shape for g, p in zip(flat, params)):
        raise ValueError("gradient shapes do not match the network")
    if not grads.all_finite():
        raise FloatingPointError("non-finite gradient; refusing to update")
    opt.t += 1
    c1 = 1.0 - opt.beta1**opt.t
    c2 = 1.0 - opt.beta2**opt.t
    for p, g, m, v in zip(params, flat, opt.m, opt.v):
        if p.dtype == np.float32 and p.flags.c_contiguous and m.flags.c_contiguous and v.flags.c_contiguous:
            kernels.adam_update(p, np.ascontiguousarray(g, dtype=np.float32), m, v, opt.lr, opt.beta1, opt.beta2, opt.eps, c1, c2)
        else:
            _pykernels.adam_update(p, g, m, v, opt.lr, opt.beta1, opt.beta2, opt.eps, c1, c2)
    return net


def sync_target(main: Mlp, target: Mlp) -> Mlp:
    if main.dims != target.dims:
        raise ValueError(f"cannot sync {main.dims} into {target.dims}")
    for dst, src in zip(target.params(), main.params()):
        np.copyto(dst, src)
    return target


def atomic_write_bytes(path, data: bytes):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def checkpoint_bytes(net: Mlp, opt: AdamState) -> bytes:
    if len(net.dims) != 4:
        raise CheckpointError("checkpoints hold networks with exactly two hidden layers")
    header = f"{MAGIC} {VERSION} {' '.join(map(str, net.dims))}\n".encode()
    blobs = [header]
    for group in (net.params(), opt.m, opt.v):
        for arr in group:
            blobs.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    blobs.append(struct.pack("<Q", opt.t))
    return b"".join(blobs)


def save_checkpoint(path, net: Mlp, opt: AdamState):
    """Header line, then little-endian float32 parameters (per layer: weights
    then bias), Adam first moments, second moments, and a uint64 step count."""
    atomic_write_bytes(path, checkpoint_bytes(net, opt))


def load_checkpoint(path, expected_dims=None) -> tuple[Mlp, AdamState]:
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from None
    nl = raw.find(b"\n")
    if nl < 0:
        raise CheckpointError("checkpoint header missing")
    fields = raw[:nl].decode("ascii", errors="replace").split()
    if len(fields) != 6 or fields[0] != MAGIC:
        raise CheckpointError(f"not a {MAGIC} checkpoint")
    if fields[1] != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {fields[1]!r}, expected {VERSION}")
    try:
        dims = [int(f) for f in fields[2:]]
    except ValueError:
        raise CheckpointError("malformed dims in checkpoint header") from None
    if expected_dims is not None and list(expected_dims) != dims:
        raise CheckpointError(f"checkpoint dims {dims} do not match expected dims {list(expected_dims)}")
    net = Mlp.zeros(dims)
    opt = AdamState.for_net(net)
    body = raw[nl + 1 :]
    need = 3 * sum(p.size for p in net.params()) * 4 + 8
    if len(body) != need:
        raise CheckpointError(f"checkpoint body is {len(body)} bytes, expected {need} (truncated or corrupt)")
    offset = 0
    for group in (net.params(), opt.m, opt.v):
        for arr in group:
            n = arr.size * 4
            arr[...] = np.frombuffer(body, dtype="<f4", count=arr.size, offset=offset).reshape(arr.shape)
            offset += n
    (opt.t,) = struct.unpack_from("<Q", body, offset)
    if not all(np.isfinite(p).all() for p in net.params()):
        raise CheckpointError("checkpoint holds non-finite parameters")
    return net, opt
