"""Small hand-differentiated function-approximator core.

Dense multilayer networks with a smooth (sigmoid-weighted linear) hidden
activation, a permutation-invariant point-set encoder (shared per-point
network + max pooling), analytic backward passes, and an adaptive-moment
optimizer.  Everything is float64 numpy; parameters live in ordered
name -> array dicts so optimizers and checkpoints stay generic.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np


def silu(x: np.ndarray) -> np.ndarray:
    s = 1.0 / (1.0 + np.exp(-x))
    return x * s


def silu_grad(x: np.ndarray) -> np.ndarray:
    s = 1.0 / (1.0 + np.exp(-x))
    return s * (1.0 + x * (1.0 - s))


# -- dense multilayer network --------------------------------------------------------


@dataclass(frozen=True)
class MlpSpec:
    """Layer widths from input to output; hidden layers use silu, output is linear."""

    widths: tuple

    def __post_init__(self):
        if len(self.widths) < 2:
            raise ValueError("an MLP needs at least input and output widths")
        if any(w <= 0 for w in self.widths):
            raise ValueError("widths must be positive")

    @property
    def n_layers(self) -> int:
        return len(self.widths) - 1


def mlp_init(spec: MlpSpec, rng: np.random.Generator, prefix: str = "") -> dict:
    """He-style initialization scaled for the smooth activation."""
    params = {}
    for i in range(spec.n_layers):
        fan_in, fan_out = spec.widths[i], spec.widths[i + 1]
        params[f"{prefix}W{i}"] = rng.normal(0.0, np.sqrt(2.0 / fan_in),
                                             (fan_in, fan_out))
        params[f"{prefix}b{i}"] = np.zeros(fan_out)
    return params


def mlp_forward(spec: MlpSpec, params: dict, x: np.ndarray, prefix: str = ""):
    """Forward pass on a batch (N, in) or single (in,) input.

    Returns (output, cache); the cache feeds mlp_backward.
    """
    x = np.asarray(x, dtype=float)
    squeeze = x.ndim == 1
    if squeeze:
        x = x[None]
    if x.shape[1] != spec.widths[0]:
        raise ValueError(f"input width {x.shape[1]} != spec width {spec.widths[0]}")
    pre, post = [], [x]
    h = x
    for i in range(spec.n_layers):
        z = h @ params[f"{prefix}W{i}"] + params[f"{prefix}b{i}"]
        pre.append(z)
        h = silu(z) if i < spec.n_layers - 1 else z
        post.append(h)
    out = h[0] if squeeze else h
    return out, {"pre": pre, "post": post, "squeeze": squeeze, "prefix": prefix}


def mlp_backward(spec: MlpSpec, params: dict, cache: dict, gy: np.ndarray):
    """Returns (parameter gradients, input gradient)."""
    gy = np.asarray(gy, dtype=float)
    if cache["squeeze"]:
        gy = gy[None]
    prefix = cache["prefix"]
    grads = {}
    g = gy
    for i in reversed(range(spec.n_layers)):
        if i < spec.n_layers - 1:
            g = g * silu_grad(cache["pre"][i])
        h_in = cache["post"][i]
        grads[f"{prefix}W{i}"] = h_in.T @ g
        grads[f"{prefix}b{i}"] = g.sum(axis=0)
        g = g @ params[f"{prefix}W{i}"].T
    gx = g[0] if cache["squeeze"] else g
    return grads, gx


# -- permutation-invariant set encoder ------------------------------------------------


@dataclass(frozen=True)
class SetEncoderSpec:
    """Shared per-point network followed by feature-wise max pooling."""

    point_widths: tuple = (2, 64, 64)

    def __post_init__(self):
        if len(self.point_widths) < 2:
            raise ValueError("per-point network needs at least two widths")

    @property
    def mlp(self) -> MlpSpec:
        return MlpSpec(self.point_widths)

    @property
    def out_width(self) -> int:
        return self.point_widths[-1]


def set_encoder_init(spec: SetEncoderSpec, rng: np.random.Generator,
                     prefix: str = "enc.") -> dict:
    return mlp_init(spec.mlp, rng, prefix)


def set_encode(spec: SetEncoderSpec, params: dict, points: np.ndarray,
               prefix: str = "enc."):
    """Encode point sets (N, d) or batches (B, N, d) into pooled features."""
    pts = np.asarray(points, dtype=float)
    squeeze = pts.ndim == 2
    if squeeze:
        pts = pts[None]
    if pts.shape[1] < 1:
        raise ValueError("point set must be nonempty")
    b, n, d = pts.shape
    flat, mcache = mlp_forward(spec.mlp, params, pts.reshape(b * n, d), prefix)
    per_point = flat.reshape(b, n, spec.out_width)
    arg = per_point.argmax(axis=1)                       # (b, f)
    feat = np.take_along_axis(per_point, arg[:, None, :], axis=1)[:, 0, :]
    cache = {"mlp": mcache, "arg": arg, "shape": (b, n, spec.out_width),
             "squeeze": squeeze, "prefix": prefix}
    return (feat[0] if squeeze else feat), cache


def set_encode_backward(spec: SetEncoderSpec, params: dict, cache: dict,
                        gfeat: np.ndarray):
    """Returns (parameter gradients, per-point input gradient)."""
    gfeat = np.asarray(gfeat, dtype=float)
    if cache["squeeze"]:
        gfeat = gfeat[None]
    b, n, f = cache["shape"]
    gper = np.zeros((b, n, f))
    np.put_along_axis(gper, cache["arg"][:, None, :], gfeat[:, None, :], axis=1)
    grads, gflat = mlp_backward(spec.mlp, params, cache["mlp"],
                                gper.reshape(b * n, f))
    gpts = gflat.reshape(b, n, -1)
    return grads, (gpts[0] if cache["squeeze"] else gpts)


# -- adaptive-moment optimizer --------------------------------------------------------


@dataclass
class Adam:
    lr: float = 2e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    debug: bool = False
    step_count: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def step(self, params: dict, grads: dict) -> None:
        """In-place bias-corrected adaptive-moment update."""
        self.step_count += 1
        t = self.step_count
        for name, p in params.items():
            g = grads.get(name)
            if g is None:
                continue
            if g.shape != p.shape:
                raise ValueError(f"gradient shape mismatch for {name}")
            if self.debug and not np.all(np.isfinite(g)):
                raise FloatingPointError(f"non-finite gradient in {name}")
            m = self.m.setdefault(name, np.zeros_like(p))
            v = self.v.setdefault(name, np.zeros_like(p))
            m += (1.0 - self.beta1) * (g - m)
            v += (1.0 - self.beta2) * (g * g - v)
            mhat = m / (1.0 - self.beta1 ** t)
            vhat = v / (1.0 - self.beta2 ** t)
            p -= self.lr * mhat / (np.sqrt(vhat) + self.eps)


def accumulate(total: dict, part: dict, scale: float = 1.0) -> dict:
    """Sum gradient dicts: total += scale * part (missing keys created)."""
    for k, g in part.items():
        if k in total:
            total[k] = total[k] + scale * g
        else:
            total[k] = scale * g
    return total


# -- checkpoints ----------------------------------------------------------------------

CKPT_MAGIC = b"graspfield-ckpt v1\n"


def save_params(path, params: dict, meta: dict | None = None) -> None:
    """Binary checkpoint: magic, JSON metadata line, then named float64 arrays."""
    meta = dict(meta or {})
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write((json.dumps(meta) + "\n").encode())
        fh.write(f"{len(params)}\n".encode())
        for name, arr in params.items():
            arr = np.ascontiguousarray(arr, dtype="<f8")
            shape = " ".join(str(s) for s in arr.shape)
            fh.write(f"{name} {shape}\n".encode())
            fh.write(arr.tobytes())


def load_params(path):
    """Returns (params dict in declared order, metadata dict)."""
    with open(path, "rb") as fh:
        magic = fh.readline()
        if magic != CKPT_MAGIC:
            raise ValueError(f"bad checkpoint magic: {magic!r}")
        meta = json.loads(fh.readline().decode())
        count = int(fh.readline().decode())
        params = {}
        for _ in range(count):
            head = fh.readline().decode().split()
            name, shape = head[0], tuple(int(s) for s in head[1:])
            n = int(np.prod(shape)) if shape else 1
            buf = fh.read(8 * n)
            if len(buf) != 8 * n:
                raise ValueError(f"truncated checkpoint while reading {name}")
            params[name] = np.frombuffer(buf, dtype="<f8").reshape(shape).copy()
    return params, meta
