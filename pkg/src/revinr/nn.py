"""Residual sine networks with hand-written reverse-mode gradients.

The family is fixed: a sine input layer, a trunk of residual sine blocks, and
one or more linear output heads (each optionally preceded by its own residual
blocks). A block computes ``0.5 * (x + sin(w * (W2 sin(w * (W1 x + b1)) + b2)))``.

Parameters live in an ordered dict keyed by name; the order is the declaration
order used by checkpoints and by :func:`parameter_count`.
"""
from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .exceptions import ArchitectureMismatchError, ConfigError, NumericError, UsageError

MAGIC = b"REVINRCK"
FORMAT_VERSION = 1


@dataclass(frozen=True)
class Architecture:
    width: int = 100
    blocks: int = 3
    head_outputs: tuple = (1,)
    head_blocks: int = 0
    in_features: int = 3
    omega_first: float = 30.0
    omega_hidden: float = 1.0
    dropout_rate: float = 0.0
    dropout_block: int | None = None
    head_init_scale: float = 1e-2

    def __post_init__(self):
        object.__setattr__(self, "head_outputs", tuple(int(k) for k in self.head_outputs))
        if self.width < 1 or self.blocks < 0 or self.head_blocks < 0:
            raise ConfigError(f"invalid widths/depths in {self}")
        if not self.head_outputs or min(self.head_outputs) < 1:
            raise ConfigError("need at least one head with at least one output")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError(f"dropout rate must be in [0, 1), got {self.dropout_rate}")
        if self.dropout_block is not None and not 0 <= self.dropout_block < self.blocks:
            raise ConfigError(f"dropout block {self.dropout_block} outside trunk of {self.blocks} blocks")

    def to_dict(self):
        d = asdict(self)
        d["head_outputs"] = list(self.head_outputs)
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def parameter_shapes(arch: Architecture) -> dict:
    """Ordered ``name -> shape`` map of every trainable tensor."""
    w = arch.width
    shapes = {"input.W": (w, arch.in_features), "input.b": (w,)}

    def block(prefix):
        shapes[f"{prefix}.W1"] = (w, w)
        shapes[f"{prefix}.b1"] = (w,)
        shapes[f"{prefix}.W2"] = (w, w)
        shapes[f"{prefix}.b2"] = (w,)

    for i in range(arch.blocks):
        block(f"block{i}")
    for h, k in enumerate(arch.head_outputs):
        for i in range(arch.head_blocks):
            block(f"head{h}.block{i}")
        shapes[f"head{h}.W"] = (k, w)
        shapes[f"head{h}.b"] = (k,)
    return shapes


def parameter_count(net_or_arch) -> int:
    arch = net_or_arch.arch if isinstance(net_or_arch, Network) else net_or_arch
    return sum(int(np.prod(s)) for s in parameter_shapes(arch).values())


@dataclass
class Network:
    arch: Architecture
    params: dict = field(repr=False)

    @property
    def dtype(self):
        return next(iter(self.params.values())).dtype

    def astype(self, dtype) -> "Network":
        return Network(self.arch, {k: v.astype(dtype) for k, v in self.params.items()})

    def copy(self) -> "Network":
        return Network(self.arch, {k: v.copy() for k, v in self.params.items()})


def init_network(arch: Architecture, rng: np.random.Generator, dtype=np.float32) -> Network:
    """Sine-network initialization: tight first layer, variance-preserving hidden layers,
    small linear heads so evidential/variance outputs start near their link midpoints."""
    params = {}
    for name, shape in parameter_shapes(arch).items():
        fan_in = arch.in_features if name.startswith("input.") else arch.width
        if name.startswith("input."):
            bound = 1.0 / fan_in
        elif ".block" in name or name.startswith("block"):
            bound = np.sqrt(6.0 / fan_in) / arch.omega_hidden
        else:
            bound = np.sqrt(6.0 / fan_in) * arch.head_init_scale
        params[name] = rng.uniform(-bound, bound, size=shape).astype(dtype)
    return Network(arch, params)


# --------------------------------------------------------------------------- forward


def _check_finite(a, layer):
    if not np.isfinite(a).all():
        raise NumericError("non-finite activation", layer=layer)


def _block_forward(p, prefix, x, omega, cache):
    z1 = omega * (x @ p[f"{prefix}.W1"].T + p[f"{prefix}.b1"])
    u = np.sin(z1)
    z2 = omega * (u @ p[f"{prefix}.W2"].T + p[f"{prefix}.b2"])
    out = 0.5 * (x + np.sin(z2))
    if cache is not None:
        cache[prefix] = (x, z1, u, z2)
    return out


def forward(net: Network, x, train=False, rng=None, cache=False):
    """Run the network on an ``(N, in_features)`` batch.

    Returns ``(outputs, tape)`` where ``outputs`` is a list with one ``(N, k)``
    array per head and ``tape`` holds activations for :func:`backward` (or
    ``None`` unless ``cache`` is set). Dropout is applied only when ``train``
    is true and a dropout site is configured; it is inverted, so evaluation
    needs no rescaling.
    """
    arch, p = net.arch, net.params
    x = np.asarray(x, dtype=net.dtype)
    tape = {} if cache else None

    z0 = arch.omega_first * (x @ p["input.W"].T + p["input.b"])
    h = np.sin(z0)
    _check_finite(h, "input")
    if tape is not None:
        tape["input"] = (x, z0)

    for i in range(arch.blocks):
        h = _block_forward(p, f"block{i}", h, arch.omega_hidden, tape)
        _check_finite(h, f"block{i}")
        if train and arch.dropout_block == i and arch.dropout_rate > 0.0:
            if rng is None:
                raise UsageError("train-mode dropout needs an rng")
            keep = 1.0 - arch.dropout_rate
            mask = (rng.random(h.shape) < keep).astype(h.dtype) / np.asarray(keep, dtype=h.dtype)
            h = h * mask
            if tape is not None:
                tape[f"dropout{i}"] = mask

    outputs = []
    for hd in range(len(arch.head_outputs)):
        g = h
        for i in range(arch.head_blocks):
            g = _block_forward(p, f"head{hd}.block{i}", g, arch.omega_hidden, tape)
        out = g @ p[f"head{hd}.W"].T + p[f"head{hd}.b"]
        _check_finite(out, f"head{hd}")
        if tape is not None:
            tape[f"head{hd}"] = g
        outputs.append(out)
    return outputs, tape


# --------------------------------------------------------------------------- backward


def _block_backward(p, prefix, dout, omega, tape, grads):
    x, z1, u, z2 = tape[prefix]
    dz2 = (0.5 * omega) * dout * np.cos(z2)
    grads[f"{prefix}.W2"] = dz2.T @ u
    grads[f"{prefix}.b2"] = dz2.sum(axis=0)
    dz1 = omega * (dz2 @ p[f"{prefix}.W2"]) * np.cos(z1)
    grads[f"{prefix}.W1"] = dz1.T @ x
    grads[f"{prefix}.b1"] = dz1.sum(axis=0)
    return 0.5 * dout + dz1 @ p[f"{prefix}.W1"]


def backward(net: Network, tape, grad_outputs) -> dict:
    """Gradients of a scalar loss given its gradients w.r.t. each head output."""
    if not tape:
        raise UsageError("backward needs the tape from forward(..., cache=True)")
    arch, p = net.arch, net.params
    if len(grad_outputs) != len(arch.head_outputs):
        raise UsageError(f"expected {len(arch.head_outputs)} output gradients, got {len(grad_outputs)}")
    grads = {}
    dh = None
    for hd, dout in enumerate(grad_outputs):
        dout = np.asarray(dout, dtype=net.dtype)
        g = tape[f"head{hd}"]
        grads[f"head{hd}.W"] = dout.T @ g
        grads[f"head{hd}.b"] = dout.sum(axis=0)
        dg = dout @ p[f"head{hd}.W"]
        for i in reversed(range(arch.head_blocks)):
            dg = _block_backward(p, f"head{hd}.block{i}", dg, arch.omega_hidden, tape, grads)
        dh = dg if dh is None else dh + dg

    for i in reversed(range(arch.blocks)):
        mask = tape.get(f"dropout{i}")
        if mask is not None:
            dh = dh * mask
        dh = _block_backward(p, f"block{i}", dh, arch.omega_hidden, tape, grads)

    x, z0 = tape["input"]
    dz0 = arch.omega_first * dh * np.cos(z0)
    grads["input.W"] = dz0.T @ x
    grads["input.b"] = dz0.sum(axis=0)
    return {name: grads[name] for name in p}


# --------------------------------------------------------------------------- optimizer


@dataclass
class StepDecay:
    """Piecewise-constant learning rate: ``base_lr * decay ** (epoch // step_size)``."""

    base_lr: float = 5e-5
    decay: float = 0.8
    step_size: int = 15

    def __post_init__(self):
        if not 0.0 < self.decay <= 1.0:
            raise ConfigError(f"decay must be in (0, 1], got {self.decay}")
        if self.step_size < 1:
            raise ConfigError(f"step size must be >= 1, got {self.step_size}")
        if not self.base_lr > 0.0:
            raise ConfigError(f"learning rate must be positive, got {self.base_lr}")

    def lr_at(self, epoch: int) -> float:
        if epoch < 0:
            raise ConfigError(f"epoch must be >= 0, got {epoch}")
        return self.base_lr * self.decay ** (epoch // self.step_size)


def lr_at(schedule: StepDecay, epoch: int) -> float:
    return schedule.lr_at(epoch)


class Adam:
    """Bias-corrected Adam. Moments are kept in the parameter dtype."""

    def __init__(self, params, beta1=0.9, beta2=0.999, eps=1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, params, grads, lr):
        """Update ``params`` in place."""
        if grads.keys() != self.m.keys():
            raise UsageError("gradient names do not match optimizer state")
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1**self.t
        c2 = 1.0 - b2**self.t
        for name, g in grads.items():
            p = params[name]
            if g.shape != p.shape:
                raise UsageError(f"{name}: gradient shape {g.shape} != parameter shape {p.shape}")
            g = g.astype(p.dtype, copy=False)
            m, v = self.m[name], self.v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            p -= (lr / c1) * m / (np.sqrt(v / c2) + self.eps)
        return params


# --------------------------------------------------------------------------- checkpoints


def _payload(arrays, names):
    return b"".join(np.ascontiguousarray(arrays[n], dtype="<f4").tobytes() for n in names)


def save_checkpoint(path, net: Network, optimizer: Adam | None = None, extra=None) -> Path:
    """Write the binary checkpoint and a JSON descriptor mirror beside it.

    Layout: 8-byte magic, u32 version, u32 descriptor length, UTF-8 JSON
    descriptor, then little-endian float32 sections (params, and Adam moments
    if an optimizer is given) in declaration order.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    names = list(net.params)
    sections = ["params"]
    if optimizer is not None:
        sections += ["adam_m", "adam_v"]
    descriptor = {
        "format_version": FORMAT_VERSION,
        "architecture": net.arch.to_dict(),
        "parameter_count": parameter_count(net),
        "tensors": [[n, list(net.params[n].shape)] for n in names],
        "sections": sections,
        "extra": extra or {},
    }
    if optimizer is not None:
        descriptor["adam"] = {"t": optimizer.t, "beta1": optimizer.beta1, "beta2": optimizer.beta2, "eps": optimizer.eps}
    desc = json.dumps(descriptor, sort_keys=True).encode()
    body = _payload(net.params, names)
    if optimizer is not None:
        body += _payload(optimizer.m, names) + _payload(optimizer.v, names)
    path.write_bytes(MAGIC + struct.pack("<II", FORMAT_VERSION, len(desc)) + desc + body)
    path.with_name(path.name + ".json").write_text(json.dumps(descriptor, indent=2, sort_keys=True))
    return path


def load_checkpoint(path, expected_arch: Architecture | None = None):
    """Return ``(network, optimizer_or_None, descriptor)``."""
    raw = Path(path).read_bytes()
    if raw[:8] != MAGIC:
        raise UsageError(f"{path}: not a checkpoint (bad magic)")
    version, desc_len = struct.unpack("<II", raw[8:16])
    if version != FORMAT_VERSION:
        raise UsageError(f"{path}: unsupported checkpoint version {version}")
    descriptor = json.loads(raw[16 : 16 + desc_len])
    arch = Architecture.from_dict(descriptor["architecture"])
    if expected_arch is not None and arch != expected_arch:
        raise ArchitectureMismatchError(expected_arch.to_dict(), arch.to_dict())
    offset = 16 + desc_len

    def read_section():
        nonlocal offset
        out = {}
        for name, shape in descriptor["tensors"]:
            n = int(np.prod(shape))
            out[name] = np.frombuffer(raw, dtype="<f4", count=n, offset=offset).reshape(shape).astype(np.float32)
            offset += 4 * n
        return out

    net = Network(arch, read_section())
    optimizer = None
    if "adam_m" in descriptor["sections"]:
        a = descriptor["adam"]
        optimizer = Adam(net.params, a["beta1"], a["beta2"], a["eps"])
        optimizer.t = a["t"]
        optimizer.m = read_section()
        optimizer.v = read_section()
    return net, optimizer, descriptor
