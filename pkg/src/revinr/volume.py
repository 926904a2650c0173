"""Regular-grid scalar volumes: raw I/O, normalization, resampling, derived fields.

Arrays are held with shape ``(nx, ny, nz)`` and indexed ``data[i, j, k]``.
The flat order used on disk and for coordinate batches is x-fastest, which is
numpy's Fortran order for that shape.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .exceptions import ConfigError, DomainError, InvariantError, SizeMismatchError, VolumeIOError

DTYPES = {
    "f32le": np.dtype("<f4"),
    "f64le": np.dtype("<f8"),
    "u8": np.dtype("u1"),
    "u16le": np.dtype("<u2"),
}


@dataclass(frozen=True)
class NormParams:
    data_min: float
    data_max: float
    target_lo: float = -1.0
    target_hi: float = 1.0

    def __post_init__(self):
        if not self.data_max > self.data_min:
            raise DomainError(f"degenerate data range [{self.data_min}, {self.data_max}]")
        if not self.target_hi > self.target_lo:
            raise ConfigError(f"empty target range [{self.target_lo}, {self.target_hi}]")

    @property
    def scale(self) -> float:
        """Data units per normalized unit."""
        return (self.data_max - self.data_min) / (self.target_hi - self.target_lo)

    def normalize(self, x):
        x = np.asarray(x, dtype=np.float64)
        return (x - self.data_min) / self.scale + self.target_lo

    def denormalize(self, x):
        x = np.asarray(x, dtype=np.float64)
        return (x - self.target_lo) * self.scale + self.data_min

    def to_dict(self):
        return {"min": self.data_min, "max": self.data_max, "lo": self.target_lo, "hi": self.target_hi}

    @classmethod
    def from_dict(cls, d):
        return cls(float(d["min"]), float(d["max"]), float(d["lo"]), float(d["hi"]))


@dataclass(frozen=True)
class VolumeGrid:
    """A scalar field sampled on a regular grid.

    ``data`` has shape ``dims``; ``spacing`` is the physical step per axis.
    ``norm`` records how the values were normalized, if they were.
    """

    data: np.ndarray
    spacing: tuple = (1.0, 1.0, 1.0)
    norm: NormParams | None = None
    field_kind: str = "scalar"
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 3 or min(data.shape) < 1:
            raise InvariantError(f"volume data must be 3-D and non-empty, got shape {data.shape}")
        if not np.all(np.isfinite(data)):
            raise InvariantError("volume contains non-finite values")
        spacing = tuple(float(s) for s in self.spacing)
        if len(spacing) != 3 or min(spacing) <= 0:
            raise InvariantError(f"spacing must be three positive numbers, got {self.spacing}")
        data.flags.writeable = False
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "spacing", spacing)

    @classmethod
    def from_values(cls, values, dims, **kwargs):
        """Build from a flat x-fastest sequence."""
        values = np.asarray(values, dtype=np.float64).ravel()
        dims = tuple(int(d) for d in dims)
        if values.size != math.prod(dims):
            raise InvariantError(f"{values.size} values do not fill dims {dims}")
        return cls(values.reshape(dims, order="F"), **kwargs)

    @property
    def dims(self) -> tuple:
        return self.data.shape

    @property
    def values(self) -> np.ndarray:
        """Flat x-fastest view of the samples."""
        return self.data.ravel(order="F")

    def with_data(self, data, **changes):
        return replace(self, data=data, **changes)


def load_raw(path, dims, dtype="f32le", spacing=(1.0, 1.0, 1.0)) -> VolumeGrid:
    """Read a headerless x-fastest binary volume."""
    if dtype not in DTYPES:
        raise ConfigError(f"unknown dtype {dtype!r}; expected one of {sorted(DTYPES)}")
    np_dtype = DTYPES[dtype]
    dims = tuple(int(d) for d in dims)
    if len(dims) != 3 or min(dims) < 1:
        raise ConfigError(f"dims must be three positive integers, got {dims}")
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise VolumeIOError(f"cannot read volume {path}: {exc.strerror or exc}") from exc
    expected = math.prod(dims) * np_dtype.itemsize
    if len(raw) != expected:
        raise SizeMismatchError(path, expected, len(raw))
    values = np.frombuffer(raw, dtype=np_dtype).astype(np.float64)
    return VolumeGrid.from_values(values, dims, spacing=spacing)


def write_volume(path, vol: VolumeGrid, **extra) -> Path:
    """Write ``vol`` as little-endian float64 plus a JSON sidecar at ``<path>.json``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(vol.values.astype("<f8").tobytes())
    sidecar = {
        "dims": list(vol.dims),
        "spacing": list(vol.spacing),
        "dtype": "f64le",
        "norm": vol.norm.to_dict() if vol.norm is not None else None,
        "field_kind": vol.field_kind,
    }
    sidecar.update(extra)
    sidecar_path(path).write_text(json.dumps(sidecar, indent=2, sort_keys=True))
    return path


def sidecar_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".json")


def read_volume(path) -> VolumeGrid:
    """Read a volume previously written by :func:`write_volume`."""
    path = Path(path)
    try:
        sidecar = json.loads(sidecar_path(path).read_text())
    except OSError as exc:
        raise VolumeIOError(f"missing sidecar for {path}: {exc.strerror or exc}") from exc
    vol = load_raw(path, sidecar["dims"], sidecar.get("dtype", "f64le"), sidecar.get("spacing", (1, 1, 1)))
    norm = NormParams.from_dict(sidecar["norm"]) if sidecar.get("norm") else None
    known = {"dims", "spacing", "dtype", "norm", "field_kind"}
    return replace(
        vol,
        norm=norm,
        field_kind=sidecar.get("field_kind", "scalar"),
        meta={k: v for k, v in sidecar.items() if k not in known},
    )


def normalize(vol: VolumeGrid, lo=-1.0, hi=1.0):
    lo_v, hi_v = float(vol.data.min()), float(vol.data.max())
    if not hi_v > lo_v:
        raise DomainError(f"cannot normalize a constant volume (value {lo_v})")
    params = NormParams(lo_v, hi_v, float(lo), float(hi))
    out = params.normalize(vol.data)
    # pin the extremes so min->lo and max->hi hold exactly
    out[vol.data == lo_v] = params.target_lo
    out[vol.data == hi_v] = params.target_hi
    return vol.with_data(out, norm=params), params


def denormalize(vol: VolumeGrid, params: NormParams | None = None) -> VolumeGrid:
    params = params or vol.norm
    if params is None:
        raise ConfigError("volume carries no normalization parameters")
    return vol.with_data(params.denormalize(vol.data), norm=None)


def _check_points(dims, points):
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    if points.shape[-1] != 3:
        raise DomainError(f"points must have 3 components, got shape {points.shape}")
    upper = np.asarray(dims, dtype=np.float64) - 1.0
    bad = ~np.all((points >= 0.0) & (points <= upper), axis=1)
    if np.any(bad):
        raise DomainError(f"point {points[bad][0].tolist()} outside index domain [0, {upper.tolist()}]")
    return points


def trilinear_sample(vol: VolumeGrid, points):
    """Trilinear interpolation at continuous index coordinates.

    Accepts one point ``(x, y, z)`` or an ``(m, 3)`` array. No extrapolation.
    """
    single = np.ndim(points) == 1
    points = _check_points(vol.dims, points)
    data = vol.data
    idx0, frac = [], []
    for axis, n in enumerate(data.shape):
        p = points[:, axis]
        i0 = np.minimum(np.floor(p).astype(np.intp), max(n - 2, 0))
        idx0.append(i0)
        frac.append(p - i0)
    i1 = [np.minimum(i + 1, n - 1) for i, n in zip(idx0, data.shape)]
    tx, ty, tz = frac
    out = np.zeros(len(points))
    for cx, wx in ((idx0[0], 1 - tx), (i1[0], tx)):
        for cy, wy in ((idx0[1], 1 - ty), (i1[1], ty)):
            for cz, wz in ((idx0[2], 1 - tz), (i1[2], tz)):
                out += wx * wy * wz * data[cx, cy, cz]
    return float(out[0]) if single else out


def downsample(vol: VolumeGrid, factors) -> VolumeGrid:
    """Keep every f-th sample per axis, starting at index 0."""
    factors = tuple(int(f) for f in factors)
    if len(factors) != 3 or min(factors) < 1:
        raise DomainError(f"downsample factors must be >= 1, got {factors}")
    fx, fy, fz = factors
    spacing = tuple(s * f for s, f in zip(vol.spacing, factors))
    return vol.with_data(vol.data[::fx, ::fy, ::fz].copy(), spacing=spacing)


def upsample_trilinear(vol: VolumeGrid, target_dims, target_spacing=None) -> VolumeGrid:
    """Resample onto a finer grid by trilinear interpolation.

    By default target corners map to source corners. With ``target_spacing``
    the mapping follows physical position instead (target index ``j`` sits at
    ``j * target_spacing``), holding the last source sample beyond its extent;
    this is what makes stride-decimated samples reappear exactly.
    """
    target_dims = tuple(int(d) for d in target_dims)
    if len(target_dims) != 3 or any(t < s for t, s in zip(target_dims, vol.dims)):
        raise DomainError(f"target dims {target_dims} smaller than source dims {vol.dims}")
    axes = []
    for axis, (n_src, n_tgt) in enumerate(zip(vol.dims, target_dims)):
        j = np.arange(n_tgt, dtype=np.float64)
        if target_spacing is not None:
            p = np.minimum(j * target_spacing[axis] / vol.spacing[axis], n_src - 1)
        elif n_tgt == 1:
            p = np.zeros(1)
        else:
            p = j * (n_src - 1) / (n_tgt - 1)
        axes.append(p)
    px, py, pz = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([px.ravel(order="F"), py.ravel(order="F"), pz.ravel(order="F")], axis=1)
    values = trilinear_sample(vol, pts)
    spacing = tuple(target_spacing) if target_spacing is not None else tuple(
        s * (ns - 1) / (nt - 1) if nt > 1 else s for s, ns, nt in zip(vol.spacing, vol.dims, target_dims)
    )
    return vol.with_data(values.reshape(target_dims, order="F"), spacing=spacing)


def interpolation_error_field(vol: VolumeGrid, factors) -> VolumeGrid:
    """Absolute error left by stride decimation followed by trilinear reconstruction."""
    coarse = downsample(vol, factors)
    recon = upsample_trilinear(coarse, vol.dims, target_spacing=vol.spacing)
    return vol.with_data(np.abs(vol.data - recon.data), norm=None, field_kind="interp_error")


def gradient_magnitude(vol: VolumeGrid) -> VolumeGrid:
    """Euclidean norm of the finite-difference gradient (central inside, one-sided at edges)."""
    if min(vol.dims) < 2:
        raise DomainError(f"gradient needs at least 2 samples per axis, got dims {vol.dims}")
    grads = np.gradient(vol.data, *vol.spacing, edge_order=1)
    mag = np.sqrt(sum(g * g for g in grads))
    return vol.with_data(mag, norm=None, field_kind="gradient_magnitude")


def local_variance(vol: VolumeGrid, window=(2, 2, 2)) -> VolumeGrid:
    """Population variance over the window ``[i, i + w)`` per axis, clipped at the far edge."""
    window = tuple(int(w) for w in window)
    if len(window) != 3 or min(window) < 1 or any(w > n for w, n in zip(window, vol.dims)):
        raise DomainError(f"window {window} must be within [1, dims={vol.dims}]")
    data = vol.data
    nx, ny, nz = data.shape
    offsets = [(a, b, c) for a in range(window[0]) for b in range(window[1]) for c in range(window[2])]

    # deviations from the anchor voxel are exactly zero on constant windows
    total = np.zeros_like(data)
    count = np.zeros_like(data)
    for a, b, c in offsets:
        anchor = (slice(0, nx - a), slice(0, ny - b), slice(0, nz - c))
        total[anchor] += data[a:, b:, c:] - data[anchor]
        count[anchor] += 1.0
    mean_dev = total / count
    sq = np.zeros_like(data)
    for a, b, c in offsets:
        anchor = (slice(0, nx - a), slice(0, ny - b), slice(0, nz - c))
        d = data[a:, b:, c:] - data[anchor] - mean_dev[anchor]
        sq[anchor] += d * d
    return vol.with_data(sq / count, norm=None, field_kind="local_variance")


def grid_coordinates(dims) -> np.ndarray:
    """Normalized ``[-1, 1]^3`` coordinates of every grid point, x-fastest, shape ``(N, 3)``."""
    dims = tuple(int(d) for d in dims)
    if len(dims) != 3 or min(dims) < 1:
        raise ConfigError(f"dims must be three positive integers, got {dims}")
    axes = [-1.0 + 2.0 * np.arange(n) / (n - 1) if n > 1 else np.zeros(1) for n in dims]
    gx, gy, gz = np.meshgrid(*axes, indexing="ij")
    return np.stack([gx.ravel(order="F"), gy.ravel(order="F"), gz.ravel(order="F")], axis=1)
