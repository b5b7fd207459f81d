"""Rectangular node lattices and the lookup-table fields stored on them.

Nodes are flattened row-major (last dimension fastest).  Off-node evaluation
is multilinear over the enclosing cell, after clamping into the box.
"""

import itertools
import math
import re
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

__all__ = [
    "BoxGrid",
    "ScalarField",
    "PolicyField",
    "FieldFormatError",
    "interpolate",
    "interpolate_policy",
    "clamp_to_domain",
    "save_field",
    "load_field",
]

# Points closer than this (in cell units) to a node are snapped onto it, so
# node-coincident queries reproduce stored values bit for bit.
_SNAP = 1e-11


class FieldFormatError(ValueError):
    """Malformed field file or inconsistent field data."""


def _vec(values, name):
    arr = np.atleast_1d(np.asarray(values, dtype=float))
    if arr.ndim != 1:
        raise ValueError(f"{name} must be a vector")
    return tuple(float(v) for v in arr)


@dataclass(frozen=True)
class BoxGrid:
    """Uniform node lattice over the box ``[lower, upper]``."""

    lower: tuple
    upper: tuple
    nodes_per_dim: tuple

    def __post_init__(self):
        lower = _vec(self.lower, "lower")
        upper = _vec(self.upper, "upper")
        nodes = tuple(int(k) for k in np.atleast_1d(self.nodes_per_dim))
        if not (len(lower) == len(upper) == len(nodes)):
            raise ValueError("lower, upper and nodes_per_dim must have equal length")
        if any(lo >= hi for lo, hi in zip(lower, upper)):
            raise ValueError("grid requires lower < upper componentwise")
        if any(k < 2 for k in nodes):
            raise ValueError("grid requires at least 2 nodes per dimension")
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)
        object.__setattr__(self, "nodes_per_dim", nodes)

    @property
    def dim(self):
        return len(self.nodes_per_dim)

    @property
    def shape(self):
        return self.nodes_per_dim

    @property
    def size(self):
        return math.prod(self.nodes_per_dim)

    @cached_property
    def axes(self):
        """Node coordinates per axis, computed as lower + span*i/(k-1)."""
        out = []
        for lo, hi, k in zip(self.lower, self.upper, self.nodes_per_dim):
            i = np.arange(k, dtype=float)
            out.append(lo + (hi - lo) * i / (k - 1))
        return tuple(out)

    @cached_property
    def points(self):
        """All node coordinates, shape ``(size, dim)`` in flattening order."""
        mesh = np.meshgrid(*self.axes, indexing="ij")
        pts = np.stack([m.ravel() for m in mesh], axis=-1)
        pts.flags.writeable = False
        return pts

    @cached_property
    def _strides(self):
        strides = np.ones(self.dim, dtype=np.int64)
        for d in range(self.dim - 2, -1, -1):
            strides[d] = strides[d + 1] * self.nodes_per_dim[d + 1]
        return strides

    @cached_property
    def _lo(self):
        return np.asarray(self.lower)

    @cached_property
    def _hi(self):
        return np.asarray(self.upper)

    @property
    def has_origin(self):
        return all(np.any(ax == 0.0) for ax in self.axes)

    @property
    def origin_index(self):
        if not self.has_origin:
            raise ValueError("origin is not a node of this grid")
        return self.index_of(np.zeros(self.dim))

    @cached_property
    def corner_indices(self):
        idx = []
        for combo in itertools.product(*[(0, k - 1) for k in self.nodes_per_dim]):
            idx.append(int(np.dot(combo, self._strides)))
        return tuple(idx)

    def multi_index(self, index):
        return tuple(int(i) for i in np.unravel_index(int(index), self.shape))

    def coords_of(self, index):
        return self.points[int(index)].copy()

    def index_of(self, x):
        """Flat index of the node at coordinates ``x`` (must be a node)."""
        x = np.asarray(x, dtype=float).reshape(self.dim)
        t = (x - self._lo) / (self._hi - self._lo) * (np.asarray(self.shape) - 1)
        r = np.rint(t)
        if np.any(np.abs(t - r) > 1e-9) or np.any(r < 0) or np.any(r > np.asarray(self.shape) - 1):
            raise ValueError(f"{x.tolist()} is not a grid node")
        return int(np.dot(r.astype(np.int64), self._strides))

    def clamp(self, points):
        """Clamp an array of points ``(..., dim)``; returns (clamped, moved-mask)."""
        pts = np.asarray(points, dtype=float)
        clamped = np.clip(pts, self._lo, self._hi)
        moved = np.any(clamped != pts, axis=-1)
        return clamped, moved

    def locate(self, points):
        """Cell corners and multilinear weights for clamped points.

        Returns ``(index, weight)`` each of shape ``(P, 2**dim)``.
        """
        pts = np.asarray(points, dtype=float).reshape(-1, self.dim)
        pts = np.clip(pts, self._lo, self._hi)
        kmax = np.asarray(self.shape, dtype=float) - 1
        t = (pts - self._lo) / (self._hi - self._lo) * kmax
        r = np.rint(t)
        t = np.where(np.abs(t - r) < _SNAP, r, t)
        i0 = np.clip(np.floor(t), 0, kmax - 1)
        frac = t - i0
        i0 = i0.astype(np.int64)
        ncorner = 1 << self.dim
        index = np.zeros((pts.shape[0], ncorner), dtype=np.int64)
        weight = np.ones((pts.shape[0], ncorner))
        for c, offs in enumerate(itertools.product((0, 1), repeat=self.dim)):
            for d, o in enumerate(offs):
                index[:, c] += (i0[:, d] + o) * self._strides[d]
                weight[:, c] *= frac[:, d] if o else 1.0 - frac[:, d]
        return index, weight


def _readonly(arr):
    arr = np.array(arr, dtype=float)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class ScalarField:
    """One nonnegative real per grid node (a tabulated value function)."""

    grid: BoxGrid
    values: np.ndarray

    def __post_init__(self):
        values = _readonly(np.asarray(self.values, dtype=float).reshape(-1))
        if values.size != self.grid.size:
            raise FieldFormatError(
                f"expected {self.grid.size} values, got {values.size}"
            )
        if not np.all(np.isfinite(values)):
            raise FieldFormatError("field values must be finite")
        if np.any(values < 0):
            raise FieldFormatError("value fields must be nonnegative")
        object.__setattr__(self, "values", values)

    @classmethod
    def zeros(cls, grid):
        return cls(grid, np.zeros(grid.size))

    @classmethod
    def from_function(cls, grid, fn):
        return cls(grid, fn(grid.points))

    def __call__(self, x):
        return interpolate(self, x)

    def max(self):
        return float(self.values.max())

    def at_origin(self):
        return float(self.values[self.grid.origin_index])

    def table(self):
        return self.values.reshape(self.grid.shape)


@dataclass(frozen=True, eq=False)
class PolicyField:
    """One control vector per grid node, kept inside the box ``[lower, upper]``."""

    grid: BoxGrid
    controls: np.ndarray
    lower: tuple = field(default=None)
    upper: tuple = field(default=None)

    def __post_init__(self):
        controls = np.asarray(self.controls, dtype=float)
        if controls.ndim == 1:
            controls = controls.reshape(-1, 1)
        if controls.ndim != 2 or controls.shape[0] != self.grid.size:
            raise FieldFormatError(
                f"expected {self.grid.size} control rows, got shape {controls.shape}"
            )
        if not np.all(np.isfinite(controls)):
            raise FieldFormatError("policy controls must be finite")
        m = controls.shape[1]
        lower = _vec(self.lower if self.lower is not None else [-np.inf] * m, "lower")
        upper = _vec(self.upper if self.upper is not None else [np.inf] * m, "upper")
        if len(lower) != m or len(upper) != m:
            raise FieldFormatError("control bounds do not match control dimension")
        if np.any(controls < np.asarray(lower)) or np.any(controls > np.asarray(upper)):
            raise FieldFormatError("policy controls outside control bounds")
        object.__setattr__(self, "controls", _readonly(controls))
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)

    @property
    def control_dim(self):
        return self.controls.shape[1]

    def __call__(self, x):
        return interpolate_policy(self, x)


def _as_points(grid, x):
    x = np.asarray(x, dtype=float)
    if x.ndim == 0:
        x = x.reshape(1)
    if x.shape[-1] != grid.dim:
        if grid.dim == 1:
            x = x[..., None]
        else:
            raise ValueError(f"state has last dimension {x.shape[-1]}, grid has {grid.dim}")
    if not np.all(np.isfinite(x)):
        raise ValueError("cannot interpolate at a non-finite state")
    return x


def clamp_to_domain(grid, x):
    """Clamp ``x`` into the grid box. Returns ``(x_clamped, excursion_flag)``."""
    x = np.asarray(x, dtype=float)
    clamped, moved = grid.clamp(x)
    return clamped, bool(np.any(moved))


def interpolate(field_, x):
    """Multilinear interpolation of a ScalarField at ``x`` (clamped into the box).

    ``x`` may be one state or an array of states ``(..., n)``; a float is
    returned for a single state.
    """
    pts = _as_points(field_.grid, x)
    index, weight = field_.grid.locate(pts)
    out = np.sum(field_.values[index] * weight, axis=1)
    if pts.ndim == 1:
        return float(out[0])
    return out.reshape(pts.shape[:-1])


def interpolate_policy(field_, x):
    """Componentwise multilinear interpolation of stored controls, clipped to bounds."""
    pts = _as_points(field_.grid, x)
    index, weight = field_.grid.locate(pts)
    out = np.einsum("pc,pcm->pm", weight, field_.controls[index])
    out = np.clip(out, field_.lower, field_.upper)
    if pts.ndim == 1:
        return out[0]
    return out.reshape(pts.shape[:-1] + (field_.control_dim,))


# -- persistence --------------------------------------------------------------

_MAGIC = "# adp-field v1"
_KEY_RE = re.compile(r",\s*([a-z_]+)=")


def _fmt(v):
    return "%.17g" % v


def _fmt_list(values):
    return ",".join(_fmt(v) for v in values)


def save_field(field_, path):
    """Write a ScalarField or PolicyField as the v1 CSV format."""
    grid = field_.grid
    head = (
        f"{_MAGIC}, dims={grid.dim}, nodes={','.join(str(k) for k in grid.shape)}, "
        f"lower={_fmt_list(grid.lower)}, upper={_fmt_list(grid.upper)}, "
    )
    if isinstance(field_, ScalarField):
        head += "kind=scalar"
        rows = [_fmt(v) for v in field_.values]
    elif isinstance(field_, PolicyField):
        head += (
            f"kind=policy m={field_.control_dim}, "
            f"control_lower={_fmt_list(field_.lower)}, control_upper={_fmt_list(field_.upper)}"
        )
        rows = [_fmt_list(row) for row in field_.controls]
    else:
        raise TypeError(f"cannot save {type(field_).__name__}")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(head + "\n")
        fh.write("\n".join(rows) + "\n")


def _parse_header(line):
    if not line.startswith(_MAGIC):
        raise FieldFormatError("missing '# adp-field v1' header")
    rest = line[len(_MAGIC):].rstrip("\n")
    keys = list(_KEY_RE.finditer(rest))
    header = {}
    for a, b in zip(keys, keys[1:] + [None]):
        end = b.start() if b is not None else len(rest)
        header[a.group(1)] = rest[a.end():end].strip()
    for key in ("dims", "nodes", "lower", "upper", "kind"):
        if key not in header:
            raise FieldFormatError(f"header missing '{key}'")
    return header


def _floats(text, what):
    try:
        return [float(t) for t in text.split(",")]
    except ValueError:
        raise FieldFormatError(f"cannot parse {what}: {text!r}") from None


def load_field(path):
    """Read a field written by :func:`save_field`."""
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise FieldFormatError(f"{path}: empty file")
    header = _parse_header(lines[0])
    dims = int(header["dims"])
    nodes = [int(k) for k in header["nodes"].split(",")]
    if len(nodes) != dims:
        raise FieldFormatError("header nodes= does not match dims=")
    grid = BoxGrid(_floats(header["lower"], "lower"), _floats(header["upper"], "upper"), nodes)
    kind = header["kind"].split()
    if kind[0] == "scalar":
        width = 1
    elif kind[0] == "policy":
        if len(kind) < 2 or not kind[1].startswith("m="):
            raise FieldFormatError("policy kind requires m=<control dim>")
        width = int(kind[1][2:])
    else:
        raise FieldFormatError(f"unknown field kind {kind[0]!r}")

    body = [ln for ln in lines[1:] if ln.strip()]
    if len(body) != grid.size:
        raise FieldFormatError(
            f"{path}: shape mismatch, header declares {grid.size} nodes but file has {len(body)} rows"
        )
    data = np.empty((grid.size, width))
    for r, ln in enumerate(body):
        row = _floats(ln, f"row {r + 1}")
        if len(row) != width:
            raise FieldFormatError(f"{path}: row {r + 1} has {len(row)} columns, expected {width}")
        if not all(math.isfinite(v) for v in row):
            raise FieldFormatError(f"{path}: non-finite entry in row {r + 1}")
        data[r] = row
    if kind[0] == "scalar":
        return ScalarField(grid, data[:, 0])
    lower = _floats(header["control_lower"], "control_lower") if "control_lower" in header else None
    upper = _floats(header["control_upper"], "control_upper") if "control_upper" in header else None
    return PolicyField(grid, data, lower, upper)
