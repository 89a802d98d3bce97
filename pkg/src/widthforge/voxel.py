"""Voxel grids of densities in [0, 1] and the WVG1 file format.

WVG1 layout: line 1 ``WVG1``; line 2 ``n sx sy [sz]``; line 3 ``h ox oy [oz]``
(or ``hx hy [hz] ox oy [oz]`` for anisotropic spacing); then exactly
sx*sy(*sz) little-endian float64 values in row-major order (last axis fastest).
Voxel i along an axis covers [o + i h, o + (i + 1) h).
"""
from __future__ import annotations

import io
import math
from dataclasses import dataclass

import numpy as np

from .bounds import DomainError


class VoxelFormatError(DomainError):
    pass


@dataclass(frozen=True)
class VoxelGrid:
    values: np.ndarray
    spacing: tuple
    origin: tuple

    def __post_init__(self):
        v = np.ascontiguousarray(self.values, dtype=float)
        if v.ndim < 1:
            raise DomainError("voxel values must have at least one axis")
        if not np.all(np.isfinite(v)):
            raise DomainError("voxel values must be finite")
        if v.size and (v.min() < -1e-12 or v.max() > 1 + 1e-12):
            raise DomainError("voxel values must lie in [0, 1]")
        v = np.clip(v, 0.0, 1.0)
        n = v.ndim
        sp = self.spacing
        sp = tuple(float(sp) for _ in range(n)) if np.isscalar(sp) else tuple(float(s) for s in sp)
        org = tuple(float(o) for o in self.origin)
        if len(sp) != n or len(org) != n:
            raise DomainError("spacing and origin must have one entry per axis")
        if any(not (s > 0 and math.isfinite(s)) for s in sp):
            raise DomainError("spacing must be positive")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "spacing", sp)
        object.__setattr__(self, "origin", org)

    @property
    def n(self) -> int:
        return self.values.ndim

    @property
    def shape(self) -> tuple:
        return self.values.shape

    @property
    def cell_volume(self) -> float:
        return math.prod(self.spacing)

    @property
    def mass(self) -> float:
        return float(self.values.sum() * self.cell_volume)

    @property
    def is_indicator(self) -> bool:
        v = self.values
        return bool(np.all((v == 0) | (v == 1)))

    def bounds(self):
        lo = np.array(self.origin)
        return lo, lo + np.array(self.spacing) * np.array(self.shape)

    def support_box(self):
        """Bounding box of the voxels with positive value."""
        idx = np.nonzero(self.values > 0)
        if len(idx[0]) == 0:
            raise DomainError("empty support")
        lo = np.array([i.min() for i in idx], dtype=float)
        hi = np.array([i.max() + 1 for i in idx], dtype=float)
        sp, org = np.array(self.spacing), np.array(self.origin)
        return org + lo * sp, org + hi * sp

    def sample(self, X) -> np.ndarray:
        """Piecewise-constant value at points X (N, n); zero outside the grid."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        rel = (X - np.array(self.origin)) / np.array(self.spacing)
        idx = np.floor(rel).astype(np.int64)
        shape = np.array(self.shape)
        ok = np.all((idx >= 0) & (idx < shape), axis=1)
        out = np.zeros(X.shape[0])
        if ok.any():
            out[ok] = self.values[tuple(idx[ok].T)]
        return out

    def scaled(self, factor: float) -> "VoxelGrid":
        """The same density with all coordinates multiplied by ``factor``."""
        return VoxelGrid(self.values, tuple(s * factor for s in self.spacing),
                         tuple(o * factor for o in self.origin))

    def times(self, lam: float) -> "VoxelGrid":
        return VoxelGrid(self.values * lam, self.spacing, self.origin)

    def normalized(self):
        """(grid with mass 1, scale) where scale = mass^(1/n) maps unit back to original."""
        m = self.mass
        if not (m > 0 and math.isfinite(m)):
            raise DomainError("voxel grid must have positive finite mass")
        scale = m ** (1.0 / self.n)
        return self.scaled(1.0 / scale), scale

    def marginal(self, l: int) -> "VoxelGrid":
        """Average over the first l axes: the density of slabs over the remaining axes."""
        if not (0 <= l < self.n):
            raise DomainError(f"l must be in 0..{self.n - 1}")
        if l == 0:
            return self
        v = self.values.mean(axis=tuple(range(l)))
        return VoxelGrid(v, self.spacing[l:], self.origin[l:])

    # ---- constructors

    @classmethod
    def from_function(cls, func, lo, hi, shape) -> "VoxelGrid":
        lo, hi = np.asarray(lo, dtype=float), np.asarray(hi, dtype=float)
        shape = tuple(int(s) for s in shape)
        sp = (hi - lo) / np.array(shape)
        axes = [lo[i] + (np.arange(shape[i]) + 0.5) * sp[i] for i in range(len(shape))]
        mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
        vals = np.asarray(func(mesh.reshape(-1, len(shape))), dtype=float).reshape(shape)
        return cls(vals, tuple(sp), tuple(lo))

    @classmethod
    def box(cls, sides, res: int = 16, pad: int = 2, value: float = 1.0) -> "VoxelGrid":
        """Indicator (times ``value``) of [0, sides] on a grid with ``res`` voxels per unit of the smallest side."""
        sides = np.asarray(sides, dtype=float)
        h = float(sides.min()) / res
        counts = np.rint(sides / h).astype(int)
        shape = tuple(counts + 2 * pad)
        vals = np.zeros(shape)
        vals[tuple(slice(pad, pad + c) for c in counts)] = value
        return cls(vals, h, tuple(-pad * h for _ in sides))

    @classmethod
    def ball(cls, n: int, volume: float = 1.0, res: int = 32) -> "VoxelGrid":
        r = (volume / (math.pi ** (n / 2) / math.gamma(n / 2 + 1))) ** (1.0 / n)
        lo, hi = -1.05 * r * np.ones(n), 1.05 * r * np.ones(n)
        return cls.from_function(lambda X: (np.linalg.norm(X, axis=1) <= r).astype(float), lo, hi, (res,) * n)

    # ---- WVG1

    def to_bytes(self) -> bytes:
        buf = io.BytesIO()
        n = self.n
        buf.write(b"WVG1\n")
        buf.write((f"{n} " + " ".join(str(s) for s in self.shape) + "\n").encode())
        sp = self.spacing
        head = [repr(sp[0])] if all(s == sp[0] for s in sp) else [repr(s) for s in sp]
        buf.write((" ".join(head + [repr(o) for o in self.origin]) + "\n").encode())
        buf.write(self.values.astype("<f8").tobytes(order="C"))
        return buf.getvalue()

    @classmethod
    def from_bytes(cls, data: bytes) -> "VoxelGrid":
        lines = data.split(b"\n", 3)
        if len(lines) < 4 or lines[0].strip() != b"WVG1":
            raise VoxelFormatError("missing WVG1 header")
        try:
            dims = [int(t) for t in lines[1].split()]
            nums = [float(t) for t in lines[2].split()]
        except ValueError as exc:
            raise VoxelFormatError(f"bad header: {exc}") from exc
        if not dims or dims[0] != len(dims) - 1 or any(d <= 0 for d in dims[1:]):
            raise VoxelFormatError("line 2 must be 'n s1 ... sn' with positive extents")
        n, shape = dims[0], tuple(dims[1:])
        if len(nums) == n + 1:
            spacing, origin = (nums[0],) * n, tuple(nums[1:])
        elif len(nums) == 2 * n:
            spacing, origin = tuple(nums[:n]), tuple(nums[n:])
        else:
            raise VoxelFormatError(f"line 3 must hold 1 + n or 2n numbers, got {len(nums)}")
        body = lines[3]
        count = math.prod(shape)
        if len(body) != 8 * count:
            raise VoxelFormatError(f"expected {count} float64 values ({8 * count} bytes), got {len(body)} bytes")
        vals = np.frombuffer(body, dtype="<f8").reshape(shape)
        return cls(vals.copy(), spacing, origin)

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def load(cls, path) -> "VoxelGrid":
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())
