"""Core domain types.

All types are immutable after construction (arrays are marked read-only)
and safe to share across threads. Disk payloads are float32; everything
numerical downstream (losses, gradients, SVD) runs in float64.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError

PROB_SUM_TOL = 1e-5


class VFKind(enum.Enum):
    AIF = "aif"
    VOF = "vof"


class Unit(enum.Enum):
    HU = "hu"
    FLOW = "per_second"     # flow-scaled residue units (1/s)
    SECONDS = "seconds"
    RATIO = "ratio"
    PROBABILITY = "probability"
    BINARY = "binary"


def _freeze(arr: np.ndarray) -> np.ndarray:
    # copy before locking so a caller's array is never mutated in place
    if arr.flags.writeable:
        arr = arr.copy()
        arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class CtpVolume4D:
    """A contrast-enhanced CT time series, indexed (t, z, y, x) in HU.

    dt_seconds is kept at float32 precision, mirroring the on-disk format,
    so write/read round trips reproduce the object exactly.
    """

    data: np.ndarray
    dt_seconds: float
    brain_mask: np.ndarray | None = None

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float32)
        if data.ndim != 4:
            raise ValidationError(f"4D volume expected, got ndim={data.ndim}")
        if data.shape[0] < 2:
            raise ValidationError(f"need at least 2 frames, got {data.shape[0]}")
        if not np.isfinite(data).all():
            raise ValidationError("4D volume contains non-finite values")
        if not (np.isfinite(self.dt_seconds) and self.dt_seconds > 0):
            raise ValidationError(f"dt_seconds must be positive, got {self.dt_seconds}")
        object.__setattr__(self, "data", _freeze(data))
        object.__setattr__(self, "dt_seconds", float(np.float32(self.dt_seconds)))
        if self.brain_mask is not None:
            mask = np.asarray(self.brain_mask, dtype=bool)
            if mask.shape != data.shape[1:]:
                raise ValidationError(
                    f"brain mask shape {mask.shape} != spatial dims {data.shape[1:]}")
            object.__setattr__(self, "brain_mask", _freeze(mask))

    @property
    def n_frames(self) -> int:
        return self.data.shape[0]

    @property
    def spatial_shape(self) -> tuple[int, int, int]:
        return self.data.shape[1:]

    def curve_at(self, z: int, y: int, x: int) -> np.ndarray:
        """Time curve of one voxel, as float64."""
        return self.data[:, z, y, x].astype(np.float64)


@dataclass(frozen=True)
class VascularFunction:
    """A 1D time-value reference curve (AIF or VOF), in HU."""

    values: np.ndarray
    dt_seconds: float
    kind: VFKind

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 1 or values.size < 2:
            raise ValidationError("vascular function needs a 1D array of length >= 2")
        if not np.isfinite(values).all():
            raise ValidationError("vascular function contains non-finite values")
        if not (np.isfinite(self.dt_seconds) and self.dt_seconds > 0):
            raise ValidationError(f"dt_seconds must be positive, got {self.dt_seconds}")
        if not isinstance(self.kind, VFKind):
            raise ValidationError(f"kind must be a VFKind, got {self.kind!r}")
        object.__setattr__(self, "values", _freeze(values))
        object.__setattr__(self, "dt_seconds", float(self.dt_seconds))

    def __len__(self) -> int:
        return self.values.size

    @property
    def times(self) -> np.ndarray:
        return np.arange(len(self)) * self.dt_seconds


@dataclass(frozen=True)
class ProbVolume:
    """Nonnegative Z*Y*X weights summing to one."""

    probs: np.ndarray

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=np.float64)
        if probs.ndim != 3:
            raise ValidationError(f"3D probability volume expected, got ndim={probs.ndim}")
        if not np.isfinite(probs).all():
            raise ValidationError("probability volume contains non-finite values")
        if probs.min() < 0:
            raise ValidationError(f"negative probability {probs.min()}")
        total = float(probs.sum())
        if abs(total - 1.0) > PROB_SUM_TOL:
            raise ValidationError(f"probabilities sum to {total}, not 1")
        object.__setattr__(self, "probs", _freeze(probs))

    def argmax_voxel(self) -> tuple[int, int, int]:
        """Index of the highest-probability voxel (ties: lowest linear index)."""
        flat = int(np.argmax(self.probs))
        return tuple(int(i) for i in np.unravel_index(flat, self.probs.shape))


@dataclass(frozen=True)
class Volume3D:
    """A Z*Y*X scalar volume with a unit tag."""

    data: np.ndarray
    unit: Unit

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float32)
        if data.ndim != 3:
            raise ValidationError(f"3D volume expected, got ndim={data.ndim}")
        if not np.isfinite(data).all():
            raise ValidationError("3D volume contains non-finite values")
        if not isinstance(self.unit, Unit):
            raise ValidationError(f"unit must be a Unit, got {self.unit!r}")
        if self.unit is Unit.BINARY:
            if not np.isin(data, (0.0, 1.0)).all():
                raise ValidationError("binary volume contains values outside {0, 1}")
        object.__setattr__(self, "data", _freeze(data))

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape

    def as_bool(self) -> np.ndarray:
        return self.data > 0.5


MAP_NAMES = ("cbf", "cbv", "mtt", "tmax")
MTT_CBF_FLOOR = 1e-12


@dataclass(frozen=True)
class PerfusionMaps:
    """Absolute and relative perfusion parameter maps."""

    cbf: Volume3D
    cbv: Volume3D
    mtt: Volume3D
    tmax: Volume3D
    rcbf: Volume3D
    rcbv: Volume3D
    rmtt: Volume3D
    rtmax: Volume3D
    control_mean: dict = field(default_factory=dict)

    def __post_init__(self):
        shape = self.cbf.shape
        for name in ("cbv", "mtt", "tmax", "rcbf", "rcbv", "rmtt", "rtmax"):
            if getattr(self, name).shape != shape:
                raise ValidationError(f"map {name} shape mismatch")
        for name in MAP_NAMES:
            if name not in self.control_mean:
                raise ValidationError(f"control_mean missing entry for {name}")
            if not self.control_mean[name] > 0:
                raise ValidationError(
                    f"control mean for {name} must be positive, got {self.control_mean[name]}")
        cbf = self.cbf.data.astype(np.float64)
        cbv = self.cbv.data.astype(np.float64)
        mtt = self.mtt.data.astype(np.float64)
        pos = cbf > MTT_CBF_FLOOR
        if pos.any():
            expected = cbv[pos] / cbf[pos]
            err = np.abs(mtt[pos] - expected)
            bound = 1e-6 * np.maximum(np.abs(expected), MTT_CBF_FLOOR)
            if (err > bound).any():
                raise ValidationError("MTT != CBV/CBF beyond 1e-6 relative tolerance")

    def absolute(self) -> dict:
        return {"cbf": self.cbf, "cbv": self.cbv, "mtt": self.mtt, "tmax": self.tmax}

    def relative(self) -> dict:
        return {"rcbf": self.rcbf, "rcbv": self.rcbv, "rmtt": self.rmtt, "rtmax": self.rtmax}
