"""Array containers shared across modules."""
from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError


@dataclass(frozen=True)
class ComplexVolume:
    """3D complex image with voxel spacing in mm."""

    data: np.ndarray
    spacing: tuple = (1.0, 1.0, 1.0)

    def __post_init__(self):
        arr = np.asarray(self.data)
        if arr.ndim != 3:
            raise ValidationError(f"volume must be 3D, got shape {arr.shape}")
        if not np.iscomplexobj(arr):
            arr = arr.astype(np.complex128)
        object.__setattr__(self, "data", arr)
        object.__setattr__(self, "spacing", tuple(float(s) for s in self.spacing))

    @property
    def shape(self):
        return self.data.shape

    def validate(self):
        if min(self.shape) < 8:
            raise ValidationError(f"volume shape {self.shape} below minimum 8 per axis")
        if not np.all(np.isfinite(self.data)):
            raise ValidationError("volume contains non-finite values")
        return self


@dataclass(frozen=True)
class FieldMap:
    """3D off-resonance map in Hz."""

    data: np.ndarray
    f_max: float = field(default=float("inf"))

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim != 3:
            raise ValidationError(f"field map must be 3D, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValidationError("field map contains non-finite values")
        if arr.size and np.max(np.abs(arr)) > self.f_max * (1 + 1e-12):
            raise ValidationError("field map exceeds its configured f_max")
        object.__setattr__(self, "data", arr)

    @property
    def shape(self):
        return self.data.shape


@dataclass(frozen=True)
class KSpaceData:
    """Complex samples aligned index-for-index with a trajectory."""

    values: np.ndarray
    traj_ref: str = ""

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.complex128).ravel()
        object.__setattr__(self, "values", v)

    def __len__(self):
        return self.values.size


def as_complex_array(x):
    """Return the complex ndarray behind a ComplexVolume or array-like."""
    if isinstance(x, ComplexVolume):
        return x.data
    return np.asarray(x, dtype=np.complex128)


def as_real_array(x):
    if isinstance(x, FieldMap):
        return x.data
    return np.asarray(x, dtype=np.float64)


def as_values(x):
    if isinstance(x, KSpaceData):
        return x.values
    return np.asarray(x, dtype=np.complex128).ravel()
