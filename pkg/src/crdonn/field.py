"""Complex optical fields sampled on the SLM pixel lattice.

Arrays are row-major with ``values[row, col] == values[y, x]`` everywhere in
the package. A :class:`GridSpec` describes the unpadded aperture (``ny`` by
``nx`` pixels) plus a zero border of ``pad`` pixels on every side; fields
always carry the padded shape.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DTYPE = np.complex128


@dataclass(frozen=True)
class GridSpec:
    """Pixel lattice shared by every plane of a model.

    Parameters
    ----------
    nx, ny : int
        Unpadded pixel counts along x (columns) and y (rows).
    pitch : float
        Pixel edge length [m].
    wavelength : float
        Vacuum wavelength [m].
    pad : int
        Zero border added on each side.
    """

    nx: int
    ny: int
    pitch: float
    wavelength: float
    pad: int = 0

    def __post_init__(self):
        if int(self.nx) != self.nx or int(self.ny) != self.ny or self.nx < 1 or self.ny < 1:
            raise ValueError(f"grid size must be positive integers, got {self.ny}x{self.nx}")
        if not self.pitch > 0:
            raise ValueError(f"pitch must be positive, got {self.pitch}")
        if not self.wavelength > 0:
            raise ValueError(f"wavelength must be positive, got {self.wavelength}")
        if int(self.pad) != self.pad or self.pad < 0:
            raise ValueError(f"pad must be a non-negative integer, got {self.pad}")

    @property
    def padded_nx(self) -> int:
        return self.nx + 2 * self.pad

    @property
    def padded_ny(self) -> int:
        return self.ny + 2 * self.pad

    @property
    def shape(self) -> tuple[int, int]:
        """Padded array shape ``(rows, cols)``."""
        return (self.padded_ny, self.padded_nx)

    @property
    def interior(self) -> tuple[slice, slice]:
        """Index of the unpadded aperture inside a padded array."""
        p = self.pad
        return (slice(p, p + self.ny), slice(p, p + self.nx))

    @property
    def wavenumber(self) -> float:
        return 2 * np.pi / self.wavelength

    def pad_array(self, a: np.ndarray) -> np.ndarray:
        """Embed an unpadded ``(ny, nx)`` array (or a batch of them) in zeros."""
        a = np.asarray(a)
        if a.shape[-2:] != (self.ny, self.nx):
            raise ValueError(f"expected trailing shape {(self.ny, self.nx)}, got {a.shape[-2:]}")
        out = np.zeros(a.shape[:-2] + self.shape, dtype=np.result_type(a, DTYPE))
        out[(...,) + self.interior] = a
        return out

    def crop(self, a: np.ndarray) -> np.ndarray:
        a = np.asarray(a)
        if a.shape[-2:] != self.shape:
            raise ValueError(f"expected trailing shape {self.shape}, got {a.shape[-2:]}")
        return a[(...,) + self.interior]


@dataclass(frozen=True, eq=False)
class ComplexField:
    """A complex field on the padded lattice of ``grid``.

    ``values`` is copied on construction and marked read-only.
    """

    grid: GridSpec
    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=DTYPE, copy=True)
        if v.shape != self.grid.shape:
            raise ValueError(f"field shape {v.shape} does not match padded grid {self.grid.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("field contains non-finite values")
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def interior(self) -> np.ndarray:
        return self.grid.crop(self.values)

    def __mul__(self, other):
        if isinstance(other, ComplexField):
            _check_same_grid(self, other)
            other = other.values
        return ComplexField(self.grid, self.values * other)

    __rmul__ = __mul__

    def __add__(self, other: "ComplexField") -> "ComplexField":
        _check_same_grid(self, other)
        return ComplexField(self.grid, self.values + other.values)

    def __sub__(self, other: "ComplexField") -> "ComplexField":
        _check_same_grid(self, other)
        return ComplexField(self.grid, self.values - other.values)


def _check_same_grid(a: ComplexField, b: ComplexField) -> None:
    if a.grid != b.grid:
        raise ValueError(f"grid mismatch: {a.grid} vs {b.grid}")


def zeros(grid: GridSpec) -> ComplexField:
    return ComplexField(grid, np.zeros(grid.shape, dtype=DTYPE))


def from_interior(grid: GridSpec, values: np.ndarray) -> ComplexField:
    """Build a field whose aperture holds ``values`` and whose border is zero."""
    return ComplexField(grid, grid.pad_array(values))


def intensity(f: ComplexField | np.ndarray) -> np.ndarray:
    v = f.values if isinstance(f, ComplexField) else np.asarray(f)
    return v.real ** 2 + v.imag ** 2


def total_energy(f: ComplexField | np.ndarray) -> float:
    return float(intensity(f).sum())


def inner(a: ComplexField | np.ndarray, b: ComplexField | np.ndarray) -> complex:
    """Standard inner product ``sum(conj(a) * b)``."""
    av = a.values if isinstance(a, ComplexField) else np.asarray(a)
    bv = b.values if isinstance(b, ComplexField) else np.asarray(b)
    return complex(np.vdot(av, bv))
