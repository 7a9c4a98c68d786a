"""Simulated SLM phase characterisation.

Two procedures are covered. Fringe-shift phase extraction converts a
two-slit fringe displacement into a phase. The square-aperture scan
simulates the intensity-mode SLM with a small square at grey level 255 on a
grey-level-0 background, and records the centre intensity on the camera for
each candidate phase difference between the two levels.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .field import GridSpec
from .propagation import Method, build_kernel
from .slm import DARK_VALUE

SCAN_DISTANCE = 1.1176


def phase_from_fringe_shift(shift: float, period: float) -> float:
    """Phase in ``[0, 2 pi)`` for a fringe displacement ``shift`` of a pattern with ``period``."""
    if not period > 0:
        raise ValueError(f"fringe period must be positive, got {period}")
    phi = float(np.mod(2.0 * np.pi * shift / period, 2.0 * np.pi))
    return 0.0 if phi == 2.0 * np.pi else phi


@dataclass
class PhaseScanResult:
    phis: np.ndarray
    center_intensities: np.ndarray
    patterns: list[np.ndarray] | None = None

    def __post_init__(self):
        self.phis = np.asarray(self.phis, dtype=float)
        self.center_intensities = np.asarray(self.center_intensities, dtype=float)
        if self.phis.shape != self.center_intensities.shape:
            raise ValueError("phis and intensities differ in length")

    @property
    def argmax_phi(self) -> float:
        return float(self.phis[int(np.argmax(self.center_intensities))])

    def plateau(self, fraction: float = 0.7) -> tuple[float, float]:
        """Contiguous phase range around the maximum with intensity >= ``fraction * max``."""
        ci = self.center_intensities
        i = int(np.argmax(ci))
        lo = hi = i
        while lo > 0 and ci[lo - 1] >= fraction * ci[i]:
            lo -= 1
        while hi < len(ci) - 1 and ci[hi + 1] >= fraction * ci[i]:
            hi += 1
        return float(self.phis[lo]), float(self.phis[hi])


def square_field(grid: GridSpec, square: int, phi: float, background: float = DARK_VALUE) -> np.ndarray:
    """Padded field: ``background`` everywhere in the aperture, ``exp(i phi)`` in a
    centred ``square x square`` block."""
    if square < 1 or square > grid.nx or square > grid.ny:
        raise ValueError(f"{square}x{square} square does not fit a {grid.ny}x{grid.nx} aperture")
    inner = np.full((grid.ny, grid.nx), background, dtype=complex)
    r0 = (grid.ny - square) // 2
    c0 = (grid.nx - square) // 2
    inner[r0:r0 + square, c0:c0 + square] = np.exp(1j * phi)
    return grid.pad_array(inner)


def center_index(grid: GridSpec) -> tuple[int, int]:
    """Padded index of the aperture centre pixel (lower-right of the middle for even sizes)."""
    return grid.pad + grid.ny // 2, grid.pad + grid.nx // 2


def default_scan_grid() -> GridSpec:
    # the 100x100 image region is the whole integration domain
    return GridSpec(100, 100, 36e-6, 532e-9, pad=0)


def phase_scan(grid: GridSpec | None = None, square: int = 6, z: float = SCAN_DISTANCE,
               phis: Sequence[float] | None = None, method: Method | str = Method.CONV,
               keep_patterns: bool = False) -> PhaseScanResult:
    """Centre intensity versus the phase of the bright square."""
    grid = default_scan_grid() if grid is None else grid
    if phis is None:
        phis = np.linspace(0.0, np.pi, 21)
    phis = np.asarray(phis, dtype=float)
    kernel = build_kernel(method, grid, z)
    fields = np.stack([square_field(grid, square, phi) for phi in phis])
    out = kernel.apply(fields)
    inten = out.real ** 2 + out.imag ** 2
    r, c = center_index(grid)
    patterns = [grid.crop(p) for p in inten] if keep_patterns else None
    return PhaseScanResult(phis, inten[:, r, c], patterns)
