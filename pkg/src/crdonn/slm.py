"""SLM device response, Gumbel-Softmax grey-level layers and input encoding.

A pixel driven at grey level ``v`` transmits ``T[v] * exp(i Phi[v])``. During
training each pixel of a reconfigurable layer carries ``k`` logits. The
forward pass uses the one-hot level ``argmax((logits + g) / tau)``. The
backward pass differentiates the relaxed transmission

    (p . T) * exp(i (p . Phi)),    p = softmax((logits + g) / tau)

This matches the hard transmission exactly whenever ``p`` is one-hot.
"""

from __future__ import annotations

import csv
import io
import os
from dataclasses import dataclass
from importlib import resources

import numpy as np

from .field import DTYPE, ComplexField, GridSpec

DARK_VALUE = 0.0316  # grey level 0 on the intensity-mode image SLM
BRIGHT_VALUE = -1.0  # grey level 255: unit amplitude, pi phase
THRESHOLD = 0.5
AMPLITUDE_MAX = 1.05


class LUTError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class DeviceLUT:
    """Measured amplitude ``T`` and phase ``Phi`` (radians) per grey level."""

    amplitude: np.ndarray
    phase: np.ndarray
    levels: np.ndarray | None = None  # original grey-level indices, after subsampling

    def __post_init__(self):
        T = np.asarray(self.amplitude, dtype=float).copy()
        P = np.asarray(self.phase, dtype=float).copy()
        if T.ndim != 1 or T.shape != P.shape:
            raise LUTError("amplitude and phase must be 1-D vectors of equal length")
        if len(T) < 2:
            raise LUTError(f"need at least 2 levels, got {len(T)}")
        if not (np.all(np.isfinite(T)) and np.all(np.isfinite(P))):
            raise LUTError("LUT contains non-finite values")
        if T.min() < 0 or T.max() > AMPLITUDE_MAX:
            raise LUTError(f"amplitude outside [0, {AMPLITUDE_MAX}]")
        lv = np.arange(len(T)) if self.levels is None else np.asarray(self.levels, dtype=int)
        if lv.shape != T.shape:
            raise LUTError("levels must match the LUT length")
        for a in (T, P, lv):
            a.flags.writeable = False
        object.__setattr__(self, "amplitude", T)
        object.__setattr__(self, "phase", P)
        object.__setattr__(self, "levels", lv)

    @property
    def k(self) -> int:
        return len(self.amplitude)

    @property
    def transmission(self) -> np.ndarray:
        return self.amplitude * np.exp(1j * self.phase)

    def subsample(self, k: int) -> "DeviceLUT":
        """Keep ``k`` evenly spaced rows (always including the first and last)."""
        if not 2 <= k <= self.k:
            raise LUTError(f"cannot subsample {self.k} levels to {k}")
        idx = np.unique(np.round(np.linspace(0, self.k - 1, k)).astype(int))
        return DeviceLUT(self.amplitude[idx], self.phase[idx], self.levels[idx])

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["level", "amplitude", "phase_rad"])
        for lv, a, p in zip(self.levels, self.amplitude, self.phase):
            w.writerow([int(lv), repr(float(a)), repr(float(p))])
        return buf.getvalue()


def load_lut(source) -> DeviceLUT:
    """Read a ``level,amplitude,phase_rad`` CSV.

    ``source`` may be a path, a file object or the CSV text itself. Levels must
    start at 0 and increase by one per row.
    """
    if hasattr(source, "read"):
        text = source.read()
    elif isinstance(source, (str, os.PathLike)) and os.path.exists(source):
        with open(source, newline="") as fh:
            text = fh.read()
    elif isinstance(source, str) and "\n" in source:
        text = source
    else:
        raise LUTError(f"LUT file not found: {source}")

    rows = [r for r in csv.reader(io.StringIO(text)) if r and any(c.strip() for c in r)]
    if not rows:
        raise LUTError("empty LUT")
    header = [c.strip().lower() for c in rows[0]]
    if header[:1] == ["level"]:
        rows = rows[1:]
    levels, amp, phase = [], [], []
    for lineno, row in enumerate(rows, start=2):
        if len(row) != 3:
            raise LUTError(f"row {lineno}: expected 3 columns, got {len(row)}")
        try:
            lv, a, p = int(row[0]), float(row[1]), float(row[2])
        except ValueError as exc:
            raise LUTError(f"row {lineno}: {exc}") from None
        if lv != len(levels):
            raise LUTError(f"row {lineno}: level {lv} out of sequence (expected {len(levels)})")
        if not 0 <= a <= AMPLITUDE_MAX:
            raise LUTError(f"row {lineno}: amplitude {a} outside [0, {AMPLITUDE_MAX}]")
        levels.append(lv)
        amp.append(a)
        phase.append(p)
    return DeviceLUT(np.array(amp), np.array(phase), np.array(levels))


def builtin_lut(name: str) -> DeviceLUT:
    """Packaged 256-level tables: ``"intensity"`` (image SLM) or ``"phase"`` (RDA SLMs)."""
    fname = {"intensity": "lut_intensity_mode.csv", "phase": "lut_phase_mode.csv"}.get(name)
    if fname is None:
        raise LUTError(f"no builtin LUT named {name!r}")
    return load_lut(resources.files("crdonn").joinpath("data").joinpath(fname).read_text())


def phase_flip_lut() -> DeviceLUT:
    return DeviceLUT(np.array([1.0, 1.0]), np.array([0.0, np.pi]))


# -- Gumbel-Softmax layers ---------------------------------------------------


@dataclass(eq=False)
class GumbelLayer:
    """Trainable grey-level logits for one reconfigurable diffractive array.

    ``logits`` has shape ``(rows, cols, k)`` over the padded grid; the padding
    ring is trainable like the interior.
    """

    grid: GridSpec
    logits: np.ndarray
    lut: DeviceLUT
    tau: float = 1.0

    def __post_init__(self):
        self.logits = np.asarray(self.logits, dtype=float)
        if self.logits.shape != self.grid.shape + (self.lut.k,):
            raise ValueError(
                f"logits shape {self.logits.shape} != {self.grid.shape + (self.lut.k,)}"
            )
        if not self.tau > 0:
            raise ValueError(f"temperature must be positive, got {self.tau}")

    @classmethod
    def init(cls, grid: GridSpec, lut: DeviceLUT, rng: np.random.Generator,
             tau: float = 1.0, scale: float = 0.1) -> "GumbelLayer":
        logits = rng.uniform(-scale, scale, size=grid.shape + (lut.k,))
        return cls(grid, logits, lut, tau)

    @classmethod
    def from_levels(cls, grid: GridSpec, lut: DeviceLUT, levels: np.ndarray,
                    tau: float = 1.0, strength: float = 10.0) -> "GumbelLayer":
        """Layer whose argmax reproduces ``levels`` (indices into ``lut``)."""
        levels = np.asarray(levels, dtype=int)
        logits = np.zeros(grid.shape + (lut.k,))
        np.put_along_axis(logits, levels[..., None], strength, axis=-1)
        return cls(grid, logits, lut, tau)

    def sample_gumbel(self, rng: np.random.Generator) -> np.ndarray:
        return rng.gumbel(size=self.logits.shape)

    def scores(self, g: np.ndarray | None = None) -> np.ndarray:
        y = self.logits if g is None else self.logits + g
        return y / self.tau

    def probabilities(self, g: np.ndarray | None = None) -> np.ndarray:
        return softmax(self.scores(g))

    def selected_levels(self, g: np.ndarray | None = None) -> np.ndarray:
        # np.argmax returns the first maximum: ties go to the lowest level
        return np.argmax(self.scores(g), axis=-1)


def softmax(y: np.ndarray) -> np.ndarray:
    y = y - y.max(axis=-1, keepdims=True)
    e = np.exp(y)
    return e / e.sum(axis=-1, keepdims=True)


def relaxed_transmission(p: np.ndarray, lut: DeviceLUT) -> np.ndarray:
    """``(p . T) exp(i p . Phi)`` per pixel."""
    amp = p @ lut.amplitude
    phase = p @ lut.phase
    return amp * np.exp(1j * phase)


def level_transmission(levels: np.ndarray, lut: DeviceLUT) -> np.ndarray:
    return lut.transmission[levels]


def hard_transmission(layer: GumbelLayer, g: np.ndarray | None = None) -> ComplexField:
    """Transmission of the one-hot levels; ``g=None`` is the deterministic mode."""
    return ComplexField(layer.grid, level_transmission(layer.selected_levels(g), layer.lut))


def soft_transmission(layer: GumbelLayer, g: np.ndarray | None = None) -> ComplexField:
    return ComplexField(layer.grid, relaxed_transmission(layer.probabilities(g), layer.lut))


# -- input image encoding ----------------------------------------------------


@dataclass(frozen=True, eq=False)
class EncodedImage:
    """Binarised input on the image SLM.

    Inside the aperture every pixel is ``-1`` (featured, grey level 255) or
    ``0.0316`` (background, grey level 0); the padding ring is opaque (0).
    """

    grid: GridSpec
    values: np.ndarray
    feature_mask: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=DTYPE)
        m = np.array(self.feature_mask, dtype=bool)
        if v.shape != self.grid.shape or m.shape != self.grid.shape:
            raise ValueError("encoded image does not match the padded grid")
        inner = self.grid.crop(v)
        if not np.all((inner == BRIGHT_VALUE) | (inner == DARK_VALUE)):
            raise ValueError("aperture values must be -1 or 0.0316")
        ring = v.copy()
        ring[self.grid.interior] = 0
        if np.any(ring != 0):
            raise ValueError("padding ring of an image must be 0")
        if np.any(m != (v == BRIGHT_VALUE)):
            raise ValueError("feature mask must mark exactly the -1 pixels")
        v.flags.writeable = False
        m.flags.writeable = False
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "feature_mask", m)

    @classmethod
    def from_bright(cls, grid: GridSpec, bright: np.ndarray) -> "EncodedImage":
        """Encode from an unpadded boolean map of featured pixels."""
        bright = np.asarray(bright, dtype=bool)
        inner = np.where(bright, BRIGHT_VALUE, DARK_VALUE).astype(DTYPE)
        values = grid.pad_array(inner)
        return cls(grid, values, values == BRIGHT_VALUE)

    @property
    def bright(self) -> np.ndarray:
        """Unpadded boolean map of featured pixels."""
        return self.grid.crop(self.feature_mask)

    def field(self) -> ComplexField:
        return ComplexField(self.grid, self.values)


def encode_image(raw: np.ndarray, grid: GridSpec) -> EncodedImage:
    """Binarise a brightness image in ``[0, 1]``; pixels ``> 0.5`` become ``-1``."""
    raw = np.asarray(raw, dtype=float)
    if raw.shape != (grid.ny, grid.nx):
        raise ValueError(f"image shape {raw.shape} does not match grid {(grid.ny, grid.nx)}")
    if np.any(raw < 0) or np.any(raw > 1) or not np.all(np.isfinite(raw)):
        raise ValueError("brightness values must lie in [0, 1]")
    return EncodedImage.from_bright(grid, raw > THRESHOLD)
