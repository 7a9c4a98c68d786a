"""Free-space propagation between parallel planes.

Two kernels are available:

``SPECTRAL``
    Fresnel transfer function ``H = exp(ikz) exp(-i pi lambda z (fx^2 + fy^2))``
    applied with one FFT pair on the padded grid. The product in frequency
    space is a *circular* convolution, so energy leaving one edge re-enters
    at the other. ``|H| = 1`` makes the operator exactly unitary.

``CONV``
    Fresnel-Kirchhoff integral with the field held constant over each pixel
    cell. The per-cell chirp integrals are closed-form differences of Fresnel
    integrals. The 2-D operator factorises into an x operator and a y operator,
    ``out = Ay @ u @ Ax.T``. Each factor is a Toeplitz matrix plus corrections
    for the half-width first and last source cells. The Toeplitz part is applied
    as a *linear* convolution via FFTs of length >= 2N - 1.

Frequency lattice: ``numpy.fft.fftfreq(n, pitch)``, so DC sits at index 0
and no ``fftshift`` is applied anywhere.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field as dc_field

import numpy as np
from scipy import fft as sfft

from .field import DTYPE, ComplexField, GridSpec
from .fresnel import fresnel_e

# worker count for scipy.fft; the CLI's --threads flag overrides it
FFT_WORKERS: int | None = None


class Method(str, enum.Enum):
    SPECTRAL = "spectral"
    CONV = "conv"

    @classmethod
    def parse(cls, value: "Method | str") -> "Method":
        if isinstance(value, Method):
            return value
        v = str(value).lower().replace("_", "").replace("-", "")
        aliases = {
            "spectral": cls.SPECTRAL,
            "spectralfresnel": cls.SPECTRAL,
            "conv": cls.CONV,
            "convfresnel": cls.CONV,
        }
        try:
            return aliases[v]
        except KeyError:
            raise ValueError(f"unknown propagation method {value!r}") from None


def _circulant_spectrum(offsets: np.ndarray, fft_len: int) -> np.ndarray:
    # embed offsets d = -(n-1)..(n-1) in a wrap-around vector of fft_len >= 2n-1
    n = (len(offsets) + 1) // 2
    circ = np.zeros(fft_len, dtype=complex)
    circ[:n] = offsets[n - 1:]
    if n > 1:
        circ[-(n - 1):] = offsets[: n - 1]
    return sfft.fft(circ)


@dataclass(frozen=True, eq=False)
class AxisOperator:
    """One axis of the CONV kernel acting on ``n`` samples.

    ``offsets[d + n - 1]`` is the full-cell coefficient for output minus
    source index ``d``; ``first``/``last`` hold the complete columns for the
    two half-width boundary cells.
    """

    n: int
    offsets: np.ndarray
    first: np.ndarray
    last: np.ndarray
    fft_len: int
    spectrum: np.ndarray = dc_field(repr=False)
    adjoint_spectrum: np.ndarray = dc_field(repr=False)

    @classmethod
    def build(cls, n: int, pitch: float, wavelength: float, z: float) -> "AxisOperator":
        # substitution t = (x - x_j) * sqrt(2 / (lambda z)) turns every cell
        # integral into a Fresnel-integral difference; the 1-D prefactor
        # sqrt(k / (2 pi i z)) and dx combine into exp(-i pi/4) / sqrt(2)
        alpha = pitch * np.sqrt(2.0 / (wavelength * z))
        pref = np.exp(-0.25j * np.pi) / np.sqrt(2.0)

        d = np.arange(-(n - 1), n, dtype=float)
        offsets = pref * (fresnel_e(alpha * (d + 0.5)) - fresnel_e(alpha * (d - 0.5)))

        j = np.arange(n, dtype=float)
        # source cell 0 spans [x_0, x_0 + p/2]: u = x - x_j in [-j, -j + 1/2] pixels
        first = pref * (fresnel_e(alpha * (0.5 - j)) - fresnel_e(alpha * (-j)))
        # source cell n-1 spans [x_{n-1} - p/2, x_{n-1}]
        last = pref * (fresnel_e(alpha * (n - 1 - j)) - fresnel_e(alpha * (n - 1.5 - j)))
        if n == 1:
            # a single cell is both first and last: [x_0, x_0] is empty, so
            # integrate the whole cell once
            first = offsets.copy()
            last = np.zeros(1, dtype=complex)

        fft_len = sfft.next_fast_len(2 * n - 1)
        spectrum = _circulant_spectrum(offsets, fft_len)
        # the transpose of a Toeplitz matrix reverses its offset sequence
        adjoint_spectrum = _circulant_spectrum(np.conj(offsets[::-1]), fft_len)
        return cls(n, offsets, first, last, fft_len, spectrum, adjoint_spectrum)

    def coefficient(self, j: int, s: int) -> complex:
        if s == 0:
            return complex(self.first[j])
        if s == self.n - 1:
            return complex(self.last[j])
        return complex(self.offsets[j - s + self.n - 1])

    def matrix(self) -> np.ndarray:
        """Dense ``(n, n)`` matrix; for tests and small grids."""
        n = self.n
        jj, ss = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
        m = self.offsets[jj - ss + n - 1].astype(complex)
        m[:, 0] = self.first
        if n > 1:
            m[:, -1] = self.last
        return m

    def _toeplitz(self, u: np.ndarray, spectrum: np.ndarray) -> np.ndarray:
        U = sfft.fft(u, n=self.fft_len, axis=-1, workers=FFT_WORKERS)
        return sfft.ifft(U * spectrum, axis=-1, workers=FFT_WORKERS)[..., : self.n]

    def apply(self, u: np.ndarray) -> np.ndarray:
        """Apply along the last axis of ``u``."""
        n = self.n
        if n == 1:
            return u * self.first[0]
        out = self._toeplitz(u, self.spectrum)
        # Toeplitz columns 0 and n-1 are offsets[n-1:] and offsets[:n]
        out += u[..., :1] * (self.first - self.offsets[n - 1:])
        out += u[..., -1:] * (self.last - self.offsets[:n])
        return out

    def adjoint(self, g: np.ndarray) -> np.ndarray:
        """Conjugate-transpose action along the last axis of ``g``."""
        n = self.n
        if n == 1:
            return g * np.conj(self.first[0])
        out = self._toeplitz(g, self.adjoint_spectrum)
        out[..., 0] += g @ np.conj(self.first - self.offsets[n - 1:])
        out[..., -1] += g @ np.conj(self.last - self.offsets[:n])
        return out


@dataclass(frozen=True, eq=False)
class PropagationKernel:
    """Precomputed propagation operator for one grid and distance."""

    method: Method
    z: float
    grid: GridSpec
    transfer: np.ndarray | None = None  # SPECTRAL: H on the fftfreq lattice
    x_axis: AxisOperator | None = None  # CONV: operator along columns (x)
    y_axis: AxisOperator | None = None  # CONV: operator along rows (y)

    def _check(self, a: np.ndarray) -> None:
        if a.shape[-2:] != self.grid.shape:
            raise ValueError(
                f"grid mismatch: field {a.shape[-2:]} vs kernel {self.grid.shape}"
            )

    def apply(self, u: np.ndarray) -> np.ndarray:
        """Propagate a padded array or a batch ``(..., rows, cols)``."""
        u = np.asarray(u, dtype=DTYPE)
        self._check(u)
        if self.method is Method.SPECTRAL:
            U = sfft.fft2(u, workers=FFT_WORKERS)
            return sfft.ifft2(U * self.transfer, workers=FFT_WORKERS)
        out = self.x_axis.apply(u)
        out = self.y_axis.apply(np.swapaxes(out, -1, -2))
        return np.ascontiguousarray(np.swapaxes(out, -1, -2))

    def apply_adjoint(self, g: np.ndarray) -> np.ndarray:
        g = np.asarray(g, dtype=DTYPE)
        self._check(g)
        if self.method is Method.SPECTRAL:
            G = sfft.fft2(g, workers=FFT_WORKERS)
            return sfft.ifft2(G * np.conj(self.transfer), workers=FFT_WORKERS)
        out = self.y_axis.adjoint(np.swapaxes(g, -1, -2))
        out = self.x_axis.adjoint(np.swapaxes(out, -1, -2))
        return out


def spectral_transfer(grid: GridSpec, z: float) -> np.ndarray:
    ny, nx = grid.shape
    fx = sfft.fftfreq(nx, d=grid.pitch)
    fy = sfft.fftfreq(ny, d=grid.pitch)
    f2 = fy[:, None] ** 2 + fx[None, :] ** 2
    # keep the global exp(ikz) separate: k z is ~3e6 rad, so fold it mod 2 pi
    kz = np.mod(grid.wavenumber * z, 2 * np.pi)
    return np.exp(1j * (kz - np.pi * grid.wavelength * z * f2))


def build_kernel(method: Method | str, grid: GridSpec, z: float) -> PropagationKernel:
    method = Method.parse(method)
    if not (np.isfinite(z) and z > 0):
        raise ValueError(f"propagation distance must be positive, got {z}")
    if method is Method.SPECTRAL:
        return PropagationKernel(method, float(z), grid, transfer=spectral_transfer(grid, z))
    ny, nx = grid.shape
    xa = AxisOperator.build(nx, grid.pitch, grid.wavelength, z)
    ya = xa if ny == nx else AxisOperator.build(ny, grid.pitch, grid.wavelength, z)
    return PropagationKernel(method, float(z), grid, x_axis=xa, y_axis=ya)


def _unwrap(f, k: PropagationKernel) -> np.ndarray:
    if isinstance(f, ComplexField):
        if f.grid.shape != k.grid.shape:
            raise ValueError(f"grid mismatch: field {f.grid.shape} vs kernel {k.grid.shape}")
        return f.values
    return np.asarray(f)


def propagate(f: ComplexField | np.ndarray, k: PropagationKernel):
    """Propagate a field by the kernel's distance.

    Accepts a :class:`ComplexField` (returns one) or a raw padded array /
    batch of arrays (returns an array).
    """
    out = k.apply(_unwrap(f, k))
    return ComplexField(f.grid, out) if isinstance(f, ComplexField) else out


def adjoint_propagate(g: ComplexField | np.ndarray, k: PropagationKernel):
    """Adjoint of :func:`propagate`: ``<propagate(f), g> == <f, adjoint_propagate(g)>``."""
    out = k.apply_adjoint(_unwrap(g, k))
    return ComplexField(g.grid, out) if isinstance(g, ComplexField) else out
