"""Independent reference evaluations used by the tests.

Nothing here calls the package's Fresnel integrals or FFT kernels.
"""

import numpy as np


def cell_bounds(n: int, pitch: float) -> list[tuple[float, float]]:
    """Integration cells of the sample grid x_s = s * pitch; the outer cells are half cells."""
    out = []
    for s in range(n):
        lo = s * pitch - (0.0 if s == 0 else pitch / 2)
        hi = s * pitch + (0.0 if s == n - 1 else pitch / 2)
        if n == 1:
            lo, hi = -pitch / 2, pitch / 2
        out.append((lo, hi))
    return out


def quad_axis_matrix(n: int, pitch: float, wavelength: float, z: float, nodes: int = 24) -> np.ndarray:
    """Q[j, s] = (i lambda z)^(-1/2) * integral over cell s of exp(i pi (x_j - x)^2 / (lambda z)) dx."""
    t, w = np.polynomial.legendre.leggauss(nodes)
    pref = 1.0 / np.sqrt(1j * wavelength * z)
    xj = np.arange(n) * pitch
    q = np.zeros((n, n), dtype=complex)
    for s, (lo, hi) in enumerate(cell_bounds(n, pitch)):
        # split so the chirp phase changes by well under a radian per piece
        span = max(abs(xj[-1] - lo), abs(hi), abs(hi - xj[-1]), pitch)
        dphase = 2 * np.pi * span * (hi - lo) / (wavelength * z)
        pieces = max(1, int(np.ceil(dphase / 0.5)))
        edges = np.linspace(lo, hi, pieces + 1)
        for a, b in zip(edges[:-1], edges[1:]):
            x = 0.5 * (b - a) * t + 0.5 * (a + b)
            ph = np.exp(1j * np.pi * (xj[:, None] - x[None, :]) ** 2 / (wavelength * z))
            q[:, s] += 0.5 * (b - a) * (ph @ w)
    return pref * q


def quad_propagate(u: np.ndarray, pitch: float, wavelength: float, z: float) -> np.ndarray:
    """Direct double sum out[i, j] = sum_{t, s} u[t, s] K_y[i, t] K_x[j, s]."""
    ny, nx = u.shape
    qy = quad_axis_matrix(ny, pitch, wavelength, z)
    qx = qy if nx == ny else quad_axis_matrix(nx, pitch, wavelength, z)
    out = np.zeros((ny, nx), dtype=complex)
    for i in range(ny):
        for j in range(nx):
            out[i, j] = np.sum(u * np.outer(qy[i], qx[j]))
    return out


def gaussian_spot(n: int, sigma: float) -> np.ndarray:
    c = (n - 1) / 2
    y, x = np.mgrid[:n, :n]
    return np.exp(-((x - c) ** 2 + (y - c) ** 2) / (2 * sigma ** 2)).astype(complex)


def rel_l2(a, b) -> float:
    return float(np.linalg.norm(np.asarray(a) - np.asarray(b)) / np.linalg.norm(b))
