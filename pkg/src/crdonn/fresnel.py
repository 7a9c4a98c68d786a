"""Fresnel integrals ``C(x) = int_0^x cos(pi t^2 / 2) dt`` and ``S(x)`` (sine analog).

Small arguments use the Maclaurin series; for ``|x| > SWITCH`` the complex
combination ``C + iS`` is evaluated from the continued fraction for the
complementary error function (modified Lentz iteration), which converges
quickly once ``pi x^2`` is a few units.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

SWITCH = 1.6
_EPS = 1e-16
_TINY = 1e-300
_MAX_TERMS = 60
_MAX_CF = 200


class FresnelPair(NamedTuple):
    c: float | np.ndarray
    s: float | np.ndarray


def _series(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # term_n of the combined series sum (i pi/2)^n x^(2n+1) / (n! (2n+1)):
    # even n feed C, odd n feed S.
    c = np.zeros_like(x)
    s = np.zeros_like(x)
    half_pi_x2 = 0.5 * np.pi * x * x
    fact = x.copy()  # (pi x^2/2)^n x / n!
    for n in range(_MAX_TERMS):
        term = fact / (2 * n + 1)
        sign = -1.0 if (n // 2) % 2 else 1.0
        if n % 2 == 0:
            c += sign * term
        else:
            s += sign * term
        fact = fact * half_pi_x2 / (n + 1)
        if np.all(np.abs(term) <= _EPS * np.maximum(np.abs(c), np.abs(s) + _TINY)) and n > 2:
            break
    return c, s


def _continued_fraction(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    pix2 = np.pi * x * x
    b = 1.0 - 1j * pix2
    cc = np.full(x.shape, 1.0 / _TINY, dtype=complex)
    d = 1.0 / b
    h = d.copy()
    n = -1
    done = np.zeros(x.shape, dtype=bool)
    for _ in range(_MAX_CF):
        n += 2
        a = -n * (n + 1.0)
        b = b + 4.0
        d = 1.0 / (a * d + b)
        cc = b + a / cc
        delta = cc * d
        h = np.where(done, h, h * delta)
        done |= np.abs(delta - 1.0) < _EPS
        if done.all():
            break
    h = (x - 1j * x) * h
    cs = (0.5 + 0.5j) * (1.0 - np.exp(0.5j * pix2) * h)
    return cs.real, cs.imag


def fresnel_integrals(x) -> FresnelPair:
    """Return ``FresnelPair(C(x), S(x))``; scalars in, scalars out."""
    scalar = np.ndim(x) == 0
    xa = np.atleast_1d(np.asarray(x, dtype=float))
    if not np.all(np.isfinite(xa)):
        raise ValueError("Fresnel integrals need finite arguments")
    ax = np.abs(xa)
    c = np.zeros_like(ax)
    s = np.zeros_like(ax)
    small = ax <= SWITCH
    if small.any():
        c[small], s[small] = _series(ax[small])
    if (~small).any():
        c[~small], s[~small] = _continued_fraction(ax[~small])
    sign = np.sign(xa)
    c, s = sign * c, sign * s
    if scalar:
        return FresnelPair(float(c[0]), float(s[0]))
    return FresnelPair(c.reshape(np.shape(x)), s.reshape(np.shape(x)))


def fresnel_e(x) -> np.ndarray:
    """``C(x) + i S(x)`` as a complex array."""
    c, s = fresnel_integrals(x)
    return np.asarray(c) + 1j * np.asarray(s)
