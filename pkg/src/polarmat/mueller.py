"""Stokes-Mueller algebra for ideal polarization elements.

Mueller matrices are plain ``(4, 4)`` float arrays and Stokes vectors are
``(4,)`` arrays. Angles are radians about the optical axis; every element
matrix depends on them only through ``cos 2θ`` and ``sin 2θ``.
"""
from __future__ import annotations

import numpy as np

TOL = 1e-9


def canonical_angle(theta):
    """Map an angle (or array of angles) into ``[0, π)``."""
    out = np.mod(theta, np.pi)
    # mod rounds tiny negative inputs up to exactly π
    out = np.where(out >= np.pi, 0.0, out)
    return float(out) if np.ndim(out) == 0 else out


def _cs(theta: float) -> tuple[float, float]:
    return np.cos(2.0 * theta), np.sin(2.0 * theta)


def linear_polarizer(theta: float) -> np.ndarray:
    c, s = _cs(theta)
    return 0.5 * np.array(
        [
            [1.0, c, s, 0.0],
            [c, c * c, s * c, 0.0],
            [s, s * c, s * s, 0.0],
            [0.0, 0.0, 0.0, 0.0],
        ]
    )


def quarter_wave_plate(theta: float) -> np.ndarray:
    c, s = _cs(theta)
    return np.array(
        [
            [1.0, 0.0, 0.0, 0.0],
            [0.0, c * c, s * c, -s],
            [0.0, s * c, s * s, c],
            [0.0, s, -c, 0.0],
        ]
    )


def rotator(theta: float) -> np.ndarray:
    c, s = _cs(theta)
    return np.array(
        [
            [1.0, 0.0, 0.0, 0.0],
            [0.0, c, s, 0.0],
            [0.0, -s, c, 0.0],
            [0.0, 0.0, 0.0, 1.0],
        ]
    )


def rotate_mueller(m: np.ndarray, theta: float) -> np.ndarray:
    """Mueller matrix of ``m`` after rotating the object by ``theta``: C(-θ) M C(θ)."""
    return rotator(-theta) @ m @ rotator(theta)


def rotate_mueller_batch(m: np.ndarray, theta: np.ndarray) -> np.ndarray:
    """Vectorized :func:`rotate_mueller` for ``m`` of shape (B, 4, 4) and ``theta`` of shape (B,)."""
    theta = np.asarray(theta, dtype=float)
    c, s = np.cos(2.0 * theta), np.sin(2.0 * theta)
    rot = np.zeros(theta.shape + (4, 4))
    rot[..., 0, 0] = 1.0
    rot[..., 3, 3] = 1.0
    rot[..., 1, 1] = c
    rot[..., 2, 2] = c
    rot[..., 1, 2] = s
    rot[..., 2, 1] = -s
    inv = np.swapaxes(rot, -1, -2)  # C(-θ) == C(θ)ᵀ
    return inv @ m @ rot


def apply(m: np.ndarray, s: np.ndarray) -> np.ndarray:
    return np.asarray(m) @ np.asarray(s)


def unpolarized(intensity: float = 1.0) -> np.ndarray:
    return np.array([intensity, 0.0, 0.0, 0.0])


def is_physical(s: np.ndarray, tol: float = TOL) -> bool:
    """True when ``s0 >= 0`` and the degree of polarization is at most one."""
    s = np.asarray(s, dtype=float)
    if s[0] < -tol:
        return False
    return bool(np.sqrt(np.sum(s[1:] ** 2)) <= s[0] + tol)


def is_passive(m: np.ndarray, tol: float = TOL) -> bool:
    m = np.asarray(m, dtype=float)
    return bool(np.all(np.abs(m) <= m[0, 0] + tol))


def probe_states() -> np.ndarray:
    """The 26 fully polarized probe directions of a 3x3x3 cube shell plus unpolarized light.

    Returns an array of shape (27, 4).
    """
    dirs = []
    for x in (-1, 0, 1):
        for y in (-1, 0, 1):
            for z in (-1, 0, 1):
                if (x, y, z) != (0, 0, 0):
                    v = np.array([x, y, z], dtype=float)
                    dirs.append(np.concatenate([[1.0], v / np.linalg.norm(v)]))
    dirs.append(unpolarized())
    return np.array(dirs)


def maps_to_physical(m: np.ndarray, tol: float = TOL) -> bool:
    """Check that ``m`` maps every probe state to a physical Stokes vector."""
    out = probe_states() @ np.asarray(m).T
    dop = np.sqrt(np.sum(out[:, 1:] ** 2, axis=1))
    return bool(np.all(out[:, 0] >= -tol) and np.all(dop <= out[:, 0] + tol))
