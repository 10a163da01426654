"""Probability that one freely diffusing molecule sits inside a passive spherical observer.

Both functions are vectorised over ``t`` (and over ``d`` where it makes sense).
Units are SI throughout: seconds, metres, m^2/s, m^3.
"""

from __future__ import annotations

import warnings

import numpy as np
from scipy.special import erf, erfc


class FarFieldWarning(UserWarning):
    """The point-observer approximation produced a value above 1 and was clamped."""


def _check_time(t):
    t = np.asarray(t, dtype=float)
    if np.any(t <= 0):
        raise ValueError("elapsed time must be > 0")
    return t


def hit_prob_point_source(t, d, D, V_obs):
    """Uniform-concentration approximation: observer volume times the Gaussian kernel at its centre.

    Only valid when the observer is far from the source compared with its
    radius. Values above 1 are clamped and a :class:`FarFieldWarning` is emitted.
    """
    t = _check_time(t)
    d = np.asarray(d, dtype=float)
    p = V_obs / (4 * np.pi * D * t) ** 1.5 * np.exp(-(d * d) / (4 * D * t))
    if np.any(p > 1):
        warnings.warn(
            f"point-observer probability exceeded 1 (max {np.max(p):.3g}); clamped", FarFieldWarning, stacklevel=2
        )
    p = np.clip(p, 0.0, 1.0)
    return p if p.ndim else float(p)


def hit_prob_sphere(t, d, D, r_obs):
    """Exact probability for a sphere of radius ``r_obs`` whose centre is ``d`` from the point source.

    ``d == 0`` is a removable singularity of the closed form; use
    :func:`hit_prob_sphere_center` for a source at the centre.
    """
    t = _check_time(t)
    d = np.asarray(d, dtype=float)
    if np.any(d <= 0):
        raise ValueError("d must be > 0; use hit_prob_sphere_center for a source at the observer centre")
    r = r_obs
    sdt = np.sqrt(D * t)
    s = 2 * sdt
    # erf(a) + erf(b) with b = (r - d)/s; for d > r use erfc so the far field keeps its digits
    far = d > r
    with np.errstate(invalid="ignore"):
        erf_part = np.where(
            far,
            0.5 * (erfc((d - r) / s) - erfc((d + r) / s)),
            0.5 * (erf((r + d) / s) + erf((r - d) / s)),
        )
    # exp(-(d-r)^2/4Dt) - exp(-(d+r)^2/4Dt) = exp(-(d-r)^2/4Dt) * (1 - exp(-d r / Dt))
    exp_part = sdt / (d * np.sqrt(np.pi)) * np.exp(-((d - r) ** 2) / (4 * D * t)) * -np.expm1(-d * r / (D * t))
    p = np.clip(erf_part - exp_part, 0.0, 1.0)
    return p if p.ndim else float(p)


def hit_prob_sphere_center(t, D, r_obs):
    """The ``d -> 0`` limit of :func:`hit_prob_sphere`."""
    t = _check_time(t)
    r = r_obs
    p = erf(r / (2 * np.sqrt(D * t))) - r / np.sqrt(np.pi * D * t) * np.exp(-(r * r) / (4 * D * t))
    p = np.clip(p, 0.0, 1.0)
    return p if p.ndim else float(p)
