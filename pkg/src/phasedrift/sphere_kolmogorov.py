"""Axisymmetric Kolmogorov equation on the momentum sphere.

For an isotropic model and spatially homogeneous data depending on the polar
angle only, the averaged two-field correlation q(t, theta) solves::

    dq/dt = c Lap_S2 q - kappa q + i E q,    c = D_perp(|k|) / |k|^2

Finite volumes on theta in [0, pi]: cell j has weight cos(theta_j-) - cos(theta_j+),
edge fluxes c sin(theta_e) dq/dtheta, zero flux through the poles, forward
Euler in time for the diffusion.  The damping and phase rotation have
constant rates and are applied exactly through exp((iE - kappa) t).
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .coefficients import compute_coefficients
from .correlation import CorrelationModel

__all__ = ["SphereSolution", "sphere_rates", "solve_sphere_kolmogorov", "DEFAULT_GRID"]

DEFAULT_GRID = 128
SAFETY = 0.9


def sphere_rates(model: CorrelationModel, k_norm: float):
    """(c, kappa, E) at |k| = ``k_norm`` for an unshifted isotropic model."""
    if model.shifted:
        raise ValueError("the sphere equation needs an unshifted isotropic cross-correlation")
    coeffs = compute_coefficients(model, [0.0, 0.0, float(k_norm)])
    c = coeffs.D_mn[0, 0] / k_norm**2
    return float(c), coeffs.kappa, coeffs.E


@dataclass(frozen=True, eq=False)
class SphereSolution:
    theta: np.ndarray      # cell centres
    weights: np.ndarray    # cell solid-angle weights / (2 pi)
    times: np.ndarray
    q: np.ndarray          # (len(times), n) complex
    c: float
    kappa: float
    E: float
    dt: float

    def project(self, f):
        """Weighted mean of q * f(theta) over the sphere at every stored time."""
        fv = f(self.theta)
        return (self.q * (self.weights * fv)).sum(axis=1) / self.weights.sum()

    def mode_coefficient(self, f):
        """Coefficient of the profile f(theta) in q (least squares in the sphere metric)."""
        fv = f(self.theta)
        return (self.q * (self.weights * fv)).sum(axis=1) / (self.weights * fv * fv).sum()


def _operator(n, c):
    dth = math.pi / n
    edges = np.linspace(0.0, math.pi, n + 1)
    theta = 0.5 * (edges[:-1] + edges[1:])
    w = np.cos(edges[:-1]) - np.cos(edges[1:])
    flux = c * np.sin(edges[1:-1]) / dth       # interior edges
    lower = flux / w[1:]                        # coupling j <- j-1
    upper = flux / w[:-1]                       # coupling j <- j+1
    diag = np.zeros(n)
    diag[:-1] -= upper
    diag[1:] -= lower
    return theta, w, lower, upper, diag


def stability_bound(n, c):
    """Largest stable forward-Euler step (Gershgorin); about dtheta^2 / (2c) for fine grids."""
    _, _, _, _, diag = _operator(n, c)
    lam = 2.0 * np.max(-diag)
    return 2.0 / lam if lam > 0 else math.inf


def solve_sphere_kolmogorov(model: CorrelationModel, k_norm: float, theta_grid_size: int = DEFAULT_GRID,
                            t_end: float = 1.0, dt=None, q0=None, *, n_out: int = 11,
                            rates=None) -> SphereSolution:
    """Solve for q(t, theta) from q0(theta) until ``t_end``.

    ``rates`` = (c, kappa, E) overrides the values computed from ``model``.
    ``dt`` defaults to half the stability bound; a larger step than
    SAFETY times the bound is rejected.
    """
    n = int(theta_grid_size)
    if n < 4:
        raise ValueError("theta_grid_size must be >= 4")
    c, kappa, E = sphere_rates(model, k_norm) if rates is None else rates
    theta, w, lower, upper, diag = _operator(n, c)
    bound = stability_bound(n, c)
    if dt is None:
        dt = 0.5 * bound if math.isfinite(bound) else t_end
    if dt > SAFETY * bound:
        raise ValueError(f"dt = {dt:.3g} exceeds the explicit stability bound {SAFETY} x {bound:.3g}")
    n_steps = max(1, math.ceil(t_end / dt - 1e-9))
    h = t_end / n_steps
    q = np.ones(n) if q0 is None else np.asarray(q0(theta), dtype=float) * np.ones(n)
    out_steps = set(np.rint(np.linspace(0, n_steps, n_out)).astype(int).tolist())
    times, frames = [], []
    for s in range(n_steps + 1):
        if s in out_steps:
            times.append(s * h)
            frames.append(q.copy())
        if s == n_steps:
            break
        lap = diag * q
        lap[1:] += lower * q[:-1]
        lap[:-1] += upper * q[1:]
        q = q + h * lap
    times = np.array(times)
    Q = np.array(frames) * np.exp((1j * E - kappa) * times)[:, None]
    return SphereSolution(theta, w, times, Q, c, kappa, E, h)
