"""The limiting diffusion (X, K, Z) and its Feynman-Kac observables.

The (k, z) block has drift (E_m(k), E(k)) and second-order coefficients
A = [[D_mn, c/2], [c^T/2, D]] with c = D_m(k) + D_m(-k); the generator carries
them without the usual factor 1/2, so the noise factor satisfies B B^T = 2A.
X is transported by dx = -k dt.  The exact process keeps |k| fixed; the
Euler-Maruyama step is followed by a projection back onto the sphere.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .coefficients import CoefficientField, TransportCoefficients
from .correlation import CorrelationModel
from .seeding import derive_seed, generator
from .sphere_kolmogorov import SphereSolution, solve_sphere_kolmogorov, sphere_rates
from .stats import mean_se, modulus_se, var_se
from .timegrid import aligned_grid

__all__ = [
    "CoefficientError",
    "LimitState",
    "LimitSamples",
    "LimitEstimate",
    "diffusion_factor",
    "step_limit_sde",
    "default_limit_dt",
    "simulate_limit",
    "estimate_limit_observable",
    "limit_moments",
    "sphere_rates",
    "SphereSolution",
    "solve_sphere_kolmogorov",
]

NEG_EIG_TOL = 1e-9
NOISE_BLOCK = 256


class CoefficientError(ValueError):
    """Second-order coefficient block is not positive semidefinite."""


@dataclass(frozen=True)
class LimitState:
    x: np.ndarray
    k: np.ndarray
    z: float


def diffusion_factor(A):
    """Symmetric B with B B^T = 2A for a stack of 4x4 blocks (eigenvalues in [-1e-9, 0] clamped)."""
    A = np.asarray(A, dtype=float)
    w, q = np.linalg.eigh(0.5 * (A + np.swapaxes(A, -1, -2)))
    if np.any(w < -NEG_EIG_TOL):
        raise CoefficientError(f"coefficient block has eigenvalue {w.min():.3e} < -{NEG_EIG_TOL:g}")
    root = np.sqrt(2.0 * np.clip(w, 0.0, None))
    return np.einsum("...ij,...j,...kj->...ik", q, root, q)


def _blocks(D_mn, cross, D):
    n = D_mn.shape[0]
    A = np.zeros((n, 4, 4))
    A[:, :3, :3] = D_mn
    A[:, :3, 3] = 0.5 * cross
    A[:, 3, :3] = 0.5 * cross
    A[:, 3, 3] = D
    return A


def step_limit_sde(state: LimitState, coeffs: TransportCoefficients, dt: float, noise) -> LimitState:
    """One Euler-Maruyama step with coefficients evaluated at ``state.k``."""
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    noise = np.asarray(noise, dtype=float).reshape(4)
    k = np.asarray(state.k, dtype=float)
    radius = np.linalg.norm(k)
    B = diffusion_factor(coeffs.A)
    inc = B @ noise * math.sqrt(dt)
    k_new = k + coeffs.E_m * dt + inc[:3]
    z_new = state.z + coeffs.E * dt + inc[3]
    x_new = np.asarray(state.x, dtype=float) - k * dt
    return LimitState(x_new, k_new * (radius / np.linalg.norm(k_new)), float(z_new))


def default_limit_dt(model: CorrelationModel, k0):
    """1e-3 min(1, 1/c) with c = D_perp / |k|^2 the sphere diffusivity at k0."""
    k0 = np.asarray(k0, dtype=float)
    d_mn = CoefficientField(model)(k0)[0][0]
    kn = np.linalg.norm(k0)
    c = 0.5 * np.trace(d_mn) / kn**2
    return 1e-3 * min(1.0, 1.0 / c) if c > 0 else 1e-3


@dataclass(frozen=True, eq=False)
class LimitSamples:
    times: np.ndarray   # (C,)
    X: np.ndarray       # (P, C, 3)
    K: np.ndarray       # (P, C, 3)
    Z: np.ndarray       # (P, C)


def simulate_limit(model: CorrelationModel, x0, k0, t_end: float, n_paths: int, seed: int = 0, *,
                   dt=None, checkpoints=None) -> LimitSamples:
    """Euler-Maruyama ensemble of the limit diffusion, recorded at ``checkpoints``.

    Path i draws its noise from its own generator keyed by (seed, i), so the
    ensemble is reproducible path by path.
    """
    x0 = np.asarray(x0, dtype=float).reshape(3)
    k0 = np.asarray(k0, dtype=float).reshape(3)
    if n_paths < 1:
        raise ValueError("n_paths must be >= 1")
    if dt is None:
        dt = default_limit_dt(model, k0)
    n_steps, h, idx = aligned_grid(t_end, dt, checkpoints)
    field = CoefficientField(model)
    gens = [generator(derive_seed(seed, i, "limit")) for i in range(n_paths)]
    radius = np.linalg.norm(k0)
    x = np.tile(x0, (n_paths, 1))
    k = np.tile(k0, (n_paths, 1))
    z = np.zeros(n_paths)
    X = np.empty((n_paths, idx.size, 3))
    K = np.empty((n_paths, idx.size, 3))
    Z = np.empty((n_paths, idx.size))
    sq = math.sqrt(h)
    noise = None

    def record(step):
        for c in np.nonzero(idx == step)[0]:
            X[:, c] = x
            K[:, c] = k
            Z[:, c] = z

    record(0)
    for n in range(n_steps):
        j = n % NOISE_BLOCK
        if j == 0:
            m = min(NOISE_BLOCK, n_steps - n)
            noise = np.stack([g.standard_normal((m, 4)) for g in gens], axis=1)
        d_mn, cross, D, e_m, e = field(k)
        B = diffusion_factor(_blocks(d_mn, cross, D))
        inc = np.einsum("pij,pj->pi", B, noise[j]) * sq
        x = x - k * h
        k = k + e_m * h + inc[:, :3]
        k *= (radius / np.linalg.norm(k, axis=1))[:, None]
        z = z + e * h + inc[:, 3]
        record(n + 1)
    return LimitSamples(idx * h, X, K, Z)


@dataclass(frozen=True)
class LimitEstimate:
    value: complex
    se_real: float
    se_imag: float
    n_paths: int
    dt: float

    @property
    def se(self):
        """Standard error of the complex estimate (root of summed component variances)."""
        return math.hypot(self.se_real, self.se_imag)


def estimate_limit_observable(model: CorrelationModel, x0, k0, t: float, n_paths: int, seed: int,
                              W0, *, dt=None, tol=None) -> LimitEstimate:
    """Monte Carlo estimate of E[exp(iZ(t)) W0(X(t), K(t))] started from (x0, k0, 0).

    ``W0`` maps arrays (P, 3), (P, 3) to P values.  Raises if ``tol`` is given and
    the standard error exceeds it.
    """
    x0 = np.asarray(x0, dtype=float).reshape(3)
    k0 = np.asarray(k0, dtype=float).reshape(3)
    if t == 0.0:
        v = complex(np.asarray(W0(x0[None], k0[None])).reshape(-1)[0])
        return LimitEstimate(v, 0.0, 0.0, n_paths, 0.0)
    if dt is None:
        dt = default_limit_dt(model, k0)
    s = simulate_limit(model, x0, k0, t, n_paths, seed, dt=dt)
    w = np.exp(1j * s.Z[:, -1]) * np.asarray(W0(s.X[:, -1], s.K[:, -1]))
    n = w.size
    se_r = float(w.real.std(ddof=1) / math.sqrt(n)) if n > 1 else math.inf
    se_i = float(w.imag.std(ddof=1) / math.sqrt(n)) if n > 1 else math.inf
    est = LimitEstimate(complex(w.mean()), se_r, se_i, n, aligned_grid(t, dt)[1])
    if tol is not None and est.se > tol:
        raise RuntimeError(f"standard error {est.se:.3g} exceeds tolerance {tol:g} with {n_paths} paths")
    return est


def limit_moments(samples: LimitSamples, k0):
    """Var Z, |E exp(iZ)|, E|K - k0|^2 and E[(K - k0)(K - k0)^T] with standard errors at each checkpoint."""
    vz, vz_se = var_se(samples.Z)
    _, mod, mod_se = modulus_se(np.exp(1j * samples.Z))
    dk = samples.K - np.asarray(k0, dtype=float)
    kc, kc_se = mean_se(dk[..., :, None] * dk[..., None, :])
    ksq, ksq_se = mean_se((dk**2).sum(axis=-1))
    return {"var_Z": (vz, vz_se), "decoherence_abs": (mod, mod_se), "K_sq": (ksq, ksq_se),
            "K_cov": (kc, kc_se)}

