"""Macroscopic transport coefficients of the phase-space diffusion limit.

All coefficients are one-dimensional integrals of correlation derivatives
along the ray ``{s k : s >= 0}``::

    D_mn(k)  = -int_0^inf  d_m d_n R^VV(s k) ds
    D(k)     =  int_0^inf  R^SS(s k) ds                 (= kappa)
    D_m(+-k) =  int_0^inf  d_m R^SV(+-s k) ds
    E_m(k)   = -int_0^inf  s d_m lap R^VV(s k) ds
    E(k)     =  int_0^inf  s lap R^SV(s k) ds

The "formal" set (E_formal, F_formal, kappa) is computed in an independent
quadrature pass; E_formal integrates d_j R^SV over the whole line.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .correlation import CorrelationModel
from .quadrature import gauss_kronrod

__all__ = [
    "K_MIN",
    "TransportCoefficients",
    "DivergenceReport",
    "compute_coefficients",
    "check_divergence_identities",
    "reduce_generator_to_wigner",
    "diffusion_matrix_two_sided",
    "isotropic_coefficients",
    "CoefficientField",
]

K_MIN = 1e-3
ATOL = 1e-10


@dataclass(frozen=True)
class TransportCoefficients:
    k: np.ndarray
    D_mn: np.ndarray
    D: float
    D_m_plus: np.ndarray
    D_m_minus: np.ndarray
    E_m: np.ndarray
    E: float
    E_formal: np.ndarray
    F_formal: float
    kappa: float

    @property
    def cross(self):
        """D_m(k) + D_m(-k), the k-z mixed second-order coefficient."""
        return self.D_m_plus + self.D_m_minus

    @property
    def A(self):
        """Symmetric 4x4 second-order block over (k_1, k_2, k_3, z)."""
        a = np.zeros((4, 4))
        a[:3, :3] = self.D_mn
        a[:3, 3] = a[3, :3] = 0.5 * self.cross
        a[3, 3] = self.D
        return a

    def to_dict(self):
        return {
            "k": self.k.tolist(),
            "D_mn": self.D_mn.tolist(),
            "D": self.D,
            "D_m_plus": self.D_m_plus.tolist(),
            "D_m_minus": self.D_m_minus.tolist(),
            "E_m": self.E_m.tolist(),
            "E": self.E,
            "E_formal": self.E_formal.tolist(),
            "F_formal": self.F_formal,
            "kappa": self.kappa,
        }


def _check_k(k, k_min):
    k = np.asarray(k, dtype=float).reshape(3)
    if not np.all(np.isfinite(k)):
        raise ValueError("momentum must be finite")
    if np.linalg.norm(k) < k_min:
        raise ValueError(f"|k| = {np.linalg.norm(k):.3g} is below k_min = {k_min:g}")
    return k


def _s_max(model: CorrelationModel, k):
    reach = model.kernel.cutoff_radius + np.linalg.norm(model.shift)
    return reach / np.linalg.norm(k)


def compute_coefficients(model: CorrelationModel, k, *, k_min=K_MIN, atol=ATOL):
    """Evaluate every transport coefficient at momentum ``k`` by adaptive quadrature."""
    k = _check_k(k, k_min)
    s_max = _s_max(model, k)

    def ray(s):
        y = s[:, None] * k
        n = s.size
        out = np.empty((n, 20))
        out[:, 0:9] = model.eval_hess("VV", y).reshape(n, 9)
        out[:, 9] = model.eval("SS", y)
        out[:, 10:13] = model.eval_grad("SV", y)
        out[:, 13:16] = model.eval_grad("SV", -y)
        out[:, 16:19] = s[:, None] * model.eval_laplacian_grad("VV", y)
        out[:, 19] = s * model.eval_laplacian("SV", y)
        return out

    val, _ = gauss_kronrod(ray, 0.0, s_max, atol=atol)
    hess = val[0:9].reshape(3, 3)
    d_mn = -0.5 * (hess + hess.T)

    def formal_one_sided(s):
        y = s[:, None] * k
        return np.stack([s * model.eval_laplacian("SV", y), model.eval("SS", y)], axis=1)

    def formal_two_sided(s):
        return model.eval_grad("SV", s[:, None] * k)

    f1, _ = gauss_kronrod(formal_one_sided, 0.0, s_max, atol=atol)
    f2, _ = gauss_kronrod(formal_two_sided, -s_max, s_max, atol=atol)

    return TransportCoefficients(
        k=k,
        D_mn=d_mn,
        D=float(val[9]),
        D_m_plus=val[10:13].copy(),
        D_m_minus=val[13:16].copy(),
        E_m=-val[16:19],
        E=float(val[19]),
        E_formal=f2,
        F_formal=float(f1[0]),
        kappa=float(f1[1]),
    )


def diffusion_matrix_two_sided(model: CorrelationModel, k, *, k_min=K_MIN, atol=ATOL):
    """D_mn from the symmetric form -1/2 int_{-inf}^{inf} d_m d_n R^VV(s k) ds."""
    k = _check_k(k, k_min)
    s_max = _s_max(model, k)
    val, _ = gauss_kronrod(lambda s: model.eval_hess("VV", s[:, None] * k).reshape(s.size, 9),
                           -s_max, s_max, atol=atol)
    h = val.reshape(3, 3)
    return -0.25 * (h + h.T)


def reduce_generator_to_wigner(coeffs: TransportCoefficients):
    """Coefficients (E, F, kappa) of the averaged Wigner equation implied by the generator.

    Acting with the generator on e^{iz} r(k) leaves first-order term
    i (D_m(k) + D_m(-k)) d_m r, zeroth-order term i E r and damping -D r.
    """
    return coeffs.cross.copy(), coeffs.E, coeffs.D


@dataclass(frozen=True)
class DivergenceReport:
    drift_residual: float   # max_n |sum_m d_m D_mn - E_n|
    phase_residual: float   # |sum_m d_m D_m(k) - E|
    trace_residual: float   # |tr D + E . k|
    fd_step: float
    coefficients: TransportCoefficients | None = None   # the coefficients at k itself

    @property
    def max_residual(self):
        return max(self.drift_residual, self.phase_residual, self.trace_residual)


def check_divergence_identities(model: CorrelationModel, k, fd_step=1e-4, *, atol=ATOL):
    """Finite-difference check that the divergence and compact forms of the generator agree."""
    k = _check_k(k, K_MIN)
    centre = compute_coefficients(model, k, atol=atol)
    div_d = np.zeros(3)
    div_dm = 0.0
    for m in range(3):
        h = np.zeros(3)
        h[m] = fd_step
        up = compute_coefficients(model, k + h, atol=atol)
        dn = compute_coefficients(model, k - h, atol=atol)
        div_d += (up.D_mn[m] - dn.D_mn[m]) / (2 * fd_step)
        div_dm += (up.D_m_plus[m] - dn.D_m_plus[m]) / (2 * fd_step)
    return DivergenceReport(
        drift_residual=float(np.max(np.abs(div_d - centre.E_m))),
        phase_residual=float(abs(div_dm - centre.E)),
        trace_residual=float(abs(np.trace(centre.D_mn) + centre.E_m @ k)),
        fd_step=fd_step,
        coefficients=centre,
    )


def isotropic_coefficients(model: CorrelationModel, k):
    """Closed-form coefficients for unshifted isotropic models, vectorised over ``k`` (n, 3).

    With c0 = int_0^inf g(r) dr and c1 = -int_0^inf g'(r)/r dr the ray integrals
    reduce to::

        D_mn = sigma_v^2 c1 (I - k^ k^) / |k|     E_m = -2 sigma_v^2 c1 k^ / |k|^2
        D    = sigma_s^2 c0 / |k|                 D_m(+-k) = -+ c_sv k^ / |k|
        E    = -c_sv / |k|^2
    """
    if model.shifted:
        raise ValueError("closed-form coefficients need an unshifted cross-correlation")
    k = np.atleast_2d(np.asarray(k, dtype=float))
    c0, c1 = model.kernel.ray_constants()
    c_sv = model.rho_cross * model.sigma_v * model.sigma_s
    kn = np.linalg.norm(k, axis=1)
    khat = k / kn[:, None]
    proj = np.eye(3)[None] - khat[:, :, None] * khat[:, None, :]
    return {
        "D_mn": model.sigma_v**2 * c1 * proj / kn[:, None, None],
        "D": model.sigma_s**2 * c0 / kn,
        "D_m_plus": -c_sv * khat / kn[:, None],
        "D_m_minus": c_sv * khat / kn[:, None],
        "E_m": -2.0 * model.sigma_v**2 * c1 * khat / kn[:, None] ** 2,
        "E": -c_sv / kn**2,
    }


class CoefficientField:
    """Coefficients as a function of momentum, batched over many k.

    Unshifted isotropic models use the closed form; otherwise each k is
    integrated by quadrature (slow, meant for small ensembles).
    """

    def __init__(self, model: CorrelationModel):
        self.model = model
        self.closed_form = not model.shifted

    def __call__(self, k):
        k = np.atleast_2d(np.asarray(k, dtype=float))
        if self.closed_form:
            c = isotropic_coefficients(self.model, k)
            return c["D_mn"], c["D_m_plus"] + c["D_m_minus"], c["D"], c["E_m"], c["E"]
        rows = [compute_coefficients(self.model, kk) for kk in k]
        return (np.stack([r.D_mn for r in rows]), np.stack([r.cross for r in rows]),
                np.array([r.D for r in rows]), np.stack([r.E_m for r in rows]),
                np.array([r.E for r in rows]))


def gaussian_closed_form(model: CorrelationModel, k):
    """Closed-form D_mn and kappa for the Gaussian family: sqrt(pi/2) sigma^2 / (ell |k|) scalings."""
    k = np.asarray(k, dtype=float)
    kn = float(np.linalg.norm(k))
    khat = k / kn
    c = math.sqrt(math.pi / 2.0)
    d_mn = model.sigma_v**2 * c / (model.ell * kn) * (np.eye(3) - np.outer(khat, khat))
    kappa = model.sigma_s**2 * c * model.ell / kn
    return d_mn, kappa
