"""Fast invariant suite behind ``phasedrift selftest`` (a few seconds, deterministic)."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .coefficients import check_divergence_identities, compute_coefficients
from .correlation import CorrelationModel
from .delta_dynamics import StoppingConfig, integrate_path
from .fields import eval_grad_V, eval_S, eval_V, sample_field
from .limit_dynamics import LimitState, step_limit_sde
from .sphere_kolmogorov import solve_sphere_kolmogorov


@dataclass(frozen=True)
class Check:
    name: str
    passed: bool
    detail: str


def _coefficient_oracle():
    m = CorrelationModel()
    c = compute_coefficients(m, [0.0, 0.0, 2.0])
    target = math.sqrt(math.pi / 2) / 2.0
    err = max(abs(c.D_mn[0, 0] - target), abs(c.D_mn[1, 1] - target), abs(c.D_mn[2, 2]), abs(c.D - target))
    return err <= 1e-8, f"max |quadrature - closed form| = {err:.2e}"


def _sphere_identities():
    worst = 0.0
    rng = np.random.default_rng(7)
    for fam in ("GaussianIsotropic", "BumpSpectrum"):
        m = CorrelationModel(sigma_v=1.3, sigma_s=0.7, ell=0.8, rho_cross=0.4, family=fam,
                             cross_shift=(0.3, -0.2, 0.1))
        k = rng.normal(size=3) + np.array([0.0, 0.0, 1.5])
        c = compute_coefficients(m, k)
        khat = k / np.linalg.norm(k)
        worst = max(worst, float(np.linalg.norm(c.D_mn @ khat)), abs(np.trace(c.D_mn) + c.E_m @ k))
    ok = worst <= 1e-6
    rep = check_divergence_identities(CorrelationModel(rho_cross=0.5, cross_shift=(0.2, 0.0, 0.1)),
                                      [0.3, -0.4, 1.1])
    ok = ok and rep.max_residual <= 1e-5
    return ok, f"sphere/trace residual {worst:.1e}, divergence residual {rep.max_residual:.1e}"


def _formal_consistency():
    m = CorrelationModel(rho_cross=-0.6, cross_shift=(0.0, 0.4, -0.3))
    c = compute_coefficients(m, [0.5, 1.0, -0.7])
    err = max(float(np.max(np.abs(c.E_formal - c.cross))), abs(c.F_formal - c.E), abs(c.kappa - c.D))
    return err <= 1e-10, f"max formal/generator mismatch {err:.1e}"


def _free_motion():
    f = sample_field(CorrelationModel(sigma_v=0.0, sigma_s=0.0), 16, 1)
    k0 = np.array([0.3, -0.5, 1.1])
    p = integrate_path(f, [1.0, 2.0, 3.0], k0, 0.1, 1.0, 0.005)
    err = float(np.max(np.abs(p.X - (np.array([1.0, 2.0, 3.0]) - np.outer(p.times, k0)))))
    ok = err < 1e-12 and np.all(p.K == k0) and np.all(p.Z == 0.0)
    return ok, f"free-motion position error {err:.1e}"


def _field_checks():
    m = CorrelationModel(rho_cross=1.0)
    a = sample_field(m, 256, 5)
    b = sample_field(m, 256, 5)
    same = np.array_equal(a.wavevectors, b.wavevectors) and np.array_equal(a.amplitudes, b.amplitudes)
    y = np.array([[0.3, -1.2, 2.0], [5.0, 0.1, -0.4]])
    equal = float(np.max(np.abs(eval_V(a, y) - eval_S(a, y))))
    h = 1e-5
    g = eval_grad_V(a, y[0])
    fd = np.array([(eval_V(a, y[0] + h * e) - eval_V(a, y[0] - h * e)) / (2 * h) for e in np.eye(3)])
    rel = float(np.max(np.abs(g - fd)) / np.max(np.abs(g)))
    return same and equal < 1e-12 and rel < 1e-8, f"V-S gap {equal:.1e}, gradient rel. error {rel:.1e}"


def _sphere_decay():
    s = solve_sphere_kolmogorov(CorrelationModel(), 1.0, t_end=0.5, q0=np.cos)
    a = s.mode_coefficient(np.cos).real
    rate = -math.log(a[-1] / a[0]) / s.times[-1]
    rel = abs(rate / (2 * s.c + s.kappa) - 1.0)
    return rel <= 1e-2, f"cos-mode decay rate relative error {rel:.1e}"


def _projection():
    m = CorrelationModel(rho_cross=0.3)
    st = LimitState(np.zeros(3), np.array([0.0, 0.6, 0.8]), 0.0)
    rng = np.random.default_rng(3)
    worst = 0.0
    for _ in range(50):
        c = compute_coefficients(m, st.k)
        st = step_limit_sde(st, c, 1e-2, rng.standard_normal(4))
        worst = max(worst, abs(np.linalg.norm(st.k) - 1.0))
    return worst <= 1e-14, f"max ||k| - |k0|| = {worst:.1e}"


def _stopping_defaults():
    StoppingConfig()
    return True, "default exponents satisfy the ordering constraints"


CHECKS = {
    "coefficient_oracle": _coefficient_oracle,
    "sphere_identities": _sphere_identities,
    "formal_consistency": _formal_consistency,
    "free_motion": _free_motion,
    "field_construction": _field_checks,
    "sphere_decay": _sphere_decay,
    "sphere_projection": _projection,
    "stopping_defaults": _stopping_defaults,
}


def run_selftest():
    out = []
    for name, fn in CHECKS.items():
        try:
            ok, detail = fn()
        except Exception as exc:  # a crash is a failed check, reported rather than raised
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        out.append(Check(name, bool(ok), detail))
    return out
