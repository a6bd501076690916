"""Two-point correlation tensor of the joint medium field F = (V, S).

Every model is built from a unit-variance isotropic kernel ``g`` with
correlation length ``ell``::

    R^VV(y) = sigma_v**2 * g(y)
    R^SS(y) = sigma_s**2 * g(y)
    R^SV(y) = rho * sigma_v * sigma_s * g(y - b)      (b = cross_shift)
    R^VS(y) = R^SV(-y)

Isotropic kernels are described through four radial functions ``A0, A1, A2, B``
of r = |y| that are regular at the origin::

    g          = A0
    grad g     = -A1 * y
    hess g     = -A1 * I + A2 * y y^T
    grad lap g = B * y

so that every derivative needed by the transport coefficients is analytic.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from functools import lru_cache

import numba as nb
import numpy as np

from ._kernels import sincos
from scipy import integrate

__all__ = [
    "Family",
    "GaussianKernel",
    "BumpKernel",
    "CorrelationModel",
    "Violation",
    "COMPONENTS",
    "get_kernel",
]

COMPONENTS = ("VV", "SV", "VS", "SS")
ENVELOPE_REL = 1e-14


class Family(str, enum.Enum):
    GAUSSIAN = "GaussianIsotropic"
    BUMP = "BumpSpectrum"


# --- spherical Bessel helpers -------------------------------------------------

def _series_coeffs(n, terms=10):
    # j_n(x) / x^n = sum_k (-1)^k x^(2k) / (2^k k! (2n+2k+1)!!)
    out = []
    for k in range(terms):
        dfact = 1.0
        for m in range(1, 2 * n + 2 * k + 2, 2):
            dfact *= m
        out.append((-1) ** k / (2.0**k * math.factorial(k) * dfact))
    return np.array(out)


_J0_SERIES = _series_coeffs(0)
_J1_SERIES = _series_coeffs(1)
_J2_SERIES = _series_coeffs(2)
_SMALL_X = 0.5


def _poly_x2(coeffs, x2):
    acc = np.zeros_like(x2)
    for c in coeffs[::-1]:
        acc = acc * x2 + c
    return acc


def _bessel_parts(x):
    """Return j0(x), j1(x)/x, j2(x)/x**2 for x >= 0, accurate at small x."""
    x = np.asarray(x, dtype=float)
    small = x < _SMALL_X
    xs = np.where(small, 1.0, x)
    s, c = np.sin(xs), np.cos(xs)
    j0 = s / xs
    j1x = (s - xs * c) / xs**3
    j2x2 = ((3.0 - xs * xs) * s - 3.0 * xs * c) / xs**5
    if np.any(small):
        x2 = x * x
        j0 = np.where(small, _poly_x2(_J0_SERIES, x2), j0)
        j1x = np.where(small, _poly_x2(_J1_SERIES, x2), j1x)
        j2x2 = np.where(small, _poly_x2(_J2_SERIES, x2), j2x2)
    return j0, j1x, j2x2


@nb.njit(cache=True, nogil=True, fastmath=True)
def _bump_radial_sums(r, kappa, inv_kappa, p):
    # kappa is ascending: nodes with kappa * r below _SMALL_X use the series,
    # the rest the closed forms.  The closed-form loop is division-free so
    # that it vectorises.
    n = r.size
    out = np.zeros((4, n))
    for i in range(n):
        a0 = 0.0
        a1 = 0.0
        a2 = 0.0
        b = 0.0
        ri = abs(r[i])
        split = kappa.size if ri == 0.0 else np.searchsorted(kappa, _SMALL_X / ri)
        for j in range(split):
            k2 = kappa[j] * kappa[j]
            x2 = k2 * ri * ri
            j0 = 0.0
            j1x = 0.0
            j2x2 = 0.0
            for m in range(_J0_SERIES.size - 1, -1, -1):
                j0 = j0 * x2 + _J0_SERIES[m]
                j1x = j1x * x2 + _J1_SERIES[m]
                j2x2 = j2x2 * x2 + _J2_SERIES[m]
            a0 += p[j] * j0
            a1 += p[j] * k2 * j1x
            a2 += p[j] * k2 * k2 * j2x2
            b += p[j] * k2 * k2 * j1x
        inv_r = 1.0 / ri if ri > 0.0 else 0.0
        for j in range(split, kappa.size):
            k2 = kappa[j] * kappa[j]
            x = kappa[j] * ri
            sn, cs = sincos(x)
            inv = inv_kappa[j] * inv_r
            inv2 = inv * inv
            j1x = (sn - x * cs) * inv2 * inv
            a0 += p[j] * sn * inv
            a1 += p[j] * k2 * j1x
            a2 += p[j] * k2 * k2 * ((3.0 - x * x) * sn - 3.0 * x * cs) * inv2 * inv2 * inv
            b += p[j] * k2 * k2 * j1x
        out[0, i] = a0
        out[1, i] = a1
        out[2, i] = a2
        out[3, i] = b
    return out


# --- kernels -----------------------------------------------------------------

class GaussianKernel:
    """g(y) = exp(-|y|^2 / (2 ell^2)); spectrum N(0, I / ell^2)."""

    family = Family.GAUSSIAN
    scan_lengths = 50.0

    def __init__(self, ell: float):
        self.ell = float(ell)
        self.cutoff_radius = _scan_cutoff(self)

    def radial(self, r):
        r = np.asarray(r, dtype=float)
        l2 = self.ell**2
        g = np.exp(-0.5 * r * r / l2)
        a1 = g / l2
        a2 = g / l2**2
        b = (5.0 / l2**2 - r * r / l2**3) * g
        return g, a1, a2, b

    def spectral_density(self, xi):
        xi = np.atleast_2d(xi)
        q2 = np.einsum("ij,ij->i", xi, xi)
        return (2.0 * np.pi * self.ell**2) ** 1.5 * np.exp(-0.5 * self.ell**2 * q2)

    def sample_wavevectors(self, rng, n):
        return rng.standard_normal((n, 3)) / self.ell

    def ray_constants(self):
        """(int_0^inf g dr, int_0^inf A1 dr)."""
        c = math.sqrt(math.pi / 2.0)
        return c * self.ell, c / self.ell


def _bump(t):
    t = np.asarray(t, dtype=float)
    out = np.zeros_like(t)
    inside = np.abs(t) < 1.0
    out[inside] = np.exp(-1.0 / (1.0 - t[inside] ** 2))
    return out


@lru_cache(maxsize=None)
def _bump_moment(power):
    val, _ = integrate.quad(lambda t: t**power * math.exp(-1.0 / (1.0 - t * t)), 0.0, 1.0,
                            epsabs=1e-15, epsrel=1e-13)
    return val


class BumpKernel:
    """Isotropic kernel whose spectrum is the smooth bump exp(-1/(1-t^2)), t = |xi|/kc.

    The support radius kc is tied to ``ell`` so that the curvature at the origin
    matches the Gaussian kernel: E|xi|^2 = 3 / ell^2.
    """

    family = Family.BUMP
    n_nodes = 512
    # node quadrature resolves kc * r up to ~1200 rad
    scan_lengths = 300.0

    def __init__(self, ell: float):
        self.ell = float(ell)
        self.kc = math.sqrt(3.0 * _bump_moment(2) / _bump_moment(4)) / self.ell
        x, w = np.polynomial.legendre.leggauss(self.n_nodes)
        kappa = 0.5 * (x + 1.0) * self.kc
        weight = 0.5 * w * self.kc * kappa**2 * _bump(kappa / self.kc)
        self._kappa = kappa
        self._p = weight / weight.sum()
        self._memo = {}
        self._norm = (2.0 * np.pi) ** 3 / (4.0 * np.pi * self.kc**3 * _bump_moment(2))
        self.cutoff_radius = _scan_cutoff(self)

    def radial(self, r):
        r = np.asarray(r, dtype=float)
        key = (r.shape, r.tobytes())
        hit = self._memo.get(key)
        if hit is None:
            sums = _bump_radial_sums(np.ascontiguousarray(r.ravel()), self._kappa, 1.0 / self._kappa, self._p)
            hit = tuple(o.reshape(r.shape) for o in sums)
            if len(self._memo) > 8:
                self._memo.clear()
            self._memo[key] = hit
        return hit

    def spectral_density(self, xi):
        xi = np.atleast_2d(xi)
        q = np.sqrt(np.einsum("ij,ij->i", xi, xi))
        return self._norm * _bump(q / self.kc)

    def sample_wavevectors(self, rng, n):
        # radial law ~ kappa^2 bump(kappa/kc): uniform-in-ball proposal + rejection
        out = np.empty(0)
        while out.size < n:
            m = 2 * (n - out.size) + 16
            t = rng.random(m) ** (1.0 / 3.0)
            accept = rng.random(m) < np.exp(1.0 - 1.0 / (1.0 - np.minimum(t, 1 - 1e-16) ** 2))
            out = np.concatenate([out, t[accept]])
        kappa = out[:n] * self.kc
        u = rng.standard_normal((n, 3))
        u /= np.linalg.norm(u, axis=1, keepdims=True)
        return kappa[:, None] * u

    def ray_constants(self):
        k, p = self._kappa, self._p
        return float(np.sum(p * np.pi / (2.0 * k))), float(np.pi / 4.0 * np.sum(p * k))


def _scan_cutoff(kernel, rel=ENVELOPE_REL):
    """Radius beyond which every derivative envelope stays below ``rel`` of its peak."""
    step = 0.05 * kernel.ell
    r = np.arange(0.0, kernel.scan_lengths * kernel.ell, step)
    a0, a1, a2, b = kernel.radial(r)
    # magnitudes of the value, gradient, hessian and grad-laplacian
    parts = np.abs(np.stack([a0, a1, a1 * r, a2 * r * r, b * r]))
    env = np.max(parts / parts.max(axis=1, keepdims=True), axis=0)
    above = np.nonzero(env >= rel)[0]
    if above[-1] == r.size - 1:
        raise ValueError(f"{kernel.family.value} kernel does not decay within the scan range")
    return float(r[above[-1] + 1])


@lru_cache(maxsize=64)
def get_kernel(family: str, ell: float):
    family = Family(family)
    if family is Family.GAUSSIAN:
        return GaussianKernel(ell)
    return BumpKernel(ell)


# --- model -------------------------------------------------------------------

@dataclass(frozen=True)
class Violation:
    condition: str
    message: str
    wavevector: tuple | None = None
    fatal: bool = True


def _fibonacci_directions(n):
    i = np.arange(n) + 0.5
    phi = np.arccos(1.0 - 2.0 * i / n)
    theta = np.pi * (1.0 + 5.0**0.5) * i
    return np.stack([np.cos(theta) * np.sin(phi), np.sin(theta) * np.sin(phi), np.cos(phi)], axis=1)


@dataclass(frozen=True)
class CorrelationModel:
    """Joint correlation tensor of (V, S). Immutable; safe to share between threads."""

    sigma_v: float = 1.0
    sigma_s: float = 1.0
    ell: float = 1.0
    rho_cross: float = 0.0
    family: str = Family.GAUSSIAN.value
    cross_shift: tuple = field(default=(0.0, 0.0, 0.0))

    def __post_init__(self):
        object.__setattr__(self, "family", Family(self.family).value)
        object.__setattr__(self, "cross_shift", tuple(float(c) for c in self.cross_shift))

    @property
    def kernel(self):
        return get_kernel(self.family, float(self.ell))

    @property
    def shift(self):
        return np.asarray(self.cross_shift, dtype=float)

    @property
    def shifted(self) -> bool:
        return any(c != 0.0 for c in self.cross_shift)

    def amplitude(self, component):
        if component == "VV":
            return self.sigma_v**2
        if component == "SS":
            return self.sigma_s**2
        if component in ("SV", "VS"):
            return self.rho_cross * self.sigma_v * self.sigma_s
        raise ValueError(f"unknown component {component!r}")

    def _lag(self, component, y):
        # returns (argument of g, sign of the inner derivative)
        y = np.asarray(y, dtype=float)
        if component == "SV":
            return y - self.shift, 1.0
        if component == "VS":
            return -y - self.shift, -1.0
        return y, 1.0

    def _parts(self, component, y):
        u, sign = self._lag(component, y)
        r = np.sqrt(np.sum(u * u, axis=-1))
        return u, sign, self.kernel.radial(r)

    def eval(self, component, y):
        amp = self.amplitude(component)
        _, _, (a0, _, _, _) = self._parts(component, y)
        return amp * a0

    def eval_grad(self, component, y):
        amp = self.amplitude(component)
        u, sign, (_, a1, _, _) = self._parts(component, y)
        return -sign * amp * a1[..., None] * u

    def eval_hess(self, component, y):
        amp = self.amplitude(component)
        u, _, (_, a1, a2, _) = self._parts(component, y)
        eye = np.eye(3)
        return amp * (-a1[..., None, None] * eye + a2[..., None, None] * u[..., :, None] * u[..., None, :])

    def eval_laplacian(self, component, y):
        amp = self.amplitude(component)
        u, _, (_, a1, a2, _) = self._parts(component, y)
        return amp * (-3.0 * a1 + a2 * np.sum(u * u, axis=-1))

    def eval_laplacian_grad(self, component, y):
        amp = self.amplitude(component)
        u, sign, (_, _, _, b) = self._parts(component, y)
        return sign * amp * b[..., None] * u

    def spectral_matrix(self, xi, normalized=False):
        """Power-spectrum matrix [[VV, VS], [SV, SS]] at wavevectors ``xi`` (n, 3).

        With ``normalized`` the common kernel spectrum is divided out.
        """
        xi = np.atleast_2d(np.asarray(xi, dtype=float))
        g = np.ones(xi.shape[0]) if normalized else self.kernel.spectral_density(xi)
        c = self.rho_cross * self.sigma_v * self.sigma_s
        phase = np.exp(1j * (xi @ self.shift))
        out = np.empty((xi.shape[0], 2, 2), dtype=complex)
        out[:, 0, 0] = self.sigma_v**2 * g
        out[:, 1, 1] = self.sigma_s**2 * g
        out[:, 0, 1] = c * g * phase
        out[:, 1, 0] = c * g * np.conj(phase)
        return out

    def spectral_probe(self):
        """Deterministic wavevector sample used by :meth:`validate`."""
        dirs = _fibonacci_directions(48)
        radii = np.geomspace(1e-2, 6.0, 24) / self.ell
        return (radii[:, None, None] * dirs[None]).reshape(-1, 3)

    def validate(self):
        """Return the list of violated assumptions (empty when the model is admissible)."""
        out = []
        for name in ("sigma_v", "sigma_s", "ell", "rho_cross"):
            if not math.isfinite(getattr(self, name)):
                out.append(Violation("parameters", f"{name} is not finite"))
        if out:
            return out
        if self.sigma_v < 0 or self.sigma_s < 0:
            out.append(Violation("parameters", "amplitudes must be non-negative"))
        if self.ell <= 0:
            out.append(Violation("parameters", "correlation length must be positive"))
            return out
        if not -1.0 <= self.rho_cross <= 1.0:
            out.append(Violation("parameters", "cross-correlation out of [-1, 1]"))
        if not all(math.isfinite(c) for c in self.cross_shift):
            out.append(Violation("parameters", "cross_shift is not finite"))
            return out

        xi = self.spectral_probe()
        mats = self.spectral_matrix(xi)
        scale = max(float(np.max(mats[:, 0, 0].real + mats[:, 1, 1].real)), 1e-300)
        eig = np.linalg.eigvalsh(mats)
        bad = np.nonzero(eig[:, 0] < -1e-12 * scale)[0]
        if bad.size:
            j = int(bad[0])
            out.append(Violation("spectral_psd", f"power-spectrum matrix not PSD (min eigenvalue {eig[j, 0]:.3e})",
                                 tuple(float(v) for v in xi[j])))

        try:
            cutoff = self.kernel.cutoff_radius
        except ValueError as exc:
            out.append(Violation("decay", str(exc)))
        else:
            if not math.isfinite(cutoff):
                out.append(Violation("decay", "correlation does not decay"))

        # R^VV-hat must not vanish identically on any plane through the origin
        normals = _fibonacci_directions(64)
        for p in normals:
            a = np.cross(p, [1.0, 0.0, 0.0] if abs(p[0]) < 0.9 else [0.0, 1.0, 0.0])
            a /= np.linalg.norm(a)
            c = np.cross(p, a)
            ang = np.linspace(0, 2 * np.pi, 16, endpoint=False)
            rad = np.array([0.25, 0.5, 1.0, 2.0]) / self.ell
            pts = (rad[:, None, None] * (np.cos(ang)[:, None] * a + np.sin(ang)[:, None] * c)).reshape(-1, 3)
            vals = self.sigma_v**2 * self.kernel.spectral_density(pts)
            if not np.any(vals > 0):
                out.append(Violation("hyperplane", "V power spectrum vanishes on the plane normal to "
                                     f"({p[0]:.3f}, {p[1]:.3f}, {p[2]:.3f})", tuple(float(v) for v in p),
                                     fatal=False))
                break
        return out

    def fatal_violations(self):
        return [v for v in self.validate() if v.fatal]

    def to_dict(self):
        return {
            "family": self.family,
            "sigma_v": self.sigma_v,
            "sigma_s": self.sigma_s,
            "ell": self.ell,
            "rho_cross": self.rho_cross,
            "cross_shift": list(self.cross_shift),
        }
