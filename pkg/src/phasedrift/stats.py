"""Ensemble estimators with path-level standard errors, and delta-sweep trend reports."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "Estimate",
    "EnsembleStats",
    "mean_se",
    "var_se",
    "modulus_se",
    "skew_kurt",
    "TrendRow",
    "summarize_convergence",
]


@dataclass(frozen=True)
class Estimate:
    value: float
    se: float

    def z_score(self, target):
        if self.se == 0.0:
            return 0.0 if self.value == target else math.inf
        return (self.value - target) / self.se


def mean_se(x, axis=0):
    x = np.asarray(x, dtype=float)
    n = x.shape[axis]
    return x.mean(axis=axis), x.std(axis=axis, ddof=1) / math.sqrt(n)


def var_se(x, axis=0):
    """Unbiased variance and its standard error from the fourth central moment."""
    x = np.asarray(x, dtype=float)
    n = x.shape[axis]
    c = x - x.mean(axis=axis, keepdims=True)
    s2 = (c**2).sum(axis=axis) / (n - 1)
    m4 = (c**4).mean(axis=axis)
    return s2, np.sqrt(np.maximum(m4 - s2**2 * (n - 3) / (n - 1), 0.0) / n)


def modulus_se(w):
    """|E w| for complex samples w, with a delta-method standard error.

    The error is that of the projection of w onto the direction of its mean.
    """
    w = np.asarray(w)
    n = w.shape[0]
    m = w.mean(axis=0)
    mod = np.abs(m)
    direction = np.where(mod > 0, np.conj(m) / np.where(mod > 0, mod, 1.0), 1.0)
    proj = (w * direction).real
    return m, mod, proj.std(axis=0, ddof=1) / math.sqrt(n)


def skew_kurt(x, axis=0):
    """Sample skewness and excess kurtosis with their standard errors under normality."""
    x = np.asarray(x, dtype=float)
    n = x.shape[axis]
    c = x - x.mean(axis=axis, keepdims=True)
    m2 = (c**2).mean(axis=axis)
    m3 = (c**3).mean(axis=axis)
    m4 = (c**4).mean(axis=axis)
    with np.errstate(invalid="ignore", divide="ignore"):
        g1 = np.where(m2 > 0, m3 / m2**1.5, 0.0)
        g2 = np.where(m2 > 0, m4 / m2**2 - 3.0, 0.0)
    se1 = math.sqrt(6.0 * n * (n - 1) / ((n - 2) * (n + 1) * (n + 3))) if n > 2 else math.nan
    se2 = 2.0 * se1 * math.sqrt((n * n - 1.0) / ((n - 3.0) * (n + 5.0))) if n > 3 else math.nan
    return g1, se1, g2, se2


def _freq(event_times, horizon):
    hit = np.isfinite(event_times) & (event_times < horizon)
    p = hit.mean()
    return p, math.sqrt(p * (1.0 - p) / hit.size)


@dataclass(frozen=True, eq=False)
class EnsembleStats:
    """Per-checkpoint ensemble estimates; every ``*_se`` is a standard error from path-level values."""
    times: np.ndarray
    mean_Z: np.ndarray
    mean_Z_se: np.ndarray
    var_Z: np.ndarray
    var_Z_se: np.ndarray
    decoherence: np.ndarray       # complex E[exp(iZ)]
    decoherence_abs: np.ndarray
    decoherence_se: np.ndarray    # standard error of the modulus
    K_cov: np.ndarray             # (C, 3, 3) E[(K - k0)(K - k0)^T]
    K_cov_se: np.ndarray
    K_sq: np.ndarray              # E|K - k0|^2, the trace of K_cov
    K_sq_se: np.ndarray
    skew_Z: np.ndarray
    skew_Z_se: float
    kurt_Z: np.ndarray
    kurt_Z_se: float
    shell_drift: float            # max over paths and time of ||K| - |k0||
    energy_drift: float
    tau_freq: dict | None         # frequencies of events before the horizon, with se
    n_effective: int
    failed: list

    @classmethod
    def from_samples(cls, samples, k0, horizon=None):
        Z = samples.Z
        dk = samples.K - k0
        mz, mz_se = mean_se(Z)
        vz, vz_se = var_se(Z)
        m, mod, mod_se = modulus_se(np.exp(1j * Z))
        prod = dk[:, :, :, None] * dk[:, :, None, :]
        kc, kc_se = mean_se(prod)
        ksq, ksq_se = mean_se((dk**2).sum(axis=-1))
        g1, se1, g2, se2 = skew_kurt(Z)
        tau = None
        if horizon is not None:
            pv, pv_se = _freq(samples.tau_violent, horizon)
            pu, pu_se = _freq(samples.tau_tube, horizon)
            pt, pt_se = _freq(np.fmin(samples.tau_violent, samples.tau_tube), horizon)
            tau = {"horizon": horizon, "violent_turn": pv, "violent_turn_se": pv_se,
                   "tube_return": pu, "tube_return_se": pu_se, "tau": pt, "tau_se": pt_se}
        return cls(samples.times, mz, mz_se, vz, vz_se, m, mod, mod_se, kc, kc_se, ksq, ksq_se,
                   g1, se1, g2, se2, float(samples.shell_drift.max()),
                   float(samples.energy_drift.max()), tau, int(Z.shape[0]), list(samples.failed))

    def at(self, t):
        """Checkpoint index of time ``t``."""
        i = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[i] - t) > 1e-9 * max(1.0, abs(t)):
            raise KeyError(f"no checkpoint at t = {t}")
        return i

    def rows(self):
        """Flat per-checkpoint records for CSV emission."""
        out = []
        for c, t in enumerate(self.times):
            r = {"t": t, "mean_Z": self.mean_Z[c], "mean_Z_se": self.mean_Z_se[c],
                 "var_Z": self.var_Z[c], "var_Z_se": self.var_Z_se[c],
                 "decoherence_re": self.decoherence[c].real, "decoherence_im": self.decoherence[c].imag,
                 "decoherence_abs": self.decoherence_abs[c], "decoherence_se": self.decoherence_se[c],
                 "K_sq": self.K_sq[c], "K_sq_se": self.K_sq_se[c],
                 "skew_Z": self.skew_Z[c], "kurt_Z": self.kurt_Z[c]}
            for i in range(3):
                for j in range(i, 3):
                    r[f"K_cov_{i + 1}{j + 1}"] = self.K_cov[c, i, j]
                    r[f"K_cov_{i + 1}{j + 1}_se"] = self.K_cov_se[c, i, j]
            out.append(r)
        return out

    def observables(self, t):
        """Sweep observables at checkpoint ``t`` as name -> (value, se)."""
        c = self.at(t)
        return {"var_Z": (float(self.var_Z[c]), float(self.var_Z_se[c])),
                "decoherence_abs": (float(self.decoherence_abs[c]), float(self.decoherence_se[c])),
                "K_sq": (float(self.K_sq[c]), float(self.K_sq_se[c]))}

    def summary(self):
        d = {"n_effective": self.n_effective, "shell_drift": self.shell_drift,
             "energy_drift": self.energy_drift, "skew_Z_se": self.skew_Z_se,
             "kurt_Z_se": self.kurt_Z_se, "n_failed": len(self.failed)}
        if self.tau_freq is not None:
            d["tau_freq"] = dict(self.tau_freq)
        return d


@dataclass(frozen=True)
class TrendRow:
    observable: str
    deltas: tuple
    distances: tuple
    errors: tuple
    monotone: bool
    exponent: float | None
    exponent_se: float | None


def _power_fit(deltas, dist, err):
    d = np.asarray(dist, dtype=float)
    if np.any(d <= 0):
        return None, None
    x = np.log(np.asarray(deltas, dtype=float))
    y = np.log(d)
    w = np.where(np.asarray(err) > 0, d / np.maximum(np.asarray(err), 1e-300), 1.0)
    A = np.column_stack([x, np.ones_like(x)])
    Aw = A * w[:, None]
    coef, *_ = np.linalg.lstsq(Aw, y * w, rcond=None)
    resid = y - A @ coef
    dof = max(len(x) - 2, 1)
    scale = max(float(np.sum((resid * w) ** 2)) / dof, 1.0)
    cov = np.linalg.inv(Aw.T @ Aw) * scale
    return float(coef[0]), float(math.sqrt(cov[0, 0]))


def monotone_within(values, errors, n_sigma=3.0):
    """True when no step increases by more than ``n_sigma`` combined standard errors."""
    v = np.asarray(values, dtype=float)
    e = np.asarray(errors, dtype=float)
    rise = v[1:] - v[:-1]
    tol = n_sigma * np.hypot(e[1:], e[:-1])
    return bool(np.all(rise <= tol))


def summarize_convergence(stats_by_delta: dict, limit: dict, *, n_sigma=3.0):
    """Distance of each observable to its limit value along a decreasing delta sweep.

    ``stats_by_delta`` maps delta to a dict observable -> (value, se);
    ``limit`` maps observable -> (value, se).  Distances carry the combined
    standard error; a power law distance ~ delta^alpha is fitted but not judged.
    """
    deltas = sorted(stats_by_delta, reverse=True)
    if len(deltas) < 3:
        raise ValueError("need at least 3 delta values")
    rows = []
    for name, (lv, le) in limit.items():
        dist, err = [], []
        for d in deltas:
            v, e = stats_by_delta[d][name]
            dist.append(abs(v - lv))
            err.append(math.hypot(e, le))
        alpha, alpha_se = _power_fit(deltas, dist, err)
        rows.append(TrendRow(name, tuple(deltas), tuple(dist), tuple(err),
                             monotone_within(dist, err, n_sigma), alpha, alpha_se))
    return rows
