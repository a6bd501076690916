"""Characteristics of the random Liouville equation at finite correlation length delta.

Along a path::

    dX/dt = -K,   dK/dt = delta**-0.5 grad V(X/delta),   dZ/dt = delta**-0.5 S(X/delta)

with X(0) = x0, K(0) = k0, Z(0) = 0.  The quantity
H = |K|^2/2 + sqrt(delta) V(X/delta) is conserved exactly and is tracked as
an integration error gauge.
"""
from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field as dc_field
from pathlib import Path

import numpy as np

from . import _kernels
from .correlation import CorrelationModel
from .fields import DEFAULT_N_MODES, FieldRealization, sample_field
from .seeding import derive_seed
from .timegrid import aligned_grid

__all__ = [
    "DT_FACTOR",
    "PhasePath",
    "StoppingConfig",
    "TauEvents",
    "EnsembleParams",
    "EnsembleError",
    "integrate_path",
    "detect_stopping_times",
    "run_ensemble",
    "worker_count",
]

DT_FACTOR = 0.1
MAX_FAIL_FRACTION = 0.01


@dataclass(frozen=True)
class TauEvents:
    violent_turn: float | None
    tube_return: float | None

    @property
    def tau(self):
        times = [t for t in (self.violent_turn, self.tube_return) if t is not None]
        return min(times) if times else None


@dataclass(frozen=True)
class StoppingConfig:
    """Exponents of the stopping-time meshes.

    For a given delta: N = floor(delta^-eps1), p = floor(delta^-eps2),
    q = p floor(delta^-eps3), N1 = N p floor(delta^-eps4).
    """
    eps1: float = 0.1
    eps2: float = 0.2
    eps3: float = 0.15
    eps4: float = 0.6

    def __post_init__(self):
        e1, e2, e3, e4 = self.eps1, self.eps2, self.eps3, self.eps4
        if not 0.0 < e1 < e2 < 0.5:
            raise ValueError("stopping exponents need 0 < eps1 < eps2 < 1/2")
        if not 0.0 < e3 < 0.5 - e2:
            raise ValueError("stopping exponents need 0 < eps3 < 1/2 - eps2")
        if not 0.5 < e4 < 1.0 - e1 - e2:
            raise ValueError("stopping exponents need 1/2 < eps4 < 1 - eps1 - eps2")

    def meshes(self, delta: float):
        """(N, p, q, N1) at correlation length ``delta``."""
        n = math.floor(delta ** -self.eps1)
        p = math.floor(delta ** -self.eps2)
        q = p * math.floor(delta ** -self.eps3)
        n1 = n * p * math.floor(delta ** -self.eps4)
        return n, p, q, n1


@dataclass(frozen=True, eq=False)
class PhasePath:
    times: np.ndarray
    X: np.ndarray
    K: np.ndarray
    Z: np.ndarray
    delta: float
    energy: np.ndarray
    tau_events: TauEvents | None = None

    @property
    def energy_drift(self) -> float:
        return float(np.max(np.abs(self.energy - self.energy[0])))

    @property
    def shell_drift(self) -> float:
        """max_t | |K(t)| - |k0| |."""
        kn = np.linalg.norm(self.K, axis=1)
        return float(np.max(np.abs(kn - kn[0])))

    def to_csv(self, path):
        data = np.column_stack([self.times, self.X, self.K, self.Z])
        header = "t,X1,X2,X3,K1,K2,K3,Z"
        np.savetxt(path, data, delimiter=",", header=header, comments="", fmt="%.17g")


def _check_dt(delta, k0, dt, dt_factor):
    bound = dt_factor * delta / np.linalg.norm(k0)
    if dt > bound * (1.0 + 1e-12):
        raise ValueError(f"dt = {dt:.3g} does not resolve the fast scale: "
                         f"need dt <= {dt_factor:g} delta/|k0| = {bound:.3g}")


def integrate_path(field: FieldRealization, x0, k0, delta: float, t_end: float, dt: float, *,
                   dt_factor: float = DT_FACTOR) -> PhasePath:
    """Integrate one path through a fixed realization with fixed-step RK4.

    The step is shrunk so that it divides ``t_end``; it must satisfy
    dt <= dt_factor * delta / |k0|.
    """
    x0 = np.asarray(x0, dtype=float).reshape(3)
    k0 = np.asarray(k0, dtype=float).reshape(3)
    if not 0.0 < delta <= 1.0:
        raise ValueError("delta must lie in (0, 1]")
    if not np.linalg.norm(k0) > 0.0:
        raise ValueError("k0 must be nonzero")
    if t_end <= 0.0 or dt <= 0.0:
        raise ValueError("t_end and dt must be positive")
    _check_dt(delta, k0, dt, dt_factor)
    n, h, _ = aligned_grid(t_end, dt)
    traj = np.empty((n + 1, 7))
    energy = np.empty(n + 1)
    xi, amp = field.packed()
    ok = _kernels.rk4_path(xi[:, 0].copy(), xi[:, 1].copy(), xi[:, 2].copy(),
                           amp[:, 0].copy(), amp[:, 1].copy(), amp[:, 2].copy(), amp[:, 3].copy(),
                           x0, k0, float(delta), h, n, traj, energy)
    if not ok:
        raise FloatingPointError("path state became non-finite")
    times = np.arange(n + 1) * h
    return PhasePath(times, traj[:, 0:3], traj[:, 3:6], traj[:, 6], float(delta), energy)


def detect_stopping_times(path: PhasePath, cfg: StoppingConfig) -> TauEvents:
    """Violent-turn and tube-return times of a sampled path (None if absent before its end)."""
    n, p, q, n1 = cfg.meshes(path.delta)
    spacing = np.max(np.diff(path.times)) if path.times.size > 1 else 0.0
    if spacing > 1.0 / n1 * (1.0 + 1e-9):
        raise ValueError(f"path spacing {spacing:.3g} is coarser than the 1/N1 = {1.0 / n1:.3g} mesh")
    tv, tu = _kernels.stopping_scan(path.times, np.ascontiguousarray(path.X),
                                    np.ascontiguousarray(path.K), float(n), float(p), float(q), float(n1))
    return TauEvents(None if math.isnan(tv) else float(tv), None if math.isnan(tu) else float(tu))


@dataclass(frozen=True)
class EnsembleParams:
    delta: float
    k0: tuple
    t_end: float
    n_paths: int
    x0: tuple = (0.0, 0.0, 0.0)
    dt: float | None = None
    dt_factor: float = DT_FACTOR
    base_seed: int = 0
    n_modes: int = DEFAULT_N_MODES
    clip_sigmas: float | None = None
    quenched: bool = False
    checkpoints: tuple | None = None
    stopping: StoppingConfig = dc_field(default_factory=StoppingConfig)

    def grid(self):
        """(step, checkpoint indices): the largest admissible step that lands on every checkpoint."""
        bound = self.dt_factor * self.delta / float(np.linalg.norm(self.k0))
        dt = bound if self.dt is None else self.dt
        _, h, idx = aligned_grid(self.t_end, dt, self.checkpoints)
        return h, idx


class EnsembleError(RuntimeError):
    def __init__(self, message, failed):
        super().__init__(message)
        self.failed = failed


@dataclass(frozen=True, eq=False)
class PathSamples:
    """Per-path values at the checkpoint times (the raw material for statistics)."""
    times: np.ndarray            # (C,)
    Z: np.ndarray                # (P, C)
    K: np.ndarray                # (P, C, 3)
    shell_drift: np.ndarray      # (P,)
    energy_drift: np.ndarray     # (P,)
    tau_violent: np.ndarray      # (P,) NaN when absent
    tau_tube: np.ndarray         # (P,)
    path_index: np.ndarray       # (P,) indices of the paths that succeeded
    failed: list = dc_field(default_factory=list)


def worker_count(requested=None):
    """Thread count: explicit request, else PHASEDRIFT_THREADS, else CPU count."""
    if requested is None:
        env = os.environ.get("PHASEDRIFT_THREADS")
        requested = int(env) if env else (os.cpu_count() or 1)
    return max(1, int(requested))


def _run_one(model, params, index, dt, need_tau, dump_dir):
    seed = derive_seed(params.base_seed, 0 if params.quenched else index, "field")
    f = sample_field(model, params.n_modes, seed, params.clip_sigmas)
    path = integrate_path(f, params.x0, params.k0, params.delta, params.t_end, dt,
                          dt_factor=params.dt_factor)
    tau = detect_stopping_times(path, params.stopping) if need_tau else TauEvents(None, None)
    if dump_dir is not None:
        path.to_csv(Path(dump_dir) / f"path_{index:06d}.csv")
    return path, tau


def _sample_paths(model, params, *, workers=None, dump_dir=None):
    if params.n_paths < 2:
        raise ValueError("n_paths must be >= 2")
    dt, idx = params.grid()
    _, _, _, n1 = params.stopping.meshes(params.delta)
    need_tau = dt <= 1.0 / n1 * (1.0 + 1e-9)
    if dump_dir is not None:
        Path(dump_dir).mkdir(parents=True, exist_ok=True)
    P, C = params.n_paths, idx.size
    Z = np.full((P, C), np.nan)
    K = np.full((P, C, 3), np.nan)
    shell = np.full(P, np.nan)
    edrift = np.full(P, np.nan)
    tv = np.full(P, np.nan)
    tu = np.full(P, np.nan)
    failed = []

    def work(i):
        try:
            path, tau = _run_one(model, params, i, dt, need_tau, dump_dir)
        except (FloatingPointError, ValueError, np.linalg.LinAlgError) as exc:
            return i, exc
        Z[i] = path.Z[idx]
        K[i] = path.K[idx]
        shell[i] = path.shell_drift
        edrift[i] = path.energy_drift
        tv[i] = np.nan if tau.violent_turn is None else tau.violent_turn
        tu[i] = np.nan if tau.tube_return is None else tau.tube_return
        return i, None

    nw = min(worker_count(workers), P)
    if nw == 1:
        results = [work(i) for i in range(P)]
    else:
        with ThreadPoolExecutor(max_workers=nw) as pool:
            results = list(pool.map(work, range(P)))
    failed = [(i, repr(e)) for i, e in results if e is not None]
    if len(failed) > MAX_FAIL_FRACTION * P:
        raise EnsembleError(f"{len(failed)} of {P} paths failed; first: path {failed[0][0]}: {failed[0][1]}",
                            failed)
    good = np.array([i for i, e in results if e is None], dtype=int)
    times = idx * dt
    if not need_tau:
        tv[:] = np.nan
        tu[:] = np.nan
    return PathSamples(times, Z[good], K[good], shell[good], edrift[good], tv[good], tu[good], good, failed), need_tau


def run_ensemble(model: CorrelationModel, params: EnsembleParams, *, workers=None, dump_dir=None):
    """Annealed (or quenched) ensemble of delta-paths reduced to EnsembleStats.

    Path i uses the field seed derive_seed(base_seed, i, "field"), so the
    result does not depend on the number of worker threads.
    """
    from .stats import EnsembleStats

    samples, has_tau = _sample_paths(model, params, workers=workers, dump_dir=dump_dir)
    return EnsembleStats.from_samples(samples, np.asarray(params.k0, dtype=float),
                                      horizon=params.t_end if has_tau else None)
