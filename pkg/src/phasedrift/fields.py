"""Randomized spectral synthesis of the joint stationary Gaussian field F = (V, S).

A realization with modes (xi_j, a_j) is::

    F(y) = n_modes**-0.5 * Re sum_j a_j exp(-i xi_j . y)

where the xi_j are drawn from the normalized kernel spectrum and
a_j = C(xi_j) w_j, with w_j a standard complex Gaussian 2-vector
(independent N(0,1) real and imaginary parts) and C C^* the 2x2 spectral
matrix at xi_j.  Conditional on the wavevectors the field is exactly
Gaussian, and its covariance equals R(y) in expectation for any n_modes.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .correlation import CorrelationModel
from .seeding import generator

__all__ = [
    "DEFAULT_N_MODES",
    "FieldRealization",
    "sample_field",
    "eval_V",
    "eval_S",
    "eval_grad_V",
    "eval_grad_S",
]

DEFAULT_N_MODES = 4096


@dataclass(frozen=True, eq=False)
class FieldRealization:
    wavevectors: np.ndarray   # (n_modes, 3)
    amplitudes: np.ndarray    # (n_modes, 2) complex, columns (V, S)
    seed: int
    model: CorrelationModel
    clip_sigmas: float | None = None

    @property
    def n_modes(self) -> int:
        return self.wavevectors.shape[0]

    def packed(self):
        """(xi, amp) arrays for the compiled integrator.

        ``amp`` columns are Re a_V, Im a_V, Re a_S, Im a_S, already scaled by n_modes**-0.5.
        """
        a = self.amplitudes / np.sqrt(self.n_modes)
        amp = np.stack([a[:, 0].real, a[:, 0].imag, a[:, 1].real, a[:, 1].imag], axis=1)
        return np.ascontiguousarray(self.wavevectors), np.ascontiguousarray(amp)


def _hermitian_sqrt(mats, xi):
    w, q = np.linalg.eigh(mats)
    scale = np.maximum(np.abs(w).max(axis=1), 1e-300)
    bad = np.nonzero(w[:, 0] < -1e-12 * scale)[0]
    if bad.size:
        j = int(bad[0])
        raise ValueError(f"spectral matrix not positive semidefinite at xi = {xi[j].tolist()} "
                         f"(eigenvalue {w[j, 0]:.3e})")
    root = np.sqrt(np.clip(w, 0.0, None))
    return np.einsum("nij,nj,nkj->nik", q, root, q.conj())


def sample_field(model: CorrelationModel, n_modes: int = DEFAULT_N_MODES, seed: int = 0,
                 clip_sigmas: float | None = None) -> FieldRealization:
    """Draw one realization of (V, S) with ``n_modes`` random spectral modes."""
    if n_modes < 1:
        raise ValueError("n_modes must be >= 1")
    rng = generator(seed)
    xi = model.kernel.sample_wavevectors(rng, n_modes)
    root = _hermitian_sqrt(model.spectral_matrix(xi, normalized=True), xi)
    w = rng.standard_normal((n_modes, 2, 2))
    if clip_sigmas is not None:
        w = np.clip(w, -clip_sigmas, clip_sigmas)
    noise = w[..., 0] + 1j * w[..., 1]
    amps = np.einsum("nij,nj->ni", root, noise)
    return FieldRealization(xi, amps, int(seed), model, clip_sigmas)


def _phases(field, y):
    y = np.asarray(y, dtype=float)
    return np.exp(-1j * (y @ field.wavevectors.T)), y.ndim == 1


def _value(field, y, col):
    e, _ = _phases(field, y)
    return (e @ field.amplitudes[:, col]).real / np.sqrt(field.n_modes)


def _grad(field, y, col):
    e, _ = _phases(field, y)
    # d/dy Re(a e^{-i xi.y}) = Re(-i a e^{-i xi.y}) xi
    return ((-1j * e * field.amplitudes[:, col]).real @ field.wavevectors) / np.sqrt(field.n_modes)


def eval_V(field: FieldRealization, y):
    return _value(field, y, 0)


def eval_S(field: FieldRealization, y):
    return _value(field, y, 1)


def eval_grad_V(field: FieldRealization, y):
    return _grad(field, y, 0)


def eval_grad_S(field: FieldRealization, y):
    return _grad(field, y, 1)
