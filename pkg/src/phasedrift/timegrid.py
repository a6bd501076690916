"""Uniform time grids that hit a set of checkpoint times exactly."""
from __future__ import annotations

import math

import numpy as np

__all__ = ["aligned_grid"]


def aligned_grid(t_end: float, dt_max: float, checkpoints=None, *, max_refine: int = 1000):
    """Smallest step count n with t_end/n <= dt_max putting every checkpoint on the grid.

    Returns (n_steps, step, checkpoint_indices).
    """
    if t_end <= 0.0 or dt_max <= 0.0:
        raise ValueError("t_end and dt must be positive")
    cps = np.array([t_end] if checkpoints is None else checkpoints, dtype=float)
    if np.any(cps < 0.0) or np.any(cps > t_end * (1.0 + 1e-12)):
        raise ValueError(f"checkpoints must lie in [0, t_end = {t_end}]")
    n0 = max(1, math.ceil(t_end / dt_max - 1e-9))
    frac = cps / t_end
    for n in range(n0, n0 * max_refine + 1):
        idx = np.rint(frac * n)
        if np.all(np.abs(idx - frac * n) <= 1e-9 * n):
            return n, t_end / n, idx.astype(int)
    raise ValueError("checkpoints are not commensurate with t_end on any admissible grid")
