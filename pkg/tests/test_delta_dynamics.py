import math

import numpy as np
import pytest

from phasedrift import delta_dynamics
from phasedrift.coefficients import compute_coefficients
from phasedrift.correlation import CorrelationModel
from phasedrift.delta_dynamics import (
    EnsembleError,
    EnsembleParams,
    PhasePath,
    StoppingConfig,
    detect_stopping_times,
    integrate_path,
    run_ensemble,
)
from phasedrift.fields import eval_V, sample_field


def test_free_motion_is_exact():
    f = sample_field(CorrelationModel(sigma_v=0.0, sigma_s=0.0), 32, 0)
    x0 = np.array([0.5, -1.0, 2.0])
    k0 = np.array([0.3, 0.4, -1.2])
    p = integrate_path(f, x0, k0, 0.1, 0.7, 0.006)
    np.testing.assert_allclose(p.X, x0 - np.outer(p.times, k0), atol=1e-14, rtol=0)
    assert np.all(p.K == k0) and np.all(p.Z == 0.0)
    np.testing.assert_array_equal(p.X[0], x0)
    assert p.times[-1] == pytest.approx(0.7, abs=1e-15)


def test_no_mismatch_means_no_phase():
    f = sample_field(CorrelationModel(sigma_s=0.0), 512, 3)
    p = integrate_path(f, np.zeros(3), [0.0, 0.0, 1.0], 0.05, 0.5, 0.005)
    assert np.all(p.Z == 0.0)
    assert p.shell_drift > 0.0


def test_initial_state():
    f = sample_field(CorrelationModel(rho_cross=0.3), 256, 4)
    p = integrate_path(f, [1.0, 2.0, 3.0], [0.0, 1.0, 0.0], 0.1, 0.2, 0.01)
    np.testing.assert_array_equal(p.X[0], [1.0, 2.0, 3.0])
    np.testing.assert_array_equal(p.K[0], [0.0, 1.0, 0.0])
    assert p.Z[0] == 0.0


def test_rk4_order_of_energy_drift():
    f = sample_field(CorrelationModel(), 4096, 11)
    delta = 0.05
    drifts = []
    factors = np.array([0.04, 0.02, 0.01])
    for c in factors:
        p = integrate_path(f, np.zeros(3), [0.0, 0.0, 1.0], delta, 1.0, c * delta)
        drifts.append(p.energy_drift)
    order = np.polyfit(np.log(factors), np.log(drifts), 1)[0]
    assert 3.7 <= order <= 4.3
    assert drifts[-2] / drifts[-1] == pytest.approx(16.0, rel=0.15)


def test_energy_identity_along_path():
    # |K|^2 - |k0|^2 = -2 sqrt(delta) (V(X/delta) - V(x0/delta)) up to integration error
    f = sample_field(CorrelationModel(), 1024, 2)
    delta = 0.04
    p = integrate_path(f, np.zeros(3), [0.0, 0.6, 0.8], delta, 0.5, 0.002)
    v = eval_V(f, p.X / delta)
    lhs = np.sum(p.K**2, axis=1) - 1.0
    np.testing.assert_allclose(lhs, -2.0 * math.sqrt(delta) * (v - v[0]), atol=1e-7)
    assert np.max(np.abs(lhs)) <= 4.0 * math.sqrt(delta) * np.max(np.abs(v))


def test_dt_bound_enforced():
    f = sample_field(CorrelationModel(), 16, 0)
    with pytest.raises(ValueError, match="fast scale"):
        integrate_path(f, np.zeros(3), [0.0, 0.0, 2.0], 0.1, 1.0, 0.01)
    integrate_path(f, np.zeros(3), [0.0, 0.0, 2.0], 0.1, 0.1, 0.005)
    with pytest.raises(ValueError):
        integrate_path(f, np.zeros(3), [0.0, 0.0, 0.0], 0.1, 0.1, 0.001)
    with pytest.raises(ValueError):
        integrate_path(f, np.zeros(3), [0.0, 0.0, 1.0], 1.5, 0.1, 0.001)


def test_path_csv_dump(tmp_path):
    f = sample_field(CorrelationModel(), 64, 1)
    p = integrate_path(f, np.zeros(3), [0.0, 0.0, 1.0], 0.1, 0.1, 0.01)
    p.to_csv(tmp_path / "p.csv")
    lines = (tmp_path / "p.csv").read_text().splitlines()
    assert lines[0] == "t,X1,X2,X3,K1,K2,K3,Z"
    back = np.loadtxt(tmp_path / "p.csv", delimiter=",", skiprows=1)
    np.testing.assert_array_equal(back[:, 4:7], p.K)


# --- stopping times --------------------------------------------------------

def test_stopping_exponent_constraints():
    StoppingConfig()
    for bad in [(0.3, 0.2, 0.1, 0.6), (0.1, 0.2, 0.35, 0.6), (0.1, 0.2, 0.15, 0.45), (0.1, 0.2, 0.15, 0.75)]:
        with pytest.raises(ValueError):
            StoppingConfig(*bad)


def test_meshes_on_the_sweep():
    cfg = StoppingConfig()
    assert [cfg.meshes(d) for d in (0.2, 0.1, 0.05, 0.025)] == [
        (1, 1, 1, 2), (1, 1, 1, 3), (1, 1, 1, 6), (1, 2, 2, 18)]
    assert cfg.meshes(1e-6) == (3, 15, 105, 179145)


def _scripted_path(delta, t_end, k_of_t):
    cfg = StoppingConfig()
    n1 = cfg.meshes(delta)[3]
    n = int(math.ceil(t_end * n1 * 2))
    t = np.linspace(0.0, t_end, n + 1)
    K = k_of_t(t)
    # X' = -K by the trapezoidal rule
    X = np.zeros_like(K)
    X[1:] = -np.cumsum(0.5 * (K[1:] + K[:-1]) * np.diff(t)[:, None], axis=0)
    return PhasePath(t, X, K, np.zeros(t.size), delta, np.zeros(t.size))


def _turn(t0, width):
    def k(s):
        a = 0.5 * np.pi * np.clip((s - t0) / width, 0.0, 1.0)
        return np.stack([np.sin(a), np.zeros_like(a), np.cos(a)], axis=1)
    return k


def test_free_motion_has_no_events():
    p = _scripted_path(1e-6, 0.5, lambda s: np.outer(np.ones_like(s), [0.0, 0.0, 1.0]))
    ev = detect_stopping_times(p, StoppingConfig())
    assert ev.violent_turn is None and ev.tube_return is None and ev.tau is None


def test_scripted_right_angle_turn_fires_in_its_cell():
    cfg = StoppingConfig()
    N, p_mesh, _, _ = cfg.meshes(1e-6)
    path = _scripted_path(1e-6, 0.5, _turn(0.3, 0.01))
    ev = detect_stopping_times(path, cfg)
    # first time the angle to K(t_{k-1}) reaches arccos(1 - 1/N)
    expected = 0.3 + 0.01 * math.acos(1.0 - 1.0 / N) / (0.5 * math.pi)
    assert ev.violent_turn == pytest.approx(expected, abs=2.0 / cfg.meshes(1e-6)[3])
    assert math.floor(ev.violent_turn * p_mesh) == math.floor(0.3 * p_mesh)
    assert ev.tube_return is None
    assert ev.tau == ev.violent_turn


def test_reversal_returns_to_the_tube():
    def k(s):
        return np.outer(np.where(s < 0.25, 1.0, -1.0), [0.0, 0.0, 1.0])
    ev = detect_stopping_times(_scripted_path(1e-6, 0.5, k), StoppingConfig())
    assert ev.violent_turn is not None and ev.tube_return is not None
    assert ev.tube_return >= 0.25
    assert ev.tau == min(ev.violent_turn, ev.tube_return)


def test_coarse_path_rejected():
    fine = _scripted_path(1e-6, 0.1, lambda s: np.outer(np.ones_like(s), [0.0, 0.0, 1.0]))
    sl = slice(None, None, 4)
    coarse = PhasePath(fine.times[sl], fine.X[sl], fine.K[sl], fine.Z[sl], fine.delta, fine.energy[sl])
    with pytest.raises(ValueError, match="mesh"):
        detect_stopping_times(coarse, StoppingConfig())


def test_integrator_output_always_resolves_the_mesh():
    # dt <= 0.1 delta / |k0| is finer than 1/N1 for any delta in (0, 1]
    cfg = StoppingConfig()
    for delta in np.geomspace(1e-6, 1.0, 25):
        assert 0.1 * delta <= 1.0 / cfg.meshes(delta)[3]


# --- ensembles -------------------------------------------------------------

def _params(**kw):
    base = dict(delta=0.1, k0=(0.0, 0.0, 1.0), t_end=0.3, n_paths=40, n_modes=256, base_seed=3,
                checkpoints=(0.1, 0.3))
    base.update(kw)
    return EnsembleParams(**base)


def test_no_mismatch_no_decoherence():
    st = run_ensemble(CorrelationModel(sigma_s=0.0), _params())
    assert np.all(st.decoherence_abs == 1.0)
    assert np.all(st.var_Z == 0.0)
    assert np.all(st.K_sq > 0.0)


def test_ensemble_independent_of_worker_count():
    m = CorrelationModel(rho_cross=0.3)
    a = run_ensemble(m, _params(), workers=1)
    b = run_ensemble(m, _params(), workers=3)
    for name in ("var_Z", "mean_Z", "K_cov", "decoherence", "skew_Z"):
        np.testing.assert_array_equal(getattr(a, name), getattr(b, name))
    assert a.tau_freq == b.tau_freq


def test_quenched_paths_share_the_field():
    st = run_ensemble(CorrelationModel(), _params(quenched=True))
    np.testing.assert_allclose(st.var_Z, 0.0, atol=1e-28)
    np.testing.assert_allclose(st.decoherence_abs, 1.0, atol=1e-14)


def test_dump_paths(tmp_path):
    run_ensemble(CorrelationModel(), _params(n_paths=3), dump_dir=tmp_path)
    assert sorted(p.name for p in tmp_path.iterdir()) == [f"path_{i:06d}.csv" for i in range(3)]


def test_tau_frequencies_reported_when_resolved():
    st = run_ensemble(CorrelationModel(), _params(delta=0.2, k0=(0.0, 0.0, 0.5), t_end=1.0,
                                                  checkpoints=(0.5, 1.0)))
    tf = st.tau_freq
    assert tf is not None and tf["horizon"] == 1.0
    assert 0.0 <= tf["tau"] <= 1.0
    assert tf["tau"] >= max(tf["violent_turn"], tf["tube_return"])


def test_failure_handling(monkeypatch):
    real = delta_dynamics.integrate_path

    def flaky(field, *a, **kw):
        if field.seed % 7 == 0:
            raise FloatingPointError("synthetic blow-up")
        return real(field, *a, **kw)

    seeds = [delta_dynamics.derive_seed(3, i, "field") for i in range(40)]
    n_bad = sum(s % 7 == 0 for s in seeds)
    assert n_bad >= 1
    monkeypatch.setattr(delta_dynamics, "integrate_path", flaky)
    with pytest.raises(EnsembleError) as exc:
        run_ensemble(CorrelationModel(), _params())
    assert sorted(i for i, _ in exc.value.failed) == [i for i, s in enumerate(seeds) if s % 7 == 0]

    monkeypatch.setattr(delta_dynamics, "MAX_FAIL_FRACTION", 0.5)
    st = run_ensemble(CorrelationModel(), _params())
    assert st.n_effective == 40 - n_bad and len(st.failed) == n_bad


def test_too_few_paths():
    with pytest.raises(ValueError):
        run_ensemble(CorrelationModel(), _params(n_paths=1))


def test_shell_drift_scales_like_sqrt_delta():
    ratios = []
    for delta in (0.2, 0.05):
        st = run_ensemble(CorrelationModel(), _params(delta=delta, n_paths=30, t_end=0.2, checkpoints=None))
        ratios.append(st.shell_drift / math.sqrt(delta))
    # Gaussian field maxima over a path stay within a few sigma
    assert max(ratios) < 2.0 * 5.0
    assert max(ratios) / min(ratios) < 3.0


def test_mean_phase_drift_matches_E():
    # weak V keeps the momentum direction nearly fixed, so the drift of Z is E(k0)
    m = CorrelationModel(sigma_v=0.2, sigma_s=1.0, rho_cross=1.0, cross_shift=(0.0, 0.0, 1.0))
    k0 = (0.0, 0.0, 1.0)
    E = compute_coefficients(m, k0).E
    st = run_ensemble(m, EnsembleParams(delta=0.0025, k0=k0, t_end=0.06, n_paths=3000, n_modes=1024,
                                        base_seed=21))
    t = st.times[-1]
    assert abs(st.mean_Z[-1] / t - E) < 3.0 * st.mean_Z_se[-1] / t
    assert E < -0.9
