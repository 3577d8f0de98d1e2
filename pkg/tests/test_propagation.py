import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.linalg import expm

from conftest import random_state
from oracles import numeric_F, numeric_G
from rvio._kernels import propagate_step
from rvio.errors import NumericalHealthError, StreamIntegrityError
from rvio.lie import so3_exp, so3_log
from rvio.propagation import (
    ImuSample,
    check_covariance,
    error_dynamics,
    propagate_covariance,
    propagate_covariance_banded,
    propagate_nominal,
    transition_matrix,
)
from rvio.state import (
    BIAS_A,
    BIAS_W,
    DIM,
    N_A,
    NOISE_DIM,
    PHI_RV,
    R_VR,
    SCALE,
    VEL,
    NoiseParameters,
    RobocentricState,
)


def random_imu(rng, t=0.0):
    return ImuSample(t, rng.normal(size=3), 3.0 * rng.normal(size=3))


def random_psd(rng, n=DIM):
    A = rng.normal(size=(n, n))
    return A @ A.T / n


def test_stationary_equilibrium(rng):
    s = random_state(rng).replace(v=np.zeros(3))
    imu = ImuSample(0.0, s.b_w, s.C_rv.T @ s.g_r + s.b_a)
    x = s
    for _ in range(200):
        nxt = propagate_nominal(x, imu, 0.005)
        assert np.abs(nxt.r_vr - x.r_vr).max() < 1e-12
        x = nxt
    assert np.allclose(x.C_rv, s.C_rv, atol=1e-12)
    assert np.allclose(x.v, 0.0, atol=1e-12)


def test_constant_acceleration():
    x = RobocentricState(g_r=np.zeros(3))
    imu = ImuSample(0.0, np.zeros(3), [1.0, 0.0, 0.0])
    for _ in range(200):
        x = propagate_nominal(x, imu, 1.0 / 200)
    assert np.allclose(x.v, [1, 0, 0], atol=1e-9)
    assert np.allclose(x.r_vr, [0.5, 0, 0], atol=3e-3)


def test_pure_rotation():
    x = RobocentricState()
    imu = ImuSample(0.0, [0.0, 0.0, 1.0], x.g_r)
    n = 1000
    dt = np.pi / n
    for _ in range(n):
        x = propagate_nominal(x, imu, dt)
    assert np.abs(x.C_rv - so3_exp([0, 0, np.pi])).max() < 2e-3


def test_inertial_states_constant(rng):
    s = random_state(rng)
    x = propagate_nominal(s, random_imu(rng), 0.01)
    for f in ("C_ri", "r_ir", "g_r", "b_w", "b_a", "scale"):
        assert np.array_equal(getattr(x, f), getattr(s, f))


@pytest.mark.parametrize("dt", [0.0, -0.01, 0.2])
def test_bad_dt(dt):
    with pytest.raises(StreamIntegrityError):
        propagate_nominal(RobocentricState(), ImuSample(0.0, np.zeros(3), np.zeros(3)), dt)


def test_F_scale_row_and_column_zero(rng):
    F, _ = error_dynamics(random_state(rng), random_imu(rng))
    assert not F[SCALE].any() and not F[:, SCALE].any()


def test_F_matches_finite_differences(rng):
    for _ in range(10):
        s, imu = random_state(rng), random_imu(rng)
        F, _ = error_dynamics(s, imu)
        assert np.abs(numeric_F(s, imu) - F).max() < 1e-4


def test_G_matches_finite_differences(rng):
    for _ in range(10):
        s, imu = random_state(rng), random_imu(rng)
        _, G = error_dynamics(s, imu)
        assert np.abs(numeric_G(s, imu) - G).max() < 1e-4


def test_G_accel_noise_column(rng):
    s, imu = random_state(rng), random_imu(rng)
    _, G = error_dynamics(s, imu)
    # velocity is linear in the accelerometer reading, so a large step is exact
    num = numeric_G(s, imu, dt=1e-4, h=1e-3)
    assert np.allclose(G[VEL, N_A], -np.eye(3))
    assert np.abs(num[VEL, N_A] - G[VEL, N_A]).max() < 1e-6


def test_transition_matrix_examples(rng):
    assert np.array_equal(transition_matrix(np.zeros((DIM, DIM)), 0.1), np.eye(DIM))
    assert np.array_equal(transition_matrix(rng.normal(size=(DIM, DIM)), 0.0), np.eye(DIM))


def test_transition_matrix_series_bound(rng):
    for _ in range(20):
        F = rng.uniform(-1, 1, size=(DIM, DIM))
        dt = rng.uniform(1e-4, 1e-2)
        nF = np.linalg.norm(F, 2)
        err = np.linalg.norm(transition_matrix(F, dt) - expm(F * dt), 2)
        assert err <= nF**2 * dt**2 * np.exp(nF * dt)


def test_propagate_covariance_examples():
    noise = NoiseParameters()
    Z = np.zeros((DIM, DIM))
    assert not propagate_covariance(Z, np.eye(DIM), np.zeros((DIM, NOISE_DIM)), noise, 0.01).any()
    G = np.zeros((DIM, NOISE_DIM))
    G[BIAS_W, 6:9] = np.eye(3)
    P = propagate_covariance(Z, np.eye(DIM), G, noise, 1.0)
    assert np.allclose(np.diag(P)[BIAS_W], noise.sigma_bw**2)
    assert np.count_nonzero(P) == 3


def test_propagate_covariance_rejects_negative_variance():
    P = np.eye(DIM)
    P[3, 3] = -1.0
    with pytest.raises(NumericalHealthError):
        propagate_covariance(P, np.eye(DIM), np.zeros((DIM, NOISE_DIM)), NoiseParameters(), 0.01)


def test_check_covariance(rng):
    P = random_psd(rng)
    check_covariance(P)
    with pytest.raises(NumericalHealthError):
        check_covariance(P - 2.0 * np.eye(DIM) * np.linalg.eigvalsh(P).max())
    Q = P.copy()
    Q[0, 1] += 1e-6
    with pytest.raises(NumericalHealthError):
        check_covariance(Q)


@given(st.integers(0, 2**32 - 1), st.floats(1e-4, 0.05))
def test_trace_non_decreasing_with_identity_phi(seed, dt):
    rng = np.random.default_rng(seed)
    P = random_psd(rng)
    _, G = error_dynamics(random_state(rng), random_imu(rng))
    P2 = propagate_covariance(P, np.eye(DIM), G, NoiseParameters(), dt)
    assert np.trace(P2) >= np.trace(P) - 1e-12


def test_banded_matches_full(rng):
    for _ in range(20):
        s, imu = random_state(rng), random_imu(rng)
        F, G = error_dynamics(s, imu)
        P = random_psd(rng)
        full = propagate_covariance(P, transition_matrix(F, 0.005), G, NoiseParameters(), 0.005)
        assert np.abs(propagate_covariance_banded(P, F, G, NoiseParameters(), 0.005) - full).max() < 1e-13


def test_compiled_kernel_matches_reference(rng):
    noise = NoiseParameters(2e-3, 0.05, 3e-5, 0.02)
    q = np.ascontiguousarray(noise.q_diagonal())
    for _ in range(20):
        s, imu = random_state(rng), random_imu(rng)
        P = random_psd(rng)
        dt = rng.uniform(1e-3, 0.05)
        ref = propagate_nominal(s, imu, dt)
        F, G = error_dynamics(s, imu)
        P_ref = propagate_covariance(P, transition_matrix(F, dt), G, noise, dt)
        C, r, v, P_fast = propagate_step(
            s.C_rv, s.r_vr, s.v, s.g_r, s.b_w, s.b_a, imu.omega_m, imu.a_m, dt, P, q
        )
        assert np.abs(C - ref.C_rv).max() < 1e-14
        assert np.abs(r - ref.r_vr).max() < 1e-13
        assert np.abs(v - ref.v).max() < 1e-13
        assert np.abs(P_fast - P_ref).max() < 1e-12


def test_deterministic(rng):
    s, imu = random_state(rng), random_imu(rng)
    a = propagate_nominal(s, imu, 0.005)
    b = propagate_nominal(s, imu, 0.005)
    assert np.array_equal(a.C_rv, b.C_rv) and np.array_equal(a.v, b.v)


def test_monte_carlo_covariance():
    rng = np.random.default_rng(2024)
    noise = NoiseParameters()
    s = RobocentricState(
        C_rv=so3_exp([0.2, -0.1, 0.4]), r_vr=[0.1, 0.2, 0.0], v=[0.5, -0.3, 0.2],
        b_w=[0.01, 0.0, -0.01], b_a=[0.1, 0.0, 0.05],
    )
    omega_m = np.array([0.3, -0.2, 0.5])
    a_m = s.C_rv.T @ s.g_r + np.array([0.5, 0.2, -0.3])
    dt, steps, n = 0.005, 100, 10_000
    imu = ImuSample(0.0, omega_m, a_m)

    # Linearized prediction.
    P = np.zeros((DIM, DIM))
    x = s
    for _ in range(steps):
        F, G = error_dynamics(x, imu)
        P = propagate_covariance(P, transition_matrix(F, dt), G, noise, dt)
        x = propagate_nominal(x, imu, dt)

    # Vectorized Euler integration of n noisy copies of the same model.
    C = np.repeat(s.C_rv[None], n, axis=0)
    r = np.tile(s.r_vr, (n, 1))
    v = np.tile(s.v, (n, 1))
    bw = np.tile(s.b_w, (n, 1))
    ba = np.tile(s.b_a, (n, 1))
    for _ in range(steps):
        w = omega_m - bw - rng.normal(size=(n, 3)) * noise.sigma_w / np.sqrt(dt)
        a = a_m - ba - rng.normal(size=(n, 3)) * noise.sigma_a / np.sqrt(dt)
        vel_r = np.einsum("nij,nj->ni", C, v)
        acc_r = np.einsum("nij,nj->ni", C, a) - s.g_r
        C = C @ np.array([so3_exp(wi * dt) for wi in w])
        r = r + vel_r * dt + 0.5 * acc_r * dt * dt
        v = np.einsum("nji,nj->ni", C, vel_r + acc_r * dt)
        bw = bw + rng.normal(size=(n, 3)) * noise.sigma_bw * np.sqrt(dt)
        ba = ba + rng.normal(size=(n, 3)) * noise.sigma_ba * np.sqrt(dt)

    err = np.zeros((n, DIM))
    err[:, PHI_RV] = [so3_log(x.C_rv.T @ Ci) for Ci in C]
    err[:, R_VR] = r - x.r_vr
    err[:, VEL] = v - x.v
    err[:, BIAS_W] = bw - x.b_w
    err[:, BIAS_A] = ba - x.b_a
    sample = np.cov(err.T)
    rel = np.linalg.norm(sample - P) / np.linalg.norm(P)
    assert rel < 0.15
