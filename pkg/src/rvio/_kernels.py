"""Compiled inner loop for the filter driver.

Mirrors ``propagate_nominal`` + ``error_dynamics`` + ``propagate_covariance``
in one call. The numpy functions in :mod:`rvio.propagation` are the reference;
tests check that both paths agree.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def _hat(v):
    M = np.zeros((3, 3))
    M[0, 1] = -v[2]
    M[0, 2] = v[1]
    M[1, 0] = v[2]
    M[1, 2] = -v[0]
    M[2, 0] = -v[1]
    M[2, 1] = v[0]
    return M


@njit(cache=True)
def _exp(phi):
    theta = np.sqrt(phi[0] * phi[0] + phi[1] * phi[1] + phi[2] * phi[2])
    K = _hat(phi)
    K2 = K @ K
    if theta < 1e-7:
        return np.eye(3) + K + 0.5 * K2
    s = np.sin(0.5 * theta)
    return np.eye(3) + (np.sin(theta) / theta) * K + (2.0 * s * s / (theta * theta)) * K2


@njit(cache=True)
def propagate_step(C, r, v, g, b_w, b_a, omega_m, a_m, dt, P, q):
    """One Euler step of the nominal state and covariance.

    Returns ``(C_next, r_next, v_next, P_next)``.
    """
    omega = omega_m - b_w
    acc = a_m - b_a
    Ct = C.T.copy()
    vel_r = C @ v
    acc_r = C @ acc - g
    C_next = C @ _exp(omega * dt)
    r_next = r + vel_r * dt + 0.5 * acc_r * dt * dt
    v_next = C_next.T @ (vel_r + acc_r * dt)

    # Non-zero band of F (rows 9:18) scaled by dt, in full 25 columns.
    Fd = np.zeros((9, 25))
    w_hat = _hat(omega)
    v_hat = _hat(v)
    g_hat = _hat(Ct @ g)
    Cv = C @ v_hat
    for i in range(3):
        Fd[i, 18 + i] = -1.0
        Fd[6 + i, 21 + i] = -1.0
        for j in range(3):
            Fd[i, 9 + j] = -w_hat[i, j]
            Fd[3 + i, 9 + j] = -Cv[i, j]
            Fd[3 + i, 15 + j] = C[i, j]
            Fd[6 + i, 6 + j] = -Ct[i, j]
            Fd[6 + i, 9 + j] = -g_hat[i, j]
            Fd[6 + i, 15 + j] = -w_hat[i, j]
            Fd[6 + i, 18 + j] = -v_hat[i, j]
    Fd *= dt

    A = Fd @ P
    P_next = P.copy()
    for i in range(9):
        for j in range(25):
            P_next[9 + i, j] += A[i, j]
            P_next[j, 9 + i] += A[i, j]
    B = A @ Fd.T
    for i in range(9):
        for j in range(9):
            P_next[9 + i, 9 + j] += B[i, j]

    # G Q G^T dt with q = diag over [n_w, n_a, n_bw, n_ba].
    # phi rows see -n_w, vel rows see -hat(v) n_w - n_a.
    for i in range(3):
        P_next[9 + i, 9 + i] += q[i] * dt
        P_next[15 + i, 15 + i] += q[3 + i] * dt
        P_next[18 + i, 18 + i] += q[6 + i] * dt
        P_next[21 + i, 21 + i] += q[9 + i] * dt
        for j in range(3):
            P_next[9 + i, 15 + j] += q[i] * dt * v_hat[j, i]
            P_next[15 + i, 9 + j] += q[j] * dt * v_hat[i, j]
            s = 0.0
            for k in range(3):
                s += v_hat[i, k] * q[k] * v_hat[j, k]
            P_next[15 + i, 15 + j] += s * dt

    for i in range(25):
        for j in range(i + 1, 25):
            m = 0.5 * (P_next[i, j] + P_next[j, i])
            P_next[i, j] = m
            P_next[j, i] = m
    return C_next, r_next, v_next, P_next
