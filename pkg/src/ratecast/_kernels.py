"""Compiled per-entry SGD kernels shared by the trainer and the simulator.

Model kinds are passed as small integers: 0 RMF, 1 MMMF, 2 NMF.

Per-entry objectives (the step is ``-eta * gradient`` of these):

* RMF:  0.5 * [(x - u.v)^2 + lam * (|u|^2 + |v|^2)]
* MMMF: sum_r h(T_r * (theta_r - u.v)) + lam * (|u|^2 + |v|^2)
* NMF:  x log(x / u.v) - x + u.v + lam * (|u|^2 + |v|^2), then clamp at EPS_NN
"""

from __future__ import annotations

import numpy as np
from numba import njit

RMF, MMMF, NMF = 0, 1, 2
EPS_NN = 1e-6


@njit(cache=True)
def smooth_hinge(z):
    if z >= 1.0:
        return 0.0
    if z > 0.0:
        return 0.5 * (1.0 - z) * (1.0 - z)
    return 0.5 - z


@njit(cache=True)
def smooth_hinge_grad(z):
    if z >= 1.0:
        return 0.0
    if z > 0.0:
        return z - 1.0
    return -1.0


@njit(cache=True)
def entry_grad(kind, u, v, theta, x, lam, gu, gv, gtheta):
    """Fill gu, gv, gtheta with the per-entry gradient; return the data loss at (u, v, theta)."""
    r = u.shape[0]
    est = 0.0
    for k in range(r):
        est += u[k] * v[k]
    for t in range(gtheta.shape[0]):
        gtheta[t] = 0.0

    if kind == RMF:
        e = x - est
        for k in range(r):
            gu[k] = -e * v[k] + lam * u[k]
            gv[k] = -e * u[k] + lam * v[k]
        return e * e

    if kind == MMMF:
        gz = 0.0
        loss = 0.0
        for t in range(theta.shape[0]):
            sign = 1.0 if x <= t + 1 else -1.0
            z = sign * (theta[t] - est)
            loss += smooth_hinge(z)
            dz = smooth_hinge_grad(z)
            gz -= sign * dz
            gtheta[t] = sign * dz
        for k in range(r):
            gu[k] = gz * v[k] + 2.0 * lam * u[k]
            gv[k] = gz * u[k] + 2.0 * lam * v[k]
        return loss

    # NMF, generalized KL divergence
    xh = est if est > EPS_NN else EPS_NN
    g = 1.0 - x / xh
    for k in range(r):
        gu[k] = g * v[k] + 2.0 * lam * u[k]
        gv[k] = g * u[k] + 2.0 * lam * v[k]
    return x * np.log(x / xh) - x + xh


@njit(cache=True)
def repair_thresholds(theta):
    # insertion sort, then break exact ties upward
    for a in range(1, theta.shape[0]):
        key = theta[a]
        b = a - 1
        while b >= 0 and theta[b] > key:
            theta[b + 1] = theta[b]
            b -= 1
        theta[b + 1] = key
    for a in range(1, theta.shape[0]):
        if theta[a] <= theta[a - 1]:
            theta[a] = np.nextafter(theta[a - 1], np.inf)


@njit(cache=True)
def sgd_step(kind, u, v, theta, x, eta, lam, learn_theta):
    """One in-place step on rows u, v (and theta); returns the pre-step data loss."""
    r = u.shape[0]
    gu = np.empty(r)
    gv = np.empty(r)
    gtheta = np.empty(theta.shape[0])
    loss = entry_grad(kind, u, v, theta, x, lam, gu, gv, gtheta)
    for k in range(r):
        u[k] -= eta * gu[k]
        v[k] -= eta * gv[k]
    if kind == NMF:
        for k in range(r):
            if u[k] < EPS_NN:
                u[k] = EPS_NN
            if v[k] < EPS_NN:
                v[k] = EPS_NN
    elif kind == MMMF and learn_theta:
        for t in range(theta.shape[0]):
            theta[t] -= eta * gtheta[t]
        repair_thresholds(theta)
    return loss


@njit(cache=True)
def run_epoch(kind, U, V, theta, rows, cols, vals, order, eta, lam, learn_theta, out):
    """Visit entries in ``order``; return the failing step index or -1 on success."""
    total = 0.0
    r = U.shape[1]
    for s in range(order.shape[0]):
        e = order[s]
        i = rows[e]
        j = cols[e]
        loss = sgd_step(kind, U[i], V[j], theta, vals[e], eta, lam, learn_theta)
        if not np.isfinite(loss):
            return s
        for k in range(r):
            if not (np.isfinite(U[i, k]) and np.isfinite(V[j, k])):
                return s
        total += loss
    out[0] = total
    return -1
