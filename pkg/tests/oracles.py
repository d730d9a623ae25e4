"""Independent reference implementations used to cross-check the library.

These deliberately avoid the code paths they verify: the SVD oracle is a
one-sided Jacobi iteration, the Lyapunov oracle integrates the Gramian
quadrature directly, the H-infinity oracle is a dense frequency sweep, and
the ODE oracle is a fixed-step classical Runge-Kutta scheme.
"""

from __future__ import annotations

import numpy as np
import scipy.integrate
import scipy.linalg


def jacobi_singular_values(a: np.ndarray, sweeps: int = 60) -> np.ndarray:
    """Singular values via one-sided Jacobi rotations on the columns."""
    w = np.array(a, dtype=float, copy=True)
    m, n = w.shape
    if m < n:
        w = w.T
        m, n = w.shape
    for _ in range(sweeps):
        off = 0.0
        for p in range(n - 1):
            for q in range(p + 1, n):
                alpha = w[:, p] @ w[:, p]
                beta = w[:, q] @ w[:, q]
                gamma = w[:, p] @ w[:, q]
                off = max(off, abs(gamma))
                if abs(gamma) <= 1e-16 * np.sqrt(alpha * beta) or gamma == 0.0:
                    continue
                zeta = (beta - alpha) / (2.0 * gamma)
                t = np.sign(zeta) / (abs(zeta) + np.sqrt(1.0 + zeta * zeta))
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = c * t
                wp = w[:, p].copy()
                w[:, p] = c * wp - s * w[:, q]
                w[:, q] = s * wp + c * w[:, q]
        if off < 1e-14:
            break
    sv = np.sqrt(np.sum(w * w, axis=0))
    return np.sort(sv)[::-1]


def lyapunov_by_quadrature(a: np.ndarray, q: np.ndarray, n_nodes: int = 96001) -> np.ndarray:
    """X = integral of e^{At} Q e^{A^T t} dt, by Simpson on a decaying window.

    The window is chosen so the neglected tail is far below the quadrature
    resolution.  Matrix exponential powers are built blockwise
    (e^{A t_k} = F_i E_j with k = i*m + j) so the node count stays cheap.
    """
    decay = -np.max(np.linalg.eigvals(a).real)
    assert decay > 0
    horizon = 35.0 / decay
    ts = np.linspace(0.0, horizon, n_nodes)
    step = scipy.linalg.expm(a * (ts[1] - ts[0]))
    d = a.shape[0]
    m = int(np.ceil(np.sqrt(n_nodes)))
    ej = np.empty((m, d, d))
    ej[0] = np.eye(d)
    for j in range(1, m):
        ej[j] = step @ ej[j - 1]
    big_step = step @ ej[-1]
    n_blocks = int(np.ceil(n_nodes / m))
    fi = np.empty((n_blocks, d, d))
    fi[0] = np.eye(d)
    for i in range(1, n_blocks):
        fi[i] = big_step @ fi[i - 1]
    inner = np.einsum("jab,bc,jdc->jad", ej, q, ej)
    terms = np.einsum("iab,jbc,idc->ijad", fi, inner, fi).reshape(-1, d, d)[:n_nodes]
    return scipy.integrate.simpson(terms, x=ts, axis=0)


def hinf_by_sweep(a, b, c, n_points: int = 100_000) -> float:
    """Dense log-spaced frequency sweep of the peak transfer gain."""
    eig = np.linalg.eigvals(a)
    mags = np.abs(eig)
    lo = max(np.min(mags) * 1e-3, 1e-6)
    hi = max(np.max(mags) * 1e3, 1.0)
    freqs = np.concatenate([[0.0], np.geomspace(lo, hi, n_points)])
    n = a.shape[0]
    eye = np.eye(n)
    best = 0.0
    for w in freqs:
        g = c @ np.linalg.solve(1j * w * eye - a, b)
        best = max(best, float(np.linalg.norm(g, 2)))
    return best


def rk4_fixed_step(field, x0, t0: float, tf: float, n_steps: int) -> np.ndarray:
    """Classical fixed-step RK4; returns the final state."""
    x = np.asarray(x0, dtype=float).copy()
    h = (tf - t0) / n_steps
    t = t0
    for _ in range(n_steps):
        k1 = field(t, x)
        k2 = field(t + 0.5 * h, x + 0.5 * h * k1)
        k3 = field(t + 0.5 * h, x + 0.5 * h * k2)
        k4 = field(t + h, x + h * k3)
        x = x + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        t += h
    return x


def random_stable_system(rng, n: int, l: int, p: int, ratio_cap: float = 6.0):
    """Random Hurwitz (A, B, C) with moderately damped resonances."""
    lam = []
    while len(lam) < n - 1:
        re = rng.uniform(0.5, 2.0)
        im = rng.uniform(0.0, ratio_cap * re)
        lam.append((-re, im))
    blocks = []
    count = 0
    for re, im in lam:
        if count + 2 <= n and im > 0.05:
            blocks.append(np.array([[re, im], [-im, re]]))
            count += 2
        else:
            blocks.append(np.array([[re]]))
            count += 1
        if count >= n:
            break
    while count < n:
        blocks.append(np.array([[-rng.uniform(0.5, 2.0)]]))
        count += 1
    a0 = scipy.linalg.block_diag(*blocks)[:n, :n]
    qmat, _ = np.linalg.qr(rng.normal(size=(n, n)))
    a = qmat @ a0 @ qmat.T
    b = rng.normal(size=(n, l))
    c = rng.normal(size=(p, n))
    return a, b, c
