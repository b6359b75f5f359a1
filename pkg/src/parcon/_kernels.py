"""Compiled time-stepping loops.

All systems are tridiagonal with constant off-diagonal ``-1/h^2`` and a
varying main diagonal, so the elimination recurrence never pivots.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def thomas(off, diag, rhs, out, work):
    """Solve the symmetric tridiagonal system with scalar off-diagonal ``off``."""
    n = diag.shape[0]
    beta = diag[0]
    out[0] = rhs[0] / beta
    for i in range(1, n):
        work[i] = off / beta
        beta = diag[i] - off * work[i]
        out[i] = (rhs[i] - off * out[i - 1]) / beta
    for i in range(n - 2, -1, -1):
        out[i] -= work[i + 1] * out[i + 1]


@njit(cache=True)
def laplace_apply(z, h, out):
    """``out = K z`` with ``K = -Delta_h`` and zero boundary values."""
    n = z.shape[0]
    inv = 1.0 / (h * h)
    for i in range(n):
        left = z[i - 1] if i > 0 else 0.0
        right = z[i + 1] if i < n - 1 else 0.0
        out[i] = (2.0 * z[i] - left - right) * inv


@njit(cache=True)
def forward_state(y0, F, S, gamma, dt, h, maxit, tol):
    """Backward Euler with per-step Newton for the semilinear equation.

    Returns ``(Y, status, bad_step, residual)``; status 0 is success, 1 a
    Newton failure, 2 a non-finite state.
    """
    nt = S.shape[0]
    n = y0.shape[0]
    Y = np.empty((nt + 1, n))
    Y[0] = y0
    off = -1.0 / (h * h)
    d0 = 1.0 / dt + 2.0 / (h * h)
    diag = np.empty(n)
    rhs = np.empty(n)
    work = np.empty(n)
    delta = np.empty(n)
    Ky = np.empty(n)
    y = np.empty(n)
    for k in range(nt):
        if gamma == 0.0:
            for i in range(n):
                diag[i] = d0 - S[k, i]
                rhs[i] = Y[k, i] / dt + F[k + 1, i]
            thomas(off, diag, rhs, y, work)
        else:
            for i in range(n):
                y[i] = Y[k, i]
            converged = False
            res = 0.0
            for it in range(maxit):
                laplace_apply(y, h, Ky)
                res = 0.0
                for i in range(n):
                    r = (y[i] - Y[k, i]) / dt + Ky[i] + gamma * y[i] ** 3 - S[k, i] * y[i] - F[k + 1, i]
                    rhs[i] = -r
                    if abs(r) > res:
                        res = abs(r)
                    diag[i] = d0 + 3.0 * gamma * y[i] * y[i] - S[k, i]
                thomas(off, diag, rhs, delta, work)
                step = 0.0
                scale = 1.0
                for i in range(n):
                    y[i] += delta[i]
                    if abs(delta[i]) > step:
                        step = abs(delta[i])
                    if abs(y[i]) > scale:
                        scale = abs(y[i])
                if not np.isfinite(step):
                    return Y, 1, k, res
                if step <= tol * scale:
                    converged = True
                    break
            if not converged:
                return Y, 1, k, res
        for i in range(n):
            if not np.isfinite(y[i]):
                return Y, 2, k, np.inf
            Y[k + 1, i] = y[i]
    return Y, 0, -1, 0.0


@njit(cache=True)
def forward_linear(Ybar, S, gamma, Phi, dt, h):
    """Solve ``(z^{k+1} - z^k)/dt + A^{k+1} z^{k+1} = Phi[k]`` from ``z^0 = 0``."""
    nt = S.shape[0]
    n = Ybar.shape[1]
    Z = np.zeros((nt + 1, n))
    off = -1.0 / (h * h)
    d0 = 1.0 / dt + 2.0 / (h * h)
    diag = np.empty(n)
    rhs = np.empty(n)
    work = np.empty(n)
    z = np.empty(n)
    for k in range(nt):
        for i in range(n):
            yb = Ybar[k + 1, i]
            diag[i] = d0 + 3.0 * gamma * yb * yb - S[k, i]
            rhs[i] = Z[k, i] / dt + Phi[k, i]
        thomas(off, diag, rhs, z, work)
        for i in range(n):
            Z[k + 1, i] = z[i]
    return Z


@njit(cache=True)
def backward_adjoint(Ybar, S, gamma, R, pT, dt, h):
    """Solve ``(p^k - p^{k+1})/dt + A^{k+1} p^k = R[k+1]`` from ``p^N = pT``.

    ``A^{k+1}`` is the same matrix used in forward step ``k``, which makes
    this the exact transpose of :func:`forward_linear`.
    """
    nt = S.shape[0]
    n = Ybar.shape[1]
    P = np.empty((nt + 1, n))
    P[nt] = pT
    off = -1.0 / (h * h)
    d0 = 1.0 / dt + 2.0 / (h * h)
    diag = np.empty(n)
    rhs = np.empty(n)
    work = np.empty(n)
    p = np.empty(n)
    for k in range(nt - 1, -1, -1):
        for i in range(n):
            yb = Ybar[k + 1, i]
            diag[i] = d0 + 3.0 * gamma * yb * yb - S[k, i]
            rhs[i] = P[k + 1, i] / dt + R[k + 1, i]
        thomas(off, diag, rhs, p, work)
        for i in range(n):
            P[k, i] = p[i]
    return P
