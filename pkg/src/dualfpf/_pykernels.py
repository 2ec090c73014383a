"""Pure-numpy implementations of the hot loops.

Same signatures and semantics as the compiled ``_kernels`` module; used when
the extension is unavailable or ``DUALFPF_PURE_PYTHON`` is set.
"""

import numpy as np


def riccati_rk4(A, Q, S, sigma0, dt):
    """Classical RK4 for ``P' = AP + PA^T + Q - P S P`` on a half-step table.

    ``A``, ``Q``, ``S`` have shape ``(2n+1, d, d)``: entry ``2k`` is grid point
    ``k`` and ``2k+1`` the midpoint of step ``k``.  Returns ``(n+1, d, d)``.
    """
    n = (A.shape[0] - 1) // 2
    out = np.empty((n + 1,) + sigma0.shape)
    P = np.array(sigma0, dtype=float)
    out[0] = P

    def f(P, j):
        AP = A[j] @ P
        return AP + AP.T + Q[j] - P @ S[j] @ P

    h = 0.5 * dt
    for k in range(n):
        j = 2 * k
        k1 = f(P, j)
        k2 = f(P + h * k1, j + 1)
        k3 = f(P + h * k2, j + 1)
        k4 = f(P + dt * k3, j + 2)
        P = P + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        P = 0.5 * (P + P.T)
        out[k + 1] = P
    return out


def backward_transition_rk4(M, dt):
    """Solve ``X'(t) = M(t) X(t)`` backward from ``X(T) = I``.

    ``M`` is a half-step table ``(2n+1, d, d)`` ending at ``T``.  The sweep is
    run forward in reversed time ``s = T - t``.  Returns ``X(t_k)`` for
    ``k = 0..n`` in increasing time order.
    """
    n = (M.shape[0] - 1) // 2
    d = M.shape[1]
    G = -M[::-1]
    out = np.empty((n + 1, d, d))
    X = np.eye(d)
    out[n] = X
    h = 0.5 * dt
    for k in range(n):
        j = 2 * k
        k1 = G[j] @ X
        k2 = G[j + 1] @ (X + h * k1)
        k3 = G[j + 1] @ (X + h * k2)
        k4 = G[j + 2] @ (X + dt * k3)
        X = X + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        out[n - k - 1] = X
    return out


def affine_recursion(F, b, x0):
    """``x_{k+1} = F_k x_k + b_k``; returns ``(n+1, d)``."""
    n = F.shape[0]
    out = np.empty((n + 1, x0.shape[0]))
    x = np.array(x0, dtype=float)
    out[0] = x
    for k in range(n):
        x = F[k] @ x + b[k]
        out[k + 1] = x
    return out


def particle_update(X, F, g, kdz, zb, Bmat, zw, Wmat, dt):
    """One Euler step of the affine particle dynamics.

    Row ``p`` becomes ``X_p + (F X_p + g) dt + kdz + Bmat zb_p + Wmat zw_p``.
    ``zb``/``zw`` are per-particle noise draws (``None`` to skip the term)
    and ``Bmat``/``Wmat`` map them into state space.
    """
    out = X + (X @ F.T + g) * dt + kdz
    if zb is not None:
        out += zb @ Bmat.T
    if zw is not None:
        out += zw @ Wmat.T
    return out


def moments(X):
    """Sample mean and 1/(N-1) covariance of the rows of ``X``.

    The covariance is NaN for a single row.
    """
    mean = X.mean(axis=0)
    if X.shape[0] < 2:
        return mean, np.full((X.shape[1], X.shape[1]), np.nan)
    D = X - mean
    cov = D.T @ D / (X.shape[0] - 1)
    return mean, 0.5 * (cov + cov.T)
