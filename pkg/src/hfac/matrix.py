"""Dense matrix reductions and update primitives shared by the optimizers.

Matrices are plain 2-D ``float64`` numpy arrays and vectors are 1-D arrays.
All functions are pure: inputs are never modified.
"""

import numpy as np

# rms() of an already clipped update can land a few ulps above the threshold;
# treating that as "within threshold" keeps clip_update exactly idempotent.
_CLIP_SLACK = 64 * np.finfo(np.float64).eps


def as_matrix(x, name="matrix"):
    """Return ``x`` as a 2-D float64 array, raising ``ValueError`` otherwise."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {arr.shape}")
    if arr.size == 0:
        raise ValueError(f"{name} must be nonempty")
    return arr


def check_same_shape(a, b, names=("W", "G")):
    if a.shape != b.shape:
        raise ValueError(
            f"shape mismatch: {names[0]} {a.shape} vs {names[1]} {b.shape}"
        )


def row_mean(G):
    """Mean over columns, ``G 1_n / n`` (length m)."""
    return as_matrix(G).mean(axis=1)


def col_mean(G):
    """Mean over rows, ``G^T 1_m / m`` (length n)."""
    return as_matrix(G).mean(axis=0)


def row_sum_sq(G, eps=0.0):
    """``[(G)^2 + eps] 1_n``: per-row sum of squared entries plus eps per entry."""
    if eps < 0:
        raise ValueError("eps must be nonnegative")
    G = as_matrix(G)
    return (G * G + eps).sum(axis=1)


def col_sum_sq(G, eps=0.0):
    """``[(G^T)^2 + eps] 1_m``: per-column analogue of :func:`row_sum_sq`."""
    if eps < 0:
        raise ValueError("eps must be nonnegative")
    G = as_matrix(G)
    return (G * G + eps).sum(axis=0)


def rms(U):
    U = as_matrix(U)
    return float(np.sqrt(np.mean(U * U)))


def clip_update(U, d=1.0):
    """Scale ``U`` by ``1 / max(1, rms(U) / d)``."""
    if d <= 0:
        raise ValueError("clip threshold d must be positive")
    U = as_matrix(U)
    ratio = rms(U) / d
    if ratio <= 1.0 + _CLIP_SLACK:
        return U.copy()
    return U / ratio


def sign(U):
    """Entrywise sign with ``sign(0) = 0``."""
    return np.sign(np.asarray(U, dtype=np.float64))


def outer(u, v):
    return np.outer(np.asarray(u, dtype=np.float64), np.asarray(v, dtype=np.float64))


def broadcast_rows(u, n):
    """``u 1_n^T``: repeat a length-m column vector across n columns."""
    u = np.asarray(u, dtype=np.float64)
    return np.repeat(u[:, None], n, axis=1)


def broadcast_cols(v, m):
    """``1_m v^T``: repeat a length-n row vector down m rows."""
    v = np.asarray(v, dtype=np.float64)
    return np.repeat(v[None, :], m, axis=0)


def frobenius(A):
    return float(np.linalg.norm(np.asarray(A, dtype=np.float64)))


def factored_second_moment(r, s):
    """Rank-one second-moment reconstruction ``r s^T / (1_m^T r)``."""
    r = np.asarray(r, dtype=np.float64)
    s = np.asarray(s, dtype=np.float64)
    return np.outer(r, s) / r.sum()
