"""Dense SVD, Ky Fan m-norm and its subgradient, covariance.

Matrices are plain 2-D ``float64`` numpy arrays. The truncated SVD is a
one-sided (Hestenes) Jacobi iteration, vectorized over a stack of matrices so
that the covariance loss can decompose all class pairs of a batch at once.
``svd_full`` goes through LAPACK and serves as the independent reference.
"""
from __future__ import annotations

from functools import lru_cache
from typing import NamedTuple

import numpy as np

from .errors import ArgumentError, NumericalError

_EPS = np.finfo(np.float64).eps
_MAX_SWEEPS = 80


class SvdResult(NamedTuple):
    u: np.ndarray      # (rows, k), orthonormal columns
    sigma: np.ndarray  # (k,), descending
    v: np.ndarray      # (cols, k), orthonormal columns


def _as_matrix(a) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2:
        raise ArgumentError(f"expected a 2-D matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ArgumentError("matrix has non-finite entries")
    return a


def svd_full(a) -> SvdResult:
    """Thin SVD through LAPACK (``numpy.linalg.svd``)."""
    a = _as_matrix(a)
    try:
        u, s, vt = np.linalg.svd(a, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"SVD did not converge: {exc}") from exc
    return SvdResult(u, s, vt.T)


@lru_cache(maxsize=64)
def _round_robin(n: int) -> tuple[tuple[np.ndarray, np.ndarray], ...]:
    # circle-method tournament: each round is n/2 disjoint column pairs
    idx = list(range(n))
    rounds = []
    for _ in range(n - 1):
        p = np.array([idx[i] for i in range(n // 2)])
        q = np.array([idx[n - 1 - i] for i in range(n // 2)])
        rounds.append((p, q))
        idx = [idx[0], idx[-1]] + idx[1:-1]
    return tuple(rounds)


def _jacobi_stack(a: np.ndarray, tol: float) -> tuple[np.ndarray, np.ndarray]:
    """One-sided Jacobi on a stack ``(P, r, n)`` with ``r >= n``.

    Returns the rotated columns ``W = A V`` (column norms are the singular
    values) and ``V``, both unsorted.
    """
    P, r, n = a.shape
    # work at unit scale so products of column norms cannot under- or overflow
    scale = np.abs(a).max(axis=(1, 2), keepdims=True)
    scale = np.where(scale > 0, scale, 1.0)
    w = a / scale
    n_pad = n + (n % 2)
    if n_pad != n:
        w = np.concatenate([w, np.zeros((P, r, 1))], axis=2)
    v = np.broadcast_to(np.eye(n_pad), (P, n_pad, n_pad)).copy()
    if n_pad < 2:
        return w[:, :, :n] * scale, v[:, :n, :n]
    rounds = _round_robin(n_pad)
    # columns below round-off of the whole matrix carry no direction; leave them be
    floor = ((_EPS * np.linalg.norm(w, axis=(1, 2))) ** 2)[:, None]
    for _ in range(_MAX_SWEEPS):
        rotated = False
        for p, q in rounds:
            wp = w[:, :, p]
            wq = w[:, :, q]
            alpha = np.einsum("brk,brk->bk", wp, wp)
            beta = np.einsum("brk,brk->bk", wq, wq)
            gamma = np.einsum("brk,brk->bk", wp, wq)
            active = (np.abs(gamma) > tol * np.sqrt(alpha * beta)) & (np.minimum(alpha, beta) > floor)
            if not active.any():
                continue
            rotated = True
            safe_gamma = np.where(active, gamma, 1.0)
            zeta = (beta - alpha) / (2.0 * safe_gamma)
            sign = np.where(zeta >= 0, 1.0, -1.0)
            t = sign / (np.abs(zeta) + np.hypot(1.0, zeta))
            c = np.where(active, 1.0 / np.sqrt(1.0 + t * t), 1.0)
            s = np.where(active, c * t, 0.0)
            c3 = c[:, None, :]
            s3 = s[:, None, :]
            w[:, :, p], w[:, :, q] = c3 * wp - s3 * wq, s3 * wp + c3 * wq
            vp = v[:, :, p]
            vq = v[:, :, q]
            v[:, :, p], v[:, :, q] = c3 * vp - s3 * vq, s3 * vp + c3 * vq
        if not rotated:
            return w[:, :, :n] * scale, v[:, :n, :n]
    raise NumericalError(f"Jacobi SVD did not converge in {_MAX_SWEEPS} sweeps")


def _complete_columns(u: np.ndarray, good: np.ndarray) -> np.ndarray:
    """Replace columns where ``good`` is False by an orthonormal completion."""
    u = u.copy()
    good = good.copy()
    for j in np.flatnonzero(~good):
        keep = u[:, good]
        for e in np.eye(u.shape[0]):
            cand = e - keep @ (keep.T @ e)
            cand -= keep @ (keep.T @ cand)
            norm = np.linalg.norm(cand)
            if norm > 0.5:
                u[:, j] = cand / norm
                break
        good[j] = True
    return u


SVD_METHODS = ("jacobi", "lapack")


def svd_stack(a: np.ndarray, m: int | None = None, method: str = "jacobi") -> SvdResult:
    """SVD of every matrix in a stack ``(P, rows, cols)``.

    Singular triplets are sorted descending (stable, so ties keep the order
    the iteration produced) and truncated to the leading ``m``. ``method``
    picks the one-sided Jacobi iteration here or numpy's LAPACK driver.
    """
    if method not in SVD_METHODS:
        raise ArgumentError(f"unknown SVD method {method!r}")
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 3:
        raise ArgumentError(f"expected a (P, rows, cols) stack, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ArgumentError("matrix has non-finite entries")
    P, rows, cols = a.shape
    k = min(rows, cols)
    if m is None:
        m = k
    if not 1 <= m <= k:
        raise ArgumentError(f"truncation rank m={m} outside [1, {k}]")
    if method == "lapack":
        try:
            u, sigma, vh = np.linalg.svd(a, full_matrices=False)
        except np.linalg.LinAlgError as exc:
            raise NumericalError(f"LAPACK SVD failed: {exc}") from exc
        return SvdResult(u[:, :, :m], sigma[:, :m], np.swapaxes(vh, 1, 2)[:, :, :m])
    flipped = rows < cols
    work = np.swapaxes(a, 1, 2) if flipped else a
    w, v = _jacobi_stack(work, tol=max(work.shape[1], 1) * _EPS)
    sigma = np.linalg.norm(w, axis=1)
    order = np.argsort(-sigma, axis=1, kind="stable")[:, :m]
    sigma = np.take_along_axis(sigma, order, axis=1)
    w = np.take_along_axis(w, order[:, None, :], axis=2)
    v = np.take_along_axis(v, order[:, None, :], axis=2)
    u = np.empty_like(w)
    for i in range(P):
        # columns with negligible norm carry no direction; complete them
        good = sigma[i] > max(w.shape[1], cols) * _EPS * max(sigma[i, 0], 1e-300)
        u[i] = w[i] / np.where(good, sigma[i], 1.0)
        if not good.all():
            u[i] = _complete_columns(u[i], good)
            sigma[i] = np.where(good, sigma[i], 0.0)
    if flipped:
        u, v = v, u
    return SvdResult(u, sigma, v)


def svd_truncated(a, m: int) -> SvdResult:
    """Leading ``m`` singular triplets of ``a``."""
    a = _as_matrix(a)
    res = svd_stack(a[None], m)
    return SvdResult(res.u[0], res.sigma[0], res.v[0])


def kyfan_norm(a, m: int) -> float:
    """Sum of the ``m`` largest singular values."""
    return float(svd_truncated(a, m).sigma.sum())


def kyfan_subgrad(a, m: int) -> np.ndarray:
    """``U_m V_m^T`` from the m-truncated SVD.

    This is the gradient of the Ky Fan m-norm where ``sigma_m > sigma_{m+1}``
    and ``sigma_m > 0``; at ties it is one valid subgradient, chosen by the
    deterministic ordering of the decomposition.
    """
    res = svd_truncated(a, m)
    return res.u @ res.v.T


def kyfan_stack(a: np.ndarray, m: int, method: str = "jacobi") -> tuple[np.ndarray, np.ndarray]:
    """Ky Fan m-norms and subgradients for a stack ``(P, rows, cols)``."""
    res = svd_stack(a, m, method)
    return res.sigma.sum(axis=1), np.einsum("bik,bjk->bij", res.u, res.v)


def covariance(samples, centroid) -> np.ndarray:
    """``(1/n) sum_i (x_i - c)(x_i - c)^T`` with divisor n."""
    x = np.asarray(samples, dtype=np.float64)
    c = np.asarray(centroid, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise ArgumentError("covariance needs a non-empty (n, D) sample array")
    if c.shape != (x.shape[1],):
        raise ArgumentError(f"centroid shape {c.shape} does not match D={x.shape[1]}")
    d = x - c
    return d.T @ d / x.shape[0]


def top_principal_components(x, k: int = 2) -> tuple[np.ndarray, np.ndarray]:
    """Mean and the top-``k`` principal directions (columns) of the rows of ``x``."""
    x = np.asarray(x, dtype=np.float64)
    mean = x.mean(axis=0)
    cov = covariance(x, mean)
    res = svd_truncated(cov, min(k, cov.shape[0]))
    return mean, res.u
