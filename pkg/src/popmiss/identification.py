"""Identification algebra under missing-at-random x and no K-way interaction.

Shapes used throughout: ``P`` profiles, ``L`` joint x levels, ``n`` units.
All products of q-probabilities are evaluated as signed sums of logs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NumericError
from .model import n_lists_from_profiles, parity_signs

DEFAULT_GAMMA_CAP = 1e4


def q_full_under_mar(q_v: np.ndarray, lam: np.ndarray) -> np.ndarray:
    """Full conditional profile probabilities given (v, x).

    ``q_v`` has shape (..., P) and ``lam`` (..., P, L); the result has shape
    (..., P, L) and each x column sums to one over profiles. A 1-d ``lam``
    is read as a single x column.
    """
    q_v = np.asarray(q_v, dtype=float)
    lam = np.asarray(lam, dtype=float)
    if lam.ndim == q_v.ndim:
        return q_full_under_mar(q_v, lam[..., None])[..., 0]
    joint = lam * q_v[..., None]
    return joint / joint.sum(axis=-2, keepdims=True)


def log_odds_product(q: np.ndarray, axis: int = -1) -> np.ndarray:
    """sum_y (-1)^(1+|y|) log q_y along ``axis``."""
    q = np.asarray(q, dtype=float)
    signs = parity_signs(n_lists_from_profiles(q.shape[axis]))
    shape = [1] * q.ndim
    shape[axis] = -1
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.sum(signs.reshape(shape) * np.log(q), axis=axis)


def gamma_inv(q: np.ndarray, axis: int = -1, cap: float = np.inf) -> np.ndarray:
    """Inverse conditional capture probability, 1 + exp(signed log sum).

    ``cap`` bounds the result from above; use :func:`gamma_inv_capped` to
    also learn how many entries hit it.
    """
    return gamma_inv_capped(q, axis, cap)[0]


def gamma_inv_capped(q: np.ndarray, axis: int = -1, cap: float = np.inf) -> tuple[np.ndarray, int]:
    log_g = log_odds_product(q, axis)
    if not np.all(np.isfinite(log_g)):
        raise NumericError("non-finite log capture odds; are the q-probabilities clipped?")
    n_capped = 0
    if np.isfinite(cap):
        limit = np.log(cap - 1.0)
        n_capped = int(np.sum(log_g > limit))
        log_g = np.minimum(log_g, limit)
    out = 1.0 + np.exp(log_g)
    if not np.all(np.isfinite(out)):
        raise NumericError("inverse capture probability overflowed")
    return out, n_capped


def cond_inv_gamma_given_v(q_v: np.ndarray, lam: np.ndarray, cap: float = np.inf):
    """Conditional mean of (1/gamma - 1) over x given v.

    Returns ``(m_v, gamma_inv_x, q_x_given_v)`` where ``q_x_given_v`` is the
    implied x distribution sum_y lambda_x(y, v) q_y(v).
    """
    q_v = np.asarray(q_v, dtype=float)
    lam = np.asarray(lam, dtype=float)
    q_vx = q_full_under_mar(q_v, lam)
    g_inv = gamma_inv(q_vx, axis=-2, cap=cap)
    q_x = np.sum(lam * q_v[..., None], axis=-2)
    m_v = np.sum((g_inv - 1.0) * q_x, axis=-1)
    return m_v, g_inv, q_x


@dataclass(frozen=True)
class UnitNuisances:
    """Per-unit nuisance values plus the quantities derived from them.

    Attributes
    ----------
    q_v : (n, P) profile probabilities given v.
    lam : (n, P, L) x-level probabilities given (profile, v).
    pi : (n, P) observation probabilities for every profile.
    q_vx : (n, P, L) full conditional profile probabilities.
    gamma_inv : (n, L) inverse conditional capture probability at each x.
    q_x : (n, L) x distribution given v.
    m_v : (n,) conditional mean of 1/gamma - 1 given v.
    n_gamma_capped : number of (unit, x) cells where the cap bound.
    """

    q_v: np.ndarray
    lam: np.ndarray
    pi: np.ndarray
    q_vx: np.ndarray
    gamma_inv: np.ndarray
    q_x: np.ndarray
    m_v: np.ndarray
    n_gamma_capped: int = 0

    @classmethod
    def from_components(cls, q_v, lam, pi, gamma_cap: float = DEFAULT_GAMMA_CAP) -> "UnitNuisances":
        q_v = np.asarray(q_v, dtype=float)
        lam = np.asarray(lam, dtype=float)
        pi = np.broadcast_to(np.asarray(pi, dtype=float), q_v.shape).copy()
        q_vx = q_full_under_mar(q_v, lam)
        g_inv, n_capped = gamma_inv_capped(q_vx, axis=-2, cap=gamma_cap)
        q_x = np.sum(lam * q_v[..., None], axis=-2)
        m_v = np.sum((g_inv - 1.0) * q_x, axis=-1)
        return cls(q_v, lam, pi, q_vx, g_inv, q_x, m_v, n_capped)

    def __len__(self) -> int:
        return len(self.q_v)

    def take(self, idx) -> "UnitNuisances":
        return UnitNuisances(
            self.q_v[idx], self.lam[idx], self.pi[idx], self.q_vx[idx],
            self.gamma_inv[idx], self.q_x[idx], self.m_v[idx], 0,
        )

    @classmethod
    def assemble(cls, parts, n: int) -> "UnitNuisances":
        """Scatter ``(index array, UnitNuisances)`` pieces into one object."""
        first = parts[0][1]
        arrays = {}
        for name in ("q_v", "lam", "pi", "q_vx", "gamma_inv", "q_x", "m_v"):
            ref = getattr(first, name)
            out = np.empty((n,) + ref.shape[1:])
            for idx, piece in parts:
                out[idx] = getattr(piece, name)
            arrays[name] = out
        capped = sum(piece.n_gamma_capped for _, piece in parts)
        return cls(**arrays, n_gamma_capped=capped)
