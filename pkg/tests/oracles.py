"""Independent reference computations used by the tests.

Everything here is written with plain loops over explicit cells so that it
shares no code with the vectorized package routines.
"""

from __future__ import annotations

import itertools
import math

import numpy as np


def loglinear_cells(main: np.ndarray, pair: np.ndarray) -> dict[tuple[int, ...], float]:
    """Cell probabilities of a K-list log-linear model without the K-way term.

    ``main[k]`` and ``pair[j, k]`` (j < k) are the log-linear coefficients;
    the all-zero cell is the reference with log-potential zero.
    """
    K = len(main)
    pot = {}
    for y in itertools.product((0, 1), repeat=K):
        s = sum(main[k] * y[k] for k in range(K))
        s += sum(pair[j, k] * y[j] * y[k] for j in range(K) for k in range(j + 1, K))
        pot[y] = math.exp(s)
    total = sum(pot.values())
    return {y: p / total for y, p in pot.items()}


def canonical_q(cells: dict[tuple[int, ...], float]) -> np.ndarray:
    """Capture-conditional probabilities in binary counting order."""
    K = len(next(iter(cells)))
    observed = 1.0 - cells[(0,) * K]
    out = []
    for value in range(1, 2**K):
        y = tuple((value >> (K - 1 - j)) & 1 for j in range(K))
        out.append(cells[y] / observed)
    return np.array(out)


def k2_gamma_inv(q: np.ndarray) -> float:
    q01, q10, q11 = q
    return 1.0 + q01 * q10 / q11


def bernoulli_q(p: list[float]) -> np.ndarray:
    """q for independent lists with capture probabilities ``p``."""
    K = len(p)
    cells = {}
    for y in itertools.product((0, 1), repeat=K):
        cells[y] = math.prod(p[k] if y[k] else 1 - p[k] for k in range(K))
    return canonical_q(cells)


def eif_by_hand(y: int, r: int, xj: int | None, q_v, lam, pi, psi_inv_ref: float) -> float:
    """Influence function of one unit from raw nuisance arrays.

    ``q_v`` is (P,), ``lam`` is (P, L) and ``pi`` is (P,). The full
    conditional q, gamma and the conditional mean are rebuilt from scratch.
    """
    P, L = lam.shape
    K = int(round(math.log2(P + 1)))
    size = [bin(i + 1).count("1") for i in range(P)]
    sign = [1.0 if s % 2 else -1.0 for s in size]
    q_vx = np.empty((P, L))
    for x in range(L):
        col = [lam[i, x] * q_v[i] for i in range(P)]
        tot = sum(col)
        for i in range(P):
            q_vx[i, x] = col[i] / tot
    g_inv = []
    for x in range(L):
        prod = 1.0
        for i in range(P):
            prod *= q_vx[i, x] ** sign[i]
        g_inv.append(1.0 + prod)
    q_x = [sum(lam[i, x] * q_v[i] for i in range(P)) for x in range(L)]
    m = sum((g_inv[x] - 1.0) * q_x[x] for x in range(L))
    value = sign[y] * m / q_v[y]
    if r:
        value += sign[y] / pi[y] * ((g_inv[xj] - 1.0) / q_vx[y, xj] - m / q_v[y])
    assert K >= 2
    return value - (psi_inv_ref - 1.0)
