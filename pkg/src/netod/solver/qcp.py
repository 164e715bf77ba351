"""Continuous relaxation of the squared-deviation TIP.

Variables are the arc values ``y`` in [0, 1]; ``x_j`` is the outflow of j.
The program is

    minimize    sum_g w_g (X_g - t_g)^2,   X_g = sum of y over arcs whose tail is in g
    subject to  M y + s = 1,  y >= 0,  s >= 0

where ``M`` stacks the tail and head incidence (one row per segment, so a
segment's outflow plus inflow is at most one), ``w_g = 1 / N_g^2`` and
``t_g = p*_g N_g`` for a group of ``N_g`` alighting segments. This is the
rate objective written in counts, and ``x_j <= 1`` is implied.

It is solved with a primal-dual Mehrotra predictor-corrector method. The
Hessian has rank equal to the number of groups, so each Newton system is
reduced to a sparse SPD system in the segment duals bordered by one row and
column per group, and factored by a sparse Cholesky that reuses its
symbolic analysis.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import cvxopt
import numpy as np
from cvxopt import cholmod

from ..model import FeasibilityGraph, FractionalSolution, StopRegistry, TransferRates
from .common import SolverError, check_rates, objective_l2, realized_rates

DEFAULT_TOL = 1e-6
DEFAULT_MAX_ITER = 100_000
_STEP_FRACTION = 0.99
_STALL_LIMIT = 50


class QCPConvergenceError(SolverError):
    """Raised when the residual does not reach ``tol``; carries the best iterate."""

    def __init__(self, message: str, best: Optional[FractionalSolution], residual: float):
        super().__init__(message)
        self.best = best
        self.residual = residual


@dataclass
class _Problem:
    n: int
    tails: np.ndarray
    heads: np.ndarray
    arc_group: np.ndarray   # active group id of each arc's tail, into the arrays below
    sqrt2w: np.ndarray      # sqrt(2 w_g) per active group
    weight: np.ndarray
    target: np.ndarray

    @property
    def n_arcs(self) -> int:
        return self.tails.size

    def incidence(self, v: np.ndarray) -> np.ndarray:
        """``M v``: per-segment sum over arcs leaving or entering it."""
        return (np.bincount(self.tails, v, minlength=self.n)
                + np.bincount(self.heads, v, minlength=self.n))

    def group_sum(self, v: np.ndarray) -> np.ndarray:
        return np.bincount(self.arc_group, v, minlength=self.sqrt2w.size)

    def gradient(self, y: np.ndarray) -> np.ndarray:
        g = 2.0 * self.weight * (self.group_sum(y) - self.target)
        return g[self.arc_group]


class _Bordered:
    """Assembles and factors ``[[M D^-1 M^T + E, V], [V^T, C]]``.

    Only the lower triangle is stored. The sparsity pattern never changes,
    so the triplet-to-slot map and the symbolic Cholesky analysis are built
    once and each iteration only scatters new values.
    """

    def __init__(self, p: _Problem):
        n, g = p.n, p.sqrt2w.size
        t, h = p.tails, p.heads
        grow = n + p.arc_group
        rows = np.concatenate([t, h, np.arange(n), np.maximum(t, h), grow, grow,
                               n + np.arange(g)])
        cols = np.concatenate([t, h, np.arange(n), np.minimum(t, h), t, h, n + np.arange(g)])
        size = n + g
        uniq, self.slot = np.unique(cols.astype(np.int64) * size + rows, return_inverse=True)
        self.size = size
        self.rows = cvxopt.matrix((uniq % size).astype(np.int32).tolist(), tc="i")
        self.cols = cvxopt.matrix((uniq // size).astype(np.int32).tolist(), tc="i")
        self.nnz = uniq.size
        self.p = p
        self.symbolic = None

    def factor(self, dinv: np.ndarray, e: np.ndarray, c: np.ndarray) -> None:
        u = self.p.sqrt2w[self.p.arc_group] * dinv
        vals = np.concatenate([dinv, dinv, e, dinv, u, u, c])
        data = np.bincount(self.slot, vals, minlength=self.nnz)
        mat = cvxopt.spmatrix(cvxopt.matrix(data), self.rows, self.cols, (self.size, self.size))
        if self.symbolic is None:
            self.symbolic = cholmod.symbolic(mat, uplo="L")
        cholmod.numeric(mat, self.symbolic)

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        b = cvxopt.matrix(np.concatenate([rhs, np.zeros(self.size - rhs.size)]))
        cholmod.solve(self.symbolic, b)
        return np.array(b).ravel()


def _build(graph: FeasibilityGraph, rates: TransferRates) -> _Problem:
    sizes = graph.group_sizes().astype(float)
    target = sizes * np.array([rates.rate_for(g) for g in graph.group_keys])
    gid = graph.group_index()
    arc_gid = gid[graph.tails]
    active = np.unique(arc_gid)  # groups owning at least one arc, all of positive size
    remap = np.full(sizes.size, -1)
    remap[active] = np.arange(active.size)
    weight = 1.0 / sizes[active] ** 2
    return _Problem(len(graph), graph.tails, graph.heads, remap[arc_gid],
                    np.sqrt(2.0 * weight), weight, target[active])


def _solution(graph, rates, y, residual, iterations) -> FractionalSolution:
    y = np.clip(y, 0.0, 1.0)
    x = np.bincount(graph.tails, y, minlength=len(graph)) if y.size else np.zeros(len(graph))
    keys = graph.group_keys
    sizes = dict(zip(keys, graph.group_sizes().tolist()))
    gid = graph.group_index()
    counts = np.bincount(gid, x, minlength=len(keys))
    p1, p2 = realized_rates(dict(zip(keys, counts.tolist())), sizes, rates)
    return FractionalSolution(x, y, p1, p2, objective_l2(p1, p2, rates), residual, iterations)


def solve_qcp(graph: FeasibilityGraph, registry: Optional[StopRegistry], rates: TransferRates,
              tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER) -> FractionalSolution:
    """Solve the relaxation until the KKT residual is at most ``tol``.

    The residual is the largest of the primal and dual infeasibilities
    (infinity norm) and the total complementarity gap, so the returned
    objective exceeds the relaxation optimum by at most about ``tol``.
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    rates = check_rates(rates, registry)
    if graph.n_arcs == 0:
        return _solution(graph, rates, np.zeros(0), 0.0, 0)
    prob = _build(graph, rates)
    n, a = prob.n, prob.n_arcs
    kkt = _Bordered(prob)

    deg = prob.incidence(np.ones(a))
    y = 0.5 / np.maximum(deg[prob.tails], deg[prob.heads])
    s = 1.0 - prob.incidence(y)
    z = np.ones(a)
    lam = np.ones(n)
    best_y, best_res, since_best = y, np.inf, 0

    for it in range(max_iter + 1):
        r_p = prob.incidence(y) + s - 1.0
        r_d = prob.gradient(y) + lam[prob.tails] + lam[prob.heads] - z
        gap = float(y @ z + s @ lam)
        res = max(np.abs(r_p).max(initial=0.0), np.abs(r_d).max(), gap)
        if not np.isfinite(res):
            break
        if res < best_res:
            best_y, best_res, since_best = y, res, 0
        else:
            since_best += 1
        if res <= tol:
            return _solution(graph, rates, y, res, it)
        if it == max_iter or since_best > _STALL_LIMIT:
            break
        mu = gap / (a + n)

        dinv = y / z
        e = s / lam
        c = 1.0 + prob.sqrt2w ** 2 * prob.group_sum(dinv)
        try:
            kkt.factor(dinv, e, c)
        except ArithmeticError:  # matrix no longer numerically positive definite
            break

        def newton(r_cy, r_cs):
            rhs1 = -r_d - r_cy / y
            rhs2 = -r_p + r_cs / lam
            pr = _apply_inverse(prob, dinv, c, rhs1)
            dlam = kkt.solve(prob.incidence(pr) - rhs2)[:n]
            dy = _apply_inverse(prob, dinv, c, rhs1 - dlam[prob.tails] - dlam[prob.heads])
            dz = -(r_cy + z * dy) / y
            ds = -(r_cs + s * dlam) / lam
            return dy, ds, dz, dlam

        # predictor
        dy, ds, dz, dlam = newton(y * z, s * lam)
        alpha = min(1.0, _max_step(y, dy), _max_step(s, ds), _max_step(z, dz), _max_step(lam, dlam))
        mu_aff = ((y + alpha * dy) @ (z + alpha * dz)
                  + (s + alpha * ds) @ (lam + alpha * dlam)) / (a + n)
        sigma = (mu_aff / mu) ** 3 if mu > 0 else 0.0
        # corrector
        dy, ds, dz, dlam = newton(y * z + dy * dz - sigma * mu, s * lam + ds * dlam - sigma * mu)
        alpha = min(1.0, _STEP_FRACTION * min(_max_step(y, dy), _max_step(s, ds),
                                              _max_step(z, dz), _max_step(lam, dlam)))
        y, s, z, lam = y + alpha * dy, s + alpha * ds, z + alpha * dz, lam + alpha * dlam

    best = _solution(graph, rates, best_y, best_res, it)
    raise QCPConvergenceError(f"relaxation stopped after {it} iterations with residual "
                              f"{best_res:.3g} > {tol:.3g}", best, best_res)


def _apply_inverse(p: _Problem, dinv: np.ndarray, c: np.ndarray, r: np.ndarray) -> np.ndarray:
    """``(D + U U^T)^{-1} r`` by the Woodbury identity."""
    dr = dinv * r
    w = p.sqrt2w * p.group_sum(dr) / c
    return dr - dinv * (p.sqrt2w * w)[p.arc_group]


def _max_step(v: np.ndarray, dv: np.ndarray) -> float:
    neg = dv < 0
    if not neg.any():
        return np.inf
    return float(np.min(-v[neg] / dv[neg]))
