"""Method of moving asymptotes (Svanberg, 1987) with a dual subproblem solver.

Solves ``min f0(x)`` subject to ``g_i(x) <= 0`` and ``lb <= x <= ub``. Each
step replaces every function by a separable convex rational approximation
built around moving asymptotes ``low < x < upp``. Elastic slacks ``y_i``
(penalized by ``c_i y_i + y_i^2 / 2``) keep every subproblem feasible. The
subproblem is solved through its concave dual in the ``m`` multipliers by a
projected Newton method.
"""

import logging
from dataclasses import dataclass

import numpy as np

log = logging.getLogger(__name__)


@dataclass
class MMAState:
    lower_asymptote: np.ndarray = None
    upper_asymptote: np.ndarray = None
    x_prev: np.ndarray = None
    x_prev2: np.ndarray = None
    iteration: int = 0
    asyinit: float = 0.5
    asydecr: float = 0.7
    asyincr: float = 1.2
    move: float = 0.2


class MMA:
    def __init__(self, n, m, c=1e3, kkt_tol=1e-9, raa0=1e-5, albefa=0.1, **state_kw):
        self.n, self.m = n, m
        self.c = np.full(m, float(c))
        self.kkt_tol = kkt_tol
        self.raa0 = raa0
        self.albefa = albefa
        self.state = MMAState(**state_kw)
        self.last_dual = None

    def shift(self, mask, delta):
        """Translate stored iterates and asymptotes (used when angles are re-wrapped)."""
        s = self.state
        for name in ("lower_asymptote", "upper_asymptote", "x_prev", "x_prev2"):
            arr = getattr(s, name)
            if arr is not None:
                arr[mask] += delta[mask]

    def _asymptotes(self, x, span):
        s = self.state
        if s.iteration < 2 or s.x_prev2 is None:
            low = x - s.asyinit * span
            upp = x + s.asyinit * span
        else:
            osc = (x - s.x_prev) * (s.x_prev - s.x_prev2)
            factor = np.where(osc > 0, s.asyincr, np.where(osc < 0, s.asydecr, 1.0))
            low = x - factor * (s.x_prev - s.lower_asymptote)
            upp = x + factor * (s.upper_asymptote - s.x_prev)
            low = np.clip(low, x - 10 * span, x - 1e-4 * span)
            upp = np.clip(upp, x + 1e-4 * span, x + 10 * span)
        return low, upp

    def step(self, x, df0, g, dg, lb, ub):
        """One MMA iteration; returns the next iterate.

        ``df0`` has shape (n,), ``g`` (m,), ``dg`` (m, n).
        """
        x = np.asarray(x, dtype=float)
        lb = np.asarray(lb, dtype=float)
        ub = np.asarray(ub, dtype=float)
        g = np.atleast_1d(np.asarray(g, dtype=float))
        dg = np.asarray(dg, dtype=float).reshape(self.m, self.n)
        df0 = np.asarray(df0, dtype=float)
        x = np.clip(x, lb, ub)
        s = self.state
        fixed = ub - lb <= 1e-12
        span = np.maximum(ub - lb, 1e-5)
        low, upp = self._asymptotes(x, span)

        alpha = np.maximum.reduce([lb, low + self.albefa * (x - low), x - s.move * span])
        beta = np.minimum.reduce([ub, upp - self.albefa * (upp - x), x + s.move * span])
        alpha = np.minimum(alpha, x)
        beta = np.maximum(beta, x)

        ux, xl = upp - x, x - low
        ux2, xl2 = ux * ux, xl * xl
        reg = self.raa0 / span
        p0 = (np.maximum(df0, 0) + 1e-3 * np.abs(df0) + reg) * ux2
        q0 = (np.maximum(-df0, 0) + 1e-3 * np.abs(df0) + reg) * xl2
        P = (np.maximum(dg, 0) + 1e-3 * np.abs(dg) + reg) * ux2
        Q = (np.maximum(-dg, 0) + 1e-3 * np.abs(dg) + reg) * xl2
        r = g - (P @ (1 / ux) + Q @ (1 / xl))

        sub = _Subproblem(low, upp, alpha, beta, p0, q0, P, Q, r, self.c, fixed, x)
        lam = sub.solve_dual(self.kkt_tol)
        x_new = sub.x_of(lam)
        x_new[fixed] = lb[fixed]
        self.last_dual = lam

        s.x_prev2 = None if s.x_prev is None else s.x_prev.copy()
        s.x_prev = x.copy()
        s.lower_asymptote, s.upper_asymptote = low, upp
        s.iteration += 1
        return x_new


class _Subproblem:
    def __init__(self, low, upp, alpha, beta, p0, q0, P, Q, r, c, fixed, x0):
        self.low, self.upp, self.alpha, self.beta = low, upp, alpha, beta
        self.p0, self.q0, self.P, self.Q, self.r, self.c = p0, q0, P, Q, r, c
        self.fixed = fixed
        self.x0 = x0

    def x_of(self, lam):
        Pj = self.p0 + lam @ self.P
        Qj = self.q0 + lam @ self.Q
        sp, sq = np.sqrt(Pj), np.sqrt(Qj)
        x = (sp * self.low + sq * self.upp) / (sp + sq)
        x = np.clip(x, self.alpha, self.beta)
        return np.where(self.fixed, self.x0, x)

    def y_of(self, lam):
        return np.maximum(lam - self.c, 0.0)

    def value(self, lam):
        x, y = self.x_of(lam), self.y_of(lam)
        ux, xl = self.upp - x, x - self.low
        Pj = self.p0 + lam @ self.P
        Qj = self.q0 + lam @ self.Q
        prim = np.sum(Pj / ux + Qj / xl) + lam @ self.r
        return prim + self.c @ y + 0.5 * y @ y - lam @ y

    def grad(self, lam):
        x = self.x_of(lam)
        gi = self.r + self.P @ (1 / (self.upp - x)) + self.Q @ (1 / (x - self.low))
        return gi - self.y_of(lam), x

    def hess(self, lam, x):
        ux, xl = self.upp - x, x - self.low
        Pj = self.p0 + lam @ self.P
        Qj = self.q0 + lam @ self.Q
        inner = (x > self.alpha) & (x < self.beta) & ~self.fixed
        dgdx = self.P / ux**2 - self.Q / xl**2  # (m, n)
        d2 = 2 * Pj / ux**3 + 2 * Qj / xl**3
        G = dgdx[:, inner]
        H = -(G / d2[inner]) @ G.T
        H -= np.diag((lam > self.c).astype(float))
        return H

    def solve_dual(self, tol, max_iter=200):
        """Maximize the concave dual over ``lam >= 0`` by projected Newton."""
        m = len(self.r)
        lam = np.zeros(m)
        if m == 0:
            return lam
        W = self.value(lam)
        for _ in range(max_iter):
            grad, x = self.grad(lam)
            # projected gradient for a maximization with lam >= 0
            pg = np.where((lam <= 0) & (grad < 0), 0.0, grad)
            if np.max(np.abs(pg)) <= tol * (1 + np.max(np.abs(self.r))):
                return lam
            free = ~((lam <= 0) & (grad < 0))
            H = self.hess(lam, x)
            d = np.zeros(m)
            Hf = H[np.ix_(free, free)]
            try:
                d[free] = np.linalg.solve(Hf - 1e-14 * np.eye(free.sum()), -grad[free])
                if grad @ d <= 0:
                    raise np.linalg.LinAlgError
            except np.linalg.LinAlgError:
                d = pg.copy()
            t = 1.0
            for _ in range(60):
                cand = np.maximum(lam + t * d, 0.0)
                Wc = self.value(cand)
                if Wc >= W + 1e-4 * grad @ (cand - lam) or np.max(np.abs(cand - lam)) < 1e-16:
                    break
                t *= 0.5
            if np.max(np.abs(cand - lam)) < 1e-16 * (1 + np.max(lam)):
                return cand
            lam, W = cand, Wc
        log.debug("MMA dual did not reach tolerance; projected gradient %.3e", np.max(np.abs(pg)))
        return lam
