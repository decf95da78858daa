"""Cox proportional hazards: scaled partial likelihood, derivatives, Newton fit.

All local quantities are divided by the site sample size ``n``.  Ties use the
Breslow approximation (the full risk set is the denominator of every tied
event).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import (
    MaxIterationsError,
    SeparationError,
    SingularInformationError,
)
from .survival import SurvivalDataset

PIVOT_TOL = 1e-12
GRAD_TOL = 1e-8
MAX_ITER = 50
MAX_HALVINGS = 30
MAX_ABS_BETA = 50.0
# a converged Newton step that still moves the linear predictor by this much
# means the gradient vanished on a plateau, not at a maximum
SEPARATION_SPAN = 0.5
_UNDERFLOW = 1e-250  # smallest risk-set sum trusted on the fast path


@dataclass(frozen=True, eq=False)
class CoxFit:
    beta_hat: np.ndarray
    covariance: np.ndarray  # inverse information of the 1/n-scaled likelihood
    log_lik: float
    iterations: int
    converged: bool

    def sampling_covariance(self, n: int) -> np.ndarray:
        return self.covariance / n


class _Sorted:
    """Time-sorted, column-centred view of a dataset reused across beta values."""

    __slots__ = ("n", "X", "event", "first", "last", "ev_idx")

    def __init__(self, data: SurvivalDataset):
        order = np.argsort(data.time, kind="stable")
        t = data.time[order]
        X = data.X[order]
        self.n = data.n
        # centring cancels inside every risk-set average
        self.X = X - X.mean(axis=0) if X.shape[0] else X
        self.event = data.event[order].astype(bool)
        self.first = np.searchsorted(t, t, side="left")
        self.last = np.searchsorted(t, t, side="right") - 1
        self.ev_idx = np.flatnonzero(self.event)


def _terms(s: _Sorted, beta: np.ndarray, order: int = 2):
    """Unscaled log partial likelihood and its derivatives."""
    X = s.X
    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        return _terms_unguarded(s, X, beta, order)


def _terms_unguarded(s, X, beta, order):
    # trial Newton steps may overflow; callers treat non-finite values as a failed step
    lp = X @ beta
    shift = lp.max()
    w = np.exp(lp - shift)
    S0 = np.cumsum(w[::-1])[::-1]
    ev = s.ev_idx
    if ev.size == 0:
        p = X.shape[1]
        return 0.0, np.zeros(p), np.zeros((p, p))
    S0e = S0[s.first[ev]]
    if not S0e.min() > _UNDERFLOW and np.isfinite(shift):
        # some risk set lies far below the global maximum
        return _terms_logdomain(s, X, lp, order)
    loglik = float(np.sum(lp[ev] - shift - np.log(S0e)))
    if order == 0:
        return loglik, None, None
    S1 = np.cumsum((w[:, None] * X)[::-1], axis=0)[::-1]
    M = S1[s.first[ev]] / S0e[:, None]
    grad = X[ev].sum(axis=0) - M.sum(axis=0)
    if order == 1:
        return loglik, grad, None
    # sum over events of S2/S0 == X' diag(w * c) X with c_s = sum_{t_e <= t_s} 1/S0(t_e)
    a = np.zeros(s.n)
    a[ev] = 1.0 / S0e
    c = np.cumsum(a)[s.last]
    A = (X * (w * c)[:, None]).T @ X
    hess = -(A - M.T @ M)
    hess = 0.5 * (hess + hess.T)
    return loglik, grad, hess


def _log_rev_cumsum(a):
    """log of reverse cumulative sums of exp(a), column-wise."""
    return np.logaddexp.accumulate(a[::-1], axis=0)[::-1]


def _signed_log_rev_cumsum(lp, V):
    """Reverse cumulative sums of exp(lp) * V, split by sign, in the log domain."""
    pos = np.where(V > 0, np.log(np.where(V > 0, V, 1.0)), -np.inf)
    neg = np.where(V < 0, np.log(np.where(V < 0, -V, 1.0)), -np.inf)
    return _log_rev_cumsum(lp[:, None] + pos), _log_rev_cumsum(lp[:, None] + neg)


def _terms_logdomain(s, X, lp, order):
    """Same quantities as the fast path, with every risk-set sum kept in logs."""
    ev = s.ev_idx
    first = s.first[ev]
    logS0 = _log_rev_cumsum(lp)[first]
    loglik = float(np.sum(lp[ev] - logS0))
    if order == 0:
        return loglik, None, None
    P, N = _signed_log_rev_cumsum(lp, X)
    M = np.exp(P[first] - logS0[:, None]) - np.exp(N[first] - logS0[:, None])
    grad = X[ev].sum(axis=0) - M.sum(axis=0)
    if order == 1:
        return loglik, grad, None
    p = X.shape[1]
    XX = (X[:, :, None] * X[:, None, :]).reshape(s.n, p * p)
    P2, N2 = _signed_log_rev_cumsum(lp, XX)
    S2 = np.exp(P2[first] - logS0[:, None]) - np.exp(N2[first] - logS0[:, None])
    hess = -(S2.sum(axis=0).reshape(p, p) - M.T @ M)
    hess = 0.5 * (hess + hess.T)
    return loglik, grad, hess


def _prepare(data) -> _Sorted:
    return data if isinstance(data, _Sorted) else _Sorted(data)


def _beta(data, beta) -> np.ndarray:
    beta = np.asarray(beta, dtype=float).reshape(-1)
    p = data.X.shape[1]
    if beta.shape[0] != p:
        raise ValueError(f"beta has length {beta.shape[0]}, expected {p}")
    return beta


def local_log_partial_likelihood(data: SurvivalDataset, beta) -> float:
    """Site log partial likelihood divided by n."""
    s = _prepare(data)
    return _terms(s, _beta(s, beta), order=0)[0] / s.n


def gradient(data: SurvivalDataset, beta) -> np.ndarray:
    s = _prepare(data)
    return _terms(s, _beta(s, beta), order=1)[1] / s.n


def hessian(data: SurvivalDataset, beta) -> np.ndarray:
    s = _prepare(data)
    return _terms(s, _beta(s, beta), order=2)[2] / s.n


def value_grad_hess(data: SurvivalDataset, beta):
    """(L, grad, hess) of the scaled local likelihood in one sweep."""
    s = _prepare(data)
    f, g, h = _terms(s, _beta(s, beta))
    return f / s.n, g / s.n, h / s.n


def spd_inverse(A: np.ndarray, tol: float = PIVOT_TOL) -> np.ndarray:
    """Invert a symmetric positive-definite matrix via Cholesky.

    Raises ``np.linalg.LinAlgError`` when a pivot falls below ``tol`` relative
    to the largest diagonal entry.
    """
    A = np.asarray(A, dtype=float)
    A = 0.5 * (A + A.T)
    scale = np.max(np.abs(np.diag(A))) if A.size else 0.0
    if A.size == 0:
        return A.copy()
    if not np.isfinite(scale) or scale <= 0:
        raise np.linalg.LinAlgError("zero matrix")
    L = np.linalg.cholesky(A)
    if np.min(np.diag(L)) ** 2 < tol * scale:
        raise np.linalg.LinAlgError("pivot below tolerance")
    Linv = np.linalg.solve(L, np.eye(A.shape[0]))
    inv = Linv.T @ Linv
    return 0.5 * (inv + inv.T)


def _newton_step(H, g):
    try:
        return spd_inverse(-H) @ g
    except np.linalg.LinAlgError:
        raise SingularInformationError() from None


def newton_maximize(objective: Callable, init, span_X: np.ndarray | None = None):
    """Damped Newton-Raphson ascent.

    ``objective(beta)`` returns ``(value, grad, hess)``.  Returns
    ``(beta, value, grad, hess, iterations)``.
    """
    beta = np.array(init, dtype=float)
    f, g, H = objective(beta)
    for it in range(MAX_ITER + 1):
        if np.max(np.abs(g), initial=0.0) < GRAD_TOL:
            if span_X is not None and span_X.size and np.any(H):
                step = _newton_step(H, g)
                moved = span_X @ step
                if moved.max() - moved.min() > SEPARATION_SPAN:
                    raise SeparationError()
            return beta, f, g, H, it
        if it == MAX_ITER:
            break
        step = _newton_step(H, g)
        new = beta + step
        f_new, g_new, H_new = objective(new)
        halvings = 0
        while (not np.isfinite(f_new) or f_new < f) and halvings < MAX_HALVINGS:
            step = step / 2.0
            new = beta + step
            f_new, g_new, H_new = objective(new)
            halvings += 1
        if np.max(np.abs(new)) > MAX_ABS_BETA:
            raise SeparationError()
        beta, f, g, H = new, f_new, g_new, H_new
    raise MaxIterationsError()


def _covariance(H) -> np.ndarray:
    try:
        return spd_inverse(-H)
    except np.linalg.LinAlgError:
        raise SingularInformationError() from None


def fit_cox(data: SurvivalDataset, init=None) -> CoxFit:
    """Maximise the scaled local partial likelihood.

    Raises
    ------
    SeparationError
        A coefficient diverges (monotone likelihood).
    SingularInformationError
        The information matrix cannot be inverted.
    MaxIterationsError
        No convergence after 50 Newton steps.
    """
    if data.p < 1:
        raise ValueError("need at least one covariate")
    if data.n_events < 1:
        raise ValueError("need at least one event")
    s = _Sorted(data)
    init = np.zeros(data.p) if init is None else _beta(s, init)

    def objective(b):
        f, g, h = _terms(s, b)
        return f / s.n, g / s.n, h / s.n

    beta, f, g, H, it = newton_maximize(objective, init, span_X=s.X)
    return CoxFit(beta, _covariance(H), f, it, True)


def fit_stratified_cox(datasets: Sequence[SurvivalDataset], init=None) -> CoxFit:
    """Pooled Cox fit with site-specific risk sets (stratified by site).

    Maximises ``(1/N) * sum_j n_j L_j(beta)``; the returned covariance is the
    inverse information of that 1/N-scaled likelihood.
    """
    sorted_sites = [_Sorted(d) for d in datasets]
    N = sum(s.n for s in sorted_sites)
    p = datasets[0].p
    init = np.zeros(p) if init is None else np.asarray(init, dtype=float)

    def objective(b):
        f, g, h = 0.0, np.zeros(p), np.zeros((p, p))
        for s in sorted_sites:
            fj, gj, hj = _terms(s, b)
            f += fj
            g += gj
            h += hj
        return f / N, g / N, h / N

    span = np.vstack([s.X for s in sorted_sites])
    beta, f, g, H, it = newton_maximize(objective, init, span_X=span)
    return CoxFit(beta, _covariance(H), f, it, True)
