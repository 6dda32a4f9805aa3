"""Weighted maximum likelihood for the logit families used by the M-step.

Every problem is a weighted multinomial likelihood with fractional
(posterior-expected) counts. Linear families are solved by damped Newton with
step halving; the bilinear stereotype family alternates Newton steps between
coefficients and free scores. Parameters live in the box [-20, 20]; hitting
the boundary flags the fit as clamped (infinite MLE under separation).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .latent import PARAM_BOUND


def _lse_rows(eta: np.ndarray) -> np.ndarray:
    """Row-wise log-sum-exp (manual: scipy's adds overhead on small arrays)."""
    m = eta.max(axis=1)
    return m + np.log(np.exp(eta - m[:, None]).sum(axis=1))

DEGENERATE_WEIGHT = 1e-12
CLAMP_VALUE = PARAM_BOUND


class NonFiniteWeights(ValueError):
    pass


@dataclass
class LogitFit:
    theta: np.ndarray
    loglik: float
    converged: bool
    clamped: bool
    grad_norm: float
    n_iter: int
    degenerate: tuple[int, ...] = ()
    flat_scores: bool = False
    n_damped: int = 0


@dataclass
class WeightedLogitProblem:
    """One weighted logit fit.

    family: "binary" | "baseline" | "parallel" | "stereotype" | "rs".
    weights: (R, C) nonnegative expected counts.
    covariates: (R, p) design rows (None for intercept-only and "rs").
    reference: 0-based baseline category (its predictor is zero).
    fixed_scores: (C,) score vector for "parallel" (defaults to 1 off
        reference); for "stereotype" the pinned entries are derived from the
        reference (score 0) and the pin category (score 1).
    score_pin: 0-based category whose score is pinned to one (stereotype).
    """

    family: str
    weights: np.ndarray
    covariates: np.ndarray | None = None
    reference: int = 0
    fixed_scores: np.ndarray | None = None
    score_pin: int | None = None

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        if self.weights.ndim == 1:
            self.weights = self.weights[None, :]
        if not np.all(np.isfinite(self.weights)) or np.any(self.weights < 0):
            raise NonFiniteWeights("weights must be finite and nonnegative")
        if self.covariates is not None:
            self.covariates = np.atleast_2d(np.asarray(self.covariates, dtype=float))
            if self.covariates.shape[0] != self.weights.shape[0]:
                raise ValueError("covariates and weights disagree on the number of rows")

    @property
    def n_categories(self) -> int:
        return self.weights.shape[1]

    @property
    def n_covariates(self) -> int:
        return 0 if self.covariates is None else self.covariates.shape[1]


def _collapse_rows(X: np.ndarray | None, w: np.ndarray):
    """Merge duplicate covariate rows, summing their weights (same MLE)."""
    if X is None or X.shape[0] <= 1:
        return X, (w.sum(axis=0, keepdims=True) if X is None else w)
    uniq, inv = np.unique(X, axis=0, return_inverse=True)
    if uniq.shape[0] == X.shape[0]:
        return X, w
    wc = np.zeros((uniq.shape[0], w.shape[1]))
    np.add.at(wc, inv, w)
    return uniq, wc


def _maximize_linear(X, w, theta0, offset=None, fixed=None, bound=CLAMP_VALUE,
                     tol=1e-8, max_iter=100):
    """Maximize sum_r sum_c w[r,c] * log softmax(offset + X theta)[r,c]."""
    R, C, P = X.shape
    theta = np.clip(np.asarray(theta0, dtype=float).copy(), -bound, bound)
    if offset is None:
        offset = np.zeros((R, C))
    free = np.ones(P, dtype=bool) if fixed is None else ~np.asarray(fixed, dtype=bool)
    W = w.sum(axis=1)

    def evaluate(th):
        eta = offset + np.einsum("rcp,p->rc", X, th)
        lse = _lse_rows(eta)
        ll = float((w * eta).sum() - (W * lse).sum())
        return ll, np.exp(eta - lse[:, None])

    ll, p = evaluate(theta)
    n_damped = 0
    grad_norm = np.inf
    outward = np.zeros(P, dtype=bool)
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        resid = w - W[:, None] * p
        g = np.einsum("rc,rcp->p", resid, X)
        at_hi = theta >= bound - 1e-9
        at_lo = theta <= -bound + 1e-9
        outward = (at_hi & (g > 0)) | (at_lo & (g < 0))
        active = free & ~outward
        grad_norm = float(np.abs(g[active]).max()) if active.any() else 0.0
        if grad_norm <= tol:
            converged = True
            break
        xbar = np.einsum("rc,rcp->rp", p, X)
        H = np.einsum("rc,rcp,rcq->pq", W[:, None] * p, X, X) - np.einsum(
            "r,rp,rq->pq", W, xbar, xbar)
        Ha = H[np.ix_(active, active)]
        ga = g[active]
        scale = max(np.trace(Ha) / max(Ha.shape[0], 1), 1e-12)
        lam = 0.0
        while True:
            try:
                factor = cho_factor(Ha + lam * np.eye(Ha.shape[0]), lower=True)
                break
            except np.linalg.LinAlgError:
                lam = max(lam * 10.0, 1e-10 * scale)
                n_damped += 1
        step = cho_solve(factor, ga)
        t = 1.0
        accepted = False
        for _ in range(31):
            cand = theta.copy()
            cand[active] += t * step
            np.clip(cand, -bound, bound, out=cand)
            ll_new, p_new = evaluate(cand)
            if ll_new >= ll - 1e-12:
                theta, ll, p = cand, ll_new, p_new
                accepted = True
                break
            t *= 0.5
        if not accepted:
            break
    return LogitFit(theta, ll, converged, bool(outward.any()), grad_norm, it,
                    n_damped=n_damped)


# ---------------------------------------------------------------------------
# family designs
# ---------------------------------------------------------------------------

def _binary_design(prob: WeightedLogitProblem):
    R = prob.weights.shape[0]
    p = prob.n_covariates
    X = np.zeros((R, 2, 1 + p))
    X[:, 1, 0] = 1.0
    if p:
        X[:, 1, 1:] = prob.covariates
    return X


def _baseline_design(prob: WeightedLogitProblem):
    R, C = prob.weights.shape
    p = prob.n_covariates
    dest = [c for c in range(C) if c != prob.reference]
    P = (C - 1) * (1 + p)
    X = np.zeros((R, C, P))
    for i, c in enumerate(dest):
        X[:, c, i] = 1.0
        if p:
            X[:, c, (C - 1) + i * p:(C - 1) + (i + 1) * p] = prob.covariates
    return X


def _parallel_design(prob: WeightedLogitProblem):
    R, C = prob.weights.shape
    p = prob.n_covariates
    dest = [c for c in range(C) if c != prob.reference]
    scores = prob.fixed_scores
    if scores is None:
        scores = np.ones(C)
        scores[prob.reference] = 0.0
    P = (C - 1) + p
    X = np.zeros((R, C, P))
    for i, c in enumerate(dest):
        X[:, c, i] = 1.0
        if p:
            X[:, c, (C - 1):] = X[:, c, (C - 1):] + scores[c] * prob.covariates
    return X


def _rs_family_design(prob: WeightedLogitProblem):
    from .observation import rs_design

    R, C = prob.weights.shape
    return np.broadcast_to(rs_design(C)[None, :, :], (R, C, 2)).copy()


def _degenerate_fix(prob: WeightedLogitProblem, X: np.ndarray, theta: np.ndarray):
    """Freeze empty non-reference categories near zero probability."""
    C = prob.n_categories
    if prob.family not in ("baseline", "parallel") or C <= 2:
        return np.zeros(theta.size, dtype=bool), ()
    colsum = prob.weights.sum(axis=0)
    dest = [c for c in range(C) if c != prob.reference]
    fixed = np.zeros(theta.size, dtype=bool)
    degenerate = []
    p = prob.n_covariates
    for i, c in enumerate(dest):
        if colsum[c] < DEGENERATE_WEIGHT:
            degenerate.append(c)
            theta[i] = -CLAMP_VALUE
            fixed[i] = True
            if prob.family == "baseline" and p:
                sl = slice((C - 1) + i * p, (C - 1) + (i + 1) * p)
                theta[sl] = 0.0
                fixed[sl] = True
    return fixed, tuple(degenerate)


def fit_weighted_logit(prob: WeightedLogitProblem, init=None, tol=1e-8,
                       max_iter=100, collapse=True) -> LogitFit:
    """Fit one linear logit family by damped Newton with step halving."""
    if prob.family == "stereotype":
        return fit_stereotype(prob, init=init, tol=tol, max_iter=max_iter,
                              collapse=collapse)
    builders = {
        "binary": _binary_design,
        "baseline": _baseline_design,
        "parallel": _parallel_design,
        "rs": _rs_family_design,
    }
    try:
        builder = builders[prob.family]
    except KeyError:
        raise ValueError(f"unknown logit family {prob.family!r}") from None
    if collapse:
        Xrows, w = _collapse_rows(prob.covariates, prob.weights)
    else:
        Xrows, w = prob.covariates, prob.weights
    collapsed = WeightedLogitProblem(prob.family, w, Xrows, prob.reference,
                                     prob.fixed_scores, prob.score_pin)
    X = builder(collapsed)
    P = X.shape[2]
    theta = np.zeros(P) if init is None else np.asarray(init, dtype=float).copy()
    fixed, degenerate = _degenerate_fix(collapsed, X, theta)
    if w.sum() < DEGENERATE_WEIGHT:
        return LogitFit(theta, 0.0, True, False, 0.0, 0, degenerate=tuple(range(prob.n_categories)))
    res = _maximize_linear(X, w, theta, fixed=fixed, tol=tol, max_iter=max_iter)
    res.degenerate = degenerate
    return res


# ---------------------------------------------------------------------------
# stereotype family (bilinear)
# ---------------------------------------------------------------------------

def _stereo_parts(prob: WeightedLogitProblem):
    C = prob.n_categories
    ref = prob.reference
    pin = prob.score_pin if prob.score_pin is not None else (0 if ref != 0 else 1)
    dest = [c for c in range(C) if c != ref]
    free = [c for c in range(C) if c not in (ref, pin)]
    return ref, pin, dest, free


def _stereo_unpack(prob: WeightedLogitProblem, theta: np.ndarray):
    C = prob.n_categories
    ref, pin, dest, free = _stereo_parts(prob)
    p = prob.n_covariates
    a_full = np.zeros(C)
    a_full[dest] = theta[:C - 1]
    s_full = np.zeros(C)
    s_full[pin] = 1.0
    s_full[free] = theta[C - 1:C - 1 + len(free)]
    b = theta[C - 1 + len(free):]
    return a_full, s_full, b


def _stereo_eta_jac(prob: WeightedLogitProblem, theta: np.ndarray):
    """Joint predictor and Jacobian of the bilinear stereotype model."""
    C = prob.n_categories
    ref, pin, dest, free = _stereo_parts(prob)
    p = prob.n_covariates
    Z = prob.covariates if p else np.zeros((prob.weights.shape[0], 0))
    R = prob.weights.shape[0]
    a_full, s_full, b = _stereo_unpack(prob, theta)
    zb = Z @ b
    eta = a_full[None, :] + np.outer(zb, s_full)
    X = np.zeros((R, C, theta.size))
    for i, c in enumerate(dest):
        X[:, c, i] = 1.0
        X[:, c, C - 1 + len(free):] = s_full[c] * Z
    for i, c in enumerate(free):
        X[:, c, C - 1 + i] = zb
    return eta, X


def fit_stereotype(prob: WeightedLogitProblem, init=None, tol=1e-8,
                   max_iter=200, collapse=True) -> LogitFit:
    """Alternating maximization of the bilinear stereotype logit.

    Coefficient and free-score Newton steps alternate, each guarded by step
    halving, until the joint gradient max-norm meets the tolerance. With
    fewer than three categories (or no free scores) the family coincides
    with the parallel one and a single linear fit is returned.
    """
    C = prob.n_categories
    ref, pin, dest, free = _stereo_parts(prob)
    p = prob.n_covariates
    w = prob.weights
    if not free:
        scores = np.zeros(C)
        scores[pin] = 1.0
        lin = WeightedLogitProblem("parallel", w, prob.covariates, ref, fixed_scores=scores)
        return fit_weighted_logit(lin, init=init, tol=tol, max_iter=max_iter)
    P = (C - 1) + len(free) + p
    if init is None:
        theta = np.zeros(P)
        theta[C - 1:C - 1 + len(free)] = 1.0  # parallel start
    else:
        theta = np.asarray(init, dtype=float).copy()
    if collapse:
        Zc, wc = _collapse_rows(prob.covariates, w)
    else:
        Zc, wc = prob.covariates, w
    cprob = WeightedLogitProblem("stereotype", wc, Zc, ref, score_pin=pin)
    if wc.sum() < DEGENERATE_WEIGHT:
        return LogitFit(theta, 0.0, True, False, 0.0, 0, degenerate=tuple(range(C)))
    R = wc.shape[0]
    Z = cprob.covariates if p else np.zeros((R, 0))
    W = wc.sum(axis=1)

    def loglik_of(th):
        eta, _ = _stereo_eta_jac(cprob, th)
        lse = _lse_rows(eta)
        return float((wc * eta).sum() - (W * lse).sum())

    colsum = wc.sum(axis=0)
    fixed_int = np.zeros(P, dtype=bool)
    degenerate = []
    for i, c in enumerate(dest):
        if colsum[c] < DEGENERATE_WEIGHT:
            theta[i] = -CLAMP_VALUE
            fixed_int[i] = True
            degenerate.append(c)

    def alternation_sweep(theta):
        """One coefficient Newton solve, then one free-score Newton solve."""
        a_full, s_full, b = _stereo_unpack(cprob, theta)
        Xc = np.zeros((R, C, (C - 1) + p))
        for i, c in enumerate(dest):
            Xc[:, c, i] = 1.0
            Xc[:, c, C - 1:] = s_full[c] * Z
        th_c = np.concatenate([theta[:C - 1], b])
        sub = _maximize_linear(Xc, wc, th_c, fixed=fixed_int[:C - 1 + p],
                               tol=tol, max_iter=3)
        theta[:C - 1] = sub.theta[:C - 1]
        theta[C - 1 + len(free):] = sub.theta[C - 1:]
        a_full, s_full, b = _stereo_unpack(cprob, theta)
        zb = Z @ b
        if np.max(np.abs(zb), initial=0.0) < 1e-10:
            return theta, True
        offset = a_full[None, :] + np.outer(zb, s_full)
        Xs = np.zeros((R, C, len(free)))
        for i, c in enumerate(free):
            offset[:, c] -= s_full[c] * zb  # free part moves to the design
            Xs[:, c, i] = zb
        th_s = theta[C - 1:C - 1 + len(free)].copy()
        sub_s = _maximize_linear(Xs, wc, th_s, offset=offset, tol=tol, max_iter=3)
        theta[C - 1:C - 1 + len(free)] = sub_s.theta
        return theta, False

    coef_slice = slice(C - 1 + len(free), P)
    flat = False
    n_iter = 0
    grad_norm = np.inf
    clamped = False
    converged = False
    ll = loglik_of(theta)
    for it in range(max_iter):
        n_iter = it + 1
        eta, Xj = _stereo_eta_jac(cprob, theta)
        pmat = np.exp(eta - _lse_rows(eta)[:, None])
        resid = wc - W[:, None] * pmat
        g = np.einsum("rc,rcp->p", resid, Xj)
        _, _, b = _stereo_unpack(cprob, theta)
        flat = bool(np.max(np.abs(Z @ b), initial=0.0) < 1e-10)
        at_hi = theta >= CLAMP_VALUE - 1e-9
        at_lo = theta <= -CLAMP_VALUE + 1e-9
        outward = (at_hi & (g > 0)) | (at_lo & (g < 0))
        active = ~fixed_int & ~outward
        if flat:
            active[C - 1:C - 1 + len(free)] = False
        clamped = bool(outward.any())
        grad_norm = float(np.abs(g[active]).max()) if active.any() else 0.0
        if grad_norm <= tol:
            converged = True
            break
        if it < 2 or flat:
            # alternation globalizes the early iterations (never decreases)
            theta, flat = alternation_sweep(theta)
            ll = loglik_of(theta)
            continue
        # joint Newton with the exact bilinear Hessian, step-halving guarded
        xbar = np.einsum("rc,rcp->rp", pmat, Xj)
        H = np.einsum("rc,rcp,rcq->pq", W[:, None] * pmat, Xj, Xj) - np.einsum(
            "r,rp,rq->pq", W, xbar, xbar)
        for i, c in enumerate(free):
            cross = resid[:, c] @ Z
            H[C - 1 + i, coef_slice] -= cross
            H[coef_slice, C - 1 + i] -= cross
        Ha = H[np.ix_(active, active)]
        scale = max(np.trace(Ha) / max(Ha.shape[0], 1), 1e-12)
        lam = 0.0
        while True:
            try:
                factor = cho_factor(Ha + lam * np.eye(Ha.shape[0]), lower=True)
                break
            except np.linalg.LinAlgError:
                lam = max(lam * 10.0, 1e-8 * scale)
        step = cho_solve(factor, g[active])
        t = 1.0
        accepted = False
        for _ in range(31):
            cand = theta.copy()
            cand[active] += t * step
            np.clip(cand, -CLAMP_VALUE, CLAMP_VALUE, out=cand)
            ll_new = loglik_of(cand)
            if ll_new >= ll - 1e-12:
                theta, ll = cand, ll_new
                accepted = True
                break
            t *= 0.5
        if not accepted:
            theta, flat = alternation_sweep(theta)
            ll_new = loglik_of(theta)
            if ll_new <= ll + 1e-12:
                break  # no direction makes progress
            ll = ll_new
    return LogitFit(theta, loglik_of(theta), converged, clamped, grad_norm,
                    n_iter, degenerate=tuple(degenerate), flat_scores=flat)
