"""Standard errors from exact per-unit scores: OIM, OPIM, sandwich, bootstrap.

The observed score equals the gradient of the expected complete loglik at the
current parameter value (Fisher identity), so per-unit scores assemble from
posterior-weighted block designs; the observed information is obtained by
central finite differences of the exact aggregate score.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from . import blocks, hmm
from .latent import PARAM_BOUND
from .observation import awr_pmf, rs_pmf
from .panel import PanelDataset
from .params import ParamSet

FD_STEP = 1e-5
CLAMP_EPS = 1e-6


@dataclass
class ScoreSet:
    """Per-unit score vectors and their sum at one parameter value."""

    scores: np.ndarray       # (n, P)
    names: list[str]

    @property
    def total(self) -> np.ndarray:
        return self.scores.sum(axis=0)

    def opim(self) -> np.ndarray:
        return self.scores.T @ self.scores


def _softmax(eta):
    e = np.exp(eta - eta.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def score_matrix(data: PanelDataset, pset: ParamSet,
                 post: hmm.LatentPosteriors | None = None) -> np.ndarray:
    """(n, P) per-unit observed scores in layout order."""
    spec = pset.spec
    lp, obs = pset.latent, pset.obs
    if post is None:
        post, _ = hmm.e_step(data, pset)
    from .em import _trans_u_weights, _weight_tensors

    layout = blocks.build_layout(spec)
    w = _weight_tensors(spec, data, post)
    n, T, k = data.n, data.T, spec.k
    S = np.zeros((n, layout.size))
    units_nt = np.repeat(np.arange(n), T - 1)
    zL = data.z_L.reshape(n * (T - 1), data.p2_L)
    zU = data.z_U.reshape(n * (T - 1), data.p2_U)[:, :spec.p2_U_eff]

    def accumulate(sl, rows_eta_X, weights, unit_idx):
        eta, X = rows_eta_X
        p = _softmax(eta)
        resid = weights - weights.sum(axis=1, keepdims=True) * p
        contrib = np.einsum("rc,rcp->rp", resid, X)
        np.add.at(S[:, sl], unit_idx, contrib)

    for block in layout.blocks:
        key, sl = block.key, block.sl
        if key == "initL":
            accumulate(sl, blocks.design_init_L(spec, lp, data.x_L), w["initL"], np.arange(n))
        elif key == "initU":
            accumulate(sl, blocks.design_init_U(spec, lp, data.x_U), w["initU"], np.arange(n))
        elif key.startswith("transL"):
            lb = int(key[len("transL["):-1])
            wt = w["transL"][:, :, lb, :].reshape(-1, k)
            accumulate(sl, blocks.design_trans_L(spec, lp, zL, lb), wt, units_nt)
        elif key.startswith("transU"):
            wt = _trans_u_weights(spec, w["transU"], key)
            accumulate(sl, blocks.design_trans_U(spec, lp, zU, key), wt, units_nt)
        elif key.startswith("rs[") or key.startswith("awr["):
            is_rs = key.startswith("rs[")
            l, j = (int(s) for s in key[key.index("[") + 1:-1].split(","))
            if is_rs:
                eta, X = blocks.design_rs(obs, l, j)
                state_w = w["rs_state"][:, :, l]
            else:
                eta, X = blocks.design_awr(obs, l, j)
                state_w = w["awr_state"][:, :, l]
            f = np.exp(eta - eta.max())
            f /= f.sum()
            A = X - f @ X  # rows: d log f(y) / d theta
            contrib = A[data.y[:, :, j] - 1] * state_w[:, :, None]
            S[:, sl] += contrib.sum(axis=1)
        else:  # pragma: no cover
            raise RuntimeError(f"unhandled block {key}")
    return S


def unit_scores(data: PanelDataset, pset: ParamSet,
                post: hmm.LatentPosteriors | None = None) -> ScoreSet:
    layout = blocks.build_layout(
        pset.spec, data.x_L_names, data.x_U_names, data.z_L_names, data.z_U_names)
    return ScoreSet(score_matrix(data, pset, post), layout.names)


def score_max_norm(data: PanelDataset, pset: ParamSet,
                   post: hmm.LatentPosteriors | None = None) -> float:
    """Max-norm of the aggregate score over non-clamped coordinates."""
    total = score_matrix(data, pset, post).sum(axis=0)
    free = np.abs(pset.flatten()) < PARAM_BOUND - CLAMP_EPS
    return float(np.abs(total[free]).max()) if free.any() else 0.0


def observed_information(data: PanelDataset, pset: ParamSet,
                         step_scale: float = FD_STEP) -> np.ndarray:
    """OIM by central finite differences of the exact score, symmetrized."""
    vec = pset.flatten()
    P = vec.size
    J = np.empty((P, P))

    def total_score(v):
        p = ParamSet.unflatten(pset.spec, v)
        return score_matrix(data, p).sum(axis=0)

    for h in range(P):
        step = max(step_scale, step_scale * abs(vec[h]))
        hi = vec.copy()
        hi[h] += step
        lo = vec.copy()
        lo[h] -= step
        J[:, h] = -(total_score(hi) - total_score(lo)) / (2.0 * step)
    return 0.5 * (J + J.T)


@dataclass
class SEResult:
    method: str
    se: np.ndarray
    cov: np.ndarray | None
    names: list[str]
    diagnostics: dict

    def table(self):
        import pandas as pd

        return pd.DataFrame({"parameter": self.names, self.method: self.se})


def _safe_inverse(M: np.ndarray) -> tuple[np.ndarray, dict]:
    diag = {"condition_number": float(np.linalg.cond(M)), "pseudo_inverse": False}
    if not np.isfinite(diag["condition_number"]) or diag["condition_number"] > 1e12:
        diag["pseudo_inverse"] = True
        return np.linalg.pinv(M), diag
    try:
        return np.linalg.inv(M), diag
    except np.linalg.LinAlgError:
        diag["pseudo_inverse"] = True
        return np.linalg.pinv(M), diag


def _se_from_cov(cov: np.ndarray, clamped: np.ndarray) -> tuple[np.ndarray, dict]:
    var = np.diag(cov).copy()
    bad = var < 0
    se = np.sqrt(np.where(bad, np.nan, var))
    se[clamped] = np.nan
    return se, {"psd": bool(not bad.any()), "negative_variances": int(bad.sum())}


def _boot_worker(args):
    from .em import FitConfig, _em_once
    from .params import canonicalize
    from .simulate import parametric_bootstrap_panel

    data, pset, seed, config = args
    panel = parametric_bootstrap_panel(data, pset, seed)
    try:
        params, trace, conv, _, _ = _em_once(panel, pset, config)
    except Exception:
        return None
    if not conv:
        return None
    canon, _, _ = canonicalize(params)
    return canon.flatten()


def bootstrap_se(data: PanelDataset, pset: ParamSet, n_reps: int = 200, seed: int = 0,
                 threads: int = 1, fit_config=None) -> tuple[np.ndarray, np.ndarray, int]:
    """Parametric bootstrap: replicates simulated at the estimate, refitted
    from it with a single warm start. Returns (estimates, se, n_dropped)."""
    from .em import FitConfig

    config = fit_config or FitConfig(max_iter=500)
    jobs = [(data, pset, seed + 1 + b, config) for b in range(n_reps)]
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(_boot_worker, jobs))
    else:
        results = [_boot_worker(j) for j in jobs]
    kept = np.array([r for r in results if r is not None])
    dropped = n_reps - kept.shape[0]
    if kept.shape[0] < 2:
        P = pset.flatten().size
        return kept, np.full(P, np.nan), dropped
    return kept, kept.std(axis=0, ddof=1), dropped


def stderr(data: PanelDataset, pset: ParamSet, method: str = "OPIM",
           boot_reps: int = 200, seed: int = 0, threads: int = 1,
           fit_config=None) -> SEResult:
    """Standard errors by one of OPIM, OIM, SDW, BOOT.

    Clamped parameters (at the +-20 box) get NA standard errors; singular
    information matrices fall back to the pseudo-inverse and are flagged
    with their condition number.
    """
    method = method.upper()
    layout = blocks.build_layout(
        pset.spec, data.x_L_names, data.x_U_names, data.z_L_names, data.z_U_names)
    clamped = np.abs(pset.flatten()) >= PARAM_BOUND - CLAMP_EPS
    diagnostics: dict = {"n_clamped": int(clamped.sum())}
    if method == "BOOT":
        draws, se, dropped = bootstrap_se(data, pset, boot_reps, seed, threads, fit_config)
        se = se.copy()
        se[clamped] = np.nan
        diagnostics["dropped_replicates"] = dropped
        diagnostics["n_replicates"] = int(draws.shape[0]) if draws.size else 0
        cov = np.cov(draws.T) if draws.size and draws.shape[0] > 1 else None
        return SEResult("BOOT", se, cov, layout.names, diagnostics)
    if method == "OPIM":
        I = unit_scores(data, pset).opim()
        cov, d = _safe_inverse(I)
        diagnostics.update(d)
    elif method == "OIM":
        J = observed_information(data, pset)
        cov, d = _safe_inverse(J)
        diagnostics.update(d)
    elif method == "SDW":
        I = unit_scores(data, pset).opim()
        J = observed_information(data, pset)
        Jinv, d = _safe_inverse(J)
        cov = Jinv @ I @ Jinv
        diagnostics.update(d)
    else:
        raise ValueError(f"unknown SE method {method!r}; expected OIM, OPIM, SDW or BOOT")
    se, d = _se_from_cov(cov, clamped)
    diagnostics.update(d)
    return SEResult(method, se, cov, layout.names, diagnostics)
