"""Scaled forward-backward recursions on the joint latent chain.

Per-occasion normalization keeps all quantities in probability scale; the
log-likelihood accumulates from the log normalizers. Transition matrices are
memoized per distinct covariate configuration.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .latent import bivariate_kernel_rows, initial_joint_rows
from .observation import grid_emission_matrix
from .panel import PanelDataset
from .params import ParamSet


class NumericalUnderflow(RuntimeError):
    pass


@dataclass
class DataWorkspace:
    """Static per-dataset indexing reused across parameter evaluations."""

    init_rows: np.ndarray     # distinct (x_L, x_U) rows
    init_idx: np.ndarray      # (n,)
    trans_rows: np.ndarray    # distinct (z_L, z_U_eff) rows
    trans_idx: np.ndarray     # (n, T-1)
    p1_L: int
    p2_L: int


def data_workspace(data: PanelDataset, p2_U_eff: int) -> DataWorkspace:
    """Distinct covariate configurations; memoized on the dataset."""
    cache = getattr(data, "_hmm_workspaces", None)
    if cache is None:
        cache = {}
        data._hmm_workspaces = cache
    if p2_U_eff not in cache:
        n, T = data.n, data.T
        init_cov = np.hstack([data.x_L, data.x_U])
        uniq0, inv0 = np.unique(init_cov, axis=0, return_inverse=True)
        zu = data.z_U[:, :, :p2_U_eff]
        width = data.p2_L + p2_U_eff
        trans_cov = np.concatenate([data.z_L, zu], axis=2).reshape(n * (T - 1), width)
        uniq, inv = np.unique(trans_cov, axis=0, return_inverse=True)
        cache[p2_U_eff] = DataWorkspace(uniq0, inv0, uniq, inv.reshape(n, T - 1),
                                        data.p1_L, data.p2_L)
    return cache[p2_U_eff]


@dataclass
class HMMContext:
    """Per-(data, params) quantities reused across passes."""

    spec: object
    init: np.ndarray          # (n, S)
    kernel_bank: np.ndarray   # (n_cfg, S, S)
    kernel_idx: np.ndarray    # (n, T-1) indices into the bank
    emis: np.ndarray          # (n, T, S)


def build_context(data: PanelDataset, pset: ParamSet) -> HMMContext:
    spec, lp, obs = pset.spec, pset.latent, pset.obs
    n, T = data.n, data.T
    ws = data_workspace(data, spec.p2_U_eff)
    tables = obs.emission_tables()
    S = tables[0].shape[0]
    emis = np.ones((n, T, S))
    for j in range(data.r):
        emis *= tables[j][:, data.y[:, :, j] - 1].transpose(1, 2, 0)
    init_bank = initial_joint_rows(
        spec, lp, ws.init_rows[:, :ws.p1_L], ws.init_rows[:, ws.p1_L:])
    init = init_bank[ws.init_idx]
    bank = bivariate_kernel_rows(
        spec, lp, ws.trans_rows[:, :ws.p2_L], ws.trans_rows[:, ws.p2_L:])
    return HMMContext(spec, init, bank, ws.trans_idx, emis)


@dataclass
class ForwardBackwardResult:
    """Scaled forward/backward vectors, normalizers, per-unit log-likelihoods."""

    alpha: np.ndarray   # (n, T, S), rows sum to one
    beta: np.ndarray    # (n, T, S), scaled so that sum_s alpha*beta = 1
    norms: np.ndarray   # (n, T) per-occasion normalizers m_t
    loglik_units: np.ndarray  # (n,)

    @property
    def loglik(self) -> float:
        return float(self.loglik_units.sum())


def _forward_backward(ctx: HMMContext) -> ForwardBackwardResult:
    init, emis = ctx.init, ctx.emis
    n, T, S = emis.shape
    alpha = np.empty((n, T, S))
    beta = np.ones((n, T, S))
    norms = np.empty((n, T))
    tmp = init * emis[:, 0, :]
    norms[:, 0] = tmp.sum(axis=1)
    if np.any(norms[:, 0] <= 0) or not np.all(np.isfinite(norms[:, 0])):
        raise NumericalUnderflow("zero or non-finite forward normalizer at t=1")
    alpha[:, 0] = tmp / norms[:, 0, None]
    for t in range(1, T):
        G = ctx.kernel_bank[ctx.kernel_idx[:, t - 1]]
        pred = np.einsum("ns,nsv->nv", alpha[:, t - 1], G)
        tmp = pred * emis[:, t, :]
        norms[:, t] = tmp.sum(axis=1)
        if np.any(norms[:, t] <= 0) or not np.all(np.isfinite(norms[:, t])):
            raise NumericalUnderflow(f"zero or non-finite forward normalizer at t={t + 1}")
        alpha[:, t] = tmp / norms[:, t, None]
    for t in range(T - 2, -1, -1):
        G = ctx.kernel_bank[ctx.kernel_idx[:, t]]
        beta[:, t] = np.einsum("nsv,nv->ns", G, emis[:, t + 1, :] * beta[:, t + 1])
        beta[:, t] /= norms[:, t + 1, None]
    return ForwardBackwardResult(alpha, beta, norms, np.log(norms).sum(axis=1))


def forward_backward(data: PanelDataset, pset: ParamSet, unit: int | None = None):
    """Scaled recursions; with ``unit`` given, slices one unit's quantities."""
    fb = _forward_backward(build_context(data, pset))
    if unit is None:
        return fb
    i = unit
    return ForwardBackwardResult(
        fb.alpha[i:i + 1], fb.beta[i:i + 1], fb.norms[i:i + 1], fb.loglik_units[i:i + 1])


@dataclass
class LatentPosteriors:
    """Smoothed posteriors of the joint chain.

    delta1[i, t, s] and delta2[i, t-1, s_prev, s_cur] over flat joint states;
    delta1_ul / delta2_ul expose the (u, l) axes for models with an RS
    regime (axis order: current u, l, then previous u, l).
    """

    spec: object
    delta1: np.ndarray
    delta2: np.ndarray

    @property
    def delta1_ul(self) -> np.ndarray:
        n, T, S = self.delta1.shape
        k = self.spec.k
        return self.delta1.reshape(n, T, S // k, k)

    @property
    def delta2_ul(self) -> np.ndarray:
        n, Tm1, S, _ = self.delta2.shape
        k = self.spec.k
        u = S // k
        # stored as (prev, cur); expose (cur u, cur l, prev u, prev l)
        d = self.delta2.reshape(n, Tm1, u, k, u, k)
        return np.moveaxis(d, (4, 5), (2, 3))


def posteriors_from(ctx: HMMContext, fb: ForwardBackwardResult) -> LatentPosteriors:
    n, T, S = ctx.emis.shape
    delta1 = fb.alpha * fb.beta
    delta1 /= delta1.sum(axis=2, keepdims=True)
    delta2 = np.empty((n, T - 1, S, S))
    for t in range(1, T):
        G = ctx.kernel_bank[ctx.kernel_idx[:, t - 1]]
        d = fb.alpha[:, t - 1, :, None] * G * (ctx.emis[:, t, :] * fb.beta[:, t, :])[:, None, :]
        delta2[:, t - 1] = d / norms_col(fb.norms, t)
    return LatentPosteriors(ctx.spec, delta1, delta2)


def norms_col(norms: np.ndarray, t: int) -> np.ndarray:
    return norms[:, t, None, None]


def posteriors(data: PanelDataset, pset: ParamSet) -> LatentPosteriors:
    ctx = build_context(data, pset)
    return posteriors_from(ctx, _forward_backward(ctx))


def e_step(data: PanelDataset, pset: ParamSet):
    """Posteriors plus total log-likelihood in one pass."""
    ctx = build_context(data, pset)
    fb = _forward_backward(ctx)
    return posteriors_from(ctx, fb), fb.loglik


def conditional_state_weights(ctx: HMMContext, fb: ForwardBackwardResult) -> np.ndarray:
    """(n, T, S) weights; the full-conditional pmf of occasion t is
    proportional to weights[i, t] (as a function over the response grid)."""
    n, T, S = ctx.emis.shape
    pred = np.empty((n, T, S))
    pred[:, 0] = ctx.init
    for t in range(1, T):
        G = ctx.kernel_bank[ctx.kernel_idx[:, t - 1]]
        pred[:, t] = np.einsum("ns,nsv->nv", fb.alpha[:, t - 1], G)
    return pred * fb.beta


def full_conditional_pmfs(data: PanelDataset, pset: ParamSet) -> np.ndarray:
    """(n, T, C) pmfs of each occasion's responses given all other occasions.

    C enumerates the full response grid (first response slowest), matching
    ``observation.response_grid``.
    """
    ctx = build_context(data, pset)
    fb = _forward_backward(ctx)
    W = conditional_state_weights(ctx, fb)
    EM = grid_emission_matrix(pset.obs)
    pmf = np.einsum("nts,sc->ntc", W, EM)
    return pmf / pmf.sum(axis=2, keepdims=True)


def full_conditional_pmf(data: PanelDataset, pset: ParamSet, unit: int, t: int) -> np.ndarray:
    """Full-conditional pmf of unit ``unit`` (0-based) at occasion ``t`` (1-based)."""
    return full_conditional_pmfs(data, pset)[unit, t - 1]


def observed_config_ids(data: PanelDataset) -> np.ndarray:
    """(n, T) index of each observed response configuration in the grid."""
    cards = data.cardinalities
    return np.ravel_multi_index(
        tuple(data.y[:, :, j] - 1 for j in range(data.r)), cards)


def loglik(data: PanelDataset, pset: ParamSet) -> float:
    return _forward_backward(build_context(data, pset)).loglik
