"""Goodness-of-fit and classification indices; full-conditional residuals."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from . import hmm
from .observation import response_grid
from .panel import PanelDataset, index_configurations
from .params import ParamSet

DEGENERATE_SLICE = 1e-12
EXPECTED_FLOOR = 1e-10


@dataclass
class SIndices:
    """The classification-quality index family computed from posteriors.

    Conditional variants renormalize the posteriors within the conditioning
    slice; unit-occasions whose slice mass is below 1e-12 are skipped and
    counted in ``skipped``.
    """

    s: float
    s_L: float | None
    s_U: float | None
    s_L_rs: float | None
    s_L_awr: float | None
    s_U_given_l: np.ndarray | None
    skipped: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "S_k": self.s,
            "S_L": self.s_L,
            "S_U": self.s_U,
            "S_L|RS": self.s_L_rs,
            "S_L|AWR": self.s_L_awr,
            "S_U|L": None if self.s_U_given_l is None else list(map(float, self.s_U_given_l)),
            "skipped": self.skipped,
        }


def _normalized_mean_max(values: np.ndarray, baseline: float) -> float:
    """Average of (max posterior - baseline) / (1 - baseline)."""
    return float((values.mean() - baseline) / (1.0 - baseline))


def s_indices(post: hmm.LatentPosteriors) -> SIndices:
    spec = post.spec
    k = spec.k
    d1 = post.delta1
    S = d1.shape[2]
    s_all = _normalized_mean_max(d1.max(axis=2), 1.0 / S)
    if not spec.has_rs:
        s_L = _normalized_mean_max(d1.max(axis=2), 1.0 / k) if k > 1 else None
        return SIndices(s_all, s_L, None, None, None, None)
    d1ul = post.delta1_ul  # (n, T, 2, k)
    skipped = {}
    s_L = _normalized_mean_max(d1ul.sum(axis=2).max(axis=2), 1.0 / k) if k > 1 else None
    s_U = _normalized_mean_max(d1ul.sum(axis=3).max(axis=2), 0.5)

    def conditional_L(u_idx, tag):
        if k == 1:
            return None
        slice_ = d1ul[:, :, u_idx, :]
        mass = slice_.sum(axis=2)
        ok = mass >= DEGENERATE_SLICE
        skipped[tag] = int((~ok).sum())
        if not ok.any():
            return None
        rat = slice_[ok] / mass[ok][:, None]
        return _normalized_mean_max(rat.max(axis=1), 1.0 / k)

    s_L_rs = conditional_L(0, "L|RS")
    s_L_awr = conditional_L(1, "L|AWR")

    s_U_given = np.empty(k)
    for l in range(k):
        slice_ = d1ul[:, :, :, l]
        mass = slice_.sum(axis=2)
        ok = mass >= DEGENERATE_SLICE
        skipped[f"U|L={l + 1}"] = int((~ok).sum())
        if not ok.any():
            s_U_given[l] = np.nan
            continue
        rat = slice_[ok] / mass[ok][:, None]
        s_U_given[l] = _normalized_mean_max(rat.max(axis=1), 0.5)
    return SIndices(s_all, s_L, s_U, s_L_rs, s_L_awr, s_U_given, skipped)


@dataclass
class IndexReport:
    loglik: float
    null_loglik: float
    n_params: int
    aic: float
    bic: float
    r2: float
    s: SIndices
    n: int
    T: int

    def to_dict(self) -> dict:
        d = {
            "loglik": self.loglik,
            "null_loglik": self.null_loglik,
            "n_params": self.n_params,
            "AIC": self.aic,
            "BIC": self.bic,
            "R2": self.r2,
            "n": self.n,
            "T": self.T,
        }
        d.update(self.s.to_dict())
        return d


def bic(loglik: float, n_params: int, n_units: int) -> float:
    """BIC with the sample size taken as the number of units."""
    return -2.0 * loglik + n_params * math.log(n_units)


def aic(loglik: float, n_params: int) -> float:
    return -2.0 * loglik + 2.0 * n_params


def r_squared(loglik: float, null_loglik: float, n_units: int, r: int) -> float:
    """Improvement over the independence model, normalized per unit-response."""
    return 1.0 - math.exp(2.0 * (null_loglik - loglik) / (n_units * r))


def fit_indices(data: PanelDataset, fit, null_loglik: float | None = None) -> IndexReport:
    """Full index report for a fitted model (fit: FitResult or ParamSet)."""
    from .em import fit_null

    if null_loglik is None:
        null_loglik = fit_null(data).loglik
    if isinstance(fit, ParamSet):
        pset = fit
        ll = hmm.loglik(data, pset)
        n_params = pset.spec.count_params()
    else:
        pset, ll, n_params = fit.params, fit.loglik, fit.n_params
    post, _ = hmm.e_step(data, pset)
    return IndexReport(
        loglik=ll,
        null_loglik=null_loglik,
        n_params=n_params,
        aic=aic(ll, n_params),
        bic=bic(ll, n_params, data.n),
        r2=r_squared(ll, null_loglik, data.n, data.r),
        s=s_indices(post),
        n=data.n,
        T=data.T,
    )


# ---------------------------------------------------------------------------
# full-conditional Pearson residuals
# ---------------------------------------------------------------------------

@dataclass
class ResidualTable:
    """Cell-level residuals, per-configuration chi-square summaries, and
    marginalized residuals for declared response subsets."""

    cells: pd.DataFrame
    chisq: pd.DataFrame
    marginals: dict[tuple[int, ...], pd.DataFrame]
    grid: np.ndarray  # (C, r) response configurations, 1-based

    @property
    def n_cells(self) -> int:
        return len(self.cells)


def _grid_labels(grid: np.ndarray) -> list[str]:
    return [",".join(str(v) for v in row) for row in grid]


def residuals(data: PanelDataset, pset: ParamSet,
              subsets: list[tuple[int, ...]] | None = None) -> ResidualTable:
    """Full-conditional Pearson residuals over occasions x covariate
    configurations x response configurations, with chi-square averages."""
    pmfs = hmm.full_conditional_pmfs(data, pset)  # (n, T, C)
    cfg = index_configurations(data)
    obs_ids = hmm.observed_config_ids(data)       # (n, T)
    grid = response_grid(data.cardinalities)
    C = grid.shape[0]
    labels_all = _grid_labels(grid)
    if subsets is None:
        subsets = [(j,) for j in range(data.r)] if data.r > 1 else []

    cell_rows = []
    chisq_rows = []
    marg_frames: dict[tuple[int, ...], list] = {tuple(s): [] for s in subsets}
    for t in range(1, data.T + 1):
        labels = cfg.labels[t - 1]
        G = cfg.n_configs(t)
        counts = np.zeros((G, C))
        np.add.at(counts, (labels, obs_ids[:, t - 1]), 1.0)
        expected = np.zeros((G, C))
        np.add.at(expected, labels, pmfs[:, t - 1, :])
        group_sizes = np.bincount(labels, minlength=G).astype(float)

        ok = expected >= EXPECTED_FLOOR
        rho = np.full((G, C), np.nan)
        rho[ok] = (counts[ok] - expected[ok]) / np.sqrt(expected[ok])
        chisq = np.where(ok, rho, 0.0) ** 2
        chisq_sum = np.where(ok, chisq, 0.0).sum(axis=1)

        for g in range(G):
            for y_id in range(C):
                cell_rows.append((t, g, y_id, labels_all[y_id], counts[g, y_id],
                                  expected[g, y_id], rho[g, y_id], not ok[g, y_id]))
            chisq_rows.append((t, g, group_sizes[g], chisq_sum[g],
                               chisq_sum[g] / C, int((~ok[g]).sum())))

        for subset in subsets:
            subset = tuple(subset)
            sub_cards = tuple(data.cardinalities[j] for j in subset)
            marg_ids = np.ravel_multi_index(
                tuple(grid[:, j] - 1 for j in subset), sub_cards)
            Cm = int(np.prod(sub_cards))
            sub_grid = response_grid(sub_cards)
            sub_labels = _grid_labels(sub_grid)
            n_m = np.zeros((G, Cm))
            mu_m = np.zeros((G, Cm))
            for m in range(Cm):
                sel = marg_ids == m
                n_m[:, m] = counts[:, sel].sum(axis=1)
                mu_m[:, m] = expected[:, sel].sum(axis=1)
            okm = mu_m >= EXPECTED_FLOOR
            rho_m = np.full((G, Cm), np.nan)
            rho_m[okm] = (n_m[okm] - mu_m[okm]) / np.sqrt(mu_m[okm])
            for g in range(G):
                for m in range(Cm):
                    marg_frames[subset].append(
                        (t, g, m, sub_labels[m], n_m[g, m], mu_m[g, m], rho_m[g, m]))

    cells = pd.DataFrame(
        cell_rows,
        columns=["t", "config_id", "y_id", "y", "count", "expected", "residual", "na"])
    chis = pd.DataFrame(
        chisq_rows,
        columns=["t", "config_id", "n_units", "chisq", "avg_chisq", "na_cells"])
    marginals = {
        s: pd.DataFrame(rows, columns=["t", "config_id", "y_id", "y", "count",
                                       "expected", "residual"])
        for s, rows in marg_frames.items()
    }
    return ResidualTable(cells, chis, marginals, grid)
