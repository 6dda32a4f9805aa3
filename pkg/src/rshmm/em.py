"""EM driver: six-addend separable M-step, multi-start control, null model."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import blocks, hmm
from .logit import WeightedLogitProblem, fit_stereotype, fit_weighted_logit
from .modelspec import ModelSpec
from .observation import awr_logits
from .panel import PanelDataset
from .params import ParamSet, canonicalize

AWR_FLOOR = 1e-10
MONOTONE_SLACK = 1e-8


class EMDecreaseError(RuntimeError):
    """The observed-data log-likelihood decreased beyond the allowed slack."""


class AllStartsFailed(RuntimeError):
    pass


@dataclass
class FitConfig:
    """EM control settings.

    Convergence requires a relative log-likelihood change below tol_loglik
    and a max parameter change below tol_param on consecutive iterations;
    when tol_score is set, the observed-score max-norm must also fall below
    it. Starts draw free parameters uniformly from [-d, d] with the AWR
    block seeded from perturbed marginal response frequencies.
    """

    tol_loglik: float = 1e-8
    tol_param: float = 1e-5
    tol_score: float | None = None
    max_iter: int = 1000
    n_starts: int = 1
    seed: int = 0
    start_dispersion: float = 1.0
    m_step_tol: float = 1e-9
    m_step_max_iter: int = 50
    threads: int = 1


@dataclass
class StartSummary:
    start: int
    loglik: float
    n_iter: int
    converged: bool
    error: str | None = None


@dataclass
class FitResult:
    params: ParamSet
    loglik: float
    trace: np.ndarray
    n_iter: int
    converged: bool
    n_params: int
    config: FitConfig
    starts: list[StartSummary] = field(default_factory=list)
    score_max_norm: float | None = None
    clamped: bool = False
    label_permutation: np.ndarray | None = None
    canonical: bool = True

    @property
    def spec(self) -> ModelSpec:
        return self.params.spec

    def to_dict(self) -> dict:
        return {
            "loglik": self.loglik,
            "n_params": self.n_params,
            "n_iter": self.n_iter,
            "converged": self.converged,
            "clamped": self.clamped,
            "canonical_order": self.canonical,
            "score_max_norm": self.score_max_norm,
            "trace": np.asarray(self.trace).tolist(),
            "starts": [vars(s) for s in self.starts],
            "params": self.params.to_dict(),
        }


def count_params(spec: ModelSpec) -> int:
    """Free-parameter count of the full model (latent plus observation)."""
    return spec.count_params()


# ---------------------------------------------------------------------------
# posterior weight extraction
# ---------------------------------------------------------------------------

def _weight_tensors(spec: ModelSpec, data: PanelDataset, post: hmm.LatentPosteriors):
    """Posterior expected counts feeding the six M-step addends."""
    k = spec.k
    n, T, S = post.delta1.shape
    out = {}
    if spec.has_rs:
        d1 = post.delta1.reshape(n, T, 2, k)
        d2 = post.delta2.reshape(n, T - 1, 2, k, 2, k)  # (prev u, prev l, cur u, cur l)
        out["initL"] = d1[:, 0].sum(axis=1)
        out["initU"] = d1[:, 0].sum(axis=2)
        out["transL"] = d2.sum(axis=(2, 4))             # (n, T-1, prev l, cur l)
        out["transU"] = d2.sum(axis=3).transpose(0, 1, 4, 2, 3)  # (n, T-1, cur l, prev u, cur u)
        out["rs_state"] = d1[:, :, 0, :]                # (n, T, l)
        out["awr_state"] = d1[:, :, 1, :]
    else:
        d2 = post.delta2
        out["initL"] = post.delta1[:, 0]
        out["transL"] = d2
        out["awr_state"] = post.delta1
    return out


def _category_counts(data: PanelDataset, j: int, weights_nt: np.ndarray) -> np.ndarray:
    """Posterior-weighted category frequencies of response j."""
    c = data.cardinalities[j]
    return np.bincount((data.y[:, :, j] - 1).ravel(), weights=weights_nt.ravel(), minlength=c)


def _trans_rows(data: PanelDataset, which: str) -> np.ndarray:
    arr = data.z_L if which == "L" else data.z_U
    return arr.reshape(data.n * (data.T - 1), arr.shape[2])


def _trans_u_weights(spec: ModelSpec, w4: np.ndarray, key: str) -> np.ndarray:
    """Collapse (n, T-1, l, u_prev, u_cur) weights for one RS-transition block."""
    R = w4.shape[0] * w4.shape[1]
    inner = key[len("transU"):].strip("[]")
    form = spec.rs_form
    if form in ("heterogeneous", "homogeneous"):
        l, v = (int(s) for s in inner.split(","))
        w = w4[:, :, l, v, :]
    elif form in ("memoryless-het", "memoryless-hom"):
        w = w4[:, :, int(inner), :, :].sum(axis=2)
    elif form == "independent":
        w = w4.sum(axis=(2, 3))
    elif form == "factorial":
        w = w4[:, :, :, int(inner[1:]), :].sum(axis=2)
    else:
        raise ValueError(form)
    return w.reshape(R, 2)


class MStepWorkspace:
    """Static per-(data, spec) structures: collapsed covariate rows and their
    inverse maps, so every M-step solves problems over distinct rows only."""

    def __init__(self, data: PanelDataset, spec: ModelSpec):
        self.layout = blocks.default_layout(spec)
        R = data.n * (data.T - 1)
        self.xL_rows, self.xL_inv = np.unique(data.x_L, axis=0, return_inverse=True)
        self.xU_rows, self.xU_inv = np.unique(data.x_U, axis=0, return_inverse=True)
        zL = data.z_L.reshape(R, data.p2_L)
        self.zL_rows, self.zL_inv = np.unique(zL, axis=0, return_inverse=True)
        zU = data.z_U.reshape(R, data.p2_U)[:, :spec.p2_U_eff]
        self.zU_rows, self.zU_inv = np.unique(zU, axis=0, return_inverse=True)
        self.y0 = [(data.y[:, :, j] - 1).ravel() for j in range(data.r)]

    @staticmethod
    def collapse(inv: np.ndarray, n_rows: int, w: np.ndarray) -> np.ndarray:
        out = np.zeros((n_rows, w.shape[1]))
        np.add.at(out, inv, w)
        return out


def workspace_for(data: PanelDataset, spec: ModelSpec) -> MStepWorkspace:
    cache = getattr(data, "_mstep_workspaces", None)
    if cache is None:
        cache = {}
        data._mstep_workspaces = cache
    if spec not in cache:
        cache[spec] = MStepWorkspace(data, spec)
    return cache[spec]


def m_step(data: PanelDataset, pset: ParamSet, post: hmm.LatentPosteriors,
           config: FitConfig, ws: MStepWorkspace | None = None) -> tuple[ParamSet, dict]:
    """Maximize the six separable addends of the expected complete loglik."""
    spec = pset.spec
    k = spec.k
    ws = ws or workspace_for(data, spec)
    vec = pset.flatten()
    w = _weight_tensors(spec, data, post)
    diag = {"clamped": False, "degenerate": 0, "flat_scores": False}
    tol, mit = config.m_step_tol, config.m_step_max_iter

    def run(block, problem, stereotype=False):
        init = vec[block.sl]
        fitter = fit_stereotype if stereotype else fit_weighted_logit
        res = fitter(problem, init=init, tol=tol, max_iter=mit, collapse=False)
        vec[block.sl] = res.theta
        diag["clamped"] |= res.clamped
        diag["degenerate"] += len(res.degenerate)
        diag["flat_scores"] |= res.flat_scores
        return res

    for block in ws.layout.blocks:
        key = block.key
        if key == "initL":
            wc = ws.collapse(ws.xL_inv, len(ws.xL_rows), w["initL"])
            if block.family == "stereotype":
                run(block, WeightedLogitProblem("stereotype", wc, ws.xL_rows, 0,
                                                score_pin=1), stereotype=True)
            elif block.family == "parallel":
                run(block, WeightedLogitProblem("parallel", wc, ws.xL_rows, 0,
                                                fixed_scores=pset.latent.mu))
            else:
                run(block, WeightedLogitProblem("baseline", wc, ws.xL_rows, 0))
        elif key == "initU":
            wc = ws.collapse(ws.xU_inv, len(ws.xU_rows), w["initU"])
            run(block, WeightedLogitProblem("binary", wc, ws.xU_rows))
        elif key.startswith("transL"):
            lb = int(key[len("transL["):-1])
            wt = w["transL"][:, :, lb, :].reshape(-1, k)
            wc = ws.collapse(ws.zL_inv, len(ws.zL_rows), wt)
            if block.family == "stereotype":
                run(block, WeightedLogitProblem("stereotype", wc, ws.zL_rows, lb,
                                                score_pin=blocks.stereo_pin(lb)),
                    stereotype=True)
            elif block.family == "parallel":
                run(block, WeightedLogitProblem("parallel", wc, ws.zL_rows, lb,
                                                fixed_scores=pset.latent.nu[lb]))
            else:
                run(block, WeightedLogitProblem("baseline", wc, ws.zL_rows, lb))
        elif key.startswith("transU"):
            wt = _trans_u_weights(spec, w["transU"], key)
            wc = ws.collapse(ws.zU_inv, len(ws.zU_rows), wt)
            run(block, WeightedLogitProblem(
                "binary", wc, ws.zU_rows if spec.p2_U_eff else None))
        elif key.startswith("rs["):
            l, j = (int(s) for s in key[len("rs["):-1].split(","))
            counts = np.bincount(ws.y0[j], weights=w["rs_state"][:, :, l].ravel(),
                                 minlength=data.cardinalities[j])
            run(block, WeightedLogitProblem("rs", counts[None, :]))
        elif key.startswith("awr["):
            l, j = (int(s) for s in key[len("awr["):-1].split(","))
            counts = np.bincount(ws.y0[j], weights=w["awr_state"][:, :, l].ravel(),
                                 minlength=data.cardinalities[j])
            total = counts.sum()
            freq = np.full(counts.size, 1.0 / counts.size) if total <= 0 else counts / total
            freq = np.maximum(freq, AWR_FLOOR)
            vec[block.sl] = awr_logits(freq)
        else:  # pragma: no cover - layout and m-step enumerate the same keys
            raise RuntimeError(f"unhandled block {key}")
    return ParamSet.unflatten(spec, vec), diag


def em_step(data: PanelDataset, pset: ParamSet,
            config: FitConfig | None = None) -> tuple[ParamSet, float]:
    """One EM iteration; returns updated parameters and the log-likelihood
    of the *input* parameters (the E-step value)."""
    config = config or FitConfig()
    post, ll = hmm.e_step(data, pset)
    new, _ = m_step(data, pset, post, config)
    return new, ll


def q_addends(data: PanelDataset, pset: ParamSet, post: hmm.LatentPosteriors) -> np.ndarray:
    """The six addends of the expected complete log-likelihood (zeros where
    a block is absent)."""
    spec = pset.spec
    lp, obs = pset.latent, pset.obs
    w = _weight_tensors(spec, data, post)
    k = spec.k
    out = np.zeros(6)
    safe_log = lambda p: np.log(np.maximum(p, 1e-300))
    if k >= 2:
        from .latent import initial_probs_L_rows, transition_probs_L_rows
        out[0] = float((w["initL"] * safe_log(initial_probs_L_rows(spec, lp, data.x_L))).sum())
        PL = transition_probs_L_rows(spec, lp, _trans_rows(data, "L"))
        wt = w["transL"].reshape(-1, k, k)
        out[2] = float((wt * safe_log(PL)).sum())
    if spec.has_rs:
        from .latent import initial_probs_U_rows, transition_probs_U_rows
        out[1] = float((w["initU"] * safe_log(initial_probs_U_rows(spec, lp, data.x_U))).sum())
        PU = transition_probs_U_rows(spec, lp, _trans_rows(data, "U")[:, :spec.p2_U_eff])
        w4 = w["transU"].reshape(-1, k, 2, 2)
        out[3] = float((w4 * safe_log(PU)).sum())
        for l in range(k):
            for j in range(data.r):
                counts = _category_counts(data, j, w["rs_state"][:, :, l])
                out[4] += float(counts @ safe_log(obs.rs_table(j)[l]))
    for l in range(k):
        for j in range(data.r):
            counts = _category_counts(data, j, w["awr_state"][:, :, l])
            out[5] += float(counts @ safe_log(obs.awr_table(j)[l]))
    return out


# ---------------------------------------------------------------------------
# starts
# ---------------------------------------------------------------------------

def random_start(spec: ModelSpec, data: PanelDataset, rng: np.random.Generator,
                 dispersion: float = 1.0) -> ParamSet:
    """Uniform draws in [-d, d] for free parameters; AWR logits start from
    perturbed pooled response frequencies."""
    layout = blocks.build_layout(spec)
    vec = rng.uniform(-dispersion, dispersion, layout.size)
    pset = ParamSet.unflatten(spec, vec)
    for j, c in enumerate(spec.cardinalities):
        freq = np.bincount((data.y[:, :, j] - 1).ravel(), minlength=c) + 1.0
        base = awr_logits(freq / freq.sum())
        for l in range(spec.k):
            pset.obs.awr[j][l] = base + rng.uniform(-dispersion, dispersion, c - 1)
    return pset


def embed_params(pset: ParamSet, target: ModelSpec) -> ParamSet:
    """Re-express parameters of a restricted model inside a nesting one.

    Supports the upward form changes used by nesting comparisons:
    parallel-adjacent/-baseline -> stereotype -> baseline for both the
    initial and transition construct blocks, and dropped-covariate /
    collapsed RS forms gaining their parameters back as zeros.
    """
    src = pset.spec
    out = ParamSet.zeros(target)
    lp, old = out.latent, pset.latent
    k = target.k
    if k != src.k or target.cardinalities != src.cardinalities:
        raise ValueError("embedding requires identical k and cardinalities")

    # initial construct block
    if target.init_L_form == src.init_L_form:
        lp.alpha0 = old.alpha0.copy()
        lp.alpha1 = old.alpha1.copy()
        if old.mu is not None:
            lp.mu = old.mu.copy()
    elif src.init_L_form in ("stereotype", "parallel-adjacent") and target.init_L_form == "baseline":
        lp.alpha0 = old.alpha0.copy()
        lp.alpha1 = np.outer(old.mu[1:], old.alpha1)
    elif src.init_L_form == "parallel-adjacent" and target.init_L_form == "stereotype":
        lp.alpha0 = old.alpha0.copy()
        lp.alpha1 = old.alpha1.copy()
        lp.mu = old.mu.copy()
    else:
        raise ValueError(f"cannot embed init form {src.init_L_form} into {target.init_L_form}")

    # construct transitions
    if target.trans_L_form == src.trans_L_form:
        lp.beta0 = old.beta0.copy()
        lp.beta1 = old.beta1.copy()
        if old.nu is not None:
            lp.nu = old.nu.copy()
    elif src.trans_L_form != "baseline" and target.trans_L_form == "baseline":
        lp.beta0 = old.beta0.copy()
        lp.beta1 = old.nu[:, :, None] * old.beta1[:, None, :]
    elif src.trans_L_form in ("parallel-baseline", "parallel-adjacent") and \
            target.trans_L_form == "stereotype":
        lp.beta0 = old.beta0.copy()
        lp.beta1 = old.beta1.copy()
        lp.nu = old.nu.copy()
    else:
        raise ValueError(f"cannot embed trans form {src.trans_L_form} into {target.trans_L_form}")

    # RS blocks
    if src.has_rs:
        lp.abar0, lp.abar1 = old.abar0, old.abar1.copy()
        sform, tform = src.rs_form, target.rs_form
        if tform == sform:
            if old.bbar0 is not None:
                lp.bbar0 = old.bbar0.copy() if isinstance(old.bbar0, np.ndarray) else old.bbar0
            if old.bbar1 is not None:
                lp.bbar1 = old.bbar1.copy()
        elif sform == "homogeneous" and tform == "heterogeneous":
            lp.bbar0 = old.bbar0.copy()
        elif sform == "memoryless-hom" and tform == "memoryless-het":
            lp.bbar0 = old.bbar0.copy()
        elif sform in ("memoryless-het", "memoryless-hom") and \
                tform in ("heterogeneous", "homogeneous"):
            lp.bbar0 = np.repeat(old.bbar0[:, None], 2, axis=1)
            if tform == "heterogeneous" and sform == "memoryless-het":
                lp.bbar1 = np.repeat(old.bbar1[:, None, :], 2, axis=1)
        elif sform == "independent" and tform in ("memoryless-het", "memoryless-hom"):
            lp.bbar0 = np.full(k, float(old.bbar0))
            if tform == "memoryless-het":
                lp.bbar1 = np.tile(old.bbar1, (k, 1))
        else:
            raise ValueError(f"cannot embed rs form {sform} into {tform}")
        out.obs.phi0 = pset.obs.phi0.copy()
        out.obs.phi1 = pset.obs.phi1.copy()
    out.obs.awr = [a.copy() for a in pset.obs.awr]
    return out


# ---------------------------------------------------------------------------
# EM loop and multi-start driver
# ---------------------------------------------------------------------------

def _em_once(data: PanelDataset, start: ParamSet, config: FitConfig):
    from .stderrors import score_max_norm

    params = start
    ws = workspace_for(data, start.spec)
    trace: list[float] = []
    ll_prev = None
    vec_prev = params.flatten()
    converged = False
    score_norm = None
    diag = {}
    post = None
    for _ in range(config.max_iter):
        post, ll = hmm.e_step(data, params)
        trace.append(ll)
        if ll_prev is not None:
            if ll < ll_prev - MONOTONE_SLACK:
                raise EMDecreaseError(
                    f"log-likelihood decreased from {ll_prev:.10f} to {ll:.10f}")
            vec = params.flatten()
            rel = abs(ll - ll_prev) / max(1.0, abs(ll))
            dpar = float(np.max(np.abs(vec - vec_prev))) if vec.size else 0.0
            if rel < config.tol_loglik and dpar < config.tol_param:
                if config.tol_score is None:
                    converged = True
                    break
                score_norm = score_max_norm(data, params, post)
                if score_norm <= config.tol_score:
                    converged = True
                    break
            vec_prev = vec
        ll_prev = ll
        params, diag = m_step(data, params, post, config, ws)
    return params, trace, converged, score_norm, diag


def fit(data: PanelDataset, spec: ModelSpec, config: FitConfig | None = None,
        extra_starts: tuple[ParamSet, ...] = ()) -> FitResult:
    """Best-of-starts EM fit with canonical state ordering applied at the end."""
    config = config or FitConfig()
    if (spec.p1_L, spec.p1_U, spec.p2_L, spec.p2_U) != (data.p1_L, data.p1_U, data.p2_L, data.p2_U):
        if (spec.p1_L, spec.p1_U, spec.p2_L, spec.p2_U) == (0, 0, 0, 0):
            spec = spec.with_dims(data)
        else:
            raise ValueError("spec covariate dimensions disagree with the data")
    rng = np.random.default_rng(config.seed)
    starts: list[ParamSet] = [random_start(spec, data, rng, config.start_dispersion)
                              for _ in range(config.n_starts)]
    starts.extend(extra_starts)

    best = None
    summaries: list[StartSummary] = []
    for s, start in enumerate(starts):
        try:
            params, trace, conv, score_norm, diag = _em_once(data, start, config)
        except (EMDecreaseError, hmm.NumericalUnderflow) as exc:
            summaries.append(StartSummary(s, float("nan"), 0, False, str(exc)))
            continue
        summaries.append(StartSummary(s, trace[-1], len(trace), conv))
        cand = (trace[-1], -s, params, trace, conv, score_norm, diag)
        if best is None or cand[:2] > best[:2]:
            best = cand
    if best is None:
        raise AllStartsFailed("every EM start failed; see start summaries")
    ll, _, params, trace, conv, score_norm, diag = best
    params, perm, canonical_ok = canonicalize(params)
    return FitResult(
        params=params,
        loglik=ll,
        trace=np.asarray(trace),
        n_iter=len(trace),
        converged=conv,
        n_params=spec.count_params(),
        config=config,
        starts=summaries,
        score_max_norm=score_norm,
        clamped=bool(diag.get("clamped", False)),
        label_permutation=perm,
        canonical=canonical_ok,
    )


def fit_null(data: PanelDataset) -> FitResult:
    """Closed-form independence fit (k=1, no RS): pooled response frequencies."""
    spec = ModelSpec.null(data.cardinalities).with_dims(data)
    pset = ParamSet.zeros(spec)
    ll = 0.0
    for j, c in enumerate(data.cardinalities):
        counts = np.bincount((data.y[:, :, j] - 1).ravel(), minlength=c).astype(float)
        freq = counts / counts.sum()
        obs_cells = counts > 0
        ll += float(counts[obs_cells] @ np.log(freq[obs_cells]))
        pset.obs.awr[j][0] = awr_logits(np.maximum(freq, AWR_FLOOR))
    return FitResult(
        params=pset, loglik=ll, trace=np.asarray([ll]), n_iter=1, converged=True,
        n_params=spec.count_params(), config=FitConfig(max_iter=1),
        starts=[StartSummary(0, ll, 1, True)], label_permutation=np.arange(1),
    )
