"""Initial and transition probabilities of the bivariate latent chain.

All builders come in vectorized row form (R covariate rows at once); scalar
wrappers operate on a single covariate vector. Joint states are indexed
s = u*k + l with u in {0 (RS), 1 (AWR)} and l in 0..k-1.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .modelspec import ModelSpec

# Logit parameters are clamped to this box during fitting; e^(+-20) spans far
# more than any panel's resolution while keeping all arithmetic finite.
PARAM_BOUND = 20.0


def softmax_rows(eta: np.ndarray) -> np.ndarray:
    shifted = eta - eta.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def parallel_adjacent_scores(k: int, ref: int) -> np.ndarray:
    """Scores linear in the state index, normalized to the identifiability pins.

    ref is the 0-based pinned-to-zero category (the baseline state for the
    initial model, the previous state for a transition row); the score of the
    pin category (state 1, or state 2 when ref is state 1) equals one.
    """
    pin = 0 if ref != 0 else 1
    lev = np.arange(k, dtype=float)
    return (lev - ref) / (pin - ref)


@dataclass
class LatentParams:
    """Latent-block parameters; array shapes depend on the spec's forms.

    alpha0: (k-1,) initial-L intercepts for states 2..k.
    alpha1: (k-1, p1_L) per-state rows (baseline) or a shared (p1_L,) vector.
    mu: (k,) initial-L scores with mu[0]=0, mu[1]=1 (None under baseline).
    abar0/abar1: RS-initial binary logit (state 2 = AWR vs state 1 = RS).
    beta0: (k, k) transition intercepts, rows = previous state, zero diagonal.
    beta1: (k, k, p2_L) per-destination rows (baseline) or (k, p2_L) shared.
    nu: (k, k) transition scores with the stereotype pins (None under baseline).
    bbar0/bbar1: RS-transition logit parameters, shaped per rs_form.
    """

    alpha0: np.ndarray
    alpha1: np.ndarray
    mu: np.ndarray | None
    abar0: float
    abar1: np.ndarray
    beta0: np.ndarray
    beta1: np.ndarray
    nu: np.ndarray | None
    bbar0: np.ndarray | float | None
    bbar1: np.ndarray | None

    def copy(self) -> "LatentParams":
        cp = lambda a: None if a is None else (a.copy() if isinstance(a, np.ndarray) else a)
        return LatentParams(*(cp(getattr(self, f)) for f in (
            "alpha0", "alpha1", "mu", "abar0", "abar1", "beta0", "beta1", "nu", "bbar0", "bbar1")))


def zero_latent_params(spec: ModelSpec) -> LatentParams:
    """All-zero free parameters with pinned scores at their neutral values."""
    k = spec.k
    if spec.init_L_form == "baseline":
        alpha1 = np.zeros((k - 1, spec.p1_L))
        mu = None
    else:
        alpha1 = np.zeros(spec.p1_L)
        mu = np.arange(k, dtype=float)
    if spec.trans_L_form == "baseline":
        beta1 = np.zeros((k, k, spec.p2_L))
        nu = None
    else:
        beta1 = np.zeros((k, spec.p2_L))
        if spec.trans_L_form == "parallel-adjacent":
            nu = np.stack([parallel_adjacent_scores(k, lb) for lb in range(k)])
        else:
            nu = 1.0 - np.eye(k)
    p2u = spec.p2_U_eff
    form = spec.rs_form
    if form in ("heterogeneous", "homogeneous"):
        bbar0, bbar1 = np.zeros((k, 2)), (np.zeros((k, 2, p2u)) if form == "heterogeneous" else None)
    elif form in ("memoryless-het", "memoryless-hom"):
        bbar0, bbar1 = np.zeros(k), (np.zeros((k, p2u)) if form == "memoryless-het" else None)
    elif form == "independent":
        bbar0, bbar1 = 0.0, np.zeros(p2u)
    elif form == "factorial":
        bbar0, bbar1 = np.zeros(2), np.zeros((2, p2u))
    else:  # time-invariant, none
        bbar0, bbar1 = None, None
    return LatentParams(
        alpha0=np.zeros(max(k - 1, 0)),
        alpha1=alpha1,
        mu=mu,
        abar0=0.0,
        abar1=np.zeros(spec.p1_U if spec.has_rs else 0),
        beta0=np.zeros((k, k)),
        beta1=beta1,
        nu=nu,
        bbar0=bbar0,
        bbar1=bbar1,
    )


# ---------------------------------------------------------------------------
# probability builders (vectorized over covariate rows)
# ---------------------------------------------------------------------------

def _as_rows(x: np.ndarray, p: int) -> np.ndarray:
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if x.shape[1] != p:
        raise ValueError(f"covariate rows have {x.shape[1]} columns, expected {p}")
    return x


def init_L_eta(spec: ModelSpec, lp: LatentParams, x_rows: np.ndarray) -> np.ndarray:
    """(R, k) initial-L logits relative to state 1."""
    x_rows = _as_rows(x_rows, spec.p1_L)
    eta = np.zeros((x_rows.shape[0], spec.k))
    if spec.k == 1:
        return eta
    if spec.init_L_form == "baseline":
        eta[:, 1:] = lp.alpha0 + x_rows @ lp.alpha1.T
    else:
        eta[:, 1:] = lp.alpha0 + np.outer(x_rows @ lp.alpha1, np.ones(spec.k - 1)) * lp.mu[1:]
    return eta


def initial_probs_L_rows(spec: ModelSpec, lp: LatentParams, x_rows: np.ndarray) -> np.ndarray:
    return softmax_rows(init_L_eta(spec, lp, x_rows))


def initial_probs_L(spec: ModelSpec, lp: LatentParams, x: np.ndarray) -> np.ndarray:
    return initial_probs_L_rows(spec, lp, np.atleast_2d(x))[0]


def init_U_eta(spec: ModelSpec, lp: LatentParams, x_rows: np.ndarray) -> np.ndarray:
    """(R,) logit of the AWR state against the RS state at the first occasion."""
    x_rows = _as_rows(x_rows, spec.p1_U)
    return lp.abar0 + x_rows @ lp.abar1


def initial_probs_U_rows(spec: ModelSpec, lp: LatentParams, x_rows: np.ndarray) -> np.ndarray:
    eta = init_U_eta(spec, lp, x_rows)
    p2 = 1.0 / (1.0 + np.exp(-eta))
    return np.column_stack([1.0 - p2, p2])


def initial_probs_U(spec: ModelSpec, lp: LatentParams, x: np.ndarray) -> np.ndarray:
    return initial_probs_U_rows(spec, lp, np.atleast_2d(x))[0]


def trans_L_eta(spec: ModelSpec, lp: LatentParams, z_rows: np.ndarray) -> np.ndarray:
    """(R, k, k) transition-L logits; axis 1 = previous state, axis 2 = destination."""
    z_rows = _as_rows(z_rows, spec.p2_L)
    R, k = z_rows.shape[0], spec.k
    if k == 1:
        return np.zeros((R, 1, 1))
    if spec.trans_L_form == "baseline":
        eta = lp.beta0[None, :, :] + np.einsum("rp,mlp->rml", z_rows, lp.beta1)
    else:
        eta = lp.beta0[None, :, :] + (z_rows @ lp.beta1.T)[:, :, None] * lp.nu[None, :, :]
    return eta


def transition_probs_L_rows(spec: ModelSpec, lp: LatentParams, z_rows: np.ndarray) -> np.ndarray:
    return softmax_rows(trans_L_eta(spec, lp, z_rows))


def transition_probs_L(spec: ModelSpec, lp: LatentParams, z: np.ndarray, prev_state: int) -> np.ndarray:
    """Row of the construct transition kernel from 1-based prev_state."""
    if not 1 <= prev_state <= spec.k:
        raise ValueError(f"previous state {prev_state} outside 1..{spec.k}")
    return transition_probs_L_rows(spec, lp, np.atleast_2d(z))[0, prev_state - 1]


def trans_U_eta(spec: ModelSpec, lp: LatentParams, z_rows: np.ndarray) -> np.ndarray:
    """(R, k, 2) AWR-vs-RS logits indexed by (current l, previous u)."""
    z_rows = _as_rows(z_rows, spec.p2_U_eff)
    R, k = z_rows.shape[0], spec.k
    form = spec.rs_form
    if form == "heterogeneous":
        return lp.bbar0[None, :, :] + np.einsum("rp,lvp->rlv", z_rows, lp.bbar1)
    if form == "homogeneous":
        return np.broadcast_to(lp.bbar0[None, :, :], (R, k, 2)).copy()
    if form == "memoryless-het":
        eta_l = lp.bbar0[None, :] + z_rows @ lp.bbar1.T
        return np.repeat(eta_l[:, :, None], 2, axis=2)
    if form == "memoryless-hom":
        return np.broadcast_to(lp.bbar0[None, :, None], (R, k, 2)).copy()
    if form == "independent":
        eta = lp.bbar0 + z_rows @ lp.bbar1
        return np.broadcast_to(eta[:, None, None], (R, k, 2)).copy()
    if form == "factorial":
        eta_v = lp.bbar0[None, :] + z_rows @ lp.bbar1.T
        return np.repeat(eta_v[:, None, :], k, axis=1)
    raise ValueError(f"rs_form {form!r} has no U-transition logits")


def transition_probs_U_rows(spec: ModelSpec, lp: LatentParams, z_rows: np.ndarray) -> np.ndarray:
    """(R, k, 2, 2) conditional RS kernel pi(u | l, u_prev); last axis is u."""
    z_rows = _as_rows(z_rows, spec.p2_U_eff)
    R, k = z_rows.shape[0], spec.k
    if spec.rs_form == "time-invariant":
        out = np.zeros((R, k, 2, 2))
        out[:, :, 0, 0] = 1.0
        out[:, :, 1, 1] = 1.0
        return out
    eta = trans_U_eta(spec, lp, z_rows)
    p2 = 1.0 / (1.0 + np.exp(-eta))
    out = np.empty((R, k, 2, 2))
    out[:, :, :, 0] = 1.0 - p2
    out[:, :, :, 1] = p2
    return out


def transition_probs_U(spec: ModelSpec, lp: LatentParams, z: np.ndarray, l: int, u_prev: int) -> np.ndarray:
    """Conditional RS transition row for 1-based construct state l and previous u."""
    if not 1 <= l <= spec.k:
        raise ValueError(f"state {l} outside 1..{spec.k}")
    if u_prev not in (1, 2):
        raise ValueError(f"RS indicator state {u_prev} outside {{1, 2}}")
    return transition_probs_U_rows(spec, lp, np.atleast_2d(z))[0, l - 1, u_prev - 1]


def bivariate_kernel_rows(spec: ModelSpec, lp: LatentParams, z_L_rows, z_U_rows) -> np.ndarray:
    """(R, S, S) joint transition matrices over states s = u*k + l."""
    PL = transition_probs_L_rows(spec, lp, z_L_rows)  # (R, k, k)
    if not spec.has_rs:
        return PL
    PU = transition_probs_U_rows(spec, lp, z_U_rows)  # (R, k, 2, 2)
    R, k = PL.shape[0], spec.k
    # out[r, (v,m), (u,l)] = PU[r, l, v, u] * PL[r, m, l]
    out = np.einsum("rlvu,rml->rvmul", PU, PL)
    return out.reshape(R, 2 * k, 2 * k)


def bivariate_kernel(spec: ModelSpec, lp: LatentParams, z_L, z_U) -> np.ndarray:
    return bivariate_kernel_rows(spec, lp, np.atleast_2d(z_L), np.atleast_2d(z_U))[0]


def initial_joint_rows(spec: ModelSpec, lp: LatentParams, x_L_rows, x_U_rows) -> np.ndarray:
    """(R, S) initial distribution of the joint chain (independent components)."""
    PL = initial_probs_L_rows(spec, lp, x_L_rows)
    if not spec.has_rs:
        return PL
    PU = initial_probs_U_rows(spec, lp, x_U_rows)
    return np.einsum("rv,rl->rvl", PU, PL).reshape(PL.shape[0], 2 * spec.k)
