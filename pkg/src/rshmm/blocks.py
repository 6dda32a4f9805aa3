"""Parameter layout shared by the M-step, the scores, and serialization.

The free parameter vector is the concatenation of per-block subvectors in a
fixed walk order (initial construct, initial regime, construct transitions by
previous state, regime transitions, RS emissions, AWR emissions). Each block
is a weighted multinomial logit problem; ``block_design`` returns the linear
predictors and their Jacobian with respect to the block's subvector, in the
same ordering as ``flatten``/``unflatten``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .latent import LatentParams, init_L_eta, init_U_eta, trans_L_eta, trans_U_eta
from .modelspec import ModelSpec
from .observation import ObservationParams, rs_design


def stereo_pin(ref: int) -> int:
    """0-based category whose score is pinned to one, given the zero-pinned ref."""
    return 0 if ref != 0 else 1


def free_score_indices(k: int, ref: int) -> list[int]:
    pin = stereo_pin(ref)
    return [l for l in range(k) if l not in (ref, pin)]


@dataclass(frozen=True)
class Block:
    key: str
    sl: slice
    family: str          # baseline | stereotype | parallel | binary | rs | awr
    n_categories: int
    ref: int             # 0-based reference category


@dataclass
class ParamLayout:
    spec: ModelSpec
    blocks: list[Block]
    names: list[str]

    @property
    def size(self) -> int:
        return self.blocks[-1].sl.stop if self.blocks else 0

    def slice_of(self, key: str) -> slice:
        for b in self.blocks:
            if b.key == key:
                return b.sl
        raise KeyError(key)


def _trans_u_keys(spec: ModelSpec) -> list[str]:
    form = spec.rs_form
    k = spec.k
    if form in ("heterogeneous", "homogeneous"):
        return [f"transU[{l},{v}]" for v in range(2) for l in range(k)]
    if form in ("memoryless-het", "memoryless-hom"):
        return [f"transU[{l}]" for l in range(k)]
    if form == "independent":
        return ["transU"]
    if form == "factorial":
        return [f"transU[u{v}]" for v in range(2)]
    return []


def _default_names(prefix: str, p: int) -> list[str]:
    return [f"{prefix}{i + 1}" for i in range(p)]


def build_layout(
    spec: ModelSpec,
    x_L_names=None,
    x_U_names=None,
    z_L_names=None,
    z_U_names=None,
) -> ParamLayout:
    k, r = spec.k, spec.r
    xL = list(x_L_names) if x_L_names else _default_names("xL", spec.p1_L)
    xU = list(x_U_names) if x_U_names else _default_names("xU", spec.p1_U)
    zL = list(z_L_names) if z_L_names else _default_names("zL", spec.p2_L)
    zU = list(z_U_names) if z_U_names else _default_names("zU", spec.p2_U_eff)
    zU = zU[: spec.p2_U_eff]

    blocks: list[Block] = []
    names: list[str] = []
    pos = 0

    def add(key, family, C, ref, block_names):
        nonlocal pos
        blocks.append(Block(key, slice(pos, pos + len(block_names)), family, C, ref))
        names.extend(block_names)
        pos += len(block_names)

    if k >= 2:
        bn = [f"pi_L1.alpha0[{l + 1}]" for l in range(1, k)]
        fam = "baseline"
        if spec.init_L_form == "stereotype":
            fam = "stereotype"
            bn += [f"pi_L1.mu[{l + 1}]" for l in free_score_indices(k, 0)]
            bn += [f"pi_L1.alpha1[{c}]" for c in xL]
        elif spec.init_L_form == "parallel-adjacent":
            fam = "parallel"
            bn += [f"pi_L1.alpha1[{c}]" for c in xL]
        else:
            bn += [f"pi_L1.alpha1[{l + 1}][{c}]" for l in range(1, k) for c in xL]
        add("initL", fam, k, 0, bn)

    if spec.has_rs:
        bn = ["pi_U1.alpha0"] + [f"pi_U1.alpha1[{c}]" for c in xU]
        add("initU", "binary", 2, 0, bn)

    if k >= 2:
        for lb in range(k):
            dest = [l for l in range(k) if l != lb]
            bn = [f"pi_L_trans.beta0[{l + 1}|{lb + 1}]" for l in dest]
            fam = "baseline"
            if spec.trans_L_form == "stereotype":
                fam = "stereotype"
                bn += [f"pi_L_trans.nu[{l + 1}|{lb + 1}]" for l in free_score_indices(k, lb)]
                bn += [f"pi_L_trans.beta1[{lb + 1}][{c}]" for c in zL]
            elif spec.trans_L_form in ("parallel-baseline", "parallel-adjacent"):
                fam = "parallel"
                bn += [f"pi_L_trans.beta1[{lb + 1}][{c}]" for c in zL]
            else:
                bn += [f"pi_L_trans.beta1[{l + 1}|{lb + 1}][{c}]" for l in dest for c in zL]
            add(f"transL[{lb}]", fam, k, lb, bn)

    for key in _trans_u_keys(spec):
        tag = key[len("transU"):]
        if tag.startswith("[") :
            inner = tag[1:-1]
            if inner.startswith("u"):
                label = f"u={int(inner[1:]) + 1}"
            elif "," in inner:
                l, v = inner.split(",")
                label = f"l={int(l) + 1},u={int(v) + 1}"
            else:
                label = f"l={int(inner) + 1}"
        else:
            label = "all"
        bn = [f"pi_U_given_L.beta0[{label}]"] + [f"pi_U_given_L.beta1[{label}][{c}]" for c in zU]
        add(key, "binary", 2, 0, bn)

    if spec.has_rs:
        for l in range(k):
            for j in range(r):
                add(f"rs[{l},{j}]", "rs", spec.cardinalities[j], 0,
                    [f"f_rs.phi0[l={l + 1},j={j + 1}]", f"f_rs.phi1[l={l + 1},j={j + 1}]"])

    for l in range(k):
        for j in range(r):
            cj = spec.cardinalities[j]
            add(f"awr[{l},{j}]", "awr", cj, 0,
                [f"f_awr.logit[l={l + 1},j={j + 1},y={y}]" for y in range(1, cj)])

    return ParamLayout(spec, blocks, names)


@lru_cache(maxsize=128)
def default_layout(spec: ModelSpec) -> ParamLayout:
    """Layout with generic covariate names, memoized per spec."""
    return build_layout(spec)


# ---------------------------------------------------------------------------
# flatten / unflatten
# ---------------------------------------------------------------------------

def flatten(spec: ModelSpec, lp: LatentParams, obs: ObservationParams) -> np.ndarray:
    k = spec.k
    parts: list[np.ndarray] = []
    if k >= 2:
        seg = [lp.alpha0]
        if spec.init_L_form == "stereotype":
            seg.append(lp.mu[free_score_indices(k, 0)])
        seg.append(np.ravel(lp.alpha1))
        parts.extend(seg)
    if spec.has_rs:
        parts.append(np.concatenate([[lp.abar0], lp.abar1]))
    if k >= 2:
        for lb in range(k):
            dest = [l for l in range(k) if l != lb]
            seg = [lp.beta0[lb, dest]]
            if spec.trans_L_form == "stereotype":
                seg.append(lp.nu[lb, free_score_indices(k, lb)])
            if spec.trans_L_form == "baseline":
                seg.append(lp.beta1[lb, dest, :].ravel())
            else:
                seg.append(lp.beta1[lb])
            parts.extend(seg)
    form = spec.rs_form
    if form in ("heterogeneous", "homogeneous"):
        for v in range(2):
            for l in range(k):
                vec = [np.atleast_1d(lp.bbar0[l, v])]
                if form == "heterogeneous":
                    vec.append(lp.bbar1[l, v])
                parts.extend(vec)
    elif form in ("memoryless-het", "memoryless-hom"):
        for l in range(k):
            vec = [np.atleast_1d(lp.bbar0[l])]
            if form == "memoryless-het":
                vec.append(lp.bbar1[l])
            parts.extend(vec)
    elif form == "independent":
        parts.append(np.concatenate([[lp.bbar0], lp.bbar1]))
    elif form == "factorial":
        for v in range(2):
            parts.extend([np.atleast_1d(lp.bbar0[v]), lp.bbar1[v]])
    if spec.has_rs:
        for l in range(k):
            for j in range(spec.r):
                parts.append(np.array([obs.phi0[l, j], obs.phi1[l, j]]))
    for l in range(k):
        for j in range(spec.r):
            parts.append(obs.awr[j][l])
    if not parts:
        return np.zeros(0)
    return np.concatenate([np.asarray(p, dtype=float).ravel() for p in parts])


def unflatten(spec: ModelSpec, vec: np.ndarray) -> tuple[LatentParams, ObservationParams]:
    from .latent import zero_latent_params

    vec = np.asarray(vec, dtype=float)
    lp = zero_latent_params(spec)
    k, r = spec.k, spec.r
    pos = 0

    def take(m):
        nonlocal pos
        out = vec[pos:pos + m]
        if out.size != m:
            raise ValueError("parameter vector too short")
        pos += m
        return out

    if k >= 2:
        lp.alpha0 = take(k - 1).copy()
        if spec.init_L_form == "stereotype":
            lp.mu[free_score_indices(k, 0)] = take(max(k - 2, 0))
        if spec.init_L_form == "baseline":
            lp.alpha1 = take((k - 1) * spec.p1_L).reshape(k - 1, spec.p1_L).copy()
        else:
            lp.alpha1 = take(spec.p1_L).copy()
    if spec.has_rs:
        lp.abar0 = float(take(1)[0])
        lp.abar1 = take(spec.p1_U).copy()
    if k >= 2:
        for lb in range(k):
            dest = [l for l in range(k) if l != lb]
            lp.beta0[lb, dest] = take(k - 1)
            if spec.trans_L_form == "stereotype":
                lp.nu[lb, free_score_indices(k, lb)] = take(max(k - 2, 0))
            if spec.trans_L_form == "baseline":
                lp.beta1[lb, dest, :] = take((k - 1) * spec.p2_L).reshape(k - 1, spec.p2_L)
            else:
                lp.beta1[lb] = take(spec.p2_L)
    form = spec.rs_form
    p2u = spec.p2_U_eff
    if form in ("heterogeneous", "homogeneous"):
        for v in range(2):
            for l in range(k):
                lp.bbar0[l, v] = take(1)[0]
                if form == "heterogeneous":
                    lp.bbar1[l, v] = take(p2u)
    elif form in ("memoryless-het", "memoryless-hom"):
        for l in range(k):
            lp.bbar0[l] = take(1)[0]
            if form == "memoryless-het":
                lp.bbar1[l] = take(p2u)
    elif form == "independent":
        lp.bbar0 = float(take(1)[0])
        lp.bbar1 = take(p2u).copy()
    elif form == "factorial":
        for v in range(2):
            lp.bbar0[v] = take(1)[0]
            lp.bbar1[v] = take(p2u)

    cards = spec.cardinalities
    if spec.has_rs:
        phi0 = np.zeros((k, r))
        phi1 = np.zeros((k, r))
        for l in range(k):
            for j in range(r):
                phi0[l, j], phi1[l, j] = take(2)
    else:
        phi0 = phi1 = None
    awr = [np.zeros((k, c - 1)) for c in cards]
    for l in range(k):
        for j in range(r):
            awr[j][l] = take(cards[j] - 1)
    if pos != vec.size:
        raise ValueError(f"parameter vector has {vec.size} entries, expected {pos}")
    return lp, ObservationParams(cards, phi0, phi1, awr)


# ---------------------------------------------------------------------------
# block designs: linear predictors and Jacobians in layout order
# ---------------------------------------------------------------------------

def design_init_L(spec: ModelSpec, lp: LatentParams, x_rows: np.ndarray):
    """eta (R, k) and Jacobian (R, k, P) of the initial-construct block."""
    x_rows = np.atleast_2d(x_rows)
    R, k, p = x_rows.shape[0], spec.k, spec.p1_L
    eta = init_L_eta(spec, lp, x_rows)
    if spec.init_L_form == "baseline":
        P = (k - 1) * (1 + p)
        X = np.zeros((R, k, P))
        for l in range(1, k):
            X[:, l, l - 1] = 1.0
            X[:, l, (k - 1) + (l - 1) * p:(k - 1) + l * p] = x_rows
        return eta, X
    n_free = k - 2 if spec.init_L_form == "stereotype" else 0
    P = (k - 1) + n_free + p
    X = np.zeros((R, k, P))
    xb = x_rows @ lp.alpha1
    for l in range(1, k):
        X[:, l, l - 1] = 1.0
        X[:, l, (k - 1) + n_free:] = lp.mu[l] * x_rows
    for i, l in enumerate(free_score_indices(k, 0)):
        X[:, l, (k - 1) + i] = xb
    return eta, X


def design_init_U(spec: ModelSpec, lp: LatentParams, x_rows: np.ndarray):
    """eta (R, 2) and Jacobian (R, 2, 1 + p1_U) of the RS-initial block."""
    x_rows = np.atleast_2d(x_rows)
    R = x_rows.shape[0]
    eta2 = init_U_eta(spec, lp, x_rows)
    eta = np.column_stack([np.zeros(R), eta2])
    X = np.zeros((R, 2, 1 + spec.p1_U))
    X[:, 1, 0] = 1.0
    X[:, 1, 1:] = x_rows
    return eta, X


def design_trans_L(spec: ModelSpec, lp: LatentParams, z_rows: np.ndarray, lb: int):
    """eta (R, k) and Jacobian for the transition block with previous state lb."""
    z_rows = np.atleast_2d(z_rows)
    R, k, p = z_rows.shape[0], spec.k, spec.p2_L
    eta = trans_L_eta(spec, lp, z_rows)[:, lb, :]
    dest = [l for l in range(k) if l != lb]
    if spec.trans_L_form == "baseline":
        P = (k - 1) * (1 + p)
        X = np.zeros((R, k, P))
        for i, l in enumerate(dest):
            X[:, l, i] = 1.0
            X[:, l, (k - 1) + i * p:(k - 1) + (i + 1) * p] = z_rows
        return eta, X
    free = free_score_indices(k, lb) if spec.trans_L_form == "stereotype" else []
    P = (k - 1) + len(free) + p
    X = np.zeros((R, k, P))
    zb = z_rows @ lp.beta1[lb]
    for i, l in enumerate(dest):
        X[:, l, i] = 1.0
        X[:, l, (k - 1) + len(free):] = lp.nu[lb, l] * z_rows
    for i, l in enumerate(free):
        X[:, l, (k - 1) + i] = zb
    return eta, X


def design_trans_U(spec: ModelSpec, lp: LatentParams, z_rows: np.ndarray, key: str):
    """eta (R, 2) and Jacobian for one RS-transition logit block."""
    z_rows = np.atleast_2d(z_rows)
    R = z_rows.shape[0]
    form = spec.rs_form
    eta_all = trans_U_eta(spec, lp, z_rows)  # (R, k, 2)
    inner = key[len("transU"):].strip("[]")
    with_cov = form in ("heterogeneous", "memoryless-het", "independent", "factorial")
    p = spec.p2_U_eff if with_cov else 0
    if form in ("heterogeneous", "homogeneous"):
        l, v = (int(s) for s in inner.split(","))
        eta2 = eta_all[:, l, v]
    elif form in ("memoryless-het", "memoryless-hom"):
        eta2 = eta_all[:, int(inner), 0]
    elif form == "independent":
        eta2 = eta_all[:, 0, 0]
    elif form == "factorial":
        eta2 = eta_all[:, 0, int(inner[1:])]
    else:
        raise ValueError(f"no transition block for rs_form {form!r}")
    eta = np.column_stack([np.zeros(R), eta2])
    X = np.zeros((R, 2, 1 + p))
    X[:, 1, 0] = 1.0
    if p:
        X[:, 1, 1:] = z_rows
    return eta, X


def design_rs(obs: ObservationParams, l: int, j: int):
    """eta (c_j,) and the constant (c_j, 2) design of one RS emission block."""
    c = obs.cardinalities[j]
    X = rs_design(c)
    eta = X @ np.array([obs.phi0[l, j], obs.phi1[l, j]])
    return eta, X


def design_awr(obs: ObservationParams, l: int, j: int):
    """eta (c_j,) and the constant (c_j, c_j - 1) design of one AWR block."""
    c = obs.cardinalities[j]
    X = (np.arange(c)[:, None] > np.arange(c - 1)[None, :]).astype(float)
    eta = np.concatenate([[0.0], np.cumsum(obs.awr[j][l])])
    return eta, X
