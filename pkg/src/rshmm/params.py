"""Full parameter sets: packing, serialization, canonical state ordering."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import blocks
from .latent import LatentParams, parallel_adjacent_scores, zero_latent_params
from .modelspec import ModelSpec
from .observation import ObservationParams, awr_pmf


@dataclass
class ParamSet:
    """All model parameters together with their structural spec."""

    spec: ModelSpec
    latent: LatentParams
    obs: ObservationParams

    @classmethod
    def zeros(cls, spec: ModelSpec) -> "ParamSet":
        lp = zero_latent_params(spec)
        k, cards = spec.k, spec.cardinalities
        phi0 = np.zeros((k, spec.r)) if spec.has_rs else None
        phi1 = np.zeros((k, spec.r)) if spec.has_rs else None
        awr = [np.zeros((k, c - 1)) for c in cards]
        return cls(spec, lp, ObservationParams(cards, phi0, phi1, awr))

    def copy(self) -> "ParamSet":
        return ParamSet(self.spec, self.latent.copy(), self.obs.copy())

    def flatten(self) -> np.ndarray:
        return blocks.flatten(self.spec, self.latent, self.obs)

    @classmethod
    def unflatten(cls, spec: ModelSpec, vec: np.ndarray) -> "ParamSet":
        lp, obs = blocks.unflatten(spec, vec)
        return cls(spec, lp, obs)

    @property
    def n_params(self) -> int:
        return self.spec.count_params()

    # -- serialization ----------------------------------------------------

    def to_dict(self) -> dict:
        lp, obs = self.latent, self.obs
        arr = lambda a: None if a is None else np.asarray(a).tolist()
        return {
            "spec": self.spec.to_dict(),
            "pi_L1": {"alpha0": arr(lp.alpha0), "mu": arr(lp.mu), "alpha1": arr(lp.alpha1)},
            "pi_U1": {"alpha0": float(lp.abar0), "alpha1": arr(lp.abar1)},
            "pi_L_trans": {"beta0": arr(lp.beta0), "nu": arr(lp.nu), "beta1": arr(lp.beta1)},
            "pi_U_given_L": {
                "form": self.spec.rs_form,
                "beta0": arr(lp.bbar0) if isinstance(lp.bbar0, np.ndarray) else lp.bbar0,
                "beta1": arr(lp.bbar1),
            },
            "f_rs": {"phi0": arr(obs.phi0), "phi1": arr(obs.phi1)},
            "f_awr": [arr(a) for a in obs.awr],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ParamSet":
        spec = ModelSpec.from_dict(d["spec"])
        pset = cls.zeros(spec)
        lp, obs = pset.latent, pset.obs
        g = lambda x: np.asarray(x, dtype=float)
        lp.alpha0 = g(d["pi_L1"]["alpha0"])
        if d["pi_L1"]["mu"] is not None:
            lp.mu = g(d["pi_L1"]["mu"])
        lp.alpha1 = g(d["pi_L1"]["alpha1"])
        lp.abar0 = float(d["pi_U1"]["alpha0"])
        lp.abar1 = g(d["pi_U1"]["alpha1"])
        lp.beta0 = g(d["pi_L_trans"]["beta0"])
        if d["pi_L_trans"]["nu"] is not None:
            lp.nu = g(d["pi_L_trans"]["nu"])
        lp.beta1 = g(d["pi_L_trans"]["beta1"])
        b0 = d["pi_U_given_L"]["beta0"]
        lp.bbar0 = float(b0) if isinstance(b0, (int, float)) else (None if b0 is None else g(b0))
        b1 = d["pi_U_given_L"]["beta1"]
        lp.bbar1 = None if b1 is None else g(b1)
        if d["f_rs"]["phi0"] is not None:
            obs.phi0 = g(d["f_rs"]["phi0"])
            obs.phi1 = g(d["f_rs"]["phi1"])
        obs.awr = [g(a) for a in d["f_awr"]]
        return pset


# ---------------------------------------------------------------------------
# canonical state ordering
# ---------------------------------------------------------------------------

def state_order_keys(pset: ParamSet) -> np.ndarray:
    """(k, r) expected AWR-regime response values used to sort the states."""
    obs = pset.obs
    keys = np.zeros((obs.k, obs.r))
    for j, c in enumerate(obs.cardinalities):
        cats = np.arange(1, c + 1)
        for l in range(obs.k):
            keys[l, j] = awr_pmf(c, obs.awr[j][l]) @ cats
    return keys


def canonical_permutation(pset: ParamSet) -> np.ndarray:
    """perm[new_state] = old_state, sorting by expected AWR response values."""
    keys = state_order_keys(pset)
    cols = [keys[:, j] for j in range(keys.shape[1] - 1, -1, -1)]
    cols.insert(0, np.arange(pset.spec.k))  # last resort: original index
    return np.lexsort(cols)


def apply_state_permutation(pset: ParamSet, perm: np.ndarray) -> tuple["ParamSet", bool]:
    """Relabel construct states; returns (relabeled params, ok flag).

    The stereotype pins are restored by rescaling scores and shared
    coefficient vectors; a near-zero rescaling constant (indistinguishable
    pinned states) or a non-reversal permutation of a parallel-adjacent
    block makes the permutation unrepresentable and the original parameters
    are returned with ok=False.
    """
    spec = pset.spec
    k = spec.k
    perm = np.asarray(perm, dtype=int)
    if k == 1 or np.array_equal(perm, np.arange(k)):
        return pset.copy(), True
    out = pset.copy()
    lp, obs = out.latent, out.obs
    old = pset.latent

    # observation blocks just permute rows
    if obs.phi0 is not None:
        obs.phi0 = obs.phi0[perm]
        obs.phi1 = obs.phi1[perm]
    obs.awr = [a[perm] for a in obs.awr]

    # initial construct block
    A0 = np.concatenate([[0.0], old.alpha0])
    new_A0 = A0[perm] - A0[perm[0]]
    lp.alpha0 = new_A0[1:]
    if spec.init_L_form == "baseline":
        A1 = np.vstack([np.zeros(spec.p1_L), old.alpha1])
        lp.alpha1 = (A1[perm] - A1[perm[0]])[1:]
    else:
        c = old.mu[perm[1]] - old.mu[perm[0]]
        if abs(c) < 1e-8:
            return pset.copy(), False
        mu = (old.mu[perm] - old.mu[perm[0]]) / c
        if spec.init_L_form == "parallel-adjacent" and not np.allclose(mu, np.arange(k)):
            return pset.copy(), False
        lp.mu = mu
        lp.alpha1 = c * old.alpha1

    # construct transition blocks
    if spec.trans_L_form == "baseline":
        lp.beta0 = old.beta0[np.ix_(perm, perm)]
        lp.beta1 = old.beta1[np.ix_(perm, perm)]
    else:
        for lb in range(k):
            ob = perm[lb]
            pin = blocks.stereo_pin(lb)
            c = old.nu[ob, perm[pin]]
            if abs(c) < 1e-8:
                return pset.copy(), False
            lp.nu[lb] = old.nu[ob, perm] / c
            lp.beta0[lb] = old.beta0[ob, perm]
            lp.beta1[lb] = c * old.beta1[ob]
        if spec.trans_L_form == "parallel-baseline":
            target = 1.0 - np.eye(k)
            if not np.allclose(lp.nu, target):
                return pset.copy(), False
            lp.nu = target
        elif spec.trans_L_form == "parallel-adjacent":
            target = np.stack([parallel_adjacent_scores(k, lb) for lb in range(k)])
            if not np.allclose(lp.nu, target):
                return pset.copy(), False
            lp.nu = target

    # RS transition blocks indexed by the construct state
    if spec.rs_form in ("heterogeneous", "homogeneous", "memoryless-het", "memoryless-hom"):
        lp.bbar0 = old.bbar0[perm]
        if old.bbar1 is not None:
            lp.bbar1 = old.bbar1[perm]
    return out, True


def canonicalize(pset: ParamSet) -> tuple["ParamSet", np.ndarray, bool]:
    """Sort construct states by expected AWR response values (ascending)."""
    perm = canonical_permutation(pset)
    new, ok = apply_state_permutation(pset, perm)
    if not ok:
        return pset.copy(), np.arange(pset.spec.k), False
    return new, perm, True
