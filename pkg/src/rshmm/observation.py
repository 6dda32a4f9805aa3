"""Conditional response probability functions for the RS and AWR regimes.

The RS regime uses a two-parameter local-logit family over an ordinal scale,
f(y+1)/f(y) = exp(phi0 + phi1 * s(y)) with the ternary midpoint score s; the
AWR regime is saturated, parameterized by adjacent-category logits.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

MODE_LABELS = ("ARS", "DRS", "MRS", "ERS", "CRS")


def score_function(c: int, y: int) -> int:
    """Ternary midpoint score: +1 below c/2, 0 at c/2, -1 above; y in 1..c-1."""
    if not 1 <= y <= c - 1:
        raise ValueError(f"score is defined for y in 1..{c - 1}, got {y}")
    half = c / 2.0
    if y < half:
        return 1
    if y == half:
        return 0
    return -1


def score_vector(c: int) -> np.ndarray:
    """All c-1 adjacent scores for a scale with c categories."""
    return np.array([score_function(c, y) for y in range(1, c)], dtype=float)


def rs_design(c: int) -> np.ndarray:
    """Design mapping (phi0, phi1) to the c log masses of the RS family.

    Row y (0-based) is (y, sum of the first y scores), so that
    log f(y) = y*phi0 + cumscore(y)*phi1 up to normalization.
    """
    cum = np.concatenate([[0.0], np.cumsum(score_vector(c))])
    return np.column_stack([np.arange(c, dtype=float), cum])


def rs_pmf(c: int, phi0: float, phi1: float) -> np.ndarray:
    """RS-regime pmf over 1..c; uniform at phi0 = phi1 = 0."""
    logf = rs_design(c) @ np.array([phi0, phi1], dtype=float)
    return np.exp(logf - logsumexp(logf))


def awr_pmf(c: int, logits: np.ndarray) -> np.ndarray:
    """AWR-regime pmf from its c-1 adjacent-category logits."""
    logits = np.asarray(logits, dtype=float)
    if logits.shape != (c - 1,):
        raise ValueError(f"expected {c - 1} adjacent logits, got shape {logits.shape}")
    logf = np.concatenate([[0.0], np.cumsum(logits)])
    return np.exp(logf - logsumexp(logf))


def awr_logits(pmf: np.ndarray) -> np.ndarray:
    """Inverse of awr_pmf: adjacent-category logits of a positive pmf."""
    pmf = np.asarray(pmf, dtype=float)
    if np.any(pmf <= 0):
        raise ValueError("pmf must be strictly positive")
    return np.diff(np.log(pmf))


@dataclass(frozen=True)
class ModeClass:
    """Shape classification of an RS pmf: label, tie flag, and the mode set."""

    label: str
    tie: bool
    modes: tuple[int, ...]  # 1-based categories attaining the maximum

    def __str__(self):
        return self.label


def rs_mode_class(c: int, phi0: float, phi1: float) -> ModeClass:
    """Classify an RS pmf as ARS/DRS/MRS/ERS/CRS by the sign rules.

    Boundary equalities (|phi0| = |phi1|, or phi0 = 0 with multiple maxima)
    keep the label of the adjoining extreme-side region and set ``tie``.
    """
    if phi0 == 0.0 and phi1 == 0.0:
        return ModeClass("CRS", True, tuple(range(1, c + 1)))
    pmf = rs_pmf(c, phi0, phi1)
    top = pmf.max()
    modes = tuple(int(y + 1) for y in np.flatnonzero(pmf >= top * (1.0 - 1e-9)))
    if abs(phi0) >= abs(phi1):
        label = "ARS" if phi0 > 0 else "DRS"
    elif phi1 > 0:
        label = "MRS"
    else:
        label = "ERS"
    return ModeClass(label, len(modes) > 1, modes)


@dataclass
class ObservationParams:
    """Observation-block parameters for all joint states.

    phi0, phi1: (k, r) RS local-logit parameters (None when the model has no
    RS regime); awr: one (k, c_j - 1) array of adjacent-category logits per
    response.
    """

    cardinalities: tuple[int, ...]
    phi0: np.ndarray | None
    phi1: np.ndarray | None
    awr: list[np.ndarray]

    @property
    def k(self) -> int:
        return self.awr[0].shape[0]

    @property
    def r(self) -> int:
        return len(self.cardinalities)

    @property
    def has_rs(self) -> bool:
        return self.phi0 is not None

    def rs_table(self, j: int) -> np.ndarray:
        """(k, c_j) RS-regime pmfs for response j."""
        c = self.cardinalities[j]
        logf = np.column_stack([self.phi0[:, j], self.phi1[:, j]]) @ rs_design(c).T
        logf -= logf.max(axis=1, keepdims=True)
        f = np.exp(logf)
        return f / f.sum(axis=1, keepdims=True)

    def awr_table(self, j: int) -> np.ndarray:
        """(k, c_j) AWR-regime pmfs for response j."""
        k = self.awr[j].shape[0]
        logf = np.concatenate([np.zeros((k, 1)), np.cumsum(self.awr[j], axis=1)], axis=1)
        logf -= logf.max(axis=1, keepdims=True)
        f = np.exp(logf)
        return f / f.sum(axis=1, keepdims=True)

    def emission_tables(self) -> list[np.ndarray]:
        """Per response j, an (S, c_j) table over joint states s = u*k + l."""
        out = []
        for j in range(self.r):
            awr = self.awr_table(j)
            out.append(np.vstack([self.rs_table(j), awr]) if self.has_rs else awr)
        return out

    def copy(self) -> "ObservationParams":
        return ObservationParams(
            self.cardinalities,
            None if self.phi0 is None else self.phi0.copy(),
            None if self.phi1 is None else self.phi1.copy(),
            [a.copy() for a in self.awr],
        )


def emission_vector(obs: ObservationParams, y_row: np.ndarray) -> np.ndarray:
    """Emission probabilities of one occasion's responses, per joint state.

    y_row holds 1-based categories, one per response; contemporaneous
    independence makes the emission a product over responses.
    """
    y_row = np.asarray(y_row, dtype=int)
    tables = obs.emission_tables()
    out = np.ones(tables[0].shape[0])
    for j in range(obs.r):
        if not 1 <= y_row[j] <= obs.cardinalities[j]:
            raise ValueError(f"category {y_row[j]} outside 1..{obs.cardinalities[j]} for response {j + 1}")
        out *= tables[j][:, y_row[j] - 1]
    return out


def response_grid(cardinalities: tuple[int, ...]) -> np.ndarray:
    """All response configurations as 1-based category rows, first response slowest."""
    grids = np.meshgrid(*[np.arange(1, c + 1) for c in cardinalities], indexing="ij")
    return np.stack([g.ravel() for g in grids], axis=1)


def grid_emission_matrix(obs: ObservationParams) -> np.ndarray:
    """(S, prod c_j) emission probabilities over the full response grid."""
    tables = obs.emission_tables()
    grid = response_grid(obs.cardinalities)
    out = np.ones((tables[0].shape[0], grid.shape[0]))
    for j in range(obs.r):
        out *= tables[j][:, grid[:, j] - 1]
    return out
