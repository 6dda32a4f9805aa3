"""Panel simulation from a fully specified model; powers bootstrap and
parameter-recovery studies."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .latent import (
    initial_probs_L_rows,
    initial_probs_U_rows,
    transition_probs_L_rows,
    transition_probs_U_rows,
)
from .panel import PanelDataset
from .params import ParamSet

# Binary covariate profile mirroring a household-survey design: gender,
# self-employed, housekeeper/retired/student, children, debts, savings,
# low education.
SHIW_NAMES = ("G", "Jse", "Jhrs", "CH", "D", "S", "E")
SHIW_PREVALENCES = (0.27, 0.10, 0.47, 0.34, 0.22, 0.83, 0.62)


@dataclass
class CovariateDesign:
    """Independent binary covariate columns with given prevalences, assigned
    to the four covariate blocks by name; transition covariates default to
    time-constant copies of the initial ones."""

    names: list[str]
    prevalences: np.ndarray
    x_L: list[str] = field(default_factory=list)
    x_U: list[str] = field(default_factory=list)
    z_L: list[str] = field(default_factory=list)
    z_U: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.prevalences = np.asarray(self.prevalences, dtype=float)
        if self.prevalences.shape != (len(self.names),):
            raise ValueError("one prevalence per covariate name required")


def shiw_design(with_z_U: bool = False) -> CovariateDesign:
    names = list(SHIW_NAMES)
    return CovariateDesign(
        names=names,
        prevalences=np.array(SHIW_PREVALENCES),
        x_L=list(names),
        x_U=list(names),
        z_L=list(names),
        z_U=list(names) if with_z_U else [],
    )


@dataclass
class SimConfig:
    """Generator settings; covariates come from an explicit dict of arrays
    ('x_L', 'x_U', 'z_L', 'z_U' and matching *_names) or from a design."""

    params: ParamSet
    n: int
    T: int
    seed: int
    design: CovariateDesign | None = None
    covariates: dict | None = None


def _sample_rows(probs: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """One categorical draw per row of a row-stochastic matrix."""
    u = rng.random(probs.shape[0])
    cum = np.cumsum(probs, axis=1)
    idx = (cum < u[:, None]).sum(axis=1)
    return np.minimum(idx, probs.shape[1] - 1)


def _build_covariates(config: SimConfig, rng: np.random.Generator):
    n, T = config.n, config.T
    if config.covariates is not None:
        cv = config.covariates
        return (
            np.asarray(cv["x_L"], dtype=float),
            np.asarray(cv["x_U"], dtype=float),
            np.asarray(cv["z_L"], dtype=float),
            np.asarray(cv["z_U"], dtype=float),
            {key: list(cv.get(f"{key}_names", [])) for key in ("x_L", "x_U", "z_L", "z_U")},
        )
    if config.design is None:
        return (np.zeros((n, 0)), np.zeros((n, 0)), np.zeros((n, T - 1, 0)),
                np.zeros((n, T - 1, 0)), {k: [] for k in ("x_L", "x_U", "z_L", "z_U")})
    design = config.design
    cols = (rng.random((n, len(design.names))) < design.prevalences).astype(float)
    by_name = {name: cols[:, i] for i, name in enumerate(design.names)}

    def unit_block(names):
        return np.column_stack([by_name[m] for m in names]) if names else np.zeros((n, 0))

    def trans_block(names):
        blk = unit_block(names)
        return np.repeat(blk[:, None, :], T - 1, axis=1)

    names = {"x_L": list(design.x_L), "x_U": list(design.x_U),
             "z_L": list(design.z_L), "z_U": list(design.z_U)}
    return unit_block(design.x_L), unit_block(design.x_U), \
        trans_block(design.z_L), trans_block(design.z_U), names


def simulate(config: SimConfig) -> tuple[PanelDataset, np.ndarray]:
    """Draw latent paths and responses; returns (panel, paths) where paths is
    an (n, T, 2) array of 1-based (u, l) states (u fixed at 2 without RS)."""
    pset = config.params
    spec, lp, obs = pset.spec, pset.latent, pset.obs
    n, T, k = config.n, config.T, spec.k
    if T < 2:
        raise ValueError("panels need at least two occasions")
    rng = np.random.default_rng(config.seed)
    x_L, x_U, z_L, z_U, names = _build_covariates(config, rng)
    z_U_eff = z_U[:, :, :spec.p2_U_eff]

    l_path = np.empty((n, T), dtype=int)
    u_path = np.full((n, T), 1, dtype=int)  # 0-based; 1 = AWR
    l_path[:, 0] = _sample_rows(initial_probs_L_rows(spec, lp, x_L), rng)
    if spec.has_rs:
        u_path[:, 0] = _sample_rows(initial_probs_U_rows(spec, lp, x_U), rng)
    rows = np.arange(n)
    for t in range(1, T):
        PL = transition_probs_L_rows(spec, lp, z_L[:, t - 1, :])
        l_path[:, t] = _sample_rows(PL[rows, l_path[:, t - 1]], rng)
        if spec.has_rs:
            PU = transition_probs_U_rows(spec, lp, z_U_eff[:, t - 1, :])
            u_path[:, t] = _sample_rows(PU[rows, l_path[:, t], u_path[:, t - 1]], rng)

    state = (u_path * k + l_path) if spec.has_rs else l_path
    tables = obs.emission_tables()
    y = np.empty((n, T, spec.r), dtype=int)
    for t in range(T):
        for j in range(spec.r):
            y[:, t, j] = _sample_rows(tables[j][state[:, t]], rng) + 1

    panel = PanelDataset(
        y=y, cardinalities=spec.cardinalities, x_L=x_L, x_U=x_U, z_L=z_L, z_U=z_U,
        x_L_names=names["x_L"], x_U_names=names["x_U"],
        z_L_names=names["z_L"], z_U_names=names["z_U"],
    )
    paths = np.stack([u_path + 1, l_path + 1], axis=2)
    return panel, paths


def parametric_bootstrap_panel(data: PanelDataset, pset: ParamSet, seed: int) -> PanelDataset:
    """Resimulate responses at the estimate, holding the observed covariates."""
    cov = {
        "x_L": data.x_L, "x_U": data.x_U, "z_L": data.z_L, "z_U": data.z_U,
        "x_L_names": data.x_L_names, "x_U_names": data.x_U_names,
        "z_L_names": data.z_L_names, "z_U_names": data.z_U_names,
    }
    panel, _ = simulate(SimConfig(pset, data.n, data.T, seed, covariates=cov))
    panel.unit_ids = list(data.unit_ids)
    panel.times = list(data.times)
    panel.response_names = list(data.response_names)
    return panel
