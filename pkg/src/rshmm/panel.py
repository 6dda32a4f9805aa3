"""Balanced ordinal panel ingestion, validation, and configuration indexing.

CSV contract: long format, one row per unit-occasion, with a unit column, a
time column, the response columns (positive integer categories), and numeric
covariate columns. A JSON schema declares the response cardinalities and
which columns feed the four covariate blocks (x_L, x_U at the first occasion;
z_L, z_U at occasions 2..T).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
import pandas as pd


class PanelError(ValueError):
    """Base class for panel validation failures."""


class MissingCell(PanelError):
    pass


class CategoryOutOfRange(PanelError):
    pass


class RaggedCovariates(PanelError):
    pass


class NonIntegerCategory(PanelError):
    pass


@dataclass
class PanelSchema:
    """Column mapping for the long-format CSV."""

    responses: dict[str, int]                # column -> number of categories
    x_L: list[str] = field(default_factory=list)
    x_U: list[str] = field(default_factory=list)
    z_L: list[str] = field(default_factory=list)
    z_U: list[str] = field(default_factory=list)
    unit_col: str = "unit_id"
    time_col: str = "time"
    one_hot: dict[str, list[str]] = field(default_factory=dict)

    @classmethod
    def from_json(cls, path) -> "PanelSchema":
        with open(path) as fh:
            d = json.load(fh)
        return cls(
            responses={str(k): int(v) for k, v in d["responses"].items()},
            x_L=list(d.get("x_L", [])),
            x_U=list(d.get("x_U", [])),
            z_L=list(d.get("z_L", [])),
            z_U=list(d.get("z_U", [])),
            unit_col=d.get("unit_col", "unit_id"),
            time_col=d.get("time_col", "time"),
            one_hot={k: list(v) for k, v in d.get("one_hot", {}).items()},
        )

    def to_json(self, path) -> None:
        d = {
            "responses": self.responses,
            "x_L": self.x_L,
            "x_U": self.x_U,
            "z_L": self.z_L,
            "z_U": self.z_U,
            "unit_col": self.unit_col,
            "time_col": self.time_col,
        }
        if self.one_hot:
            d["one_hot"] = self.one_hot
        with open(path, "w") as fh:
            json.dump(d, fh, indent=2)
            fh.write("\n")


@dataclass
class PanelDataset:
    """Balanced panel: n units x T occasions x r ordinal responses.

    y holds 1-based categories with shape (n, T, r). x_L/x_U are unit-level
    initial covariates; z_L/z_U have shape (n, T-1, p) where slot t-2 carries
    the covariates of the transition into occasion t.
    """

    y: np.ndarray
    cardinalities: tuple[int, ...]
    x_L: np.ndarray
    x_U: np.ndarray
    z_L: np.ndarray
    z_U: np.ndarray
    unit_ids: list = field(default_factory=list)
    times: list = field(default_factory=list)
    response_names: list[str] = field(default_factory=list)
    x_L_names: list[str] = field(default_factory=list)
    x_U_names: list[str] = field(default_factory=list)
    z_L_names: list[str] = field(default_factory=list)
    z_U_names: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=int)
        self.cardinalities = tuple(int(c) for c in self.cardinalities)
        for name in ("x_L", "x_U", "z_L", "z_U"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=float))
        n, T, r = self.y.shape
        if not self.unit_ids:
            self.unit_ids = list(range(1, n + 1))
        if not self.times:
            self.times = list(range(1, T + 1))
        if not self.response_names:
            self.response_names = [f"y{j + 1}" for j in range(r)]
        self.validate()

    # -- geometry ---------------------------------------------------------

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def T(self) -> int:
        return self.y.shape[1]

    @property
    def r(self) -> int:
        return self.y.shape[2]

    @property
    def p1_L(self) -> int:
        return self.x_L.shape[1]

    @property
    def p1_U(self) -> int:
        return self.x_U.shape[1]

    @property
    def p2_L(self) -> int:
        return self.z_L.shape[2]

    @property
    def p2_U(self) -> int:
        return self.z_U.shape[2]

    def validate(self) -> None:
        n, T, r = self.y.shape
        if n < 1 or T < 2 or r < 1:
            raise PanelError(f"need n >= 1, T >= 2, r >= 1; got n={n}, T={T}, r={r}")
        if len(self.cardinalities) != r:
            raise PanelError("one cardinality per response required")
        if any(c < 2 for c in self.cardinalities):
            raise PanelError("every response needs at least 2 categories")
        for j, c in enumerate(self.cardinalities):
            col = self.y[:, :, j]
            if col.min() < 1 or col.max() > c:
                bad = col[(col < 1) | (col > c)][0]
                raise CategoryOutOfRange(
                    f"response {j + 1} has category {bad} outside 1..{c}")
        for name, arr, nd in (("x_L", self.x_L, 2), ("x_U", self.x_U, 2),
                              ("z_L", self.z_L, 3), ("z_U", self.z_U, 3)):
            if arr.ndim != nd or arr.shape[0] != n:
                raise RaggedCovariates(f"{name} must have shape ({n}, ...)")
            if nd == 3 and arr.shape[1] != T - 1:
                raise RaggedCovariates(f"{name} must cover occasions 2..{T}")
            if not np.all(np.isfinite(arr)):
                raise RaggedCovariates(f"{name} contains non-finite values")

    def equals(self, other: "PanelDataset") -> bool:
        return (
            self.cardinalities == other.cardinalities
            and np.array_equal(self.y, other.y)
            and all(
                np.allclose(getattr(self, a), getattr(other, a))
                for a in ("x_L", "x_U", "z_L", "z_U")
            )
        )


def _expand_one_hot(df: pd.DataFrame, schema: PanelSchema) -> pd.DataFrame:
    """Expand declared categorical columns into reference-coded dummies."""
    for col, levels in schema.one_hot.items():
        if col not in df.columns:
            raise PanelError(f"one-hot column {col!r} absent from the CSV")
        seen = set(df[col].astype(str))
        unknown = seen - set(map(str, levels))
        if unknown:
            raise PanelError(f"column {col!r} has undeclared levels {sorted(unknown)}")
        for lev in levels[1:]:
            df[f"{col}:{lev}"] = (df[col].astype(str) == str(lev)).astype(float)
    return df


def load_panel(path, schema: PanelSchema) -> PanelDataset:
    """Load and validate a balanced panel from a long-format CSV."""
    df = pd.read_csv(path)
    for col in (schema.unit_col, schema.time_col, *schema.responses):
        if col not in df.columns:
            raise PanelError(f"required column {col!r} absent from the CSV")
    df = _expand_one_hot(df, schema)
    for block in (schema.x_L, schema.x_U, schema.z_L, schema.z_U):
        for col in block:
            if col not in df.columns:
                raise RaggedCovariates(f"covariate column {col!r} absent from the CSV")

    units = sorted(df[schema.unit_col].unique().tolist())
    times = sorted(df[schema.time_col].unique().tolist())
    n, T = len(units), len(times)
    if T < 2:
        raise PanelError(f"need at least 2 occasions, found {T}")
    uidx = {u: i for i, u in enumerate(units)}
    tidx = {t: i for i, t in enumerate(times)}

    seen = np.zeros((n, T), dtype=bool)
    rows = np.full((n, T), -1, dtype=int)
    for ridx, (u, t) in enumerate(zip(df[schema.unit_col], df[schema.time_col])):
        i, s = uidx[u], tidx[t]
        if seen[i, s]:
            raise PanelError(f"duplicate row for unit {u!r} at time {t!r}")
        seen[i, s] = True
        rows[i, s] = ridx
    if not seen.all():
        i, s = np.argwhere(~seen)[0]
        raise MissingCell(f"unit {units[i]!r} has no row at time {times[s]!r}")

    resp_cols = list(schema.responses)
    cards = tuple(schema.responses[c] for c in resp_cols)
    raw = df[resp_cols].to_numpy()
    if not np.all(np.isfinite(raw.astype(float))):
        raise NonIntegerCategory("response cells must be present and numeric")
    as_float = raw.astype(float)
    as_int = np.rint(as_float).astype(int)
    if not np.allclose(as_float, as_int, atol=1e-9):
        raise NonIntegerCategory("response categories must be integers")
    y = np.empty((n, T, len(resp_cols)), dtype=int)
    for j in range(len(resp_cols)):
        y[:, :, j] = as_int[rows, j]
        if y[:, :, j].min() < 1 or y[:, :, j].max() > cards[j]:
            bad = y[:, :, j][(y[:, :, j] < 1) | (y[:, :, j] > cards[j])][0]
            raise CategoryOutOfRange(
                f"column {resp_cols[j]!r} has category {bad} outside 1..{cards[j]}")

    def grab(cols, rsel):
        if not cols:
            return np.zeros(rsel.shape + (0,))
        vals = df[cols].to_numpy(dtype=float)
        out = vals[rsel]
        if not np.all(np.isfinite(out)):
            raise RaggedCovariates(f"covariate columns {cols} contain missing values")
        return out

    x_L = grab(schema.x_L, rows[:, 0])
    x_U = grab(schema.x_U, rows[:, 0])
    z_L = grab(schema.z_L, rows[:, 1:])
    z_U = grab(schema.z_U, rows[:, 1:])
    return PanelDataset(
        y=y, cardinalities=cards, x_L=x_L, x_U=x_U, z_L=z_L, z_U=z_U,
        unit_ids=units, times=times, response_names=resp_cols,
        x_L_names=list(schema.x_L), x_U_names=list(schema.x_U),
        z_L_names=list(schema.z_L), z_U_names=list(schema.z_U),
    )


def write_panel(data: PanelDataset, path) -> None:
    """Write the long-format CSV; load_panel on it reproduces the dataset."""
    cols: dict[str, list] = {"unit_id": [], "time": []}
    for name in data.response_names:
        cols[name] = []
    cov_cols: dict[str, list] = {}

    def put(name, value, row):
        cov_cols.setdefault(name, [np.nan] * data.n * data.T)
        prev = cov_cols[name][row]
        if prev == prev and not np.isclose(prev, value):  # NaN-safe conflict check
            raise PanelError(f"column {name!r} mapped to conflicting values")
        cov_cols[name][row] = value

    row = 0
    for i in range(data.n):
        for t in range(data.T):
            cols["unit_id"].append(data.unit_ids[i])
            cols["time"].append(data.times[t])
            for j, name in enumerate(data.response_names):
                cols[name].append(int(data.y[i, t, j]))
            for names, arr in ((data.x_L_names, data.x_L), (data.x_U_names, data.x_U)):
                if t == 0:
                    for c, name in enumerate(names):
                        put(name, arr[i, c], row)
            for names, arr in ((data.z_L_names, data.z_L), (data.z_U_names, data.z_U)):
                if t >= 1:
                    for c, name in enumerate(names):
                        put(name, arr[i, t - 1, c], row)
            row += 1
    frame = pd.DataFrame(cols)
    for name, vals in cov_cols.items():
        frame[name] = np.nan_to_num(np.asarray(vals, dtype=float), nan=0.0)
    frame.to_csv(path, index=False)


def schema_of(data: PanelDataset) -> PanelSchema:
    return PanelSchema(
        responses=dict(zip(data.response_names, data.cardinalities)),
        x_L=list(data.x_L_names), x_U=list(data.x_U_names),
        z_L=list(data.z_L_names), z_U=list(data.z_U_names),
    )


# ---------------------------------------------------------------------------
# covariate configuration index
# ---------------------------------------------------------------------------

def stacked_covariates(data: PanelDataset, t: int) -> np.ndarray:
    """Stacked covariate rows (x_U, z_Ut, x_L, z_Lt) at 1-based occasion t."""
    if t == 1:
        return np.hstack([data.x_U, data.x_L])
    tt = t - 2
    return np.hstack([data.x_U, data.z_U[:, tt, :], data.x_L, data.z_L[:, tt, :]])


@dataclass
class CovariateConfigIndex:
    """Distinct stacked covariate configurations per occasion.

    configs[t-1] holds the distinct rows in lexicographic order; labels[t-1]
    maps every unit to its configuration id; members[t-1][g] lists the units
    carrying configuration g.
    """

    configs: list[np.ndarray]
    labels: list[np.ndarray]

    @property
    def T(self) -> int:
        return len(self.configs)

    def n_configs(self, t: int) -> int:
        return self.configs[t - 1].shape[0]

    def members(self, t: int, g: int) -> np.ndarray:
        return np.flatnonzero(self.labels[t - 1] == g)


def index_configurations(data: PanelDataset) -> CovariateConfigIndex:
    configs, labels = [], []
    for t in range(1, data.T + 1):
        rows = stacked_covariates(data, t)
        uniq, inv = np.unique(rows, axis=0, return_inverse=True)
        configs.append(uniq)
        labels.append(inv.astype(int))
    return CovariateConfigIndex(configs, labels)
