"""Model specification: latent/observation forms, named variants, parameter counts."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

INIT_L_FORMS = ("baseline", "stereotype", "parallel-adjacent")
TRANS_L_FORMS = ("baseline", "stereotype", "parallel-baseline", "parallel-adjacent")
RS_FORMS = (
    "heterogeneous",
    "homogeneous",
    "memoryless-het",
    "memoryless-hom",
    "independent",
    "time-invariant",
    "factorial",
    "none",
)

# RS transition forms whose logits carry the z_U covariates.
RS_COVARIATE_FORMS = {"heterogeneous", "memoryless-het", "independent", "factorial"}

# Named model variants: (init_L_form, trans_L_form, rs_form).
VARIANTS = {
    "m1": ("baseline", "baseline", "memoryless-het"),
    "m2": ("baseline", "baseline", "heterogeneous"),
    "m3": ("stereotype", "stereotype", "heterogeneous"),
    "m4": ("stereotype", "parallel-baseline", "heterogeneous"),
    "m5": ("baseline", "baseline", "memoryless-hom"),
    "m6": ("baseline", "baseline", "homogeneous"),
    "m7": ("stereotype", "stereotype", "homogeneous"),
    "m8": ("stereotype", "parallel-baseline", "homogeneous"),
}


@dataclass(frozen=True)
class ModelSpec:
    """Full structural specification of one RS-HMM.

    k latent-construct states are coupled with a binary answering regime
    (state 1 = response-style driven, state 2 = aware) unless ``rs_form`` is
    ``"none"``, in which case the chain has only the k construct states.
    ``k == 1`` with ``rs_form == "none"`` is the independence null model.
    """

    k: int
    cardinalities: tuple[int, ...]
    init_L_form: str = "baseline"
    trans_L_form: str = "baseline"
    rs_form: str = "heterogeneous"
    p1_L: int = 0
    p1_U: int = 0
    p2_L: int = 0
    p2_U: int = 0

    def __post_init__(self):
        object.__setattr__(self, "cardinalities", tuple(int(c) for c in self.cardinalities))
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.k == 1 and self.rs_form != "none":
            raise ValueError("k=1 is reserved for the null model (rs_form='none')")
        if not self.cardinalities or any(c < 2 for c in self.cardinalities):
            raise ValueError("every response needs at least 2 categories")
        if self.init_L_form not in INIT_L_FORMS:
            raise ValueError(f"unknown init_L_form {self.init_L_form!r}")
        if self.trans_L_form not in TRANS_L_FORMS:
            raise ValueError(f"unknown trans_L_form {self.trans_L_form!r}")
        if self.rs_form not in RS_FORMS:
            raise ValueError(f"unknown rs_form {self.rs_form!r}")
        if min(self.p1_L, self.p1_U, self.p2_L, self.p2_U) < 0:
            raise ValueError("covariate dimensions must be nonnegative")

    # -- basic geometry -------------------------------------------------

    @property
    def r(self) -> int:
        return len(self.cardinalities)

    @property
    def has_rs(self) -> bool:
        return self.rs_form != "none"

    @property
    def n_states(self) -> int:
        """Joint states; index s = u*k + l with u in {0,1} (RS, AWR), l in 0..k-1."""
        return 2 * self.k if self.has_rs else self.k

    @property
    def p2_U_eff(self) -> int:
        """z_U covariates actually entering the RS transition logits."""
        return self.p2_U if self.rs_form in RS_COVARIATE_FORMS else 0

    # -- parameter counting ---------------------------------------------

    def count_init_L_params(self) -> int:
        k, p = self.k, self.p1_L
        if k == 1:
            return 0
        if self.init_L_form == "baseline":
            return (k - 1) * (1 + p)
        if self.init_L_form == "stereotype":
            return (k - 1) + (k - 2) + p
        return (k - 1) + p  # parallel-adjacent

    def count_trans_L_params(self) -> int:
        k, p = self.k, self.p2_L
        if k == 1:
            return 0
        if self.trans_L_form == "baseline":
            return k * (k - 1) * (1 + p)
        if self.trans_L_form == "stereotype":
            return k * ((k - 1) + (k - 2) + p)
        return k * (k - 1 + p)  # parallel-baseline / parallel-adjacent

    def count_init_U_params(self) -> int:
        return 0 if not self.has_rs else 1 + self.p1_U

    def count_trans_U_params(self) -> int:
        k, p = self.k, self.p2_U_eff
        form = self.rs_form
        if form == "heterogeneous":
            return 2 * k * (1 + p)
        if form == "homogeneous":
            return 2 * k
        if form == "memoryless-het":
            return k * (1 + p)
        if form == "memoryless-hom":
            return k
        if form == "independent":
            return 1 + p
        if form == "factorial":
            return 2 * (1 + p)
        return 0  # time-invariant, none

    def count_latent_params(self) -> int:
        return (
            self.count_init_L_params()
            + self.count_init_U_params()
            + self.count_trans_L_params()
            + self.count_trans_U_params()
        )

    def count_obs_params(self) -> int:
        base = self.k * sum(c - 1 for c in self.cardinalities)
        if self.has_rs:
            base += 2 * self.r * self.k
        return base

    def count_params(self) -> int:
        return self.count_latent_params() + self.count_obs_params()

    # -- construction helpers -------------------------------------------

    @classmethod
    def variant(cls, name: str, k: int, cardinalities, p1_L=0, p1_U=0, p2_L=0, p2_U=0) -> "ModelSpec":
        """Build a spec from one of the named m1..m8 variants."""
        try:
            init_f, trans_f, rs_f = VARIANTS[name.lower()]
        except KeyError:
            raise ValueError(f"unknown variant {name!r}; expected one of {sorted(VARIANTS)}") from None
        return cls(
            k=k,
            cardinalities=tuple(cardinalities),
            init_L_form=init_f,
            trans_L_form=trans_f,
            rs_form=rs_f,
            p1_L=p1_L,
            p1_U=p1_U,
            p2_L=p2_L,
            p2_U=p2_U,
        )

    @classmethod
    def null(cls, cardinalities) -> "ModelSpec":
        """Independence model: k=1, no RS regime; the R-squared reference."""
        return cls(k=1, cardinalities=tuple(cardinalities), rs_form="none")

    def with_dims(self, data) -> "ModelSpec":
        """Copy with covariate dimensions taken from a panel dataset."""
        return replace(self, p1_L=data.p1_L, p1_U=data.p1_U, p2_L=data.p2_L, p2_U=data.p2_U)

    def to_dict(self) -> dict:
        return {
            "k": self.k,
            "cardinalities": list(self.cardinalities),
            "init_L_form": self.init_L_form,
            "trans_L_form": self.trans_L_form,
            "rs_form": self.rs_form,
            "p1_L": self.p1_L,
            "p1_U": self.p1_U,
            "p2_L": self.p2_L,
            "p2_U": self.p2_U,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        if "variant" in d:
            return cls.variant(
                d["variant"],
                k=d["k"],
                cardinalities=tuple(d["cardinalities"]),
                p1_L=d.get("p1_L", 0),
                p1_U=d.get("p1_U", 0),
                p2_L=d.get("p2_L", 0),
                p2_U=d.get("p2_U", 0),
            )
        return cls(
            k=d["k"],
            cardinalities=tuple(d["cardinalities"]),
            init_L_form=d.get("init_L_form", "baseline"),
            trans_L_form=d.get("trans_L_form", "baseline"),
            rs_form=d.get("rs_form", "heterogeneous"),
            p1_L=d.get("p1_L", 0),
            p1_U=d.get("p1_U", 0),
            p2_L=d.get("p2_L", 0),
            p2_U=d.get("p2_U", 0),
        )
