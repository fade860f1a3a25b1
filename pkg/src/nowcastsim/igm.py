"""Income-generation-model evaluation: logit / multinomial / linear
predictions from coefficient tables, residual recovery for observed
outcomes, and base-year-anchored Monte Carlo draws.

No estimation happens here; coefficient sets are inputs, loaded from a
delimiter-separated table (columns model_name, kind, outcome, covariate,
value; intercept rows use the covariate name "_constant").

Covariates are dummy-coded unless registered as continuous: an absent
dummy reads as 0, while an absent continuous covariate is an error, since
a silent zero on a continuous field masks a data fault.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .rng import anchored_uniform, keyed_normal, keyed_uniform

KINDS = ("logit", "multinomial", "linear")

# Continuous covariates of the shipped model set; everything else is a dummy.
CONTINUOUS_COVARIATES = frozenset(
    {
        "n_children_0_4",
        "n_children",
        "equiv_income_week",
        "equiv_income_week_sq",
    }
)


class ModelError(ValueError):
    pass


@dataclass(frozen=True)
class CoefficientSet:
    """One named regression model: intercept(s) plus a coefficient per
    covariate, for one of the three supported kinds.

    For logit/linear there is a single coefficient row; a multinomial with
    m outcomes carries m-1 rows against the reference outcome (index 0).
    """

    name: str
    kind: str
    covariates: tuple
    coefficients: tuple  # one tuple of floats per non-reference outcome
    intercepts: tuple
    outcomes: tuple = ()
    continuous: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ModelError(f"{self.name}: unknown model kind {self.kind!r}")
        if self.kind in ("logit", "linear"):
            if len(self.coefficients) != 1 or len(self.intercepts) != 1:
                raise ModelError(f"{self.name}: {self.kind} model needs exactly one row")
        else:
            if len(self.coefficients) < 1:
                raise ModelError(f"{self.name}: multinomial needs >= 1 non-reference outcome")
            if len(self.intercepts) != len(self.coefficients):
                raise ModelError(f"{self.name}: intercept count mismatch")
        for row in self.coefficients:
            if len(row) != len(self.covariates):
                raise ModelError(
                    f"{self.name}: coefficient row length {len(row)} != "
                    f"covariate count {len(self.covariates)}"
                )


def _index(model: CoefficientSet, covariates: dict, row: int):
    """Linear index intercept + sum(beta * x) for one coefficient row.

    Accepts scalars or aligned numpy arrays as covariate values.
    """
    known = set(model.covariates)
    for name in covariates:
        if name not in known:
            raise ModelError(f"{model.name}: unknown covariate {name!r}")
    total = model.intercepts[row]
    for name, beta in zip(model.covariates, model.coefficients[row]):
        if name in covariates:
            x = covariates[name]
        elif name in model.continuous:
            raise ModelError(f"{model.name}: continuous covariate {name!r} missing")
        else:
            continue  # absent dummy reads as 0
        total = total + beta * np.asarray(x, dtype=np.float64)
    idx = np.asarray(total, dtype=np.float64)
    if not np.all(np.isfinite(idx)):
        raise ModelError(f"{model.name}: non-finite linear index")
    return idx if idx.ndim else float(idx)


def logit_prob(model: CoefficientSet, covariates: dict):
    """Logistic probability sigma(intercept + sum beta*x), strictly in (0, 1)."""
    if model.kind != "logit":
        raise ModelError(f"{model.name}: logit_prob needs a logit model")
    idx = _index(model, covariates, 0)
    p = 1.0 / (1.0 + np.exp(-np.asarray(idx, dtype=np.float64)))
    p = np.clip(p, 1e-12, 1.0 - 1e-12)
    return float(p) if p.ndim == 0 else p


def multinomial_probs(model: CoefficientSet, covariates: dict) -> np.ndarray:
    """Softmax over the reference outcome (index 0, implicit) and each
    non-reference outcome; components sum to 1."""
    if model.kind != "multinomial":
        raise ModelError(f"{model.name}: multinomial_probs needs a multinomial model")
    indices = [np.asarray(_index(model, covariates, r), dtype=np.float64)
               for r in range(len(model.coefficients))]
    idx = np.stack([np.zeros_like(indices[0])] + indices, axis=-1)
    idx -= idx.max(axis=-1, keepdims=True)
    e = np.exp(idx)
    return e / e.sum(axis=-1, keepdims=True)


def linear_predict(model: CoefficientSet, covariates: dict):
    if model.kind != "linear":
        raise ModelError(f"{model.name}: linear_predict needs a linear model")
    return _index(model, covariates, 0)


@dataclass
class ResidualStore:
    """Per (unit, model) disturbance terms with their provenance."""

    residuals: dict = field(default_factory=dict)  # (unit_id, model) -> (eps, provenance)

    def put(self, unit_id, model_name: str, value: float, provenance: str):
        if provenance not in ("recovered", "stochastic"):
            raise ModelError(f"unknown residual provenance {provenance!r}")
        self.residuals[(unit_id, model_name)] = (float(value), provenance)

    def get(self, unit_id, model_name: str):
        return self.residuals[(unit_id, model_name)]


def recover_residual(model: CoefficientSet, covariates: dict, observed: float) -> float:
    """eps = observed - prediction, so prediction + eps replays the
    observation exactly. Only valid when an outcome was observed."""
    if observed is None:
        raise ModelError(f"{model.name}: cannot recover a residual without an observation")
    return float(observed) - float(linear_predict(model, covariates))


def draw_residual(model_name: str, scale: float, seed: int, ids):
    """Stochastic residuals: normal with mean 0 and the configured sd,
    keyed by (seed, unit id, model name)."""
    if scale < 0:
        raise ModelError(f"{model_name}: residual scale must be non-negative")
    z = keyed_normal(seed, "residual:" + model_name, ids)
    return z * scale


def simulate_binary_anchored(prob: float, observed: bool, seed: int, label: str, unit_id):
    """Uniform draw consistent with the observed base-year outcome.

    The returned u lies in [0, prob) when observed and [prob, 1) when not,
    so replaying at the base-year probability reproduces the observation
    and a counterfactual probability p' flips the outcome only when it
    crosses u.
    """
    raw = keyed_uniform(seed, label, unit_id)
    return anchored_uniform(prob, observed, raw)


def anchored_draws(probs, observed, seed: int, label: str, ids) -> np.ndarray:
    """Vectorised simulate_binary_anchored over aligned arrays."""
    raw = keyed_uniform(seed, label, ids)
    return anchored_uniform(probs, observed, raw)


def load_coefficients(path, continuous=CONTINUOUS_COVARIATES) -> dict:
    """Load coefficient sets from a CSV of
    (model_name, kind, outcome, covariate, value)."""
    rows = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        required = {"model_name", "kind", "outcome", "covariate", "value"}
        if reader.fieldnames is None or not required.issubset(reader.fieldnames):
            raise ModelError(f"{path}: expected columns {sorted(required)}")
        for lineno, rec in enumerate(reader, start=2):
            name = rec["model_name"].strip()
            kind = rec["kind"].strip()
            outcome = rec["outcome"].strip()
            covariate = rec["covariate"].strip()
            try:
                value = float(rec["value"])
            except ValueError as exc:
                raise ModelError(f"{path}:{lineno}: bad value {rec['value']!r}") from exc
            model = rows.setdefault(name, {"kind": kind, "outcomes": {}})
            if model["kind"] != kind:
                raise ModelError(f"{path}:{lineno}: {name} declared with two kinds")
            model["outcomes"].setdefault(outcome, {})[covariate] = value

    models = {}
    for name, entry in rows.items():
        outcome_labels = sorted(entry["outcomes"])
        covariates = sorted(
            {c for coeffs in entry["outcomes"].values() for c in coeffs if c != "_constant"}
        )
        coefficients = []
        intercepts = []
        for outcome in outcome_labels:
            coeffs = entry["outcomes"][outcome]
            coefficients.append(tuple(coeffs.get(c, 0.0) for c in covariates))
            intercepts.append(coeffs.get("_constant", 0.0))
        models[name] = CoefficientSet(
            name=name,
            kind=entry["kind"],
            covariates=tuple(covariates),
            coefficients=tuple(coefficients),
            intercepts=tuple(intercepts),
            outcomes=tuple(outcome_labels),
            continuous=frozenset(c for c in covariates if c in continuous),
        )
    return models
