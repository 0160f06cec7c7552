"""Synthetic garage datasets from a declared truth, plus analytic oracles.

Because real garage-level data is proprietary, validation runs on simulated
datasets whose generating process is the random-parameter model itself.
With normal random coefficients and normal errors the response pair is
bivariate normal with a per-observation covariance, so the marginal
log-likelihood has a closed form; tensor-product Gauss-Hermite quadrature
provides a second, independent route to the same integral.

Generation uses numpy's counter-based Philox generator keyed by a 64-bit
seed, so a dataset is reproducible bit-for-bit from its TruthSpec alone.
Draw order: covariate columns in declared order, then one coefficient array
per random term (equation order, term order), then the N x 2 error normals.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import SpecError
from .modelspec import EquationSpec, ModelSpec, Term, FIXED, RANDOM
from .msl import RandomEffect
from .sure import ErrorCovariance, _rowdot

_LOG_2PI = np.log(2.0 * np.pi)


@dataclass(frozen=True)
class CovariateRecipe:
    """Recipe for one independent covariate column."""

    name: str
    kind: str                    # "bernoulli" | "uniform" | "normal"
    params: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "params", tuple(float(p) for p in self.params))
        expected = {"bernoulli": 1, "uniform": 2, "normal": 2}
        if self.kind not in expected:
            raise SpecError(f"unknown covariate kind {self.kind!r} for {self.name!r}")
        if len(self.params) != expected[self.kind]:
            raise SpecError(f"covariate {self.name!r}: {self.kind} takes "
                            f"{expected[self.kind]} parameter(s), got {self.params}")
        if self.kind == "bernoulli" and not 0.0 <= self.params[0] <= 1.0:
            raise SpecError(f"covariate {self.name!r}: bernoulli p must be in [0, 1]")

    def draw(self, rng: np.random.Generator, n: int) -> np.ndarray:
        if self.kind == "bernoulli":
            return (rng.random(n) < self.params[0]).astype(float)
        if self.kind == "uniform":
            lo, hi = self.params
            return lo + (hi - lo) * rng.random(n)
        mean, sd = self.params
        return mean + sd * rng.standard_normal(n)


@dataclass(frozen=True)
class TermTruth:
    """True coefficient of one design column; sigma > 0 makes it random."""

    column: str
    value: float
    sigma: float = 0.0

    def __post_init__(self):
        if self.sigma < 0:
            raise SpecError(f"term {self.column!r}: sigma must be >= 0")


@dataclass(frozen=True)
class EquationTruth:
    name: str
    terms: tuple[TermTruth, ...]
    intercept: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "terms", tuple(self.terms))


@dataclass(frozen=True)
class TruthSpec:
    """A complete data-generating process: model, truth values, and seed."""

    equations: tuple[EquationTruth, EquationTruth]
    covariates: tuple[CovariateRecipe, ...]
    sigma1: float
    sigma2: float
    rho: float
    n: int
    seed: int

    def __post_init__(self):
        object.__setattr__(self, "equations", tuple(self.equations))
        object.__setattr__(self, "covariates", tuple(self.covariates))
        if len(self.equations) != 2:
            raise SpecError("exactly two equations are required")
        if self.sigma1 <= 0 or self.sigma2 <= 0:
            raise SpecError("error standard deviations must be positive")
        if not abs(self.rho) < 1:
            raise SpecError("|rho| must be < 1")
        if self.n < 1:
            raise SpecError("n must be >= 1")
        known = {c.name for c in self.covariates}
        if len(known) != len(self.covariates):
            raise SpecError("covariate names must be distinct")
        for eq in self.equations:
            for term in eq.terms:
                if term.column not in known:
                    raise SpecError(f"equation {eq.name!r} references unknown "
                                    f"covariate {term.column!r}")

    @property
    def error_covariance(self) -> ErrorCovariance:
        return ErrorCovariance(sigma11=self.sigma1 ** 2,
                               sigma22=self.sigma2 ** 2,
                               sigma12=self.rho * self.sigma1 * self.sigma2)

    def model_spec(self) -> ModelSpec:
        """The estimation spec matching this truth (random flags included)."""
        eqs = []
        for eq in self.equations:
            terms = tuple(Term(column=t.column, level=None,
                               kind=RANDOM if t.sigma > 0 else FIXED)
                          for t in eq.terms)
            eqs.append(EquationSpec(name=eq.name, terms=terms,
                                    intercept=eq.intercept is not None))
        return ModelSpec(equations=(eqs[0], eqs[1]), base_levels={})


def truth_from_dict(raw: dict) -> TruthSpec:
    """Build a TruthSpec from its JSON structure."""
    try:
        covariates = tuple(
            CovariateRecipe(
                name=str(c["name"]), kind=str(c["kind"]),
                params=tuple(c.get("params") if "params" in c else _recipe_params(c)))
            for c in raw["covariates"])
        equations = []
        for i, eq in enumerate(raw["equations"]):
            terms = tuple(TermTruth(column=str(t["column"]),
                                    value=float(t["coef"]),
                                    sigma=float(t.get("sigma", 0.0)))
                          for t in eq.get("terms", []))
            intercept = eq.get("intercept")
            equations.append(EquationTruth(
                name=str(eq.get("name", f"vehicle_{i + 1}")), terms=terms,
                intercept=None if intercept is None else float(intercept)))
        error = raw["error"]
        return TruthSpec(
            equations=(equations[0], equations[1]),
            covariates=covariates,
            sigma1=float(error["sigma1"]), sigma2=float(error["sigma2"]),
            rho=float(error.get("rho", 0.0)),
            n=int(raw["n"]), seed=int(raw["seed"]))
    except (KeyError, IndexError, TypeError, ValueError) as exc:
        raise SpecError(f"invalid truth specification: {exc!r}") from exc


def _recipe_params(c: dict) -> tuple[float, ...]:
    kind = c.get("kind")
    if kind == "bernoulli":
        return (float(c["p"]),)
    if kind == "uniform":
        return (float(c["low"]), float(c["high"]))
    if kind == "normal":
        return (float(c["mean"]), float(c["sd"]))
    raise SpecError(f"unknown covariate kind {kind!r}")


def load_truth(path: str | Path) -> TruthSpec:
    with open(path, encoding="utf-8") as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise SpecError(f"truth file {path} is not valid JSON: {exc}") from exc
    return truth_from_dict(raw)


@dataclass(frozen=True)
class SyntheticDataset:
    """Simulated design matrices, responses, and the realized randomness."""

    truth: TruthSpec
    x1: np.ndarray = field(repr=False)
    x2: np.ndarray = field(repr=False)
    y1: np.ndarray = field(repr=False)
    y2: np.ndarray = field(repr=False)
    names1: tuple[str, ...]
    names2: tuple[str, ...]
    covariate_columns: dict[str, np.ndarray] = field(repr=False, default_factory=dict)
    coefficient_draws: dict[str, np.ndarray] = field(repr=False, default_factory=dict)
    errors: np.ndarray = field(repr=False, default=None)

    @property
    def n(self) -> int:
        return self.x1.shape[0]

    def write_csv(self, path) -> None:
        """Emit the dataset in the raw pipeline schema.

        Responses are stored as my_mpg with epa_mpg = 1, so the gap ratio
        computed downstream reproduces y exactly.  Covariate columns keep
        their recipe names.
        """
        if (self.y1 <= 0).any() or (self.y2 <= 0).any():
            raise SpecError("responses must be positive to round-trip through "
                            "the MPG-ratio schema; shift the truth intercepts")
        cov_names = [c.name for c in self.truth.covariates]
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["garage_id", "my_mpg_1", "epa_mpg_1", "my_mpg_2",
                             "epa_mpg_2", "model_year_1", "model_year_2",
                             "us_division"] + cov_names)
            for i in range(self.n):
                writer.writerow(
                    [f"s{i:06d}", repr(float(self.y1[i])), "1.0",
                     repr(float(self.y2[i])), "1.0", "2000", "2001", "Synthetic"]
                    + [repr(float(self.covariate_columns[c][i])) for c in cov_names])

    def write_coefficient_draws_csv(self, path) -> None:
        """Debug sidecar: the realized per-observation coefficient draws."""
        names = sorted(self.coefficient_draws)
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["row"] + names)
            for i in range(self.n):
                writer.writerow([i] + [repr(float(self.coefficient_draws[n][i]))
                                       for n in names])


def simulate_dataset(truth: TruthSpec) -> SyntheticDataset:
    """Draw one dataset from the truth; bit-identical for equal seeds."""
    rng = np.random.Generator(np.random.Philox(key=truth.seed))
    n = truth.n
    columns = {c.name: c.draw(rng, n) for c in truth.covariates}

    designs = []
    names = []
    for eq in truth.equations:
        cols = []
        eq_names = []
        if eq.intercept is not None:
            cols.append(np.ones(n))
            eq_names.append("const")
        for term in eq.terms:
            cols.append(columns[term.column])
            eq_names.append(term.column)
        designs.append(np.column_stack(cols) if cols else np.empty((n, 0)))
        names.append(tuple(eq_names))

    coefficient_draws: dict[str, np.ndarray] = {}
    contributions = [np.zeros(n), np.zeros(n)]
    for e, eq in enumerate(truth.equations):
        if eq.intercept is not None:
            contributions[e] += eq.intercept
        for term in eq.terms:
            x = columns[term.column]
            if term.sigma > 0:
                beta = term.value + term.sigma * rng.standard_normal(n)
                coefficient_draws[f"{eq.name}:{term.column}"] = beta
                contributions[e] += beta * x
            else:
                contributions[e] += term.value * x

    z = rng.standard_normal((n, 2))
    e1 = truth.sigma1 * z[:, 0]
    e2 = truth.sigma2 * (truth.rho * z[:, 0] + np.sqrt(1 - truth.rho ** 2) * z[:, 1])
    errors = np.column_stack([e1, e2])
    return SyntheticDataset(
        truth=truth,
        x1=designs[0], x2=designs[1],
        y1=contributions[0] + e1, y2=contributions[1] + e2,
        names1=names[0], names2=names[1],
        covariate_columns=columns,
        coefficient_draws=coefficient_draws,
        errors=errors,
    )


def _effect_loadings(x1: np.ndarray, x2: np.ndarray,
                     effects: tuple[RandomEffect, ...]) -> list[tuple[np.ndarray, np.ndarray]]:
    """Per effect, its loading vector in each equation (zeros if unbound)."""
    n = x1.shape[0]
    x = (x1, x2)
    loadings = []
    for effect in effects:
        g = [np.zeros(n), np.zeros(n)]
        for eq, col in effect.bindings:
            g[eq] = g[eq] + x[eq][:, col]
        loadings.append((g[0], g[1]))
    return loadings


def exact_marginal_loglik(x1, x2, y1, y2, coef1, coef2,
                          effects: tuple[RandomEffect, ...],
                          sigmas, cov: ErrorCovariance) -> float:
    """Closed-form marginal log-likelihood of the linear-normal model.

    Integrating normal coefficients out of a linear model leaves the
    response pair bivariate normal with mean (x1'coef1, x2'coef2) and
    covariance Sigma + sum_b sigma_b^2 g_b g_b', where g_b holds the design
    loadings of coefficient b in each equation (a coefficient bound to one
    equation contributes to that variance only; a shared one adds the
    sigma^2 x1 x2 cross term).
    """
    x1 = np.asarray(x1, dtype=float)
    x2 = np.asarray(x2, dtype=float)
    y1 = np.asarray(y1, dtype=float)
    y2 = np.asarray(y2, dtype=float)
    sigmas = np.asarray(sigmas, dtype=float)
    if sigmas.size != len(effects):
        raise ValueError("one sigma per random effect is required")
    e1 = y1 - _rowdot(x1, np.asarray(coef1, dtype=float))
    e2 = y2 - _rowdot(x2, np.asarray(coef2, dtype=float))
    v11 = np.full(x1.shape[0], cov.sigma11)
    v12 = np.full(x1.shape[0], cov.sigma12)
    v22 = np.full(x1.shape[0], cov.sigma22)
    for (g1, g2), s in zip(_effect_loadings(x1, x2, effects), sigmas):
        v11 += s * s * g1 * g1
        v12 += s * s * g1 * g2
        v22 += s * s * g2 * g2
    det = v11 * v22 - v12 * v12
    if (det <= 0).any() or (v11 <= 0).any():
        raise ValueError("per-observation covariance is not positive definite")
    quad = (e1 * e1 * v22 - 2.0 * e1 * e2 * v12 + e2 * e2 * v11) / det
    return float(np.sum(-_LOG_2PI - 0.5 * np.log(det) - 0.5 * quad))


def quadrature_loglik(x1, x2, y1, y2, coef1, coef2,
                      effects: tuple[RandomEffect, ...],
                      sigmas, cov: ErrorCovariance, nodes: int) -> float:
    """Gauss-Hermite marginal log-likelihood over the random coefficients.

    Tensor-product rule, at most 3 random dimensions; one node degenerates
    to the all-spreads-zero likelihood, and the value converges to
    exact_marginal_loglik as the node count grows.
    """
    if nodes < 1:
        raise ValueError("nodes must be >= 1")
    d = len(effects)
    if d > 3:
        raise SpecError("tensor-product quadrature supports at most 3 random "
                        "coefficients; use the exact oracle or simulation")
    x1 = np.asarray(x1, dtype=float)
    x2 = np.asarray(x2, dtype=float)
    sigmas = np.asarray(sigmas, dtype=float)
    e1 = np.asarray(y1, dtype=float) - _rowdot(x1, np.asarray(coef1, dtype=float))
    e2 = np.asarray(y2, dtype=float) - _rowdot(x2, np.asarray(coef2, dtype=float))

    gh_x, gh_w = np.polynomial.hermite.hermgauss(nodes)
    if d == 0:
        grid = np.zeros((1, 0))
        log_w = np.zeros(1)
    else:
        mesh = np.meshgrid(*([gh_x] * d), indexing="ij")
        grid = np.sqrt(2.0) * np.column_stack([m.ravel() for m in mesh])
        wmesh = np.meshgrid(*([gh_w] * d), indexing="ij")
        log_w = np.sum(np.log(np.column_stack([w.ravel() for w in wmesh])), axis=1) \
            - d * 0.5 * np.log(np.pi)

    loadings = _effect_loadings(x1, x2, effects)
    dev1 = np.zeros((x1.shape[0], grid.shape[0]))
    dev2 = np.zeros((x1.shape[0], grid.shape[0]))
    for (g1, g2), s, zcol in zip(loadings, sigmas, grid.T):
        dev1 += s * np.outer(g1, zcol)
        dev2 += s * np.outer(g2, zcol)
    r1 = e1[:, None] - dev1
    r2 = e2[:, None] - dev2
    low = cov.cholesky_lower()
    l11, l21, l22 = low[0, 0], low[1, 0], low[1, 1]
    v1 = r1 / l11
    v2 = (r2 - l21 * v1) / l22
    lnphi = -_LOG_2PI - np.log(l11 * l22) - 0.5 * (v1 * v1 + v2 * v2)
    weighted = lnphi + log_w[None, :]
    m = weighted.max(axis=1)
    per_obs = m + np.log(np.exp(weighted - m[:, None]).sum(axis=1))
    return float(np.sum(per_obs))
