"""Random-parameter bivariate SUR by maximum simulated likelihood.

Selected coefficients become independent normal random variables across
observations; the likelihood integrates them out by averaging the bivariate
normal density over fixed per-observation Halton draws.  The optimizer works
on an unconstrained transform (log spreads, Cholesky error covariance with
log diagonal), so every iterate maps to a valid model.  Standard errors come
from a central-difference Hessian at the optimum, delta-method transformed
to the natural scale.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .data import DesignMatrices
from .errors import DegenerateDataError, EstimationError, SpecError
from .halton import DrawStore
from .sure import ErrorCovariance, SureFit, fgls_fit, _rowdot

_LOG_2PI = np.log(2.0 * np.pi)
_MIN_SIGMA_START = 1e-3


@dataclass(frozen=True)
class RandomEffect:
    """One random coefficient and the design columns it multiplies.

    bindings are (equation index, column index) pairs; a coefficient shared
    across equations simply carries one binding per equation.
    """

    name: str
    bindings: tuple[tuple[int, int], ...]


@dataclass(frozen=True)
class RpParameters:
    """Natural-scale parameter point for the simulated likelihood.

    coef1/coef2 hold every coefficient of each equation, with random
    positions holding their means; sigmas align with the random-effect
    list (zeros are allowed and reproduce the fixed-parameter model).
    """

    coef1: np.ndarray
    coef2: np.ndarray
    sigmas: np.ndarray
    cov: ErrorCovariance

    def __post_init__(self):
        object.__setattr__(self, "coef1", np.asarray(self.coef1, dtype=float))
        object.__setattr__(self, "coef2", np.asarray(self.coef2, dtype=float))
        object.__setattr__(self, "sigmas", np.asarray(self.sigmas, dtype=float))
        if (self.sigmas < 0).any():
            raise ValueError("random-coefficient spreads must be >= 0")


def effects_from_design(design: DesignMatrices) -> tuple[RandomEffect, ...]:
    """One effect per random design column, equation 1 first, in spec order."""
    effects = []
    for eq, (names, cols) in enumerate(((design.names1, design.random1),
                                        (design.names2, design.random2))):
        for col in cols:
            effects.append(RandomEffect(name=names[col], bindings=((eq, col),)))
    return tuple(effects)


class LoglikKernel:
    """Simulated log-likelihood evaluator with precomputed draw products.

    The per-observation mixture average and the outer sum over observations
    run in a fixed order, so results are bit-identical for any thread count.
    """

    def __init__(self, x1, x2, y1, y2, effects: tuple[RandomEffect, ...],
                 draws: DrawStore | None, threads: int = 1):
        self.x = (np.asarray(x1, dtype=float), np.asarray(x2, dtype=float))
        self.y = (np.asarray(y1, dtype=float), np.asarray(y2, dtype=float))
        self.effects = tuple(effects)
        self.n = self.x[0].shape[0]
        if self.x[1].shape[0] != self.n or len(y1) != self.n or len(y2) != self.n:
            raise ValueError("design matrices and responses must share rows")
        if threads < 1:
            raise ValueError("threads must be >= 1")
        self.threads = threads
        if self.effects:
            if draws is None:
                raise SpecError("random coefficients declared but no draw store given")
            if draws.n_dims != len(self.effects):
                raise SpecError(f"draw store has {draws.n_dims} dimensions, "
                                f"model has {len(self.effects)} random coefficients")
            if draws.n_obs != self.n:
                raise SpecError(f"draw store covers {draws.n_obs} observations, "
                                f"data has {self.n}")
            self.r = draws.draws_per_obs
        else:
            self.r = 1
        self.draws = draws
        # x[:, col] * z[:, :, d] never changes across evaluations
        self.products: tuple[list[tuple[int, np.ndarray]], list[tuple[int, np.ndarray]]] = ([], [])
        for d, effect in enumerate(self.effects):
            for eq, col in effect.bindings:
                p = self.x[eq][:, col][:, None] * draws.z[:, :, d]
                self.products[eq].append((d, p))
        self.log_r = np.log(float(self.r))

    def _chunk_loglik(self, params: RpParameters, lo: int, hi: int,
                      base1: np.ndarray, base2: np.ndarray) -> np.ndarray:
        e1 = base1[lo:hi, None]
        for d, p in self.products[0]:
            e1 = e1 - params.sigmas[d] * p[lo:hi]
        e2 = base2[lo:hi, None]
        for d, p in self.products[1]:
            e2 = e2 - params.sigmas[d] * p[lo:hi]
        low = params.cov.cholesky_lower()
        l11, l21, l22 = low[0, 0], low[1, 0], low[1, 1]
        v1 = e1 / l11
        v2 = (e2 - l21 * v1) / l22
        lnphi = -_LOG_2PI - np.log(l11 * l22) - 0.5 * (v1 * v1 + v2 * v2)
        if lnphi.shape[1] == 1:
            return lnphi[:, 0]
        # log of the mixture average over draws, computed in log space
        m = lnphi.max(axis=1)
        return m + np.log(np.exp(lnphi - m[:, None]).sum(axis=1)) - self.log_r

    def per_observation(self, params: RpParameters) -> np.ndarray:
        base1 = self.y[0] - _rowdot(self.x[0], params.coef1)
        base2 = self.y[1] - _rowdot(self.x[1], params.coef2)
        out = np.empty(self.n)
        if self.threads == 1 or self.n < 2 * self.threads:
            out[:] = self._chunk_loglik(params, 0, self.n, base1, base2)
            return out
        bounds = np.linspace(0, self.n, self.threads + 1, dtype=int)
        with ThreadPoolExecutor(max_workers=self.threads) as pool:
            futures = [
                (lo, hi, pool.submit(self._chunk_loglik, params, lo, hi, base1, base2))
                for lo, hi in zip(bounds[:-1], bounds[1:]) if hi > lo
            ]
            for lo, hi, fut in futures:
                out[lo:hi] = fut.result()
        return out

    def loglik(self, params: RpParameters) -> float:
        value = float(np.sum(self.per_observation(params)))
        if not np.isfinite(value):
            raise EstimationError("simulated log-likelihood is not finite "
                                  "(all draws underflowed)")
        return value


def simulated_loglik(params: RpParameters, design: DesignMatrices,
                     y1, y2, draws: DrawStore | None, threads: int = 1) -> float:
    """Simulated log-likelihood at one natural-scale parameter point."""
    effects = effects_from_design(design)
    kernel = LoglikKernel(design.x1, design.x2, y1, y2, effects, draws, threads)
    return kernel.loglik(params)


# ---------------------------------------------------------------------------
# unconstrained transform


class _Transform:
    """Packing between the optimizer vector and natural-scale parameters.

    Layout: [coef1, coef2, log sigma_d ..., log l11, l21, log l22].
    """

    def __init__(self, k1: int, k2: int, n_effects: int):
        self.k1 = k1
        self.k2 = k2
        self.d = n_effects
        self.size = k1 + k2 + n_effects + 3

    def pack(self, params: RpParameters) -> np.ndarray:
        low = params.cov.cholesky_lower()
        return np.concatenate([
            params.coef1, params.coef2,
            np.log(params.sigmas),
            [np.log(low[0, 0]), low[1, 0], np.log(low[1, 1])],
        ])

    def unpack(self, t: np.ndarray) -> RpParameters:
        k1, k2, d = self.k1, self.k2, self.d
        sigmas = np.exp(t[k1 + k2:k1 + k2 + d])
        l11 = np.exp(t[-3])
        l21 = t[-2]
        l22 = np.exp(t[-1])
        cov = ErrorCovariance(sigma11=l11 * l11,
                              sigma22=l21 * l21 + l22 * l22,
                              sigma12=l11 * l21)
        return RpParameters(coef1=t[:k1], coef2=t[k1:k1 + k2], sigmas=sigmas, cov=cov)

    def natural(self, t: np.ndarray) -> np.ndarray:
        """Natural-scale vector: [coefs..., sigma_d..., sigma1, sigma2, rho]."""
        k1, k2, d = self.k1, self.k2, self.d
        l11, l21, l22 = np.exp(t[-3]), t[-2], np.exp(t[-1])
        s2 = np.hypot(l21, l22)
        return np.concatenate([
            t[:k1 + k2], np.exp(t[k1 + k2:k1 + k2 + d]),
            [l11, s2, l21 / s2],
        ])

    def jacobian(self, t: np.ndarray) -> np.ndarray:
        """d natural / d t, square and invertible for all finite t."""
        k1, k2, d = self.k1, self.k2, self.d
        j = np.zeros((self.size, self.size))
        j[:k1 + k2, :k1 + k2] = np.eye(k1 + k2)
        sig = np.exp(t[k1 + k2:k1 + k2 + d])
        for i in range(d):
            j[k1 + k2 + i, k1 + k2 + i] = sig[i]
        l11, l21, l22 = np.exp(t[-3]), t[-2], np.exp(t[-1])
        s2 = np.hypot(l21, l22)
        j[-3, -3] = l11                              # d sigma1 / d log l11
        j[-2, -2] = l21 / s2                         # d sigma2 / d l21
        j[-2, -1] = l22 * l22 / s2                   # d sigma2 / d log l22
        j[-1, -2] = l22 * l22 / s2 ** 3              # d rho / d l21
        j[-1, -1] = -l21 * l22 * l22 / s2 ** 3       # d rho / d log l22
        return j


def _central_gradient(fun, t: np.ndarray, rel_step: float) -> np.ndarray:
    g = np.empty_like(t)
    for j in range(t.size):
        h = rel_step * max(1.0, abs(t[j]))
        tp = t.copy()
        tm = t.copy()
        tp[j] += h
        tm[j] -= h
        g[j] = (fun(tp) - fun(tm)) / (2.0 * h)
    return g


def _central_hessian(fun, t: np.ndarray, rel_step: float) -> np.ndarray:
    p = t.size
    h = rel_step * np.maximum(1.0, np.abs(t))
    hess = np.empty((p, p))
    f0 = fun(t)
    for i in range(p):
        tp = t.copy()
        tm = t.copy()
        tp[i] += h[i]
        tm[i] -= h[i]
        hess[i, i] = (fun(tp) - 2.0 * f0 + fun(tm)) / h[i] ** 2
    for i in range(p):
        for j in range(i + 1, p):
            tpp = t.copy()
            tpm = t.copy()
            tmp = t.copy()
            tmm = t.copy()
            tpp[[i, j]] += [h[i], h[j]]
            tpm[i] += h[i]
            tpm[j] -= h[j]
            tmp[i] -= h[i]
            tmp[j] += h[j]
            tmm[[i, j]] -= [h[i], h[j]]
            hess[i, j] = hess[j, i] = (
                fun(tpp) - fun(tpm) - fun(tmp) + fun(tmm)) / (4.0 * h[i] * h[j])
    return hess


def _natural_covariance(hess: np.ndarray, jacobian: np.ndarray
                        ) -> tuple[np.ndarray | None, np.ndarray | None]:
    """Delta-method parameter covariance from the objective Hessian.

    Returns (None, None) when the Hessian cannot be inverted or yields
    non-positive variances; the fit is still usable, just without SEs.
    """
    try:
        cov_t = np.linalg.inv(hess)
        cov_nat = jacobian @ cov_t @ jacobian.T
        diag = np.diag(cov_nat)
        if (diag <= 0).any() or not np.isfinite(diag).all():
            raise np.linalg.LinAlgError("non-positive variance estimates")
        return cov_nat, np.sqrt(diag)
    except np.linalg.LinAlgError:
        return None, None


@dataclass(frozen=True)
class RpFitOptions:
    max_iterations: int = 500
    grad_tol: float = 1e-5           # natural-scale gradient infinity norm
    loglik_rel_tol: float = 1e-9     # relative change between accepted points
    grad_step: float = 1e-4          # relative central-difference step
    hessian_step: float = 1e-4       # relative central-difference step
    threads: int = 1
    start: RpParameters | None = None


@dataclass(frozen=True)
class Convergence:
    status: str
    iterations: int
    grad_norm: float
    loglik_path: tuple[float, ...] = field(repr=False, default=())

    @property
    def converged(self) -> bool:
        return self.status == "converged"


@dataclass(frozen=True)
class CoefficientEstimate:
    """One reported coefficient: a fixed value, or a normal (mu, sigma) pair."""

    name: str
    equation: str
    kind: str                     # "fixed" or "random-normal"
    estimate: float               # the fixed value, or the random mean
    se: float | None
    sigma: float | None = None
    sigma_se: float | None = None

    @property
    def mu(self) -> float:
        return self.estimate

    @property
    def mu_se(self) -> float | None:
        return self.se


@dataclass(frozen=True)
class RpSureFit:
    """Random-parameter fit on the natural scale, with delta-method SEs."""

    n: int
    k: int
    draws_per_obs: int
    loglik: float
    coefficients: tuple[CoefficientEstimate, ...]
    sigma: ErrorCovariance
    sigma1_se: float | None
    sigma2_se: float | None
    rho_se: float | None
    param_names: tuple[str, ...]
    param_cov: np.ndarray | None
    convergence: Convergence
    draw_config: object | None = None

    @property
    def random_coefficients(self) -> tuple[CoefficientEstimate, ...]:
        return tuple(c for c in self.coefficients if c.kind == "random-normal")

    def coefficient(self, name: str) -> CoefficientEstimate:
        matches = [c for c in self.coefficients
                   if c.name == name or f"{c.equation}:{c.name}" == name]
        if not matches:
            raise KeyError(f"no coefficient named {name!r}")
        if len(matches) > 1:
            raise KeyError(f"coefficient name {name!r} is ambiguous; qualify with equation")
        return matches[0]


class _BfgsMinimizer:
    """Monotone BFGS with backtracking line search on the transform space."""

    def __init__(self, fun, grad, x0: np.ndarray):
        self.fun = fun
        self.grad = grad
        self.x = x0.copy()
        self.f = fun(self.x)
        self.g = grad(self.x)
        self.h = np.eye(x0.size)
        self.first_update = True
        self.path = [self.f]

    def _line_search(self, direction: np.ndarray) -> tuple[float, float] | None:
        slope = float(self.g @ direction)
        if slope >= 0:
            return None
        step = 1.0
        for _ in range(40):
            f_new = self.fun(self.x + step * direction)
            if f_new <= self.f + 1e-4 * step * slope:
                return step, f_new
            step *= 0.5
        return None

    def step(self) -> bool:
        """One accepted descent step; False when no progress is possible."""
        direction = -self.h @ self.g
        if self.first_update:
            # no curvature information yet: keep the first probe bounded
            scale = np.max(np.abs(direction))
            if scale > 1.0:
                direction = direction / scale
        result = self._line_search(direction)
        if result is None:
            # curvature information went stale; retry once from steepest descent
            self.h = np.eye(self.x.size)
            self.first_update = True
            direction = -self.g
            result = self._line_search(direction)
            if result is None:
                return False
        step, f_new = result
        x_new = self.x + step * direction
        g_new = self.grad(x_new)
        s = x_new - self.x
        yv = g_new - self.g
        ys = float(yv @ s)
        if ys > 1e-10 * np.linalg.norm(s) * np.linalg.norm(yv):
            if self.first_update:
                self.h = (ys / float(yv @ yv)) * np.eye(self.x.size)
                self.first_update = False
            hy = self.h @ yv
            rho = 1.0 / ys
            self.h += (rho * rho * (float(yv @ hy) + ys)) * np.outer(s, s) \
                - rho * (np.outer(hy, s) + np.outer(s, hy))
        self.x, self.f, self.g = x_new, f_new, g_new
        self.path.append(self.f)
        return True


def fit_rp_sure(design: DesignMatrices, y1, y2,
                draws: DrawStore | None = None,
                options: RpFitOptions = RpFitOptions(),
                eq_names: tuple[str, str] = ("vehicle_1", "vehicle_2"),
                start_fit: SureFit | None = None) -> RpSureFit:
    """Maximize the simulated likelihood by quasi-Newton ascent.

    Starting values come from the FGLS fit (random-coefficient spreads start
    at 0.1 |coefficient|, floored at 1e-3).  Convergence requires the
    natural-scale gradient infinity norm at or below grad_tol, or a relative
    log-likelihood change at or below loglik_rel_tol; hitting the iteration
    cap returns the fit with status "not converged" instead of raising.
    """
    y1 = np.asarray(y1, dtype=float)
    y2 = np.asarray(y2, dtype=float)
    effects = effects_from_design(design)
    kernel = LoglikKernel(design.x1, design.x2, y1, y2, effects, draws,
                          threads=options.threads)
    k1, k2 = design.x1.shape[1], design.x2.shape[1]
    transform = _Transform(k1, k2, len(effects))

    if options.start is not None:
        start = options.start
        if start.sigmas.size and (start.sigmas <= 0).any():
            raise SpecError("starting spreads must be strictly positive "
                            "(the optimizer works on their logs)")
    else:
        if start_fit is None:
            start_fit = fgls_fit(design.x1, design.x2, y1, y2,
                                 names1=design.names1, names2=design.names2,
                                 eq_names=eq_names)
        coef1 = start_fit.equations[0].coef.copy()
        coef2 = start_fit.equations[1].coef.copy()
        sigmas = []
        for effect in effects:
            eq, col = effect.bindings[0]
            base = coef1[col] if eq == 0 else coef2[col]
            sigmas.append(max(0.1 * abs(base), _MIN_SIGMA_START))
        start = RpParameters(coef1=coef1, coef2=coef2,
                             sigmas=np.array(sigmas), cov=start_fit.sigma)

    def objective(t: np.ndarray) -> float:
        # a trial point whose likelihood underflows is simply rejected by
        # the line search; only the accepted path must stay finite
        try:
            return -kernel.loglik(transform.unpack(t))
        except (EstimationError, DegenerateDataError):
            return float("inf")

    def gradient(t: np.ndarray) -> np.ndarray:
        return _central_gradient(objective, t, options.grad_step)

    def natural_grad_norm(t: np.ndarray, g: np.ndarray) -> float:
        # g is the transform-space gradient of -loglik; map through J^-T
        g_nat = np.linalg.solve(transform.jacobian(t).T, g)
        return float(np.max(np.abs(g_nat)))

    minimizer = _BfgsMinimizer(objective, gradient, transform.pack(start))
    status = "not converged"
    grad_norm = natural_grad_norm(minimizer.x, minimizer.g)
    iterations = 0
    while iterations < options.max_iterations:
        if grad_norm <= options.grad_tol:
            status = "converged"
            break
        f_before = minimizer.f
        if not minimizer.step():
            # the line search cannot improve and the gradient test failed
            break
        iterations += 1
        grad_norm = natural_grad_norm(minimizer.x, minimizer.g)
        if abs(f_before - minimizer.f) <= options.loglik_rel_tol * max(1.0, abs(f_before)):
            status = "converged"
            break

    t_hat = minimizer.x
    params = transform.unpack(t_hat)
    loglik = -minimizer.f
    natural = transform.natural(t_hat)

    hess = _central_hessian(objective, t_hat, options.hessian_step)
    param_cov, ses = _natural_covariance(hess, transform.jacobian(t_hat))

    def se_at(i: int) -> float | None:
        return None if ses is None else float(ses[i])

    names = []
    coefficients = []
    random_positions = {}
    for d, effect in enumerate(effects):
        random_positions[effect.bindings[0]] = k1 + k2 + d
    offset = 0
    for eq, (eq_design_names, coefs) in enumerate(
            ((design.names1, params.coef1), (design.names2, params.coef2))):
        for col, coef_name in enumerate(eq_design_names):
            idx = offset + col
            names.append(f"{eq_names[eq]}:{coef_name}")
            spread_idx = random_positions.get((eq, col))
            if spread_idx is None:
                coefficients.append(CoefficientEstimate(
                    name=coef_name, equation=eq_names[eq], kind="fixed",
                    estimate=float(coefs[col]), se=se_at(idx)))
            else:
                coefficients.append(CoefficientEstimate(
                    name=coef_name, equation=eq_names[eq], kind="random-normal",
                    estimate=float(coefs[col]), se=se_at(idx),
                    sigma=float(natural[spread_idx]), sigma_se=se_at(spread_idx)))
        offset += len(eq_design_names)
    names.extend(f"sd:{e.name}" for e in effects)
    names.extend(["sigma1", "sigma2", "rho"])

    return RpSureFit(
        n=kernel.n,
        k=transform.size,
        draws_per_obs=kernel.r if effects else 0,
        loglik=loglik,
        coefficients=tuple(coefficients),
        sigma=params.cov,
        sigma1_se=se_at(transform.size - 3),
        sigma2_se=se_at(transform.size - 2),
        rho_se=se_at(transform.size - 1),
        param_names=tuple(names),
        param_cov=param_cov,
        convergence=Convergence(status=status, iterations=iterations,
                                grad_norm=grad_norm,
                                loglik_path=tuple(-f for f in minimizer.path)),
        draw_config=None if draws is None else draws.config,
    )


@dataclass(frozen=True)
class RetentionVerdict:
    verdict: str            # "retain-random" | "prefer-fixed" | "indeterminate"
    mean_t: float | None
    sigma_t: float | None


def rp_retention_test(fit: RpSureFit, name: str,
                      threshold: float = 1.96) -> RetentionVerdict:
    """Keep a coefficient random iff its spread is statistically significant.

    A significant spread retains the coefficient whether or not the mean is
    also significant (a zero mean with real spread still signals
    heterogeneity); the threshold comparison is inclusive.
    """
    coef = fit.coefficient(name)
    if coef.kind != "random-normal":
        raise SpecError(f"coefficient {name!r} is not random in this fit")
    mean_t = None
    if coef.se not in (None, 0.0):
        mean_t = coef.estimate / coef.se
    if coef.sigma_se in (None, 0.0):
        return RetentionVerdict(verdict="indeterminate", mean_t=mean_t, sigma_t=None)
    sigma_t = coef.sigma / coef.sigma_se
    verdict = "retain-random" if abs(sigma_t) >= threshold else "prefer-fixed"
    return RetentionVerdict(verdict=verdict, mean_t=mean_t, sigma_t=sigma_t)
