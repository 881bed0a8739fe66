"""Daily structural-equation model of socioeconomics, latent exposure, and cases.

For each day the model links a ZCTA cross-section of 11 observed
variables: six static socioeconomic covariates S, yesterday's
transformed case count, the three windowed mobility measures (CEI,
prop-home, time-home), and today's transformed case count y. A latent
exposure factor eta carries the causal path:

    eta = b_S' S + zeta                    (structural)
    CEI = eta + e_E                        (loading fixed at 1)
    P   = load_P * eta + e_P
    T   = load_T * eta + e_T
    y   = b_lag * y_lag + b_eta * eta + e_y

All intercepts and the daily fixed effect are absorbed by per-day mean
centering; the spatial fixed effect is not identifiable in a single
cross-section and folds into the residuals. The exogenous block
(S, y_lag) has its covariance fixed at the sample values, leaving 15
free parameters: 6 structural coefficients, 2 free loadings, 2 outcome
paths, and 5 error variances.

Estimation minimizes the normal-theory ML discrepancy between the
sample covariance S and the model-implied covariance Sigma(theta):

    F = ln|Sigma| + tr(S Sigma^-1) - ln|S| - p

with variances optimized on the log scale, quasi-Newton (BFGS) descent
with an analytic gradient, jittered restarts on failure, and standard
errors from the finite-difference Hessian of F at the optimum.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from datetime import date, timedelta
from typing import Mapping, Sequence

import numpy as np
import scipy.linalg
from scipy.optimize import minimize
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError
from sklearn.utils import check_array

from .core import Socioeconomics, log1p_transform, moving_average_7
from .distancing import WindowMobility
from .errors import ConfigurationError, DataError
from .ingest import CasesSeries

#: Value returned by the discrepancy when Sigma is numerically unusable.
PENALTY_F = 1e10

#: Default minimum cross-section size for a daily fit.
DEFAULT_MIN_ROWS = 30


class PanelTooSmallError(DataError):
    """A day's complete-case cross-section is below the minimum size."""


@dataclass(frozen=True)
class SemSpec:
    """Names and roles of the observed variables.

    The first indicator carries the fixed unit loading that identifies
    the latent scale. The observed order is socio + lag + indicators +
    outcome and is the column order of every panel matrix.
    """

    socio_vars: tuple[str, ...] = (
        "income",
        "low_edu",
        "poor",
        "age65",
        "black",
        "transit",
    )
    lag_var: str = "cases_lag"
    indicator_vars: tuple[str, ...] = ("cei", "prop_home", "time_home")
    outcome_var: str = "cases"

    def __post_init__(self):
        names = self.observed
        if len(set(names)) != len(names):
            raise ConfigurationError("observed variable names must be unique")
        if len(self.indicator_vars) < 2:
            raise ConfigurationError("need at least 2 indicators to identify the latent")

    @property
    def observed(self) -> tuple[str, ...]:
        return (
            self.socio_vars + (self.lag_var,) + self.indicator_vars + (self.outcome_var,)
        )

    @property
    def n_observed(self) -> int:
        return len(self.observed)

    @property
    def n_exo(self) -> int:
        return len(self.socio_vars) + 1

    @property
    def n_endo(self) -> int:
        return len(self.indicator_vars) + 1

    @property
    def param_names(self) -> tuple[str, ...]:
        return (
            tuple(f"eta_on_{s}" for s in self.socio_vars)
            + tuple(f"load_{v}" for v in self.indicator_vars[1:])
            + (f"{self.outcome_var}_on_lag", f"{self.outcome_var}_on_eta")
            + ("var_eta",)
            + tuple(f"var_e_{v}" for v in self.indicator_vars)
            + (f"var_e_{self.outcome_var}",)
        )

    @property
    def n_params(self) -> int:
        return len(self.param_names)

    @property
    def variance_indices(self) -> np.ndarray:
        """Indices of parameters encoded on the log scale during optimization."""
        k = self.n_params
        return np.arange(k - self.n_endo - 1, k)


def encode_params(theta_natural: np.ndarray, spec: SemSpec) -> np.ndarray:
    """Natural-scale parameters to optimizer scale (log variances)."""
    theta = np.array(theta_natural, dtype=float)
    idx = spec.variance_indices
    if (theta[idx] <= 0).any():
        raise ConfigurationError("variance parameters must be positive")
    theta[idx] = np.log(theta[idx])
    return theta


def decode_params(theta_opt: np.ndarray, spec: SemSpec) -> np.ndarray:
    """Optimizer-scale parameters back to the natural scale."""
    theta = np.array(theta_opt, dtype=float)
    idx = spec.variance_indices
    theta[idx] = np.exp(theta[idx])
    return theta


def _structure(theta_opt: np.ndarray, spec: SemSpec):
    """Unpack optimizer-scale parameters into the model matrices."""
    ns = len(spec.socio_vars)
    ni = len(spec.indicator_vars)
    nx = spec.n_exo
    pos = 0
    beta_s = theta_opt[pos : pos + ns]
    pos += ns
    free_loads = theta_opt[pos : pos + ni - 1]
    pos += ni - 1
    b_lag = theta_opt[pos]
    b_eta = theta_opt[pos + 1]
    pos += 2
    with np.errstate(over="ignore"):  # overflow -> inf, caught by penalty path
        variances = np.exp(theta_opt[pos:])
    psi = variances[0]
    resid = variances[1:]

    b = np.zeros(nx)
    b[:ns] = beta_s  # eta regresses on socio only, not on the lag
    lam = np.concatenate([[1.0], free_loads, [b_eta]])
    gamma = np.outer(lam, b)
    gamma[-1, nx - 1] += b_lag  # direct lag -> outcome path
    return b, lam, gamma, b_lag, psi, resid


def implied_covariance(
    theta: np.ndarray, spec: SemSpec, exo_cov: np.ndarray
) -> np.ndarray:
    """Model-implied covariance of the observed vector.

    ``theta`` is on the optimizer scale (variances as logs); ``exo_cov``
    is the fixed covariance of the exogenous block (socio + lag).
    Symmetric by construction.
    """
    theta = np.asarray(theta, dtype=float)
    phi = np.asarray(exo_cov, dtype=float)
    nx = spec.n_exo
    if theta.shape != (spec.n_params,):
        raise ConfigurationError(
            f"expected {spec.n_params} parameters, got shape {theta.shape}"
        )
    if phi.shape != (nx, nx):
        raise ConfigurationError(f"exo_cov must be {nx}x{nx}, got {phi.shape}")
    _, lam, gamma, _, psi, resid = _structure(theta, spec)
    cross = phi @ gamma.T
    endo = gamma @ cross + psi * np.outer(lam, lam) + np.diag(resid)
    endo = (endo + endo.T) / 2.0  # exact symmetry under float rounding
    p = spec.n_observed
    sigma = np.empty((p, p))
    sigma[:nx, :nx] = phi
    sigma[:nx, nx:] = cross
    sigma[nx:, :nx] = cross.T
    sigma[nx:, nx:] = endo
    return sigma


def _sigma_derivatives(theta_opt: np.ndarray, spec: SemSpec, phi: np.ndarray):
    """Yield (param index, dSigma/dtheta_k) on the optimizer scale."""
    ns = len(spec.socio_vars)
    ni = len(spec.indicator_vars)
    nx, nm = spec.n_exo, spec.n_endo
    p = spec.n_observed
    b, lam, gamma, _, psi, resid = _structure(theta_opt, spec)
    gphi = gamma @ phi

    def assemble(dgamma: np.ndarray | None, dendo_extra: np.ndarray | None):
        d = np.zeros((p, p))
        if dgamma is not None:
            dcross = phi @ dgamma.T
            d[:nx, nx:] = dcross
            d[nx:, :nx] = dcross.T
            block = dgamma @ gphi.T
            d[nx:, nx:] = block + block.T
        if dendo_extra is not None:
            d[nx:, nx:] += dendo_extra
        return d

    k = 0
    for j in range(ns):  # structural coefficients eta <- socio_j
        dgamma = np.zeros((nm, nx))
        dgamma[:, j] = lam
        yield k, assemble(dgamma, None)
        k += 1
    for i in range(1, ni):  # free loadings
        dgamma = np.zeros((nm, nx))
        dgamma[i] = b
        e = np.zeros(nm)
        e[i] = 1.0
        yield k, assemble(dgamma, psi * (np.outer(e, lam) + np.outer(lam, e)))
        k += 1
    dgamma = np.zeros((nm, nx))  # outcome on lag
    dgamma[-1, -1] = 1.0
    yield k, assemble(dgamma, None)
    k += 1
    dgamma = np.zeros((nm, nx))  # outcome on eta
    dgamma[-1] = b
    e = np.zeros(nm)
    e[-1] = 1.0
    yield k, assemble(dgamma, psi * (np.outer(e, lam) + np.outer(lam, e)))
    k += 1
    yield k, assemble(None, psi * np.outer(lam, lam))  # d/dlog psi
    k += 1
    for i in range(nm):  # d/dlog theta_i
        extra = np.zeros((nm, nm))
        extra[i, i] = resid[i]
        yield k, assemble(None, extra)
        k += 1


def ml_fit_value(sample_cov: np.ndarray, sigma: np.ndarray) -> float:
    """ln|Sigma| + tr(S Sigma^-1) - ln|S| - p for PD matrices S, Sigma.

    Evaluated through the generalized eigenvalues lam_i of (S, Sigma) as
    sum_i [(lam_i - 1) - log1p(lam_i - 1)], which is algebraically the
    same quantity, is zero iff Sigma equals S, and stays nonnegative
    even at float precision (each term is nonnegative and is clamped
    against rounding noise).
    """
    s = np.asarray(sample_cov, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    lam = scipy.linalg.eigh(s, sigma, eigvals_only=True)
    if (lam <= 0).any():
        raise DataError("sample covariance is not positive definite")
    centered = lam - 1.0
    terms = centered - np.log1p(centered)
    return float(np.maximum(terms, 0.0).sum())


def ml_discrepancy(
    theta: np.ndarray,
    sample_cov: np.ndarray,
    spec: SemSpec,
    exo_cov: np.ndarray,
) -> float:
    """Normal-theory ML fitting function F(theta).

    Zero exactly when the implied covariance equals the sample
    covariance, positive otherwise. Numerically unusable Sigma (overflow
    or a nonpositive determinant) returns the finite :data:`PENALTY_F`.
    """
    value, _ = ml_value_and_gradient(theta, sample_cov, spec, exo_cov)
    return value


def ml_value_and_gradient(
    theta: np.ndarray,
    sample_cov: np.ndarray,
    spec: SemSpec,
    exo_cov: np.ndarray,
) -> tuple[float, np.ndarray]:
    """F(theta) and its analytic gradient on the optimizer scale.

    dF/dt = tr[(Sigma^-1 - Sigma^-1 S Sigma^-1) dSigma/dt].
    """
    theta = np.asarray(theta, dtype=float)
    s = np.asarray(sample_cov, dtype=float)
    grad = np.zeros(spec.n_params)
    if not np.isfinite(theta).all():
        return PENALTY_F, grad
    with np.errstate(invalid="ignore", over="ignore"):  # penalty path handles inf/nan
        sigma = implied_covariance(theta, spec, exo_cov)
    if not np.isfinite(sigma).all():
        return PENALTY_F, grad
    try:
        np.linalg.cholesky(sigma)
        value = ml_fit_value(s, sigma)
        sigma_inv = np.linalg.inv(sigma)
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError):
        return PENALTY_F, grad
    if not math.isfinite(value):
        return PENALTY_F, grad
    weight = sigma_inv - sigma_inv @ s @ sigma_inv
    for k, dsigma in _sigma_derivatives(theta, spec, np.asarray(exo_cov, dtype=float)):
        grad[k] = (weight * dsigma).sum()
    return value, grad


def _start_values(sample_cov: np.ndarray, spec: SemSpec) -> np.ndarray:
    """Heuristic starting point from regressions on the sample covariance."""
    ns = len(spec.socio_vars)
    ni = len(spec.indicator_vars)
    nx = spec.n_exo
    s = np.asarray(sample_cov, dtype=float)
    p = spec.n_observed
    i_first = nx  # first indicator column (fixed loading)
    i_out = p - 1

    floor = 1e-8
    s_ss = s[:ns, :ns]
    beta_s = np.linalg.lstsq(s_ss, s[:ns, i_first], rcond=None)[0]
    explained = float(beta_s @ s_ss @ beta_s)
    resid_first = max(s[i_first, i_first] - explained, floor)
    psi0 = max(resid_first / 2.0, floor)
    theta_first = max(resid_first - psi0, floor)
    eta_var = explained + psi0

    loads = []
    thetas = [theta_first]
    for i in range(1, ni):
        col = nx + i
        load = s[col, i_first] / max(s[i_first, i_first], floor)
        loads.append(load)
        thetas.append(max(s[col, col] - load * load * eta_var, 0.1 * s[col, col], floor))

    pred = [nx - 1, i_first]  # lag and the unit-loading indicator as eta proxy
    s_pp = s[np.ix_(pred, pred)]
    coef = np.linalg.lstsq(s_pp, s[pred, i_out], rcond=None)[0]
    b_lag0, b_eta0 = float(coef[0]), float(coef[1])
    resid_y = max(s[i_out, i_out] - float(coef @ s_pp @ coef), 0.1 * s[i_out, i_out], floor)

    natural = np.concatenate(
        [beta_s, loads, [b_lag0, b_eta0], [psi0], thetas, [resid_y]]
    )
    return encode_params(natural, spec)


@dataclass(frozen=True)
class SemEstimate:
    """One fitted daily model."""

    day: date | None
    param_names: tuple[str, ...]
    estimates: np.ndarray  # natural scale
    std_errors: np.ndarray | None
    f_ml: float
    grad_norm: float
    converged: bool
    n_obs: int
    n_excluded: int = 0
    n_iter: int = 0
    restarts_used: int = 0

    def as_dict(self) -> dict[str, float]:
        return dict(zip(self.param_names, self.estimates.tolist()))


class DailyExposureSem(BaseEstimator):
    """Maximum-likelihood covariance fit of the daily exposure model.

    Scikit-learn style estimator: ``fit`` takes an (n_obs, 11) array
    whose columns follow ``spec.observed``. Rows are mean-centered,
    the sample covariance is formed with denominator n-1, and the free
    parameters are estimated by BFGS on the penalized-log-scale
    discrepancy with up to ``n_restarts`` jittered restarts.

    Parameters
    ----------
    spec : SemSpec, optional
        Variable roles; defaults to the canonical 11-variable layout.
    max_iter : int
        BFGS iteration cap per attempt.
    grad_tol : float
        Convergence requires the gradient infinity norm below this.
    f_rel_tol : float
        Declare an attempt stalled when the relative F improvement over
        an iteration falls below this without meeting ``grad_tol``.
    n_restarts : int
        Jittered restarts after a failed first attempt.
    hessian_step : float
        Relative central-difference step for the standard-error Hessian.
    random_state : int
        Seed for restart jitter.

    Attributes
    ----------
    params_ : ndarray of shape (15,)
        Natural-scale estimates in ``spec.param_names`` order.
    std_errors_ : ndarray or None
        Delta-method standard errors; None when the fit did not converge.
    converged_ : bool
        True only when the final gradient infinity norm is below
        ``grad_tol``.
    f_ml_ : float
        Discrepancy at the optimum.
    grad_norm_ : float
        Gradient infinity norm at the optimum (optimizer scale).
    sample_cov_, exo_cov_, implied_cov_ : ndarray
        Sample, fixed exogenous, and fitted implied covariances.
    """

    def __init__(
        self,
        spec: SemSpec | None = None,
        max_iter: int = 500,
        grad_tol: float = 1e-6,
        f_rel_tol: float = 1e-10,
        n_restarts: int = 3,
        hessian_step: float = 1e-4,
        random_state: int = 0,
    ):
        self.spec = spec
        self.max_iter = max_iter
        self.grad_tol = grad_tol
        self.f_rel_tol = f_rel_tol
        self.n_restarts = n_restarts
        self.hessian_step = hessian_step
        self.random_state = random_state

    def _spec(self) -> SemSpec:
        return self.spec if self.spec is not None else SemSpec()

    def fit(self, X, y=None):
        spec = self._spec()
        X = check_array(X, dtype=float, ensure_min_samples=spec.n_observed + 1)
        if X.shape[1] != spec.n_observed:
            raise ConfigurationError(
                f"expected {spec.n_observed} columns ({', '.join(spec.observed)}), "
                f"got {X.shape[1]}"
            )
        n = X.shape[0]
        centered = X - X.mean(axis=0, keepdims=True)
        sample_cov = centered.T @ centered / (n - 1)
        exo_cov = sample_cov[: spec.n_exo, : spec.n_exo]
        try:
            np.linalg.cholesky(sample_cov)
        except np.linalg.LinAlgError:
            raise DataError("sample covariance is not positive definite") from None

        start = _start_values(sample_cov, spec)
        rng = np.random.default_rng(self.random_state)
        best = None
        attempts = 0
        for attempt in range(1 + self.n_restarts):
            attempts = attempt + 1
            x0 = start if attempt == 0 else self._jitter(start, spec, rng)
            result = minimize(
                ml_value_and_gradient,
                x0,
                args=(sample_cov, spec, exo_cov),
                method="BFGS",
                jac=True,
                options={
                    "maxiter": self.max_iter,
                    "gtol": self.grad_tol,
                    "norm": np.inf,
                    "xrtol": self.f_rel_tol,
                },
            )
            gnorm = float(np.max(np.abs(result.jac)))
            candidate = (result.fun, gnorm, result.x, int(result.nit))
            if best is None or candidate[0] < best[0]:
                best = candidate
            if gnorm < self.grad_tol:
                best = candidate
                break

        f_opt, gnorm, x_opt, n_iter = best
        converged = bool(gnorm < self.grad_tol and f_opt < PENALTY_F)

        self.n_obs_ = n
        self.sample_cov_ = sample_cov
        self.exo_cov_ = exo_cov
        self.params_ = decode_params(x_opt, spec)
        self.param_names_ = spec.param_names
        self.f_ml_ = float(f_opt)
        self.grad_norm_ = gnorm
        self.converged_ = converged
        self.n_iter_ = n_iter
        self.restarts_used_ = attempts - 1
        self.implied_cov_ = implied_covariance(x_opt, spec, exo_cov)
        self.std_errors_ = self._standard_errors() if converged else None
        return self

    def _jitter(self, start: np.ndarray, spec: SemSpec, rng) -> np.ndarray:
        noise = rng.normal(size=start.shape)
        jittered = start.copy()
        idx = spec.variance_indices
        path = np.ones(len(start), dtype=bool)
        path[idx] = False
        jittered[path] += 0.25 * noise[path] * np.maximum(np.abs(start[path]), 0.5)
        jittered[idx] += 0.5 * noise[idx]
        return jittered

    def _natural_gradient(self, theta_natural: np.ndarray, spec: SemSpec) -> np.ndarray:
        theta_opt = encode_params(theta_natural, spec)
        _, grad = ml_value_and_gradient(theta_opt, self.sample_cov_, spec, self.exo_cov_)
        grad = grad.copy()
        idx = spec.variance_indices
        grad[idx] /= theta_natural[idx]  # d/dvar = d/dlogvar / var
        return grad

    def _standard_errors(self) -> np.ndarray | None:
        """SEs from (2 / (n - 1)) * inverse Hessian of F, natural scale.

        The Hessian is built by central finite differences of the
        analytic gradient with a relative step, then symmetrized.
        """
        spec = self._spec()
        theta = self.params_
        k = spec.n_params
        hess = np.empty((k, k))
        for i in range(k):
            h = self.hessian_step * max(abs(theta[i]), 1.0)
            idx = spec.variance_indices
            if i in idx:
                h = min(h, 0.5 * theta[i])  # keep the variance positive
            up = theta.copy()
            up[i] += h
            dn = theta.copy()
            dn[i] -= h
            hess[i] = (self._natural_gradient(up, spec) - self._natural_gradient(dn, spec)) / (
                2.0 * h
            )
        hess = (hess + hess.T) / 2.0
        try:
            acov = (2.0 / (self.n_obs_ - 1)) * np.linalg.inv(hess)
        except np.linalg.LinAlgError:
            return None
        diag = np.diag(acov)
        ses = np.full(k, np.nan)
        ok = diag > 0
        ses[ok] = np.sqrt(diag[ok])
        return ses

    def estimate(self, day: date | None = None, n_excluded: int = 0) -> SemEstimate:
        if not hasattr(self, "params_"):
            raise NotFittedError("fit the estimator before extracting an estimate")
        return SemEstimate(
            day=day,
            param_names=self.param_names_,
            estimates=self.params_,
            std_errors=self.std_errors_,
            f_ml=self.f_ml_,
            grad_norm=self.grad_norm_,
            converged=self.converged_,
            n_obs=self.n_obs_,
            n_excluded=n_excluded,
            n_iter=self.n_iter_,
            restarts_used=self.restarts_used_,
        )


@dataclass(frozen=True)
class PanelDay:
    """Complete-case cross-section for one day."""

    day: date
    zctas: tuple[str, ...]
    X: np.ndarray  # (n, 11) in SemSpec.observed order
    n_excluded: int
    columns: tuple[str, ...]


def build_panel(
    t: date,
    window_table: Mapping[tuple[str, date], WindowMobility],
    cases: CasesSeries,
    socio: Socioeconomics,
    spec: SemSpec | None = None,
    lag: int = 1,
    min_rows: int = DEFAULT_MIN_ROWS,
) -> PanelDay:
    """Assemble the day-t cross-section.

    One row per ZCTA with complete data: the 6 socioeconomic covariates,
    log1p of cases on t-lag and t, and the windowed mobility trio.
    ZCTAs missing any component are excluded and counted. Fewer than
    ``min_rows`` complete rows raises :class:`PanelTooSmallError`.
    """
    spec = spec or SemSpec()
    rows = []
    keep = []
    excluded = 0
    for zcta in sorted(socio):
        wm = window_table.get((zcta, t))
        y_t = cases.get((zcta, t))
        y_prev = cases.get((zcta, t - timedelta(days=lag)))
        if wm is None or y_t is None or y_prev is None:
            excluded += 1
            continue
        s = socio[zcta].vector()
        rows.append(
            list(s)
            + [
                log1p_transform(float(y_prev)),
                wm.cei_window,
                wm.prop_home,
                wm.time_home,
                log1p_transform(float(y_t)),
            ]
        )
        keep.append(zcta)
    if len(rows) < min_rows:
        raise PanelTooSmallError(
            f"{t.isoformat()}: {len(rows)} complete rows (minimum {min_rows}), "
            f"{excluded} excluded"
        )
    return PanelDay(
        day=t,
        zctas=tuple(keep),
        X=np.array(rows, dtype=float),
        n_excluded=excluded,
        columns=spec.observed,
    )


def fit_daily(panel: PanelDay, spec: SemSpec | None = None, **options) -> SemEstimate:
    """Fit one day's model and package the result."""
    est = DailyExposureSem(spec=spec, **options).fit(panel.X)
    return est.estimate(day=panel.day, n_excluded=panel.n_excluded)


@dataclass
class SemSeries:
    """Daily estimates plus the days that could not be fitted."""

    estimates: list[SemEstimate] = field(default_factory=list)
    skipped: list[tuple[date, str]] = field(default_factory=list)

    def overlay(self, params: Sequence[str] = ("eta_on_income", "cases_on_eta")):
        """Trailing 7-day moving average of selected coefficient series.

        Smoothing runs within each contiguous run of fitted days; gaps
        restart the window. Report plumbing only.
        """
        out: dict[str, list[tuple[date, float]]] = {name: [] for name in params}
        fitted = [e for e in self.estimates if e.day is not None]
        fitted.sort(key=lambda e: e.day)
        runs: list[list[SemEstimate]] = []
        for est in fitted:
            if runs and (est.day - runs[-1][-1].day).days == 1:
                runs[-1].append(est)
            else:
                runs.append([est])
        for name in params:
            for run in runs:
                series = [(e.day, e.as_dict()[name]) for e in run]
                out[name].extend(moving_average_7(series))
        return out


def fit_series(
    panels: Sequence[PanelDay | tuple[date, str]],
    spec: SemSpec | None = None,
    **options,
) -> SemSeries:
    """Fit every panel in date order; entries that are (day, reason)
    tuples are carried through as gaps."""
    series = SemSeries()
    for item in panels:
        if isinstance(item, PanelDay):
            series.estimates.append(fit_daily(item, spec=spec, **options))
        else:
            series.skipped.append(item)
    series.estimates.sort(key=lambda e: e.day)
    series.skipped.sort()
    return series
