import math
from datetime import date, timedelta

import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from ceikit.core import SocioRow
from ceikit.distancing import WindowMobility
from ceikit.errors import ConfigurationError, DataError
from ceikit.sem import (
    DailyExposureSem,
    PanelTooSmallError,
    SemSpec,
    build_panel,
    decode_params,
    encode_params,
    fit_daily,
    fit_series,
    implied_covariance,
    ml_discrepancy,
    ml_fit_value,
    ml_value_and_gradient,
)
from ceikit.synth import SynthConfig, default_theta_star, gen_panel

SPEC = SemSpec()
D0 = date(2020, 3, 2)

SMALL = SemSpec(
    socio_vars=("s1", "s2"),
    lag_var="lag",
    indicator_vars=("e", "p"),
    outcome_var="y",
)


def random_feasible_theta(rng, spec=SPEC):
    theta = rng.uniform(-1.0, 1.0, size=spec.n_params)
    theta[spec.variance_indices] = rng.uniform(math.log(0.3), math.log(2.0), size=len(spec.variance_indices))
    return theta


def sample_cov_from_panel(seed=8000):
    panel = gen_panel(SynthConfig(seed=seed, n_zcta=200, n_days=8))[-1]
    X = panel.X - panel.X.mean(axis=0)
    return X.T @ X / (X.shape[0] - 1)


class TestSemSpec:
    def test_default_layout(self):
        assert SPEC.n_observed == 11
        assert SPEC.n_exo == 7
        assert SPEC.n_endo == 4
        assert SPEC.n_params == 15
        assert SPEC.param_names[0] == "eta_on_income"
        assert SPEC.param_names[9] == "cases_on_eta"
        assert list(SPEC.variance_indices) == [10, 11, 12, 13, 14]

    def test_duplicate_names_rejected(self):
        with pytest.raises(ConfigurationError):
            SemSpec(socio_vars=("a", "a"))

    def test_encode_decode_roundtrip(self):
        rng = np.random.default_rng(0)
        theta = rng.uniform(0.1, 2.0, size=15)
        back = decode_params(encode_params(theta, SPEC), SPEC)
        assert back == pytest.approx(theta, rel=1e-12)


class TestImpliedCovariance:
    def test_zero_paths_block_structure(self):
        theta_nat = np.zeros(15)
        theta_nat[10:] = [1.0, 0.25, 0.3, 0.35, 0.4]
        sigma = implied_covariance(encode_params(theta_nat, SPEC), SPEC, np.eye(7))
        assert sigma[7, 7] == pytest.approx(1.25)  # psi + theta_cei
        assert sigma[8, 8] == pytest.approx(0.3)
        assert sigma[9, 9] == pytest.approx(0.35)
        assert sigma[10, 10] == pytest.approx(0.4)
        assert np.abs(sigma[:7, 7:]).max() == 0.0
        assert np.array_equal(sigma[:7, :7], np.eye(7))

    def test_symmetric_and_finite(self):
        rng = np.random.default_rng(3)
        for _ in range(10):
            theta = random_feasible_theta(rng)
            a = rng.normal(size=(30, 7))
            phi = a.T @ a / 29
            sigma = implied_covariance(theta, SPEC, phi)
            assert np.array_equal(sigma, sigma.T)
            assert np.isfinite(sigma).all()

    def test_matches_hand_derived_small_model(self):
        # Two socio vars, two indicators: every entry written out by hand
        # from the structural equations.
        rng = np.random.default_rng(12)
        a = rng.normal(size=(40, 3))
        phi = a.T @ a / 39
        b1, b2, load_p, b_lag, b_eta = 0.4, -0.3, 0.8, 0.5, -0.6
        psi, th_e, th_p, th_y = 0.7, 0.3, 0.25, 0.45
        theta_nat = np.array([b1, b2, load_p, b_lag, b_eta, psi, th_e, th_p, th_y])
        sigma = implied_covariance(encode_params(theta_nat, SMALL), SMALL, phi)

        beta = np.array([b1, b2])
        cov_eta_s = phi[:2, :2] @ beta           # cov(eta, s_j)
        cov_eta_lag = phi[2, :2] @ beta          # cov(eta, lag)
        v_eta = beta @ phi[:2, :2] @ beta + psi

        # observed order: s1 s2 lag e p y
        expected = np.empty((6, 6))
        expected[:3, :3] = phi
        cov_x_eta = np.array([cov_eta_s[0], cov_eta_s[1], cov_eta_lag])
        expected[:3, 3] = cov_x_eta                       # E = eta + err
        expected[:3, 4] = load_p * cov_x_eta              # P
        expected[:3, 5] = b_lag * phi[:3, 2] + b_eta * cov_x_eta  # y
        expected[3, 3] = v_eta + th_e
        expected[3, 4] = load_p * v_eta
        expected[4, 4] = load_p**2 * v_eta + th_p
        expected[3, 5] = b_lag * cov_eta_lag + b_eta * v_eta
        expected[4, 5] = load_p * (b_lag * cov_eta_lag + b_eta * v_eta)
        expected[5, 5] = (
            b_lag**2 * phi[2, 2]
            + b_eta**2 * v_eta
            + th_y
            + 2 * b_lag * b_eta * cov_eta_lag
        )
        for i in range(6):
            for j in range(i):
                expected[i, j] = expected[j, i]
        assert sigma == pytest.approx(expected, rel=1e-12, abs=1e-12)

    def test_bad_sizes(self):
        with pytest.raises(ConfigurationError):
            implied_covariance(np.zeros(7), SPEC, np.eye(7))
        with pytest.raises(ConfigurationError):
            implied_covariance(np.zeros(15), SPEC, np.eye(5))


class TestMlDiscrepancy:
    def test_scalar_formula(self):
        assert ml_fit_value(np.array([[2.0]]), np.array([[1.0]])) == pytest.approx(
            1.0 - math.log(2.0), abs=1e-12
        )

    def test_zero_at_saturated_point(self):
        rng = np.random.default_rng(4)
        theta = random_feasible_theta(rng)
        a = rng.normal(size=(60, 7))
        phi = a.T @ a / 59
        sigma = implied_covariance(theta, SPEC, phi)
        assert ml_discrepancy(theta, sigma, SPEC, phi) == pytest.approx(0.0, abs=1e-10)

    def test_nonnegative_everywhere(self):
        rng = np.random.default_rng(5)
        s = sample_cov_from_panel()
        for _ in range(50):
            theta = random_feasible_theta(rng)
            f = ml_discrepancy(theta, s, SPEC, s[:7, :7])
            assert f >= 0.0

    def test_indicator_permutation_invariance(self):
        # Swapping the two free indicators together with their sample
        # rows/columns and their parameters leaves F unchanged.
        s = sample_cov_from_panel()
        rng = np.random.default_rng(6)
        theta = random_feasible_theta(rng)
        f = ml_discrepancy(theta, s, SPEC, s[:7, :7])

        perm = list(range(11))
        perm[8], perm[9] = perm[9], perm[8]  # prop_home <-> time_home
        s_perm = s[np.ix_(perm, perm)]
        theta_perm = theta.copy()
        theta_perm[6], theta_perm[7] = theta[7], theta[6]      # loadings
        theta_perm[12], theta_perm[13] = theta[13], theta[12]  # error variances
        spec_perm = SemSpec(indicator_vars=("cei", "time_home", "prop_home"))
        f_perm = ml_discrepancy(theta_perm, s_perm, spec_perm, s_perm[:7, :7])
        assert f_perm == pytest.approx(f, rel=1e-12)

    def test_penalty_is_finite_on_overflow(self):
        s = sample_cov_from_panel()
        theta = np.zeros(15)
        theta[10:] = 900.0  # exp overflows
        f, grad = ml_value_and_gradient(theta, s, SPEC, s[:7, :7])
        assert math.isfinite(f) and f >= 1e9
        assert np.isfinite(grad).all()


class TestGradient:
    def test_analytic_matches_central_fd(self):
        rng = np.random.default_rng(7)
        s = sample_cov_from_panel()
        phi = s[:7, :7]
        for _ in range(20):
            theta = random_feasible_theta(rng)
            _, grad = ml_value_and_gradient(theta, s, SPEC, phi)
            fd = np.zeros(15)
            h = 1e-5
            for i in range(15):
                up, dn = theta.copy(), theta.copy()
                up[i] += h
                dn[i] -= h
                fd[i] = (
                    ml_discrepancy(up, s, SPEC, phi)
                    - ml_discrepancy(dn, s, SPEC, phi)
                ) / (2 * h)
            rel = np.linalg.norm(grad - fd) / max(np.linalg.norm(fd), 1e-12)
            assert rel < 1e-5

    def test_fd_step_consistency(self):
        rng = np.random.default_rng(8)
        s = sample_cov_from_panel()
        phi = s[:7, :7]
        for _ in range(20):
            theta = random_feasible_theta(rng)
            fds = []
            for h in (1e-4, 1e-5):
                fd = np.zeros(15)
                for i in range(15):
                    up, dn = theta.copy(), theta.copy()
                    up[i] += h
                    dn[i] -= h
                    fd[i] = (
                        ml_discrepancy(up, s, SPEC, phi)
                        - ml_discrepancy(dn, s, SPEC, phi)
                    ) / (2 * h)
                fds.append(fd)
            rel = np.linalg.norm(fds[0] - fds[1]) / max(np.linalg.norm(fds[1]), 1e-12)
            assert rel < 1e-4


class TestDailyExposureSem:
    def test_recovery_within_two_se(self):
        cfg = SynthConfig(seed=8000, n_zcta=200, n_days=8)
        panel = gen_panel(cfg)[-1]
        est = DailyExposureSem().fit(panel.X)
        assert est.converged_
        assert est.grad_norm_ < 1e-6
        theta_star = cfg.theta_vector(SPEC)
        assert (np.abs(est.params_ - theta_star) <= 2 * est.std_errors_).all()

    def test_null_effect_estimate_near_zero(self):
        theta = default_theta_star()
        theta["cases_on_eta"] = 0.0
        theta["cases_on_lag"] = 0.0  # outcome is pure noise
        cfg = SynthConfig(seed=41001, n_zcta=200, n_days=8, theta_star=theta)
        est = DailyExposureSem().fit(gen_panel(cfg)[-1].X)
        i = list(est.param_names_).index("cases_on_eta")
        assert abs(est.params_[i]) <= 2 * est.std_errors_[i]

    def test_near_saturated_deterministic_relations(self):
        # Relations exact in sample: whiten a draw, then map through the
        # implied covariance at a theta* with variances injected at 1e-6.
        theta = default_theta_star()
        for key in list(theta):
            if key.startswith("var"):
                theta[key] = 1e-6
        theta_nat = np.array([theta[n] for n in SPEC.param_names])
        rng = np.random.default_rng(5)
        z = rng.normal(size=(200, 11))
        zc = z - z.mean(axis=0)
        white = zc @ np.linalg.inv(np.linalg.cholesky(zc.T @ zc / 199)).T
        sigma0 = implied_covariance(encode_params(theta_nat, SPEC), SPEC, np.eye(7))
        X = white @ np.linalg.cholesky(sigma0).T
        est = DailyExposureSem().fit(X)
        assert est.f_ml_ < 1e-3
        assert est.params_ == pytest.approx(theta_nat, abs=1e-6)

    def test_centering_absorbs_shifts(self):
        panel = gen_panel(SynthConfig(seed=8002, n_zcta=200, n_days=8))[-1]
        base = DailyExposureSem().fit(panel.X)
        shifted = panel.X + np.arange(1.0, 12.0)  # constant per column
        again = DailyExposureSem().fit(shifted)
        assert again.params_ == pytest.approx(base.params_, rel=1e-6, abs=1e-8)

    def test_restarts_reach_same_optimum(self):
        panel = gen_panel(SynthConfig(seed=8003, n_zcta=200, n_days=8))[-1]
        a = DailyExposureSem(random_state=0).fit(panel.X)
        b = DailyExposureSem(random_state=1234).fit(panel.X)
        i = list(a.param_names_).index("cases_on_eta")
        assert a.params_[i] == pytest.approx(b.params_[i], rel=1e-5, abs=1e-8)
        assert a.f_ml_ == pytest.approx(b.f_ml_, rel=1e-8, abs=1e-12)

    def test_deterministic_given_seed(self):
        panel = gen_panel(SynthConfig(seed=8004, n_zcta=200, n_days=8))[-1]
        a = DailyExposureSem().fit(panel.X)
        b = DailyExposureSem().fit(panel.X)
        assert np.array_equal(a.params_, b.params_)
        assert np.array_equal(a.std_errors_, b.std_errors_)

    def test_standard_errors_positive_when_converged(self):
        panel = gen_panel(SynthConfig(seed=8005, n_zcta=200, n_days=8))[-1]
        est = DailyExposureSem().fit(panel.X)
        assert est.converged_
        assert (est.std_errors_ > 0).all()

    def test_sklearn_protocol(self):
        est = DailyExposureSem(max_iter=321)
        assert est.get_params()["max_iter"] == 321
        cloned = clone(est)
        assert cloned.get_params() == est.get_params()
        with pytest.raises(NotFittedError):
            est.estimate()

    def test_wrong_width_rejected(self):
        with pytest.raises(ConfigurationError):
            DailyExposureSem().fit(np.zeros((40, 5)))

    def test_singular_sample_rejected(self):
        X = np.zeros((40, 11))
        X[:, 0] = np.arange(40.0)
        with pytest.raises((DataError, ValueError)):
            DailyExposureSem().fit(X)


def make_panel_fixtures(n_zcta=35, t=D0 + timedelta(days=7)):
    socio = {
        f"Z{i:03d}": SocioRow(10.0 + 0.01 * i, 0.3, 0.2, 0.15, 0.25, 0.35)
        for i in range(n_zcta)
    }
    window = {
        (z, t): WindowMobility(2.0, 0.5, 0.6, 100.0) for z in socio
    }
    cases = {}
    for z in socio:
        cases[(z, t)] = 4
        cases[(z, t - timedelta(days=1))] = 2
    return socio, window, cases, t


class TestBuildPanel:
    def test_full_city_row_count(self):
        socio, window, cases, t = make_panel_fixtures()
        panel = build_panel(t, window, cases, socio)
        assert len(panel.zctas) == len(socio)
        assert panel.X.shape == (len(socio), 11)
        assert panel.n_excluded == 0

    def test_zero_cases_transform(self):
        socio, window, cases, t = make_panel_fixtures()
        for z in socio:
            cases[(z, t)] = 0
            cases[(z, t - timedelta(days=1))] = 0
        panel = build_panel(t, window, cases, socio)
        y = panel.X[:, -1]
        y_lag = panel.X[:, 6]
        assert (y == 0).all() and (y_lag == 0).all()

    def test_missing_mobility_excluded_and_counted(self):
        socio, window, cases, t = make_panel_fixtures()
        del window[("Z000", t)]
        panel = build_panel(t, window, cases, socio)
        assert "Z000" not in panel.zctas
        assert panel.n_excluded == 1

    def test_missing_cases_excluded(self):
        socio, window, cases, t = make_panel_fixtures()
        del cases[("Z001", t - timedelta(days=1))]
        panel = build_panel(t, window, cases, socio)
        assert "Z001" not in panel.zctas

    def test_too_small_raises(self):
        socio, window, cases, t = make_panel_fixtures(n_zcta=10)
        with pytest.raises(PanelTooSmallError, match="minimum 30"):
            build_panel(t, window, cases, socio)

    def test_transform_applied(self):
        socio, window, cases, t = make_panel_fixtures()
        panel = build_panel(t, window, cases, socio)
        assert panel.X[0, -1] == pytest.approx(math.log(5.0))
        assert panel.X[0, 6] == pytest.approx(math.log(3.0))


class TestFitSeries:
    def test_ten_days_recover_constant_theta(self):
        cfg = SynthConfig(seed=8010, n_zcta=200, n_days=10)
        panels = gen_panel(cfg)
        series = fit_series(panels)
        assert len(series.estimates) == 10
        theta_star = cfg.theta_vector(SPEC)
        for est in series.estimates:
            assert est.converged_ if hasattr(est, "converged_") else est.converged
            assert np.abs(est.estimates - theta_star).max() < 0.45

    def test_gaps_carried(self):
        cfg = SynthConfig(seed=8011, n_zcta=200, n_days=3)
        panels = list(gen_panel(cfg))
        items = panels[:1] + [(panels[1].day, "too small")] + panels[2:]
        series = fit_series(items)
        assert len(series.estimates) == 2
        assert series.skipped == [(panels[1].day, "too small")]

    def test_empty(self):
        series = fit_series([])
        assert series.estimates == [] and series.skipped == []

    def test_overlay_smooths_within_runs(self):
        cfg = SynthConfig(seed=8012, n_zcta=200, n_days=9)
        panels = gen_panel(cfg)
        series = fit_series(panels)
        overlay = series.overlay()
        income = overlay["eta_on_income"]
        assert len(income) == 9
        raw = [e.as_dict()["eta_on_income"] for e in series.estimates]
        # trailing 7-day mean at the last day
        assert income[-1][1] == pytest.approx(np.mean(raw[-7:]), rel=1e-12)

    def test_fit_daily_packages_estimate(self):
        cfg = SynthConfig(seed=8013, n_zcta=200, n_days=2)
        panel = gen_panel(cfg)[-1]
        est = fit_daily(panel)
        assert est.day == panel.day
        assert est.n_obs == 200
        assert set(est.as_dict()) == set(SPEC.param_names)
