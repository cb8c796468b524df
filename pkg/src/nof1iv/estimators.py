"""Point estimators for randomized n-of-1 trials with imperfect compliance.

All covariances use the divisor n.  For a 0/1 instrument with ``n1`` ones and
``n0`` zeros the sample covariance with any series v reduces exactly to

    cov(z, v) = (n1 * n0 / n**2) * (mean(v | z=1) - mean(v | z=0)),

which is how the instrument covariances are evaluated here.  Routing every
estimator through the same group contrast keeps the identities
``beta_itt = K * beta_iv`` and ``beta_iv = ACE(z->y) / ACE(z->x)`` exact up to
a few ulps instead of being subject to cancellation in ``E[zv] - E[z]E[v]``.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy import stats

from .errors import (
    DegenerateInstrumentError,
    DegenerateRegressionError,
    InvalidArgumentError,
    UndefinedEstimatorError,
)
from .sim_models import TrialSeries


def sample_cov(a, b) -> float:
    """Sample covariance with divisor n (two-pass form of the moment formula)."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape or a.ndim != 1:
        raise InvalidArgumentError(f"shape mismatch: {a.shape} vs {b.shape}")
    if a.shape[0] < 2:
        raise InvalidArgumentError("sample_cov needs at least two points")
    return float(np.mean((a - a.mean()) * (b - b.mean())))


def _groups(z: np.ndarray) -> tuple[np.ndarray, int, int]:
    ones = z == 1
    n1 = int(ones.sum())
    n0 = z.shape[0] - n1
    if n1 == 0 or n0 == 0:
        raise UndefinedEstimatorError(
            f"both suggestion groups must be non-empty (n1={n1}, n0={n0})"
        )
    return ones, n1, n0


def _contrast(ones: np.ndarray, v: np.ndarray) -> float:
    # mean(v | z=1) - mean(v | z=0), on centered v to avoid cancellation
    vc = v - v.mean()
    diff = float(vc[ones].mean() - vc[~ones].mean())
    # a contrast that is zero in exact arithmetic can come out as a few ulps
    # (e.g. binary x with equal uptake in both arms); snap it to 0
    if abs(diff) <= 4 * v.size * np.finfo(float).eps * float(np.abs(vc).max(initial=0.0)):
        return 0.0
    return diff


def _pq(n1: int, n0: int) -> float:
    n = n1 + n0
    return (n1 / n) * (n0 / n)


def _zbar_term(n1: int, n0: int) -> float:
    zbar = n1 / (n1 + n0)
    return zbar * (1.0 - zbar)


def _prepare(trial: TrialSeries) -> TrialSeries:
    obs = trial.observed_part()
    if obs.n < 2:
        raise InvalidArgumentError(f"need at least 2 observed points, got {obs.n}")
    return obs


def estimate_itt(trial: TrialSeries) -> float:
    """Difference in mean response between suggestion groups."""
    t = _prepare(trial)
    ones, _, _ = _groups(t.z)
    return _contrast(ones, t.y)


def estimate_ace_z_on_y(trial: TrialSeries) -> float:
    """Non-parametric average effect of the suggestion on the response.

    ``cov(z, y) / (zbar * (1 - zbar))``; numerically equal to :func:`estimate_itt`.
    """
    t = _prepare(trial)
    ones, n1, n0 = _groups(t.z)
    return _pq(n1, n0) * _contrast(ones, t.y) / _zbar_term(n1, n0)


def estimate_ace_z_on_x(trial: TrialSeries) -> float:
    """Non-parametric average effect of the suggestion on the treatment taken."""
    t = _prepare(trial)
    ones, n1, n0 = _groups(t.z)
    return _pq(n1, n0) * _contrast(ones, t.x) / _zbar_term(n1, n0)


def estimate_iv(trial: TrialSeries) -> float:
    """Ratio ``cov(z, y) / cov(z, x)`` over the observed points.

    Raises
    ------
    DegenerateInstrumentError
        If ``cov(z, x)`` is exactly zero.
    """
    t = _prepare(trial)
    ones, _, _ = _groups(t.z)
    dx = _contrast(ones, t.x)
    if dx == 0.0:
        raise DegenerateInstrumentError("cov(z, x) is exactly zero")
    return _contrast(ones, t.y) / dx


def residualize_on_w(trial: TrialSeries) -> TrialSeries:
    """Replace x and y by residuals of intercept-plus-slope regressions on w.

    The regressions are fitted on observed points; masked points receive the
    fitted residuals as well so the mask can stay unchanged.
    """
    if trial.w is None:
        raise InvalidArgumentError("trial has no observed confounder w")
    m = trial.observed
    if m.sum() < 3:
        raise InvalidArgumentError("residualizing needs at least 3 observed points")
    w_obs = trial.w[m]
    wc_obs = w_obs - w_obs.mean()
    sww = float(wc_obs @ wc_obs)
    if sww <= 1e-300 or np.ptp(w_obs) == 0:
        raise DegenerateRegressionError("w is constant over the observed points")

    def resid(v):
        v_obs = v[m]
        slope = float(wc_obs @ (v_obs - v_obs.mean())) / sww
        return (v - v_obs.mean()) - slope * (trial.w - w_obs.mean())

    return trial.with_values(x=resid(trial.x), y=resid(trial.y))


@dataclass(frozen=True)
class SlopeTest:
    slope: float
    t: float
    p: float


def _slope_test(x: np.ndarray, y: np.ndarray, df: int) -> SlopeTest:
    xc = x - x.mean()
    yc = y - y.mean()
    sxx = float(xc @ xc)
    if sxx == 0.0:
        raise UndefinedEstimatorError("treatment has no variation")
    slope = float(xc @ yc) / sxx
    resid = yc - slope * xc
    if df <= 0:
        raise UndefinedEstimatorError("not enough points for a t-test")
    s2 = float(resid @ resid) / df
    se = math.sqrt(s2 / sxx)
    if se == 0.0:
        if slope == 0.0:
            return SlopeTest(0.0, 0.0, 1.0)
        return SlopeTest(slope, math.copysign(math.inf, slope), 0.0)
    t = slope / se
    return SlopeTest(slope, t, float(2.0 * stats.t.sf(abs(t), df)))


def naive_t_test(trial: TrialSeries, adjusted: bool = False) -> SlopeTest:
    """Regress y on x and test the slope with the pooled-variance t statistic.

    With ``adjusted`` both series are first residualized on w; the test then
    uses ``n - 3`` degrees of freedom so it matches the coefficient test of
    the multiple regression ``y ~ 1 + x + w``.
    """
    t = trial.observed_part()
    x = t.x
    treated = x == 1
    if not np.isin(x, (0.0, 1.0)).all():
        raise InvalidArgumentError("naive_t_test expects a 0/1 treatment; residualize via adjusted=True")
    if treated.all() or not treated.any():
        raise UndefinedEstimatorError("both treatment groups must be non-empty")
    if adjusted:
        r = residualize_on_w(t)
        return _slope_test(r.x, r.y, t.n - 3)
    return _slope_test(x, t.y, t.n - 2)


@dataclass
class EstimateReport:
    beta_iv: float
    beta_itt: float
    ace_z_on_y: float
    ace_z_on_x: float
    k: float
    cov_zy: float
    cov_zx: float
    var_z: float
    cor_zx: float
    naive_slope: float
    naive_t: float
    naive_p: float
    adjusted: bool
    degenerate: bool
    n_observed: int

    def to_dict(self) -> dict:
        return asdict(self)


def full_report(trial: TrialSeries, adjusted: bool = False) -> EstimateReport:
    """All estimators and diagnostics for one trial.

    A zero ``cov(z, x)`` is reported through ``degenerate=True`` and
    ``beta_iv = nan`` rather than raised.  With ``adjusted`` the estimators
    run on residuals from :func:`residualize_on_w`.
    """
    base = _prepare(trial)
    if adjusted:
        if base.w is None:
            raise InvalidArgumentError("adjusted report requested but trial has no w")
        work = residualize_on_w(base)
    else:
        work = base
    ones, n1, n0 = _groups(work.z)
    pq = _pq(n1, n0)
    dy = _contrast(ones, work.y)
    dx = _contrast(ones, work.x)
    var_z = sample_cov(work.z, work.z)
    cov_zy = pq * dy
    cov_zx = pq * dx
    degenerate = dx == 0.0
    var_x = sample_cov(work.x, work.x)
    cor_zx = cov_zx / math.sqrt(var_z * var_x) if var_x > 0 else math.nan
    try:
        naive = naive_t_test(base, adjusted=adjusted)
    except UndefinedEstimatorError:
        naive = SlopeTest(math.nan, math.nan, math.nan)
    return EstimateReport(
        beta_iv=math.nan if degenerate else dy / dx,
        beta_itt=dy,
        ace_z_on_y=cov_zy / _zbar_term(n1, n0),
        ace_z_on_x=cov_zx / _zbar_term(n1, n0),
        k=cov_zx / var_z,
        cov_zy=cov_zy,
        cov_zx=cov_zx,
        var_z=var_z,
        cor_zx=cor_zx,
        naive_slope=naive.slope,
        naive_t=naive.t,
        naive_p=naive.p,
        adjusted=adjusted,
        degenerate=degenerate,
        n_observed=work.n,
    )
