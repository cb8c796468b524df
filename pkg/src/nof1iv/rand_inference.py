"""Randomization tests and test-inversion confidence intervals.

Every test statistic used here (IV, ITT, and ITT on a location-shifted
response) is ``T(y) / d`` with a shared numerator ``T(y) = sum_t (z_t - zbar)
y_t`` and a denominator ``d`` that does not involve ``y``.  Exceedances are
therefore counted on ``sign(d) * T`` directly, which makes the IV and ITT
p-values bit-identical whenever they share permutations.

Permutations are drawn in blocks of :data:`PERM_BLOCK`; block ``k`` comes from
the stream ``(seed, k)``, so permutation ``i`` depends only on the seed and
``i``.  Each drawn row is a uniform permutation ``sigma`` of the centered
instrument; pairing ``zc[sigma]`` with ``y`` is the same as pairing ``zc``
with ``y`` shuffled by ``sigma^-1``.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass, field
from enum import Enum

import numpy as np
from scipy.optimize import isotonic_regression

from .errors import CannotInvertError, EmptyIntervalError, InvalidArgumentError
from .estimators import full_report, residualize_on_w
from .seeding import stream
from .sim_models import TrialSeries

PERM_BLOCK = 1024
MIN_PERMUTATIONS = 100
# relative slack under which a permuted statistic counts as a tie
_TIE_RTOL = 1e-10
# cache permutation matrices up to this many entries (float64)
_CACHE_LIMIT = 25_000_000


class Sidedness(str, Enum):
    TWO_SIDED = "two-sided"
    GREATER = "greater"
    LESS = "less"

    def flipped(self) -> "Sidedness":
        if self is Sidedness.GREATER:
            return Sidedness.LESS
        if self is Sidedness.LESS:
            return Sidedness.GREATER
        return self


class PConvention(str, Enum):
    PLAIN = "plain"
    PLUS_ONE = "plus-one"


class Statistic(str, Enum):
    IV = "iv"
    ITT = "itt"


@dataclass(frozen=True)
class RandTestConfig:
    n_perm: int = 10_000
    sidedness: Sidedness = Sidedness.TWO_SIDED
    p_convention: PConvention = PConvention.PLAIN
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "sidedness", Sidedness(self.sidedness))
        object.__setattr__(self, "p_convention", PConvention(self.p_convention))
        if int(self.n_perm) != self.n_perm or self.n_perm < MIN_PERMUTATIONS:
            raise InvalidArgumentError(f"n_perm={self.n_perm} must be an integer >= {MIN_PERMUTATIONS}")
        if not 0 <= int(self.seed) < 2**64:
            raise InvalidArgumentError(f"seed={self.seed} must be a 64-bit unsigned integer")

    def with_(self, **changes) -> "RandTestConfig":
        return RandTestConfig(**{**asdict(self), **changes})


@dataclass
class RandTestResult:
    statistic: str
    sidedness: str
    stat_observed: float
    exceed_count: int
    n_perm: int
    p_value: float
    p_convention: str
    null_summary: dict = field(default_factory=dict)
    fallback_to_itt: bool = False

    def to_dict(self) -> dict:
        return asdict(self)


class PermutationSet:
    """Permuted copies of a centered 0/1 instrument, generated block-wise."""

    def __init__(self, z, n_perm: int, seed: int, cache: bool = True):
        z = np.asarray(z, dtype=float)
        self.n = z.shape[0]
        self.zc = z - z.mean()
        self.n_perm = int(n_perm)
        self.seed = int(seed)
        self._blocks = None
        if cache and self.n * self.n_perm <= _CACHE_LIMIT:
            self._blocks = list(self._generate())

    def _generate(self):
        for k, start in enumerate(range(0, self.n_perm, PERM_BLOCK)):
            b = min(PERM_BLOCK, self.n_perm - start)
            rng = stream(self.seed, k)
            yield rng.permuted(np.tile(self.zc, (b, 1)), axis=1)

    def blocks(self):
        return self._blocks if self._blocks is not None else self._generate()

    def numerators(self, ys: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Observed and permuted ``T(y)`` for each row of ``ys`` (shape (k, n)).

        Returns ``(t_obs, t_perm)`` with shapes ``(k,)`` and ``(n_perm, k)``.
        Every column is evaluated with its own matrix-vector product so the
        value for a given ``y`` does not depend on what it was batched with.
        """
        ys = np.atleast_2d(np.asarray(ys, dtype=float))
        t_obs = np.array([float(self.zc @ y) for y in ys])
        parts = []
        for block in self.blocks():
            parts.append(np.column_stack([block @ y for y in ys]))
        return t_obs, np.concatenate(parts, axis=0)


def _tie_tolerance(zc: np.ndarray, y: np.ndarray) -> float:
    return _TIE_RTOL * float(np.abs(zc) @ np.abs(y - y.mean())) + 1e-300


def _count(t_obs: float, t_perm: np.ndarray, sign: float, side: Sidedness, tol: float) -> int:
    if side is Sidedness.TWO_SIDED:
        return int(np.count_nonzero(np.abs(t_perm) >= abs(t_obs) - tol))
    if side is Sidedness.LESS:
        sign = -sign
    return int(np.count_nonzero(sign * t_perm >= sign * t_obs - tol))


def _p_value(exceed: int, n_perm: int, convention: PConvention) -> float:
    if convention is PConvention.PLUS_ONE:
        return (1 + exceed) / (1 + n_perm)
    return exceed / n_perm


def pvalue_from_counts(exceed_count: int, n_perm: int, convention=PConvention.PLAIN) -> float:
    """p-value from an exceedance count under the chosen convention."""
    if not 0 <= exceed_count <= n_perm:
        raise InvalidArgumentError("exceed_count must lie in [0, n_perm]")
    return _p_value(exceed_count, n_perm, PConvention(convention))


def _summary(values: np.ndarray) -> dict:
    q = np.quantile(values, [0.025, 0.05, 0.5, 0.95, 0.975])
    return {
        "mean": float(values.mean()),
        "sd": float(values.std()),
        "q025": float(q[0]),
        "q05": float(q[1]),
        "q50": float(q[2]),
        "q95": float(q[3]),
        "q975": float(q[4]),
    }


def _prepare(trial: TrialSeries, adjusted: bool) -> TrialSeries:
    t = trial.observed_part()
    if adjusted:
        t = residualize_on_w(t)
    return t


def rand_test_sharp_null(
    trial: TrialSeries,
    cfg: RandTestConfig,
    statistic: Statistic | str = Statistic.IV,
    adjusted: bool = False,
    perms: PermutationSet | None = None,
) -> RandTestResult:
    """Randomization test of ``beta = 0`` by shuffling y against the (z, x) pairs.

    A degenerate instrument makes the IV statistic undefined; the test then
    runs on the ITT statistic, which yields the same p-value, and sets
    ``fallback_to_itt``.
    """
    statistic = Statistic(statistic)
    t = _prepare(trial, adjusted)
    rep = full_report(t)
    fallback = statistic is Statistic.IV and rep.degenerate
    if fallback:
        statistic = Statistic.ITT
    denom = rep.cov_zx if statistic is Statistic.IV else rep.var_z
    observed = rep.beta_iv if statistic is Statistic.IV else rep.beta_itt

    perms = perms or PermutationSet(t.z, cfg.n_perm, cfg.seed)
    t_obs, t_perm = perms.numerators(t.y)
    t_perm = t_perm[:, 0]
    sign = math.copysign(1.0, denom)
    exceed = _count(t_obs[0], t_perm, sign, cfg.sidedness, _tie_tolerance(perms.zc, t.y))
    null = t_perm / (t.n * denom)
    return RandTestResult(
        statistic=statistic.value,
        sidedness=cfg.sidedness.value,
        stat_observed=observed,
        exceed_count=exceed,
        n_perm=cfg.n_perm,
        p_value=_p_value(exceed, cfg.n_perm, cfg.p_convention),
        p_convention=cfg.p_convention.value,
        null_summary=_summary(null),
        fallback_to_itt=fallback,
    )


def equal_tailed_pvalue(trial: TrialSeries, cfg: RandTestConfig, adjusted: bool = False) -> float:
    """``min(1, 2 * min(p_greater, p_less))`` of the sharp null, same permutations.

    This two-sided p-value is the one dual to the equal-tailed intervals of
    :func:`ci_from_profile`.
    """
    t = _prepare(trial, adjusted)
    perms = PermutationSet(t.z, cfg.n_perm, cfg.seed)
    ps = [
        rand_test_sharp_null(t, cfg.with_(sidedness=side), Statistic.ITT, perms=perms).p_value
        for side in (Sidedness.GREATER, Sidedness.LESS)
    ]
    return min(1.0, 2.0 * min(ps))


def sharp_null_pvalues(z, ys, cfg: RandTestConfig) -> list[float]:
    """Sharp-null p-values for several responses sharing one instrument and one permutation set.

    Used by the simulation harness to test raw and residualized responses
    against identical permutations.  Signs of the denominators do not matter
    for two-sided tests; one-sided tests here are on the ITT scale.
    """
    perms = PermutationSet(z, cfg.n_perm, cfg.seed)
    ys = np.atleast_2d(np.asarray(ys, dtype=float))
    t_obs, t_perm = perms.numerators(ys)
    out = []
    for j, y in enumerate(ys):
        exceed = _count(t_obs[j], t_perm[:, j], 1.0, cfg.sidedness, _tie_tolerance(perms.zc, y))
        out.append(_p_value(exceed, cfg.n_perm, cfg.p_convention))
    return out


def _location_setup(trial: TrialSeries, adjusted: bool):
    t = _prepare(trial, adjusted)
    rep = full_report(t)
    if rep.degenerate or rep.k == 0.0:
        raise CannotInvertError("K = cov(z, x) / var(z) is zero; the location test cannot be inverted")
    return t, rep


def _shifted(t: TrialSeries, beta_j: float, k: float) -> np.ndarray:
    return t.y + (beta_j * k) * (1 - t.z)


def rand_test_location(
    trial: TrialSeries,
    beta_j: float,
    side: Sidedness | str,
    cfg: RandTestConfig,
    adjusted: bool = False,
    perms: PermutationSet | None = None,
) -> RandTestResult:
    """Test ``beta = beta_j`` against a one-sided alternative on beta.

    The response of the suggested-control group is shifted by ``beta_j * K``
    and the ITT randomization test of zero effect is run on the shifted
    data.  ``side`` refers to beta (``greater`` means beta > beta_j); it is
    translated to the ITT scale through the sign of K.
    """
    side = Sidedness(side)
    t, rep = _location_setup(trial, adjusted)
    shifted = t.with_values(y=_shifted(t, beta_j, rep.k))
    itt_side = side if rep.k > 0 else side.flipped()
    res = rand_test_sharp_null(
        shifted, cfg.with_(sidedness=itt_side), Statistic.ITT,
        perms=perms or PermutationSet(t.z, cfg.n_perm, cfg.seed),
    )
    res.sidedness = side.value
    res.statistic = "itt-location"
    return res


@dataclass
class PValueProfile:
    """One-sided p-values over a grid of hypothesized effects.

    Points below ``beta_hat`` test against ``beta > beta_j``, points above
    against ``beta < beta_j``; the center carries the larger of the two.
    """

    beta: np.ndarray
    p: np.ndarray
    beta_hat: float
    k: float
    grid_step: float
    n_perm: int
    seed: int

    def arm_masks(self):
        return self.beta < self.beta_hat, self.beta == self.beta_hat, self.beta > self.beta_hat

    def to_dict(self) -> dict:
        return {
            "beta_hat": self.beta_hat,
            "k": self.k,
            "grid_step": self.grid_step,
            "n_perm": self.n_perm,
            "seed": self.seed,
            "grid": [{"beta_j": float(b), "p": float(p)} for b, p in zip(self.beta, self.p)],
        }

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["beta_j", "p"])
        for b, p in zip(self.beta, self.p):
            writer.writerow([repr(float(b)), repr(float(p))])
        return buf.getvalue()


def default_grid_step(beta_hat: float) -> float:
    return max(abs(beta_hat) / 50.0, 0.01)


def pvalue_profile(
    trial: TrialSeries,
    cfg: RandTestConfig,
    grid_step: float | None = None,
    include=(),
    adjusted: bool = False,
    max_points_per_arm: int = 20_000,
    chunk: int = 32,
) -> PValueProfile:
    """Walk outward from the IV estimate on both sides until a p-value of zero.

    All grid points reuse the permutations of ``cfg.seed``.  ``include``
    adds extra grid values (e.g. 0) that are always evaluated.
    """
    t, rep = _location_setup(trial, adjusted)
    beta_hat, k = rep.beta_iv, rep.k
    step = default_grid_step(beta_hat) if grid_step is None else float(grid_step)
    if not step > 0:
        raise InvalidArgumentError(f"grid_step={grid_step} must be positive")
    perms = PermutationSet(t.z, cfg.n_perm, cfg.seed)
    tol = _tie_tolerance(perms.zc, t.y)

    def evaluate(betas: np.ndarray, side: Sidedness) -> np.ndarray:
        ys = np.array([_shifted(t, b, k) for b in betas])
        t_obs, t_perm = perms.numerators(ys)
        itt_side = side if k > 0 else side.flipped()
        counts = [_count(t_obs[j], t_perm[:, j], 1.0, itt_side, tol) for j in range(len(betas))]
        return np.array([_p_value(c, cfg.n_perm, cfg.p_convention) for c in counts])

    def walk(direction: int, side: Sidedness):
        betas, ps = [], []
        k_step = 1
        while k_step <= max_points_per_arm:
            grid = beta_hat + direction * step * np.arange(k_step, k_step + chunk)
            pv = evaluate(grid, side)
            zero = np.flatnonzero(pv == 0.0)
            stop = zero[0] + 1 if zero.size else chunk
            betas.extend(grid[:stop])
            ps.extend(pv[:stop])
            if zero.size:
                return betas, ps
            k_step += chunk
        raise InvalidArgumentError(
            f"profile arm did not reach p = 0 within {max_points_per_arm} points; increase grid_step"
        )

    lo_b, lo_p = walk(-1, Sidedness.GREATER)
    hi_b, hi_p = walk(+1, Sidedness.LESS)
    center = max(
        evaluate(np.array([beta_hat]), Sidedness.GREATER)[0],
        evaluate(np.array([beta_hat]), Sidedness.LESS)[0],
    )

    extra = np.asarray([b for b in include if b != beta_hat], dtype=float)
    ex_lo = extra[extra < beta_hat]
    ex_hi = extra[extra > beta_hat]
    if ex_lo.size:
        lo_b.extend(ex_lo)
        lo_p.extend(evaluate(ex_lo, Sidedness.GREATER))
    if ex_hi.size:
        hi_b.extend(ex_hi)
        hi_p.extend(evaluate(ex_hi, Sidedness.LESS))

    beta = np.concatenate([lo_b, [beta_hat], hi_b])
    p = np.concatenate([lo_p, [center], hi_p])
    order = np.argsort(beta, kind="stable")
    beta, p = beta[order], p[order]
    keep = np.concatenate([[True], np.diff(beta) != 0])
    return PValueProfile(beta[keep], p[keep], beta_hat, k, step, cfg.n_perm, cfg.seed)


def smoothed_profile(profile: PValueProfile) -> np.ndarray:
    """Isotonic fit per arm: non-decreasing up to the center, non-increasing after."""
    lower, center, upper = profile.arm_masks()
    p = profile.p.astype(float).copy()
    if lower.any():
        p[lower] = isotonic_regression(p[lower], increasing=True).x
    if upper.any():
        p[upper] = isotonic_regression(p[upper], increasing=False).x
    return p


def ci_from_profile(profile: PValueProfile, alpha: float) -> tuple[float, float]:
    """The ``100 (1 - 2 alpha)`` % interval read off the profile at height alpha.

    Bounds are linearly interpolated between the last grid point with
    ``p > alpha`` and the first with ``p <= alpha``.
    """
    if not 0 < alpha < 0.5:
        raise InvalidArgumentError(f"alpha={alpha} must lie in (0, 0.5)")
    p = smoothed_profile(profile)
    b = profile.beta
    inside = np.flatnonzero(p > alpha)
    if inside.size == 0:
        raise EmptyIntervalError(
            f"no grid point has p > {alpha}; refine the grid or raise n_perm"
        )
    i, j = inside[0], inside[-1]

    def interp(a, c):
        # boundary between a (p <= alpha) and c (p > alpha)
        return b[a] + (alpha - p[a]) / (p[c] - p[a]) * (b[c] - b[a])

    lo = b[i] if i == 0 else interp(i - 1, i)
    hi = b[j] if j == len(b) - 1 else interp(j + 1, j)
    return float(lo), float(hi)
