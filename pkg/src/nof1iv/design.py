"""Parameter ranges, simulation settings and maximin Latin hypercube designs."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import pdist, squareform
from scipy.stats import qmc

from .errors import InvalidArgumentError
from .seeding import stream
from .sim_models import ComplianceKind, ErrorFamily, ResponseFamily


@dataclass(frozen=True)
class ParamRange:
    name: str
    lo: float
    hi: float
    integer_valued: bool = False

    def __post_init__(self):
        if not self.lo < self.hi:
            raise InvalidArgumentError(f"{self.name}: lo={self.lo} must be < hi={self.hi}")

    def scale(self, u: np.ndarray) -> np.ndarray:
        v = self.lo + u * (self.hi - self.lo)
        return np.rint(v) if self.integer_valued else v


def _ranges(names, lo, hi):
    return {k: ParamRange(k, lo, hi) for k in names}


#: default sampling ranges of every simulation parameter
PARAM_RANGES: dict[str, ParamRange] = {
    "alpha": ParamRange("alpha", 0.5, 4.0),
    **_ranges(("beta", "omega", "gamma", "varphi", "lambda", "eta", "psi", "delta1", "theta1"), -4.0, 4.0),
    **_ranges(("phi1", "phi11", "phi12", "rho"), -0.8, 0.8),
    "a1": ParamRange("a1", 0.0, 0.99),
    "n": ParamRange("n", 50, 800, integer_valued=True),
}

_FAMILY_AXES = {
    ResponseFamily.ARMA11: ("phi1", "theta1"),
    ResponseFamily.ARMA10: ("phi1",),
    ResponseFamily.ARMA01: ("theta1",),
    ResponseFamily.ARMA00: (),
    ResponseFamily.ARCH1: ("a1",),
    ResponseFamily.GARCH11: ("a1",),
    ResponseFamily.TAR1: ("phi11", "phi12"),
    ResponseFamily.LSTAR1: ("phi11", "phi12"),
    ResponseFamily.ESTAR1: ("phi11", "phi12"),
    ResponseFamily.SETAR1: ("phi11", "phi12"),
}


@dataclass(frozen=True)
class SettingSpec:
    id: int
    errors: ErrorFamily
    null: bool
    compliance: ComplianceKind

    @property
    def hypothesis(self) -> str:
        return "null" if self.null else "alt"


#: the eight simulation settings, keyed by id
SETTINGS: dict[int, SettingSpec] = {
    i: SettingSpec(
        id=i,
        errors=ErrorFamily.GAUSSIAN if i % 2 == 1 else ErrorFamily.UNIFORM,
        null=((i - 1) // 2) % 2 == 1,
        compliance=ComplianceKind.COMPLEX if i <= 4 else ComplianceKind.SIMPLE,
    )
    for i in range(1, 9)
}
NULL_SETTINGS = tuple(i for i, s in SETTINGS.items() if s.null)
ALT_SETTINGS = tuple(i for i, s in SETTINGS.items() if not s.null)


def design_axes(family: ResponseFamily | str, setting: SettingSpec) -> list[str]:
    """Parameters sampled for one (model, setting) cell, in a fixed order.

    ``beta`` is dropped under null settings and ``varphi``/``rho`` under the
    simple compliance structure, so no design column is wasted on a
    parameter the cell never reads.
    """
    axes = ["alpha", "omega", "gamma", "lambda", "eta", "psi", "delta1", "n"]
    if not setting.null:
        axes.insert(0, "beta")
    if setting.compliance is ComplianceKind.COMPLEX:
        axes += ["varphi", "rho"]
    axes += list(_FAMILY_AXES[ResponseFamily(family)])
    return axes


@dataclass
class LhsDesign:
    points: np.ndarray
    names: list[str]
    unit: np.ndarray
    maximin_score: float
    initial_score: float

    def rows(self) -> list[dict]:
        return [dict(zip(self.names, map(float, row))) for row in self.points]


def min_distance(unit: np.ndarray) -> float:
    return float(pdist(unit).min()) if len(unit) > 1 else float("inf")


def lhs_maximin(
    n_points: int,
    ranges: list[ParamRange],
    n_sweeps: int = 50,
    seed: int = 0,
    centered: bool = False,
) -> LhsDesign:
    """Latin hypercube improved towards maximin by within-column swaps.

    Each sweep proposes ``n_points`` swaps.  A proposal exchanges, in a
    random column, the coordinate of one point of the currently closest
    pair with that of a random other point; it is kept only if the smallest
    pairwise distance grows, or stays equal while fewer pairs attain it.
    Swaps keep every column a permutation of the strata, so the result is
    still a Latin hypercube.  Integer columns are rounded after
    optimization.
    """
    if n_points < 2:
        raise InvalidArgumentError(f"n_points={n_points} must be >= 2")
    if not ranges:
        raise InvalidArgumentError("at least one parameter range is required")
    if n_sweeps < 0:
        raise InvalidArgumentError(f"n_sweeps={n_sweeps} must be >= 0")
    rng = stream(seed, 0)
    d = len(ranges)
    unit = qmc.LatinHypercube(d, scramble=not centered, seed=rng).random(n_points)

    d2 = squareform(pdist(unit, "sqeuclidean"))
    np.fill_diagonal(d2, np.inf)

    def score(m):
        lo = m.min()
        # every pair is counted twice in the symmetric matrix
        return lo, int(np.count_nonzero(m == lo))

    best, best_count = score(d2)
    initial = float(np.sqrt(best))
    for _ in range(n_sweeps * n_points):
        if n_points < 3:
            break
        i, k = np.unravel_index(np.argmin(d2), d2.shape)
        i = i if rng.random() < 0.5 else k
        j = int(rng.integers(n_points - 1))
        j += j >= i
        c = int(rng.integers(d))
        col = unit[:, c]
        delta = (col[j] - col) ** 2 - (col[i] - col) ** 2
        row_i = d2[i] + delta
        row_j = d2[j] - delta
        row_i[[i, j]] = d2[i, [i, j]]
        row_j[[i, j]] = d2[j, [i, j]]
        if min(row_i.min(), row_j.min()) < best:
            continue
        old_i, old_j = d2[i].copy(), d2[j].copy()
        d2[i], d2[:, i] = row_i, row_i
        d2[j], d2[:, j] = row_j, row_j
        new, new_count = score(d2)
        if new > best or (new == best and new_count < best_count):
            best, best_count = new, new_count
            col[i], col[j] = col[j], col[i]
        else:
            d2[i], d2[:, i] = old_i, old_i
            d2[j], d2[:, j] = old_j, old_j

    points = np.column_stack([r.scale(unit[:, c]) for c, r in enumerate(ranges)])
    return LhsDesign(
        points=points,
        names=[r.name for r in ranges],
        unit=unit,
        maximin_score=float(np.sqrt(best)),
        initial_score=initial,
    )
