"""Synthetic n-of-1 trial generator.

A trial is produced in three layers: a Bernoulli(0.5) instrument ``z``, a
thresholded compliance process turning ``z`` into the treatment actually
taken ``x``, and one of ten linear or non-linear response recursions for
``y``.  All of them share the additive term

    g_t = lam * W_t + eta * U_t + psi * L + beta * X_t + delta1 * X_{t-1}

where ``W`` is an observed confounder, ``U`` a latent time-specific
confounder and ``L`` a latent constant.  Recursions start from zero state and
run for ``burn_in`` extra steps that are discarded.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np
from scipy.signal import lfilter

from .errors import InvalidArgumentError
from .seeding import stream

SQRT3 = math.sqrt(3.0)
DEFAULT_BURN_IN = 100


class ErrorFamily(str, Enum):
    """Distribution of every continuous noise term; both have mean 0, variance 1."""

    GAUSSIAN = "gaussian"
    UNIFORM = "uniform"

    def draw(self, rng: np.random.Generator, size=None):
        if self is ErrorFamily.GAUSSIAN:
            return rng.standard_normal(size)
        return rng.uniform(-SQRT3, SQRT3, size)


class ResponseFamily(str, Enum):
    ARMA11 = "ARMA11"
    ARMA10 = "ARMA10"
    ARMA01 = "ARMA01"
    ARMA00 = "ARMA00"
    ARCH1 = "ARCH1"
    GARCH11 = "GARCH11"
    TAR1 = "TAR1"
    LSTAR1 = "LSTAR1"
    ESTAR1 = "ESTAR1"
    SETAR1 = "SETAR1"


class ComplianceKind(str, Enum):
    COMPLEX = "complex"
    SIMPLE = "simple"


class SelectionMechanism(str, Enum):
    NONE = "none"
    DEBILITATION_MEDIATOR = "debilitation_mediator"
    COMPETITIVE_SKIP_ON_Z = "competitive_skip_on_z"
    DEBILITATION_PLUS_DEPRESSION = "debilitation_plus_depression"


#: coefficients each family reads besides the shared g-term
FAMILY_COEFFICIENTS: dict[ResponseFamily, tuple[str, ...]] = {
    ResponseFamily.ARMA11: ("phi1", "theta1"),
    ResponseFamily.ARMA10: ("phi1",),
    ResponseFamily.ARMA01: ("theta1",),
    ResponseFamily.ARMA00: (),
    ResponseFamily.ARCH1: ("a1", "mu_sigma"),
    ResponseFamily.GARCH11: ("a1", "b1", "mu_sigma"),
    ResponseFamily.TAR1: ("phi11", "phi12"),
    ResponseFamily.LSTAR1: ("phi11", "phi12"),
    ResponseFamily.ESTAR1: ("phi11", "phi12"),
    ResponseFamily.SETAR1: ("phi11", "phi12"),
}

_AR_COEFFICIENTS = ("phi1", "phi11", "phi12")


@dataclass(frozen=True)
class ResponseModelSpec:
    """Response recursion and its coefficients.

    ``b1`` left as ``None`` means "derive from ``a1``": ``1 - a1`` as in the
    original study, or ``0.99 * (1 - a1)`` with ``garch_strict``.
    """

    family: ResponseFamily
    phi1: float = 0.0
    theta1: float = 0.0
    phi11: float = 0.0
    phi12: float = 0.0
    a1: float = 0.0
    b1: float | None = None
    mu_sigma: float = 1.0
    beta: float = 0.0
    delta1: float = 0.0
    lam: float = 0.0
    eta: float = 0.0
    psi: float = 0.0
    garch_strict: bool = False

    def __post_init__(self):
        object.__setattr__(self, "family", ResponseFamily(self.family))

    @property
    def effective_b1(self) -> float:
        if self.b1 is not None:
            return float(self.b1)
        return 0.99 * (1.0 - self.a1) if self.garch_strict else 1.0 - self.a1

    def validate(self, allow_nonstationary: bool = False) -> None:
        used = FAMILY_COEFFICIENTS[self.family]
        for name in used:
            if name in _AR_COEFFICIENTS and not allow_nonstationary:
                value = getattr(self, name)
                if not abs(value) < 1.0:
                    raise InvalidArgumentError(
                        f"{name}={value} violates the stationarity bound |{name}| < 1 "
                        "(pass allow_nonstationary to override)"
                    )
        if self.family in (ResponseFamily.ARCH1, ResponseFamily.GARCH11):
            if not 0.0 <= self.a1 <= 0.99:
                raise InvalidArgumentError(f"a1={self.a1} outside [0, 0.99]")
            if self.mu_sigma <= 0:
                raise InvalidArgumentError(f"mu_sigma={self.mu_sigma} must be positive")
        if self.family is ResponseFamily.GARCH11:
            b1 = self.effective_b1
            if b1 < 0:
                raise InvalidArgumentError(f"b1={b1} must be non-negative")
            if self.a1 + b1 > 1.0 + 1e-12 and not allow_nonstationary:
                raise InvalidArgumentError(
                    f"a1 + b1 = {self.a1 + b1} exceeds 1 (pass allow_nonstationary to override)"
                )


@dataclass(frozen=True)
class ComplianceSpec:
    """Threshold model for the treatment actually taken.

    ``varphi`` and ``rho`` are only read by the complex kind.
    """

    kind: ComplianceKind
    alpha: float
    omega: float = 0.0
    gamma: float = 0.0
    varphi: float = 0.0
    rho: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "kind", ComplianceKind(self.kind))

    def validate(self, allow_nonstationary: bool = False) -> None:
        if not self.alpha > 0:
            raise InvalidArgumentError(f"alpha={self.alpha} must be positive")
        if self.kind is ComplianceKind.COMPLEX and not allow_nonstationary:
            if not abs(self.rho) < 1.0:
                raise InvalidArgumentError(
                    f"rho={self.rho} violates the stationarity bound |rho| < 1 "
                    "(pass allow_nonstationary to override)"
                )


@dataclass(frozen=True)
class ModelSpec:
    response: ResponseModelSpec
    compliance: ComplianceSpec
    errors: ErrorFamily = ErrorFamily.GAUSSIAN
    n: int = 200
    seed: int = 0
    allow_nonstationary: bool = False
    burn_in: int = DEFAULT_BURN_IN

    def __post_init__(self):
        object.__setattr__(self, "errors", ErrorFamily(self.errors))

    def validate(self) -> None:
        if int(self.n) != self.n or self.n < 10:
            raise InvalidArgumentError(f"n={self.n} must be an integer >= 10")
        if self.burn_in < 0:
            raise InvalidArgumentError(f"burn_in={self.burn_in} must be >= 0")
        if not 0 <= self.seed < 2**64:
            raise InvalidArgumentError(f"seed={self.seed} must be a 64-bit unsigned integer")
        self.response.validate(self.allow_nonstationary)
        self.compliance.validate(self.allow_nonstationary)


@dataclass
class TrialSeries:
    """Aligned series of one trial.

    ``u`` and ``latent`` are kept for oracle checks only; estimators never
    read them.  ``x`` is float so that residualized treatments fit the same
    container.
    """

    z: np.ndarray
    x: np.ndarray
    y: np.ndarray
    w: np.ndarray | None = None
    u: np.ndarray | None = None
    latent: dict[str, float] = field(default_factory=dict)
    observed: np.ndarray | None = None

    def __post_init__(self):
        z = np.asarray(self.z)
        if not np.isin(z, (0, 1)).all():
            raise InvalidArgumentError("z must be a 0/1 vector")
        self.z = z.astype(np.int8)
        self.x = np.asarray(self.x, dtype=float)
        self.y = np.asarray(self.y, dtype=float)
        n = self.z.shape[0]
        if self.w is not None:
            self.w = np.asarray(self.w, dtype=float)
        if self.u is not None:
            self.u = np.asarray(self.u, dtype=float)
        if self.observed is None:
            self.observed = np.ones(n, dtype=bool)
        else:
            self.observed = np.asarray(self.observed, dtype=bool)
        for name in ("x", "y", "w", "u", "observed"):
            arr = getattr(self, name)
            if arr is not None and arr.shape != (n,):
                raise InvalidArgumentError(
                    f"{name} has shape {arr.shape}, expected ({n},) to match z"
                )

    @property
    def n(self) -> int:
        return int(self.z.shape[0])

    @property
    def n_observed(self) -> int:
        return int(self.observed.sum())

    def observed_part(self) -> "TrialSeries":
        """Return the trial restricted to observed time points."""
        if self.observed.all():
            return self
        m = self.observed
        return TrialSeries(
            z=self.z[m],
            x=self.x[m],
            y=self.y[m],
            w=None if self.w is None else self.w[m],
            u=None if self.u is None else self.u[m],
            latent=dict(self.latent),
        )

    def with_values(self, **changes) -> "TrialSeries":
        return replace(self, **changes)


@dataclass(frozen=True)
class SelectionSpec:
    """Missingness mechanism with logistic propensities.

    Debilitation is ``D_t = d0 + d1 * X_t + noise_sd * e_t`` and the
    probability of recording time point t is ``sigmoid(c0 + c_d * D_t)``,
    ``sigmoid(c0 + c_z * Z_t)`` or ``sigmoid(c0 + c_d * D_t + c_l * U_t)``
    depending on the mechanism.  In the last one the trial's latent ``u``
    plays the depression level that also moves ``y`` (through ``eta``).
    """

    mechanism: SelectionMechanism = SelectionMechanism.NONE
    d0: float = 0.0
    d1: float = -1.5
    noise_sd: float = 1.0
    c0: float = 1.0
    c_d: float = -1.5
    c_z: float = 1.5
    c_l: float = 1.5

    def __post_init__(self):
        try:
            object.__setattr__(self, "mechanism", SelectionMechanism(self.mechanism))
        except ValueError as exc:
            raise InvalidArgumentError(f"unknown selection mechanism {self.mechanism!r}") from exc


def _check_length(n, **arrays):
    for name, arr in arrays.items():
        if arr is not None and np.shape(arr) != (n,):
            raise InvalidArgumentError(f"{name} has length {np.shape(arr)}, expected {n}")


def simulate_instrument(n: int, rng: np.random.Generator) -> np.ndarray:
    """Draw ``n`` i.i.d. Bernoulli(0.5) treatment suggestions."""
    if n < 1:
        raise InvalidArgumentError(f"n={n} must be >= 1")
    return rng.integers(0, 2, size=n, dtype=np.int8)


def simulate_compliance(
    spec: ComplianceSpec,
    z,
    w,
    u,
    H: float,
    errors: ErrorFamily,
    rng: np.random.Generator,
    allow_nonstationary: bool = False,
) -> np.ndarray:
    """Threshold the compliance index at zero.

    The complex kind adds ``varphi * H`` and replaces the noise by the AR(1)
    filter ``e*_t = rho * e*_{t-1} + e_t`` started at ``e*_0 = 0``.  Both
    kinds consume the same noise draws, so with ``rho = varphi = 0`` they
    coincide.
    """
    spec.validate(allow_nonstationary)
    z = np.asarray(z, dtype=float)
    n = z.shape[0]
    _check_length(n, w=w, u=u)
    eps = ErrorFamily(errors).draw(rng, n)
    index = spec.alpha * z + spec.omega * np.asarray(w) + spec.gamma * np.asarray(u)
    if spec.kind is ComplianceKind.COMPLEX:
        if spec.rho != 0.0:
            eps = lfilter([1.0], [1.0, -spec.rho], eps)
        index = index + spec.varphi * H
    return (index + eps > 0).astype(float)


def _g_term(spec: ResponseModelSpec, x, w, u, L) -> np.ndarray:
    x_lag = np.concatenate(([0.0], x[:-1]))
    return spec.lam * w + spec.eta * u + spec.psi * L + spec.beta * x + spec.delta1 * x_lag


def _time_varying_ar(g: np.ndarray, eps: np.ndarray, coef) -> np.ndarray:
    # y_t = g_t + eps_t + coef_t * y_{t-1}, y_0 = 0
    drive = (g + eps).tolist()
    out = [0.0] * len(drive)
    prev = 0.0
    if callable(coef):
        for t, d in enumerate(drive):
            prev = d + coef(prev) * prev
            out[t] = prev
    else:
        for t, (d, c) in enumerate(zip(drive, coef.tolist())):
            prev = d + c * prev
            out[t] = prev
    return np.asarray(out)


def simulate_response(
    spec: ResponseModelSpec,
    x,
    w,
    u,
    L: float,
    errors: ErrorFamily,
    rng: np.random.Generator,
    allow_nonstationary: bool = False,
) -> np.ndarray:
    """Run the selected response recursion from zero initial state.

    The stream always yields the innovations first and then the standard
    normal threshold variable, whether or not the family uses it, so two
    families fed the same generator state see identical innovations.
    """
    spec.validate(allow_nonstationary)
    x = np.asarray(x, dtype=float)
    n = x.shape[0]
    _check_length(n, w=w, u=u)
    w = np.zeros(n) if w is None else np.asarray(w, dtype=float)
    u = np.zeros(n) if u is None else np.asarray(u, dtype=float)
    eps = ErrorFamily(errors).draw(rng, n)
    thresh = rng.standard_normal(n)
    g = _g_term(spec, x, w, u, L)
    fam = spec.family

    if fam is ResponseFamily.ARMA00:
        return g + eps
    if fam in (ResponseFamily.ARMA11, ResponseFamily.ARMA10, ResponseFamily.ARMA01):
        phi = spec.phi1 if fam is not ResponseFamily.ARMA01 else 0.0
        theta = spec.theta1 if fam is not ResponseFamily.ARMA10 else 0.0
        drive = g + lfilter([1.0, theta], [1.0], eps)
        return lfilter([1.0], [1.0, -phi], drive)
    if fam in (ResponseFamily.ARCH1, ResponseFamily.GARCH11):
        a1, mu = spec.a1, spec.mu_sigma
        b1 = spec.effective_b1 if fam is ResponseFamily.GARCH11 else 0.0
        y = np.empty(n)
        y_prev, s2 = 0.0, mu
        for t, (gt, et) in enumerate(zip(g.tolist(), eps.tolist())):
            s2 = mu + a1 * y_prev * y_prev + b1 * s2
            y_prev = gt + et * math.sqrt(s2)
            y[t] = y_prev
        return y
    if fam is ResponseFamily.TAR1:
        coef = np.where(thresh <= 0, spec.phi11, spec.phi12)
        return _time_varying_ar(g, eps, coef)
    if fam is ResponseFamily.LSTAR1:
        G = 1.0 / (1.0 + np.exp(-thresh))
        return _time_varying_ar(g, eps, spec.phi11 * G + spec.phi12 * (1.0 - G))
    if fam is ResponseFamily.ESTAR1:
        G = 1.0 - np.exp(-thresh * thresh)
        return _time_varying_ar(g, eps, spec.phi11 * G + spec.phi12 * (1.0 - G))
    if fam is ResponseFamily.SETAR1:
        p11, p12 = spec.phi11, spec.phi12
        return _time_varying_ar(g, eps, lambda prev: p11 if prev <= 0 else p12)
    raise InvalidArgumentError(f"unknown response family {fam!r}")


# stream keys under ModelSpec.seed
_LATENT, _INSTRUMENT, _COMPLIANCE, _RESPONSE = range(4)


def simulate_trial(spec: ModelSpec) -> TrialSeries:
    """Simulate one complete trial of length ``spec.n``.

    Each component draws from its own stream derived from ``spec.seed`` so
    changing the response family leaves ``z``, ``w``, ``u`` and ``x`` intact.
    """
    spec.validate()
    m = spec.n + spec.burn_in
    errors = spec.errors

    rng = stream(spec.seed, _LATENT)
    L, H, C = (float(v) for v in errors.draw(rng, 3))
    w = errors.draw(rng, m)
    u = errors.draw(rng, m)
    z = simulate_instrument(m, stream(spec.seed, _INSTRUMENT))
    x = simulate_compliance(
        spec.compliance, z, w, u, H, errors, stream(spec.seed, _COMPLIANCE),
        allow_nonstationary=spec.allow_nonstationary,
    )
    y = simulate_response(
        spec.response, x, w, u, L, errors, stream(spec.seed, _RESPONSE),
        allow_nonstationary=spec.allow_nonstationary,
    )
    keep = slice(spec.burn_in, None)
    return TrialSeries(
        z=z[keep], x=x[keep], y=y[keep], w=w[keep], u=u[keep],
        latent={"L": L, "H": H, "C": C},
    )


def _sigmoid(v):
    return 1.0 / (1.0 + np.exp(-v))


def apply_selection(trial: TrialSeries, sel: SelectionSpec, rng: np.random.Generator) -> TrialSeries:
    """Return a copy of ``trial`` whose ``observed`` mask follows ``sel``.

    Data values are never modified.
    """
    if not trial.observed.all():
        raise InvalidArgumentError("apply_selection expects a fully observed trial")
    mech = sel.mechanism
    if mech is SelectionMechanism.NONE:
        return trial.with_values(observed=trial.observed.copy())
    n = trial.n
    if mech is SelectionMechanism.COMPETITIVE_SKIP_ON_Z:
        logit = sel.c0 + sel.c_z * trial.z
    else:
        debilitation = sel.d0 + sel.d1 * trial.x + sel.noise_sd * rng.standard_normal(n)
        logit = sel.c0 + sel.c_d * debilitation
        if mech is SelectionMechanism.DEBILITATION_PLUS_DEPRESSION:
            if trial.u is None:
                raise InvalidArgumentError("debilitation_plus_depression needs the latent u series")
            logit = logit + sel.c_l * trial.u
    observed = rng.random(n) < _sigmoid(logit)
    return trial.with_values(observed=observed)
