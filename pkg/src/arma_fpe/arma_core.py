"""ARMA(p1, p2) representation, validity checks, simulation and derivative recursions.

Sign convention throughout::

    y_t = a_1 y_{t-1} + ... + a_p1 y_{t-p1} - b_1 e_{t-1} - ... - b_p2 e_{t-p2} + e_t

with ``y_t = e_t = 0`` for ``t <= 0``.  The AR polynomial is
``A1(z) = 1 - sum a_j z^j`` and the MA polynomial ``A2(z) = 1 - sum b_j z^j``,
so the model reads ``A1(B) y = A2(B) e`` in the backshift operator ``B``.

All linear recursions of the form ``z_t = x_t + sum_s b_s z_{t-s}`` (zero
initial state) are run through :func:`scipy.signal.lfilter`, which evaluates
exactly that difference equation in compiled code.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import lfilter

__all__ = [
    "ModelOrder",
    "ArmaParams",
    "ParamSpace",
    "Series",
    "Violation",
    "Validity",
    "NoiseSpec",
    "DerivativePath",
    "FilterBank",
    "DecayFit",
    "InvalidParamsError",
    "validate_params",
    "is_feasible",
    "simulate",
    "residuals",
    "derivative_path",
    "expand_rational",
    "filter_bank",
    "decay_fit",
    "ar_poly",
    "ma_poly",
]


class InvalidParamsError(ValueError):
    """Raised when a parameter point fails the validity predicate."""

    def __init__(self, validity: "Validity"):
        self.validity = validity
        super().__init__("invalid ARMA parameters: " + validity.describe())


@dataclass(frozen=True)
class ModelOrder:
    p1: int
    p2: int

    def __post_init__(self):
        if self.p1 < 0 or self.p2 < 0:
            raise ValueError(f"orders must be nonnegative, got p1={self.p1}, p2={self.p2}")
        if self.p1 + self.p2 < 1:
            raise ValueError("at least one of p1, p2 must be positive")

    @property
    def p_bar(self) -> int:
        return self.p1 + self.p2

    def __str__(self) -> str:
        return f"ARMA({self.p1},{self.p2})"


@dataclass(frozen=True, eq=False)
class ArmaParams:
    """A parameter point ``(a_1..a_p1, b_1..b_p2)``.

    Validity is deliberately not enforced here; see :func:`validate_params`.
    """

    ar: np.ndarray = field(default_factory=lambda: np.zeros(0))
    ma: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        ar = np.array(self.ar, dtype=float).reshape(-1)
        ma = np.array(self.ma, dtype=float).reshape(-1)
        if not (np.all(np.isfinite(ar)) and np.all(np.isfinite(ma))):
            raise ValueError("ARMA coefficients must be finite")
        ar.flags.writeable = False
        ma.flags.writeable = False
        object.__setattr__(self, "ar", ar)
        object.__setattr__(self, "ma", ma)

    @property
    def order(self) -> ModelOrder:
        return ModelOrder(self.ar.size, self.ma.size)

    @property
    def p1(self) -> int:
        return self.ar.size

    @property
    def p2(self) -> int:
        return self.ma.size

    def vector(self) -> np.ndarray:
        return np.concatenate([self.ar, self.ma])

    @classmethod
    def from_vector(cls, vec, order: ModelOrder) -> "ArmaParams":
        vec = np.asarray(vec, dtype=float).reshape(-1)
        if vec.size != order.p_bar:
            raise ValueError(f"expected {order.p_bar} coefficients, got {vec.size}")
        return cls(vec[: order.p1], vec[order.p1 :])

    def __eq__(self, other) -> bool:
        if not isinstance(other, ArmaParams):
            return NotImplemented
        return np.array_equal(self.ar, other.ar) and np.array_equal(self.ma, other.ma)

    def __hash__(self) -> int:
        return hash((self.ar.tobytes(), self.ma.tobytes()))

    def __repr__(self) -> str:
        return f"ArmaParams(ar={self.ar.tolist()}, ma={self.ma.tolist()})"


def ar_poly(params: ArmaParams) -> np.ndarray:
    """Ascending coefficients of ``A1(z) = 1 - sum a_j z^j``."""
    return np.concatenate([[1.0], -params.ar])


def ma_poly(params: ArmaParams) -> np.ndarray:
    """Ascending coefficients of ``A2(z) = 1 - sum b_j z^j``."""
    return np.concatenate([[1.0], -params.ma])


def _root_list(ascending) -> list[complex]:
    """Finite roots of ``1 + c_1 z + ... + c_d z^d`` (ascending coefficients, constant term 1).

    Works on the reciprocal polynomial ``w^d + c_1 w^{d-1} + ... + c_d``,
    which is monic, so its companion matrix needs no division by a possibly
    tiny leading coefficient; roots are ``z = 1 / w``.  Degrees one and two
    are solved in closed form since they dominate the optimizer's checks.
    """
    deg = len(ascending) - 1
    while deg > 0 and ascending[deg] == 0.0:
        deg -= 1
    if deg == 0:
        return []
    c = [float(v) for v in ascending[: deg + 1]]
    if deg == 1:
        w = [complex(-c[1])]
    elif deg == 2:
        disc = cmath.sqrt(c[1] * c[1] - 4.0 * c[2])
        # Citardauq form avoids cancellation.
        q = -0.5 * (c[1] + disc if c[1] >= 0 else c[1] - disc)
        w = [q, c[2] / q]
    else:
        companion = np.zeros((deg, deg))
        companion[0, :] = [-v for v in c[1:]]
        companion[1:, :-1] = np.eye(deg - 1)
        w = [complex(v) for v in np.linalg.eigvals(companion)]
    out = []
    for v in w:
        try:
            z = 1.0 / v
        except (ZeroDivisionError, OverflowError):
            continue
        if cmath.isfinite(z):
            out.append(z)
    return out


def _poly_roots(ascending) -> np.ndarray:
    return np.array(_root_list(ascending), dtype=complex)


@dataclass(frozen=True, eq=False)
class ParamSpace:
    """Compact parameter set: a coordinate box intersected with root margins.

    A point lies in the space iff it is inside ``[lower, upper]`` and
    :func:`validate_params` reports no violation.
    """

    lower: np.ndarray
    upper: np.ndarray
    order: ModelOrder
    root_margin: float = 0.01
    common_root_tol: float = 0.01
    endpoint_tol: float = 1e-6

    def __post_init__(self):
        lower = np.array(self.lower, dtype=float).reshape(-1)
        upper = np.array(self.upper, dtype=float).reshape(-1)
        if lower.size != self.order.p_bar or upper.size != self.order.p_bar:
            raise ValueError("box bounds must have length p1 + p2")
        if not np.all(lower < upper):
            raise ValueError("lower must be strictly below upper in every coordinate")
        if self.root_margin <= 0 or self.common_root_tol <= 0 or self.endpoint_tol <= 0:
            raise ValueError("root_margin, common_root_tol and endpoint_tol must be positive")
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)

    @classmethod
    def default(cls, order: ModelOrder, **margins) -> "ParamSpace":
        """Box ``|a_j| <= C(p1, j)``, ``|b_j| <= C(p2, j)``.

        The binomial bounds contain every polynomial whose roots lie outside
        the unit disk, so the box never cuts into the stationary region.
        """
        bounds = [math.comb(order.p1, j) for j in range(1, order.p1 + 1)]
        bounds += [math.comb(order.p2, j) for j in range(1, order.p2 + 1)]
        b = np.asarray(bounds, dtype=float)
        return cls(-b, b, order, **margins)

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.lower + self.upper)

    def in_box(self, vec: np.ndarray) -> bool:
        return all(lo <= v <= hi for v, lo, hi in zip(vec, self.lower, self.upper))

    def contains(self, params: ArmaParams) -> bool:
        return validate_params(params, self).valid


@dataclass(frozen=True)
class Violation:
    condition: str  # stationarity | invertibility | common_root | endpoint | box
    message: str


@dataclass(frozen=True)
class Validity:
    violations: tuple[Violation, ...] = ()

    @property
    def valid(self) -> bool:
        return not self.violations

    def __bool__(self) -> bool:
        return self.valid

    def describe(self) -> str:
        if self.valid:
            return "valid"
        return "; ".join(f"{v.condition}: {v.message}" for v in self.violations)


def validate_params(params: ArmaParams, space: ParamSpace) -> Validity:
    """Check root margins, coprimality, the nonzero-endpoint condition and the box.

    Every failing condition is reported; nothing is raised.
    """
    if params.order != space.order:
        raise ValueError(f"params are {params.order} but space is {space.order}")
    out = []
    bound = 1.0 + space.root_margin
    ar_roots = _poly_roots(ar_poly(params))
    ma_roots = _poly_roots(ma_poly(params))
    if ar_roots.size and np.min(np.abs(ar_roots)) < bound:
        out.append(Violation(
            "stationarity",
            f"AR polynomial has a root of modulus {np.min(np.abs(ar_roots)):.6g} < {bound:.6g}",
        ))
    if ma_roots.size and np.min(np.abs(ma_roots)) < bound:
        out.append(Violation(
            "invertibility",
            f"MA polynomial has a root of modulus {np.min(np.abs(ma_roots)):.6g} < {bound:.6g}",
        ))
    if ar_roots.size and ma_roots.size:
        gap = np.min(np.abs(ar_roots[:, None] - ma_roots[None, :]))
        if gap < space.common_root_tol:
            out.append(Violation(
                "common_root",
                f"AR and MA polynomials share a root (distance {gap:.6g} < {space.common_root_tol:.6g})",
            ))
    last_ar = abs(params.ar[-1]) if params.p1 else 0.0
    last_ma = abs(params.ma[-1]) if params.p2 else 0.0
    if last_ar + last_ma < space.endpoint_tol:
        out.append(Violation(
            "endpoint",
            f"|a_p1| + |b_p2| = {last_ar + last_ma:.6g} < {space.endpoint_tol:.6g}",
        ))
    if not space.in_box(params.vector()):
        out.append(Violation("box", "coefficients lie outside the coordinate box"))
    return Validity(tuple(out))


def is_feasible(vec, space: ParamSpace) -> bool:
    """Boolean form of :func:`validate_params` on a raw coefficient vector.

    Same conditions, no report; this is the optimizer's hot path.
    """
    p1 = space.order.p1
    vec = [float(v) for v in vec]
    if not space.in_box(vec):
        return False
    ar, ma = vec[:p1], vec[p1:]
    last = (abs(ar[-1]) if ar else 0.0) + (abs(ma[-1]) if ma else 0.0)
    if last < space.endpoint_tol:
        return False
    bound = 1.0 + space.root_margin
    ar_roots = _root_list([1.0] + [-a for a in ar])
    ma_roots = _root_list([1.0] + [-b for b in ma])
    for roots in (ar_roots, ma_roots):
        if any(abs(z) < bound for z in roots):
            return False
    tol = space.common_root_tol
    return not any(abs(za - zb) < tol for za in ar_roots for zb in ma_roots)


@dataclass(frozen=True)
class Series:
    """Observations ``y_1..y_n`` (array position ``t-1`` holds ``y_t``)."""

    y: np.ndarray
    eps: np.ndarray | None = None

    def __post_init__(self):
        y = np.array(self.y, dtype=float).reshape(-1)
        object.__setattr__(self, "y", y)
        if self.eps is not None:
            eps = np.array(self.eps, dtype=float).reshape(-1)
            if eps.size != y.size:
                raise ValueError("eps and y must have the same length")
            object.__setattr__(self, "eps", eps)

    @property
    def n(self) -> int:
        return self.y.size

    def head(self, n: int) -> "Series":
        return Series(self.y[:n], None if self.eps is None else self.eps[:n])


@dataclass(frozen=True)
class NoiseSpec:
    """I.i.d. innovation family: ``gaussian`` or variance-matched ``student_t``."""

    kind: str = "gaussian"
    sigma2: float = 1.0
    df: float | None = None

    def __post_init__(self):
        if self.kind not in ("gaussian", "student_t"):
            raise ValueError(f"unknown noise kind {self.kind!r}")
        if self.sigma2 < 0:
            raise ValueError("sigma2 must be nonnegative")
        if self.kind == "student_t" and (self.df is None or self.df <= 2):
            raise ValueError("student_t noise needs df > 2 for a finite variance")

    @property
    def sigma(self) -> float:
        return math.sqrt(self.sigma2)

    def max_moment(self) -> float:
        """Supremum of the finite absolute moment orders."""
        return math.inf if self.kind == "gaussian" else float(self.df)

    def draw(self, rng: np.random.Generator, n: int) -> np.ndarray:
        if self.kind == "gaussian":
            return self.sigma * rng.standard_normal(n)
        scale = self.sigma * math.sqrt((self.df - 2.0) / self.df)
        return scale * rng.standard_t(self.df, n)


def _check_length(params: ArmaParams, y) -> np.ndarray:
    y = y.y if isinstance(y, Series) else np.asarray(y, dtype=float).reshape(-1)
    if y.size < 1:
        raise ValueError("series must contain at least one observation")
    return y


def simulate(
    params: ArmaParams,
    n: int,
    noise: NoiseSpec | None = None,
    seed: int | None = None,
    *,
    eps=None,
    space: ParamSpace | None = None,
) -> Series:
    """Generate ``y_1..y_n`` under zero initial conditions.

    Innovations are either drawn from ``noise`` with a PCG64 generator seeded
    by ``seed``, or injected verbatim through ``eps``.
    """
    if n < 1:
        raise ValueError("n must be positive")
    space = space or ParamSpace.default(params.order)
    validity = validate_params(params, space)
    if not validity:
        raise InvalidParamsError(validity)
    if eps is None:
        if noise is None or seed is None:
            raise ValueError("need either injected eps or both noise and seed")
        e = noise.draw(np.random.default_rng(seed), n)
    else:
        e = np.array(eps, dtype=float).reshape(-1)
        if e.size != n:
            raise ValueError(f"injected eps has length {e.size}, expected {n}")
    y = lfilter(ma_poly(params), ar_poly(params), e)
    return Series(y, e)


def residuals(params: ArmaParams, y) -> np.ndarray:
    """Conditional residuals ``e_t(eta) = y_t - a.y_lags + b.e_lags(eta)``, exact (no truncation)."""
    y = _check_length(params, y)
    return lfilter(ar_poly(params), ma_poly(params), y)


def _lag(x: np.ndarray, k: int) -> np.ndarray:
    out = np.zeros_like(x)
    if k < x.shape[0]:
        out[k:] = x[: x.shape[0] - k]
    return out


@dataclass(frozen=True)
class DerivativePath:
    eps: np.ndarray
    grad: np.ndarray | None = None
    hess: np.ndarray | None = None


def derivative_path(params: ArmaParams, y, order: int = 1) -> DerivativePath:
    """Residuals with their gradients and Hessians in the coefficients.

    Every derivative obeys the same MA recursion as the residuals, only the
    forcing term changes:

    * ``d e_t / d a_i   = -y_{t-i}                         + sum_s b_s (.)_{t-s}``
    * ``d e_t / d b_j   =  e_{t-j}                          + sum_s b_s (.)_{t-s}``
    * ``d2 e_t / da_i da_k = 0``
    * ``d2 e_t / da_i db_l = (d e_{t-l} / d a_i)             + sum_s b_s (.)_{t-s}``
    * ``d2 e_t / db_j db_l = (d e_{t-l}/db_j) + (d e_{t-j}/db_l) + sum_s b_s (.)_{t-s}``

    Returns arrays of shape ``(n,)``, ``(n, p)`` and ``(n, p, p)``.
    """
    if order not in (0, 1, 2):
        raise ValueError("order must be 0, 1 or 2")
    y = _check_length(params, y)
    p1, p2 = params.p1, params.p2
    a2 = ma_poly(params)
    eps = lfilter(ar_poly(params), a2, y)
    if order == 0:
        return DerivativePath(eps)
    n, p = y.size, p1 + p2
    forcing = np.empty((p, n))
    for i in range(1, p1 + 1):
        forcing[i - 1] = -_lag(y, i)
    for j in range(1, p2 + 1):
        forcing[p1 + j - 1] = _lag(eps, j)
    grad_rows = lfilter([1.0], a2, forcing, axis=1)
    if order == 1:
        return DerivativePath(eps, grad_rows.T.copy())
    hess = np.zeros((p, p, n))
    pairs, hforce = [], []
    for i in range(p1):
        for l in range(1, p2 + 1):
            pairs.append((i, p1 + l - 1))
            hforce.append(_lag(grad_rows[i], l))
    for j in range(1, p2 + 1):
        for l in range(j, p2 + 1):
            pairs.append((p1 + j - 1, p1 + l - 1))
            hforce.append(_lag(grad_rows[p1 + j - 1], l) + _lag(grad_rows[p1 + l - 1], j))
    if pairs:
        filtered = lfilter([1.0], a2, np.asarray(hforce), axis=1)
        for (a, b), row in zip(pairs, filtered):
            hess[a, b] = row
            hess[b, a] = row
    return DerivativePath(eps, grad_rows.T.copy(), np.transpose(hess, (2, 0, 1)).copy())


def expand_rational(numerator, denominator, L: int) -> np.ndarray:
    """Power-series coefficients ``c_0..c_L`` of ``P(z) / Q(z)``.

    Polynomials are given by ascending coefficients and ``Q`` must have
    constant term 1.  Uses ``c_j = p_j - sum_{k=1}^{min(j, deg Q)} q_k c_{j-k}``.
    """
    p = np.asarray(numerator, dtype=float).reshape(-1)
    q = np.asarray(denominator, dtype=float).reshape(-1)
    if q.size == 0 or q[0] != 1.0:
        raise ValueError("denominator must have constant term exactly 1")
    if L < 0:
        raise ValueError("L must be nonnegative")
    c = np.zeros(L + 1)
    deg_q = q.size - 1
    for j in range(L + 1):
        acc = p[j] if j < p.size else 0.0
        for k in range(1, min(j, deg_q) + 1):
            acc -= q[k] * c[j - k]
        c[j] = acc
    return c


@dataclass(frozen=True)
class FilterBank:
    """``coeffs[l-1, j-1]`` holds the gradient filter weight for component ``l`` at lag ``j``;
    ``diff_coeffs[j-1]`` the residual-difference weight at lag ``j``."""

    coeffs: np.ndarray
    diff_coeffs: np.ndarray
    c1: np.ndarray
    c2: np.ndarray

    def gradients(self, eps: np.ndarray) -> np.ndarray:
        """``(n, p)`` matrix of ``sum_{j=1}^{t-1} coeffs[l, j] eps_{t-j}``."""
        return np.column_stack([_causal_filter(row, eps) for row in self.coeffs])

    def residual_difference(self, eps: np.ndarray) -> np.ndarray:
        return _causal_filter(self.diff_coeffs, eps)


def _causal_filter(lag_weights: np.ndarray, eps: np.ndarray) -> np.ndarray:
    n = eps.size
    w = np.concatenate([[0.0], lag_weights[: max(n - 1, 0)]])
    return np.convolve(eps, w)[:n]


def filter_bank(params: ArmaParams, true_params: ArmaParams, L: int, space: ParamSpace | None = None) -> FilterBank:
    """Moving-average weights expressing gradients and residual differences in the true innovations."""
    if params.order != true_params.order:
        raise ValueError("params and true_params must share the model order")
    space = space or ParamSpace.default(params.order)
    for pt in (params, true_params):
        v = validate_params(pt, space)
        if not v:
            raise InvalidParamsError(v)
    a1, a2 = ar_poly(params), ma_poly(params)
    a1_0, a2_0 = ar_poly(true_params), ma_poly(true_params)
    # Products ordered (AR, MA) on both sides so that P == Q bitwise at the truth.
    den1 = np.convolve(a1_0, a2)
    num2 = np.convolve(a1, a2_0)
    c1 = expand_rational(-a2_0, den1, L)
    c2 = expand_rational(num2, np.convolve(den1, a2), L)
    ratio = expand_rational(num2, den1, L)
    p1, p2 = params.p1, params.p2
    coeffs = np.zeros((p1 + p2, L))
    js = np.arange(1, L + 1)
    for l in range(1, p1 + 1):
        coeffs[l - 1, l - 1 :] = c1[js[l - 1 :] - l]
    for l in range(1, p2 + 1):
        coeffs[p1 + l - 1, l - 1 :] = c2[js[l - 1 :] - l]
    return FilterBank(coeffs, ratio[1:].copy(), c1, c2)


@dataclass(frozen=True)
class DecayFit:
    K: float
    rate: float
    slope: float
    intercept: float
    identically_zero: bool = False


def decay_fit(coeffs) -> DecayFit:
    """Exponential envelope ``|c_j| <= K exp(-rate j)`` over ``j = 1..len``.

    ``slope``/``intercept`` come from least squares on ``log|c_j|`` over the
    nonzero entries; ``rate = -slope`` and ``K`` is the smallest constant
    making the envelope hold at that rate.  Diagnostic only.
    """
    c = np.abs(np.asarray(coeffs, dtype=float).reshape(-1))
    if c.size == 0:
        raise ValueError("coeffs must be nonempty")
    nz = c > 0
    if not nz.any():
        return DecayFit(0.0, math.inf, -math.inf, -math.inf, identically_zero=True)
    j = np.arange(1, c.size + 1, dtype=float)[nz]
    logs = np.log(c[nz])
    if j.size == 1:
        slope, intercept = 0.0, float(logs[0])
    else:
        slope, intercept = np.polyfit(j, logs, 1)
    rate = -float(slope)
    K = float(np.max(np.exp(logs + rate * j)))
    return DecayFit(K, rate, float(slope), float(intercept))
