"""Closed-form quantities of the descendant limit theory.

All functions here are pure and thread-safe.  Gamma ratios are evaluated in
log space with ``math.lgamma``; integrals use adaptive QUADPACK quadrature
from SciPy.

The uniform-attachment variant is the ``rho -> inf`` limit of the model.  It
is represented by ``rho = math.inf`` and every formula below handles that
case explicitly instead of relying on floating-point infinities.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate, stats

from .rng import RngStream, _fill_gamma

VARIANTS = ("sequential", "polya-urn", "self-loop", "uniform")
VARIANT_ALIASES = {
    "polya": "polya-urn",
    "pu": "polya-urn",
    "selfloop": "self-loop",
    "seq": "sequential",
}

QUAD_TOL = 1e-10


def canonical_variant(name: str) -> str:
    name = VARIANT_ALIASES.get(name, name)
    if name not in VARIANTS:
        raise ValueError(f"unknown variant {name!r}; expected one of {', '.join(VARIANTS)}")
    return name


@dataclass(frozen=True)
class ModelParams:
    """Model variant, out-degree ``m``, degree offset ``rho``, size ``n`` and seed."""

    variant: str = "polya-urn"
    m: int = 2
    rho: float = 0.0
    n: int = 1000
    master_seed: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "variant", canonical_variant(self.variant))
        if int(self.m) != self.m or self.m < 1:
            raise ValueError(f"m must be a positive integer, got {self.m}")
        if int(self.n) != self.n or self.n < 1:
            raise ValueError(f"n must be a positive integer, got {self.n}")
        if not 0 <= int(self.master_seed) < 2**64:
            raise ValueError(f"master_seed must be an unsigned 64-bit integer, got {self.master_seed}")
        object.__setattr__(self, "m", int(self.m))
        object.__setattr__(self, "n", int(self.n))
        object.__setattr__(self, "master_seed", int(self.master_seed))
        if self.variant == "uniform":
            object.__setattr__(self, "rho", math.inf)
        else:
            rho = float(self.rho)
            if math.isnan(rho) or not rho > -self.m:
                raise ValueError(f"rho must exceed -m = {-self.m}, got {self.rho}")
            object.__setattr__(self, "rho", rho)

    @property
    def effective_rho(self) -> float:
        """``rho`` as used by the formulas (``inf`` for uniform attachment)."""
        return self.rho

    def to_dict(self) -> dict:
        return {
            "variant": self.variant,
            "m": self.m,
            "rho": None if math.isinf(self.rho) else self.rho,
            "n": self.n,
            "master_seed": self.master_seed,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ModelParams":
        rho = data.get("rho", 0.0)
        return cls(
            variant=data.get("variant", "polya-urn"),
            m=data.get("m", 2),
            rho=0.0 if rho is None else rho,
            n=data.get("n", 1000),
            master_seed=data.get("master_seed", 0),
        )


@dataclass(frozen=True)
class DerivedConstants:
    nu: float
    chi: float
    theta: float
    alpha: float
    kappa: float


@dataclass(frozen=True)
class LimitLaw:
    """Law of ``prefactor * g**exponent`` with ``g ~ Gamma(gamma_shape, 1)``.

    ``gamma_ratio`` is the bare Gamma-function ratio ``K`` and ``scale`` is
    ``c``, so the limit variable equals ``K * (c * g)**exponent`` and
    ``prefactor = K * c**exponent``.
    """

    constants: DerivedConstants
    m: int
    rho: float
    gamma_ratio: float
    scale: float
    exponent: float
    gamma_shape: float

    @property
    def prefactor(self) -> float:
        return self.gamma_ratio * self.scale**self.exponent

    @property
    def nu(self) -> float:
        return self.constants.nu


def _check_rho(m: int, rho: float) -> float:
    rho = float(rho)
    if math.isnan(rho) or not rho > -m:
        raise ValueError(f"rho must exceed -m = {-m}, got {rho}")
    return rho


def _check_m(m: int, minimum: int = 2) -> int:
    if int(m) != m or m < minimum:
        raise ValueError(f"m must be an integer >= {minimum}, got {m}")
    return int(m)


def derive_constants(m: int, rho: float) -> DerivedConstants:
    """Exponents and rates of the model; ``rho = inf`` gives uniform attachment."""
    m = _check_m(m)
    rho = _check_rho(m, rho)
    if math.isinf(rho):
        theta = math.inf
        chi = 1.0
        nu = (m - 1) / m
    else:
        theta = 2 * m + rho
        chi = (m + rho) / theta
        nu = (m - 1) * (m + rho) / (m * (m + rho + 1))
    kappa = (m - 1) * chi
    return DerivedConstants(nu=nu, chi=chi, theta=theta, alpha=1.0 + kappa, kappa=kappa)


def limit_law(m: int, rho: float) -> LimitLaw:
    const = derive_constants(m, rho)
    rho = float(rho)
    if math.isinf(rho):
        log_k = math.lgamma((m - 1) / m) + math.lgamma(1.0 / m + 1.0)
        scale = float(m - 1)
    else:
        r = m + rho
        log_k = (
            math.lgamma(const.nu)
            + math.lgamma(r / (m * (r + 1)) + 1.0)
            - math.lgamma(r / (r + 1))
        )
        scale = (r + 1) * (m - 1) / (2 * m + rho)
    return LimitLaw(
        constants=const,
        m=int(m),
        rho=rho,
        gamma_ratio=math.exp(log_k),
        scale=scale,
        exponent=1.0 - const.nu,
        gamma_shape=m / (m - 1),
    )


def limit_transform(law: LimitLaw, g):
    """Map Gamma(gamma_shape, 1) draws to the limit variable."""
    return law.gamma_ratio * np.power(law.scale * np.asarray(g, dtype=float), law.exponent)


def limit_sample(law: LimitLaw, stream: RngStream) -> float:
    g = stream.gamma(law.gamma_shape, 1.0)
    return float(limit_transform(law, g))


def limit_samples(law: LimitLaw, stream: RngStream, size: int) -> np.ndarray:
    out = np.empty(int(size))
    _fill_gamma(stream.state, law.gamma_shape, 1.0, out)
    return limit_transform(law, out)


def limit_cdf_reference(law: LimitLaw, stream: RngStream, size: int = 1_000_000) -> np.ndarray:
    """Sorted reference sample of the limit law for two-sample comparisons."""
    return np.sort(limit_samples(law, stream, size))


def limit_moment(law: LimitLaw, p: float) -> float:
    if p < 0:
        raise ValueError(f"moment order must be nonnegative, got {p}")
    if p == 0:
        return 1.0
    a = law.gamma_shape
    log_val = (
        p * math.log(law.prefactor)
        + math.lgamma(p * law.exponent + a)
        - math.lgamma(a)
    )
    return math.exp(log_val)


def expected_S(n: int, k: int, m: int, rho: float) -> float:
    """Exact mean of the urn product ``S_{n,k}``."""
    m = _check_m(m, 1)
    rho = _check_rho(m, rho)
    if not 1 <= k <= n - 1:
        raise ValueError(f"need 1 <= k <= n-1, got k={k}, n={n}")
    if k == n - 1:
        return 1.0
    if math.isinf(rho):
        return k / (n - 1)
    theta = 2 * m + rho
    a = (3 * m + rho) / theta
    b = 2 * m / theta
    log_val = (
        math.lgamma(n - a) - math.lgamma(n - b)
        + math.lgamma(k + 1 - b) - math.lgamma(k + 1 - a)
    )
    return min(1.0, math.exp(log_val))


def _phi_shifts(m: int, rho: float) -> tuple[float, float]:
    if math.isinf(rho):
        return float(m - 1), 0.0
    theta = 2 * m + rho
    return ((m - 1) * (m + rho) - 2 * m) / theta, 2 * m / theta


def expected_phi(k: int, m: int, rho: float) -> float:
    """Exact mean of ``Phi_k = prod_{j<=k} (1 + (m-1) B_j)``."""
    m = _check_m(m, 1)
    rho = _check_rho(m, rho)
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if k == 1:
        return float(m)
    delta, b = _phi_shifts(m, rho)
    log_val = (
        math.lgamma(k + 1 + delta) + math.lgamma(2 - b)
        - math.lgamma(k + 1 - b) - math.lgamma(2 + delta)
    )
    return m * math.exp(log_val)


def phi_asymptotic_constant(m: int, rho: float) -> float:
    """Constant ``C`` with ``E Phi_k ~ C k^kappa`` as ``k -> inf``."""
    m = _check_m(m, 1)
    rho = _check_rho(m, rho)
    delta, b = _phi_shifts(m, rho)
    return m * math.exp(math.lgamma(2 - b) - math.lgamma(2 + delta))


def beta_shapes(i: int, m: int, rho: float) -> tuple[float, float]:
    """Shape parameters of the urn variable ``B_i`` for ``i >= 2``."""
    return m + rho, (2 * i - 3) * m + (i - 1) * rho


def expected_beta_moments(i: int, m: int, rho: float) -> tuple[float, float]:
    """``(E B_i, E B_i**2)``."""
    m = _check_m(m, 1)
    rho = _check_rho(m, rho)
    if i < 2:
        raise ValueError(f"i must be >= 2, got {i}")
    if math.isinf(rho):
        return 1.0 / i, 1.0 / (i * i)
    theta = 2 * m + rho
    d = theta * i - 2 * m
    return (m + rho) / d, (m + rho + 1) * (m + rho) / ((d + 1) * d)


def _curve_integrand(xi, t: float, m: int, rho: float):
    const = derive_constants(m, rho)
    if math.isinf(rho):
        return t * np.log1p(xi * t ** (-const.alpha))
    theta = const.theta
    r1 = m + rho + 1
    x = (r1 / theta) * xi * t ** (-const.alpha)
    return theta * t * np.expm1(np.log1p(x) / r1)


def curve_Y(t: float, xi, m: int, rho: float):
    """Limit of ``n^-nu * Y_{t n^nu}`` given the random factor ``xi``."""
    if not t > 0:
        raise ValueError(f"t must be positive, got {t}")
    return _curve_integrand(np.asarray(xi, dtype=float), float(t), m, rho)


def mean_curve_Y(t: float, m: int, rho: float) -> float:
    """Expectation of :func:`curve_Y` over ``xi ~ Gamma(m/(m-1), m-1)``.

    The curve rises from 0, peaks and decays like ``m * t**(1-alpha)``;
    ``t**(alpha-1) * mean_curve_Y(t)`` increases to ``m``.
    """
    if not t > 0:
        raise ValueError(f"t must be positive, got {t}")
    m = _check_m(m)
    rho = _check_rho(m, rho)
    shape, scale = m / (m - 1), float(m - 1)
    dist = stats.gamma(shape, scale=scale)
    upper = float(dist.isf(1e-12))

    def f(xi: float) -> float:
        return float(_curve_integrand(xi, t, m, rho)) * dist.pdf(xi)

    mode = max(scale * (shape - 1.0), 1e-3)
    val, _ = integrate.quad(f, 0.0, upper, epsabs=0.0, epsrel=QUAD_TOL, limit=200, points=[mode])
    return val


def mean_curve_tail_bound(t: float, m: int, rho: float) -> float:
    """Upper bound on the mass of :func:`mean_curve_Y` beyond the truncation point."""
    const = derive_constants(m, rho)
    shape, scale = m / (m - 1), float(m - 1)
    upper = float(stats.gamma(shape, scale=scale).isf(1e-12))
    # integrand <= xi * t^(1-alpha); E[xi; xi > Q] = shape*scale*P(Gamma(shape+1) > Q)
    tail_mean = shape * scale * float(stats.gamma(shape + 1.0, scale=scale).sf(upper))
    return t ** (1.0 - const.alpha) * tail_mean


def _finite_rho(m: int, rho: float, what: str) -> float:
    rho = _check_rho(m, rho)
    if math.isinf(rho):
        raise ValueError(f"{what} requires a finite rho")
    return rho


def ode_closed(t: float, c: float, m: int, rho: float) -> float:
    """Closed-form solution ``theta t^a ((1 + c t^-a)^(1/(m+rho+1)) - 1)``."""
    if not t > 0:
        raise ValueError(f"t must be positive, got {t}")
    rho = _finite_rho(m, rho, "ode_closed")
    const = derive_constants(m, rho)
    ta = t**const.alpha
    radicand = 1.0 + c / ta
    if not radicand > 0:
        raise ValueError(f"nonpositive radicand 1 + c t^-alpha = {radicand}")
    return const.theta * ta * math.expm1(math.log1p(c / ta) / (m + rho + 1))


def ode_rhs(t: float, f: float, m: int, rho: float) -> float:
    """Right-hand side ``m t^(a-1) ((1 + f/(theta t^a))^-(m+rho) - 1 + chi f / t^a)``."""
    if not t > 0:
        raise ValueError(f"t must be positive, got {t}")
    rho = _finite_rho(m, rho, "ode_rhs")
    const = derive_constants(m, rho)
    ta = t**const.alpha
    u = f / (const.theta * ta)
    if not u > -1:
        raise ValueError(f"nonpositive radicand 1 + f/(theta t^alpha) = {1 + u}")
    return m * t ** (const.alpha - 1) * (math.expm1(-(m + rho) * math.log1p(u)) + const.chi * f / ta)


def ode_boundary_constant(f_inf: float, m: int, rho: float) -> float:
    """Constant ``c`` of the closed form given the limit ``f(inf)``."""
    rho = _finite_rho(m, rho, "ode_boundary_constant")
    return (m + rho + 1) * f_inf / (2 * m + rho)


def ode_integrate(t0: float, f0: float, t1: float, m: int, rho: float, steps: int = 4000) -> float:
    """Classical RK4 for the ODE on a logarithmic time grid."""
    if not (t0 > 0 and t1 > 0):
        raise ValueError("integration endpoints must be positive")
    h = (math.log(t1) - math.log(t0)) / steps
    s, f = math.log(t0), float(f0)

    def g(s_: float, f_: float) -> float:
        t_ = math.exp(s_)
        return t_ * ode_rhs(t_, f_, m, rho)

    for _ in range(steps):
        k1 = g(s, f)
        k2 = g(s + h / 2, f + h * k1 / 2)
        k3 = g(s + h / 2, f + h * k2 / 2)
        k4 = g(s + h, f + h * k3)
        f += h * (k1 + 2 * k2 + 2 * k3 + k4) / 6
        s += h
    return f


def gamma_signed(x: float) -> float:
    """Gamma function on the real line; negative non-integers use reflection."""
    if x > 0:
        return math.exp(math.lgamma(x))
    if x == int(x):
        raise ValueError(f"Gamma has a pole at {x}")
    return math.pi / (math.sin(math.pi * x) * math.exp(math.lgamma(1.0 - x)))


def beta_integral_check(a: float, b: float) -> tuple[float, float]:
    """Quadrature of ``int_0^inf ((1+x)^-b - 1) x^(a-1) dx`` against ``G(a)G(b-a)/G(b)``."""
    if not (-1.0 < a < 0.0) or not b > 0.0:
        raise ValueError(f"need -1 < a < 0 and b > 0, got a={a}, b={b}")

    def head(x: float) -> float:
        # ((1+x)^-b - 1)/x, smooth on [0, 1]; endpoint power x^a goes in the weight
        if x == 0.0:
            return -b
        return math.expm1(-b * math.log1p(x)) / x

    lo, _ = integrate.quad(head, 0.0, 1.0, weight="alg", wvar=(a, 0.0), epsabs=1e-13, epsrel=QUAD_TOL)
    # x = 1/u on the tail: int_0^1 (u^b (1+u)^-b - 1) u^(-a-1) du
    hi, _ = integrate.quad(
        lambda u: (1.0 + u) ** (-b), 0.0, 1.0, weight="alg", wvar=(b - a - 1.0, 0.0),
        epsabs=1e-13, epsrel=QUAD_TOL,
    )
    lhs = lo + hi + 1.0 / a
    rhs = gamma_signed(a) * math.exp(math.lgamma(b - a) - math.lgamma(b))
    return lhs, rhs


def lh_integrals(s: float, t: float, y: float, m: int, rho: float) -> tuple[float, float]:
    """The two reference integrals over ``u in [s, t]`` with crossing level ``y``."""
    if not s > 0:
        raise ValueError(f"s must be positive, got {s}")
    if t < s:
        raise ValueError(f"need t >= s, got s={s}, t={t}")
    if y < 0:
        raise ValueError(f"y must be nonnegative, got {y}")
    rho = _finite_rho(m, rho, "lh_integrals")
    if y == 0 or s == t:
        return 0.0, 0.0
    const = derive_constants(m, rho)
    r = m + rho

    def pw(u: float) -> float:
        return math.expm1(-r * math.log1p(y / (const.theta * u)))

    h, _ = integrate.quad(lambda u: pw(u) + const.chi * y / u, s, t, epsabs=0.0, epsrel=QUAD_TOL)
    i, _ = integrate.quad(lambda u: -pw(u), s, t, epsabs=0.0, epsrel=QUAD_TOL)
    return h, i


def m1_drift(rho: float) -> float:
    """Growth rate of ``X / log n`` for trees (``m = 1``)."""
    rho = float(rho)
    if not rho > -1:
        raise ValueError(f"rho must exceed -1, got {rho}")
    if math.isinf(rho):
        return 1.0
    return (1.0 + rho) / (2.0 + rho)


def exact_tree_mean(n: int, rho: float) -> float:
    """Exact ``E X`` for ``m = 1``: ``1 + sum_{k=1}^{n-1} P(k is an ancestor of n)``.

    A vertex ``k`` is hit by the descending path with probability
    ``E B_k = (1+rho)/((2+rho)k - 2)`` for ``k >= 2`` and always for ``k = 1``.
    """
    if n < 1:
        raise ValueError("n must be positive")
    if n == 1:
        return 1.0
    rho = _check_rho(1, rho)
    ks = np.arange(2, n, dtype=float)
    return 2.0 + float(np.sum((1.0 + rho) / ((2.0 + rho) * ks - 2.0)))
