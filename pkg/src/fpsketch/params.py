"""Derived constants of the GHSS estimator.

Two constructors share one :class:`ParamSet`:

* :func:`derive_paper_params` evaluates the published formulas verbatim.
  The resulting structures are astronomically large (``k = 1000 log n``),
  so these are checked symbolically and never allocated.
* :func:`derive_scaled_params` keeps every structural relation (``s = 8k``,
  ``r = 16k``, geometric level widths in ``alpha``, ``epsbar = sqrt(B/C)``)
  and only shrinks the magnitudes so a sketch fits on a desk.

Logarithms are base 2. Ceilings are applied at the last step of each
formula; ``B`` is an integer, ``C`` is kept real so that ``B / C`` is exact.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

NU = 0.01
# C_l = LEVEL_FACTOR * alpha**l * C
LEVEL_FACTOR = 4


@dataclass(frozen=True)
class ParamSet:
    n: int
    p: float
    epsilon: float
    nu: float
    alpha: float
    L: int
    B: int
    C: float
    B_l: tuple[float, ...]
    C_l: tuple[int, ...]
    C_L_star: int
    d: int
    k: int
    s: int
    r: int
    t: int
    s_tables: int
    epsbar: float
    bucket_factor: int = 16
    hh_hash_degree: int = 2
    hh_sign_degree: int = 2
    est_sign_degree: int = 4
    f2_tau: float = 0.1
    f2_failure: float = 0.25
    scaled: bool = False
    L_unclamped: int = 0
    rounding: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.s != 8 * self.k or self.r != 16 * self.k:
            raise ValueError("structure requires s == 8k and r == 16k")
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")
        if self.L < 1 or len(self.C_l) != self.L:
            raise ValueError("need one width per level 0..L-1")
        if min(self.C_l) < 2 or self.C_L_star < 2:
            raise ValueError("every level width must be at least 2")
        if self.s_tables < self.s:
            raise ValueError("s_tables must be at least s so EST rows can feed the estimator")

    def level_width(self, level: int) -> int:
        """Bucket count of the CountSketch tables at ``level`` (``L`` included)."""
        if level == self.L:
            return self.C_L_star
        return self.bucket_factor * self.C_l[level]

    def to_dict(self) -> dict:
        out = asdict(self)
        out["B_l"] = list(self.B_l)
        out["C_l"] = list(self.C_l)
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, data: dict) -> ParamSet:
        data = dict(data)
        data["B_l"] = tuple(data["B_l"])
        data["C_l"] = tuple(data["C_l"])
        return cls(**data)


def _check_domain(n: int, p: float, epsilon: float) -> None:
    if n < 2:
        raise ValueError(f"universe size must be at least 2, got {n}")
    if not p > 2:
        raise ValueError(f"moment order must exceed 2, got {p}")
    if not 0 < epsilon <= 1:
        raise ValueError(f"epsilon must lie in (0, 1], got {epsilon}")


def reduction_factor(p: float, nu: float = NU) -> float:
    return 1.0 - (1.0 - 2.0 / p) * nu


def basic_space(n: int, p: float, epsilon: float, alpha: float, constant: float) -> float:
    """Real-valued ``B`` before its ceiling; ``constant`` is 425 in the published table."""
    log_n = math.log2(n)
    denom = min(epsilon ** (4.0 / p - 2.0), log_n)
    return constant * (2 * alpha) ** (p / 2) * n ** (1 - 2.0 / p) * epsilon**-2 / denom


def number_of_levels(n: int, C: float, alpha: float) -> int:
    return math.ceil(math.log(n / C) / math.log(2 * alpha))


def _assemble(
    n, p, epsilon, *, nu, b_constant, c_ratio, k, d, t, s_tables, bucket_factor, last_factor, f2_tau, f2_failure, scaled
) -> ParamSet:
    alpha = reduction_factor(p, nu)
    B_real = basic_space(n, p, epsilon, alpha, b_constant)
    B = math.ceil(B_real)
    C = c_ratio * B
    L_raw = number_of_levels(n, C, alpha)
    L = max(1, L_raw)
    B_l = tuple(LEVEL_FACTOR * alpha**l * B for l in range(L))
    C_l = tuple(math.ceil(LEVEL_FACTOR * alpha**l * C) for l in range(L))
    C_L_star = math.ceil(last_factor * LEVEL_FACTOR * alpha**L * C)
    s = 8 * k
    rounding = {
        "B": "ceil(B_real)",
        "B_real": B_real,
        "C": "c_ratio * B (real)",
        "C_l": "ceil(4 * alpha**l * C)",
        "C_L_star": f"ceil({last_factor} * 4 * alpha**L * C)",
        "L": "max(1, ceil(log_{2 alpha}(n / C)))",
    }
    return ParamSet(
        n=n,
        p=float(p),
        epsilon=float(epsilon),
        nu=nu,
        alpha=alpha,
        L=L,
        B=B,
        C=C,
        B_l=B_l,
        C_l=C_l,
        C_L_star=C_L_star,
        d=d,
        k=k,
        s=s,
        r=16 * k,
        t=t,
        s_tables=s if s_tables is None else s_tables,
        epsbar=math.sqrt(B / C),
        bucket_factor=bucket_factor,
        f2_tau=f2_tau,
        f2_failure=f2_failure,
        scaled=scaled,
        L_unclamped=L_raw,
        rounding=rounding,
    )


def derive_paper_params(n: int, p: float, epsilon: float) -> ParamSet:
    """Evaluate the published parameter table for ``(n, p, epsilon)``."""
    _check_domain(n, p, epsilon)
    log_n = math.ceil(math.log2(n))
    return _assemble(
        n,
        p,
        epsilon,
        nu=NU,
        b_constant=425.0,
        c_ratio=(27.0 * p) ** 2,
        k=1000 * log_n,
        d=50 * log_n,
        t=11,
        s_tables=None,
        bucket_factor=16,
        last_factor=16,
        f2_tau=0.001 / (8 * p),
        f2_failure=float(n) ** -25,
        scaled=False,
    )


@dataclass(frozen=True)
class ScaledKnobs:
    """Replacement multipliers for the desk-scale parameter set.

    ``b_constant`` stands in for 425 and ``c_ratio`` for ``(27p)**2``;
    ``bucket_factor`` and ``last_factor`` replace the two factors of 16 in
    the per-level and last-level table widths.
    """

    k: int = 32
    d: int = 8
    t: int = 6
    b_constant: float = 1.0
    c_ratio: float = 6.0
    bucket_factor: int = 1
    last_factor: float = 1.0
    s_tables: int | None = None
    nu: float = NU
    f2_tau: float = 0.1
    f2_failure: float = 0.25


def derive_scaled_params(n: int, p: float, epsilon: float, overrides: ScaledKnobs | dict | None = None) -> ParamSet:
    """Desk-scale parameters with the same structure as the published table."""
    _check_domain(n, p, epsilon)
    if overrides is None:
        knobs = ScaledKnobs()
    elif isinstance(overrides, dict):
        knobs = ScaledKnobs(**overrides)
    else:
        knobs = overrides
    if knobs.k < p + 2:
        raise ValueError(f"Taylor degree k={knobs.k} must be at least p + 2 = {p + 2}")
    if knobs.d < 2 or knobs.t < 2:
        raise ValueError("hash independence degrees must be at least 2")
    if knobs.b_constant <= 0 or knobs.c_ratio <= 1:
        raise ValueError("b_constant must be positive and c_ratio must exceed 1")
    if knobs.bucket_factor < 1 or knobs.last_factor <= 0:
        raise ValueError("width factors must be positive")
    if not 0 < knobs.f2_tau < 1 or not 0 < knobs.f2_failure < 1:
        raise ValueError("F2 accuracy and failure probability must lie in (0, 1)")
    if not 0 < knobs.nu < 1:
        raise ValueError("nu must lie in (0, 1)")
    return _assemble(
        n,
        p,
        epsilon,
        nu=knobs.nu,
        b_constant=knobs.b_constant,
        c_ratio=knobs.c_ratio,
        k=knobs.k,
        d=knobs.d,
        t=knobs.t,
        s_tables=knobs.s_tables,
        bucket_factor=knobs.bucket_factor,
        last_factor=knobs.last_factor,
        f2_tau=knobs.f2_tau,
        f2_failure=knobs.f2_failure,
        scaled=True,
    )
