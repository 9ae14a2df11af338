"""Dimension functions, approximating functions and the transfer transforms.

A dimension function here is the closed family

    f(r) = coeff * r**power * log(1/r)**log_power,   0 < r <= r_cap,  f(0) = 0,

which keeps monotonicity, limits at zero and series verdicts decidable by
exponent arithmetic.  Approximating functions psi: N -> [0, inf) come in a
few concrete variants (power law, finite table, zero, clamped, transferred).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import TYPE_CHECKING, Callable, Iterable, Mapping, Sequence

import numpy as np
from scipy import integrate

if TYPE_CHECKING:  # pragma: no cover
    from .diophantine import Partition

LOG_CAP = math.exp(-2.0)
# relative tolerance used when deciding that two exponents are equal
EXPONENT_TIE_RTOL = 1e-12


class DomainError(ValueError):
    """Raised when an argument lies outside the domain of an operation."""


def _exponent_cmp(a: float, b: float) -> int:
    """Three-way comparison of exponents with a tiny relative tie band."""
    if math.isclose(a, b, rel_tol=EXPONENT_TIE_RTOL, abs_tol=EXPONENT_TIE_RTOL):
        return 0
    return -1 if a < b else 1


# ---------------------------------------------------------------------------
# dimension functions
# ---------------------------------------------------------------------------


def _default_cap(power: float, log_power: float) -> float:
    if log_power == 0:
        return 1.0
    if log_power > 0 and power > 0:
        # f' >= 0 needs power * log(1/r) >= log_power
        return min(LOG_CAP, math.exp(-log_power / power))
    return LOG_CAP


@dataclass(frozen=True)
class DimensionFunction:
    """f(r) = coeff * r^power * (log 1/r)^log_power on (0, r_cap]."""

    coeff: float = 1.0
    power: float = 1.0
    log_power: float = 0.0
    r_cap: float | None = None

    def __post_init__(self) -> None:
        if not (self.coeff > 0 and math.isfinite(self.coeff)):
            raise DomainError(f"coeff must be positive, got {self.coeff}")
        if not (self.power >= 0 and math.isfinite(self.power)):
            raise DomainError(f"power must be non-negative, got {self.power}")
        if not math.isfinite(self.log_power):
            raise DomainError("log_power must be finite")
        cap = self.r_cap
        if cap is None:
            cap = _default_cap(self.power, self.log_power)
            object.__setattr__(self, "r_cap", float(cap))
        if not cap > 0:
            raise DomainError(f"r_cap must be positive, got {cap}")
        if self.log_power != 0 and cap >= 1:
            raise DomainError("a log-corrected form needs r_cap < 1")

    # -- evaluation -------------------------------------------------------
    def __call__(self, r):
        arr = np.asarray(r, dtype=float)
        if np.any(arr < 0) or np.any(arr > self.r_cap * (1 + 1e-15)):
            raise DomainError(f"radius outside [0, {self.r_cap}]")
        out = np.zeros_like(arr)
        pos = arr > 0
        rp = arr[pos]
        vals = self.coeff * rp ** self.power
        if self.log_power != 0:
            vals = vals * np.log(1.0 / rp) ** self.log_power
        out[pos] = vals
        if out.ndim == 0:
            return float(out)
        return out

    @property
    def log_cap(self) -> float:
        return math.log(1.0 / self.r_cap) if self.r_cap < 1 else 0.0

    def is_nondecreasing(self) -> bool:
        """Exact sign analysis of f' on (0, r_cap]: power*L - log_power >= 0 for L >= log(1/r_cap)."""
        s, a = self.power, self.log_power
        if s > 0:
            return s * self.log_cap >= a
        return a <= 0

    def vanishes_at_zero(self) -> bool:
        return self.power > 0 or self.log_power < 0

    def is_dimension_function(self) -> bool:
        return self.is_nondecreasing() and self.vanishes_at_zero()

    def to_text(self) -> str:
        return f"dimfun c={self.coeff:g} s={self.power:g} a={self.log_power:g}"


def eval_f(f: DimensionFunction, r: float) -> float:
    """Closed-form value f(r); f(0) = 0; domain error outside [0, r_cap]."""
    if r < 0 or r > f.r_cap:
        raise DomainError(f"r = {r} outside [0, {f.r_cap}]")
    return float(f(r))


def power_function(s: float, coeff: float = 1.0) -> DimensionFunction:
    return DimensionFunction(coeff, s, 0.0)


# ---------------------------------------------------------------------------
# transfer pair (f, g = r^{-l} f)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TransferPair:
    f: DimensionFunction
    l: int
    k: int
    m: int
    g: DimensionFunction
    g_valid: bool
    monotone: bool
    monotone_direction: str  # "decreasing", "increasing" or "none"

    @property
    def ratio_limit(self) -> str:
        """Limit of r^{-k} f(r) as r -> 0: 'infinite', 'finite' or 'zero'."""
        c = _exponent_cmp(self.f.power, self.k)
        if c < 0 or (c == 0 and self.f.log_power > 0):
            return "infinite"
        if c == 0 and self.f.log_power == 0:
            return "finite"
        return "zero"

    def g_tilde(self, upsilon):
        """g(upsilon)^{1/m}, the enlarged neighbourhood radius."""
        return np.asarray(self.g(upsilon)) ** (1.0 / self.m)


def derive_g(f: DimensionFunction, l: int, k: int) -> TransferPair:
    """Build the pair (f, g) with g(r) = r^{-l} f(r) and the hypothesis flags."""
    if not (isinstance(l, (int, np.integer)) and isinstance(k, (int, np.integer))):
        raise DomainError("l and k must be integers")
    if l < 0 or k <= 0 or l >= k:
        raise DomainError(f"need 0 <= l < k, got l={l}, k={k}")
    s, a = f.power, f.log_power
    cmp_l = _exponent_cmp(s, l)
    if cmp_l < 0:
        raise DomainError(f"power(f) = {s} < l = {l}: g would not be a dimension function")
    if cmp_l == 0:
        if a < 0:
            raise DomainError("power(f) = l with negative log power: endpoint case rejected")
        raise DomainError("power(f) = l: g = c*(log 1/r)^a does not vanish at 0")
    if _exponent_cmp(s, k) > 0:
        raise DomainError(f"power(f) = {s} > k = {k}: r^-k f(r) monotonicity hypothesis fails")
    g = DimensionFunction(f.coeff, s - l, a, f.r_cap)
    e = s - k
    lc = f.log_cap
    if _exponent_cmp(s, k) == 0:
        direction = "decreasing" if a >= 0 else "increasing"
    elif a >= e * lc:
        direction = "decreasing"
    else:
        direction = "none"
    return TransferPair(f=f, l=int(l), k=int(k), m=int(k - l), g=g,
                        g_valid=g.is_dimension_function(),
                        monotone=direction != "none", monotone_direction=direction)


# ---------------------------------------------------------------------------
# approximating functions psi: N -> [0, inf)
# ---------------------------------------------------------------------------


def _as_q(q) -> np.ndarray:
    arr = np.asarray(q)
    if np.any(arr < 1):
        raise DomainError("approximating functions are defined on positive integers")
    return arr


class ApproxFunction:
    """Base class; subclasses implement ``values`` on integer arrays."""

    def values(self, q: np.ndarray) -> np.ndarray:  # pragma: no cover - abstract
        raise NotImplementedError

    def __call__(self, q):
        arr = _as_q(q)
        out = self.values(np.atleast_1d(arr).astype(np.float64))
        if np.ndim(arr) == 0:
            return float(out[0])
        return out.reshape(np.shape(arr))

    def to_text(self) -> str:  # pragma: no cover - abstract
        raise NotImplementedError


@dataclass(frozen=True)
class PowerLaw(ApproxFunction):
    c: float = 1.0
    tau: float = 1.0

    def __post_init__(self):
        if not (self.c >= 0 and math.isfinite(self.c) and math.isfinite(self.tau)):
            raise DomainError("PowerLaw needs c >= 0 and finite tau")

    def values(self, q):
        return self.c * q ** (-self.tau)

    def to_text(self):
        return f"powerlaw c={self.c:g} tau={self.tau:g}"


@dataclass(frozen=True)
class Zero(ApproxFunction):
    def values(self, q):
        return np.zeros_like(q, dtype=float)

    def to_text(self):
        return "zero"


@dataclass(frozen=True, eq=False)
class Table(ApproxFunction):
    """Finite table of (q, value); every other q maps to ``default``."""

    qs: np.ndarray
    vals: np.ndarray
    default: float = 0.0

    def __post_init__(self):
        qs = np.asarray(self.qs, dtype=np.int64)
        vals = np.asarray(self.vals, dtype=float)
        if qs.shape != vals.shape or qs.ndim != 1:
            raise DomainError("table keys and values must be 1-d of equal length")
        if np.any(qs < 1):
            raise DomainError("table keys must be positive integers")
        if np.any(vals < 0) or self.default < 0:
            raise DomainError("table values must be non-negative")
        order = np.argsort(qs, kind="stable")
        qs, vals = qs[order], vals[order]
        if np.any(np.diff(qs) == 0):
            raise DomainError("duplicate table keys")
        object.__setattr__(self, "qs", qs)
        object.__setattr__(self, "vals", vals)

    @classmethod
    def from_pairs(cls, pairs: Iterable[tuple[int, float]], default: float = 0.0) -> "Table":
        items = list(pairs)
        return cls(np.array([p[0] for p in items], dtype=np.int64),
                   np.array([p[1] for p in items], dtype=float), default)

    @property
    def max_key(self) -> int:
        return int(self.qs[-1]) if self.qs.size else 0

    def values(self, q):
        out = np.full(q.shape, float(self.default))
        if self.qs.size:
            idx = np.searchsorted(self.qs, q)
            idx_c = np.minimum(idx, self.qs.size - 1)
            hit = self.qs[idx_c] == q
            out[hit] = self.vals[idx_c[hit]]
        return out

    def to_text(self):
        body = ",".join(f"{int(a)}:{b:g}" for a, b in zip(self.qs, self.vals))
        return f"table default={self.default:g} values={body}"

    def __eq__(self, other):
        return (isinstance(other, Table) and self.default == other.default
                and np.array_equal(self.qs, other.qs) and np.array_equal(self.vals, other.vals))

    def __hash__(self):
        return hash((self.default, self.qs.tobytes(), self.vals.tobytes()))


@dataclass(frozen=True)
class Clamped(ApproxFunction):
    inner: ApproxFunction
    cap: float = 1.0

    def __post_init__(self):
        if not self.cap >= 0:
            raise DomainError("cap must be non-negative")

    def values(self, q):
        return np.minimum(self.inner.values(q), self.cap)

    def to_text(self):
        return f"clamped cap={self.cap:g} ({self.inner.to_text()})"


@dataclass(frozen=True)
class TransferredApprox(ApproxFunction):
    """Pointwise transfer r -> r * g(min(psi(r), 1)/r)^{1/m}."""

    inner: ApproxFunction
    pair: TransferPair

    def values(self, q):
        return _transfer_values(self.inner.values(q), q, self.pair)

    def to_text(self):
        return f"transferred ({self.inner.to_text()}) via {self.pair.f.to_text()} l={self.pair.l}"


def _transfer_values(psi_vals: np.ndarray, q: np.ndarray, pair: TransferPair) -> np.ndarray:
    # g is extended as a constant beyond its cap (log-corrected forms only)
    arg = np.minimum(np.minimum(psi_vals, 1.0) / q, pair.g.r_cap)
    return q * np.asarray(pair.g(arg), dtype=float) ** (1.0 / pair.m)


def clamp_unit(psi: ApproxFunction) -> ApproxFunction:
    """psi with values clamped to at most 1 (no-op when already bounded)."""
    if isinstance(psi, Zero):
        return psi
    if isinstance(psi, PowerLaw) and psi.c <= 1 and psi.tau >= 0:
        return psi
    return Clamped(psi, 1.0)


# ---------------------------------------------------------------------------
# multi-variable approximating functions Psi(p, q)
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class MultiApproxFunction:
    """Psi(p, q) = base(|q|) unless overridden, and 0 where the mask rejects."""

    base: ApproxFunction
    mask: "Partition | None" = None
    overrides: Mapping[tuple[tuple[int, ...], tuple[int, ...]], float] = field(default_factory=dict)

    def __post_init__(self):
        for key, val in self.overrides.items():
            if val < 0:
                raise DomainError(f"negative override at {key}")

    def __call__(self, p: Sequence[int], q: Sequence[int]) -> float:
        p = tuple(int(v) for v in p)
        q = tuple(int(v) for v in q)
        height = max(abs(v) for v in q) if q else 0
        if height == 0:
            raise DomainError("q must be non-zero")
        if self.mask is not None and not self.mask.accepts(q + p):
            return 0.0
        key = (p, q)
        if key in self.overrides:
            return float(self.overrides[key])
        return float(self.base(height))

    def values(self, P: np.ndarray, Qv: np.ndarray) -> np.ndarray:
        """Vectorised evaluation on row-aligned arrays P (N, m) and Qv (N, n)."""
        P = np.asarray(P, dtype=np.int64).reshape(len(P), -1)
        Qv = np.asarray(Qv, dtype=np.int64).reshape(len(Qv), -1)
        heights = np.abs(Qv).max(axis=1)
        if np.any(heights == 0):
            raise DomainError("q must be non-zero")
        out = self.base(heights)
        out = np.array(out, dtype=float, ndmin=1)
        if self.overrides:
            for i in range(len(P)):
                key = (tuple(int(v) for v in P[i]), tuple(int(v) for v in Qv[i]))
                if key in self.overrides:
                    out[i] = self.overrides[key]
        if self.mask is not None:
            from .diophantine import primitive_mask
            ok = primitive_mask(np.hstack([Qv, P]), self.mask)
            out = np.where(ok, out, 0.0)
        return out

    def max_override_for(self, q: Sequence[int]) -> float:
        q = tuple(int(v) for v in q)
        vals = [v for (pp, qq), v in self.overrides.items() if qq == q]
        return max(vals) if vals else 0.0


# ---------------------------------------------------------------------------
# transforms
# ---------------------------------------------------------------------------


def theta_transform(psi: ApproxFunction, pair: TransferPair) -> ApproxFunction:
    """theta(r) = r * g(psi(r)/r)^{1/m}, with psi clamped to <= 1 first."""
    m = pair.m
    g = pair.g
    if isinstance(psi, Zero) or (isinstance(psi, PowerLaw) and psi.c == 0):
        return Zero()
    if isinstance(psi, PowerLaw) and g.log_power == 0 and psi.c <= 1 and psi.tau >= 0:
        ratio = g.power / m
        # tau' = (tau + 1) * e/m - 1, arranged so that e/m == 1 gives tau exactly
        tau_new = psi.tau * ratio + (ratio - 1.0)
        c_new = g.coeff ** (1.0 / m) * psi.c ** ratio
        return PowerLaw(c_new, tau_new)
    if isinstance(psi, Table) and psi.default == 0:
        new_vals = _transfer_values(psi.vals, psi.qs.astype(float), pair) if psi.qs.size else psi.vals
        return Table(psi.qs.copy(), np.asarray(new_vals, dtype=float), 0.0)
    return TransferredApprox(psi, pair)


def _psi_ratio_vanishes(psi: ApproxFunction) -> bool:
    """Whether psi(q)/q -> 0 is guaranteed for the representable family."""
    if isinstance(psi, PowerLaw):
        return psi.c == 0 or psi.tau > -1
    # bounded values, or values at most q * g(1/q)^{1/m} with g -> 0
    return isinstance(psi, (Zero, Table, Clamped, TransferredApprox))


def big_theta_transform(Psi: MultiApproxFunction, pair: TransferPair) -> MultiApproxFunction:
    """Theta(p, q) = |q| g(Psi(p, q)/|q|)^{1/m}, preserving the mask."""
    if not _psi_ratio_vanishes(Psi.base):
        raise DomainError("sup_p Psi(p,q)/|q| does not tend to 0 (power law with tau <= -1)")
    new_over = {}
    for (p, q), val in Psi.overrides.items():
        h = float(max(abs(v) for v in q))
        new_over[(p, q)] = float(_transfer_values(np.array([val]), np.array([h]), pair)[0])
    return MultiApproxFunction(theta_transform(Psi.base, pair), Psi.mask, new_over)


# ---------------------------------------------------------------------------
# series classification
# ---------------------------------------------------------------------------


class Verdict(str, Enum):
    CONVERGENT = "Convergent"
    DIVERGENT = "Divergent"
    INCONCLUSIVE = "Inconclusive"


@dataclass(frozen=True)
class SeriesVerdict:
    verdict: Verdict
    form: str  # "hausdorff" or "lebesgue"
    term_exponent: float | None = None
    term_log_power: float | None = None
    partial_sum: float | None = None
    partial_terms: int = 0
    tail_bound: float | None = None
    note: str = ""

    def __str__(self) -> str:
        return self.verdict.value


def _series_terms(psi: ApproxFunction, n: int, m: int, pair: TransferPair | None) -> Callable[[np.ndarray], np.ndarray]:
    if pair is None:
        def lebesgue(q):
            return q ** (n - 1) * psi.values(q) ** m
        return lebesgue

    def hausdorff(q):
        arg = np.minimum(np.minimum(psi.values(q), 1.0) / q, pair.g.r_cap)
        return q ** (n + m - 1) * np.asarray(pair.g(arg), dtype=float)
    return hausdorff


def _partial_sum(term: Callable[[np.ndarray], np.ndarray], N: int, start: int = 1, chunk: int = 1 << 20) -> float:
    total = 0.0
    q0 = start
    while q0 <= N:
        q1 = min(N, q0 + chunk - 1)
        total += math.fsum(term(np.arange(q0, q1 + 1, dtype=np.float64)))
        q0 = q1 + 1
    return total


def _bertrand(alpha: float, log_power: float) -> Verdict:
    c = _exponent_cmp(alpha, -1.0)
    if c < 0:
        return Verdict.CONVERGENT
    if c > 0:
        return Verdict.DIVERGENT
    return Verdict.CONVERGENT if log_power < -1 else Verdict.DIVERGENT


def _powerlaw_exponents(c: float, tau: float, n: int, m: int, pair: TransferPair | None) -> tuple[float, float]:
    if pair is None:
        return n - 1 - m * tau, 0.0
    tau_eff = max(tau, 0.0)
    return n + m - 1 - (tau_eff + 1.0) * pair.g.power, pair.g.log_power


def _tail_integral(term, N: int, alpha: float, log_power: float) -> float:
    """Integral-test tail estimate term(N) + int_N^inf term for a term ~ q^alpha (log q)^b.

    The integral is taken numerically up to q = 1e30 and the remainder is
    closed off with the asymptotic form of the term.
    """
    x_max = max(1e30, 10.0 * N)
    u_max = math.log(x_max / N)

    def h(u):  # substitute x = N * e^u
        x = N * math.exp(u)
        return float(term(np.array([x]))[0]) * x

    val, _ = integrate.quad(h, 0.0, u_max, limit=200)
    edge = h(u_max)
    if _exponent_cmp(alpha, -1.0) < 0:
        rest = edge / (-(alpha + 1.0))
    else:
        rest = edge * math.log(x_max) / (-(log_power + 1.0))
    return float(term(np.array([float(N)]))[0]) + val + rest


def classify_series(psi: ApproxFunction, n: int, m: int, pair: TransferPair | None = None,
                    evidence_terms: int = 10_000) -> SeriesVerdict:
    """Decide convergence of sum q^{n+m-1} g(psi(q)/q) (or sum q^{n-1} psi(q)^m without a pair)."""
    if n < 1 or m < 1:
        raise DomainError("n and m must be positive")
    if pair is not None and (pair.m != m or pair.k != n * m):
        raise DomainError(f"pair (k={pair.k}, m={pair.m}) does not match n={n}, m={m}")
    form = "lebesgue" if pair is None else "hausdorff"
    if isinstance(psi, Zero) or (isinstance(psi, PowerLaw) and psi.c == 0):
        return SeriesVerdict(Verdict.CONVERGENT, form, partial_sum=0.0, tail_bound=0.0, note="all terms vanish")
    term = _series_terms(psi, n, m, pair)

    if isinstance(psi, PowerLaw):
        alpha, lp = _powerlaw_exponents(psi.c, psi.tau, n, m, pair)
        verdict = _bertrand(alpha, lp)
        N = evidence_terms
        ps = _partial_sum(term, N)
        tail = _tail_integral(term, N, alpha, lp) if verdict is Verdict.CONVERGENT else math.inf
        return SeriesVerdict(verdict, form, alpha, lp, ps, N, tail,
                             note="term ~ q^alpha (log q)^b; p-series/Bertrand comparison")

    tail_law, head_end = _eventual_power_law(psi)
    if tail_law is not None:
        ps = _partial_sum(term, head_end) if head_end > 0 else 0.0
        if isinstance(tail_law, Zero):
            return SeriesVerdict(Verdict.CONVERGENT, form, None, None, ps, head_end, 0.0,
                                 note="finitely many non-zero terms")
        alpha, lp = _powerlaw_exponents(tail_law.c, tail_law.tau, n, m, pair)
        verdict = _bertrand(alpha, lp)
        tail_term = _series_terms(tail_law, n, m, pair)
        tail = _tail_integral(tail_term, head_end + 1, alpha, lp) if verdict is Verdict.CONVERGENT else math.inf
        return SeriesVerdict(verdict, form, alpha, lp, ps, head_end, tail,
                             note="explicit head plus power-law tail")
    N = evidence_terms
    ps = _partial_sum(term, N)
    return SeriesVerdict(Verdict.INCONCLUSIVE, form, None, None, ps, N, None,
                         note="no eventual power-law domination could be certified")


def _eventual_power_law(psi: ApproxFunction) -> tuple[ApproxFunction | None, int]:
    """Return (law, q0) with psi(q) == law(q) for all q > q0, when certifiable."""
    if isinstance(psi, Zero):
        return Zero(), 0
    if isinstance(psi, PowerLaw):
        return psi, 0
    if isinstance(psi, Table):
        law = Zero() if psi.default == 0 else PowerLaw(psi.default, 0.0)
        return law, psi.max_key
    if isinstance(psi, Clamped):
        inner, q0 = _eventual_power_law(psi.inner)
        if inner is None:
            return None, 0
        if isinstance(inner, Zero) or psi.cap == 0:
            return (Zero(), q0) if psi.cap > 0 else (Zero(), 0)
        assert isinstance(inner, PowerLaw)
        if inner.c == 0:
            return Zero(), q0
        if inner.tau > 0:
            # inner < cap once c q^-tau < cap
            cross = (inner.c / psi.cap) ** (1.0 / inner.tau)
            return inner, max(q0, int(math.ceil(cross)))
        if inner.tau == 0:
            return PowerLaw(min(inner.c, psi.cap), 0.0), q0
        cross = (psi.cap / inner.c) ** (1.0 / -inner.tau)
        return PowerLaw(psi.cap, 0.0), max(q0, int(math.ceil(cross)))
    return None, 0


# ---------------------------------------------------------------------------
# comparison of dimension functions
# ---------------------------------------------------------------------------


class Comparison(str, Enum):
    F_DOMINATES_TO_ZERO = "f_dominates_to_zero"  # f/g2 -> 0
    G2_DOMINATES_TO_ZERO = "g2_dominates_to_zero"  # g2/f -> 0
    COMPARABLE = "comparable"


def check_dimfun_comparison(f: DimensionFunction, g2: DimensionFunction) -> Comparison:
    """Limit of f(r)/g2(r) as r -> 0, decided on exponents."""
    c = _exponent_cmp(f.power, g2.power)
    if c == 0:
        # same power: the ratio behaves like (log 1/r)^(a_f - a_g2)
        c = -_exponent_cmp(f.log_power, g2.log_power)
    if c > 0:
        return Comparison.F_DOMINATES_TO_ZERO
    if c < 0:
        return Comparison.G2_DOMINATES_TO_ZERO
    return Comparison.COMPARABLE
