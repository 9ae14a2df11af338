"""Integer pairs (p, q), primitivity filters, approximation witnesses and the scene bound M."""
from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from functools import reduce
from typing import Iterator, Sequence

import numpy as np

from .dimfun import (ApproxFunction, DomainError, MultiApproxFunction, PowerLaw, Table,
                     TransferPair, Zero, _eventual_power_law)


# ---------------------------------------------------------------------------
# partitions and primitivity
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Partition:
    """Disjoint blocks of 1-based indices into v = (q_1..q_n, p_1..p_m)."""

    d: int
    blocks: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        blocks = tuple(tuple(sorted(int(i) for i in b)) for b in self.blocks)
        seen: set[int] = set()
        for b in blocks:
            if len(b) < 2:
                raise DomainError(f"block {b} has fewer than two indices")
            for i in b:
                if not 1 <= i <= self.d:
                    raise DomainError(f"index {i} outside 1..{self.d}")
                if i in seen:
                    raise DomainError(f"index {i} appears in two blocks")
                seen.add(i)
        object.__setattr__(self, "blocks", blocks)

    @classmethod
    def whole(cls, d: int) -> "Partition":
        return cls(d, (tuple(range(1, d + 1)),))

    def suits_linear_forms(self, m: int) -> bool:
        """Every block has at least m + 1 elements."""
        return all(len(b) >= m + 1 for b in self.blocks)

    def accepts(self, v: Sequence[int]) -> bool:
        return is_primitive(v, self)

    def to_text(self) -> str:
        return ";".join(",".join(str(i) for i in b) for b in self.blocks)


def is_primitive(v: Sequence[int], pi: Partition) -> bool:
    """True iff the gcd of |v_i| over every block equals 1 (an all-zero block fails)."""
    if len(v) != pi.d:
        raise DomainError(f"vector length {len(v)} does not match partition size {pi.d}")
    for b in pi.blocks:
        if reduce(math.gcd, (abs(int(v[i - 1])) for i in b), 0) != 1:
            return False
    return True


def primitive_mask(V: np.ndarray, pi: Partition) -> np.ndarray:
    """Row-wise is_primitive for an integer array of shape (N, d)."""
    V = np.asarray(V, dtype=np.int64)
    if V.ndim != 2 or V.shape[1] != pi.d:
        raise DomainError(f"expected shape (N, {pi.d}), got {V.shape}")
    ok = np.ones(V.shape[0], dtype=bool)
    for b in pi.blocks:
        g = np.gcd.reduce(np.abs(V[:, [i - 1 for i in b]]), axis=1)
        ok &= g == 1
    return ok


# ---------------------------------------------------------------------------
# scene configuration
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class SceneConfig:
    n: int
    m: int
    psi: ApproxFunction | MultiApproxFunction
    y: np.ndarray | None = None
    Phi: np.ndarray | None = None
    partition: Partition | None = None
    norm: str = "column"

    def __post_init__(self):
        if self.n < 1 or self.m < 1:
            raise DomainError("n and m must be positive")
        y = np.zeros(self.m) if self.y is None else np.asarray(self.y, dtype=float).reshape(-1)
        Phi = np.eye(self.m) if self.Phi is None else np.asarray(self.Phi, dtype=float).reshape(self.m, self.m)
        if y.shape != (self.m,):
            raise DomainError(f"y must have {self.m} entries")
        if np.any(y < 0) or np.any(y > 1) or np.any(Phi < 0) or np.any(Phi > 1):
            raise DomainError("y and Phi entries must lie in [0, 1]")
        if not np.any(Phi):
            warnings.warn("Phi = 0: only meaningful for convergence-mode experiments", stacklevel=2)
        if self.partition is not None and self.partition.d != self.n + self.m:
            raise DomainError("partition size must equal n + m")
        if self.norm not in ("column", "euclidean"):
            raise DomainError("norm must be 'column' or 'euclidean'")
        y.setflags(write=False)
        Phi.setflags(write=False)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "Phi", Phi)

    @property
    def k(self) -> int:
        return self.n * self.m

    @property
    def homogeneous(self) -> bool:
        return not np.any(self.y)

    @property
    def phi_is_identity(self) -> bool:
        return bool(np.array_equal(self.Phi, np.eye(self.m)))

    def psi_values(self, P: np.ndarray, Qv: np.ndarray) -> np.ndarray:
        """Approximation radius for row-aligned arrays P (N, m) and Qv (N, n)."""
        if isinstance(self.psi, MultiApproxFunction):
            return self.psi.values(P, Qv)
        vals = self.psi(np.abs(Qv).max(axis=1))
        vals = np.array(vals, dtype=float, ndmin=1)
        if self.partition is not None:
            vals = np.where(primitive_mask(np.hstack([Qv, P]), self.partition), vals, 0.0)
        return vals

    def height_bound(self, h: np.ndarray) -> np.ndarray:
        """An upper bound of the approximation radius over all p at each height h."""
        if isinstance(self.psi, MultiApproxFunction):
            base = np.array(self.psi.base(h), dtype=float, ndmin=1)
            if self.psi.overrides:
                extra = max(self.psi.overrides.values())
                base = np.maximum(base, extra)
            return base
        return np.array(self.psi(h), dtype=float, ndmin=1)


# ---------------------------------------------------------------------------
# the constant M
# ---------------------------------------------------------------------------


def _g_root(pair: TransferPair, arg: np.ndarray) -> np.ndarray:
    arg = np.minimum(arg, pair.g.r_cap)
    return np.asarray(pair.g(arg), dtype=float) ** (1.0 / pair.m)


def compute_M(psi: ApproxFunction | MultiApproxFunction, pair: TransferPair, n: int,
              scan: int = 4096) -> float:
    """max{2n, sup_r (2/sqrt n) g(psi(r)/r)^{1/m}} (or the 3n, 3/sqrt n variant for Psi(p, q)).

    psi is clamped to at most 1.  Power laws are handled in closed form (the
    supremum sits at r = 1); other functions are scanned up to a height after
    which the monotone bound g(1/r) can no longer beat the running maximum.
    """
    multi = isinstance(psi, MultiApproxFunction)
    lead, factor = (3.0 * n, 3.0) if multi else (2.0 * n, 2.0)
    base = psi.base if multi else psi
    const = factor / math.sqrt(n)
    if isinstance(base, Zero) and not (multi and psi.overrides):
        return lead
    if (not multi or not psi.overrides) and isinstance(base, PowerLaw) and base.tau >= -1:
        # psi(r)/r = c r^{-(tau+1)} is non-increasing, so r = 1 attains the supremum
        top = float(_g_root(pair, np.array([min(base.c, 1.0)]))[0])
        return max(lead, const * top)

    extra = max(psi.overrides.values()) if multi and psi.overrides else 0.0
    law, q0 = _eventual_power_law(base)
    # with an eventual law whose psi(r)/r is non-increasing, the scan can stop after q0
    settled = law is not None and (isinstance(law, Zero) or law.tau >= -1 or law.c == 0)
    r_end = max(scan, q0 + 1) if settled else scan
    r = np.arange(1, r_end + 1, dtype=float)
    vals = np.maximum(np.asarray(base(r.astype(np.int64)), dtype=float), extra)
    if not np.all(np.isfinite(vals)):
        raise DomainError("approximating function is not finite on the scan range")
    best = float(np.max(const * _g_root(pair, np.minimum(vals, 1.0) / r)))
    if not settled:
        # beyond r_end every term is at most const * g(1/r_end)^{1/m}
        tail = const * float(_g_root(pair, np.array([1.0 / r_end]))[0])
        if tail > best:
            raise DomainError("supremum in the definition of M could not be bounded")
    return max(lead, best)


# ---------------------------------------------------------------------------
# enumeration of pairs
# ---------------------------------------------------------------------------


def _shell(n: int, h: int) -> np.ndarray:
    """All q in Z^n with sup norm exactly h, in lexicographic order."""
    axis = np.arange(-h, h + 1, dtype=np.int64)
    grid = np.stack(np.meshgrid(*([axis] * n), indexing="ij"), axis=-1).reshape(-1, n)
    return grid[np.abs(grid).max(axis=1) == h]


def _p_box(cfg: SceneConfig, h: int, M: float) -> np.ndarray:
    """Integer candidates p (lexicographic) containing every p with |p Phi| <= M h."""
    m = cfg.m
    bound = M * h
    try:
        inv = np.linalg.inv(cfg.Phi)
        # p = v Phi^{-1} with |v| <= M h
        half = bound * np.abs(inv).sum(axis=0)
    except np.linalg.LinAlgError:
        # singular Phi: the set is unbounded, fall back to |p| <= M h
        half = np.full(m, bound)
    lims = np.floor(half + 1e-9).astype(np.int64)
    axes = [np.arange(-L, L + 1, dtype=np.int64) for L in lims]
    return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, m)


def _shell_pairs(cfg: SceneConfig, h: int, M: float) -> tuple[np.ndarray, np.ndarray]:
    qs = _shell(cfg.n, h)
    ps = _p_box(cfg, h, M)
    ok_p = np.abs(ps.astype(float) @ cfg.Phi).max(axis=1, initial=0.0) <= M * h + 1e-9
    ps = ps[ok_p]
    Qv = np.repeat(qs, len(ps), axis=0)
    P = np.tile(ps, (len(qs), 1))
    if cfg.partition is not None and len(P):
        keep = primitive_mask(np.hstack([Qv, P]), cfg.partition)
        P, Qv = P[keep], Qv[keep]
    return P, Qv


def enumerate_pairs_array(cfg: SceneConfig, Q: int, M: float) -> tuple[np.ndarray, np.ndarray]:
    """All admissible (p, q) with 1 <= |q| <= Q as arrays (P, Qv), ordered by |q| then (q, p)."""
    if Q < 1:
        raise DomainError("Q must be at least 1")
    Ps, Qs = [], []
    for h in range(1, Q + 1):
        P, Qv = _shell_pairs(cfg, h, M)
        Ps.append(P)
        Qs.append(Qv)
    return np.vstack(Ps), np.vstack(Qs)


def enumerate_pairs(cfg: SceneConfig, Q: int, M: float) -> Iterator[tuple[tuple[int, ...], tuple[int, ...]]]:
    """Stream of (p, q) with 1 <= |q| <= Q and |p Phi| <= M|q|, partition-filtered."""
    if Q < 1:
        raise DomainError("Q must be at least 1")
    for h in range(1, Q + 1):
        P, Qv = _shell_pairs(cfg, h, M)
        for p, q in zip(P.tolist(), Qv.tolist()):
            yield tuple(p), tuple(q)


# ---------------------------------------------------------------------------
# witnesses
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Witness:
    p: tuple[int, ...]
    q: tuple[int, ...]
    error: float

    @property
    def height(self) -> int:
        return max(abs(v) for v in self.q)


def all_nonzero_q(n: int, Q: int) -> np.ndarray:
    """Every q with 1 <= |q| <= Q, ordered by height then lexicographically."""
    return np.vstack([_shell(n, h) for h in range(1, Q + 1)])


def approx_witnesses(x, cfg: SceneConfig, Q: int, singular_bound: float | None = None) -> list[Witness]:
    """All (p, q) with |q| <= Q and |q x + p Phi - y|_sup < Psi(p, q), with the achieved error.

    For invertible Phi the condition confines p Phi to a box of half-width psi
    around y - q x, so only the integer points of the preimage box are tested.
    A singular Phi falls back to scanning |p| <= singular_bound * |q|
    (default n + 2, enough for |q x - y| <= n|q| + 1 with x in the unit cube).
    """
    n, m = cfg.n, cfg.m
    X = np.asarray(x, dtype=float).reshape(n, m)
    if Q < 1:
        raise DomainError("Q must be at least 1")
    if isinstance(cfg.psi, Zero):
        return []
    qs = all_nonzero_q(n, Q)
    heights = np.abs(qs).max(axis=1)
    bound = cfg.height_bound(heights)
    live = bound > 0
    qs, heights, bound = qs[live], heights[live], bound[live]
    if not len(qs):
        return []
    target = cfg.y[None, :] - qs.astype(float) @ X  # want p Phi close to this
    Phi = cfg.Phi
    out_P, out_Q = [], []
    try:
        inv = np.linalg.inv(Phi)
        centre = target @ inv
        half = bound[:, None] * np.abs(inv).sum(axis=0)[None, :]
        lo = np.ceil(centre - half - 1e-9).astype(np.int64)
        hi = np.floor(centre + half + 1e-9).astype(np.int64)
        width = hi - lo + 1
        width = np.maximum(width, 0)
        total = np.prod(width, axis=1)
        for i in np.nonzero(total)[0]:
            axes = [np.arange(lo[i, c], hi[i, c] + 1) for c in range(m)]
            ps = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, m)
            out_P.append(ps)
            out_Q.append(np.repeat(qs[i][None, :], len(ps), axis=0))
    except np.linalg.LinAlgError:
        cap = float(n + 2) if singular_bound is None else float(singular_bound)
        for i in range(len(qs)):
            L = int(math.floor(cap * heights[i]))
            axis = np.arange(-L, L + 1)
            ps = np.stack(np.meshgrid(*([axis] * m), indexing="ij"), axis=-1).reshape(-1, m)
            out_P.append(ps)
            out_Q.append(np.repeat(qs[i][None, :], len(ps), axis=0))
    if not out_P:
        return []
    P = np.vstack(out_P).astype(np.int64)
    Qv = np.vstack(out_Q).astype(np.int64)
    err = np.abs(Qv.astype(float) @ X + P.astype(float) @ Phi - cfg.y[None, :]).max(axis=1)
    rad = cfg.psi_values(P, Qv)
    hit = err < rad
    res = [Witness(tuple(p), tuple(q), float(e)) for p, q, e in
           zip(P[hit].tolist(), Qv[hit].tolist(), err[hit].tolist())]
    return res


def witness_heights(ws: Sequence[Witness]) -> dict[int, int]:
    """Number of witnesses per |q| shell."""
    counts: dict[int, int] = {}
    for w in ws:
        counts[w.height] = counts.get(w.height, 0) + 1
    return dict(sorted(counts.items()))


def write_witnesses_csv(path, ws: Sequence[Witness], n: int, m: int, header_comment: str | None = None) -> None:
    with open(path, "w", newline="") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"q{i + 1}" for i in range(n)] + [f"p{j + 1}" for j in range(m)] + ["error"])
        for wt in ws:
            w.writerow(list(wt.q) + list(wt.p) + [repr(wt.error)])
