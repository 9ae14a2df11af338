"""Cantor-set construction behind the mass transference principle for planes.

The engine builds nested levels of balls inside a starting ball B0.  Every
level is made of local sub-levels, each a union of packings C(A; j) of small
balls centred on a plane R_j inside larger balls A drawn from a covering
collection K_{G,B}.  Every structural property is checked as it is built and
a failure raises ConstructionError naming the property.

Measures: H^k is Lebesgue measure, V^k(B) = r(B)^k and V^f(B) = f(r(B)).
Balls and distances are Euclidean.
"""
from __future__ import annotations

import hashlib
import json
import math
import warnings
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterable, Sequence

import numpy as np
from scipy import integrate
from scipy.spatial import cKDTree

from .dimfun import DimensionFunction, DomainError, TransferPair, derive_g, eval_f
from .geometry import (AffinePlane, Ball, ResonantPlane, ball_volume, five_r_cover_indices,
                       separated_pack_centers, unit_ball_volume)

TREE_FORMAT = "mtplinear-cantor-tree"
TREE_VERSION = 1


class ConstructionError(RuntimeError):
    """A construction step failed; ``prop`` names the violated property or gate."""

    def __init__(self, prop: str, message: str, value: float | None = None):
        super().__init__(f"[{prop}] {message}")
        self.prop = prop
        self.value = value


@dataclass(frozen=True)
class Check:
    prop: str
    passed: bool
    detail: str = ""
    value: float | None = None


def _require(checks: list[Check] | None, prop: str, ok: bool, detail: str, value: float | None = None) -> None:
    if checks is not None:
        checks.append(Check(prop, bool(ok), detail, value))
    if not ok:
        raise ConstructionError(prop, detail, value)


# ---------------------------------------------------------------------------
# scenes: ordered planes R_j with radii Upsilon_j
# ---------------------------------------------------------------------------


class MtpScene:
    """Ordered planes R_j (common dimension l in R^k) with Upsilon_j -> 0."""

    k: int
    l: int
    omega: Ball

    @property
    def m(self) -> int:
        return self.k - self.l

    @property
    def size(self) -> int:  # pragma: no cover - abstract
        raise NotImplementedError

    def upsilon(self, j) -> np.ndarray:  # pragma: no cover - abstract
        raise NotImplementedError

    def plane(self, j: int) -> AffinePlane:  # pragma: no cover - abstract
        raise NotImplementedError

    def envelope_from(self, start: int) -> tuple[np.ndarray, np.ndarray]:
        """Candidate cut indices G >= start with sup_{j >= G} Upsilon_j (non-increasing)."""
        raise NotImplementedError  # pragma: no cover

    def planes_meeting(self, ball: Ball, j_lo: int, j_hi: int) -> np.ndarray:
        """Indices j in [j_lo, j_hi) whose plane meets the closed ball."""
        raise NotImplementedError  # pragma: no cover

    def blocks_from(self, start: int) -> Iterable[tuple[int, int]]:
        """Consecutive index ranges [a, b) covering [start, size), for incremental scans."""
        step = 256
        a = start
        while a < self.size:
            b = min(self.size, a + step)
            yield a, b
            a = b
            step *= 2


class ExplicitScene(MtpScene):
    def __init__(self, planes: Sequence[AffinePlane], upsilons: Sequence[float], omega: Ball,
                 l: int | None = None):
        if len(planes) != len(upsilons):
            raise DomainError("one Upsilon per plane is required")
        ls = {p.l for p in planes} if planes else {l}
        ks = {p.k for p in planes} if planes else {omega.k}
        if len(ls) != 1 or len(ks) != 1 or None in ls:
            raise DomainError("all planes must share the ambient and plane dimension")
        self.k = ks.pop()
        self.l = ls.pop()
        if self.k != omega.k:
            raise DomainError("ambient ball dimension does not match the planes")
        self.omega = omega
        self._planes = list(planes)
        ups = np.asarray(upsilons, dtype=float).reshape(-1)
        if np.any(ups <= 0):
            raise DomainError("Upsilon values must be positive")
        self._ups = ups
        self._env = np.maximum.accumulate(ups[::-1])[::-1]
        m = self.k - self.l
        self._base = np.array([p.base_point for p in planes]).reshape(-1, self.k)
        self._normal = np.array([p.normal_basis for p in planes]).reshape(-1, self.k, m)

    @property
    def size(self) -> int:
        return len(self._planes)

    def upsilon(self, j):
        return self._ups[j]

    def plane(self, j: int) -> AffinePlane:
        return self._planes[int(j)]

    def envelope_from(self, start):
        idx = np.arange(start, self.size)
        return idx, self._env[start:]

    def planes_meeting(self, ball, j_lo, j_hi):
        j_hi = min(j_hi, self.size)
        if j_lo >= j_hi:
            return np.zeros(0, dtype=np.int64)
        d = ball.center[None, :] - self._base[j_lo:j_hi]
        dist = np.linalg.norm(np.einsum("jk,jkm->jm", d, self._normal[j_lo:j_hi]), axis=1)
        return np.nonzero(dist <= ball.radius)[0] + j_lo


class DyadicScene(MtpScene):
    """Tiered dyadic planes in the unit cube.

    Tier t >= 1 holds 2^(t-1) planes {x_1 = (2i+1)/2^t}, i = 0..2^(t-1)-1
    (points when k = 1), each with Upsilon = upsilon_base^-t.  Index
    j = 2^(t-1) - 1 + i, so radii are non-increasing in j.
    """

    def __init__(self, k: int, upsilon_base: float = 4.0, t_max: int = 48):
        if k < 1:
            raise DomainError("k must be positive")
        if upsilon_base <= 1:
            raise DomainError("upsilon_base must exceed 1")
        if not 1 <= t_max <= 52:
            raise DomainError("t_max must lie in 1..52 for exact dyadic coordinates")
        self.k = int(k)
        self.l = self.k - 1
        self.base = float(upsilon_base)
        self.t_max = int(t_max)
        self.omega = Ball(np.full(self.k, 0.5), math.sqrt(self.k) / 2.0)

    @property
    def size(self) -> int:
        return (1 << self.t_max) - 1

    def tier(self, j) -> np.ndarray:
        j = np.asarray(j, dtype=np.int64)
        return np.floor(np.log2(j + 1)).astype(np.int64) + 1

    def upsilon(self, j):
        return self.base ** (-self.tier(j).astype(float))

    def offset(self, j) -> np.ndarray:
        j = np.asarray(j, dtype=np.int64)
        t = self.tier(j)
        i = j - ((np.int64(1) << (t - 1)) - 1)
        return (2 * i + 1) / np.exp2(t.astype(float))

    def plane(self, j: int) -> AffinePlane:
        a = float(self.offset(j))
        rows = np.zeros((1, self.k))
        rows[0, 0] = 1.0
        return AffinePlane(rows, [a])

    def envelope_from(self, start):
        t0 = int(self.tier(start))
        ts = np.arange(t0, self.t_max + 1)
        idx = (np.int64(1) << (ts - 1)) - 1
        idx[0] = start
        return idx, self.base ** (-ts.astype(float))

    def planes_meeting(self, ball, j_lo, j_hi):
        j_hi = min(j_hi, self.size)
        if j_lo >= j_hi:
            return np.zeros(0, dtype=np.int64)
        lo, hi = ball.center[0] - ball.radius, ball.center[0] + ball.radius
        out = []
        for t in range(int(self.tier(j_lo)), int(self.tier(j_hi - 1)) + 1):
            scale = 2.0 ** t
            i0 = max(math.ceil((lo * scale - 1) / 2), 0)
            i1 = min(math.floor((hi * scale - 1) / 2), (1 << (t - 1)) - 1)
            if i1 < i0:
                continue
            first = (1 << (t - 1)) - 1
            js = np.arange(first + i0, first + i1 + 1, dtype=np.int64)
            out.append(js[(js >= j_lo) & (js < j_hi)])
        return np.concatenate(out) if out else np.zeros(0, dtype=np.int64)

    def blocks_from(self, start):
        t = int(self.tier(start))
        a = start
        while t <= self.t_max:
            b = (1 << t) - 1
            yield a, b
            a = b
            t += 1


def diophantine_scene(cfg, Q: int, M: float) -> ExplicitScene:
    """Planes R_{p,q} (|q| <= Q, |p Phi| <= M|q|) ordered by |q|, Upsilon = Psi(p,q)/|q|."""
    from .diophantine import enumerate_pairs_array
    P, Qv = enumerate_pairs_array(cfg, Q, M)
    rad = cfg.psi_values(P, Qv)
    h = np.abs(Qv).max(axis=1)
    keep = rad > 0
    planes = []
    ups = []
    Phi = tuple(map(tuple, cfg.Phi))
    y = tuple(cfg.y)
    for p, q, r, hh in zip(P[keep], Qv[keep], rad[keep], h[keep]):
        planes.append(ResonantPlane(tuple(p), tuple(q), y, Phi).to_affine())
        ups.append(r / hh)
    k = cfg.n * cfg.m
    return ExplicitScene(planes, ups, Ball(np.full(k, 0.5), math.sqrt(k) / 2.0), l=k - cfg.m)


# ---------------------------------------------------------------------------
# constants
# ---------------------------------------------------------------------------


def default_c1_c2(k: int) -> tuple[float, float]:
    vol = unit_ball_volume(k)
    return min(0.5, vol), max(2.0, vol)


def c3_value(k: int, c1: float, c2: float) -> float:
    return (1.0 / (2 ** (k + 3) * 5 ** k * 15 ** k)) * (c1 / c2) ** 2


@lru_cache(maxsize=None)
def calibrate_packing(k: int, l: int, instances: int = 100, seed: int = 12345) -> tuple[float, float, float, float]:
    """(d1, d2, min ratio, max ratio) of #C / (Upsilon~/Upsilon)^l over random centred packings."""
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(k, l))))
    ratios = []
    for _ in range(instances):
        centre = rng.random(k)
        big = 1.0
        gap = math.exp(rng.uniform(math.log(8.0), math.log(256.0)))
        small = big / gap
        dirs = rng.normal(size=(l, k)) if l else np.zeros((0, k))
        plane = AffinePlane.through(centre, dirs) if l else AffinePlane(np.eye(k), centre)
        pts = separated_pack_centers(plane, Ball(centre, big / 2.0), 6.0 * small)
        ratios.append(len(pts) / gap ** l)
    lo, hi = float(min(ratios)), float(max(ratios))
    return 0.9 * lo, 1.1 * hi, lo, hi


@dataclass(frozen=True)
class EngineConstants:
    k: int
    l: int
    c1: float
    c2: float
    c3: float
    d1: float
    d2: float
    eta: float
    epsilon_scale: float = 1.0
    sublevel_cap: int | None = None
    kgb_margin: float = 10.0
    profile: str = "standard"

    def __post_init__(self):
        if not (0 < self.c1 < 1 < self.c2):
            raise DomainError("need 0 < c1 < 1 < c2")
        if not self.d1 <= self.d2:
            raise DomainError("need d1 <= d2")
        if not self.eta > 0:
            raise DomainError("eta must be positive")

    @classmethod
    def standard(cls, k: int, l: int, eta: float) -> "EngineConstants":
        c1, c2 = default_c1_c2(k)
        d1, d2, _, _ = calibrate_packing(k, l)
        return cls(k, l, c1, c2, c3_value(k, c1, c2), d1, d2, float(eta))

    def with_overrides(self, **kw) -> "EngineConstants":
        vals = {f: getattr(self, f) for f in self.__dataclass_fields__}
        vals.update(kw)
        vals["profile"] = "override"
        return EngineConstants(**vals)

    @property
    def m(self) -> int:
        return self.k - self.l

    def epsilon(self, f: DimensionFunction, r_b0: float, root: bool) -> float:
        base = (1.0 / (2.0 * self.d2)) * (self.c1 / self.c2) ** 2 * self.c3 / (2 ** self.k * 4 ** self.k)
        if root:
            base *= eval_f(f, r_b0) / self.eta
        return base * self.epsilon_scale

    def sublevels(self, f: DimensionFunction, B: Ball, root: bool) -> int:
        """The sub-level count l_B (before any cap)."""
        if root:
            val = self.c2 * self.eta / (self.c3 * float(ball_volume(B.radius, self.k)))
        else:
            val = eval_f(f, B.radius) / (self.c3 * B.radius ** self.k)
        return int(math.floor(val)) + 1

    def as_dict(self) -> dict:
        return {f: getattr(self, f) for f in self.__dataclass_fields__}


# ---------------------------------------------------------------------------
# exact measures
# ---------------------------------------------------------------------------


def slab_ball_volume(l: int, m: int, half_width: float, rho: float, offset: float = 0.0) -> float:
    """Lebesgue measure of {dist to an l-plane < w} cap a ball of radius rho.

    ``offset`` is the distance from the ball centre to the plane; for m >= 2
    only a centred ball (offset 0) is supported.
    """
    if half_width <= 0 or rho <= 0:
        return 0.0
    vl = unit_ball_volume(l)

    def section(u2):
        rem = rho * rho - u2
        return vl * rem ** (l / 2.0) if rem > 0 else 0.0

    if m == 1:
        lo = max(-half_width, offset - rho)
        hi = min(half_width, offset + rho)
        if hi <= lo:
            return 0.0
        if l == 0:
            return hi - lo
        val, _ = integrate.quad(lambda u: section((u - offset) ** 2), lo, hi, epsabs=0, epsrel=1e-12, limit=200)
        return float(val)
    if offset != 0.0:
        raise DomainError("off-centre slab volume is only supported for m = 1")
    top = min(half_width, rho)
    if l == 0:
        return float(ball_volume(top, m))
    sphere = m * unit_ball_volume(m)  # surface area of the unit (m-1)-sphere
    val, _ = integrate.quad(lambda u: sphere * u ** (m - 1) * section(u * u), 0.0, top,
                            epsabs=0, epsrel=1e-12, limit=200)
    return float(val)


def union_length(lo: np.ndarray, hi: np.ndarray) -> float:
    """Length of a union of intervals [lo_i, hi_i]."""
    if len(lo) == 0:
        return 0.0
    order = np.argsort(lo, kind="stable")
    lo, hi = lo[order], hi[order]
    total, cur_lo, cur_hi = 0.0, lo[0], hi[0]
    for a, b in zip(lo[1:], hi[1:]):
        if a > cur_hi:
            total += cur_hi - cur_lo
            cur_lo, cur_hi = a, b
        elif b > cur_hi:
            cur_hi = b
    return float(total + cur_hi - cur_lo)


def _grid_in_ball(B: Ball, step: float) -> np.ndarray:
    """Lattice points of spacing ``step`` (anchored at the ball centre) inside the closed ball."""
    n = int(math.floor(B.radius / step + 1e-9))
    axis = np.arange(-n, n + 1) * step
    mesh = np.stack(np.meshgrid(*([axis] * B.k), indexing="ij"), axis=-1).reshape(-1, B.k)
    mesh = mesh[np.linalg.norm(mesh, axis=1) <= B.radius]
    return mesh + B.center


# ---------------------------------------------------------------------------
# covering collections K_{G,B}
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class IndexedBall:
    ball: Ball
    j: int


@dataclass
class KgbResult:
    balls: list[IndexedBall]
    measure: float
    bound: float
    last_index: int
    checks: list[Check] = field(default_factory=list)


def _pairwise_disjoint(centers: np.ndarray, radii: np.ndarray) -> bool:
    """Exact check that closed balls are pairwise disjoint (strictly separated)."""
    if len(radii) < 2:
        return True
    tree = cKDTree(centers)
    rmax = float(radii.max())
    for i in range(len(radii)):
        for j in tree.query_ball_point(centers[i], radii[i] + rmax):
            if j > i and np.linalg.norm(centers[i] - centers[j]) <= radii[i] + radii[j]:
                return False
    return True


def _kgb_candidates(scene: MtpScene, pair: TransferPair, B: Ball, js: np.ndarray):
    """Centres x on R_j with B(x, 3 Upsilon~_j) inside B, sampled at spacing Upsilon~_j."""
    cs, rs, jj = [], [], []
    for j in js:
        ut = float(pair.g_tilde(float(scene.upsilon(j))))
        inner = B.radius - 3.0 * ut
        if inner < 0:
            continue
        plane = scene.plane(int(j))
        if plane.distance(B.center) > inner:
            continue
        if inner == 0:
            pts = plane.project(B.center)[None, :]
        else:
            pts = separated_pack_centers(plane, Ball(B.center, inner), ut)
        if len(pts):
            cs.append(pts)
            rs.append(np.full(len(pts), 3.0 * ut))
            jj.append(np.full(len(pts), int(j), dtype=np.int64))
    if not cs:
        return np.zeros((0, B.k)), np.zeros(0), np.zeros(0, dtype=np.int64)
    return np.vstack(cs), np.concatenate(rs), np.concatenate(jj)


def build_kgb(scene: MtpScene, B: Ball, G: int, pair: TransferPair, j_max: int | None = None,
              checks: list[Check] | None = None, coverage_check: bool = False) -> KgbResult:
    """A finite disjoint collection (A; j), j >= G, with 3A inside B and sum H^k(A) >= H^k(B)/(4*15^k).

    Candidates B(x, 3 Upsilon~_j) inside B with x on R_j are collected in
    increasing j, reduced by the greedy 5r rule, shrunk by 3, and the index
    range is cut at the smallest N0 meeting the measure bound.
    """
    k = scene.k
    if B.k != k:
        raise DomainError("ball dimension does not match the scene")
    if coverage_check:
        cov = check_full_measure(scene, B, pair, resolution=10, G_values=(G,), j_max=j_max)[G]
        if cov < 0.99:
            warnings.warn(f"neighbourhoods from index {G} cover only {cov:.3f} of B", stacklevel=2)
    bound = float(ball_volume(B.radius, k)) / (4.0 * 15.0 ** k)
    j_end = scene.size if j_max is None else min(scene.size, j_max)
    C = np.zeros((0, k))
    R = np.zeros(0)
    J = np.zeros(0, dtype=np.int64)
    achieved = 0.0
    for a, b in scene.blocks_from(G):
        if a >= j_end:
            break
        b = min(b, j_end)
        js = scene.planes_meeting(B, a, b)
        c, r, jj = _kgb_candidates(scene, pair, B, js)
        if len(r):
            C = np.vstack([C, c])
            R = np.concatenate([R, r])
            J = np.concatenate([J, jj])
        if not len(R):
            continue
        # radius descending, then input order (which is j ascending)
        chosen = np.array(sorted(five_r_cover_indices(C, R)), dtype=np.int64)
        sel_c, sel_r, sel_j = C[chosen], R[chosen] / 3.0, J[chosen]
        order = np.argsort(sel_j, kind="stable")
        sel_c, sel_r, sel_j = sel_c[order], sel_r[order], sel_j[order]
        vols = ball_volume(sel_r, k)
        cum = np.cumsum(vols)
        # smallest N0: every (A; j) with j < N0 is kept
        ends = np.nonzero(np.append(sel_j[1:] != sel_j[:-1], True))[0]
        good = ends[cum[ends] >= bound]
        achieved = float(cum[-1])
        if len(good):
            last = good[0]
            keep = slice(0, last + 1)
            out_c, out_r, out_j = sel_c[keep], sel_r[keep], sel_j[keep]
            meas = float(cum[last])
            _require(checks, "covering (i)", bool(np.all(
                np.linalg.norm(out_c - B.center, axis=1) + 3.0 * out_r <= B.radius * (1 + 1e-12))),
                "3A inside B")
            _require(checks, "covering (ii)", _pairwise_disjoint(out_c, 3.0 * out_r), "3A pairwise disjoint")
            _require(checks, "covering (iii)", meas >= bound,
                     f"sum H^k(A) = {meas:.6g} >= {bound:.6g}", meas / bound)
            balls = [IndexedBall(Ball(c, r), int(j)) for c, r, j in zip(out_c, out_r, out_j)]
            return KgbResult(balls, meas, bound, int(out_j[-1]), checks or [])
    raise ConstructionError("covering (iii)",
                            f"measure bound {bound:.6g} not reached with indices in [{G}, {j_end}); "
                            f"achieved {achieved:.6g}", achieved)


# ---------------------------------------------------------------------------
# packings C(A; j)
# ---------------------------------------------------------------------------


@dataclass
class PackingResult:
    balls: list[Ball]
    ratio: float
    inner_measure: float
    union_measure: float
    outer_measure: float
    empty: bool
    checks: list[Check] = field(default_factory=list)


def build_packing(scene: MtpScene, A: IndexedBall, pair: TransferPair,
                  constants: EngineConstants | None = None, checks: list[Check] | None = None) -> PackingResult:
    """Maximal 6 Upsilon_j-separated balls of radius Upsilon_j centred on R_j inside A/2."""
    j = A.j
    ups = float(scene.upsilon(j))
    ut = A.ball.radius  # Upsilon~_j for members of K_{G,B}
    k, l = scene.k, scene.l
    if not 6.0 * ups < ut:
        raise ConstructionError("radii comparison",
                                f"6*Upsilon = {6 * ups:.6g} is not below Upsilon~ = {ut:.6g}")
    plane = scene.plane(j)
    half = A.ball.scaled(0.5)
    centres = separated_pack_centers(plane, half, 6.0 * ups)
    balls = [Ball(c, ups) for c in centres]
    local: list[Check] = []
    if not balls:
        local.append(Check("packing", True, "plane misses A/2: empty packing"))
        if checks is not None:
            checks.extend(local)
        return PackingResult([], 0.0, 0.0, 0.0, 0.0, True, local)
    scale = max(1.0, float(np.abs(centres).max()))
    on_plane = bool(np.all(plane.distance(centres) <= 1e-12 * scale + 1e-15))
    _require(local, "packing (i)", on_plane, "radius Upsilon_j and centred on R_j")
    inside = np.linalg.norm(centres - A.ball.center, axis=1) + 3.0 * ups <= A.ball.radius * (1 + 1e-12)
    _require(local, "packing (ii)", bool(np.all(inside)), "3L inside A")
    sep_ok = True
    if len(centres) > 1:
        tree = cKDTree(centres)
        sep_ok = not tree.query_pairs(6.0 * ups, p=2.0)
    _require(local, "packing (iii)", sep_ok, "3L pairwise disjoint")
    off = plane.distance(A.ball.center)
    inner = slab_ball_volume(l, k - l, ups, half.radius, off)
    outer = slab_ball_volume(l, k - l, ups, A.ball.radius, off)
    union = len(balls) * float(ball_volume(ups, k))
    _require(local, "packing (iv)", inner / 6.0 ** k <= union <= outer * (1 + 1e-12),
             f"{inner / 6 ** k:.6g} <= {union:.6g} <= {outer:.6g}")
    ratio = len(balls) / (ut / ups) ** l
    if constants is not None:
        _require(local, "packing (v)", constants.d1 <= ratio <= constants.d2,
                 f"cardinality ratio {ratio:.6g} within [{constants.d1:.6g}, {constants.d2:.6g}]", ratio)
    if checks is not None:
        checks.extend(local)
    return PackingResult(balls, ratio, inner, union, outer, False, local)


def check_full_measure(scene: MtpScene, B: Ball, pair: TransferPair, resolution: int = 12,
                       G_values: Sequence[int] = (0,), j_max: int | None = None) -> dict[int, float]:
    """Fraction of B covered by the union over G <= j < j_max of Delta(R_j, Upsilon~_j), per G."""
    j_end = scene.size if j_max is None else min(scene.size, j_max)
    out: dict[int, float] = {}
    for G in G_values:
        if G >= j_end:
            out[G] = 0.0
            continue
        js = scene.planes_meeting(Ball(B.center, B.radius + 1.0), G, j_end)
        if scene.k == 1:
            ut = pair.g_tilde(scene.upsilon(js)) if len(js) else np.zeros(0)
            pts = np.array([float(scene.plane(int(j)).project(B.center)[0]) for j in js])
            lo = np.maximum(pts - ut, B.center[0] - B.radius)
            hi = np.minimum(pts + ut, B.center[0] + B.radius)
            ok = hi > lo
            out[G] = union_length(lo[ok], hi[ok]) / (2.0 * B.radius)
            continue
        step = 2.0 * B.radius / (1 << resolution)
        grid = _grid_in_ball(B, step)
        hit = np.zeros(len(grid), dtype=bool)
        for j in js:
            ut = float(pair.g_tilde(float(scene.upsilon(j))))
            hit |= scene.plane(int(j)).distance(grid) < ut
        out[G] = float(hit.mean()) if len(grid) else 0.0
    return out


def separation_lemma_holds(A: Ball, M: Ball, c: float) -> bool | None:
    """None when the hypotheses fail; otherwise whether r_M <= r_A and cM inside 5A."""
    if c < 3:
        return None
    d = float(np.linalg.norm(A.center - M.center))
    meets = d <= A.radius + M.radius
    # A \ cM is non-empty unless A is inside the closed ball cM
    escapes = not (d + A.radius <= c * M.radius)
    if not (meets and escapes):
        return None
    return M.radius <= A.radius and d + c * M.radius <= 5.0 * A.radius * (1 + 1e-12)


# ---------------------------------------------------------------------------
# the Cantor tree
# ---------------------------------------------------------------------------


@dataclass
class Level:
    """Nodes of one level.  ``a_*`` arrays describe the balls A the nodes were packed into."""

    centers: np.ndarray
    radii: np.ndarray
    parent: np.ndarray
    sublevel: np.ndarray
    source: np.ndarray
    a_index: np.ndarray
    weight: np.ndarray
    a_centers: np.ndarray
    a_radii: np.ndarray
    a_source: np.ndarray
    a_parent: np.ndarray
    a_sublevel: np.ndarray
    _kd: cKDTree | None = field(default=None, repr=False, compare=False)

    @property
    def size(self) -> int:
        return len(self.radii)

    def kdtree(self) -> cKDTree:
        if self._kd is None:
            self._kd = cKDTree(self.centers)
        return self._kd

    def arrays(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in
                ("centers", "radii", "parent", "sublevel", "source", "a_index", "weight",
                 "a_centers", "a_radii", "a_source", "a_parent", "a_sublevel")}


def _root_level(B0: Ball) -> Level:
    k = B0.k
    z = np.zeros(0, dtype=np.int64)
    return Level(B0.center[None, :].copy(), np.array([B0.radius]), np.array([-1]), np.array([0]),
                 np.array([-1]), np.array([-1]), np.array([1.0]),
                 np.zeros((0, k)), np.zeros(0), z, z, z)


@dataclass
class LocalSummary:
    level: int
    parent: int
    sublevels: int
    sublevels_formula: int
    cuts: list[int]
    a_counts: list[int]
    node_count: int


@dataclass
class CantorTree:
    k: int
    l: int
    f: DimensionFunction
    eta: float
    B0: Ball
    constants: EngineConstants
    levels: list[Level]
    locals: list[LocalSummary] = field(default_factory=list)
    checks: list[Check] = field(default_factory=list)

    @property
    def depth(self) -> int:
        return len(self.levels)

    @property
    def pair(self) -> TransferPair:
        return derive_g(self.f, self.l, self.k)

    def level(self, n: int) -> Level:
        """Level n >= 1 (level 1 is the single ball B0)."""
        return self.levels[n - 1]

    def digest(self) -> str:
        h = hashlib.sha256()
        for lev in self.levels:
            for name, arr in lev.arrays().items():
                h.update(name.encode())
                h.update(np.ascontiguousarray(arr).tobytes())
        return h.hexdigest()

    def to_dict(self) -> dict:
        levels = []
        for n, lev in enumerate(self.levels, start=1):
            nodes = [{"center": lev.centers[i].tolist(), "radius": float(lev.radii[i]), "level": n,
                      "sublevel": int(lev.sublevel[i]), "source": int(lev.source[i]),
                      "parent": int(lev.parent[i]), "a_index": int(lev.a_index[i]),
                      "weight": float(lev.weight[i])} for i in range(lev.size)]
            parents = [{"center": lev.a_centers[i].tolist(), "radius": float(lev.a_radii[i]),
                        "source": int(lev.a_source[i]), "parent": int(lev.a_parent[i]),
                        "sublevel": int(lev.a_sublevel[i])} for i in range(len(lev.a_radii))]
            levels.append({"level": n, "nodes": nodes, "packing_balls": parents})
        return {
            "format": TREE_FORMAT,
            "version": TREE_VERSION,
            "k": self.k,
            "l": self.l,
            "f": {"coeff": self.f.coeff, "power": self.f.power, "log_power": self.f.log_power,
                  "r_cap": self.f.r_cap},
            "eta": self.eta,
            "B0": {"center": self.B0.center.tolist(), "radius": self.B0.radius},
            "constants": self.constants.as_dict(),
            "digest": self.digest(),
            "levels": levels,
        }

    def save(self, path: str) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def from_dict(cls, data: dict) -> "CantorTree":
        if data.get("format") != TREE_FORMAT:
            raise DomainError("not a Cantor tree file")
        if data.get("version") != TREE_VERSION:
            raise DomainError(f"unsupported tree version {data.get('version')}")
        k = int(data["k"])
        levels = []
        for lev in data["levels"]:
            nodes, aa = lev["nodes"], lev["packing_balls"]
            ints = lambda key, rows: np.array([r[key] for r in rows], dtype=np.int64)
            levels.append(Level(
                np.array([r["center"] for r in nodes], dtype=float).reshape(-1, k),
                np.array([r["radius"] for r in nodes], dtype=float),
                ints("parent", nodes), ints("sublevel", nodes), ints("source", nodes),
                ints("a_index", nodes), np.array([r["weight"] for r in nodes], dtype=float),
                np.array([r["center"] for r in aa], dtype=float).reshape(-1, k),
                np.array([r["radius"] for r in aa], dtype=float),
                ints("source", aa), ints("parent", aa), ints("sublevel", aa)))
        fd = data["f"]
        tree = cls(k, int(data["l"]), DimensionFunction(fd["coeff"], fd["power"], fd["log_power"], fd["r_cap"]),
                   float(data["eta"]), Ball(data["B0"]["center"], data["B0"]["radius"]),
                   EngineConstants(**data["constants"]), levels)
        if "digest" in data and data["digest"] != tree.digest():
            raise DomainError("tree digest mismatch: file is corrupted")
        return tree

    @classmethod
    def load(cls, path: str) -> "CantorTree":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


@dataclass
class _Context:
    scene: MtpScene
    f: DimensionFunction
    pair: TransferPair
    const: EngineConstants
    B0: Ball
    j_max: int | None
    max_sublevels: int
    max_balls: int
    checks: list[Check]


_GATES = ("radii comparison", "packing gap", "epsilon relation", "card", "covering scale",
          "f relation", "g relation")


def _gate_masks(ctx: _Context, u: np.ndarray, target: float, probe_radius: float,
                f_cap: float | None, g_cap: float | None) -> dict[str, np.ndarray]:
    k, m = ctx.scene.k, ctx.scene.m
    fu = np.asarray(ctx.f(u), dtype=float)
    gu = np.asarray(ctx.pair.g(u), dtype=float)
    gt = gu ** (1.0 / m)
    out = {
        "radii comparison": 3.0 * u < gt,
        "packing gap": 6.0 * u < gt,
        "epsilon relation": u ** k / fu < target,
        "card": np.floor(fu / (ctx.const.c3 * u ** k)) >= 1,
        "covering scale": gt < probe_radius / ctx.const.kgb_margin,
    }
    out["f relation"] = fu <= 0.5 * f_cap if f_cap is not None else np.ones(len(u), dtype=bool)
    out["g relation"] = gu <= 0.5 * g_cap if g_cap is not None else np.ones(len(u), dtype=bool)
    return out


def select_cut(ctx: _Context, start: int, target: float, probe_radius: float,
               f_cap: float | None = None, g_cap: float | None = None) -> int:
    """Smallest G >= start such that every gate holds for all j >= G."""
    idx, u = ctx.scene.envelope_from(start)
    if ctx.j_max is not None:
        keep = idx < ctx.j_max
        idx, u = idx[keep], u[keep]
    if not len(idx):
        raise ConstructionError("cut selection", f"no plane index left after {start}")
    masks = _gate_masks(ctx, u, target, probe_radius, f_cap, g_cap)
    ok = np.logical_and.reduce([masks[name] for name in _GATES])
    hits = np.nonzero(ok)[0]
    if not len(hits):
        failing = [name for name in _GATES if not masks[name][-1]]
        raise ConstructionError(failing[0] if failing else "cut selection",
                                f"no cut G >= {start} satisfies {', '.join(failing) or 'all gates jointly'}")
    G = int(idx[hits[0]])
    ctx.checks.append(Check("cut selection", True, f"G = {G}", float(u[hits[0]])))
    return G


def _disjoint_and_inside(prop: str, B: Ball, centers: np.ndarray, radii: np.ndarray, checks: list[Check]) -> None:
    inside = np.linalg.norm(centers - B.center, axis=1) + 3.0 * radii <= B.radius * (1 + 1e-12)
    _require(checks, prop, bool(np.all(inside)), "3-fold dilates inside the parent ball")
    _require(checks, prop, _pairwise_disjoint(centers, 3.0 * radii), "3-fold dilates pairwise disjoint")


def _free_region_measure(B: Ball, centers: np.ndarray, radii: np.ndarray, step: float) -> float:
    """H^k of B/2 minus the union of the closed balls 4L."""
    half = B.scaled(0.5)
    if B.k == 1:
        c, r = B.center[0], half.radius
        lo = np.maximum(centers[:, 0] - 4 * radii, c - r)
        hi = np.minimum(centers[:, 0] + 4 * radii, c + r)
        ok = hi > lo
        return 2 * r - union_length(lo[ok], hi[ok])
    if (2.0 * half.radius / step + 1) ** B.k > 2e7:
        step = 2.0 * half.radius / (2e7 ** (1.0 / B.k) - 1)
    grid = _grid_in_ball(half, step)
    free = _outside_dilates(grid, centers, radii, 4.0)
    return float(ball_volume(half.radius, B.k)) * float(free.mean()) if len(grid) else 0.0


def _outside_dilates(points: np.ndarray, centers: np.ndarray, radii: np.ndarray, factor: float) -> np.ndarray:
    free = np.ones(len(points), dtype=bool)
    if not len(points) or not len(radii):
        return free
    tree = cKDTree(points)
    for c, r in zip(centers, radii):
        hit = tree.query_ball_point(c, factor * r)
        if hit:
            free[hit] = False
    return free


def _sub_level_from(ctx: _Context, B: Ball, G: int, parents: list[Ball]) -> tuple[list[IndexedBall], list[list[Ball]]]:
    """K-tilde for one sub-level: KGB collections inside each parent, then packings."""
    As: list[IndexedBall] = []
    packs: list[list[Ball]] = []
    for P in parents:
        kgb = build_kgb(ctx.scene, P, G, ctx.pair, ctx.j_max, checks=None)
        for A in kgb.balls:
            pk = build_packing(ctx.scene, A, ctx.pair, ctx.const, checks=None)
            As.append(A)
            packs.append(pk.balls)
        if sum(len(p) for p in packs) > ctx.max_balls:
            raise ConstructionError("budget", f"more than {ctx.max_balls} balls in one local level")
    ctx.checks.append(Check("covering", True, f"{len(parents)} covering collections built"))
    ctx.checks.append(Check("packing", True, f"{len(As)} packings built"))
    return As, packs


def _local_level(ctx: _Context, B: Ball, root: bool, level: int, parent_index: int):
    const, f, k = ctx.const, ctx.f, ctx.scene.k
    formula = const.sublevels(f, B, root)
    lB = formula if const.sublevel_cap is None else min(formula, const.sublevel_cap)
    if not root:
        _require(ctx.checks, "P5", formula >= 2, f"l_B = {formula} must be at least 2 (card)", formula)
    if lB > ctx.max_sublevels:
        raise ConstructionError(
            "P5", f"l_B = {lB} sub-levels for the ball of radius {B.radius:.6g} at level {level} "
            f"exceed the budget of {ctx.max_sublevels}; every sub-level at least halves f of the radii", lB)
    eps = const.epsilon(f, ctx.B0.radius, root)
    target = eps * B.radius ** k / eval_f(f, B.radius)

    subs_A: list[list[IndexedBall]] = []
    subs_L: list[list[list[Ball]]] = []
    cuts: list[int] = []
    G = select_cut(ctx, 0, target, B.radius)
    As, packs = _sub_level_from(ctx, B, G, [B])
    subs_A.append(As)
    subs_L.append(packs)
    cuts.append(G)
    for _ in range(2, lB + 1):
        Lc = np.array([L.center for p in (x for s in subs_L for x in s) for L in p]).reshape(-1, k)
        Lr = np.array([L.radius for s in subs_L for p in s for L in p])
        d_min = float(Lr.min())
        half = B.scaled(0.5)
        step = d_min / 2.0
        n_grid = (2.0 * half.radius / step + 1) ** k
        if n_grid > ctx.max_balls:
            raise ConstructionError("budget", f"about {n_grid:.3g} candidate centres for the B' family "
                                    f"exceed {ctx.max_balls}")
        free = _free_region_measure(B, Lc, Lr, step)
        _require(ctx.checks, "free region", free >= 0.5 * float(ball_volume(half.radius, k)) * (1 - 1e-9),
                 f"H^k(B/2 minus 4L) = {free:.6g}", free)
        grid = _grid_in_ball(half, step)
        grid = grid[_outside_dilates(grid, Lc, Lr, 4.0)]
        rad = d_min / 2.0
        pick = five_r_cover_indices(grid, np.full(len(grid), rad))
        Bp = [Ball(c, rad) for c in grid[sorted(pick)]]
        if not Bp:
            raise ConstructionError("free region", "no room for the B' family")
        bc = np.array([b.center for b in Bp])
        far = True
        tree = cKDTree(Lc)
        rmax = float(Lr.max())
        for c in bc:
            for i in tree.query_ball_point(c, 3.0 * rmax + rad):
                if np.linalg.norm(c - Lc[i]) <= 3.0 * Lr[i] + rad:
                    far = False
                    break
            if not far:
                break
        _require(ctx.checks, "B' avoids 3L", far, "every B' misses the union of 3L")
        cover = len(Bp) * float(ball_volume(rad, k))
        need = const.c1 / (2 * const.c2 * 5 ** k) * float(ball_volume(half.radius, k))
        _require(ctx.checks, "B' measure", cover >= need, f"{cover:.6g} >= {need:.6g}", cover / need)
        f_cap = float(np.min(f(Lr)))
        g_cap = float(np.min(ctx.pair.g(Lr)))
        G = select_cut(ctx, cuts[-1] + 1, target, rad, f_cap, g_cap)
        As, packs = _sub_level_from(ctx, B, G, Bp)
        subs_A.append(As)
        subs_L.append(packs)
        cuts.append(G)

    # properties of the finished local level
    allc = np.array([L.center for s in subs_L for p in s for L in p]).reshape(-1, k)
    allr = np.array([L.radius for s in subs_L for p in s for L in p])
    _disjoint_and_inside("P1", B, allc, allr, ctx.checks)
    for i, As in enumerate(subs_A, start=1):
        ac = np.array([A.ball.center for A in As]).reshape(-1, k)
        ar = np.array([A.ball.radius for A in As])
        _disjoint_and_inside("P2", B, ac, ar, ctx.checks)
        vk = float(np.sum(ar ** k))
        _require(ctx.checks, "P3", vk >= const.c3 * B.radius ** k,
                 f"sub-level {i}: sum V^k(A) = {vk:.6g} >= c3 V^k(B) = {const.c3 * B.radius ** k:.6g}",
                 vk / (const.c3 * B.radius ** k))
    for i in range(1, len(subs_L)):
        prev = np.array([L.radius for s in subs_L[:i] for p in s for L in p])
        cur = np.array([L.radius for p in subs_L[i] for L in p])
        _require(ctx.checks, "P4", float(np.max(f(cur))) <= 0.5 * float(np.min(f(prev))) * (1 + 1e-12),
                 f"f halves from sub-level {i} to {i + 1}")
        _require(ctx.checks, "P4", float(np.max(ctx.pair.g(cur))) <= 0.5 * float(np.min(ctx.pair.g(prev))) * (1 + 1e-12),
                 f"g halves from sub-level {i} to {i + 1}")

    # weights
    kk = k / ctx.scene.m
    ups = [float(ctx.scene.upsilon(A.j)) for As in subs_A for A in As]
    gw = np.asarray(ctx.pair.g(np.array(ups)), dtype=float) ** kk
    total = float(gw.sum())
    out = []
    a_rows = []
    ai = 0
    for si, (As, packs) in enumerate(zip(subs_A, subs_L), start=1):
        for A, pk in zip(As, packs):
            w = gw[ai] / total / len(pk) if pk else 0.0
            for L in pk:
                out.append((L.center, L.radius, si, A.j, ai, w))
            a_rows.append((A.ball.center, A.ball.radius, A.j, si))
            ai += 1
    summary = LocalSummary(level, parent_index, lB, formula, cuts, [len(a) for a in subs_A], len(out))
    return out, a_rows, summary


def build_cantor(scene: MtpScene, f: DimensionFunction, eta: float, max_depth: int,
                 B0: Ball | None = None, constants: EngineConstants | None = None,
                 max_sublevels: int = 64, max_balls: int = 2_000_000,
                 j_max: int | None = None) -> CantorTree:
    """Build levels 1..max_depth of the Cantor set inside B0 and assign the measure mu."""
    pair = derive_g(f, scene.l, scene.k)
    if not pair.g_valid:
        raise DomainError("g(r) = r^-l f(r) is not a dimension function")
    if pair.ratio_limit != "infinite":
        raise DomainError("r^-k f(r) must tend to infinity")
    if not eta > 1:
        raise DomainError("eta must exceed 1")
    if max_depth < 1:
        raise DomainError("max_depth must be at least 1")
    if B0 is None:
        B0 = Ball(np.full(scene.k, 0.5), 0.5)
    if B0.k != scene.k:
        raise DomainError("B0 dimension does not match the scene")
    if constants is None:
        constants = EngineConstants.standard(scene.k, scene.l, eta)
    elif constants.eta != eta:
        constants = EngineConstants(**{**constants.as_dict(), "eta": float(eta)})
    checks: list[Check] = []
    _require(checks, "P0", scene.omega.contains_ball(B0) or
             float(np.linalg.norm(B0.center - scene.omega.center)) + B0.radius <= scene.omega.radius * (1 + 1e-12),
             "B0 inside the ambient ball")
    _require(checks, "P0", B0.radius <= f.r_cap, "f defined at r(B0)")
    ctx = _Context(scene, f, pair, constants, B0, j_max, max_sublevels, max_balls, checks)
    tree = CantorTree(scene.k, scene.l, f, float(eta), B0, constants, [_root_level(B0)], [], checks)
    for n in range(1, max_depth):
        parent = tree.levels[-1]
        rows, a_rows, total = [], [], 0
        for i in range(parent.size):
            B = Ball(parent.centers[i], parent.radii[i])
            out, arow, summary = _local_level(ctx, B, n == 1, n, i)
            base = len(a_rows)
            for c, r, si, j, ai, w in out:
                rows.append((c, r, i, si, j, base + ai, w * parent.weight[i]))
            for c, r, j, si in arow:
                a_rows.append((c, r, j, i, si))
            tree.locals.append(summary)
            total += len(out)
            if total > max_balls:
                raise ConstructionError("budget", f"level {n + 1} exceeds {max_balls} balls")
        lev = Level(
            np.array([r[0] for r in rows]).reshape(-1, scene.k), np.array([r[1] for r in rows], dtype=float),
            np.array([r[2] for r in rows], dtype=np.int64), np.array([r[3] for r in rows], dtype=np.int64),
            np.array([r[4] for r in rows], dtype=np.int64), np.array([r[5] for r in rows], dtype=np.int64),
            np.array([r[6] for r in rows], dtype=float),
            np.array([r[0] for r in a_rows]).reshape(-1, scene.k), np.array([r[1] for r in a_rows], dtype=float),
            np.array([r[2] for r in a_rows], dtype=np.int64), np.array([r[3] for r in a_rows], dtype=np.int64),
            np.array([r[4] for r in a_rows], dtype=np.int64))
        mass = float(lev.weight.sum())
        _require(checks, "mass", abs(mass - 1.0) <= 1e-9, f"level {n + 1} carries mass {mass:.12g}", mass)
        per_parent = np.bincount(lev.parent, weights=lev.weight, minlength=parent.size)
        gap = float(np.max(np.abs(per_parent - parent.weight)))
        _require(checks, "mu additivity", gap <= 1e-9, f"children weights match parents within {gap:.3g}", gap)
        tree.levels.append(lev)
    return tree


# ---------------------------------------------------------------------------
# the measure mu
# ---------------------------------------------------------------------------


def mu_of_set(tree: CantorTree, D: Ball) -> float:
    """mu(D): total weight of deepest-level nodes meeting the closed ball D."""
    lev = tree.levels[-1]
    if lev.size == 0:
        return 0.0
    reach = D.radius + float(lev.radii.max())
    idx = lev.kdtree().query_ball_point(D.center, reach)
    if not idx:
        return 0.0
    idx = np.asarray(idx)
    d = np.linalg.norm(lev.centers[idx] - D.center, axis=1)
    return float(lev.weight[idx][d <= D.radius + lev.radii[idx]].sum())


@dataclass
class MeasureBoundReport:
    node_max: float
    ball_max: float
    r0: float
    samples: int
    node_ratios: np.ndarray
    ball_ratios: np.ndarray

    @property
    def constant(self) -> float:
        return max(self.node_max, self.ball_max)


def _uniform_in_ball(rng: np.random.Generator, B: Ball, N: int) -> np.ndarray:
    k = B.k
    v = rng.normal(size=(N, k))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    r = B.radius * rng.random(N) ** (1.0 / k)
    return B.center + v * r[:, None]


def verify_cantor_measure_bound(tree: CantorTree, samples: int = 2000, seed: int = 0,
                                f: DimensionFunction | None = None, eta: float | None = None) -> MeasureBoundReport:
    """Ratios mu(L) eta / f(r(L)) over nodes of levels >= 2 and mu(D) eta / f(r(D)) over random balls.

    Random balls have centres uniform in B0 and radii log-uniform in [r0/100, r0),
    r0 the smallest radius at level 2.  A one-level tree passes vacuously.
    """
    if tree.depth < 2:
        empty = np.zeros(0)
        return MeasureBoundReport(0.0, 0.0, float("nan"), 0, empty, empty)
    f = tree.f if f is None else f
    eta = tree.eta if eta is None else eta
    node = []
    for lev in tree.levels[1:]:
        node.append(lev.weight * eta / np.asarray(f(lev.radii), dtype=float))
    node = np.concatenate(node)
    r0 = float(tree.levels[1].radii.min())
    from .estimator import block_rng
    rng = block_rng(seed, 0)
    centres = _uniform_in_ball(rng, tree.B0, samples)
    radii = np.exp(rng.uniform(math.log(r0 / 100.0), math.log(r0), samples))
    ball = np.array([mu_of_set(tree, Ball(c, r)) * eta / eval_f(f, r) for c, r in zip(centres, radii)])
    return MeasureBoundReport(float(node.max()), float(ball.max()), r0, samples, node, ball)


def calibrate_d1_d2(k: int, l: int, instances: int = 100, seed: int = 12345) -> tuple[float, float]:
    d1, d2, _, _ = calibrate_packing(k, l, instances, seed)
    return d1, d2
