"""Dimension prediction, Monte Carlo measure, box counting and Hausdorff-measure bounds."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import _kernels
from .dimfun import ApproxFunction, DimensionFunction, DomainError, MultiApproxFunction, eval_f
from .diophantine import SceneConfig, _shell
from .geometry import AffinePlane, Ball, plane_section

Z_95 = 1.96
MC_BLOCK = 1024


# ---------------------------------------------------------------------------
# dimension prediction
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DimPrediction:
    s0: float
    regime: str  # "supercritical" or "saturated"
    n: int
    m: int
    tau: float


def predict_dimension(n: int, m: int, tau: float) -> DimPrediction:
    """m(n-1) + (m+n)/(tau+1) when tau > n/m, else nm."""
    if n < 1 or m < 1:
        raise DomainError("n and m must be positive")
    if not tau > 0:
        raise DomainError("tau must be positive")
    if tau * m > n:
        return DimPrediction(m * (n - 1) + (m + n) / (tau + 1.0), "supercritical", n, m, tau)
    return DimPrediction(float(n * m), "saturated", n, m, tau)


# ---------------------------------------------------------------------------
# Monte Carlo measure of the tail union
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MeasureEstimate:
    fraction: float
    hits: int
    samples: int
    seed: int
    Q: int
    G: int
    half_width: float


def block_rng(seed: int, block: int) -> np.random.Generator:
    """Philox stream for one sample block, keyed by (seed, block index)."""
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(block),))
    return np.random.Generator(np.random.Philox(ss))


def uniform_points(seed: int, N: int, dim: int, block: int = MC_BLOCK) -> np.ndarray:
    out = np.empty((N, dim))
    for b, start in enumerate(range(0, N, block)):
        stop = min(N, start + block)
        out[start:stop] = block_rng(seed, b).random((stop - start, dim))
    return out


def _q_range(n: int, G: int, Q: int, half: bool) -> np.ndarray:
    """All q with G <= |q| <= Q; with ``half`` only one of each pair +-q."""
    qs = np.vstack([_shell(n, h) for h in range(G, Q + 1)])
    if half:
        first = qs[np.arange(len(qs)), np.argmax(qs != 0, axis=1)]
        qs = qs[first > 0]
    return qs


def _sign_symmetric(cfg: SceneConfig) -> bool:
    """Whether (p, q) and (-p, -q) always define the same set with the same radius."""
    if not cfg.homogeneous:
        return False
    if isinstance(cfg.psi, MultiApproxFunction) and cfg.psi.overrides:
        return False
    return True


def _partition_arrays(cfg: SceneConfig):
    part = cfg.partition
    if part is None and isinstance(cfg.psi, MultiApproxFunction):
        part = cfg.psi.mask
    if part is None:
        return np.zeros((1, 1), dtype=np.int64), np.zeros(1, dtype=np.int64), False
    width = max(len(b) for b in part.blocks)
    blocks = np.zeros((len(part.blocks), width), dtype=np.int64)
    lens = np.zeros(len(part.blocks), dtype=np.int64)
    for i, b in enumerate(part.blocks):
        blocks[i, : len(b)] = [j - 1 for j in b]
        lens[i] = len(b)
    return blocks, lens, True


def _hits_general(points: np.ndarray, cfg: SceneConfig, G: int, Q: int) -> np.ndarray:
    """Reference hit test for arbitrary Phi and p-dependent Psi (numpy, per point)."""
    from .diophantine import approx_witnesses
    out = np.zeros(len(points), dtype=np.uint8)
    for s, x in enumerate(points):
        ws = approx_witnesses(x, cfg, Q)
        out[s] = any(w.height >= G for w in ws)
    return out


def mc_measure(cfg: SceneConfig, Q: int, G: int, N: int, seed: int) -> MeasureEstimate:
    """Fraction of N seeded uniform points of I^{nm} with a witness of height in [G, Q]."""
    if not 1 <= G <= Q:
        raise DomainError("need 1 <= G <= Q")
    if N < 1:
        raise DomainError("N must be positive")
    n, m = cfg.n, cfg.m
    pts = uniform_points(seed, N, n * m)
    fast = cfg.phi_is_identity and not (isinstance(cfg.psi, MultiApproxFunction) and cfg.psi.overrides)
    if fast:
        qs = _q_range(n, G, Q, _sign_symmetric(cfg))
        heights = np.abs(qs).max(axis=1)
        if isinstance(cfg.psi, MultiApproxFunction):
            rad = np.array(cfg.psi.base(heights), dtype=float, ndmin=1)
        else:
            rad = np.array(cfg.psi(heights), dtype=float, ndmin=1)
        blocks, lens, use = _partition_arrays(cfg)
        hits = _kernels.mc_hits(pts, qs.astype(np.int64), rad, np.asarray(cfg.y, dtype=float),
                                n, m, blocks, lens, use)
    else:
        hits = _hits_general(pts, cfg, G, Q)
    count = int(hits.sum())
    frac = count / N
    return MeasureEstimate(frac, count, N, int(seed), Q, G, Z_95 * math.sqrt(frac * (1 - frac) / N))


def shell_count(n: int, h: int) -> int:
    """Number of q in Z^n with sup norm exactly h."""
    return (2 * h + 1) ** n - (2 * h - 1) ** n


def tail_bound(cfg: SceneConfig, G: int, Q: int) -> float:
    """Union bound on the measure of points with a witness of height in [G, Q] (Phi = I).

    Each q contributes at most min(1, 2 psi(|q|))^m; q and -q coincide when y = 0.
    """
    if not cfg.phi_is_identity:
        raise DomainError("the analytic tail bound needs Phi = I")
    h = np.arange(G, Q + 1)
    if isinstance(cfg.psi, MultiApproxFunction):
        psi = np.array(cfg.height_bound(h), dtype=float, ndmin=1)
    else:
        psi = np.array(cfg.psi(h), dtype=float, ndmin=1)
    counts = np.array([shell_count(cfg.n, int(v)) for v in h], dtype=float)
    total = float(np.sum(counts * np.minimum(1.0, 2.0 * psi) ** cfg.m))
    return total / 2.0 if cfg.homogeneous else total


# ---------------------------------------------------------------------------
# box counting by exact slab rasterization
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BoxCountSeries:
    Q: np.ndarray
    delta: np.ndarray
    lower: np.ndarray
    counts: np.ndarray
    slope: float
    intercept: float
    residual: float
    method: str

    @property
    def log_inv_delta(self) -> np.ndarray:
        return np.log(1.0 / self.delta)

    @property
    def log_count(self) -> np.ndarray:
        return np.log(self.counts.astype(float))


def _pair_list(cfg: SceneConfig, G: int, Q: int):
    """(q, shift c = p Phi - y, radius) for every pair with G < |q| <= Q whose set meets the cube.

    Only pairs with positive radius are kept; +-(p, q) duplicates are dropped
    when they define the same set.
    """
    n, m = cfg.n, cfg.m
    qs = _q_range(n, G + 1, Q, _sign_symmetric(cfg)) if G < Q else np.zeros((0, n), dtype=np.int64)
    if not len(qs):
        return np.zeros((0, n), np.int64), np.zeros((0, m)), np.zeros(0), np.zeros((0, m), np.int64)
    heights = np.abs(qs).max(axis=1)
    rbound = np.asarray(cfg.height_bound(heights), dtype=float)
    keep = rbound > 0
    qs, rbound = qs[keep], rbound[keep]
    Phi, y = cfg.Phi, cfg.y
    # range of q x over the cube, per q (same for every column)
    qmin = np.minimum(qs, 0).sum(axis=1).astype(float)
    qmax = np.maximum(qs, 0).sum(axis=1).astype(float)
    out_q, out_c, out_p = [], [], []
    if not np.any(Phi):
        P = np.zeros((len(qs), m), dtype=np.int64)
        out_q.append(qs)
        out_p.append(P)
        out_c.append(np.broadcast_to(-y, (len(qs), m)).copy())
    else:
        try:
            inv = np.linalg.inv(Phi)
        except np.linalg.LinAlgError as exc:
            raise DomainError("box counting needs an invertible or zero Phi") from exc
        colsum = np.abs(inv).sum(axis=0)
        for i in range(len(qs)):
            # need (p Phi)_l in (y_l - qmax - r, y_l - qmin + r)
            lo_v = y - qmax[i] - rbound[i]
            hi_v = y - qmin[i] + rbound[i]
            centre = (lo_v + hi_v) / 2.0 @ inv
            half = (hi_v - lo_v)[0] / 2.0 * colsum if m == 1 else np.max(hi_v - lo_v) / 2.0 * colsum
            lo_p = np.ceil(centre - half - 1e-9).astype(np.int64)
            hi_p = np.floor(centre + half + 1e-9).astype(np.int64)
            if np.any(hi_p < lo_p):
                continue
            axes = [np.arange(lo_p[c], hi_p[c] + 1) for c in range(m)]
            P = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, m)
            c = P.astype(float) @ Phi - y
            ok = np.all((c + qmin[i] < rbound[i]) & (c + qmax[i] > -rbound[i]), axis=1)
            P, c = P[ok], c[ok]
            out_q.append(np.repeat(qs[i][None, :], len(P), axis=0))
            out_p.append(P)
            out_c.append(c)
    if not out_q:
        return np.zeros((0, n), np.int64), np.zeros((0, m)), np.zeros(0), np.zeros((0, m), np.int64)
    Qv = np.vstack(out_q).astype(np.int64)
    P = np.vstack(out_p).astype(np.int64)
    C = np.vstack(out_c).astype(float)
    R = np.asarray(cfg.psi_values(P, Qv), dtype=float)
    live = R > 0
    return Qv[live], C[live], R[live], P[live]


def _count_1d(Qv, C, R, D: int) -> int:
    """Cells of [0,1] (D of them) meeting a union of open intervals |q x + c| < r."""
    if not len(Qv):
        return 0
    q = Qv[:, 0].astype(float)
    a = (-R - C[:, 0]) / q
    b = (R - C[:, 0]) / q
    lo = np.minimum(a, b)
    hi = np.maximum(a, b)
    i0 = np.maximum(np.floor(lo * D), 0).astype(np.int64)
    i1 = np.minimum(np.ceil(hi * D) - 1, D - 1).astype(np.int64)
    ok = i0 <= i1
    i0, i1 = i0[ok], i1[ok]
    if not len(i0):
        return 0
    order = np.argsort(i0, kind="stable")
    i0, i1 = i0[order], i1[order]
    run_end = np.maximum.accumulate(i1)
    # a new run starts where the interval begins after everything before it ended
    starts = np.ones(len(i0), dtype=bool)
    starts[1:] = i0[1:] > run_end[:-1]
    s_idx = np.nonzero(starts)[0]
    e_idx = np.append(s_idx[1:] - 1, len(i0) - 1)
    return int(np.sum(run_end[e_idx] - i0[s_idx] + 1))


def _count_columns_product(Qv, C, R, D: int, m: int) -> int:
    """n = 1, m >= 2: each pair is a box; union counted on a dense D^m grid."""
    grid = np.zeros((D,) * m, dtype=bool)
    q = Qv[:, 0].astype(float)
    for t in range(len(q)):
        sl = []
        for l in range(m):
            a = (-R[t] - C[t, l]) / q[t]
            b = (R[t] - C[t, l]) / q[t]
            lo, hi = min(a, b), max(a, b)
            i0 = max(int(math.floor(lo * D)), 0)
            i1 = min(int(math.ceil(hi * D)) - 1, D - 1)
            if i0 > i1:
                break
            sl.append(slice(i0, i1 + 1))
        else:
            grid[tuple(sl)] = True
    return int(grid.sum())


def _count_sampled(Qv, C, R, D: int, n: int, m: int, samples: int, seed: int) -> int:
    """Estimate of the cell count from ``samples`` uniformly drawn cells, each tested exactly."""
    total = float(D) ** (n * m)
    rng = block_rng(seed, 0)
    cells = rng.integers(0, D, size=(samples, n * m), dtype=np.int64)
    hit = _kernels.cells_meet_slabs(cells, D, n, m, Qv, C, R)
    return int(round(hit.mean() * total))


MAX_DENSE_CELLS = 1 << 28


def count_cells(cfg: SceneConfig, G: int, Q: int, D: int, samples: int = 20000, seed: int = 0) -> tuple[int, str]:
    """Grid cells of side 1/D meeting the union over G < |q| <= Q of {|q x + p Phi - y| < psi}."""
    n, m = cfg.n, cfg.m
    Qv, C, R, _ = _pair_list(cfg, G, Q)
    if n == 1 and m == 1:
        return _count_1d(Qv, C, R, D), "exact"
    if m == 1 and n <= 3 and D ** n <= MAX_DENSE_CELLS:
        grid = np.zeros(D ** n, dtype=np.uint8)
        _kernels.raster_slabs(grid, D, n, Qv, C[:, 0].copy(), R)
        return int(grid.sum(dtype=np.int64)), "exact"
    if n == 1 and m <= 3 and D ** m <= MAX_DENSE_CELLS:
        return _count_columns_product(Qv, C, R, D, m), "exact"
    warnings.warn(f"no exact rasterizer for n={n}, m={m}, D={D}; sampling {samples} cells", stacklevel=2)
    return _count_sampled(Qv, C, R, D, n, m, samples, seed), "sampled"


def _parse_schedule(schedule) -> list[tuple[int, float, int | None]]:
    out = []
    for entry in schedule:
        if len(entry) == 2:
            Qt, dt = entry
            Gt = None
        else:
            Qt, dt, Gt = entry
        out.append((int(Qt), float(dt), None if Gt is None else int(Gt)))
    return out


def box_count(cfg: SceneConfig, schedule: Sequence, lower: str | int = "shell",
              samples: int = 20000, seed: int = 0) -> BoxCountSeries:
    """Box counts of truncated unions and the least-squares slope of log N against log(1/delta).

    Each schedule entry is (Q_t, delta_t) or (Q_t, delta_t, G_t).  The union is
    over heights G_t < |q| <= Q_t.  ``lower`` sets the default G_t: "shell"
    uses the dyadic shell G_t = Q_t // 2, "union" uses G_t = 0, an integer is
    used as is.
    """
    sched = _parse_schedule(schedule)
    if len(sched) < 3:
        raise DomainError("box counting needs at least 3 scales")
    deltas = np.array([s[1] for s in sched])
    if np.any(np.diff(deltas) >= 0):
        raise DomainError("scales must be strictly decreasing")
    Qs, Gs, Ns, methods = [], [], [], set()
    for Qt, dt, Gt in sched:
        D = int(round(1.0 / dt))
        if D < 1 or abs(D * dt - 1.0) > 1e-9:
            raise DomainError(f"delta = {dt} does not divide the unit cube evenly")
        if Gt is None:
            if lower == "shell":
                Gt = Qt // 2
            elif lower == "union":
                Gt = 0
            else:
                Gt = int(lower)
        count, method = count_cells(cfg, Gt, Qt, D, samples, seed)
        methods.add(method)
        Qs.append(Qt)
        Gs.append(Gt)
        Ns.append(count)
    Ns_arr = np.array(Ns, dtype=np.int64)
    if np.any(Ns_arr <= 0):
        raise DomainError("empty count at some scale: slope undefined")
    x = np.log(1.0 / deltas)
    yv = np.log(Ns_arr.astype(float))
    coef, res, *_ = np.polyfit(x, yv, 1, full=True)
    resid = float(res[0]) if len(res) else 0.0
    return BoxCountSeries(np.array(Qs), deltas, np.array(Gs), Ns_arr, float(coef[0]), float(coef[1]),
                          resid, "exact" if methods == {"exact"} else "sampled")


# ---------------------------------------------------------------------------
# Hausdorff f-measure upper bounds
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Slab:
    """Points within ``half_width`` of the disc plane cap B(centre, radius), for a cover target."""

    plane: AffinePlane
    container: Ball
    half_width: float = 0.0

    @property
    def section(self):
        return plane_section(self.plane, self.container)


def segment(a, b) -> Slab:
    """The closed segment [a, b] as a zero-width slab."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    mid = (a + b) / 2.0
    plane = AffinePlane.through(mid, [b - a])
    return Slab(plane, Ball(mid, float(np.linalg.norm(b - a)) / 2.0), 0.0)


def _ball_cover(radius: float, k: int, rho: float) -> tuple[int, float]:
    if radius <= rho:
        return 1, radius
    per_side = math.ceil(radius * math.sqrt(k) / rho - 1e-12)
    return per_side ** k, rho


def _slab_cover(s: Slab, rho: float) -> int:
    sec = s.section
    if sec is None:
        return 0
    _, a = sec
    k, l, m = s.plane.k, s.plane.l, s.plane.m
    w = s.half_width
    options = []
    if w < rho:
        eff = math.sqrt(rho * rho - w * w)
        side = math.ceil(a * math.sqrt(l) / eff - 1e-12) if l else 1
        options.append(max(side, 1) ** l)
    # thick slab: cube grid over its bounding box
    side_in = max(math.ceil(a * math.sqrt(k) / rho - 1e-12), 1)
    side_out = max(math.ceil(w * math.sqrt(k) / rho - 1e-12), 1)
    options.append(side_in ** l * side_out ** m)
    return min(options)


def hausdorff_f_upper(targets: Sequence[Ball | Slab], f: DimensionFunction, rho: float) -> float:
    """Sum of f over a greedy rho-cover of the union of the targets (an upper bound of H^f_rho)."""
    if not rho > 0:
        raise DomainError("rho must be positive")
    total = 0.0
    for t in targets:
        if isinstance(t, Ball):
            cnt, r = _ball_cover(t.radius, t.k, rho)
            total += cnt * eval_f(f, r)
        else:
            total += _slab_cover(t, rho) * eval_f(f, rho)
    return total


# ---------------------------------------------------------------------------
# mass distribution check
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MdpReport:
    max_ratio: float
    passed: bool
    lower_bound: float
    checked: int
    ratios: np.ndarray = field(repr=False)


def verify_mdp_bound(mu: Callable[[Ball], float], f: DimensionFunction, c: float, r0: float,
                     samples: Sequence[Ball], total_mass: float = 1.0) -> MdpReport:
    """Check mu(B) <= c f(r(B)) on sample balls with r(B) <= r0; H^f(E) >= total_mass / c."""
    if not c > 0:
        raise DomainError("c must be positive")
    ratios = []
    for B in samples:
        if B.radius > r0:
            continue
        ratios.append(mu(B) / eval_f(f, B.radius))
    arr = np.array(ratios, dtype=float)
    mx = float(arr.max()) if arr.size else 0.0
    # ratios are formed in floating point; allow rounding in the last few bits
    return MdpReport(mx, bool(mx <= c * (1.0 + 1e-9)), total_mass / c, int(arr.size), arr)


def uniform_interval_measure(B: Ball) -> float:
    """Lebesgue measure of B cap [0, 1] for a ball in R^1."""
    x, r = float(B.center[0]), B.radius
    return max(0.0, min(1.0, x + r) - max(0.0, x - r))
