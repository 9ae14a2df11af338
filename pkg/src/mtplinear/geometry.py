"""Balls, affine planes, resonant planes, distances and covering helpers."""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Sequence

import numpy as np

from .dimfun import DimensionFunction, DomainError, eval_f


# ---------------------------------------------------------------------------
# norms
# ---------------------------------------------------------------------------


def euclidean_norm(v: np.ndarray) -> np.ndarray:
    return np.linalg.norm(np.asarray(v, dtype=float), axis=-1)


def column_norm(x, n: int, m: int):
    """sqrt(n) * max over the m columns of the n x m matrix x of their Euclidean norms.

    ``x`` is flattened row-major, so x[i*m + l] is the entry in row i, column l.
    Accepts a single point or an array of points along the leading axes.
    """
    arr = np.asarray(x, dtype=float)
    if arr.shape[-1] != n * m:
        raise DomainError(f"expected {n * m} coordinates, got {arr.shape[-1]}")
    mat = arr.reshape(arr.shape[:-1] + (n, m))
    cols = np.sqrt(np.sum(mat * mat, axis=-2))
    out = math.sqrt(n) * cols.max(axis=-1)
    return float(out) if np.ndim(out) == 0 else out


def make_column_norm(n: int, m: int) -> Callable[[np.ndarray], np.ndarray]:
    return lambda v: column_norm(v, n, m)


# ---------------------------------------------------------------------------
# balls
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Ball:
    center: np.ndarray
    radius: float

    def __post_init__(self):
        c = np.atleast_1d(np.asarray(self.center, dtype=float)).copy()
        c.setflags(write=False)
        object.__setattr__(self, "center", c)
        if not (self.radius > 0 and math.isfinite(self.radius)):
            raise DomainError(f"ball radius must be positive, got {self.radius}")
        object.__setattr__(self, "radius", float(self.radius))

    @property
    def k(self) -> int:
        return int(self.center.shape[0])

    def scaled(self, lam: float) -> "Ball":
        return Ball(self.center, lam * self.radius)

    def intersects(self, other: "Ball", norm=euclidean_norm) -> bool:
        """Closed balls meet iff the centre distance is at most the radius sum."""
        return float(norm(self.center - other.center)) <= self.radius + other.radius

    def contains_ball(self, other: "Ball", norm=euclidean_norm) -> bool:
        return float(norm(self.center - other.center)) + other.radius <= self.radius

    def contains_point(self, x, norm=euclidean_norm) -> bool:
        return float(norm(np.asarray(x, dtype=float) - self.center)) <= self.radius

    def __eq__(self, other):
        return (isinstance(other, Ball) and self.radius == other.radius
                and np.array_equal(self.center, other.center))

    def __hash__(self):
        return hash((self.radius, self.center.tobytes()))

    def __repr__(self):
        c = ", ".join(f"{v:.6g}" for v in self.center)
        return f"Ball(({c}), {self.radius:.6g})"


def unit_ball_volume(k: int) -> float:
    return math.pi ** (k / 2) / math.gamma(k / 2 + 1)


def ball_volume(radius, k: int):
    """Lebesgue measure of a Euclidean ball of the given radius in R^k."""
    return unit_ball_volume(k) * np.asarray(radius, dtype=float) ** k


# ---------------------------------------------------------------------------
# affine planes
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class AffinePlane:
    """{x in R^k : rows @ x = offsets}, rows of full rank m = k - l."""

    rows: np.ndarray
    offsets: np.ndarray

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.rows, dtype=float))
        b = np.atleast_1d(np.asarray(self.offsets, dtype=float))
        if A.shape[0] != b.shape[0]:
            raise DomainError("one offset per normal row is required")
        if np.linalg.matrix_rank(A) != A.shape[0]:
            raise DomainError("normal rows must be linearly independent")
        # orthonormal bases of the normal space and of the direction space
        u, sv, vt = np.linalg.svd(A)
        m = A.shape[0]
        normal = vt[:m].T  # k x m
        direc = vt[m:].T  # k x l
        base = np.linalg.lstsq(A, b, rcond=None)[0]
        for name, val in (("rows", A), ("offsets", b), ("normal_basis", normal),
                          ("direction_basis", direc), ("base_point", base)):
            val.setflags(write=False)
            object.__setattr__(self, name, val)

    # declared for type checkers; filled in __post_init__
    normal_basis: np.ndarray = None  # type: ignore[assignment]
    direction_basis: np.ndarray = None  # type: ignore[assignment]
    base_point: np.ndarray = None  # type: ignore[assignment]

    @classmethod
    def through(cls, point, directions) -> "AffinePlane":
        """Plane through ``point`` spanned by ``directions`` (rows)."""
        point = np.asarray(point, dtype=float)
        k = point.shape[0]
        D = np.atleast_2d(np.asarray(directions, dtype=float)) if len(directions) else np.zeros((0, k))
        if D.shape[0]:
            _, _, vt = np.linalg.svd(D)
            rank = np.linalg.matrix_rank(D)
            normal = vt[rank:]
        else:
            normal = np.eye(k)
        return cls(normal, normal @ point)

    @property
    def k(self) -> int:
        return int(self.rows.shape[1])

    @property
    def m(self) -> int:
        return int(self.rows.shape[0])

    @property
    def l(self) -> int:
        return self.k - self.m

    def distance(self, x) -> np.ndarray | float:
        """Euclidean distance from x (one point or an array of points) to the plane."""
        d = np.asarray(x, dtype=float) - self.base_point
        out = np.linalg.norm(d @ self.normal_basis, axis=-1)
        return float(out) if np.ndim(out) == 0 else out

    def project(self, x) -> np.ndarray:
        d = np.asarray(x, dtype=float) - self.base_point
        return np.asarray(x, dtype=float) - (d @ self.normal_basis) @ self.normal_basis.T

    def point(self, t) -> np.ndarray:
        """Point base + D t for coordinates t in the orthonormal direction basis."""
        return self.base_point + np.asarray(t, dtype=float) @ self.direction_basis.T

    def contains(self, x, tol: float = 1e-12) -> bool:
        res = self.rows @ np.asarray(x, dtype=float) - self.offsets
        scale = 1.0 + float(np.abs(self.offsets).max(initial=0.0))
        return bool(np.all(np.abs(res) <= tol * scale))


# ---------------------------------------------------------------------------
# resonant planes R_{p,q} = {x : q x + p Phi - y = 0}
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ResonantPlane:
    p: tuple[int, ...]
    q: tuple[int, ...]
    y: tuple[float, ...] | None = None
    Phi: tuple[tuple[float, ...], ...] | None = None

    def __post_init__(self):
        p = tuple(int(v) for v in self.p)
        q = tuple(int(v) for v in self.q)
        if not q or all(v == 0 for v in q):
            raise DomainError("q must be a non-zero integer vector")
        m = len(p)
        y = tuple(float(v) for v in (self.y if self.y is not None else (0.0,) * m))
        if self.Phi is None:
            Phi = tuple(tuple(1.0 if i == j else 0.0 for j in range(m)) for i in range(m))
        else:
            Phi = tuple(tuple(float(v) for v in row) for row in self.Phi)
        if len(y) != m or len(Phi) != m or any(len(r) != m for r in Phi):
            raise DomainError("y must have m entries and Phi must be m x m")
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "Phi", Phi)

    @property
    def n(self) -> int:
        return len(self.q)

    @property
    def m(self) -> int:
        return len(self.p)

    @property
    def k(self) -> int:
        return self.n * self.m

    @property
    def l(self) -> int:
        return self.m * (self.n - 1)

    def shift(self) -> np.ndarray:
        """The constant part p Phi - y of the m linear forms."""
        return np.asarray(self.p, dtype=float) @ np.asarray(self.Phi, dtype=float) - np.asarray(self.y)

    def residual(self, x) -> np.ndarray:
        """q x + p Phi - y, a vector of length m (or an array of them)."""
        arr = np.asarray(x, dtype=float)
        mat = arr.reshape(arr.shape[:-1] + (self.n, self.m))
        qx = np.einsum("i,...il->...l", np.asarray(self.q, dtype=float), mat)
        return qx + self.shift()

    def residual_exact(self, x: Sequence[Fraction | int]) -> list[Fraction]:
        """Exact residual with rational arithmetic (Phi and y converted exactly)."""
        n, m = self.n, self.m
        xs = [Fraction(v) for v in x]
        out = []
        for col in range(m):
            val = sum((self.q[i] * xs[i * m + col] for i in range(n)), Fraction(0))
            val += sum((self.p[j] * Fraction(self.Phi[j][col]) for j in range(m)), Fraction(0))
            out.append(val - Fraction(self.y[col]))
        return out

    def to_affine(self) -> AffinePlane:
        n, m = self.n, self.m
        A = np.zeros((m, n * m))
        for col in range(m):
            for i in range(n):
                A[col, i * m + col] = self.q[i]
        return AffinePlane(A, -self.shift())


def dist_to_resonant(x, R: ResonantPlane):
    """sqrt(n) |q x + p Phi - y|_sup / |q|_2: distance in the column norm."""
    res = np.abs(R.residual(x))
    qn = math.sqrt(sum(v * v for v in R.q))
    out = math.sqrt(R.n) * res.max(axis=-1) / qn
    return float(out) if np.ndim(out) == 0 else out


def in_neighborhood(x, R, delta: float) -> bool:
    """Strict membership dist(x, R) < delta (column norm for resonant planes)."""
    if delta < 0:
        raise DomainError("delta must be non-negative")
    if isinstance(R, ResonantPlane):
        return bool(dist_to_resonant(x, R) < delta)
    return bool(R.distance(x) < delta)


# ---------------------------------------------------------------------------
# covering and packing
# ---------------------------------------------------------------------------


class _CellHash:
    """Uniform grid hash of selected balls for fast neighbour queries."""

    def __init__(self, cell: float, k: int):
        self.cell = cell
        self.k = k
        self.cells: dict[tuple[int, ...], list[int]] = {}

    def key(self, c: np.ndarray) -> tuple[int, ...]:
        return tuple(int(math.floor(v / self.cell)) for v in c)

    def add(self, idx: int, c: np.ndarray) -> None:
        self.cells.setdefault(self.key(c), []).append(idx)

    def near(self, c: np.ndarray, reach: int = 1):
        base = self.key(c)
        for off in np.ndindex(*([2 * reach + 1] * self.k)):
            got = self.cells.get(tuple(b + o - reach for b, o in zip(base, off)))
            if got:
                yield from got


def five_r_cover_indices(centers: np.ndarray, radii: np.ndarray, norm=euclidean_norm) -> list[int]:
    """Indices selected by the greedy rule: radius descending, ties by input index."""
    centers = np.asarray(centers, dtype=float)
    radii = np.asarray(radii, dtype=float)
    if len(radii) == 0:
        return []
    if centers.ndim == 1:
        centers = centers[:, None]
    order = sorted(range(len(radii)), key=lambda i: (-radii[i], i))
    grid = _CellHash(2.0 * float(radii.max()), centers.shape[1])
    chosen: list[int] = []
    for i in order:
        c, r = centers[i], radii[i]
        ok = True
        for j in grid.near(c):
            if float(norm(c - centers[j])) <= r + radii[j]:
                ok = False
                break
        if ok:
            chosen.append(i)
            grid.add(i, c)
    return chosen


def five_r_cover(balls: Sequence[Ball], norm=euclidean_norm) -> list[Ball]:
    """Greedy disjoint subfamily whose 5-fold dilates cover every input ball."""
    if not balls:
        return []
    centers = np.array([b.center for b in balls])
    radii = np.array([b.radius for b in balls])
    return [balls[i] for i in five_r_cover_indices(centers, radii, norm)]


def f_scaled_ball(B: Ball, f: DimensionFunction) -> Ball:
    """B^f = B(x, f(r)^{1/k})."""
    return Ball(B.center, eval_f(f, B.radius) ** (1.0 / B.k))


def plane_section(plane: AffinePlane, container: Ball) -> tuple[np.ndarray, float] | None:
    """Centre and radius of the closed disc plane cap container, or None when empty."""
    d = plane.distance(container.center)
    if d > container.radius:
        return None
    return plane.project(container.center), math.sqrt(max(container.radius ** 2 - d * d, 0.0))


def separated_pack_centers(plane: AffinePlane, container: Ball, separation: float) -> np.ndarray:
    """Greedy lattice scan (step separation/4) of plane cap container.

    Grid points are visited in lexicographic order of their plane coordinates
    and accepted when their Euclidean distance to every accepted point
    strictly exceeds ``separation``.
    """
    if separation <= 0:
        raise DomainError("separation must be positive")
    sec = plane_section(plane, container)
    k = plane.k
    if sec is None:
        return np.zeros((0, k))
    c0, rho = sec
    l = plane.l
    if l == 0:
        return c0[None, :]
    h = separation / 4.0
    # grid offsets that sit exactly at the separation are ties; reject them robustly
    separation = separation * (1.0 + 1e-12)
    steps = int(math.floor(2.0 * rho / h + 1e-9))
    axis = -rho + h * np.arange(steps + 1)
    if l == 1:
        pts = c0 + axis[:, None] @ plane.direction_basis.T
        return _greedy_line(pts, separation)
    mesh = np.stack(np.meshgrid(*([axis] * l), indexing="ij"), axis=-1).reshape(-1, l)
    mesh = mesh[np.linalg.norm(mesh, axis=1) <= rho]
    pts = c0 + mesh @ plane.direction_basis.T
    accepted: list[np.ndarray] = []
    grid = _CellHash(separation, k)
    for p in pts:
        ok = True
        for j in grid.near(p):
            if np.linalg.norm(p - accepted[j]) <= separation:
                ok = False
                break
        if ok:
            grid.add(len(accepted), p)
            accepted.append(p)
    return np.array(accepted).reshape(-1, k)


def _greedy_line(pts: np.ndarray, separation: float) -> np.ndarray:
    """Greedy acceptance along an ordered line: only the last accepted point matters."""
    if len(pts) == 0:
        return pts
    # on a uniform grid the accepted indices are equally spaced; try that first
    stride = 1
    while stride < len(pts) and np.linalg.norm(pts[stride] - pts[0]) <= separation:
        stride += 1
    cand = pts[::stride]
    gaps = np.linalg.norm(np.diff(cand, axis=0), axis=1)
    if np.all(gaps > separation) and _stride_is_greedy(pts, stride, separation):
        return cand
    keep = [0]
    for i in range(1, len(pts)):
        if np.linalg.norm(pts[i] - pts[keep[-1]]) > separation:
            keep.append(i)
    return pts[keep]


def _stride_is_greedy(pts: np.ndarray, stride: int, separation: float) -> bool:
    """Check that stride - 1 steps never clear the separation anywhere along the line."""
    if stride <= 1:
        return True
    d = np.linalg.norm(pts[stride - 1:] - pts[: len(pts) - stride + 1], axis=1)
    return bool(np.all(d <= separation))


def separated_pack(plane: AffinePlane, container: Ball, separation: float, point_radius: float) -> list[Ball]:
    """Maximal separated family of centres on plane cap container, as balls of ``point_radius``."""
    centers = separated_pack_centers(plane, container, separation)
    return [Ball(c, point_radius) for c in centers]
