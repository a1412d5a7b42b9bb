"""Euclidean-limit theory checks, scale selection and curve algebra.

With an affine manifold and an infinite kernel window the covariance has a
closed form and the optimal curve admits a combinatorial description: a
concatenation of two in-hyperplane segments and a straight run along the
leading axis. The lattice dynamic program here is an independent brute-force
oracle for that description; the envelope transform and the alignment
functional let the optimality statements be checked numerically.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field
from itertools import product
from typing import Callable, Optional

import numpy as np

from .bvp import DiscreteCurve, Mesh
from .errors import (GridTooLarge, LengthBudgetExceeded, NoCrossing,
                     OutOfRange, ZeroLeadingEigenvalue, ZeroSegment)

MAX_LATTICE_NODES = 4096


@dataclass(frozen=True)
class EuclideanField:
    """Unit vector field on R^d with an orthonormal basis whose first
    direction is the field at the origin point."""

    basis: np.ndarray            # (d, d), columns v_1 ... v_d
    evaluator: Callable          # x -> unit vector
    origin: np.ndarray

    def __post_init__(self):
        B = np.asarray(self.basis, dtype=float)
        object.__setattr__(self, "basis", B)
        object.__setattr__(self, "origin", np.asarray(self.origin, dtype=float))
        if not np.allclose(B.T @ B, np.eye(B.shape[1]), atol=1e-10):
            raise ValueError("basis must be orthonormal")

    def __call__(self, x) -> np.ndarray:
        w = np.asarray(self.evaluator(np.asarray(x, dtype=float)), dtype=float)
        return w

    def coords(self, x) -> np.ndarray:
        """Coordinates of ambient points in the field basis."""
        return np.asarray(x, dtype=float) @ self.basis


def sigma_infinity(points, x) -> np.ndarray:
    """Sample second-moment matrix (1/n) sum (x_i - x)(x_i - x)^T."""
    P = np.atleast_2d(np.asarray(points, dtype=float))
    diff = P - np.asarray(x, dtype=float)
    return diff.T @ diff / len(P)


def discrete_objective(path, field: Callable) -> float:
    """Alignment Riemann sum with midpoint field evaluation per segment."""
    P = np.atleast_2d(np.asarray(path, dtype=float))
    mids = 0.5 * (P[:-1] + P[1:])
    W = np.array([field(m) for m in mids])
    return float(np.sum((P[1:] - P[:-1]) * W))


# ---------------------------------------------------------------------------
# assumption report
# ---------------------------------------------------------------------------

@dataclass
class ClauseReport:
    passed: bool
    worst_value: float = np.inf
    worst_point: Optional[np.ndarray] = None


def assumption_check(field: EuclideanField, grid, endpoints, tol: float = 1e-12,
                     col_tol: float = 1e-9) -> dict:
    """Check the three structural clauses of the vector field on a grid.

    (a) the endpoints sit on opposite sides of the leading hyperplane;
    (b) the leading field component is nonnegative and each transverse
        component has the sign of (v_i.x)(v_1.x);
    (c) within the endpoint band, |v_i.W| grows with |v_1.x| along grid
        columns sharing their transverse coordinates.

    Returns {'a': ClauseReport, 'b': ..., 'c': ...} with the worst violation
    and its location.
    """
    x1, x2 = (np.asarray(e, dtype=float) for e in endpoints)
    B = field.basis
    d = B.shape[0]
    grid = np.atleast_2d(np.asarray(grid, dtype=float))

    a1, a2 = float(x1 @ B[:, 0]), float(x2 @ B[:, 0])
    rep_a = ClauseReport(passed=(a1 < 0 and a2 > 0),
                         worst_value=min(-a1, a2), worst_point=None)

    rep_b = ClauseReport(passed=True)
    Z = grid @ B
    W = np.array([field(x) for x in grid])
    WZ = W @ B
    for x, z, wz in zip(grid, Z, WZ):
        vals = [wz[0]]
        vals += [wz[i] * z[i] * z[0] for i in range(1, d)]
        worst = min(vals)
        if worst < rep_b.worst_value:
            rep_b.worst_value, rep_b.worst_point = worst, x
    rep_b.passed = rep_b.worst_value >= -tol

    band = max(abs(a1), abs(a2))
    rep_c = ClauseReport(passed=True)
    in_band = np.abs(Z[:, 0]) <= band + tol
    # group grid points into columns sharing transverse coordinates
    keys = np.round(Z[in_band][:, 1:] / col_tol).astype(np.int64)
    cols: dict = {}
    for row, key in zip(np.flatnonzero(in_band), map(tuple, keys)):
        cols.setdefault(key, []).append(row)
    for rows in cols.values():
        rows = sorted(rows, key=lambda r: abs(Z[r, 0]))
        for i in range(1, d):
            mags = np.abs(WZ[rows, i])
            gaps = mags[:-1] - mags[1:]  # positive gap = violation
            if gaps.size:
                j = int(np.argmax(gaps))
                if -gaps[j] < rep_c.worst_value:
                    rep_c.worst_value = -gaps[j]
                    rep_c.worst_point = grid[rows[j]]
    rep_c.passed = rep_c.worst_value >= -tol
    return {"a": rep_a, "b": rep_b, "c": rep_c}


# ---------------------------------------------------------------------------
# lattice dynamic program
# ---------------------------------------------------------------------------

@dataclass
class LatticePathProblem:
    """Directed-lattice search space for field-aligned monotone paths.

    ``axes`` holds the node coordinates per axis, ``field_values`` the unit
    field samples at every lattice node (shape grid_shape + (d,)).
    """

    axes: list
    start: tuple
    end: tuple
    field_values: np.ndarray

    def __post_init__(self):
        self.axes = [np.asarray(a, dtype=float) for a in self.axes]
        shape = self.shape
        if int(np.prod(shape)) > MAX_LATTICE_NODES:
            raise GridTooLarge(f"{np.prod(shape)} lattice nodes exceed "
                               f"{MAX_LATTICE_NODES}")
        for name, idx in (("start", self.start), ("end", self.end)):
            if len(idx) != len(shape) or any(not (0 <= i < s) for i, s in zip(idx, shape)):
                raise ValueError(f"{name} index {idx} outside the grid")
        self.field_values = np.asarray(self.field_values, dtype=float)
        if self.field_values.shape != shape + (len(shape),):
            raise ValueError("field_values must have shape grid_shape + (d,)")

    @property
    def shape(self) -> tuple:
        return tuple(len(a) for a in self.axes)

    @classmethod
    def from_field(cls, field: Callable, axes, start, end) -> "LatticePathProblem":
        axes = [np.asarray(a, dtype=float) for a in axes]
        shape = tuple(len(a) for a in axes)
        d = len(axes)
        vals = np.empty(shape + (d,))
        for idx in product(*(range(s) for s in shape)):
            x = np.array([axes[k][idx[k]] for k in range(d)])
            vals[idx] = field(x)
        return cls(axes, tuple(start), tuple(end), vals)

    def node_point(self, idx) -> np.ndarray:
        return np.array([self.axes[k][idx[k]] for k in range(len(self.axes))])


@dataclass
class LatticePath:
    indices: list
    points: np.ndarray
    value: float


def lattice_oracle(problem: LatticePathProblem, tol: float = 1e-12) -> LatticePath:
    """Exact optimal field-aligned lattice path by dynamic programming.

    Steps move one cell along a single axis and are admissible when the step
    component of the edge field (mean of the endpoint samples) does not
    oppose the motion. Value iteration with strict-improvement updates is
    exact on these graphs and detects a (non-physical) positive cycle.
    """
    shape = problem.shape
    d = len(shape)
    nodes = list(product(*(range(s) for s in shape)))
    index = {idx: i for i, idx in enumerate(nodes)}
    F = problem.field_values

    edges = []  # (u, v, weight)
    for idx in nodes:
        for axis in range(d):
            if idx[axis] + 1 >= shape[axis]:
                continue
            nxt = list(idx)
            nxt[axis] += 1
            nxt = tuple(nxt)
            dx = problem.axes[axis][nxt[axis]] - problem.axes[axis][idx[axis]]
            wcomp = 0.5 * (F[idx][axis] + F[nxt][axis])
            wgt = dx * wcomp
            if wgt >= -tol:
                edges.append((index[idx], index[nxt], wgt))
            if -wgt >= -tol:
                edges.append((index[nxt], index[idx], -wgt))

    n = len(nodes)
    value = np.full(n, -np.inf)
    pred = np.full(n, -1, dtype=np.int64)
    value[index[problem.start]] = 0.0
    for rounds in range(2 * n):
        changed = False
        for u, v, w in edges:
            if value[u] > -np.inf and value[u] + w > value[v] + tol:
                value[v] = value[u] + w
                pred[v] = u
                changed = True
        if not changed:
            break
    else:
        raise GridTooLarge("value iteration failed to settle (positive cycle?)")

    tgt = index[problem.end]
    if not np.isfinite(value[tgt]):
        raise NoCrossing("no admissible lattice path reaches the end node")
    chain = [tgt]
    seen = {tgt}
    while chain[-1] != index[problem.start]:
        p = int(pred[chain[-1]])
        if p < 0 or p in seen:
            raise GridTooLarge("predecessor chain is inconsistent")
        chain.append(p)
        seen.add(p)
    chain.reverse()
    idx_path = [nodes[i] for i in chain]
    pts = np.array([problem.node_point(i) for i in idx_path])
    return LatticePath(idx_path, pts, float(value[tgt]))


# ---------------------------------------------------------------------------
# the concatenated optimum and the envelope transform
# ---------------------------------------------------------------------------

@dataclass
class ConcatenatedCurve:
    points: np.ndarray
    joints: tuple           # node indices of the two junction points
    segment_lengths: tuple  # lengths of the three pieces

    @property
    def length(self) -> float:
        return float(sum(self.segment_lengths))


def _polyline_length(P) -> float:
    return float(np.linalg.norm(np.diff(P, axis=0), axis=1).sum())


def _hyperplane_segment(field: EuclideanField, a, b, n_cells: int) -> np.ndarray:
    """Optimal aligned path from a to b inside a leading-coordinate
    hyperplane, via the lattice program in transverse coordinates.

    For one transverse dimension the admissible monotone path is unique (the
    straight run), and the program reduces to it.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    d = field.basis.shape[0]
    if np.allclose(a, b, atol=1e-14):
        return np.array([a, b])
    if d == 2:
        ts = np.linspace(0.0, 1.0, n_cells + 1)[:, None]
        return a + ts * (b - a)
    B = field.basis
    za, zb = a @ B, b @ B
    lead = za[0]  # shared leading coordinate on the hyperplane
    axes = [np.linspace(min(za[k], zb[k]), max(za[k], zb[k]), n_cells + 1)
            if abs(zb[k] - za[k]) > 1e-14 else np.array([za[k]])
            for k in range(1, d)]

    def hyper_field(zperp):
        x = B @ np.concatenate([[lead], zperp])
        return (field(x) @ B)[1:]

    def idx_of(z):
        return tuple(int(np.argmin(np.abs(ax - z[k]))) for k, ax in enumerate(axes))

    problem = LatticePathProblem.from_field(hyper_field, axes,
                                            idx_of(za[1:]), idx_of(zb[1:]))
    path = lattice_oracle(problem)
    return np.array([B @ np.concatenate([[lead], z]) for z in path.points])


def gamma_s(field: EuclideanField, x1, x2, n_cells: int = 40) -> ConcatenatedCurve:
    """Concatenation of two in-hyperplane optimal segments and the straight
    run along the leading axis between the endpoint projections.

    Requires the endpoints on opposite sides of the leading hyperplane and a
    total length within the unit budget.
    """
    x1 = np.asarray(x1, dtype=float)
    x2 = np.asarray(x2, dtype=float)
    v1 = field.basis[:, 0]
    a1, a2 = float(v1 @ x1), float(v1 @ x2)
    if not (a1 < 0 and a2 > 0):
        raise ValueError("endpoints must satisfy v1.x1 < 0 < v1.x2")
    p1 = a1 * v1
    p2 = a2 * v1
    seg1 = _hyperplane_segment(field, x1, p1, n_cells)
    seg2 = _hyperplane_segment(field, p2, x2, n_cells)
    mid = p1 + np.linspace(0.0, 1.0, n_cells + 1)[:, None] * (p2 - p1)
    lengths = (_polyline_length(seg1), _polyline_length(mid), _polyline_length(seg2))
    total = sum(lengths)
    if total > 1.0 + 1e-12:
        raise LengthBudgetExceeded(f"length {total:.6g} exceeds the unit budget")
    points = np.vstack([seg1, mid[1:], seg2[1:]])
    joints = (len(seg1) - 1, len(seg1) + len(mid) - 2)
    return ConcatenatedCurve(points, joints, lengths)


def _running_max(a):
    return np.maximum.accumulate(a)


def gamma_plus(path, basis, t0: int) -> np.ndarray:
    """Coordinate-wise monotone envelope of a path about its leading-axis
    crossing; the leading coordinate is preserved.

    Each transverse coordinate is replaced, before the crossing, by its
    running extremum clipped at zero (extremum and clip direction set by the
    sign of the starting coordinate) and, after the crossing, by the mirrored
    suffix construction anchored at the endpoint.
    """
    P = np.atleast_2d(np.asarray(path, dtype=float))
    B = np.asarray(basis, dtype=float)
    Z = P @ B
    z1 = Z[:, 0]
    crossings = np.flatnonzero(np.diff(np.sign(z1)) != 0)
    if np.all(z1 > 0) or np.all(z1 < 0):
        raise NoCrossing("leading coordinate never crosses zero")
    if not (0 <= t0 < len(P)):
        raise ValueError("split index outside the path")
    near_zero = abs(z1[t0]) <= 1e-9 * max(1.0, np.abs(z1).max())
    if not near_zero and not np.any((crossings >= t0 - 1) & (crossings <= t0)):
        raise ValueError("leading coordinate does not cross zero at the split")

    out = Z.copy()
    for i in range(1, Z.shape[1]):
        zi = Z[:, i]
        head, tail = zi[:t0 + 1], zi[t0:]
        if zi[0] <= 0:
            new_head = np.minimum(_running_max(head), 0.0)
        else:
            new_head = np.maximum(np.minimum.accumulate(head), 0.0)
        if zi[-1] <= 0:
            new_tail = np.minimum(_running_max(tail[::-1])[::-1], 0.0)
        else:
            new_tail = np.maximum(np.minimum.accumulate(tail[::-1])[::-1], 0.0)
        out[:t0 + 1, i] = new_head
        out[t0:, i] = new_tail
    return out @ B.T


# ---------------------------------------------------------------------------
# scale selection
# ---------------------------------------------------------------------------

def rho_measure(eigenvalues) -> float:
    """Transverse-to-leading spectrum ratio sum(lambda_2..)/lambda_1."""
    lam = np.asarray(eigenvalues, dtype=float)
    if lam[0] <= 0:
        raise ZeroLeadingEigenvalue("lambda_1 must be positive")
    return float(lam[1:].sum() / lam[0])


@dataclass(frozen=True)
class SweepEntry:
    h: float
    rho: Optional[float]
    eigenvalues: Optional[np.ndarray]
    neighbor_count: int
    is_argmin: bool = False


def h_sweep(x, points, h_values) -> list:
    """Spectrum ratio as a function of the window size at one point.

    Windows with fewer than two neighbors are recorded as gaps; the argmin
    entry is flagged.
    """
    x = np.asarray(x, dtype=float)
    P = np.atleast_2d(np.asarray(getattr(points, "points", points), dtype=float))
    if hasattr(points, "active_mask"):
        P = P[points.active_mask]
    dists = np.linalg.norm(P - x, axis=1)
    entries = []
    for h in h_values:
        sel = dists <= h
        count = int(sel.sum())
        if count < 2:
            entries.append(SweepEntry(float(h), None, None, count))
            continue
        diff = P[sel] - x
        lam = np.linalg.eigvalsh(diff.T @ diff / count)[::-1]
        rho = rho_measure(lam) if lam[0] > 0 else None
        entries.append(SweepEntry(float(h), rho, lam, count))
    finite = [(i, e.rho) for i, e in enumerate(entries) if e.rho is not None]
    if finite:
        i_min = min(finite, key=lambda t: t[1])[0]
        e = entries[i_min]
        entries[i_min] = SweepEntry(e.h, e.rho, e.eigenvalues, e.neighbor_count, True)
    return entries


# ---------------------------------------------------------------------------
# reparameterization algebra
# ---------------------------------------------------------------------------

def reparam_alpha(r: float) -> float:
    """Warp exponent mapping a unit-speed curve of length r onto the
    energy-normalized parameterization; satisfies r^2 a^2 = 2a - 1."""
    if not (0.0 < r <= 1.0):
        raise OutOfRange(f"r={r} outside (0, 1]")
    return (1.0 + np.sqrt(1.0 - r * r)) / (r * r)


def arc_length_reparameterize(curve: DiscreteCurve) -> DiscreteCurve:
    """Reparameterize the curve at unit speed by cumulative chord length.

    The polyline is untouched (so the total length is preserved exactly and
    repeating the operation is the identity); each node's parameter becomes
    its normalized cumulative chord length, and node velocities become the
    constant-speed tangents of that parameterization.
    """
    P = curve.points
    seg = np.linalg.norm(np.diff(P, axis=0), axis=1)
    if np.any(seg == 0.0):
        raise ZeroSegment("repeated node in the curve")
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    total = cum[-1]
    mesh = Mesh(cum / total)
    chords = np.diff(P, axis=0) / seg[:, None]
    tangents = np.empty_like(P)
    tangents[0], tangents[-1] = chords[0], chords[-1]
    if len(P) > 2:
        mids = chords[:-1] + chords[1:]
        tangents[1:-1] = mids / np.linalg.norm(mids, axis=1)[:, None]
    return DiscreteCurve(mesh, P.copy(), total * tangents)


# ---------------------------------------------------------------------------
# confidence ellipsoid
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EllipsoidDescriptor:
    center: np.ndarray
    axes: np.ndarray        # (d, m-1) transverse directions, column-scaled
    semi_axes: np.ndarray   # (m-1,) half-lengths sqrt(lambda_i/lambda_1) h
    dimension: int
    degenerate: bool


def confidence_ellipsoid(point, velocity, eigenvalues, eigenvectors, h,
                         frame) -> EllipsoidDescriptor:
    """Transverse spread descriptor at a flow node.

    The axis matrix projects the trailing covariance eigenvectors onto the
    tangent space minus the travel direction; its rank drops by one when the
    velocity happens to be orthogonal to the leading eigenvector.
    """
    lam = np.asarray(eigenvalues, dtype=float)
    if lam[0] <= 0:
        raise ZeroLeadingEigenvalue("lambda_1 must be positive")
    x = np.asarray(point, dtype=float)
    u = np.asarray(velocity, dtype=float)
    nu = np.linalg.norm(u)
    if nu > 0:
        u = u / nu  # the projector form assumes unit speed
    E = np.asarray(eigenvectors, dtype=float)
    U = frame.basis
    proj = U @ U.T - np.outer(u, u)
    V = proj @ E[:, 1:]
    semi = np.sqrt(np.maximum(lam[1:], 0.0) / lam[0]) * h
    svals = np.linalg.svd(V, compute_uv=False) if V.size else np.array([])
    dim = int((svals > 1e-10).sum())
    return EllipsoidDescriptor(center=x, axes=V, semi_axes=semi,
                               dimension=dim, degenerate=bool(np.any(lam[1:] <= 0)))
