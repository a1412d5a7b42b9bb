"""Two-point boundary value solver by collocation with damped Newton.

The first-order system y' = f(t, y) on [0, 1] is discretized on a mesh with
an implicit Runge-Kutta condition per interval whose coefficients come from
integrated Lagrange polynomials over the stage nodes. Node states at both
ends carry pinned position blocks, so boundary values are exact by
construction and never solved for.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import spsolve

from .errors import NewtonDiverged, OutOfRange, RhsFailure


@dataclass(frozen=True)
class Mesh:
    """Strictly increasing nodes t_0 = 0 < ... < t_N = 1."""

    nodes: np.ndarray

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=float)
        object.__setattr__(self, "nodes", nodes)
        if nodes.ndim != 1 or nodes.size < 2:
            raise ValueError("mesh needs at least two nodes")
        if not (np.all(np.diff(nodes) > 0) and nodes[0] == 0.0 and nodes[-1] == 1.0):
            raise ValueError("mesh nodes must increase strictly from 0 to 1")

    @classmethod
    def uniform(cls, n_intervals: int) -> "Mesh":
        return cls(np.linspace(0.0, 1.0, n_intervals + 1))

    @property
    def widths(self) -> np.ndarray:
        return np.diff(self.nodes)

    @property
    def n_intervals(self) -> int:
        return len(self.nodes) - 1


def _lagrange_weights(c: np.ndarray):
    """IRK coefficients from stage nodes: a[j, l] = int_0^{c_j} L_l,
    b[l] = int_0^1 L_l with L_l the Lagrange basis on the nodes."""
    k = len(c)
    A = np.zeros((k, k))
    b = np.zeros(k)
    for l in range(k):
        roots = np.delete(c, l)
        poly = np.polynomial.Polynomial.fromroots(roots) if roots.size else np.polynomial.Polynomial([1.0])
        poly = poly / poly(c[l])
        antider = poly.integ()
        b[l] = antider(1.0) - antider(0.0)
        for j in range(k):
            A[j, l] = antider(c[j]) - antider(0.0)
    return A, b


@dataclass(frozen=True)
class CollocationScheme:
    """Stage nodes in [0, 1] and the scheme's nominal order."""

    stages: np.ndarray
    order: int

    def __post_init__(self):
        c = np.asarray(self.stages, dtype=float)
        object.__setattr__(self, "stages", c)
        if c.ndim != 1 or c.size == 0:
            raise ValueError("need at least one stage node")
        if not (np.all(np.diff(c) > 0) and c[0] >= 0.0 and c[-1] <= 1.0):
            raise ValueError("stage nodes must increase strictly within [0, 1]")
        A, b = _lagrange_weights(c)
        object.__setattr__(self, "_A", A)
        object.__setattr__(self, "_b", b)

    @property
    def k(self) -> int:
        return len(self.stages)

    @property
    def coefficients(self):
        return self._A, self._b

    @classmethod
    def lobatto_iiia(cls, k: int = 3) -> "CollocationScheme":
        nodes = {
            2: [0.0, 1.0],
            3: [0.0, 0.5, 1.0],
            4: [0.0, (5 - np.sqrt(5)) / 10, (5 + np.sqrt(5)) / 10, 1.0],
            5: [0.0, (7 - np.sqrt(21)) / 14, 0.5, (7 + np.sqrt(21)) / 14, 1.0],
        }
        if k not in nodes:
            raise ValueError("Lobatto IIIA implemented for 2..5 stages")
        return cls(np.array(nodes[k]), 2 * k - 2)

    @classmethod
    def gauss(cls, k: int) -> "CollocationScheme":
        x, _ = np.polynomial.legendre.leggauss(k)
        return cls((x + 1.0) / 2.0, 2 * k)


DEFAULT_SCHEME = CollocationScheme.lobatto_iiia(3)


@dataclass
class DiscreteCurve:
    """Mesh plus ambient points per node, optionally with velocities."""

    mesh: Mesh
    points: np.ndarray
    velocities: Optional[np.ndarray] = None

    def __post_init__(self):
        self.points = np.atleast_2d(np.asarray(self.points, dtype=float))
        if self.points.shape[0] != len(self.mesh.nodes):
            raise ValueError("one point per mesh node required")
        if self.velocities is not None:
            self.velocities = np.atleast_2d(np.asarray(self.velocities, dtype=float))
            if self.velocities.shape != self.points.shape:
                raise ValueError("velocities must match points in shape")

    @property
    def ambient_dim(self) -> int:
        return self.points.shape[1]

    def length(self) -> float:
        return float(np.linalg.norm(np.diff(self.points, axis=0), axis=1).sum())

    def chord_velocities(self) -> np.ndarray:
        """Central-difference node velocities (one-sided at the ends)."""
        t = self.mesh.nodes
        p = self.points
        v = np.empty_like(p)
        v[0] = (p[1] - p[0]) / (t[1] - t[0])
        v[-1] = (p[-1] - p[-2]) / (t[-1] - t[-2])
        if len(t) > 2:
            v[1:-1] = (p[2:] - p[:-2]) / (t[2:] - t[:-2])[:, None]
        return v

    def check_injectivity(self, tol: float = 1e-12) -> bool:
        """Warn when non-adjacent nodes (nearly) coincide."""
        p = self.points
        n = len(p)
        ok = True
        for i in range(n):
            d = np.linalg.norm(p[i + 2:] - p[i], axis=1)
            if d.size and d.min() <= tol:
                warnings.warn("curve revisits a point; injectivity violated",
                              stacklevel=2)
                ok = False
                break
        return ok


@dataclass
class BVPSolution(DiscreteCurve):
    """Solved curve carrying the final collocation residual certificate."""

    residual: float = np.nan
    newton_iterations: int = 0


class _RhsWrapper:
    """Uniform batched access to the right-hand side, with failure context."""

    def __init__(self, rhs: Callable, probe_t: float, probe_y: np.ndarray):
        self.rhs = rhs
        self.batched = bool(getattr(rhs, "batched", False))
        if not self.batched:
            try:
                T = np.array([probe_t, probe_t])
                Y = np.vstack([probe_y, probe_y])
                out = np.asarray(rhs(T, Y))
                self.batched = out.shape == Y.shape
            except Exception:
                self.batched = False

    def __call__(self, T: np.ndarray, Y: np.ndarray) -> np.ndarray:
        try:
            if self.batched:
                return np.asarray(self.rhs(T, Y), dtype=float)
            out = np.empty_like(Y)
            for i in range(Y.shape[0]):
                out[i] = self.rhs(float(T[i]), Y[i])
            return out
        except RhsFailure:
            raise
        except Exception as exc:
            raise RhsFailure(f"right-hand side failed: {exc}",
                             t=float(np.atleast_1d(T)[0])) from exc


def solve_bvp(rhs: Callable, xa, xb, guess: DiscreteCurve,
              scheme: CollocationScheme = DEFAULT_SCHEME,
              tol: float = 1e-8, max_newton: int = 50,
              fd_step: float = 1e-6) -> BVPSolution:
    """Solve y' = f(t, y) for y = (position, velocity) with pinned endpoints.

    Parameters
    ----------
    rhs : callable(t, y) -> dy/dt on R^{2d}; a ``batched`` attribute or
        batch-capable signature speeds things up considerably.
    xa, xb : pinned boundary positions (first d state components).
    guess : initial curve; its points must satisfy the pinning exactly.
    scheme : collocation stage layout (3-stage Lobatto IIIA by default).
    tol : infinity-norm target for the collocation residual.

    Returns a BVPSolution whose endpoints equal xa, xb bitwise and whose
    ``residual`` certifies the final residual norm. Raises NewtonDiverged
    when damped Newton cannot reach the tolerance, RhsFailure when the field
    or manifold evaluation fails at some collocation time.
    """
    xa = np.asarray(xa, dtype=float)
    xb = np.asarray(xb, dtype=float)
    d = xa.size
    D = 2 * d
    mesh = guess.mesh
    tnodes = mesh.nodes
    hs = mesh.widths
    N = mesh.n_intervals
    c = scheme.stages
    A, b = scheme.coefficients
    k = scheme.k

    if np.linalg.norm(guess.points[0] - xa) > 1e-12 or \
       np.linalg.norm(guess.points[-1] - xb) > 1e-12:
        raise ValueError("guess curve does not satisfy the boundary pinning")

    P0 = guess.points.copy()
    V0 = guess.velocities.copy() if guess.velocities is not None else guess.chord_velocities()
    Y = np.concatenate([P0, V0], axis=1)  # (N+1, D) node states
    Y[0, :d] = xa
    Y[-1, :d] = xb

    # stage states and times: (N, k, D); initialized on the chords
    stage_t = tnodes[:-1, None] + hs[:, None] * c[None, :]
    S = Y[:-1, None, :] + (Y[1:] - Y[:-1])[:, None, :] * c[None, :, None]

    f = _RhsWrapper(rhs, float(tnodes[0]), Y[0])

    # unknown vector layout: interior positions | all velocities | stages
    n_pos = (N - 1) * d
    n_vel = (N + 1) * d
    n_stage = N * k * D
    n_unknown = n_pos + n_vel + n_stage

    def pack(Ynodes, Stages):
        return np.concatenate([
            Ynodes[1:-1, :d].ravel(),
            Ynodes[:, d:].ravel(),
            Stages.ravel(),
        ])

    def unpack(zvec):
        Yn = np.empty((N + 1, D))
        Yn[0, :d] = xa
        Yn[-1, :d] = xb
        Yn[1:-1, :d] = zvec[:n_pos].reshape(N - 1, d)
        Yn[:, d:] = zvec[n_pos:n_pos + n_vel].reshape(N + 1, d)
        St = zvec[n_pos + n_vel:].reshape(N, k, D)
        return Yn, St

    def residual(zvec):
        Yn, St = unpack(zvec)
        F = f(stage_t.ravel(), St.reshape(-1, D)).reshape(N, k, D)
        # stage equations: S_ij - y_{i-1} - h_i sum_l A_jl F_il
        incr = np.einsum("jl,ild->ijd", A, F) * hs[:, None, None]
        Rst = St - Yn[:-1, None, :] - incr
        # step equations: y_i - y_{i-1} - h_i sum_l b_l F_il
        Rstep = Yn[1:] - Yn[:-1] - np.einsum("l,ild->id", b, F) * hs[:, None]
        return np.concatenate([Rst.reshape(N, k * D), Rstep], axis=1).ravel(), F

    # index helpers for the sparse Jacobian
    def vel_idx(i):
        return n_pos + i * d + np.arange(d)

    def pos_idx(i):
        # position block of node i within the unknown vector, or None if pinned
        if i == 0 or i == N:
            return None
        return (i - 1) * d + np.arange(d)

    def node_idx(i):
        pi = pos_idx(i)
        vi = vel_idx(i)
        if pi is None:
            return np.concatenate([np.full(d, -1, dtype=int), vi]), np.arange(d, D)
        return np.concatenate([pi, vi]), np.arange(D)

    def stage_idx(i, j):
        return n_pos + n_vel + (i * k + j) * D + np.arange(D)

    rows_per_interval = (k + 1) * D

    def jacobian(St, Fst):
        """Assemble the sparse Jacobian using finite-difference stage
        Jacobians of f and the exact linear structure elsewhere."""
        # FD Jacobians of f at all stages, batched over every perturbation
        scale = fd_step * (1.0 + np.abs(St).max())
        base = St.reshape(-1, D)
        M = base.shape[0]
        pert = np.repeat(base[:, None, :], 2 * D, axis=1)
        for col in range(D):
            pert[:, 2 * col, col] += scale
            pert[:, 2 * col + 1, col] -= scale
        tt = np.repeat(stage_t.ravel()[:, None], 2 * D, axis=1)
        vals = f(tt.ravel(), pert.reshape(-1, D)).reshape(M, 2 * D, D)
        Jf = np.empty((M, D, D))
        for col in range(D):
            Jf[:, :, col] = (vals[:, 2 * col] - vals[:, 2 * col + 1]) / (2 * scale)
        Jf = Jf.reshape(N, k, D, D)

        rows, cols, data = [], [], []
        eyeD = np.eye(D)

        def add_block(r0, cidx, block, rmask=None):
            # rows r0..r0+D-1 (masked), unknown columns cidx (may contain -1)
            rr, cc = np.meshgrid(np.arange(block.shape[0]), np.arange(block.shape[1]),
                                 indexing="ij")
            keep = cidx[cc] >= 0
            rows.append((r0 + rr)[keep])
            cols.append(cidx[cc][keep])
            data.append(block[keep])

        for i in range(N):
            base_row = i * rows_per_interval
            idx_prev, _ = node_idx(i)
            idx_next, _ = node_idx(i + 1)
            for j in range(k):
                r0 = base_row + j * D
                add_block(r0, idx_prev, -eyeD)
                for l in range(k):
                    blk = (eyeD if l == j else np.zeros((D, D))) - hs[i] * A[j, l] * Jf[i, l]
                    add_block(r0, stage_idx(i, l), blk)
            r0 = base_row + k * D
            add_block(r0, idx_prev, -eyeD)
            add_block(r0, idx_next, eyeD)
            for l in range(k):
                add_block(r0, stage_idx(i, l), -hs[i] * b[l] * Jf[i, l])

        J = sparse.coo_matrix(
            (np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))),
            shape=(N * rows_per_interval, n_unknown)).tocsr()
        return J

    z = pack(Y, S)
    res, Fst = residual(z)
    rnorm = float(np.abs(res).max())
    iters = 0
    while rnorm > tol:
        if iters >= max_newton:
            raise NewtonDiverged(
                f"collocation residual {rnorm:.3e} > tol {tol:.1e} "
                f"after {max_newton} Newton iterations")
        _, St = unpack(z)
        J = jacobian(St, Fst)
        step = spsolve(J, res)
        if not np.all(np.isfinite(step)):
            raise NewtonDiverged("singular collocation Jacobian")
        lam = 1.0
        improved = False
        for _ in range(30):
            z_try = z - lam * step
            res_try, F_try = residual(z_try)
            rn_try = float(np.abs(res_try).max())
            if rn_try <= (1.0 - 1e-4 * lam) * rnorm or rn_try <= tol:
                z, res, Fst, rnorm = z_try, res_try, F_try, rn_try
                improved = True
                break
            lam *= 0.5
        if not improved:
            raise NewtonDiverged(
                f"line search stalled at residual {rnorm:.3e} (tol {tol:.1e})")
        iters += 1

    Yn, _ = unpack(z)
    return BVPSolution(mesh=mesh, points=Yn[:, :d].copy(),
                       velocities=Yn[:, d:].copy(),
                       residual=rnorm, newton_iterations=iters)


def hermite_eval(curve: DiscreteCurve, t: float):
    """Cubic Hermite dense output: (point, velocity) at parameter t."""
    if curve.velocities is None:
        raise ValueError("curve must carry velocities for dense output")
    if not (0.0 <= t <= 1.0):
        raise OutOfRange(f"t={t} outside [0, 1]")
    nodes = curve.mesh.nodes
    i = min(int(np.searchsorted(nodes, t, side="right") - 1), len(nodes) - 2)
    h = nodes[i + 1] - nodes[i]
    s = (t - nodes[i]) / h
    p0, p1 = curve.points[i], curve.points[i + 1]
    m0, m1 = curve.velocities[i] * h, curve.velocities[i + 1] * h
    h00 = 2 * s**3 - 3 * s**2 + 1
    h10 = s**3 - 2 * s**2 + s
    h01 = -2 * s**3 + 3 * s**2
    h11 = s**3 - s**2
    point = h00 * p0 + h10 * m0 + h01 * p1 + h11 * m1
    d00 = 6 * s**2 - 6 * s
    d10 = 3 * s**2 - 4 * s + 1
    d01 = -6 * s**2 + 6 * s
    d11 = 3 * s**2 - 2 * s
    velocity = (d00 * p0 + d10 * m0 + d01 * p1 + d11 * m1) / h
    return point, velocity


def convergence_order(rhs: Callable, exact: Callable, xa, xb, mesh_sizes,
                      scheme: CollocationScheme = DEFAULT_SCHEME,
                      tol: float = 1e-10) -> float:
    """Observed order from max-node errors over a mesh refinement sequence.

    ``exact(t)`` returns the analytic position. Errors at rounding level
    (< 1e-12) short-circuit to +inf since no slope can be measured. Raises
    ValueError for fewer than two meshes.
    """
    mesh_sizes = list(mesh_sizes)
    if len(mesh_sizes) < 2:
        raise ValueError("need at least two meshes to observe an order")
    xa = np.asarray(xa, dtype=float)
    xb = np.asarray(xb, dtype=float)
    errs, widths = [], []
    for n in mesh_sizes:
        mesh = Mesh.uniform(n)
        pts = xa + (xb - xa) * mesh.nodes[:, None]
        guess = DiscreteCurve(mesh, pts)
        sol = solve_bvp(rhs, xa, xb, guess, scheme=scheme, tol=tol)
        ref = np.array([exact(t) for t in mesh.nodes])
        errs.append(np.linalg.norm(sol.points - ref, axis=1).max())
        widths.append(mesh.widths.max())
    errs = np.asarray(errs)
    if np.all(errs < 1e-12):
        return np.inf
    slope = np.polyfit(np.log(widths), np.log(np.maximum(errs, 1e-300)), 1)[0]
    return float(slope)
