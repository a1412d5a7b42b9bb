"""Constrained Euler-Lagrange system reduced to its underlying first-order ODE.

The stationarity condition for the alignment functional with a speed
multiplier delta and a manifold multiplier z reads

    Q(x) x'' + DF(x)^T z = G(x, x'),   F(x) = 0,

with mass matrix Q = -2 delta I and G = (J - J^T) x' built from the field
Jacobian J. Differentiating the constraint twice gives the acceleration-level
equation DF x'' + x'^T F_xx x' = 0, from which z is eliminated and the system
becomes an ordinary ODE. The lower-index residuals are kept as diagnostics.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Tuple

import numpy as np

from .errors import RankDeficient, SingularMass
from .geometry import ManifoldSpec

DEFAULT_BAUMGARTE = (1.0, 2.0)


@dataclass
class ELSystem:
    """Frozen-field Euler-Lagrange system on a manifold.

    ``field_eval(t, x) -> (W, J)`` returns the field vector and its ambient
    Jacobian; a callable with a truthy ``batched`` attribute is expected to
    accept stacked inputs (M,) and (M, d). ``delta`` must be nonzero; the
    default Baumgarte pair (1, 2) keeps the stabilizing polynomial's root
    negative.
    """

    delta: float
    field_eval: Callable
    manifold: ManifoldSpec
    baumgarte: Optional[Tuple[float, float]] = DEFAULT_BAUMGARTE

    def __post_init__(self):
        if self.baumgarte is not None:
            a0, a1 = self.baumgarte
            if not (a0 > 0 and a1 > 0):
                raise ValueError("Baumgarte coefficients must be positive")

    @property
    def mass_scale(self) -> float:
        """Scalar q with Q = q I."""
        return -2.0 * self.delta


def _eval_field_batch(sys: ELSystem, t: np.ndarray, x: np.ndarray):
    """Field values and Jacobians at stacked states; loops unless the
    evaluator supports batching."""
    if getattr(sys.field_eval, "batched", False):
        return sys.field_eval(t, x)
    W = np.empty_like(x)
    J = np.empty(x.shape + (x.shape[-1],))
    for i in range(x.shape[0]):
        W[i], J[i] = sys.field_eval(float(t[i]), x[i])
    return W, J


def _batch_dynamics(sys: ELSystem, t: np.ndarray, x: np.ndarray, u: np.ndarray,
                    want_z: bool = False):
    """Accelerations (and optionally multipliers) for stacked states."""
    if sys.delta == 0:
        raise SingularMass("delta = 0 makes the mass matrix singular")
    q = sys.mass_scale
    _, J = _eval_field_batch(sys, t, x)
    G = np.einsum("mij,mj->mi", J - np.swapaxes(J, -1, -2), u)
    c = sys.manifold.codim
    if c == 0:
        acc = G / q
        z = np.zeros(x.shape[:-1] + (0,))
        return (acc, z) if want_z else acc
    DF = sys.manifold.constraint_jacobian(x)          # (M, c, d)
    A = np.einsum("mcd,med->mce", DF, DF) / q          # DF Q^-1 DF^T
    rhs = np.einsum("mcd,md->mc", DF, G) / q + sys.manifold.constraint_hessian_quad(x, u)
    try:
        z = np.linalg.solve(A, rhs[..., None])[..., 0]
    except np.linalg.LinAlgError as exc:
        raise RankDeficient("DF Q^-1 DF^T is singular") from exc
    acc = (G - np.einsum("mcd,mc->md", DF, z)) / q
    return (acc, z) if want_z else acc


def coriolis_term(x, u, sys: ELSystem, t: float = 0.0) -> np.ndarray:
    """Skew-symmetric field forcing (J - J^T) u; always orthogonal to u."""
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    _, J = sys.field_eval(t, x)
    return (J - J.T) @ u


def solve_multiplier(x, u, sys: ELSystem, t: float = 0.0) -> np.ndarray:
    """Lagrange multiplier of the manifold constraint at one state."""
    x = np.asarray(x, dtype=float)[None]
    u = np.asarray(u, dtype=float)[None]
    _, z = _batch_dynamics(sys, np.array([t]), x, u, want_z=True)
    return z[0]


def underlying_ode_rhs(x, u, sys: ELSystem, t: float = 0.0) -> np.ndarray:
    """Acceleration Q^-1 Gtilde with the multiplier eliminated."""
    x = np.asarray(x, dtype=float)[None]
    u = np.asarray(u, dtype=float)[None]
    return _batch_dynamics(sys, np.array([t]), x, u)[0]


def first_order_form(sys: ELSystem):
    """State-space form (x, u) -> (u, Q^-1 Gtilde(x, u)) on R^{2d}.

    The returned callable accepts a single state of length 2d or a stacked
    (M, 2d) array (with matching scalar or (M,) time) and is marked batched.
    """
    d = sys.manifold.ambient_dim

    def rhs(t, y):
        y = np.asarray(y, dtype=float)
        single = y.ndim == 1
        ys = y[None] if single else y
        ts = np.full(ys.shape[0], t, dtype=float) if np.ndim(t) == 0 else np.asarray(t, dtype=float)
        x, u = ys[:, :d], ys[:, d:]
        acc = _batch_dynamics(sys, ts, x, u)
        out = np.concatenate([u, acc], axis=1)
        return out[0] if single else out

    rhs.batched = True
    rhs.state_dim = 2 * d
    return rhs


def index1_block_solve(x, u, sys: ELSystem, t: float = 0.0):
    """Direct solve of the index-one block system

        [Q, DF^T; DF, 0] [acc; z] = [G; -u^T F_xx u]

    kept as an independent cross-check of the eliminated form."""
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    if sys.delta == 0:
        raise SingularMass("delta = 0 makes the mass matrix singular")
    d = sys.manifold.ambient_dim
    c = sys.manifold.codim
    DF = np.atleast_2d(sys.manifold.constraint_jacobian(x))
    G = coriolis_term(x, u, sys, t=t)
    hq = np.atleast_1d(sys.manifold.constraint_hessian_quad(x, u))
    M = np.zeros((d + c, d + c))
    M[:d, :d] = sys.mass_scale * np.eye(d)
    M[:d, d:] = DF.T
    M[d:, :d] = DF
    rhs = np.concatenate([G, -hq])
    try:
        sol = np.linalg.solve(M, rhs)
    except np.linalg.LinAlgError as exc:
        raise RankDeficient("index-one block system is singular") from exc
    return sol[:d], sol[d:]


def constraint_residuals(curve, sys: ELSystem) -> dict:
    """Per-node constraint diagnostics along a discrete curve with velocities.

    Returns arrays keyed 'position' (|F|), 'velocity' (|DF u|),
    'acceleration' (|DF acc + u^T F_xx u|) and 'baumgarte' (|a0 F + a1 DF u|);
    drift in the first two is the algebraic instability the index reduction
    can introduce.
    """
    if curve.velocities is None:
        raise ValueError("curve must carry velocities")
    X = np.asarray(curve.points, dtype=float)
    U = np.asarray(curve.velocities, dtype=float)
    T = np.asarray(curve.mesh.nodes, dtype=float)
    c = sys.manifold.codim
    n = X.shape[0]
    if c == 0:
        zeros = np.zeros(n)
        return {"position": zeros, "velocity": zeros.copy(),
                "acceleration": zeros.copy(), "baumgarte": zeros.copy()}
    F = sys.manifold.constraint(X)
    DF = sys.manifold.constraint_jacobian(X)
    DFu = np.einsum("mcd,md->mc", DF, U)
    acc = _batch_dynamics(sys, T, X, U)
    acc_res = np.einsum("mcd,md->mc", DF, acc) + sys.manifold.constraint_hessian_quad(X, U)
    a0, a1 = sys.baumgarte if sys.baumgarte is not None else DEFAULT_BAUMGARTE
    return {
        "position": np.linalg.norm(F, axis=1),
        "velocity": np.linalg.norm(DFu, axis=1),
        "acceleration": np.linalg.norm(acc_res, axis=1),
        "baumgarte": np.linalg.norm(a0 * F + a1 * DFu, axis=1),
    }
