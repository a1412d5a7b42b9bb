"""Fixed-endpoint flows through a data cloud and the related baselines.

The main entry point alternates, until the node displacements settle, between
(i) freezingoriented field samples along the current discrete curve,
(ii) solving the underlying first-order ODE as a two-point BVP with both
endpoints pinned, and (iii) projecting the solved nodes back onto the
manifold. The principal-flow baseline instead integrates the field forward
and backward from a starting point (typically the Frechet mean).
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field
from typing import Optional

import numpy as np

from . import field as vfield
from . import geometry
from .bvp import CollocationScheme, DEFAULT_SCHEME, DiscreteCurve, Mesh, solve_bvp
from .dae import ELSystem, constraint_residuals, first_order_form
from .errors import (BoundaryFlowError, IdenticalEndpoints, NewtonDiverged,
                     NoConvergence)
from .field import DataCloud, Kernel
from .geometry import ManifoldSpec


@dataclass(frozen=True)
class IterationStats:
    objective: float
    displacement: float
    max_constraint_residual: float


@dataclass
class FlowResult:
    """Converged curve plus the per-iteration trace."""

    curve: DiscreteCurve
    iterations: list
    converged: bool
    config: dict
    initial_curve: DiscreteCurve = None
    initial_objective: float = np.nan
    objective: float = np.nan
    oscillating: bool = False
    samples: list = dc_field(default_factory=list)
    residuals: dict = dc_field(default_factory=dict)  # internal (rescaled) units

    @property
    def energy(self) -> float:
        """Diagnostic value of int |u|^2 dt (not enforced as a constraint)."""
        if self.curve.velocities is None:
            return np.nan
        speed2 = np.sum(self.curve.velocities ** 2, axis=1)
        return float(np.trapezoid(speed2, self.curve.mesh.nodes))


class FrozenField:
    """Per-node field samples interpolated linearly in curve time.

    Used to freeze the field within one outer iteration: the BVP solver sees
    a time-dependent but state-independent (W, J) along the mesh.
    """

    batched = True

    def __init__(self, tnodes, W, J):
        self.t = np.asarray(tnodes, dtype=float)
        self.W = np.asarray(W, dtype=float)
        self.J = np.asarray(J, dtype=float)

    def __call__(self, t, x):
        t_arr = np.atleast_1d(np.asarray(t, dtype=float))
        tt = np.clip(t_arr, self.t[0], self.t[-1])
        i = np.clip(np.searchsorted(self.t, tt, side="right") - 1, 0, len(self.t) - 2)
        s = ((tt - self.t[i]) / (self.t[i + 1] - self.t[i]))[:, None]
        W = (1 - s) * self.W[i] + s * self.W[i + 1]
        J = (1 - s[..., None]) * self.J[i] + s[..., None] * self.J[i + 1]
        if np.ndim(t) == 0 and np.ndim(x) == 1:
            return W[0], J[0]
        return W, J


def frechet_mean(cloud: DataCloud, spec: ManifoldSpec, tol: float = 1e-10,
                 max_iter: int = 1000) -> np.ndarray:
    """Intrinsic mean by gradient iteration on the sum of squared distances."""
    pts = cloud.active_points
    if len(pts) == 1:
        return pts[0].copy()
    m = geometry.project_to_manifold(pts.mean(axis=0), spec)
    for _ in range(max_iter):
        logs = np.array([geometry.log_map(m, p, spec) for p in pts])
        v = logs.mean(axis=0)
        nv = float(np.linalg.norm(v))
        if nv <= tol:
            return m
        m = geometry.geodesic(m, v, nv, spec)
    raise NoConvergence(f"mean update still {nv:.3e} after {max_iter} iterations")


def initial_curve(x1, x2, n_intervals: int, spec: ManifoldSpec) -> DiscreteCurve:
    """Endpoint geodesic sampled at uniform parameter values."""
    x1 = np.asarray(x1, dtype=float)
    x2 = np.asarray(x2, dtype=float)
    v = geometry.log_map(x1, x2, spec)
    dist = float(np.linalg.norm(v))
    scale = max(np.linalg.norm(x1), np.linalg.norm(x2), 1.0)
    if dist <= 1e-12 * scale:
        raise IdenticalEndpoints("start and end point coincide")
    mesh = Mesh.uniform(n_intervals)
    pts = np.empty((n_intervals + 1, x1.size))
    pts[0] = x1
    pts[-1] = x2
    for i, t in enumerate(mesh.nodes[1:-1], start=1):
        pts[i] = geometry.geodesic(x1, v, t * dist, spec)
    return DiscreteCurve(mesh, pts)


def objective(curve: DiscreteCurve, cloud: DataCloud, kernel: Kernel, v0,
              spec: ManifoldSpec, k_project: int = 1) -> float:
    """Trapezoid quadrature of <velocity, W> over the mesh nodes."""
    vel = curve.velocities if curve.velocities is not None else curve.chord_velocities()
    vals = np.empty(len(curve.points))
    for i, (x, u) in enumerate(zip(curve.points, vel)):
        w = vfield.field_at(x, cloud, kernel, v0, spec, k_project=k_project).direction
        vals[i] = float(u @ w)
    return float(np.trapezoid(vals, curve.mesh.nodes))


def _scaled_spec(spec: ManifoldSpec, s: float) -> ManifoldSpec:
    """The manifold seen through x -> x / s."""
    if s == 1.0:
        return spec
    if spec.kind == "sphere":
        return geometry.sphere(spec.params["radius"] / s, spec.ambient_dim)
    if spec.kind == "cone":
        return geometry.cone(spec.params["height"] / s, spec.params["radius"] / s)
    if spec.kind == "affine":
        return geometry.affine(spec.params["basis"], spec.params["origin"] / s)
    raise ValueError(f"unknown manifold kind {spec.kind!r}")


def _sample_field_along(points, cloud, kernel, v0, spec, k_project, fd_step, it,
                        cache):
    """Oriented samples and ambient Jacobians at each node, with context on error."""
    samples, Js = [], []
    for i, x in enumerate(points):
        try:
            samples.append(vfield.field_at(x, cloud, kernel, v0, spec,
                                           k_project=k_project, cache=cache))
            Js.append(vfield.field_jacobian(x, cloud, kernel, v0, spec,
                                            step=fd_step, k_project=k_project,
                                            cache=cache))
        except BoundaryFlowError as exc:
            raise type(exc)(f"outer iteration {it}, node {i}: {exc}") from exc
    return samples, np.array(Js)


def _solve_frozen(tnodes, W, Js, delta, spec_s, x1s, x2s, guess, scheme, tol):
    """BVP solve for one frozen field, with continuation in the field
    strength as a fallback when the full-strength Newton diverges."""
    def attempt(tau, g):
        sys = ELSystem(delta, FrozenField(tnodes, W, tau * Js), spec_s)
        return solve_bvp(first_order_form(sys), x1s, x2s, g,
                         scheme=scheme, tol=tol), sys
    try:
        return attempt(1.0, guess)
    except NewtonDiverged:
        pass
    g = guess
    sol = None
    for tau in (0.125, 0.25, 0.5, 0.75, 1.0):
        try:
            sol, sys = attempt(tau, g)
            g = DiscreteCurve(guess.mesh, sol.points.copy(), sol.velocities.copy())
        except NewtonDiverged:
            if tau == 1.0:
                raise
    return sol, sys


def fixed_boundary_flow(cloud: DataCloud, x1, x2, h: float, delta: float = -0.5,
                        h_star: Optional[float] = None, *,
                        spec: ManifoldSpec,
                        n_intervals: int = 40,
                        scheme: CollocationScheme = DEFAULT_SCHEME,
                        newton_tol: float = 1e-8,
                        eps_conv_rel: float = 1e-6,
                        max_outer: int = 100,
                        k_project: int = 1,
                        project_each_iteration: bool = True,
                        rescale: bool = True,
                        relaxation: float = 1.0,
                        adapt_relaxation: bool = True) -> FlowResult:
    """Curve with pinned endpoints whose tangent follows the local field.

    Parameters mirror the experiment knobs: kernel scale ``h``, speed
    multiplier ``delta`` (negative keeps the mass matrix positive definite),
    optional truncation radius ``h_star`` restricting the cloud to a tube
    around the endpoint geodesic, mesh resolution and solver tolerances.
    Data, endpoints and length scales are rescaled to unit diameter
    internally and mapped back in the returned result.

    ``relaxation`` blends each solved curve with the previous one before
    projecting; with ``adapt_relaxation`` the blend factor is halved whenever
    the node displacement stops decreasing. Fixed points are unaffected: at
    one, the solved and previous curves coincide.
    """
    x1 = np.asarray(x1, dtype=float)
    x2 = np.asarray(x2, dtype=float)
    for name, x in (("x1", x1), ("x2", x2)):
        if not geometry.on_manifold(x, spec):
            raise ValueError(f"endpoint {name} is not on the manifold")

    if not (0 < relaxation <= 1):
        raise ValueError("relaxation must lie in (0, 1]")
    config = {"h": h, "delta": delta, "h_star": h_star,
              "n_intervals": n_intervals, "stages": scheme.k,
              "newton_tol": newton_tol, "eps_conv_rel": eps_conv_rel,
              "max_outer": max_outer, "k_project": k_project,
              "project_each_iteration": project_each_iteration,
              "rescale": rescale, "relaxation": relaxation,
              "adapt_relaxation": adapt_relaxation}

    # truncate around the endpoint geodesic before any rescaling
    guess0 = initial_curve(x1, x2, n_intervals, spec)
    if h_star is not None:
        cloud = vfield.truncate_cloud(cloud, guess0, h_star)

    # rescale data, endpoints and length parameters to unit diameter
    if rescale:
        ext = np.vstack([cloud.active_points, x1[None], x2[None]])
        from scipy.spatial.distance import pdist
        s = float(pdist(ext).max()) if len(ext) <= 2000 else \
            float(np.linalg.norm(ext.max(axis=0) - ext.min(axis=0)))
    else:
        s = 1.0
    spec_s = _scaled_spec(spec, s)
    cloud_s = DataCloud(cloud.points / s, cloud.active_mask.copy())
    x1s, x2s = x1 / s, x2 / s
    kernel = Kernel(h / s)
    fd_step = vfield.default_fd_step(cloud_s)

    v0 = x2s - x1s
    current = initial_curve(x1s, x2s, n_intervals, spec_s)
    tnodes = current.mesh.nodes
    eps_conv = eps_conv_rel * geometry.geodesic_distance(x1s, x2s, spec_s)

    velocities = None
    history = [current.points.copy()]
    iterations = []
    converged = False
    oscillating = False
    osc_count = 0
    stall = 0
    omega = relaxation
    best_disp = np.inf
    initial_pts = current.points.copy()

    field_cache: dict = {}
    for it in range(max_outer):
        samples, Js = _sample_field_along(current.points, cloud_s, kernel, v0,
                                          spec_s, k_project, fd_step, it,
                                          field_cache)
        W = np.array([smp.direction for smp in samples])
        guess = DiscreteCurve(current.mesh, current.points.copy(),
                              velocities if velocities is not None else None)
        sol, sys = _solve_frozen(tnodes, W, Js, delta, spec_s, x1s, x2s, guess,
                                 scheme, newton_tol)

        new_pts = current.points + omega * (sol.points - current.points)
        velocities = sol.velocities if velocities is None else \
            velocities + omega * (sol.velocities - velocities)
        if project_each_iteration:
            new_pts[1:-1] = np.array(
                [geometry.project_to_manifold(p, spec_s) for p in new_pts[1:-1]])
        disp = float(np.linalg.norm(new_pts - current.points, axis=1).max())

        current = DiscreteCurve(current.mesh, new_pts, velocities)
        res = constraint_residuals(current, sys)
        max_res = max(res[kk].max() for kk in ("position", "velocity", "acceleration"))
        obj = float(np.trapezoid(np.einsum("id,id->i", velocities, W), tnodes)) * s
        iterations.append(IterationStats(obj, disp * s, max_res))

        history.append(new_pts.copy())
        if disp <= eps_conv:
            converged = True
            break
        # period-2 oscillation: the curve returns to where it was two steps ago
        if len(history) >= 3 and \
           np.linalg.norm(history[-1] - history[-3], axis=1).max() <= eps_conv:
            osc_count += 1
            if osc_count >= 3:
                oscillating = True
                break
        else:
            osc_count = 0
        if adapt_relaxation:
            if disp < 0.9 * best_disp:
                stall = 0
            else:
                stall += 1
                if stall >= 3:
                    omega = max(omega / 2.0, 1.0 / 64.0)
                    stall = 0
        best_disp = min(best_disp, disp)

    if not project_each_iteration:
        pts = current.points.copy()
        pts[1:-1] = np.array(
            [geometry.project_to_manifold(p, spec_s) for p in pts[1:-1]])
        current = DiscreteCurve(current.mesh, pts, velocities)

    final_samples = [vfield.field_at(x, cloud_s, kernel, v0, spec_s,
                                     k_project=k_project, cache=field_cache)
                     for x in current.points]
    final_obj = objective(current, cloud_s, kernel, v0, spec_s,
                          k_project=k_project) * s
    init_obj = objective(DiscreteCurve(current.mesh, initial_pts), cloud_s,
                         kernel, v0, spec_s, k_project=k_project) * s

    out_curve = DiscreteCurve(current.mesh, current.points * s,
                              None if velocities is None else velocities * s)
    out_curve.check_injectivity()
    out_initial = DiscreteCurve(current.mesh, initial_pts * s)
    return FlowResult(curve=out_curve, iterations=iterations, converged=converged,
                      config=config, initial_curve=out_initial,
                      initial_objective=init_obj, objective=final_obj,
                      oscillating=oscillating, samples=final_samples,
                      residuals=res)


@dataclass
class PrincipalFlowResult:
    """Two traces leaving the start point along +/- the field direction."""

    forward: DiscreteCurve
    backward: DiscreteCurve
    errors: list = dc_field(default_factory=list)

    def __iter__(self):
        return iter((self.forward, self.backward))


def _trace_branch(start, sign, cloud, kernel, spec, r, step, k_project):
    """Fourth-order integration of x' = +/- W(x), step-projected, with the
    orientation reference carried along the trace for continuity."""
    x = np.asarray(start, dtype=float)
    first = vfield.field_at(x, cloud, kernel, np.zeros_like(x), spec,
                            k_project=k_project)
    ref = sign * first.direction
    pts = [x.copy()]
    vels = [ref.copy()]
    length = 0.0
    error = None

    def w_at(p, ref_dir):
        return vfield.field_at(p, cloud, kernel, ref_dir, spec,
                               k_project=k_project).direction

    while length < r:
        hstep = min(step, r - length)
        try:
            k1 = w_at(x, ref)
            k2 = w_at(geometry.project_to_manifold(x + 0.5 * hstep * k1, spec), ref)
            k3 = w_at(geometry.project_to_manifold(x + 0.5 * hstep * k2, spec), ref)
            k4 = w_at(geometry.project_to_manifold(x + hstep * k3, spec), ref)
        except BoundaryFlowError as exc:
            error = (length, exc)
            break
        x_new = geometry.project_to_manifold(
            x + (hstep / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4), spec)
        length += float(np.linalg.norm(x_new - x))
        ref = k1
        x = x_new
        pts.append(x.copy())
        vels.append(w_at(x, ref))
    if len(pts) < 2:
        raise error[1] if error else NoConvergence("empty principal flow branch")
    tgrid = np.linspace(0.0, 1.0, len(pts))
    curve = DiscreteCurve(Mesh(tgrid), np.array(pts), np.array(vels))
    return curve, error


def principal_flow(cloud: DataCloud, start, h: float, r: float, step: float, *,
                   spec: ManifoldSpec, k_project: int = 1) -> PrincipalFlowResult:
    """Field-integral baseline: two branches of length r from ``start``.

    Each branch follows one sign of the principal direction; field failures
    truncate the affected branch at the recorded arc length instead of
    aborting the other branch.
    """
    kernel = Kernel(h)
    start = geometry.project_to_manifold(np.asarray(start, dtype=float), spec)
    fwd, err_f = _trace_branch(start, +1.0, cloud, kernel, spec, r, step, k_project)
    bwd, err_b = _trace_branch(start, -1.0, cloud, kernel, spec, r, step, k_project)
    errors = [("forward", *err_f)] if err_f else []
    if err_b:
        errors.append(("backward", *err_b))
    return PrincipalFlowResult(fwd, bwd, errors)
