"""Implicit-constraint manifolds: sphere, right-circular cone, affine subspace.

A manifold is described by a constraint map F with F(x) = 0 on the manifold,
its Jacobian DF, and the quadratic action v^T F_xx v of the second derivative.
The cone is flat away from its apex, so its geodesics and parallel transport
are computed exactly by unrolling (isometric development) into the plane.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.linalg import null_space

from .errors import DegeneratePoint, NonUniqueGeodesic, RankDeficient

# Membership tolerance: |F(x)| below this counts as "on the manifold".
MANIFOLD_TOL = 1e-8


@dataclass(frozen=True)
class ManifoldSpec:
    """Embedded manifold of dimension ``ambient_dim - codim`` given implicitly.

    The three callables are vectorized over a leading batch axis:
    ``constraint`` maps (..., d) -> (..., c), ``constraint_jacobian`` maps
    (..., d) -> (..., c, d) and ``constraint_hessian_quad`` maps a point and a
    direction to (..., c).
    """

    ambient_dim: int
    codim: int
    constraint: Callable[[np.ndarray], np.ndarray]
    constraint_jacobian: Callable[[np.ndarray], np.ndarray]
    constraint_hessian_quad: Callable[[np.ndarray, np.ndarray], np.ndarray]
    kind: str
    params: dict = field(default_factory=dict)

    @property
    def intrinsic_dim(self) -> int:
        return self.ambient_dim - self.codim


@dataclass(frozen=True)
class TangentFrame:
    """Orthonormal basis of the tangent space at a point."""

    base_point: np.ndarray
    basis: np.ndarray  # (d, m), columns orthonormal, spanning null(DF)


def sphere(radius: float = 1.0, ambient_dim: int = 3) -> ManifoldSpec:
    """Sphere of given radius centered at the origin.

    F is scaled as (x.x - R^2)/2 so that DF(x) = x^T and F_xx = I.
    """
    if radius <= 0:
        raise ValueError("radius must be positive")
    r2 = radius * radius

    def constraint(x):
        x = np.asarray(x, dtype=float)
        return ((np.sum(x * x, axis=-1) - r2) / 2.0)[..., None]

    def jacobian(x):
        x = np.asarray(x, dtype=float)
        return x[..., None, :]

    def hessian_quad(x, v):
        v = np.asarray(v, dtype=float)
        return np.sum(v * v, axis=-1)[..., None]

    return ManifoldSpec(ambient_dim, 1, constraint, jacobian, hessian_quad,
                        "sphere", {"radius": radius})


def cone(height: float = 1.0, radius: float = 1.0) -> ManifoldSpec:
    """Right-circular cone x1^2 + x2^2 = (R/H)^2 x3^2, apex at the origin.

    The apex is a singular point and is excluded; 0 < x3 <= H is the sampled
    band but the constraint itself extends to all x3 > 0.
    """
    if height <= 0 or radius <= 0:
        raise ValueError("height and radius must be positive")
    k = radius / height  # slope of the generator in the (r, z) half-plane
    k2 = k * k

    def constraint(x):
        x = np.asarray(x, dtype=float)
        return ((x[..., 0] ** 2 + x[..., 1] ** 2 - k2 * x[..., 2] ** 2) / 2.0)[..., None]

    def jacobian(x):
        x = np.asarray(x, dtype=float)
        out = np.stack([x[..., 0], x[..., 1], -k2 * x[..., 2]], axis=-1)
        return out[..., None, :]

    def hessian_quad(x, v):
        v = np.asarray(v, dtype=float)
        return ((v[..., 0] ** 2 + v[..., 1] ** 2 - k2 * v[..., 2] ** 2))[..., None]

    return ManifoldSpec(3, 1, constraint, jacobian, hessian_quad,
                        "cone", {"height": height, "radius": radius,
                                 "slope": k,
                                 "sin_alpha": radius / np.hypot(radius, height),
                                 "cos_alpha": height / np.hypot(radius, height)})


def affine(basis: np.ndarray, origin: np.ndarray | None = None) -> ManifoldSpec:
    """Affine subspace through ``origin`` spanned by the columns of ``basis``.

    ``basis`` is orthonormalized; codimension zero (basis spanning R^d) is
    allowed and yields an empty constraint.
    """
    B = np.atleast_2d(np.asarray(basis, dtype=float))
    if B.ndim != 2:
        raise ValueError("basis must be a (d, m) matrix")
    d, m = B.shape
    if m > d:
        raise ValueError("more basis vectors than ambient dimensions")
    q, _ = np.linalg.qr(B)
    B = q[:, :m]
    x0 = np.zeros(d) if origin is None else np.asarray(origin, dtype=float)

    # Orthonormal complement (c = d - m rows); empty when m = d.
    comp = null_space(B.T) if m < d else np.zeros((d, 0))
    Bp = comp.T  # (c, d)
    c = Bp.shape[0]

    def constraint(x):
        x = np.asarray(x, dtype=float)
        return (x - x0) @ Bp.T

    def jacobian(x):
        x = np.asarray(x, dtype=float)
        shape = x.shape[:-1] + (c, d)
        return np.broadcast_to(Bp, shape).copy()

    def hessian_quad(x, v):
        v = np.asarray(v, dtype=float)
        return np.zeros(v.shape[:-1] + (c,))

    return ManifoldSpec(d, c, constraint, jacobian, hessian_quad,
                        "affine", {"basis": B, "origin": x0})


def plane(ambient_dim: int = 2) -> ManifoldSpec:
    """All of R^d as a trivially-embedded affine manifold (empty constraint)."""
    return affine(np.eye(ambient_dim))


def on_manifold(x, spec: ManifoldSpec, tol: float = MANIFOLD_TOL) -> bool:
    return bool(np.all(np.abs(spec.constraint(x)) <= tol))


# ---------------------------------------------------------------------------
# cone development (unrolling into the plane)
# ---------------------------------------------------------------------------

def _cone_cylindrical(x):
    x = np.asarray(x, dtype=float)
    r = np.hypot(x[..., 0], x[..., 1])
    phi = np.arctan2(x[..., 1], x[..., 0])
    return r, phi, x[..., 2]


def _cone_axes(spec, phi):
    """Unit generator and circumferential directions at azimuth phi."""
    sa, ca = spec.params["sin_alpha"], spec.params["cos_alpha"]
    g = np.stack([sa * np.cos(phi), sa * np.sin(phi), np.full_like(phi, ca)], axis=-1)
    t = np.stack([-np.sin(phi), np.cos(phi), np.zeros_like(phi)], axis=-1)
    return g, t


def develop_cone(spec: ManifoldSpec, x, phi_ref: float = 0.0) -> np.ndarray:
    """Unroll a cone point into the plane, measuring angles from ``phi_ref``.

    The azimuth difference is taken in (-pi, pi], so two points should be
    developed with a shared ``phi_ref`` no further than half a turn away.
    """
    if spec.kind != "cone":
        raise ValueError("develop_cone requires a cone spec")
    r, phi, z = _cone_cylindrical(x)
    s = np.hypot(r, z)  # slant distance from the apex
    dphi = np.mod(phi - phi_ref + np.pi, 2 * np.pi) - np.pi
    psi = dphi * spec.params["sin_alpha"]
    return np.stack([s * np.cos(psi), s * np.sin(psi)], axis=-1)


def undevelop_cone(spec: ManifoldSpec, p, phi_ref: float = 0.0) -> np.ndarray:
    """Map a developed-plane point back onto the cone."""
    if spec.kind != "cone":
        raise ValueError("undevelop_cone requires a cone spec")
    p = np.asarray(p, dtype=float)
    s = np.hypot(p[..., 0], p[..., 1])
    psi = np.arctan2(p[..., 1], p[..., 0])
    phi = phi_ref + psi / spec.params["sin_alpha"]
    r = s * spec.params["sin_alpha"]
    z = s * spec.params["cos_alpha"]
    return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=-1)


def _develop_tangent(spec, x, v, phi_ref):
    """Push a tangent vector at a cone point into developed-plane coordinates."""
    _, phi, _ = _cone_cylindrical(x)
    g, t = _cone_axes(spec, np.asarray(phi))
    dphi = np.mod(phi - phi_ref + np.pi, 2 * np.pi) - np.pi
    psi = dphi * spec.params["sin_alpha"]
    e_s = np.array([np.cos(psi), np.sin(psi)])
    e_t = np.array([-np.sin(psi), np.cos(psi)])
    return float(v @ g) * e_s + float(v @ t) * e_t


def _undevelop_tangent(spec, x, w, phi_ref):
    """Pull a developed-plane vector back to the tangent space at cone point x."""
    _, phi, _ = _cone_cylindrical(x)
    g, t = _cone_axes(spec, np.asarray(phi))
    dphi = np.mod(phi - phi_ref + np.pi, 2 * np.pi) - np.pi
    psi = dphi * spec.params["sin_alpha"]
    e_s = np.array([np.cos(psi), np.sin(psi)])
    e_t = np.array([-np.sin(psi), np.cos(psi)])
    return float(w @ e_s) * g + float(w @ e_t) * t


def _segment_hits_origin(p, q, tol):
    """Distance from the origin to segment [p, q] below tol?"""
    d = q - p
    dd = float(d @ d)
    if dd == 0.0:
        return float(np.linalg.norm(p)) <= tol
    s = np.clip(-float(p @ d) / dd, 0.0, 1.0)
    return float(np.linalg.norm(p + s * d)) <= tol


# ---------------------------------------------------------------------------
# projection, frames, geodesics, transport
# ---------------------------------------------------------------------------

def project_to_manifold(x, spec: ManifoldSpec) -> np.ndarray:
    """Nearest-point projection onto the manifold.

    Closed form for all three kinds: radial for the sphere, orthogonal for an
    affine subspace, and for the cone a projection onto the generator ray in
    the (r, z) half-plane. Raises DegeneratePoint where the nearest point is
    undefined or non-unique (sphere center, cone axis, apex side).
    """
    x = np.asarray(x, dtype=float)
    if spec.kind == "sphere":
        R = spec.params["radius"]
        nrm = np.linalg.norm(x, axis=-1)
        if np.any(nrm < 1e-12 * R):
            raise DegeneratePoint("sphere center has no nearest point")
        return R * x / nrm[..., None]
    if spec.kind == "affine":
        B, x0 = spec.params["basis"], spec.params["origin"]
        return x0 + (x - x0) @ B @ B.T
    if spec.kind == "cone":
        k = spec.params["slope"]
        r, phi, z = _cone_cylindrical(x)
        scale = np.maximum(np.hypot(r, np.abs(z)), 1.0)
        on_axis = r < 1e-12 * scale
        t = (r * k + z) / (1.0 + k * k)  # foot parameter on the ray (k t, t)
        if np.any(on_axis) or np.any(t <= 1e-12 * scale):
            raise DegeneratePoint("projection onto the cone is not unique here")
        out = np.stack([k * t * np.cos(phi), k * t * np.sin(phi), t], axis=-1)
        return out
    raise ValueError(f"unknown manifold kind {spec.kind!r}")


def tangent_basis(x, spec: ManifoldSpec) -> TangentFrame:
    """Orthonormal basis of null(DF(x)) at an on-manifold point."""
    x = np.asarray(x, dtype=float)
    if spec.kind == "cone":
        r, phi, z = _cone_cylindrical(x)
        if np.hypot(r, z) < 1e-12:
            raise RankDeficient("no tangent plane at the cone apex")
        g, t = _cone_axes(spec, np.asarray(phi))
        return TangentFrame(x, np.stack([g, t], axis=-1))
    if spec.kind == "affine":
        return TangentFrame(x, spec.params["basis"].copy())
    if spec.kind == "sphere" and spec.ambient_dim == 3:
        n = x / np.linalg.norm(x)
        pick = int(np.argmin(np.abs(n)))
        v1 = np.zeros(3)
        v1[pick] = 1.0
        v1 -= n[pick] * n
        v1 /= np.linalg.norm(v1)
        v2 = np.cross(n, v1)
        return TangentFrame(x, np.stack([v1, v2], axis=-1))
    # generic fallback: SVD null space of the constraint Jacobian
    DF = np.atleast_2d(spec.constraint_jacobian(x))
    if np.linalg.matrix_rank(DF, tol=1e-10) < spec.codim:
        raise RankDeficient("constraint Jacobian is rank deficient")
    U = null_space(DF)
    return TangentFrame(x, U)


def geodesic(x, v, t: float, spec: ManifoldSpec) -> np.ndarray:
    """Point reached after arc length ``t`` along the unit-speed geodesic
    starting at ``x`` in the direction of tangent vector ``v``."""
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    nv = np.linalg.norm(v)
    if nv == 0.0:
        if t == 0.0:
            return x.copy()
        raise ValueError("geodesic direction must be nonzero")
    vhat = v / nv
    if spec.kind == "sphere":
        R = spec.params["radius"]
        return np.cos(t / R) * x + np.sin(t / R) * R * vhat
    if spec.kind == "affine":
        return x + t * vhat
    if spec.kind == "cone":
        _, phi, _ = _cone_cylindrical(x)
        phi = float(phi)
        p = develop_cone(spec, x, phi)
        w = _develop_tangent(spec, x, vhat, phi)
        q = p + t * w
        s = np.linalg.norm(x)
        if _segment_hits_origin(p, q, 1e-12 * max(s, 1.0)):
            raise RankDeficient("geodesic crosses the cone apex")
        return undevelop_cone(spec, q, phi)
    raise ValueError(f"unknown manifold kind {spec.kind!r}")


def log_map(x, y, spec: ManifoldSpec) -> np.ndarray:
    """Tangent vector at x pointing to y with norm equal to geodesic distance."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if spec.kind == "affine":
        return y - x
    if spec.kind == "sphere":
        R = spec.params["radius"]
        xh, yh = x / R, y / R
        cosang = np.clip(float(xh @ yh), -1.0, 1.0)
        w = y - float(y @ xh) * xh
        nw = np.linalg.norm(w)
        ang = np.arccos(cosang)
        if ang < 1e-14 or nw < 1e-300:
            return np.zeros_like(x)
        if np.pi - ang < 1e-9:
            raise NonUniqueGeodesic("antipodal points on the sphere")
        return (R * ang / nw) * w
    if spec.kind == "cone":
        _, phi_x, _ = _cone_cylindrical(x)
        _, phi_y, _ = _cone_cylindrical(y)
        phi_x = float(phi_x)
        dphi = np.mod(float(phi_y) - phi_x + np.pi, 2 * np.pi) - np.pi
        if abs(abs(dphi) - np.pi) < 1e-9 and abs(dphi) > 0:
            raise NonUniqueGeodesic("two equal-length unrollings around the cone")
        p = develop_cone(spec, x, phi_x)
        q = develop_cone(spec, y, phi_x)
        return _undevelop_tangent(spec, x, q - p, phi_x)
    raise ValueError(f"unknown manifold kind {spec.kind!r}")


def log_map_many(x, P, spec: ManifoldSpec) -> np.ndarray:
    """Log map of many points P (n, d) at a common base point x, vectorized."""
    x = np.asarray(x, dtype=float)
    P = np.atleast_2d(np.asarray(P, dtype=float))
    if spec.kind == "affine":
        return P - x
    if spec.kind == "sphere":
        R = spec.params["radius"]
        xh = x / R
        cosang = np.clip(P @ xh / R, -1.0, 1.0)
        ang = np.arccos(cosang)
        if np.any(np.pi - ang < 1e-9):
            raise NonUniqueGeodesic("antipodal points on the sphere")
        W = P - np.outer(P @ xh, xh)
        nw = np.linalg.norm(W, axis=1)
        fac = np.zeros_like(ang)
        ok = (ang >= 1e-14) & (nw >= 1e-300)
        fac[ok] = R * ang[ok] / nw[ok]
        return W * fac[:, None]
    if spec.kind == "cone":
        sa = spec.params["sin_alpha"]
        _, phi_x, _ = _cone_cylindrical(x)
        phi_x = float(phi_x)
        r, phi, z = _cone_cylindrical(P)
        dphi = np.mod(phi - phi_x + np.pi, 2 * np.pi) - np.pi
        if np.any((np.abs(np.abs(dphi) - np.pi) < 1e-9) & (np.abs(dphi) > 0)):
            raise NonUniqueGeodesic("two equal-length unrollings around the cone")
        s = np.hypot(r, z)
        psi = dphi * sa
        q = np.stack([s * np.cos(psi), s * np.sin(psi)], axis=-1)
        p = develop_cone(spec, x, phi_x)
        diff = q - p
        g, t = _cone_axes(spec, np.asarray(phi_x))
        return np.outer(diff[:, 0], g) + np.outer(diff[:, 1], t)
    raise ValueError(f"unknown manifold kind {spec.kind!r}")


def geodesic_distance(x, y, spec: ManifoldSpec) -> float:
    return float(np.linalg.norm(log_map(x, y, spec)))


def parallel_transport(v, x, y, spec: ManifoldSpec) -> np.ndarray:
    """Transport tangent vector ``v`` from x to y along the minimizing geodesic.

    Norm and the angle with the geodesic tangent are preserved exactly: the
    sphere uses the closed-form great-circle transport, the cone unrolls to
    the plane where transport is the identity, and affine subspaces are flat.
    """
    v = np.asarray(v, dtype=float)
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if np.array_equal(x, y):
        return v.copy()
    if spec.kind == "affine":
        return v.copy()
    if spec.kind == "sphere":
        R = spec.params["radius"]
        xh, yh = x / R, y / R
        cosang = np.clip(float(xh @ yh), -1.0, 1.0)
        ang = np.arccos(cosang)
        if ang < 1e-14:
            return v.copy()
        if np.pi - ang < 1e-9:
            raise NonUniqueGeodesic("antipodal points on the sphere")
        u = yh - cosang * xh
        u /= np.linalg.norm(u)  # unit tangent at x toward y
        a = float(v @ u)
        return v + a * ((cosang - 1.0) * u - np.sin(ang) * xh)
    if spec.kind == "cone":
        _, phi_x, _ = _cone_cylindrical(x)
        _, phi_y, _ = _cone_cylindrical(y)
        phi_x = float(phi_x)
        dphi = np.mod(float(phi_y) - phi_x + np.pi, 2 * np.pi) - np.pi
        if abs(abs(dphi) - np.pi) < 1e-9:
            raise NonUniqueGeodesic("two equal-length unrollings around the cone")
        w = _develop_tangent(spec, x, v, phi_x)
        return _undevelop_tangent(spec, y, w, phi_x)
    raise ValueError(f"unknown manifold kind {spec.kind!r}")
