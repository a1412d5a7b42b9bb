"""Local principal-direction vector field estimated from a point cloud.

At a query point the cloud is searched for the nearest active data point, the
tangent covariance of its kernel neighborhood is formed in an orthonormal
tangent frame, and the top eigenvector is carried back to the query point
along the geodesic and sign-aligned against a reference direction.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field

import numpy as np
from scipy.spatial import cKDTree

from . import geometry
from .errors import EmptyNeighborhood, SpectralGapTooSmall
from .geometry import ManifoldSpec, TangentFrame

# Relative spectral gap below which the top eigenvector is ill-defined.
GAP_TOL = 1e-6


@dataclass
class DataCloud:
    """n ambient points with a boolean activity mask.

    Treated as immutable after construction; the nearest-neighbor index is
    built lazily and shared by all queries.
    """

    points: np.ndarray
    active_mask: np.ndarray = None
    _tree: cKDTree = dc_field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.points = np.atleast_2d(np.asarray(self.points, dtype=float))
        n = self.points.shape[0]
        if self.active_mask is None:
            self.active_mask = np.ones(n, dtype=bool)
        else:
            self.active_mask = np.asarray(self.active_mask, dtype=bool)
            if self.active_mask.shape != (n,):
                raise ValueError("active_mask must have one entry per point")
        if n < 2:
            raise ValueError("a data cloud needs at least 2 points")
        if int(self.active_mask.sum()) < 2:
            raise ValueError("a data cloud needs at least 2 active points")

    @property
    def ambient_dim(self) -> int:
        return self.points.shape[1]

    @property
    def n_points(self) -> int:
        return self.points.shape[0]

    @property
    def active_points(self) -> np.ndarray:
        return self.points[self.active_mask]

    def tree(self) -> cKDTree:
        if self._tree is None:
            self._tree = cKDTree(self.active_points)
        return self._tree

    def diameter(self) -> float:
        """Exact max pairwise distance for small clouds, bounding-box diagonal
        beyond 2000 points."""
        pts = self.active_points
        if len(pts) <= 2000:
            from scipy.spatial.distance import pdist
            return float(pdist(pts).max())
        span = pts.max(axis=0) - pts.min(axis=0)
        return float(np.linalg.norm(span))


@dataclass(frozen=True)
class Kernel:
    """Neighborhood weight. Only the indicator form 1(|x-y| <= h) is
    implemented; ``form`` exists as a config hook."""

    bandwidth: float
    form: str = "indicator"

    def __post_init__(self):
        if not (self.bandwidth > 0):
            raise ValueError("bandwidth must be positive (np.inf allowed)")
        if self.form != "indicator":
            raise NotImplementedError(f"kernel form {self.form!r} not implemented")

    def weights(self, distances: np.ndarray) -> np.ndarray:
        if np.isinf(self.bandwidth):
            return np.ones_like(distances)
        return (distances <= self.bandwidth).astype(float)


@dataclass(frozen=True)
class VectorFieldSample:
    """Unit principal direction at a point plus the local spectrum."""

    base_point: np.ndarray
    direction: np.ndarray          # unit vector in the tangent space
    eigenvalues: np.ndarray        # descending, length m
    neighbor_count: int
    eigenvectors: np.ndarray = None  # ambient (d, m) columns, transported


def local_covariance(x, cloud: DataCloud, kernel: Kernel, frame: TangentFrame,
                     spec: ManifoldSpec | None = None) -> np.ndarray:
    """Kernel-weighted covariance of log-mapped neighbors in the tangent frame.

    Returns the m x m matrix (1/sum k) sum_i k_i (U^T log_x x_i)(U^T log_x x_i)^T.
    With no manifold (or an affine one) the log map is the plain difference,
    which at h = inf reduces to the sample covariance about x.
    """
    x = np.asarray(x, dtype=float)
    pts = cloud.active_points
    dists = np.linalg.norm(pts - x, axis=1)
    w = kernel.weights(dists)
    idx = np.flatnonzero(w > 0)
    if idx.size < 2:
        raise EmptyNeighborhood(
            f"{idx.size} active points within h={kernel.bandwidth} of the query")
    U = frame.basis
    if spec is None or spec.kind == "affine":
        logs = pts[idx] - x
    else:
        logs = geometry.log_map_many(x, pts[idx], spec)
    Z = logs @ U  # (k, m) tangent coordinates
    wi = w[idx][:, None]
    sigma = (Z * wi).T @ Z / w[idx].sum()
    return 0.5 * (sigma + sigma.T)


def leading_eigenpair(sigma: np.ndarray, gap_tol: float = GAP_TOL):
    """Full descending spectrum of a symmetric PSD matrix.

    Returns (eigenvalues, eigenvectors) with eigenvectors in columns, the
    first column being the top direction under a deterministic sign
    convention (first nonzero component positive).
    """
    sigma = np.asarray(sigma, dtype=float)
    vals, vecs = np.linalg.eigh(sigma)
    order = np.argsort(vals)[::-1]
    vals, vecs = vals[order], vecs[:, order]
    if vals.size >= 2 and vals[0] - vals[1] <= gap_tol * max(vals[0], 0.0):
        raise SpectralGapTooSmall(
            f"lambda1={vals[0]:.6g} and lambda2={vals[1]:.6g} are not distinct")
    for j in range(vecs.shape[1]):
        v = vecs[:, j]
        nz = np.flatnonzero(np.abs(v) > 1e-9 * max(np.abs(v).max(), 1e-300))
        if nz.size and v[nz[0]] < 0:
            vecs[:, j] = -v
    return vals, vecs


def orient(w, v0) -> np.ndarray:
    """Sign-align w against the reference v0; an exact zero dot keeps w."""
    w = np.asarray(w, dtype=float)
    v0 = np.asarray(v0, dtype=float)
    return -w if float(w @ v0) < 0 else w.copy()


def project_to_cloud(x, cloud: DataCloud, spec: ManifoldSpec, k: int = 1) -> np.ndarray:
    """Support point of the cloud nearest to x.

    k = 1 returns the nearest active data point itself; k > 1 projects the
    mean of the k nearest active points back onto the manifold.
    """
    x = np.asarray(x, dtype=float)
    tree = cloud.tree()
    if k <= 1:
        _, i = tree.query(x)
        return cloud.active_points[int(i)].copy()
    _, ii = tree.query(x, k=min(k, len(cloud.active_points)))
    mean = cloud.active_points[np.atleast_1d(ii)].mean(axis=0)
    return geometry.project_to_manifold(mean, spec)


def field_at(x, cloud: DataCloud, kernel: Kernel, v0, spec: ManifoldSpec,
             k_project: int = 1, gap_tol: float = GAP_TOL,
             cache: dict | None = None) -> VectorFieldSample:
    """Principal-direction field at an arbitrary point.

    The query is projected onto the manifold and then into the data cloud;
    the top eigenvector of the local tangent covariance at the cloud point is
    parallel-transported back to the query and oriented against v0. A
    ``cache`` dict (keyed by the projected point) skips recomputing spectra
    when many queries share a projection, as the Jacobian probes do.
    """
    x_on = geometry.project_to_manifold(x, spec)
    x_proj = project_to_cloud(x_on, cloud, spec, k=k_project)
    key = x_proj.tobytes() if cache is not None else None
    if key is not None and key in cache:
        frame, vals, ambient, count = cache[key]
    else:
        frame = geometry.tangent_basis(x_proj, spec)
        sigma = local_covariance(x_proj, cloud, kernel, frame, spec)
        vals, vecs = leading_eigenpair(sigma, gap_tol=gap_tol)
        ambient = frame.basis @ vecs  # (d, m) eigenvectors in ambient coordinates
        dists = np.linalg.norm(cloud.active_points - x_proj, axis=1)
        count = int((kernel.weights(dists) > 0).sum())
        if key is not None:
            cache[key] = (frame, vals, ambient, count)
    moved = np.empty_like(ambient)
    for j in range(ambient.shape[1]):
        moved[:, j] = geometry.parallel_transport(ambient[:, j], x_proj, x_on, spec)
    e1 = moved[:, 0] / np.linalg.norm(moved[:, 0])  # transport is isometric anyway
    moved[:, 0] = orient(e1, v0)
    return VectorFieldSample(base_point=x_on, direction=moved[:, 0].copy(),
                             eigenvalues=vals, neighbor_count=count,
                             eigenvectors=moved)


def median_spacing(cloud: DataCloud) -> float:
    """Median nearest-neighbor distance among active points."""
    d, _ = cloud.tree().query(cloud.active_points, k=2)
    return float(np.median(d[:, 1]))


def default_fd_step(cloud: DataCloud) -> float:
    """Default finite-difference step for the data-driven field Jacobian.

    The nearest-point extension is piecewise smooth with cells at the data
    spacing, so steps below that scale see a flat field; the step must span a
    few cells to register how the principal direction sweeps across the cloud.
    """
    return max(1e-4 * cloud.diameter(), 2.0 * median_spacing(cloud))


def field_jacobian(x, cloud: DataCloud, kernel: Kernel, v0, spec: ManifoldSpec,
                   step: float | None = None, field_fn=None,
                   k_project: int = 1, cache: dict | None = None) -> np.ndarray:
    """Central finite-difference Jacobian of the ambient-extended field.

    ``field_fn`` is a test hook mapping a point to a field vector; when given
    it replaces the data-driven field (useful for synthetic linear fields).
    """
    x = np.asarray(x, dtype=float)
    if step is None:
        step = default_fd_step(cloud) if cloud is not None else 1e-6
    if field_fn is None:
        def field_fn(p):
            return field_at(p, cloud, kernel, v0, spec, k_project=k_project,
                            cache=cache).direction
    d = x.shape[0]
    J = np.empty((d, d))
    for j in range(d):
        e = np.zeros(d)
        e[j] = step
        J[:, j] = (field_fn(x + e) - field_fn(x - e)) / (2.0 * step)
    return J


def _polyline_distances(points: np.ndarray, vertices: np.ndarray) -> np.ndarray:
    """Distance from each point to a polyline given by its vertices."""
    best = np.full(len(points), np.inf)
    for a, b in zip(vertices[:-1], vertices[1:]):
        ab = b - a
        denom = float(ab @ ab)
        if denom == 0.0:
            d = np.linalg.norm(points - a, axis=1)
        else:
            s = np.clip((points - a) @ ab / denom, 0.0, 1.0)
            d = np.linalg.norm(points - (a + s[:, None] * ab), axis=1)
        best = np.minimum(best, d)
    return best


def truncate_cloud(cloud: DataCloud, curve, h_star: float) -> DataCloud:
    """Restrict the active mask to points within h* of a curve's polyline.

    ``curve`` may be a DiscreteCurve or a plain (N+1, d) vertex array.
    """
    if not (h_star > 0):
        raise ValueError("h* must be positive")
    vertices = np.asarray(getattr(curve, "points", curve), dtype=float)
    dists = _polyline_distances(cloud.points, vertices)
    mask = dists <= h_star
    if int(mask.sum()) < 2:
        raise EmptyNeighborhood(
            f"only {int(mask.sum())} points within h*={h_star} of the curve")
    return DataCloud(cloud.points.copy(), mask)


def lambda1_landscape(grid, cloud: DataCloud, kernel: Kernel,
                      spec: ManifoldSpec | None = None):
    """Evaluate lambda_1 of the local covariance at each grid point.

    Returns (records, errors): records is a list of (point, lambda1) with NaN
    where the evaluation failed, errors collects (index, exception).
    """
    records, errors = [], []
    for i, x in enumerate(grid):
        x = np.asarray(x, dtype=float)
        try:
            frame = (TangentFrame(x, np.eye(len(x))) if spec is None
                     else geometry.tangent_basis(x, spec))
            sigma = local_covariance(x, cloud, kernel, frame, spec)
            lam1 = float(np.linalg.eigvalsh(sigma)[-1])
        except Exception as exc:  # per-point failures are diagnostics, not fatal
            records.append((x, np.nan))
            errors.append((i, exc))
            continue
        records.append((x, lam1))
    return records, errors
