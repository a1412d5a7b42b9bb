import numpy as np
import pytest

from boundaryflow import field as vf
from boundaryflow import flow
from boundaryflow import geometry as geo
from boundaryflow.errors import IdenticalEndpoints

PLANE = geo.plane(2)
SPHERE = geo.sphere()


def line_cloud(n=50, seed=0):
    rng = np.random.default_rng(seed)
    xs = rng.uniform(0.0, 1.0, n)
    return vf.DataCloud(np.stack([xs, np.zeros(n)], axis=1))


# ---------------------------------------------------------------------------
# Frechet mean
# ---------------------------------------------------------------------------

def test_mean_of_coincident_points():
    p = np.array([0.0, 0.0, 1.0])
    cloud = vf.DataCloud(np.stack([p, p]))
    assert np.allclose(flow.frechet_mean(cloud, SPHERE), p, atol=1e-12)


def test_mean_of_symmetric_pair_is_geodesic_midpoint():
    th = 0.6
    a = np.array([np.sin(th), 0.0, np.cos(th)])
    b = np.array([-np.sin(th), 0.0, np.cos(th)])
    m = flow.frechet_mean(vf.DataCloud(np.stack([a, b])), SPHERE)
    assert np.allclose(m, [0.0, 0.0, 1.0], atol=1e-10)


def test_mean_of_antisymmetric_perturbations_near_pole():
    rng = np.random.default_rng(1)
    pole = np.array([0.0, 0.0, 1.0])
    U = geo.tangent_basis(pole, SPHERE).basis
    coeffs = rng.normal(0, 0.2, (50, 2))
    pts = []
    for c in coeffs:
        for sign in (1.0, -1.0):
            v = U @ (sign * c)
            pts.append(geo.geodesic(pole, v, np.linalg.norm(v), SPHERE))
    m = flow.frechet_mean(vf.DataCloud(np.array(pts)), SPHERE)
    assert np.linalg.norm(m - pole) <= 1e-3


# ---------------------------------------------------------------------------
# initial curve
# ---------------------------------------------------------------------------

def test_initial_curve_affine_nodes():
    c = flow.initial_curve(np.array([0.0, 0.0]), np.array([1.0, 0.0]), 4, PLANE)
    assert np.allclose(c.points, [[0, 0], [0.25, 0], [0.5, 0], [0.75, 0], [1, 0]])


def test_initial_curve_great_circle_samples():
    a = np.array([1.0, 0.0, 0.0])
    b = np.array([0.0, 1.0, 0.0])
    c = flow.initial_curve(a, b, 4, SPHERE)
    for t, p in zip(c.mesh.nodes, c.points):
        ang = t * np.pi / 2
        assert np.allclose(p, [np.cos(ang), np.sin(ang), 0.0], atol=1e-12)


def test_initial_curve_identical_endpoints():
    a = np.array([1.0, 0.0, 0.0])
    with pytest.raises(IdenticalEndpoints):
        flow.initial_curve(a, a.copy(), 4, SPHERE)


# ---------------------------------------------------------------------------
# objective
# ---------------------------------------------------------------------------

def test_objective_integral_curve_equals_length():
    cloud = line_cloud()
    mesh_curve = flow.initial_curve(np.array([0.0, 0.0]), np.array([1.0, 0.0]),
                                    10, PLANE)
    curve = flow.DiscreteCurve(mesh_curve.mesh, mesh_curve.points,
                               np.tile([1.0, 0.0], (11, 1)))
    got = flow.objective(curve, cloud, vf.Kernel(np.inf), np.array([1.0, 0]),
                         PLANE)
    assert abs(got - 1.0) <= 1e-12


def test_objective_orthogonal_curve_is_zero():
    cloud = line_cloud()
    mesh = flow.initial_curve(np.array([0.5, -0.5]), np.array([0.5, 0.5]), 10,
                              PLANE)
    curve = flow.DiscreteCurve(mesh.mesh, mesh.points, np.tile([0.0, 1.0], (11, 1)))
    got = flow.objective(curve, cloud, vf.Kernel(np.inf), np.array([1.0, 0]),
                         PLANE)
    assert abs(got) <= 1e-12


# ---------------------------------------------------------------------------
# fixed boundary flow
# ---------------------------------------------------------------------------

def test_flow_on_collinear_cloud_is_straight_segment():
    cloud = line_cloud()
    res = flow.fixed_boundary_flow(cloud, np.array([0.0, 0.0]),
                                   np.array([1.0, 0.0]), h=np.inf, delta=-0.5,
                                   spec=PLANE, n_intervals=20)
    assert res.converged
    straight = np.stack([res.curve.mesh.nodes, np.zeros(21)], axis=1)
    assert np.abs(res.curve.points - straight).max() <= 1e-6
    assert abs(res.objective - 1.0) <= 1e-6
    assert res.objective >= res.initial_objective - 1e-8


def test_flow_pins_endpoints_and_stays_feasible():
    rng = np.random.default_rng(2)
    psi = rng.uniform(-1.2, 1.2, 200)
    pts = np.stack([np.sin(1.0) * np.cos(psi), np.sin(1.0) * np.sin(psi),
                    np.full_like(psi, np.cos(1.0))], axis=1)
    pts = pts + rng.normal(0, 0.03, pts.shape)
    pts /= np.linalg.norm(pts, axis=1)[:, None]
    cloud = vf.DataCloud(pts)
    gen = lambda a: np.array([np.sin(1.0) * np.cos(a), np.sin(1.0) * np.sin(a),
                              np.cos(1.0)])
    x1, x2 = gen(-1.2), gen(1.2)
    res = flow.fixed_boundary_flow(cloud, x1, x2, h=0.3, delta=-0.5, spec=SPHERE,
                                   n_intervals=16, max_outer=60,
                                   k_project=5, eps_conv_rel=1e-4)
    assert np.array_equal(res.curve.points[0], x1)
    assert np.array_equal(res.curve.points[-1], x2)
    assert np.abs(SPHERE.constraint(res.curve.points)).max() <= 1e-10
    assert np.array_equal(res.initial_curve.points[0], x1)
    assert res.objective >= res.initial_objective - 1e-8


def test_flow_identical_endpoints():
    cloud = line_cloud()
    a = np.array([0.5, 0.0])
    with pytest.raises(IdenticalEndpoints):
        flow.fixed_boundary_flow(cloud, a, a.copy(), h=np.inf, spec=PLANE)


def test_flow_rejects_off_manifold_endpoint():
    cloud = line_cloud()
    with pytest.raises(ValueError):
        flow.fixed_boundary_flow(cloud, np.array([1.1, 0.0, 0.3]),
                                 np.array([0.0, 1.0, 0.0]), h=1.0, spec=SPHERE)


def test_flow_deferred_projection_variant():
    cloud = line_cloud()
    res = flow.fixed_boundary_flow(cloud, np.array([0.0, 0.0]),
                                   np.array([1.0, 0.0]), h=np.inf, delta=-0.5,
                                   spec=PLANE, n_intervals=10,
                                   project_each_iteration=False)
    assert res.converged
    assert np.abs(res.curve.points[:, 1]).max() <= 1e-8


# ---------------------------------------------------------------------------
# principal flow baseline
# ---------------------------------------------------------------------------

def test_principal_flow_constant_field_traces_both_ways():
    cloud = line_cloud(seed=3)
    res = flow.principal_flow(cloud, np.array([0.5, 0.0]), h=np.inf, r=0.4,
                              step=0.05, spec=PLANE)
    fwd, bwd = res
    assert not res.errors
    assert np.allclose(fwd.points[-1], [0.9, 0.0], atol=1e-9)
    assert np.allclose(bwd.points[-1], [0.1, 0.0], atol=1e-9)
    assert np.abs(fwd.points[:, 1]).max() <= 1e-12


def test_principal_flow_follows_small_circle():
    # dense noiseless ring: the trace must stay on the generating circle
    n = 3000
    colat = np.pi / 3
    psi = np.linspace(-np.pi, np.pi, n, endpoint=False)
    pts = np.stack([np.sin(colat) * np.cos(psi), np.sin(colat) * np.sin(psi),
                    np.full(n, np.cos(colat))], axis=1)
    cloud = vf.DataCloud(pts)
    start = pts[0]
    res = flow.principal_flow(cloud, start, h=0.15, r=0.5, step=0.01,
                              spec=SPHERE)
    for branch in res:
        colat_err = np.abs(np.arccos(np.clip(branch.points[:, 2], -1, 1)) - colat)
        assert colat_err.max() <= 1e-4 * 0.5 / 0.5  # 1e-4 per unit length, r=0.5


def test_principal_flow_truncates_on_data_gap():
    # isolated far point: the covariance there has a single neighbor
    pts = np.vstack([np.stack([np.linspace(0, 1, 30), np.zeros(30)], axis=1),
                     [[3.0, 0.0]]])
    cloud = vf.DataCloud(pts)
    res = flow.principal_flow(cloud, np.array([0.5, 0.0]), h=0.2, r=3.0,
                              step=0.1, spec=PLANE)
    assert res.errors
    branches = {b for b, _, _ in res.errors}
    assert "forward" in branches


def test_flow_runs_with_h_star_truncation():
    xs = np.linspace(0, 1, 40)
    near = np.stack([xs, np.zeros(40)], axis=1)
    far = np.stack([xs, np.full(40, 2.0)], axis=1)
    cloud = vf.DataCloud(np.vstack([near, far]))
    res = flow.fixed_boundary_flow(cloud, np.array([0.0, 0.0]),
                                   np.array([1.0, 0.0]), h=np.inf, delta=-0.5,
                                   h_star=0.5, spec=PLANE, n_intervals=10)
    assert res.converged
    assert np.abs(res.curve.points[:, 1]).max() <= 1e-6
