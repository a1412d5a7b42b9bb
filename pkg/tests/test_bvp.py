import numpy as np
import pytest

from boundaryflow import bvp
from boundaryflow.errors import NewtonDiverged, OutOfRange, RhsFailure


def rhs_free(t, y):
    y = np.asarray(y, dtype=float)
    if y.ndim == 1:
        d = y.size // 2
        return np.concatenate([y[d:], np.zeros(d)])
    d = y.shape[1] // 2
    return np.concatenate([y[:, d:], np.zeros_like(y[:, :d])], axis=1)


rhs_free.batched = True


def rhs_oscillator(t, y):
    y = np.asarray(y, dtype=float)
    if y.ndim == 1:
        d = y.size // 2
        return np.concatenate([y[d:], -y[:d]])
    d = y.shape[1] // 2
    return np.concatenate([y[:, d:], -y[:, :d]], axis=1)


rhs_oscillator.batched = True


def straight_guess(xa, xb, n):
    mesh = bvp.Mesh.uniform(n)
    return bvp.DiscreteCurve(mesh, xa + (xb - xa) * mesh.nodes[:, None])


GC_A = np.array([1.0, 0.0, 0.0])
GC_B = np.array([np.cos(1.0), np.sin(1.0), 0.0])


def gc_exact(t):
    return np.array([np.cos(t), np.sin(t), 0.0])


# ---------------------------------------------------------------------------
# schemes and meshes
# ---------------------------------------------------------------------------

def test_mesh_validation():
    with pytest.raises(ValueError):
        bvp.Mesh(np.array([0.0, 0.5, 0.4, 1.0]))
    with pytest.raises(ValueError):
        bvp.Mesh(np.array([0.1, 0.5, 1.0]))
    m = bvp.Mesh.uniform(4)
    assert np.allclose(m.widths.sum(), 1.0)


def test_lobatto_iiia_3_tableau():
    sch = bvp.CollocationScheme.lobatto_iiia(3)
    A, b = sch.coefficients
    assert np.allclose(A, [[0, 0, 0], [5 / 24, 1 / 3, -1 / 24], [1 / 6, 2 / 3, 1 / 6]],
                       atol=1e-14)
    assert np.allclose(b, [1 / 6, 2 / 3, 1 / 6], atol=1e-14)
    assert sch.order == 4


def test_gauss_scheme_quadrature_exactness():
    sch = bvp.CollocationScheme.gauss(3)
    _, b = sch.coefficients
    # degree-5 monomial integrals reproduced exactly
    for p in range(6):
        assert abs(b @ sch.stages ** p - 1.0 / (p + 1)) <= 1e-13


# ---------------------------------------------------------------------------
# solving
# ---------------------------------------------------------------------------

def test_free_motion_recovers_straight_line():
    xa = np.array([0.0, 0.0, 0.0])
    xb = np.array([1.0, 2.0, 3.0])
    sol = bvp.solve_bvp(rhs_free, xa, xb, straight_guess(xa, xb, 8))
    mesh = sol.mesh.nodes[:, None]
    assert np.abs(sol.points - (xa + (xb - xa) * mesh)).max() <= 1e-12
    assert np.abs(sol.velocities - (xb - xa)).max() <= 1e-10


def test_great_circle_midpoint_accuracy():
    sol = bvp.solve_bvp(rhs_oscillator, GC_A, GC_B, straight_guess(GC_A, GC_B, 20))
    mid = sol.points[10]
    assert np.linalg.norm(mid - gc_exact(0.5)) <= 1e-6
    assert np.allclose(gc_exact(0.5), [0.87758256, 0.47942554, 0.0], atol=1e-7)


def test_boundary_pinned_bitwise():
    sol = bvp.solve_bvp(rhs_oscillator, GC_A, GC_B, straight_guess(GC_A, GC_B, 10))
    assert np.array_equal(sol.points[0], GC_A)
    assert np.array_equal(sol.points[-1], GC_B)
    assert sol.residual <= 1e-8


def test_guess_must_satisfy_pinning():
    bad = straight_guess(GC_A + 0.01, GC_B, 10)
    with pytest.raises(ValueError):
        bvp.solve_bvp(rhs_oscillator, GC_A, GC_B, bad)


def test_rhs_failure_reports_time():
    def broken(t, y):
        raise FloatingPointError("synthetic failure")
    with pytest.raises(RhsFailure):
        bvp.solve_bvp(broken, GC_A, GC_B, straight_guess(GC_A, GC_B, 5))


def test_newton_diverges_on_budget_exhaustion():
    def nasty(t, y):
        y = np.asarray(y, dtype=float)
        d = y.shape[-1] // 2
        out = np.empty_like(y)
        out[..., :d] = y[..., d:]
        out[..., d:] = 4000.0 * np.sin(40.0 * y[..., :d]) + 2000.0
        return out
    nasty.batched = True
    xa = np.zeros(2)
    xb = np.array([0.3, 0.0])
    with pytest.raises(NewtonDiverged):
        bvp.solve_bvp(nasty, xa, xb, straight_guess(xa, xb, 6), max_newton=4)


def test_time_reversal_symmetry():
    fwd = bvp.solve_bvp(rhs_oscillator, GC_A, GC_B, straight_guess(GC_A, GC_B, 16))
    bwd = bvp.solve_bvp(rhs_oscillator, GC_B, GC_A, straight_guess(GC_B, GC_A, 16))
    assert np.abs(bwd.points - fwd.points[::-1]).max() <= 1e-8
    assert np.abs(bwd.velocities + fwd.velocities[::-1]).max() <= 1e-7


def test_mesh_refinement_errors_non_increasing():
    prev = None
    for n in (5, 10, 20, 40):
        sol = bvp.solve_bvp(rhs_oscillator, GC_A, GC_B,
                            straight_guess(GC_A, GC_B, n), tol=1e-12)
        err = max(np.linalg.norm(p - gc_exact(t))
                  for p, t in zip(sol.points, sol.mesh.nodes))
        if prev is not None:
            assert err <= prev * 1.05
        prev = err


# ---------------------------------------------------------------------------
# convergence order
# ---------------------------------------------------------------------------

def test_observed_order_at_least_nominal_minus_slack():
    order = bvp.convergence_order(rhs_oscillator, gc_exact, GC_A, GC_B,
                                  [5, 10, 20, 40, 80])
    assert order >= 3.6


def test_polynomial_solution_short_circuits():
    # free motion: the exact solution is degree 1, so errors sit at rounding
    line_exact = lambda t: GC_A + (GC_B - GC_A) * t
    order = bvp.convergence_order(rhs_free, line_exact, GC_A, GC_B, [5, 10, 20])
    assert order == np.inf


def test_single_mesh_rejected():
    with pytest.raises(ValueError):
        bvp.convergence_order(rhs_oscillator, gc_exact, GC_A, GC_B, [20])


# ---------------------------------------------------------------------------
# dense output
# ---------------------------------------------------------------------------

def test_hermite_matches_nodes_exactly():
    sol = bvp.solve_bvp(rhs_oscillator, GC_A, GC_B, straight_guess(GC_A, GC_B, 10))
    for i in (0, 3, 10):
        t = sol.mesh.nodes[i]
        p, v = bvp.hermite_eval(sol, t)
        assert np.allclose(p, sol.points[i], atol=1e-14)
        assert np.allclose(v, sol.velocities[i], atol=1e-12)


def test_hermite_linear_curve_is_linear():
    xa = np.zeros(2)
    xb = np.array([1.0, -2.0])
    sol = bvp.solve_bvp(rhs_free, xa, xb, straight_guess(xa, xb, 6))
    for t in (0.13, 0.5, 0.77):
        p, v = bvp.hermite_eval(sol, t)
        assert np.allclose(p, xa + t * (xb - xa), atol=1e-12)
        assert np.allclose(v, xb - xa, atol=1e-10)


def test_hermite_great_circle_accuracy():
    sol = bvp.solve_bvp(rhs_oscillator, GC_A, GC_B, straight_guess(GC_A, GC_B, 20))
    p, _ = bvp.hermite_eval(sol, 0.25)
    assert np.linalg.norm(p - gc_exact(0.25)) <= 1e-5


def test_hermite_range_checked():
    sol = bvp.solve_bvp(rhs_free, np.zeros(2), np.ones(2),
                        straight_guess(np.zeros(2), np.ones(2), 4))
    with pytest.raises(OutOfRange):
        bvp.hermite_eval(sol, 1.2)


def test_velocityless_curve_rejected_for_dense_output():
    curve = straight_guess(np.zeros(2), np.ones(2), 4)
    with pytest.raises(ValueError):
        bvp.hermite_eval(curve, 0.5)


def test_injectivity_warning():
    mesh = bvp.Mesh.uniform(4)
    pts = np.array([[0.0, 0], [1, 0], [0, 0], [2, 0], [3, 0]], dtype=float)
    curve = bvp.DiscreteCurve(mesh, pts)
    with pytest.warns(UserWarning):
        assert not curve.check_injectivity()
