"""Synthetic data scenarios on the sphere, the cone and the plane.

Every scenario draws uniform parameter values on a generating curve, adds
ambient Gaussian noise and projects the points back onto the manifold, so a
zero-noise draw lies on the curve exactly. Draws are deterministic per seed.
Scenario geometry lives in one table so the demo scripts, the CLI and the
tests share identical defaults.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field
from typing import Callable, Optional

import numpy as np

from . import geometry
from .errors import UnknownScenario
from .field import DataCloud
from .geometry import ManifoldSpec


def _sphere_graph_curve(phi0: float, amp: float, folds: int):
    """Colatitude graph phi(theta) = phi0 + amp cos(folds theta) on the sphere."""
    def curve(theta):
        theta = np.asarray(theta, dtype=float)
        colat = phi0 + amp * np.cos(folds * theta)
        return np.stack([np.sin(colat) * np.cos(theta),
                         np.sin(colat) * np.sin(theta),
                         np.cos(colat)], axis=-1)
    return curve


def _sphere_small_circle(colat: float):
    def curve(psi):
        psi = np.asarray(psi, dtype=float)
        return np.stack([np.sin(colat) * np.cos(psi),
                         np.sin(colat) * np.sin(psi),
                         np.full_like(psi, np.cos(colat))], axis=-1)
    return curve


def _cone_height_circle(spec: ManifoldSpec, z0: float):
    k = spec.params["slope"]
    def curve(psi):
        psi = np.asarray(psi, dtype=float)
        return np.stack([k * z0 * np.cos(psi), k * z0 * np.sin(psi),
                         np.full_like(psi, z0)], axis=-1)
    return curve


def _cone_developed_arc(spec: ManifoldSpec, center, radius: float):
    center = np.asarray(center, dtype=float)
    def curve(a):
        a = np.asarray(a, dtype=float)
        dev = center + radius * np.stack([np.cos(a), np.sin(a)], axis=-1)
        return geometry.undevelop_cone(spec, dev, 0.0)
    return curve


def _cone_developed_s(spec: ManifoldSpec, x0=0.35, span=0.5, amp=0.12):
    def curve(t):
        t = np.asarray(t, dtype=float)
        dev = np.stack([x0 + span * t, -amp * np.sin(2 * np.pi * t)], axis=-1)
        return geometry.undevelop_cone(spec, dev, 0.0)
    return curve


_TWO_BRANCH_ANGLE = np.deg2rad(55.0)
_TWO_BRANCH_ROOT = np.array([1.4, 0.0])


def two_branch_point(t, branch: str = "B") -> np.ndarray:
    """Point on the dense trunk (A, t in [0, 2]) or the sparse offshoot
    (B, t in [0, 0.8]) of the two-branch scenario."""
    t = np.asarray(t, dtype=float)
    if branch == "A":
        return np.stack([t, np.zeros_like(t)], axis=-1)
    return _TWO_BRANCH_ROOT + np.stack([t * np.cos(_TWO_BRANCH_ANGLE),
                                        t * np.sin(_TWO_BRANCH_ANGLE)], axis=-1)


@dataclass(frozen=True)
class Scenario:
    name: str
    manifold: Callable[[], ManifoldSpec]
    curve: Callable[[ManifoldSpec], Callable]  # spec -> parameter curve
    param_range: tuple
    endpoints_at: tuple                        # parameter values of the endpoints
    flow_defaults: dict = dc_field(default_factory=dict)


def _catalog() -> dict:
    scen = {}

    scen["sphere-C"] = Scenario(
        "sphere-C", geometry.sphere,
        lambda spec: _sphere_small_circle(np.pi / 3),
        (-np.deg2rad(75), np.deg2rad(75)), (-np.deg2rad(75), np.deg2rad(75)),
        {"h": 0.25, "delta": -0.5, "k_project": 10, "eps_conv_rel": 1e-4})

    scen["sphere-star6-partial"] = Scenario(
        "sphere-star6-partial", geometry.sphere,
        lambda spec: _sphere_graph_curve(np.pi / 3, 0.25, 6),
        (0.0, np.pi / 3), (0.0, np.pi / 3),
        {"h": 0.25, "delta": -0.5, "k_project": 10, "eps_conv_rel": 1e-4})

    scen["sphere-star6-full"] = Scenario(
        "sphere-star6-full", geometry.sphere,
        lambda spec: _sphere_graph_curve(np.pi / 3, 0.25, 6),
        (0.0, 2 * np.pi), (0.0, np.pi / 3),
        {"h": 0.3, "delta": -1.0, "k_project": 10, "eps_conv_rel": 1e-4})

    scen["sphere-fold2-partial"] = Scenario(
        "sphere-fold2-partial", geometry.sphere,
        lambda spec: _sphere_graph_curve(np.pi / 3, 0.3, 2),
        (0.0, np.pi), (0.0, np.pi),
        {"h": 0.25, "delta": -0.5, "k_project": 10, "eps_conv_rel": 1e-4})

    scen["cone-band"] = Scenario(
        "cone-band", geometry.cone,
        lambda spec: _cone_height_circle(spec, 0.55),
        (-np.deg2rad(75), np.deg2rad(75)), (-np.deg2rad(75), np.deg2rad(75)),
        {"h": 0.2, "delta": -1.0, "k_project": 10, "eps_conv_rel": 1e-4})

    scen["cone-C"] = Scenario(
        "cone-C", geometry.cone,
        lambda spec: _cone_developed_arc(spec, (0.6, 0.0), 0.22),
        (np.pi - np.deg2rad(75), np.pi + np.deg2rad(75)),
        (np.pi - np.deg2rad(75), np.pi + np.deg2rad(75)),
        {"h": 0.2, "delta": -1.0, "k_project": 10, "eps_conv_rel": 1e-4})

    scen["cone-S"] = Scenario(
        "cone-S", geometry.cone,
        lambda spec: _cone_developed_s(spec),
        (0.0, 1.0), (0.0, 1.0),
        {"h": 0.2, "delta": -1.0, "k_project": 10, "eps_conv_rel": 1e-4})

    scen["plane-line"] = Scenario(
        "plane-line", lambda: geometry.plane(2),
        lambda spec: (lambda t: np.stack([np.asarray(t, dtype=float),
                                          np.zeros_like(np.asarray(t, dtype=float))],
                                         axis=-1)),
        (0.0, 1.0), (0.0, 1.0),
        {"h": np.inf, "delta": -0.5, "k_project": 1, "eps_conv_rel": 1e-6})

    scen["plane-two-branch"] = Scenario(
        "plane-two-branch", lambda: geometry.plane(2),
        lambda spec: (lambda t: two_branch_point(t, "B")),
        (0.0, 0.8), (0.12, 0.75),
        {"h": 0.12, "delta": -0.5, "h_star": 0.15, "k_project": 10,
         "eps_conv_rel": 1e-4})

    return scen


SCENARIOS = _catalog()


def scenario(name: str) -> Scenario:
    if name not in SCENARIOS:
        raise UnknownScenario(
            f"{name!r}; known: {', '.join(sorted(SCENARIOS))}")
    return SCENARIOS[name]


def scenario_manifold(name: str) -> ManifoldSpec:
    return scenario(name).manifold()


def scenario_endpoints(name: str) -> tuple:
    sc = scenario(name)
    spec = sc.manifold()
    f = sc.curve(spec)
    a, b = sc.endpoints_at
    return np.asarray(f(a), dtype=float), np.asarray(f(b), dtype=float)


def generating_curve_points(name: str, n: int = 2000) -> np.ndarray:
    """Dense polyline along the scenario's noise-free generating curve."""
    sc = scenario(name)
    spec = sc.manifold()
    f = sc.curve(spec)
    ts = np.linspace(*sc.param_range, n)
    return np.asarray(f(ts), dtype=float)


def generate(name: str, n: int, sigma: float, seed: int,
             params: Optional[dict] = None) -> DataCloud:
    """Draw a noisy scenario cloud; identical across runs for a fixed seed."""
    sc = scenario(name)
    spec = sc.manifold()
    rng = np.random.default_rng(seed)
    if name == "plane-two-branch":
        n_a = int(round(0.88 * n))
        t_a = rng.uniform(0.0, 2.0, n_a)
        t_b = rng.uniform(0.0, 0.8, n - n_a)
        pts = np.vstack([two_branch_point(t_a, "A"), two_branch_point(t_b, "B")])
    else:
        f = sc.curve(spec)
        ts = rng.uniform(*sc.param_range, n)
        pts = np.asarray(f(ts), dtype=float)
    if sigma > 0:
        pts = pts + rng.normal(0.0, sigma, pts.shape)
    pts = np.asarray(geometry.project_to_manifold(pts, spec), dtype=float)
    return DataCloud(pts)
