"""Curves with pinned endpoints following a locally estimated
principal-direction field on an embedded manifold."""

from . import analysis, bvp, cli, dae, errors, field, flow, generators, geo, geometry
from .bvp import CollocationScheme, DiscreteCurve, Mesh, hermite_eval, solve_bvp
from .dae import ELSystem, first_order_form
from .field import DataCloud, Kernel, VectorFieldSample, field_at, truncate_cloud
from .flow import FlowResult, fixed_boundary_flow, frechet_mean, principal_flow
from .geometry import ManifoldSpec, TangentFrame, affine, cone, plane, sphere

__version__ = "0.1.0"
