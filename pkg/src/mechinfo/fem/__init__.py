"""Finite-element encoder: architected geometries, meshing and solves."""

from .geometry import (GeometrySpec, Geometry, build_geometry, ellipse_bounds,
                       ellipse_centers, pore_radius, void_fraction)
from .mesh import MeshedDomain, mesh_domain
from .solver import (FactorizedSystem, FemSensorReading, assemble_and_factor,
                     fem_response_matrix, nodal_stress, patch_test, sensor_nodes, solve_load)

__all__ = [
    "GeometrySpec", "Geometry", "build_geometry", "ellipse_bounds", "ellipse_centers",
    "pore_radius", "void_fraction", "MeshedDomain", "mesh_domain", "FactorizedSystem",
    "FemSensorReading", "assemble_and_factor", "fem_response_matrix", "nodal_stress",
    "patch_test", "sensor_nodes", "solve_load",
]
