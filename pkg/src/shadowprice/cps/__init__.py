"""Construction and certification of epsilon-consistent price systems."""

from .certificate import Certificate, NodeRecord, cps_certificate
from .epsilon import EpsilonProcess, build_epsilon, epsilon_on_knots, lipschitz_excess
from .hull import in_hull, interior_margin, zero_in_interior
from .probe import SupportProbeReport, increment_support_probe
from .tilt import NodeTilt, tilt_node
from .tree import ShadowPrices, TiltedTree, TreeNode, build_scenario_tree, martingale_tilt, shadow_price
from .walk import (
    PivotCaseReport,
    RetirementWalk,
    TubeReport,
    first_exit,
    pivot_bound_check,
    retirement_walk,
    tube_check,
    walk_on_knots,
)

__all__ = [
    "Certificate",
    "EpsilonProcess",
    "NodeRecord",
    "NodeTilt",
    "PivotCaseReport",
    "RetirementWalk",
    "ShadowPrices",
    "SupportProbeReport",
    "TiltedTree",
    "TreeNode",
    "TubeReport",
    "build_epsilon",
    "build_scenario_tree",
    "cps_certificate",
    "epsilon_on_knots",
    "first_exit",
    "in_hull",
    "increment_support_probe",
    "interior_margin",
    "lipschitz_excess",
    "martingale_tilt",
    "pivot_bound_check",
    "retirement_walk",
    "shadow_price",
    "tilt_node",
    "tube_check",
    "walk_on_knots",
    "zero_in_interior",
]
