"""Numerical laboratory for the spinorial entropy functional on flat spin tori."""
from .grid import Grid, GridError, load_field, save_field
from .clifford import CliffordRep, build_rep
from .geometry import GeometryCache, NotSPDError, WeightedOps
from .functionals import FlowConstants, Snapshot, snapshot, w_lambda
from .flow import FlowState, RegimeError, StepRejected, gauged_rhs, run_with_monitors, step_rk4

__all__ = [
    "Grid", "GridError", "load_field", "save_field",
    "CliffordRep", "build_rep",
    "GeometryCache", "NotSPDError", "WeightedOps",
    "FlowConstants", "Snapshot", "snapshot", "w_lambda",
    "FlowState", "RegimeError", "StepRejected", "gauged_rhs", "run_with_monitors", "step_rk4",
]
