"""Sliding-window back-end: state, triangulation, solver and marginalization."""
from .manage import initialize_landmarks, manage_window
from .marginalize import marginalize_oldest, schur_prior
from .solver import Problem, SolverReport, optimize
from .state import (FramePacket, FrameState, LineLandmark, PointLandmark, WindowConfig, WindowState,
                    rotate_window)
from .triangulate import triangulate_line, triangulate_point

__all__ = [
    "FramePacket", "FrameState", "LineLandmark", "PointLandmark", "Problem", "SolverReport",
    "WindowConfig", "WindowState", "initialize_landmarks", "manage_window", "marginalize_oldest",
    "optimize", "rotate_window", "schur_prior", "triangulate_line", "triangulate_point",
]
