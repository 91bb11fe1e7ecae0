"""Path finding for radio ray tracing: image method and min-path tracing
with reflections and edge diffractions, plus GO/UTD field evaluation."""

from .scene import Edge, Facet, Scene, SceneError, build_scene, load_scene
from .validation import PathStatus, RayPath, segment_obstructed, validate_path
from .visibility import (InteractionList, Kind, VisibilityGraph, build_adjacency,
                         build_visibility, enumerate_candidates)
from .image_method import UnsolvableCandidate, trace_image_path
from .mpt import SolverConfig, assemble_residual, solve_candidate
from .em import RadioConfig, propagate_path, total_field

__version__ = "0.1.0"
