"""Two-hand mesh toolkit: hand model, collision queries, losses, metrics, temporal encoder, refiner."""

from .collision import CollisionReport, TriMesh, build_mesh, inside_mask, penetration_report, point_to_surface_distance
from .errors import (AlignmentError, ContractError, DivergenceError, ParseError, TopologyError, TwoHandsError,
                     ValidationError)
from .hand_model import HandModel, HandParamsFrame, MeshFrame, compose_two_hands, forward, generate_mini_hand
from .metrics import MetricsReport, evaluate
from .objectives import LossWeights
from .refiner import RefineConfig, refine_sequence
from .sequence import HandParamsSequence, synthesize_sequence

__version__ = "0.1.0"
