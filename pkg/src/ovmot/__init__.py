"""Open-vocabulary multi-object tracking: association, classification, evaluation."""
from ._accel import backend_name
from .association import AssociationConfig, associate_frame, bisoftmax_scores, temporal_vote, track_video
from .core import BACKGROUND_ID, Annotation, BoundingBox, Detection, Track, TrackState, iou_2d, nms
from .metrics import TetaConfig, iou_3d, match_frame, teta, track_map
from .simulate import ScenarioConfig, generate_scenario, run_end_to_end, track_scenario
from .vocab import ClassifierConfig, ClassVocabulary, VocabClass, classify

__version__ = "0.1.0"

__all__ = [
    "AssociationConfig",
    "Annotation",
    "BACKGROUND_ID",
    "BoundingBox",
    "ClassVocabulary",
    "ClassifierConfig",
    "Detection",
    "ScenarioConfig",
    "TetaConfig",
    "Track",
    "TrackState",
    "VocabClass",
    "associate_frame",
    "backend_name",
    "bisoftmax_scores",
    "classify",
    "generate_scenario",
    "iou_2d",
    "iou_3d",
    "match_frame",
    "nms",
    "run_end_to_end",
    "temporal_vote",
    "teta",
    "track_map",
    "track_scenario",
    "track_video",
]
