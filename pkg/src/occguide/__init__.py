"""Occlusion-guided detection toolkit.

Occlusion truth maps, occlusion-weighted losses, occlusion sub-region
selection, coarse-to-fine detection and occlusion-aware evaluation, with a
synthetic scene generator and oracle detector for desk-scale experiments.
"""

from .detection import NmsParams, OracleDetector, OracleDetectorParams, nms, oracle_detect
from .evaluation import EvalReport, EvalSettings, OcclusionEvaluator, ar_occ, average_precision, dataset_stats, evaluate
from .exceptions import DetectorError, FormatError, InvalidArgumentError
from .geometry import Annotation, BBox, Detection, covered_fraction, intersection_rect, iou, remap_box
from .occlusion_map import MapParams, OcclusionMap, TruthStyle, generate_truth_map, instance_occlusion_score, occlusion_weight
from .region_select import Region, SelectParams, select_regions
from .scenes import OcclusionBins, SceneGenParams, SceneSpec, synth_scene
from .tpp import TwoPhaseDetector, augment_crops, run_tpp

__version__ = "0.1.0"
