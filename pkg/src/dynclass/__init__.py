"""Dynamic classification: learned target-range segmentation with per-interval
regression and range-based rejection of unreliable predictions."""

from .dataset import Dataset, load_csv, iqr_filter, normalize, split, split_tt
from .segmentation import SegmentationList, initial_segmentation, interval_of, kde_density
from .classifiers import train_candidates, confusion, classification_loss
from .dynamic_loop import LoopConfig, run_dynamic_classification
from .interval_models import build_ensemble, predict
from .exclusion import ExclusionConfig, apply_exclusion, expand_intervals, exclusion_summary
from .pipeline import RunConfig, fit_dca, prepare, run_compare

__version__ = "0.1.0"
