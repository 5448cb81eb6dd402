"""
cityscope

City image classification toolkit: dataset scanning and deterministic
splitting, a vanilla CNN and a VGG16 transfer model on a numpy engine,
Adam training with early stopping and learning-rate reduction, two-stage
fine-tuning, evaluation reports, curve plots and single-image prediction.

Main components:
- dataset_pipeline: scan_dataset, split_dataset, make_batches
- model_zoo: build_vanilla_cnn, build_vgg16_transfer, count_parameters
- training_engine: fit, fine_tune_two_stage
- evaluation: evaluate_split, compare_runs
- reports: plot_history, predict_image
"""

from .dataset_pipeline import scan_dataset, split_dataset, make_batches
from .model_zoo import build_vanilla_cnn, build_vgg16_transfer, count_parameters, init_parameters
from .training_engine import TrainConfig, fit, fine_tune_two_stage
from .evaluation import evaluate_split, compare_runs
from .reports import plot_history, predict_image

__version__ = "0.1.0"
__all__ = [
    "scan_dataset", "split_dataset", "make_batches",
    "build_vanilla_cnn", "build_vgg16_transfer", "count_parameters", "init_parameters",
    "TrainConfig", "fit", "fine_tune_two_stage",
    "evaluate_split", "compare_runs",
    "plot_history", "predict_image",
]
