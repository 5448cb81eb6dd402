"""
Training-curve plots and single-image prediction
"""

from dataclasses import dataclass
from pathlib import Path
from typing import List, Tuple

import matplotlib
matplotlib.use('Agg')
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .checkpoint import Checkpoint, load_checkpoint  # noqa: E402
from .dataset_pipeline import PreprocessConfig, load_and_preprocess  # noqa: E402
from .errors import BadTopKError, EmptyHistoryError, PlotIOError  # noqa: E402
from .logging_config import setup_logging  # noqa: E402
from .network import EVAL_MODE, forward  # noqa: E402
from .training_engine import TrainingHistory  # noqa: E402

logger = setup_logging('reports')

PLOT_FORMATS = ('png', 'svg')
_SERIES = {
    'accuracy': ('train_accuracy', 'val_accuracy'),
    'loss': ('train_loss', 'val_loss'),
}


def build_history_figure(history, metric, show=False):
    """
    Train and val curves of one metric against the epoch number

    Fine-tuning histories get a dashed vertical line at the stage boundary.
    """
    train_key, val_key = _SERIES[metric]
    epochs = [m.epoch for m in history.epochs]

    fig, ax = plt.subplots(figsize=(8, 5), facecolor='white')
    ax.plot(epochs, [getattr(m, train_key) for m in history.epochs], 'o-', linewidth=1.5, markersize=3,
            label='train')
    ax.plot(epochs, [getattr(m, val_key) for m in history.epochs], 's-', linewidth=1.5, markersize=3,
            label='val')
    if history.stage_boundary is not None:
        ax.axvline(history.stage_boundary, color='gray', linestyle='--', linewidth=1,
                   label=f'fine-tuning starts (epoch {history.stage_boundary})')
    ax.set_title(f'{history.label} ({metric.capitalize()})', fontsize=12, fontweight='bold')
    ax.set_xlabel('epoch')
    ax.set_ylabel(metric)
    ax.grid(True, alpha=0.3, linestyle='--')
    ax.legend()
    fig.tight_layout()
    if show:
        plt.show()
    return fig


def plot_history(history, out_dir, fmt='png'):
    """
    Write ``<label>_accuracy.<fmt>`` and ``<label>_loss.<fmt>``

    Args:
        history: TrainingHistory or path to a history JSON Lines file
        out_dir: Output directory (created if needed)
        fmt: 'png' or 'svg'

    Returns:
        List of the two written paths

    Raises:
        EmptyHistoryError: history has no epochs
        PlotIOError: a file cannot be written
    """
    if fmt not in PLOT_FORMATS:
        raise PlotIOError(f"unsupported plot format '{fmt}' (use png or svg)")
    if not isinstance(history, TrainingHistory):
        try:
            history = TrainingHistory.load(history)
        except OSError as exc:
            raise PlotIOError(f"cannot read history {history}: {exc}") from None
    if not history.epochs:
        raise EmptyHistoryError(f"history '{history.label}' has no epochs")

    out_dir = Path(out_dir)
    written = []
    for metric in _SERIES:
        fig = build_history_figure(history, metric)
        target = out_dir / f'{history.label}_{metric}.{fmt}'
        try:
            out_dir.mkdir(parents=True, exist_ok=True)
            fig.savefig(str(target), dpi=150, bbox_inches='tight')
        except OSError as exc:
            raise PlotIOError(f"cannot write plot {target}: {exc}") from None
        finally:
            plt.close(fig)
        written.append(target)
        logger.info(f"Saved {metric} plot: {target}")
    return written


@dataclass
class PredictionResult:
    image_path: Path
    ranked: List[Tuple[str, float]]
    label: str

    def render(self):
        lines = [f"{self.image_path} ({self.label})"]
        for rank, (name, probability) in enumerate(self.ranked, 1):
            lines.append(f"  {rank}. {name:<16} {probability * 100:6.2f}%")
        return "\n".join(lines)

    def to_dict(self):
        return {
            'image': str(self.image_path),
            'label': self.label,
            'ranked': [{'class': name, 'probability': probability} for name, probability in self.ranked],
        }


def predict_image(image_path, checkpoint, top_k=5):
    """
    Rank classes for one image with a trained checkpoint

    The image goes through the PreprocessConfig stored in the checkpoint,
    the same function the training batches use.

    Args:
        image_path: JPEG or PNG file
        checkpoint: Checkpoint or checkpoint file path
        top_k: Number of classes to list, 1..num_classes

    Raises:
        DecodeError: the image cannot be decoded
        CorruptCheckpointError: the checkpoint cannot be read
        BadTopKError: top_k out of range
    """
    if not isinstance(checkpoint, Checkpoint):
        checkpoint = load_checkpoint(checkpoint)
    arch = checkpoint.arch
    if not 1 <= int(top_k) <= arch.num_classes:
        raise BadTopKError(f"top_k must be in 1..{arch.num_classes} (got {top_k})")

    preprocess = checkpoint.preprocess or PreprocessConfig(arch.input_shape[0], arch.input_shape[1])
    if checkpoint.vocabulary is not None:
        names = list(checkpoint.vocabulary.names)
    else:
        names = [f'class_{index}' for index in range(arch.num_classes)]

    tensor = load_and_preprocess(Path(image_path), preprocess)
    probabilities = forward(arch, checkpoint.params, tensor[None, ...], EVAL_MODE).probabilities[0]
    order = np.argsort(-probabilities, kind='stable')[:int(top_k)]
    ranked = [(names[index], float(probabilities[index])) for index in order]
    logger.debug(f"Predicted {image_path}: {ranked[0][0]} ({ranked[0][1]:.3f})")
    return PredictionResult(Path(image_path), ranked, checkpoint.label)
