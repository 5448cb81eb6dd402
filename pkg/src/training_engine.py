"""
Training: Adam updates, callbacks, the epoch loop and two-stage fine-tuning

The fit loop owns parameters and optimizer state for the duration of a run.
Every update returns new dicts; arrays handed in by the caller are never
written to.
"""

import json
import math
import time
from dataclasses import asdict, dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Dict, List, NamedTuple, Optional

import numpy as np

from .dataset_pipeline import (TRAIN, VAL, PreprocessConfig, make_batches)
from .errors import (BadConfigError, BadScopeError, EmptyHistoryError,
                     EmptySplitError, NonFiniteGradientError,
                     NonFiniteLossError, ShapeMismatchError)
from .logging_config import setup_logging
from .losses import categorical_cross_entropy, softmax  # noqa: F401  (re-exported)
from .network import TRAIN_MODE, EVAL_MODE, GradientStore, compute_gradients, forward
from .rng import splitmix64

logger = setup_logging('training_engine')

MASK64 = 0xFFFFFFFFFFFFFFFF


@dataclass(frozen=True)
class TrainConfig:
    max_epochs: int = 50
    batch_size: int = 32
    learning_rate: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-8
    early_stop_patience: int = 10
    early_stop_min_delta: float = 0.0
    lr_reduce_patience: int = 5
    lr_reduce_factor: float = 0.5
    min_lr: float = 1e-6
    seed_init: int = 0
    seed_shuffle: int = 0
    seed_dropout: int = 0
    workers: int = 1

    def __post_init__(self):
        problems = []
        if self.max_epochs < 1:
            problems.append(f"max_epochs must be >= 1 (got {self.max_epochs})")
        if self.batch_size < 1:
            problems.append(f"batch_size must be >= 1 (got {self.batch_size})")
        if not self.learning_rate > 0:
            problems.append(f"learning_rate must be > 0 (got {self.learning_rate})")
        for name in ('adam_beta1', 'adam_beta2'):
            if not 0 < getattr(self, name) < 1:
                problems.append(f"{name} must be in (0, 1) (got {getattr(self, name)})")
        if not self.adam_epsilon > 0:
            problems.append(f"adam_epsilon must be > 0 (got {self.adam_epsilon})")
        if self.early_stop_patience < 1 or self.lr_reduce_patience < 1:
            problems.append("patiences must be >= 1")
        if self.early_stop_min_delta < 0:
            problems.append(f"early_stop_min_delta must be >= 0 (got {self.early_stop_min_delta})")
        if not 0 < self.lr_reduce_factor < 1:
            problems.append(f"lr_reduce_factor must be in (0, 1) (got {self.lr_reduce_factor})")
        if self.min_lr < 0:
            problems.append(f"min_lr must be >= 0 (got {self.min_lr})")
        if self.workers < 1:
            problems.append(f"workers must be >= 1 (got {self.workers})")
        if problems:
            raise BadConfigError("; ".join(problems))

    @classmethod
    def stage2_defaults(cls, **overrides):
        """Fine-tuning stage: same callbacks, learning rate 1e-5."""
        overrides.setdefault('learning_rate', 1e-5)
        return cls(**overrides)


@dataclass
class OptimizerState:
    learning_rate: float
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    t: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def fresh(cls, params, mask, config):
        """Zero moments for every trainable parameter."""
        names = [name for name, flag in mask.items() if flag]
        return cls(
            learning_rate=config.learning_rate,
            beta1=config.adam_beta1,
            beta2=config.adam_beta2,
            epsilon=config.adam_epsilon,
            m={name: np.zeros_like(params[name]) for name in names},
            v={name: np.zeros_like(params[name]) for name in names},
        )


def adam_step(params, grads, state):
    """
    One Adam update

    t <- t + 1; m <- b1 m + (1 - b1) g; v <- b2 v + (1 - b2) g^2;
    theta <- theta - lr * m_hat / (sqrt(v_hat) + eps) with bias-corrected
    m_hat, v_hat.

    A zero gradient must leave the parameter unchanged whatever the moments
    hold, yet the update rule above would still move it by the decayed m.
    The rule is therefore applied per tensor: a tensor whose gradient is
    missing or zero everywhere keeps its value and its moments, while a
    partly-zero gradient goes through the full update. The step counter
    advances either way.

    Args:
        params: Parameter dict
        grads: GradientStore or {name: gradient}
        state: OptimizerState

    Returns:
        (new parameter dict, new OptimizerState)
    """
    if isinstance(grads, GradientStore):
        grads = grads.grads

    for name, grad in grads.items():
        if name not in params or params[name].shape != np.shape(grad):
            raise ShapeMismatchError(f"gradient for {name} does not match its parameter")
        if name in state.m and state.m[name].shape != params[name].shape:
            raise ShapeMismatchError(f"optimizer moments for {name} have the wrong shape")
        if not np.all(np.isfinite(grad)):
            raise NonFiniteGradientError(f"gradient for {name} contains NaN or infinite values")

    t = state.t + 1
    correction1 = 1.0 - state.beta1 ** t
    correction2 = 1.0 - state.beta2 ** t

    new_params = dict(params)
    new_m = dict(state.m)
    new_v = dict(state.v)
    for name, grad in grads.items():
        if not np.any(grad):
            # identically zero: treated like a missing gradient
            continue
        m = state.m.get(name, np.zeros_like(params[name]))
        v = state.v.get(name, np.zeros_like(params[name]))
        m = state.beta1 * m + (1.0 - state.beta1) * grad
        v = state.beta2 * v + (1.0 - state.beta2) * (grad * grad)
        m_hat = m / correction1
        v_hat = v / correction2
        update = state.learning_rate * m_hat / (np.sqrt(v_hat) + state.epsilon)
        new_params[name] = (params[name] - update).astype(params[name].dtype, copy=False)
        new_m[name] = m.astype(params[name].dtype, copy=False)
        new_v[name] = v.astype(params[name].dtype, copy=False)

    return new_params, replace(state, t=t, m=new_m, v=new_v)


class Decision(str, Enum):
    CONTINUE = 'continue'
    STOP = 'stop'


@dataclass
class CallbackState:
    best_val_loss: float = math.inf
    epochs_since_improvement: int = 0
    best_params: Optional[Dict[str, np.ndarray]] = None
    best_epoch: Optional[int] = None
    lr_best_val_loss: float = math.inf
    lr_epochs_since_improvement: int = 0


def _require_finite_loss(val_loss):
    if not math.isfinite(val_loss):
        raise NonFiniteLossError(f"validation loss is not finite ({val_loss})")


def early_stopping_update(state, val_loss, patience, min_delta=0.0, params=None, epoch=None):
    """
    Early-stopping bookkeeping for one epoch

    An epoch improves when val_loss < best_val_loss - min_delta; that resets
    the counter and snapshots ``params``. Otherwise the counter grows, and
    the decision is STOP once it reaches ``patience``.

    Returns:
        (new CallbackState, Decision)
    """
    if patience < 1:
        raise BadConfigError(f"patience must be >= 1 (got {patience})")
    _require_finite_loss(val_loss)
    if val_loss < state.best_val_loss - min_delta:
        state = replace(state, best_val_loss=val_loss, epochs_since_improvement=0,
                        best_params=params, best_epoch=epoch)
    else:
        state = replace(state, epochs_since_improvement=state.epochs_since_improvement + 1)
    decision = Decision.STOP if state.epochs_since_improvement >= patience else Decision.CONTINUE
    return state, decision


def reduce_lr_on_plateau_update(state, val_loss, learning_rate, patience, factor, min_lr):
    """
    Learning-rate reduction bookkeeping for one epoch

    Keeps its own best loss and counter. When the counter reaches
    ``patience`` the rate becomes max(lr * factor, min_lr) and the counter
    resets. The rate never increases.

    Returns:
        (new CallbackState, new learning rate)
    """
    if patience < 1:
        raise BadConfigError(f"patience must be >= 1 (got {patience})")
    if not 0 < factor < 1:
        raise BadConfigError(f"factor must be in (0, 1) (got {factor})")
    _require_finite_loss(val_loss)
    if val_loss < state.lr_best_val_loss:
        return replace(state, lr_best_val_loss=val_loss, lr_epochs_since_improvement=0), learning_rate

    waited = state.lr_epochs_since_improvement + 1
    if waited >= patience:
        new_lr = min(learning_rate, max(learning_rate * factor, min_lr))
        if new_lr < learning_rate:
            logger.info(f"Reducing learning rate {learning_rate:.3g} -> {new_lr:.3g}")
        return replace(state, lr_epochs_since_improvement=0), new_lr
    return replace(state, lr_epochs_since_improvement=waited), learning_rate


@dataclass
class EpochMetrics:
    epoch: int
    train_loss: float
    train_accuracy: float
    val_loss: float
    val_accuracy: float
    learning_rate: float
    wall_seconds: float


STOP_MAX_EPOCHS, STOP_EARLY = 'max_epochs', 'early_stop'


@dataclass
class TrainingHistory:
    label: str
    epochs: List[EpochMetrics] = field(default_factory=list)
    stop_reason: str = STOP_MAX_EPOCHS
    stage_boundary: Optional[int] = None

    @property
    def best_epoch(self):
        """Epoch number with the lowest val_loss, earliest on ties."""
        if not self.epochs:
            return None
        best = min(self.epochs, key=lambda metrics: (metrics.val_loss, metrics.epoch))
        return best.epoch

    def metrics_for(self, epoch):
        for metrics in self.epochs:
            if metrics.epoch == epoch:
                return metrics
        raise KeyError(epoch)

    def save(self, path):
        """JSON Lines: one EpochMetrics object per line, then a summary line."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, 'w', encoding='utf-8') as f:
            for metrics in self.epochs:
                f.write(json.dumps(asdict(metrics)) + '\n')
            f.write(json.dumps({
                'summary': True,
                'label': self.label,
                'stop_reason': self.stop_reason,
                'best_epoch': self.best_epoch,
                'stage_boundary': self.stage_boundary,
            }) + '\n')
        return path

    @classmethod
    def load(cls, path):
        path = Path(path)
        epochs = []
        summary = {}
        with open(path, 'r', encoding='utf-8') as f:
            for number, line in enumerate(f, 1):
                if not line.strip():
                    continue
                try:
                    record = json.loads(line)
                    if record.get('summary'):
                        summary = record
                    else:
                        epochs.append(EpochMetrics(**record))
                except (ValueError, TypeError) as exc:
                    raise EmptyHistoryError(f"{path}:{number}: unreadable history line ({exc})") from None
        if not epochs:
            raise EmptyHistoryError(f"history {path} has no epochs")
        return cls(
            label=summary.get('label') or path.stem,
            epochs=epochs,
            stop_reason=summary.get('stop_reason', STOP_MAX_EPOCHS),
            stage_boundary=summary.get('stage_boundary'),
        )


class FitResult(NamedTuple):
    best_params: Dict[str, np.ndarray]
    history: TrainingHistory
    optimizer_state: OptimizerState


def predict_split(arch, params, manifest, split, batch_size, preprocess=PreprocessConfig(), workers=1):
    """
    Eval-mode probabilities for every record of a split, in manifest order

    Returns:
        (N x num_classes probabilities, N true class indices)
    """
    probabilities = []
    truths = []
    for inputs, labels in make_batches(manifest, split, batch_size, preprocess, workers=workers):
        probabilities.append(forward(arch, params, inputs, EVAL_MODE).probabilities)
        truths.append(labels.argmax(axis=1))
    return np.concatenate(probabilities), np.concatenate(truths)


def loss_and_accuracy(arch, params, manifest, split, batch_size, preprocess=PreprocessConfig(), workers=1):
    probabilities, truths = predict_split(arch, params, manifest, split, batch_size, preprocess, workers)
    onehot = np.eye(arch.num_classes, dtype=probabilities.dtype)[truths]
    loss = categorical_cross_entropy(probabilities, onehot)
    accuracy = float(np.mean(probabilities.argmax(axis=1) == truths))
    return loss, accuracy


def _frozen_batchnorm_names(arch, mask):
    names = set()
    for layer in arch.layers:
        if layer.kind == 'batchnorm' and not mask.get(f'{layer.name}.gamma', False):
            names.update({f'{layer.name}.running_mean', f'{layer.name}.running_var'})
    return names


def fit(arch, params, mask, manifest, config, preprocess=PreprocessConfig(), label='model',
        optimizer_state=None, epoch_offset=0):
    """
    Train with Adam, reduce-LR-on-plateau and early stopping

    Each epoch walks the shuffled train batches (train mode), then scores
    the train and val splits in eval mode. LR reduction is applied before
    early stopping. Running statistics of batchnorm layers whose gamma is
    frozen stay as they are.

    Args:
        arch: ArchitectureSpec
        params: Starting parameters
        mask: Trainability mask
        manifest: DatasetManifest with train and val records
        config: TrainConfig
        preprocess: PreprocessConfig for decoding
        label: Run label stored in the history
        optimizer_state: Resume from this state instead of fresh moments
        epoch_offset: Number added to epoch indices (fine-tuning stage 2)

    Returns:
        FitResult(best_params, history, optimizer_state); best_params are
        the parameters of history.best_epoch
    """
    for split in (TRAIN, VAL):
        if not manifest.split_records(split):
            raise EmptySplitError(f"split '{split}' has no records")

    state = optimizer_state or OptimizerState.fresh(params, mask, config)
    callbacks = CallbackState()
    history = TrainingHistory(label)
    frozen_stats = _frozen_batchnorm_names(arch, mask)
    best_params, best_val_loss = params, math.inf

    for index in range(1, config.max_epochs + 1):
        epoch = epoch_offset + index
        started = time.perf_counter()
        batches = make_batches(manifest, TRAIN, config.batch_size, preprocess,
                               shuffle_seed=config.seed_shuffle, epoch=epoch, workers=config.workers)
        for number, (inputs, labels) in enumerate(batches, 1):
            dropout_seed = splitmix64((config.seed_dropout ^ (epoch << 32) ^ number) & MASK64)
            gradients = compute_gradients(arch, params, mask, inputs, labels, TRAIN_MODE, dropout_seed)
            if not math.isfinite(gradients.loss):
                raise NonFiniteLossError(f"non-finite loss at epoch {epoch}, batch {number}")
            params, state = adam_step(params, gradients, state)
            for name, value in gradients.running_updates.items():
                if name not in frozen_stats:
                    params[name] = value

        train_loss, train_accuracy = loss_and_accuracy(arch, params, manifest, TRAIN, config.batch_size,
                                                       preprocess, config.workers)
        val_loss, val_accuracy = loss_and_accuracy(arch, params, manifest, VAL, config.batch_size,
                                                   preprocess, config.workers)
        if not (math.isfinite(train_loss) and math.isfinite(val_loss)):
            raise NonFiniteLossError(f"non-finite evaluation loss at epoch {epoch}")

        metrics = EpochMetrics(epoch, train_loss, train_accuracy, val_loss, val_accuracy,
                               state.learning_rate, time.perf_counter() - started)
        history.epochs.append(metrics)
        logger.info(
            f"[{label}] epoch {index}/{config.max_epochs} | loss {train_loss:.4f} acc {train_accuracy:.4f} "
            f"| val_loss {val_loss:.4f} val_acc {val_accuracy:.4f} | lr {state.learning_rate:.3g} "
            f"| {metrics.wall_seconds:.1f}s"
        )

        if val_loss < best_val_loss:
            best_params, best_val_loss = params, val_loss

        callbacks, new_lr = reduce_lr_on_plateau_update(
            callbacks, val_loss, state.learning_rate, config.lr_reduce_patience,
            config.lr_reduce_factor, config.min_lr,
        )
        state = replace(state, learning_rate=new_lr)
        callbacks, decision = early_stopping_update(
            callbacks, val_loss, config.early_stop_patience, config.early_stop_min_delta, params, epoch,
        )
        if decision is Decision.STOP:
            history.stop_reason = STOP_EARLY
            logger.info(f"[{label}] early stop at epoch {epoch}; restoring epoch {history.best_epoch}")
            break

    return FitResult(best_params, history, state)


def unfreeze(arch, mask, scope):
    """
    Mark every learnable parameter of the layers in ``scope`` trainable

    A scope entry such as "block5" matches layers named "block5" or
    "block5_*" (block5_conv1, block5_conv2, ...).

    Raises:
        BadScopeError: a scope entry matches no parameter
    """
    scopes = [scope] if isinstance(scope, str) else list(scope)
    new_mask = dict(mask)
    for entry in scopes:
        matched = [name for name in mask
                   if name.split('.', 1)[0] == entry or name.split('.', 1)[0].startswith(f'{entry}_')]
        if not matched:
            raise BadScopeError(f"unfreeze scope '{entry}' matches no layer of {arch.family}")
        for name in matched:
            new_mask[name] = True
    return new_mask


def fine_tune_two_stage(arch, params, mask, manifest, stage1, stage2, unfreeze_scope=('block5',),
                        preprocess=PreprocessConfig(), label='vgg16_finetune'):
    """
    Train the head with the backbone frozen, then unfreeze ``unfreeze_scope``
    and continue from the stage-1 best parameters with fresh Adam moments

    Returns:
        FitResult whose history concatenates both stages, with
        stage_boundary set to the number of stage-1 epochs
    """
    scopes = [unfreeze_scope] if isinstance(unfreeze_scope, str) else list(unfreeze_scope)
    new_mask = unfreeze(arch, mask, scopes)

    logger.info(f"[{label}] stage 1: head only, lr {stage1.learning_rate:g}")
    first = fit(arch, params, mask, manifest, stage1, preprocess, label)
    boundary = len(first.history.epochs)

    logger.info(f"[{label}] stage 2: unfrozen {', '.join(scopes)}, lr {stage2.learning_rate:g}")
    second = fit(arch, first.best_params, new_mask, manifest, stage2, preprocess, label,
                 epoch_offset=boundary)

    history = TrainingHistory(
        label=label,
        epochs=first.history.epochs + second.history.epochs,
        stop_reason=second.history.stop_reason,
        stage_boundary=boundary,
    )
    best_params = first.best_params if history.best_epoch <= boundary else second.best_params
    return FitResult(best_params, history, second.optimizer_state)
