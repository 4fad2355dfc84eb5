"""
Training and evaluation: class-balanced focal loss, Adam, the epoch loop
with validation Macro-F1 selection, metrics and gradient checking.
"""

import logging
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd
from sklearn.metrics import confusion_matrix, f1_score, roc_auc_score
from tqdm import tqdm

from src.autodiff import GradientTape, focal_loss_terms
from src.config.model_config import (
    ADAM_PARAMS, GRADCHECK_PARAMS, LOSS_PARAMS, TRAIN_PARAMS, VARIANTS, WAVELET_PARAMS,
)
from src.dataset import ANOMALOUS, NORMAL, Dataset
from src.errors import ConfigError, ContractError, DataError, NumericalError, TrainingDivergedError
from src.model import init_params, model_forward, predict_proba, prepare_graphs
from src.utils import ensure_dir, make_rng
from src.wavelet import build_wavelet_bank

HISTORY_COLUMNS = ["epoch", "train_loss", "val_auc", "val_macro_f1"]


def expected_number(n, beta):
    """
    Effective number of samples η(n) = (1 - β^n) / (1 - β).

    Computed as -expm1(n log β) / (1 - β) so it stays accurate for β near 1.

    Raises:
        ConfigError: If n < 1 or β is outside [0, 1)
    """
    if n < 1:
        raise ConfigError(f"Sample count must be at least 1, got {n}")
    if not 0.0 <= beta < 1.0:
        raise ConfigError(f"beta must lie in [0, 1), got {beta}")
    if n == 1 or beta == 0.0:
        return 1.0
    return -math.expm1(n * math.log(beta)) / (1.0 - beta)


@dataclass(frozen=True)
class LossConfig:
    """β, γ and the training-split class counts (n_normal, n_anomalous)."""

    beta: float
    gamma: float
    class_counts: tuple
    log_floor: float = LOSS_PARAMS["log_floor"]

    def __post_init__(self):
        if not 0.0 <= self.beta < 1.0:
            raise ConfigError(f"beta must lie in [0, 1), got {self.beta}")
        if self.gamma < 0:
            raise ConfigError(f"gamma must be non-negative, got {self.gamma}")
        if len(self.class_counts) != 2 or min(self.class_counts) < 1:
            raise ConfigError(f"Both class counts must be at least 1, got {self.class_counts}")

    @property
    def class_weights(self):
        """(1 - β) / (1 - β^n_y) for y = normal, anomalous."""
        return np.array([1.0 / expected_number(n, self.beta) for n in self.class_counts])


@dataclass(frozen=True)
class TrainConfig:
    lr: float = TRAIN_PARAMS["lr"]
    batch_size: int = TRAIN_PARAMS["batch_size"]
    epochs: int = TRAIN_PARAMS["epochs"]
    d: int = TRAIN_PARAMS["d"]
    q: int = TRAIN_PARAMS["q"]
    K: int = TRAIN_PARAMS["K"]
    dropout: float = TRAIN_PARAMS["dropout"]
    beta: float = TRAIN_PARAMS["beta"]
    gamma: float = TRAIN_PARAMS["gamma"]
    seed: int = TRAIN_PARAMS["seed"]
    variant: str = TRAIN_PARAMS["variant"]
    kernel_id: str = WAVELET_PARAMS["kernel_id"]
    quad_points: int = WAVELET_PARAMS["quad_points"]

    def __post_init__(self):
        if self.lr <= 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        for name in ("batch_size", "d", "q", "K"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.epochs < 0:
            raise ConfigError(f"epochs must be non-negative, got {self.epochs}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must lie in [0, 1), got {self.dropout}")
        if self.variant not in VARIANTS:
            raise ConfigError(f"Unknown variant {self.variant!r}; expected one of {VARIANTS}")
        LossConfig(self.beta, self.gamma, (1, 1))

    @classmethod
    def from_config(cls, config):
        """Typed view of a merged configuration dict; extra keys are ignored."""
        return cls(**{name: config[name] for name in cls.__dataclass_fields__ if name in config})

    def loss_config(self, class_counts):
        """Loss settings for the training split; the cross-entropy variant sets β = γ = 0."""
        if self.variant == "cross-entropy":
            return LossConfig(0.0, 0.0, tuple(class_counts))
        return LossConfig(self.beta, self.gamma, tuple(class_counts))

    def build_bank(self):
        return build_wavelet_bank(self.q, self.K, kernel_id=self.kernel_id, quad_points=self.quad_points)


@dataclass
class Metrics:
    """Evaluation of one split. auc is None when the split holds a single class."""

    auc: float
    macro_f1: float
    loss: float
    confusion: np.ndarray = field(repr=False)

    def to_json(self):
        return {
            "auc": self.auc,
            "macro_f1": self.macro_f1,
            "loss": self.loss,
            "confusion": self.confusion.tolist(),
        }


# Loss and gradients

def cb_focal_loss(logits, label, cfg):
    """
    Class-balanced focal loss of one graph.

    -[(1 - β) / (1 - β^n_y)] (1 - p_y)^γ log p_y with p = softmax(logits),
    log p_y clamped below at cfg.log_floor.
    """
    weight = cfg.class_weights[label]
    losses, _ = focal_loss_terms(np.asarray(logits)[None, :], [label], [weight], cfg.gamma, cfg.log_floor)
    return float(losses[0])


def batch_loss(tape, logits, labels, cfg):
    """Mean class-balanced focal loss over a batch, recorded on the tape."""
    labels = np.asarray(labels, dtype=np.int64)
    return tape.focal_loss(logits, labels, cfg.class_weights[labels], cfg.gamma, cfg.log_floor)


def backward(tape, loss=None, loss_adjoint=1.0):
    """
    Gradients of the recorded loss with respect to every watched parameter.

    Args:
        tape (GradientTape): Tape of a completed train-mode forward pass
        loss (Variable, optional): Node to differentiate; defaults to the last one recorded
        loss_adjoint (float): Upstream adjoint

    Returns:
        dict: Gradient per parameter name

    Raises:
        ContractError: If the tape holds no forward pass
    """
    target = loss if loss is not None else tape.output
    return tape.backward(target, loss_adjoint)


# Optimiser

@dataclass
class AdamState:
    """First and second moment estimates plus the step counter."""

    m: dict
    v: dict
    t: int = 0

    @classmethod
    def zeros(cls, tensors):
        return cls(
            {name: np.zeros_like(value) for name, value in tensors.items()},
            {name: np.zeros_like(value) for name, value in tensors.items()},
        )


def adam_step(params, grads, state, lr, t=None, beta1=ADAM_PARAMS["beta1"], beta2=ADAM_PARAMS["beta2"],
              eps=ADAM_PARAMS["eps"]):
    """
    One bias-corrected Adam update.

    Args:
        params (dict): Parameter arrays by name
        grads (dict): Gradients with the same keys
        state (AdamState): Moments from the previous step
        lr (float): Step size
        t (int, optional): Step number; defaults to state.t + 1

    Returns:
        tuple: (updated params dict, updated AdamState); the inputs are not modified

    Raises:
        ContractError: If the key sets differ
        NumericalError: If a gradient is not finite
    """
    if set(params) != set(grads) or set(params) != set(state.m):
        raise ContractError(f"Parameter, gradient and state keys differ: {sorted(set(params) ^ set(grads))}")
    for name, grad in grads.items():
        if not np.all(np.isfinite(grad)):
            raise NumericalError(f"Non-finite gradient for parameter {name}")

    t = state.t + 1 if t is None else t
    correction1 = 1.0 - beta1 ** t
    correction2 = 1.0 - beta2 ** t
    new_params, new_m, new_v = {}, {}, {}
    for name, value in params.items():
        grad = grads[name]
        new_m[name] = beta1 * state.m[name] + (1.0 - beta1) * grad
        new_v[name] = beta2 * state.v[name] + (1.0 - beta2) * grad * grad
        step = (new_m[name] / correction1) / (np.sqrt(new_v[name] / correction2) + eps)
        new_params[name] = value - lr * step
    return new_params, AdamState(new_m, new_v, t)


# Metrics

def auc_score(labels, scores):
    """Area under the ROC curve, ties counted ½; None for a single-class split."""
    labels = np.asarray(labels)
    if len(np.unique(labels)) < 2:
        return None
    return float(roc_auc_score(labels, scores))


def macro_f1(labels, predictions):
    """Unweighted mean of the two per-class F1 scores; an absent class scores 0."""
    return float(f1_score(labels, predictions, labels=[NORMAL, ANOMALOUS], average="macro", zero_division=0))


def _records(split):
    return list(split.records) if isinstance(split, Dataset) else list(split)


def evaluate(params, bank, split, loss_cfg=None):
    """
    Infer-mode metrics of a split.

    Args:
        params (ModelParams): Trained parameters
        bank (WaveletBank): Template wavelet bank
        split: Dataset or list of (prepared) graphs
        loss_cfg (LossConfig, optional): Loss to report; plain cross-entropy when omitted

    Returns:
        Metrics

    Raises:
        DataError: If the split is empty
    """
    graphs = _records(split)
    if not graphs:
        raise DataError("Cannot evaluate an empty split")
    labels = np.array([g.label for g in graphs], dtype=np.int64)
    probabilities = predict_proba(params, bank, graphs)
    predictions = probabilities.argmax(axis=1)

    loss_cfg = loss_cfg if loss_cfg is not None else LossConfig(0.0, 0.0, (1, 1))
    logits = np.log(np.clip(probabilities, 1e-300, None))
    losses, _ = focal_loss_terms(logits, labels, loss_cfg.class_weights[labels], loss_cfg.gamma, loss_cfg.log_floor)

    auc = auc_score(labels, probabilities[:, ANOMALOUS])
    if auc is None:
        logging.warning(f"Split of {len(graphs)} graphs holds one class; AUC is undefined")
    return Metrics(
        auc=auc,
        macro_f1=macro_f1(labels, predictions),
        loss=float(losses.mean()),
        confusion=confusion_matrix(labels, predictions, labels=[NORMAL, ANOMALOUS]),
    )


# Training loop

def train(train_set, val_set, cfg, bank=None):
    """
    Train with Adam and keep the parameters of the best validation epoch.

    Every epoch shuffles the training split with a seeded stream, runs one
    Adam step per batch on the mean class-balanced focal loss and evaluates
    validation Macro-F1. Ties keep the earlier epoch.

    Args:
        train_set (Dataset): Training split with both classes present
        val_set (Dataset): Validation split
        cfg (TrainConfig): Hyperparameters
        bank (WaveletBank, optional): Template bank; built from cfg when omitted

    Returns:
        tuple: (best ModelParams, list of per-epoch history dicts)

    Raises:
        DataError: If a split is empty or the training split lacks a class
        TrainingDivergedError: If the loss or a gradient becomes non-finite; carries the
            parameters of the last completed epoch
    """
    if len(train_set) == 0 or len(val_set) == 0:
        raise DataError("Training and validation splits must be non-empty")
    if min(train_set.class_counts) < 1:
        raise DataError(f"Training split needs both classes, has counts {train_set.class_counts}")

    bank = bank if bank is not None else cfg.build_bank()
    params = init_params(train_set.feature_dim, cfg.d, cfg.q, cfg.variant, cfg.seed)
    loss_cfg = cfg.loss_config(train_set.class_counts)
    logging.info(f"Training {cfg.variant} model on {len(train_set)} graphs {train_set.class_counts} "
                 f"for {cfg.epochs} epochs, class weights {loss_cfg.class_weights.tolist()}")

    train_graphs = prepare_graphs(train_set.records, bank)
    val_graphs = prepare_graphs(val_set.records, bank)
    labels = train_set.labels
    state = AdamState.zeros(params.tensors)
    best, best_f1, best_epoch = params.copy(), -math.inf, 0
    last_good = best
    history = []

    epochs = tqdm(range(1, cfg.epochs + 1), desc="Training", disable=not sys.stderr.isatty())
    for epoch in epochs:
        order = make_rng(cfg.seed, "shuffle", epoch).permutation(len(train_graphs))
        total_loss = 0.0
        for batch_index, start in enumerate(range(0, len(order), cfg.batch_size)):
            batch = order[start:start + cfg.batch_size]
            tape = GradientTape()
            result = model_forward(
                [train_graphs[i] for i in batch], params, bank, mode="train", tape=tape,
                rng=make_rng(cfg.seed, "dropout", epoch, batch_index), dropout=cfg.dropout, keep_trace=False,
            )
            loss = batch_loss(tape, result.logits, labels[batch], loss_cfg)
            if not np.isfinite(loss.value):
                raise TrainingDivergedError(
                    f"Loss became {loss.value} in epoch {epoch}", checkpoint=last_good, epoch=epoch
                )
            try:
                params.tensors, state = adam_step(params.tensors, backward(tape, loss), state, cfg.lr)
            except NumericalError as e:
                raise TrainingDivergedError(f"Epoch {epoch}: {e}", checkpoint=last_good, epoch=epoch)
            params.running_mean, params.running_var = result.running_mean, result.running_var
            total_loss += float(loss.value) * len(batch)

        val_metrics = evaluate(params, bank, val_graphs)
        entry = {
            "epoch": epoch,
            "train_loss": total_loss / len(order),
            "val_auc": val_metrics.auc,
            "val_macro_f1": val_metrics.macro_f1,
        }
        history.append(entry)
        last_good = params.copy()
        logging.debug(f"Epoch {epoch}: loss {entry['train_loss']:.6f}, val F1 {entry['val_macro_f1']:.4f}")
        if val_metrics.macro_f1 > best_f1:
            best, best_f1, best_epoch = params.copy(), val_metrics.macro_f1, epoch

    if history:
        logging.info(f"Best validation Macro-F1 {best_f1:.4f} at epoch {best_epoch}")
    return best, history


def write_history(history, path):
    """Write per-epoch history as JSON lines."""
    ensure_dir(Path(path).parent)
    frame = pd.DataFrame(history, columns=HISTORY_COLUMNS)
    frame.to_json(path, orient="records", lines=True, double_precision=15)
    logging.info(f"Wrote {len(frame)} epochs of history to {path}")
    return str(path)


# Gradient checking

def numerical_gradient_errors(loss_fn, tensors, analytic, h=1e-5, max_entries=None, seed=0,
                              floor_scale=GRADCHECK_PARAMS["floor_scale"]):
    """
    Compare analytic gradients with central differences.

    Each tensor's error is ||g_ad - g_fd|| / max(||g_ad||, ||g_fd||, floor) over
    the checked entries, with floor = max(1e-8, floor_scale * ||g_ad over all tensors||).
    A tensor whose true gradient vanishes (a bias cancelled by batch norm) is
    measured against the whole gradient. With max_entries set, that many entries per
    tensor are drawn at random.

    Args:
        loss_fn (callable): dict of arrays -> float
        tensors (dict): Point to differentiate at; left unchanged
        analytic (dict): Analytic gradients at that point

    Returns:
        dict: Relative error per tensor name
    """
    rng = make_rng(seed, "gradcheck-entries")
    total = np.sqrt(sum(float(np.sum(np.square(g))) for g in analytic.values()))
    floor = max(1e-8, floor_scale * total)
    errors = {}
    for name in sorted(tensors):
        value = tensors[name]
        flat_indices = np.arange(value.size)
        if max_entries is not None and value.size > max_entries:
            flat_indices = np.sort(rng.choice(value.size, size=max_entries, replace=False))
        numeric = np.empty(len(flat_indices))
        for k, flat in enumerate(flat_indices):
            index = np.unravel_index(flat, value.shape)
            original = value[index]
            shifted = dict(tensors)
            shifted[name] = value.copy()
            shifted[name][index] = original + h
            plus = loss_fn(shifted)
            shifted[name][index] = original - h
            minus = loss_fn(shifted)
            numeric[k] = (plus - minus) / (2.0 * h)
        exact = np.asarray(analytic[name]).ravel()[flat_indices]
        scale = max(np.linalg.norm(exact), np.linalg.norm(numeric), floor)
        errors[name] = float(np.linalg.norm(exact - numeric) / scale)
    return errors


def gradient_errors(params, bank, fixture_graphs, h=1e-5, dropout=TRAIN_PARAMS["dropout"], beta=None,
                    gamma=None, seed=0, max_entries=None):
    """
    Per-parameter relative error of the full model's analytic gradient.

    The loss is the train-mode batch loss over `fixture_graphs`; dropout masks
    come from a fixed seed so every evaluation sees the same mask.
    """
    graphs = prepare_graphs(fixture_graphs, bank)
    labels = np.array([g.label for g in graphs], dtype=np.int64)
    counts = tuple(max(int(np.sum(labels == c)), 1) for c in (NORMAL, ANOMALOUS))
    loss_cfg = LossConfig(
        TRAIN_PARAMS["beta"] if beta is None else beta,
        TRAIN_PARAMS["gamma"] if gamma is None else gamma,
        counts,
    )

    def run(tensors, tape):
        candidate = params.copy()
        candidate.tensors = tensors
        result = model_forward(graphs, candidate, bank, mode="train", tape=tape,
                               rng=make_rng(seed, "gradcheck-dropout"), dropout=dropout, keep_trace=False)
        return batch_loss(tape, result.logits, labels, loss_cfg)

    tape = GradientTape()
    analytic = backward(tape, run(params.tensors, tape))

    def loss_fn(tensors):
        return float(run(tensors, GradientTape(enabled=False)).value)

    errors = numerical_gradient_errors(loss_fn, params.tensors, analytic, h, max_entries, seed)
    for name, error in errors.items():
        logging.debug(f"Gradient check {name}: {error:.3e}")
    return errors


def gradient_check(params, bank, fixture_graphs, h=1e-5, **kwargs):
    """Largest per-parameter relative gradient error of the full model."""
    return max(gradient_errors(params, bank, fixture_graphs, h, **kwargs).values())
