"""Mini-batch Adam training with dev-loss early stopping.

Defaults follow the training recipe of the model of record: learning rate
1e-4, batch size 8, 25 epochs with early stopping (patience 5 on dev
summed cross-entropy). All utterances are padded/truncated to a fixed
frame count before batching so results are independent of batch
composition.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field

import numpy as np

from . import network
from .features import fit_length

DEFAULT_PAD_FRAMES = 800


class TrainError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-4
    batch_size: int = 8
    max_epochs: int = 25
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    patience: int = 5
    seed: int = 0
    shuffle: bool = True
    pad_frames: int = DEFAULT_PAD_FRAMES

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise TrainError("learning_rate must be positive")
        if self.batch_size < 1:
            raise TrainError("batch_size must be >= 1")
        if self.patience > self.max_epochs:
            raise TrainError("patience must not exceed max_epochs")


@dataclass
class AdamState:
    m: list
    v: list
    step: int = 0

    @classmethod
    def for_params(cls, params):
        arrays = params.arrays()
        return cls(
            m=[np.zeros_like(a) for a in arrays],
            v=[np.zeros_like(a) for a in arrays],
        )


@dataclass
class TrainHistory:
    train_loss: list = field(default_factory=list)
    dev_loss: list = field(default_factory=list)
    seconds: list = field(default_factory=list)
    best_epoch: int = -1

    def write_csv(self, path):
        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["epoch", "train_loss", "dev_loss", "seconds"])
            for i, (tr, dv, sec) in enumerate(
                zip(self.train_loss, self.dev_loss, self.seconds), start=1
            ):
                writer.writerow([i, repr(float(tr)), repr(float(dv)), f"{sec:.3f}"])


def adam_step(params, grads, state: AdamState, config: TrainConfig):
    """One bias-corrected Adam update; returns (new_params, new_state)."""
    p_arrays = params.arrays()
    g_arrays = grads.arrays()
    layer_names = _layer_names(params)
    t = state.step + 1
    new_m, new_v, new_p = [], [], []
    for name, p, g, m, v in zip(layer_names, p_arrays, g_arrays, state.m, state.v):
        if not np.all(np.isfinite(g)):
            raise TrainError(f"non-finite gradient in {name}")
        m = config.beta1 * m + (1.0 - config.beta1) * g
        v = config.beta2 * v + (1.0 - config.beta2) * (g * g)
        m_hat = m / (1.0 - config.beta1**t)
        v_hat = v / (1.0 - config.beta2**t)
        new_m.append(m)
        new_v.append(v)
        new_p.append(p - config.learning_rate * m_hat / (np.sqrt(v_hat) + config.adam_eps))
    return _rebuild(params, new_p), AdamState(m=new_m, v=new_v, step=t)


def _layer_names(params):
    names = []
    for i in range(len(params.conv_w)):
        names.extend([f"conv{i + 1}_w", f"conv{i + 1}_b"])
    for i in range(len(params.dense_w)):
        names.extend([f"dense{i + 1}_w", f"dense{i + 1}_b"])
    return names


def _rebuild(params, arrays):
    n_conv = len(params.conv_w)
    return network.NetworkParams(
        spec=params.spec,
        output_dim=params.output_dim,
        conv_w=[arrays[2 * i] for i in range(n_conv)],
        conv_b=[arrays[2 * i + 1] for i in range(n_conv)],
        dense_w=[arrays[2 * n_conv], arrays[2 * n_conv + 2]],
        dense_b=[arrays[2 * n_conv + 1], arrays[2 * n_conv + 3]],
    )


def _batch_matrix(records, pad_frames, dtype=np.float32):
    mats = [
        fit_length(r.get_frames(), pad_frames, pad_frames).astype(dtype)
        for r in records
    ]
    return np.stack(mats)


def _mean_loss(params, records, targets_by_id, pad_frames, batch_size):
    total = 0.0
    for start in range(0, len(records), batch_size):
        chunk = records[start : start + batch_size]
        x = _batch_matrix(chunk, pad_frames)
        scores, _ = network.forward_batch(params, x)
        y = np.stack([targets_by_id[r.id] for r in chunk])
        total += float(network.loss(scores, y).sum())
    return total / len(records)


def train(corpus, targets_by_id, config: TrainConfig, output_dim,
          spec=None, init_seed=None, log_fn=None):
    """Train the speech network on the corpus' train split.

    Returns (params at the best dev-loss epoch, TrainHistory). Training is
    fully deterministic given the config seed: record order is
    lexicographic by id and the per-epoch shuffle uses a seeded generator.
    """
    train_records = corpus.split("train")
    dev_records = corpus.split("dev")
    if not train_records:
        raise TrainError("train split is empty")
    for rec in train_records:
        if rec.id not in targets_by_id:
            raise TrainError(f"no training target for utterance {rec.id!r}")

    params = network.init_params(
        output_dim, config.seed if init_seed is None else init_seed, spec=spec
    )
    state = AdamState.for_params(params)
    shuffle_rng = np.random.default_rng([config.seed, 1])

    history = TrainHistory()
    best_params = params
    best_loss = np.inf
    epochs_since_best = 0

    for epoch in range(1, config.max_epochs + 1):
        t0 = time.perf_counter()
        order = np.arange(len(train_records))
        if config.shuffle:
            shuffle_rng.shuffle(order)
        epoch_loss = 0.0
        for start in range(0, len(order), config.batch_size):
            chunk = [train_records[i] for i in order[start : start + config.batch_size]]
            x = _batch_matrix(chunk, config.pad_frames)
            y = np.stack([targets_by_id[r.id] for r in chunk])
            scores, trace = network.forward_batch(params, x)
            epoch_loss += float(network.loss(scores, y).sum())
            grads = network.backward(params, trace, y)
            params, state = adam_step(params, grads, state, config)
        train_loss = epoch_loss / len(train_records)

        if dev_records:
            dev_targets = {
                r.id: targets_by_id.get(r.id) for r in dev_records
            }
            missing = [rid for rid, t in dev_targets.items() if t is None]
            if missing:
                raise TrainError(f"no dev target for utterance {missing[0]!r}")
            dev_loss = _mean_loss(
                params, dev_records, dev_targets, config.pad_frames, config.batch_size
            )
        else:
            dev_loss = train_loss

        history.train_loss.append(train_loss)
        history.dev_loss.append(dev_loss)
        history.seconds.append(time.perf_counter() - t0)
        if log_fn:
            log_fn(
                f"epoch {epoch:3d}  train {train_loss:.4f}  dev {dev_loss:.4f}  "
                f"{history.seconds[-1]:.1f}s"
            )

        if dev_loss < best_loss:
            best_loss = dev_loss
            best_params = params
            history.best_epoch = epoch - 1
            epochs_since_best = 0
        else:
            epochs_since_best += 1
            if epochs_since_best > config.patience:
                break
    return best_params, history
