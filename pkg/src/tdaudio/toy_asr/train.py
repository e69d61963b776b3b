"""Mini-batch CTC training of the toy recognizer."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass

import numpy as np

from ..optim import Adam
from .ctc import ctc_loss_and_grad
from .frontend import Frontend, extract_features
from .model import ToyAsrModel, rnn_backward, rnn_forward
from .synth import SynthesisSpec, synthesize

log = logging.getLogger(__name__)


class TrainingFailedError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    epochs: int = 30
    batch_size: int = 8
    init_scale: float = 0.05
    clip_norm: float = 10.0
    seed: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


def corpus_waves(corpus, synth: SynthesisSpec = SynthesisSpec()) -> list[np.ndarray]:
    """The int16 clips of (text, noise seed) pairs, as normalized floats."""
    return [synthesize(text, synth.with_seed(seed)).to_real().values for text, seed in corpus]


def pad_batch(feats: list[np.ndarray]):
    lengths = np.array([f.shape[0] for f in feats])
    X = np.zeros((len(feats), lengths.max(), feats[0].shape[1]))
    for i, f in enumerate(feats):
        X[i, :f.shape[0]] = f
    return X, lengths


def batch_loss_and_grads(model: ToyAsrModel, X, lengths, targets):
    """Mean CTC loss over the batch and parameter gradients."""
    logits, cache = rnn_forward(model.params, X, lengths)
    d_logits = np.zeros_like(logits)
    total = 0.0
    for i, (n, tgt) in enumerate(zip(lengths, targets)):
        loss, g = ctc_loss_and_grad(logits[i, :n], tgt, model.blank)
        total += loss
        d_logits[i, :n] = g
    B = len(targets)
    grads, _ = rnn_backward(model.params, cache, d_logits / B)
    return total / B, grads


def train(corpus, config: TrainConfig = TrainConfig(), synth: SynthesisSpec = SynthesisSpec(),
          frontend: Frontend | None = None, callback=None) -> ToyAsrModel:
    """Train on ``corpus`` of (text, noise seed) pairs.

    ``callback(epoch, mean_loss)`` is called after every epoch.
    """
    if not corpus:
        raise ValueError("empty training corpus")
    return train_on_waves([t for t, _ in corpus], corpus_waves(corpus, synth), config,
                          frontend, callback)


def train_on_waves(texts, waves, config: TrainConfig = TrainConfig(),
                   frontend: Frontend | None = None, callback=None) -> ToyAsrModel:
    """Train on transcripts paired with normalized waveforms."""
    if not texts or len(texts) != len(waves):
        raise ValueError("need one waveform per transcript and at least one pair")
    rng = np.random.default_rng(config.seed)
    model = ToyAsrModel.init(rng, config.init_scale, frontend)

    raw = [extract_features(w, model.frontend) for w in waves]
    stacked = np.concatenate(raw)
    model.feat_mean = stacked.mean(axis=0)
    model.feat_std = stacked.std(axis=0) + 1e-6
    feats = [(f - model.feat_mean) / model.feat_std for f in raw]
    targets = [model.encode(text) for text in texts]

    opt = Adam(model.params, lr=config.learning_rate)
    history = []
    for epoch in range(config.epochs):
        order = rng.permutation(len(texts))
        losses = []
        for start in range(0, len(order), config.batch_size):
            idx = order[start:start + config.batch_size]
            X, lengths = pad_batch([feats[i] for i in idx])
            loss, grads = batch_loss_and_grads(model, X, lengths, [targets[i] for i in idx])
            if not np.isfinite(loss):
                raise TrainingFailedError(f"non-finite loss in epoch {epoch}")
            norm = np.sqrt(sum(float((g * g).sum()) for g in grads.values()))
            if config.clip_norm and norm > config.clip_norm:
                grads = {k: g * (config.clip_norm / norm) for k, g in grads.items()}
            opt.step(grads)
            losses.append(loss)
        mean_loss = float(np.mean(losses))
        history.append(mean_loss)
        log.info("epoch %d loss %.4f", epoch + 1, mean_loss)
        if callback is not None:
            callback(epoch, mean_loss)
    model.history = history
    return model
