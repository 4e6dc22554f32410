"""Pairwise ranking optimization: triple sampling, BPR loss, Adam, train loop.

One epoch draws ceil(|train pairs| / batch) fresh batches; each positive is
paired with one rejection-sampled negative the user never interacted with in
training. Early stopping watches validation Precision@K and the best
checkpoint (by that metric) is what training returns.
"""

from __future__ import annotations

import logging
import time
import warnings
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np

from . import evaluation
from .config import TrainConfig
from .data import Dataset, Split, split_dataset
from .errors import DivergenceError
from .heads import InteractionGraph
from .model import Recommender
from .util import substream, xavier_init  # noqa: F401  (xavier_init is part of this API)

log = logging.getLogger(__name__)


def sample_batch(rng: np.random.Generator, train_pairs: np.ndarray,
                 train_sets: List[set], n_items: int, batch_size: int):
    """Draw (user, positive, negative) index triples.

    Positives are uniform over the training pairs; each negative is drawn
    uniformly with rejection from the items its user has no training
    interaction with. Users interacting with every item are skipped (their
    draw is resampled) with a one-time warning.
    """
    users = np.empty(batch_size, dtype=np.int64)
    pos = np.empty(batch_size, dtype=np.int64)
    neg = np.empty(batch_size, dtype=np.int64)
    filled = 0
    while filled < batch_size:
        row = int(rng.integers(0, len(train_pairs)))
        u, i = train_pairs[row]
        owned = train_sets[u]
        if len(owned) >= n_items:
            warnings.warn("a user interacts with every item; skipping and resampling",
                          stacklevel=2)
            continue
        j = int(rng.integers(0, n_items))
        while j in owned:
            j = int(rng.integers(0, n_items))
        users[filled] = u
        pos[filled] = i
        neg[filled] = j
        filled += 1
    return users, pos, neg


def bpr_loss(pos_scores, neg_scores, params: Dict[str, np.ndarray], l2: float) -> float:
    """Sum of -ln sigmoid(margin) over the batch plus l2 * ||all params||^2."""
    pos_scores = np.asarray(pos_scores, dtype=np.float64)
    neg_scores = np.asarray(neg_scores, dtype=np.float64)
    if not (np.all(np.isfinite(pos_scores)) and np.all(np.isfinite(neg_scores))):
        bad = int(np.argmax(~(np.isfinite(pos_scores) & np.isfinite(neg_scores))))
        raise DivergenceError(f"non-finite score at batch position {bad}")
    loss = float(np.logaddexp(0.0, -(pos_scores - neg_scores)).sum())
    if l2:
        loss += l2 * sum(float((arr * arr).sum()) for arr in params.values())
    return loss


class Adam:
    """Bias-corrected Adam over a named parameter dict, updating in place."""

    def __init__(self, params: Dict[str, np.ndarray], lr: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = {name: np.zeros_like(arr) for name, arr in params.items()}
        self.v = {name: np.zeros_like(arr) for name, arr in params.items()}

    def step(self, grads: Dict[str, np.ndarray]) -> None:
        self.step_count += 1
        t = self.step_count
        for name, arr in self.params.items():
            g = grads[name]
            if not np.all(np.isfinite(g)):
                raise DivergenceError(f"non-finite gradient in parameter {name!r}")
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            m_hat = m / (1.0 - self.beta1 ** t)
            v_hat = v / (1.0 - self.beta2 ** t)
            arr -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def adam_step(state: Adam, grads: Dict[str, np.ndarray]) -> None:
    state.step(grads)


@dataclass
class EpochStats:
    epoch: int
    loss: float
    val_metric: float
    seconds: float
    param_count: int


@dataclass
class TrainResult:
    model: Recommender
    history: List[EpochStats]
    best_epoch: int
    best_val: float
    aborted: bool = False

    def epochs_to_best(self) -> int:
        return self.best_epoch

    def mean_epoch_seconds(self) -> float:
        return float(np.mean([e.seconds for e in self.history])) if self.history else 0.0


def history_lines(history: List[EpochStats], eval_k: int) -> List[str]:
    """Deterministic history rows: epoch, loss, val P@K, parameter count.

    Wall-clock seconds live in the timing sidecar (timing_lines) so that two
    identical runs emit byte-identical history files.
    """
    lines = [f"# epoch\tloss\tval_p@{eval_k}\tparam_count"]
    for e in history:
        lines.append(f"{e.epoch}\t{e.loss:.12g}\t{e.val_metric:.6f}\t{e.param_count}")
    return lines


def timing_lines(history: List[EpochStats]) -> List[str]:
    lines = ["# epoch\tseconds"]
    for e in history:
        lines.append(f"{e.epoch}\t{e.seconds:.6f}")
    return lines


def train(config: TrainConfig, dataset: Dataset, split: Optional[Split] = None,
          timer=time.perf_counter) -> TrainResult:
    """Run BPR training until early stopping or the epoch cap.

    Per-epoch ``seconds`` cover the sampling/gradient/update loop only, not
    the validation pass, matching how per-epoch training cost is compared
    across parameterizations.
    """
    problems = config.validate()
    if problems:
        raise ValueError("; ".join(problems))
    if split is None:
        split = split_dataset(dataset, config.seed)
    features = dataset.feature_matrix()
    train_pairs = split.train_pairs()
    if len(train_pairs) == 0:
        raise ValueError("empty training split")
    train_sets = split.train_sets()
    graph = None
    if config.head == "gcn":
        graph = InteractionGraph(dataset.n_users, dataset.n_items, train_pairs)

    model = Recommender.create(config, dataset.n_users, dataset.n_items,
                               dataset.input_dim, substream(config.seed, "init"))
    rng = substream(config.seed, "sampling")
    optimizer = Adam(model.params(), lr=config.lr)
    n_batches = int(np.ceil(len(train_pairs) / config.batch_size))
    param_count = model.param_count()

    history: List[EpochStats] = []
    best_val = -np.inf
    best_epoch = 0
    best_params = {name: arr.copy() for name, arr in model.params().items()}
    bad_epochs = 0
    aborted = False

    for epoch in range(1, config.max_epochs + 1):
        started = timer()
        epoch_loss = 0.0
        try:
            for _ in range(n_batches):
                users, pos, neg = sample_batch(
                    rng, train_pairs, train_sets, dataset.n_items, config.batch_size)
                loss, grads = model.triple_loss_and_grads(
                    users, pos, neg, features, graph=graph)
                if not np.isfinite(loss):
                    raise DivergenceError(f"non-finite loss at epoch {epoch}")
                optimizer.step(grads)
                epoch_loss += loss
        except DivergenceError as exc:
            log.error("training diverged: %s; keeping last good checkpoint", exc)
            aborted = True
            break
        seconds = timer() - started

        report = evaluation.evaluate(model, dataset, split, ks=(config.eval_k,),
                                     part="val", graph=graph)
        val_metric = report.metrics["precision"][config.eval_k]
        history.append(EpochStats(epoch, epoch_loss / n_batches, val_metric,
                                  seconds, param_count))
        if val_metric > best_val:
            best_val = val_metric
            best_epoch = epoch
            best_params = {name: arr.copy() for name, arr in model.params().items()}
            bad_epochs = 0
        else:
            bad_epochs += 1
            if bad_epochs >= config.patience:
                break

    for name, arr in model.params().items():
        arr[...] = best_params[name]
    return TrainResult(model=model, history=history, best_epoch=best_epoch,
                       best_val=(0.0 if best_val == -np.inf else best_val),
                       aborted=aborted)
