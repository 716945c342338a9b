"""
Trainer
AdamW with linear warmup and decay, dev evaluation and early stopping
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from alora.core.adapter import active_rank_count
from alora.core.network import SuperNetwork, forward_loss
from alora.core.tensor import Tape, Tensor, no_tape
from alora.errors import StateError
from alora.models.config import TrainConfig
from alora.models.example import Batch, DataSplits, Example
from alora.utils import derive_rng

logger = logging.getLogger(__name__)

DEV_CHUNK = 32
MIN_DATASET_SIZE = 30


@dataclass
class OptimState:
    """
    AdamW moments keyed by parameter name.

    A parameter that grew (new rank columns or rows) keeps its old moments
    and gets zero moments for the new entries.
    """

    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)

    def moments(self, name: str, shape: Tuple[int, ...]) -> Tuple[np.ndarray, np.ndarray]:
        if name not in self.m:
            self.m[name] = np.zeros(shape)
            self.v[name] = np.zeros(shape)
        elif self.m[name].shape != shape:
            self.m[name] = _pad_to(self.m[name], shape)
            self.v[name] = _pad_to(self.v[name], shape)
        return self.m[name], self.v[name]


def _pad_to(array: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    out = np.zeros(shape)
    region = tuple(slice(0, min(a, b)) for a, b in zip(array.shape, shape))
    out[region] = array[region]
    return out


def optimizer_step(params: Sequence[Tuple[str, Tensor]], state: OptimState, lr: float):
    """
    One AdamW update with decoupled weight decay.

    Args:
        params: (name, tensor) pairs to update; each must carry a gradient
        state: Moment accumulators, updated in place
        lr: Step size for this step

    Raises:
        StateError: if a parameter has no gradient
    """
    for name, p in params:
        if p.grad is None:
            raise StateError(f"parameter {name} has no gradient")

    state.step += 1
    t = state.step
    bias1 = 1.0 - state.beta1 ** t
    bias2 = 1.0 - state.beta2 ** t
    for name, p in params:
        m, v = state.moments(name, p.shape)
        g = p.grad
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        update = (m / bias1) / (np.sqrt(v / bias2) + state.eps)
        p.data = p.data * (1.0 - lr * state.weight_decay) - lr * update


def lr_at(step: int, total_steps: int, cfg: TrainConfig) -> float:
    """Linear ramp from 0 to lr_peak over the warmup steps, then linear decay to 0"""
    if total_steps <= 0:
        return 0.0
    step = min(max(step, 0), total_steps)
    warmup = max(1, int(round(cfg.warmup_frac * total_steps)))
    if step < warmup:
        return cfg.lr_peak * step / warmup
    return cfg.lr_peak * max(0.0, (total_steps - step) / max(1, total_steps - warmup))


def split_dataset(raw: Sequence[Example], seed: int) -> DataSplits:
    """
    Deterministic shuffled 80/10/10 split.

    Raises:
        ValueError: for fewer than 30 examples
    """
    n = len(raw)
    if n < MIN_DATASET_SIZE:
        raise ValueError(f"Need at least {MIN_DATASET_SIZE} examples to split, got {n}")
    order = derive_rng(seed, 'data').permutation(n)
    n_train, n_dev = int(0.8 * n), int(0.1 * n)
    shuffled = [raw[i] for i in order]
    return DataSplits(train=shuffled[:n_train], dev=shuffled[n_train:n_train + n_dev],
                      test=shuffled[n_train + n_dev:])


def dev_loss(net: SuperNetwork, examples: Sequence[Example]) -> float:
    """Example-weighted mean cross-entropy over a split"""
    if not examples:
        return float('nan')
    total = 0.0
    with no_tape():
        for batch in Batch.chunks(list(examples), DEV_CHUNK):
            total += forward_loss(batch, net).item() * len(batch)
    return total / len(examples)


class Trainer:
    """
    One continuous training trajectory over a super-network.

    The schedule spans max_epochs from the first step; allocation rounds
    call train_epochs repeatedly without restarting it. Best-dev tracking
    is reset by structure_changed() after pruning or growth.
    """

    def __init__(self, net: SuperNetwork, data: DataSplits, cfg: TrainConfig,
                 total_steps: Optional[int] = None):
        if not data.train:
            raise ValueError("Training split is empty")
        self.net = net
        self.data = data
        self.cfg = cfg
        self.steps_per_epoch = math.ceil(len(data.train) / cfg.batch_size)
        self.total_steps = total_steps if total_steps is not None else \
            math.ceil(cfg.max_epochs * self.steps_per_epoch)
        self.optim = OptimState(weight_decay=cfg.weight_decay)
        self.global_step = 0
        self.metrics: List[Dict] = []
        self.stopped = False

        self._batches = self._batch_stream(derive_rng(cfg.seed, 'batches'))
        self._recent_losses: List[float] = []
        self._best_dev = math.inf
        self._best_snapshot: Optional[Dict[str, np.ndarray]] = None
        self._evals_since_best = 0

    def _batch_stream(self, rng: np.random.Generator) -> Iterator[Batch]:
        train = self.data.train
        size = self.cfg.batch_size
        while True:
            order = rng.permutation(len(train))
            for start in range(0, len(train), size):
                yield Batch([train[i] for i in order[start:start + size]])

    def steps_for(self, epochs: float) -> int:
        """Optimizer steps in a (possibly fractional) number of epochs"""
        if epochs <= 0:
            return 0
        return math.ceil(epochs * self.steps_per_epoch)

    def train_epochs(self, epochs: float) -> int:
        """One phase of the schedule, capped at the steps the schedule has left"""
        remaining = max(0, self.total_steps - self.global_step)
        return self.train_steps(min(self.steps_for(epochs), remaining))

    def train_steps(self, n_steps: int) -> int:
        """
        Run up to n_steps optimizer steps, stopping early if patience runs out.

        Returns:
            Number of steps taken
        """
        taken = 0
        while taken < n_steps and not self.stopped:
            self.step()
            taken += 1
        return taken

    def step(self) -> float:
        batch = next(self._batches)
        net = self.net
        net.zero_grad()
        with Tape():
            loss = forward_loss(batch, net)
            loss.backward()
        lr = lr_at(self.global_step + 1, self.total_steps, self.cfg)
        optimizer_step(net.named_trainable(), self.optim, lr)
        self.global_step += 1
        self._recent_losses.append(loss.item())
        logger.debug(f"step {self.global_step}: loss={loss.item():.6f} lr={lr:.3e}")

        if self.global_step % self.cfg.eval_every_steps == 0:
            self.evaluate(lr)
        return loss.item()

    def evaluate(self, lr: Optional[float] = None) -> float:
        """Record dev loss and update early stopping"""
        loss = dev_loss(self.net, self.data.dev)
        train_loss = float(np.mean(self._recent_losses)) if self._recent_losses else float('nan')
        self._recent_losses = []
        self.metrics.append({
            'step': self.global_step,
            'train_loss': train_loss,
            'dev_loss': loss,
            'lr': lr if lr is not None else lr_at(self.global_step, self.total_steps, self.cfg),
            'active_ranks_total': active_rank_count(self.net).total,
        })

        if loss < self._best_dev:
            self._best_dev = loss
            self._best_snapshot = {name: t.data.copy() for name, t in self.net.named_trainable()}
            self._evals_since_best = 0
        else:
            self._evals_since_best += 1
            if self._evals_since_best >= self.cfg.patience:
                self.stopped = True
                logger.info(f"Early stopping at step {self.global_step} "
                            f"(best dev loss {self._best_dev:.6f})")
        return loss

    @property
    def best_dev_loss(self) -> float:
        return self._best_dev

    def structure_changed(self):
        """Forget the best snapshot after pruning or growth; schedule and step continue"""
        self._best_dev = math.inf
        self._best_snapshot = None
        self._evals_since_best = 0

    def restore_best(self) -> bool:
        """Load the best-dev parameters of the current structure, if any were recorded"""
        if self._best_snapshot is None:
            return False
        for name, tensor in self.net.named_trainable():
            tensor.data = self._best_snapshot[name].copy()
        return True


def train_for(net: SuperNetwork, data: DataSplits, cfg: TrainConfig,
              epochs: float) -> Tuple[SuperNetwork, List[Dict]]:
    """
    Train a network for a number of epochs on its own schedule.

    Returns:
        (the trained network, metrics log)
    """
    trainer = Trainer(net, data, cfg)
    trainer.total_steps = trainer.steps_for(epochs)
    steps = trainer.train_epochs(epochs)
    trainer.restore_best()
    logger.info(f"Trained {steps} steps over {epochs:g} epochs")
    return net, trainer.metrics
