"""Mini-batch AdamW training with per-epoch metrics.

The logged train loss is a full forward pass over the training split with
the parameters as they stand at epoch end (not an in-epoch running mean),
so re-evaluating a saved checkpoint on its own training bundle reproduces
the final logged value exactly. Test rows appear exactly on epochs that are
multiples of ``test_every``.

Metrics CSV columns: epoch,train_rel_l2,test_rel_l2,wall_clock_s (test cell
empty off-schedule; wall clock is elapsed seconds and is the one column that
cannot be reproducible run-to-run).
"""
from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .autodiff import Tape, Tensor, relative_l2
from .optim import AdamW

__all__ = ["TrainConfig", "TrainingDivergedError", "train_model", "evaluate_forward"]


class TrainingDivergedError(RuntimeError):
    def __init__(self, epoch: int, detail: str = "loss became non-finite"):
        super().__init__(f"training diverged at epoch {epoch}: {detail}")
        self.epoch = epoch


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 1000
    lr: float = 1e-3
    test_every: int = 20
    batch_size: int = 20
    seed: int = 0
    weight_decay: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    precision: str = "f64"
    lr_decay_every: int = 0   # 0 disables the optional step decay
    lr_decay_rate: float = 1.0

    def __post_init__(self):
        if self.epochs <= 0:
            raise ValueError(f"epochs must be positive, got {self.epochs}")
        if self.lr <= 0:
            raise ValueError(f"learning rate must be positive, got {self.lr}")
        if self.test_every <= 0 or self.epochs % self.test_every != 0:
            raise ValueError(
                f"test_every must divide the epoch schedule: {self.epochs} % {self.test_every} != 0"
            )
        if self.batch_size <= 0:
            raise ValueError(f"batch size must be positive, got {self.batch_size}")
        if self.precision not in ("f32", "f64"):
            raise ValueError(f"precision must be f32 or f64, got '{self.precision}'")


def evaluate_forward(forward, a: np.ndarray, u: np.ndarray, batch_size: int) -> float:
    """Mean per-sample relative L2 over a full split, batched for memory."""
    n = a.shape[0]
    total = 0.0
    for lo in range(0, n, batch_size):
        hi = min(lo + batch_size, n)
        pred = forward(a[lo:hi])
        loss = relative_l2(pred, u[lo:hi].reshape(pred.shape))
        total += float(loss.data) * (hi - lo)
    return total / n


class _MetricsWriter:
    HEADER = "epoch,train_rel_l2,test_rel_l2,wall_clock_s"

    def __init__(self, path):
        self._f = open(path, "w", encoding="utf-8") if path is not None else None
        if self._f:
            self._f.write(self.HEADER + "\n")
            self._f.flush()

    def row(self, epoch: int, train: float, test: float | None, wall: float) -> None:
        if not self._f:
            return
        test_cell = f"{test:.10g}" if test is not None else ""
        self._f.write(f"{epoch},{train:.10g},{test_cell},{wall:.3f}\n")
        self._f.flush()

    def close(self):
        if self._f:
            self._f.close()
            self._f = None


def train_model(forward, params: list, a_train: np.ndarray, u_train: np.ndarray,
                config: TrainConfig, eval_set: tuple | None = None,
                metrics_path=None, verbose: bool = False) -> dict:
    """Run the optimization loop; returns the metric history.

    ``forward`` maps an input batch (ndarray) to a prediction Tensor under
    the active tape; ``params`` are the tensors AdamW updates. ``eval_set``
    is an optional (a_test, u_test) pair scored every ``test_every`` epochs.
    """
    n = a_train.shape[0]
    opt = AdamW(params, lr=config.lr, betas=(config.beta1, config.beta2),
                eps=config.eps, weight_decay=config.weight_decay)
    # batch shuffling gets its own stream so it never aliases the init draws
    shuffle_rng = np.random.default_rng(np.random.SeedSequence([config.seed, 1]))
    history = {"epoch": [], "train_rel_l2": [], "test_rel_l2": {}}
    writer = _MetricsWriter(metrics_path)
    start = time.perf_counter()
    try:
        for epoch in range(1, config.epochs + 1):
            perm = shuffle_rng.permutation(n)
            for lo in range(0, n, config.batch_size):
                idx = perm[lo : lo + config.batch_size]
                opt.zero_grad()
                try:
                    with Tape() as tape:
                        pred = forward(a_train[idx])
                        loss = relative_l2(pred, u_train[idx].reshape(pred.shape))
                    if not np.isfinite(float(loss.data)):
                        raise FloatingPointError("non-finite loss")
                    tape.backward(loss)
                except FloatingPointError as exc:
                    raise TrainingDivergedError(epoch, str(exc)) from exc
                opt.step()
            if config.lr_decay_every and epoch % config.lr_decay_every == 0:
                opt.set_lr(opt.lr * config.lr_decay_rate)
            train_loss = evaluate_forward(forward, a_train, u_train, config.batch_size)
            test_loss = None
            if eval_set is not None and epoch % config.test_every == 0:
                test_loss = evaluate_forward(forward, eval_set[0], eval_set[1],
                                             config.batch_size)
                history["test_rel_l2"][epoch] = test_loss
            wall = time.perf_counter() - start
            history["epoch"].append(epoch)
            history["train_rel_l2"].append(train_loss)
            writer.row(epoch, train_loss, test_loss, wall)
            if verbose:
                msg = f"epoch {epoch}: train {train_loss:.6f}"
                if test_loss is not None:
                    msg += f"  test {test_loss:.6f}"
                print(msg, flush=True)
    finally:
        writer.close()
    return history
