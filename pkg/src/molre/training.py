"""The training protocol: repeat-factor sampling, focal loss, two-group
AdamW, per-epoch validation AUC, early stopping, and bit-exact checkpoints.

Epochs are 1-based. Per epoch: expand the train indices by their repeat
factors (stochastic rounding), shuffle, run minibatches of forward/backward
over cached frozen-trunk features, clip the global gradient norm, and step.
Validation mean AUC drives early stopping: training halts once at least
`min_epochs` epochs ran and `patience` epochs passed with no improvement
(counted from the later of the best epoch and the minimum), and the *best*
validation checkpoint — not the last — is what training returns.

All randomness is drawn from streams keyed by (seed, purpose, epoch, ...),
so a run never depends on how it was interrupted: resuming from a
checkpoint replays the remaining epochs bitwise.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig
from .losses import FocalLossConfig, focal_loss, focal_loss_backward, prevalence_weights
from .metrics import aggregate, per_class_auc
from .model import SliceModel, VolumeModel
from .optim import AdamW
from .preprocess import DEFAULT_WINDOWS, AugmentConfig, augment, hu_window
from .rng import RngStream
from .sampling import expand_indices, repeat_factors


class NumericalAbort(RuntimeError):
    """Raised when a loss or gradient goes non-finite; the message names the
    epoch, batch, sample ids, and current parameter norms."""


@dataclass
class EarlyStopState:
    """Best-so-far tracker with a minimum epoch count and a patience window.

    Patience is counted from the later of the best epoch and `min_epochs`,
    so a run whose best never moves still trains min_epochs + patience
    epochs before stopping."""

    min_epochs: int
    patience: int
    best_auc: float = -np.inf
    best_epoch: int = 0

    def update(self, epoch: int, val_auc: float) -> bool:
        """Record epoch's metric; True when it strictly improves the best."""
        if val_auc > self.best_auc:
            self.best_auc = float(val_auc)
            self.best_epoch = int(epoch)
            return True
        return False

    def should_stop(self, epoch: int) -> bool:
        if epoch < self.min_epochs:
            return False
        return epoch - max(self.best_epoch, self.min_epochs) >= self.patience


def build_model(cfg: RunConfig):
    kwargs = dict(
        in_channels=cfg.in_channels,
        feature_dim=cfg.feature_dim,
        num_classes=cfg.num_classes,
        num_experts=cfg.num_experts,
        rank=cfg.rank,
        lora_alpha=cfg.lora_alpha,
        router_hidden=cfg.router_hidden,
        stub_seed=cfg.stub_seed,
        stub_channels=tuple(cfg.stub_channels),
    )
    if cfg.mode == "molre3d":
        return VolumeModel(**kwargs)
    return SliceModel(mode=cfg.mode, **kwargs)


def windowed(sample) -> np.ndarray:
    return hu_window(sample.voxels, DEFAULT_WINDOWS)


def trunk_cache(model, dataset) -> np.ndarray:
    """Frozen-trunk features for every sample: (N, S, p) on the slice path,
    (N, p) on the volume path. Valid across epochs because the trunk never
    trains and cached features skip augmentation."""
    feats = [model.trunk_features(windowed(dataset.sample(i))) for i in range(len(dataset))]
    return np.stack(feats)


def predict_probs(model, dataset, cache: np.ndarray | None = None, batch_size: int = 64) -> np.ndarray:
    """Deterministic forward over a dataset, (N, C) probabilities."""
    z = trunk_cache(model, dataset) if cache is None else cache
    out = []
    for lo in range(0, len(dataset), batch_size):
        probs, _ = model.forward_trunk_cached(z[lo:lo + batch_size])
        out.append(probs)
    return np.concatenate(out, axis=0)


@dataclass
class TrainResult:
    best_epoch: int
    best_val_auc: float
    stopped_epoch: int
    history: list[dict] = field(default_factory=list)


class Trainer:
    """Owns one run: model, optimizer, loss weights, feature caches, and the
    early-stop/best-checkpoint bookkeeping."""

    def __init__(
        self,
        cfg: RunConfig,
        train_data,
        val_data,
        run_dir: str | Path | None = None,
        train_cache: np.ndarray | None = None,
        val_cache: np.ndarray | None = None,
    ):
        self.cfg = cfg.validate()
        self.train_data = train_data
        self.val_data = val_data
        self.run_dir = Path(run_dir) if run_dir is not None else None
        if self.run_dir is not None:
            self.run_dir.mkdir(parents=True, exist_ok=True)

        self.model = build_model(cfg)
        self.root = RngStream(cfg.seed)
        self.model.init_params(self.root.child("init"))
        self.optimizer = AdamW(
            self.model.param_groups(),
            {"head": cfg.lr_head, "adapter": cfg.lr_adapter},
            weight_decay=cfg.weight_decay,
            betas=(cfg.beta1, cfg.beta2),
            eps=cfg.adam_eps,
        )
        self.labels = np.asarray(train_data.labels, dtype=np.float64)
        weights = prevalence_weights(
            self.labels, cfg.weight_clamp_lo, cfg.weight_clamp_hi
        )
        self.loss_cfg = FocalLossConfig(gamma=cfg.gamma, class_weights=weights)
        self.factors = repeat_factors(self.labels, cfg.sampler_threshold)
        self.aug_cfg = AugmentConfig(mirror_p=cfg.mirror_p) if cfg.augment else None

        if self.aug_cfg is None:
            self.train_z = train_cache if train_cache is not None else trunk_cache(self.model, train_data)
        else:
            self.train_z = None  # features recomputed per epoch under augmentation
        self.val_z = val_cache if val_cache is not None else trunk_cache(self.model, val_data)

        self.stopper = EarlyStopState(cfg.min_epochs, cfg.patience)
        self.epochs_done = 0
        self.history: list[dict] = []
        self.best_params: dict[str, np.ndarray] = {}

    # -- per-epoch feature access -------------------------------------------

    def _epoch_features(self, idx: np.ndarray, epoch: int) -> np.ndarray:
        if self.aug_cfg is None:
            return self.train_z[idx]
        feats = []
        for i in idx:
            sample = self.train_data.sample(int(i))
            rng = self.root.child("augment", epoch, sample.sample_id)
            feats.append(self.model.trunk_features(windowed(augment(sample, self.aug_cfg, rng))))
        return np.stack(feats)

    # -- training ------------------------------------------------------------

    def _abort_diagnostic(self, epoch: int, batch_no: int, idx: np.ndarray, loss: float) -> str:
        norms = ", ".join(
            f"{name}={np.linalg.norm(t.data):.3e}"
            for name, t in self.model.parameters().items()
        )
        ids = [self.train_data.ids[int(i)] for i in idx]
        return (
            f"non-finite loss {loss} at epoch {epoch}, batch {batch_no} "
            f"(samples {ids}); parameter norms: {norms}"
        )

    def run_epoch(self, epoch: int) -> float:
        """One pass over the repeat-expanded, shuffled train set; returns the
        mean minibatch loss."""
        cfg = self.cfg
        ep_rng = self.root.child("sampler", epoch)
        expanded = expand_indices(self.factors, ep_rng)
        order = expanded[ep_rng.permutation(expanded.size)]
        losses = []
        for batch_no, lo in enumerate(range(0, order.size, cfg.batch_size)):
            idx = order[lo:lo + cfg.batch_size]
            z = self._epoch_features(idx, epoch)
            probs, fwd_cache = self.model.forward_trunk_cached(z)
            y = self.labels[idx]
            loss = focal_loss(probs, y, self.loss_cfg)
            if not np.isfinite(loss):
                raise NumericalAbort(self._abort_diagnostic(epoch, batch_no, idx, loss))
            grad = focal_loss_backward(probs, y, self.loss_cfg)
            self.optimizer.zero_grad()
            self.model.backward(fwd_cache, grad)
            self.optimizer.clip_global_norm(cfg.clip_norm)
            self.optimizer.step()
            losses.append(loss)
        return float(np.mean(losses)) if losses else 0.0

    def validate(self) -> float:
        probs = predict_probs(self.model, self.val_data, self.val_z)
        return aggregate(per_class_auc(probs, self.val_data.labels))["mean_auc"]

    def _snapshot_best(self) -> None:
        self.best_params = {
            name: t.data.copy() for name, t in self.model.parameters().items()
        }

    def _log(self, record: dict) -> None:
        self.history.append(record)
        if self.run_dir is not None:
            with open(self.run_dir / "metrics.jsonl", "a") as fh:
                fh.write(json.dumps(record) + "\n")

    def step_epoch(self) -> dict:
        """Run the next epoch end to end (train pass, validation, early-stop
        bookkeeping, best snapshot, log record); returns the epoch record."""
        cfg = self.cfg
        epoch = self.epochs_done + 1
        train_loss = self.run_epoch(epoch)
        val_auc = self.validate()
        self.epochs_done = epoch
        if self.stopper.update(epoch, val_auc):
            self._snapshot_best()
            if self.run_dir is not None:
                self.save_state(self.run_dir / "best.ckpt")
        stop = self.stopper.should_stop(epoch) or epoch >= cfg.max_epochs
        record = {
            "epoch": epoch,
            "train_loss": train_loss,
            "val_mean_auc": val_auc,
            "lr_head": cfg.lr_head,
            "lr_adapter": cfg.lr_adapter,
            "best_epoch": self.stopper.best_epoch,
            "stop": bool(stop),
        }
        self._log(record)
        return record

    def train(self) -> TrainResult:
        while self.epochs_done < self.cfg.max_epochs:
            if self.step_epoch()["stop"]:
                break
        self.load_best_params()
        return TrainResult(
            best_epoch=self.stopper.best_epoch,
            best_val_auc=self.stopper.best_auc,
            stopped_epoch=self.epochs_done,
            history=self.history,
        )

    def load_best_params(self) -> None:
        """Restore the best-validation parameters into the live model."""
        for name, data in self.best_params.items():
            self.model.parameters()[name].data[...] = data

    # -- checkpointing ---------------------------------------------------------

    def save_state(self, path: str | Path) -> None:
        tensors: dict[str, np.ndarray] = {
            name: t.data for name, t in self.model.parameters().items()
        }
        tensors.update(self.optimizer.state_tensors())
        for name, data in self.best_params.items():
            tensors[f"best.{name}"] = data
        sections = {
            "config": self.cfg.to_dict(),
            "train_state": {
                "epoch": self.epochs_done,
                "step_count": self.optimizer.step_count,
                "best_epoch": self.stopper.best_epoch,
                "best_val_auc": (
                    None if np.isneginf(self.stopper.best_auc) else self.stopper.best_auc
                ),
            },
        }
        save_checkpoint(path, tensors, sections)

    def load_state(self, path: str | Path) -> None:
        tensors, sections = load_checkpoint(path)
        saved_cfg = RunConfig.from_dict(sections["config"])
        if saved_cfg.mode != self.cfg.mode:
            raise NumericalAbort(
                f"checkpoint was trained in mode {saved_cfg.mode!r}, "
                f"this run is {self.cfg.mode!r}"
            )
        params = self.model.parameters()
        for name, t in params.items():
            t.data[...] = tensors[name]
        state = sections["train_state"]
        self.optimizer.load_state(tensors, state["step_count"])
        self.epochs_done = int(state["epoch"])
        self.stopper.best_epoch = int(state["best_epoch"])
        self.stopper.best_auc = (
            -np.inf if state["best_val_auc"] is None else float(state["best_val_auc"])
        )
        self.best_params = {
            name[len("best."):]: arr
            for name, arr in tensors.items()
            if name.startswith("best.")
        }


def train(
    cfg: RunConfig,
    train_data,
    val_data,
    run_dir: str | Path | None = None,
    train_cache: np.ndarray | None = None,
    val_cache: np.ndarray | None = None,
) -> tuple[TrainResult, Trainer]:
    """Run the full protocol; returns the result and the trainer with the
    best-validation parameters loaded."""
    trainer = Trainer(cfg, train_data, val_data, run_dir, train_cache, val_cache)
    result = trainer.train()
    return result, trainer
