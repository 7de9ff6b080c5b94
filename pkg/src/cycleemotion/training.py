"""Two-part adversarial training: image translation with semantic consistency, then feature alignment."""

from __future__ import annotations

import copy
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np
import torch

from . import losses as L
from .config import TrainingConfig
from .data import DatasetManifest, epoch_order, tensor_batches
from .metrics import MetricsReport, classification_accuracy, evaluate_distributions
from .networks import (
    build_classifier,
    build_feature_discriminator,
    build_generator,
    build_patch_discriminator,
    parameter_checksum,
)
from .perceptual import mixed_cycle_loss
from .pool import ImagePool

logger = logging.getLogger(__name__)

NETWORKS = ("G_ST", "G_TS", "D_S", "D_T", "F_S", "F_S_adapted", "D_feat")

# parameter sets each sub-step may change
UPDATES = {
    "generators": {"G_ST", "G_TS"},
    "discriminators": {"D_S", "D_T"},
    "classifiers": {"F_S", "F_S_adapted"},
    "feature_alignment": {"D_feat", "F_S_adapted"},
}


class NonFiniteLossError(RuntimeError):
    def __init__(self, term: str, part: int, step: int, value: float):
        super().__init__(f"non-finite loss {term}={value} at part {part}, step {step}")
        self.term, self.part, self.step, self.value = term, part, step, value


def linear_decay_lr(base_lr: float, epoch_progress: float, total_epochs: int) -> float:
    """Constant for the first half of training, then linear to zero at ``total_epochs``."""
    if total_epochs <= 0:
        return base_lr
    half = total_epochs / 2
    if epoch_progress <= half:
        return base_lr
    return base_lr * max(0.0, (total_epochs - epoch_progress) / (total_epochs - half))


@dataclass
class TrainState:
    phase: str = "part_one"
    epoch_one: int = 0
    epoch_two: int = 0
    step: int = 0
    best_metric: Optional[float] = None
    best_epoch: Optional[int] = None
    validation_history: list = field(default_factory=list)

    _ORDER = ("part_one", "part_two", "done")

    def advance(self, phase: str) -> None:
        if self._ORDER.index(phase) < self._ORDER.index(self.phase):
            raise RuntimeError(f"cannot move from {self.phase} back to {phase}")
        self.phase = phase


class LossLog:
    """JSONL writer; keeps records in memory when no path is given."""

    def __init__(self, path: Optional[Path] = None, append: bool = False):
        self.path = path
        self.records: list[dict] = []
        self._fh = open(path, "a" if append else "w") if path else None

    def write(self, record: dict) -> None:
        self.records.append(record)
        if self._fh:
            self._fh.write(json.dumps(record) + "\n")
            self._fh.flush()

    def close(self) -> None:
        if self._fh:
            self._fh.close()
            self._fh = None


def _set_requires_grad(nets, flag: bool) -> None:
    for net in nets:
        for p in net.parameters():
            p.requires_grad_(flag)


def _make_optimizer(kind: str, params, lr: float, cfg: TrainingConfig):
    if kind == "adam":
        return torch.optim.Adam(params, lr=lr, betas=cfg.adam_betas)
    return torch.optim.SGD(params, lr=lr, momentum=cfg.classifier_momentum)


class Trainer:
    """Owns the seven networks, their optimizers, the image pools and the loss log."""

    def __init__(self, cfg: TrainingConfig, log: Optional[LossLog] = None):
        self.cfg = cfg
        s = cfg.seed
        torch.manual_seed(s)
        self.nets = {
            "G_ST": build_generator(cfg.generator, seed=s * 100 + 1),
            "G_TS": build_generator(cfg.generator, seed=s * 100 + 2),
            "D_S": build_patch_discriminator(cfg.discriminator, seed=s * 100 + 3),
            "D_T": build_patch_discriminator(cfg.discriminator, seed=s * 100 + 4),
            "F_S": build_classifier(cfg.classifier, seed=s * 100 + 5),
            "F_S_adapted": build_classifier(cfg.classifier, seed=s * 100 + 6),
            "D_feat": build_feature_discriminator(cfg.feature_discriminator, seed=s * 100 + 7),
        }
        n = self.nets
        self.opt_gen = torch.optim.Adam(
            list(n["G_ST"].parameters()) + list(n["G_TS"].parameters()), lr=cfg.gen_lr, betas=cfg.adam_betas
        )
        self.opt_disc = torch.optim.Adam(
            list(n["D_S"].parameters()) + list(n["D_T"].parameters()), lr=cfg.disc_lr, betas=cfg.adam_betas
        )
        self.opt_cls = _make_optimizer(
            cfg.classifier_optimizer,
            list(n["F_S"].parameters()) + list(n["F_S_adapted"].parameters()),
            cfg.classifier_lr,
            cfg,
        )
        self.opt_feat = torch.optim.Adam(n["D_feat"].parameters(), lr=cfg.part_two_lr, betas=cfg.adam_betas)
        self.opt_adapted = torch.optim.Adam(n["F_S_adapted"].parameters(), lr=cfg.part_two_lr, betas=cfg.adam_betas)
        self.pool_T = ImagePool(cfg.pool_size, seed=s * 100 + 11)
        self.pool_S = ImagePool(cfg.pool_size, seed=s * 100 + 12)
        self.state = TrainState()
        self.log = log or LossLog()
        self.gamma_scale = 1.0
        # set to a list to record (sub_step, checksums_before, checksums_after, outputs)
        self.instrument: Optional[list] = None
        self._best_snapshot: Optional[dict] = None

    # --- helpers -------------------------------------------------------------

    def __getitem__(self, name):
        return self.nets[name]

    def checksums(self) -> dict:
        return {k: parameter_checksum(v) for k, v in self.nets.items()}

    def _probs(self, net, x):
        return net.probs(x)

    def _task_loss(self, net, x, y):
        if self.cfg.task == "distribution":
            return L.task_loss_distribution(net.probs(x), y)
        return L.task_loss_classification(net.logits(x), y)

    def _features(self, net, x):
        return net.probs(x) if self.cfg.feature_input == "probs" else net.logits(x)

    def _check(self, part: int, values: dict) -> None:
        for k, v in values.items():
            if not math.isfinite(v):
                raise NonFiniteLossError(k, part, self.state.step, v)

    def _substep(self, name: str, fn: Callable[[], dict]) -> dict:
        before = self.checksums() if self.instrument is not None else None
        out = fn()
        if self.instrument is not None:
            self.instrument.append((name, before, self.checksums(), out))
        return out

    def set_part_one_lr(self, epoch_progress: float) -> float:
        cfg = self.cfg
        total = cfg.part_one_epochs
        for opt, base in ((self.opt_gen, cfg.gen_lr), (self.opt_disc, cfg.disc_lr), (self.opt_cls, cfg.classifier_lr)):
            for group in opt.param_groups:
                group["lr"] = linear_decay_lr(base, epoch_progress, total)
        return linear_decay_lr(cfg.gen_lr, epoch_progress, total)

    # --- part one ------------------------------------------------------------

    def _generator_update(self, xs, xt) -> dict:
        n, cfg = self.nets, self.cfg
        frozen = [n["D_S"], n["D_T"], n["F_S"], n["F_S_adapted"]]
        _set_requires_grad(frozen, False)
        try:
            fake_t = n["G_ST"](xs)
            fake_s = n["G_TS"](xt)
            rec_s = n["G_TS"](fake_t)
            rec_t = n["G_ST"](fake_s)
            adv_st = L.lsgan_generator_loss(n["D_T"](fake_t))
            adv_ts = L.lsgan_generator_loss(n["D_S"](fake_s))
            cyc = mixed_cycle_loss(xs, rec_s, xt, rec_t, cfg.mix, cfg.msssim)
            gamma = cfg.weights.gamma * self.gamma_scale
            if cfg.weights.gamma > 0:
                desc_st = L.desc_loss(cfg.distance, n["F_S"].probs(xs), n["F_S_adapted"].probs(fake_t), cfg.task)
                desc_ts = L.desc_loss(cfg.distance, n["F_S_adapted"].probs(xt), n["F_S"].probs(fake_s), cfg.task)
            else:
                desc_st = desc_ts = xs.new_zeros(())
            total = L.total_stage_one_generator_loss(adv_st, adv_ts, cyc, desc_st, desc_ts, cfg.weights, gamma)
            self.opt_gen.zero_grad(set_to_none=True)
            total.backward()
            self.opt_gen.step()
        finally:
            _set_requires_grad(frozen, True)
        return {
            "loss_G": total.item(),
            "adv_ST": adv_st.item(),
            "adv_TS": adv_ts.item(),
            "mixed_cycle": cyc.item(),
            "desc_ST": desc_st.item(),
            "desc_TS": desc_ts.item(),
            "gamma": gamma,
        }

    def _discriminator_update(self, xs, xt) -> dict:
        n = self.nets
        with torch.no_grad():
            fake_t = self.pool_T.query(n["G_ST"](xs))
            fake_s = self.pool_S.query(n["G_TS"](xt))
        loss_t = L.lsgan_discriminator_loss(n["D_T"](xt), n["D_T"](fake_t))
        loss_s = L.lsgan_discriminator_loss(n["D_S"](xs), n["D_S"](fake_s))
        self.opt_disc.zero_grad(set_to_none=True)
        (loss_t + loss_s).backward()
        self.opt_disc.step()
        return {"loss_D_T": loss_t.item(), "loss_D_S": loss_s.item()}

    def _classifier_update(self, xs, ys) -> dict:
        n = self.nets
        with torch.no_grad():
            adapted = n["G_ST"](xs)
        task_src = self._task_loss(n["F_S"], xs, ys)
        task_adapted = self._task_loss(n["F_S_adapted"], adapted, ys)
        self.opt_cls.zero_grad(set_to_none=True)
        (task_src + task_adapted).backward()
        self.opt_cls.step()
        return {"task_F_S": task_src.item(), "task_F_S_adapted": task_adapted.item()}

    def part_one_step(self, xs, ys, xt) -> dict:
        """Generators, then discriminators, then classifiers; each with the others frozen."""
        out = {}
        out.update(self._substep("generators", lambda: self._generator_update(xs, xt)))
        out.update(self._substep("discriminators", lambda: self._discriminator_update(xs, xt)))
        out.update(self._substep("classifiers", lambda: self._classifier_update(xs, ys)))
        self._check(1, {k: v for k, v in out.items() if k != "gamma"})
        self.state.step += 1
        return out

    # --- part two ------------------------------------------------------------

    def part_two_step(self, x_adapted, y_adapted, xt) -> dict:
        """Feature-discriminator update, then a gated update of the adapted-domain classifier."""
        n, cfg = self.nets, self.cfg
        f_adapted = n["F_S_adapted"]

        def run():
            with torch.no_grad():
                feats_a = self._features(f_adapted, x_adapted)
                feats_t = self._features(f_adapted, xt)
            disc_loss, _ = L.feature_alignment_losses(feats_a, feats_t, n["D_feat"])
            self.opt_feat.zero_grad(set_to_none=True)
            disc_loss.backward()
            self.opt_feat.step()
            acc = L.feature_discriminator_accuracy(feats_a, feats_t, n["D_feat"])
            out = {"loss_D_feat": disc_loss.item(), "d_feat_acc": acc, "F_updated": False}
            if acc > cfg.thres:
                _set_requires_grad([n["D_feat"]], False)
                try:
                    _, confusion = L.feature_alignment_losses(
                        self._features(f_adapted, x_adapted), self._features(f_adapted, xt), n["D_feat"]
                    )
                    task = self._task_loss(f_adapted, x_adapted, y_adapted)
                    self.opt_adapted.zero_grad(set_to_none=True)
                    (confusion + task).backward()
                    self.opt_adapted.step()
                finally:
                    _set_requires_grad([n["D_feat"]], True)
                out.update({"confusion": confusion.item(), "task_F_S_adapted": task.item(), "F_updated": True})
            return out

        out = self._substep("feature_alignment", run)
        self._check(2, {k: v for k, v in out.items() if k not in ("F_updated",)})
        self.state.step += 1
        return out

    # --- selection -----------------------------------------------------------

    def validation_metric(self, x_val, y_val) -> tuple[float, str]:
        """Adapted-image task metric: KL (lower is better) or average accuracy (higher is better)."""
        n = self.nets
        with torch.no_grad():
            preds = n["F_S_adapted"].probs(n["G_ST"](x_val))
        return self.score(preds, y_val)

    def score(self, preds, labels) -> tuple[float, str]:
        if self.cfg.task == "distribution":
            return float(L.kl_rows(labels, preds).mean()), "min"
        _, avg = classification_accuracy(preds.argmax(-1).numpy(), labels.numpy())
        return avg, "max"

    def consider_snapshot(self, metric: float, mode: str, epoch: int) -> bool:
        best = self.state.best_metric
        better = best is None or (metric < best if mode == "min" else metric > best)
        self.state.validation_history.append(metric)
        if better:
            self.state.best_metric, self.state.best_epoch = metric, epoch
            self._best_snapshot = {
                k: copy.deepcopy(self.nets[k].state_dict()) for k in ("G_ST", "F_S_adapted")
            }
        return better

    def restore_best(self) -> None:
        if self._best_snapshot:
            for k, sd in self._best_snapshot.items():
                self.nets[k].load_state_dict(sd)

    # --- persistence ---------------------------------------------------------

    def save(self, directory: "str | Path", extra: Optional[dict] = None) -> Path:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        for name, net in self.nets.items():
            torch.save(net.state_dict(), directory / f"{name}.pt")
        torch.save(
            {
                "opt_gen": self.opt_gen.state_dict(),
                "opt_disc": self.opt_disc.state_dict(),
                "opt_cls": self.opt_cls.state_dict(),
                "opt_feat": self.opt_feat.state_dict(),
                "opt_adapted": self.opt_adapted.state_dict(),
                "pool_T": self.pool_T.state_dict(),
                "pool_S": self.pool_S.state_dict(),
                "best_snapshot": self._best_snapshot,
                "torch_rng": torch.get_rng_state(),
            },
            directory / "trainer_state.pt",
        )
        manifest = {
            "config": self.cfg.model_dump(mode="json"),
            "epoch": self.state.epoch_one + self.state.epoch_two,
            "seed": self.cfg.seed,
            "metric": self.state.best_metric,
            "state": {k: v for k, v in self.state.__dict__.items()},
        }
        manifest.update(extra or {})
        with open(directory / "manifest.json", "w") as fh:
            json.dump(manifest, fh, indent=2)
        return directory

    def load(self, directory: "str | Path") -> None:
        directory = Path(directory)
        for name, net in self.nets.items():
            net.load_state_dict(torch.load(directory / f"{name}.pt", map_location="cpu"))
        extra = torch.load(directory / "trainer_state.pt", map_location="cpu", weights_only=False)
        for key in ("opt_gen", "opt_disc", "opt_cls", "opt_feat", "opt_adapted"):
            getattr(self, key).load_state_dict(extra[key])
        self.pool_T.load_state_dict(extra["pool_T"])
        self.pool_S.load_state_dict(extra["pool_S"])
        self._best_snapshot = extra["best_snapshot"]
        torch.set_rng_state(extra["torch_rng"])
        with open(directory / "manifest.json") as fh:
            state = json.load(fh)["state"]
        self.state = TrainState(**state)


def load_networks(directory: "str | Path") -> tuple[TrainingConfig, dict]:
    """Rebuild the networks of a checkpoint directory for inference."""
    directory = Path(directory)
    manifest_path = directory / "manifest.json"
    if not manifest_path.is_file():
        raise FileNotFoundError(f"no checkpoint manifest in {directory}")
    with open(manifest_path) as fh:
        cfg = TrainingConfig(**json.load(fh)["config"])
    trainer = Trainer(cfg)
    for name, net in trainer.nets.items():
        net.load_state_dict(torch.load(directory / f"{name}.pt", map_location="cpu"))
        net.eval()
    return cfg, trainer.nets


@dataclass
class TrainResult:
    classifier: torch.nn.Module
    trainer: Trainer
    checkpoint: Optional[Path]
    log: LossLog


def _cycle_batches(images: torch.Tensor, batch_size: int, seed: int, start_epoch: int):
    """Endless shuffled batches of target images, reshuffled each pass."""
    epoch = start_epoch
    while True:
        for batch in tensor_batches(images, None, batch_size, seed, epoch):
            yield batch
        epoch += 1


def train(
    cfg: TrainingConfig,
    source: DatasetManifest,
    target: DatasetManifest,
    out_dir: "str | Path | None" = None,
    resume: bool = False,
    log: Optional[LossLog] = None,
    instrument: bool = False,
) -> TrainResult:
    """Run both training parts and return the adapted-domain classifier.

    Target records are read only through ``target.images``; their labels are
    used solely when ``cfg.selection == "target"``.
    """
    torch.use_deterministic_algorithms(True)
    out_dir = Path(out_dir) if out_dir is not None else None
    ckpt_dir = out_dir / "checkpoint" if out_dir else None
    if log is None:
        log = LossLog(out_dir / "loss_log.jsonl" if out_dir else None, append=resume)
    trainer = Trainer(cfg, log)
    if instrument:
        trainer.instrument = []
    if resume:
        if not ckpt_dir or not (ckpt_dir / "manifest.json").is_file():
            raise FileNotFoundError("no checkpoint to resume from")
        trainer.load(ckpt_dir)
        logger.info("resumed at phase %s, epoch %d", trainer.state.phase, trainer.state.epoch_one)

    xs_all, ys_all = source.images("train"), source.labels("train")
    xt_all = target.images("train")
    if cfg.selection == "target":
        x_val, y_val = target.images("val"), target.labels("val")
    else:
        x_val, y_val = source.images("val"), source.labels("val")

    state = trainer.state
    steps_per_epoch = math.ceil(xs_all.shape[0] / cfg.part_one_batch_size)
    total_steps = max(1, steps_per_epoch * cfg.part_one_epochs)
    warmup_steps = cfg.desc_warmup * total_steps

    try:
        if state.phase == "part_one":
            target_stream = _cycle_batches(xt_all, cfg.part_one_batch_size, cfg.seed + 1, state.epoch_one)
            while state.epoch_one < cfg.part_one_epochs:
                epoch = state.epoch_one
                for i, (xs, ys) in enumerate(tensor_batches(xs_all, ys_all, cfg.part_one_batch_size, cfg.seed, epoch)):
                    progress = epoch + i / steps_per_epoch
                    lr = trainer.set_part_one_lr(progress)
                    global_step = epoch * steps_per_epoch + i
                    trainer.gamma_scale = min(1.0, global_step / warmup_steps) if warmup_steps > 0 else 1.0
                    out = trainer.part_one_step(xs, ys, next(target_stream))
                    log.write({"part": 1, "epoch": epoch + 1, "step": state.step, **out, "lr": lr})
                state.epoch_one += 1
                metric, mode = trainer.validation_metric(x_val, y_val)
                improved = trainer.consider_snapshot(metric, mode, state.epoch_one)
                log.write(
                    {"part": 1, "epoch": state.epoch_one, "event": "validation", "metric": metric, "best": improved}
                )
                if ckpt_dir:
                    trainer.save(ckpt_dir)
            log.write({"part": 1, "event": "schedule_end", "lr": trainer.set_part_one_lr(cfg.part_one_epochs)})
            trainer.restore_best()
            state.advance("part_two")

        if state.phase == "part_two":
            with torch.no_grad():
                adapted = torch.cat(
                    [trainer["G_ST"](xb) for xb in tensor_batches(xs_all, None, 256)]
                )
            target_stream = _cycle_batches(xt_all, cfg.part_two_batch_size, cfg.seed + 2, state.epoch_two)
            while state.epoch_two < cfg.part_two_epochs:
                epoch = state.epoch_two
                for xa, ya in tensor_batches(adapted, ys_all, cfg.part_two_batch_size, cfg.seed + 3, epoch):
                    out = trainer.part_two_step(xa, ya, next(target_stream))
                    log.write({"part": 2, "epoch": epoch + 1, "step": state.step, **out, "lr": cfg.part_two_lr})
                state.epoch_two += 1
                if ckpt_dir:
                    trainer.save(ckpt_dir)
            state.advance("done")
    finally:
        if out_dir is not None:
            log.close()

    if ckpt_dir:
        trainer.save(ckpt_dir)
    return TrainResult(trainer["F_S_adapted"], trainer, ckpt_dir, log)


def predict(classifier: torch.nn.Module, images: torch.Tensor, batch_size: int = 256) -> torch.Tensor:
    """Emotion probabilities for a stack of images."""
    classifier.eval()
    with torch.no_grad():
        out = torch.cat([classifier.probs(xb) for xb in tensor_batches(images, None, batch_size)])
    classifier.train()
    return out


def evaluate(classifier: torch.nn.Module, manifest: DatasetManifest, split: str = "test") -> MetricsReport:
    """Score a classifier on one split of a labelled manifest."""
    head = getattr(getattr(classifier, "cfg", None), "head", None)
    if head is not None and (head == "softmax") != (manifest.task == "distribution"):
        raise ValueError(f"classifier head {head!r} does not match a {manifest.task} manifest")
    preds = predict(classifier, manifest.images(split))
    labels = manifest.labels(split)
    if manifest.task == "distribution":
        return evaluate_distributions(preds.numpy(), labels.numpy())
    per_class, avg = classification_accuracy(preds.argmax(-1).numpy(), labels.numpy())
    return MetricsReport(per_class_accuracy=per_class, average_accuracy=avg, num_samples=len(labels))


def train_classifier(
    cfg: TrainingConfig, manifest: DatasetManifest, split: str = "train", log: Optional[LossLog] = None
) -> torch.nn.Module:
    """Supervised classifier on one labelled split (source-only and oracle baselines).

    Uses the same optimizer, batch size, epochs and schedule as the
    classifiers of the first training part.
    """
    torch.use_deterministic_algorithms(True)
    torch.manual_seed(cfg.seed)
    net = build_classifier(cfg.classifier, seed=cfg.seed * 100 + 5)
    opt = _make_optimizer(cfg.classifier_optimizer, net.parameters(), cfg.classifier_lr, cfg)
    x, y = manifest.images(split), manifest.labels(split)
    steps = math.ceil(x.shape[0] / cfg.part_one_batch_size)
    for epoch in range(cfg.part_one_epochs):
        for i, (xb, yb) in enumerate(tensor_batches(x, y, cfg.part_one_batch_size, cfg.seed, epoch)):
            for group in opt.param_groups:
                group["lr"] = linear_decay_lr(cfg.classifier_lr, epoch + i / steps, cfg.part_one_epochs)
            if cfg.task == "distribution":
                loss = L.task_loss_distribution(net.probs(xb), yb)
            else:
                loss = L.task_loss_classification(net.logits(xb), yb)
            opt.zero_grad(set_to_none=True)
            loss.backward()
            opt.step()
            if log is not None:
                log.write({"part": 0, "epoch": epoch + 1, "loss_task": loss.item()})
    return net
