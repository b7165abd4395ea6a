"""Training, prediction, evaluation and checkpoint handling for FGSANet."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import RunConfig, TrainConfig
from .data import Sample, generate, load_split
from .head import weighted_bce_iou_loss
from .metrics import MetricsReport, aggregate
from .model import FGSANet
from .optim import AdamW, ParamSet
from .serialize import checkpoint_bytes, load_checkpoint, params_digest, save_checkpoint
from .tensor import Tensor, no_grad

log = logging.getLogger(__name__)

BACKBONE_CKPT = "backbone.ckpt"
ADAPTER_CKPT = "adapter.ckpt"
HASH_RECORD = "meta.backbone_sha256"


class CheckpointError(ValueError):
    pass


def build_model(cfg: RunConfig, adapter_seed: int | None = None) -> FGSANet:
    seed = cfg.train.seed if adapter_seed is None else adapter_seed
    return FGSANet(cfg.backbone, cfg.adapter, seed=seed)


def load_samples(cfg: RunConfig, split: str) -> list[Sample]:
    if cfg.data.root:
        samples = load_split(Path(cfg.data.root) / split)
    else:
        samples = generate(cfg.data.synth, split)
    if not samples:
        raise ValueError(f"dataset split {split!r} is empty")
    s = cfg.backbone.image_size
    for smp in samples:
        if smp.image.shape != (s, s, 3):
            raise ValueError(f"sample {smp.id} is {smp.image.shape[:2]}, model expects {s}x{s}")
    return samples


def sample_loss(model: FGSANet, sample: Sample) -> Tensor:
    return weighted_bce_iou_loss(model(sample.image), sample.mask)


def dataset_loss(model: FGSANet, samples: list[Sample]) -> float:
    with no_grad():
        return float(np.mean([sample_loss(model, s).item() for s in samples]))


@dataclass
class TrainResult:
    steps: int
    step_losses: list[float] = field(default_factory=list)
    epoch_losses: list[float] = field(default_factory=list)


def train(model: FGSANet, samples: list[Sample], tcfg: TrainConfig, on_epoch=None) -> TrainResult:
    """AdamW on the adapter and head only; gradients averaged over each batch."""
    params = model.param_set()
    opt = AdamW(params, lr=tcfg.lr, weight_decay=tcfg.weight_decay)
    rng = np.random.default_rng(tcfg.seed)
    res = TrainResult(steps=0)
    for epoch in range(tcfg.epochs):
        order = rng.permutation(len(samples))
        losses = []
        for start in range(0, len(order), tcfg.batch):
            if tcfg.max_steps and res.steps >= tcfg.max_steps:
                break
            batch = [samples[i] for i in order[start:start + tcfg.batch]]
            params.zero_grad()
            total = 0.0
            for smp in batch:
                loss = sample_loss(model, smp) * (1.0 / len(batch))
                loss.backward()
                total += loss.item()
            opt.step()
            res.steps += 1
            res.step_losses.append(total)
            losses.append(total)
        if not losses:
            break
        res.epoch_losses.append(float(np.mean(losses)))
        if on_epoch is not None:
            on_epoch(epoch, res)
    params.zero_grad()
    return res


def predict(model: FGSANet, image: np.ndarray) -> np.ndarray:
    with no_grad():
        return model(image).probs.data.copy()


def evaluate(model: FGSANet, samples: list[Sample]) -> tuple[MetricsReport, list[np.ndarray]]:
    preds = [predict(model, s.image) for s in samples]
    return aggregate(zip(preds, (s.mask for s in samples))), preds


# -- checkpoints -------------------------------------------------------------

def backbone_params(model: FGSANet) -> ParamSet:
    return ParamSet((k, v) for k, v in model.param_set().items() if k.startswith("backbone."))


def backbone_digest(model: FGSANet) -> str:
    return params_digest(backbone_params(model))


def save_run(model: FGSANet, out_dir) -> dict:
    """Write the frozen backbone and the trainable-only adapter checkpoint."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    bb_hash = save_checkpoint(out / BACKBONE_CKPT, backbone_params(model))
    digest = np.frombuffer(bytes.fromhex(bb_hash), dtype=np.uint8).astype(np.float64)
    records = [(k, v, True) for k, v in model.trainable_set().items()]
    records.append((HASH_RECORD, Tensor(digest), False))
    (out / ADAPTER_CKPT).write_bytes(checkpoint_bytes(records))
    return {"backbone_sha256": bb_hash}


def load_run(cfg: RunConfig, run_dir, checkpoint=None) -> FGSANet:
    """Rebuild a trained model; raises ``CheckpointError`` on any mismatch."""
    run_dir = Path(run_dir)
    ckpt_path = Path(checkpoint) if checkpoint else run_dir / ADAPTER_CKPT
    bb_path = ckpt_path.parent / BACKBONE_CKPT
    if not ckpt_path.is_file():
        raise CheckpointError(f"adapter checkpoint not found: {ckpt_path}")
    try:
        records = load_checkpoint(ckpt_path)
    except ValueError as exc:
        raise CheckpointError(f"corrupt checkpoint {ckpt_path}: {exc}") from exc
    model = build_model(cfg)
    if bb_path.is_file():
        for name, t, _ in load_checkpoint(bb_path):
            ps = model.param_set()
            if name not in ps or ps[name].shape != t.shape:
                raise CheckpointError(f"backbone checkpoint does not fit the config at {name}")
            ps[name].data[...] = t.data
    by_name = {n: t for n, t, _ in records}
    if HASH_RECORD not in by_name:
        raise CheckpointError("checkpoint lacks the backbone hash record")
    want = bytes(by_name.pop(HASH_RECORD).data.astype(np.uint8)).hex()
    if backbone_digest(model) != want:
        raise CheckpointError("frozen backbone hash differs from the one recorded at training")
    trainable = model.trainable_set()
    if set(by_name) != set(trainable.names()):
        diff = sorted(set(by_name) ^ set(trainable.names()))
        raise CheckpointError(f"checkpoint parameters do not match the model (e.g. {diff[0]})")
    for name, t in by_name.items():
        if trainable[name].shape != t.shape:
            raise CheckpointError(f"shape mismatch for {name}: {t.shape} vs {trainable[name].shape}")
        trainable[name].data[...] = t.data
    return model
