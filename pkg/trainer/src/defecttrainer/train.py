"""Training harness: ResNet18 binary classifier over mixed supervised streams.

SGD (momentum 0.9, weight decay 1e-2, lr within [2.5e-5, 5e-5]), cosine
annealing with warm restarts (T_0 = 7813 steps, T_mult = 2), mixed precision,
early stopping on validation loss, checkpoint selection by lowest validation
loss. All quality metrics flow through the pipeline toolkit's `evaluate`
command run as a subprocess; this module never computes them itself.
"""

from __future__ import annotations

import json
import math
import subprocess
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path

import torch
from torch.utils.data import DataLoader

from .data import ContainerDataset, FolderDataset

LR_BAND = (2.5e-5, 5e-5)


class TrainingDiverged(RuntimeError):
    """Loss became non-finite."""


@dataclass
class TrainConfig:
    lr: float = 5e-5
    momentum: float = 0.9
    weight_decay: float = 1e-2
    scheduler_t0: int = 7813
    scheduler_t_mult: int = 2
    batch_size: int = 32
    epochs: int = 100
    early_stop_patience: int = 20
    seed: int = 0
    pretrained: bool = True
    amp: bool = True
    num_workers: int = 0
    max_steps_per_epoch: int | None = None   # debugging/determinism runs only
    eval_each_epoch: bool = True             # per-epoch metrics via the evaluate tool
    target_mcc: float | None = None          # stop once the evaluate tool reports it

    def validate(self) -> None:
        if not LR_BAND[0] <= self.lr <= LR_BAND[1]:
            raise ValueError(f"lr must lie in [{LR_BAND[0]}, {LR_BAND[1]}], got {self.lr}")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size must be >= 1 and epochs >= 0")


def build_model(pretrained: bool, seed: int) -> torch.nn.Module:
    import torchvision

    torch.manual_seed(seed)
    if pretrained:
        try:
            weights = torchvision.models.ResNet18_Weights.IMAGENET1K_V1
            model = torchvision.models.resnet18(weights=weights)
        except Exception as exc:  # weight download unavailable (offline hosts)
            raise RuntimeError(
                "pretrained backbone weights are unavailable in this environment; "
                "re-run with --no-pretrained or provide a torchvision cache"
            ) from exc
    else:
        model = torchvision.models.resnet18(weights=None)
    model.fc = torch.nn.Linear(model.fc.in_features, 1)
    return model


def _autocast(device: str, enabled: bool):
    dtype = torch.bfloat16 if device == "cpu" else torch.float16
    return torch.autocast(device_type=device, dtype=dtype, enabled=enabled)


@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    val_loss: float
    metrics: dict | None = None


@dataclass
class TrainResult:
    best_checkpoint: Path
    last_checkpoint: Path
    log_path: Path
    history: list[EpochStats] = field(default_factory=list)
    best_epoch: int = -1
    stopped_reason: str = ""


def _loader(dataset, config: TrainConfig, shuffle: bool) -> DataLoader:
    generator = torch.Generator()
    generator.manual_seed(config.seed)
    return DataLoader(dataset, batch_size=config.batch_size, shuffle=shuffle,
                      num_workers=config.num_workers, generator=generator)


def _forward_loss(model, criterion, xb, yb, device, amp):
    with _autocast(device, amp):
        logits = model(xb)
        loss = criterion(logits, yb)
    return loss


@torch.no_grad()
def _validation_loss(model, loader, criterion, device, amp) -> float:
    model.eval()
    total = 0.0
    count = 0
    for xb, yb in loader:
        xb, yb = xb.to(device), yb.to(device)
        loss = _forward_loss(model, criterion, xb, yb, device, amp)
        total += float(loss) * len(xb)
        count += len(xb)
    return total / count if count else math.nan


@torch.no_grad()
def score_dataset(model, dataset: FolderDataset, batch_size: int, device: str,
                  amp: bool) -> list[tuple[str, float]]:
    """(id, sigmoid score) rows in dataset order."""
    model.eval()
    loader = DataLoader(dataset, batch_size=batch_size, shuffle=False, num_workers=0)
    scores: list[float] = []
    for xb, _ in loader:
        with _autocast(device, amp):
            logits = model(xb.to(device))
        scores.extend(torch.sigmoid(logits.float()).squeeze(1).cpu().tolist())
    return list(zip(dataset.ids(), scores))


def write_scores_csv(rows: list[tuple[str, float]], path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = ["id,score"] + [f"{i},{s:.10f}" for i, s in rows]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def run_toolkit_evaluate(pred_csv: Path, data_root: Path, out_dir: Path) -> dict:
    """Run the pipeline toolkit's evaluate command and return its report."""
    cmd = [sys.executable, "-m", "defectkit.cli", "evaluate",
           "--pred", str(pred_csv), "--data", str(data_root), "--out", str(out_dir)]
    proc = subprocess.run(cmd, capture_output=True, text=True)
    if proc.returncode != 0:
        raise RuntimeError(f"evaluate tool failed ({proc.returncode}): {proc.stderr.strip()}")
    return json.loads((out_dir / "report.json").read_text(encoding="utf-8"))


def _save_checkpoint(model, config: TrainConfig, epoch: int, val_loss: float, path: Path,
                     modality: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save({"model": model.state_dict(), "config": asdict(config),
                "epoch": epoch, "val_loss": val_loss, "modality": modality}, path)


def train(container: Path, val_root: Path, out_dir: Path, config: TrainConfig,
          device: str = "cpu") -> TrainResult:
    """Train on a stream container, validate on a folder split, keep the
    lowest-validation-loss checkpoint."""
    config.validate()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    torch.manual_seed(config.seed)

    train_set = ContainerDataset(container)
    val_set = FolderDataset(val_root, modality=train_set.modality)
    if len(val_set) == 0:
        raise ValueError(f"{val_root}: validation split has no test images")
    train_loader = _loader(train_set, config, shuffle=True)
    val_loader = DataLoader(val_set, batch_size=config.batch_size, shuffle=False,
                            num_workers=config.num_workers)

    model = build_model(config.pretrained, config.seed).to(device)
    criterion = torch.nn.BCEWithLogitsLoss()
    optimizer = torch.optim.SGD(model.parameters(), lr=config.lr,
                                momentum=config.momentum, weight_decay=config.weight_decay)
    scheduler = torch.optim.lr_scheduler.CosineAnnealingWarmRestarts(
        optimizer, T_0=config.scheduler_t0, T_mult=config.scheduler_t_mult)

    modality = train_set.modality
    best_path = out_dir / "best.pt"
    last_path = out_dir / "last.pt"
    log_path = out_dir / "training_log.json"
    result = TrainResult(best_checkpoint=best_path, last_checkpoint=last_path, log_path=log_path)

    best_val = math.inf
    initial_val = _validation_loss(model, val_loader, criterion, device, config.amp)
    _save_checkpoint(model, config, -1, initial_val, best_path, modality)  # epochs=0 keeps the init
    _save_checkpoint(model, config, -1, initial_val, last_path, modality)
    best_val = initial_val
    result.best_epoch = -1

    epochs_since_best = 0
    step = 0
    for epoch in range(config.epochs):
        model.train()
        running = 0.0
        seen = 0
        for batch_idx, (xb, yb) in enumerate(train_loader):
            if config.max_steps_per_epoch is not None and batch_idx >= config.max_steps_per_epoch:
                break
            xb, yb = xb.to(device), yb.to(device)
            optimizer.zero_grad(set_to_none=True)
            loss = _forward_loss(model, criterion, xb, yb, device, config.amp)
            loss_value = float(loss.detach())
            if not math.isfinite(loss_value):
                raise TrainingDiverged(f"non-finite loss at epoch {epoch} step {batch_idx}")
            loss.backward()
            optimizer.step()
            scheduler.step()
            step += 1
            running += loss_value * len(xb)
            seen += len(xb)
        train_loss = running / seen if seen else math.nan
        val_loss = _validation_loss(model, val_loader, criterion, device, config.amp)
        stats = EpochStats(epoch=epoch, train_loss=train_loss, val_loss=val_loss)

        _save_checkpoint(model, config, epoch, val_loss, last_path, modality)
        if val_loss < best_val:
            best_val = val_loss
            result.best_epoch = epoch
            epochs_since_best = 0
            _save_checkpoint(model, config, epoch, val_loss, best_path, modality)
        else:
            epochs_since_best += 1

        if config.eval_each_epoch or config.target_mcc is not None:
            rows = score_dataset(model, val_set, config.batch_size, device, config.amp)
            pred_csv = out_dir / f"epoch_{epoch:03d}_scores.csv"
            write_scores_csv(rows, pred_csv)
            report = run_toolkit_evaluate(pred_csv, val_root, out_dir / f"epoch_{epoch:03d}_eval")
            stats.metrics = report["image"]
            if config.target_mcc is not None and report["image"]["mcc"] >= config.target_mcc:
                result.history.append(stats)
                result.stopped_reason = f"target mcc {config.target_mcc} reached at epoch {epoch}"
                break
        result.history.append(stats)
        if epochs_since_best >= config.early_stop_patience:
            result.stopped_reason = f"no validation improvement for {epochs_since_best} epochs"
            break
    if not result.stopped_reason:
        result.stopped_reason = "epoch budget exhausted"

    log_path.write_text(json.dumps({
        "config": asdict(config),
        "best_epoch": result.best_epoch,
        "stopped_reason": result.stopped_reason,
        "history": [
            {"epoch": h.epoch, "train_loss": h.train_loss, "val_loss": h.val_loss,
             "metrics": h.metrics}
            for h in result.history
        ],
    }, indent=2) + "\n", encoding="utf-8")
    return result


def load_checkpoint(path: Path, device: str = "cpu"):
    payload = torch.load(path, map_location=device, weights_only=False)
    config = TrainConfig(**payload["config"])
    model = build_model(pretrained=False, seed=config.seed)
    model.load_state_dict(payload["model"])
    model.to(device)
    return model, config, payload
