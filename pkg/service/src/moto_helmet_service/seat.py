"""Seat-role classifier: a compact AlexNet-style CNN and its trainer.

Four output classes (driver, passenger1, passenger2, child). Training
uses weighted cross-entropy to survive the extreme class imbalance of
real footage (rear passengers and children are orders of magnitude
rarer than drivers) and keeps the checkpoint with the lowest validation
loss.

Crop preprocessing is deliberately simple and is part of the service
contract: resize to 64x64 with aspect distortion, scale pixel values by
1/255 and subtract 0.5 per channel (inputs live in [-0.5, 0.5]; no std
division). See the service README.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image
from torch import nn

ROLES = ("driver", "passenger1", "passenger2", "child")
INPUT_SIZE = 64


class SeatNet(nn.Module):
    """Five conv blocks and three fully connected layers, sized for CPU."""

    def __init__(self) -> None:
        super().__init__()
        self.features = nn.Sequential(
            nn.Conv2d(3, 32, kernel_size=5, stride=2, padding=2),
            nn.ReLU(inplace=True),
            nn.MaxPool2d(2),  # 16x16
            nn.Conv2d(32, 64, kernel_size=3, padding=1),
            nn.ReLU(inplace=True),
            nn.Conv2d(64, 96, kernel_size=3, padding=1),
            nn.ReLU(inplace=True),
            nn.Conv2d(96, 96, kernel_size=3, padding=1),
            nn.ReLU(inplace=True),
            nn.Conv2d(96, 64, kernel_size=3, padding=1),
            nn.ReLU(inplace=True),
            nn.MaxPool2d(2),  # 8x8
        )
        self.classifier = nn.Sequential(
            nn.Dropout(0.5),
            nn.Linear(64 * 8 * 8, 512),
            nn.ReLU(inplace=True),
            nn.Dropout(0.5),
            nn.Linear(512, 128),
            nn.ReLU(inplace=True),
            nn.Linear(128, 4),
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = self.features(x)
        return self.classifier(torch.flatten(x, 1))


def preprocess(image: Image.Image) -> torch.Tensor:
    """Image -> 3x64x64 float tensor in [-0.5, 0.5]. Aspect ratio is not kept."""
    resized = image.convert("RGB").resize((INPUT_SIZE, INPUT_SIZE), Image.BILINEAR)
    arr = np.asarray(resized, dtype=np.float32) / 255.0 - 0.5
    return torch.from_numpy(arr).permute(2, 0, 1)


def seeded_model(seed: int = 0) -> SeatNet:
    """Deterministically initialized (untrained) network."""
    torch.manual_seed(seed)
    model = SeatNet()
    model.eval()
    return model


def load_model(path: str | Path) -> SeatNet:
    model = SeatNet()
    model.load_state_dict(torch.load(path, map_location="cpu", weights_only=True))
    model.eval()
    return model


@dataclass(frozen=True)
class SeatTrainConfig:
    learning_rate: float = 0.0001
    epochs: int = 100
    class_weights: tuple[float, float, float, float] = (1.0, 10.0, 800.0, 3000.0)
    split: tuple[float, float, float] = (0.70, 0.15, 0.15)
    batch_size: int = 16
    seed: int = 0

    def __post_init__(self) -> None:
        if abs(sum(self.split) - 1.0) > 1e-9:
            raise ValueError(f"split fractions must sum to 1, got {self.split}")
        if any(w <= 0 for w in self.class_weights):
            raise ValueError(f"class weights must be positive, got {self.class_weights}")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")


def load_crop_dataset(root: str | Path) -> tuple[torch.Tensor, torch.Tensor]:
    """Read root/<role>/*.png into (images, labels), sorted for determinism."""
    root = Path(root)
    images, labels = [], []
    for label, role in enumerate(ROLES):
        directory = root / role
        if not directory.is_dir():
            continue
        for path in sorted(directory.iterdir()):
            if path.suffix.lower() not in (".png", ".jpg", ".jpeg"):
                continue
            with Image.open(path) as img:
                images.append(preprocess(img))
            labels.append(label)
    if not images:
        raise ValueError(f"no labeled crops found under {root}")
    return torch.stack(images), torch.tensor(labels, dtype=torch.long)


def split_indices(labels: torch.Tensor, split: tuple[float, float, float],
                  rng: np.random.Generator) -> tuple[list[int], list[int], list[int]]:
    """Stratified train/val/test indices. Every role must land in train."""
    train, val, test = [], [], []
    for k in range(len(ROLES)):
        idx = (labels == k).nonzero(as_tuple=True)[0].tolist()
        rng.shuffle(idx)
        n = len(idx)
        n_val = round(n * split[1])
        n_test = round(n * split[2])
        test.extend(idx[:n_test])
        val.extend(idx[n_test:n_test + n_val])
        train.extend(idx[n_test + n_val:])
    for k, role in enumerate(ROLES):
        if not any(labels[i] == k for i in train):
            raise ValueError(f"role {role!r} absent from training split")
    return sorted(train), sorted(val), sorted(test)


def class_loss_contributions(model: nn.Module, images: torch.Tensor,
                             labels: torch.Tensor,
                             weights: tuple[float, ...]) -> torch.Tensor:
    """Per-class sums of weighted cross-entropy over one frozen batch.

    The weight enters as a plain multiplier, so doubling weights[k]
    exactly doubles entry k.
    """
    model.eval()
    with torch.no_grad():
        per_sample = F.cross_entropy(model(images), labels, reduction="none")
    out = torch.zeros(len(weights))
    for k, w in enumerate(weights):
        out[k] = (per_sample[labels == k] * w).sum()
    return out


def _accuracy_and_confusion(model: nn.Module, images: torch.Tensor,
                            labels: torch.Tensor) -> tuple[float, list[list[int]]]:
    model.eval()
    with torch.no_grad():
        predicted = model(images).argmax(dim=1)
    confusion = [[0] * len(ROLES) for _ in ROLES]
    for actual, pred in zip(labels.tolist(), predicted.tolist()):
        confusion[actual][pred] += 1
    accuracy = float((predicted == labels).float().mean())
    return accuracy, confusion


def train_seat_classifier(data_dir: str | Path, cfg: SeatTrainConfig = SeatTrainConfig(),
                          out_dir: str | Path | None = None) -> dict:
    """Train on root/<role>/ crops; return (and optionally write) the report.

    The returned report echoes the full configuration, records per-epoch
    losses, and scores the lowest-validation-loss checkpoint on the test
    split. Same data + same config (seed included) reproduces the report
    bit for bit.
    """
    torch.manual_seed(cfg.seed)
    rng = np.random.default_rng(cfg.seed)

    images, labels = load_crop_dataset(data_dir)
    train_idx, val_idx, test_idx = split_indices(labels, cfg.split, rng)
    x_train, y_train = images[train_idx], labels[train_idx]
    x_val, y_val = images[val_idx], labels[val_idx]
    x_test, y_test = images[test_idx], labels[test_idx]

    model = SeatNet()
    optimizer = torch.optim.Adam(model.parameters(), lr=cfg.learning_rate)
    criterion = nn.CrossEntropyLoss(weight=torch.tensor(cfg.class_weights))

    best_state = copy.deepcopy(model.state_dict())
    best_val = float("inf")
    best_epoch = 0
    history = []

    for epoch in range(1, cfg.epochs + 1):
        model.train()
        order = torch.from_numpy(rng.permutation(len(x_train)))
        epoch_loss = 0.0
        for start in range(0, len(order), cfg.batch_size):
            batch = order[start:start + cfg.batch_size]
            optimizer.zero_grad()
            loss = criterion(model(x_train[batch]), y_train[batch])
            loss.backward()
            optimizer.step()
            epoch_loss += float(loss.detach()) * len(batch)
        train_loss = epoch_loss / len(x_train)

        model.eval()
        with torch.no_grad():
            val_loss = float(criterion(model(x_val), y_val)) if len(x_val) else 0.0
        train_accuracy, _ = _accuracy_and_confusion(model, x_train, y_train)
        history.append({"epoch": epoch, "train_loss": train_loss,
                        "train_accuracy": train_accuracy, "val_loss": val_loss})
        if val_loss < best_val:
            best_val = val_loss
            best_epoch = epoch
            best_state = copy.deepcopy(model.state_dict())

    model.load_state_dict(best_state)
    train_accuracy, _ = _accuracy_and_confusion(model, x_train, y_train)
    test_accuracy, confusion = _accuracy_and_confusion(model, x_test, y_test)

    report = {
        "learning_rate": cfg.learning_rate,
        "epochs": cfg.epochs,
        "class_weights": list(cfg.class_weights),
        "split": list(cfg.split),
        "batch_size": cfg.batch_size,
        "seed": cfg.seed,
        "dataset_size": len(images),
        "split_sizes": [len(train_idx), len(val_idx), len(test_idx)],
        "best_epoch": best_epoch,
        "best_val_loss": best_val,
        "train_accuracy": train_accuracy,
        "test_accuracy": test_accuracy,
        "confusion_matrix": confusion,
        "roles": list(ROLES),
        "history": history,
    }

    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        torch.save(model.state_dict(), out_dir / "seat_model.pt")
        with open(out_dir / "report.json", "w", encoding="utf-8") as fh:
            json.dump(report, fh, indent=2)
            fh.write("\n")
    return report
