"""Synthetic seat-role crops for exercising the training pipeline.

Each role gets its own dominant color; images are that color plus a
little seeded pixel noise so the classifier has to generalize at least
slightly instead of memorizing four constant vectors.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

ROLES = ("driver", "passenger1", "passenger2", "child")

ROLE_COLORS = {
    "driver": (200, 40, 40),
    "passenger1": (40, 200, 40),
    "passenger2": (40, 40, 200),
    "child": (210, 200, 50),
}


def make_toy_dataset(root: str | Path, per_class: int = 24, size: int = 64,
                     seed: int = 0) -> Path:
    """Write `per_class` PNG crops per role under root/<role>/ and return root."""
    root = Path(root)
    rng = np.random.default_rng(seed)
    for role in ROLES:
        directory = root / role
        directory.mkdir(parents=True, exist_ok=True)
        base = np.array(ROLE_COLORS[role], dtype=np.int16)
        for i in range(per_class):
            noise = rng.integers(-12, 13, size=(size, size, 3), dtype=np.int16)
            pixels = np.clip(base + noise, 0, 255).astype(np.uint8)
            Image.fromarray(pixels, "RGB").save(directory / f"{i:03d}.png")
    return root
