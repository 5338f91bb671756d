"""HTTP inference service for the helmet detection pipeline.

POST /detect answers free-text detection prompts over uploaded images,
POST /classify_seat assigns one of four seat roles to a person crop, and
GET /health reports liveness. The seat classifier and its training loop
live in `seat`; detector backends in `detectors`.
"""

from .app import create_app
from .detectors import BlobDetector, Owlv2Detector
from .seat import (
    INPUT_SIZE,
    ROLES,
    SeatNet,
    SeatTrainConfig,
    class_loss_contributions,
    load_crop_dataset,
    load_model,
    preprocess,
    seeded_model,
    split_indices,
    train_seat_classifier,
)
from .toydata import ROLE_COLORS, make_toy_dataset

__version__ = "0.1.0"

__all__ = [
    "BlobDetector",
    "INPUT_SIZE",
    "Owlv2Detector",
    "ROLES",
    "ROLE_COLORS",
    "SeatNet",
    "SeatTrainConfig",
    "class_loss_contributions",
    "create_app",
    "load_crop_dataset",
    "load_model",
    "make_toy_dataset",
    "preprocess",
    "seeded_model",
    "split_indices",
    "train_seat_classifier",
]
