from ..config import TrainConfig, desk_schedule
from .losses import classification_loss, quality_loss
from .schedule import lr_schedule
from .trainer import (EpochStats, TrainReport, class_index, fit_quality, fit_recognizer, load_images,
                      predict, train_quality, train_recognizer)
