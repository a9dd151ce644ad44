from ..config import TrainConfig


def lr_schedule(epoch: int, config: TrainConfig) -> float:
    """Step decay: base_lr * lr_decay_factor ** (epoch // lr_decay_every)."""
    if not 0 <= epoch < config.epochs:
        raise ValueError(f"epoch {epoch} outside [0, {config.epochs})")
    return config.base_lr * config.lr_decay_factor ** (epoch // config.lr_decay_every)
