import math


def cosine_lr(epoch: int, total_epochs: int, lr0: float, final_fraction: float = 0.12) -> float:
    """Cosine decay from ``lr0`` at epoch 0 to ``final_fraction * lr0`` at the last epoch."""
    if total_epochs < 2:
        raise ValueError(f"total_epochs must be at least 2, got {total_epochs}")
    if not 0 <= epoch <= total_epochs - 1:
        raise ValueError(f"epoch {epoch} outside [0, {total_epochs - 1}]")
    c = (1.0 + math.cos(math.pi * epoch / (total_epochs - 1))) / 2.0
    # written as a convex blend so both endpoints come out exact
    return lr0 * ((1.0 - c) * final_fraction + c)
