"""Detection-pipeline toolkit for drone imagery: box fusion, ms-testing,
COCO-style evaluation, augmentation, attention blocks and patch rescoring."""

__version__ = "0.1.0"
