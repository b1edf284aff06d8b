from .detections import (
    DetectionFormatError,
    DetectionRecord,
    group_by_image,
    read_detections,
    read_detections_file,
    write_detections,
)
from .pnm import PnmError, decode_pnm, encode_pnm, image_size, read_image, write_image
from .stats import DatasetStats, dataset_stats
from .visdrone import (
    CATEGORY_NAMES,
    EVAL_CLASSES,
    ParseError,
    VisDroneRecord,
    parse_visdrone,
    read_annotation_dir,
    serialize_visdrone,
)
