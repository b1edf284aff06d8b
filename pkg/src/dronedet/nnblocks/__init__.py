from .cbam import CbamParams, cbam_backward, cbam_forward, cbam_forward_cached, channel_attention
from .encoder import (
    EncoderParams,
    attention_weights,
    encode_feature_map,
    encoder_backward,
    encoder_forward_cached,
    multi_head_attention,
    transformer_encoder_forward,
)
from .gradcheck import (
    Differentiable,
    cbam_block,
    decode_block,
    encoder_block,
    grad_check,
    grad_check_report,
    linear_block,
)
from .heads import DEFAULT_ANCHORS, HeadSpec, decode_dense, decode_heads, default_heads, yolo_head_decode
from .schedule import cosine_lr
