from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .layers import GRU, CausalConv1D, Dense, ScoreHead
from .model import AecModel, ModelConfig, pack_features, pack_mask, unpack_mask
from .streaming import StreamingState, offline_enhance, stream_signal, streaming_flush, streaming_infer

__all__ = [
    "AecModel", "ModelConfig", "Dense", "CausalConv1D", "GRU", "ScoreHead",
    "pack_features", "pack_mask", "unpack_mask",
    "StreamingState", "streaming_infer", "streaming_flush", "stream_signal", "offline_enhance",
    "save_checkpoint", "load_checkpoint", "CheckpointError",
]
