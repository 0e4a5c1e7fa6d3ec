from .tensor import (
    AutodiffError,
    Tensor,
    broadcast_to,
    concat,
    grad,
    log_softmax_t,
    logsumexp,
    maximum,
    softmax_t,
    stack,
    tensor,
)
from .layers import (
    Module,
    Linear,
    LeakyReLU,
    Dropout,
    BatchNorm1d,
    BiGRU,
    MultiHeadSelfAttention,
    uniform_init,
)
from .optim import AdamW, cosine_lr
from .checkpoint import save_params, load_params, config_hash, file_hash

__all__ = [
    "Tensor", "tensor", "concat", "stack", "maximum", "logsumexp", "softmax_t", "grad",
    "AutodiffError", "Module", "Linear", "LeakyReLU", "Dropout", "BatchNorm1d", "BiGRU",
    "MultiHeadSelfAttention", "uniform_init", "AdamW", "cosine_lr",
    "save_params", "load_params", "config_hash", "file_hash",
]
