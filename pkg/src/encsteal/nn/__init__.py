from .autograd import Tensor, as_tensor, concat, conv2d, logsumexp, max_pool2d, no_grad
from .checkpoint import load_checkpoint, save_checkpoint
from .functional import cosine_matrix, cosine_sim, cross_entropy, l2_normalize, mse, softmax
from .gradcheck import finite_diff_grad, max_rel_error
from .model import ArchSpec, EncoderModel, Head, forward_embed, init_model
from .optim import Adam, AdamState, adam_step

__all__ = [
    "Adam",
    "AdamState",
    "ArchSpec",
    "EncoderModel",
    "Head",
    "Tensor",
    "adam_step",
    "as_tensor",
    "concat",
    "conv2d",
    "cosine_matrix",
    "cosine_sim",
    "cross_entropy",
    "finite_diff_grad",
    "forward_embed",
    "init_model",
    "l2_normalize",
    "load_checkpoint",
    "logsumexp",
    "max_pool2d",
    "max_rel_error",
    "mse",
    "no_grad",
    "save_checkpoint",
    "softmax",
]
