from .checkpoint import dumps, load_checkpoint, loads, save_checkpoint
from .model import (
    EncoderHandle,
    ModelConfig,
    ModelState,
    cross_entropy_loss,
    decode_tokens,
    decoder_logits,
    encode_sequence,
    encoder_forward,
    gcn_apply,
    gcn_forward,
    greedy,
    normalized_adjacency,
)
from .optim import adam_step, collect_grads
from .tensor import Tensor
