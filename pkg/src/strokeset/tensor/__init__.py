"""Minimal float64 tensor engine with reverse-mode differentiation."""
from .engine import (Graph, NumericError, ShapeError, Tensor, add, as_tensor, attention_pool,
                     bce_with_logits, concat, conv2d, conv_transpose2d, div, exp, getitem,
                     global_avg_pool, layer_norm, log, matmul, mean, mul, no_grad, norm, power,
                     relu, reparameterize, reshape, sigmoid, softmax, sub, transpose, tsum)
from .gradcheck import GradReport, check_function, finite_difference_check
from .nn import (Conv2d, ConvTranspose2d, Embedding, LayerNorm, Linear, Module, MultiHeadAttention,
                 Parameter, TransformerLayer, sinusoidal_embedding)
from .optim import AdamW, lr_at
from .rng import stream
