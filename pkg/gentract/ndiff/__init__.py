from .tensor import (  # NOQA
    Tensor, ComputationRecord, Primitive, as_tensor, backward, add, sub, mul,
    div, neg, exp, tsum, mean, reshape, transpose, concat, matmul, take)
from .layers import (  # NOQA
    gelu, softmax, layer_norm, conv3d, upsample_nearest, linear,
    embedding_lookup, attention, mse, kl_divergence, Module, glorot,
    total_size)
from .optim import OptimizerState, adam_step  # NOQA
from .checkpoint import save_checkpoint, load_checkpoint  # NOQA
from .gradcheck import check_gradients, relative_error  # NOQA
