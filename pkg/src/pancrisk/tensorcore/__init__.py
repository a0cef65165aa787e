from .array import (ConfigurationError, DegenerateMaskError, DiffArray, DimensionError,
                    tensor)
from .nn import (BatchNorm3d, Conv3d, FeedForward, LayerNorm, Linear, MultiHeadAttention,
                 TransformerLayer)
from .ops import (avg_pool3d, batch_norm, concat, conv3d, gelu, layer_norm, leaky_relu,
                  linear, matmul, sigmoid, softmax_rows, stack)
from .params import Adam, ParamStore, UninitializedGradientError, adam_step, sgd_step
from .gradcheck import gradcheck, rel_error
