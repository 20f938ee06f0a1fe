"""Minimal dense-tensor ops with hand-written backward passes.

Tensors are plain :class:`numpy.ndarray` objects; trainable state lives in
:class:`~fotskit.nn.layers.Parameter`.
"""
from . import functional
from .functional import (
    batch_norm, bilinear_upsample, conv2d, dropout, height_max_pool, linear,
    log_softmax, relu, sigmoid,
)
from .gradcheck import GradCheckReport, grad_check, numeric_grad, rel_error
from .layers import (
    BatchNorm2d, BiLSTM, Conv2d, ConvBNReLU, Dropout, Linear, Module, Parameter,
)
from .lstm import bilstm, bilstm_backward
from .optim import SGD, Adam, sgd_step
