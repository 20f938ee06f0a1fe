"""Stateful layers built on the functional primitives.

A layer keeps the cache of its most recent forward call; ``backward``
consumes it, accumulates parameter gradients and returns the input gradient.
"""
from collections import OrderedDict

import numpy as np

from . import functional as F
from .lstm import bilstm, bilstm_backward


class Parameter:
    """A named trainable array with an always-allocated gradient buffer."""

    def __init__(self, data, name=""):
        self.data = np.asarray(data)
        self.grad = np.zeros_like(self.data)
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    def zero_grad(self):
        self.grad = np.zeros_like(self.data)

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.data.shape}, dtype={self.data.dtype})"


class Module:
    def __init__(self):
        self._params = OrderedDict()
        self._buffers = OrderedDict()
        self._children = OrderedDict()
        self.training = True

    def add_param(self, name, data):
        p = Parameter(data, name)
        self._params[name] = p
        return p

    def add_buffer(self, name, data):
        self._buffers[name] = np.asarray(data)

    def add_child(self, name, module):
        self._children[name] = module
        return module

    def named_parameters(self, prefix=""):
        for name, p in self._params.items():
            yield prefix + name, p
        for cname, child in self._children.items():
            yield from child.named_parameters(f"{prefix}{cname}.")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix=""):
        for name, b in self._buffers.items():
            yield prefix + name, b
        for cname, child in self._children.items():
            yield from child.named_buffers(f"{prefix}{cname}.")

    def state_dict(self):
        """Parameters and buffers keyed by dotted layer path."""
        state = OrderedDict((n, p.data) for n, p in self.named_parameters())
        state.update(self.named_buffers())
        return state

    def load_state_dict(self, state, strict=True):
        own = dict(self.named_parameters())
        seen = set()
        for name, value in state.items():
            if name in own:
                if own[name].data.shape != value.shape:
                    raise ValueError(f"shape mismatch for {name}: {own[name].data.shape} vs {value.shape}")
                own[name].data = np.array(value, dtype=own[name].data.dtype)
                seen.add(name)
                continue
            module, leaf = self._locate(name)
            if module is not None and leaf in module._buffers:
                module._buffers[leaf] = np.array(value, dtype=module._buffers[leaf].dtype)
                seen.add(name)
            elif strict:
                raise KeyError(f"unexpected entry in state: {name}")
        missing = set(self.state_dict()) - seen
        if strict and missing:
            raise KeyError(f"missing entries in state: {sorted(missing)}")

    def _locate(self, dotted):
        parts = dotted.split(".")
        module = self
        for p in parts[:-1]:
            module = module._children.get(p)
            if module is None:
                return None, None
        return module, parts[-1]

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()

    def train(self, mode=True):
        self.training = mode
        for child in self._children.values():
            child.train(mode)
        return self

    def eval(self):
        return self.train(False)

    def astype(self, dtype):
        for p in self.parameters():
            p.data = p.data.astype(dtype)
            p.grad = np.zeros_like(p.data)
        for child in [self] + list(self._iter_modules()):
            for k, v in child._buffers.items():
                child._buffers[k] = v.astype(dtype)
        return self

    def _iter_modules(self):
        for child in self._children.values():
            yield child
            yield from child._iter_modules()

    def num_parameters(self):
        return int(sum(p.data.size for p in self.parameters()))


def he_normal(rng, shape, fan_in, dtype=np.float32):
    return (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(dtype)


class Conv2d(Module):
    def __init__(self, rng, cin, cout, kernel=3, stride=1, padding=None, bias=True, dtype=np.float32):
        super().__init__()
        k = F._pair(kernel)
        self.stride = F._pair(stride)
        self.padding = F._pair(padding) if padding is not None else (k[0] // 2, k[1] // 2)
        self.weight = self.add_param("weight", he_normal(rng, (cout, cin) + k, cin * k[0] * k[1], dtype))
        self.bias = self.add_param("bias", np.zeros(cout, dtype)) if bias else None
        self._cache = None

    def forward(self, x):
        out, cache = F.conv2d(x, self.weight.data, None if self.bias is None else self.bias.data,
                              self.stride, self.padding)
        self._cache = cache if self.training else None
        return out

    def backward(self, dout):
        dx, dw, db = F.conv2d_backward(dout, self._cache)
        self.weight.grad += dw
        if self.bias is not None:
            self.bias.grad += db
        self._cache = None
        return dx


class BatchNorm2d(Module):
    def __init__(self, channels, momentum=0.9, eps=1e-5, dtype=np.float32):
        super().__init__()
        self.momentum = momentum
        self.eps = eps
        self.gamma = self.add_param("gamma", np.ones(channels, dtype))
        self.beta = self.add_param("beta", np.zeros(channels, dtype))
        self.add_buffer("running_mean", np.zeros(channels, dtype))
        self.add_buffer("running_var", np.ones(channels, dtype))
        self._cache = None

    def forward(self, x, mask=None):
        out, rm, rv, cache = F.batch_norm(
            x, self.gamma.data, self.beta.data,
            self._buffers["running_mean"], self._buffers["running_var"],
            train=self.training, momentum=self.momentum, eps=self.eps, mask=mask)
        if self.training:
            self._buffers["running_mean"] = rm.astype(self._buffers["running_mean"].dtype)
            self._buffers["running_var"] = rv.astype(self._buffers["running_var"].dtype)
            self._cache = cache
        return out

    def backward(self, dout):
        dx, dg, db = F.batch_norm_backward(dout, self._cache)
        self.gamma.grad += dg
        self.beta.grad += db
        self._cache = None
        return dx


class ConvBNReLU(Module):
    """conv -> batch norm -> relu, the ``conv_bn_relu`` unit."""

    def __init__(self, rng, cin, cout, kernel=3, stride=1, dtype=np.float32):
        super().__init__()
        self.conv = self.add_child("conv", Conv2d(rng, cin, cout, kernel, stride, bias=False, dtype=dtype))
        self.bn = self.add_child("bn", BatchNorm2d(cout, dtype=dtype))
        self._relu = None

    def forward(self, x, mask=None):
        y = self.bn.forward(self.conv.forward(x), mask=mask)
        out, self._relu = F.relu(y)
        return out

    def backward(self, dout):
        return self.conv.backward(self.bn.backward(F.relu_backward(dout, self._relu)))


class Linear(Module):
    def __init__(self, rng, fin, fout, dtype=np.float32):
        super().__init__()
        bound = 1.0 / np.sqrt(fin)
        self.weight = self.add_param("weight", rng.uniform(-bound, bound, (fout, fin)).astype(dtype))
        self.bias = self.add_param("bias", np.zeros(fout, dtype))
        self._cache = None

    def forward(self, x):
        out, cache = F.linear(x, self.weight.data, self.bias.data)
        self._cache = cache if self.training else None
        return out

    def backward(self, dout):
        dx, dw, db = F.linear_backward(dout, self._cache)
        self.weight.grad += dw
        self.bias.grad += db
        self._cache = None
        return dx


class BiLSTM(Module):
    """Bidirectional LSTM with directions summed."""

    KEYS = ("fw_w_ih", "fw_w_hh", "fw_b", "bw_w_ih", "bw_w_hh", "bw_b")

    def __init__(self, rng, cin, hidden=256, dtype=np.float32):
        super().__init__()
        self.hidden = hidden
        bound = 1.0 / np.sqrt(hidden)
        for d in ("fw", "bw"):
            self.add_param(f"{d}_w_ih", rng.uniform(-bound, bound, (4 * hidden, cin)).astype(dtype))
            self.add_param(f"{d}_w_hh", rng.uniform(-bound, bound, (4 * hidden, hidden)).astype(dtype))
            b = np.zeros(4 * hidden, dtype)
            b[hidden:2 * hidden] = 1.0
            self.add_param(f"{d}_b", b)
        self._cache = None

    def forward(self, seq, mask=None):
        out, cache = bilstm(seq, {k: self._params[k].data for k in self.KEYS}, mask)
        self._cache = cache if self.training else None
        return out

    def backward(self, dout):
        dx, grads = bilstm_backward(dout, self._cache)
        for k, g in grads.items():
            self._params[k].grad += g
        self._cache = None
        return dx


class Dropout(Module):
    def __init__(self, rate=0.2):
        super().__init__()
        self.rate = rate
        self.rng = None
        self._cache = None

    def forward(self, x):
        out, self._cache = F.dropout(x, self.rate, self.rng, self.training)
        return out

    def backward(self, dout):
        return F.dropout_backward(dout, self._cache)
