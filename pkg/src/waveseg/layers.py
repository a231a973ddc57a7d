"""Minimal layer/module system on top of the autodiff engine.

Modules register Parameters, numpy buffers (batch-norm running stats) and
child modules through attribute assignment; state_dict names follow the
attribute path, which is what the checkpoint container stores. Weight
initialization draws from an explicit numpy Generator so construction
order fully determines the weights.
"""

import numpy as np

from . import autodiff as ad
from .autodiff import BNStats, Parameter
from .errors import DimensionError


def kaiming_uniform(rng: np.random.Generator, shape, fan_in: int, dtype=np.float32):
    """Fan-in scaled uniform init for ReLU networks: U(-b, b), b = sqrt(6/fan_in)."""
    bound = float(np.sqrt(6.0 / fan_in))
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Module:
    def __init__(self):
        object.__setattr__(self, "_params", {})
        object.__setattr__(self, "_buffers", {})
        object.__setattr__(self, "_modules", {})
        object.__setattr__(self, "training", True)

    def __setattr__(self, name, value):
        if isinstance(value, Parameter):
            self._params[name] = value
        elif isinstance(value, Module):
            self._modules[name] = value
        object.__setattr__(self, name, value)

    def register_buffer(self, name, array):
        self._buffers[name] = array
        object.__setattr__(self, name, array)

    # -- traversal --------------------------------------------------------
    def named_parameters(self, prefix=""):
        for name, p in self._params.items():
            yield prefix + name, p
        for name, m in self._modules.items():
            yield from m.named_parameters(prefix + name + ".")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix=""):
        for name, b in self._buffers.items():
            if isinstance(b, BNStats):
                yield prefix + name + ".mean", b.mean
                yield prefix + name + ".var", b.var
            else:
                yield prefix + name, b
        for name, m in self._modules.items():
            yield from m.named_buffers(prefix + name + ".")

    def state_dict(self):
        state = {name: p.data for name, p in self.named_parameters()}
        state.update({name: b for name, b in self.named_buffers()})
        return state

    def load_state_dict(self, state, strict=True):
        own_params = dict(self.named_parameters())
        own_buffers = dict(self.named_buffers())
        own = set(own_params) | set(own_buffers)
        missing = own - set(state)
        unexpected = set(state) - own
        if strict and (missing or unexpected):
            raise KeyError(
                f"state mismatch: missing {sorted(missing)}, unexpected {sorted(unexpected)}")
        for name, value in state.items():
            if name in own_params:
                target = own_params[name]
                if target.data.shape != value.shape:
                    raise DimensionError(
                        f"parameter {name}: shape {value.shape} != {target.data.shape}")
                target.data = value.astype(target.data.dtype, copy=True)
            elif name in own_buffers:
                buf = own_buffers[name]
                buf[...] = value
        return self

    def num_parameters(self):
        return sum(p.data.size for p in self.parameters())

    # -- mode -------------------------------------------------------------
    def train(self, flag=True):
        object.__setattr__(self, "training", flag)
        for m in self._modules.values():
            m.train(flag)
        return self

    def eval(self):
        return self.train(False)

    def to_dtype(self, dtype):
        """Cast parameters and buffers in place (float64 for grad checks)."""
        for _, p in self.named_parameters():
            p.data = p.data.astype(dtype)
        for mod in self._iter_modules():
            for b in mod._buffers.values():
                if isinstance(b, BNStats):
                    b.mean = b.mean.astype(dtype)
                    b.var = b.var.astype(dtype)
        return self

    def _iter_modules(self):
        yield self
        for m in self._modules.values():
            yield from m._iter_modules()

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


class ModuleList(Module):
    def __init__(self, mods=()):
        super().__init__()
        self._list = []
        for m in mods:
            self.append(m)

    def append(self, m):
        setattr(self, str(len(self._list)), m)
        self._list.append(m)

    def __iter__(self):
        return iter(self._list)

    def __len__(self):
        return len(self._list)

    def __getitem__(self, i):
        return self._list[i]


class Conv3d(Module):
    def __init__(self, cin, cout, kernel, rng, stride=1, padding=0, groups=1, bias=True):
        super().__init__()
        if cin % groups or cout % groups:
            raise DimensionError(
                f"Conv3d channels must divide groups={groups}, got cin={cin}, cout={cout}")
        k = (kernel,) * 3 if isinstance(kernel, int) else tuple(kernel)
        fan_in = (cin // groups) * k[0] * k[1] * k[2]
        self.weight = Parameter(kaiming_uniform(rng, (cout, cin // groups) + k, fan_in))
        self.bias = Parameter(np.zeros(cout, dtype=np.float32)) if bias else None
        self.stride, self.padding, self.groups = stride, padding, groups

    def forward(self, x):
        return ad.conv3d(x, self.weight, self.bias, self.stride, self.padding, self.groups)


class BatchNorm3d(Module):
    def __init__(self, channels, momentum=0.1, eps=1e-5):
        super().__init__()
        self.gamma = Parameter(np.ones(channels, dtype=np.float32))
        self.beta = Parameter(np.zeros(channels, dtype=np.float32))
        self.register_buffer("stats", BNStats(channels))
        self.momentum, self.eps = momentum, eps

    def forward(self, x):
        return ad.batch_norm(x, self.gamma, self.beta, self.stats,
                             self.training, self.momentum, self.eps)


class ConvBNReLU(Module):
    """conv -> batch norm -> ReLU, the standard encoder/decoder unit."""

    def __init__(self, cin, cout, kernel, rng, padding=0, groups=1):
        super().__init__()
        self.conv = Conv3d(cin, cout, kernel, rng, padding=padding, groups=groups)
        self.bn = BatchNorm3d(cout)

    def forward(self, x):
        return ad.relu(self.bn(self.conv(x)))


class DoubleConv(Module):
    """Two 3x3x3 conv-BN-ReLU units; the plain (non-residual) encoder stage."""

    def __init__(self, cin, cout, rng):
        super().__init__()
        self.block1 = ConvBNReLU(cin, cout, 3, rng, padding=1)
        self.block2 = ConvBNReLU(cout, cout, 3, rng, padding=1)

    def forward(self, x):
        return self.block2(self.block1(x))
