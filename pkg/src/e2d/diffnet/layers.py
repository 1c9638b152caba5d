"""Conv-BN classifier chain with three batch-norm execution modes.

The model is a plain linear chain of layers ending in a linear head. Batch
norm is the interesting part: ``train`` normalizes with batch statistics
and updates the running buffers, ``eval`` normalizes with the frozen
running buffers, and ``capture`` normalizes like eval while returning the
batch mean/variance of each BN input as graph tensors so an alignment loss
can differentiate through them. Capture never touches the running buffers.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .tensor import Tensor

BN_EPS = 1e-5
BN_MOMENTUM = 0.1

MODES = ("train", "eval", "capture")


@dataclass(frozen=True)
class LayerSpec:
    """One link of the model chain; unused fields stay None."""

    kind: str  # conv | batchnorm | relu | maxpool | avgpool-global | linear
    in_channels: int | None = None
    out_channels: int | None = None
    kernel: int | None = None
    stride: int | None = None
    padding: int | None = None
    in_features: int | None = None
    out_features: int | None = None


@dataclass
class BNStats:
    """Frozen per-layer running statistics, ordered to match the chain."""

    means: list[np.ndarray] = field(default_factory=list)
    variances: list[np.ndarray] = field(default_factory=list)
    momentum: float = BN_MOMENTUM

    def __post_init__(self):
        for v in self.variances:
            if not (v > 0).all():
                raise ValueError("running variances must be strictly positive")
        if len(self.means) != len(self.variances):
            raise ValueError("mean/variance layer counts differ")

    def copy(self) -> "BNStats":
        return BNStats(
            [m.copy() for m in self.means],
            [v.copy() for v in self.variances],
            self.momentum,
        )


class _Conv:
    def __init__(self, spec: LayerSpec, rng: np.random.Generator):
        self.spec = spec
        fan_in = spec.in_channels * spec.kernel * spec.kernel
        w = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(spec.out_channels, fan_in))
        self.weight = Tensor(
            w.astype(np.float32).reshape(
                spec.out_channels, spec.in_channels, spec.kernel, spec.kernel
            ),
            requires_grad=True,
        )

    def forward(self, x: Tensor) -> Tensor:
        s = self.spec
        n, c, h, w = x.shape
        if c != s.in_channels:
            raise ValueError(f"conv expected {s.in_channels} channels, got {c}")
        oh = (h + 2 * s.padding - s.kernel) // s.stride + 1
        ow = (w + 2 * s.padding - s.kernel) // s.stride + 1
        cols = T.im2col(T.pad2d(x, s.padding), s.kernel, s.kernel, s.stride)
        wmat = T.transpose(T.reshape(self.weight, (s.out_channels, -1)), (1, 0))
        out = T.matmul(cols, wmat)  # (N*OH*OW, OC)
        return T.transpose(T.reshape(out, (n, oh, ow, s.out_channels)), (0, 3, 1, 2))

    def params(self):
        return [("weight", self.weight)]


class _BatchNorm:
    def __init__(self, spec: LayerSpec):
        c = spec.in_channels
        self.gamma = Tensor(np.ones(c, dtype=np.float32), requires_grad=True)
        self.beta = Tensor(np.zeros(c, dtype=np.float32), requires_grad=True)
        self.running_mean = np.zeros(c, dtype=np.float32)
        self.running_var = np.ones(c, dtype=np.float32)

    def forward(self, x: Tensor, mode: str):
        n, c, h, w = x.shape
        gamma = T.reshape(self.gamma, (1, c, 1, 1))
        beta = T.reshape(self.beta, (1, c, 1, 1))
        batch_stats = None
        if mode == "train":
            mu = x.mean(axis=(0, 2, 3), keepdims=True)
            var = ((x - mu) * (x - mu)).mean(axis=(0, 2, 3), keepdims=True)
            count = n * h * w
            # biased variance normalizes; the running buffer stores unbiased
            self.running_mean = (
                (1 - BN_MOMENTUM) * self.running_mean
                + BN_MOMENTUM * mu.data.reshape(-1)
            ).astype(np.float32)
            unbiased = var.data.reshape(-1) * (count / max(count - 1, 1))
            self.running_var = (
                (1 - BN_MOMENTUM) * self.running_var + BN_MOMENTUM * unbiased
            ).astype(np.float32)
            y = (x - mu) / T.sqrt(var + BN_EPS)
        else:
            rm = Tensor(self.running_mean.reshape(1, c, 1, 1))
            rv = Tensor(self.running_var.reshape(1, c, 1, 1))
            y = (x - rm) / T.sqrt(rv + BN_EPS)
            if mode == "capture":
                # biased batch mean/variance of the BN input, kept on the graph
                mu = x.mean(axis=(0, 2, 3))
                mu4 = T.reshape(mu, (1, c, 1, 1))
                var = ((x - mu4) * (x - mu4)).mean(axis=(0, 2, 3))
                batch_stats = (mu, var)
        return gamma * y + beta, batch_stats

    def params(self):
        return [("gamma", self.gamma), ("beta", self.beta)]


class _Linear:
    def __init__(self, spec: LayerSpec, rng: np.random.Generator):
        self.spec = spec
        w = rng.normal(0.0, np.sqrt(1.0 / spec.in_features),
                       size=(spec.in_features, spec.out_features))
        self.weight = Tensor(w.astype(np.float32), requires_grad=True)
        self.bias = Tensor(np.zeros(spec.out_features, dtype=np.float32),
                           requires_grad=True)

    def forward(self, x: Tensor) -> Tensor:
        return T.matmul(x, self.weight) + self.bias

    def params(self):
        return [("weight", self.weight), ("bias", self.bias)]


@dataclass
class ForwardResult:
    logits: Tensor
    bn_batch: list  # capture mode: [(mean, var) per BN layer], else []
    penultimate: Tensor  # post-global-pool, pre-classifier features
    last_conv: Tensor | None = None  # activation maps feeding the global pool


class Model:
    """Linear chain of layers; every conv is immediately followed by a BN."""

    def __init__(self, specs: list[LayerSpec], seed: int = 0):
        self.specs = list(specs)
        self._validate_chain()
        rng = np.random.default_rng(seed)
        self.layers = []
        for spec in self.specs:
            if spec.kind == "conv":
                self.layers.append(("conv", _Conv(spec, rng)))
            elif spec.kind == "batchnorm":
                self.layers.append(("batchnorm", _BatchNorm(spec)))
            elif spec.kind == "linear":
                self.layers.append(("linear", _Linear(spec, rng)))
            else:
                self.layers.append((spec.kind, None))
        self.num_classes = self.specs[-1].out_features
        self.in_channels = next(
            s.in_channels for s in self.specs if s.kind == "conv"
        )

    def _validate_chain(self):
        if not self.specs or self.specs[-1].kind != "linear":
            raise ValueError("model chain must end in a linear classifier")
        for i, spec in enumerate(self.specs):
            if spec.kind == "conv":
                nxt = self.specs[i + 1] if i + 1 < len(self.specs) else None
                if nxt is None or nxt.kind != "batchnorm":
                    raise ValueError("every conv must be followed by a batchnorm")

    def forward(self, x: Tensor, mode: str) -> ForwardResult:
        if mode not in MODES:
            raise ValueError(f"unknown mode {mode!r}")
        if x.ndim != 4:
            raise ValueError(f"expected NCHW batch, got shape {x.shape}")
        if x.shape[1] != self.in_channels:
            raise ValueError(
                f"batch has {x.shape[1]} channels, model expects {self.in_channels}"
            )
        bn_batch = []
        penultimate = None
        last_conv = None
        for kind, layer in self.layers:
            if kind == "conv":
                x = layer.forward(x)
            elif kind == "batchnorm":
                x, stats = layer.forward(x, mode)
                if stats is not None:
                    bn_batch.append(stats)
            elif kind == "relu":
                x = T.relu(x)
                last_conv = x
            elif kind == "maxpool":
                x = T.maxpool2(x)
            elif kind == "avgpool-global":
                x = x.mean(axis=(2, 3))
                penultimate = x
            elif kind == "linear":
                x = layer.forward(x)
        return ForwardResult(x, bn_batch, penultimate, last_conv)

    # -- parameter plumbing --------------------------------------------------

    def parameters(self) -> list[tuple[str, Tensor]]:
        out = []
        counts: dict[str, int] = {}
        for kind, layer in self.layers:
            if layer is None:
                continue
            idx = counts.get(kind, 0)
            counts[kind] = idx + 1
            for pname, p in layer.params():
                out.append((f"{kind}{idx}.{pname}", p))
        return out

    def bn_layers(self) -> list[_BatchNorm]:
        return [layer for kind, layer in self.layers if kind == "batchnorm"]

    def bn_stats(self) -> BNStats:
        bns = self.bn_layers()
        return BNStats(
            [bn.running_mean.copy() for bn in bns],
            [bn.running_var.copy() for bn in bns],
        )

    def load_bn_stats(self, stats: BNStats) -> None:
        bns = self.bn_layers()
        if len(bns) != len(stats.means):
            raise ValueError("BN stats layer count does not match model chain")
        for bn, m, v in zip(bns, stats.means, stats.variances):
            bn.running_mean = m.astype(np.float32).copy()
            bn.running_var = v.astype(np.float32).copy()

    def state_dict(self) -> dict[str, np.ndarray]:
        state = {name: p.data.copy() for name, p in self.parameters()}
        for i, bn in enumerate(self.bn_layers()):
            state[f"batchnorm{i}.running_mean"] = bn.running_mean.copy()
            state[f"batchnorm{i}.running_var"] = bn.running_var.copy()
        return state

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        for name, p in self.parameters():
            if name not in state:
                raise KeyError(f"checkpoint missing parameter {name}")
            if state[name].shape != p.data.shape:
                raise ValueError(
                    f"{name}: checkpoint shape {state[name].shape} != {p.data.shape}"
                )
            p.data = state[name].astype(np.float32).copy()
        for i, bn in enumerate(self.bn_layers()):
            bn.running_mean = state[f"batchnorm{i}.running_mean"].astype(np.float32).copy()
            bn.running_var = state[f"batchnorm{i}.running_var"].astype(np.float32).copy()

    def set_requires_grad(self, flag: bool) -> None:
        for _, p in self.parameters():
            p.requires_grad = flag
            p.grad = None

    def zero_grad(self) -> None:
        for _, p in self.parameters():
            p.grad = None

    def clone(self) -> "Model":
        other = Model(self.specs, seed=0)
        other.load_state_dict(self.state_dict())
        return other


def forward(model: Model, bn_mode: str, batch: Tensor) -> ForwardResult:
    """Run the chain in the given BN mode; see module docstring for modes."""
    return model.forward(batch, bn_mode)


def convnet3(in_channels: int, num_classes: int, width: int = 16) -> list[LayerSpec]:
    """3-block conv/BN/ReLU net: pools after blocks 1-2, global pool head.

    Input spatial dims must be divisible by 4 (two stride-2 pools).
    """
    def block(cin, cout, pooled):
        specs = [
            LayerSpec("conv", in_channels=cin, out_channels=cout, kernel=3,
                      stride=1, padding=1),
            LayerSpec("batchnorm", in_channels=cout),
            LayerSpec("relu"),
        ]
        if pooled:
            specs.append(LayerSpec("maxpool"))
        return specs

    specs = (
        block(in_channels, width, True)
        + block(width, 2 * width, True)
        + block(2 * width, 4 * width, False)
        + [
            LayerSpec("avgpool-global"),
            LayerSpec("linear", in_features=4 * width, out_features=num_classes),
        ]
    )
    return specs
