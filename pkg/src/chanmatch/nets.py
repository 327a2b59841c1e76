"""Small convolutional classifiers with hand-written forward and backward.

A net is a chain of 3x3 conv stages (conv -> bias -> ReLU, stride per stage)
followed by global average pooling and a linear head. Each stage's
pre-activation output is exposed as a tap: a (C, B*H*W) matrix that gradient
contributions can be injected into during the backward pass, which is how
the distillation loss reaches intermediate layers.

All math is float64 numpy; checkpoints are stored as little-endian float32
with a JSON sidecar describing shapes and architecture.
"""

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

_KSIZE = 3
_PAD = 1


class Conv2D:
    """3x3 same-padding convolution with bias, im2col based."""

    def __init__(self, in_channels: int, out_channels: int, stride: int, rng: np.random.Generator):
        scale = np.sqrt(2.0 / (in_channels * _KSIZE * _KSIZE))
        self.weight = rng.normal(0.0, scale, size=(out_channels, in_channels, _KSIZE, _KSIZE))
        self.bias = np.zeros(out_channels)
        self.stride = stride
        self.grad_weight = np.zeros_like(self.weight)
        self.grad_bias = np.zeros_like(self.bias)
        self._cols = None
        self._in_shape = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        b, c, h, w = x.shape
        s = self.stride
        h_out = (h + 2 * _PAD - _KSIZE) // s + 1
        w_out = (w + 2 * _PAD - _KSIZE) // s + 1
        xp = np.pad(x, ((0, 0), (0, 0), (_PAD, _PAD), (_PAD, _PAD)))
        cols = np.empty((b, c, _KSIZE, _KSIZE, h_out, w_out))
        for ki in range(_KSIZE):
            for kj in range(_KSIZE):
                cols[:, :, ki, kj] = xp[:, :, ki : ki + s * h_out : s, kj : kj + s * w_out : s]
        cols = cols.reshape(b, c * _KSIZE * _KSIZE, h_out * w_out)
        self._cols = cols
        self._in_shape = x.shape
        w_flat = self.weight.reshape(self.weight.shape[0], -1)
        out = np.matmul(w_flat, cols) + self.bias[:, None]
        return out.reshape(b, -1, h_out, w_out)

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        if self._cols is None:
            raise RuntimeError("backward called before forward")
        b, c_out, h_out, w_out = grad_out.shape
        _, c_in, h, w = self._in_shape
        s = self.stride
        g = grad_out.reshape(b, c_out, h_out * w_out)
        w_flat = self.weight.reshape(c_out, -1)
        self.grad_weight += np.einsum("bol,bfl->of", g, self._cols).reshape(self.weight.shape)
        self.grad_bias += g.sum(axis=(0, 2))
        grad_cols = np.matmul(w_flat.T, g).reshape(b, c_in, _KSIZE, _KSIZE, h_out, w_out)
        grad_xp = np.zeros((b, c_in, h + 2 * _PAD, w + 2 * _PAD))
        for ki in range(_KSIZE):
            for kj in range(_KSIZE):
                grad_xp[:, :, ki : ki + s * h_out : s, kj : kj + s * w_out : s] += grad_cols[:, :, ki, kj]
        return grad_xp[:, :, _PAD:-_PAD, _PAD:-_PAD]


class Linear:
    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator):
        scale = np.sqrt(1.0 / in_features)
        self.weight = rng.normal(0.0, scale, size=(out_features, in_features))
        self.bias = np.zeros(out_features)
        self.grad_weight = np.zeros_like(self.weight)
        self.grad_bias = np.zeros_like(self.bias)
        self._x = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._x = x
        return x @ self.weight.T + self.bias

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        if self._x is None:
            raise RuntimeError("backward called before forward")
        self.grad_weight += grad_out.T @ self._x
        self.grad_bias += grad_out.sum(axis=0)
        return grad_out @ self.weight


@dataclass(frozen=True)
class NetSpec:
    """Architecture description; teacher and student differ only in widths."""

    widths: tuple[int, ...]
    strides: tuple[int, ...] | None = None
    image_size: int = 16
    in_channels: int = 1
    n_classes: int = 8

    def resolved_strides(self) -> tuple[int, ...]:
        if self.strides is not None:
            if len(self.strides) != len(self.widths):
                raise ValueError("strides must match the number of stages")
            return tuple(self.strides)
        # Default: keep resolution in the first stage, halve it afterwards.
        return (1,) + (2,) * (len(self.widths) - 1)


class ToyNet:
    """Conv stages + GAP + linear head, with taps at each pre-activation."""

    def __init__(self, spec: NetSpec, seed: int | None = None, rng: np.random.Generator | None = None):
        if rng is None:
            rng = np.random.default_rng(seed)
        self.spec = spec
        strides = spec.resolved_strides()
        self.convs: list[Conv2D] = []
        c_in = spec.in_channels
        size = spec.image_size
        self.tap_spatial: list[tuple[int, int]] = []
        for width, stride in zip(spec.widths, strides):
            self.convs.append(Conv2D(c_in, width, stride, rng))
            size = (size + 2 * _PAD - _KSIZE) // stride + 1
            self.tap_spatial.append((size, size))
            c_in = width
        self.head = Linear(c_in, spec.n_classes, rng)
        self._pre_acts: list[np.ndarray] | None = None
        self._pooled_shape = None

    # taps are (C, B*H*W): channels first, batch folded into positions.

    @property
    def n_taps(self) -> int:
        return len(self.convs)

    def tap_widths(self) -> tuple[int, ...]:
        return self.spec.widths

    def forward(self, x: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
        """Run the net; returns (logits, taps) and caches for backward."""
        x = np.asarray(x, dtype=np.float64)
        expected = (self.spec.in_channels, self.spec.image_size, self.spec.image_size)
        if x.ndim != 4 or x.shape[1:] != expected:
            raise ValueError(f"input shape {x.shape} does not match (B, {expected})")
        pre_acts = []
        h = x
        for conv in self.convs:
            z = conv.forward(h)
            pre_acts.append(z)
            h = np.maximum(z, 0.0)
        b, c, hh, ww = h.shape
        pooled = h.mean(axis=(2, 3))
        self._pooled_shape = (hh, ww)
        logits = self.head.forward(pooled)
        self._pre_acts = pre_acts
        taps = [z.transpose(1, 0, 2, 3).reshape(z.shape[1], -1) for z in pre_acts]
        return logits, taps

    def backward(self, grad_logits: np.ndarray, grad_taps: list[np.ndarray] | None = None) -> None:
        """Accumulate parameter gradients from head and tap contributions.

        grad_taps, when given, holds one (C, B*H*W) array (or None) per stage,
        added to the pre-activation gradient at that stage.
        """
        if self._pre_acts is None:
            raise RuntimeError("backward called before forward")
        grad_pooled = self.head.backward(grad_logits)
        hh, ww = self._pooled_shape
        b = grad_logits.shape[0]
        grad_h = np.broadcast_to(
            grad_pooled[:, :, None, None] / (hh * ww), (b, grad_pooled.shape[1], hh, ww)
        ).copy()
        for p in range(len(self.convs) - 1, -1, -1):
            z = self._pre_acts[p]
            grad_z = grad_h * (z > 0)
            if grad_taps is not None and grad_taps[p] is not None:
                c = z.shape[1]
                grad_z = grad_z + grad_taps[p].reshape(c, b, z.shape[2], z.shape[3]).transpose(1, 0, 2, 3)
            grad_h = self.convs[p].backward(grad_z)

    # -- parameter plumbing ------------------------------------------------

    def _layers(self):
        return [*self.convs, self.head]

    def named_params(self) -> list[tuple[str, np.ndarray]]:
        out = []
        for i, conv in enumerate(self.convs):
            out += [(f"conv{i}.weight", conv.weight), (f"conv{i}.bias", conv.bias)]
        out += [("head.weight", self.head.weight), ("head.bias", self.head.bias)]
        return out

    def params(self) -> list[np.ndarray]:
        return [arr for _, arr in self.named_params()]

    def grads(self) -> list[np.ndarray]:
        out = []
        for layer in self._layers():
            out += [layer.grad_weight, layer.grad_bias]
        return out

    def zero_grads(self) -> None:
        for g in self.grads():
            g[...] = 0.0

    def parameter_count(self) -> int:
        return sum(p.size for p in self.params())

    def weights_hash(self) -> str:
        h = hashlib.sha256()
        for _, p in self.named_params():
            h.update(np.ascontiguousarray(p).tobytes())
        return h.hexdigest()

    def save(self, path) -> None:
        """Write weights as flat little-endian float32 plus a JSON sidecar."""
        path = Path(path)
        flat = np.concatenate([p.ravel() for p in self.params()]).astype("<f4")
        flat.tofile(path.with_suffix(".f32"))
        sidecar = {
            "dtype": "<f4",
            "spec": {
                "widths": list(self.spec.widths),
                "strides": list(self.spec.resolved_strides()),
                "image_size": self.spec.image_size,
                "in_channels": self.spec.in_channels,
                "n_classes": self.spec.n_classes,
            },
            "arrays": [{"name": name, "shape": list(p.shape)} for name, p in self.named_params()],
        }
        path.with_suffix(".json").write_text(json.dumps(sidecar, indent=2) + "\n")

    @classmethod
    def load(cls, path) -> "ToyNet":
        path = Path(path)
        sidecar = json.loads(path.with_suffix(".json").read_text())
        spec = NetSpec(
            widths=tuple(sidecar["spec"]["widths"]),
            strides=tuple(sidecar["spec"]["strides"]),
            image_size=sidecar["spec"]["image_size"],
            in_channels=sidecar["spec"]["in_channels"],
            n_classes=sidecar["spec"]["n_classes"],
        )
        net = cls(spec, seed=0)
        flat = np.fromfile(path.with_suffix(".f32"), dtype="<f4").astype(np.float64)
        offset = 0
        for (name, p), meta in zip(net.named_params(), sidecar["arrays"]):
            if meta["name"] != name or tuple(meta["shape"]) != p.shape:
                raise ValueError(f"sidecar entry {meta} does not match expected array {name} {p.shape}")
            n = p.size
            p[...] = flat[offset : offset + n].reshape(p.shape)
            offset += n
        if offset != flat.size:
            raise ValueError(f"checkpoint holds {flat.size} floats, expected {offset}")
        return net


class SGD:
    """Momentum SGD with L2 weight decay folded into the gradient."""

    def __init__(self, momentum: float = 0.9, weight_decay: float = 5e-4):
        self.momentum = momentum
        self.weight_decay = weight_decay
        self._velocity: list[np.ndarray] | None = None

    def step(self, net: ToyNet, lr: float) -> None:
        params = net.params()
        grads = net.grads()
        if self._velocity is None:
            self._velocity = [np.zeros_like(p) for p in params]
        for p, g, v in zip(params, grads, self._velocity):
            v *= self.momentum
            v += g + self.weight_decay * p
            p -= lr * v


def softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean cross-entropy over the batch and its gradient w.r.t. the logits."""
    b = logits.shape[0]
    z = logits - logits.max(axis=1, keepdims=True)
    log_probs = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    loss = float(-log_probs[np.arange(b), labels].mean())
    grad = np.exp(log_probs)
    grad[np.arange(b), labels] -= 1.0
    return loss, grad / b
