"""Convolutional IQ classifiers and checkpoint persistence.

Both architectures take a float32 [batch, 2, n_samples] array (I row, Q row)
and emit one logit per class. They are built from the autodiff primitives,
so a single tape-backed forward gives exact gradients with respect to both
parameters and the input signal.

Checkpoint layout (little-endian, documented in docs/checkpoint_format.md):

    bytes 0..3    magic "MRCK"
    4..5          u16 format version (1)
    6..7          u16 float width of the parameter block (32)
    8..11         u32 parameter tensor count
    12..15        u32 architecture JSON byte length
    16..23        u64 total float count
    24..31        reserved zeros
    ...           architecture JSON (UTF-8)
    ...           parameter block: each tensor raveled C-order, concatenated
    last 8 bytes  first 8 bytes of sha256(arch JSON || parameter block)
"""

from __future__ import annotations

import hashlib
import json
import struct

import numpy as np

from .autodiff import Tape, Tensor, ops
from .errors import CheckpointError, ConfigError, ShapeError

_CKPT_MAGIC = b"MRCK"
_CKPT_VERSION = 1
_CKPT_HEADER = struct.Struct("<4sHHIIQ8x")
assert _CKPT_HEADER.size == 32


def _he_uniform(rng: np.random.Generator, shape, fan_in: int, dtype):
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Model:
    """Base classifier: named parameter tensors plus a descriptor dict."""

    kind = "base"

    def __init__(self, descriptor: dict, seed: int, dtype=np.float32):
        self.descriptor = dict(descriptor)
        self.seed = int(seed)
        self.dtype = np.dtype(dtype)
        self.params: list[Tensor] = []
        self.param_names: list[str] = []

    def _param(self, name: str, data: np.ndarray) -> Tensor:
        t = Tensor(data, requires_grad=True)
        self.params.append(t)
        self.param_names.append(name)
        return t

    @property
    def n_classes(self) -> int:
        return self.descriptor["n_classes"]

    @property
    def input_len(self) -> int:
        return self.descriptor["input_len"]

    def param_count(self) -> int:
        return sum(p.data.size for p in self.params)

    def get_param_data(self) -> list[np.ndarray]:
        return [p.data.copy() for p in self.params]

    def set_param_data(self, arrays) -> None:
        if len(arrays) != len(self.params):
            raise ShapeError("parameter list length mismatch")
        for p, a in zip(self.params, arrays):
            if p.data.shape != a.shape:
                raise ShapeError(f"shape {a.shape} does not fit {p.data.shape}")
            p.data = np.asarray(a, dtype=self.dtype)

    def forward(self, x, train: bool = False, step: int = 0) -> Tensor:
        raise NotImplementedError

    def _wrap(self, x) -> Tensor:
        t = x if isinstance(x, Tensor) else Tensor(x)
        if t.data.ndim != 3 or t.data.shape[1] != 2:
            raise ShapeError(f"expected [batch, 2, n] input, got {t.data.shape}")
        if t.data.shape[2] != self.input_len:
            raise ShapeError(
                f"model expects {self.input_len} samples, got {t.data.shape[2]}"
            )
        return t

    def _dropout_rng(self, step: int, layer: int) -> np.random.Generator:
        return np.random.default_rng([self.seed, step, layer])

    def predict(self, x) -> np.ndarray:
        """Softmax class probabilities, eval mode, no tape."""
        logits = self.forward(x, train=False).data
        z = logits - logits.max(axis=1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=1, keepdims=True)

    def classify(self, x) -> np.ndarray:
        """Predicted labels; ties resolve to the lowest class index."""
        return np.argmax(self.forward(x, train=False).data, axis=1)

    def loss_and_input_grad(self, x_data: np.ndarray, labels,
                            reduction: str = "sum",
                            train: bool = False, step: int = 0):
        """One tape pass; returns (loss value, d loss/d x, logits).

        Gradients land only on the input tensor, parameter ``.grad`` fields
        stay untouched.
        """
        x = Tensor(np.asarray(x_data), requires_grad=True)
        with Tape() as tape:
            logits = self.forward(x, train=train, step=step)
            loss = ops.softmax_cross_entropy(logits, labels, reduction=reduction)
        tape.backward(loss, targets=[x])
        return float(loss.data), x.grad, logits.data

    def save(self, path) -> None:
        arch = json.dumps(self.descriptor, sort_keys=True,
                          separators=(",", ":")).encode()
        block = b"".join(np.ascontiguousarray(p.data, dtype="<f4").tobytes()
                         for p in self.params)
        total = sum(p.data.size for p in self.params)
        digest = hashlib.sha256(arch + block).digest()[:8]
        header = _CKPT_HEADER.pack(_CKPT_MAGIC, _CKPT_VERSION, 32,
                                   len(self.params), len(arch), total)
        with open(path, "wb") as fh:
            fh.write(header)
            fh.write(arch)
            fh.write(block)
            fh.write(digest)


class VtCnn(Model):
    """Two convolution blocks, two dense layers, dropout 0.5 between all.

    ``width_scale`` multiplies the reference widths (256, 80, 256); the
    desk-scale default of 1/8 gives 32/10/32.
    """

    kind = "vt-cnn"

    def __init__(self, n_classes: int, input_len: int,
                 width_scale: float = 1.0, seed: int = 0,
                 dtype=np.float32, dropout_p: float = 0.5):
        if input_len < 3:
            raise ConfigError("input_len must be at least 3")
        desc = {"kind": self.kind, "n_classes": int(n_classes),
                "input_len": int(input_len),
                "width_scale": float(width_scale),
                "dropout_p": float(dropout_p)}
        super().__init__(desc, seed, dtype)
        c1 = max(1, round(256 * width_scale))
        c2 = max(1, round(80 * width_scale))
        d1 = max(1, round(256 * width_scale))
        self.c1, self.c2, self.d1 = c1, c2, d1
        self.dropout_p = dropout_p
        flat = c2 * (input_len - 2)
        rng = np.random.default_rng([seed])
        dt = self.dtype
        self.w1 = self._param("conv1.w", _he_uniform(rng, (c1, 1, 1, 3), 3, dt))
        self.b1 = self._param("conv1.b", np.zeros(c1, dt))
        self.w2 = self._param("conv2.w",
                              _he_uniform(rng, (c2, c1, 2, 3), c1 * 6, dt))
        self.b2 = self._param("conv2.b", np.zeros(c2, dt))
        self.w3 = self._param("fc1.w", _he_uniform(rng, (flat, d1), flat, dt))
        self.b3 = self._param("fc1.b", np.zeros(d1, dt))
        self.w4 = self._param("fc2.w", _he_uniform(rng, (d1, n_classes), d1, dt))
        self.b4 = self._param("fc2.b", np.zeros(n_classes, dt))

    def forward(self, x, train: bool = False, step: int = 0) -> Tensor:
        t = self._wrap(x)
        n = t.data.shape[0]
        h = ops.reshape(t, (n, 1, 2, self.input_len))
        h = ops.relu(ops.conv2d(h, self.w1, self.b1, padding=("valid", "same")))
        if train:
            h = ops.dropout(h, self.dropout_p, self._dropout_rng(step, 0))
        h = ops.relu(ops.conv2d(h, self.w2, self.b2, padding="valid"))
        if train:
            h = ops.dropout(h, self.dropout_p, self._dropout_rng(step, 1))
        h = ops.flatten(h)
        h = ops.relu(ops.dense(h, self.w3, self.b3))
        if train:
            h = ops.dropout(h, self.dropout_p, self._dropout_rng(step, 2))
        return ops.dense(h, self.w4, self.b4)


class IqResNet(Model):
    """Stem conv collapsing the IQ axis, residual stacks, dense head.

    Each stack is one residual unit followed by a stride-2 downsample conv,
    so ``input_len`` must be divisible by 2**n_stacks. A residual unit is
    x + relu(conv_b(relu(conv_a(x)))): with all-zero conv weights it is an
    exact identity.
    """

    kind = "resnet"

    def __init__(self, n_classes: int, input_len: int, n_stacks: int = 3,
                 filters: int = 32, seed: int = 0, dtype=np.float32):
        if n_stacks < 1:
            raise ConfigError("n_stacks must be at least 1")
        if input_len % (2 ** n_stacks) != 0:
            raise ConfigError(
                f"input_len {input_len} not divisible by 2**{n_stacks}"
            )
        desc = {"kind": self.kind, "n_classes": int(n_classes),
                "input_len": int(input_len), "n_stacks": int(n_stacks),
                "filters": int(filters)}
        super().__init__(desc, seed, dtype)
        self.n_stacks = n_stacks
        self.filters = filters
        rng = np.random.default_rng([seed])
        dt = self.dtype
        f = filters
        self.stem_w = self._param("stem.w", _he_uniform(rng, (f, 1, 2, 3), 6, dt))
        self.stem_b = self._param("stem.b", np.zeros(f, dt))
        self.stacks = []
        for s in range(n_stacks):
            unit = {}
            for part in ("a", "b", "down"):
                unit[part + "_w"] = self._param(
                    f"stack{s}.{part}.w",
                    _he_uniform(rng, (f, f, 1, 3), f * 3, dt))
                unit[part + "_b"] = self._param(f"stack{s}.{part}.b",
                                                np.zeros(f, dt))
            self.stacks.append(unit)
        flat = f * (input_len // (2 ** n_stacks))
        self.fc1_w = self._param("fc1.w", _he_uniform(rng, (flat, 128), flat, dt))
        self.fc1_b = self._param("fc1.b", np.zeros(128, dt))
        self.fc2_w = self._param("fc2.w", _he_uniform(rng, (128, n_classes), 128, dt))
        self.fc2_b = self._param("fc2.b", np.zeros(n_classes, dt))

    def forward(self, x, train: bool = False, step: int = 0) -> Tensor:
        t = self._wrap(x)
        n = t.data.shape[0]
        h = ops.reshape(t, (n, 1, 2, self.input_len))
        h = ops.relu(ops.conv2d(h, self.stem_w, self.stem_b,
                                padding=("valid", "same")))
        for unit in self.stacks:
            a = ops.relu(ops.conv2d(h, unit["a_w"], unit["a_b"], padding="same"))
            b = ops.relu(ops.conv2d(a, unit["b_w"], unit["b_b"], padding="same"))
            h = ops.add(h, b)
            h = ops.relu(ops.conv2d(h, unit["down_w"], unit["down_b"],
                                    stride=(1, 2), padding="same"))
        h = ops.flatten(h)
        h = ops.relu(ops.dense(h, self.fc1_w, self.fc1_b))
        return ops.dense(h, self.fc2_w, self.fc2_b)


def build_vt_cnn(n_classes: int, input_len: int, width_scale: float = 1.0,
                 seed: int = 0, dtype=np.float32,
                 dropout_p: float = 0.5) -> VtCnn:
    return VtCnn(n_classes, input_len, width_scale, seed, dtype, dropout_p)


def build_resnet(n_classes: int, input_len: int, n_stacks: int = 3,
                 filters: int = 32, seed: int = 0, dtype=np.float32) -> IqResNet:
    return IqResNet(n_classes, input_len, n_stacks, filters, seed, dtype)


def build_from_descriptor(desc: dict, seed: int = 0, dtype=np.float32) -> Model:
    kind = desc.get("kind")
    if kind == "vt-cnn":
        return VtCnn(desc["n_classes"], desc["input_len"],
                     desc.get("width_scale", 1.0), seed, dtype,
                     desc.get("dropout_p", 0.5))
    if kind == "resnet":
        return IqResNet(desc["n_classes"], desc["input_len"],
                        desc.get("n_stacks", 3), desc.get("filters", 32),
                        seed, dtype)
    raise CheckpointError(f"unknown architecture kind {kind!r}")


def load(path) -> Model:
    """Load a checkpoint; verifies header, shapes, and content digest."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _CKPT_HEADER.size + 8:
        raise CheckpointError("file too short for a checkpoint")
    magic, version, width, n_tensors, arch_len, total = \
        _CKPT_HEADER.unpack_from(raw)
    if magic != _CKPT_MAGIC:
        raise CheckpointError(f"bad magic {magic!r}")
    if version > _CKPT_VERSION:
        raise CheckpointError(f"checkpoint version {version} not supported")
    if width != 32:
        raise CheckpointError(f"unsupported parameter float width {width}")
    arch_start = _CKPT_HEADER.size
    block_start = arch_start + arch_len
    block_end = block_start + total * 4
    if len(raw) != block_end + 8:
        raise CheckpointError(
            f"size mismatch: expected {block_end + 8} bytes, got {len(raw)}"
        )
    arch = raw[arch_start:block_start]
    block = raw[block_start:block_end]
    digest = hashlib.sha256(arch + block).digest()[:8]
    if digest != raw[block_end:]:
        raise CheckpointError("content digest mismatch; file corrupted")
    try:
        desc = json.loads(arch.decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"architecture record unreadable: {exc}")
    model = build_from_descriptor(desc)
    if len(model.params) != n_tensors or model.param_count() != total:
        raise CheckpointError(
            "parameter layout disagrees with the architecture descriptor"
        )
    flat = np.frombuffer(block, dtype="<f4")
    pos = 0
    arrays = []
    for p in model.params:
        k = p.data.size
        arrays.append(flat[pos:pos + k].reshape(p.data.shape).copy())
        pos += k
    model.set_param_data(arrays)
    return model
