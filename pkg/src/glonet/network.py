"""Conditional generator n = G_w(z; wavelength, angle) with hand-written backprop.

Pipeline: dense -> reshape -> transposed convolutions -> 1x1 convolution ->
add z (identity shortcut) -> Gaussian filter -> tanh. All convolutions are
periodic along the device axis because a device is one grating period.
"""

from __future__ import annotations

import dataclasses
import json
from pathlib import Path

import numpy as np

CHECKPOINT_FORMAT = "glonet-generator/1"

WAVELENGTH_CENTER, WAVELENGTH_HALF_SPAN = 950.0, 350.0
ANGLE_CENTER, ANGLE_HALF_SPAN = 60.0, 20.0


class ConfigurationError(ValueError):
    pass


class StaleCacheError(RuntimeError):
    pass


class CheckpointError(ValueError):
    pass


@dataclasses.dataclass(frozen=True)
class Architecture:
    segments: int = 256
    fc_channels: int = 64
    fc_length: int = 64
    deconv_channels: tuple[int, ...] = (32, 16)
    kernel: int = 5
    stride: int = 2
    leak: float = 0.2
    filter_sigma: float = 2.0
    filter_truncate: float = 4.0
    activation_gain: float = 2.5  # slope of the output tanh at 0
    noise_input_scale: float = 0.1  # z is multiplied by this on its way into the dense layer (not the shortcut)

    def __post_init__(self):
        object.__setattr__(self, "deconv_channels", tuple(int(c) for c in self.deconv_channels))
        if self.segments < 2:
            raise ConfigurationError("segments must be >= 2")
        if self.fc_length * self.stride ** len(self.deconv_channels) != self.segments:
            raise ConfigurationError(
                f"fc_length * stride^{len(self.deconv_channels)} = "
                f"{self.fc_length * self.stride ** len(self.deconv_channels)} does not equal segments = {self.segments}"
            )
        if self.kernel < 1 or self.stride < 1 or self.fc_channels < 1 or min(self.deconv_channels, default=1) < 1:
            raise ConfigurationError("kernel, stride and channel counts must be positive")
        if not self.filter_sigma > 0:
            raise ConfigurationError("filter_sigma must be positive")
        if not self.noise_input_scale >= 0:
            raise ConfigurationError("noise_input_scale must be non-negative")
        if not self.activation_gain > 0:
            raise ConfigurationError("activation_gain must be positive")

    @property
    def input_size(self) -> int:
        return self.segments + 2

    def shapes(self) -> dict[str, tuple[int, ...]]:
        shapes = {
            "fc.weight": (self.input_size, self.fc_channels * self.fc_length),
            "fc.bias": (self.fc_channels * self.fc_length,),
        }
        c_in = self.fc_channels
        for i, c_out in enumerate(self.deconv_channels):
            shapes[f"dconv{i}.weight"] = (c_in, c_out, self.kernel)
            shapes[f"dconv{i}.bias"] = (c_out,)
            c_in = c_out
        shapes["out.weight"] = (c_in,)
        shapes["out.bias"] = (1,)
        return shapes

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["deconv_channels"] = list(self.deconv_channels)
        return d


def gaussian_kernel(sigma: float = 2.0, truncate: float = 4.0) -> np.ndarray:
    radius = int(np.ceil(truncate * sigma))
    x = np.arange(-radius, radius + 1)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def _wrap_index(length: int, radius: int) -> np.ndarray:
    return (np.arange(length)[:, None] + np.arange(-radius, radius + 1)[None, :]) % length


def gaussian_filter(x: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Periodic convolution along the last axis."""
    radius = kernel.size // 2
    return x[..., _wrap_index(x.shape[-1], radius)] @ kernel[::-1]


def gaussian_filter_backward(grad: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    radius = kernel.size // 2
    return grad[..., _wrap_index(grad.shape[-1], radius)] @ kernel


def normalize_condition(wavelength, angle) -> np.ndarray:
    wavelength = np.asarray(wavelength, dtype=float)
    angle = np.asarray(angle, dtype=float)
    return np.stack([(wavelength - WAVELENGTH_CENTER) / WAVELENGTH_HALF_SPAN, (angle - ANGLE_CENTER) / ANGLE_HALF_SPAN], axis=-1)


# -- layer primitives ---------------------------------------------------------


def leaky_relu(x, leak):
    return np.where(x > 0, x, leak * x)


def leaky_relu_backward(grad, pre, leak):
    return np.where(pre > 0, grad, leak * grad)


def dense_forward(x, weight, bias):
    return x @ weight + bias


def dense_backward(grad, x, weight):
    return grad @ weight.T, x.T @ grad, grad.sum(axis=0)


def _deconv_positions(length: int, kernel: int, stride: int) -> np.ndarray:
    """Output index of input j through kernel tap t, shape (kernel, length)."""
    pad = (kernel - 1) // 2
    out = length * stride
    return (stride * np.arange(length)[None, :] + np.arange(kernel)[:, None] - pad) % out


def deconv_forward(x, weight, bias, stride):
    """Periodic 1D transposed convolution: (B, Cin, L) -> (B, Cout, stride * L)."""
    batch, _, length = x.shape
    _, c_out, kernel = weight.shape
    pos = _deconv_positions(length, kernel, stride)
    y = np.zeros((batch, c_out, length * stride), dtype=x.dtype)
    for t in range(kernel):
        y[:, :, pos[t]] += np.einsum("bcj,co->boj", x, weight[:, :, t])
    return y + bias[None, :, None]


def deconv_backward(grad, x, weight, stride):
    _, _, length = x.shape
    kernel = weight.shape[2]
    pos = _deconv_positions(length, kernel, stride)
    dx = np.zeros_like(x)
    dw = np.zeros_like(weight)
    for t in range(kernel):
        g = grad[:, :, pos[t]]
        dx += np.einsum("boj,co->bcj", g, weight[:, :, t])
        dw[:, :, t] = np.einsum("bcj,boj->co", x, g)
    return dx, dw, grad.sum(axis=(0, 2))


def pointwise_forward(x, weight, bias):
    """1x1 convolution to a single channel: (B, C, L) -> (B, L)."""
    return np.einsum("bcl,c->bl", x, weight) + bias[0]


def pointwise_backward(grad, x, weight):
    return weight[None, :, None] * grad[:, None, :], np.einsum("bcl,bl->c", x, grad), np.array([grad.sum()])


# -- the generator --------------------------------------------------------------


@dataclasses.dataclass
class GeneratorParameters:
    """Trainable tensors plus the architecture and the seed they were created from.

    ``version`` increases on every in-place update so stale forward caches
    can be detected.
    """

    architecture: Architecture
    tensors: dict[str, np.ndarray]
    seed: int = 0
    version: int = 0

    def __post_init__(self):
        expected = self.architecture.shapes()
        if list(self.tensors) != list(expected):
            raise ConfigurationError(f"parameter names {list(self.tensors)} do not match {list(expected)}")
        for name, shape in expected.items():
            if self.tensors[name].shape != shape:
                raise ConfigurationError(f"{name} has shape {self.tensors[name].shape}, expected {shape}")
        self.kernel = gaussian_kernel(self.architecture.filter_sigma, self.architecture.filter_truncate)

    def copy(self) -> "GeneratorParameters":
        return GeneratorParameters(self.architecture, {k: v.copy() for k, v in self.tensors.items()}, self.seed, self.version)

    def zeros_like(self) -> dict[str, np.ndarray]:
        return {k: np.zeros_like(v) for k, v in self.tensors.items()}

    @property
    def dtype(self):
        return self.tensors["fc.weight"].dtype


def init_weights(seed: int, architecture: Architecture = Architecture(), dtype=np.float64) -> GeneratorParameters:
    """Xavier-uniform weights, zero biases."""
    rng = np.random.default_rng(seed)
    tensors = {}
    for name, shape in architecture.shapes().items():
        if name.endswith(".bias"):
            tensors[name] = np.zeros(shape, dtype=dtype)
            continue
        if len(shape) == 2:
            fan_in, fan_out = shape
        elif len(shape) == 3:
            fan_in, fan_out = shape[0] * shape[2], shape[1] * shape[2]
        else:
            fan_in, fan_out = shape[0], 1
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        tensors[name] = rng.uniform(-limit, limit, size=shape).astype(dtype)
    return GeneratorParameters(architecture, tensors, seed=seed)


@dataclasses.dataclass
class ForwardCache:
    version: int
    params_id: int
    inputs: np.ndarray
    pre: list
    post: list
    output: np.ndarray


def forward(params: GeneratorParameters, z, wavelength, angle):
    """Generate devices for a batch.

    ``z`` has shape (B, N) or (N,); ``wavelength`` and ``angle`` are scalars or
    length-B arrays. Returns (devices, cache) with devices shaped like ``z``.
    """
    arch = params.architecture
    t = params.tensors
    single = np.ndim(z) == 1
    z = np.atleast_2d(np.asarray(z, dtype=params.dtype))
    if z.shape[1] != arch.segments:
        raise ConfigurationError(f"noise vector has length {z.shape[1]}, expected {arch.segments}")
    batch = z.shape[0]
    cond = np.broadcast_to(normalize_condition(wavelength, angle), (batch, 2)).astype(params.dtype)
    x = np.concatenate([arch.noise_input_scale * z, cond], axis=1)

    pre, post = [], []
    a = dense_forward(x, t["fc.weight"], t["fc.bias"])
    h = leaky_relu(a, arch.leak)
    pre.append(a)
    post.append(h.reshape(batch, arch.fc_channels, arch.fc_length))
    for i in range(len(arch.deconv_channels)):
        a = deconv_forward(post[-1], t[f"dconv{i}.weight"], t[f"dconv{i}.bias"], arch.stride)
        pre.append(a)
        post.append(leaky_relu(a, arch.leak))
    shortcut = pointwise_forward(post[-1], t["out.weight"], t["out.bias"]) + z
    filtered = gaussian_filter(shortcut, params.kernel)
    pre.append(filtered)
    out = np.tanh(arch.activation_gain * filtered)
    cache = ForwardCache(params.version, id(params), x, pre, post, out)
    return (out[0] if single else out), cache


def backward(params: GeneratorParameters, cache: ForwardCache, grad_output) -> dict[str, np.ndarray]:
    """Reverse-mode gradients of sum(grad_output * devices) for every trainable tensor."""
    if cache.version != params.version or cache.params_id != id(params):
        raise StaleCacheError("forward cache does not belong to the current parameters")
    arch = params.architecture
    t = params.tensors
    grad = np.atleast_2d(np.asarray(grad_output, dtype=params.dtype))
    if grad.shape != cache.output.shape:
        raise ConfigurationError(f"gradient shape {grad.shape} does not match output {cache.output.shape}")
    grads = {}

    g = grad * arch.activation_gain * (1.0 - cache.output**2)
    g = gaussian_filter_backward(g, params.kernel)
    # The shortcut adds z, which is not trainable; g flows on unchanged.
    g, grads["out.weight"], grads["out.bias"] = pointwise_backward(g, cache.post[-1], t["out.weight"])
    for i in reversed(range(len(arch.deconv_channels))):
        g = leaky_relu_backward(g, cache.pre[i + 1], arch.leak)
        g, grads[f"dconv{i}.weight"], grads[f"dconv{i}.bias"] = deconv_backward(
            g, cache.post[i], t[f"dconv{i}.weight"], arch.stride
        )
    g = leaky_relu_backward(g.reshape(g.shape[0], -1), cache.pre[0], arch.leak)
    _, grads["fc.weight"], grads["fc.bias"] = dense_backward(g, cache.inputs, t["fc.weight"])
    return {name: grads[name] for name in t}


# -- checkpoints ----------------------------------------------------------------


def save_checkpoint(params: GeneratorParameters, path, extra: dict | None = None) -> Path:
    path = Path(path)
    meta = {
        "format": CHECKPOINT_FORMAT,
        "architecture": params.architecture.to_dict(),
        "seed": int(params.seed),
        "version": int(params.version),
        "dtype": str(params.dtype),
        "extra": extra or {},
    }
    with open(path, "wb") as fh:
        np.savez(fh, __meta__=np.array(json.dumps(meta, sort_keys=True)), **params.tensors)
    return path


def load_checkpoint(path, expected: Architecture | None = None) -> GeneratorParameters:
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"checkpoint not found: {path}")
    with np.load(path, allow_pickle=False) as data:
        try:
            meta = json.loads(str(data["__meta__"]))
        except KeyError as exc:
            raise CheckpointError(f"{path} is not a generator checkpoint") from exc
        if meta.get("format") != CHECKPOINT_FORMAT:
            raise CheckpointError(f"{path}: unsupported format {meta.get('format')!r}")
        arch = Architecture(**meta["architecture"])
        if expected is not None and arch != expected:
            raise CheckpointError(f"{path}: architecture {arch} does not match expected {expected}")
        names = list(arch.shapes())
        missing = [n for n in names if n not in data.files]
        if missing:
            raise CheckpointError(f"{path}: missing tensors {missing}")
        tensors = {n: data[n].copy() for n in names}
    try:
        return GeneratorParameters(arch, tensors, seed=meta["seed"], version=meta["version"])
    except ConfigurationError as exc:
        raise CheckpointError(f"{path}: {exc}") from exc


def checkpoint_meta(path) -> dict:
    """The JSON metadata stored alongside the tensors."""
    with np.load(Path(path), allow_pickle=False) as data:
        if "__meta__" not in data.files:
            raise CheckpointError(f"{path} is not a generator checkpoint")
        return json.loads(str(data["__meta__"]))
