"""Declarative layer graphs and a functional evaluator for the generator and
the two discriminator kinds.

Parameters live in plain ``dict[str, Tensor]`` maps so the Siamese branches
share storage by construction and training code can partition them by name.
Forward passes never mutate their inputs; in training mode the refreshed
batch-norm running statistics are returned alongside the output.
"""

from __future__ import annotations

import functools
import math
from dataclasses import asdict, dataclass
from typing import NamedTuple

import torch
import torch.nn.functional as F

ParameterSet = dict  # name -> torch.Tensor

KINDS = (
    "conv",
    "deconv",
    "batch_norm",
    "relu",
    "sigmoid",
    "residual_block",
    "upsampler",
    "fully_connected",
    "average_pool",
    "softmax",
)
_WITH_CHANNELS = {"conv", "deconv", "batch_norm", "residual_block", "upsampler", "fully_connected"}

BN_EPS = 1e-5
BN_MOMENTUM = 0.1
FEATURE_DIM = 128
LEAK = 0.2


class ShapeError(ValueError):
    pass


class NonFiniteError(FloatingPointError):
    def __init__(self, where: str):
        super().__init__(f"non-finite values produced by {where}")
        self.where = where


@dataclass(frozen=True)
class LayerDescriptor:
    kind: str
    name: str = ""
    in_channels: int = 0
    out_channels: int = 0
    kernel: int = 1
    stride: int = 1
    slope: float = 0.0  # negative slope for relu layers

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ShapeError(f"unknown layer kind {self.kind!r}")
        if self.kernel < 1 or self.kernel % 2 == 0:
            raise ShapeError(f"{self.name}: kernel size must be odd, got {self.kernel}")
        if self.stride < 1:
            raise ShapeError(f"{self.name}: stride must be >= 1")
        if self.kind in _WITH_CHANNELS and (self.in_channels < 1 or self.out_channels < 1):
            raise ShapeError(f"{self.name}: channel counts must be >= 1")


@dataclass(frozen=True)
class ModelSpec:
    role: str  # generator | realfake | multiclass
    layers: tuple
    input_size: int
    input_channels: int
    output_size: int
    output_channels: int
    perceptual_tap: int | None = None
    head: LayerDescriptor | None = None
    num_classes: int | None = None
    variant: str = ""

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        c, n = self.trace()[-1]
        if (c, n) != (self.output_channels, self.output_size):
            raise ShapeError(
                f"layer graph yields {n}x{n}x{c}, declared {self.output_size}x{self.output_size}x{self.output_channels}"
            )

    def trace(self) -> list[tuple[int, int]]:
        """(channels, spatial size) after each layer, starting with the input."""
        c, n = self.input_channels, self.input_size
        shapes = [(c, n)]
        for layer in self.layers:
            if layer.kind in _WITH_CHANNELS and layer.kind != "fully_connected" and layer.in_channels != c:
                raise ShapeError(f"{layer.name}: expects {layer.in_channels} channels, receives {c}")
            if layer.kind == "conv":
                n = (n - 1) // layer.stride + 1
                c = layer.out_channels
            elif layer.kind in ("deconv", "residual_block", "batch_norm"):
                c = layer.out_channels
            elif layer.kind == "upsampler":
                n, c = 2 * n, layer.out_channels
            elif layer.kind == "average_pool":
                n = 1
            elif layer.kind == "fully_connected":
                c, n = layer.out_channels, 1
            shapes.append((c, n))
        return shapes

    def tap_shape(self) -> tuple[int, int]:
        return self.trace()[self.perceptual_tap + 1]

    def param_shapes(self) -> dict[str, tuple[int, ...]]:
        shapes: dict[str, tuple[int, ...]] = {}
        for layer in self.layers:
            shapes.update(_layer_shapes(layer))
        if self.head is not None:
            shapes.update(_layer_shapes(self.head))
        return shapes

    def param_names(self) -> list[str]:
        return list(self.param_shapes())

    def learnable_names(self) -> list[str]:
        return [n for n in self.param_shapes() if not is_buffer(n)]

    def prefix_names(self) -> list[str]:
        """Learnable names feeding the perceptual features (layers up to the tap, plus head)."""
        names: list[str] = []
        for layer in self.layers[: self.perceptual_tap + 1]:
            names.extend(n for n in _layer_shapes(layer) if not is_buffer(n))
        names.extend(n for n in _layer_shapes(self.head) if not is_buffer(n))
        return names

    def to_dict(self) -> dict:
        d = asdict(self)
        d["layers"] = [asdict(layer) for layer in self.layers]
        d["head"] = asdict(self.head) if self.head is not None else None
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        d = dict(d)
        d["layers"] = tuple(LayerDescriptor(**layer) for layer in d["layers"])
        d["head"] = LayerDescriptor(**d["head"]) if d.get("head") else None
        return cls(**d)


def is_buffer(name: str) -> bool:
    return name.endswith(".running_mean") or name.endswith(".running_var")


def _bn_shapes(prefix: str, c: int) -> dict:
    return {f"{prefix}.{k}": (c,) for k in ("weight", "bias", "running_mean", "running_var")}


def _layer_shapes(layer: LayerDescriptor) -> dict:
    k, ci, co, p = layer.kernel, layer.in_channels, layer.out_channels, layer.name
    if layer.kind == "conv":
        return {f"{p}.weight": (co, ci, k, k), f"{p}.bias": (co,)}
    if layer.kind == "deconv":
        return {f"{p}.weight": (ci, co, k, k), f"{p}.bias": (co,)}
    if layer.kind == "batch_norm":
        return _bn_shapes(p, co)
    if layer.kind == "residual_block":
        out = {f"{p}.conv1.weight": (co, co, k, k), f"{p}.conv1.bias": (co,)}
        out.update(_bn_shapes(f"{p}.bn1", co))
        out.update({f"{p}.conv2.weight": (co, co, k, k), f"{p}.conv2.bias": (co,)})
        out.update(_bn_shapes(f"{p}.bn2", co))
        return out
    if layer.kind == "upsampler":
        out = _bn_shapes(f"{p}.bn", ci)
        out.update({f"{p}.deconv.weight": (ci, co, k, k), f"{p}.deconv.bias": (co,)})
        return out
    if layer.kind == "fully_connected":
        return {f"{p}.weight": (co, ci), f"{p}.bias": (co,)}
    return {}


# --------------------------------------------------------------------------
# builders


def build_generator(
    variant: str,
    N: int,
    C: int | None = None,
    *,
    channels: int = 64,
    tail_channels: int = 32,
    res_before: int = 2,
    res_between: int = 1,
    feature_dim: int = FEATURE_DIM,
) -> ModelSpec:
    """Residual blocks, two 2x upsamplers, three 3x3 convs, a 1x1 projection
    and a sigmoid. The perceptual head reads the last residual block before
    the first upsampler. ``giegan`` adds the identity plane as a 4th channel
    on input and output; ``diegan`` shares the ``sigan`` layout."""
    if variant not in ("sigan", "giegan", "diegan"):
        raise ValueError(f"unknown generator variant {variant!r}")
    if N < 4:
        raise ShapeError(f"LR size must be >= 4, got {N}")
    if variant == "giegan" and (C is None or C < 1):
        raise ValueError("giegan generator requires the identity count C >= 1")
    io = 4 if variant == "giegan" else 3
    L = LayerDescriptor
    layers = [L("conv", "entry", io, channels, 3), L("relu", "entry_act")]
    for i in range(res_before):
        layers.append(L("residual_block", f"res{i + 1}", channels, channels, 3))
    tap = len(layers) - 1
    layers.append(L("upsampler", "up1", channels, channels, 3))
    for i in range(res_between):
        layers.append(L("residual_block", f"res{res_before + i + 1}", channels, channels, 3))
    layers.append(L("upsampler", "up2", channels, tail_channels, 3))
    for i in range(3):
        layers.append(L("conv", f"tail{i + 1}", tail_channels, tail_channels, 3))
        layers.append(L("relu", f"tail{i + 1}_act"))
    layers.append(L("conv", "out", tail_channels, io, 1))
    layers.append(L("sigmoid", "out_act"))
    head = L("fully_connected", "head", channels * N * N, feature_dim)
    return ModelSpec(
        role="generator",
        layers=tuple(layers),
        input_size=N,
        input_channels=io,
        output_size=4 * N,
        output_channels=io,
        perceptual_tap=tap,
        head=head,
        num_classes=C,
        variant=variant,
    )


def build_discriminator(
    kind: str,
    input_size: int,
    C: int | None = None,
    *,
    input_channels: int = 3,
    base_channels: int = 64,
    max_channels: int = 512,
) -> ModelSpec:
    """Fully convolutional discriminator ending in global average pooling.

    ``realfake``: 7 convs, sigmoid score. ``multiclass``: 10 convs, the last
    with C+1 channels, softmax (index C = fake). Stride 2 on layers 1, 3, 5...
    with the channel count doubling at each stride-2 layer after the first.
    """
    if kind == "realfake":
        depth, out_c, final = 7, 1, "sigmoid"
    elif kind == "multiclass":
        if C is None or C < 1:
            raise ValueError("multiclass discriminator requires C >= 1")
        depth, out_c, final = 10, C + 1, "softmax"
    else:
        raise ValueError(f"unknown discriminator kind {kind!r}")
    n_down = (depth + 1) // 2
    if input_size < 2 ** (n_down - 1) or input_size % 2 ** (n_down - 1):
        raise ShapeError(
            f"input_size {input_size} too small for {n_down} stride-2 layers (needs a multiple of {2 ** (n_down - 1)})"
        )
    L = LayerDescriptor
    layers = []
    c_in, c = input_channels, base_channels
    for i in range(depth):
        stride = 2 if i % 2 == 0 else 1
        if stride == 2 and i > 0:
            c = min(2 * c, max_channels)
        last = i == depth - 1
        co = out_c if last else c
        layers.append(L("conv", f"conv{i + 1}", c_in, co, 3, stride))
        if not last:
            if i > 0:
                layers.append(L("batch_norm", f"bn{i + 1}", co, co))
            layers.append(L("relu", f"act{i + 1}", slope=LEAK))
        c_in = co
    layers.append(L("average_pool", "pool"))
    layers.append(L(final, "score"))
    return ModelSpec(
        role=kind,
        layers=tuple(layers),
        input_size=input_size,
        input_channels=input_channels,
        output_size=1,
        output_channels=out_c,
        num_classes=C,
    )


def init_parameters(spec: ModelSpec, rng_state=0) -> ParameterSet:
    """He-normal weights (std = sqrt(2 / fan_in)), zero biases, unit BN scale."""
    if isinstance(rng_state, torch.Generator):
        gen = rng_state
    else:
        gen = torch.Generator().manual_seed(int(rng_state))
    params: ParameterSet = {}
    for name, shape in spec.param_shapes().items():
        leaf = name.rsplit(".", 1)[-1]
        if leaf == "running_var" or (leaf == "weight" and len(shape) == 1):
            params[name] = torch.ones(shape)
        elif leaf == "weight":
            fan_in = shape[1] if len(shape) == 2 else shape[1] * shape[2] * shape[3]
            if _is_deconv_weight(spec, name):
                fan_in = shape[0] * shape[2] * shape[3]
            params[name] = torch.randn(shape, generator=gen) * math.sqrt(2.0 / fan_in)
        else:
            params[name] = torch.zeros(shape)
    return params


def _is_deconv_weight(spec: ModelSpec, name: str) -> bool:
    return name.endswith(".deconv.weight") or any(
        layer.kind == "deconv" and name == f"{layer.name}.weight" for layer in spec.layers
    )


# --------------------------------------------------------------------------
# functional evaluation


class ForwardResult(NamedTuple):
    output: torch.Tensor
    features: torch.Tensor | None
    stats: dict  # refreshed running statistics (training mode only)


def batch_norm(x, params, name, train: bool, stats: dict | None):
    w, b = params[f"{name}.weight"], params[f"{name}.bias"]
    rm, rv = params[f"{name}.running_mean"], params[f"{name}.running_var"]
    if not train:
        return F.batch_norm(x, rm, rv, w, b, training=False, eps=BN_EPS)
    if stats is None:
        return F.batch_norm(x, None, None, w, b, training=True, eps=BN_EPS)
    # the kernel refreshes the running buffers in place, so hand it copies
    rm, rv = rm.detach().clone(), rv.detach().clone()
    out = F.batch_norm(x, rm, rv, w, b, training=True, momentum=BN_MOMENTUM, eps=BN_EPS)
    stats[f"{name}.running_mean"] = rm
    stats[f"{name}.running_var"] = rv
    return out


def conv(x, params, name, stride=1):
    w = params[f"{name}.weight"]
    return F.conv2d(x, w, params[f"{name}.bias"], stride=stride, padding=w.shape[-1] // 2)


def deconv(x, params, name):
    w = params[f"{name}.weight"]
    return F.conv_transpose2d(x, w, params[f"{name}.bias"], stride=1, padding=w.shape[-1] // 2)


def residual_block(x, params, name, train=False, stats=None):
    h = conv(x, params, f"{name}.conv1")
    h = F.relu(batch_norm(h, params, f"{name}.bn1", train, stats))
    h = conv(h, params, f"{name}.conv2")
    h = batch_norm(h, params, f"{name}.bn2", train, stats)
    return x + h


def upsample_block(x, params, name="up", *, train=False, stats=None, normalize=True):
    """Bilinear 2x interpolation, batch norm, ReLU, stride-1 deconvolution."""
    if x.dim() != 4:
        raise ShapeError(f"{name}: expected b x c x N x N input, got {tuple(x.shape)}")
    w = params[f"{name}.deconv.weight"]
    if w.shape[0] != x.shape[1]:
        raise ShapeError(f"{name}: deconv expects {w.shape[0]} channels, input has {x.shape[1]}")
    h = F.interpolate(x, scale_factor=2, mode="bilinear", align_corners=False)
    if normalize:
        h = batch_norm(h, params, f"{name}.bn", train, stats)
    h = F.relu(h)
    return deconv(h, params, f"{name}.deconv")


def _apply(layer: LayerDescriptor, params, x, train, stats):
    kind = layer.kind
    if kind == "conv":
        return conv(x, params, layer.name, layer.stride)
    if kind == "deconv":
        return deconv(x, params, layer.name)
    if kind == "batch_norm":
        return batch_norm(x, params, layer.name, train, stats)
    if kind == "relu":
        return F.leaky_relu(x, layer.slope) if layer.slope else F.relu(x)
    if kind == "sigmoid":
        return torch.sigmoid(x)
    if kind == "softmax":
        return torch.softmax(x, dim=1)
    if kind == "residual_block":
        return residual_block(x, params, layer.name, train, stats)
    if kind == "upsampler":
        return upsample_block(x, params, layer.name, train=train, stats=stats)
    if kind == "average_pool":
        return x.mean(dim=(2, 3))
    if kind == "fully_connected":
        return F.linear(x.flatten(1), params[f"{layer.name}.weight"], params[f"{layer.name}.bias"])
    raise ShapeError(f"unsupported layer kind {kind}")


def _run(spec: ModelSpec, params, x, train, stats, stop=None, tap=None):
    tapped = None
    layers = spec.layers if stop is None else spec.layers[: stop + 1]
    x_in = x
    for i, layer in enumerate(layers):
        x = _apply(layer, params, x, train, stats)
        if i == tap:
            tapped = x
    if not torch.isfinite(x).all():
        raise NonFiniteError(_first_nonfinite(layers, params, x_in, train))
    return x, tapped


def _first_nonfinite(layers, params, x, train) -> str:
    with torch.no_grad():
        for layer in layers:
            x = _apply(layer, params, x, train, None)
            if not torch.isfinite(x).all():
                return f"layer {layer.name!r} ({layer.kind})"
    return "an unknown layer"


def _check_input(spec: ModelSpec, x: torch.Tensor):
    expect = (spec.input_channels, spec.input_size, spec.input_size)
    if x.dim() != 4 or tuple(x.shape[1:]) != expect:
        raise ShapeError(f"expected b x {expect[0]} x {expect[1]} x {expect[2]} input, got {tuple(x.shape)}")


def _head(spec, params, tapped):
    f = _apply(spec.head, params, tapped, False, None)
    if not torch.isfinite(f).all():
        raise NonFiniteError("layer 'head' (fully_connected)")
    return f


def _per_row(fn):
    """Inference mode evaluates one row at a time: batched BLAS kernels may
    reorder reductions by batch size, and inference must not depend on what
    else shares the batch."""

    @functools.wraps(fn)
    def wrapper(spec, params, batch, *args, train=False, **kw):
        if train or batch.dim() != 4 or batch.shape[0] <= 1:
            return fn(spec, params, batch, *args, train=train, **kw)
        rows = []
        for i in range(batch.shape[0]):
            cut = lambda a: a[i : i + 1] if isinstance(a, torch.Tensor) else a  # noqa: E731
            row_kw = {k: cut(v) for k, v in kw.items()}
            rows.append(fn(spec, params, batch[i : i + 1], *map(cut, args), train=False, **row_kw))
        feats = None if rows[0].features is None else torch.cat([r.features for r in rows])
        return ForwardResult(torch.cat([r.output for r in rows]), feats, {})

    return wrapper


@_per_row
def generator_forward(spec: ModelSpec, params: ParameterSet, lr_batch: torch.Tensor, *, train: bool = False) -> ForwardResult:
    """Returns SR faces (b x c x 4N x 4N, strictly inside (0, 1)) and b x 128 features."""
    _check_input(spec, lr_batch)
    stats: dict = {}
    out, tapped = _run(spec, params, lr_batch, train, stats, tap=spec.perceptual_tap)
    return ForwardResult(out, _head(spec, params, tapped), stats)


@_per_row
def perceptual_features(spec: ModelSpec, params: ParameterSet, lr_batch: torch.Tensor, *, train: bool = False) -> ForwardResult:
    """Evaluate only the layers feeding the perceptual head."""
    _check_input(spec, lr_batch)
    stats: dict = {}
    tapped, _ = _run(spec, params, lr_batch, train, stats, stop=spec.perceptual_tap)
    f = _head(spec, params, tapped)
    return ForwardResult(f, f, stats)


def label_plane(labels, num_identities: int, size: int) -> torch.Tensor:
    """Identity ids -> b x 1 x size x size planes holding id / max(C - 1, 1)."""
    labels = torch.as_tensor(labels)
    if labels.dim() == 0:
        labels = labels[None]
    if (labels < 0).any() or (labels >= num_identities).any():
        raise ValueError(f"identity labels must lie in [0, {num_identities})")
    value = labels.to(torch.float32) / max(num_identities - 1, 1)
    return value[:, None, None, None].expand(-1, 1, size, size).contiguous()


@_per_row
def discriminator_forward(
    spec: ModelSpec, params: ParameterSet, hr_batch: torch.Tensor, label_channel=None, *, train: bool = False
) -> ForwardResult:
    """Realfake: b scores in (0, 1). Multiclass: b x (C+1) rows on the simplex.

    ``label_channel`` (b x 1 x H x W) is concatenated to the input when the
    spec expects 4 channels (the label-conditioned realfake judge).
    """
    if label_channel is not None:
        if spec.input_channels != hr_batch.shape[1] + 1:
            raise ShapeError("label channel given but the discriminator does not take one")
        hr_batch = torch.cat([hr_batch, label_channel.to(hr_batch.dtype)], dim=1)
    elif spec.input_channels != hr_batch.shape[1]:
        raise ShapeError(
            f"discriminator expects {spec.input_channels} input channels, got {hr_batch.shape[1]} (missing label channel?)"
        )
    _check_input(spec, hr_batch)
    stats: dict = {}
    out, _ = _run(spec, params, hr_batch, train, stats)
    if spec.role == "realfake":
        out = out[:, 0]
    return ForwardResult(out, None, stats)


def to_dtype(params: ParameterSet, dtype) -> ParameterSet:
    return {k: v.to(dtype) for k, v in params.items()}
