"""
Architecture shorthand: parsing, rendering, shape inference and the
forward-pass cost model.

Notation tokens, separated by '-':

    C<k>(S<s>P<p>)@<c>   convolution, k x k kernel, stride s, zero padding p, c maps
    MP<k>(S<s>)          max pooling
    AP<k>(S<s>)          average pooling
    FC<u>                fully connected, u units
    D<r>                 dropout with drop probability r

Square brackets and whitespace only group layers visually and are ignored.
"""

import math
import re
from dataclasses import dataclass, field
from enum import Enum
from typing import List, Optional, Sequence, Tuple, Union

from core.errors import ArchSemanticError, ArchSyntaxError, ShapeError


class LayerKind(str, Enum):
    CONV = "Conv"
    MAX_POOL = "MaxPool"
    AVG_POOL = "AvgPool"
    FULLY_CONNECTED = "FullyConnected"
    DROPOUT = "Dropout"


PARAMETRIC_KINDS = (LayerKind.CONV, LayerKind.FULLY_CONNECTED)
POOL_KINDS = (LayerKind.MAX_POOL, LayerKind.AVG_POOL)


@dataclass(frozen=True)
class LayerSpec:
    kind: LayerKind
    kernel: Optional[int] = None
    stride: int = 1
    padding: int = 0
    out_channels: Optional[int] = None
    out_units: Optional[int] = None
    drop_prob: Optional[float] = None

    def __post_init__(self):
        if self.kind in (LayerKind.CONV,) + POOL_KINDS:
            if self.kernel is None or self.kernel < 1:
                raise ArchSemanticError(f"{self.kind.value}: kernel must be >= 1, got {self.kernel}")
            if self.stride < 1:
                raise ArchSemanticError(f"{self.kind.value}: stride must be >= 1, got {self.stride}")
        if self.padding < 0:
            raise ArchSemanticError(f"padding must be >= 0, got {self.padding}")
        if self.kind == LayerKind.CONV and (self.out_channels is None or self.out_channels < 1):
            raise ArchSemanticError(f"Conv: out_channels must be >= 1, got {self.out_channels}")
        if self.kind == LayerKind.FULLY_CONNECTED and (self.out_units is None or self.out_units < 1):
            raise ArchSemanticError(f"FullyConnected: units must be >= 1, got {self.out_units}")
        if self.kind == LayerKind.DROPOUT:
            if self.drop_prob is None or not 0.0 <= self.drop_prob <= 1.0:
                raise ArchSemanticError(f"Dropout: drop probability must lie in [0, 1], got {self.drop_prob}")

    @classmethod
    def conv(cls, kernel: int, stride: int, padding: int, out_channels: int) -> "LayerSpec":
        return cls(LayerKind.CONV, kernel=kernel, stride=stride, padding=padding, out_channels=out_channels)

    @classmethod
    def max_pool(cls, kernel: int, stride: int = 1) -> "LayerSpec":
        return cls(LayerKind.MAX_POOL, kernel=kernel, stride=stride)

    @classmethod
    def avg_pool(cls, kernel: int, stride: int = 1) -> "LayerSpec":
        return cls(LayerKind.AVG_POOL, kernel=kernel, stride=stride)

    @classmethod
    def fully_connected(cls, units: int) -> "LayerSpec":
        return cls(LayerKind.FULLY_CONNECTED, out_units=units)

    @classmethod
    def dropout(cls, drop_prob: float) -> "LayerSpec":
        return cls(LayerKind.DROPOUT, drop_prob=float(drop_prob))

    @property
    def is_parametric(self) -> bool:
        return self.kind in PARAMETRIC_KINDS

    def render(self) -> str:
        if self.kind == LayerKind.CONV:
            return f"C{self.kernel}(S{self.stride}P{self.padding})@{self.out_channels}"
        if self.kind == LayerKind.MAX_POOL:
            return f"MP{self.kernel}(S{self.stride})"
        if self.kind == LayerKind.AVG_POOL:
            return f"AP{self.kernel}(S{self.stride})"
        if self.kind == LayerKind.FULLY_CONNECTED:
            return f"FC{self.out_units}"
        return f"D{self.drop_prob!r}"


@dataclass(frozen=True)
class ArchSpec:
    layers: Tuple[LayerSpec, ...]
    source_text: str = field(default="", compare=False)

    def __len__(self) -> int:
        return len(self.layers)

    def logit_layer_index(self) -> int:
        """
        Index of the layer producing class scores.

        Raises ArchSemanticError unless the last parametric layer is a
        FullyConnected layer or a 1x1 Conv, followed by pooling only.
        """
        parametric = [i for i, layer in enumerate(self.layers) if layer.is_parametric]
        if not parametric:
            raise ArchSemanticError("architecture has no Conv or FullyConnected layer")
        last = parametric[-1]
        layer = self.layers[last]
        if layer.kind == LayerKind.CONV and layer.kernel != 1:
            raise ArchSemanticError("a Conv classifier layer must use a 1x1 kernel")
        for tail in self.layers[last + 1:]:
            if tail.kind not in POOL_KINDS:
                raise ArchSemanticError(f"only pooling may follow the classifier layer, found {tail.kind.value}")
            if layer.kind == LayerKind.FULLY_CONNECTED:
                raise ArchSemanticError("pooling cannot follow a FullyConnected classifier layer")
        return last

    def with_layer(self, index: int, layer: LayerSpec) -> "ArchSpec":
        """Copy of the spec with ``layer`` inserted before position ``index``."""
        layers = list(self.layers)
        layers.insert(index, layer)
        return ArchSpec(tuple(layers), render_layers(layers))


_TOKEN_PATTERNS = [
    (LayerKind.FULLY_CONNECTED, re.compile(r"FC(\d+)")),
    (LayerKind.MAX_POOL, re.compile(r"MP(\d+)(?:\((?:S(\d+))?\))?")),
    (LayerKind.AVG_POOL, re.compile(r"AP(\d+)(?:\((?:S(\d+))?\))?")),
    (LayerKind.CONV, re.compile(r"C(\d+)(?:\((?:S(\d+))?(?:P(\d+))?\))?@(\d+)")),
    (LayerKind.DROPOUT, re.compile(r"D(\d+(?:\.\d*)?(?:[eE][-+]?\d+)?|\.\d+)")),
]


def _byte_offset(text: str, index: int) -> int:
    return len(text[:index].encode("utf-8"))


def _tokenize(text: str) -> List[Tuple[str, int]]:
    """Split on '-', dropping brackets and whitespace. Returns (token, char index)."""
    tokens = []
    current = []
    start = None
    for i, ch in enumerate(text):
        if ch in "[]" or ch.isspace():
            continue
        if ch == "-":
            # an exponent sign inside a dropout rate belongs to the token
            if current and current[0] == "D" and current[-1] in "eE":
                current.append(ch)
                continue
            if not current:
                raise ArchSyntaxError("empty layer token", _byte_offset(text, i))
            tokens.append(("".join(current), start))
            current, start = [], None
            continue
        if start is None:
            start = i
        current.append(ch)
    if current:
        tokens.append(("".join(current), start))
    elif tokens:
        raise ArchSyntaxError("trailing '-' separator", _byte_offset(text, len(text)))
    return tokens


def _to_layer(token: str, offset: int) -> LayerSpec:
    for kind, pattern in _TOKEN_PATTERNS:
        match = pattern.fullmatch(token)
        if not match:
            continue
        groups = match.groups()
        try:
            if kind == LayerKind.FULLY_CONNECTED:
                return LayerSpec.fully_connected(int(groups[0]))
            if kind in POOL_KINDS:
                stride = int(groups[1]) if groups[1] is not None else 1
                return LayerSpec(kind, kernel=int(groups[0]), stride=stride)
            if kind == LayerKind.CONV:
                stride = int(groups[1]) if groups[1] is not None else 1
                padding = int(groups[2]) if groups[2] is not None else 0
                return LayerSpec.conv(int(groups[0]), stride, padding, int(groups[3]))
            return LayerSpec.dropout(float(groups[0]))
        except ArchSemanticError as exc:
            raise ArchSemanticError(f"{exc} in token '{token}' at byte {offset}") from None
    raise ArchSyntaxError(f"unknown layer token '{token}'", offset)


def parse_arch(text: str) -> ArchSpec:
    tokens = _tokenize(text)
    if not tokens:
        raise ArchSyntaxError("empty architecture", 0)
    layers = tuple(_to_layer(token, _byte_offset(text, index)) for token, index in tokens)
    return ArchSpec(layers, text)


def render_layers(layers: Sequence[LayerSpec]) -> str:
    return "-".join(layer.render() for layer in layers)


def render_arch(spec: ArchSpec) -> str:
    return render_layers(spec.layers)


Shape = Tuple[int, ...]


def _normalize_input(shape: Union[int, Sequence[int]]) -> Shape:
    if isinstance(shape, int):
        shape = (shape,)
    shape = tuple(int(d) for d in shape)
    if len(shape) not in (1, 3):
        raise ShapeError(f"input must be (units,) or (height, width, channels), got {shape}")
    if any(d <= 0 for d in shape):
        raise ShapeError(f"input dimensions must be positive, got {shape}")
    return shape


def conv_output_size(n: int, kernel: int, stride: int, padding: int) -> int:
    return (n + 2 * padding - kernel) // stride + 1


def pool_output_size(n: int, kernel: int, stride: int) -> int:
    """Ceil-mode pooling size; a last window starting past the input is dropped."""
    out = -((kernel - n) // stride) + 1
    if out > 1 and (out - 1) * stride >= n:
        out -= 1
    return out


def infer_shapes(spec: ArchSpec, input_shape: Union[int, Sequence[int]]) -> List[Shape]:
    shape = _normalize_input(input_shape)
    trace: List[Shape] = []
    for index, layer in enumerate(spec.layers):
        if layer.kind == LayerKind.FULLY_CONNECTED:
            shape = (layer.out_units,)
        elif layer.kind == LayerKind.DROPOUT:
            pass
        else:
            if len(shape) != 3:
                raise ShapeError(f"layer {index} ({layer.render()}) needs a spatial input, got {shape}")
            h, w, c = shape
            if layer.kind == LayerKind.CONV:
                oh = conv_output_size(h, layer.kernel, layer.stride, layer.padding)
                ow = conv_output_size(w, layer.kernel, layer.stride, layer.padding)
                c = layer.out_channels
            else:
                oh = pool_output_size(h, layer.kernel, layer.stride)
                ow = pool_output_size(w, layer.kernel, layer.stride)
            if oh <= 0 or ow <= 0:
                raise ShapeError(f"layer {index} ({layer.render()}) maps {h}x{w} to an empty {oh}x{ow} output")
            shape = (oh, ow, c)
        trace.append(shape)
    return trace


@dataclass
class CostReport:
    per_layer_mults: List[int]
    per_layer_params: List[int]
    shape_trace: List[Shape]

    @property
    def total_mults(self) -> int:
        return sum(self.per_layer_mults)

    @property
    def total_params(self) -> int:
        return sum(self.per_layer_params)


def count_mults(spec: ArchSpec, input_shape: Union[int, Sequence[int]]) -> CostReport:
    """Multiplications per forward pass of one sample; adds, biases and activations are free."""
    shape = _normalize_input(input_shape)
    trace = infer_shapes(spec, shape)
    mults, params = [], []
    for layer, out_shape in zip(spec.layers, trace):
        in_units = math.prod(shape)
        if layer.kind == LayerKind.CONV:
            oh, ow, oc = out_shape
            ic = shape[2]
            mults.append(oh * ow * oc * layer.kernel * layer.kernel * ic)
            params.append(layer.kernel * layer.kernel * ic * oc + oc)
        elif layer.kind == LayerKind.FULLY_CONNECTED:
            mults.append(in_units * layer.out_units)
            params.append(in_units * layer.out_units + layer.out_units)
        else:
            mults.append(0)
            params.append(0)
        shape = out_shape
    return CostReport(mults, params, trace)


def count_params(spec: ArchSpec, input_shape: Union[int, Sequence[int]]) -> Tuple[List[int], int]:
    report = count_mults(spec, input_shape)
    return report.per_layer_params, report.total_params


def compression_ratio(teacher_mults: int, student_mults: int) -> float:
    if teacher_mults <= 0 or student_mults <= 0:
        raise ValueError("multiplication counts must be positive")
    return teacher_mults / student_mults


def round_megamults(mults: int, decimals: int = 1) -> float:
    return round(mults / 1e6, decimals)


def display_megamults(mults: int, reference: Optional[float] = None) -> float:
    """
    Multiplication count in millions at display precision: whole millions from
    20M up, one decimal below. A reference figure within 1% of the exact count
    is shown as is.
    """
    if mults <= 0:
        raise ValueError("multiplication count must be positive")
    if reference is not None and abs(reference * 1e6 - mults) <= 0.01 * mults:
        return float(reference)
    megamults = mults / 1e6
    return float(round(megamults)) if megamults >= 20 else round(megamults, 1)


def rounded_compression_ratio(teacher_megamults: float, student_megamults: float, decimals: int = 2) -> float:
    """Ratio of megamult figures already rounded for display, itself rounded to ``decimals``."""
    if teacher_megamults <= 0 or student_megamults <= 0:
        raise ValueError("megamult figures must be positive")
    return round(teacher_megamults / student_megamults, decimals)


def cost_table(spec: ArchSpec, report: CostReport) -> List[dict]:
    rows = []
    for layer, shape, params, mults in zip(spec.layers, report.shape_trace,
                                           report.per_layer_params, report.per_layer_mults):
        rows.append({
            'layer': layer.render(),
            'output_shape': "x".join(str(d) for d in shape),
            'params': params,
            'mults': mults,
        })
    return rows


# Architectures used by the shipped experiment configs.
KNOWN_ARCHS = {
    'mnist_teacher': "[C5(S1P0)@20-MP2(S2)]-[C5(S1P0)@50-MP2(S2)]-FC500-FC10",
    'mnist_student': "FC800-FC800-FC10",
    'nin_teacher': (
        "[C5(S1P2)@192]-[C1(S1P0)@160]-[C1(S1P0)@96-MP3(S2)]-D0.5-[C5(S1P2)@192]-"
        "[C1(S1P0)@192]-[C1(S1P0)@192]-AP3(S2)]-D0.5-[C3(S1P1)@192]-[C1(S1P0)@192]-"
        "[C1(S1P0)@10]-AP8(S1)"
    ),
    'alexnet_teacher': (
        "[C5(S1P2)@96-MP3(S2)]-[C5(S1P2)@256-MP3(S2)]-[C3(S1P1)@384]-[C3(S1P1)@384]-"
        "[C3(S1P1)@256-MP3(S2)]-FC2048-D0.5-FC2048-D0.5-FC10"
    ),
    'cifar_student': "[C5(S1P2)@64-MP2(S2)]-[C5(S1P2)@128-MP2(S2)]-FC1024-FC10",
    'student1': "[C5(S1P2)@64-MP2(S2)]-[C5(S1P2)@112-MP2(S2)]-[C3(S1P1)@128-MP2(S2)]-FC1024-FC10",
    'student2': "[C5(S1P2)@32-MP2(S2)]-[C5(S1P2)@32-MP2(S2)]-[C3(S1P1)@64-MP2(S2)]-FC1024-FC10",
    'student3': "[C5(S1P2)@16-MP2(S2)]-[C5(S1P2)@32-MP2(S2)]-[C3(S1P1)@64-MP2(S2)]-FC1024-FC10",
}

# Published forward-pass cost (millions of multiplications) of the CIFAR-10 architectures, 32x32x3 input.
REFERENCE_MEGAMULTS = {
    'nin_teacher': 223.0,
    'student1': 61.0,
    'student2': 11.2,
    'student3': 6.7,
}
