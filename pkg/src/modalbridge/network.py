"""Three-pathway feed-forward network with a layer-sharing classifier stack.

Pathways: a source-image pathway fine-tuned on auxiliary labels, and
target-image / target-text pathways for the paired cross-modal data.
Each pathway is two affine+rectifier layers (fc6, fc7). Target h7
activations feed two affine+rectifier layers (fc8, fc9) whose
parameters are physically shared between the image and text paths,
followed by a common classifier head. The source pathway has its own
classifier head on h7.

Ablations gate connectivity only; the parameter set always contains
every block so that runs with different ablations are diffable
parameter-for-parameter.

Gradients are hand-derived per layer (no autodiff); ``backward``
accumulates shared-layer gradients image-path first, then text-path,
so results are deterministic.
"""

import struct
from dataclasses import dataclass
from enum import Enum
from typing import Optional

import numpy as np

from .errors import FeatureFormatError, InvalidStateError
from .tensor import as_matrix, relu, relu_backward, softmax_rows


class Ablation(Enum):
    FULL = "full"
    ONLY_CROSS = "only_cross"   # no source pathway, no MMD, no shared stack
    NO_SHARE = "no_share"       # shared stack bypassed, logits from h7
    NO_SRC_SP = "no_src_sp"     # source supervision off; MMD still on

    @property
    def has_source_pathway(self) -> bool:
        return self is not Ablation.ONLY_CROSS

    @property
    def has_single_modal(self) -> bool:
        """Whether the MMD term between the image pathways is active."""
        return self is not Ablation.ONLY_CROSS

    @property
    def has_source_supervision(self) -> bool:
        return self in (Ablation.FULL, Ablation.NO_SHARE)

    @property
    def has_shared_stack(self) -> bool:
        return self in (Ablation.FULL, Ablation.NO_SRC_SP)


@dataclass(frozen=True)
class NetworkConfig:
    d_img_src: int
    d_img_tgt: int
    d_txt: int
    c_src: int
    c_tgt: int
    h: int = 64
    ablation: Ablation = Ablation.FULL

    def __post_init__(self):
        for name in ("d_img_src", "d_img_tgt", "d_txt", "h"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.c_src < 2 or self.c_tgt < 2:
            raise ValueError("class counts must be >= 2")


@dataclass
class Affine:
    w: np.ndarray  # (d_in, d_out)
    b: np.ndarray  # (d_out,)

    def apply(self, x: np.ndarray) -> np.ndarray:
        return x @ self.w + self.b


@dataclass
class Pathway:
    fc6: Affine
    fc7: Affine


@dataclass
class Params:
    src_img: Pathway
    tgt_img: Pathway
    tgt_txt: Pathway
    fc8: Affine
    fc9: Affine
    src_head: Affine
    tgt_head: Affine


# Canonical block order: parameter updates, checkpoints, and gradient
# reports all follow it.
def named_arrays(params: Params):
    """(name, array) pairs for every tensor, in a fixed order."""
    out = []
    for pname in ("src_img", "tgt_img", "tgt_txt"):
        pw: Pathway = getattr(params, pname)
        for lname in ("fc6", "fc7"):
            aff: Affine = getattr(pw, lname)
            out.append((f"{pname}.{lname}.w", aff.w))
            out.append((f"{pname}.{lname}.b", aff.b))
    for aname in ("fc8", "fc9", "src_head", "tgt_head"):
        aff = getattr(params, aname)
        out.append((f"{aname}.w", aff.w))
        out.append((f"{aname}.b", aff.b))
    return out


def n_params(params: Params) -> int:
    return sum(a.size for _, a in named_arrays(params))


def _map_affine(aff: Affine, fn) -> Affine:
    return Affine(fn(aff.w), fn(aff.b))


def map_params(params: Params, fn) -> Params:
    """New Params with ``fn`` applied to every tensor."""
    return Params(
        src_img=Pathway(_map_affine(params.src_img.fc6, fn),
                        _map_affine(params.src_img.fc7, fn)),
        tgt_img=Pathway(_map_affine(params.tgt_img.fc6, fn),
                        _map_affine(params.tgt_img.fc7, fn)),
        tgt_txt=Pathway(_map_affine(params.tgt_txt.fc6, fn),
                        _map_affine(params.tgt_txt.fc7, fn)),
        fc8=_map_affine(params.fc8, fn),
        fc9=_map_affine(params.fc9, fn),
        src_head=_map_affine(params.src_head, fn),
        tgt_head=_map_affine(params.tgt_head, fn),
    )


def copy_params(params: Params) -> Params:
    return map_params(params, np.copy)


def zeros_like_params(params: Params) -> Params:
    return map_params(params, np.zeros_like)


def sgd_step(params: Params, grads: Params, lr: float) -> None:
    """In-place params <- params - lr * grads, in canonical block order."""
    for (_, p), (_, g) in zip(named_arrays(params), named_arrays(grads)):
        p -= lr * g


def init(config: NetworkConfig, rng: np.random.Generator) -> Params:
    """Glorot-uniform weights, zero biases.

    The two image pathways start from identical fc6/fc7 values when
    their input widths match (the analogue of initializing both from
    one pretrained model); with differing widths they are drawn
    independently. Draw order is fixed, so a seed pins every tensor.
    """

    def draw(d_in, d_out):
        bound = np.sqrt(6.0 / (d_in + d_out))
        return Affine(rng.uniform(-bound, bound, size=(d_in, d_out)),
                      np.zeros(d_out))

    tgt_img = Pathway(draw(config.d_img_tgt, config.h), draw(config.h, config.h))
    tgt_txt = Pathway(draw(config.d_txt, config.h), draw(config.h, config.h))
    fc8 = draw(config.h, config.h)
    fc9 = draw(config.h, config.h)
    src_head = draw(config.h, config.c_src)
    tgt_head = draw(config.h, config.c_tgt)
    if config.d_img_src == config.d_img_tgt:
        src_img = Pathway(_map_affine(tgt_img.fc6, np.copy),
                          _map_affine(tgt_img.fc7, np.copy))
    else:
        src_img = Pathway(draw(config.d_img_src, config.h), draw(config.h, config.h))
    return Params(src_img, tgt_img, tgt_txt, fc8, fc9, src_head, tgt_head)


@dataclass
class ForwardTrace:
    """Activations retained for backward. ``kind`` is one of
    'source', 'image', 'text'; the z* fields are pre-rectifier values."""

    kind: str
    x: np.ndarray
    z6: np.ndarray
    h6: np.ndarray
    z7: np.ndarray
    h7: np.ndarray
    logits: np.ndarray
    z8: Optional[np.ndarray] = None
    h8: Optional[np.ndarray] = None
    z9: Optional[np.ndarray] = None
    h9: Optional[np.ndarray] = None


def _pathway_forward(x: np.ndarray, pw: Pathway):
    z6 = pw.fc6.apply(x)
    h6 = relu(z6)
    z7 = pw.fc7.apply(h6)
    h7 = relu(z7)
    return z6, h6, z7, h7


def forward_source(x: np.ndarray, params: Params,
                   config: NetworkConfig) -> ForwardTrace:
    """Source pathway: h7 straight into the source classifier head."""
    x = as_matrix(x, "x")
    if x.shape[1] != config.d_img_src:
        raise ValueError(f"expected {config.d_img_src} source feature columns, "
                         f"got {x.shape[1]}")
    z6, h6, z7, h7 = _pathway_forward(x, params.src_img)
    return ForwardTrace("source", x, z6, h6, z7, h7, params.src_head.apply(h7))


def forward_target(x: np.ndarray, modality: str, params: Params,
                   config: NetworkConfig) -> ForwardTrace:
    """Target pathway for 'image' or 'text' input rows.

    With the shared stack active the modality-specific h7 passes
    through fc8/fc9 (same parameters for both modalities) before the
    common head; otherwise the head reads h7 directly.
    """
    x = as_matrix(x, "x")
    if modality == "image":
        pw, d_in = params.tgt_img, config.d_img_tgt
    elif modality == "text":
        pw, d_in = params.tgt_txt, config.d_txt
    else:
        raise ValueError(f"modality must be 'image' or 'text', got {modality!r}")
    if x.shape[1] != d_in:
        raise ValueError(f"expected {d_in} {modality} feature columns, got {x.shape[1]}")
    z6, h6, z7, h7 = _pathway_forward(x, pw)
    if config.ablation.has_shared_stack:
        z8 = params.fc8.apply(h7)
        h8 = relu(z8)
        z9 = params.fc9.apply(h8)
        h9 = relu(z9)
        logits = params.tgt_head.apply(h9)
        return ForwardTrace(modality, x, z6, h6, z7, h7, logits, z8, h8, z9, h9)
    logits = params.tgt_head.apply(h7)
    return ForwardTrace(modality, x, z6, h6, z7, h7, logits)


def common_representation(x: np.ndarray, modality: str, params: Params,
                          config: NetworkConfig) -> np.ndarray:
    """Per-row softmax of the target logits; rows sum to 1. This is the
    vector actually ranked at retrieval time, for either modality."""
    return softmax_rows(forward_target(x, modality, params, config).logits)


@dataclass
class TraceSet:
    source: Optional[ForwardTrace]
    img: ForwardTrace
    txt: ForwardTrace


@dataclass
class ActivationGrads:
    """Loss gradients with respect to the activations the losses read.
    ``None`` means zero."""

    d_src_logits: Optional[np.ndarray] = None
    d_src_h6: Optional[np.ndarray] = None
    d_src_h7: Optional[np.ndarray] = None
    d_img_logits: Optional[np.ndarray] = None
    d_img_h6: Optional[np.ndarray] = None
    d_img_h7: Optional[np.ndarray] = None
    d_txt_logits: Optional[np.ndarray] = None
    d_txt_h6: Optional[np.ndarray] = None
    d_txt_h7: Optional[np.ndarray] = None


def _require_match(grad, ref, what):
    if grad is not None and grad.shape != ref.shape:
        raise InvalidStateError(
            f"{what} gradient shape {grad.shape} does not match trace {ref.shape}"
        )


def _affine_relu_backward(x_in, z, d_h, aff: Affine, g_aff: Affine):
    dz = relu_backward(z, d_h)
    g_aff.w += x_in.T @ dz
    g_aff.b += dz.sum(axis=0)
    return dz @ aff.w.T


def _head_backward(h_in, d_logits, aff: Affine, g_aff: Affine):
    g_aff.w += h_in.T @ d_logits
    g_aff.b += d_logits.sum(axis=0)
    return d_logits @ aff.w.T


def _pathway_backward(trace, d_h7_top, d_h6_direct, d_h7_direct,
                      pw: Pathway, g_pw: Pathway):
    d_h7 = d_h7_top
    if d_h7_direct is not None:
        d_h7 = d_h7 + d_h7_direct
    d_h6 = _affine_relu_backward(trace.h6, trace.z7, d_h7, pw.fc7, g_pw.fc7)
    if d_h6_direct is not None:
        d_h6 = d_h6 + d_h6_direct
    _affine_relu_backward(trace.x, trace.z6, d_h6, pw.fc6, g_pw.fc6)


def backward(traces: TraceSet, grads: ActivationGrads, params: Params,
             config: NetworkConfig) -> Params:
    """Accumulate parameter gradients from activation gradients.

    Shared fc8/fc9 and the common head receive the sum of the image-
    and text-path contributions (image accumulated first). Returns a
    Params-shaped gradient object; blocks no loss reaches stay zero.
    """
    g = zeros_like_params(params)

    for trace, kind in ((traces.img, "image"), (traces.txt, "text")):
        if trace.kind != kind:
            raise InvalidStateError(f"expected a {kind} trace, got {trace.kind!r}")
        if config.ablation.has_shared_stack and trace.h9 is None:
            raise InvalidStateError("trace lacks shared-stack activations")

    for trace, prefix in ((traces.img, "img"), (traces.txt, "txt")):
        d_logits = getattr(grads, f"d_{prefix}_logits")
        d_h6 = getattr(grads, f"d_{prefix}_h6")
        d_h7 = getattr(grads, f"d_{prefix}_h7")
        _require_match(d_logits, trace.logits, f"{prefix} logits")
        _require_match(d_h6, trace.h6, f"{prefix} h6")
        _require_match(d_h7, trace.h7, f"{prefix} h7")
        if d_logits is None:
            d_logits = np.zeros_like(trace.logits)
        if config.ablation.has_shared_stack:
            d_h9 = _head_backward(trace.h9, d_logits, params.tgt_head, g.tgt_head)
            d_h8 = _affine_relu_backward(trace.h8, trace.z9, d_h9,
                                         params.fc9, g.fc9)
            d_h7_top = _affine_relu_backward(trace.h7, trace.z8, d_h8,
                                             params.fc8, g.fc8)
        else:
            d_h7_top = _head_backward(trace.h7, d_logits, params.tgt_head,
                                      g.tgt_head)
        pw_name = "tgt_img" if prefix == "img" else "tgt_txt"
        _pathway_backward(trace, d_h7_top, d_h6, d_h7,
                          getattr(params, pw_name), getattr(g, pw_name))

    if traces.source is not None:
        trace = traces.source
        if trace.kind != "source":
            raise InvalidStateError(f"expected a source trace, got {trace.kind!r}")
        _require_match(grads.d_src_logits, trace.logits, "source logits")
        _require_match(grads.d_src_h6, trace.h6, "source h6")
        _require_match(grads.d_src_h7, trace.h7, "source h7")
        d_logits = grads.d_src_logits
        if d_logits is None:
            d_logits = np.zeros_like(trace.logits)
        d_h7_top = _head_backward(trace.h7, d_logits, params.src_head, g.src_head)
        _pathway_backward(trace, d_h7_top, grads.d_src_h6, grads.d_src_h7,
                          params.src_img, g.src_img)
    elif any(x is not None for x in (grads.d_src_logits, grads.d_src_h6,
                                     grads.d_src_h7)):
        raise InvalidStateError("source gradients supplied without a source trace")

    return g


# ---------------------------------------------------------------------------
# Checkpoint format (little-endian throughout):
#   magic "MBNC", version u32,
#   d_img_src, d_img_tgt, d_txt, h, c_src, c_tgt  as u32,
#   ablation code u8, tensor count u16,
#   then per tensor: name length u16, name bytes (utf-8), ndim u8,
#   shape as u32 each, data as row-major float64.
# ---------------------------------------------------------------------------

CHECKPOINT_MAGIC = b"MBNC"
CHECKPOINT_VERSION = 1
_ABLATION_CODES = {
    Ablation.FULL: 0, Ablation.ONLY_CROSS: 1,
    Ablation.NO_SHARE: 2, Ablation.NO_SRC_SP: 3,
}
_ABLATION_FROM_CODE = {v: k for k, v in _ABLATION_CODES.items()}


def save_checkpoint(path, params: Params, config: NetworkConfig) -> None:
    tensors = named_arrays(params)
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", CHECKPOINT_VERSION))
        f.write(struct.pack("<6I", config.d_img_src, config.d_img_tgt,
                            config.d_txt, config.h, config.c_src, config.c_tgt))
        f.write(struct.pack("<BH", _ABLATION_CODES[config.ablation], len(tensors)))
        for name, arr in tensors:
            raw = name.encode("utf-8")
            f.write(struct.pack("<H", len(raw)))
            f.write(raw)
            f.write(struct.pack("<B", arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            f.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_checkpoint(path):
    """Read a checkpoint; returns (params, config)."""
    with open(path, "rb") as f:
        blob = f.read()

    def fail(msg, offset):
        raise FeatureFormatError(f"{path}: {msg} (byte {offset})")

    if blob[:4] != CHECKPOINT_MAGIC:
        fail("bad magic, not a checkpoint file", 0)
    (version,) = struct.unpack_from("<I", blob, 4)
    if version != CHECKPOINT_VERSION:
        fail(f"unsupported checkpoint version {version}", 4)
    dims = struct.unpack_from("<6I", blob, 8)
    code, count = struct.unpack_from("<BH", blob, 32)
    if code not in _ABLATION_FROM_CODE:
        fail(f"unknown ablation code {code}", 32)
    config = NetworkConfig(d_img_src=dims[0], d_img_tgt=dims[1], d_txt=dims[2],
                           h=dims[3], c_src=dims[4], c_tgt=dims[5],
                           ablation=_ABLATION_FROM_CODE[code])
    offset = 35
    tensors = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<H", blob, offset)
        offset += 2
        name = blob[offset:offset + name_len].decode("utf-8")
        offset += name_len
        (ndim,) = struct.unpack_from("<B", blob, offset)
        offset += 1
        shape = struct.unpack_from(f"<{ndim}I", blob, offset)
        offset += 4 * ndim
        size = int(np.prod(shape)) if ndim else 1
        end = offset + 8 * size
        if end > len(blob):
            fail(f"truncated tensor data for {name}", offset)
        arr = np.frombuffer(blob[offset:end], dtype="<f8").astype(
            np.float64).reshape(shape)
        offset = end
        tensors[name] = arr
    if offset != len(blob):
        fail("trailing bytes after last tensor", offset)

    template = init(config, np.random.Generator(np.random.PCG64(0)))
    expected = [name for name, _ in named_arrays(template)]
    if sorted(tensors) != sorted(expected):
        fail("tensor names do not match the network layout", 35)
    for name, ref in named_arrays(template):
        if tensors[name].shape != ref.shape:
            fail(f"tensor {name} has shape {tensors[name].shape}, "
                 f"expected {ref.shape}", 35)

    def build(pname):
        return Pathway(
            Affine(tensors[f"{pname}.fc6.w"], tensors[f"{pname}.fc6.b"]),
            Affine(tensors[f"{pname}.fc7.w"], tensors[f"{pname}.fc7.b"]),
        )

    params = Params(
        src_img=build("src_img"), tgt_img=build("tgt_img"),
        tgt_txt=build("tgt_txt"),
        fc8=Affine(tensors["fc8.w"], tensors["fc8.b"]),
        fc9=Affine(tensors["fc9.w"], tensors["fc9.b"]),
        src_head=Affine(tensors["src_head.w"], tensors["src_head.b"]),
        tgt_head=Affine(tensors["tgt_head.w"], tensors["tgt_head.b"]),
    )
    return params, config
