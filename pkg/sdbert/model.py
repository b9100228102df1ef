"""
Transformer encoder classifier.

Token and learned positional embeddings feed L pre-norm residual blocks
(layer norm → multi-head self-attention → add, layer norm → GELU feed-forward
→ add). The classifier reads the final state of position 0, the
classification marker.
"""

import hashlib
import logging
from typing import Dict, Iterator, List, Optional, Tuple

import numpy as np

from .attention import AttentionMask, attend_dense, attend_sparse, build_mask, full_mask
from .errors import LengthError, VocabularyError
from .state import ModelConfig
from .tensor import Tensor, add, gelu, index_select, layer_norm, matmul, reshape, transpose

logger = logging.getLogger(__name__)

LAYER_NORM_EPS = 1e-5


class Parameters:
    """Named learnable tensors of one model, in a fixed order."""

    def __init__(self, tensors: Dict[str, Tensor]):
        self.tensors = dict(tensors)

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def __setitem__(self, name: str, tensor: Tensor) -> None:
        self.tensors[name] = tensor

    def __iter__(self) -> Iterator[str]:
        return iter(self.tensors)

    def __len__(self) -> int:
        return len(self.tensors)

    def items(self) -> Iterator[Tuple[str, Tensor]]:
        return iter(self.tensors.items())

    def count(self) -> int:
        return sum(t.size for t in self.tensors.values())

    def requires_grad_(self, flag: bool) -> "Parameters":
        for t in self.tensors.values():
            t.requires_grad = flag
        return self

    def zero_grad(self) -> None:
        for t in self.tensors.values():
            t.zero_grad()

    def clone(self) -> "Parameters":
        return Parameters({name: Tensor(t.values.copy(), requires_grad=t.requires_grad) for name, t in self.items()})

    def digest(self) -> str:
        """SHA-256 over names, shapes and raw values."""
        h = hashlib.sha256()
        for name, t in self.items():
            h.update(name.encode("utf-8"))
            h.update(repr(t.shape).encode("ascii"))
            h.update(np.ascontiguousarray(t.values).tobytes())
        return h.hexdigest()


def parameter_shapes(config: ModelConfig) -> List[Tuple[str, Tuple[int, ...]]]:
    """Every parameter tensor the config implies, in canonical order."""
    d, f = config.d_model, config.d_ff
    shapes = [
        ("embed.token", (config.vocab_size, d)),
        ("embed.position", (config.max_len, d)),
    ]
    for layer in range(config.num_layers):
        p = f"layers.{layer}"
        for proj in ("q", "k", "v", "o"):
            shapes.append((f"{p}.attn.w{proj}", (d, d)))
            shapes.append((f"{p}.attn.b{proj}", (d,)))
        shapes += [
            (f"{p}.ln1.gamma", (d,)),
            (f"{p}.ln1.beta", (d,)),
            (f"{p}.ln2.gamma", (d,)),
            (f"{p}.ln2.beta", (d,)),
            (f"{p}.ffn.w1", (d, f)),
            (f"{p}.ffn.b1", (f,)),
            (f"{p}.ffn.w2", (f, d)),
            (f"{p}.ffn.b2", (d,)),
        ]
    shapes += [("classifier.w", (d, config.num_classes)), ("classifier.b", (config.num_classes,))]
    return shapes


def count_parameters(config: ModelConfig) -> int:
    """Closed-form parameter count: embeddings + L identical blocks + classifier."""
    d, f, c = config.d_model, config.d_ff, config.num_classes
    per_layer = 4 * d * d + 4 * d + 4 * d + d * f + f + f * d + d
    return config.vocab_size * d + config.max_len * d + config.num_layers * per_layer + d * c + c


def parameter_reduction(teacher: ModelConfig, student: ModelConfig) -> float:
    """Fraction of the teacher's parameters the student does without."""
    return 1.0 - count_parameters(student) / count_parameters(teacher)


def init_params(config: ModelConfig, seed: int) -> Parameters:
    """
    Weights ~ Normal(0, 1/√d_model); biases and layer-norm shifts 0; layer-norm scales 1.
    """
    rng = np.random.default_rng(seed)
    std = 1.0 / np.sqrt(config.d_model)
    tensors = {}
    for name, shape in parameter_shapes(config):
        if name.endswith(".gamma"):
            values = np.ones(shape)
        elif name.endswith(".beta") or len(shape) == 1:
            values = np.zeros(shape)
        else:
            values = rng.normal(0.0, std, size=shape)
        tensors[name] = Tensor(values, requires_grad=True)
    return Parameters(tensors)


def attention_mask(config: ModelConfig, n: int) -> AttentionMask:
    return build_mask(config.sparsity, n) if config.is_sparse else full_mask(n)


def _split_heads(x: Tensor, heads: int) -> Tensor:
    b, n, d = x.shape
    return transpose(reshape(x, (b, n, heads, d // heads)), (0, 2, 1, 3))


def _merge_heads(x: Tensor) -> Tensor:
    b, h, n, dh = x.shape
    return reshape(transpose(x, (0, 2, 1, 3)), (b, n, h * dh))


def _self_attention(params: Parameters, prefix: str, x: Tensor, config: ModelConfig,
                    mask: AttentionMask, pad_mask: np.ndarray) -> Tensor:
    def project(name: str) -> Tensor:
        return add(matmul(x, params[f"{prefix}.w{name}"]), params[f"{prefix}.b{name}"])

    q, k, v = (_split_heads(project(name), config.num_heads) for name in ("q", "k", "v"))
    attend = attend_sparse if config.is_sparse else attend_dense
    heads = attend(q, k, v, mask, key_padding=pad_mask[:, None, :])
    return add(matmul(_merge_heads(heads), params[f"{prefix}.wo"]), params[f"{prefix}.bo"])


def _feed_forward(params: Parameters, prefix: str, x: Tensor) -> Tensor:
    hidden = gelu(add(matmul(x, params[f"{prefix}.w1"]), params[f"{prefix}.b1"]))
    return add(matmul(hidden, params[f"{prefix}.w2"]), params[f"{prefix}.b2"])


def forward(params: Parameters, config: ModelConfig, token_ids: np.ndarray,
            pad_mask: Optional[np.ndarray] = None) -> Tensor:
    """
    Logits [B, C] for a batch of token ids [B, n].

    pad_mask is True on real tokens; padded keys are hidden from every real
    query, and padded query rows never reach the classifier.
    """
    ids = np.asarray(token_ids, dtype=np.int64)
    if ids.ndim != 2:
        raise VocabularyError(f"token_ids must be [batch, length], got shape {ids.shape}")
    n = ids.shape[1]
    if n > config.max_len:
        raise LengthError(f"sequence length {n} exceeds max_len={config.max_len}")
    if ids.size and (ids.min() < 0 or ids.max() >= config.vocab_size):
        raise VocabularyError(f"token id outside [0, {config.vocab_size})")
    pad = np.ones(ids.shape, dtype=bool) if pad_mask is None else np.asarray(pad_mask, dtype=bool)

    mask = attention_mask(config, n)
    x = add(index_select(params["embed.token"], ids), index_select(params["embed.position"], np.arange(n)))
    for layer in range(config.num_layers):
        p = f"layers.{layer}"
        h = layer_norm(x, params[f"{p}.ln1.gamma"], params[f"{p}.ln1.beta"], LAYER_NORM_EPS)
        x = add(x, _self_attention(params, f"{p}.attn", h, config, mask, pad))
        h = layer_norm(x, params[f"{p}.ln2.gamma"], params[f"{p}.ln2.beta"], LAYER_NORM_EPS)
        x = add(x, _feed_forward(params, f"{p}.ffn", h))

    pooled = index_select(x, 0)
    return add(matmul(pooled, params["classifier.w"]), params["classifier.b"])
