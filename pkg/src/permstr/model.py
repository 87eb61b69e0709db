"""ViT encoder, visio-lingual decoder, and checkpoint I/O.

Parameters live in a flat, ordered name -> Tensor mapping (:class:`ModelParams`);
the forward functions are plain functions of ``(inputs, params, cfg)``.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import numerics as nx
from .numerics import ContractError, DimensionError, Tensor


class ConfigError(ValueError):
    pass


class CheckpointError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    image_w: int = 64
    image_h: int = 16
    channels: int = 1
    patch_w: int = 8
    patch_h: int = 4
    d_model: int = 64
    enc_depth: int = 2
    enc_heads: int = 2
    dec_heads: int = 2
    d_mlp: int = 256
    max_len: int = 8
    charset_size: int = 36
    dropout_p: float = 0.1

    def __post_init__(self):
        if self.image_w % self.patch_w or self.image_h % self.patch_h:
            raise ConfigError(
                f"patch {self.patch_w}x{self.patch_h} does not tile image {self.image_w}x{self.image_h}"
            )
        for name, heads in (("enc_heads", self.enc_heads), ("dec_heads", self.dec_heads)):
            if self.d_model % heads:
                raise ConfigError(f"d_model {self.d_model} not divisible by {name}={heads}")
        if self.max_len < 1:
            raise ConfigError("max_len must be positive")

    @property
    def num_tokens(self) -> int:
        return (self.image_w * self.image_h) // (self.patch_w * self.patch_h)

    @property
    def patch_dim(self) -> int:
        return self.patch_w * self.patch_h * self.channels

    @property
    def num_classes(self) -> int:
        return self.charset_size + 1

    @property
    def eos_id(self) -> int:
        return self.charset_size

    @property
    def bos_id(self) -> int:
        return self.charset_size + 1

    @property
    def pad_id(self) -> int:
        return self.charset_size + 2

    def replace(self, **changes) -> "ModelConfig":
        return dataclasses.replace(self, **changes)


PRESETS = {
    "tiny64": ModelConfig(),
    "parseq-ti": ModelConfig(
        image_w=128, image_h=32, channels=3, d_model=192, enc_depth=12, enc_heads=3,
        dec_heads=6, d_mlp=768, max_len=25, charset_size=94,
    ),
    "parseq-s": ModelConfig(
        image_w=128, image_h=32, channels=3, d_model=384, enc_depth=12, enc_heads=6,
        dec_heads=12, d_mlp=1536, max_len=25, charset_size=94,
    ),
}


def preset(name: str, **overrides) -> ModelConfig:
    try:
        base = PRESETS[name]
    except KeyError:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
    return base.replace(**overrides) if overrides else base


class ModelParams:
    """Ordered collection of named parameter tensors."""

    def __init__(self, tensors: dict[str, Tensor]):
        self.tensors = dict(tensors)

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def __iter__(self):
        return iter(self.tensors)

    def __len__(self) -> int:
        return len(self.tensors)

    def names(self) -> list[str]:
        return list(self.tensors)

    def values(self) -> list[Tensor]:
        return list(self.tensors.values())

    def items(self):
        return self.tensors.items()

    def astype(self, dtype) -> "ModelParams":
        return ModelParams({k: Tensor(v.data, requires_grad=True, dtype=dtype) for k, v in self.items()})

    def copy(self) -> "ModelParams":
        return self.astype(None)

    def zero_grad(self) -> None:
        for t in self.tensors.values():
            t.grad = None

    def load_arrays(self, arrays) -> None:
        for t, a in zip(self.tensors.values(), arrays):
            t.data[...] = a

    def count(self) -> int:
        return sum(t.data.size for t in self.tensors.values())


def _trunc_normal(rng: np.random.Generator, shape, std: float = 0.02) -> np.ndarray:
    out = rng.standard_normal(shape)
    bad = np.abs(out) > 2.0
    while bad.any():
        out[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(out) > 2.0
    return out * std


def init_params(cfg: ModelConfig, rng: np.random.Generator, dtype=np.float32) -> ModelParams:
    d, h = cfg.d_model, cfg.d_mlp
    shapes: dict[str, tuple] = {}

    def lin(name, n_in, n_out):
        shapes[f"{name}.w"] = ("w", (n_in, n_out))
        shapes[f"{name}.b"] = ("b", (n_out,))

    def norm(name):
        shapes[f"{name}.g"] = ("g", (d,))
        shapes[f"{name}.b"] = ("b", (d,))

    def attn(name):
        for proj in ("q", "k", "v", "o"):
            lin(f"{name}.{proj}", d, d)

    lin("enc.patch_embed", cfg.patch_dim, d)
    shapes["enc.pos"] = ("w", (cfg.num_tokens, d))
    for i in range(cfg.enc_depth):
        p = f"enc.layers.{i}"
        norm(f"{p}.norm1")
        attn(f"{p}.attn")
        norm(f"{p}.norm2")
        lin(f"{p}.mlp.fc1", d, h)
        lin(f"{p}.mlp.fc2", h, d)
    norm("enc.norm")
    shapes["dec.pos_queries"] = ("w", (cfg.max_len + 1, d))
    shapes["dec.char_embed"] = ("w", (cfg.charset_size + 3, d))
    norm("dec.norm_q")
    norm("dec.norm_c")
    attn("dec.ctx_attn")
    norm("dec.norm1")
    attn("dec.img_attn")
    norm("dec.norm2")
    lin("dec.mlp.fc1", d, h)
    lin("dec.mlp.fc2", h, d)
    norm("dec.norm")
    lin("head", d, cfg.num_classes)

    tensors = {}
    for name, (kind, shape) in shapes.items():
        if kind == "w":
            arr = _trunc_normal(rng, shape)
        elif kind == "g":
            arr = np.ones(shape)
        else:
            arr = np.zeros(shape)
        tensors[name] = Tensor(arr, requires_grad=True, dtype=dtype)
    return ModelParams(tensors)


# ---------------------------------------------------------------------------
# building blocks
# ---------------------------------------------------------------------------


def _norm(x: Tensor, params: ModelParams, name: str) -> Tensor:
    return nx.layer_norm(x, params[f"{name}.g"], params[f"{name}.b"])


def _lin(x: Tensor, params: ModelParams, name: str) -> Tensor:
    return nx.linear(x, params[f"{name}.w"], params[f"{name}.b"])


def _split_heads(x: Tensor, heads: int) -> Tensor:
    b, n, d = x.shape
    return nx.transpose(nx.reshape(x, (b, n, heads, d // heads)), (0, 2, 1, 3))


def mha(q: Tensor, k: Tensor, v: Tensor, params: ModelParams, name: str, heads: int, mask=None) -> Tensor:
    """Multi-head scaled dot-product attention over ``(B, n, d)`` queries and ``(B, m, d)`` keys.

    ``mask`` is a boolean ``(n, m)`` or ``(B, n, m)`` array; ``False`` entries are
    excluded from the softmax.
    """
    b, n, d = q.shape
    m = k.shape[1]
    if d % heads:
        raise DimensionError(f"mha: d_model {d} not divisible by {heads} heads")
    if k.shape != v.shape or k.shape[0] != b or k.shape[2] != d:
        raise DimensionError(f"mha: query {q.shape}, key {k.shape}, value {v.shape}")
    qh = _split_heads(_lin(q, params, f"{name}.q"), heads)
    kh = _split_heads(_lin(k, params, f"{name}.k"), heads)
    vh = _split_heads(_lin(v, params, f"{name}.v"), heads)
    scores = nx.scale(nx.matmul(qh, nx.transpose(kh, (0, 1, 3, 2))), 1.0 / math.sqrt(d // heads))
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape[-2:] != (n, m):
            raise DimensionError(f"mha: mask {mask.shape} vs scores ({n}, {m})")
        if not mask.any(axis=-1).all():
            raise ContractError("mha: a query row is fully masked")
        scores = nx.masked_fill(scores, mask[:, None] if mask.ndim == 3 else mask)
    attn = nx.softmax(scores, axis=-1)
    out = nx.transpose(nx.matmul(attn, vh), (0, 2, 1, 3))
    return _lin(nx.reshape(out, (b, n, d)), params, f"{name}.o")


def _mlp(x: Tensor, params: ModelParams, name: str) -> Tensor:
    return _lin(nx.gelu(_lin(x, params, f"{name}.fc1")), params, f"{name}.fc2")


def patchify(images: np.ndarray, cfg: ModelConfig) -> np.ndarray:
    """``(B, H, W, C)`` -> ``(B, tokens, p_h * p_w * C)`` in row-major patch order."""
    b, hgt, wid, ch = images.shape
    if (hgt, wid, ch) != (cfg.image_h, cfg.image_w, cfg.channels):
        raise DimensionError(
            f"image extents {(hgt, wid, ch)} != configured {(cfg.image_h, cfg.image_w, cfg.channels)}"
        )
    gh, gw = hgt // cfg.patch_h, wid // cfg.patch_w
    x = images.reshape(b, gh, cfg.patch_h, gw, cfg.patch_w, ch).transpose(0, 1, 3, 2, 4, 5)
    return np.ascontiguousarray(x.reshape(b, gh * gw, cfg.patch_dim))


def encode_image(images, params: ModelParams, cfg: ModelConfig) -> Tensor:
    """Image batch ``(B, H, W, C)`` (or a single ``(H, W, C)``) -> features ``(B, tokens, d)``."""
    images = np.asarray(images)
    if images.ndim == 3:
        images = images[None]
    dtype = params["enc.pos"].dtype
    patches = Tensor._wrap(patchify(images, cfg).astype(dtype, copy=False))
    b, n = patches.shape[:2]
    x = _lin(patches, params, "enc.patch_embed")
    pos = nx.reshape(nx.gather_rows(params["enc.pos"], np.tile(np.arange(n), b)), (b, n, cfg.d_model))
    x = nx.add(x, pos)
    for i in range(cfg.enc_depth):
        p = f"enc.layers.{i}"
        y = _norm(x, params, f"{p}.norm1")
        x = nx.add(x, mha(y, y, y, params, f"{p}.attn", cfg.enc_heads))
        x = nx.add(x, _mlp(_norm(x, params, f"{p}.norm2"), params, f"{p}.mlp"))
    return _norm(x, params, "enc.norm")


def embed_context(context_ids: np.ndarray, params: ModelParams, cfg: ModelConfig) -> Tensor:
    """Character embeddings plus position tokens; [B] at slot 0 gets no position term."""
    b, n = context_ids.shape
    d = cfg.d_model
    pos_q = params["dec.pos_queries"]
    zero = Tensor._wrap(np.zeros((1, d), dtype=pos_q.dtype))
    table = nx.concat_rows([zero, pos_q])
    chars = nx.gather_rows(params["dec.char_embed"], context_ids.reshape(-1))
    pos = nx.gather_rows(table, np.tile(np.arange(n), b))
    return nx.reshape(nx.add(chars, pos), (b, n, d))


def decoder_forward(
    z: Tensor,
    context_ids,
    mask,
    params: ModelParams,
    cfg: ModelConfig,
    train: bool = False,
    rng: np.random.Generator | None = None,
    query_pos=None,
) -> Tensor:
    """Logits ``(B, queries, S+1)`` for position queries attending to context and image.

    ``context_ids`` is ``(B, T+1)``. ``mask`` is ``(queries, T+1)`` or
    ``(B, queries, T+1)`` and must already exclude [E]/[P] context columns.
    ``query_pos`` selects which position tokens act as queries (default: all).
    """
    context_ids = np.asarray(context_ids, dtype=np.intp)
    if context_ids.ndim == 1:
        context_ids = context_ids[None]
    b, n = context_ids.shape
    if n != cfg.max_len + 1:
        raise DimensionError(f"context length {n} != T+1 = {cfg.max_len + 1}")
    if z.shape[0] != b:
        raise DimensionError(f"batch of {z.shape[0]} image features vs {b} contexts")
    qpos = np.arange(n) if query_pos is None else np.asarray(query_pos, dtype=np.intp)
    nq, d, p = qpos.size, cfg.d_model, cfg.dropout_p

    queries = nx.reshape(nx.gather_rows(params["dec.pos_queries"], np.tile(qpos, b)), (b, nq, d))
    ctx = _norm(embed_context(context_ids, params, cfg), params, "dec.norm_c")
    att = mha(_norm(queries, params, "dec.norm_q"), ctx, ctx, params, "dec.ctx_attn", cfg.dec_heads, mask)
    h = nx.add(queries, nx.dropout(att, p, rng, train))
    y = _norm(h, params, "dec.norm1")
    h = nx.add(h, nx.dropout(mha(y, z, z, params, "dec.img_attn", cfg.dec_heads), p, rng, train))
    h = nx.add(h, nx.dropout(_mlp(_norm(h, params, "dec.norm2"), params, "dec.mlp"), p, rng, train))
    return _lin(_norm(h, params, "dec.norm"), params, "head")


# ---------------------------------------------------------------------------
# checkpoint container
# ---------------------------------------------------------------------------

MAGIC = "permstr-checkpoint"
FORMAT_VERSION = 1


def _fmt_value(v) -> str:
    return repr(v) if isinstance(v, float) else str(v)


def save_checkpoint(path, params: ModelParams, cfg: ModelConfig, meta: dict | None = None) -> None:
    """Write a text header followed by little-endian float32 payloads.

    Header lines::

        permstr-checkpoint 1
        config <field>=<value>          (one per ModelConfig field)
        meta <key>=<value>              (free-form, optional)
        tensor <name> <d0,d1,...> <offset> <nbytes>
        end

    Offsets are relative to the first byte after the ``end`` line.
    """
    lines = [f"{MAGIC} {FORMAT_VERSION}"]
    for f in dataclasses.fields(cfg):
        lines.append(f"config {f.name}={_fmt_value(getattr(cfg, f.name))}")
    for k, v in (meta or {}).items():
        lines.append(f"meta {k}={v}")
    blobs, offset = [], 0
    for name, t in params.items():
        blob = np.ascontiguousarray(t.data, dtype="<f4").tobytes()
        shape = ",".join(str(s) for s in t.shape)
        lines.append(f"tensor {name} {shape} {offset} {len(blob)}")
        blobs.append(blob)
        offset += len(blob)
    lines.append("end")
    header = ("\n".join(lines) + "\n").encode("utf-8")
    Path(path).write_bytes(header + b"".join(blobs))


def load_checkpoint(path, dtype=np.float32) -> tuple[ModelParams, ModelConfig, dict]:
    raw = Path(path).read_bytes()
    end = raw.find(b"\nend\n")
    if not raw.startswith(MAGIC.encode()) or end < 0:
        raise CheckpointError(f"{path}: not a {MAGIC} file")
    body = raw[end + len(b"\nend\n") :]
    lines = raw[:end].decode("utf-8").split("\n")
    version = int(lines[0].split()[1])
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported format version {version}")
    types = {f.name: f.type for f in dataclasses.fields(ModelConfig)}
    cfg_kw, meta, tensors = {}, {}, {}
    for line in lines[1:]:
        kind, _, rest = line.partition(" ")
        if kind == "config":
            key, _, val = rest.partition("=")
            cfg_kw[key] = float(val) if types[key] in (float, "float") else int(val)
        elif kind == "meta":
            key, _, val = rest.partition("=")
            meta[key] = val
        elif kind == "tensor":
            name, shape, off, nbytes = rest.split()
            shape = tuple(int(s) for s in shape.split(",")) if shape else ()
            off, nbytes = int(off), int(nbytes)
            if off + nbytes > len(body):
                raise CheckpointError(f"{path}: tensor {name} runs past end of file")
            arr = np.frombuffer(body, dtype="<f4", count=nbytes // 4, offset=off).reshape(shape)
            tensors[name] = Tensor(arr, requires_grad=True, dtype=dtype)
        else:
            raise CheckpointError(f"{path}: unrecognised header line {line!r}")
    return ModelParams(tensors), ModelConfig(**cfg_kw), meta
