"""Decoder-only transformer over the unified vocabulary, in plain numpy.

Pre-norm residual blocks (causal multi-head attention + GELU MLP), learned
positional embeddings, and a single token-embedding matrix that doubles as
the tied output projection. Forward, masked loss, and full analytic backward
are implemented directly so gradients can be verified against central finite
differences.
"""

from __future__ import annotations

import hashlib
import json
import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

import numpy as np

from .codec import SlotKind, Vocabulary

LN_EPS = 1e-5
CHECKPOINT_MAGIC = b"PCCKPT01"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    block_size: int = 512
    n_layers: int = 4
    n_heads: int = 4
    embed_dim: int = 128
    dropout_rate: float = 0.0
    init_scale: float = 1.0

    def __post_init__(self):
        if self.vocab_size < 1 or self.block_size < 1 or self.n_layers < 1 or self.n_heads < 1:
            raise ValueError("vocab_size, block_size, n_layers, n_heads must be positive")
        if self.embed_dim % self.n_heads != 0:
            raise ValueError(f"embed_dim {self.embed_dim} not divisible by n_heads {self.n_heads}")
        if self.dropout_rate != 0.0:
            raise ValueError("only dropout_rate=0.0 is supported (deterministic desk-scale training)")

    @property
    def head_dim(self) -> int:
        return self.embed_dim // self.n_heads

    def to_dict(self) -> dict:
        return {
            "vocab_size": self.vocab_size,
            "block_size": self.block_size,
            "n_layers": self.n_layers,
            "n_heads": self.n_heads,
            "embed_dim": self.embed_dim,
            "dropout_rate": self.dropout_rate,
            "init_scale": self.init_scale,
        }

    @classmethod
    def from_dict(cls, payload: Mapping) -> "ModelConfig":
        return cls(**{k: payload[k] for k in cls.__dataclass_fields__})


def tensor_names(config: ModelConfig) -> list[str]:
    """Declared tensor order for init, optimization, and checkpointing."""
    names = ["tok_emb", "pos_emb"]
    for i in range(config.n_layers):
        names += [
            f"h{i}.ln1.g", f"h{i}.ln1.b",
            f"h{i}.attn.wq", f"h{i}.attn.bq",
            f"h{i}.attn.wk", f"h{i}.attn.bk",
            f"h{i}.attn.wv", f"h{i}.attn.bv",
            f"h{i}.attn.wo", f"h{i}.attn.bo",
            f"h{i}.ln2.g", f"h{i}.ln2.b",
            f"h{i}.mlp.w1", f"h{i}.mlp.b1",
            f"h{i}.mlp.w2", f"h{i}.mlp.b2",
        ]
    names += ["lnf.g", "lnf.b"]
    return names


class ModelParams:
    """All weights, keyed by tensor name.

    The output projection is the same array object as ``tok_emb``: there is
    no separate vocab-sized output matrix anywhere.
    """

    def __init__(self, tensors: dict[str, np.ndarray]):
        self.tensors = tensors

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    def __setitem__(self, name: str, value: np.ndarray) -> None:
        self.tensors[name] = value

    def items(self):
        return self.tensors.items()

    @property
    def dtype(self) -> np.dtype:
        return self.tensors["tok_emb"].dtype

    def n_parameters(self) -> int:
        return sum(t.size for t in self.tensors.values())

    def copy(self) -> "ModelParams":
        return ModelParams({k: v.copy() for k, v in self.tensors.items()})

    def astype(self, dtype) -> "ModelParams":
        return ModelParams({k: v.astype(dtype) for k, v in self.tensors.items()})


def init_params(config: ModelConfig, seed: int = 0, dtype=np.float32) -> ModelParams:
    """normal(0, 0.02 * init_scale) weights; zero biases and block output projections."""
    rng = np.random.default_rng(seed)
    std = 0.02 * config.init_scale
    d, v, b = config.embed_dim, config.vocab_size, config.block_size

    def normal(*shape):
        return (rng.standard_normal(shape) * std).astype(dtype)

    def zeros(*shape):
        return np.zeros(shape, dtype=dtype)

    def ones(*shape):
        return np.ones(shape, dtype=dtype)

    tensors: dict[str, np.ndarray] = {
        "tok_emb": normal(v, d),
        "pos_emb": normal(b, d),
    }
    for i in range(config.n_layers):
        tensors[f"h{i}.ln1.g"] = ones(d)
        tensors[f"h{i}.ln1.b"] = zeros(d)
        tensors[f"h{i}.attn.wq"] = normal(d, d)
        tensors[f"h{i}.attn.bq"] = zeros(d)
        tensors[f"h{i}.attn.wk"] = normal(d, d)
        tensors[f"h{i}.attn.bk"] = zeros(d)
        tensors[f"h{i}.attn.wv"] = normal(d, d)
        tensors[f"h{i}.attn.bv"] = zeros(d)
        tensors[f"h{i}.attn.wo"] = zeros(d, d)
        tensors[f"h{i}.attn.bo"] = zeros(d)
        tensors[f"h{i}.ln2.g"] = ones(d)
        tensors[f"h{i}.ln2.b"] = zeros(d)
        tensors[f"h{i}.mlp.w1"] = normal(d, 4 * d)
        tensors[f"h{i}.mlp.b1"] = zeros(4 * d)
        tensors[f"h{i}.mlp.w2"] = zeros(4 * d, d)
        tensors[f"h{i}.mlp.b2"] = zeros(d)
    tensors["lnf.g"] = ones(d)
    tensors["lnf.b"] = zeros(d)
    assert list(tensors) == tensor_names(config)
    return ModelParams(tensors)


# ---------------------------------------------------------------------------
# Primitive layers
# ---------------------------------------------------------------------------


def _layernorm(x: np.ndarray, g: np.ndarray, b: np.ndarray):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + LN_EPS)
    xhat = xc * rstd
    return xhat * g + b, (xhat, rstd)


def _layernorm_backward(dout: np.ndarray, cache, g: np.ndarray):
    xhat, rstd = cache
    dxhat = dout * g
    dg = (dout * xhat).sum(axis=tuple(range(dout.ndim - 1)))
    db = dout.sum(axis=tuple(range(dout.ndim - 1)))
    mean_dxhat = dxhat.mean(axis=-1, keepdims=True)
    mean_dxhat_xhat = (dxhat * xhat).mean(axis=-1, keepdims=True)
    dx = rstd * (dxhat - mean_dxhat - xhat * mean_dxhat_xhat)
    return dx, dg, db


_GELU_C = math.sqrt(2.0 / math.pi)
_GELU_K = 0.044715


def _gelu(a: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """tanh-approximation GELU; returns (value, cached tanh) for backward."""
    a2 = a * a
    t = np.tanh(_GELU_C * (a + _GELU_K * a2 * a))
    return 0.5 * a * (1.0 + t), t


def _gelu_grad(a: np.ndarray, t: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + t) + 0.5 * a * (1.0 - t * t) * _GELU_C * (1.0 + 3.0 * _GELU_K * a * a)


def _split_heads(x: np.ndarray, n_heads: int) -> np.ndarray:
    n, t, d = x.shape
    return x.reshape(n, t, n_heads, d // n_heads).transpose(0, 2, 1, 3)


def _merge_heads(x: np.ndarray) -> np.ndarray:
    n, h, t, hd = x.shape
    return x.transpose(0, 2, 1, 3).reshape(n, t, h * hd)


def _check_tokens(config: ModelConfig, tokens: np.ndarray) -> np.ndarray:
    tokens = np.asarray(tokens)
    if tokens.ndim != 2:
        raise ValueError(f"token batch must be 2-D (N, T), got shape {tokens.shape}")
    n, t = tokens.shape
    if t < 1 or t > config.block_size:
        raise ValueError(f"sequence length {t} outside [1, block_size={config.block_size}]")
    if tokens.min() < 0 or tokens.max() >= config.vocab_size:
        raise ValueError(f"token id outside vocabulary of size {config.vocab_size}")
    return tokens


def _forward_with_cache(params: ModelParams, config: ModelConfig, tokens: np.ndarray):
    tokens = _check_tokens(config, tokens)
    n, t = tokens.shape
    p = params.tensors
    emb = p["tok_emb"][tokens] + p["pos_emb"][:t]
    x = emb
    scale = 1.0 / math.sqrt(config.head_dim)
    causal = np.tril(np.ones((t, t), dtype=bool))
    neg_inf = np.array(-np.inf, dtype=x.dtype)
    layer_caches = []
    for i in range(config.n_layers):
        x_in = x
        h, ln1c = _layernorm(x_in, p[f"h{i}.ln1.g"], p[f"h{i}.ln1.b"])
        q = _split_heads(h @ p[f"h{i}.attn.wq"] + p[f"h{i}.attn.bq"], config.n_heads)
        k = _split_heads(h @ p[f"h{i}.attn.wk"] + p[f"h{i}.attn.bk"], config.n_heads)
        v = _split_heads(h @ p[f"h{i}.attn.wv"] + p[f"h{i}.attn.bv"], config.n_heads)
        att_raw = (q @ k.transpose(0, 1, 3, 2)) * scale
        att_raw = np.where(causal, att_raw, neg_inf)
        att_raw = att_raw - att_raw.max(axis=-1, keepdims=True)
        att = np.exp(att_raw)
        att /= att.sum(axis=-1, keepdims=True)
        y = _merge_heads(att @ v)
        x = x_in + y @ p[f"h{i}.attn.wo"] + p[f"h{i}.attn.bo"]

        x_mid = x
        h2, ln2c = _layernorm(x_mid, p[f"h{i}.ln2.g"], p[f"h{i}.ln2.b"])
        a = h2 @ p[f"h{i}.mlp.w1"] + p[f"h{i}.mlp.b1"]
        ga, gt = _gelu(a)
        x = x_mid + ga @ p[f"h{i}.mlp.w2"] + p[f"h{i}.mlp.b2"]
        layer_caches.append((h, ln1c, q, k, v, att, y, h2, ln2c, a, ga, gt))
    hf, lnfc = _layernorm(x, p["lnf.g"], p["lnf.b"])
    logits = hf @ p["tok_emb"].T
    return logits, (tokens, hf, lnfc, layer_caches)


def forward(params: ModelParams, config: ModelConfig, tokens: np.ndarray) -> np.ndarray:
    """Logits of shape (N, T, V); position t attends only to tokens <= t."""
    logits, _ = _forward_with_cache(params, config, tokens)
    return logits


def softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    z = logits - logits.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def loss_masked(logits: np.ndarray, targets: np.ndarray, mask: np.ndarray) -> float:
    """Mean negative log-likelihood over masked positions only."""
    logits = np.asarray(logits)
    targets = np.asarray(targets)
    mask = np.asarray(mask, dtype=bool)
    if logits.shape[:2] != targets.shape or targets.shape != mask.shape:
        raise ValueError(
            f"shape mismatch: logits {logits.shape}, targets {targets.shape}, mask {mask.shape}"
        )
    n_masked = int(mask.sum())
    if n_masked == 0:
        raise ValueError("degenerate batch: loss mask is all false")
    z = logits - logits.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1))
    n, t = targets.shape
    picked = z[np.arange(n)[:, None], np.arange(t)[None, :], targets]
    nll = lse - picked
    return float(nll[mask].sum() / n_masked)


def backward(
    params: ModelParams, config: ModelConfig, tokens: np.ndarray, targets: np.ndarray, mask: np.ndarray
) -> tuple[float, dict[str, np.ndarray]]:
    """Masked loss and its exact gradient for every tensor.

    The tied embedding gradient sums the output-projection contribution and
    the input-lookup contribution.
    """
    logits, cache = _forward_with_cache(params, config, tokens)
    tokens, hf, lnfc, layer_caches = cache
    targets = np.asarray(targets)
    mask = np.asarray(mask, dtype=bool)
    if targets.shape != tokens.shape or mask.shape != tokens.shape:
        raise ValueError("targets and mask must match the token batch shape")
    n_masked = int(mask.sum())
    if n_masked == 0:
        raise ValueError("degenerate batch: loss mask is all false")

    p = params.tensors
    n, t = tokens.shape
    d = config.embed_dim
    loss = loss_masked(logits, targets, mask)

    probs = softmax(logits)
    dlogits = probs
    dlogits[np.arange(n)[:, None], np.arange(t)[None, :], targets] -= 1.0
    dlogits *= (mask / n_masked)[..., None]

    grads: dict[str, np.ndarray] = {}
    # logits = hf @ tok_emb.T
    dl2 = dlogits.reshape(n * t, -1)
    hf2 = hf.reshape(n * t, d)
    grads["tok_emb"] = dl2.T @ hf2
    dhf = (dl2 @ p["tok_emb"]).reshape(n, t, d)

    dx, dgf, dbf = _layernorm_backward(dhf, lnfc, p["lnf.g"])
    grads["lnf.g"] = dgf
    grads["lnf.b"] = dbf

    scale = 1.0 / math.sqrt(config.head_dim)
    for i in reversed(range(config.n_layers)):
        h, ln1c, q, k, v, att, y, h2, ln2c, a, ga, gt = layer_caches[i]

        # MLP branch:  x = x_mid + gelu(ln2(x_mid) @ w1 + b1) @ w2 + b2
        dm2 = dx.reshape(n * t, d)
        grads[f"h{i}.mlp.w2"] = ga.reshape(n * t, -1).T @ dm2
        grads[f"h{i}.mlp.b2"] = dm2.sum(axis=0)
        dga = dx @ p[f"h{i}.mlp.w2"].T
        da = dga * _gelu_grad(a, gt)
        da2 = da.reshape(n * t, -1)
        grads[f"h{i}.mlp.w1"] = h2.reshape(n * t, d).T @ da2
        grads[f"h{i}.mlp.b1"] = da2.sum(axis=0)
        dh2 = da @ p[f"h{i}.mlp.w1"].T
        dln2, dg2, db2 = _layernorm_backward(dh2, ln2c, p[f"h{i}.ln2.g"])
        grads[f"h{i}.ln2.g"] = dg2
        grads[f"h{i}.ln2.b"] = db2
        dx = dx + dln2

        # Attention branch: x_mid = x_in + merge(att @ v) @ wo + bo
        dproj2 = dx.reshape(n * t, d)
        grads[f"h{i}.attn.wo"] = y.reshape(n * t, d).T @ dproj2
        grads[f"h{i}.attn.bo"] = dproj2.sum(axis=0)
        dy = _split_heads(dx @ p[f"h{i}.attn.wo"].T, config.n_heads)
        datt = dy @ v.transpose(0, 1, 3, 2)
        dv = att.transpose(0, 1, 3, 2) @ dy
        datt_raw = att * (datt - (datt * att).sum(axis=-1, keepdims=True))
        dq = (datt_raw @ k) * scale
        dk = (datt_raw.transpose(0, 1, 3, 2) @ q) * scale

        dq2 = _merge_heads(dq).reshape(n * t, d)
        dk2 = _merge_heads(dk).reshape(n * t, d)
        dv2 = _merge_heads(dv).reshape(n * t, d)
        h2d = h.reshape(n * t, d)
        grads[f"h{i}.attn.wq"] = h2d.T @ dq2
        grads[f"h{i}.attn.bq"] = dq2.sum(axis=0)
        grads[f"h{i}.attn.wk"] = h2d.T @ dk2
        grads[f"h{i}.attn.bk"] = dk2.sum(axis=0)
        grads[f"h{i}.attn.wv"] = h2d.T @ dv2
        grads[f"h{i}.attn.bv"] = dv2.sum(axis=0)
        dh = (dq2 @ p[f"h{i}.attn.wq"].T + dk2 @ p[f"h{i}.attn.wk"].T + dv2 @ p[f"h{i}.attn.wv"].T)
        dh = dh.reshape(n, t, d)
        dln1, dg1, db1 = _layernorm_backward(dh, ln1c, p[f"h{i}.ln1.g"])
        grads[f"h{i}.ln1.g"] = dg1
        grads[f"h{i}.ln1.b"] = db1
        dx = dx + dln1

    # Embeddings: x0 = tok_emb[tokens] + pos_emb[:T]
    d_tok = np.zeros_like(p["tok_emb"])
    np.add.at(d_tok, tokens.reshape(-1), dx.reshape(n * t, d))
    grads["tok_emb"] = grads["tok_emb"] + d_tok
    d_pos = np.zeros_like(p["pos_emb"])
    d_pos[:t] = dx.sum(axis=0)
    grads["pos_emb"] = d_pos

    return loss, grads


def embedding_row(params: ModelParams, vocab: Vocabulary, token_id: int) -> np.ndarray:
    """Embedding row of a player token (the learned player embedding)."""
    if vocab.kind_of(int(token_id)) != SlotKind.PLAYER:
        raise ValueError(f"token {token_id} is not in the player block")
    return params["tok_emb"][int(token_id)].copy()


# ---------------------------------------------------------------------------
# Incremental decoding
# ---------------------------------------------------------------------------


class IncrementalDecoder:
    """Single-position decoding with per-layer key/value caches.

    Produces the same next-token logits as a full forward pass over the
    growing prefix, at per-token instead of per-prefix cost. Batched over N
    independent sequences that share positions.
    """

    def __init__(self, params: ModelParams, config: ModelConfig, batch_size: int):
        self.params = params
        self.config = config
        self.n = batch_size
        dtype = params.dtype
        shape = (batch_size, config.n_heads, config.block_size, config.head_dim)
        self._k = [np.zeros(shape, dtype=dtype) for _ in range(config.n_layers)]
        self._v = [np.zeros(shape, dtype=dtype) for _ in range(config.n_layers)]
        self.t = 0

    @property
    def position(self) -> int:
        return self.t

    def prefill(self, tokens: np.ndarray) -> np.ndarray:
        """Consume a (N, T0) prefix; returns logits for the next position."""
        tokens = np.asarray(tokens)
        if tokens.shape[0] != self.n:
            raise ValueError(f"prefix batch {tokens.shape[0]} != decoder batch {self.n}")
        if self.t + tokens.shape[1] > self.config.block_size:
            raise ValueError("context overflow: prefix exceeds block size")
        if self.t != 0:
            raise ValueError("prefill requires a fresh decoder")
        logits, cache = _forward_with_cache(self.params, self.config, tokens)
        _, _, _, layer_caches = cache
        t0 = tokens.shape[1]
        for i, lc in enumerate(layer_caches):
            k, v = lc[3], lc[4]
            self._k[i][:, :, :t0, :] = k
            self._v[i][:, :, :t0, :] = v
        self.t = t0
        return logits[:, -1, :]

    def step(self, tokens: np.ndarray) -> np.ndarray:
        """Append one token per sequence; returns next-position logits (N, V)."""
        tokens = np.asarray(tokens).reshape(-1)
        if tokens.shape[0] != self.n:
            raise ValueError(f"step batch {tokens.shape[0]} != decoder batch {self.n}")
        if self.t >= self.config.block_size:
            raise ValueError("context overflow: block size exhausted")
        cfg = self.config
        p = self.params.tensors
        pos = self.t
        x = p["tok_emb"][tokens] + p["pos_emb"][pos]  # (N, D)
        scale = 1.0 / math.sqrt(cfg.head_dim)
        for i in range(cfg.n_layers):
            h, _ = _layernorm(x, p[f"h{i}.ln1.g"], p[f"h{i}.ln1.b"])
            q = (h @ p[f"h{i}.attn.wq"] + p[f"h{i}.attn.bq"]).reshape(self.n, cfg.n_heads, cfg.head_dim)
            k = (h @ p[f"h{i}.attn.wk"] + p[f"h{i}.attn.bk"]).reshape(self.n, cfg.n_heads, cfg.head_dim)
            v = (h @ p[f"h{i}.attn.wv"] + p[f"h{i}.attn.bv"]).reshape(self.n, cfg.n_heads, cfg.head_dim)
            self._k[i][:, :, pos, :] = k
            self._v[i][:, :, pos, :] = v
            keys = self._k[i][:, :, : pos + 1, :]
            vals = self._v[i][:, :, : pos + 1, :]
            att_raw = np.einsum("nhd,nhtd->nht", q, keys) * scale
            att_raw = att_raw - att_raw.max(axis=-1, keepdims=True)
            att = np.exp(att_raw)
            att /= att.sum(axis=-1, keepdims=True)
            y = np.einsum("nht,nhtd->nhd", att, vals).reshape(self.n, cfg.embed_dim)
            x = x + y @ p[f"h{i}.attn.wo"] + p[f"h{i}.attn.bo"]
            h2, _ = _layernorm(x, p[f"h{i}.ln2.g"], p[f"h{i}.ln2.b"])
            x = x + _gelu(h2 @ p[f"h{i}.mlp.w1"] + p[f"h{i}.mlp.b1"])[0] @ p[f"h{i}.mlp.w2"] + p[f"h{i}.mlp.b2"]
        hf, _ = _layernorm(x, p["lnf.g"], p["lnf.b"])
        self.t = pos + 1
        return hf @ p["tok_emb"].T


# ---------------------------------------------------------------------------
# Checkpoint IO
# ---------------------------------------------------------------------------


def save_checkpoint(path: str | Path, params: ModelParams, config: ModelConfig, vocab_hash: str) -> None:
    """Versioned binary container: JSON header + little-endian float32 tensors."""
    names = tensor_names(config)
    header = {
        "format_version": CHECKPOINT_VERSION,
        "config": config.to_dict(),
        "vocab_hash": vocab_hash,
        "dtype": "<f4",
        "tensors": [{"name": n, "shape": list(params[n].shape)} for n in names],
    }
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(header_bytes)))
        fh.write(header_bytes)
        for name in names:
            fh.write(np.ascontiguousarray(params[name], dtype="<f4").tobytes())


def load_checkpoint(path: str | Path) -> tuple[ModelParams, ModelConfig, str]:
    with open(path, "rb") as fh:
        magic = fh.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"{path}: not a checkpoint file (bad magic)")
        (header_len,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(header_len).decode("utf-8"))
        if header.get("format_version") != CHECKPOINT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {header.get('format_version')!r}")
        config = ModelConfig.from_dict(header["config"])
        tensors: dict[str, np.ndarray] = {}
        for spec in header["tensors"]:
            shape = tuple(spec["shape"])
            count = int(np.prod(shape)) if shape else 1
            buf = fh.read(count * 4)
            if len(buf) != count * 4:
                raise ValueError(f"{path}: truncated tensor {spec['name']!r}")
            tensors[spec["name"]] = np.frombuffer(buf, dtype="<f4").reshape(shape).copy()
    expected = tensor_names(config)
    if list(tensors) != expected:
        raise ValueError(f"{path}: tensor table does not match config")
    return ModelParams(tensors), config, header["vocab_hash"]


def checkpoint_file_hash(path: str | Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()
