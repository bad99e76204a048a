"""Utterance encoder (embeddings -> BiGRU -> attention pooling) and classifier.

The encoder turns a token-id sequence into a single pooled vector ``r`` of
length ``2 * hidden_dim``; a 3-layer tanh MLP maps ``r`` to class logits.
Training code works on batches of sequences through the autodiff graph;
:func:`encode` / :func:`classify` wrap the same path for single inputs.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, InvalidInputError, ShapeError

PAD_ID = 0
UNK_ID = 1

_GATES = ("z", "r", "h")
_DIRECTIONS = ("fwd", "bwd")


@dataclass
class ModelConfig:
    vocab_size: int
    num_classes: int
    embed_dim: int = 64
    hidden_dim: int = 64
    attention_dim: int = 64
    dropout_rate: float = 0.5
    max_len: int = 64

    def __post_init__(self):
        if self.vocab_size < 2:
            raise ConfigError("vocab_size must cover the PAD and UNK ids")
        if self.num_classes < 2:
            raise ConfigError("need at least 2 classes")
        for name in ("embed_dim", "hidden_dim", "attention_dim", "max_len"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError("dropout_rate must lie in [0, 1)")

    def to_dict(self) -> dict:
        return {
            "vocab_size": self.vocab_size,
            "num_classes": self.num_classes,
            "embed_dim": self.embed_dim,
            "hidden_dim": self.hidden_dim,
            "attention_dim": self.attention_dim,
            "dropout_rate": self.dropout_rate,
            "max_len": self.max_len,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


@dataclass
class Representation:
    """Pooled encoder output for one utterance."""

    r: np.ndarray
    attention_weights: np.ndarray


def _param_layout(cfg: ModelConfig) -> dict[str, tuple[tuple[int, ...], int]]:
    """name -> (shape, fan_in); fan_in 0 marks a zero-initialized bias."""
    e, h, a = cfg.embed_dim, cfg.hidden_dim, cfg.attention_dim
    m = 2 * h
    layout: dict[str, tuple[tuple[int, ...], int]] = {
        "embed": ((cfg.vocab_size, e), e),
        "attn.W1": ((2 * h, a), 2 * h),
        "attn.w2": ((a,), a),
        "mlp.W1": ((2 * h, m), 2 * h),
        "mlp.b1": ((m,), 0),
        "mlp.W2": ((m, m), m),
        "mlp.b2": ((m,), 0),
        "mlp.W3": ((m, cfg.num_classes), m),
        "mlp.b3": ((cfg.num_classes,), 0),
    }
    for d in _DIRECTIONS:
        for gate in _GATES:
            layout[f"gru_{d}.W_{gate}"] = ((e, h), e)
            layout[f"gru_{d}.U_{gate}"] = ((h, h), h)
            layout[f"gru_{d}.b_{gate}"] = ((h,), 0)
    return layout


class ModelParams:
    """Named parameter tensors split into encoder and classifier groups."""

    def __init__(self, tensors: dict[str, Tensor]):
        self._tensors = dict(tensors)

    def __getitem__(self, name: str) -> Tensor:
        return self._tensors[name]

    def __contains__(self, name: str) -> bool:
        return name in self._tensors

    def names(self) -> list[str]:
        return sorted(self._tensors)

    def classifier_names(self) -> list[str]:
        return [n for n in self.names() if n.startswith("mlp.")]

    def encoder_names(self) -> list[str]:
        return [n for n in self.names() if not n.startswith("mlp.")]

    def arrays(self) -> dict[str, np.ndarray]:
        return {n: self._tensors[n].data for n in self.names()}

    def copy_arrays(self) -> dict[str, np.ndarray]:
        return {n: self._tensors[n].data.copy() for n in self.names()}

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        for name, value in arrays.items():
            t = self._tensors[name]
            if t.data.shape != value.shape:
                raise ShapeError(f"shape mismatch for {name}")
            t.data[...] = value

    def grads(self) -> dict[str, np.ndarray]:
        """Per-parameter gradients; zeros where no gradient flowed."""
        out = {}
        for name in self.names():
            t = self._tensors[name]
            out[name] = t.grad if t.grad is not None else np.zeros_like(t.data)
        return out

    def zero_grads(self) -> None:
        for t in self._tensors.values():
            t.grad = None

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(t.data)) for t in self._tensors.values())

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self._tensors[n].data.reshape(-1) for n in self.names()])

    def from_vector(self, vec: np.ndarray) -> None:
        offset = 0
        for name in self.names():
            t = self._tensors[name]
            size = t.data.size
            t.data[...] = vec[offset:offset + size].reshape(t.data.shape)
            offset += size
        if offset != vec.size:
            raise ShapeError("vector length does not match the parameter count")

    def grad_vector(self) -> np.ndarray:
        grads = self.grads()
        return np.concatenate([grads[n].reshape(-1) for n in self.names()])


def init_params(cfg: ModelConfig, seed, vocab: dict[str, int] | None = None,
                pretrained_path: str | Path | None = None) -> ModelParams:
    """Uniform [-1/sqrt(fan_in), 1/sqrt(fan_in)] weights, zero biases.

    When ``pretrained_path`` is given, embedding rows for words present in
    ``vocab`` are overwritten by the file's vectors.
    """
    rng = np.random.default_rng(seed)
    tensors = {}
    for name, (shape, fan_in) in sorted(_param_layout(cfg).items()):
        if fan_in == 0:
            data = np.zeros(shape)
        else:
            bound = 1.0 / np.sqrt(fan_in)
            data = rng.uniform(-bound, bound, size=shape)
        tensors[name] = Tensor(data, requires_grad=True)
    if pretrained_path is not None:
        if vocab is None:
            raise ConfigError("pretrained vectors need a vocabulary to map words to ids")
        _overlay_pretrained(tensors["embed"].data, vocab, pretrained_path, cfg.embed_dim)
    return ModelParams(tensors)


def _overlay_pretrained(embed: np.ndarray, vocab: dict[str, int],
                        path: str | Path, embed_dim: int) -> None:
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            parts = line.split()
            if not parts:
                continue
            word, vec = parts[0], parts[1:]
            if len(vec) != embed_dim:
                raise ConfigError(
                    f"pretrained vector for {word!r} has {len(vec)} dims, expected {embed_dim}")
            idx = vocab.get(word)
            if idx is not None and idx < embed.shape[0]:
                embed[idx] = np.array([float(v) for v in vec])


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def gru_cell(x, h, weights) -> np.ndarray:
    """One GRU step with the convention h' = (1 - z) * h + z * hcand."""
    x = np.asarray(x, dtype=np.float64)
    h = np.asarray(h, dtype=np.float64)
    w_z = np.asarray(weights["W_z"])
    if x.shape != (w_z.shape[0],) or h.shape != (w_z.shape[1],):
        raise ShapeError(
            f"gru_cell got x{x.shape}, h{h.shape} for W_z{w_z.shape}")
    z = _sigmoid(x @ weights["W_z"] + h @ weights["U_z"] + weights["b_z"])
    r = _sigmoid(x @ weights["W_r"] + h @ weights["U_r"] + weights["b_r"])
    cand = np.tanh(x @ weights["W_h"] + (r * h) @ weights["U_h"] + weights["b_h"])
    return (1.0 - z) * h + z * cand


def direction_weights(params: ModelParams, direction: str) -> dict[str, np.ndarray]:
    """The numpy weight dict for one GRU direction (for gru_cell callers)."""
    return {f"{kind}_{gate}": params[f"gru_{direction}.{kind}_{gate}"].data
            for kind in ("W", "U", "b") for gate in _GATES}


def _gru_direction(steps: list[Tensor], mask: np.ndarray, params: ModelParams,
                   direction: str) -> list[Tensor]:
    w = {key: params[f"gru_{direction}.{key}"] for key in
         ("W_z", "U_z", "b_z", "W_r", "U_r", "b_r", "W_h", "U_h", "b_h")}
    batch = steps[0].shape[0]
    hidden = w["U_z"].shape[0]
    h = Tensor(np.zeros((batch, hidden)))
    order = range(len(steps)) if direction == "fwd" else range(len(steps) - 1, -1, -1)
    outputs: list[Tensor | None] = [None] * len(steps)
    for t in order:
        x = steps[t]
        z = (x @ w["W_z"] + h @ w["U_z"] + w["b_z"]).sigmoid()
        r = (x @ w["W_r"] + h @ w["U_r"] + w["b_r"]).sigmoid()
        cand = (x @ w["W_h"] + (r * h) @ w["U_h"] + w["b_h"]).tanh()
        updated = (1.0 - z) * h + z * cand
        m = mask[:, t:t + 1]
        h = updated * m + h * (1.0 - m)  # padded steps carry the state through
        outputs[t] = h
    return outputs  # type: ignore[return-value]


def pad_id_batch(id_lists: list[list[int]], cfg: ModelConfig) -> tuple[np.ndarray, np.ndarray]:
    """Pad variable-length id lists into an id matrix and a float mask."""
    if not id_lists:
        raise InvalidInputError("empty batch")
    longest = max(len(ids) for ids in id_lists)
    for ids in id_lists:
        if len(ids) == 0:
            raise InvalidInputError("cannot encode an empty token sequence")
        if len(ids) > cfg.max_len:
            raise InvalidInputError(f"sequence length {len(ids)} exceeds max_len {cfg.max_len}")
    ids_mat = np.full((len(id_lists), longest), PAD_ID, dtype=np.intp)
    mask = np.zeros((len(id_lists), longest))
    for row, ids in enumerate(id_lists):
        clipped = [i if 0 <= i < cfg.vocab_size else UNK_ID for i in ids]
        ids_mat[row, :len(clipped)] = clipped
        mask[row, :len(clipped)] = 1.0
    return ids_mat, mask


def encode_batch(id_lists: list[list[int]], params: ModelParams, cfg: ModelConfig,
                 training: bool = False,
                 rng: np.random.Generator | None = None) -> tuple[Tensor, Tensor]:
    """Encode a batch of id sequences into pooled vectors.

    Returns ``(r, attention)`` where ``r`` has shape (batch, 2 * hidden_dim)
    and ``attention`` holds one probability row per sequence (padded
    positions get exactly zero weight).
    """
    if training and rng is None:
        raise InvalidInputError("training-mode encoding needs an rng for dropout")
    ids_mat, mask = pad_id_batch(id_lists, cfg)
    steps = []
    for t in range(ids_mat.shape[1]):
        x = ad.embedding(params["embed"], ids_mat[:, t])
        if training:
            x = ad.dropout(x, cfg.dropout_rate, rng)
        steps.append(x)
    fwd = _gru_direction(steps, mask, params, "fwd")
    bwd = _gru_direction(steps, mask, params, "bwd")
    per_token = [ad.concat([fwd[t], bwd[t]], axis=1) for t in range(len(steps))]
    w1, w2 = params["attn.W1"], params["attn.w2"]
    columns = [((ht @ w1).tanh() @ w2).reshape(-1, 1) for ht in per_token]
    scores = ad.concat(columns, axis=1) + (mask - 1.0) * 1e30
    attention = ad.softmax(scores, axis=1)
    pooled = attention[:, 0:1] * per_token[0]
    for t in range(1, len(per_token)):
        pooled = pooled + attention[:, t:t + 1] * per_token[t]
    if training:
        pooled = ad.dropout(pooled, cfg.dropout_rate, rng)
    return pooled, attention


def classify(r, params: ModelParams, cfg: ModelConfig, training: bool = False,
             rng: np.random.Generator | None = None) -> Tensor:
    """Class logits for pooled vectors (single vector or a batch)."""
    if training and rng is None:
        raise InvalidInputError("training-mode classification needs an rng for dropout")
    t = r if isinstance(r, Tensor) else Tensor(r)
    if t.shape[-1] != 2 * cfg.hidden_dim:
        raise ShapeError(
            f"representation dim {t.shape[-1]} != 2 * hidden_dim {2 * cfg.hidden_dim}")
    h1 = (t @ params["mlp.W1"] + params["mlp.b1"]).tanh()
    if training:
        h1 = ad.dropout(h1, cfg.dropout_rate, rng)
    h2 = (h1 @ params["mlp.W2"] + params["mlp.b2"]).tanh()
    if training:
        h2 = ad.dropout(h2, cfg.dropout_rate, rng)
    return h2 @ params["mlp.W3"] + params["mlp.b3"]


def encode(tokens: list[int], params: ModelParams, cfg: ModelConfig,
           training: bool = False, rng: np.random.Generator | None = None) -> Representation:
    """Encode one id sequence; unknown ids map to UNK, empty input raises."""
    if len(tokens) == 0:
        raise InvalidInputError("cannot encode an empty token sequence")
    with ad.no_grad():
        pooled, attention = encode_batch([list(tokens)], params, cfg,
                                         training=training, rng=rng)
    return Representation(r=pooled.data[0].copy(),
                          attention_weights=attention.data[0].copy())


# ----------------------------------------------------------------------
# model bundle and checkpointing
# ----------------------------------------------------------------------

@dataclass
class Model:
    """Trained artifact: config + parameters + the training vocabulary."""

    cfg: ModelConfig
    params: ModelParams
    vocab: dict[str, int] = field(default_factory=dict)

    def ids(self, tokens: list[str]) -> list[int]:
        ids = [self.vocab.get(w, UNK_ID) for w in tokens]
        return ids[:self.cfg.max_len]

    def save(self, path: str | Path) -> None:
        save_checkpoint(path, self.cfg, self.params, self.vocab)

    @classmethod
    def load(cls, path: str | Path) -> "Model":
        cfg, params, vocab = load_checkpoint(path)
        return cls(cfg=cfg, params=params, vocab=vocab)


CHECKPOINT_FORMAT = "noisyintent-checkpoint"
CHECKPOINT_VERSION = 1


def save_checkpoint(path: str | Path, cfg: ModelConfig, params: ModelParams,
                    vocab: dict[str, int]) -> None:
    """JSON checkpoint; float64 values survive the round trip bit-exactly."""
    payload = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "config": cfg.to_dict(),
        "vocab": vocab,
        "params": {
            name: {"shape": list(params[name].data.shape),
                   "values": params[name].data.reshape(-1).tolist()}
            for name in params.names()
        },
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True)


def load_checkpoint(path: str | Path) -> tuple[ModelConfig, ModelParams, dict[str, int]]:
    with open(path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    if payload.get("format") != CHECKPOINT_FORMAT:
        raise ConfigError(f"{path} is not a model checkpoint")
    if payload.get("version") != CHECKPOINT_VERSION:
        raise ConfigError(f"unsupported checkpoint version {payload.get('version')}")
    cfg = ModelConfig.from_dict(payload["config"])
    expected = _param_layout(cfg)
    tensors = {}
    for name, entry in payload["params"].items():
        if name not in expected:
            raise ConfigError(f"unexpected parameter {name!r} in checkpoint")
        shape = tuple(entry["shape"])
        if shape != expected[name][0]:
            raise ShapeError(f"checkpoint shape {shape} != expected {expected[name][0]} for {name}")
        data = np.array(entry["values"], dtype=np.float64).reshape(shape)
        tensors[name] = Tensor(data, requires_grad=True)
    missing = set(expected) - set(tensors)
    if missing:
        raise ConfigError(f"checkpoint is missing parameters: {sorted(missing)}")
    return cfg, ModelParams(tensors), dict(payload["vocab"])
