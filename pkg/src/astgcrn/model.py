"""End-to-end predictor: encoder, optional attention block, two-layer head."""
import json
import struct
from dataclasses import asdict, dataclass, fields

import numpy as np

from .attention import (
    AttentionParams,
    InformerSelection,
    TransformerBlockParams,
    informer_block,
    multi_head_self_attention,
    transformer_block,
)
from .errors import CompatibilityError, ConfigurationError, ContractError, DimensionError
from .gcrn import GcrnCellParams, gcrn_encode
from .graph import NodeEmbedding, adaptive_adjacency, cheb_stack, static_adjacency
from .runtime import resolve_dtype
from .tensor import Parameter, Tensor, abs_, add, as_tensor, matmul, mean_all, relu, sub, transpose

VARIANTS = ("none", "mhsa", "transformer", "informer")
GRAPH_MODES = ("adaptive", "static")


@dataclass
class ModelConfig:
    num_nodes: int
    in_channels: int = 1
    hidden: int = 64
    input_steps: int = 12
    output_steps: int = 12
    K: int = 2
    embed_dim: int = 10
    layers: int = 2
    variant: str = "transformer"
    graph_mode: str = "adaptive"
    heads: int = 4
    d_ff: int | None = None
    informer_c: float = 1.0
    pe_base: float = 1000.0
    seed: int = 0
    dtype: str = "float64"

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigurationError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.graph_mode not in GRAPH_MODES:
            raise ConfigurationError(f"graph_mode must be one of {GRAPH_MODES}, got {self.graph_mode!r}")
        if self.K < 1:
            raise ConfigurationError(f"K must be >= 1, got {self.K}")
        if self.layers < 1:
            raise ConfigurationError(f"layers must be >= 1, got {self.layers}")
        if self.input_steps != self.output_steps:
            raise ConfigurationError(
                f"input_steps ({self.input_steps}) must equal output_steps ({self.output_steps})"
            )
        if self.variant != "none" and self.hidden % self.heads:
            raise ConfigurationError(f"hidden={self.hidden} is not divisible by heads={self.heads}")
        for name in ("num_nodes", "in_channels", "hidden", "input_steps", "embed_dim"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be >= 1")

    @property
    def ffn_width(self):
        return self.d_ff if self.d_ff is not None else 4 * self.hidden

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})


class ASTGCRN:
    def __init__(self, config, adjacency=None):
        self.config = config
        self.dtype = resolve_dtype(config.dtype)
        rng = np.random.default_rng(config.seed)
        dt = self.dtype
        c = config
        self.embedding = NodeEmbedding(c.num_nodes, c.embed_dim, rng, dtype=dt)
        self.layers = [
            GcrnCellParams(c.embed_dim, c.K, c.in_channels if i == 0 else c.hidden, c.hidden, rng,
                           dtype=dt, name=f"encoder.{i}")
            for i in range(c.layers)
        ]
        self.attention = None
        self.block = None
        self.selection = None
        if c.variant == "mhsa":
            self.attention = AttentionParams(c.hidden, c.heads, rng, dtype=dt, name="mhsa")
        elif c.variant in ("transformer", "informer"):
            self.block = TransformerBlockParams(c.hidden, c.heads, c.ffn_width, rng, dtype=dt, name=c.variant)
            if c.variant == "informer":
                self.selection = InformerSelection(c=c.informer_c, seed=c.seed)
        bound = 1.0 / np.sqrt(c.hidden)
        self.fc1_W = Parameter(rng.uniform(-bound, bound, (c.hidden, c.hidden)).astype(dt), "head.fc1.W")
        self.fc1_b = Parameter(rng.uniform(-bound, bound, (c.hidden,)).astype(dt), "head.fc1.b")
        self.fc2_W = Parameter(rng.uniform(-bound, bound, (c.hidden, 1)).astype(dt), "head.fc2.W")
        self.fc2_b = Parameter(rng.uniform(-bound, bound, (1,)).astype(dt), "head.fc2.b")

        self.adjacency = None
        if c.graph_mode == "static":
            if adjacency is None:
                raise ConfigurationError("static graph mode needs an adjacency matrix")
            A = static_adjacency(adjacency)
            if A.shape != (c.num_nodes, c.num_nodes):
                raise DimensionError(f"adjacency {A.shape} does not match N={c.num_nodes}")
            self.adjacency = A.astype(dt)

    # -------------------------------------------------------------- params

    def parameters(self):
        params = list(self.embedding.parameters())
        for layer in self.layers:
            params += layer.parameters()
        if self.attention is not None:
            params += self.attention.parameters()
        if self.block is not None:
            params += self.block.parameters()
        params += [self.fc1_W, self.fc1_b, self.fc2_W, self.fc2_b]
        return params

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()

    def get_state(self):
        return [p.data.copy() for p in self.parameters()]

    def set_state(self, arrays):
        params = self.parameters()
        if len(arrays) != len(params):
            raise ContractError(f"state has {len(arrays)} arrays, model has {len(params)} parameters")
        for p, a in zip(params, arrays):
            if p.shape != a.shape:
                raise DimensionError(f"{p.name}: shape {a.shape} != {p.shape}")
            p.data = np.array(a, dtype=p.dtype, copy=True)

    # -------------------------------------------------------------- forward

    def support(self):
        L = Tensor(self.adjacency) if self.adjacency is not None else adaptive_adjacency(self.embedding)
        return cheb_stack(L, self.config.K)

    def encode(self, X):
        return gcrn_encode(X, self.layers, self.support(), self.embedding)

    def attend(self, H):
        c = self.config
        if c.variant == "none":
            return H
        if c.variant == "mhsa":
            return multi_head_self_attention(H, self.attention)
        if c.variant == "transformer":
            return transformer_block(H, self.block, pe_base=c.pe_base)
        return informer_block(H, self.block, self.selection, pe_base=c.pe_base)

    def head(self, H):
        y = relu(add(matmul(H, self.fc1_W), self.fc1_b))
        return add(matmul(y, self.fc2_W), self.fc2_b)

    def forward(self, X):
        """Map (B, T', N, C) inputs to (B, T, N, 1) forecasts."""
        c = self.config
        X = as_tensor(X, dtype=self.dtype)
        if X.ndim != 4 or X.shape[1:] != (c.input_steps, c.num_nodes, c.in_channels):
            raise DimensionError(
                f"input shape {X.shape} does not match (B, {c.input_steps}, {c.num_nodes}, {c.in_channels})"
            )
        H_a = self.attend(self.encode(X))
        return transpose(self.head(H_a), (0, 2, 1, 3))

    __call__ = forward


def l1_loss(pred, target):
    """Mean absolute error over every element."""
    target = as_tensor(target, dtype=pred.dtype)
    if pred.shape != target.shape:
        raise DimensionError(f"l1_loss: prediction {pred.shape} vs target {target.shape}")
    return mean_all(abs_(sub(pred, target)))


def parameter_census(model):
    """(name, shape, count) for every parameter, each listed once."""
    rows, seen_ids, seen_names = [], set(), set()
    for p in model.parameters():
        if id(p) in seen_ids or p.name in seen_names:
            raise ContractError(f"parameter {p.name!r} registered twice")
        seen_ids.add(id(p))
        seen_names.add(p.name)
        rows.append((p.name, tuple(p.shape), int(p.data.size)))
    return rows


# ------------------------------------------------------------------ checkpoints

CHECKPOINT_MAGIC = b"ASTGCRN\x00"
CHECKPOINT_VERSION = 1


def save_checkpoint(model, path, extra=None):
    """Write magic, u64 manifest length, JSON manifest, then float32 LE payloads in census order."""
    census = parameter_census(model)
    entries, offset = [], 0
    for name, shape, count in census:
        entries.append({"name": name, "shape": list(shape), "offset": offset, "count": count})
        offset += count * 4
    manifest = {
        "format_version": CHECKPOINT_VERSION,
        "config": asdict(model.config),
        "seed": model.config.seed,
        "payload_dtype": "<f4",
        "parameters": entries,
        "adjacency": None if model.adjacency is None else model.adjacency.tolist(),
        "extra": extra or {},
    }
    blob = json.dumps(manifest, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for p in model.parameters():
            fh.write(np.ascontiguousarray(p.data, dtype="<f4").tobytes())
    return manifest


def read_checkpoint(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:8] != CHECKPOINT_MAGIC:
        raise CompatibilityError(f"{path}: not a checkpoint file", ("magic",))
    (n,) = struct.unpack("<Q", raw[8:16])
    manifest = json.loads(raw[16:16 + n].decode("utf-8"))
    if manifest.get("format_version") != CHECKPOINT_VERSION:
        raise CompatibilityError(
            f"{path}: format version {manifest.get('format_version')} != {CHECKPOINT_VERSION}",
            ("format_version",),
        )
    payload = raw[16 + n:]
    arrays = {}
    for entry in manifest["parameters"]:
        start = entry["offset"]
        a = np.frombuffer(payload, dtype="<f4", count=entry["count"], offset=start)
        arrays[entry["name"]] = a.reshape(entry["shape"])
    return manifest, arrays


def load_checkpoint(path):
    manifest, arrays = read_checkpoint(path)
    config = ModelConfig.from_dict(manifest["config"])
    model = ASTGCRN(config, adjacency=manifest.get("adjacency"))
    for p in model.parameters():
        if p.name not in arrays:
            raise CompatibilityError(f"checkpoint lacks parameter {p.name!r}", (p.name,))
        a = arrays[p.name]
        if a.shape != p.shape:
            raise CompatibilityError(f"{p.name}: checkpoint shape {a.shape} != model {p.shape}", (p.name,))
        p.data = a.astype(p.dtype)
    return model, manifest
