"""STMGT network: per-step multi-graph GCN -> chained Transformer blocks -> 1x1 conv head.

Parameters live in a flat ``dict[str, Tensor]`` keyed by dotted path names
(``block0.enc.attn.wq``, ``gcn.functional.w0``, ...). The layout is a pure
function of :class:`ModelConfig`.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields, replace

import numpy as np

from . import layers as L
from . import numcore as nc
from .errors import ConfigError, DimensionError
from .graphs import RELATION_KINDS, RelationSet
from .numcore import Tensor

ModelParams = dict[str, Tensor]


@dataclass(frozen=True)
class ModelConfig:
    seq_len: int = 24
    horizon: int = 1
    n_blocks: int = 3
    d_model: int = 32
    n_heads: int = 4
    gcn_hidden: int = 8
    gcn_filters: int = 16
    d_ff: int | None = None
    weather_features: int = 3
    weather_dim: int = 8
    relations: tuple[str, ...] = RELATION_KINDS
    gcn_output: str = "softmax"
    use_weather: bool = True
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "relations", tuple(self.relations))
        self.validate()

    @property
    def ffn_width(self) -> int:
        return 4 * self.d_model if self.d_ff is None else self.d_ff

    def validate(self) -> None:
        for name in ("seq_len", "horizon", "n_blocks", "d_model", "n_heads", "gcn_hidden", "gcn_filters",
                     "weather_features", "weather_dim"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.d_model % self.n_heads:
            raise ConfigError(f"d_model={self.d_model} must be divisible by n_heads={self.n_heads}")
        if self.d_model % 2:
            raise ConfigError(f"d_model must be even for positional encoding, got {self.d_model}")
        if self.ffn_width < self.d_model:
            raise ConfigError(f"d_ff={self.ffn_width} must be >= d_model={self.d_model}")
        if not self.relations:
            raise ConfigError("at least one relation graph is required")
        unknown = [r for r in self.relations if r not in RELATION_KINDS]
        if unknown or len(set(self.relations)) != len(self.relations):
            raise ConfigError(f"invalid relation list {list(self.relations)}")
        # canonical order regardless of how the caller listed them
        ordered = tuple(k for k in RELATION_KINDS if k in self.relations)
        object.__setattr__(self, "relations", ordered)
        if self.gcn_output not in L.GCN_OUTPUTS:
            raise ConfigError(f"gcn_output must be one of {L.GCN_OUTPUTS}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["relations"] = list(self.relations)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown model config keys: {', '.join(sorted(extra))}")
        return cls(**d)

    def without(self, component: str) -> "ModelConfig":
        """Config with one relation or the weather pathway removed."""
        if component == "weather":
            if not self.use_weather:
                raise ConfigError("weather is already disabled")
            return replace(self, use_weather=False)
        if component not in self.relations:
            raise ConfigError(f"component {component!r} is not enabled in this config")
        if len(self.relations) == 1:
            raise ConfigError("cannot remove the last relation graph; the GCN needs at least one")
        return replace(self, relations=tuple(r for r in self.relations if r != component))


# -- parameters ----------------------------------------------------------------------

def _attention(rng, prefix: str, d: int) -> dict[str, Tensor]:
    return {f"{prefix}.{n}": nc.glorot_uniform(rng, d, d) for n in ("wq", "wk", "wv", "wo")}


def _ffn(rng, prefix: str, d: int, d_ff: int) -> dict[str, Tensor]:
    return {
        f"{prefix}.w1": nc.glorot_uniform(rng, d, d_ff),
        f"{prefix}.b1": nc.zeros(d_ff),
        f"{prefix}.w2": nc.glorot_uniform(rng, d_ff, d),
        f"{prefix}.b2": nc.zeros(d),
    }


def _norm(prefix: str, d: int) -> dict[str, Tensor]:
    return {f"{prefix}.gain": nc.ones(d), f"{prefix}.bias": nc.zeros(d)}


def init_params(config: ModelConfig) -> ModelParams:
    """Glorot-uniform weights, zero biases, unit layer-norm gains; fully determined by ``config.seed``."""
    rng = nc.make_rng(config.seed)
    d, h, f = config.d_model, config.gcn_hidden, config.gcn_filters
    p: ModelParams = {}
    for rel in config.relations:
        p[f"gcn.{rel}.w0"] = nc.glorot_uniform(rng, 1, h)
        p[f"gcn.{rel}.w1"] = nc.glorot_uniform(rng, h, f)
    p["weather.w"] = nc.glorot_uniform(rng, config.weather_features, config.weather_dim)
    p["weather.b"] = nc.zeros(config.weather_dim)
    p["embed.w"] = nc.glorot_uniform(rng, len(config.relations) * f + config.weather_dim, d)
    p["embed.b"] = nc.zeros(d)
    p["decoder_start"] = nc.glorot_uniform(rng, config.horizon, d)
    for i in range(config.n_blocks):
        b = f"block{i}"
        p.update(_attention(rng, f"{b}.enc.attn", d))
        p.update(_norm(f"{b}.enc.ln1", d))
        p.update(_ffn(rng, f"{b}.enc.ffn", d, config.ffn_width))
        p.update(_norm(f"{b}.enc.ln2", d))
        p.update(_attention(rng, f"{b}.dec.self_attn", d))
        p.update(_norm(f"{b}.dec.ln1", d))
        p.update(_attention(rng, f"{b}.dec.cross_attn", d))
        p.update(_norm(f"{b}.dec.ln2", d))
        p.update(_ffn(rng, f"{b}.dec.ffn", d, config.ffn_width))
        p.update(_norm(f"{b}.dec.ln3", d))
    p["head.w"] = nc.glorot_uniform(rng, d, 1)
    p["head.b"] = nc.zeros(1)
    return p


def count_params(config: ModelConfig) -> int:
    d, h, f, r = config.d_model, config.gcn_hidden, config.gcn_filters, len(config.relations)
    d_ff, dw = config.ffn_width, config.weather_dim
    attention = 4 * d * d
    ffn = 2 * d * d_ff + d_ff + d
    norm = 2 * d
    block = (attention + ffn + 2 * norm) + (2 * attention + ffn + 3 * norm)
    return (
        r * (h + h * f)
        + config.weather_features * dw + dw
        + (r * f + dw) * d + d
        + config.horizon * d
        + config.n_blocks * block
        + d + 1
    )


def copy_params(params: ModelParams) -> ModelParams:
    return {k: Tensor(v.data.copy(), requires_grad=True) for k, v in params.items()}


def check_params(params: ModelParams, config: ModelConfig) -> None:
    expected = {k: v.shape for k, v in init_params(config).items()}
    missing = expected.keys() - params.keys()
    if missing:
        raise ConfigError(f"missing parameters: {', '.join(sorted(missing))}")
    for k, shape in expected.items():
        if params[k].shape != shape:
            raise DimensionError(f"parameter {k} has shape {params[k].shape}, config implies {shape}")


def _attn_bundle(p: ModelParams, prefix: str, n_heads: int) -> L.AttentionParams:
    return L.AttentionParams(p[f"{prefix}.wq"], p[f"{prefix}.wk"], p[f"{prefix}.wv"], p[f"{prefix}.wo"], n_heads)


def _ffn_bundle(p: ModelParams, prefix: str) -> L.FfnParams:
    return L.FfnParams(p[f"{prefix}.w1"], p[f"{prefix}.b1"], p[f"{prefix}.w2"], p[f"{prefix}.b2"])


def _ln_bundle(p: ModelParams, prefix: str) -> L.LayerNormParams:
    return L.LayerNormParams(p[f"{prefix}.gain"], p[f"{prefix}.bias"])


def encoder_bundle(p: ModelParams, i: int, n_heads: int) -> L.EncoderLayerParams:
    b = f"block{i}.enc"
    return L.EncoderLayerParams(_attn_bundle(p, f"{b}.attn", n_heads), _ln_bundle(p, f"{b}.ln1"),
                                _ffn_bundle(p, f"{b}.ffn"), _ln_bundle(p, f"{b}.ln2"))


def decoder_bundle(p: ModelParams, i: int, n_heads: int) -> L.DecoderLayerParams:
    b = f"block{i}.dec"
    return L.DecoderLayerParams(
        _attn_bundle(p, f"{b}.self_attn", n_heads), _ln_bundle(p, f"{b}.ln1"),
        _attn_bundle(p, f"{b}.cross_attn", n_heads), _ln_bundle(p, f"{b}.ln2"),
        _ffn_bundle(p, f"{b}.ffn"), _ln_bundle(p, f"{b}.ln3"),
    )


# -- forward -------------------------------------------------------------------------------

def _relation_stack(relations, config: ModelConfig) -> np.ndarray:
    if isinstance(relations, RelationSet):
        if relations.kinds != config.relations:
            raise ConfigError(f"relation set {relations.kinds} does not match config {config.relations}")
        relations = relations.stack()
    relations = np.asarray(relations, dtype=np.float64)
    if relations.ndim == 2:
        relations = relations[None]
    if relations.shape[0] != len(config.relations):
        raise DimensionError(f"{relations.shape[0]} relation matrices for {len(config.relations)} configured relations")
    return relations


def stmgt_forward(x, relations, weather, params: ModelParams, config: ModelConfig) -> Tensor:
    """Predict the next ``horizon`` steps for every zone.

    x: (N, T) or (B, N, T) normalized demand history.
    relations: RelationSet or (R, N, N) normalized adjacencies.
    weather: (T, W) or (B, T, W) standardized weather aligned with the columns of x.
    Returns (N, M) or (B, N, M).
    """
    x = nc.as_tensor(x)
    weather = np.asarray(weather.data if isinstance(weather, Tensor) else weather, dtype=np.float64)
    unbatched = x.ndim == 2
    if unbatched:
        x = nc.reshape(x, (1, *x.shape))
        weather = weather[None]
    if x.ndim != 3:
        raise DimensionError(f"demand input must be (N, T) or (B, N, T), got {x.shape}")
    b, n, t = x.shape
    if t != config.seq_len:
        raise DimensionError(f"input length {t} != configured seq_len {config.seq_len}")
    if weather.shape != (b, t, config.weather_features):
        raise DimensionError(
            f"weather shape {weather.shape[1:] if unbatched else weather.shape} does not match "
            f"{t} steps x {config.weather_features} features"
        )
    rel = _relation_stack(relations, config)
    if rel.shape[-1] != n:
        raise DimensionError(f"relation graphs have {rel.shape[-1]} nodes but demand has {n} zones")
    d = config.d_model

    # spatial block: one GCN pass per time step, weights shared across steps
    steps = nc.reshape(nc.swapaxes(x, 1, 2), (b, t, n, 1))
    gcn = L.GcnParams([params[f"gcn.{r}.w0"] for r in config.relations],
                      [params[f"gcn.{r}.w1"] for r in config.relations])
    spatial = nc.swapaxes(L.gcn_forward(steps, rel, gcn, config.gcn_output), 1, 2)  # (B, N, T, R*F)

    # weather enters only the first Transformer block
    w_in = weather if config.use_weather else np.zeros_like(weather)
    w_proj = nc.matmul(Tensor(w_in), params["weather.w"]) + params["weather.b"]  # (B, T, dw)
    w_proj = nc.broadcast_to(nc.reshape(w_proj, (b, 1, t, config.weather_dim)), (b, n, t, config.weather_dim))
    seq = nc.concat([spatial, w_proj], axis=-1) @ params["embed.w"] + params["embed.b"]
    seq = seq + L.positional_encoding(t, d)

    query = params["decoder_start"] + L.positional_encoding(config.horizon, d)
    query = nc.broadcast_to(query, (b, n, config.horizon, d))
    for i in range(config.n_blocks):
        memory = L.encoder_layer(seq, encoder_bundle(params, i, config.n_heads))
        query = L.decoder_layer(query, memory, decoder_bundle(params, i, config.n_heads))
        seq = memory

    out = L.conv1x1_head(query, params["head.w"], params["head.b"])
    return nc.reshape(out, (n, config.horizon)) if unbatched else out


def predict(x, relations, weather, params: ModelParams, config: ModelConfig, batch_size: int = 64) -> np.ndarray:
    """Forward pass in chunks without keeping the tape; returns a plain array."""
    x = np.asarray(x, dtype=np.float64)
    weather = np.asarray(weather, dtype=np.float64)
    frozen = {k: Tensor(v.data) for k, v in params.items()}
    if x.ndim == 2:
        return stmgt_forward(x, relations, weather, frozen, config).data
    chunks = [
        stmgt_forward(x[i:i + batch_size], relations, weather[i:i + batch_size], frozen, config).data
        for i in range(0, len(x), batch_size)
    ]
    return np.concatenate(chunks, axis=0) if chunks else np.zeros((0, x.shape[1], config.horizon))
