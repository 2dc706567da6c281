"""The dual-modality network: per-modality input-attention LSTM encoders, a
gated-residual fusion of the RSSI and accelerometer embeddings, multi-head
self-attention over the window, a bounded nonlinear refinement, and the two
output heads (room-score emissions for the CRF, RSSI backcast for the
auxiliary reconstruction loss).

Ablation variants rewire single stages: "no-lstm" swaps the encoders for a
positional encoding plus per-timestep linear embedding, "no-grn" fuses by a
plain linear layer on the concatenated embeddings, "no-transformer" skips
self-attention, "no-crf" drops the transition model (softmax training, argmax
decoding), and "no-accel" removes the accelerometer branch entirely.
"""

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np
import torch
from torch import nn

from . import crf, ops
from .data import N_ACCEL, N_RSSI, NormStats, RoomVocabulary
from .errors import ConfigError, DimensionError

ABLATIONS = ("full", "no-lstm", "no-grn", "no-transformer", "no-crf", "no-accel")

CHECKPOINT_MAGIC = b"DCMN-CKPT v1\n"


@dataclass
class ModelConfig:
    d: int = 128  # embedding dimension, shared across all stages
    heads: int = 4
    T: int = 10
    n_rssi: int = N_RSSI
    n_accel: int = N_ACCEL
    n_rooms: int = 6
    dropout_rate: float = 0.15
    tau: float = 1.0  # backcast loss threshold
    attn_dropout: bool = True  # dropout on the self-attention output, pre-residual

    def __post_init__(self):
        if self.d % self.heads != 0:
            raise ConfigError(f"d={self.d} must be divisible by heads={self.heads}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")
        if self.tau <= 0:
            raise ConfigError(f"tau must be > 0, got {self.tau}")
        for name in ("d", "heads", "T", "n_rssi", "n_accel", "n_rooms"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")


@dataclass
class ForwardOutput:
    """Per-window outputs plus attention diagnostics.

    input_attention maps modality name to (B, T, k) weights (rows sum to 1);
    self_attention is (B, heads, T, T) or None when not captured/absent.
    """

    emissions: torch.Tensor  # (B, T, n_rooms)
    backcast: torch.Tensor  # (B, T, n_rssi)
    input_attention: dict = field(default_factory=dict)
    self_attention: Optional[torch.Tensor] = None


def _make_linear(in_dim, out_dim, gen, bias=True):
    lin = nn.Linear(in_dim, out_dim, bias=bias)
    with torch.no_grad():
        lin.weight.copy_(ops.uniform_init((out_dim, in_dim), (1.0 / in_dim) ** 0.5, gen))
        if bias:
            lin.bias.zero_()
    return lin


class InputAttentionEncoder(nn.Module):
    """LSTM over one modality with a feature-selection attention at the input.

    At each step the previous hidden state is projected to window length and
    combined with each feature's full series to score that feature; the
    softmax over features reweights the current input before the LSTM cell
    update. Dropout is applied to the emitted hidden states during training.
    """

    def __init__(self, n_features, T, d, dropout_rate, gen):
        super().__init__()
        self.n_features = n_features
        self.T = T
        self.d = d
        self.dropout_rate = dropout_rate
        self.attn_v = nn.Parameter(ops.uniform_init((T,), (1.0 / T) ** 0.5, gen))
        self.attn_w = nn.Parameter(ops.uniform_init((T, T), (1.0 / T) ** 0.5, gen))
        self.attn_u = nn.Parameter(ops.uniform_init((T, T), (1.0 / T) ** 0.5, gen))
        self.state_proj = nn.Parameter(ops.uniform_init((T, d), (1.0 / d) ** 0.5, gen))
        self.w_ih = nn.Parameter(
            ops.uniform_init((4 * d, n_features), (1.0 / n_features) ** 0.5, gen)
        )
        self.w_hh = nn.Parameter(ops.uniform_init((4 * d, d), (1.0 / d) ** 0.5, gen))
        self.bias = nn.Parameter(torch.zeros(4 * d))

    def attention(self, h_prev, series_mix):
        """Feature weights from the previous hidden state.

        h_prev: (B, d); series_mix: (B, T, k) precomputed U_e x_k columns.
        Returns (B, k) weights summing to 1.
        """
        ph = h_prev @ self.state_proj.T  # (B, T)
        wh = ph @ self.attn_w.T  # (B, T)
        scores = torch.einsum("t,btk->bk", self.attn_v, torch.tanh(wh.unsqueeze(2) + series_mix))
        return ops.softmax(scores, dim=-1)

    def forward(self, x, training=False, rng=None):
        """x: (B, T, k) -> hidden states (B, T, d) and attention weights (B, T, k)."""
        if x.ndim != 3 or x.shape[1] != self.T or x.shape[2] != self.n_features:
            raise DimensionError(
                f"encoder expects (B, {self.T}, {self.n_features}), got {tuple(x.shape)}"
            )
        B = x.shape[0]
        series_mix = torch.einsum("ts,bsk->btk", self.attn_u, x)
        h = x.new_zeros(B, self.d)
        c = x.new_zeros(B, self.d)
        hs, alphas = [], []
        for t in range(self.T):
            alpha = self.attention(h, series_mix)
            xt = alpha * x[:, t, :]
            gates = xt @ self.w_ih.T + h @ self.w_hh.T + self.bias
            i, f, g, o = gates.chunk(4, dim=-1)
            c = torch.sigmoid(f) * c + torch.sigmoid(i) * torch.tanh(g)
            h = torch.sigmoid(o) * torch.tanh(c)
            hs.append(h)
            alphas.append(alpha)
        out = torch.stack(hs, dim=1)
        out = ops.dropout(out, self.dropout_rate, training, rng)
        return out, torch.stack(alphas, dim=1)


class PositionalLinearEmbed(nn.Module):
    """no-lstm replacement: per-timestep linear embedding plus sinusoidal positions."""

    def __init__(self, n_features, T, d, gen):
        super().__init__()
        self.n_features = n_features
        self.T = T
        self.embed = _make_linear(n_features, d, gen)
        pe = torch.zeros(T, d)
        position = torch.arange(T, dtype=torch.float32).unsqueeze(1)
        div = torch.exp(torch.arange(0, d, 2, dtype=torch.float32) * (-math.log(10000.0) / d))
        pe[:, 0::2] = torch.sin(position * div)
        pe[:, 1::2] = torch.cos(position * div[: pe[:, 1::2].shape[1]])
        self.register_buffer("positions", pe)

    def forward(self, x, training=False, rng=None):
        if x.ndim != 3 or x.shape[1] != self.T or x.shape[2] != self.n_features:
            raise DimensionError(
                f"embed expects (B, {self.T}, {self.n_features}), got {tuple(x.shape)}"
            )
        return self.embed(x) + self.positions.to(x.dtype), None


class GatedResidualNetwork(nn.Module):
    """Residual enrichment of a primary input by a secondary one.

    ELU-mixes the two inputs, projects, gates through a GLU (so the secondary
    contribution can be suppressed entirely), and layer-normalizes the sum
    with the primary residual. Dropout sits before the GLU.
    """

    def __init__(self, d, dropout_rate, gen):
        super().__init__()
        self.dropout_rate = dropout_rate
        self.mix_primary = _make_linear(d, d, gen)  # carries the shared pre-ELU bias
        self.mix_secondary = _make_linear(d, d, gen, bias=False)
        self.project = _make_linear(d, d, gen)
        self.glu_value = _make_linear(d, d, gen)
        self.glu_gate = _make_linear(d, d, gen)
        self.norm_gain = nn.Parameter(torch.ones(d))
        self.norm_offset = nn.Parameter(torch.zeros(d))

    def forward(self, x, y, training=False, rng=None):
        mixed = torch.nn.functional.elu(self.mix_primary(x) + self.mix_secondary(y))
        pre_gate = ops.dropout(self.project(mixed), self.dropout_rate, training, rng)
        gated = self.glu_value(pre_gate) * torch.sigmoid(self.glu_gate(pre_gate))
        return ops.layer_norm(x + gated, self.norm_gain, self.norm_offset)

    def saturate_gate(self, closed=True):
        """Force the GLU gate fully closed (or open); closed makes the output
        exactly LayerNorm(x), independent of the secondary input."""
        with torch.no_grad():
            self.glu_gate.weight.zero_()
            self.glu_gate.bias.fill_(-1.0e4 if closed else 1.0e4)


class MultiHeadSelfAttention(nn.Module):
    """Scaled dot-product self-attention over the window axis, several heads."""

    def __init__(self, d, heads, gen):
        super().__init__()
        if d % heads != 0:
            raise ConfigError(f"d={d} not divisible by heads={heads}")
        self.heads = heads
        self.d_head = d // heads
        bound = (1.0 / d) ** 0.5
        self.w_query = nn.Parameter(ops.uniform_init((heads, d, self.d_head), bound, gen))
        self.w_key = nn.Parameter(ops.uniform_init((heads, d, self.d_head), bound, gen))
        self.w_value = nn.Parameter(ops.uniform_init((heads, d, self.d_head), bound, gen))
        self.w_out = nn.Parameter(
            ops.uniform_init((heads * self.d_head, d), (1.0 / (heads * self.d_head)) ** 0.5, gen)
        )

    def forward(self, h):
        """h: (B, T, d) -> (mixed (B, T, d), weights (B, heads, T, T))."""
        B, T, _ = h.shape
        q = torch.einsum("btd,hde->bhte", h, self.w_query)
        k = torch.einsum("btd,hde->bhte", h, self.w_key)
        v = torch.einsum("btd,hde->bhte", h, self.w_value)
        scores = torch.einsum("bhte,bhse->bhts", q, k) / math.sqrt(self.d_head)
        weights = ops.softmax(scores, dim=-1)
        ctx = torch.einsum("bhts,bhse->bhte", weights, v)
        ctx = ctx.permute(0, 2, 1, 3).reshape(B, T, self.heads * self.d_head)
        return ctx @ self.w_out, weights


class NonlinearMapping(nn.Module):
    """Bounded refinement: tanh(z + MLP(z)) with z the normalized residual sum.

    The MLP widens to 4d with Mish and projects back; weights are shared
    across timesteps. Output entries always lie in (-1, 1).
    """

    def __init__(self, d, gen):
        super().__init__()
        self.norm_gain = nn.Parameter(torch.ones(d))
        self.norm_offset = nn.Parameter(torch.zeros(d))
        self.expand = _make_linear(d, 4 * d, gen)
        self.project = _make_linear(4 * d, d, gen)

    def forward(self, h_fused, h_attended):
        z = ops.layer_norm(h_fused + h_attended, self.norm_gain, self.norm_offset)
        return torch.tanh(z + self.project(ops.mish(self.expand(z))))


class DCMN(nn.Module):
    """Full forward pass from the two modality windows to emissions + backcast."""

    def __init__(self, config, ablation="full", seed=0):
        super().__init__()
        if ablation not in ABLATIONS:
            raise ConfigError(f"unknown ablation {ablation!r}; valid: {list(ABLATIONS)}")
        self.config = config
        self.ablation = ablation
        gen = torch.Generator().manual_seed(seed)
        c = config

        if ablation == "no-lstm":
            self.rssi_encoder = PositionalLinearEmbed(c.n_rssi, c.T, c.d, gen)
        else:
            self.rssi_encoder = InputAttentionEncoder(c.n_rssi, c.T, c.d, c.dropout_rate, gen)
        if ablation == "no-accel":
            self.accel_encoder = None
        elif ablation == "no-lstm":
            self.accel_encoder = PositionalLinearEmbed(c.n_accel, c.T, c.d, gen)
        else:
            self.accel_encoder = InputAttentionEncoder(c.n_accel, c.T, c.d, c.dropout_rate, gen)

        if ablation == "no-grn":
            self.fusion = None
            self.fusion_linear = _make_linear(2 * c.d, c.d, gen)
        else:
            self.fusion = GatedResidualNetwork(c.d, c.dropout_rate, gen)
            self.fusion_linear = None

        self.attention = None if ablation == "no-transformer" else MultiHeadSelfAttention(
            c.d, c.heads, gen
        )
        self.refine = NonlinearMapping(c.d, gen)
        self.emission = _make_linear(c.d, c.n_rooms, gen)
        self.backcast_grn = GatedResidualNetwork(c.d, c.dropout_rate, gen)
        self.backcast_out = _make_linear(c.d, c.n_rssi, gen)

        if ablation == "no-crf":
            self.transitions = None
            self.start_scores = None
        else:
            self.transitions = nn.Parameter(torch.zeros(c.n_rooms, c.n_rooms))
            self.start_scores = nn.Parameter(torch.zeros(c.n_rooms))

    def forward(self, rssi, accel, training=False, rng=None, capture_attention=True):
        """rssi: (B, T, n_rssi), accel: (B, T, n_accel) -> ForwardOutput.

        ``accel`` may be None only for the no-accel variant. ``rng`` feeds
        dropout masks when training.
        """
        c = self.config
        if rssi.ndim != 3 or rssi.shape[1:] != (c.T, c.n_rssi):
            raise DimensionError(
                f"rssi window must be (B, {c.T}, {c.n_rssi}), got {tuple(rssi.shape)}"
            )
        h_r, alpha_r = self.rssi_encoder(rssi, training, rng)
        input_attention = {}
        if capture_attention and alpha_r is not None:
            input_attention["rssi"] = alpha_r
        if self.accel_encoder is not None:
            if accel is None or accel.ndim != 3 or accel.shape[1:] != (c.T, c.n_accel):
                shape = None if accel is None else tuple(accel.shape)
                raise DimensionError(
                    f"accel window must be (B, {c.T}, {c.n_accel}), got {shape}"
                )
            h_a, alpha_a = self.accel_encoder(accel, training, rng)
            if capture_attention and alpha_a is not None:
                input_attention["accel"] = alpha_a
        else:
            h_a = h_r  # accelerometer branch removed; enrich the primary with itself

        if self.fusion is not None:
            h_fused = self.fusion(h_r, h_a, training, rng)
        else:
            h_fused = self.fusion_linear(torch.cat([h_r, h_a], dim=-1))

        if self.attention is not None:
            h_attended, attn_weights = self.attention(h_fused)
            if c.attn_dropout:
                h_attended = ops.dropout(h_attended, c.dropout_rate, training, rng)
        else:
            h_attended, attn_weights = h_fused, None

        h_refined = self.refine(h_fused, h_attended)
        emissions = self.emission(h_refined)
        backcast = self.backcast_out(self.backcast_grn(h_refined, h_refined, training, rng))
        return ForwardOutput(
            emissions=emissions,
            backcast=backcast,
            input_attention=input_attention,
            self_attention=attn_weights if capture_attention else None,
        )

    def transition_matrix(self, forbidden_mask=None):
        if self.transitions is None:
            raise ConfigError("the no-crf variant has no transition matrix")
        mask = None
        if forbidden_mask is not None:
            mask = torch.as_tensor(forbidden_mask, dtype=torch.bool)
        return crf.TransitionMatrix(
            scores=self.transitions, start_scores=self.start_scores, forbidden_mask=mask
        )

    def decode(self, emissions, forbidden_mask=None):
        """Best label sequence per window: Viterbi, or row argmax for no-crf."""
        if emissions.ndim != 3:
            raise DimensionError("decode expects (B, T, n) emissions")
        if self.ablation == "no-crf":
            return emissions.argmax(dim=-1).detach().numpy()
        return crf.viterbi_batch(emissions.detach(), self.transition_matrix(forbidden_mask))


def forward_arrays(model, rssi, accel, **kwargs):
    """Convenience wrapper taking numpy windows; adds the batch axis if absent."""
    dtype = next(model.parameters()).dtype
    rssi_t = torch.as_tensor(np.asarray(rssi), dtype=dtype)
    if rssi_t.ndim == 2:
        rssi_t = rssi_t.unsqueeze(0)
    accel_t = None
    if accel is not None:
        accel_t = torch.as_tensor(np.asarray(accel), dtype=dtype)
        if accel_t.ndim == 2:
            accel_t = accel_t.unsqueeze(0)
    return model(rssi_t, accel_t, **kwargs)


def save_checkpoint(path, model, vocabulary, norm_stats=None, extra=None):
    """Write a self-describing checkpoint: magic, JSON header, raw arrays.

    The header carries the format version, model config, ablation, room
    vocabulary, normalization statistics, and an array manifest (name, dtype,
    shape, in order). Output bytes depend only on the contents.
    """
    names = sorted(name for name, _ in model.named_parameters())
    params = dict(model.named_parameters())
    manifest = []
    blobs = []
    for name in names:
        arr = params[name].detach().numpy()
        manifest.append({"name": name, "dtype": arr.dtype.str, "shape": list(arr.shape)})
        blobs.append(np.ascontiguousarray(arr).tobytes())
    header = {
        "format": "dcmn-checkpoint",
        "version": 1,
        "config": asdict(model.config),
        "ablation": model.ablation,
        "rooms": list(vocabulary.names),
        "norm_stats": None if norm_stats is None else json.loads(norm_stats.to_json()),
        "arrays": manifest,
        "extra": extra or {},
    }
    payload = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(payload)
        fh.write(b"\n")
        for blob in blobs:
            fh.write(blob)


def load_checkpoint(path):
    """Load a checkpoint written by save_checkpoint.

    Returns (model, vocabulary, norm_stats, extra).
    """
    with open(path, "rb") as fh:
        magic = fh.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise ConfigError(f"{path}: not a checkpoint file (bad magic)")
        header = json.loads(fh.readline().decode("utf-8"))
        if header.get("version") != 1:
            raise ConfigError(f"{path}: unsupported checkpoint version {header.get('version')}")
        config = ModelConfig(**header["config"])
        model = DCMN(config, ablation=header["ablation"], seed=0)
        arrays = {}
        for entry in header["arrays"]:
            dtype = np.dtype(entry["dtype"])
            shape = tuple(entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            buf = fh.read(count * dtype.itemsize)
            arrays[entry["name"]] = np.frombuffer(buf, dtype=dtype).reshape(shape)
    params = dict(model.named_parameters())
    if set(params) != set(arrays):
        raise ConfigError(
            f"{path}: parameter names do not match the model "
            f"(missing {sorted(set(params) - set(arrays))}, "
            f"unexpected {sorted(set(arrays) - set(params))})"
        )
    with torch.no_grad():
        for name, param in params.items():
            param.copy_(torch.as_tensor(arrays[name].copy(), dtype=param.dtype))
    vocabulary = RoomVocabulary(tuple(header["rooms"]))
    stats = None
    if header["norm_stats"] is not None:
        stats = NormStats.from_json(json.dumps(header["norm_stats"]))
    return model, vocabulary, stats, header.get("extra", {})
