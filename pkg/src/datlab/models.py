"""The seven architectures, assembled from the layer library.

Composition notation reads right to left, matching how the architectures
are usually written: ``attn_o_lstm`` ("Attn o LSTM") runs the LSTM first
and feeds its hidden states to the attention stack.  "Attn" always means
a stack of ``n_blocks`` post-LayerNorm transformer blocks.

Every model is embed -> composition -> untied projection head over the
vocabulary, and emits next-token logits of shape [B, T, V].
"""

from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np

from . import tasks
from .layers import Embedding, HybridBlock, Linear, LSTMStack, TransformerBlock
from .rng import Rng
from .tensor import Tensor, add, no_grad

ARCHS = (
    "transformer",    # attention stack only
    "lstm",           # single LSTM
    "attn_o_lstm",    # H = LSTM(X); Z = Attn(H)
    "lstm_o_attn",    # H = Attn(X); Z = LSTM(H)
    "parallel_sum",   # Z = LSTM(X) + Attn(X)
    "hybrid_block",   # n_blocks fused LSTM/attention residual blocks
    "sandwich",       # LSTM -> Attn -> LSTM
)

DISPLAY_NAMES = {
    "transformer": "Transformer",
    "lstm": "LSTM",
    "attn_o_lstm": "Attn∘LSTM",
    "lstm_o_attn": "LSTM∘Attn",
    "parallel_sum": "LSTM+Attn",
    "hybrid_block": "Hybrid Block",
    "sandwich": "LSTM∘Attn∘LSTM",
}

# Architectures with an attention pathway (eligible for delayed attention
# training; the rest have nothing to gate).
GATED_ARCHS = tuple(a for a in ARCHS if a != "lstm")


@dataclass
class ModelSpec:
    arch: str
    d_model: int = 64
    n_heads: int = 4
    n_blocks: int = 4
    lstm_layers: int = 1
    mlp_hidden: int | None = None    # defaults to 4 * d_model
    rope_base: float = 10000.0
    vocab_size: int = tasks.VOCAB.size

    def __post_init__(self):
        if self.arch not in ARCHS:
            raise ValueError(f"unknown architecture {self.arch!r}; expected one of {ARCHS}")
        if self.d_model % self.n_heads != 0:
            raise ValueError(f"d_model {self.d_model} not divisible by n_heads {self.n_heads}")
        if (self.d_model // self.n_heads) % 2 != 0:
            raise ValueError("head_dim must be even (rotary encoding pairs dimensions)")

    @property
    def hidden(self) -> int:
        return self.mlp_hidden if self.mlp_hidden is not None else 4 * self.d_model

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        return cls(**d)


class Model:
    def __init__(self, spec: ModelSpec, embed: Embedding,
                 components: list[tuple[str, object]], head: Linear):
        self.spec = spec
        self.embed = embed
        self.components = components
        self.head = head
        self._params = self._collect_params()

    def _collect_params(self) -> dict[str, Tensor]:
        params: dict[str, Tensor] = {}
        for name, p in self.embed.params():
            params[f"embed.{name}"] = p
        for comp_name, comp in self.components:
            if isinstance(comp, list):
                for idx, block in enumerate(comp):
                    for pname, p in block.params():
                        params[f"{comp_name}.{idx}.{pname}"] = p
            else:
                for pname, p in comp.params():
                    params[f"{comp_name}.{pname}"] = p
        for name, p in self.head.params():
            params[f"head.{name}"] = p
        return params

    def named_parameters(self) -> dict[str, Tensor]:
        return self._params

    def parameter_count(self) -> int:
        return sum(p.size for p in self._params.values())

    def attention_parameter_names(self) -> set[str]:
        """Parameters that sit behind an attention gate."""
        names: set[str] = set()
        for comp_name, comp in self.components:
            if not isinstance(comp, list):
                continue
            for idx, block in enumerate(comp):
                if isinstance(block, TransformerBlock):
                    for pname, _ in block.params():
                        names.add(f"{comp_name}.{idx}.{pname}")
                elif isinstance(block, HybridBlock):
                    for pname in block.gated_param_names():
                        names.add(f"{comp_name}.{idx}.{pname}")
        return names

    def gated_blocks(self):
        for _, comp in self.components:
            if isinstance(comp, list):
                for block in comp:
                    if isinstance(block, (TransformerBlock, HybridBlock)):
                        yield block

    @property
    def has_attention(self) -> bool:
        return any(True for _ in self.gated_blocks())

    def set_attention_gates(self, active: bool) -> None:
        for block in self.gated_blocks():
            block.active = active

    def _compose(self, x: Tensor) -> Tensor:
        if self.spec.arch == "parallel_sum":
            comps = dict(self.components)
            left = comps["lstm"](x)
            right = x
            for block in comps["attn"]:
                right = block(right)
            return add(left, right)
        for name, comp in self.components:
            if isinstance(comp, list):
                for block in comp:
                    x = block(x)
            else:
                x = comp(x)
        return x

    def forward(self, tokens: np.ndarray) -> Tensor:
        x = self.embed(np.asarray(tokens))
        x = self._compose(x)
        return self.head(x)

    def astype(self, dtype) -> "Model":
        """Cast parameters in place (float64 for gradient-check oracles)."""
        for p in self._params.values():
            p.data = p.data.astype(dtype)
        return self

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        missing = set(self._params) - set(state)
        extra = set(state) - set(self._params)
        if missing or extra:
            raise ValueError(f"parameter name mismatch: missing {sorted(missing)}, extra {sorted(extra)}")
        for name, p in self._params.items():
            arr = np.asarray(state[name], dtype=p.data.dtype)
            if arr.shape != p.data.shape:
                raise ValueError(f"shape mismatch for {name}: checkpoint {arr.shape}, model {p.data.shape}")
            p.data = arr.copy()

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {name: p.data for name, p in self._params.items()}


def _attn_stack(rng: Rng, spec: ModelSpec) -> list[TransformerBlock]:
    return [TransformerBlock(rng, spec.d_model, spec.n_heads, spec.hidden, spec.rope_base)
            for _ in range(spec.n_blocks)]


def build(spec: ModelSpec, rng: Rng) -> Model:
    """Construct one of the seven architectures with fresh parameters."""
    embed = Embedding(rng, spec.vocab_size, spec.d_model)
    d = spec.d_model
    arch = spec.arch
    components: list[tuple[str, object]]
    if arch == "transformer":
        components = [("attn", _attn_stack(rng, spec))]
    elif arch == "lstm":
        components = [("lstm", LSTMStack(rng, d, spec.lstm_layers))]
    elif arch == "attn_o_lstm":
        components = [("lstm", LSTMStack(rng, d, spec.lstm_layers)),
                      ("attn", _attn_stack(rng, spec))]
    elif arch == "lstm_o_attn":
        components = [("attn", _attn_stack(rng, spec)),
                      ("lstm", LSTMStack(rng, d, spec.lstm_layers))]
    elif arch == "parallel_sum":
        components = [("lstm", LSTMStack(rng, d, spec.lstm_layers)),
                      ("attn", _attn_stack(rng, spec))]
    elif arch == "hybrid_block":
        components = [("hybrid", [HybridBlock(rng, d, spec.n_heads, spec.hidden,
                                              spec.rope_base, spec.lstm_layers)
                                  for _ in range(spec.n_blocks)])]
    elif arch == "sandwich":
        components = [("lstm_in", LSTMStack(rng, d, spec.lstm_layers)),
                      ("attn", _attn_stack(rng, spec)),
                      ("lstm_out", LSTMStack(rng, d, spec.lstm_layers))]
    else:  # unreachable; ModelSpec validates
        raise ValueError(f"unknown architecture {arch!r}")
    head = Linear(rng, d, spec.vocab_size)
    return Model(spec, embed, components, head)


def predict_answers(model: Model, batch: tasks.Batch,
                    vocab: tasks.Vocab = tasks.VOCAB):
    """Greedy answers at the scored positions.

    Answers are always digits, so the argmax runs over the value-token
    alphabet (ids 0..9); an untrained model therefore scores ~1/10 per
    task rather than ~1/vocab.  Returns (modulo_preds, recall_preds),
    each a [B] int array or None when the variant lacks that query.
    """
    with no_grad():
        logits = model.forward(batch.tokens).data
    sel = logits[:, batch.answer_positions, :vocab.num_values]
    preds = sel.argmax(axis=-1)
    if batch.variant == "combined":
        return preds[:, 0], preds[:, 1]
    if batch.variant == "modulo_only":
        return preds[:, 0], None
    return None, preds[:, 0]
