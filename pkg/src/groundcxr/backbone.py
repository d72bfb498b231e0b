"""Cross-modal text stack: image-conditioned matching encoder and causal
report decoder sharing one set of transformer parameters.

The two modes differ only in the self-attention mask (bidirectional vs
causal), the start token ([ENC] vs [BOS]), and the output head (binary
match logits vs vocabulary logits).
"""

from __future__ import annotations

import numpy as np

from .autodiff import Tensor, embedding
from .encoders import EncoderConfig
from .modules import CrossModalLayer, LayerNorm, Linear, Module, causal_bias, uniform_init
from .tokenizer import BOS, ENC, EOS, PAD


class CrossModalBackbone(Module):
    def __init__(self, rng: np.random.Generator, config: EncoderConfig):
        dim = config.hidden_dim
        self.config = config
        self.token_embed = Tensor(
            uniform_init(rng, dim, (config.vocab_size, dim)), requires_grad=True
        )
        self.pos_embed = Tensor(
            uniform_init(rng, dim, (1, config.max_text_len, dim)), requires_grad=True
        )
        self.layers = [
            CrossModalLayer(rng, dim, config.num_heads) for _ in range(config.num_layers)
        ]
        self.final_norm = LayerNorm(dim)
        self.match_head = Linear(rng, dim, 2)
        self.lm_head = Linear(rng, dim, config.vocab_size)

    # -- shared trunk --------------------------------------------------------

    def _run(
        self,
        ids: np.ndarray,
        mask: np.ndarray,
        visual: Tensor,
        causal: bool,
    ) -> Tensor:
        ids = np.asarray(ids)
        mask = np.asarray(mask, dtype=bool)
        if ids.ndim == 1:
            ids, mask = ids[None], mask[None]
        length = ids.shape[1]
        if length > self.config.max_text_len:
            raise ValueError(f"sequence length {length} exceeds max_text_len")
        x = embedding(self.token_embed, ids) + self.pos_embed[:, :length, :]
        bias = causal_bias(length) if causal else None
        for layer in self.layers:
            x = layer(x, visual, self_mask=mask, causal_bias=bias)
        return self.final_norm(x)

    # -- matching mode -------------------------------------------------------

    def encode_pair(
        self, ids: np.ndarray, mask: np.ndarray, visual: Tensor
    ) -> tuple[Tensor, Tensor]:
        """[ENC]-led report tokens cross-attend to image states.

        Returns (token states (B, L, D), match logits (B, 2)).
        """
        ids = np.atleast_2d(np.asarray(ids))
        if (ids[:, 0] != ENC).any():
            raise ValueError("matching sequences must start with [ENC]")
        states = self._run(ids, mask, visual, causal=False)
        return states, self.match_head(states[:, 0, :])

    # -- generation mode -----------------------------------------------------

    def decode_logits(self, ids: np.ndarray, mask: np.ndarray, visual: Tensor) -> Tensor:
        """Teacher-forced next-token logits (B, L, V); position t sees only
        tokens < t plus the visual states."""
        ids = np.atleast_2d(np.asarray(ids))
        if (ids[:, 0] != BOS).any():
            raise ValueError("decoder sequences must start with [BOS]")
        states = self._run(ids, mask, visual, causal=True)
        return self.lm_head(states)

    def greedy_decode(self, visual: Tensor, max_len: int) -> list[int]:
        """Deterministic argmax decoding from [BOS] until [EOS] or max_len.

        Returns generated token ids without the [BOS]/[EOS] markers.
        `visual` is a single sample's conditioning states (1, L, D).
        """
        if max_len < 1:
            raise ValueError("max_len must be >= 1")
        prefix = [BOS]
        out: list[int] = []
        for _ in range(max_len):
            ids = np.asarray(prefix, dtype=np.int64)[None, :]
            mask = np.ones_like(ids, dtype=bool)
            logits = self.decode_logits(ids, mask, visual)
            nxt = int(np.argmax(logits.data[0, -1]))  # argmax ties -> lowest id
            if nxt == EOS:
                break
            out.append(nxt)
            prefix.append(nxt)
            if len(prefix) >= self.config.max_text_len:
                break
        return out
