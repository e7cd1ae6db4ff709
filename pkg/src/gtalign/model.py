"""Encoder + frozen decoder wired together for one task instance."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import Tensor
from .data import TaskInstance
from .decoder import DecoderModel, generate, loss_it, loss_prompt, loss_total, score_binary
from .encoder import EncoderInput, GraphTextEncoder

GENERIC = "generic"


@dataclass
class InstanceLoss:
    total: Tensor
    it: float
    prompt: float


class GraphTextModel:
    def __init__(self, encoder: GraphTextEncoder, decoder: DecoderModel):
        if encoder.config.d_h != decoder.config.d:
            raise ValueError(f"encoder width {encoder.config.d_h} != decoder width {decoder.config.d}")
        self.encoder = encoder
        self.decoder = decoder

    @property
    def vocab(self):
        return self.encoder.vocab

    def encoder_input(self, inst: TaskInstance, generic_prompt: bool = False) -> EncoderInput:
        key = (self.encoder, generic_prompt)
        if key not in inst.cache:
            desc = GENERIC if generic_prompt else None
            inst.cache[key] = self.encoder.assemble_input(inst.sample, inst.family, desc)
        return inst.cache[key]

    def represent(self, inst: TaskInstance, generic_prompt: bool = False, zero_align: bool = False) -> Tensor:
        """H_A for ``inst``; ``zero_align`` replaces it with zeros (no alignment tokens)."""
        if zero_align:
            return Tensor(np.zeros((self.encoder.align.count, self.encoder.config.d_h), dtype=self.decoder.dtype))
        return self.encoder.encode(self.encoder_input(inst, generic_prompt)).H_A

    def loss(self, inst: TaskInstance, **kw) -> InstanceLoss:
        H = self.represent(inst, **kw)
        v = self.vocab
        l_it = loss_it(self.decoder, H, inst.detail_tokens, inst.target_tokens, v.bos, v.pad)
        l_pr = loss_prompt(self.decoder, H, inst.reconstruction_tokens, v.bos, v.pad)
        return InstanceLoss(loss_total(l_it, l_pr), float(l_it.data), float(l_pr.data))

    def generate(self, inst: TaskInstance, max_len: int = 6, **kw) -> list[int]:
        H = self.represent(inst, **kw)
        return generate(self.decoder, H, inst.detail_tokens, max_len, self.vocab.bos, self.vocab.eos)

    def score_binary(self, inst: TaskInstance, **kw) -> float:
        H = self.represent(inst, **kw)
        return score_binary(self.decoder, H, inst.detail_tokens, self.vocab.yes, self.vocab.no, self.vocab.bos)
