"""The unified speech/text model: four Transformer stacks plus modality I/O.

TTS and ASR share one structure but hold separate parameters: speech
encoder, speech decoder, text encoder and text decoder are independent
stacks.  The trainable surface is exactly those four stacks plus the
speech pre-net, stop/mel heads, post-net, tied phoneme embedding and
the four direction-start embeddings.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .modality import (DirectionStartEmbeddings, DirectionTag, SpeechOutputHead,
                       SpeechPrenet, TiedPhonemeEmbedding, add_positions,
                       sinusoidal_positions)
from .transformer import (INFERENCE, ParamRegistry, TransformerConfig,
                          TransformerDecoder, TransformerEncoder)


@dataclass
class ModelConfig:
    transformer: TransformerConfig = field(default_factory=TransformerConfig)
    vocab_size: int = 43
    n_mels: int = 80
    prenet_hidden: int = 256
    prenet_dropout: float = 0.5
    postnet_hidden: int = 256
    postnet_layers: int = 5
    postnet_kernel: int = 5


STACK_NAMES = ("speech_enc", "speech_dec", "text_enc", "text_dec")


class ModelParameters:
    """All trainable state, addressable by flat parameter names."""

    def __init__(self, cfg: ModelConfig, seed=0):
        rng = np.random.default_rng(np.random.SeedSequence(seed))
        reg = ParamRegistry()
        t = cfg.transformer
        self.cfg = cfg
        self.speech_enc = TransformerEncoder(rng, reg, "speech_enc", t)
        self.speech_dec = TransformerDecoder(rng, reg, "speech_dec", t)
        self.text_enc = TransformerEncoder(rng, reg, "text_enc", t)
        self.text_dec = TransformerDecoder(rng, reg, "text_dec", t)
        self.prenet = SpeechPrenet(rng, reg, cfg.n_mels, cfg.prenet_hidden,
                                   t.model_dim, cfg.prenet_dropout)
        self.speech_head = SpeechOutputHead(rng, reg, t.model_dim, cfg.n_mels,
                                            cfg.postnet_hidden,
                                            cfg.postnet_layers,
                                            cfg.postnet_kernel)
        self.embed = TiedPhonemeEmbedding(rng, reg, cfg.vocab_size, t.model_dim)
        self.starts = DirectionStartEmbeddings(rng, reg, t.model_dim)
        self.pe = sinusoidal_positions(t.max_len, t.model_dim)
        self.params = reg.params

    # ------------------------------------------------------------------
    # encoder-side assembly

    def encode_speech(self, mel, frame_ok, ctx=INFERENCE):
        """mel [B, T, n_mels] -> hidden [B, T, D]; frame_ok marks real frames."""
        x = add_positions(self.prenet(Tensor(mel), ctx), self.pe)
        return self.speech_enc(x, frame_ok, ctx)

    def encode_text(self, ids, tok_ok, ctx=INFERENCE):
        x = add_positions(self.embed.lookup(ids), self.pe)
        return self.text_enc(x, tok_ok, ctx)

    # ------------------------------------------------------------------
    # decoder-side assembly (teacher forcing)

    def _start_tile(self, domain, direction, batch, use_start):
        """[B, 1, D] start element: learned vector, or zeros when the
        bidirectional start embeddings are disabled."""
        d = self.cfg.transformer.model_dim
        if not use_start:
            return Tensor(np.zeros((batch, 1, d)))
        vec = self.starts.get(domain, direction)
        ones = Tensor(np.ones((batch, 1, 1)))
        return ad.mul(ones, ad.reshape(vec, (1, 1, d)))

    def speech_decoder_inputs(self, target_mel, direction, ctx, use_start=True):
        """Shifted teacher-forcing inputs: [start, prenet(frame_0..T-2)] + PE."""
        b, t, _ = target_mel.shape
        start = self._start_tile("speech", direction, b, use_start)
        if t > 1:
            prev = self.prenet(Tensor(target_mel[:, :-1]), ctx)
            seq = ad.concat([start, prev], axis=1)
        else:
            seq = start
        return add_positions(seq, self.pe)

    def text_decoder_inputs(self, target_ids, direction, ctx, use_start=True):
        b, t = target_ids.shape
        start = self._start_tile("text", direction, b, use_start)
        if t > 1:
            prev = self.embed.lookup(target_ids[:, :-1])
            seq = ad.concat([start, prev], axis=1)
        else:
            seq = start
        return add_positions(seq, self.pe)

    def decode_speech_train(self, enc_hidden, src_ok, target_mel, frame_ok,
                            direction, ctx, use_start=True):
        """Teacher-forced speech decode -> (mel_before, mel_after, stop_logits)."""
        x = self.speech_decoder_inputs(target_mel, direction, ctx, use_start)
        hidden = self.speech_dec(x, enc_hidden, src_ok, ctx, tgt_ok=frame_ok)
        return self.speech_head(hidden, frame_ok)

    def decode_text_train(self, enc_hidden, src_ok, target_ids, tok_ok,
                          direction, ctx, use_start=True):
        """Teacher-forced text decode -> vocab logits [B, T, V]."""
        x = self.text_decoder_inputs(target_ids, direction, ctx, use_start)
        hidden = self.text_dec(x, enc_hidden, src_ok, ctx, tgt_ok=tok_ok)
        return self.embed.project(hidden)

    # ------------------------------------------------------------------

    def stack_param_names(self, stack):
        if stack not in STACK_NAMES:
            raise ValueError(f"unknown stack {stack}")
        return [n for n in self.params if n.startswith(stack + ".")]

    def snapshot(self):
        return {name: p.data.copy() for name, p in self.params.items()}
