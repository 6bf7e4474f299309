"""Frontend features -> encoder -> adaptor -> decoder LM, wired together."""

from __future__ import annotations

from dataclasses import dataclass, field

from . import autograd as ag
from .adaptor import AdaptorConfig, build_adaptor
from .encoder import EncoderConfig, build_encoder, pad_features
from .errors import ConfigError
from .frontend import FrontendConfig
from .lm import LMConfig, assemble, batch_targets, build_lm
from .nn import Module
from .vocab import Vocabulary


@dataclass
class ModelConfig:
    frontend: FrontendConfig = field(default_factory=FrontendConfig)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    adaptor: AdaptorConfig = field(default_factory=AdaptorConfig)
    lm: LMConfig = field(default_factory=LMConfig)

    def check(self):
        if self.encoder.n_mels != self.frontend.n_mels:
            raise ConfigError(f"encoder n_mels={self.encoder.n_mels} != frontend n_mels={self.frontend.n_mels}")
        if self.adaptor.in_dim != self.encoder.d_model:
            raise ConfigError(f"adaptor in_dim={self.adaptor.in_dim} != encoder d_model={self.encoder.d_model}")
        if self.adaptor.out_dim != self.lm.d_model:
            raise ConfigError(f"adaptor out_dim={self.adaptor.out_dim} != LM d_model={self.lm.d_model}")


class SpeechTranslator(Module):
    def __init__(self, cfg: ModelConfig, vocab: Vocabulary, seed: int = 0):
        cfg.lm.vocab_size = len(vocab)
        cfg.check()
        self.cfg = cfg
        self.vocab = vocab
        self.encoder = build_encoder(cfg.encoder, seed)
        self.adaptor = build_adaptor(cfg.adaptor, seed)
        self.lm = build_lm(cfg.lm, seed)

    def audio_rows(self, feats):
        """Adapted speech rows, one ``[T'_i, d_lm]`` tensor per utterance."""
        frames, lengths = pad_features([f.astype(ag.default_dtype()) for f in feats])
        z, lens = self.encoder(frames, lengths)
        h = self.adaptor(z)
        return [h[b, : int(n)] for b, n in enumerate(lens)]

    def prompts(self, examples):
        """``examples``: ``(features [T, n_mels], prompt_text, target_text or None)`` triples."""
        rows = self.audio_rows([e[0] for e in examples])
        return [assemble(self.vocab, p, r, t) for (_, p, t), r in zip(examples, rows)]

    def loss(self, examples):
        """Mean NLL over every masked target position in the batch."""
        prompts = self.prompts(examples)
        logits = self.lm(prompts)
        tgt, mask = batch_targets(prompts)
        return ag.masked_cross_entropy(logits, tgt, mask)
