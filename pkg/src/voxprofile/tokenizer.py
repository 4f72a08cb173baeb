"""Byte-level BPE tokenization for prompts and descriptions.

A tokenizer is trained on the corpus captions at training time (hermetic, no
downloads) and saved next to the checkpoint so generation round-trips text
exactly.
"""

from __future__ import annotations

from tokenizers import Tokenizer
from tokenizers.decoders import ByteLevel as ByteLevelDecoder
from tokenizers.models import BPE
from tokenizers.pre_tokenizers import ByteLevel
from tokenizers.trainers import BpeTrainer

from .errors import DataError

PAD_TOKEN = "<|pad|>"
EOS_TOKEN = "<|eos|>"


class TextCodec:
    """Thin wrapper pinning the special tokens the LM relies on."""

    def __init__(self, tokenizer: Tokenizer):
        self.tokenizer = tokenizer
        self.pad_id = tokenizer.token_to_id(PAD_TOKEN)
        self.eos_id = tokenizer.token_to_id(EOS_TOKEN)
        if self.pad_id is None or self.eos_id is None:
            raise DataError("tokenizer is missing the pad/eos special tokens")

    @property
    def vocab_size(self) -> int:
        return self.tokenizer.get_vocab_size()

    def encode(self, text: str) -> list:
        return self.tokenizer.encode(text).ids

    def decode(self, ids) -> str:
        ids = [int(i) for i in ids if int(i) not in (self.pad_id, self.eos_id)]
        return self.tokenizer.decode(ids)

    def save(self, path) -> None:
        self.tokenizer.save(str(path))

    @classmethod
    def load(cls, path) -> "TextCodec":
        return cls(Tokenizer.from_file(str(path)))


def train_codec(texts, vocab_size: int = 1500) -> TextCodec:
    """Train a byte-level BPE on the given texts."""
    texts = list(texts)
    if not texts:
        raise DataError("cannot train a tokenizer on an empty corpus")
    tokenizer = Tokenizer(BPE(unk_token=None))
    tokenizer.pre_tokenizer = ByteLevel(add_prefix_space=False)
    tokenizer.decoder = ByteLevelDecoder()
    trainer = BpeTrainer(
        vocab_size=vocab_size,
        special_tokens=[PAD_TOKEN, EOS_TOKEN],
        initial_alphabet=ByteLevel.alphabet(),
        show_progress=False,
    )
    tokenizer.train_from_iterator(texts, trainer=trainer)
    return TextCodec(tokenizer)
