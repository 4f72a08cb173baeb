import logging

import numpy as np
import pytest
import torch

from voxprofile.errors import DataError, ParameterError, ShapeError
from voxprofile.lm import (
    ASSEMBLED_LEN,
    PROMPT_LEN,
    LMConfig,
    TinyCausalLM,
    assemble_prefix,
    build_backbone,
    generate,
    lm_logits,
    set_trainable,
)
from voxprofile.tokenizer import train_codec

VOCAB = 300


@pytest.fixture(scope="module")
def codec():
    texts = [
        "The speaker is female.",
        "The speaker is male.",
        "A northern dialect colors this voice.",
        "Describe the speaker.",
        "What is the speaker's gender?",
    ]
    return train_codec(texts * 3, vocab_size=VOCAB)


@pytest.fixture(scope="module")
def lm(codec):
    cfg = LMConfig(vocab_size=codec.vocab_size, layers=2, heads=4, ff_width=256,
                   max_positions=96, seed=0)
    return TinyCausalLM(cfg, pad_id=codec.pad_id, eos_id=codec.eos_id)


@pytest.fixture
def audio_prefix(rng):
    return torch.from_numpy(rng.standard_normal((40, 768))).float()


class TestAssemblePrefix:
    def test_ten_token_prompt_gives_50_positions(self, lm, audio_prefix):
        out = assemble_prefix(audio_prefix, list(range(1, 11)), lm)
        assert out.shape == (ASSEMBLED_LEN, 768)

    def test_short_prompt_left_padded(self, lm, audio_prefix, codec):
        prompt = [5, 6, 7]
        out = assemble_prefix(audio_prefix, prompt, lm)
        assert out.shape == (50, 768)
        pad_embed = lm.embed_tokens(torch.tensor([codec.pad_id]))[0]
        for pos in range(40, 47):
            torch.testing.assert_close(out[pos], pad_embed)
        torch.testing.assert_close(out[47], lm.embed_tokens(torch.tensor([5]))[0])

    def test_long_prompt_truncated_with_warning(self, lm, audio_prefix, caplog):
        with caplog.at_level(logging.WARNING, logger="voxprofile.lm"):
            out = assemble_prefix(audio_prefix, list(range(1, 15)), lm)
        assert out.shape == (50, 768)
        assert any("truncated" in r.message for r in caplog.records)

    def test_wrong_audio_shape_rejected(self, lm):
        with pytest.raises(ShapeError):
            assemble_prefix(torch.zeros(39, 768), [1, 2], lm)

    def test_batched(self, lm, rng):
        prefix = torch.from_numpy(rng.standard_normal((3, 40, 768))).float()
        ids = torch.tensor([[1, 2], [3, 4], [5, 6]])
        assert assemble_prefix(prefix, ids, lm).shape == (3, 50, 768)


class TestLMLogits:
    def test_logit_shape(self, lm, audio_prefix):
        prefix = assemble_prefix(audio_prefix, [1, 2, 3], lm)
        logits = lm_logits(prefix, [4, 5, 6, 7, 8], lm)
        assert logits.shape == (5, lm.vocab_size)

    def test_causality_probe(self, lm, audio_prefix):
        prefix = assemble_prefix(audio_prefix, [1, 2, 3], lm)
        base = torch.tensor([4, 5, 6, 7, 8])
        with torch.no_grad():
            logits_a = lm_logits(prefix, base, lm)
            changed = base.clone()
            changed[3] = 9  # target position j=4 (1-indexed)
            logits_b = lm_logits(prefix, changed, lm)
        torch.testing.assert_close(logits_a[:4], logits_b[:4], rtol=0, atol=0)
        assert not torch.allclose(logits_a[4], logits_b[4])

    def test_rows_softmax_normalize(self, lm, audio_prefix):
        prefix = assemble_prefix(audio_prefix, [1], lm)
        logits = lm_logits(prefix, [2, 3], lm)
        probs = torch.softmax(logits, dim=-1)
        torch.testing.assert_close(probs.sum(dim=-1), torch.ones(2), atol=1e-5, rtol=0)

    def test_empty_targets_rejected(self, lm, audio_prefix):
        prefix = assemble_prefix(audio_prefix, [1], lm)
        with pytest.raises(ShapeError):
            lm_logits(prefix, torch.zeros(0, dtype=torch.long), lm)

    def test_out_of_vocab_target_rejected(self, lm, audio_prefix):
        prefix = assemble_prefix(audio_prefix, [1], lm)
        with pytest.raises(DataError):
            lm_logits(prefix, [lm.vocab_size + 5], lm)


class TestGenerate:
    def test_greedy_is_deterministic(self, lm, codec, audio_prefix):
        prefix = assemble_prefix(audio_prefix, codec.encode("Describe the speaker."), lm)
        a = generate(prefix, lm, codec, max_len=12)
        b = generate(prefix, lm, codec, max_len=12)
        assert a == b

    def test_max_len_one_gives_one_token(self, lm, codec, audio_prefix):
        from voxprofile.lm import _sample

        prefix = assemble_prefix(audio_prefix, [1], lm)
        with torch.no_grad():
            ids = _sample(prefix, lm, 1, "greedy", 10, None)
        assert len(ids) == 1
        assert isinstance(generate(prefix, lm, codec, max_len=1), str)

    def test_zero_max_len_rejected(self, lm, codec, audio_prefix):
        prefix = assemble_prefix(audio_prefix, [1], lm)
        with pytest.raises(ParameterError):
            generate(prefix, lm, codec, max_len=0)

    def test_unknown_strategy_rejected(self, lm, codec, audio_prefix):
        prefix = assemble_prefix(audio_prefix, [1], lm)
        with pytest.raises(ParameterError):
            generate(prefix, lm, codec, max_len=3, strategy="nucleus")

    def test_topk_and_beam_run(self, lm, codec, audio_prefix):
        prefix = assemble_prefix(audio_prefix, [1], lm)
        gen = torch.Generator().manual_seed(0)
        assert isinstance(generate(prefix, lm, codec, max_len=5, strategy="top-k", rng=gen), str)
        assert isinstance(generate(prefix, lm, codec, max_len=5, strategy="beam"), str)


class TestFreezeControl:
    def test_frozen_params_identical_after_steps(self, codec, rng):
        cfg = LMConfig(vocab_size=codec.vocab_size, layers=1, heads=4, ff_width=128,
                       max_positions=96, seed=1)
        lm = TinyCausalLM(cfg, pad_id=codec.pad_id, eos_id=codec.eos_id)
        mapper_like = torch.nn.Linear(16, 40 * 768)
        set_trainable(lm, False)
        optim = torch.optim.Adam(list(lm.parameters()) + list(mapper_like.parameters()), lr=1e-2)
        before = {k: v.detach().clone() for k, v in lm.state_dict().items()}
        mapper_before = mapper_like.weight.detach().clone()
        x = torch.from_numpy(rng.standard_normal((2, 16))).float()
        for _ in range(10):
            prefix = mapper_like(x).view(2, 40, 768)
            assembled = assemble_prefix(prefix, torch.tensor([[1, 2], [3, 4]]), lm)
            logits = lm_logits(assembled, torch.tensor([[5, 6, 7], [8, 9, 10]]), lm)
            loss = torch.log_softmax(logits, dim=-1).mean()
            optim.zero_grad()
            loss.backward()
            optim.step()
        after = lm.state_dict()
        for key in before:
            assert torch.equal(before[key], after[key]), key
        assert not torch.equal(mapper_before, mapper_like.weight)

    def test_unfrozen_params_change(self, codec, rng):
        cfg = LMConfig(vocab_size=codec.vocab_size, layers=1, heads=4, ff_width=128,
                       max_positions=96, seed=2)
        lm = TinyCausalLM(cfg, pad_id=codec.pad_id, eos_id=codec.eos_id)
        set_trainable(lm, True)
        optim = torch.optim.Adam(lm.parameters(), lr=1e-2)
        before = {k: v.detach().clone() for k, v in lm.state_dict().items()}
        prefix = torch.from_numpy(rng.standard_normal((50, 768))).float()
        logits = lm_logits(prefix, [1, 2, 3], lm)
        loss = -torch.log_softmax(logits, dim=-1)[:, 0].sum()
        loss.backward()
        optim.step()
        changed = sum(
            0 if torch.equal(before[k], v) else 1 for k, v in lm.state_dict().items()
        )
        assert changed > 0


class TestBackboneRegistry:
    def test_unknown_backbone(self, codec):
        with pytest.raises(DataError):
            build_backbone("gpt5", LMConfig(vocab_size=10), codec.pad_id, codec.eos_id)

    def test_hf_backbone_requires_local_weights(self, monkeypatch):
        pytest.importorskip("transformers")
        monkeypatch.setenv("HF_HUB_OFFLINE", "1")
        try:
            backbone = build_backbone("hf:gpt2", LMConfig(), 0, 0)
        except DataError:
            pytest.skip("no local gpt2 weights available")
        assert backbone.width == 768
