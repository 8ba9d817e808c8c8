"""Tiny randomly-initialised checkpoints so the protocol tests run offline.

The weights are meaningless but fully deterministic, which is exactly what
the conformance and regression-stability checks need.
"""

import os

import pytest
import torch
from tokenizers import Tokenizer, decoders, models, pre_tokenizers
from transformers import (
    BertConfig, BertForSequenceClassification, BertModel, BertTokenizerFast,
    GPT2Config, GPT2LMHeadModel, PreTrainedTokenizerFast,
)

os.environ.setdefault("HF_HUB_OFFLINE", "1")

_WORDS = [
    "[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]",
    "the", "a", "of", "is", "what", "capital", "france", "paris", "europe",
    "country", "its", "and", "in", "text", "about", "unrelated", "motorcycles",
    "completely", "mitochondria", "powerhouse", "cell", "document", "item",
    "promo", "buy", "best", "sky", "blue", "acme", "response",
]


def _save_bert_tokenizer(path) -> None:
    vocab_file = path / "vocab.txt"
    vocab_file.write_text("\n".join(_WORDS) + "\n", encoding="utf-8")
    BertTokenizerFast(vocab_file=str(vocab_file)).save_pretrained(str(path))


def _bert_config(num_labels: int) -> BertConfig:
    return BertConfig(
        vocab_size=len(_WORDS), hidden_size=32, num_hidden_layers=2,
        num_attention_heads=2, intermediate_size=64, max_position_embeddings=128,
        num_labels=num_labels,
    )


@pytest.fixture(scope="session")
def scorer_model(tmp_path_factory):
    path = tmp_path_factory.mktemp("tiny-scorer")
    _save_bert_tokenizer(path)
    torch.manual_seed(11)
    BertForSequenceClassification(_bert_config(num_labels=1)).save_pretrained(str(path))
    return str(path)


@pytest.fixture(scope="session")
def classifier_model(tmp_path_factory):
    path = tmp_path_factory.mktemp("tiny-classifier")
    _save_bert_tokenizer(path)
    torch.manual_seed(12)
    BertForSequenceClassification(_bert_config(num_labels=2)).save_pretrained(str(path))
    return str(path)


@pytest.fixture(scope="session")
def embedder_model(tmp_path_factory):
    path = tmp_path_factory.mktemp("tiny-embedder")
    _save_bert_tokenizer(path)
    torch.manual_seed(13)
    BertModel(_bert_config(num_labels=2)).save_pretrained(str(path))
    return str(path)


def _byte_vocab() -> dict[str, int]:
    bs = (list(range(ord("!"), ord("~") + 1))
          + list(range(ord("¡"), ord("¬") + 1))
          + list(range(ord("®"), ord("ÿ") + 1)))
    cs = bs[:]
    n = 0
    for b in range(2**8):
        if b not in bs:
            bs.append(b)
            cs.append(2**8 + n)
            n += 1
    return {chr(c): i for i, c in enumerate(cs)}


@pytest.fixture(scope="session")
def generator_model(tmp_path_factory):
    path = tmp_path_factory.mktemp("tiny-generator")
    vocab = _byte_vocab()
    vocab["<|endoftext|>"] = len(vocab)
    tok = Tokenizer(models.BPE(vocab=vocab, merges=[]))
    tok.pre_tokenizer = pre_tokenizers.ByteLevel(add_prefix_space=False)
    tok.decoder = decoders.ByteLevel()
    PreTrainedTokenizerFast(
        tokenizer_object=tok, eos_token="<|endoftext|>", pad_token="<|endoftext|>"
    ).save_pretrained(str(path))
    torch.manual_seed(14)
    eot = vocab["<|endoftext|>"]
    GPT2LMHeadModel(GPT2Config(
        vocab_size=len(vocab), n_positions=512, n_embd=32, n_layer=2, n_head=2,
        bos_token_id=eot, eos_token_id=eot,
    )).save_pretrained(str(path))
    return str(path)
