"""Transformer-backed adapter backends.

Each backend owns one model and answers exactly one capability. Loading
happens before the handshake, so a missing or broken checkpoint exits
nonzero without ever speaking the protocol. Inference is deterministic:
fixed seed, eval mode, greedy decoding, single-threaded torch.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
from transformers import (
    AutoModel,
    AutoModelForCausalLM,
    AutoModelForSequenceClassification,
    AutoTokenizer,
    logging as hf_logging,
)

hf_logging.set_verbosity_error()


@dataclass
class AdapterBackendConfig:
    model: str
    device: str = "cpu"
    batch_size: int = 1
    max_seq_len: int = 512

    def __post_init__(self) -> None:
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.max_seq_len < 8:
            raise ValueError(f"max_seq_len must be >= 8, got {self.max_seq_len}")


def _deterministic() -> None:
    torch.manual_seed(0)
    torch.set_num_threads(1)


def _effective_max_len(cfg: AdapterBackendConfig, model) -> int:
    # never exceed the model's positional capacity
    positions = getattr(model.config, "max_position_embeddings", 0) or cfg.max_seq_len
    return min(cfg.max_seq_len, int(positions))


class ScorerBackend:
    """Cross-encoder relevance scorer over (query, document) pairs."""

    ops = ("score",)

    def __init__(self, cfg: AdapterBackendConfig, name: str = "refadapter-score"):
        _deterministic()
        self.cfg = cfg
        self.name = name
        self.tokenizer = AutoTokenizer.from_pretrained(cfg.model)
        self.model = AutoModelForSequenceClassification.from_pretrained(cfg.model)
        self.model.to(cfg.device).eval()
        self.max_len = _effective_max_len(cfg, self.model)

    def hello(self) -> dict:
        return {"name": self.name, "ops": list(self.ops)}

    @torch.no_grad()
    def handle(self, request: dict) -> dict:
        encoded = self.tokenizer(
            request["query"], request["text"],
            truncation=True, max_length=self.max_len, return_tensors="pt",
        ).to(self.cfg.device)
        logits = self.model(**encoded).logits[0]
        if logits.shape[-1] == 1:
            score = float(logits[0])
        else:
            # multi-class heads approximate relevance by the positive class
            score = float(torch.softmax(logits, dim=-1)[-1])
        return {"score": score}


class ClassifierBackend:
    """Zero-shot promotion classifier; prob is the positive-class softmax."""

    ops = ("classify",)

    def __init__(self, cfg: AdapterBackendConfig, name: str = "refadapter-classify",
                 positive_label: int = 1):
        _deterministic()
        self.cfg = cfg
        self.name = name
        self.positive_label = positive_label
        self.tokenizer = AutoTokenizer.from_pretrained(cfg.model)
        self.model = AutoModelForSequenceClassification.from_pretrained(cfg.model)
        self.model.to(cfg.device).eval()
        if self.model.config.num_labels <= positive_label:
            raise ValueError(
                f"model has {self.model.config.num_labels} labels; "
                f"positive label {positive_label} out of range"
            )
        self.max_len = _effective_max_len(cfg, self.model)

    def hello(self) -> dict:
        return {"name": self.name, "ops": list(self.ops)}

    @torch.no_grad()
    def handle(self, request: dict) -> dict:
        encoded = self.tokenizer(
            request["text"], truncation=True, max_length=self.max_len,
            return_tensors="pt",
        ).to(self.cfg.device)
        logits = self.model(**encoded).logits[0]
        prob = float(torch.softmax(logits, dim=-1)[self.positive_label])
        return {"prob": min(max(prob, 0.0), 1.0)}


class EmbedderBackend:
    """Sentence embeddings by mean pooling token embeddings under the mask."""

    ops = ("embed",)

    def __init__(self, cfg: AdapterBackendConfig, name: str = "refadapter-embed"):
        _deterministic()
        self.cfg = cfg
        self.name = name
        self.tokenizer = AutoTokenizer.from_pretrained(cfg.model)
        self.model = AutoModel.from_pretrained(cfg.model)
        self.model.to(cfg.device).eval()
        self.dim = int(self.model.config.hidden_size)
        self.max_len = _effective_max_len(cfg, self.model)

    def hello(self) -> dict:
        return {"name": self.name, "ops": list(self.ops), "dim": self.dim}

    @torch.no_grad()
    def handle(self, request: dict) -> dict:
        encoded = self.tokenizer(
            request["text"], truncation=True, max_length=self.max_len,
            return_tensors="pt",
        ).to(self.cfg.device)
        hidden = self.model(**encoded).last_hidden_state[0]
        mask = encoded["attention_mask"][0].unsqueeze(-1)
        pooled = (hidden * mask).sum(dim=0) / mask.sum().clamp(min=1)
        return {"vector": [float(v) for v in pooled]}


class GeneratorBackend:
    """Greedy causal-LM generation; prompts truncate from the left so the
    trailing priming text survives."""

    ops = ("generate",)

    def __init__(self, cfg: AdapterBackendConfig, name: str = "refadapter-generate"):
        _deterministic()
        self.cfg = cfg
        self.name = name
        self.tokenizer = AutoTokenizer.from_pretrained(cfg.model)
        self.tokenizer.truncation_side = "left"
        self.model = AutoModelForCausalLM.from_pretrained(cfg.model)
        self.model.to(cfg.device).eval()
        self.positions = int(getattr(self.model.config, "max_position_embeddings", 0)
                             or getattr(self.model.config, "n_positions", cfg.max_seq_len))
        if self.tokenizer.pad_token_id is None:
            self.tokenizer.pad_token = self.tokenizer.eos_token

    def hello(self) -> dict:
        return {"name": self.name, "ops": list(self.ops)}

    @torch.no_grad()
    def handle(self, request: dict) -> dict:
        max_tokens = int(request.get("max_tokens", 128))
        if max_tokens < 1:
            raise ValueError(f"max_tokens must be >= 1, got {max_tokens}")
        prompt_budget = max(min(self.cfg.max_seq_len, self.positions) - max_tokens, 8)
        encoded = self.tokenizer(
            request["prompt"], truncation=True, max_length=prompt_budget,
            return_tensors="pt",
        ).to(self.cfg.device)
        output = self.model.generate(
            **encoded,
            do_sample=False,
            max_new_tokens=max_tokens,
            pad_token_id=self.tokenizer.pad_token_id,
        )
        continuation = output[0][encoded["input_ids"].shape[1]:]
        return {"text": self.tokenizer.decode(continuation, skip_special_tokens=True)}


BACKENDS = {
    "score": ScorerBackend,
    "classify": ClassifierBackend,
    "embed": EmbedderBackend,
    "generate": GeneratorBackend,
}
