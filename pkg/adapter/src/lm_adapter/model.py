"""Tiny byte-level causal language model over tabular sentences.

A small GPT-2-architecture model with a fixed byte vocabulary: any
UTF-8 sentence tokenizes without an external tokenizer file, and
unseen values at fine-tuning time cannot fall out of vocabulary. The
`pretrain` entry builds base weights on generated "Column: value, ..."
sentences; `serve` fine-tunes a copy per train request.

Two models are fitted per request, one for parent sentences and one for
child sentences conditioned on their parent sentence (the conditioning
prefix is joined with a newline byte, which never occurs inside a
sentence).
"""

from __future__ import annotations

import json
import math
import random
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from transformers import GPT2Config, GPT2LMHeadModel

BOS = 256
EOS = 257
PAD = 258
VOCAB_SIZE = 259
SEP_BYTE = 10  # "\n" joins conditioning prefix and sentence

MAX_POSITIONS = 512


def encode_text(text: str) -> list[int]:
    return list(text.encode("utf-8"))


def decode_ids(ids: list[int]) -> str:
    data = bytes(i for i in ids if 0 <= i < 256)
    return data.decode("utf-8", errors="replace")


def model_config() -> GPT2Config:
    return GPT2Config(
        vocab_size=VOCAB_SIZE,
        n_positions=MAX_POSITIONS,
        n_embd=128,
        n_layer=2,
        n_head=4,
        bos_token_id=BOS,
        eos_token_id=EOS,
    )


def _batches(sequences: list[list[int]], batch_size: int, rng: random.Random):
    order = list(range(len(sequences)))
    rng.shuffle(order)
    for start in range(0, len(order), batch_size):
        chunk = [sequences[i] for i in order[start : start + batch_size]]
        width = max(len(s) for s in chunk)
        input_ids = torch.full((len(chunk), width), PAD, dtype=torch.long)
        labels = torch.full((len(chunk), width), -100, dtype=torch.long)
        mask = torch.zeros((len(chunk), width), dtype=torch.long)
        for row, seq in enumerate(chunk):
            input_ids[row, : len(seq)] = torch.tensor(seq, dtype=torch.long)
            labels[row, : len(seq)] = torch.tensor(seq, dtype=torch.long)
            mask[row, : len(seq)] = 1
        yield input_ids, labels, mask


def train_model(
    model: GPT2LMHeadModel,
    sequences: list[list[int]],
    epochs: int,
    batch_size: int,
    seed: int,
    lr: float = 3e-4,
) -> float:
    """AdamW training loop; returns the final-epoch mean loss."""
    torch.manual_seed(seed)
    rng = random.Random(seed)
    sequences = [s[:MAX_POSITIONS] for s in sequences]
    optimizer = torch.optim.AdamW(model.parameters(), lr=lr)
    model.train()
    last = math.nan
    for _ in range(epochs):
        total, steps = 0.0, 0
        for input_ids, labels, mask in _batches(sequences, batch_size, rng):
            out = model(input_ids=input_ids, attention_mask=mask, labels=labels)
            out.loss.backward()
            optimizer.step()
            optimizer.zero_grad()
            total += float(out.loss.detach())
            steps += 1
        last = total / max(steps, 1)
    model.eval()
    return last


@dataclass
class GenerationSettings:
    temperature: float = 0.45
    top_k: int = 15
    max_new_tokens: int = 200


@torch.no_grad()
def generate_sentence(
    model: GPT2LMHeadModel,
    prefix_ids: list[int],
    settings: GenerationSettings,
) -> str:
    """Sample one sentence (byte ids until EOS) after the given prefix."""
    ids = torch.tensor([prefix_ids], dtype=torch.long)
    out = model.generate(
        ids,
        do_sample=True,
        temperature=settings.temperature,
        top_k=settings.top_k,
        max_new_tokens=settings.max_new_tokens,
        eos_token_id=EOS,
        pad_token_id=PAD,
    )
    generated = out[0, len(prefix_ids) :].tolist()
    if EOS in generated:
        generated = generated[: generated.index(EOS)]
    return decode_ids(generated)


def parent_sequence(sentence: str) -> list[int]:
    return [BOS] + encode_text(sentence) + [EOS]


def child_sequence(conditioning: str | None, sentence: str) -> list[int]:
    prefix = encode_text(conditioning) + [SEP_BYTE] if conditioning else []
    return [BOS] + prefix + encode_text(sentence) + [EOS]


def child_prefix(conditioning: str | None) -> list[int]:
    if conditioning:
        return [BOS] + encode_text(conditioning) + [SEP_BYTE]
    return [BOS]


# ---------------------------------------------------------------------------
# Local pretraining corpus: generic "Column: value" sentence structure.

_WORDS = (
    "amber basil cedar delta ember fern garnet hazel iris jade kale lotus "
    "maple nectar olive pearl quartz rowan sage thyme umber violet willow "
    "yarrow zinnia north south east west spring summer autumn winter"
).split()

_COLUMN_WORDS = (
    "Item Price Region Status Level Group Rating Channel Device Category "
    "Color Size Brand Count Type Grade Cohort Source Target Window"
).split()


def pretraining_sentences(n: int, seed: int) -> list[str]:
    """Sentences over random small schemas, teaching the clause grammar."""
    rng = random.Random(seed)
    sentences = []
    for _ in range(n):
        n_cols = rng.randint(2, 6)
        names = rng.sample(_COLUMN_WORDS, n_cols)
        clauses = []
        for name in names:
            if rng.random() < 0.5:
                value = str(rng.randint(0, 999))
            else:
                value = rng.choice(_WORDS)
                if rng.random() < 0.2:
                    value += f" {rng.choice(_WORDS)}"
            clauses.append(f"{name}: {value}")
        sentences.append(", ".join(clauses))
    return sentences


def pretrain(
    out_dir: str | Path,
    n_sentences: int = 2000,
    epochs: int = 2,
    batch_size: int = 16,
    seed: int = 0,
) -> Path:
    """Build and save base weights on a generated tabular-sentence corpus."""
    out_dir = Path(out_dir)
    torch.manual_seed(seed)
    np.random.seed(seed)
    model = GPT2LMHeadModel(model_config())
    sentences = pretraining_sentences(n_sentences, seed)
    sequences = [parent_sequence(s) for s in sentences]
    loss = train_model(model, sequences, epochs=epochs, batch_size=batch_size, seed=seed)
    out_dir.mkdir(parents=True, exist_ok=True)
    model.save_pretrained(out_dir)
    (out_dir / "pretrain_meta.json").write_text(
        json.dumps(
            {
                "n_sentences": n_sentences,
                "epochs": epochs,
                "batch_size": batch_size,
                "seed": seed,
                "final_loss": loss,
                "vocab": "byte-level (256 bytes + BOS/EOS/PAD)",
            },
            indent=2,
        )
        + "\n"
    )
    return out_dir


def load_pretrained(model_dir: str | Path) -> GPT2LMHeadModel:
    model_dir = Path(model_dir)
    if not model_dir.exists():
        raise FileNotFoundError(
            f"model weights not found at {model_dir}; run the pretrain command first"
        )
    model = GPT2LMHeadModel.from_pretrained(model_dir)
    model.eval()
    return model
