"""Masked-infilling generator and scorer over instructions.

A smoothed categorical model over the five grammar slots (verb, size, color,
shape, adverb). Fitting is balanced: every distinct instruction counts once,
so duplicating the corpus changes nothing. Absent optional slots are ordinary
"none" values, which makes them maskable like any other position.

All conditionals derive from one add-k smoothed joint table, so sampling,
infilling and scoring are exactly consistent with each other.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import FitError
from .grammar import ADVERBS, COLOR_WORDS, SHAPE_WORDS, SIZE_WORDS, VERBS, Instruction
from .world import RngLike, as_rng

SLOT_NAMES = ("verb", "size", "color", "shape", "adverb")
SLOT_DOMAINS: tuple[tuple, ...] = (
    VERBS,
    (None,) + SIZE_WORDS,
    (None,) + COLOR_WORDS,
    SHAPE_WORDS,
    (None,) + ADVERBS,
)
_SHAPE = tuple(len(d) for d in SLOT_DOMAINS)

FORMAT_VERSION = 1


def _to_indices(instr: Instruction) -> tuple[int, ...]:
    values = (instr.verb, instr.size_word, instr.color_word, instr.shape_word, instr.adverb)
    return tuple(SLOT_DOMAINS[i].index(v) for i, v in enumerate(values))


def _from_indices(idx: Sequence[int]) -> Instruction:
    v = [SLOT_DOMAINS[i][j] for i, j in enumerate(idx)]
    return Instruction(v[0], v[1], v[2], v[3], v[4])


@dataclass
class InstructionModel:
    counts: np.ndarray
    k: float = 0.1
    _cond_cache: dict = field(default_factory=dict, repr=False)

    @property
    def smoothed(self) -> np.ndarray:
        return self.counts + self.k

    def save(self, path: str | Path) -> None:
        payload = {
            "version": FORMAT_VERSION,
            "k": self.k,
            "shape": list(_SHAPE),
            "counts": self.counts.ravel().tolist(),
        }
        Path(path).write_text(json.dumps(payload), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "InstructionModel":
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
        counts = np.asarray(payload["counts"], dtype=np.float64).reshape(payload["shape"])
        return cls(counts=counts, k=float(payload["k"]))


def fit(corpus: Iterable[Instruction], k: float = 0.1) -> InstructionModel:
    """Balanced fit: each unique instruction contributes one count."""
    counts = np.zeros(_SHAPE, dtype=np.float64)
    seen = set()
    for instr in corpus:
        idx = _to_indices(instr)
        if idx not in seen:
            seen.add(idx)
            counts[idx] += 1.0
    if not seen:
        raise FitError("cannot fit an instruction model on an empty corpus")
    return InstructionModel(counts=counts, k=k)


def _conditional(model: InstructionModel, slot: int, fixed: tuple) -> np.ndarray:
    """p(slot value | fixed slot values), marginalizing unfixed slots.

    `fixed` is a 5-tuple of value indices with None for free slots; slot
    `slot` itself must be free. Cached per (slot, fixed) pattern."""
    key = (slot, fixed)
    cached = model._cond_cache.get(key)
    if cached is not None:
        return cached
    table = model.smoothed
    index = tuple(slice(None) if f is None else f for f in fixed)
    sub = table[index]
    free_axes = [i for i, f in enumerate(fixed) if f is None]
    target_axis = free_axes.index(slot)
    other = tuple(a for a in range(sub.ndim) if a != target_axis)
    weights = sub.sum(axis=other) if other else sub
    probs = weights / weights.sum()
    model._cond_cache[key] = probs
    return probs


def score(model: InstructionModel, instr: Instruction) -> float:
    """Length-normalized log-likelihood under the left-to-right chain.

    The model's sequence has a fixed length (absent optional slots are
    padding tokens), so the normalizer is the slot count; this keeps a
    verbatim-seen instruction ahead of every unseen one. Higher is more
    in-distribution; ties in downstream rankings break on the realized token
    string."""
    idx = _to_indices(instr)
    total = 0.0
    fixed: list[int | None] = [None] * len(SLOT_NAMES)
    for slot, value in enumerate(idx):
        probs = _conditional(model, slot, tuple(fixed))
        total += float(np.log(probs[value]))
        fixed[slot] = value
    return total / len(SLOT_NAMES)


def sample_infill(model: InstructionModel, query: Instruction, mask_rate: float,
                  rng: RngLike) -> Instruction:
    """Mask each slot independently with probability mask_rate, then resample
    masked slots left to right conditioned on everything unmasked (and on
    already-resampled earlier slots)."""
    if not 0.0 <= mask_rate <= 1.0:
        raise ValueError(f"mask_rate must be in [0, 1], got {mask_rate}")
    gen = as_rng(rng)
    idx = list(_to_indices(query))
    masked = gen.random(len(idx)) < mask_rate
    if not masked.any():
        return query
    fixed: list[int | None] = [None if masked[i] else idx[i] for i in range(len(idx))]
    for slot in range(len(idx)):
        if not masked[slot]:
            continue
        probs = _conditional(model, slot, tuple(fixed))
        choice = int(gen.choice(len(probs), p=probs))
        idx[slot] = choice
        fixed[slot] = choice
    return _from_indices(idx)


def slot_marginal(model: InstructionModel, slot: int) -> np.ndarray:
    """Marginal distribution of one slot under the smoothed joint."""
    table = model.smoothed
    other = tuple(a for a in range(table.ndim) if a != slot)
    weights = table.sum(axis=other)
    return weights / weights.sum()
