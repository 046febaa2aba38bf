"""Example construction, compositional split classification, dataset
generation, and bit-exact serialization.

Hold-out predicates (an example belongs to a test split when it satisfies
exactly that split's predicate; TRAIN and split A satisfy none):

  B  instruction names a yellow square with the color word present
  C  resolved target is a red square
  D  target strictly south and west of the agent
  E  a size-2 circle referred to as "small"
  F  verb is push and the target has size 3
  G  adverb is "cautiously"
  H  verb is pull and adverb is "while spinning"
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Iterator, Mapping, Sequence

import numpy as np

from .errors import DataFormatError, GenerationError, UnresolvableError
from .grammar import (
    ADVERBS,
    COLOR_WORDS,
    SHAPE_WORDS,
    VERBS,
    Instruction,
    command_string,
    encode_words,
    parse_command_string,
    realize,
    resolve_target,
)
from .permuter import Permutation, identity_permutation, sample_permutation
from .permuter import apply as apply_permutation
from .world import Action, WorldState, new_random_state
from . import planner


class Split(Enum):
    TRAIN = "train"
    A = "a"
    B = "b"
    C = "c"
    D = "d"
    E = "e"
    F = "f"
    G = "g"
    H = "h"


TEST_SPLITS = (Split.A, Split.B, Split.C, Split.D, Split.E, Split.F, Split.G, Split.H)
HOLDOUT_SPLITS = (Split.B, Split.C, Split.D, Split.E, Split.F, Split.G, Split.H)


@dataclass(frozen=True)
class Example:
    state: WorldState
    instruction: Instruction
    actions: tuple[Action, ...]
    split: Split

    def to_record(self) -> dict:
        rec = self.state.to_record()
        rec["command"] = command_string(self.instruction)
        rec["target"] = ",".join(a.name for a in self.actions)
        rec["split"] = self.split.value
        return rec

    @classmethod
    def from_record(cls, record: Mapping) -> "Example":
        for fieldname in ("grid_size", "agent", "objects", "command", "target", "split"):
            if fieldname not in record:
                raise DataFormatError(f"missing field {fieldname!r}")
        return cls(
            state=WorldState.from_record(record),
            instruction=parse_command_string(record["command"]),
            actions=parse_target_string(record["target"]),
            split=Split(record["split"]),
        )


def parse_target_string(target: str) -> tuple[Action, ...]:
    names = [t for t in target.split(",") if t]
    try:
        return tuple(Action[name] for name in names)
    except KeyError as exc:
        raise DataFormatError(f"unknown action token {exc.args[0]!r}") from None


def classify(state: WorldState, instruction: Instruction) -> frozenset[Split]:
    """All hold-out predicates the (state, instruction) pair satisfies.

    Empty set means in-distribution. Requires a resolvable instruction."""
    target = resolve_target(instruction, state).object
    flags = set()
    if instruction.color_word == "yellow" and instruction.shape_word == "square":
        flags.add(Split.B)
    if target.shape == "square" and target.color == "red":
        flags.add(Split.C)
    if target.pos.x < state.agent.pos.x and target.pos.y > state.agent.pos.y:
        flags.add(Split.D)
    if instruction.size_word == "small" and target.shape == "circle" and target.size == 2:
        flags.add(Split.E)
    if instruction.verb == "push" and target.size == 3:
        flags.add(Split.F)
    if instruction.adverb == "cautiously":
        flags.add(Split.G)
    if instruction.verb == "pull" and instruction.adverb == "while_spinning":
        flags.add(Split.H)
    return frozenset(flags)


@dataclass
class DatasetConfig:
    seed: int
    train_count: int = 50_000
    split_counts: dict[Split, int] = field(
        default_factory=lambda: {s: 2_000 for s in TEST_SPLITS}
    )
    grid_size: int = 6
    min_objects: int = 3
    max_objects: int = 10
    max_attempts: int = 200
    #: Hold-out push/pull examples must displace the object at least one cell
    #: (guarantees e.g. that every Split-H target shows the spin-pull fragment).
    require_verb_effect_in_splits: bool = True
    verb_weights: dict[str, float] | None = None
    adverb_weights: dict[str, float] | None = None

    def __post_init__(self) -> None:
        if self.train_count < 0 or any(c < 0 for c in self.split_counts.values()):
            raise ValueError("example counts must be >= 0")
        if not 0 < self.min_objects <= self.max_objects <= self.grid_size ** 2 - 1:
            raise ValueError("bad object count range")

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "train_count": self.train_count,
            "split_counts": {s.value: c for s, c in self.split_counts.items()},
            "grid_size": self.grid_size,
            "min_objects": self.min_objects,
            "max_objects": self.max_objects,
            "max_attempts": self.max_attempts,
            "require_verb_effect_in_splits": self.require_verb_effect_in_splits,
            "verb_weights": self.verb_weights,
            "adverb_weights": self.adverb_weights,
        }


@dataclass
class Dataset:
    examples: list[Example]

    def split(self, split: Split) -> list[Example]:
        return [e for e in self.examples if e.split == split]

    def __len__(self) -> int:
        return len(self.examples)


def _candidate_instructions(state: WorldState, want: frozenset[Split]
                            ) -> list[Instruction]:
    """All unique-referent instructions whose classify set equals `want`.

    Resolution only depends on the (size, color, shape) description, so each
    description is resolved once and crossed with verb/adverb choices."""
    descs = []
    for shape, color, size in itertools.product(
        SHAPE_WORDS, (None,) + COLOR_WORDS, (None, "small", "big")
    ):
        probe = Instruction("walk_to", size, color, shape, None)
        try:
            res = resolve_target(probe, state)
        except UnresolvableError:
            continue
        if not res.unique:
            continue
        target = res.object
        flags = set()
        if color == "yellow" and shape == "square":
            flags.add(Split.B)
        if target.shape == "square" and target.color == "red":
            flags.add(Split.C)
        if target.pos.x < state.agent.pos.x and target.pos.y > state.agent.pos.y:
            flags.add(Split.D)
        if size == "small" and target.shape == "circle" and target.size == 2:
            flags.add(Split.E)
        descs.append((size, color, shape, target, flags))

    out = []
    for verb, adverb in itertools.product(VERBS, (None,) + ADVERBS):
        for size, color, shape, target, desc_flags in descs:
            flags = set(desc_flags)
            if verb == "push" and target.size == 3:
                flags.add(Split.F)
            if adverb == "cautiously":
                flags.add(Split.G)
            if verb == "pull" and adverb == "while_spinning":
                flags.add(Split.H)
            if frozenset(flags) == want:
                out.append(Instruction(verb, size, color, shape, adverb))
    return out


def _instruction_weights(instructions: Sequence[Instruction], config: DatasetConfig
                         ) -> np.ndarray | None:
    if not config.verb_weights and not config.adverb_weights:
        return None
    vw = config.verb_weights or {}
    aw = config.adverb_weights or {}
    w = np.array(
        [vw.get(i.verb, 1.0) * aw.get(i.adverb or "none", 1.0) for i in instructions],
        dtype=np.float64,
    )
    total = w.sum()
    if total <= 0:
        return None
    return w / total


def generate_example(rng: np.random.Generator, config: DatasetConfig, split: Split
                     ) -> Example:
    want = frozenset() if split in (Split.TRAIN, Split.A) else frozenset({split})
    needs_effect = (
        config.require_verb_effect_in_splits and split in HOLDOUT_SPLITS
    )
    for _ in range(config.max_attempts):
        n_obj = int(rng.integers(config.min_objects, config.max_objects + 1))
        state = new_random_state(rng, config.grid_size, n_obj)
        candidates = _candidate_instructions(state, want)
        weights = _instruction_weights(candidates, config)
        while candidates:
            idx = int(rng.choice(len(candidates), p=weights))
            instr = candidates[idx]
            actions = planner.solve(state, instr)
            if needs_effect and instr.verb != "walk_to" and not any(
                a in (Action.PUSH, Action.PULL) for a in actions
            ):
                del candidates[idx]
                weights = _instruction_weights(candidates, config)
                continue
            return Example(state, instr, actions, split)
    raise GenerationError(
        f"no admissible example for split {split.value!r} after {config.max_attempts} attempts"
    )


def generate_dataset(config: DatasetConfig) -> Dataset:
    """Deterministic dataset generation: each example draws from its own RNG
    stream keyed by (seed, split index, example index), so the output does not
    depend on generation order or worker count."""
    examples: list[Example] = []
    splits = [(Split.TRAIN, config.train_count)]
    splits += [(s, config.split_counts.get(s, 0)) for s in TEST_SPLITS]
    for split_idx, (split, count) in enumerate(splits):
        for i in range(count):
            rng = np.random.default_rng([config.seed, split_idx, i])
            examples.append(generate_example(rng, config, split))
    return Dataset(examples)


def export_dataset(dataset: Dataset, path: str | Path) -> None:
    """One canonical JSON record per line, sorted keys, UTF-8: byte-identical
    for identical datasets."""
    with open(path, "w", encoding="utf-8") as fh:
        for example in dataset.examples:
            fh.write(json.dumps(example.to_record(), sort_keys=True, separators=(",", ":")))
            fh.write("\n")


def import_dataset(path: str | Path) -> Dataset:
    examples = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                examples.append(Example.from_record(json.loads(line)))
            except (DataFormatError, ValueError, KeyError, TypeError) as exc:
                raise DataFormatError(f"line {lineno}: {exc}") from None
    return Dataset(examples)


#: Action spellings accepted from the original environment's files.
_EXTERNAL_ACTIONS = {
    "turn left": Action.LTURN, "turn right": Action.RTURN, "walk": Action.WALK,
    "push": Action.PUSH, "pull": Action.PULL, "stay": Action.STAY,
}


def import_external_record(record: Mapping, direction_map: Mapping[int, int] | None = None,
                           split: Split = Split.TRAIN) -> Example:
    """Map the original environment's record shape (situation / command /
    target string) onto an Example. Rows become y, columns x; agent_direction
    integers are taken as-is unless a direction_map is given."""
    try:
        situation = record["situation"]
        agent_pos = situation["agent_position"]
        d = int(situation["agent_direction"])
        if direction_map is not None:
            d = int(direction_map[d])
        from .world import AgentPose, Heading, ObjectSpec, Position

        objects = []
        placed = situation.get("placed_objects", {})
        items = placed.values() if isinstance(placed, Mapping) else placed
        for entry in items:
            obj = entry["object"]
            pos = entry["position"]
            objects.append(
                ObjectSpec(obj["shape"], obj["color"], int(obj["size"]),
                           Position(int(pos["column"]), int(pos["row"])))
            )
        state = WorldState(
            grid_size=int(situation["grid_size"]),
            agent=AgentPose(
                Position(int(agent_pos["column"]), int(agent_pos["row"])), Heading(d)
            ),
            objects=tuple(objects),
        )
        instruction = parse_command_string(record["command"])
        actions = []
        for name in str(record["target_commands"]).split(","):
            name = name.strip()
            if not name:
                continue
            if name in _EXTERNAL_ACTIONS:
                actions.append(_EXTERNAL_ACTIONS[name])
            elif name.upper() in Action.__members__:
                actions.append(Action[name.upper()])
            else:
                raise DataFormatError(f"unknown action token {name!r}")
        return Example(state, instruction, tuple(actions),
                       Split(record.get("split", split.value)))
    except (KeyError, TypeError, ValueError) as exc:
        raise DataFormatError(f"bad external record: {exc}") from None


def export_icl_records(entries: Iterable, policy: str = "permute", seed: int = 0,
                       permute_words: bool = False) -> Iterator[dict]:
    """Serialize (example, supports) pairs into in-context-learning records.

    Each record carries the support triples and the query, with ONE shared
    permutation applied to every target sequence in the record when the
    policy is "permute". The permutation codes are stored so records stay
    decodable. `entries` yields (Example, list-of-support-triples) pairs where
    a triple is (WorldState, Instruction, actions-or-None).
    """
    if policy not in ("permute", "identity"):
        raise ValueError(f"unknown permutation policy {policy!r}")
    from .world import ACTION_TABLE_SIZE
    from .grammar import WORD_TABLE_SIZE

    for idx, (example, supports) in enumerate(entries):
        if not supports:
            raise DataFormatError(f"example {idx} has no supports attached")
        if policy == "permute":
            rng = np.random.default_rng([seed, idx])
            perm = sample_permutation(rng, ACTION_TABLE_SIZE)
            word_perm = sample_permutation(rng, WORD_TABLE_SIZE) if permute_words else None
        else:
            perm = identity_permutation(ACTION_TABLE_SIZE)
            word_perm = identity_permutation(WORD_TABLE_SIZE) if permute_words else None

        def encode_instruction(instr: Instruction) -> list[int]:
            codes = encode_words(realize(instr))
            return list(apply_permutation(word_perm, codes)) if word_perm else codes

        def encode_actions(actions) -> list[int] | None:
            if actions is None:
                return None
            return list(apply_permutation(perm, [int(a) for a in actions]))

        yield {
            "supports": [
                {
                    "state": s.to_record(),
                    "command": encode_instruction(i),
                    "target": encode_actions(a),
                }
                for (s, i, a) in supports
            ],
            "query": {
                "state": example.state.to_record(),
                "command": encode_instruction(example.instruction),
                "target": encode_actions(example.actions),
            },
            "permutation": perm.to_codes(),
            "word_permutation": word_perm.to_codes() if word_perm else None,
            "split": example.split.value,
        }


def decode_icl_targets(record: Mapping) -> list[tuple[int, ...]]:
    """Invert the stored permutation of an ICL record (supports then query)."""
    from .permuter import invert

    perm = invert(Permutation.from_codes(record["permutation"]))
    out = []
    for support in record["supports"]:
        target = support["target"]
        out.append(apply_permutation(perm, target) if target is not None else None)
    out.append(apply_permutation(perm, record["query"]["target"]))
    return out
