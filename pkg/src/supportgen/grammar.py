"""Instruction grammar: parsing, realization, grounding, and word symbols.

Instructions have the shape "[verb] a [size] [color] [shape] [adverb]" where
size, color and adverb may be omitted. realize() always emits that canonical
order; parse() additionally tolerates the color-before-size adjective order
seen in the wild, so parse(realize(i)) == i holds while foreign realizations
still round-trip through parse.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Iterator, Sequence

from .errors import GrammarError, LexicalError, UnresolvableError
from .world import ObjectSpec, WorldState

VERBS = ("walk_to", "push", "pull")
SIZE_WORDS = ("small", "big")
COLOR_WORDS = ("red", "green", "blue", "yellow")
SHAPE_WORDS = ("circle", "square", "cylinder")
ADVERBS = ("while_spinning", "while_zigzagging", "hesitantly", "cautiously")

_VERB_TOKENS = {"walk_to": ("walk", "to"), "push": ("push",), "pull": ("pull",)}
_ADVERB_TOKENS = {
    "while_spinning": ("while", "spinning"),
    "while_zigzagging": ("while", "zigzagging"),
    "hesitantly": ("hesitantly",),
    "cautiously": ("cautiously",),
}

#: Surface tokens accepted by the lexer.
LEXICON = frozenset(
    {"walk", "to", "push", "pull", "a", "while", "spinning", "zigzagging",
     "hesitantly", "cautiously"} | set(SIZE_WORDS) | set(COLOR_WORDS) | set(SHAPE_WORDS)
)

#: Token-to-code table. Multiword adverbs are single symbols; "yellow" takes
#: the remaining code 17.
WORD_CODES = {
    "a": 0, "big": 1, "blue": 2, "cautiously": 3, "circle": 4, "cylinder": 5,
    "green": 6, "hesitantly": 7, "pull": 8, "push": 9, "red": 10, "small": 11,
    "square": 12, "to": 13, "walk": 14, "while spinning": 15,
    "while zigzagging": 16, "yellow": 17,
}
CODE_WORDS = {v: k for k, v in WORD_CODES.items()}
WORD_TABLE_SIZE = len(WORD_CODES)


@dataclass(frozen=True, order=True)
class Instruction:
    verb: str
    size_word: str | None
    color_word: str | None
    shape_word: str
    adverb: str | None

    def __post_init__(self) -> None:
        if self.verb not in VERBS:
            raise ValueError(f"unknown verb {self.verb!r}")
        if self.size_word is not None and self.size_word not in SIZE_WORDS:
            raise ValueError(f"unknown size word {self.size_word!r}")
        if self.color_word is not None and self.color_word not in COLOR_WORDS:
            raise ValueError(f"unknown color word {self.color_word!r}")
        if self.shape_word not in SHAPE_WORDS:
            raise ValueError(f"unknown shape word {self.shape_word!r}")
        if self.adverb is not None and self.adverb not in ADVERBS:
            raise ValueError(f"unknown adverb {self.adverb!r}")

    def description(self) -> tuple[str | None, str | None, str]:
        """The surface object description (size, color, shape) triple."""
        return (self.size_word, self.color_word, self.shape_word)


@dataclass(frozen=True)
class TargetResolution:
    object: ObjectSpec
    unique: bool


def realize(instr: Instruction) -> list[str]:
    """Canonical token list: verb, "a", size, color, shape, adverb."""
    tokens = list(_VERB_TOKENS[instr.verb])
    tokens.append("a")
    if instr.size_word:
        tokens.append(instr.size_word)
    if instr.color_word:
        tokens.append(instr.color_word)
    tokens.append(instr.shape_word)
    if instr.adverb:
        tokens.extend(_ADVERB_TOKENS[instr.adverb])
    return tokens


def parse(tokens: Sequence[str]) -> Instruction:
    for tok in tokens:
        if tok not in LEXICON:
            raise LexicalError(f"unknown token {tok!r}")
    toks = list(tokens)

    def fail(reason: str) -> GrammarError:
        return GrammarError(f"cannot parse {' '.join(tokens)!r}: {reason}")

    if not toks:
        raise fail("empty instruction")
    if toks[0] == "walk":
        if len(toks) < 2 or toks[1] != "to":
            raise fail("'walk' must be followed by 'to'")
        verb, toks = "walk_to", toks[2:]
    elif toks[0] in ("push", "pull"):
        verb, toks = toks[0], toks[1:]
    else:
        raise fail(f"expected a verb, got {toks[0]!r}")

    if not toks or toks[0] != "a":
        raise fail("expected 'a' after the verb")
    toks = toks[1:]

    size_word = color_word = None
    while toks and (toks[0] in SIZE_WORDS or toks[0] in COLOR_WORDS):
        tok = toks.pop(0)
        if tok in SIZE_WORDS:
            if size_word is not None:
                raise fail("duplicate size word")
            size_word = tok
        else:
            if color_word is not None:
                raise fail("duplicate color word")
            color_word = tok

    if not toks or toks[0] not in SHAPE_WORDS:
        raise fail("expected a shape word")
    shape_word, toks = toks[0], toks[1:]

    adverb = None
    if toks:
        if toks == ["hesitantly"]:
            adverb = "hesitantly"
        elif toks == ["cautiously"]:
            adverb = "cautiously"
        elif toks == ["while", "spinning"]:
            adverb = "while_spinning"
        elif toks == ["while", "zigzagging"]:
            adverb = "while_zigzagging"
        else:
            raise fail(f"trailing tokens {toks!r}")

    return Instruction(verb, size_word, color_word, shape_word, adverb)


def resolve_target(instr: Instruction, state: WorldState) -> TargetResolution:
    """Ground an instruction in a state.

    Candidates match shape and (when given) color; a size word keeps the
    strictly smallest/largest size among candidates. Ties break on position
    (lowest y, then lowest x)."""
    candidates = [
        o for o in state.objects
        if o.shape == instr.shape_word
        and (instr.color_word is None or o.color == instr.color_word)
    ]
    if instr.size_word and candidates:
        pick = min if instr.size_word == "small" else max
        chosen_size = pick(o.size for o in candidates)
        candidates = [o for o in candidates if o.size == chosen_size]
    if not candidates:
        raise UnresolvableError(f"no object matches {' '.join(realize(instr))!r}")
    candidates.sort(key=lambda o: (o.pos.y, o.pos.x))
    return TargetResolution(object=candidates[0], unique=len(candidates) == 1)


def enumerate_instructions() -> Iterator[Instruction]:
    """All 675 instruction forms of the grammar."""
    for verb, size, color, shape, adverb in itertools.product(
        VERBS, (None,) + SIZE_WORDS, (None,) + COLOR_WORDS, SHAPE_WORDS, (None,) + ADVERBS
    ):
        yield Instruction(verb, size, color, shape, adverb)


def encode_words(tokens: Sequence[str]) -> list[int]:
    """Map surface tokens to word-symbol codes, merging multiword adverbs."""
    codes = []
    i = 0
    while i < len(tokens):
        if tokens[i] == "while" and i + 1 < len(tokens) and tokens[i + 1] in ("spinning", "zigzagging"):
            codes.append(WORD_CODES[f"while {tokens[i + 1]}"])
            i += 2
            continue
        if tokens[i] not in WORD_CODES:
            raise LexicalError(f"token {tokens[i]!r} has no symbol code")
        codes.append(WORD_CODES[tokens[i]])
        i += 1
    return codes


def decode_words(codes: Sequence[int]) -> list[str]:
    """Inverse of encode_words: codes back to surface tokens."""
    tokens: list[str] = []
    for code in codes:
        if code not in CODE_WORDS:
            raise LexicalError(f"code {code} outside the word table")
        tokens.extend(CODE_WORDS[code].split(" "))
    return tokens


def command_string(instr: Instruction) -> str:
    return ",".join(realize(instr))


def parse_command_string(command: str) -> Instruction:
    return parse([t for t in command.split(",") if t])
