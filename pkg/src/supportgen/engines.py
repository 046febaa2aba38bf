"""The six support-set construction strategies and the Solver abstraction.

Strategies never emit the query pair itself, and all of them are pure
functions of (query, corpus/model, seed). Same-state strategies (heuristic,
random, demogen, covr-in-state is not one of them) keep the query state on
every support; retrieval strategies attach training states.
"""

from __future__ import annotations

import itertools
import json
import subprocess
import threading
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Protocol, Sequence

import numpy as np

from .dataset import Example
from .errors import ProtocolError, RetrievalError, SolverError, SolverTimeout, UnresolvableError
from .grammar import Instruction, enumerate_instructions, realize, resolve_target
from .index import (
    IvfIndex,
    PcaProjector,
    TfIdfEncoder,
    ivf_build,
    ivf_query,
    pca_fit,
    pca_project,
    tfidf_encode,
    tfidf_fit,
)
from .instruction_model import InstructionModel, sample_infill, score
from .world import Action, RngLike, WorldState, as_rng, encode_one_hot
from . import planner

DEFAULT_SUPPORT_COUNT = 16
DEFAULT_SAMPLE_COUNT = 2048
DEFAULT_MASK_RATE = 0.2
RETRIEVAL_POOL = 128


@dataclass
class Support:
    state: WorldState
    instruction: Instruction
    actions: tuple[Action, ...] | None
    meta: dict = field(default_factory=dict)

    @property
    def failed(self) -> bool:
        return self.actions is None

    def triple(self) -> tuple[WorldState, Instruction, tuple[Action, ...] | None]:
        return (self.state, self.instruction, self.actions)


@dataclass
class SupportSet:
    strategy: str
    supports: list[Support]
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.supports)

    def triples(self) -> list[tuple]:
        return [s.triple() for s in self.supports]


class Solver(Protocol):
    """Anything that maps (state, instruction) to an action sequence.

    Implementations raise SolverError when they cannot produce actions."""

    def solve(self, state: WorldState, instruction: Instruction) -> tuple[Action, ...]:
        ...


class OracleSolver:
    """Ground-truth solver backed by the planner."""

    def solve(self, state: WorldState, instruction: Instruction) -> tuple[Action, ...]:
        try:
            return planner.solve(state, instruction)
        except UnresolvableError as exc:
            raise SolverError(str(exc)) from exc


# ---------------------------------------------------------------------------
# Heuristic templates
# ---------------------------------------------------------------------------

def heuristic_candidates(instr: Instruction) -> list[Instruction]:
    """Template swaps on the query instruction.

    Verb rules: pull -> walk to, push; walk to -> push, pull and
    push -> walk to, pull, both skipped entirely under "while spinning".
    Adverb rules: while zigzagging / hesitantly swap into each other, nothing
    and "while spinning" (skipped entirely for push); "while spinning" swaps
    into hesitantly, while zigzagging and nothing. The query combination
    itself is never produced."""
    out = []
    spinning = instr.adverb == "while_spinning"
    if instr.verb == "pull":
        verb_swaps: tuple[str, ...] = ("walk_to", "push")
    elif instr.verb == "walk_to":
        verb_swaps = () if spinning else ("push", "pull")
    else:  # push
        verb_swaps = () if spinning else ("walk_to", "pull")
    for verb in verb_swaps:
        out.append(Instruction(verb, instr.size_word, instr.color_word,
                               instr.shape_word, instr.adverb))

    if instr.adverb == "while_zigzagging":
        adverb_swaps: tuple = () if instr.verb == "push" else ("hesitantly", None, "while_spinning")
    elif instr.adverb == "hesitantly":
        adverb_swaps = () if instr.verb == "push" else ("while_zigzagging", None, "while_spinning")
    elif instr.adverb == "while_spinning":
        adverb_swaps = ("hesitantly", "while_zigzagging", None)
    else:
        adverb_swaps = ()
    for adverb in adverb_swaps:
        out.append(Instruction(instr.verb, instr.size_word, instr.color_word,
                               instr.shape_word, adverb))
    return out


def heuristic_supports(query: Example, solver: Solver,
                       n: int = DEFAULT_SUPPORT_COUNT) -> SupportSet:
    supports = []
    for cand in heuristic_candidates(query.instruction):
        try:
            actions = solver.solve(query.state, cand)
        except SolverError:
            continue
        supports.append(Support(query.state, cand, actions))
        if len(supports) >= n:
            break
    return SupportSet(strategy="heuristic", supports=supports)


def random_supports(query: Example, solver: Solver, rng: RngLike,
                    n: int = DEFAULT_SUPPORT_COUNT) -> SupportSet:
    """n distinct instructions sampled uniformly over everything resolvable
    in the query state (the query instruction excluded)."""
    gen = as_rng(rng)
    legal = []
    for instr in enumerate_instructions():
        if instr == query.instruction:
            continue
        try:
            resolve_target(instr, query.state)
        except UnresolvableError:
            continue
        legal.append(instr)
    take = min(n, len(legal))
    chosen = gen.choice(len(legal), size=take, replace=False) if take else []
    supports = []
    for idx in sorted(int(i) for i in chosen):
        instr = legal[idx]
        try:
            actions = solver.solve(query.state, instr)
        except SolverError:
            continue
        supports.append(Support(query.state, instr, actions))
    return SupportSet(strategy="random", supports=supports)


def build_instruction_index(examples: Iterable[Example]) -> dict[Instruction, list[Example]]:
    index: dict[Instruction, list[Example]] = {}
    for ex in examples:
        index.setdefault(ex.instruction, []).append(ex)
    return index


def other_states_supports(query: Example,
                          train_index: Mapping[Instruction, Sequence[Example]],
                          rng: RngLike, n: int = DEFAULT_SUPPORT_COUNT) -> SupportSet:
    """Heuristic instructions demonstrated in training states. Instructions
    absent from the training data are silently skipped."""
    gen = as_rng(rng)
    supports = []
    for cand in heuristic_candidates(query.instruction):
        matches = [ex for ex in train_index.get(cand, ()) if ex.state != query.state]
        if not matches:
            continue
        pick = matches[int(gen.integers(len(matches)))]
        supports.append(Support(pick.state, cand, pick.actions, {"from_train": True}))
        if len(supports) >= n:
            break
    return SupportSet(strategy="other_states", supports=supports)


def demogen_supports(query: Example, model: InstructionModel, solver: Solver,
                     rng: RngLike, k: int = DEFAULT_SAMPLE_COUNT,
                     n: int = DEFAULT_SUPPORT_COUNT,
                     mask_rate: float = DEFAULT_MASK_RATE,
                     keep_invalid: bool = True) -> SupportSet:
    """Sample k masked infills of the query, deduplicate, drop the query,
    rank by model score (ties on the realized string), then solve the top n
    in the query state.

    With keep_invalid (default) unsolvable candidates stay in the set with a
    failure marker; otherwise each is replaced by the next-ranked candidate
    until n supports exist or candidates run out."""
    gen = as_rng(rng)
    seen: dict[Instruction, None] = {}
    for _ in range(k):
        cand = sample_infill(model, query.instruction, mask_rate, gen)
        if cand != query.instruction and cand not in seen:
            seen[cand] = None
    ranked = sorted(seen, key=lambda i: (-score(model, i), " ".join(realize(i))))

    supports: list[Support] = []
    for cand in ranked:
        if len(supports) >= n:
            break
        try:
            actions: tuple[Action, ...] | None = solver.solve(query.state, cand)
            valid = True
        except SolverError as exc:
            if not keep_invalid:
                continue
            actions, valid = None, False
        supports.append(Support(query.state, cand, actions,
                                {"score": score(model, cand), "valid": valid}))
    return SupportSet(strategy="demogen",
                      supports=supports,
                      meta={"sampled": k, "unique": len(ranked), "keep_invalid": keep_invalid})


# ---------------------------------------------------------------------------
# n-gram coverage helpers
# ---------------------------------------------------------------------------

BOUNDARY_START = "<s>"
BOUNDARY_END = "</s>"


def instruction_ngrams(instr: Instruction) -> set:
    """One-grams plus boundary-marked two-grams of the realized tokens."""
    tokens = realize(instr)
    padded = [BOUNDARY_START] + tokens + [BOUNDARY_END]
    grams: set = set(tokens)
    grams.update(zip(padded, padded[1:]))
    return grams


def _gram_counts(instr: Instruction, query_grams: set) -> tuple[int, int]:
    grams = instruction_ngrams(instr)
    two = sum(1 for g in grams & query_grams if isinstance(g, tuple))
    one = sum(1 for g in grams & query_grams if not isinstance(g, tuple))
    return two, one


def _greedy_cover(query: Example, ordered: list[tuple[Example, dict]], n: int) -> list[Support]:
    """First take candidates while they add uncovered query n-grams, then fill
    up to n in order."""
    uncovered = instruction_ngrams(query.instruction)
    chosen: list[int] = []
    for i, (ex, _) in enumerate(ordered):
        if len(chosen) >= n:
            break
        added = instruction_ngrams(ex.instruction) & uncovered
        if added:
            uncovered -= added
            chosen.append(i)
    for i in range(len(ordered)):
        if len(chosen) >= n:
            break
        if i not in chosen:
            chosen.append(i)
    chosen.sort()
    return [Support(ordered[i][0].state, ordered[i][0].instruction,
                    ordered[i][0].actions, ordered[i][1]) for i in chosen[:n]]


# ---------------------------------------------------------------------------
# CovR: coverage retrieval over a hybrid state+instruction index
# ---------------------------------------------------------------------------

@dataclass
class CovrRetriever:
    examples: list[Example]
    tfidf: TfIdfEncoder
    pca: PcaProjector
    ivf: IvfIndex
    alpha: float
    state_vectors: np.ndarray  # unit one-hot states, for the cosine sort key


def build_covr_retriever(examples: Sequence[Example], cells: int = 512,
                         pca_dim: int = 320, alpha: float = 0.125,
                         rng: RngLike = 0, balance: bool = False) -> CovrRetriever:
    from .index import hybrid_encode

    examples = list(examples)
    if not examples:
        raise RetrievalError("cannot build a retriever over an empty corpus")
    state_mat = np.asarray([encode_one_hot(ex.state) for ex in examples])
    pca = pca_fit(state_mat, k=pca_dim)
    projected = pca_project(pca, state_mat)
    tfidf = tfidf_fit([realize(ex.instruction) for ex in examples])
    hybrid = np.asarray([
        hybrid_encode(projected[i], tfidf_encode(tfidf, realize(ex.instruction)),
                      alpha, balance=balance)
        for i, ex in enumerate(examples)
    ])
    ivf = ivf_build(hybrid, cells=cells, rng=rng)
    return CovrRetriever(examples=examples, tfidf=tfidf, pca=pca, ivf=ivf,
                         alpha=alpha, state_vectors=state_mat.astype(np.float32))


def covr_supports(query: Example, retriever: CovrRetriever,
                  n: int = DEFAULT_SUPPORT_COUNT, pool: int = RETRIEVAL_POOL,
                  probes: int = 10) -> SupportSet:
    """Retrieve `pool` nearest hybrid vectors, stable-sort by (matching
    two-grams, one-grams, state cosine) descending, then greedily cover the
    query's n-grams and fill to n."""
    from .index import hybrid_encode

    state_vec = encode_one_hot(query.state)
    qvec = hybrid_encode(pca_project(retriever.pca, state_vec),
                         tfidf_encode(retriever.tfidf, realize(query.instruction)),
                         retriever.alpha)
    hits = ivf_query(retriever.ivf, qvec, k=pool, probes=probes)
    query_grams = instruction_ngrams(query.instruction)
    candidates = []
    for rank, (idx, retrieval_score) in enumerate(hits):
        ex = retriever.examples[idx]
        if ex.state == query.state and ex.instruction == query.instruction:
            continue
        two, one = _gram_counts(ex.instruction, query_grams)
        # one-hot cosines are multiples of 1/(active slots); rounding keeps
        # mathematically-equal values tied regardless of summation order
        cosine = round(float(retriever.state_vectors[idx] @ state_vec), 9)
        candidates.append(((-two, -one, -cosine, rank), ex,
                           {"retrieval": retrieval_score, "cosine": cosine,
                            "two_grams": two, "one_grams": one}))
    candidates.sort(key=lambda c: c[0])
    ordered = [(ex, meta) for _, ex, meta in candidates]
    return SupportSet(strategy="covr", supports=_greedy_cover(query, ordered, n))


# ---------------------------------------------------------------------------
# GandR: generate-and-retrieve over (instruction, output) encodings
# ---------------------------------------------------------------------------

def combine_io(instr_vec: np.ndarray, out_vec: np.ndarray, alpha: float) -> np.ndarray:
    """Fixed input/output trade-off: concat((1-alpha)*in, alpha*out), unit."""
    combined = np.concatenate([(1.0 - alpha) * instr_vec, alpha * out_vec])
    norm = np.linalg.norm(combined)
    return combined / norm if norm > 0 else combined


@dataclass
class GandrRetriever:
    examples: list[Example]
    instr_tfidf: TfIdfEncoder
    out_tfidf: TfIdfEncoder
    ivf: IvfIndex
    alpha: float


def build_gandr_retriever(examples: Sequence[Example], cells: int = 512,
                          alpha: float = 0.5, rng: RngLike = 0) -> GandrRetriever:
    examples = list(examples)
    if not examples:
        raise RetrievalError("cannot build a retriever over an empty corpus")
    instr_tfidf = tfidf_fit([realize(ex.instruction) for ex in examples])
    out_tfidf = tfidf_fit([[a.name for a in ex.actions] for ex in examples])
    vectors = np.asarray([
        combine_io(tfidf_encode(instr_tfidf, realize(ex.instruction)),
                   tfidf_encode(out_tfidf, [a.name for a in ex.actions]), alpha)
        for ex in examples
    ])
    ivf = ivf_build(vectors, cells=cells, rng=rng)
    return GandrRetriever(examples=examples, instr_tfidf=instr_tfidf,
                          out_tfidf=out_tfidf, ivf=ivf, alpha=alpha)


def gandr_supports(query: Example, helper: Solver, retriever: GandrRetriever,
                   n: int = DEFAULT_SUPPORT_COUNT, pool: int = RETRIEVAL_POOL,
                   probes: int = 10) -> SupportSet:
    """Encode (query instruction, helper's guessed output), retrieve similar
    (instruction, stored output) pairs, greedily cover the query input.

    If the helper fails, retrieval falls back to the instruction component
    alone and the support set is flagged."""
    helper_failed = False
    try:
        guess: Sequence[Action] = helper.solve(query.state, query.instruction)
    except SolverError:
        guess = ()
        helper_failed = True
    instr_vec = tfidf_encode(retriever.instr_tfidf, realize(query.instruction))
    out_vec = tfidf_encode(retriever.out_tfidf, [a.name for a in guess])
    qvec = combine_io(instr_vec, out_vec, 0.0 if helper_failed else retriever.alpha)
    hits = ivf_query(retriever.ivf, qvec, k=pool, probes=probes)
    ordered = []
    for idx, retrieval_score in hits:
        ex = retriever.examples[idx]
        if ex.state == query.state and ex.instruction == query.instruction:
            continue
        ordered.append((ex, {"retrieval": retrieval_score}))
    return SupportSet(strategy="gandr", supports=_greedy_cover(query, ordered, n),
                      meta={"helper_failed": helper_failed})


# ---------------------------------------------------------------------------
# External solver line protocol
# ---------------------------------------------------------------------------

def _parse_actions(names: Sequence[str]) -> tuple[Action, ...]:
    try:
        return tuple(Action[str(name).upper()] for name in names)
    except KeyError as exc:
        raise ProtocolError(f"unknown action token {exc.args[0]!r}") from None


class ExternalSolver:
    """Solver backed by a child process speaking newline-delimited JSON.

    Request:  {"id": <int>, "state": <state record>, "instruction": [tokens]}
    Response: {"id": <int>, "actions": [action names]} or
              {"id": <int>, "error": <string>}
    Responses may arrive in any order; a reader thread files them by id."""

    def __init__(self, command: Sequence[str], timeout: float = 30.0):
        self.timeout = timeout
        self._proc = subprocess.Popen(
            list(command), stdin=subprocess.PIPE, stdout=subprocess.PIPE,
            text=True, bufsize=1,
        )
        self._lock = threading.Lock()
        self._cond = threading.Condition(self._lock)
        self._results: dict[int, dict] = {}
        self._next_id = itertools.count()
        self._dead: str | None = None
        self._reader = threading.Thread(target=self._read_loop, daemon=True)
        self._reader.start()

    def _read_loop(self) -> None:
        assert self._proc.stdout is not None
        for line in self._proc.stdout:
            line = line.strip()
            if not line:
                continue
            try:
                msg = json.loads(line)
                key = int(msg["id"])
            except (ValueError, KeyError, TypeError):
                with self._cond:
                    self._dead = f"protocol violation: unparseable response {line[:200]!r}"
                    self._cond.notify_all()
                return
            with self._cond:
                self._results[key] = msg
                self._cond.notify_all()
        with self._cond:
            if self._dead is None:
                self._dead = "solver process closed its output"
            self._cond.notify_all()

    def solve(self, state: WorldState, instruction: Instruction) -> tuple[Action, ...]:
        if self._proc.stdin is None or self._proc.poll() is not None:
            raise ProtocolError("solver process is not running")
        request_id = next(self._next_id)
        payload = json.dumps({
            "id": request_id,
            "state": state.to_record(),
            "instruction": realize(instruction),
        })
        try:
            self._proc.stdin.write(payload + "\n")
            self._proc.stdin.flush()
        except (BrokenPipeError, ValueError) as exc:
            raise ProtocolError(f"cannot write to solver: {exc}") from exc
        with self._cond:
            ok = self._cond.wait_for(
                lambda: request_id in self._results or self._dead is not None,
                timeout=self.timeout,
            )
            if request_id in self._results:
                msg = self._results.pop(request_id)
            elif not ok:
                raise SolverTimeout(f"no response for request {request_id} "
                                    f"within {self.timeout}s")
            else:
                raise ProtocolError(self._dead or "solver died")
        if "error" in msg:
            raise SolverError(str(msg["error"]))
        if "actions" not in msg or not isinstance(msg["actions"], list):
            raise ProtocolError(f"response {request_id} carries no actions list")
        return _parse_actions(msg["actions"])

    def close(self) -> None:
        if self._proc.stdin is not None:
            try:
                self._proc.stdin.close()
            except OSError:
                pass
        try:
            self._proc.wait(timeout=5)
        except subprocess.TimeoutExpired:
            self._proc.kill()

    def __enter__(self) -> "ExternalSolver":
        return self

    def __exit__(self, *exc_info) -> None:
        self.close()


def serve_solver(solver: Solver, infile, outfile) -> None:
    """Serve a Solver over the line protocol (used by the CLI oracle server)."""
    from .grammar import parse

    for line in infile:
        line = line.strip()
        if not line:
            continue
        request_id = None
        try:
            msg = json.loads(line)
            request_id = msg.get("id")
            state = WorldState.from_record(msg["state"])
            instruction = parse(msg["instruction"])
            actions = solver.solve(state, instruction)
            response: dict = {"id": request_id, "actions": [a.name for a in actions]}
        except Exception as exc:  # every failure maps to an in-band error
            response = {"id": request_id, "error": f"{type(exc).__name__}: {exc}"}
        outfile.write(json.dumps(response) + "\n")
        outfile.flush()
