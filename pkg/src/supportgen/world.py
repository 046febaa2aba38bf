"""Grid-world state model: types, action execution, and state vectorization.

Heading code convention (documented here because serialized records use it):
d = 0 north, 1 east, 2 south, 3 west, with y growing southward. LTURN is
counter-clockwise (east -> north), RTURN clockwise.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum
from typing import Iterable, Mapping, Sequence, Union

import numpy as np

from .errors import CapacityError, DimensionError, ExecutionError

SHAPES = ("circle", "square", "cylinder")
COLORS = ("red", "green", "blue", "yellow")
SIZES = (1, 2, 3, 4)

#: Object sizes that need two push/pull actions per cell of movement.
HEAVY_SIZES = (3, 4)


class Heading(IntEnum):
    NORTH = 0
    EAST = 1
    SOUTH = 2
    WEST = 3

    def left(self) -> "Heading":
        return Heading((self - 1) % 4)

    def right(self) -> "Heading":
        return Heading((self + 1) % 4)

    @property
    def delta(self) -> tuple[int, int]:
        return _DELTAS[self]


_DELTAS = {
    Heading.NORTH: (0, -1),
    Heading.EAST: (1, 0),
    Heading.SOUTH: (0, 1),
    Heading.WEST: (-1, 0),
}


class Action(IntEnum):
    """Action symbols with their fixed default codes."""

    PULL = 0
    PUSH = 1
    STAY = 2
    LTURN = 3
    RTURN = 4
    WALK = 5


ACTION_NAMES = tuple(a.name for a in Action)
ACTION_TABLE_SIZE = len(Action)

RngLike = Union[int, np.random.Generator]


def as_rng(rng: RngLike) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


@dataclass(frozen=True, order=True)
class Position:
    x: int
    y: int

    def shifted(self, heading: Heading, steps: int = 1) -> "Position":
        dx, dy = heading.delta
        return Position(self.x + dx * steps, self.y + dy * steps)


@dataclass(frozen=True)
class ObjectSpec:
    shape: str
    color: str
    size: int
    pos: Position

    def __post_init__(self) -> None:
        if self.shape not in SHAPES:
            raise ValueError(f"unknown shape {self.shape!r}")
        if self.color not in COLORS:
            raise ValueError(f"unknown color {self.color!r}")
        if self.size not in SIZES:
            raise ValueError(f"object size must be in 1..4, got {self.size}")

    @property
    def heavy(self) -> bool:
        return self.size in HEAVY_SIZES

    def description(self) -> tuple[str, str, int]:
        return (self.shape, self.color, self.size)


@dataclass(frozen=True)
class AgentPose:
    pos: Position
    direction: Heading


@dataclass(frozen=True)
class WorldState:
    """Immutable grid-world snapshot: the S in every (S, I, A) triple."""

    grid_size: int
    agent: AgentPose
    objects: tuple[ObjectSpec, ...]

    def __post_init__(self) -> None:
        object.__setattr__(
            self, "objects", tuple(sorted(self.objects, key=lambda o: (o.pos.y, o.pos.x)))
        )
        if not self.in_bounds(self.agent.pos):
            raise ValueError(f"agent {self.agent.pos} outside {self.grid_size}x{self.grid_size} grid")
        seen: set[Position] = set()
        for obj in self.objects:
            if not self.in_bounds(obj.pos):
                raise ValueError(f"object at {obj.pos} outside grid")
            if obj.pos in seen:
                raise ValueError(f"two objects share cell {obj.pos}")
            seen.add(obj.pos)

    def in_bounds(self, pos: Position) -> bool:
        return 0 <= pos.x < self.grid_size and 0 <= pos.y < self.grid_size

    def object_at(self, pos: Position) -> ObjectSpec | None:
        for obj in self.objects:
            if obj.pos == pos:
                return obj
        return None

    def to_record(self) -> dict:
        return {
            "grid_size": self.grid_size,
            "agent": {"x": self.agent.pos.x, "y": self.agent.pos.y, "d": int(self.agent.direction)},
            "objects": [
                {"shape": o.shape, "color": o.color, "size": o.size, "x": o.pos.x, "y": o.pos.y}
                for o in self.objects
            ],
        }

    @classmethod
    def from_record(cls, record: Mapping) -> "WorldState":
        agent = record["agent"]
        return cls(
            grid_size=int(record["grid_size"]),
            agent=AgentPose(Position(int(agent["x"]), int(agent["y"])), Heading(int(agent["d"]))),
            objects=tuple(
                ObjectSpec(o["shape"], o["color"], int(o["size"]), Position(int(o["x"]), int(o["y"])))
                for o in record["objects"]
            ),
        )


def new_random_state(rng: RngLike, grid_size: int = 6, object_count: int = 3) -> WorldState:
    """Sample a uniform random state. The agent cell is reserved: objects never
    spawn under the agent, hence the grid_size**2 - 1 capacity bound."""
    if not 0 <= object_count <= grid_size * grid_size - 1:
        raise CapacityError(
            f"cannot place {object_count} objects on a {grid_size}x{grid_size} grid"
        )
    gen = as_rng(rng)
    cells = grid_size * grid_size
    agent_cell = int(gen.integers(cells))
    agent = AgentPose(
        Position(agent_cell % grid_size, agent_cell // grid_size),
        Heading(int(gen.integers(4))),
    )
    free = [c for c in range(cells) if c != agent_cell]
    chosen = gen.choice(len(free), size=object_count, replace=False) if object_count else []
    objects = []
    for idx in chosen:
        cell = free[int(idx)]
        objects.append(
            ObjectSpec(
                shape=SHAPES[int(gen.integers(len(SHAPES)))],
                color=COLORS[int(gen.integers(len(COLORS)))],
                size=int(gen.integers(1, 5)),
                pos=Position(cell % grid_size, cell // grid_size),
            )
        )
    return WorldState(grid_size=grid_size, agent=agent, objects=tuple(objects))


def free_run(state_objects: Iterable[ObjectSpec], grid_size: int, start: Position,
             heading: Heading, moving: ObjectSpec | None = None) -> int:
    """Number of consecutive free cells from `start` along `heading`.

    A cell is free when it is in bounds and holds no object other than
    `moving` (the object being displaced)."""
    occupied = {o.pos for o in state_objects if o is not moving and o.pos != start}
    run = 0
    pos = start
    while True:
        pos = pos.shifted(heading)
        if not (0 <= pos.x < grid_size and 0 <= pos.y < grid_size) or pos in occupied:
            return run
        run += 1


def simulate(state: WorldState, actions: Sequence[Action]) -> WorldState:
    """Execute `actions` from `state` and return the final state.

    WALK moves one cell along the heading; LTURN/RTURN rotate 90 degrees;
    STAY is a no-op. PUSH/PULL require an object in the agent's cell and move
    it (with the agent) one cell forward/backward; heavy objects (size 3, 4)
    move only on every second consecutive push/pull."""
    pos = state.agent.pos
    heading = state.agent.direction
    objects = {o.pos: o for o in state.objects}
    charge: dict[tuple[Position, Action], int] = {}

    for i, action in enumerate(actions):
        if action == Action.STAY:
            continue
        if action == Action.LTURN:
            heading = heading.left()
            continue
        if action == Action.RTURN:
            heading = heading.right()
            continue
        if action == Action.WALK:
            nxt = pos.shifted(heading)
            if not state.in_bounds(nxt):
                raise ExecutionError(f"action {i}: WALK off-grid from {pos} heading {heading.name}")
            pos = nxt
            continue
        # PUSH or PULL
        obj = objects.get(pos)
        if obj is None:
            raise ExecutionError(f"action {i}: {action.name} with no object at {pos}")
        move_dir = heading if action == Action.PUSH else Heading((heading + 2) % 4)
        key = (pos, action)
        needed = 2 if obj.heavy else 1
        count = charge.pop(key, 0) + 1
        if count < needed:
            charge[key] = count
            continue
        dest = pos.shifted(move_dir)
        if not state.in_bounds(dest) or dest in objects:
            raise ExecutionError(f"action {i}: {action.name} blocked at {pos}")
        del objects[pos]
        moved = ObjectSpec(obj.shape, obj.color, obj.size, dest)
        objects[dest] = moved
        pos = dest

    return WorldState(
        grid_size=state.grid_size,
        agent=AgentPose(pos, heading),
        objects=tuple(objects.values()),
    )


# One-hot layout per cell, in this order (frozen for reproducibility):
# shape (circle, square, cylinder, none), color (red, green, blue, yellow, none),
# size (1, 2, 3, 4, none), agent presence, agent heading (N, E, S, W).
CELL_WIDTH = (len(SHAPES) + 1) + (len(COLORS) + 1) + (len(SIZES) + 1) + 1 + 4
_SHAPE_OFF = 0
_COLOR_OFF = len(SHAPES) + 1
_SIZE_OFF = _COLOR_OFF + len(COLORS) + 1
_AGENT_OFF = _SIZE_OFF + len(SIZES) + 1
_HEADING_OFF = _AGENT_OFF + 1


def encode_one_hot(state: WorldState) -> np.ndarray:
    """Fixed-length unit-norm one-hot encoding of a state.

    Cells are laid out row-major; see CELL_WIDTH block order above. Every
    state activates exactly 3*cells + 2 slots, so normalization is a constant
    scale and the encoding stays injective on valid states."""
    n = state.grid_size
    vec = np.zeros(n * n * CELL_WIDTH, dtype=np.float64)
    by_pos = {o.pos: o for o in state.objects}
    for cy in range(n):
        for cx in range(n):
            base = (cy * n + cx) * CELL_WIDTH
            obj = by_pos.get(Position(cx, cy))
            if obj is None:
                vec[base + _SHAPE_OFF + len(SHAPES)] = 1.0
                vec[base + _COLOR_OFF + len(COLORS)] = 1.0
                vec[base + _SIZE_OFF + len(SIZES)] = 1.0
            else:
                vec[base + _SHAPE_OFF + SHAPES.index(obj.shape)] = 1.0
                vec[base + _COLOR_OFF + COLORS.index(obj.color)] = 1.0
                vec[base + _SIZE_OFF + (obj.size - 1)] = 1.0
    abase = (state.agent.pos.y * n + state.agent.pos.x) * CELL_WIDTH
    vec[abase + _AGENT_OFF] = 1.0
    vec[abase + _HEADING_OFF + int(state.agent.direction)] = 1.0
    return vec / np.linalg.norm(vec)


def encode_states(states: Iterable[WorldState], dtype=np.float32) -> np.ndarray:
    """Stack one-hot encodings into a matrix (convenience for indexing)."""
    return np.asarray([encode_one_hot(s) for s in states], dtype=dtype)


def hamming_similarity(a: WorldState, b: WorldState) -> float:
    """Fraction of cells whose full descriptor (object triple or emptiness,
    agent-presence flag) is identical in both states."""
    if a.grid_size != b.grid_size:
        raise DimensionError(f"grid sizes differ: {a.grid_size} vs {b.grid_size}")
    n = a.grid_size
    a_objs = {o.pos: o.description() for o in a.objects}
    b_objs = {o.pos: o.description() for o in b.objects}
    same = 0
    for cy in range(n):
        for cx in range(n):
            pos = Position(cx, cy)
            if a_objs.get(pos) == b_objs.get(pos) and (pos == a.agent.pos) == (pos == b.agent.pos):
                same += 1
    return same / (n * n)
