"""Ground-truth planner: (state, instruction) -> action sequence.

Navigation is horizontal-first: turn to face east/west, walk out the x
displacement, turn once to north/south, walk out the y displacement. Adverbs
decorate that walk stream:

  hesitantly        STAY after every non-turn action
  while_spinning    LTURN x4 before every non-turn action, emitted ahead of
                    the direction turns so streams like LTURN(6) arise from
                    merged spin + reorientation turns
  while_zigzagging  alternate one horizontal and one vertical step (starting
                    horizontal) until the smaller displacement runs out
  cautiously        a look-both-ways turn sequence before every WALK
                    (net-zero by default, configurable)

push/pull append PUSH/PULL actions once the agent stands on the target:
the object moves forward (push) or backward (pull) until blocked by a wall
or another object, two actions per cell for heavy objects (size 3, 4).
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import PlannerError
from .grammar import Instruction, resolve_target
from .world import (
    Action,
    AgentPose,
    Heading,
    ObjectSpec,
    Position,
    WorldState,
    free_run,
    simulate,
)

#: Net-zero look-both-ways sequence used for "cautiously".
DEFAULT_CAUTIOUS_SEQUENCE = (Action.LTURN, Action.RTURN, Action.RTURN, Action.LTURN)

SPIN = (Action.LTURN,) * 4


@dataclass(frozen=True)
class Plan:
    """Undecorated navigation plan: displacement legs from a start pose."""

    start: AgentPose
    legs: tuple[tuple[Heading, int], ...]


def turns_between(cur: Heading, dest: Heading) -> tuple[Action, ...]:
    """Minimal turn sequence from one heading to another (LTURNs for a
    half-turn, matching the traces this grid convention is built around)."""
    diff = (dest - cur) % 4
    if diff == 0:
        return ()
    if diff == 1:
        return (Action.RTURN,)
    if diff == 3:
        return (Action.LTURN,)
    return (Action.LTURN, Action.LTURN)


def plan_navigation(state: WorldState, target: Position) -> Plan:
    if not state.in_bounds(target):
        raise PlannerError(f"target {target} outside grid")
    dx = target.x - state.agent.pos.x
    dy = target.y - state.agent.pos.y
    legs = []
    if dx:
        legs.append((Heading.EAST if dx > 0 else Heading.WEST, abs(dx)))
    if dy:
        legs.append((Heading.SOUTH if dy > 0 else Heading.NORTH, abs(dy)))
    return Plan(start=state.agent, legs=tuple(legs))


def _walk_steps(plan: Plan, zigzag: bool) -> list[tuple[tuple[Action, ...], Action]]:
    """Flatten a plan into (direction turns, WALK) steps."""
    heading = plan.start.direction
    steps: list[tuple[tuple[Action, ...], Action]] = []

    def advance(to: Heading) -> tuple[Action, ...]:
        nonlocal heading
        turns = turns_between(heading, to)
        heading = to
        return turns

    if zigzag and len(plan.legs) == 2:
        (h_dir, h_cnt), (v_dir, v_cnt) = plan.legs
        remaining = [h_cnt, v_cnt]
        dirs = [h_dir, v_dir]
        axis = 0
        while remaining[0] or remaining[1]:
            if remaining[axis] == 0:
                axis = 1 - axis
            steps.append((advance(dirs[axis]), Action.WALK))
            remaining[axis] -= 1
            if remaining[1 - axis]:
                axis = 1 - axis
        return steps

    for direction, count in plan.legs:
        steps.append((advance(direction), Action.WALK))
        for _ in range(count - 1):
            steps.append(((), Action.WALK))
    return steps


def _decorate(steps: list[tuple[tuple[Action, ...], Action]], adverb: str | None,
              cautious_sequence: tuple[Action, ...]) -> list[Action]:
    out: list[Action] = []
    for turns, action in steps:
        if adverb == "while_spinning":
            out.extend(SPIN)
            out.extend(turns)
            out.append(action)
        elif adverb == "hesitantly":
            out.extend(turns)
            out.append(action)
            out.append(Action.STAY)
        elif adverb == "cautiously" and action == Action.WALK:
            out.extend(turns)
            out.extend(cautious_sequence)
            out.append(action)
        else:
            out.extend(turns)
            out.append(action)
    return out


def apply_adverb(plan: Plan, adverb: str | None,
                 cautious_sequence: tuple[Action, ...] = DEFAULT_CAUTIOUS_SEQUENCE
                 ) -> tuple[Action, ...]:
    steps = _walk_steps(plan, zigzag=(adverb == "while_zigzagging"))
    return tuple(_decorate(steps, adverb, cautious_sequence))


def apply_verb(state: WorldState, actions: tuple[Action, ...], verb: str,
               adverb: str | None, target: ObjectSpec,
               cautious_sequence: tuple[Action, ...] = DEFAULT_CAUTIOUS_SEQUENCE
               ) -> tuple[Action, ...]:
    """Append decorated verb actions to an already-decorated navigation."""
    if verb == "walk_to":
        return actions
    end = simulate(state, actions)
    if end.agent.pos != target.pos:
        raise PlannerError(f"navigation ended at {end.agent.pos}, target at {target.pos}")
    if verb == "push":
        verb_action, move_dir = Action.PUSH, end.agent.direction
    else:
        verb_action, move_dir = Action.PULL, Heading((end.agent.direction + 2) % 4)
    cells = free_run(state.objects, state.grid_size, target.pos, move_dir, moving=target)
    count = cells * (2 if target.heavy else 1)
    steps = [((), verb_action)] * count
    return actions + tuple(_decorate(steps, adverb, cautious_sequence))


def solve(state: WorldState, instr: Instruction,
          cautious_sequence: tuple[Action, ...] = DEFAULT_CAUTIOUS_SEQUENCE
          ) -> tuple[Action, ...]:
    """Full oracle: resolve, navigate, decorate, apply the verb.

    Raises UnresolvableError when the instruction has no referent in the
    state; the result always passes simulate() and the goal predicate."""
    target = resolve_target(instr, state).object
    plan = plan_navigation(state, target.pos)
    nav = apply_adverb(plan, instr.adverb, cautious_sequence)
    return apply_verb(state, nav, instr.verb, instr.adverb, target, cautious_sequence)


def goal_satisfied(state: WorldState, instr: Instruction, final: WorldState) -> bool:
    """Goal predicate for simulate(solve(...)) checks.

    walk_to: agent stands on the resolved target cell. push/pull: an object
    with the target's description sits under the agent, displaced only along
    the verb direction, and cannot move further."""
    target = resolve_target(instr, state).object
    if instr.verb == "walk_to":
        return final.agent.pos == target.pos
    obj = final.object_at(final.agent.pos)
    if obj is None or obj.description() != target.description():
        return False
    move_dir = final.agent.direction if instr.verb == "push" else Heading(
        (final.agent.direction + 2) % 4
    )
    dx, dy = move_dir.delta
    disp = (obj.pos.x - target.pos.x, obj.pos.y - target.pos.y)
    steps = disp[0] * dx + disp[1] * dy
    if steps < 0 or disp != (dx * steps, dy * steps):
        return False
    nxt = obj.pos.shifted(move_dir)
    return not final.in_bounds(nxt) or final.object_at(nxt) is not None
