"""The recipe step language: typed requester/responder steps plus mutations.

A recipe is a straight-line program.  Requester steps run in order on the
requester, responder steps in order on the responder; the only
synchronization between the two sides is what the steps themselves encode
(completion waits, message receives, acks).  Exactly one persistence
marker ends every recipe: reaching it is the requester's claim that the
declared updates are now durable, and the checker holds it to that claim
at every later crash point.

Notation mapping used by ``render``/``parse`` (one step per line):

    Rq Write(a) / Rq WriteImm(a) / Rq Write_atomic(b)   <- PostUpdate
    Rq Send(a) / Rq Send(a,b) / Rq Send(&a)             <- PostSend
    Rq Flush                                            <- PostFlush
    Rq Comp_Write(a), Rq Comp_Flush, Rq Comp_Send(a)    <- WaitCompletion
    Rsp Receive(a) / Rsp Receive(&a)                    <- WaitReceive
    Rsp copy(a)                                         <- CopyToTarget
    Rsp flush(&a)                                       <- LocalFlush
    Rsp Send(ack) / Rq Receive(ack)                     <- PostAck / WaitAck
    ASSERT-PERSISTED(a)                                 <- AssertPersisted

Lines that fold several actions over several updates into one cell
("copy + flush(a,b)") are always expanded into the per-update steps
above, so every rendered line is one step and parses back to one step.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, replace
from enum import Enum

from .memory import Address, Region, UNIT_BYTES


class UpdateOp(Enum):
    WRITE = "Write"
    WRITE_IMM = "WriteImm"
    WRITE_ATOMIC = "Write_atomic"


@dataclass(frozen=True)
class UpdateSpec:
    """One declared remote update: new bytes bound for a PM location."""

    label: str
    target: Address
    payload: bytes

    def __post_init__(self):
        if self.target.region is not Region.PM:
            raise ValueError("updates target persistent memory")
        if not self.payload or len(self.payload) % UNIT_BYTES:
            raise ValueError("update payload must be a positive number of units")


class Step:
    pass


@dataclass(frozen=True)
class PostUpdate(Step):
    ref: str
    op: UpdateOp
    update: str
    signaled: bool = False
    fenced: bool = False


@dataclass(frozen=True)
class PostSend(Step):
    ref: str
    updates: tuple[str, ...] = ()
    notify: str | None = None  # message carries only the address of `notify`
    signaled: bool = False
    fenced: bool = False


@dataclass(frozen=True)
class PostFlush(Step):
    ref: str
    signaled: bool = True
    fenced: bool = False


@dataclass(frozen=True)
class WaitCompletion(Step):
    ref: str


@dataclass(frozen=True)
class WaitReceive(Step):
    ref: str  # the PostSend/PostUpdate(WriteImm) this receive consumes


@dataclass(frozen=True)
class CopyToTarget(Step):
    update: str


@dataclass(frozen=True)
class LocalFlush(Step):
    updates: tuple[str, ...]


@dataclass(frozen=True)
class PostAck(Step):
    ref: str


@dataclass(frozen=True)
class WaitAck(Step):
    ref: str


@dataclass(frozen=True)
class AssertPersisted(Step):
    updates: tuple[str, ...]


_REQUESTER_STEPS = (PostUpdate, PostSend, PostFlush, WaitCompletion, WaitAck, AssertPersisted)
_RESPONDER_STEPS = (WaitReceive, CopyToTarget, LocalFlush, PostAck)


def actor_of(step: Step) -> str:
    return "requester" if isinstance(step, _REQUESTER_STEPS) else "responder"


@dataclass(frozen=True)
class Recipe:
    recipe_id: str
    steps: tuple[Step, ...]
    updates: tuple[UpdateSpec, ...]
    # Durability may also be discharged by a complete, validated message
    # record recovered from a PM-resident receive buffer.
    record_recovery_ok: bool = False

    def update(self, label: str) -> UpdateSpec:
        for u in self.updates:
            if u.label == label:
                return u
        raise KeyError(label)

    @property
    def ordered_pair(self) -> tuple[str, str] | None:
        """(first, second) labels whose persistence order is an obligation."""
        if len(self.updates) == 2:
            return self.updates[0].label, self.updates[1].label
        return None

    def requester_steps(self) -> tuple[Step, ...]:
        return tuple(s for s in self.steps if actor_of(s) == "requester")

    def responder_steps(self) -> tuple[Step, ...]:
        return tuple(s for s in self.steps if actor_of(s) == "responder")


# -- structural validation ---------------------------------------------------


def validate_recipe(recipe: Recipe) -> list[str]:
    """Structural diagnostics; an empty list means the recipe is well formed."""
    diags: list[str] = []
    steps = recipe.steps
    labels = {u.label for u in recipe.updates}

    posts: dict[str, Step] = {}
    acks_posted: set[str] = set()
    for step in steps:
        if isinstance(step, (PostUpdate, PostSend, PostFlush)):
            if step.ref in posts:
                diags.append(f"duplicate post ref {step.ref!r}")
            posts[step.ref] = step
        elif isinstance(step, PostAck):
            acks_posted.add(step.ref)

    asserts = [i for i, s in enumerate(steps) if isinstance(s, AssertPersisted)]
    if len(asserts) != 1:
        diags.append(f"exactly one persistence marker required, found {len(asserts)}")
    elif asserts[0] != len(steps) - 1:
        diags.append("persistence marker must be the final step")

    seen_posts: set[str] = set()
    for i, step in enumerate(steps):
        if isinstance(step, (PostUpdate, PostSend, PostFlush)):
            seen_posts.add(step.ref)
        elif isinstance(step, WaitCompletion):
            target = posts.get(step.ref)
            if target is None or step.ref not in seen_posts:
                diags.append(f"completion wait on unknown request {step.ref!r}")
            elif not getattr(target, "signaled", True):
                diags.append(f"completion wait on unsignaled request {step.ref!r}")
        elif isinstance(step, WaitReceive):
            target = posts.get(step.ref)
            if target is None:
                diags.append(f"receive wait on unknown message {step.ref!r}")
            elif not (
                isinstance(target, PostSend)
                or (isinstance(target, PostUpdate) and target.op is UpdateOp.WRITE_IMM)
            ):
                diags.append(f"receive wait on one-sided request {step.ref!r}")
        elif isinstance(step, WaitAck):
            if step.ref not in acks_posted:
                diags.append(f"ack wait {step.ref!r} has no matching responder ack")
        if isinstance(step, (PostUpdate, CopyToTarget)):
            if step.update not in labels:
                diags.append(f"step {i} references undeclared update {step.update!r}")
        if isinstance(step, (LocalFlush, AssertPersisted, PostSend)):
            for label in step.updates:
                if label not in labels:
                    diags.append(f"step {i} references undeclared update {label!r}")
        if isinstance(step, PostSend) and step.notify is not None and step.notify not in labels:
            diags.append(f"step {i} references undeclared update {step.notify!r}")

    if steps and isinstance(steps[-1], AssertPersisted):
        pair = recipe.ordered_pair
        if pair is not None and not set(pair) <= set(steps[-1].updates):
            diags.append("compound recipe must assert both updates")
    return diags


# -- mutations ---------------------------------------------------------------


class Mutation:
    pass


@dataclass(frozen=True)
class DropStep(Mutation):
    index: int


@dataclass(frozen=True)
class UnfenceOrDeAtomize(Mutation):
    index: int


@dataclass(frozen=True)
class SkipWait(Mutation):
    index: int


@dataclass(frozen=True)
class ReorderAdjacent(Mutation):
    index: int


class InvalidMutation(Exception):
    pass


def mutate(recipe: Recipe, mutation: Mutation, suffix: str = "mutant") -> Recipe:
    """Apply ``mutation``; the result still passes ``validate_recipe``.

    Failures of mutated recipes must be semantic, not syntactic, so
    dropping a posted request also drops its waits, and a recipe left with
    no final synchronization gets one on its last posted update (the
    weakest claim the mutated program can still make).
    """
    steps = list(recipe.steps)
    if not 0 <= mutation.index < len(steps):
        raise InvalidMutation(f"step index {mutation.index} out of range")
    target = steps[mutation.index]

    if isinstance(mutation, DropStep):
        if isinstance(target, AssertPersisted):
            raise InvalidMutation("cannot drop the persistence marker")
        del steps[mutation.index]
        if isinstance(target, (PostUpdate, PostSend, PostFlush)):
            steps = [
                s
                for s in steps
                if not (isinstance(s, (WaitCompletion, WaitReceive)) and s.ref == target.ref)
            ]
            steps = _ensure_final_sync(steps)
    elif isinstance(mutation, UnfenceOrDeAtomize):
        if isinstance(target, PostUpdate) and target.op is UpdateOp.WRITE_ATOMIC:
            steps[mutation.index] = replace(target, op=UpdateOp.WRITE)
        elif getattr(target, "fenced", False):
            steps[mutation.index] = replace(target, fenced=False)
        else:
            raise InvalidMutation("step is neither fenced nor atomic")
    elif isinstance(mutation, SkipWait):
        if not isinstance(target, (WaitCompletion, WaitAck, WaitReceive)):
            raise InvalidMutation("step is not a wait")
        del steps[mutation.index]
    elif isinstance(mutation, ReorderAdjacent):
        if mutation.index + 1 >= len(steps):
            raise InvalidMutation("no adjacent step to swap with")
        steps[mutation.index], steps[mutation.index + 1] = (
            steps[mutation.index + 1],
            steps[mutation.index],
        )
    else:
        raise InvalidMutation(f"unknown mutation {mutation!r}")

    mutant = replace(
        recipe, recipe_id=f"{recipe.recipe_id}#{suffix}", steps=tuple(steps)
    )
    diags = validate_recipe(mutant)
    if diags:
        raise InvalidMutation("; ".join(diags))
    return mutant


def _ensure_final_sync(steps: list[Step]) -> list[Step]:
    """Guarantee some wait still guards the persistence marker."""
    has_wait = any(isinstance(s, (WaitCompletion, WaitAck)) for s in steps)
    if has_wait:
        return steps
    post_indices = [
        i for i, s in enumerate(steps) if isinstance(s, (PostUpdate, PostSend, PostFlush))
    ]
    if not post_indices:
        return steps
    last = post_indices[-1]
    posted = steps[last]
    if not posted.signaled:
        steps[last] = replace(posted, signaled=True)
        posted = steps[last]
    steps.insert(len(steps) - 1, WaitCompletion(posted.ref))
    return steps


# -- table notation ----------------------------------------------------------


def _update_list(labels: tuple[str, ...]) -> str:
    return ",".join(labels)


def render(recipe: Recipe) -> list[str]:
    lines = []
    posts: dict[str, Step] = {}
    for step in recipe.steps:
        if isinstance(step, PostUpdate):
            posts[step.ref] = step
            lines.append(f"Rq {step.op.value}({step.update})")
        elif isinstance(step, PostSend):
            posts[step.ref] = step
            body = f"&{step.notify}" if step.notify else _update_list(step.updates)
            lines.append(f"Rq Send({body})")
        elif isinstance(step, PostFlush):
            posts[step.ref] = step
            lines.append("Rq Flush")
        elif isinstance(step, WaitCompletion):
            posted = posts[step.ref]
            if isinstance(posted, PostFlush):
                lines.append("Rq Comp_Flush")
            elif isinstance(posted, PostSend):
                body = f"&{posted.notify}" if posted.notify else _update_list(posted.updates)
                lines.append(f"Rq Comp_Send({body})")
            else:
                lines.append(f"Rq Comp_{posted.op.value}({posted.update})")
        elif isinstance(step, WaitReceive):
            posted = posts[step.ref]
            if isinstance(posted, PostUpdate):
                lines.append(f"Rsp Receive(&{posted.update})")
            else:
                body = f"&{posted.notify}" if posted.notify else _update_list(posted.updates)
                lines.append(f"Rsp Receive({body})")
        elif isinstance(step, CopyToTarget):
            lines.append(f"Rsp copy({step.update})")
        elif isinstance(step, LocalFlush):
            body = ",".join(f"&{u}" for u in step.updates)
            lines.append(f"Rsp flush({body})")
        elif isinstance(step, PostAck):
            lines.append("Rsp Send(ack)")
        elif isinstance(step, WaitAck):
            lines.append("Rq Receive(ack)")
        elif isinstance(step, AssertPersisted):
            lines.append(f"ASSERT-PERSISTED({_update_list(step.updates)})")
        else:
            raise TypeError(step)
    return lines


_LINE_RE = re.compile(r"^(Rq|Rsp) (\w+?)(?:\((.*)\))?$")


def parse(lines: list[str], recipe_id: str, updates: tuple[UpdateSpec, ...],
          record_recovery_ok: bool = False) -> Recipe:
    """Inverse of ``render`` for the same update declarations."""
    steps: list[Step] = []
    counters: dict[str, int] = {}
    posts: dict[str, str] = {}  # rendered key -> ref
    order: list[str] = []

    def fresh(prefix: str) -> str:
        counters[prefix] = counters.get(prefix, 0) + 1
        return f"{prefix}{counters[prefix]}"

    ack_n = 0
    for line in lines:
        line = line.strip()
        if line.startswith("ASSERT-PERSISTED"):
            body = line[len("ASSERT-PERSISTED(") : -1]
            steps.append(AssertPersisted(tuple(body.split(","))))
            continue
        m = _LINE_RE.match(line)
        if not m:
            raise ValueError(f"unparseable step: {line!r}")
        side, verb, body = m.groups()
        if side == "Rq" and verb in ("Write", "WriteImm", "Write_atomic"):
            op = UpdateOp(verb)
            ref = fresh(verb.lower())
            posts[f"{verb}({body})"] = ref
            order.append(ref)
            steps.append(PostUpdate(ref, op, body))
        elif side == "Rq" and verb == "Send" and body != "ack":
            ref = fresh("send")
            posts[f"Send({body})"] = ref
            order.append(ref)
            if body.startswith("&"):
                steps.append(PostSend(ref, notify=body[1:]))
            else:
                steps.append(PostSend(ref, updates=tuple(body.split(","))))
        elif side == "Rq" and verb == "Flush":
            ref = fresh("flush")
            posts[f"Flush#{counters['flush']}"] = ref
            order.append(ref)
            steps.append(PostFlush(ref))
        elif side == "Rq" and verb.startswith("Comp_"):
            inner = verb[len("Comp_") :]
            if inner == "Flush":
                # positional: a Comp_Flush waits on the most recent flush
                # not yet waited for (responses come back in posting order)
                waited = {s.ref for s in steps if isinstance(s, WaitCompletion)}
                ref = next(
                    r for r in reversed(order) if r.startswith("flush") and r not in waited
                )
            else:
                ref = posts[f"{inner}({body})"]
            steps.append(WaitCompletion(ref))
            _mark_signaled(steps, ref)
        elif side == "Rsp" and verb == "Receive":
            if body.startswith("&"):
                key = next(
                    k for k in (f"WriteImm({body[1:]})", f"Send({body})") if k in posts
                )
            else:
                key = f"Send({body})"
            steps.append(WaitReceive(posts[key]))
        elif side == "Rsp" and verb == "copy":
            steps.append(CopyToTarget(body))
        elif side == "Rsp" and verb == "flush":
            steps.append(LocalFlush(tuple(u.lstrip("&") for u in body.split(","))))
        elif side == "Rsp" and verb == "Send" and body == "ack":
            ack_n += 1
            steps.append(PostAck(f"ack{ack_n}"))
        elif side == "Rq" and verb == "Receive" and body == "ack":
            pending = [
                s.ref
                for s in steps
                if isinstance(s, PostAck)
                and s.ref not in {w.ref for w in steps if isinstance(w, WaitAck)}
            ]
            steps.append(WaitAck(pending[0]))
        else:
            raise ValueError(f"unparseable step: {line!r}")
    return Recipe(recipe_id, tuple(steps), updates, record_recovery_ok)


def _mark_signaled(steps: list[Step], ref: str) -> None:
    for i, s in enumerate(steps):
        if isinstance(s, (PostUpdate, PostSend, PostFlush)) and s.ref == ref:
            steps[i] = replace(s, signaled=True)
            return


def canonical_steps(recipe: Recipe) -> tuple[Step, ...]:
    """Steps with refs renamed in first-use order.

    Refs are internal wiring absent from the notation, so notation round
    trips are identity only up to this renaming.
    """
    names: dict[str, str] = {}

    def rename(ref: str) -> str:
        if ref not in names:
            names[ref] = f"r{len(names) + 1}"
        return names[ref]

    out = []
    for step in recipe.steps:
        if hasattr(step, "ref"):
            out.append(replace(step, ref=rename(step.ref)))
        else:
            out.append(step)
    return tuple(out)
