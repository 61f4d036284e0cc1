"""Supervised-autonomy intervention state machine.

Operators trigger strategies (directly or via an observed-behavior code);
the robot runs the episode autonomously and always returns to standby. The
machine here is pure state transitions; pausing the game timer, clearing
conversation history and commanding behavior scripts happen in the engine,
which serializes all commands through one queue.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, replace
from enum import Enum
from functools import lru_cache
from importlib import resources
from typing import Optional, Union

from .core import BehaviorCode, ParticipantRole, StrategyKind, map_behavior_to_strategy

DEFAULT_MAX_TURNS = 6
DEFAULT_IDLE_TIMEOUT_MS = 20_000

#: Frozen digests of the five prompt template files; checked at load time,
#: by the test suite and by the CLI validate command.
PROMPT_SHA256 = {
    StrategyKind.BREATHING_EXERCISE: "a790b61e27462919e3a75b3d4de833b3cc6c0e8b8eb3514a3a4c8331fce8cdd1",
    StrategyKind.PHYSICAL_TOUCH: "7160650e2870ed4dcce68392196da665d12d07c451fdca494491d72cd1eda020",
    StrategyKind.POSITIVE_REINFORCEMENT: "64da1844571ea6b0be739d42f3d01bf2cdabddd6298ebf9485ed58fc2641c2b6",
    StrategyKind.EMOTION_VALIDATION: "6050a1ca044f3e8c0778cc948c7f7ddf8b89add8a1152e4bed8c2111da04d1c0",
    StrategyKind.REFOCUS: "7990d430c3f1163bb80f231ef3f63db1b36a876f127f51dcf5b044e1d186a287",
}


class NoPromptForStandby(LookupError):
    """Standby deactivates the language model; there is no prompt to render."""


def prompt_path(kind: StrategyKind):
    return resources.files("dyadbot").joinpath("prompts", f"{kind.value}.txt")


@lru_cache(maxsize=None)
def _load_prompt(kind: StrategyKind) -> str:
    data = prompt_path(kind).read_bytes()
    digest = hashlib.sha256(data).hexdigest()
    if digest != PROMPT_SHA256[kind]:
        raise RuntimeError(f"prompt fixture for {kind.value} does not match its frozen checksum")
    return data.decode("utf-8")


def render_prompt(kind: StrategyKind) -> str:
    """Return the stored prompt template, byte-identical to its fixture file."""
    if kind is StrategyKind.STANDBY:
        raise NoPromptForStandby("standby has no prompt (LLM is not activated)")
    return _load_prompt(kind)


@dataclass(frozen=True)
class CompletionPolicy:
    """An episode ends at the first of: turn cap, idle timeout, operator end."""

    max_turns: int = DEFAULT_MAX_TURNS
    idle_timeout_ms: int = DEFAULT_IDLE_TIMEOUT_MS


@dataclass(frozen=True)
class InterventionSpec:
    kind: StrategyKind
    trigger: Optional[BehaviorCode]
    prompt_template: str
    #: Ordered conversation phases; each item is the set of roles addressed.
    addressee_plan: tuple[tuple[ParticipantRole, ...], ...]
    behavior_script_id: str
    completion: CompletionPolicy

    @property
    def turns_per_phase(self) -> int:
        if not self.addressee_plan:
            return self.completion.max_turns
        return math.ceil(self.completion.max_turns / len(self.addressee_plan))


def strategy_specs(completion: Optional[CompletionPolicy] = None) -> dict[StrategyKind, InterventionSpec]:
    if completion is None:
        return dict(_default_specs())
    return dict(_build_specs(completion))


@lru_cache(maxsize=1)
def _default_specs() -> dict[StrategyKind, InterventionSpec]:
    return _build_specs(CompletionPolicy())


@lru_cache(maxsize=32)
def _build_specs(policy: CompletionPolicy) -> dict[StrategyKind, InterventionSpec]:
    parent = ParticipantRole.PARENT
    child = ParticipantRole.CHILD
    plans: dict[StrategyKind, tuple[tuple[ParticipantRole, ...], ...]] = {
        StrategyKind.BREATHING_EXERCISE: ((parent, child),),  # one joint phase
        StrategyKind.PHYSICAL_TOUCH: ((parent,), (child,)),
        StrategyKind.POSITIVE_REINFORCEMENT: ((parent,),),
        StrategyKind.EMOTION_VALIDATION: ((parent,), (child,)),
        StrategyKind.REFOCUS: ((child,),),
        StrategyKind.STANDBY: (),
    }
    triggers = {strategy: code for code, strategy in (
        (c, map_behavior_to_strategy(c)) for c in BehaviorCode
    )}
    specs = {}
    for kind in StrategyKind:
        template = "" if kind is StrategyKind.STANDBY else render_prompt(kind)
        specs[kind] = InterventionSpec(
            kind=kind,
            trigger=triggers.get(kind),
            prompt_template=template,
            addressee_plan=plans[kind],
            behavior_script_id=kind.value,
            completion=policy,
        )
    return specs


class CompletionReason(str, Enum):
    MAX_TURNS = "max_turns"
    IDLE_TIMEOUT = "idle_timeout"
    OPERATOR_END = "operator_end"
    PHASE_FORCED = "phase_forced"  # game phase left the session mid-episode


@dataclass(frozen=True)
class ActiveEpisode:
    """The live state-machine position; absence of one means Standby."""

    kind: StrategyKind
    episode_id: int
    started_at: int
    phase_index: int = 0
    turns_taken: int = 0
    #: Idle-clock anchor: advanced by human speech and by robot speech time,
    #: so the idle countdown freezes while the robot is talking.
    idle_anchor_ms: int = 0


@dataclass(frozen=True)
class MachineResult:
    episode: Optional[ActiveEpisode]
    preempted: Optional[ActiveEpisode] = None
    completed: Optional[ActiveEpisode] = None
    completion_reason: Optional[CompletionReason] = None
    warning: Optional[str] = None
    phase_advanced: bool = False


class InterventionMachine:
    """Single-writer state machine: at most one active episode per session."""

    def __init__(self, completion: Optional[CompletionPolicy] = None):
        self.specs = strategy_specs(completion)
        self.episode: Optional[ActiveEpisode] = None
        self._next_episode_id = 1

    @property
    def standby(self) -> bool:
        return self.episode is None

    def spec_for(self, kind: StrategyKind) -> InterventionSpec:
        return self.specs[kind]

    def current_spec(self) -> Optional[InterventionSpec]:
        return None if self.episode is None else self.specs[self.episode.kind]

    def current_addressees(self) -> tuple[ParticipantRole, ...]:
        if self.episode is None:
            return ()
        plan = self.specs[self.episode.kind].addressee_plan
        if not plan:
            return ()
        return plan[min(self.episode.phase_index, len(plan) - 1)]

    def trigger(self, command: Union[StrategyKind, BehaviorCode], now: int) -> MachineResult:
        """Start an episode; an already-active episode is preempted immediately.

        A behavior code resolves through the trigger table first. Triggering
        standby is the end command; doing so while already standing by is a
        warning no-op.
        """
        kind = map_behavior_to_strategy(command) if isinstance(command, BehaviorCode) else command
        if kind is StrategyKind.STANDBY:
            if self.episode is None:
                return MachineResult(None, warning="already in standby")
            return self.end(now, CompletionReason.OPERATOR_END)
        preempted = self.episode
        episode = ActiveEpisode(
            kind=kind,
            episode_id=self._next_episode_id,
            started_at=now,
            idle_anchor_ms=now,
        )
        self._next_episode_id += 1
        self.episode = episode
        return MachineResult(episode, preempted=preempted)

    def end(self, now: int, reason: CompletionReason) -> MachineResult:
        if self.episode is None:
            return MachineResult(None, warning="no active episode")
        done = self.episode
        self.episode = None
        return MachineResult(None, completed=done, completion_reason=reason)

    def on_turn_completed(self, now: int) -> MachineResult:
        """Count a finished conversation turn; advance phase or complete."""
        if self.episode is None:
            return MachineResult(None, warning="turn completed while standby")
        spec = self.specs[self.episode.kind]
        episode = replace(self.episode, turns_taken=self.episode.turns_taken + 1, idle_anchor_ms=now)
        if episode.turns_taken >= spec.completion.max_turns:
            self.episode = None
            return MachineResult(None, completed=episode, completion_reason=CompletionReason.MAX_TURNS)
        advanced = False
        if (
            episode.turns_taken % spec.turns_per_phase == 0
            and episode.phase_index + 1 < len(spec.addressee_plan)
        ):
            episode = replace(episode, phase_index=episode.phase_index + 1)
            advanced = True
        self.episode = episode
        return MachineResult(episode, phase_advanced=advanced)

    def set_phase_index(self, phase_index: int) -> MachineResult:
        """Operator override for the addressee phase (reassign command)."""
        if self.episode is None:
            return MachineResult(None, warning="no active episode")
        plan = self.specs[self.episode.kind].addressee_plan
        if not 0 <= phase_index < max(1, len(plan)):
            return MachineResult(self.episode, warning=f"phase index {phase_index} out of range")
        self.episode = replace(self.episode, phase_index=phase_index)
        return MachineResult(self.episode)

    def bump_idle_anchor(self, now: int) -> None:
        """Restart the idle countdown (human spoke, or robot speech ended,
        which keeps robot talking time out of the idle budget)."""
        if self.episode is not None and now > self.episode.idle_anchor_ms:
            self.episode = replace(self.episode, idle_anchor_ms=now)

    def idle_deadline(self) -> Optional[int]:
        if self.episode is None:
            return None
        spec = self.specs[self.episode.kind]
        return self.episode.idle_anchor_ms + spec.completion.idle_timeout_ms

    def idle_watchdog(self, now: int) -> MachineResult:
        """Complete the episode if no accepted human speech for the idle window."""
        deadline = self.idle_deadline()
        if deadline is None or now < deadline:
            return MachineResult(self.episode)
        return self.end(now, CompletionReason.IDLE_TIMEOUT)
