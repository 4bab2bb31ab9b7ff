"""The episode state machine and batch generation.

One episode runs the three phases per turn: every roster agent simulates a
candidate under the consistency gate (bounded regeneration), then the
active agent ranks the surviving pool and the flow gate picks the final
response, passing the mic when an inactive agent wins. Episodes are
independent work units; batches fan out across a thread pool while output
order stays equal to seed order, so parallelism never changes the bytes.
"""

from __future__ import annotations

import hashlib
import random
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field
from typing import Callable, Sequence

from .agents import BackendError, SkillAgent
from .classifiers import NliJudge, SkillScorer
from .core import (
    AnnotatedTurn,
    DialogueContext,
    EngineConfig,
    Episode,
    Refusal,
    SkillContext,
    SkillId,
    Utterance,
    config_digest,
)
from .distmath import stable_argmax
from .moderator import select_final, simulate_approved
from .seeds import SeedEpisode


class EpisodeAbortError(RuntimeError):
    """Every agent exhausted its consistency-phase attempts for a turn; the
    episode cannot reach its fixed length and is dropped."""

    def __init__(self, episode_id: str, turn: int, message: str):
        super().__init__(f"episode {episode_id} aborted at turn {turn}: {message}")
        self.episode_id = episode_id
        self.turn = turn


@dataclass(frozen=True)
class BatchReport:
    episodes_written: int
    aborts: tuple[tuple[int, str], ...]
    refusal_total: int


class BatchError(RuntimeError):
    """Writer I/O failed mid-batch; carries the partial report."""

    def __init__(self, message: str, partial: BatchReport):
        super().__init__(message)
        self.partial = partial


@dataclass
class EpisodeState:
    """Mutable per-episode state while the turn loop runs."""

    dtx: DialogueContext
    active_skill: SkillId
    turn_cursor: int
    side_to_speak: int
    annotated: list[AnnotatedTurn] = field(default_factory=list)
    rng_stream: random.Random = field(default_factory=random.Random)


def _episode_rng(rng_seed: int, episode_index: int) -> random.Random:
    # Streams keyed by (seed, index) keep batches order-independent.
    digest = hashlib.sha256(f"{rng_seed}:{episode_index}".encode("utf-8")).digest()
    return random.Random(int.from_bytes(digest[:8], "big"))


def _annotate(
    utt: Utterance,
    scorer: SkillScorer,
    mic_passed: bool,
    attempts: int,
    refusals: Sequence[Refusal],
) -> AnnotatedTurn:
    dist = scorer.score(utt.text)
    label = scorer.roster[stable_argmax(dist.probs)]
    return AnnotatedTurn(utt, label, dist, mic_passed, attempts, tuple(refusals))


def run_episode(
    seed: SeedEpisode,
    agents: Sequence[SkillAgent],
    judge: NliJudge,
    scorer: SkillScorer,
    cfg: EngineConfig,
    episode_id: str = "ep-000000",
    episode_index: int = 0,
) -> Episode:
    """Generate one fixed-length episode from a seed.

    Seed turns are annotated exactly like generated turns (mic never passed,
    zero consistency attempts); each following turn alternates the speaking
    side, fans the simulation over every roster agent with the speaking
    side's contexts, and selects via the active agent plus the flow gate.
    """
    by_id = {agent.skill.id: agent for agent in agents}
    roster_ids = sorted(s.id for s in cfg.skill_roster)
    if sorted(by_id) != roster_ids or len(list(agents)) != len(cfg.skill_roster):
        raise ValueError("agents must cover the skill roster exactly")

    first = Utterance(0, 0, seed.pair[0].text)
    second = Utterance(1, 1, seed.pair[1].text)
    state = EpisodeState(
        dtx=DialogueContext((first, second)),
        active_skill=seed.initial_active,
        turn_cursor=2,
        side_to_speak=0,
        annotated=[
            _annotate(first, scorer, False, 0, ()),
            _annotate(second, scorer, False, 0, ()),
        ],
        rng_stream=_episode_rng(cfg.rng_seed, episode_index),
    )

    while state.turn_cursor < cfg.episode_length:
        turn = state.turn_cursor
        side = state.side_to_speak
        stx_all = seed.contexts[side]

        refusals: list[Refusal] = []
        candidates = []
        try:
            for skill in cfg.skill_roster:
                agent = by_id[skill.id]
                stx_own = stx_all.get(skill) or SkillContext(skill, ())
                result = simulate_approved(agent, judge, stx_all, stx_own, state.dtx, cfg.max_attempts)
                refusals.extend(result.refusals)
                if result.candidate is not None:
                    candidates.append(result.candidate)
            if not candidates:
                raise EpisodeAbortError(
                    episode_id, turn, "every agent exhausted its consistency attempts"
                )
            active_agent = by_id[state.active_skill.id]
            stx_active = stx_all.get(state.active_skill) or SkillContext(state.active_skill, ())
            outcome = select_final(
                active_agent, scorer, stx_active, state.dtx, candidates, cfg.alpha, cfg.epsilon
            )
        except BackendError as exc:
            raise type(exc)(f"episode {episode_id} turn {turn}: {exc}") from exc

        utt = Utterance(side, turn, outcome.winner.text)
        state.annotated.append(
            _annotate(utt, scorer, outcome.mic_passed, outcome.winner.attempts, refusals)
        )
        state.dtx = state.dtx.extended(utt)
        if outcome.mic_passed:
            state.active_skill = outcome.winner.origin
        state.turn_cursor += 1
        state.side_to_speak = 1 - side

    return Episode(
        id=episode_id,
        seed_dataset=seed.seed_dataset,
        seed_pair=(first, second),
        contexts=seed.contexts,
        turns=tuple(state.annotated),
        config_digest=config_digest(cfg),
    )


def run_batch(
    seeds: Sequence[SeedEpisode],
    agents: Sequence[SkillAgent],
    judge: NliJudge,
    scorer: SkillScorer,
    cfg: EngineConfig,
    parallelism: int = 1,
    write: Callable[[Episode], None] | None = None,
    on_progress: Callable[[int, int], None] | None = None,
) -> BatchReport:
    """Generate episodes for every seed with up to ``parallelism`` workers.

    Output order equals seed order regardless of completion order; aborted
    episodes are recorded in the report, not written. Refusal totals count
    the written episodes, so recounting the output file reproduces them.
    """
    if parallelism < 1:
        raise ValueError("parallelism must be at least 1")

    def work(index: int, seed: SeedEpisode) -> Episode:
        return run_episode(
            seed, agents, judge, scorer, cfg, episode_id=f"ep-{index:06d}", episode_index=index
        )

    finished: dict[int, Episode] = {}
    abort_msgs: dict[int, str] = {}
    aborts: list[tuple[int, str]] = []
    written = 0
    refusal_total = 0
    next_index = 0

    def flush() -> None:
        nonlocal next_index, written, refusal_total
        while next_index in finished or next_index in abort_msgs:
            if next_index in finished:
                episode = finished.pop(next_index)
                if write is not None:
                    try:
                        write(episode)
                    except OSError as exc:
                        raise BatchError(
                            f"writer failed on episode {episode.id}: {exc}",
                            BatchReport(written, tuple(aborts), refusal_total),
                        ) from exc
                written += 1
                refusal_total += sum(len(t.refusals) for t in episode.turns)
            else:
                aborts.append((next_index, abort_msgs.pop(next_index)))
            next_index += 1
            if on_progress is not None:
                on_progress(written, len(aborts))

    with ThreadPoolExecutor(max_workers=parallelism) as pool:
        futures = {pool.submit(work, i, seed): i for i, seed in enumerate(seeds)}
        for future in as_completed(futures):
            index = futures[future]
            try:
                finished[index] = future.result()
            except EpisodeAbortError as exc:
                abort_msgs[index] = str(exc)
            flush()

    return BatchReport(written, tuple(aborts), refusal_total)
