"""The moderator's two perception channels: NLI judgment and skill
classification.

Both come as interfaces with two implementations each: deterministic
lexical stand-ins (substring pattern tables and weighted keyword counts)
and remote clients speaking the wire protocol from :mod:`skillblend.agents`.
The engine never embeds model weights.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Mapping, Protocol, Sequence

from .agents import BackendEndpoint, ProtocolError, post_json
from .core import SkillDistribution, SkillId
from .distmath import softmax, stable_argmax


class NliLabel(Enum):
    ENTAIL = "entail"
    NEUTRAL = "neutral"
    CONTRADICT = "contradict"


@dataclass(frozen=True)
class NliVerdict:
    label: NliLabel
    confidence: float

    def __post_init__(self) -> None:
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError("confidence must be in [0, 1]")


class NliJudge(Protocol):
    """Judges whether a hypothesis can be inferred from a premise.
    Implementations must be deterministic for fixed inputs."""

    def judge(self, premise: str, hypothesis: str) -> NliVerdict:
        ...


class SkillScorer(Protocol):
    """Maps an utterance to a probability distribution over the roster."""

    roster: tuple[SkillId, ...]

    def score(self, text: str) -> SkillDistribution:
        ...


@dataclass(frozen=True)
class LexiconSpec:
    """Configuration for the lexical stand-ins.

    ``keywords`` maps each roster skill id to (keyword, weight) pairs;
    ``contradiction_pairs`` and ``entail_pairs`` are ordered
    (premise-pattern, hypothesis-pattern) tables matched first-wins by
    case-insensitive substring on both sides. Anything unmatched is Neutral.
    """

    roster: tuple[SkillId, ...]
    keywords: Mapping[str, tuple[tuple[str, float], ...]]
    contradiction_pairs: tuple[tuple[str, str], ...] = ()
    entail_pairs: tuple[tuple[str, str], ...] = ()

    def __post_init__(self) -> None:
        if len(self.roster) < 2:
            raise ValueError("a lexicon needs a roster of at least two skills")
        normalized = {}
        for skill in self.roster:
            entries = tuple(self.keywords.get(skill.id, ()))
            for keyword, _weight in entries:
                if not keyword.strip():
                    raise ValueError("keywords must be non-blank")
            normalized[skill.id] = entries
        extra = set(self.keywords) - set(normalized)
        if extra:
            raise ValueError(f"keywords reference skills outside the roster: {sorted(extra)}")
        object.__setattr__(self, "keywords", normalized)
        for premise, hypothesis in self.contradiction_pairs + self.entail_pairs:
            if not premise.strip() or not hypothesis.strip():
                raise ValueError("NLI patterns must be non-blank")


def lexical_nli(spec: LexiconSpec, premise: str, hypothesis: str) -> NliVerdict:
    """First matching contradiction pair wins, then the first entail pair;
    otherwise Neutral. Patterned verdicts carry confidence 1.0, the default
    Neutral 0.5 (downstream gates use only the label)."""
    premise_l = premise.lower()
    hypothesis_l = hypothesis.lower()
    for prem_pat, hyp_pat in spec.contradiction_pairs:
        if prem_pat.lower() in premise_l and hyp_pat.lower() in hypothesis_l:
            return NliVerdict(NliLabel.CONTRADICT, 1.0)
    for prem_pat, hyp_pat in spec.entail_pairs:
        if prem_pat.lower() in premise_l and hyp_pat.lower() in hypothesis_l:
            return NliVerdict(NliLabel.ENTAIL, 1.0)
    return NliVerdict(NliLabel.NEUTRAL, 0.5)


def lexical_skill_score(spec: LexiconSpec, text: str) -> SkillDistribution:
    """Raw score per skill = sum of weights of its keywords found in the
    text (case-insensitive substring); the result is the softmax of the raw
    scores, so keyword-free text comes out uniform."""
    text_l = text.lower()
    raw = [
        sum(weight for keyword, weight in spec.keywords[skill.id] if keyword.lower() in text_l)
        for skill in spec.roster
    ]
    return softmax(raw)


@dataclass(frozen=True)
class LexicalNliJudge:
    spec: LexiconSpec

    def judge(self, premise: str, hypothesis: str) -> NliVerdict:
        return lexical_nli(self.spec, premise, hypothesis)


@dataclass(frozen=True)
class LexicalSkillScorer:
    spec: LexiconSpec

    @property
    def roster(self) -> tuple[SkillId, ...]:
        return self.spec.roster

    def score(self, text: str) -> SkillDistribution:
        return lexical_skill_score(self.spec, text)


def classify_label(scorer: SkillScorer, text: str) -> SkillId:
    """Roster id at the stable argmax of the scorer's distribution."""
    dist = scorer.score(text)
    return scorer.roster[stable_argmax(dist.probs)]


@dataclass(frozen=True)
class RemoteNliJudge:
    endpoint: BackendEndpoint

    def judge(self, premise: str, hypothesis: str) -> NliVerdict:
        obj, raw = post_json(self.endpoint, "/nli", {"premise": premise, "hypothesis": hypothesis})
        label = obj.get("label")
        confidence = obj.get("confidence")
        if label not in ("entail", "neutral", "contradict"):
            raise ProtocolError(f"/nli: missing or unknown 'label' {label!r}", raw)
        if not isinstance(confidence, (int, float)) or isinstance(confidence, bool):
            raise ProtocolError("/nli: missing or non-numeric 'confidence'", raw)
        try:
            return NliVerdict(NliLabel(label), float(confidence))
        except ValueError as exc:
            raise ProtocolError(f"/nli: {exc}", raw)


@dataclass(frozen=True)
class RemoteSkillScorer:
    endpoint: BackendEndpoint
    roster: tuple[SkillId, ...]

    def score(self, text: str) -> SkillDistribution:
        obj, raw = post_json(self.endpoint, "/classify", {"text": text})
        dist = obj.get("distribution")
        if not isinstance(dist, list) or len(dist) != len(self.roster):
            got = len(dist) if isinstance(dist, list) else "no"
            raise ProtocolError(
                f"/classify: expected {len(self.roster)} probabilities, got {got}", raw
            )
        if any(not isinstance(p, (int, float)) or isinstance(p, bool) for p in dist):
            raise ProtocolError("/classify: non-numeric probability in response", raw)
        try:
            return SkillDistribution(tuple(float(p) for p in dist))
        except ValueError as exc:
            raise ProtocolError(f"/classify: {exc}", raw)


_DEFAULT_KEYWORDS: dict[str, tuple[tuple[str, float], ...]] = {
    "P": (
        ("i love", 1.0),
        ("my favorite", 1.0),
        ("me too", 1.0),
        ("personally", 1.0),
        ("for me", 0.5),
        ("i like", 0.5),
    ),
    "K": (
        ("did you know", 1.0),
        ("actually", 1.0),
        ("fact", 1.0),
        ("known", 0.5),
        ("history", 0.5),
        ("designed", 0.5),
    ),
    "E": (
        ("sounds", 1.0),
        ("glad", 1.0),
        ("i hear you", 1.0),
        ("sorry", 1.0),
        ("hope", 0.5),
        ("feel", 0.5),
    ),
}

_DEFAULT_CONTRADICTIONS: tuple[tuple[str, str], ...] = (
    ("i wear sneakers everyday", "sandals"),
    ("i am a vegetarian", "bacon"),
    ("i live alone", "my roommate"),
)

_DEFAULT_ENTAILMENTS: tuple[tuple[str, str], ...] = (("i like tennis", "i enjoy tennis"),)


def default_lexicon(roster: Sequence[SkillId]) -> LexiconSpec:
    """Shipped lexical configuration; skills beyond P/K/E get empty keyword
    lists (their texts then score uniform)."""
    keywords = {s.id: _DEFAULT_KEYWORDS.get(s.id, ()) for s in roster}
    return LexiconSpec(
        roster=tuple(roster),
        keywords=keywords,
        contradiction_pairs=_DEFAULT_CONTRADICTIONS,
        entail_pairs=_DEFAULT_ENTAILMENTS,
    )
