"""Mean-opinion-score study engine.

A study presents every manifest image once, plus a random subset a second
time as hidden consistency probes. Raters score items one at a time on a
1..5 scale, each in their own seed-determined order, without ever seeing
which method produced an image. Raters who score any probe pair unequally
are dropped before aggregation, and probe repeats never enter a mean.

Everything here is pure: sessions are immutable and every submit returns
a new one, so persistence can be a plain event log replayed in order.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, replace

import numpy as np

SCALE = (1, 2, 3, 4, 5)

DEFAULT_PROBE_FRACTION = 0.1


class MosError(Exception):
    """Base for study protocol violations."""


class RatingConflict(MosError):
    """The item was already rated."""


class OutOfOrderRating(MosError):
    """The item is not the session's current item."""


class ScoreOutOfRange(MosError):
    pass


@dataclass(frozen=True)
class MosItem:
    """One manifest entry: an image plus the labels raters must not see."""

    image_id: str
    method: str
    task: str


@dataclass(frozen=True)
class Presentation:
    """A slot in the study: which manifest item, and whether it is the
    hidden repeat of an earlier slot."""

    item_index: int
    probe: bool


@dataclass(frozen=True)
class MosStudy:
    study_id: str
    manifest: tuple
    probe_fraction: float
    seed: int
    presented: tuple

    @property
    def n_presented(self) -> int:
        return len(self.presented)

    def item_at(self, presented_index: int) -> MosItem:
        return self.manifest[self.presented[presented_index].item_index]


def _derive_id(manifest, probe_fraction, seed) -> str:
    key = json.dumps(
        [[m.image_id, m.method, m.task] for m in manifest]
        + [probe_fraction, seed],
        separators=(",", ":"),
    )
    return hashlib.sha256(key.encode()).hexdigest()[:12]


def create_study(manifest, probe_fraction=DEFAULT_PROBE_FRACTION, seed=0,
                 study_id=None) -> MosStudy:
    """Build a study from (image id, method, task) entries.

    The probe subset and the canonical slot order are fixed by ``seed``,
    so the same inputs always produce the same study.
    """
    manifest = tuple(
        m if isinstance(m, MosItem) else MosItem(*m) for m in manifest
    )
    if not manifest:
        raise ValueError("manifest is empty")
    if not 0.0 < probe_fraction <= 0.5:
        raise ValueError(
            f"probe_fraction must be in (0, 0.5], got {probe_fraction}"
        )
    seen = set()
    for m in manifest:
        if m.image_id in seen:
            raise ValueError(f"duplicate image id in manifest: {m.image_id}")
        seen.add(m.image_id)

    rng = np.random.default_rng(seed)
    n_probes = max(1, math.ceil(len(manifest) * probe_fraction))
    targets = rng.choice(len(manifest), size=n_probes, replace=False)
    slots = [Presentation(i, False) for i in range(len(manifest))]
    slots += [Presentation(int(t), True) for t in sorted(targets)]
    rng.shuffle(slots)
    return MosStudy(
        study_id=study_id or _derive_id(manifest, probe_fraction, seed),
        manifest=manifest,
        probe_fraction=float(probe_fraction),
        seed=int(seed),
        presented=tuple(slots),
    )


@dataclass(frozen=True)
class MosSession:
    """One rater's pass through a study.

    ``order`` permutes the study's slots; ``ratings`` is the scored
    prefix of that order, which is all the state in-order submission
    needs. Slot ``order[i]`` carries score ``ratings[i]``.
    """

    session_id: str
    rater_id: str
    study_id: str
    order: tuple
    ratings: tuple = ()

    @property
    def current_item(self) -> int:
        return len(self.ratings)

    @property
    def completed(self) -> bool:
        return len(self.ratings) == len(self.order)

    def score_by_slot(self) -> dict:
        return {
            self.order[i]: self.ratings[i] for i in range(len(self.ratings))
        }


def create_session(study: MosStudy, rater_id: str, ordinal: int,
                   session_id=None) -> MosSession:
    """Open a session; ``ordinal`` is its creation rank within the study
    and picks the rater's personal presentation order."""
    rng = np.random.default_rng((study.seed, 0x5e55, ordinal))
    order = tuple(int(i) for i in rng.permutation(study.n_presented))
    return MosSession(
        session_id=session_id or f"{study.study_id}-r{ordinal:04d}",
        rater_id=rater_id,
        study_id=study.study_id,
        order=order,
    )


def submit_rating(session: MosSession, item_index: int, score) -> MosSession:
    """Record a score for the session's current item.

    Items must be rated strictly in presentation order; rating an item
    twice is a conflict, skipping ahead is rejected.
    """
    if not isinstance(score, (int, np.integer)) or score not in SCALE:
        raise ScoreOutOfRange(f"score must be an integer in 1..5, got {score!r}")
    if session.completed:
        raise RatingConflict("session already completed")
    if item_index < session.current_item:
        raise RatingConflict(f"item {item_index} already rated")
    if item_index > session.current_item:
        raise OutOfOrderRating(
            f"item {item_index} submitted, current item is {session.current_item}"
        )
    return replace(session, ratings=session.ratings + (int(score),))


def next_payload(study: MosStudy, session: MosSession) -> dict:
    """What the rater is allowed to see for the current item.

    Never includes method or task labels; blinding is the whole point
    of the exercise.
    """
    if session.completed:
        return {"completed": True, "total": len(session.order)}
    slot = session.order[session.current_item]
    return {
        "completed": False,
        "item": session.current_item,
        "image": study.item_at(slot).image_id,
        "total": len(session.order),
    }


def _probe_pairs(study: MosStudy):
    """(base slot, probe slot) pairs presenting the same image."""
    first = {}
    for slot, pres in enumerate(study.presented):
        if not pres.probe:
            first[pres.item_index] = slot
    return [
        (first[pres.item_index], slot)
        for slot, pres in enumerate(study.presented)
        if pres.probe
    ]


def rater_consistent(session: MosSession, study: MosStudy, tolerance=0) -> bool:
    """True when every probe repeat got the same score as its original.

    ``tolerance`` loosens strict equality if a study wants it; 0 matches
    the drop-on-any-difference rule.
    """
    scores = session.score_by_slot()
    for base, probe in _probe_pairs(study):
        if abs(scores[base] - scores[probe]) > tolerance:
            return False
    return True


def consistency_filter(sessions, study: MosStudy, tolerance=0):
    """Split completed sessions into (kept, removed)."""
    for s in sessions:
        if not s.completed:
            raise ValueError(f"session {s.session_id} is not completed")
    kept, removed = [], []
    for s in sessions:
        (kept if rater_consistent(s, study, tolerance) else removed).append(s)
    return kept, removed


@dataclass(frozen=True)
class MosCell:
    method: str
    task: str
    mean: float
    ratings: int


@dataclass(frozen=True)
class MosReport:
    cells: tuple
    rater_count: int
    removed_count: int

    def mean(self, method: str, task: str) -> float:
        for cell in self.cells:
            if cell.method == method and cell.task == task:
                return cell.mean
        raise KeyError((method, task))

    def to_dict(self) -> dict:
        return {
            "rows": [
                {
                    "method": c.method,
                    "task": c.task,
                    "mean": c.mean,
                    "ratings": c.ratings,
                }
                for c in self.cells
            ],
            "raters": self.rater_count,
            "removed": self.removed_count,
        }


def aggregate(kept_sessions, study: MosStudy, removed_count=0) -> MosReport:
    """Per (method, task) mean over kept raters' non-probe scores.

    Probe repeats are dropped here so a probed image counts once, same
    as every other image.
    """
    kept_sessions = list(kept_sessions)
    if not kept_sessions:
        raise ValueError("no sessions survived filtering")
    sums, counts = {}, {}
    for session in kept_sessions:
        scores = session.score_by_slot()
        for slot, pres in enumerate(study.presented):
            if pres.probe:
                continue
            item = study.manifest[pres.item_index]
            key = (item.method, item.task)
            sums[key] = sums.get(key, 0) + scores[slot]
            counts[key] = counts.get(key, 0) + 1
    cells = tuple(
        MosCell(method, task, sums[(method, task)] / counts[(method, task)],
                counts[(method, task)])
        for method, task in sorted(sums)
    )
    return MosReport(cells, len(kept_sessions), removed_count)


def study_report(sessions, study: MosStudy, tolerance=0) -> MosReport:
    """Filter completed sessions and aggregate in one step."""
    complete = [s for s in sessions if s.completed]
    kept, removed = consistency_filter(complete, study, tolerance)
    return aggregate(kept, study, removed_count=len(removed))
