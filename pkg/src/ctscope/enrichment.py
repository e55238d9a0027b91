"""Seed-based hashtag enrichment and distant labeling of videos.

A candidate hashtag t is scored against a seed s by mixing the cosine of
their word co-occurrence rows with the cosine of their hashtag
co-occurrence rows, then damping by t's document frequency::

    score = (alpha * cos(W_s, W_t) + (1 - alpha) * cos(H_s, H_t)) / (1 + ln df(t))

The top ``k`` candidates per seed are pooled and handed to annotators,
whose per-tag classes drive the video-level labeling rule.
"""
from __future__ import annotations

import csv
import enum
import logging
import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .cooccur import KeyMissing, SparseCooccurrence, cosine_rows, cosine_to_all

logger = logging.getLogger(__name__)

DEFAULT_SEEDS = (
    "conspiracy", "flatearth", "qanon", "newworldorder", "chemtrails",
    "mindcontrol", "reptilian", "bigfoot", "illuminati", "ufo",
)


class HashtagClass(str, enum.Enum):
    CT = "CT"  # conspiratorial
    DW = "DW"  # dog whistle
    NOCT = "NOCT"  # noisy / not conspiracy
    HJ = "HJ"  # hijacked: conspiracy tag on unrelated content
    RHJ = "RHJ"  # reverse hijack: conspiracy tag on debunking content
    UNLABELED = "UNLABELED"


POSITIVE_CLASSES = frozenset({HashtagClass.CT, HashtagClass.DW})
EXCLUDING_CLASSES = frozenset({HashtagClass.NOCT, HashtagClass.HJ, HashtagClass.RHJ})


class VideoClass(str, enum.Enum):
    CONSPIRACY = "CONSPIRACY"
    NOT_CONSPIRACY = "NOT_CONSPIRACY"


@dataclass
class SeedSet:
    seeds: list[str] = field(default_factory=lambda: list(DEFAULT_SEEDS))
    alpha: float = 0.3
    top_k: int = 20

    def __post_init__(self):
        if not self.seeds:
            raise ValueError("seed set is empty")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        if self.top_k < 1:
            raise ValueError("top_k must be >= 1")


@dataclass(frozen=True)
class SimilarityResult:
    seed: str
    neighbor: str
    score: float
    df: int = 0
    rank: int = 0


def similarity(seed: str, target: str, matrices: SparseCooccurrence, alpha: float = 0.3) -> float:
    """Score of ``target`` against ``seed``, computed row by row."""
    s = matrices.tag_id(seed)
    t = matrices.tag_id(target)
    df_t = int(matrices.df[t])
    if df_t < 1:
        raise ValueError(f"df({target}) is zero")
    num = alpha * cosine_rows(matrices.hw, s, t) + (1 - alpha) * cosine_rows(matrices.hh, s, t)
    return num / (1.0 + math.log(df_t))


def score_all(seed: str, matrices: SparseCooccurrence, alpha: float = 0.3) -> np.ndarray:
    """Scores of every vocabulary hashtag against ``seed`` (seed's own slot included)."""
    s = matrices.tag_id(seed)
    cos_w = cosine_to_all(matrices.hw_normalized, s)
    cos_h = cosine_to_all(matrices.hh_normalized, s)
    np.clip(cos_w, 0.0, 1.0, out=cos_w)
    np.clip(cos_h, 0.0, 1.0, out=cos_h)
    damp = 1.0 + np.log(np.maximum(matrices.df, 1).astype(np.float64))
    return (alpha * cos_w + (1 - alpha) * cos_h) / damp


def top_k_similar(seed: str, matrices: SparseCooccurrence, params: SeedSet | None = None) -> list[SimilarityResult]:
    """The ``top_k`` highest-scoring hashtags for ``seed``.

    Only positive scores qualify and the seed never ranks against itself.
    Ties are broken by lower df, then lexicographic tag order (vocabulary
    ids are assigned in lexicographic order, so the id is the tiebreak).
    """
    params = params or SeedSet()
    scores = score_all(seed, matrices, params.alpha)
    s = matrices.tag_id(seed)
    scores[s] = 0.0
    cand = np.flatnonzero(scores > 0)
    k = params.top_k
    if len(cand) > k:
        # everything tied with the k-th best must survive to the sort
        kth = np.partition(scores[cand], len(cand) - k)[len(cand) - k]
        cand = cand[scores[cand] >= kth]
    order = np.lexsort((cand, matrices.df[cand], -scores[cand]))
    chosen = cand[order][:k]
    tags = matrices.vocab.hashtags
    return [SimilarityResult(seed, tags[t], float(scores[t]), int(matrices.df[t]), rank)
            for rank, t in enumerate(chosen, 1)]


@dataclass
class Enrichment:
    """Pooled neighbors across seeds.

    ``results`` holds one entry per discovered tag (max score kept, seeds
    themselves removed); ``per_seed`` the ranked lists behind it.
    """

    results: list[SimilarityResult]
    per_seed: dict[str, list[SimilarityResult]]
    missing_seeds: list[str]
    union_with_seeds: int

    @property
    def tags(self) -> list[str]:
        return [r.neighbor for r in self.results]


def enrich(seed_set: SeedSet, matrices: SparseCooccurrence) -> Enrichment:
    per_seed: dict[str, list[SimilarityResult]] = {}
    missing = []
    for seed in seed_set.seeds:
        try:
            per_seed[seed] = top_k_similar(seed, matrices, seed_set)
        except KeyMissing:
            logger.warning("seed %r not in vocabulary; skipped", seed)
            missing.append(seed)
    if not per_seed:
        raise KeyMissing(f"none of the {len(seed_set.seeds)} seeds is in the vocabulary")
    best: dict[str, SimilarityResult] = {}
    for seed in seed_set.seeds:
        for r in per_seed.get(seed, ()):
            cur = best.get(r.neighbor)
            if cur is None or r.score > cur.score:
                best[r.neighbor] = r
    seeds = set(seed_set.seeds)
    kept = sorted((r for t, r in best.items() if t not in seeds), key=lambda r: (-r.score, r.df, r.neighbor))
    logger.info("enrichment: %d tags pooled (%d including seeds)", len(kept), len(best))
    return Enrichment(kept, per_seed, missing, len(best))


REPORT_FIELDS = ["seed", "neighbor", "score", "df", "rank"]


def write_report(enrichment: Enrichment, path: str | Path) -> Path:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(REPORT_FIELDS)
        for seed, rows in enrichment.per_seed.items():
            for r in rows:
                w.writerow([seed, r.neighbor, repr(r.score), r.df, r.rank])
    return path


def load_seeds(path: str | Path) -> list[str]:
    """One tag per line; blank lines and '#' comments ignored."""
    seeds = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        seeds.append(line.split(" #", 1)[0].strip().lower())
    return seeds


def default_seeds_path() -> Path:
    return Path(str(resources.files("ctscope") / "data" / "seeds.txt"))


# --- labels -----------------------------------------------------------------

@dataclass(frozen=True)
class HashtagLabel:
    tag: str
    cls: HashtagClass
    annotator: str = ""
    note: str = ""


# when annotators disagree evenly, the more conservative class wins
_TIE_PRIORITY = [HashtagClass.NOCT, HashtagClass.RHJ, HashtagClass.HJ, HashtagClass.DW, HashtagClass.CT]
CONSENSUS_ANNOTATORS = ("consensus", "final")


def load_labels(path: str | Path) -> list[HashtagLabel]:
    """Read a tag,class,annotator,note CSV; lines starting with '#' are comments."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [ln for ln in fh if not ln.lstrip().startswith("#")]
    out = []
    seen: set[tuple[str, str]] = set()
    for row in csv.DictReader(rows):
        tag = row["tag"].strip().lstrip("#").lower()
        cls = HashtagClass(row["class"].strip().upper())
        annotator = (row.get("annotator") or "").strip()
        if (tag, annotator) in seen:
            raise ValueError(f"duplicate label for ({tag}, {annotator})")
        seen.add((tag, annotator))
        out.append(HashtagLabel(tag, cls, annotator, (row.get("note") or "").strip()))
    return out


def merge_labels(labels: Iterable[HashtagLabel]) -> dict[str, HashtagClass]:
    """One class per tag: a consensus annotator wins, else the majority."""
    by_tag: dict[str, list[HashtagLabel]] = defaultdict(list)
    for lab in labels:
        by_tag[lab.tag].append(lab)
    merged = {}
    for tag, labs in by_tag.items():
        final = [l for l in labs if l.annotator.lower() in CONSENSUS_ANNOTATORS]
        if final:
            merged[tag] = final[0].cls
            continue
        votes = Counter(l.cls for l in labs if l.cls is not HashtagClass.UNLABELED)
        if not votes:
            merged[tag] = HashtagClass.UNLABELED
            continue
        top = max(votes.values())
        tied = [c for c, n in votes.items() if n == top]
        merged[tag] = min(tied, key=_TIE_PRIORITY.index)
    return merged


def is_conspiracy(tags: Iterable[str], classes: Mapping[str, HashtagClass]) -> bool:
    found = {classes.get(t, HashtagClass.UNLABELED) for t in tags}
    return bool(found & POSITIVE_CLASSES) and not (found & EXCLUDING_CLASSES)


def distant_label(records: Iterable, labels: Mapping[str, HashtagClass]) -> dict[str, VideoClass]:
    """CONSPIRACY iff a video carries a CT or DW tag and no NOCT/HJ/RHJ tag."""
    return {r.video_id: VideoClass.CONSPIRACY if is_conspiracy(r.hashtags, labels) else VideoClass.NOT_CONSPIRACY
            for r in records}


def write_video_labels(labels: Mapping[str, VideoClass], path: str | Path) -> Path:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["video_id", "label"])
        for vid, lab in labels.items():
            w.writerow([vid, lab.value])
    return path


def read_video_labels(path: str | Path) -> dict[str, VideoClass]:
    with open(path, newline="", encoding="utf-8") as fh:
        return {row["video_id"]: VideoClass(row["label"]) for row in csv.DictReader(fh)}


def class_counts(labels: Mapping[str, HashtagClass], tags: Sequence[str] | None = None) -> dict[str, int]:
    """Per-class tally over ``tags`` (all labeled tags when omitted)."""
    tags = list(labels) if tags is None else tags
    c = Counter(labels.get(t, HashtagClass.UNLABELED).value for t in tags)
    return {k.value: c.get(k.value, 0) for k in HashtagClass}
