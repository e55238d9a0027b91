"""Synthetic corpora and datasets for tests, demos and scale checks."""
from __future__ import annotations

import calendar
from dataclasses import dataclass
from datetime import datetime, timezone
from typing import Iterator, Sequence

import numpy as np

from .classify import CONSPIRACY_CUES, DatasetItem
from .enrichment import DEFAULT_SEEDS
from .ingest import VideoRecord

FILLER = (
    "today going show you how make the best recipe ever really easy just need some simple "
    "ingredients first take your pan and then add little bit of oil wait until it gets hot "
    "my friends always ask me about this so here it is we are back with another video "
    "about life work family travel music dance workout morning routine coffee shopping "
    "review honest opinion weekend vlog story time funny moment school college job money"
).split()

CONSPIRACY_TAGS = ("illuminati", "chemtrails", "flatearth", "qanon", "newworldorder",
                   "reptilian", "mindcontrol", "wakeup", "truthseeker", "deepstate")
EVERYDAY_TAGS = ("fyp", "foryou", "viral", "food", "dance", "funny", "music", "travel", "pets", "fitness",
                 "comedy", "recipe", "makeup", "gaming", "sports", "style", "diy", "art", "books", "cars")


def _month_bounds(month: str) -> tuple[int, int]:
    y, m = map(int, month.split("-"))
    start = datetime(y, m, 1, tzinfo=timezone.utc)
    days = calendar.monthrange(y, m)[1]
    return int(start.timestamp()), days * 86400


def sampled_month(rng: np.random.Generator, month: str, population: int, draws: int,
                  prevalence: float = 0.0, prefix: str = "v") -> list[VideoRecord]:
    """``draws`` uniform draws with replacement from a month of ``population`` videos.

    Roughly ``prevalence`` of the population carries a conspiracy hashtag.
    Duplicated draws repeat the same record.
    """
    t0, span = _month_bounds(month)
    ids = rng.integers(0, population, size=draws)
    positive = rng.random(population) < prevalence
    times = t0 + rng.integers(0, span, size=population)
    out = []
    cache: dict[int, VideoRecord] = {}
    for i in ids:
        i = int(i)
        rec = cache.get(i)
        if rec is None:
            tags = [EVERYDAY_TAGS[(i * 7) % len(EVERYDAY_TAGS)], EVERYDAY_TAGS[(i * 13 + 3) % len(EVERYDAY_TAGS)]]
            if positive[i]:
                tags.append(CONSPIRACY_TAGS[i % len(CONSPIRACY_TAGS)])
            rec = cache[i] = VideoRecord(
                video_id=f"{prefix}{month}-{i}", create_time=int(times[i]), duration=60 + i % 240,
                description="video about " + " ".join(FILLER[(i + k) % len(FILLER)] for k in range(6)),
                hashtags=tuple(dict.fromkeys(tags)), region="US", username=f"u{i % (population // 2 + 1)}")
        out.append(rec)
    return out


def synthetic_corpus(months: Sequence[tuple[str, int, int]], prevalence: float = 0.001,
                     seed: int = 0) -> list[VideoRecord]:
    """Concatenated sampled months; ``months`` holds (YYYY-MM, population, draws)."""
    rng = np.random.default_rng(seed)
    out: list[VideoRecord] = []
    for month, population, draws in months:
        out.extend(sampled_month(rng, month, population, draws, prevalence))
    return out


DEMO_MONTHS = (("2023-01", 20000, 20000), ("2023-02", 20000, 24000), ("2023-03", 25000, 30000))


def toy_corpus(n: int = 50, seed: int = 7) -> list[VideoRecord]:
    """Small corpus with overlapping conspiracy and everyday hashtags."""
    rng = np.random.default_rng(seed)
    t0 = int(datetime(2022, 5, 1, tzinfo=timezone.utc).timestamp())
    conspiracy = list(DEFAULT_SEEDS) + ["wakeup", "truthseeker", "deepstate"]
    everyday = list(EVERYDAY_TAGS[:8])
    out = []
    for i in range(n):
        consp = rng.random() < 0.4
        pool = conspiracy if consp else everyday
        k = int(rng.integers(1, 5))
        tags = [str(t) for t in rng.choice(pool, size=min(k, len(pool)), replace=False)]
        if rng.random() < 0.3:
            tags.append(str(rng.choice(everyday if consp else conspiracy)))
        words = [str(w) for w in rng.choice(FILLER, size=int(rng.integers(4, 12)))]
        if consp:
            words += map(str, rng.choice(["truth", "hidden", "government", "secret", "wake", "sheep"],
                                     size=int(rng.integers(1, 4))))
        desc = " ".join(words) + " " + " ".join("#" + t for t in tags)
        out.append(VideoRecord(f"toy{i:03d}", t0 + int(rng.integers(0, 30 * 86400)), int(rng.integers(60, 300)),
                               desc, tuple(dict.fromkeys(tags)), "US"))
    return out


@dataclass
class ScaleCorpus:
    """Lazily generated corpus for scale checks; iterating twice yields the same records.

    Hashtag popularity follows (rank + 10)^-0.8 over ``n_tags`` tags, words
    (rank + 5)^-1 over ``n_words`` words. The first tags are the default
    seeds, so they are also the most frequent ones.
    """

    n_videos: int = 1_000_000
    n_tags: int = 250_000
    n_words: int = 100_000
    seed: int = 0
    chunk: int = 50_000

    def __post_init__(self):
        seeds = list(DEFAULT_SEEDS)
        self.tag_names = seeds + [f"t{i}" for i in range(len(seeds), self.n_tags)]
        self.word_names = [f"w{i}" for i in range(self.n_words)]
        tp = (np.arange(self.n_tags) + 10.0) ** -0.8
        self._tag_cdf = np.cumsum(tp / tp.sum())
        wp = (np.arange(self.n_words) + 5.0) ** -1.0
        self._word_cdf = np.cumsum(wp / wp.sum())

    def __len__(self) -> int:
        return self.n_videos

    def __iter__(self) -> Iterator[VideoRecord]:
        t0 = int(datetime(2021, 1, 1, tzinfo=timezone.utc).timestamp())
        span = 3 * 365 * 86400
        tags, words = self.tag_names, self.word_names
        for start in range(0, self.n_videos, self.chunk):
            n = min(self.chunk, self.n_videos - start)
            rng = np.random.default_rng([self.seed, start])
            nt = np.minimum(1 + rng.poisson(2.0, n), 10)
            nw = rng.integers(5, 21, n)
            tag_ids = np.minimum(np.searchsorted(self._tag_cdf, rng.random(int(nt.sum()))), self.n_tags - 1)
            word_ids = np.minimum(np.searchsorted(self._word_cdf, rng.random(int(nw.sum()))), self.n_words - 1)
            times = t0 + rng.integers(0, span, n)
            to, wo = 0, 0
            for j in range(n):
                tj = tag_ids[to:to + nt[j]]
                to += nt[j]
                wj = word_ids[wo:wo + nw[j]]
                wo += nw[j]
                yield VideoRecord(f"s{start + j}", int(times[j]), 60,
                                  " ".join([words[w] for w in wj]),
                                  tuple(dict.fromkeys(tags[t] for t in tj)), "US")


def _transcript(rng: np.random.Generator, n_words: int, positive: bool) -> str:
    words = list(rng.choice(FILLER, size=n_words))
    if positive:
        for _ in range(int(rng.integers(1, 4))):
            words.insert(int(rng.integers(0, len(words) + 1)), str(rng.choice(CONSPIRACY_CUES)))
    return " ".join(words)


def classification_dataset(n_pos: int, n_neg: int, seed: int = 0, prefix: str = "item") -> list[DatasetItem]:
    """Synthetic transcripts; positives mention conspiracy cues.

    Lengths are log-normal with medians near 325 (positive) and 286
    (negative) words.
    """
    rng = np.random.default_rng(seed)
    items = []
    for i in range(n_pos + n_neg):
        pos = i < n_pos
        n = int(np.clip(rng.lognormal(np.log(325 if pos else 286), 0.6), 20, 1919))
        items.append(DatasetItem(f"{prefix}{i:05d}", _transcript(rng, n, pos), int(pos), "distant"))
    order = rng.permutation(len(items))
    return [items[i] for i in order]
