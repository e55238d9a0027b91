"""Loading, deduplicating and profiling video metadata.

Records follow the Research API field names (``id``, ``create_time``,
``video_duration``, ``video_description``, ``hashtag_names``,
``region_code``, ``voice_to_text``, ``username``). ``fetch_window`` pages
through a query endpoint under a fixed daily request budget.
"""
from __future__ import annotations

import csv
import enum
import json
import logging
import os
import time
from collections import Counter
from dataclasses import asdict, dataclass, field
from datetime import date, datetime, timedelta, timezone
from pathlib import Path
from typing import Callable, Iterable, Iterator

import numpy as np
import requests

from .population import MonthlyCounts

logger = logging.getLogger(__name__)


class TranscriptSource(str, enum.Enum):
    NATIVE = "NATIVE"
    EXTERNAL = "EXTERNAL"
    NONE = "NONE"


def normalize_hashtag(tag: str) -> str:
    tag = tag.strip().lstrip("#").lower()
    if not tag or any(ch.isspace() for ch in tag):
        raise ValueError(f"invalid hashtag {tag!r}")
    return tag


@dataclass(frozen=True)
class VideoRecord:
    video_id: str
    create_time: int
    duration: int = 0
    description: str = ""
    hashtags: tuple[str, ...] = ()
    region: str = ""
    transcript: str | None = None
    transcript_source: TranscriptSource = TranscriptSource.NONE
    username: str | None = None

    def __post_init__(self):
        if not self.video_id:
            raise ValueError("video_id must be non-empty")
        if self.duration < 0:
            raise ValueError("duration must be >= 0")
        if (self.transcript is None) != (self.transcript_source is TranscriptSource.NONE):
            raise ValueError("transcript_source must be NONE exactly when transcript is absent")
        for tag in self.hashtags:
            if not tag or tag.startswith("#") or any(ch.isspace() for ch in tag):
                raise ValueError(f"invalid hashtag {tag!r}")

    @property
    def created(self) -> datetime:
        return datetime.fromtimestamp(self.create_time, tz=timezone.utc)

    @property
    def month(self) -> str:
        return self.created.strftime("%Y-%m")

    @classmethod
    def from_api(cls, obj: dict) -> "VideoRecord":
        """Build a record from one Research-API style JSON object."""
        vtt = obj.get("voice_to_text")
        external = obj.get("transcript")
        if vtt:
            transcript, source = vtt, TranscriptSource.NATIVE
        elif external:
            transcript, source = external, TranscriptSource.EXTERNAL
        else:
            transcript, source = None, TranscriptSource.NONE
        tags: list[str] = []
        for t in obj.get("hashtag_names") or ():
            t = normalize_hashtag(t)
            if t not in tags:
                tags.append(t)
        user = obj.get("username")
        return cls(
            video_id=str(obj["id"]),
            create_time=int(obj["create_time"]),
            duration=int(obj.get("video_duration") or 0),
            description=obj.get("video_description") or "",
            hashtags=tuple(tags),
            region=obj.get("region_code") or "",
            transcript=transcript,
            transcript_source=source,
            username=str(user) if user is not None else None,
        )

    def to_api(self) -> dict:
        out = {
            "id": self.video_id,
            "create_time": self.create_time,
            "video_duration": self.duration,
            "video_description": self.description,
            "hashtag_names": list(self.hashtags),
            "region_code": self.region,
        }
        if self.username is not None:
            out["username"] = self.username
        if self.transcript_source is TranscriptSource.NATIVE:
            out["voice_to_text"] = self.transcript
        elif self.transcript_source is TranscriptSource.EXTERNAL:
            out["transcript"] = self.transcript
        return out


def load_corpus(path: str | Path, format: str = "jsonl",
                errors: list[tuple[int, str]] | None = None) -> Iterator[VideoRecord]:
    """Stream records from a JSONL file in file order.

    Malformed lines are skipped with a warning carrying the line number;
    pass a list as ``errors`` to collect ``(line_no, message)`` pairs.
    The file is opened eagerly so a missing file fails at call time.
    """
    if format.lower() != "jsonl":
        raise ValueError(f"unsupported format {format!r}")
    fh = open(path, "r", encoding="utf-8")
    return _iter_jsonl(fh, str(path), errors)


def _iter_jsonl(fh, name: str, errors) -> Iterator[VideoRecord]:
    skipped = 0
    with fh:
        for line_no, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = VideoRecord.from_api(json.loads(line))
            except (ValueError, KeyError, TypeError) as exc:
                skipped += 1
                logger.warning("%s:%d: skipping malformed record (%s)", name, line_no, exc)
                if errors is not None:
                    errors.append((line_no, str(exc)))
                continue
            yield rec
    if skipped:
        logger.warning("%s: %d malformed line(s) skipped", name, skipped)


def write_corpus(records: Iterable[VideoRecord], path: str | Path) -> int:
    n = 0
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps(r.to_api(), ensure_ascii=False) + "\n")
            n += 1
    return n


@dataclass
class CorpusStats:
    total: int = 0
    unique: int = 0
    duplicates: int = 0
    unique_users: int = 0
    per_month: dict[str, MonthlyCounts] = field(default_factory=dict)
    # video_id -> (month, number of draws); feeds prevalence over draws
    occurrences: dict[str, tuple[str, int]] = field(default_factory=dict, repr=False)

    @property
    def per_month_duplicates(self) -> dict[str, int]:
        return {m: c.K - c.N for m, c in self.per_month.items()}

    def to_json(self) -> dict:
        return {
            "total": self.total,
            "unique": self.unique,
            "duplicates": self.duplicates,
            "unique_users": self.unique_users,
            "per_month": {m: {"K": c.K, "N": c.N, "N1": c.N1, "duplicates": c.K - c.N}
                          for m, c in sorted(self.per_month.items())},
        }

    def write_draws(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("video_id,month,draws\n")
            for vid, (month, draws) in self.occurrences.items():
                fh.write(f"{vid},{month},{draws}\n")

    @classmethod
    def from_draws(cls, path: str | Path) -> "CorpusStats":
        """Rebuild stats from a draws table written by :meth:`write_draws`."""
        occ: dict[str, tuple[str, int]] = {}
        with open(path, newline="", encoding="utf-8") as fh:
            for row in csv.DictReader(fh):
                occ[row["video_id"]] = (row["month"], int(row["draws"]))
        return _stats_from_occurrences(occ, users=0)


def _stats_from_occurrences(occ: dict[str, tuple[str, int]], users: int) -> CorpusStats:
    K: Counter = Counter()
    N: Counter = Counter()
    N1: Counter = Counter()
    for month, draws in occ.values():
        K[month] += draws
        N[month] += 1
        N1[month] += draws == 1
    total = sum(K.values())
    return CorpusStats(
        total=total,
        unique=len(occ),
        duplicates=total - len(occ),
        unique_users=users,
        per_month={m: MonthlyCounts(m, K[m], N[m], N1[m]) for m in sorted(K)},
        occurrences=occ,
    )


def deduplicate(records: Iterable[VideoRecord]) -> tuple[list[VideoRecord], CorpusStats]:
    """Keep the first occurrence of each video id and tally draws per month.

    A video's month is that of its first occurrence.
    """
    unique: list[VideoRecord] = []
    occ: dict[str, tuple[str, int]] = {}
    users: set[str] = set()
    for r in records:
        seen = occ.get(r.video_id)
        if seen is None:
            occ[r.video_id] = (r.month, 1)
            unique.append(r)
            if r.username:
                users.add(r.username)
        else:
            occ[r.video_id] = (seen[0], seen[1] + 1)
    return unique, _stats_from_occurrences(occ, len(users))


@dataclass
class TemporalHistograms:
    day_of_month: np.ndarray  # index 0 is day 1
    day_of_week: np.ndarray  # Monday = 0
    hour: np.ndarray  # UTC
    minute: np.ndarray

    BINS = {"day_of_month": 31, "day_of_week": 7, "hour": 24, "minute": 60}

    def items(self):
        return [("day_of_month", self.day_of_month), ("day_of_week", self.day_of_week),
                ("hour", self.hour), ("minute", self.minute)]

    def write_csv(self, out_dir: str | Path) -> list[Path]:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        paths = []
        for name, counts in self.items():
            offset = 1 if name == "day_of_month" else 0
            p = out_dir / f"hist_{name}.csv"
            with p.open("w", encoding="utf-8") as fh:
                fh.write("bin,count\n")
                for i, v in enumerate(counts):
                    fh.write(f"{i + offset},{int(v)}\n")
            paths.append(p)
        return paths


def temporal_histograms(records: Iterable[VideoRecord]) -> TemporalHistograms:
    h = TemporalHistograms(*(np.zeros(n, dtype=np.int64) for n in TemporalHistograms.BINS.values()))
    for r in records:
        t = r.created
        h.day_of_month[t.day - 1] += 1
        h.day_of_week[t.weekday()] += 1
        h.hour[t.hour] += 1
        h.minute[t.minute] += 1
    return h


def merge_histograms(parts: Iterable[TemporalHistograms]) -> TemporalHistograms:
    parts = list(parts)
    if not parts:
        return temporal_histograms([])
    return TemporalHistograms(*(sum(getattr(p, n) for p in parts) for n in TemporalHistograms.BINS))


# --- fetching ---------------------------------------------------------------

class QuotaExhausted(RuntimeError):
    """The daily request budget ran out before the query was finished."""

    def __init__(self, msg: str, fetched: int = 0):
        super().__init__(msg)
        self.fetched = fetched


class FetchError(RuntimeError):
    pass


@dataclass
class QuotaBudget:
    max_requests_per_day: int = 1000
    used_today: int = 0
    day_anchor: date = field(default_factory=lambda: datetime.now(timezone.utc).date())

    def __post_init__(self):
        if isinstance(self.day_anchor, str):
            self.day_anchor = date.fromisoformat(self.day_anchor)
        if not 0 <= self.used_today <= self.max_requests_per_day:
            raise ValueError("used_today must lie in [0, max_requests_per_day]")

    def _roll(self, now: datetime | None = None) -> None:
        today = (now or datetime.now(timezone.utc)).astimezone(timezone.utc).date()
        if today != self.day_anchor:
            self.day_anchor = today
            self.used_today = 0

    def remaining(self, now: datetime | None = None) -> int:
        self._roll(now)
        return self.max_requests_per_day - self.used_today

    def consume(self, now: datetime | None = None) -> None:
        self._roll(now)
        if self.used_today >= self.max_requests_per_day:
            raise QuotaExhausted(f"daily budget of {self.max_requests_per_day} requests used")
        self.used_today += 1

    def save(self, path: str | Path) -> None:
        d = asdict(self)
        d["day_anchor"] = self.day_anchor.isoformat()
        Path(path).write_text(json.dumps(d), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "QuotaBudget":
        return cls(**json.loads(Path(path).read_text(encoding="utf-8")))


@dataclass
class VideoQuery:
    region: str = "US"
    min_duration: int = 60
    start_date: date = date(2021, 1, 1)
    end_date: date = date(2021, 1, 7)
    randomized: bool = True
    max_count: int = 100

    def duration_buckets(self) -> list[str]:
        # API length classes: SHORT < 15 s, MID 15-60 s, LONG 1-5 min, EXTRA_LONG > 5 min
        buckets = [("SHORT", 0, 15), ("MID", 15, 60), ("LONG", 60, 300), ("EXTRA_LONG", 300, None)]
        return [name for name, lo, hi in buckets if hi is None or hi > self.min_duration]

    def body(self) -> dict:
        conds = [{"operation": "IN", "field_name": "region_code", "field_values": [self.region]}]
        if self.min_duration > 0:
            conds.append({"operation": "IN", "field_name": "video_length",
                          "field_values": self.duration_buckets()})
        return {
            "query": {"and": conds},
            "start_date": self.start_date.strftime("%Y%m%d"),
            "end_date": self.end_date.strftime("%Y%m%d"),
            "max_count": self.max_count,
            "is_random": self.randomized,
        }


def weekly_windows(start: date, end: date) -> Iterator[tuple[date, date]]:
    """Consecutive 7-day windows covering [start, end]."""
    cur = start
    while cur <= end:
        stop = min(cur + timedelta(days=6), end)
        yield cur, stop
        cur = stop + timedelta(days=1)


FIELDS = "id,create_time,username,region_code,video_description,video_duration,hashtag_names,voice_to_text"


def fetch_window(query: VideoQuery, budget: QuotaBudget, endpoint: str, *,
                 token_env: str = "RESEARCH_API_TOKEN", max_pages: int = 100, retries: int = 3,
                 backoff: float = 1.0, timeout: float = 60.0, session: requests.Session | None = None,
                 audit: Callable[[dict], None] | None = None) -> Iterator[VideoRecord]:
    """Page through one query window, yielding records.

    Stops on ``has_more == False``, an empty page, or after ``max_pages``.
    Every HTTP attempt (retries included) consumes one unit of ``budget``;
    running out mid-window raises :class:`QuotaExhausted` after all records
    already received have been yielded. ``audit`` receives one dict per
    request with the request and response bodies.
    """
    session = session or requests.Session()
    headers = {"Content-Type": "application/json"}
    token = os.environ.get(token_env)
    if token:
        headers["Authorization"] = f"Bearer {token}"
    url = endpoint if "fields=" in endpoint else f"{endpoint}?fields={FIELDS}"
    body = query.body()
    fetched = 0
    dropped = 0
    for page in range(max_pages):
        try:
            payload = _post_with_retry(session, url, body, headers, budget, retries, backoff, timeout, audit)
        except QuotaExhausted as exc:
            raise QuotaExhausted(str(exc), fetched) from None
        data = payload.get("data") or {}
        videos = data.get("videos") or []
        for obj in videos:
            try:
                rec = VideoRecord.from_api(obj)
            except (ValueError, KeyError, TypeError) as exc:
                logger.warning("skipping malformed API record: %s", exc)
                continue
            if rec.duration < query.min_duration:
                dropped += 1
                continue
            fetched += 1
            yield rec
        if not videos or not data.get("has_more"):
            break
        body = dict(body, cursor=data.get("cursor"), search_id=data.get("search_id"))
    else:
        logger.warning("page cap of %d reached for window %s..%s", max_pages, query.start_date, query.end_date)
    if dropped:
        logger.warning("%d record(s) below the %d s duration floor dropped", dropped, query.min_duration)


def _post_with_retry(session, url, body, headers, budget, retries, backoff, timeout, audit) -> dict:
    last: Exception | None = None
    for attempt in range(retries + 1):
        budget.consume()
        try:
            resp = session.post(url, json=body, headers=headers, timeout=timeout)
        except requests.RequestException as exc:
            last = exc
            if audit:
                audit({"request": body, "error": str(exc), "attempt": attempt})
        else:
            if audit:
                audit({"request": body, "status": resp.status_code, "response": resp.text, "attempt": attempt})
            if resp.status_code == 200:
                payload = resp.json()
                err = payload.get("error") or {}
                if err.get("code") not in (None, "ok"):
                    raise FetchError(f"API error {err.get('code')}: {err.get('message')}")
                return payload
            last = FetchError(f"HTTP {resp.status_code}: {resp.text[:200]}")
            if resp.status_code < 500 and resp.status_code != 429:
                raise last
        if attempt < retries:
            time.sleep(backoff * 2**attempt)
    raise FetchError(f"giving up after {retries + 1} attempts: {last}")


def jsonl_audit(path: str | Path) -> Callable[[dict], None]:
    """Audit sink appending one JSON line per request."""
    def write(entry: dict) -> None:
        entry = dict(entry, ts=datetime.now(timezone.utc).isoformat())
        with open(path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(entry) + "\n")
    return write
