"""Zero-shot transcript classification harness.

Renders one of three prompt variants around a transcript, sends it to a
chat-completion endpoint (or an in-process mock), parses a 0/1 answer,
and sweeps items x prompts x models x seeds into an append-only results
table that can be resumed after a crash. Precision/recall are computed
per (model, prompt) over seeds, optionally with a 3-model majority vote.
"""
from __future__ import annotations

import csv
import enum
import hashlib
import itertools
import logging
import math
import re
import threading
import time
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence
from urllib.parse import parse_qs, urlparse

import numpy as np
import requests

from .stats import mean_interval

logger = logging.getLogger(__name__)

# ---------------------------------------------------------------------------
# prompts

SIMPLE_QUESTION = (
    "Decide whether the following transcription of a video talks about a conspiracy theory or not "
    "(if yes output = 1/else  output=0)."
)
SIMPLE_PROMPT = SIMPLE_QUESTION + " Provide just your output, no justification."
DEFINITION_INTRO = "Given this definition of conspiracy theory:"
CONSPIRACY_DEFINITION = (
    "A conspiracy theory is a belief that two or more actors have coordinated in secret to achieve an "
    "outcome and that their conspiracy is of public interest but not public knowledge. Conspiracy "
    "theories (a) are oppositional, which means they oppose publicly accepted understandings of "
    "events; (b) describe malevolent or forbidden acts; (c) ascribe agency to individuals and groups "
    "rather than to impersonal or systemic forces; (d) are epistemically risky, meaning that though "
    "they are not necessarily false or implausible, taken collectively they are more prone to falsity "
    "than other types of belief; and (e) are social constructs that are not merely adopted by "
    "individuals but are shared with social objectives in mind, and they have the potential not only "
    "to represent and interpret reality but also to fashion new social realities."
)
STEP_BY_STEP_SUFFIX = (
    "First, extract the narrative or claim from the text.  Second, decide if the claim talks about a "
    "conspiracy theory. Third, answer the question (if yes output = 1/else  output=0)"
)
TRANSCRIPT_HEADER = "\n\nTranscription:\n"


class PromptVariant(str, enum.Enum):
    SIMPLE = "SIMPLE"
    DEFINITION = "DEFINITION"
    STEP_BY_STEP = "STEP_BY_STEP"

    @property
    def short(self) -> str:
        return {"SIMPLE": "SP", "DEFINITION": "DP", "STEP_BY_STEP": "SBS"}[self.value]


class EmptyInput(ValueError):
    pass


def instruction(variant: PromptVariant) -> str:
    variant = PromptVariant(variant)
    if variant is PromptVariant.SIMPLE:
        return SIMPLE_PROMPT
    if variant is PromptVariant.DEFINITION:
        return f"{DEFINITION_INTRO} {CONSPIRACY_DEFINITION}\n\n{SIMPLE_PROMPT}"
    return f"{SIMPLE_QUESTION} {STEP_BY_STEP_SUFFIX}"


def render_prompt(variant: PromptVariant, transcript: str) -> str:
    """Instruction block, a blank line, a ``Transcription:`` header, then the text."""
    if not transcript or not transcript.strip():
        raise EmptyInput("transcript is empty")
    return instruction(variant) + TRANSCRIPT_HEADER + transcript


def split_prompt(prompt_text: str) -> tuple[str, str]:
    """Inverse of :func:`render_prompt`: (instruction, transcript)."""
    head, _, body = prompt_text.partition(TRANSCRIPT_HEADER)
    return head, body


# ---------------------------------------------------------------------------
# labels

class Label(enum.IntEnum):
    NEGATIVE = 0
    POSITIVE = 1
    ABSTAIN = -1

    def __str__(self) -> str:
        return "ABSTAIN" if self is Label.ABSTAIN else str(int(self))

    @classmethod
    def parse(cls, s: str) -> "Label":
        s = s.strip()
        return cls.ABSTAIN if s.upper() == "ABSTAIN" else cls(int(s))


_BINARY_TOKEN = re.compile(r"(?<![\w.])[01](?!\w|\.\d)")


def parse_label(raw_output: str) -> Label:
    """Last standalone 0/1 token in the output, ABSTAIN if there is none."""
    found = _BINARY_TOKEN.findall(raw_output or "")
    if not found:
        return Label.ABSTAIN
    return Label(int(found[-1]))


def majority_vote(labels: Sequence[Label | int]) -> Label:
    """2-of-3 vote; an abstention counts as a negative vote."""
    if len(labels) != 3:
        raise ValueError(f"majority vote needs exactly 3 labels, got {len(labels)}")
    pos = sum(1 for x in labels if int(x) == 1)
    return Label.POSITIVE if pos >= 2 else Label.NEGATIVE


# ---------------------------------------------------------------------------
# endpoints

class TransportError(RuntimeError):
    pass


class ContextOverflow(ValueError):
    pass


@dataclass(frozen=True)
class ClassifierConfig:
    name: str
    endpoint: str
    temperature: float = 0.0
    seed: int | None = None
    max_output_tokens: int = 256
    max_context_tokens: int = 8192
    api_model: str | None = None  # model id sent on the wire, defaults to name
    timeout: float = 120.0


def estimate_tokens(text: str) -> int:
    # about four characters per token for English subword vocabularies
    return len(text) // 4 + 1


MockFn = Callable[[str, "int | None"], str]
_MOCKS: dict[str, MockFn] = {}


def register_mock(name: str, fn: MockFn) -> None:
    """Make ``mock://<name>`` resolve to ``fn(prompt_text, seed) -> raw``."""
    _MOCKS[name] = fn


def _stable_unit(*parts: str) -> float:
    h = hashlib.blake2b("\x1f".join(parts).encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(h, "big") / 2**64


CONSPIRACY_CUES = (
    "illuminati", "chemtrails", "reptilian", "flat earth", "new world order", "mind control",
    "cover up", "cover-up", "they don't want you to know", "bigfoot", "qanon", "cabal", "ufo",
)


@dataclass(frozen=True)
class KeywordMock:
    """Deterministic stand-in for a chat model.

    Answers 1 when the transcript contains a conspiracy cue, flips the
    answer for a hashed fraction ``noise`` of (salt, variant, transcript)
    triples and abstains on a further fraction ``abstain``. The seed is
    ignored, so outputs are identical across seeds.
    """

    salt: str = ""
    noise: float = 0.1
    abstain: float = 0.0

    def __call__(self, prompt_text: str, seed: int | None = None) -> str:
        head, transcript = split_prompt(prompt_text)
        variant = "sbs" if "First, extract" in head else ("dp" if head.startswith(DEFINITION_INTRO) else "sp")
        text = transcript.lower()
        truth = any(cue in text for cue in CONSPIRACY_CUES)
        u = _stable_unit(self.salt, variant, transcript)
        if u < self.abstain:
            return "I cannot determine that from the text provided."
        answer = int(truth) ^ int(u < self.abstain + self.noise)
        if variant == "sbs":
            claim = "a hidden plot" if truth else "an everyday topic"
            return (f"First: the narrative is about {claim}. Second: it "
                    f"{'does' if answer else 'does not'} describe a conspiracy theory. "
                    f"Third: output = {answer}")
        return str(answer)


def _resolve_mock(endpoint: str) -> MockFn:
    u = urlparse(endpoint)
    name = u.netloc or u.path.lstrip("/")
    if name in _MOCKS:
        return _MOCKS[name]
    if name == "keyword":
        q = {k: v[0] for k, v in parse_qs(u.query).items()}
        return KeywordMock(salt=q.get("salt", ""), noise=float(q.get("noise", 0.1)),
                           abstain=float(q.get("abstain", 0.0)))
    raise TransportError(f"unknown mock endpoint {endpoint!r}")


def invoke(config: ClassifierConfig, prompt_text: str, *, session: requests.Session | None = None,
           retries: int = 3, backoff: float = 0.5) -> str:
    """Send one prompt and return the model's raw text.

    ``mock://`` endpoints run in-process. HTTP endpoints receive
    ``{model, messages, temperature, seed, max_tokens}`` and may answer
    ``{"text": ...}`` or an OpenAI-style ``choices`` list. Transient
    failures (connection errors, 429, 5xx) are retried ``retries`` times
    with exponential backoff.
    """
    if estimate_tokens(prompt_text) + config.max_output_tokens > config.max_context_tokens:
        raise ContextOverflow(f"prompt of ~{estimate_tokens(prompt_text)} tokens exceeds "
                              f"{config.max_context_tokens}-token context of {config.name}")
    if config.endpoint.startswith("mock://"):
        return _resolve_mock(config.endpoint)(prompt_text, config.seed)

    body = {
        "model": config.api_model or config.name,
        "messages": [{"role": "user", "content": prompt_text}],
        "temperature": config.temperature,
        "max_tokens": config.max_output_tokens,
    }
    if config.seed is not None:
        body["seed"] = config.seed
    http = session or requests
    last = None
    for attempt in range(retries + 1):
        try:
            resp = http.post(config.endpoint, json=body, timeout=config.timeout)
        except requests.RequestException as exc:
            last = str(exc)
        else:
            if resp.status_code == 200:
                return _extract_text(resp.json())
            last = f"HTTP {resp.status_code}: {resp.text[:200]}"
            if resp.status_code == 400 and "context" in resp.text.lower():
                raise ContextOverflow(last)
            if resp.status_code < 500 and resp.status_code != 429:
                raise TransportError(last)
        if attempt < retries:
            time.sleep(backoff * 2**attempt)
    raise TransportError(f"{config.name}: giving up after {retries + 1} attempts ({last})")


def _extract_text(payload: dict) -> str:
    if "text" in payload:
        return payload["text"]
    try:
        choice = payload["choices"][0]
        return choice["message"]["content"] if "message" in choice else choice["text"]
    except (KeyError, IndexError, TypeError):
        raise TransportError(f"unrecognized response body: {str(payload)[:200]}") from None


# ---------------------------------------------------------------------------
# experiments

SWEEP_SEEDS = (123, 42, 37, 57, 50, 73, 0, 69, 25, 100, 12, 4, 49, 420, 17, 444, 1111, 7,
               8, 26, 10, 33, 666, 777, 1999)

# (positives, negatives) per case
CASE_SHAPES = {"C1": (887, 779), "C2": (100, 779), "C3": (100, 779)}

# fine-tuned RoBERTa reference points, (mean, +/-) on validation folds
ROBERTA_BASELINE = {
    ("C1", "POSITIVE"): {"precision": (0.83, 0.01), "recall": (0.83, 0.01)},
    ("C3", "POSITIVE"): {"precision": (0.68, 0.04), "recall": (0.67, 0.01)},
    ("C1", "NEGATIVE"): {"precision": (0.88, 0.02), "recall": (0.86, 0.03)},
    ("C2", "NEGATIVE"): {"precision": (0.95, 0.01), "recall": (0.97, 0.01)},
    ("C3", "NEGATIVE"): {"precision": (0.95, 0.01), "recall": (0.97, 0.01)},
}


@dataclass(frozen=True)
class DatasetItem:
    item_id: str
    transcript: str
    gold: int
    source: str = "distant"


def load_dataset(path: str | Path) -> list[DatasetItem]:
    """CSV with item_id, transcript, gold_label, source."""
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            gold = int(row["gold_label"])
            if gold not in (0, 1):
                raise ValueError(f"gold_label must be 0/1, got {gold} for {row['item_id']}")
            out.append(DatasetItem(row["item_id"], row["transcript"], gold, row.get("source") or "distant"))
    return out


def write_dataset(items: Iterable[DatasetItem], path: str | Path) -> Path:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["item_id", "transcript", "gold_label", "source"])
        for it in items:
            w.writerow([it.item_id, it.transcript, it.gold, it.source])
    return path


@dataclass
class ExperimentSpec:
    case: str
    dataset: list[DatasetItem]
    models: list[ClassifierConfig]
    prompts: list[PromptVariant] = field(default_factory=lambda: list(PromptVariant))
    seeds: list[int] = field(default_factory=lambda: list(SWEEP_SEEDS))
    concurrency: int = 1

    def __post_init__(self):
        if self.case not in CASE_SHAPES:
            raise ValueError(f"case must be one of {sorted(CASE_SHAPES)}")
        self.prompts = [PromptVariant(p) for p in self.prompts]
        for m in self.models:
            if m.temperature != 0:
                logger.warning("model %s runs at temperature %s; paper-replication runs use 0",
                               m.name, m.temperature)

    def shape_matches_case(self) -> bool:
        pos = sum(it.gold for it in self.dataset)
        return (pos, len(self.dataset) - pos) == CASE_SHAPES[self.case]

    @property
    def gold(self) -> dict[str, int]:
        return {it.item_id: it.gold for it in self.dataset}


@dataclass(frozen=True)
class Prediction:
    item_id: str
    model: str
    prompt: PromptVariant
    seed: int
    raw_output: str
    label: Label
    latency_ms: float = 0.0
    error: str = ""

    @property
    def key(self) -> tuple[str, str, str, int]:
        return (self.item_id, self.model, self.prompt.value, self.seed)


RESULT_FIELDS = ["item_id", "model", "prompt", "seed", "label", "latency_ms", "error", "raw_output", "complete"]


class ResultsStore:
    """Append-only CSV of predictions keyed by (item, model, prompt, seed).

    Every row ends with a ``complete`` marker column; rows cut short by a
    crash lack it and are dropped on reopen, as is any partial trailing
    line. Later rows win over earlier rows with the same key.
    """

    def __init__(self, path: str | Path, flush_every: int = 256):
        self.path = Path(path)
        self.flush_every = flush_every
        self._lock = threading.Lock()
        self._pending = 0
        self.rows: dict[tuple, Prediction] = {}
        self._repair_and_load()
        new = not self.path.exists() or self.path.stat().st_size == 0
        self._fh = self.path.open("a", newline="", encoding="utf-8")
        self._writer = csv.writer(self._fh)
        if new:
            self._writer.writerow(RESULT_FIELDS)
            self._fh.flush()

    def _repair_and_load(self) -> None:
        if not self.path.exists():
            return
        data = self.path.read_bytes()
        cut = data.rfind(b"\n") + 1
        if cut != len(data):
            logger.warning("%s: dropping %d bytes of partial trailing row", self.path, len(data) - cut)
            with self.path.open("r+b") as fh:
                fh.truncate(cut)
        dropped = 0
        with self.path.open(newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None:
                return
            if header != RESULT_FIELDS:
                raise ValueError(f"{self.path}: unexpected header {header}")
            try:
                for row in reader:
                    p = _row_to_prediction(row)
                    if p is None:
                        dropped += 1
                        continue
                    self.rows[p.key] = p
            except csv.Error:
                dropped += 1
        if dropped:
            logger.warning("%s: %d incomplete row(s) ignored", self.path, dropped)

    def done(self, key: tuple) -> bool:
        p = self.rows.get(key)
        return p is not None and p.error != "transport"

    def append(self, p: Prediction) -> None:
        with self._lock:
            self._writer.writerow([p.item_id, p.model, p.prompt.value, p.seed, str(p.label),
                                   f"{p.latency_ms:.3f}", p.error, p.raw_output, "1"])
            self.rows[p.key] = p
            self._pending += 1
            if self._pending >= self.flush_every:
                self._fh.flush()
                self._pending = 0

    def close(self) -> None:
        with self._lock:
            if not self._fh.closed:
                self._fh.flush()
                self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def _row_to_prediction(row: list[str]) -> Prediction | None:
    if len(row) != len(RESULT_FIELDS) or row[-1] != "1":
        return None
    try:
        return Prediction(row[0], row[1], PromptVariant(row[2]), int(row[3]), row[7],
                          Label.parse(row[4]), float(row[5]), row[6])
    except ValueError:
        return None


def load_predictions(path: str | Path) -> list[Prediction]:
    store = ResultsStore(path)
    store.close()
    return list(store.rows.values())


def run_experiment(spec: ExperimentSpec, results_path: str | Path, *,
                   invoke_fn: Callable[..., str] = invoke) -> list[Prediction]:
    """Run the full items x prompts x models x seeds sweep.

    Cells already present in ``results_path`` are skipped, so an
    interrupted sweep resumes where it stopped. Failures are recorded per
    cell and never abort the run. Returns every prediction in sweep order.
    """
    if not spec.shape_matches_case():
        pos = sum(it.gold for it in spec.dataset)
        logger.warning("dataset shape %d/%d differs from case %s shape %s",
                       pos, len(spec.dataset) - pos, spec.case, CASE_SHAPES[spec.case])
    rendered: dict[tuple[str, PromptVariant], str] = {}

    def prompt_for(item: DatasetItem, variant: PromptVariant) -> str:
        k = (item.item_id, variant)
        text = rendered.get(k)
        if text is None:
            text = rendered[k] = render_prompt(variant, item.transcript)
        return text

    def cell(model: ClassifierConfig, variant: PromptVariant, seed: int, item: DatasetItem) -> Prediction:
        cfg = replace(model, seed=seed)
        t0 = time.perf_counter()
        try:
            raw = invoke_fn(cfg, prompt_for(item, variant))
        except ContextOverflow as exc:
            logger.warning("context overflow: item %s on %s (%s)", item.item_id, model.name, exc)
            return Prediction(item.item_id, model.name, variant, seed, "", Label.ABSTAIN, 0.0, "context_overflow")
        except (TransportError, EmptyInput) as exc:
            err = "empty_input" if isinstance(exc, EmptyInput) else "transport"
            logger.error("%s failure: item %s on %s (%s)", err, item.item_id, model.name, exc)
            return Prediction(item.item_id, model.name, variant, seed, "", Label.ABSTAIN, 0.0, err)
        latency = (time.perf_counter() - t0) * 1000.0
        return Prediction(item.item_id, model.name, variant, seed, raw, parse_label(raw), latency)

    cells = itertools.product(spec.models, spec.prompts, spec.seeds, spec.dataset)
    counts = defaultdict(int)
    with ResultsStore(results_path) as store:
        todo = [(m, v, s, it) for m, v, s, it in cells
                if not store.done((it.item_id, m.name, v.value, s))]
        logger.info("experiment %s: %d cells to run, %d already done", spec.case,
                    len(todo), len(spec.models) * len(spec.prompts) * len(spec.seeds) * len(spec.dataset) - len(todo))
        if spec.concurrency <= 1:
            for args in todo:
                p = cell(*args)
                store.append(p)
                counts[p.error or "ok"] += 1
        else:
            with ThreadPoolExecutor(max_workers=spec.concurrency) as pool:
                for p in pool.map(lambda a: cell(*a), todo):
                    store.append(p)
                    counts[p.error or "ok"] += 1
        rows = store.rows
    if counts:
        logger.info("experiment %s finished: %s", spec.case, dict(counts))
    order = [(it.item_id, m.name, v.value, s)
             for m, v, s, it in itertools.product(spec.models, spec.prompts, spec.seeds, spec.dataset)]
    return [rows[k] for k in order if k in rows]


# ---------------------------------------------------------------------------
# metrics

ENSEMBLE = "ensemble"


@dataclass(frozen=True)
class Confusion:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0

    @property
    def precision(self) -> float | None:
        d = self.tp + self.fp
        return self.tp / d if d else None

    @property
    def recall(self) -> float | None:
        d = self.tp + self.fn
        return self.tp / d if d else None


@dataclass
class MetricSummary:
    model: str
    prompt: PromptVariant
    cls: str
    n_seeds: int
    n_items: int
    precision: float | None
    precision_lo: float | None
    precision_hi: float | None
    recall: float | None
    recall_lo: float | None
    recall_hi: float | None
    per_seed: dict[int, Confusion] = field(default_factory=dict, repr=False)


def _target(cls: str) -> int:
    if cls not in ("POSITIVE", "NEGATIVE"):
        raise ValueError("class must be POSITIVE or NEGATIVE")
    return 1 if cls == "POSITIVE" else 0


def with_ensemble(predictions: Iterable[Prediction]) -> list[Prediction]:
    """Append majority-vote predictions when exactly three models are present."""
    preds = [p for p in predictions if not p.error]
    models = sorted({p.model for p in preds} - {ENSEMBLE})
    if len(models) != 3:
        return preds
    votes: dict[tuple, dict[str, Label]] = defaultdict(dict)
    for p in preds:
        votes[(p.item_id, p.prompt, p.seed)][p.model] = p.label
    extra = [Prediction(item, ENSEMBLE, prompt, seed, "", majority_vote([v[m] for m in models]))
             for (item, prompt, seed), v in votes.items() if len(v) == 3]
    return preds + extra


def confusion_by_group(predictions: Iterable[Prediction], gold: Mapping[str, int],
                       cls: str = "POSITIVE") -> dict[tuple[str, PromptVariant, int], Confusion]:
    """TP/FP/FN/TN per (model, prompt, seed), abstentions counted as 0."""
    target = _target(cls)
    tally: dict[tuple, list[int]] = defaultdict(lambda: [0, 0, 0, 0])
    for p in predictions:
        if p.error:
            continue
        pred = 0 if p.label is Label.ABSTAIN else int(p.label)
        g = gold[p.item_id]
        t = tally[(p.model, p.prompt, p.seed)]
        if pred == target and g == target:
            t[0] += 1
        elif pred == target:
            t[1] += 1
        elif g == target:
            t[2] += 1
        else:
            t[3] += 1
    return {k: Confusion(*v) for k, v in tally.items()}


def _summarize(values: list[float | None]) -> tuple[float | None, float | None, float | None]:
    defined = [v for v in values if v is not None]
    if not defined:
        return None, None, None
    return mean_interval(defined)


def compute_metrics(predictions: Iterable[Prediction], gold: Mapping[str, int], cls: str = "POSITIVE",
                    ensemble: bool = True) -> list[MetricSummary]:
    """Precision and recall per (model, prompt), mean and 95% t-interval over seeds."""
    preds = with_ensemble(predictions) if ensemble else [p for p in predictions if not p.error]
    groups = confusion_by_group(preds, gold, cls)
    by_mp: dict[tuple[str, PromptVariant], dict[int, Confusion]] = defaultdict(dict)
    for (model, prompt, seed), c in groups.items():
        by_mp[(model, prompt)][seed] = c
    order = {v: i for i, v in enumerate(PromptVariant)}
    out = []
    for (model, prompt) in sorted(by_mp, key=lambda k: (k[0] == ENSEMBLE, k[0], order[k[1]])):
        seeds = by_mp[(model, prompt)]
        ordered = [seeds[s] for s in sorted(seeds)]
        p, p_lo, p_hi = _summarize([c.precision for c in ordered])
        r, r_lo, r_hi = _summarize([c.recall for c in ordered])
        n_items = ordered[0].tp + ordered[0].fp + ordered[0].fn + ordered[0].tn
        out.append(MetricSummary(model, prompt, cls, len(ordered), n_items, p, p_lo, p_hi, r, r_lo, r_hi,
                                 dict(sorted(seeds.items()))))
    return out


METRIC_FIELDS = ["case", "class", "model", "prompt", "n_seeds", "n_items", "precision", "precision_lo",
                 "precision_hi", "recall", "recall_lo", "recall_hi"]


def _num(x: float | None) -> str:
    return "NA" if x is None or (isinstance(x, float) and math.isnan(x)) else repr(float(x))


def write_metrics(summaries: Iterable[MetricSummary], path: str | Path, case: str = "",
                  append: bool = False) -> Path:
    path = Path(path)
    new = not append or not path.exists()
    with path.open("a" if append else "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        if new:
            w.writerow(METRIC_FIELDS)
        for m in summaries:
            w.writerow([case, m.cls, m.model, m.prompt.value, m.n_seeds, m.n_items, _num(m.precision),
                        _num(m.precision_lo), _num(m.precision_hi), _num(m.recall), _num(m.recall_lo),
                        _num(m.recall_hi)])
    return path


def write_table(summaries: Sequence[MetricSummary], path: str | Path) -> Path:
    """Wide layout: one row per model, precision and recall per prompt (SP/DP/SBS)."""
    path = Path(path)
    variants = list(PromptVariant)
    models = list(dict.fromkeys(m.model for m in summaries))
    cell = {(m.model, m.prompt): m for m in summaries}
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["model"] + [f"precision_{v.short}" for v in variants] + [f"recall_{v.short}" for v in variants])
        for model in models:
            row = [model]
            for attr in ("precision", "recall"):
                for v in variants:
                    m = cell.get((model, v))
                    val = getattr(m, attr) if m else None
                    row.append("NA" if val is None else f"{val:.2f}")
            w.writerow(row)
    return path


@dataclass
class QuartileBreakdown:
    bounds: list[float]  # inclusive upper bound of each bucket
    bucket_of: dict[str, int]
    counts: list[int]
    metrics: dict[int, list[MetricSummary]]


def word_count(text: str) -> int:
    return len(text.split())


def quartile_breakdown(predictions: Iterable[Prediction], transcripts: Mapping[str, str],
                       gold: Mapping[str, int], cls: str = "POSITIVE", ensemble: bool = True) -> QuartileBreakdown:
    """Metrics per word-length quartile of the dataset.

    Bucket i holds items whose whitespace word count is above bound i-1
    and at most bound i; bounds are the 25/50/75/100th percentiles of the
    word counts (linear interpolation).
    """
    ids = sorted(transcripts)
    wc = np.array([word_count(transcripts[i]) for i in ids], dtype=float)
    bounds = [float(b) for b in np.quantile(wc, [0.25, 0.5, 0.75, 1.0])]
    buckets = np.searchsorted(np.array(bounds), wc, side="left")
    bucket_of = {i: int(b) for i, b in zip(ids, buckets)}
    counts = [int((buckets == q).sum()) for q in range(4)]
    preds = list(predictions)
    metrics = {}
    for q in range(4):
        sub = [p for p in preds if bucket_of.get(p.item_id) == q]
        metrics[q] = compute_metrics(sub, gold, cls, ensemble)
    return QuartileBreakdown(bounds, bucket_of, counts, metrics)


def write_quartiles(qb: QuartileBreakdown, path: str | Path, case: str = "") -> Path:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["case", "quartile", "upper_bound_words", "n_items"] + METRIC_FIELDS[1:])
        for q in range(4):
            for m in qb.metrics[q]:
                w.writerow([case, f"Q{q + 1}", _num(qb.bounds[q]), qb.counts[q], m.cls, m.model, m.prompt.value,
                            m.n_seeds, m.n_items, _num(m.precision), _num(m.precision_lo), _num(m.precision_hi),
                            _num(m.recall), _num(m.recall_lo), _num(m.recall_hi)])
    return path
