"""Command-line pipeline: ingest -> cooccur -> enrich -> label -> estimate,
plus classify/evaluate for the transcript experiments and report.

Exit codes: 0 ok, 1 runtime failure, 2 invalid configuration.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import re
import shutil
import sys
from dataclasses import dataclass, field, fields
from datetime import date
from pathlib import Path
from typing import Any

import yaml

from . import classify as clf
from . import cooccur, enrichment, ingest, population, stats, synth

logger = logging.getLogger("ctscope")


class ConfigError(Exception):
    def __init__(self, problems: list[str]):
        super().__init__("; ".join(problems))
        self.problems = problems


class JsonLineFormatter(logging.Formatter):
    def format(self, record: logging.LogRecord) -> str:
        entry = {"ts": self.formatTime(record, "%Y-%m-%dT%H:%M:%S"), "level": record.levelname,
                 "logger": record.name, "msg": record.getMessage()}
        if record.exc_info:
            entry["exc"] = self.formatException(record.exc_info)
        return json.dumps(entry, ensure_ascii=False)


def setup_logging(level: str = "INFO") -> None:
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(JsonLineFormatter())
    root = logging.getLogger()
    root.handlers[:] = [handler]
    root.setLevel(level.upper())


_ENV_REF = re.compile(r"\$\{([A-Za-z_][A-Za-z0-9_]*)(?::-([^}]*))?\}")


def interpolate(value: Any, problems: list[str] | None = None) -> Any:
    """Replace ``${VAR}`` / ``${VAR:-default}`` in every string of a config tree."""
    if isinstance(value, dict):
        return {k: interpolate(v, problems) for k, v in value.items()}
    if isinstance(value, list):
        return [interpolate(v, problems) for v in value]
    if not isinstance(value, str):
        return value

    def sub(m: re.Match) -> str:
        var, default = m.group(1), m.group(2)
        if var in os.environ:
            return os.environ[var]
        if default is not None:
            return default
        if problems is not None:
            problems.append(f"environment variable {var} is not set")
        return ""

    return _ENV_REF.sub(sub, value)


@dataclass
class PipelineConfig:
    corpus: list[str] = field(default_factory=list)
    seeds: str | None = None
    labels: str | None = None
    alpha: float = 0.3
    top_k: int = 20
    min_df: int = 2
    iterations: int = 1000
    m0: float = 10.0
    prevalence_over: str = "draws"
    experiment: str | None = None
    token_env: str = "RESEARCH_API_TOKEN"
    out_dir: str = "out"

    PATH_FIELDS = ("seeds", "labels", "experiment")

    @classmethod
    def from_file(cls, path: str | Path) -> "PipelineConfig":
        path = Path(path)
        if not path.exists():
            raise ConfigError([f"config file {path} does not exist"])
        try:
            raw = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
        except yaml.YAMLError as exc:
            raise ConfigError([f"config file {path} is not valid YAML: {exc}"]) from None
        if not isinstance(raw, dict):
            raise ConfigError(["config root must be a mapping"])
        problems: list[str] = []
        raw = interpolate(raw, problems)
        known = {f.name for f in fields(cls)}
        for key in raw:
            if key not in known:
                problems.append(f"{key}: unknown field")
        if problems:
            raise ConfigError(problems)
        base = path.parent
        if isinstance(raw.get("corpus"), str):
            raw["corpus"] = [raw["corpus"]]
        for key in ("corpus",):
            if key in raw:
                raw[key] = [str(base / p) for p in raw[key]]
        for key in cls.PATH_FIELDS + ("out_dir",):
            if raw.get(key):
                raw[key] = str(base / raw[key])
        return cls(**raw)

    def override(self, args: argparse.Namespace) -> "PipelineConfig":
        for f in fields(self):
            v = getattr(args, f.name, None)
            if v is not None and v != []:
                setattr(self, f.name, v)
        return self

    def validate(self) -> None:
        problems = []
        for p in self.corpus:
            if not Path(p).exists():
                problems.append(f"corpus: {p} does not exist")
        for key in self.PATH_FIELDS:
            v = getattr(self, key)
            if v and not Path(v).exists():
                problems.append(f"{key}: {v} does not exist")
        if not 0.0 <= float(self.alpha) <= 1.0:
            problems.append(f"alpha: {self.alpha} not in [0, 1]")
        if int(self.top_k) < 1:
            problems.append(f"top_k: {self.top_k} must be >= 1")
        if int(self.min_df) < 1:
            problems.append(f"min_df: {self.min_df} must be >= 1")
        if int(self.iterations) < 1:
            problems.append(f"iterations: {self.iterations} must be >= 1")
        if self.prevalence_over not in ("draws", "unique"):
            problems.append(f"prevalence_over: {self.prevalence_over!r} must be 'draws' or 'unique'")
        if problems:
            raise ConfigError(problems)

    @property
    def out(self) -> Path:
        p = Path(self.out_dir)
        p.mkdir(parents=True, exist_ok=True)
        return p


def _require(value, name: str):
    if not value:
        raise ConfigError([f"{name}: required"])
    return value


def _load_records(paths: list[str]):
    for p in paths:
        yield from ingest.load_corpus(p)


class _Reiterable:
    def __init__(self, paths):
        self.paths = paths

    def __iter__(self):
        return _load_records(self.paths)


# --- subcommands ------------------------------------------------------------

def cmd_synth(cfg: PipelineConfig, args) -> None:
    out = cfg.out
    records = synth.synthetic_corpus(synth.DEMO_MONTHS, prevalence=args.prevalence, seed=args.seed)
    ingest.write_corpus(records, out / "synthetic_corpus.jsonl")
    ingest.write_corpus(synth.toy_corpus(), out / "toy_corpus.jsonl")
    n_pos, n_neg = clf.CASE_SHAPES[args.case]
    ds = synth.classification_dataset(n_pos, n_neg, seed=args.seed)
    clf.write_dataset(ds, out / f"dataset_{args.case.lower()}.csv")
    exp = {
        "case": args.case,
        "dataset": f"dataset_{args.case.lower()}.csv",
        "prompts": [v.value for v in clf.PromptVariant],
        "seeds": list(clf.SWEEP_SEEDS),
        "models": [{"name": n, "endpoint": f"mock://keyword?salt={n}&noise={z}&abstain=0.01"}
                   for n, z in (("mock-a", 0.05), ("mock-b", 0.10), ("mock-c", 0.15))],
    }
    (out / f"experiment_{args.case.lower()}.yaml").write_text(yaml.safe_dump(exp, sort_keys=False), encoding="utf-8")
    logger.info("synthetic inputs written to %s", out)


def cmd_ingest(cfg: PipelineConfig, args) -> None:
    _require(cfg.corpus, "corpus")
    out = cfg.out
    errors: list = []
    draws = []
    for p in cfg.corpus:
        draws.extend(ingest.load_corpus(p, errors=errors))
    unique, st = ingest.deduplicate(draws)
    ingest.write_corpus(unique, out / "corpus_unique.jsonl")
    doc = st.to_json()
    doc["malformed_lines"] = len(errors)
    (out / "corpus_stats.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    st.write_draws(out / "draws.csv")
    ingest.temporal_histograms(unique).write_csv(out)
    logger.info("ingest: %d draws, %d unique, %d malformed", st.total, st.unique, len(errors))


def cmd_fetch(cfg: PipelineConfig, args) -> None:
    out = cfg.out
    budget_file = Path(args.budget_file) if args.budget_file else out / "quota.json"
    budget = ingest.QuotaBudget.load(budget_file) if budget_file.exists() else ingest.QuotaBudget(args.max_requests)
    target = out / "fetched.jsonl"
    audit = ingest.jsonl_audit(out / "fetch_audit.jsonl")
    n = 0
    try:
        with target.open("a", encoding="utf-8") as fh:
            for start, end in ingest.weekly_windows(date.fromisoformat(args.start), date.fromisoformat(args.end)):
                q = ingest.VideoQuery(args.region, args.min_duration, start, end, randomized=True)
                for rec in ingest.fetch_window(q, budget, args.endpoint, token_env=cfg.token_env,
                                               max_pages=args.max_pages, audit=audit):
                    fh.write(json.dumps(rec.to_api(), ensure_ascii=False) + "\n")
                    n += 1
    except ingest.QuotaExhausted as exc:
        logger.warning("quota exhausted after %d records this run: %s", n, exc)
    finally:
        budget.save(budget_file)
    logger.info("fetch: %d records appended to %s; %d requests left today", n, target, budget.remaining())


def cmd_cooccur(cfg: PipelineConfig, args) -> None:
    paths = cfg.corpus or [str(cfg.out / "corpus_unique.jsonl")]
    records = _Reiterable(paths)
    vocab = cooccur.build_vocabulary(records, int(cfg.min_df))
    m = cooccur.build_matrices(records, vocab)
    m.save(cfg.out / "matrices")
    if args.csv:
        m.export_csv(cfg.out / "matrices_csv")
    logger.info("cooccur: %d hashtags x %d words, hh nnz %d, hw nnz %d",
                vocab.n_hashtags, vocab.n_words, m.hh.nnz, m.hw.nnz)


def cmd_enrich(cfg: PipelineConfig, args) -> None:
    m = cooccur.SparseCooccurrence.load(args.matrices or cfg.out / "matrices")
    seeds = enrichment.load_seeds(cfg.seeds or enrichment.default_seeds_path())
    e = enrichment.enrich(enrichment.SeedSet(seeds, float(cfg.alpha), int(cfg.top_k)), m)
    enrichment.write_report(e, cfg.out / "enrichment.csv")
    with (cfg.out / "labels_template.csv").open("w", newline="", encoding="utf-8") as fh:
        fh.write("# inspect ~5 videos per hashtag; class one of CT, DW, NOCT, HJ, RHJ\n")
        w = csv.writer(fh)
        w.writerow(["tag", "class", "annotator", "note"])
        for r in e.results:
            w.writerow([r.neighbor, "", "", ""])
    summary = {"seeds": len(seeds), "missing_seeds": e.missing_seeds, "tags_excluding_seeds": len(e.results),
               "tags_including_seeds": e.union_with_seeds}
    (cfg.out / "enrichment_summary.json").write_text(json.dumps(summary, indent=2) + "\n", encoding="utf-8")
    logger.info("enrich: %s", summary)


def cmd_label(cfg: PipelineConfig, args) -> None:
    labels_path = _require(cfg.labels, "labels")
    merged = enrichment.merge_labels(enrichment.load_labels(labels_path))
    paths = cfg.corpus or [str(cfg.out / "corpus_unique.jsonl")]
    vl = enrichment.distant_label(_load_records(paths), merged)
    enrichment.write_video_labels(vl, cfg.out / "video_labels.csv")
    counts = enrichment.class_counts(merged)
    with (cfg.out / "hashtag_classes.csv").open("w", encoding="utf-8") as fh:
        fh.write("class,count\n")
        for k, v in counts.items():
            fh.write(f"{k},{v}\n")
    pos = sum(1 for v in vl.values() if v is enrichment.VideoClass.CONSPIRACY)
    logger.info("label: %d of %d videos labeled conspiracy", pos, len(vl))


def cmd_estimate(cfg: PipelineConfig, args) -> None:
    draws = Path(args.draws or cfg.out / "draws.csv")
    st = ingest.CorpusStats.from_draws(draws)
    lab_path = Path(args.video_labels or cfg.out / "video_labels.csv")
    labels = enrichment.read_video_labels(lab_path) if lab_path.exists() else {}
    if not labels:
        logger.warning("no video labels at %s; prevalence will be zero", lab_path)
    res = population.monthly_series(st, labels, over=cfg.prevalence_over, iterations=int(cfg.iterations),
                                    M0=float(cfg.m0))
    population.write_estimates_csv(res, cfg.out / "estimates.csv")
    logger.info("estimate: %d months", len(res))


def load_experiment(path: str | Path, mock: bool = False) -> clf.ExperimentSpec:
    path = Path(path)
    raw = interpolate(yaml.safe_load(path.read_text(encoding="utf-8")) or {})
    problems = [f"experiment.{k}: required" for k in ("case", "dataset", "models") if k not in raw]
    if problems:
        raise ConfigError(problems)
    ds_path = path.parent / raw["dataset"]
    if not ds_path.exists():
        raise ConfigError([f"experiment.dataset: {ds_path} does not exist"])
    models = []
    for i, m in enumerate(raw["models"]):
        m = dict(m)
        if mock and not str(m.get("endpoint", "")).startswith("mock://"):
            m["endpoint"] = f"mock://keyword?salt={m['name']}&noise={0.05 * (i + 1):.2f}&abstain=0.01"
        try:
            models.append(clf.ClassifierConfig(**m))
        except TypeError as exc:
            raise ConfigError([f"experiment.models[{i}]: {exc}"]) from None
    try:
        return clf.ExperimentSpec(
            case=raw["case"], dataset=clf.load_dataset(ds_path), models=models,
            prompts=raw.get("prompts") or list(clf.PromptVariant),
            seeds=raw.get("seeds") or list(clf.SWEEP_SEEDS), concurrency=int(raw.get("concurrency", 1)))
    except ValueError as exc:
        raise ConfigError([f"experiment: {exc}"]) from None


def _results_path(cfg, args, exp) -> Path:
    return Path(args.results) if args.results else cfg.out / f"results_{exp.case.lower()}.csv"


def cmd_classify(cfg: PipelineConfig, args) -> None:
    exp = load_experiment(_require(args.experiment or cfg.experiment, "experiment"), mock=args.mock)
    preds = clf.run_experiment(exp, _results_path(cfg, args, exp))
    logger.info("classify: %d predictions in store", len(preds))
    if not args.no_evaluate:
        _evaluate(cfg, exp, preds)


def _evaluate(cfg: PipelineConfig, exp: clf.ExperimentSpec, preds: list[clf.Prediction]) -> None:
    case = exp.case.lower()
    gold = exp.gold
    metrics_path = cfg.out / f"metrics_{case}.csv"
    first = True
    for cls in ("POSITIVE", "NEGATIVE"):
        summaries = clf.compute_metrics(preds, gold, cls)
        clf.write_metrics(summaries, metrics_path, exp.case, append=not first)
        clf.write_table(summaries, cfg.out / f"table_{case}_{cls.lower()}.csv")
        first = False
    qb = clf.quartile_breakdown(preds, {it.item_id: it.transcript for it in exp.dataset}, gold)
    clf.write_quartiles(qb, cfg.out / f"quartiles_{case}.csv", exp.case)
    with (cfg.out / f"caption_lengths_{case}.csv").open("w", encoding="utf-8") as fh:
        fh.write("item_id,gold_label,words\n")
        for it in exp.dataset:
            fh.write(f"{it.item_id},{it.gold},{clf.word_count(it.transcript)}\n")
    logger.info("evaluate: metrics written to %s", metrics_path)


def cmd_evaluate(cfg: PipelineConfig, args) -> None:
    exp = load_experiment(_require(args.experiment or cfg.experiment, "experiment"))
    path = _results_path(cfg, args, exp)
    if not path.exists():
        raise FileNotFoundError(f"results file {path} not found; run classify first")
    _evaluate(cfg, exp, clf.load_predictions(path))


REPORT_SOURCES = {
    "fig1_monthly_unique.csv": None,  # derived from corpus_stats.json
    "fig2_hist_day_of_month.csv": "hist_day_of_month.csv",
    "fig2_hist_day_of_week.csv": "hist_day_of_week.csv",
    "fig2_hist_hour.csv": "hist_hour.csv",
    "fig2_hist_minute.csv": "hist_minute.csv",
    "fig3_caption_lengths.csv": "caption_lengths_c1.csv",
    "fig3_hashtag_classes.csv": "hashtag_classes.csv",
    "fig4_estimates.csv": "estimates.csv",
    "fig5_metrics_c1.csv": "metrics_c1.csv",
    "fig6_metrics_c3.csv": "metrics_c3.csv",
    "fig7_quartiles_c1.csv": "quartiles_c1.csv",
    "figA_metrics_c2.csv": "metrics_c2.csv",
    "figA_quartiles_c3.csv": "quartiles_c3.csv",
    "enrichment.csv": "enrichment.csv",
}


def cmd_report(cfg: PipelineConfig, args) -> None:
    work = Path(args.workdir) if args.workdir else cfg.out
    dest = work / "report"
    dest.mkdir(parents=True, exist_ok=True)
    manifest = {}
    for name, src in REPORT_SOURCES.items():
        if src is None:
            st = work / "corpus_stats.json"
            if st.exists():
                per_month = json.loads(st.read_text(encoding="utf-8"))["per_month"]
                with (dest / name).open("w", encoding="utf-8") as fh:
                    fh.write("month,unique,draws\n")
                    for month, c in sorted(per_month.items()):
                        fh.write(f"{month},{c['N']},{c['K']}\n")
                manifest[name] = "corpus_stats.json"
            continue
        if (work / src).exists():
            shutil.copyfile(work / src, dest / name)
            manifest[name] = src
    lengths = work / "caption_lengths_c1.csv"
    if lengths.exists():
        with lengths.open(newline="", encoding="utf-8") as fh:
            rows = list(csv.DictReader(fh))
        pos = [int(r["words"]) for r in rows if r["gold_label"] == "1"]
        neg = [int(r["words"]) for r in rows if r["gold_label"] == "0"]
        if pos and neg:
            mw = stats.mann_whitney_u(pos, neg)
            (dest / "fig3_length_test.json").write_text(json.dumps(
                {"median_positive": stats.median(pos), "median_negative": stats.median(neg),
                 "U": mw.U, "p": mw.p, "method": mw.method}, indent=2) + "\n", encoding="utf-8")
            manifest["fig3_length_test.json"] = "caption_lengths_c1.csv"
    (dest / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    missing = sorted(set(REPORT_SOURCES) - set(manifest))
    if missing:
        logger.warning("report: inputs not found for %s", ", ".join(missing))
    logger.info("report: %d artifacts in %s", len(manifest), dest)


def _read_numbers(path: str) -> list[float]:
    return [float(x) for x in Path(path).read_text(encoding="utf-8").split()]


def cmd_stats(cfg: PipelineConfig, args) -> None:
    if args.test == "kappa":
        with open(args.inputs[0], newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
        a, b = [r[0] for r in rows[1:]], [r[1] for r in rows[1:]]
        out = {"kappa": stats.cohen_kappa(stats.ConfusionTable.from_labels(a, b)), "n": len(a)}
    elif args.test == "wer":
        ref = Path(args.inputs[0]).read_text(encoding="utf-8")
        hyp = Path(args.inputs[1]).read_text(encoding="utf-8")
        out = {"wer": stats.wer(ref, hyp)}
    elif args.test == "mannwhitney":
        r = stats.mann_whitney_u(_read_numbers(args.inputs[0]), _read_numbers(args.inputs[1]))
        out = {"U": r.U, "p": r.p, "method": r.method}
    else:
        vals = [float(x) for x in args.inputs]
        if len(vals) != 4:
            raise ConfigError(["chisquare: expects four counts a b c d"])
        r = stats.chi_square([vals[:2], vals[2:]], yates=args.yates)
        out = {"statistic": r.statistic, "p": r.p, "dof": r.dof}
    print(json.dumps(out))


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ctscope", description=" ".join(__doc__.split("\n\n")[0].split()))
    ap.add_argument("--config", help="YAML pipeline configuration; flags override its values")
    ap.add_argument("--out-dir", dest="out_dir")
    ap.add_argument("--log-level", default="INFO")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write synthetic demo inputs")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--prevalence", type=float, default=0.002)
    p.add_argument("--case", default="C1", choices=sorted(clf.CASE_SHAPES))

    p = sub.add_parser("ingest", help="deduplicate and profile corpus files")
    p.add_argument("--corpus", nargs="+")

    p = sub.add_parser("fetch", help="collect weekly windows from a video query endpoint")
    p.add_argument("--endpoint", required=True)
    p.add_argument("--start", required=True, help="YYYY-MM-DD")
    p.add_argument("--end", required=True, help="YYYY-MM-DD")
    p.add_argument("--region", default="US")
    p.add_argument("--min-duration", type=int, default=60)
    p.add_argument("--max-pages", type=int, default=100)
    p.add_argument("--max-requests", type=int, default=1000)
    p.add_argument("--budget-file")
    p.add_argument("--token-env", dest="token_env")

    p = sub.add_parser("cooccur", help="build co-occurrence matrices")
    p.add_argument("--corpus", nargs="+")
    p.add_argument("--min-df", dest="min_df", type=int)
    p.add_argument("--csv", action="store_true", help="also export CSV triplets")

    p = sub.add_parser("enrich", help="expand seed hashtags")
    p.add_argument("--matrices")
    p.add_argument("--seeds")
    p.add_argument("--alpha", type=float)
    p.add_argument("--top-k", dest="top_k", type=int)

    p = sub.add_parser("label", help="distant-label videos from hashtag classes")
    p.add_argument("--corpus", nargs="+")
    p.add_argument("--labels")

    p = sub.add_parser("estimate", help="monthly population and prevalence estimates")
    p.add_argument("--draws")
    p.add_argument("--video-labels")
    p.add_argument("--iterations", type=int)
    p.add_argument("--m0", type=float)
    p.add_argument("--prevalence-over", dest="prevalence_over", choices=["draws", "unique"])

    for name, helptext in (("classify", "run a zero-shot classification sweep"),
                           ("evaluate", "compute metrics from a results table")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--experiment")
        p.add_argument("--results")
        if name == "classify":
            p.add_argument("--mock", action="store_true", help="replace endpoints with deterministic mocks")
            p.add_argument("--no-evaluate", action="store_true")

    p = sub.add_parser("report", help="bundle figure data from previous stages")
    p.add_argument("--workdir")

    p = sub.add_parser("stats", help="run a single statistical test")
    p.add_argument("test", choices=["kappa", "wer", "mannwhitney", "chisquare"])
    p.add_argument("inputs", nargs="+")
    p.add_argument("--yates", action="store_true")
    return ap


COMMANDS = {
    "synth": cmd_synth, "ingest": cmd_ingest, "fetch": cmd_fetch, "cooccur": cmd_cooccur,
    "enrich": cmd_enrich, "label": cmd_label, "estimate": cmd_estimate, "classify": cmd_classify,
    "evaluate": cmd_evaluate, "report": cmd_report, "stats": cmd_stats,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    setup_logging(args.log_level)
    try:
        cfg = PipelineConfig.from_file(args.config) if args.config else PipelineConfig()
        cfg.override(args)
        cfg.validate()
        COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        for problem in exc.problems:
            logger.error("config: %s", problem)
        return 2
    except Exception as exc:  # noqa: BLE001 - top-level guard maps failures to exit 1
        logger.error("%s failed: %s", args.command, exc, exc_info=True)
        return 1
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
