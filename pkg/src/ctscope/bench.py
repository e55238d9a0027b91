"""Scale check: co-occurrence build plus a full seed enrichment.

    python -m ctscope.bench --videos 1000000 --tags 250000
"""
from __future__ import annotations

import argparse
import json
import resource
import sys
import time

from .cooccur import build_matrices, build_vocabulary
from .enrichment import SeedSet, enrich
from .synth import ScaleCorpus


def run(n_videos: int, n_tags: int, n_words: int = 100_000, seed: int = 0, min_df: int = 2) -> dict:
    corpus = ScaleCorpus(n_videos, n_tags, n_words, seed)
    t0 = time.perf_counter()
    vocab = build_vocabulary(corpus, min_df)
    t1 = time.perf_counter()
    m = build_matrices(corpus, vocab)
    t2 = time.perf_counter()
    e = enrich(SeedSet(), m)
    t3 = time.perf_counter()
    return {
        "videos": n_videos,
        "hashtags_kept": vocab.n_hashtags,
        "words": vocab.n_words,
        "hh_nnz": int(m.hh.nnz),
        "hw_nnz": int(m.hw.nnz),
        "enriched_tags": len(e.results),
        "vocab_s": round(t1 - t0, 2),
        "matrices_s": round(t2 - t1, 2),
        "enrich_s": round(t3 - t2, 2),
        "total_s": round(t3 - t0, 2),
        # ru_maxrss is KiB on Linux
        "peak_rss_mb": round(resource.getrusage(resource.RUSAGE_SELF).ru_maxrss / 1024, 1),
    }


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--videos", type=int, default=1_000_000)
    ap.add_argument("--tags", type=int, default=250_000)
    ap.add_argument("--words", type=int, default=100_000)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)
    json.dump(run(args.videos, args.tags, args.words, args.seed), sys.stdout)
    sys.stdout.write("\n")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
