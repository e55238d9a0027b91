"""Regenerates the frozen fixtures in this directory (run once, outputs are checked in).

wer_pairs.jsonl: 100 reference/hypothesis transcript pairs. Each hypothesis
applies a per-pair corruption rate drawn from U(0.04, 0.28) as word
substitutions, deletions and insertions, imitating speech-to-text noise.

kappa_dual_annotation.csv: 200 items labeled by two annotators with
cell counts 90/10/9/91.
"""
from __future__ import annotations

import csv
import json
import random
from pathlib import Path

HERE = Path(__file__).parent

SENTENCES = [
    "so today we are going to talk about what really happened",
    "i made this pasta with garlic butter and it was amazing",
    "they do not want you to know the truth about the water",
    "the government has been hiding the real numbers for years",
    "my dog learned a new trick this week and i am so proud",
    "this is my morning routine before i go to work",
    "if you look closely at the pictures the shadows do not match",
    "we drove six hours to see the lake and it was worth it",
    "nobody is talking about the planes flying over every morning",
    "here are three tips to save money on groceries",
    "the moon landing footage has some strange details",
    "let me show you how i organize my closet",
    "the elite meet every year and decide everything for us",
    "honestly this skincare product changed my life",
    "wake up people the signs are everywhere",
    "i tried the new burger place downtown and here is my review",
    "scientists are paid to say whatever they are told",
    "this workout only takes ten minutes and you can do it at home",
]
VOCAB = sorted({w for s in SENTENCES for w in s.split()} | {"uh", "um", "like", "yeah", "gonna", "the", "a"})


def corrupt(words: list[str], rate: float, rng: random.Random) -> list[str]:
    out = []
    for w in words:
        u = rng.random()
        if u < rate * 0.6:
            out.append(rng.choice([v for v in VOCAB if v != w]))
        elif u < rate * 0.85:
            continue
        elif u < rate:
            out.extend([w, rng.choice(VOCAB)])
        else:
            out.append(w)
    return out


def wer_pairs(rng: random.Random) -> list[dict]:
    pairs = []
    for i in range(100):
        ref = " ".join(rng.sample(SENTENCES, rng.randint(2, 5)))
        hyp = " ".join(corrupt(ref.split(), rng.uniform(0.04, 0.28), rng))
        pairs.append({"id": f"pair{i:03d}", "reference": ref, "hypothesis": hyp})
    return pairs


def kappa_rows(rng: random.Random) -> list[tuple[str, int, int]]:
    cells = [(1, 1)] * 90 + [(1, 0)] * 10 + [(0, 1)] * 9 + [(0, 0)] * 91
    rng.shuffle(cells)
    return [(f"v{i:03d}", a, b) for i, (a, b) in enumerate(cells)]


def main() -> None:
    rng = random.Random(20240101)
    with (HERE / "wer_pairs.jsonl").open("w", encoding="utf-8") as fh:
        for p in wer_pairs(rng):
            fh.write(json.dumps(p) + "\n")
    with (HERE / "kappa_dual_annotation.csv").open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["item_id", "annotator_a", "annotator_b"])
        w.writerows(kappa_rows(rng))


if __name__ == "__main__":
    main()
