"""Hashtag/hashtag and hashtag/word co-occurrence matrices.

Counts are per video: ``hh[s, t]`` is the number of videos tagged with
both s and t (diagonal kept at zero), ``hw[s, w]`` the number of videos
tagged s whose description contains word w, ``df[s]`` the number of
videos tagged s. Storage is CSR with sorted column ids; a dense
tag x tag matrix at the scale of a few hundred thousand tags is not an
option.
"""
from __future__ import annotations

import csv
import logging
import re
import struct
from array import array
from collections import Counter
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable

import numpy as np
import scipy.sparse as sp

logger = logging.getLogger(__name__)

_HASHTAG_SPAN = re.compile(r"#[^\s#]+")
_WORD = re.compile(r"[^\W_]+")


def tokenize(description: str) -> list[str]:
    """Words of a description: hashtags removed, lowercased, split on
    non-alphanumerics, tokens shorter than 2 characters dropped."""
    text = _HASHTAG_SPAN.sub(" ", description).lower()
    return [w for w in _WORD.findall(text) if len(w) >= 2]


@dataclass
class Vocabulary:
    """Dense ids for hashtags and words, both in sorted order."""

    hashtags: list[str]
    words: list[str]
    hashtag_index: dict[str, int] = field(init=False, repr=False)
    word_index: dict[str, int] = field(init=False, repr=False)

    def __post_init__(self):
        self.hashtag_index = {t: i for i, t in enumerate(self.hashtags)}
        self.word_index = {w: i for i, w in enumerate(self.words)}
        if len(self.hashtag_index) != len(self.hashtags) or len(self.word_index) != len(self.words):
            raise ValueError("vocabulary entries must be unique")

    @property
    def n_hashtags(self) -> int:
        return len(self.hashtags)

    @property
    def n_words(self) -> int:
        return len(self.words)


def build_vocabulary(records: Iterable, min_df: int = 2) -> Vocabulary:
    """Hashtags with document frequency >= ``min_df`` plus every word seen."""
    if min_df < 1:
        raise ValueError("min_df must be >= 1")
    df: Counter = Counter()
    words: set[str] = set()
    for r in records:
        df.update(set(r.hashtags))
        words.update(tokenize(r.description))
    tags = sorted(t for t, c in df.items() if c >= min_df)
    logger.info("vocabulary: %d of %d hashtags kept (min_df=%d), %d words",
                len(tags), len(df), min_df, len(words))
    return Vocabulary(tags, sorted(words))


@dataclass
class SparseCooccurrence:
    vocab: Vocabulary
    hh: sp.csr_matrix
    hw: sp.csr_matrix
    df: np.ndarray

    def tag_id(self, tag: str) -> int:
        try:
            return self.vocab.hashtag_index[tag]
        except KeyError:
            raise KeyMissing(tag) from None

    @cached_property
    def hh_normalized(self) -> sp.csr_matrix:
        return row_normalize(self.hh)

    @cached_property
    def hw_normalized(self) -> sp.csr_matrix:
        return row_normalize(self.hw)

    # -- persistence -------------------------------------------------------
    def save(self, directory: str | Path) -> Path:
        """Write the binary container (see :func:`write_coo`) plus vocab."""
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        write_coo(self.hh, d / "hh.bin")
        write_coo(self.hw, d / "hw.bin")
        write_df(self.df, d / "df.bin")
        (d / "hashtags.txt").write_text("".join(t + "\n" for t in self.vocab.hashtags), encoding="utf-8")
        (d / "words.txt").write_text("".join(w + "\n" for w in self.vocab.words), encoding="utf-8")
        return d

    @classmethod
    def load(cls, directory: str | Path) -> "SparseCooccurrence":
        d = Path(directory)
        vocab = Vocabulary(_read_lines(d / "hashtags.txt"), _read_lines(d / "words.txt"))
        return cls(vocab, read_coo(d / "hh.bin"), read_coo(d / "hw.bin"),
                   read_df(d / "df.bin", vocab.n_hashtags))

    def export_csv(self, directory: str | Path) -> None:
        """Desk-scale dump: hh.csv, hw.csv (tag, other, count), df.csv."""
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        tags, words = self.vocab.hashtags, self.vocab.words
        for name, m, cols in (("hh", self.hh, tags), ("hw", self.hw, words)):
            coo = m.tocoo()
            with (d / f"{name}.csv").open("w", newline="", encoding="utf-8") as fh:
                w = csv.writer(fh)
                w.writerow(["hashtag", "other", "count"])
                for i, j, v in zip(coo.row, coo.col, coo.data):
                    w.writerow([tags[i], cols[j], int(v)])
        with (d / "df.csv").open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["hashtag", "df"])
            for t, c in zip(tags, self.df):
                w.writerow([t, int(c)])


class KeyMissing(KeyError):
    """A hashtag is not in the filtered vocabulary."""


def _read_lines(p: Path) -> list[str]:
    return [ln for ln in p.read_text(encoding="utf-8").split("\n") if ln]


def _incidence(rows: array, cols: array, n_docs: int, n_cols: int) -> sp.csr_matrix:
    r = np.frombuffer(rows, dtype=np.int32) if len(rows) else np.zeros(0, np.int32)
    c = np.frombuffer(cols, dtype=np.int32) if len(cols) else np.zeros(0, np.int32)
    m = sp.csr_matrix((np.ones(len(r), dtype=np.int32), (r, c)), shape=(n_docs, n_cols))
    m.sum_duplicates()
    return m


def build_matrices(records: Iterable, vocab: Vocabulary, chunk_size: int = 200_000) -> SparseCooccurrence:
    """Accumulate co-occurrence counts over ``records``.

    Records are processed in shards of ``chunk_size`` videos; each shard
    becomes a video x tag and a video x word incidence matrix whose
    products are added to the running totals. Tags and words outside
    ``vocab`` are ignored; videos with no vocabulary tag contribute
    nothing.
    """
    n_t, n_w = vocab.n_hashtags, vocab.n_words
    # int32 is enough: no count can exceed the number of videos
    hh = sp.csr_matrix((n_t, n_t), dtype=np.int32)
    hw = sp.csr_matrix((n_t, n_w), dtype=np.int32)
    df = np.zeros(n_t, dtype=np.int64)
    tag_index, word_index = vocab.hashtag_index, vocab.word_index

    def flush(tr, tc, wr, wc, n_docs):
        nonlocal hh, hw
        if n_docs == 0:
            return
        x = _incidence(tr, tc, n_docs, n_t)
        y = _incidence(wr, wc, n_docs, n_w)
        xt = x.T.tocsr()
        hh = hh + xt @ x
        hw = hw + xt @ y
        df[:] += np.asarray(x.sum(axis=0)).ravel()

    tr, tc, wr, wc = array("i"), array("i"), array("i"), array("i")
    doc = 0
    for r in records:
        ids = {tag_index[t] for t in r.hashtags if t in tag_index}
        if not ids:
            continue
        tc.extend(ids)
        tr.extend([doc] * len(ids))
        wids = {word_index[w] for w in tokenize(r.description) if w in word_index}
        wc.extend(wids)
        wr.extend([doc] * len(wids))
        doc += 1
        if doc == chunk_size:
            flush(tr, tc, wr, wc, doc)
            tr, tc, wr, wc = array("i"), array("i"), array("i"), array("i")
            doc = 0
    flush(tr, tc, wr, wc, doc)

    coo = hh.tocoo()
    off = coo.row != coo.col
    hh = sp.csr_matrix((coo.data[off], (coo.row[off], coo.col[off])), shape=hh.shape, dtype=np.int32)
    hh.eliminate_zeros()
    hw.eliminate_zeros()
    hh.sort_indices()
    hw.sort_indices()
    return SparseCooccurrence(vocab, hh.tocsr(), hw.tocsr(), df)


def row_normalize(m: sp.csr_matrix) -> sp.csr_matrix:
    """Rows scaled to unit L2 norm; all-zero rows stay zero."""
    m = m.tocsr().astype(np.float64)
    norms = np.sqrt(np.asarray(m.multiply(m).sum(axis=1)).ravel())
    inv = np.divide(1.0, norms, out=np.zeros_like(norms), where=norms > 0)
    out = sp.diags(inv) @ m
    out = out.tocsr()
    out.sort_indices()
    return out


def cosine_rows(m: sp.csr_matrix, i: int, j: int) -> float:
    """Cosine of rows i and j, 0 when either row is all zero.

    Column ids are sorted, so the shared support is found by merging the
    two index runs.
    """
    if not m.has_sorted_indices:
        m.sort_indices()
    a0, a1 = m.indptr[i], m.indptr[i + 1]
    b0, b1 = m.indptr[j], m.indptr[j + 1]
    if a0 == a1 or b0 == b1:
        return 0.0
    ai, av = m.indices[a0:a1], m.data[a0:a1].astype(np.float64)
    bi, bv = m.indices[b0:b1], m.data[b0:b1].astype(np.float64)
    _, ia, ib = np.intersect1d(ai, bi, assume_unique=True, return_indices=True)
    dot = float(av[ia] @ bv[ib])
    na, nb = float(np.sqrt(av @ av)), float(np.sqrt(bv @ bv))
    if na == 0.0 or nb == 0.0:
        return 0.0
    return min(1.0, max(0.0, dot / (na * nb)))


def cosine_to_all(normalized: sp.csr_matrix, i: int) -> np.ndarray:
    """Cosine between row i and every row, from a row-normalized matrix."""
    return np.asarray((normalized @ normalized[i].T).todense()).ravel()


# --- binary container -------------------------------------------------------
# matrix file: magic b"CTCOO\0\0\1", then little-endian u64 rows, cols, nnz,
# then nnz (row:i32, col:i32, value:i64) triplets sorted row-major.
# df file: magic b"CTDF\0\0\0\1", u64 n, then n (tag_id:i32, count:i64) pairs.

_COO_MAGIC = b"CTCOO\x00\x00\x01"
_DF_MAGIC = b"CTDF\x00\x00\x00\x01"
_TRIPLET = np.dtype([("row", "<i4"), ("col", "<i4"), ("val", "<i8")])
_DF_PAIR = np.dtype([("tag", "<i4"), ("count", "<i8")])


def write_coo(m: sp.spmatrix, path: str | Path) -> None:
    m = m.tocsr()
    m.sort_indices()
    coo = m.tocoo()
    trip = np.empty(coo.nnz, dtype=_TRIPLET)
    trip["row"], trip["col"], trip["val"] = coo.row, coo.col, coo.data
    with open(path, "wb") as fh:
        fh.write(_COO_MAGIC)
        fh.write(struct.pack("<QQQ", m.shape[0], m.shape[1], coo.nnz))
        fh.write(trip.tobytes())


def read_coo(path: str | Path) -> sp.csr_matrix:
    with open(path, "rb") as fh:
        if fh.read(8) != _COO_MAGIC:
            raise ValueError(f"{path}: not a co-occurrence matrix file")
        rows, cols, nnz = struct.unpack("<QQQ", fh.read(24))
        trip = np.frombuffer(fh.read(nnz * _TRIPLET.itemsize), dtype=_TRIPLET)
    if len(trip) != nnz:
        raise ValueError(f"{path}: truncated ({len(trip)} of {nnz} triplets)")
    m = sp.csr_matrix((trip["val"].astype(np.int32), (trip["row"], trip["col"])), shape=(rows, cols))
    m.sort_indices()
    return m


def write_df(df: np.ndarray, path: str | Path) -> None:
    pairs = np.empty(len(df), dtype=_DF_PAIR)
    pairs["tag"] = np.arange(len(df))
    pairs["count"] = df
    with open(path, "wb") as fh:
        fh.write(_DF_MAGIC)
        fh.write(struct.pack("<Q", len(df)))
        fh.write(pairs.tobytes())


def read_df(path: str | Path, n: int | None = None) -> np.ndarray:
    with open(path, "rb") as fh:
        if fh.read(8) != _DF_MAGIC:
            raise ValueError(f"{path}: not a document-frequency file")
        (count,) = struct.unpack("<Q", fh.read(8))
        pairs = np.frombuffer(fh.read(count * _DF_PAIR.itemsize), dtype=_DF_PAIR)
    out = np.zeros(n if n is not None else count, dtype=np.int64)
    out[pairs["tag"]] = pairs["count"]
    return out
