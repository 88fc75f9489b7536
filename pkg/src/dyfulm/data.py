"""Review preprocessing: cleaning, score labels, vocabulary, statistics,
integrity checks, CSV adapters and a synthetic review generator."""

from __future__ import annotations

import csv
import json
import re
from bisect import bisect_right
from collections import Counter
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

PAD, UNK = "<pad>", "<unk>"
PAD_ID, UNK_ID = 0, 1

FINE_EDGES = (3.0, 5.0, 7.0, 9.0)
COARSE_EDGES = (5.0, 7.0)
COARSE_NAMES = ("negative", "neutral", "positive")
FINE_NAMES = ("strongly negative", "negative", "neutral", "positive", "very positive")

# Booking.com fills empty review halves with these placeholders
BOOKING_PLACEHOLDERS = {"no negative", "no positive"}


@dataclass
class Record:
    raw_text: str
    clean_text: str
    token_ids: list[int]
    coarse_label: int
    fine_label: int
    intensity: float
    score: float
    year: int | None = None


# ------------------------------------------------------------------ cleaning

_URL = re.compile(r"(?:[a-z][a-z0-9+.\-]*://|www\.)\S*")
_MENTION = re.compile(r"@\w+")
_DISALLOWED = re.compile(r"[^a-z0-9 ']+")
_SPACES = re.compile(r"\s+")


def clean_text(raw: str) -> str:
    text = raw.lower()
    text = _URL.sub(" ", text)
    text = _MENTION.sub(" ", text)
    text = text.replace("#", "")
    text = _SPACES.sub(" ", text)
    text = _DISALLOWED.sub("", text)
    return _SPACES.sub(" ", text).strip()


# ------------------------------------------------------------------- labels


def build_labels(score: float, fine_edges: Sequence[float] = FINE_EDGES,
                 coarse_edges: Sequence[float] = COARSE_EDGES) -> tuple[int, int, float]:
    """Map a 0-10 reviewer score to ``(coarse, fine, intensity)``.

    Bins are half-open on the right ([lo, hi)), with 10 falling in the top bin.
    """
    score = float(score)
    if not 0.0 <= score <= 10.0:
        raise ValueError(f"score {score} outside [0, 10]")
    fine = bisect_right(fine_edges, score)
    coarse = bisect_right(coarse_edges, score)
    return coarse, fine, score / 10.0


# -------------------------------------------------------------- vocabulary


@dataclass
class Vocabulary:
    token_to_id: dict[str, int]
    min_frequency: int = 1
    max_size: int | None = None

    def __len__(self) -> int:
        return len(self.token_to_id)

    def to_json(self) -> dict:
        return {"min_frequency": self.min_frequency, "max_size": self.max_size,
                "tokens": sorted(self.token_to_id, key=self.token_to_id.get)}

    @classmethod
    def from_json(cls, raw: dict) -> "Vocabulary":
        tokens = raw["tokens"]
        if tokens[:2] != [PAD, UNK]:
            raise ValueError("vocabulary must start with the PAD and UNK tokens")
        return cls({t: i for i, t in enumerate(tokens)}, raw.get("min_frequency", 1), raw.get("max_size"))


def build_vocab(corpus: Iterable[str], min_frequency: int = 1, max_size: int | None = None) -> Vocabulary:
    corpus = list(corpus)
    if not corpus:
        raise ValueError("cannot build a vocabulary from an empty corpus")
    counts = Counter(tok for text in corpus for tok in text.split())
    kept = sorted((t for t, c in counts.items() if c >= min_frequency), key=lambda t: (-counts[t], t))
    if max_size is not None:
        kept = kept[: max(0, max_size - 2)]
    mapping = {PAD: PAD_ID, UNK: UNK_ID}
    for tok in kept:
        mapping[tok] = len(mapping)
    return Vocabulary(mapping, min_frequency, max_size)


def tokenize(vocab: Vocabulary, clean: str, t_max: int) -> list[int]:
    ids = [vocab.token_to_id.get(tok, UNK_ID) for tok in clean.split()][:t_max]
    return ids + [PAD_ID] * (t_max - len(ids))


# -------------------------------------------------------------- statistics


@dataclass
class ScoreSummary:
    count: int
    max: float
    q25: float
    mean: float
    median: float


@dataclass
class DatasetStats:
    groups: dict[str, ScoreSummary]  # "overall" plus one entry per year
    coarse_counts: list[int]
    fine_counts: list[int]


def summarize_scores(scores: Sequence[float]) -> ScoreSummary:
    arr = np.asarray(scores, dtype=np.float64)
    if arr.size == 0:
        raise ValueError("no scores to summarize")
    return ScoreSummary(
        count=int(arr.size),
        max=float(arr.max()),
        q25=float(np.percentile(arr, 25, method="linear")),
        mean=float(arr.mean()),
        median=float(np.percentile(arr, 50, method="linear")),
    )


def dataset_stats(records: Sequence[Record]) -> DatasetStats:
    if not records:
        raise ValueError("dataset_stats needs at least one record")
    groups = {"overall": summarize_scores([r.score for r in records])}
    by_year: dict[int, list[float]] = {}
    for r in records:
        if r.year is not None:
            by_year.setdefault(r.year, []).append(r.score)
    for year in sorted(by_year):
        groups[str(year)] = summarize_scores(by_year[year])
    coarse = [0] * len(COARSE_NAMES)
    fine = [0] * len(FINE_NAMES)
    for r in records:
        if 0 <= r.coarse_label < len(coarse):
            coarse[r.coarse_label] += 1
        if 0 <= r.fine_label < len(fine):
            fine[r.fine_label] += 1
    return DatasetStats(groups, coarse, fine)


def write_stats_csv(stats: DatasetStats, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["group", "max", "q25", "mean", "median"])
        # years first, overall last
        for name in [g for g in stats.groups if g != "overall"] + ["overall"]:
            s = stats.groups[name]
            w.writerow([name, f"{s.max:.4f}", f"{s.q25:.4f}", f"{s.mean:.4f}", f"{s.median:.4f}"])


def write_label_histogram_csv(stats: DatasetStats, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["scheme", "label", "name", "count"])
        for i, (name, n) in enumerate(zip(COARSE_NAMES, stats.coarse_counts)):
            w.writerow(["coarse", i, name, n])
        for i, (name, n) in enumerate(zip(FINE_NAMES, stats.fine_counts)):
            w.writerow(["fine", i, name, n])


# ---------------------------------------------------------------- integrity


@dataclass
class IntegrityReport:
    n_records: int = 0
    empty_text: int = 0
    out_of_range: int = 0
    label_mismatch: int = 0
    dropped_missing: int = 0
    problems: list[str] = field(default_factory=list)

    @property
    def violations(self) -> int:
        return self.empty_text + self.out_of_range + self.label_mismatch

    @property
    def ok(self) -> bool:
        return self.violations == 0

    def to_json(self) -> dict:
        return {**asdict(self), "violations": self.violations}


def integrity_check(records: Sequence[Record], fine_edges: Sequence[float] = FINE_EDGES,
                    coarse_edges: Sequence[float] = COARSE_EDGES) -> IntegrityReport:
    """Count empty texts, out-of-range scores and labels that disagree with
    the labels re-derived from the score."""
    report = IntegrityReport(n_records=len(records))
    for i, r in enumerate(records):
        if not r.clean_text.strip():
            report.empty_text += 1
            report.problems.append(f"record {i}: empty text after cleaning")
        if not 0.0 <= r.score <= 10.0:
            report.out_of_range += 1
            report.problems.append(f"record {i}: score {r.score} outside [0, 10]")
            continue
        expected = build_labels(r.score, fine_edges, coarse_edges)
        if (r.coarse_label, r.fine_label) != expected[:2] or not np.isclose(r.intensity, expected[2], rtol=0, atol=1e-12):
            report.label_mismatch += 1
            report.problems.append(
                f"record {i}: labels (coarse={r.coarse_label}, fine={r.fine_label}, intensity={r.intensity}) "
                f"!= derived {expected}")
    return report


# ------------------------------------------------------------------ CSV IO


def _parse_year(value: str) -> int | None:
    m = re.search(r"(\d{4})", value or "")
    return int(m.group(1)) if m else None


def _booking_text(positive: str, negative: str) -> str:
    parts = [p.strip() for p in (positive, negative)
             if p and p.strip() and p.strip().lower() not in BOOKING_PLACEHOLDERS]
    return " ".join(parts)


def read_reviews_csv(path, schema: str = "generic") -> tuple[list[tuple[str, float | None, int | None]], int]:
    """Read ``(text, score, year)`` rows; returns the rows and the count of
    rows dropped because text or score was missing."""
    required = {"generic": {"text", "score"},
                "booking": {"Positive_Review", "Negative_Review", "Reviewer_Score"}}
    if schema not in required:
        raise ValueError(f"unknown schema {schema!r}")
    rows, dropped = [], 0
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = set(reader.fieldnames or [])
        missing = required[schema] - header
        if missing:
            raise ValueError(f"input CSV lacks columns {sorted(missing)} for schema {schema!r}")
        for row in reader:
            if schema == "booking":
                text = _booking_text(row.get("Positive_Review", ""), row.get("Negative_Review", ""))
                score_raw, year = row.get("Reviewer_Score", ""), _parse_year(row.get("Review_Date", ""))
            else:
                text = row.get("text") or ""
                score_raw = row.get("score", "")
                year = _parse_year(row.get("year", "")) if "year" in header else None
            try:
                score = float(score_raw)
            except (TypeError, ValueError):
                dropped += 1
                continue
            if not text.strip() or score != score:
                dropped += 1
                continue
            rows.append((text, score, year))
    return rows, dropped


def make_record(raw: str, score: float, year: int | None, vocab: Vocabulary | None, t_max: int,
                fine_edges: Sequence[float] = FINE_EDGES, coarse_edges: Sequence[float] = COARSE_EDGES) -> Record:
    clean = clean_text(raw)
    ids = tokenize(vocab, clean, t_max) if vocab is not None else []
    try:
        coarse, fine, intensity = build_labels(score, fine_edges, coarse_edges)
    except ValueError:
        coarse, fine, intensity = -1, -1, score / 10.0
    return Record(raw, clean, ids, coarse, fine, intensity, float(score), year)


def save_records(records: Sequence[Record], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps(asdict(r), sort_keys=True) + "\n")


def load_records(path) -> list[Record]:
    with open(path, encoding="utf-8") as fh:
        return [Record(**json.loads(line)) for line in fh if line.strip()]


def save_vocab(vocab: Vocabulary, path) -> None:
    Path(path).write_text(json.dumps(vocab.to_json(), indent=1) + "\n", encoding="utf-8")


def load_vocab(path) -> Vocabulary:
    return Vocabulary.from_json(json.loads(Path(path).read_text(encoding="utf-8")))


def split_records(records: Sequence[Record], val_fraction: float, seed: int) -> tuple[list[Record], list[Record]]:
    """Seeded shuffle then hold out the last ``val_fraction`` of records."""
    order = np.random.default_rng(seed).permutation(len(records))
    n_val = int(round(len(records) * val_fraction))
    cut = len(records) - n_val
    return [records[i] for i in order[:cut]], [records[i] for i in order[cut:]]


# --------------------------------------------------------------- synthetic

SYNTHETIC_MIXTURE = (0.10, 0.15, 0.20, 0.25, 0.30)

_LEXICON = (
    ("awful", "horrible", "disgusting", "terrible", "filthy", "nightmare", "worst", "appalling",
     "dreadful", "rude", "unacceptable", "vile"),
    ("disappointing", "noisy", "cramped", "dated", "overpriced", "mediocre", "slow", "dirty",
     "tired", "shabby", "unhelpful", "stuffy"),
    ("okay", "average", "decent", "acceptable", "fine", "adequate", "standard", "reasonable",
     "plain", "ordinary", "basic", "fair"),
    ("good", "nice", "comfortable", "clean", "friendly", "pleasant", "helpful", "cozy",
     "tidy", "convenient", "quiet", "spacious"),
    ("excellent", "amazing", "fantastic", "superb", "perfect", "wonderful", "outstanding", "stunning",
     "exceptional", "flawless", "brilliant", "delightful"),
)
_FILLER = (
    "the", "room", "hotel", "staff", "breakfast", "location", "bed", "bathroom", "we", "was",
    "stay", "night", "reception", "view", "city", "station", "and", "very", "our", "price",
    "wifi", "pool", "bar", "lobby", "area", "service", "check", "floor", "shower", "window",
)
# boundaries in tenths so rounded scores never leave their fine band
_SCORE_TENTHS = ((0, 29), (30, 49), (50, 69), (70, 89), (90, 100))


def _synthetic_words(vocab_size: int) -> tuple[list[list[str]], list[str]]:
    per_class = max(1, (vocab_size * 3 // 5) // 5)
    n_filler = max(1, vocab_size - 5 * per_class)
    classes = []
    for words in _LEXICON:
        pool = list(words) + [f"{words[0]}{i}" for i in range(per_class)]
        classes.append(pool[:per_class])
    filler = (list(_FILLER) + [f"word{i}" for i in range(n_filler)])[:n_filler]
    return classes, filler


def generate_synthetic(n: int, vocab_size: int = 50, seed: int = 7, t_max: int = 64,
                       mixture: Sequence[float] = SYNTHETIC_MIXTURE) -> list[Record]:
    """Deterministic sentiment-bearing reviews.

    Each fine class owns a disjoint set of sentiment words; a review mixes 2-4
    of them with 3-8 neutral filler words. Scores are drawn uniformly (in
    tenths) from the class band and labels come from ``build_labels``.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    rng = np.random.default_rng(seed)
    class_words, filler = _synthetic_words(vocab_size)
    probs = np.asarray(mixture, dtype=np.float64)
    probs = probs / probs.sum()
    raw_rows = []
    for _ in range(n):
        fine = int(rng.choice(len(probs), p=probs))
        words = list(rng.choice(class_words[fine], size=int(rng.integers(2, 5))))
        words += list(rng.choice(filler, size=int(rng.integers(3, 9))))
        words = [str(w) for w in rng.permutation(words)]
        if rng.random() < 0.2:
            words[0] = "#" + words[0]
        raw = " ".join(words).capitalize() + ("!" if fine in (0, 4) else ".")
        if rng.random() < 0.1:
            raw += " see www.example.com/review"
        lo, hi = _SCORE_TENTHS[fine]
        score = int(rng.integers(lo, hi + 1)) / 10.0
        year = int(rng.integers(2015, 2018))
        raw_rows.append((raw, score, year))
    vocab = build_vocab([clean_text(r[0]) for r in raw_rows])
    return [make_record(raw, score, year, vocab, t_max) for raw, score, year in raw_rows]


def vocab_from_records(records: Sequence[Record], min_frequency: int = 1,
                       max_size: int | None = None) -> Vocabulary:
    return build_vocab([r.clean_text for r in records], min_frequency, max_size)
