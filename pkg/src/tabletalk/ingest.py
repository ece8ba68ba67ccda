"""Corpus loading and deterministic sampling.

Three layouts are accepted: the normalized JSONL format every other
module consumes, the TAT-QA JSON layout, and the WikiTableQuestions
TSV-plus-CSV layout. Loading is pure: the same file bytes always
produce the same task list.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from decimal import Decimal
from pathlib import Path

from .answers import Answer, normalize_answer
from .tables import InvalidTable, Table
from .tasks import Task, TaskSource

DATASETS = ("tatqa", "wikitq", "normalized")
SPLITS = ("train", "dev")

# identifies the exact sampling algorithm in run manifests
SAMPLER_VERSION = "splitmix64-fisher-yates-v1"


class ParseError(ValueError):
    """A source record could not be parsed; the message carries a locator."""


class EmptyCorpus(ValueError):
    pass


class NotEnoughTasks(ValueError):
    pass


@dataclass(frozen=True)
class CorpusRef:
    dataset: str
    split: str
    path: str

    def __post_init__(self):
        if self.dataset not in DATASETS:
            raise ValueError(f"unknown dataset {self.dataset!r}, expected one of {DATASETS}")
        if self.split not in SPLITS:
            raise ValueError(f"unknown split {self.split!r}, expected one of {SPLITS}")

    def to_json(self) -> dict:
        return {"dataset": self.dataset, "split": self.split, "path": self.path}


@dataclass
class LoadStats:
    loaded: int = 0
    skipped_no_answer: int = 0
    skipped_not_table: int = 0


def _decimal_safe_loads(line: str):
    return json.loads(line, parse_float=Decimal)


def _load_normalized(ref: CorpusRef, stats: LoadStats) -> list[Task]:
    tasks = []
    path = Path(ref.path)
    with path.open(encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                record = _decimal_safe_loads(line)
                answer = record.get("answer")
                if answer is None or answer == "" or answer == []:
                    stats.skipped_no_answer += 1
                    continue
                tasks.append(Task.from_json(record))
            except (KeyError, ValueError, TypeError, InvalidTable) as exc:
                raise ParseError(f"{path}:{lineno}: {exc}") from exc
    return tasks


def _tatqa_answer(question: dict) -> Answer | None:
    answer = question.get("answer")
    if answer is None or answer == "" or answer == []:
        return None
    scale = question.get("scale") or None
    if isinstance(answer, (list, tuple)):
        parts = [a for a in answer if a is not None and a != ""]
        if not parts:
            return None
        if scale:
            parts = [f"{a} {scale}" for a in parts]
        return normalize_answer(parts if len(parts) > 1 else parts[0])
    if scale:
        return normalize_answer(f"{answer} {scale}")
    return normalize_answer(answer)


def _load_tatqa(ref: CorpusRef, stats: LoadStats, table_answerable_only: bool) -> list[Task]:
    path = Path(ref.path)
    try:
        records = json.loads(path.read_text(encoding="utf-8"), parse_float=Decimal)
    except ValueError as exc:
        raise ParseError(f"{path}: {exc}") from exc
    if not isinstance(records, list):
        raise ParseError(f"{path}: expected a top-level list of records")
    tasks = []
    for rec_idx, record in enumerate(records):
        try:
            raw_table = record["table"]["table"]
            record_id = str(record["table"].get("uid", rec_idx))
            if not raw_table or not raw_table[0]:
                raise ParseError(f"{path}: record {record_id}: empty table")
            columns = _dedupe_columns([str(c) for c in raw_table[0]])
            table = Table.from_values(columns, raw_table[1:])
            for q_idx, question in enumerate(record.get("questions", [])):
                if table_answerable_only and question.get("answer_from") not in (None, "table"):
                    stats.skipped_not_table += 1
                    continue
                answer = _tatqa_answer(question)
                if answer is None:
                    stats.skipped_no_answer += 1
                    continue
                metadata = {}
                if question.get("derivation"):
                    metadata["derivation"] = str(question["derivation"])
                tasks.append(
                    Task(
                        id=f"{ref.dataset}:{ref.split}:{record_id}:{q_idx}",
                        question=str(question["question"]),
                        table=table,
                        groundtruth=answer,
                        source=TaskSource(ref.dataset, ref.split, record_id),
                        metadata=metadata,
                    )
                )
        except ParseError:
            raise
        except (KeyError, ValueError, TypeError, InvalidTable) as exc:
            raise ParseError(f"{path}: record {rec_idx}: {exc}") from exc
    return tasks


def _dedupe_columns(columns: list[str]) -> list[str]:
    """Disambiguate repeated or blank header names positionally."""
    seen: dict[str, int] = {}
    out = []
    for i, name in enumerate(columns):
        base = name.strip() or f"column_{i + 1}"
        count = seen.get(base, 0)
        seen[base] = count + 1
        out.append(base if count == 0 else f"{base} ({count + 1})")
    return out


def _load_wikitq(ref: CorpusRef, stats: LoadStats) -> list[Task]:
    path = Path(ref.path)
    root = path.parent
    tasks = []
    with path.open(encoding="utf-8", newline="") as handle:
        reader = csv.DictReader(handle, delimiter="\t")
        required = {"id", "utterance", "context", "targetValue"}
        if reader.fieldnames is None or not required.issubset(reader.fieldnames):
            raise ParseError(f"{path}: expected TSV header with {sorted(required)}")
        for lineno, row in enumerate(reader, start=2):
            try:
                target = row["targetValue"]
                if target is None or target == "":
                    stats.skipped_no_answer += 1
                    continue
                table_path = root / row["context"]
                with table_path.open(encoding="utf-8", newline="") as table_file:
                    rows = list(csv.reader(table_file))
                if not rows:
                    raise ParseError(f"{table_path}: empty table file")
                table = Table.from_values(_dedupe_columns(rows[0]), rows[1:])
                answers = target.split("|")
                answer = normalize_answer(answers if len(answers) > 1 else answers[0])
                tasks.append(
                    Task(
                        id=f"{ref.dataset}:{ref.split}:{row['id']}:0",
                        question=row["utterance"],
                        table=table,
                        groundtruth=answer,
                        source=TaskSource(ref.dataset, ref.split, row["id"]),
                    )
                )
            except ParseError:
                raise
            except (KeyError, ValueError, TypeError, InvalidTable, OSError) as exc:
                raise ParseError(f"{path}:{lineno}: {exc}") from exc
    return tasks


def load_corpus(
    ref: CorpusRef,
    *,
    table_answerable_only: bool = True,
    stats: LoadStats | None = None,
) -> list[Task]:
    """Load a corpus into normalized tasks.

    Questions without a usable ground-truth answer are skipped and
    counted in ``stats``. Raises ParseError with a record locator on
    malformed input and EmptyCorpus when nothing loads.
    """
    stats = stats if stats is not None else LoadStats()
    if not Path(ref.path).exists():
        raise FileNotFoundError(ref.path)
    if ref.dataset == "normalized":
        tasks = _load_normalized(ref, stats)
    elif ref.dataset == "tatqa":
        tasks = _load_tatqa(ref, stats, table_answerable_only)
    else:
        tasks = _load_wikitq(ref, stats)
    stats.loaded = len(tasks)
    if not tasks:
        raise EmptyCorpus(f"no tasks loaded from {ref.path}")
    seen: set[str] = set()
    for task in tasks:
        if task.id in seen:
            raise ParseError(f"duplicate task id {task.id}")
        seen.add(task.id)
    return tasks


def write_normalized(tasks: list[Task], path) -> None:
    """Write tasks as normalized JSONL, one object per line."""
    with Path(path).open("w", encoding="utf-8") as handle:
        for task in tasks:
            handle.write(json.dumps(task.to_json(), ensure_ascii=False, sort_keys=True))
            handle.write("\n")


class SplitMix64:
    """Tiny, fully specified PRNG; identical output on every platform."""

    MASK = (1 << 64) - 1

    def __init__(self, seed: int):
        self.state = seed & self.MASK

    def next(self) -> int:
        self.state = (self.state + 0x9E3779B97F4A7C15) & self.MASK
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & self.MASK
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & self.MASK
        return z ^ (z >> 31)

    def below(self, bound: int) -> int:
        return self.next() % bound


def sample_tasks(tasks: list[Task], n: int, seed: int) -> list[Task]:
    """Deterministic pseudo-random sample of ``n`` tasks.

    Partial Fisher-Yates shuffle driven by SplitMix64 (see
    SAMPLER_VERSION); stable across runs, platforms, and Python
    versions, unlike random.sample.
    """
    if n > len(tasks):
        raise NotEnoughTasks(f"asked for {n} of {len(tasks)} tasks")
    rng = SplitMix64(seed)
    pool = list(tasks)
    for i in range(n):
        j = i + rng.below(len(pool) - i)
        pool[i], pool[j] = pool[j], pool[i]
    return pool[:n]
