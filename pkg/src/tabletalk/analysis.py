"""Offline analyses over curricula: rephrase similarity, ablation
statistics, user-response information coverage, and training export.

The sentence embedder is an adapter: any callable-style object with
embed(texts) -> vectors works, and the bundled bag-of-words stub keeps
the whole pipeline testable offline.
"""

from __future__ import annotations

import json
import math
import re
from collections import Counter
from dataclasses import dataclass
from pathlib import Path

from .ingest import SplitMix64
from .store import Curriculum, dumps_canonical
from .tables import Table, render_table

# tokenization is versioned: published rouge variants differ and stored
# similarity numbers must stay comparable across runs
ROUGE_TOKENIZER_VERSION = "lower-strip-punct-ws-v1"

_PUNCT_RE = re.compile(r"[^\w\s]+")


class AlignmentError(ValueError):
    pass


class InsufficientRecords(ValueError):
    pass


def _tokenize(text: str) -> list[str]:
    return _PUNCT_RE.sub(" ", text.lower()).split()


def _bigrams(tokens: list[str]) -> Counter:
    return Counter(zip(tokens, tokens[1:]))


def rouge2(candidate: str, reference: str) -> dict:
    """Bigram-overlap precision/recall/F1.

    Strings with fewer than two tokens score 0 unless their token
    sequences are identical (then 1).
    """
    cand = _tokenize(candidate)
    ref = _tokenize(reference)
    if len(cand) < 2 or len(ref) < 2:
        value = 1.0 if cand == ref else 0.0
        return {"precision": value, "recall": value, "f1": value}
    cand_bigrams = _bigrams(cand)
    ref_bigrams = _bigrams(ref)
    overlap = sum((cand_bigrams & ref_bigrams).values())
    precision = overlap / sum(cand_bigrams.values())
    recall = overlap / sum(ref_bigrams.values())
    if precision + recall == 0:
        f1 = 0.0
    else:
        f1 = 2 * precision * recall / (precision + recall)
    return {"precision": precision, "recall": recall, "f1": f1}


class BagOfWordsEmbedder:
    """Offline stand-in for a sentence-embedding model."""

    name = "bag-of-words"

    def embed(self, texts: list[str]) -> list[list[float]]:
        vocabulary = sorted({token for text in texts for token in _tokenize(text)})
        index = {token: i for i, token in enumerate(vocabulary)}
        vectors = []
        for text in texts:
            vector = [0.0] * len(index)
            for token in _tokenize(text):
                vector[index[token]] += 1.0
            vectors.append(vector)
        return vectors


def _cosine(a: list[float], b: list[float]) -> float:
    dot = sum(x * y for x, y in zip(a, b))
    norm_a = math.sqrt(sum(x * x for x in a))
    norm_b = math.sqrt(sum(x * x for x in b))
    if norm_a == 0 and norm_b == 0:
        return 1.0  # both empty: identical
    if norm_a == 0 or norm_b == 0:
        return 0.0
    return dot / (norm_a * norm_b)


@dataclass
class SimilarityReport:
    names: list[str]
    sentence_sim: dict
    rouge_f1: dict
    pairs: int
    embedder: str

    def to_json(self) -> dict:
        return {
            "names": self.names,
            "sentence_sim": self.sentence_sim,
            "rouge_f1": self.rouge_f1,
            "pairs": self.pairs,
            "embedder": self.embedder,
            "tokenizer": ROUGE_TOKENIZER_VERSION,
        }


def similarity_matrix(corpora: dict[str, list[tuple[str, str]]], embedder) -> SimilarityReport:
    """Mean pairwise sentence similarity and rouge-2 F1 between corpora.

    Each corpus is a list of (task id, question) aligned by id across
    corpora; misalignment raises AlignmentError. Matrices are symmetric
    with exact unit diagonal for any embedder.
    """
    names = list(corpora)
    if not 2 <= len(names) <= 3:
        raise ValueError("similarity_matrix needs 2 or 3 corpora")
    ids = [tid for tid, _ in corpora[names[0]]]
    for name in names[1:]:
        if [tid for tid, _ in corpora[name]] != ids:
            raise AlignmentError(f"corpus {name!r} is not aligned with {names[0]!r}")
    if not ids:
        raise ValueError("empty corpora")
    texts = {name: [text for _, text in corpora[name]] for name in names}
    # one embed call over everything so adapters with corpus-dependent
    # state (like the bag-of-words stub's vocabulary) stay consistent
    flattened = [text for name in names for text in texts[name]]
    embedded = embedder.embed(flattened)
    vectors = {}
    offset = 0
    for name in names:
        vectors[name] = embedded[offset : offset + len(texts[name])]
        offset += len(texts[name])
    sentence_sim: dict = {a: {} for a in names}
    rouge_f1: dict = {a: {} for a in names}
    for i, a in enumerate(names):
        for b in names[i:]:
            if a == b:
                cos_mean, rouge_mean = 1.0, 1.0
            else:
                cos_values = [
                    _cosine(va, vb) for va, vb in zip(vectors[a], vectors[b])
                ]
                rouge_values = [
                    rouge2(ta, tb)["f1"] for ta, tb in zip(texts[a], texts[b])
                ]
                cos_mean = sum(cos_values) / len(cos_values)
                rouge_mean = sum(rouge_values) / len(rouge_values)
            sentence_sim[a][b] = sentence_sim[b][a] = cos_mean
            rouge_f1[a][b] = rouge_f1[b][a] = rouge_mean
    return SimilarityReport(
        names, sentence_sim, rouge_f1, len(ids), getattr(embedder, "name", "custom")
    )


def question_corpora(curriculum: Curriculum) -> dict[str, list[tuple[str, str]]]:
    """Aligned original/rephrased question lists from question ablations."""
    original = []
    rephrased = []
    for report in curriculum.reports:
        outcome = report.get("strategies", {}).get("question-rephrase")
        if not outcome or not outcome.get("ablated"):
            continue
        ablation = outcome["ablated"]["ablation"]
        original.append((report["task_id"], ablation["original_question"]))
        rephrased.append((report["task_id"], ablation["rephrased_question"]))
    return {"original": original, "rephrased": rephrased}


# --- coverage --------------------------------------------------------------


def _light_normalize(text: str) -> str:
    out = text.lower()
    out = re.sub(r"(?<=\d),(?=\d{3}(?!\d))", "", out)
    out = re.sub(r"[$€£¥]", "", out)
    return re.sub(r"\s+", " ", out).strip()


def _piece_matched(piece: dict, response: str) -> bool:
    haystack = _light_normalize(response)
    values = piece.get("values", [])
    if piece.get("origin") == "table-column":
        candidates = values[1:] or values[:1]  # cells; bare name only if no cells
    else:
        candidates = values
    for value in candidates:
        needle = _light_normalize(str(value))
        if needle and needle in haystack:
            return True
    return False


def _all_conversation_records(curriculum: Curriculum) -> list[dict]:
    """Every conversation record, kept or not, from candidates.jsonl."""
    records = []
    for report in curriculum.reports:
        for outcome in report.get("strategies", {}).values():
            for key in ("clarification", "correction"):
                entry = outcome.get(key)
                if entry and entry.get("record"):
                    records.append(entry["record"])
    if records:
        return records
    return [r.to_json() for r in [*curriculum.cl, *curriculum.co]]


@dataclass
class CoverageReport:
    records: list[dict]
    containment_rate: float | None
    mean_fraction: float | None
    flagged: list[str]

    def to_json(self) -> dict:
        return {
            "records": self.records,
            "containment_rate": self.containment_rate,
            "mean_fraction": self.mean_fraction,
            "flagged": self.flagged,
        }


def coverage(curriculum: Curriculum) -> CoverageReport:
    """How much of the removed information the simulated user gave back.

    A record counts as contained when every piece's content appears in
    the user turn (direct or lightly normalized match); the mean fraction
    averages per-record matched-piece ratios. Records with any unmatched
    piece are flagged for manual review.
    """
    rows = []
    flagged = []
    for record in _all_conversation_records(curriculum):
        user_turns = [t["text"] for t in record.get("turns", []) if t["speaker"] == "simulated-user"]
        if not user_turns or not record.get("removed_info"):
            continue
        response = user_turns[0]
        pieces = record["removed_info"]
        matched = sum(1 for piece in pieces if _piece_matched(piece, response))
        fraction = matched / len(pieces)
        contained = matched == len(pieces)
        rows.append(
            {
                "record_id": record["id"],
                "pieces": len(pieces),
                "matched": matched,
                "fraction": fraction,
                "contained": contained,
            }
        )
        if not contained:
            flagged.append(record["id"])
    if not rows:
        return CoverageReport([], None, None, [])
    return CoverageReport(
        rows,
        sum(1 for r in rows if r["contained"]) / len(rows),
        sum(r["fraction"] for r in rows) / len(rows),
        flagged,
    )


# --- ablation statistics -----------------------------------------------------


def ablation_stats(curriculum: Curriculum) -> dict:
    """The table-change / column-vs-value / size / deficiency panel."""
    table_applied = 0
    table_changed = 0
    column_removals = 0
    value_removals = 0
    fractions = []
    table_candidates = 0
    question_applied = 0
    question_candidates = 0
    for report in curriculum.reports:
        for name, outcome in report.get("strategies", {}).items():
            ablated = outcome.get("ablated")
            if not ablated:
                continue
            if name == "question-rephrase":
                question_applied += 1
                if outcome["status"] == "candidate":
                    question_candidates += 1
                continue
            table_applied += 1
            diff = ablated["ablation"]["table_diff"]
            changed = bool(diff["removed_columns"] or diff["removed_cells"])
            if changed:
                table_changed += 1
            if diff["removed_columns"]:
                column_removals += 1
            if diff["removed_cells"]:
                value_removals += 1
            fractions.append(float(diff["fraction_removed"]))
            if outcome["status"] == "candidate":
                table_candidates += 1

    def rate(n, d):
        return None if d == 0 else n / d

    return {
        "table_ablations": table_applied,
        "table_changed_rate": rate(table_changed, table_applied),
        "column_removal_share": rate(column_removals, table_applied),
        "value_removal_share": rate(value_removals, table_applied),
        "mean_fraction_removed": (sum(fractions) / len(fractions)) if fractions else None,
        "table_deficiency_rate": rate(table_candidates, table_applied),
        "question_ablations": question_applied,
        "question_deficiency_rate": rate(question_candidates, question_applied),
    }


# --- SFT export ---------------------------------------------------------------

SFT_SYSTEM_PROMPT = (
    "You are a careful table question answering assistant. Ask one short "
    "clarification question when information you need is missing; otherwise "
    "answer directly. Use user corrections to fix your answer."
)


def _task_presentation(record: dict) -> str:
    table = Table.from_json(record["table"])
    return f"{record['question']}\n\n{render_table(table)}"


def _record_messages(record: dict) -> list[dict]:
    """Chat messages for one record; teacher hints are scaffolding and
    excluded so the trained model learns to act without them."""
    messages = [{"role": "system", "content": SFT_SYSTEM_PROMPT}]
    messages.append({"role": "user", "content": _task_presentation(record)})
    for turn in record["turns"]:
        if turn["speaker"] == "teacher-hint":
            continue
        role = "assistant" if turn["speaker"] == "student" else "user"
        messages.append({"role": role, "content": turn["text"]})
    return messages


def export_sft(
    curricula: list[Curriculum],
    out_path,
    cap: int,
    seed: int,
    dedup: bool = False,
) -> int:
    """Write a chat-format JSONL training file from kept Cl/Co records.

    Records are shuffled with the named deterministic sampler, capped to
    ``cap`` lines; the same seed always produces the same file bytes.
    """
    records: list[dict] = []
    for curriculum in curricula:
        for record in [*curriculum.cl, *curriculum.co]:
            records.append(record.to_json())
    if dedup:
        seen = set()
        unique = []
        for record in records:
            key = (record["base_task_id"], record["strategy"])
            if key in seen:
                continue
            seen.add(key)
            unique.append(record)
        records = unique
    if cap > len(records):
        raise InsufficientRecords(f"cap {cap} exceeds {len(records)} available records")
    rng = SplitMix64(seed)
    order = list(range(len(records)))
    for i in range(len(order) - 1):
        j = i + rng.below(len(order) - i)
        order[i], order[j] = order[j], order[i]
    chosen = [records[i] for i in order[:cap]]
    out_path = Path(out_path)
    with out_path.open("w", encoding="utf-8") as handle:
        for record in chosen:
            line = {
                "id": record["id"],
                "scenario": record["scenario"],
                "messages": _record_messages(record),
            }
            handle.write(dumps_canonical(line))
            handle.write("\n")
    meta = {
        "records": cap,
        "seed": seed,
        "dedup": dedup,
        "source_runs": [str(c.run_dir) for c in curricula],
        "recommended_finetune": {
            "method": "LoRA",
            "rank": 16,
            "alpha": 16,
            "epochs": 4,
            "learning_rate": 1e-4,
        },
    }
    Path(str(out_path) + ".meta.json").write_text(
        json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    return cap
