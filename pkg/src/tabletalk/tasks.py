"""The unit of work: one question over one table with a ground-truth answer."""

from __future__ import annotations

from dataclasses import dataclass, field

from .answers import Answer, normalize_answer
from .tables import Table


@dataclass(frozen=True)
class TaskSource:
    dataset: str
    split: str
    record: str

    def to_json(self) -> dict:
        return {"dataset": self.dataset, "split": self.split, "record": self.record}

    @classmethod
    def from_json(cls, data: dict) -> "TaskSource":
        return cls(data["dataset"], data["split"], data["record"])


@dataclass(frozen=True)
class Task:
    """A table QA task: question, table, and ground-truth answer."""

    id: str
    question: str
    table: Table
    groundtruth: Answer
    source: TaskSource
    metadata: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if not self.id:
            raise ValueError("task id must be non-empty")
        if self.groundtruth.is_empty and self.groundtruth.kind != "numeric":
            raise ValueError(f"task {self.id}: ground truth is empty")

    def to_json(self) -> dict:
        data = {
            "id": self.id,
            "question": self.question,
            "table": self.table.to_json(),
            "answer": self.groundtruth.to_json(),
            "source": self.source.to_json(),
        }
        if self.metadata:
            data["metadata"] = self.metadata
        return data

    @classmethod
    def from_json(cls, data: dict) -> "Task":
        answer = data["answer"]
        if isinstance(answer, dict) and "kind" in answer:
            groundtruth = Answer.from_json(answer)
        else:
            groundtruth = normalize_answer(answer)
        return cls(
            id=data["id"],
            question=data["question"],
            table=Table.from_json(data["table"]),
            groundtruth=groundtruth,
            source=TaskSource.from_json(data["source"]),
            metadata=data.get("metadata", {}),
        )
