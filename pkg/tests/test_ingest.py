"""Corpus loading and sampling tests."""

import json

import pytest

from tabletalk.ingest import (
    CorpusRef,
    EmptyCorpus,
    LoadStats,
    NotEnoughTasks,
    ParseError,
    SplitMix64,
    load_corpus,
    sample_tasks,
    write_normalized,
)

NORMALIZED_RECORDS = [
    {
        "id": "normalized:dev:r1:0",
        "question": "What was the revenue in 2019?",
        "table": {"columns": ["Year", "Revenue"], "rows": [["2018", "100"], ["2019", "250"]]},
        "answer": "250",
        "source": {"dataset": "normalized", "split": "dev", "record": "r1"},
    },
    {
        "id": "normalized:dev:r2:0",
        "question": "Which year had the higher cost?",
        "table": {"columns": ["Year", "Cost"], "rows": [["2018", "90"], ["2019", "40"]]},
        "answer": "2018",
        "source": {"dataset": "normalized", "split": "dev", "record": "r2"},
    },
    {
        "id": "normalized:dev:r3:0",
        "question": "List the years.",
        "table": {"columns": ["Year"], "rows": [["2018"], ["2019"]]},
        "answer": ["2018", "2019"],
        "source": {"dataset": "normalized", "split": "dev", "record": "r3"},
    },
]

TATQA_RECORDS = [
    {
        "table": {
            "uid": "t1",
            "table": [
                ["", "2019", "2018"],
                ["Revenue", "1,200", "1,000"],
                ["Cost", "700", "650"],
            ],
        },
        "questions": [
            {
                "uid": "q1",
                "question": "What was the revenue in 2019?",
                "answer": "1,200",
                "answer_from": "table",
                "scale": "",
            },
            {
                "uid": "q2",
                "question": "What was said in the notes?",
                "answer": "see discussion",
                "answer_from": "text",
                "scale": "",
            },
            {
                "uid": "q3",
                "question": "What was the change in cost?",
                "answer": 50,
                "answer_from": "table",
                "scale": "thousand",
                "derivation": "700 - 650",
            },
            {
                "uid": "q4",
                "question": "No answer recorded",
                "answer": "",
                "answer_from": "table",
                "scale": "",
            },
        ],
    }
]


def write_normalized_file(tmp_path, records=NORMALIZED_RECORDS):
    path = tmp_path / "corpus.jsonl"
    path.write_text("\n".join(json.dumps(r) for r in records) + "\n", encoding="utf-8")
    return path


class TestNormalizedLoader:
    def test_three_records(self, tmp_path):
        path = write_normalized_file(tmp_path)
        tasks = load_corpus(CorpusRef("normalized", "dev", str(path)))
        assert [t.id for t in tasks] == [r["id"] for r in NORMALIZED_RECORDS]
        assert tasks[2].groundtruth.kind == "list"

    def test_malformed_line_names_line(self, tmp_path):
        lines = [json.dumps(r) for r in NORMALIZED_RECORDS]
        lines.insert(2, '{"id": "broken"')
        path = tmp_path / "corpus.jsonl"
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        with pytest.raises(ParseError, match=":3:"):
            load_corpus(CorpusRef("normalized", "dev", str(path)))

    def test_empty_corpus(self, tmp_path):
        path = tmp_path / "corpus.jsonl"
        path.write_text("", encoding="utf-8")
        with pytest.raises(EmptyCorpus):
            load_corpus(CorpusRef("normalized", "dev", str(path)))

    def test_loading_is_pure(self, tmp_path):
        path = write_normalized_file(tmp_path)
        ref = CorpusRef("normalized", "dev", str(path))
        assert load_corpus(ref) == load_corpus(ref)

    def test_groundtruth_normalizes(self, tmp_path):
        path = write_normalized_file(tmp_path)
        for task in load_corpus(CorpusRef("normalized", "dev", str(path))):
            assert task.groundtruth.kind in ("numeric", "text", "list")

    def test_round_trip_via_writer(self, tmp_path):
        path = write_normalized_file(tmp_path)
        tasks = load_corpus(CorpusRef("normalized", "dev", str(path)))
        out = tmp_path / "out.jsonl"
        write_normalized(tasks, out)
        again = load_corpus(CorpusRef("normalized", "dev", str(out)))
        assert again == tasks


class TestTatqaLoader:
    def test_counts_match_independent_scan(self, tmp_path):
        path = tmp_path / "tatqa.json"
        path.write_text(json.dumps(TATQA_RECORDS), encoding="utf-8")
        stats = LoadStats()
        tasks = load_corpus(
            CorpusRef("tatqa", "dev", str(path)), stats=stats
        )
        # independent count over the raw file
        raw = json.loads(path.read_text(encoding="utf-8"))
        total = sum(len(r["questions"]) for r in raw)
        skipped = sum(
            1
            for r in raw
            for q in r["questions"]
            if q.get("answer_from") != "table" or not q.get("answer")
        )
        assert len(tasks) == total - skipped == 2
        assert stats.skipped_no_answer == 1
        assert stats.skipped_not_table == 1

    def test_ids_and_scale(self, tmp_path):
        path = tmp_path / "tatqa.json"
        path.write_text(json.dumps(TATQA_RECORDS), encoding="utf-8")
        tasks = load_corpus(CorpusRef("tatqa", "dev", str(path)))
        assert tasks[0].id == "tatqa:dev:t1:0"
        assert tasks[1].id == "tatqa:dev:t1:2"
        assert tasks[1].groundtruth.scale == "thousand"
        assert tasks[1].metadata["derivation"] == "700 - 650"

    def test_table_answerable_only_off(self, tmp_path):
        path = tmp_path / "tatqa.json"
        path.write_text(json.dumps(TATQA_RECORDS), encoding="utf-8")
        tasks = load_corpus(
            CorpusRef("tatqa", "dev", str(path)), table_answerable_only=False
        )
        assert len(tasks) == 3

    def test_blank_header_disambiguated(self, tmp_path):
        path = tmp_path / "tatqa.json"
        path.write_text(json.dumps(TATQA_RECORDS), encoding="utf-8")
        tasks = load_corpus(CorpusRef("tatqa", "dev", str(path)))
        assert tasks[0].table.columns[0] == "column_1"


class TestWikitqLoader:
    def make_fixture(self, tmp_path):
        csv_dir = tmp_path / "csv" / "203-csv"
        csv_dir.mkdir(parents=True)
        (csv_dir / "733.csv").write_text(
            "Year,Team,Wins\n2001,Alpha,10\n2002,Beta,12\n", encoding="utf-8"
        )
        tsv = tmp_path / "dev.tsv"
        tsv.write_text(
            "id\tutterance\tcontext\ttargetValue\n"
            "nu-0\twhich team won more games?\tcsv/203-csv/733.csv\tBeta\n"
            "nu-1\twhich years are listed?\tcsv/203-csv/733.csv\t2001|2002\n",
            encoding="utf-8",
        )
        return tsv

    def test_loads_with_lists(self, tmp_path):
        tsv = self.make_fixture(tmp_path)
        tasks = load_corpus(CorpusRef("wikitq", "dev", str(tsv)))
        assert len(tasks) == 2
        assert tasks[0].id == "wikitq:dev:nu-0:0"
        assert tasks[1].groundtruth.kind == "list"

    def test_missing_table_file(self, tmp_path):
        tsv = self.make_fixture(tmp_path)
        text = tsv.read_text(encoding="utf-8").replace("733.csv", "nope.csv")
        tsv.write_text(text, encoding="utf-8")
        with pytest.raises(ParseError):
            load_corpus(CorpusRef("wikitq", "dev", str(tsv)))


class TestSampling:
    def make_tasks(self, tmp_path, n=20):
        records = []
        for i in range(n):
            records.append(
                {
                    "id": f"normalized:dev:r{i}:0",
                    "question": f"Question {i}?",
                    "table": {"columns": ["A"], "rows": [["1"]]},
                    "answer": str(i),
                    "source": {"dataset": "normalized", "split": "dev", "record": f"r{i}"},
                }
            )
        path = write_normalized_file(tmp_path, records)
        return load_corpus(CorpusRef("normalized", "dev", str(path)))

    def test_same_seed_same_sample(self, tmp_path):
        tasks = self.make_tasks(tmp_path)
        a = sample_tasks(tasks, 7, seed=42)
        b = sample_tasks(tasks, 7, seed=42)
        assert a == b
        assert sample_tasks(tasks, 7, seed=43) != a

    def test_full_sample_is_permutation(self, tmp_path):
        tasks = self.make_tasks(tmp_path)
        sampled = sample_tasks(tasks, len(tasks), seed=1)
        assert sorted(t.id for t in sampled) == sorted(t.id for t in tasks)

    def test_subset_no_duplicates(self, tmp_path):
        tasks = self.make_tasks(tmp_path)
        sampled = sample_tasks(tasks, 9, seed=5)
        ids = [t.id for t in sampled]
        assert len(set(ids)) == 9
        assert set(ids) <= {t.id for t in tasks}

    def test_not_enough_tasks(self, tmp_path):
        tasks = self.make_tasks(tmp_path, n=3)
        with pytest.raises(NotEnoughTasks):
            sample_tasks(tasks, 4, seed=0)

    def test_splitmix_reference_values(self):
        # published splitmix64 outputs for seed 1234567
        rng = SplitMix64(1234567)
        assert [rng.next() for _ in range(3)] == [
            6457827717110365317,
            3203168211198807973,
            9817491932198370423,
        ]
