import json
import multiprocessing
import shutil
from fractions import Fraction

import numpy as np
import pytest

from peco import fixture_path
from peco.data import DataSet, write_csv
from peco.errors import (
    ConfigError,
    CorruptRecord,
    CorruptRecordWarning,
    DimensionError,
    EmptyProbableSet,
    ExactModeTooLarge,
    InsufficientHistory,
    MixedFamilySizes,
    StageError,
)
from peco.pipeline import PipelineConfig, predict_r_bar, run_pipeline
from peco.samplesize import RhoInput, rho_exact
from peco.store import RunRecord, store_append, store_query, store_read

FIG2_PROBLEM = {
    "n": 2, "u": 2, "objective": "x1 + x2",
    "constraints": ["xi1 - x1", "xi2 - x2"],
    "bounds": [[0, 10], [0, 10]], "start": [0, 0],
}


def record(r_bar=(((1,), 2),), family_size=1, delta=(0.0,), digest="p", source="exact", seed=0):
    return RunRecord(
        problem_digest=digest, delta=delta, r_bar=r_bar, family_size=family_size,
        fingerprint={"solver_id": "grid-oracle"}, seed=seed, alpha=0.1, eta=0.5, z=3,
        x_star=(1.0, 2.0), objective=3.0, dataset_digest="d", r_bar_source=source,
        timestamp="2024-01-01T00:00:00+00:00",
    )


def _append_many(args):
    path, start = args
    for i in range(start, start + 50):
        store_append(path, record(seed=i))


class TestStore:
    def test_round_trip(self, tmp_path):
        path = tmp_path / "s.jsonl"
        rec = record(r_bar=(((1,), 3), ((2,), 3), ((1, 2), 4)), family_size=2, delta=(1.5, -2.0))
        store_append(path, rec)
        assert store_query(path) == [rec]

    def test_empty_and_missing(self, tmp_path):
        assert store_query(tmp_path / "nothing.jsonl") == []
        (tmp_path / "empty.jsonl").write_text("")
        assert store_query(tmp_path / "empty.jsonl") == []

    def test_thousand_appends(self, tmp_path):
        path = tmp_path / "s.jsonl"
        for i in range(1000):
            store_append(path, record(seed=i))
        lines = path.read_text().splitlines()
        assert len(lines) == 1000
        assert [json.loads(line)["seed"] for line in lines] == list(range(1000))

    def test_filter_by_digest(self, tmp_path):
        path = tmp_path / "s.jsonl"
        store_append(path, record(digest="a", seed=1))
        store_append(path, record(digest="b", seed=2))
        store_append(path, record(digest="a", seed=3))
        assert [r.seed for r in store_query(path, "a")] == [1, 3]

    def test_corrupt_line(self, tmp_path):
        path = tmp_path / "s.jsonl"
        store_append(path, record(seed=1))
        with open(path, "a") as fh:
            fh.write("{not json\n")
        store_append(path, record(seed=2))
        with pytest.warns(CorruptRecordWarning, match=r"\[2\]"):
            assert [r.seed for r in store_read(path)] == [1, 2]
        with pytest.raises(CorruptRecord) as info:
            store_read(path, strict=True)
        assert info.value.line_numbers == [2]

    def test_inconsistent_r_bar_rejected(self):
        with pytest.raises(ValueError):
            record(r_bar=(((1,), 2),), family_size=2)

    def test_concurrent_appends(self, tmp_path):
        path = str(tmp_path / "s.jsonl")
        with multiprocessing.get_context("spawn").Pool(4) as pool:
            pool.map(_append_many, [(path, k * 50) for k in range(4)])
        seeds = sorted(r.seed for r in store_read(path, strict=True))
        assert seeds == list(range(200))


class TestPredict:
    def test_single_record(self):
        rec = record(r_bar=(((1,), 3), ((2,), 2), ((1, 2), 4)), family_size=2)
        assert predict_r_bar([rec], (9.0,), k=1) == rec.r_bar

    def test_median_of_two(self):
        recs = [record(r_bar=(((1,), 3),), delta=(0.0,)), record(r_bar=(((1,), 5),), delta=(1.0,))]
        assert predict_r_bar(recs, (0.5,), k=2) == (((1,), 4),)

    def test_median_rounds_up(self):
        recs = [record(r_bar=(((1,), 3),)), record(r_bar=(((1,), 4),))]
        assert predict_r_bar(recs, (0.0,), k=2) == (((1,), 4),)

    def test_monotone_repair(self):
        a = record(r_bar=(((1,), 5), ((2,), 1), ((1, 2), 5)), family_size=2)
        b = record(r_bar=(((1,), 1), ((2,), 5), ((1, 2), 5)), family_size=2)
        c = record(r_bar=(((1,), 5), ((2,), 5), ((1, 2), 6)), family_size=2)
        out = dict(predict_r_bar([a, b, c], (0.0,), k=3))
        assert out[(1, 2)] >= max(out[(1,)], out[(2,)])

    def test_insufficient(self):
        with pytest.raises(InsufficientHistory):
            predict_r_bar([record()], (0.0,), k=2)

    def test_learned_records_are_not_training_data(self):
        with pytest.raises(InsufficientHistory):
            predict_r_bar([record(source="learned")], (0.0,), k=1)

    def test_mixed_sizes(self):
        recs = [record(), record(r_bar=(((1,), 1), ((2,), 1), ((1, 2), 2)), family_size=2)]
        with pytest.raises(MixedFamilySizes):
            predict_r_bar(recs, (0.0,), k=1)

    def test_synthetic_rule(self):
        rng = np.random.default_rng(0)
        train = rng.uniform(-3, 3, 50)
        recs = [record(r_bar=(((1,), int(round(2 + abs(d)))),), delta=(float(d),)) for d in train]
        held = rng.uniform(-3, 3, 20)
        errors, conservative = [], 0
        for d in held:
            truth = int(round(2 + abs(d)))
            pred = dict(predict_r_bar(recs, (float(d),), k=5))[(1,)]
            errors.append(abs(pred - truth))
            conservative += pred >= truth
        assert max(errors) <= 1
        assert conservative >= 10


@pytest.fixture
def workdir(tmp_path):
    (tmp_path / "problem.json").write_text(json.dumps(FIG2_PROBLEM))
    shutil.copy(fixture_path("fig2.csv"), tmp_path / "fig2.csv")
    return tmp_path


def config(workdir, **over):
    obj = {"problem": "problem.json", "data": "fig2.csv", "alpha": 0.1, "eta": 0.5,
           "target": 1.0, "seed": 7, "solver": {"solver_id": "grid-oracle", "grid_n": 101}}
    obj.update(over)
    path = workdir / "config.json"
    path.write_text(json.dumps(obj))
    return PipelineConfig.load(path)


class TestPipeline:
    def test_fig2_exact(self, workdir):
        rep = run_pipeline(config(workdir), workdir / "store.jsonl")
        assert rep["d_alpha_size"] == 85
        assert sorted(map(tuple, rep["d_alpha_scenarios"])) == [(2, 1), (2, 2), (2, 3), (3, 2)]
        assert rep["z"] == 4
        assert rep["solution"]["x_star"] == [3.0, 3.0]
        assert rep["rho_z_exact"] == "1/1"
        recs = store_query(workdir / "store.jsonl")
        assert len(recs) == 1 and recs[0].z == 4 and recs[0].r_bar_source == "exact"

    def test_reported_rho_matches_family(self, workdir):
        rep = run_pipeline(config(workdir, target=0.3))
        assert rep["z"] < 4
        family = rep["family"]
        groups = [(len(g), v) for g, v in rep["r_bar"]]
        expected = rho_exact(RhoInput(len(rep["d_alpha_scenarios"]), tuple(groups)), rep["z"])
        assert Fraction(rep["rho_z_exact"]) == expected
        assert rep["rho_z"] == float(expected)
        assert family == [[2, 3]]

    def test_byte_identical_reports(self, workdir):
        cfg = config(workdir, target=0.5)
        assert run_pipeline(cfg).to_json() == run_pipeline(cfg).to_json()

    def test_report_carries_fingerprint(self, workdir):
        rep = run_pipeline(config(workdir))
        fp = rep["solver_fingerprint"]
        assert fp["solver_id"] == "grid-oracle" and fp["start"] == [0.0, 0.0]
        assert rep["prng"] and rep["seed"] == 7

    def test_empty_probable_set(self, workdir):
        with pytest.raises(StageError) as info:
            run_pipeline(config(workdir, alpha=0.9))
        assert info.value.stage == "d_alpha"
        assert isinstance(info.value.cause, EmptyProbableSet)

    def test_exact_mode_too_large(self, workdir):
        d = DataSet.from_points([(i % 4, i // 4) for i in range(16)])
        write_csv(d, workdir / "grid.csv")
        with pytest.raises(StageError) as info:
            run_pipeline(config(workdir, data="grid.csv", alpha=0.0))
        assert isinstance(info.value.cause, ExactModeTooLarge)

    def test_eta_rule(self, workdir):
        rep = run_pipeline(config(workdir, eta=None, eta_rule=True))
        assert rep["eta_source"] == "rule-of-thumb" and rep["eta"] > 0

    def test_learned_mode(self, workdir):
        problem = dict(FIG2_PROBLEM, delta=[1.0])
        (workdir / "problem.json").write_text(json.dumps(problem))
        store = workdir / "store.jsonl"
        for _ in range(3):
            run_pipeline(config(workdir), store)
        rep = run_pipeline(config(workdir, mode="learned", k=3), store)
        assert rep["family"] is None
        assert rep["r_bar"] == [[[1], 2]]
        assert rep["z"] == 4
        assert store_query(store)[-1].r_bar_source == "learned"

    def test_learned_needs_delta_and_store(self, workdir):
        with pytest.raises(ConfigError):
            run_pipeline(config(workdir, mode="learned"), workdir / "s.jsonl")
        with pytest.raises(ConfigError):
            run_pipeline(config(workdir, mode="learned"))

    @pytest.mark.parametrize("bad", [
        {"eta": None},
        {"eta_rule": True},
        {"target": 0.0},
        {"mode": "guess"},
        {"solver": {"solver_id": "nope"}},
        {"solver": {"tolerance": 1}},
    ])
    def test_config_validation(self, workdir, bad):
        with pytest.raises(ConfigError):
            config(workdir, **bad)

    def test_dimension_mismatch(self, workdir):
        (workdir / "problem.json").write_text(json.dumps(dict(FIG2_PROBLEM, u=3, constraints=["xi3 - x1"])))
        with pytest.raises(DimensionError):
            run_pipeline(config(workdir))
