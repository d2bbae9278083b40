import json

import numpy as np
import pytest

from den.experiments import (
    ManifestError,
    MetricRow,
    SimulationSpec,
    evaluate,
    load_manifest,
    method_means,
    oracle_band_suite,
    parse_manifest,
    read_metrics_csv,
    stream_seed,
    summarize,
    sweep_settings,
    write_metrics_csv,
)
from den.metrics import mean_stderr
from den.model import ModelConfig, build_model
from den.trainer import TrainConfig


class TestStreams:
    def test_stable_and_distinct(self):
        assert stream_seed(3, "init") == stream_seed(3, "init")
        names = ["init", "train", "splits", "index-sets", "train-tasks", "target-tasks"]
        assert len({stream_seed(3, n) for n in names}) == len(names)
        assert stream_seed(3, "init") != stream_seed(4, "init")


class TestSimulationSpec:
    def test_counts_and_ids(self):
        tasks = SimulationSpec(families=3, n=50, subtasks=2).generate(0)
        ids = [t.task_id for t in tasks]
        assert ids[:3] == ["family000", "family000_sub00", "family000_sub01"]
        assert len(tasks) == 9
        for t in tasks:
            if "_sub" in t.task_id:
                parent = next(p for p in tasks if p.task_id == t.task_id.split("_sub")[0])
                assert set(t.columns) <= set(parent.columns)
                assert np.array_equal(t.y, parent.y)

    def test_seeded(self):
        a = SimulationSpec(families=2, n=40, heterogeneity=True).generate(5)
        b = SimulationSpec(families=2, n=40, heterogeneity=True).generate(5)
        assert all(x.X.tobytes() == y.X.tobytes() for x, y in zip(a, b))

    def test_fixed_prior(self):
        t = SimulationSpec(families=1, n=10_000, pi=0.5).generate(1)[0]
        assert abs(t.y.mean() - 0.5) < 0.02

    @pytest.mark.parametrize("kw", [dict(pi=1.2), dict(families=0), dict(count_range=(4, 2))])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            SimulationSpec(**kw)


class TestOracleBand:
    def test_band_respected(self):
        suite = oracle_band_suite(3, seed=0, n=200, n_mc=2000)
        assert len(suite) == 3
        assert all(0.90 <= o.oracle_auc <= 0.97 for o in suite)
        assert all(o.task.d == o.spec.count for o in suite)

    def test_unreachable_band(self):
        with pytest.raises(RuntimeError):
            oracle_band_suite(1, seed=0, band=(0.0, 0.01), n=50, n_mc=1000, max_draws=3)


def _tiny_tasks():
    return SimulationSpec(families=2, count_range=(2, 3), n=80).generate(0)


class TestEvaluate:
    def test_row_accounting(self):
        m = build_model(ModelConfig(K=4, H=5, L=2), 0)
        rows = evaluate({"den": (m, True), "den_noft": (m, False)}, _tiny_tasks(), 20, 3,
                        TrainConfig(finetune_epochs=1), 0, baselines=("linear",))
        assert len(rows) == 2 * 3 * 3
        assert {r.method for r in rows} == {"den", "den_noft", "linear"}
        assert all(r.metric == "auc" and 0.0 <= r.value <= 1.0 for r in rows)

    def test_reproducible(self):
        m = build_model(ModelConfig(K=4, H=5, L=2), 0)
        a = evaluate({"den": (m, True)}, _tiny_tasks(), 20, 2, TrainConfig(finetune_epochs=1), 7)
        b = evaluate({"den": (m, True)}, _tiny_tasks(), 20, 2, TrainConfig(finetune_epochs=1), 7)
        assert a == b

    def test_methods_share_splits(self):
        # the same model listed twice must score identically on every repeat
        m = build_model(ModelConfig(K=4, H=5, L=2), 0)
        rows = evaluate({"a": (m, False), "b": (m, False)}, _tiny_tasks(), 20, 3, TrainConfig(), 1)
        va = [r.value for r in rows if r.method == "a"]
        vb = [r.value for r in rows if r.method == "b"]
        assert va == vb

    def test_unsatisfiable_split(self):
        t = _tiny_tasks()[0]
        t.y[:] = 0
        with pytest.raises(ValueError):
            evaluate({}, [t], 20, 1, TrainConfig(), 0)

    def test_unknown_baseline(self):
        with pytest.raises(ValueError):
            evaluate({}, _tiny_tasks(), 20, 1, TrainConfig(), 0, baselines=("forest",))


class TestReports:
    ROWS = [MetricRow("t", k, "den", "auc", v) for k, v in enumerate([0.5, 0.75, 1.0])]

    def test_summary_values(self):
        (s,) = summarize(self.ROWS)
        m, se = mean_stderr([0.5, 0.75, 1.0])
        assert s.repeat == "summary" and s.value == m and s.stderr == se

    def test_means_skip_summaries(self):
        assert method_means(self.ROWS + summarize(self.ROWS)) == {"den": 0.75}

    def test_csv_round_trip(self, tmp_path):
        write_metrics_csv(self.ROWS, tmp_path / "m.csv")
        back = read_metrics_csv(tmp_path / "m.csv")
        assert back == self.ROWS + summarize(self.ROWS)


class TestManifest:
    def test_defaults(self):
        spec = parse_manifest({"seed": 4})
        assert spec.mode == "binary" and spec.support == 50 and spec.repeats == 20
        assert spec.model.policy_seed == stream_seed(4, "index-sets")
        assert spec.train.seed == stream_seed(4, "train")

    def test_seed_override_rederives_streams(self):
        spec = parse_manifest({"seed": 4}, seed=9)
        assert spec.seed == 9 and spec.train.seed == stream_seed(9, "train")
        assert spec.model.policy_seed == stream_seed(9, "index-sets")

    @pytest.mark.parametrize("obj", [
        {"bogus": 1},
        {"seed": -1},
        {"train": {"seed": 3}},
        {"model": {"H": 4, "width": 2}},
        {"evaluation": {"support": "fifty"}},
        {"evaluation": {"baselines": ["forest"]}},
        {"sweep": {"r": []}, "evaluation": {"repeats": 0}},
        {"sweep": {"depth": [1]}},
        {"sweep": {"r": [0]}},
        {"simulation": {"pi": 1.2}},
        {"tasks": []},
        {"target": {"tasks": [], "simulation": {}}},
    ])
    def test_rejects(self, obj):
        with pytest.raises(ManifestError):
            parse_manifest(obj)

    def test_missing_task_file(self, tmp_path):
        with pytest.raises(ManifestError, match="not found"):
            parse_manifest({"tasks": [{"csv": "nope.csv", "manifest": {}}]}, tmp_path)

    def test_malformed_json_names_file(self, tmp_path):
        p = tmp_path / "run.json"
        p.write_text("{not json")
        with pytest.raises(ManifestError, match="run.json"):
            load_manifest(p)

    def test_sweep_order(self):
        assert sweep_settings({"K": [2, 5], "r": [1]}) == [("r=1", {"r": 1}), ("K=2", {"K": 2}), ("K=5", {"K": 5})]

    def test_relative_paths(self, tmp_path):
        p = tmp_path / "run.json"
        p.write_text(json.dumps({"checkpoint": "pre/checkpoint.json"}))
        assert load_manifest(p).checkpoint == tmp_path / "pre" / "checkpoint.json"
