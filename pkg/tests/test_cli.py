import csv
import json

import numpy as np
import pytest

from den.checkpoint import load_checkpoint
from den.cli import EXIT_OK, EXIT_RUNTIME, EXIT_USAGE, main
from den.data import Task, save_task_csv

MODEL = {"K": 4, "H": 5, "L": 2}
TRAIN = {"steps": 15, "batch_size": 32, "finetune_epochs": 1}
SIM = {"families": 3, "count_range": [2, 4], "n": 120}
TARGET = {"simulation": {"families": 1, "count_range": [3, 3], "n": 120, "prefix": "target"}}


def _write(path, obj):
    path.write_text(json.dumps(obj))
    return path


def _rows(path):
    with path.open() as fh:
        return list(csv.DictReader(fh))


@pytest.fixture
def work(tmp_path):
    return tmp_path


def _pretrain(work, name="pre", extra=()):
    man = _write(work / f"{name}.json", {"seed": 3, "model": MODEL, "train": TRAIN, "simulation": SIM})
    assert main(["pretrain", "--manifest", str(man), "--out", str(work / name), *extra]) == EXIT_OK
    return work / name


def _eval_manifest(work, ckpt, **ev):
    return _write(work / "eval.json", {
        "seed": 3, "model": MODEL, "train": TRAIN, "checkpoint": str(ckpt.relative_to(work)),
        "target": TARGET, "evaluation": {"support": 20, "repeats": 20, **ev},
    })


class TestPretrain:
    def test_outputs(self, work):
        out = _pretrain(work)
        assert sorted(p.name for p in out.iterdir()) == ["checkpoint.json", "loss_history.csv", "run.json"]
        hist = _rows(out / "loss_history.csv")
        assert len(hist) == 15 and hist[0]["step"] == "0"
        assert load_checkpoint(out / "checkpoint.json").config.K == 4

    def test_deterministic(self, work):
        a, b = _pretrain(work, "a"), _pretrain(work, "b")
        for f in ("checkpoint.json", "loss_history.csv"):
            assert (a / f).read_bytes() == (b / f).read_bytes()

    def test_seed_flag_changes_run(self, work):
        a = _pretrain(work, "a")
        b = _pretrain(work, "b", ["--seed", "4"])
        assert (a / "checkpoint.json").read_bytes() != (b / "checkpoint.json").read_bytes()

    def test_malformed_manifest(self, work, capsys):
        man = work / "broken.json"
        man.write_text("{oops")
        assert main(["pretrain", "--manifest", str(man), "--out", str(work / "o")]) == EXIT_USAGE
        assert "broken.json" in capsys.readouterr().err
        assert not (work / "o").exists()

    def test_missing_manifest(self, work):
        assert main(["pretrain", "--manifest", str(work / "none.json"), "--out", str(work / "o")]) == EXIT_USAGE

    def test_runtime_failure_removes_outputs(self, work):
        # a task with a single positive makes every episode lack a class
        y = np.zeros(400, dtype=int)
        y[0] = 1
        save_task_csv(Task(np.random.default_rng(0).uniform(size=(400, 2)), y, 2), work / "t.csv", work / "t.json")
        man = _write(work / "run.json", {"model": MODEL, "train": {"steps": 5, "batch_size": 8},
                                         "tasks": [{"csv": "t.csv", "manifest": "t.json"}]})
        assert main(["pretrain", "--manifest", str(man), "--out", str(work / "o")]) == EXIT_RUNTIME
        assert not (work / "o").exists()

    def test_bad_flags(self, work):
        assert main(["pretrain"]) == EXIT_USAGE
        assert main(["nonsense"]) == EXIT_USAGE
        assert main(["pretrain", "--manifest", "m", "--out", "o", "--seed", "-1"]) == EXIT_USAGE
        assert main(["--help"]) == EXIT_OK


class TestFinetuneEval:
    def test_row_accounting(self, work):
        out = _pretrain(work)
        man = _eval_manifest(work, out / "checkpoint.json")
        assert main(["finetune-eval", "--manifest", str(man), "--out", str(work / "ev"), "--baselines"]) == EXIT_OK
        rows = _rows(work / "ev" / "metrics.csv")
        for method in ("den", "linear", "mlp"):
            mine = [r for r in rows if r["method"] == method]
            assert len(mine) == 21
            assert sum(r["repeat"] == "summary" for r in mine) == 1

    def test_no_finetune_toggle(self, work):
        out = _pretrain(work)
        man = _eval_manifest(work, out / "checkpoint.json")
        assert main(["finetune-eval", "--manifest", str(man), "--out", str(work / "a")]) == EXIT_OK
        assert main(["finetune-eval", "--manifest", str(man), "--out", str(work / "b"), "--no-finetune"]) == EXIT_OK
        a, b = _rows(work / "a" / "metrics.csv"), _rows(work / "b" / "metrics.csv")
        assert {r["method"] for r in a} == {"den"} and {r["method"] for r in b} == {"den_noft"}
        assert [r["value"] for r in a] != [r["value"] for r in b]

    def test_no_plf_pipeline(self, work):
        out = _pretrain(work, extra=["--no-plf"])
        man = _eval_manifest(work, out / "checkpoint.json", repeats=2)
        assert main(["finetune-eval", "--manifest", str(man), "--out", str(work / "ev"), "--no-plf"]) == EXIT_OK
        assert {r["method"] for r in _rows(work / "ev" / "metrics.csv")} == {"den_noplf"}

    def test_no_plf_flag_needs_matching_checkpoint(self, work):
        out = _pretrain(work)
        man = _eval_manifest(work, out / "checkpoint.json", repeats=2)
        assert main(["finetune-eval", "--manifest", str(man), "--out", str(work / "ev"), "--no-plf"]) == EXIT_USAGE

    def test_missing_checkpoint(self, work):
        man = _write(work / "eval.json", {"checkpoint": "absent.json", "target": TARGET})
        assert main(["finetune-eval", "--manifest", str(man), "--out", str(work / "ev")]) == EXIT_USAGE

    def test_corrupt_checkpoint(self, work):
        (work / "c.json").write_text('{"format": "den-checkpoint"')
        man = _write(work / "eval.json", {"checkpoint": "c.json", "target": TARGET})
        assert main(["finetune-eval", "--manifest", str(man), "--out", str(work / "ev")]) == EXIT_USAGE

    def test_unsatisfiable_split(self, work):
        out = _pretrain(work)
        save_task_csv(Task(np.random.default_rng(0).uniform(size=(60, 3)), np.zeros(60, dtype=int), 2),
                      work / "t.csv", work / "t.json")
        man = _write(work / "eval.json", {
            "model": MODEL, "checkpoint": "pre/checkpoint.json",
            "target": [{"csv": "t.csv", "manifest": "t.json"}], "evaluation": {"support": 20, "repeats": 2},
        })
        assert main(["finetune-eval", "--manifest", str(man), "--out", str(work / "ev")]) == EXIT_RUNTIME
        assert not (work / "ev").exists()

    def test_preexisting_out_dir_kept_clean(self, work):
        out = _pretrain(work)
        (work / "ev").mkdir()
        (work / "ev" / "keep.txt").write_text("x")
        man = _write(work / "eval.json", {"model": MODEL, "checkpoint": "pre/checkpoint.json",
                                          "target": TARGET, "evaluation": {"support": 200}})
        assert main(["finetune-eval", "--manifest", str(man), "--out", str(work / "ev")]) == EXIT_RUNTIME
        assert [p.name for p in (work / "ev").iterdir()] == ["keep.txt"]
        assert out.exists()


class TestSimulate:
    def test_pairs(self, work):
        man = _write(work / "sim.json", {"seed": 1, "simulation": SIM})
        assert main(["simulate", "--manifest", str(man), "--out", str(work / "s")]) == EXIT_OK
        names = sorted(p.name for p in (work / "s").iterdir())
        assert names == [f"family00{i}.{ext}" for i in range(3) for ext in ("csv", "json")]

    def test_seeded_rerun(self, work):
        man = _write(work / "sim.json", {"seed": 1, "simulation": SIM})
        main(["simulate", "--manifest", str(man), "--out", str(work / "a")])
        main(["simulate", "--manifest", str(man), "--out", str(work / "b")])
        for p in (work / "a").iterdir():
            assert p.read_bytes() == (work / "b" / p.name).read_bytes()

    def test_outputs_load_back(self, work):
        man = _write(work / "sim.json", {"seed": 1, "simulation": SIM})
        main(["simulate", "--manifest", str(man), "--out", str(work / "s")])
        tasks = [{"csv": f"s/family00{i}.csv", "manifest": f"s/family00{i}.json"} for i in range(3)]
        run = _write(work / "run.json", {"model": MODEL, "train": TRAIN, "tasks": tasks})
        assert main(["pretrain", "--manifest", str(run), "--out", str(work / "pre")]) == EXIT_OK

    def test_invalid_prior(self, work):
        man = _write(work / "sim.json", {"simulation": {**SIM, "pi": 1.2}})
        assert main(["simulate", "--manifest", str(man), "--out", str(work / "s")]) == EXIT_USAGE
        assert not (work / "s").exists()


class TestAblate:
    def _manifest(self, work, sweep):
        return _write(work / "abl.json", {
            "seed": 2, "model": MODEL, "train": TRAIN, "simulation": SIM, "target": TARGET,
            "evaluation": {"support": 20, "repeats": 2}, "sweep": sweep,
        })

    @pytest.mark.parametrize("sweep,labels", [({"r": [1, 2, 3]}, ["r=1", "r=2", "r=3"]),
                                              ({"K": [2, 5, 10]}, ["K=2", "K=5", "K=10"])])
    def test_rows(self, work, sweep, labels):
        man = self._manifest(work, sweep)
        assert main(["ablate", "--manifest", str(man), "--out", str(work / "ab")]) == EXIT_OK
        rows = _rows(work / "ab" / "sweep.csv")
        assert [r["setting"] for r in rows] == labels
        assert all(0.0 <= float(r["mean_auc"]) <= 1.0 and float(r["se"]) >= 0 for r in rows)

    def test_empty_sweep(self, work):
        man = self._manifest(work, {"r": []})
        assert main(["ablate", "--manifest", str(man), "--out", str(work / "ab")]) == EXIT_USAGE

    def test_failure_keeps_finished_settings(self, work):
        # a single keypoint cannot form a PLF, so the K=1 setting fails after r=1 finished
        man = self._manifest(work, {"r": [1], "K": [1]})
        code = main(["ablate", "--manifest", str(man), "--out", str(work / "ab")])
        rows = _rows(work / "ab" / "sweep.csv")
        assert code == EXIT_RUNTIME and [r["setting"] for r in rows] == ["r=1"]
