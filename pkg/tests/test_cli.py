"""Command-line driver: config validation, exit codes, artifacts."""

import json

import numpy as np
import pytest

from mob import cli, data
from mob.metrics import RunSummary


@pytest.fixture
def tiny_config(tmp_path, data_dir):
    cfg = {
        "engine": {"n_experts": 2, "hidden_sizes": [16], "batch_size": 32,
                   "fisher_max_examples": 32},
        "data": {"data_dir": str(data_dir), "per_task_train": 128,
                 "per_task_eval": 64},
    }
    path = tmp_path / "config.json"
    path.write_text(json.dumps(cfg))
    return path


class TestConfigValidation:
    def test_unknown_top_level_field(self, tmp_path):
        p = tmp_path / "c.json"
        p.write_text(json.dumps({"enigne": {}}))
        with pytest.raises(cli.UsageError, match="unknown config fields"):
            cli.load_run_config(p)

    def test_unknown_engine_field(self, tmp_path):
        p = tmp_path / "c.json"
        p.write_text(json.dumps({"engine": {"learning_rate": 0.1}}))
        with pytest.raises(cli.UsageError, match="unknown engine config"):
            cli.load_run_config(p)

    def test_unknown_data_field(self, tmp_path):
        p = tmp_path / "c.json"
        p.write_text(json.dumps({"data": {"path": "x"}}))
        with pytest.raises(cli.UsageError, match="unknown data config"):
            cli.load_run_config(p)

    def test_wrong_schema_version(self, tmp_path):
        p = tmp_path / "c.json"
        p.write_text(json.dumps({"schema_version": 99}))
        with pytest.raises(cli.UsageError, match="schema_version"):
            cli.load_run_config(p)

    def test_usage_error_exits_1(self, tmp_path):
        p = tmp_path / "c.json"
        p.write_text(json.dumps({"bogus": 1}))
        assert cli.main(["run", "--config", str(p),
                         "--out", str(tmp_path)]) == 1


class TestConfigHash:
    def test_stable_and_discriminating(self):
        cfg = {"engine": {}, "data": {}, "eval_routing": "labelfree"}
        h = cli.config_hash(cfg, "mob", 0)
        assert h == cli.config_hash(cfg, "mob", 0)
        assert len(h) == 16
        assert h != cli.config_hash(cfg, "mob", 1)
        assert h != cli.config_hash(cfg, "naive_finetune", 0)


class TestParseSeeds:
    def test_range_and_list(self):
        assert cli._parse_seeds("0..3") == [0, 1, 2, 3]
        assert cli._parse_seeds("5,2,9") == [5, 2, 9]


class TestDsicCommand:
    def test_clean_check_exits_0(self, capsys):
        assert cli.main(["dsic-check", "--n-experts", "3",
                         "--trials", "200"]) == 0
        out = capsys.readouterr().out
        assert "violations=0" in out

    def test_zero_trials_warns(self, capsys):
        assert cli.main(["dsic-check", "--trials", "0"]) == 0
        assert "0 trials" in capsys.readouterr().out


class TestInspectData:
    def test_prints_header(self, tmp_path, capsys):
        arr = np.zeros((3, 4, 4), dtype=np.uint8)
        p = tmp_path / "images-idx3-ubyte"
        p.write_bytes(data.serialize_idx(arr))
        assert cli.main(["inspect-data", str(p)]) == 0
        out = capsys.readouterr().out
        assert "magic=0x00000803" in out
        assert "[3, 4, 4]" in out

    def test_corrupt_file_exits_2(self, tmp_path):
        p = tmp_path / "junk"
        p.write_bytes(b"\xff" * 32)
        assert cli.main(["inspect-data", str(p)]) == 2

    def test_checksum_mismatch_exits_2(self, tmp_path):
        arr = np.zeros(5, dtype=np.uint8)
        p = tmp_path / "labels-idx1-ubyte"
        p.write_bytes(data.serialize_idx(arr))
        (tmp_path / data.MANIFEST_NAME).write_text(
            json.dumps({p.name: "0" * 64}))
        assert cli.main(["inspect-data", str(p)]) == 2


class TestRunCommand:
    def test_writes_summary_steplog_and_meta(self, tiny_config, tmp_path,
                                             digits):
        out = tmp_path / "out"
        assert cli.main(["run", "--config", str(tiny_config),
                         "--method", "mob", "--seed", "1",
                         "--out", str(out)]) == 0
        summary = RunSummary.from_json(
            (out / "summary_mob_seed1.json").read_text())
        assert summary.method == "mob"
        assert summary.seed == 1
        assert 0.0 <= summary.avg_accuracy <= 1.0
        assert np.asarray(summary.acc_matrix).shape == (5, 5)
        lines = (out / "steplog_mob_seed1.jsonl").read_text().splitlines()
        assert len(lines) == 5 * (128 // 32)
        first = json.loads(lines[0])
        assert {"step_index", "bids", "winner", "payment"} <= set(first)
        meta = json.loads((out / "runmeta_mob_seed1.json").read_text())
        assert meta["config_hash"] == summary.config_hash

    def test_baseline_run(self, tiny_config, tmp_path, digits):
        out = tmp_path / "out"
        assert cli.main(["run", "--config", str(tiny_config),
                         "--method", "naive_finetune", "--out",
                         str(out)]) == 0
        assert (out / "summary_naive_finetune_seed0.json").exists()

    def test_unknown_method_rejected(self):
        with pytest.raises(cli.UsageError):
            cli.execute_run({"engine": {}, "data": {},
                             "eval_routing": "labelfree"},
                            "mystery", 0, None)


class TestSweepAndReport:
    def test_sweep_produces_report_and_figures(self, tiny_config, tmp_path,
                                               digits):
        out = tmp_path / "sweep"
        assert cli.main(["sweep", "--config", str(tiny_config),
                         "--methods", "mob,naive_finetune",
                         "--seeds", "0,1", "--out", str(out)]) == 0
        assert (out / "report.md").exists()
        assert (out / "report.csv").exists()
        agg = json.loads((out / "aggregate.json").read_text())
        assert set(agg["methods"]) == {"mob", "naive_finetune"}
        assert "mob|naive_finetune" in agg["welch_avg_accuracy"]
        figures = list((out / "figures").glob("*.png"))
        names = {f.name for f in figures}
        assert "avg_accuracy.png" in names
        assert any(n.startswith("acc_matrix_mob") for n in names)
        assert any(n.startswith("wins_mob") for n in names)

        # report can be rebuilt from the summaries alone
        (out / "report.md").unlink()
        assert cli.main(["report", "--out", str(out)]) == 0
        assert (out / "report.md").exists()

    def test_report_without_summaries_exits_1(self, tmp_path):
        empty = tmp_path / "empty"
        empty.mkdir()
        assert cli.main(["report", "--out", str(empty)]) == 1
