import json

import pytest

from wearid.cli import load_config_file, main
from wearid.dataset import tree_hash


def run(args):
    return main(args)


class TestGenData:
    def test_seed_repeat_hash_identical(self, tmp_path):
        for name in ("a", "b"):
            code = run(
                ["gen-data", "--out-dir", str(tmp_path / name), "--seed", "4",
                 "--users", "2", "--duration", "60"]
            )
            assert code == 0
        assert tree_hash(tmp_path / "a") == tree_hash(tmp_path / "b")

    def test_different_seed_differs(self, tmp_path):
        run(["gen-data", "--out-dir", str(tmp_path / "a"), "--seed", "1", "--users", "1", "--duration", "60"])
        run(["gen-data", "--out-dir", str(tmp_path / "b"), "--seed", "2", "--users", "1", "--duration", "60"])
        assert tree_hash(tmp_path / "a") != tree_hash(tmp_path / "b")

    def test_invalid_proximity_exits_2(self, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"proximity": {"left_ear:right_ear": 1.5}}))
        code = run(["gen-data", "--out-dir", str(tmp_path / "x"), "--config", str(cfg)])
        assert code == 2

    def test_manifest_written(self, tmp_path):
        run(["gen-data", "--out-dir", str(tmp_path / "d"), "--users", "1", "--duration", "60"])
        manifest = json.loads((tmp_path / "d" / "manifest.json").read_text())
        assert manifest["n_users"] == 1
        assert len(manifest["devices"]) == 4


class TestTrain:
    def test_missing_dataset_exits_3(self, tmp_path):
        code = run(
            ["train", "--data", str(tmp_path / "nope"), "--out-dir", str(tmp_path / "reg"),
             "--sensors", "acc"]
        )
        assert code == 3

    def test_refuses_existing_bundle_without_force(self, tmp_path):
        out = tmp_path / "reg"
        out.mkdir()
        (out / "bundle_acc.widb").write_bytes(b"placeholder")
        code = run(
            ["train", "--data", str(tmp_path / "also-missing"), "--out-dir", str(out),
             "--sensors", "acc"]
        )
        assert code == 2
        assert (out / "bundle_acc.widb").read_bytes() == b"placeholder"


class TestEval:
    def test_missing_registry_exits_4(self, tmp_path):
        data = tmp_path / "data"
        run(["gen-data", "--out-dir", str(data), "--users", "2", "--duration", "60"])
        (tmp_path / "reg").mkdir()
        code = run(
            ["eval", "--data", str(data), "--registry", str(tmp_path / "reg"),
             "--out-dir", str(tmp_path / "out")]
        )
        assert code == 4


class TestMatch:
    def test_corrupt_bundle_exits_4(self, tmp_path):
        bundle = tmp_path / "b.widb"
        bundle.write_bytes(b"junk")
        a = tmp_path / "a.csv"
        a.write_text("t,acc_x\n0.0,1.0\n")
        code = run(["match", "--bundle", str(bundle), str(a), str(a)])
        assert code == 4


class TestUsage:
    def test_unknown_command(self):
        assert run(["frobnicate"]) == 2

    def test_missing_required_flag(self):
        assert run(["gen-data"]) == 2


class TestConfigFile:
    def test_json_object(self, tmp_path):
        p = tmp_path / "c.json"
        p.write_text(json.dumps({"seed": 9, "epochs": 3}))
        assert load_config_file(str(p)) == {"seed": 9, "epochs": 3}

    def test_key_value_lines(self, tmp_path):
        p = tmp_path / "c.cfg"
        p.write_text("# comment\nseed = 9\nsensors = acc+gyro\nlr = 0.05\n")
        cfg = load_config_file(str(p))
        assert cfg == {"seed": 9, "sensors": "acc+gyro", "lr": 0.05}

    def test_flags_override_config(self, tmp_path, capsys):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({"users": 3, "duration": 60.0}))
        code = run(
            ["gen-data", "--out-dir", str(tmp_path / "d"), "--config", str(cfg), "--users", "1"]
        )
        assert code == 0
        out = capsys.readouterr().out
        assert "1 users" in out
