import csv
import json

import numpy as np
import pytest

from cen import checkpoint
from cen.cli import main, parse_config, UsageError
from cen.numeric import make_rng

XOR = {"data": {"synthetic": {"generator": "xor-context", "n_per_group": 40, "seed": 3}},
       "model": {"dictionary_size": 2, "hidden": []},
       "train": {"lr": 0.05, "max_epochs": 15, "entropy_weight": 0.1}}


def write_json(path, obj):
    path.write_text(json.dumps(obj))
    return str(path)


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


@pytest.fixture
def xor_run(tmp_path):
    cfg = write_json(tmp_path / "xor.json", XOR)
    out = tmp_path / "run"
    assert main(["train", "--config", cfg, "--out", str(out)]) == 0
    return tmp_path, cfg, out


@pytest.fixture
def survival_files(tmp_path):
    rng = make_rng(0)
    lines = ["age,sex,t,dead"]
    for i in range(60):
        age = rng.normal(60, 10)
        t = rng.exponential(20 + (80 - age))
        dead = int(rng.random() < 0.7)
        sex = "" if i % 13 == 0 else rng.choice(["m", "f"])
        lines.append(f"{age:.1f},{sex},{max(t, 0.0):.1f},{dead}")
    data = tmp_path / "surv.csv"
    data.write_text("\n".join(lines) + "\n")
    schema = write_json(tmp_path / "schema.json", {
        "columns": {"age": "numeric", "sex": "categorical", "t": "event-time", "dead": "censor-flag"},
        "context": ["age", "sex"], "attributes": ["age", "sex"], "censored_when": "0"})
    cfg = write_json(tmp_path / "surv.json", {
        "model": {"family": "survival", "dictionary_size": 2, "hidden": [8]},
        "survival": {"horizon": 49, "width": 7},
        "train": {"lr": 0.02, "max_epochs": 5}})
    return str(data), schema, cfg


class TestTrain:
    def test_smoke(self, xor_run):
        _, _, out = xor_run
        metrics = json.loads((out / "metrics.json").read_text())
        assert metrics["schema_version"] == 1
        assert 0 <= metrics["test"]["accuracy"] <= 1
        assert (out / "checkpoint.json").is_file()
        assert read_csv(out / "history.csv")[0].keys() >= {"epoch", "train_loss", "val_loss"}

    def test_deterministic(self, xor_run):
        tmp, cfg, out = xor_run
        again = tmp / "again"
        assert main(["train", "--config", cfg, "--out", str(again)]) == 0
        assert (out / "metrics.json").read_text() == (again / "metrics.json").read_text()
        assert (out / "checkpoint.json").read_text() == (again / "checkpoint.json").read_text()

    def test_seed_flag_changes_run(self, xor_run):
        tmp, cfg, out = xor_run
        other = tmp / "other"
        assert main(["train", "--config", cfg, "--out", str(other), "--seed", "9"]) == 0
        assert (out / "checkpoint.json").read_text() != (other / "checkpoint.json").read_text()

    def test_missing_data_path(self, tmp_path, capsys):
        out = tmp_path / "out"
        code = main(["train", "--data", str(tmp_path / "missing.csv"), "--out", str(out)])
        assert code == 2
        assert not out.exists()
        assert "does not exist" in capsys.readouterr().err

    def test_unknown_config_key(self, tmp_path):
        cfg = write_json(tmp_path / "c.json", {**XOR, "modle": {}})
        assert main(["train", "--config", cfg, "--out", str(tmp_path / "o")]) == 2

    def test_unknown_nested_key(self, tmp_path):
        cfg = write_json(tmp_path / "c.json", {**XOR, "train": {"learning_rate": 0.1}})
        assert main(["train", "--config", cfg, "--out", str(tmp_path / "o")]) == 2

    def test_bad_data_row(self, tmp_path):
        data = tmp_path / "d.csv"
        data.write_text("a,y\n1,0\n2\n")
        schema = write_json(tmp_path / "s.json", {"columns": {"a": "numeric", "y": "label"},
                                                  "attributes": ["a"]})
        code = main(["train", "--data", str(data), "--schema", schema, "--out", str(tmp_path / "o")])
        assert code == 3
        assert not (tmp_path / "o").exists()

    def test_divergence_exit_code(self, tmp_path):
        cfg = write_json(tmp_path / "c.json", {**XOR, "train": {"lr": 1e300, "optimizer": "sgd-momentum",
                                                                "max_epochs": 20}})
        assert main(["train", "--config", cfg, "--out", str(tmp_path / "o")]) == 4

    def test_no_command(self):
        assert main([]) == 2

    def test_mlp_baseline(self, tmp_path):
        cfg = write_json(tmp_path / "c.json", {**XOR, "model": {"kind": "mlp", "hidden": [8]}})
        assert main(["train", "--config", cfg, "--out", str(tmp_path / "o")]) == 0
        assert main(["eval", "--config", cfg, "--checkpoint", str(tmp_path / "o" / "checkpoint.json"),
                     "--out", str(tmp_path / "e")]) == 0
        assert main(["explain", "--checkpoint", str(tmp_path / "o" / "checkpoint.json"),
                     "--out", str(tmp_path / "x")]) == 2


class TestEvalExplainDiagnose:
    def test_eval_matches_train_test_metrics(self, xor_run):
        tmp, _, out = xor_run
        assert main(["eval", "--checkpoint", str(out / "checkpoint.json"), "--out", str(tmp / "ev")]) == 0
        trained = json.loads((out / "metrics.json").read_text())["test"]
        evaluated = json.loads((tmp / "ev" / "metrics.json").read_text())["test"]
        assert trained == evaluated

    def test_explain_schema(self, xor_run):
        tmp, _, out = xor_run
        assert main(["explain", "--checkpoint", str(out / "checkpoint.json"), "--out", str(tmp / "ex"),
                     "--rows", "0:5"]) == 0
        rows = read_csv(tmp / "ex" / "explanations.csv")
        assert len(rows) == 5 * 2
        assert list(rows[0]) == ["row", "class", "w_x0", "w_x1", "bias", "alpha_0", "alpha_1"]
        for r in rows:
            assert float(r["alpha_0"]) + float(r["alpha_1"]) == pytest.approx(1.0)

    def test_bad_rows(self, xor_run):
        tmp, _, out = xor_run
        assert main(["explain", "--checkpoint", str(out / "checkpoint.json"), "--out", str(tmp / "ex"),
                     "--rows", "5:2"]) == 2

    def test_single_atom_gives_identical_weights(self, tmp_path):
        cfg = write_json(tmp_path / "c.json", {**XOR, "model": {"dictionary_size": 1}})
        assert main(["train", "--config", cfg, "--out", str(tmp_path / "o")]) == 0
        assert main(["explain", "--checkpoint", str(tmp_path / "o" / "checkpoint.json"),
                     "--out", str(tmp_path / "ex")]) == 0
        rows = read_csv(tmp_path / "ex" / "explanations.csv")
        for cls in ("0", "1"):
            weights = {(r["w_x0"], r["w_x1"], r["bias"]) for r in rows if r["class"] == cls}
            assert len(weights) == 1

    def test_hard_attention_rows_equal_atoms(self, xor_run):
        tmp, _, out = xor_run
        model, extra = checkpoint.load(out / "checkpoint.json")
        # route context c to atom c % 2 with saturated logits
        W = np.full((2, 4), -500.0)
        for c in range(4):
            W[c % 2, c] = 500.0
        model.encoder.weights[0][...] = W
        model.encoder.biases[0][...] = 0.0
        path = tmp / "hard.json"
        checkpoint.save(model, path, extra)
        assert main(["explain", "--checkpoint", str(path), "--out", str(tmp / "hx")]) == 0
        D = model.dictionary.D
        for r in read_csv(tmp / "hx" / "explanations.csv"):
            atom = int(np.argmax([float(r["alpha_0"]), float(r["alpha_1"])]))
            k = int(r["class"])
            expected = [D[atom, 2 * k], D[atom, 2 * k + 1], D[atom, 4 + k]]
            got = [float(r["w_x0"]), float(r["w_x1"]), float(r["bias"])]
            assert got == expected

    def test_diagnose(self, xor_run):
        tmp, _, out = xor_run
        assert main(["diagnose", "--checkpoint", str(out / "checkpoint.json"), "--out", str(tmp / "dg")]) == 0
        report = json.loads((tmp / "dg" / "fano.json").read_text())
        assert {"holds", "epsilon_hat", "delta_hat", "bound"} <= set(report)

    def test_missing_checkpoint(self, tmp_path):
        assert main(["eval", "--checkpoint", str(tmp_path / "nope.json"), "--out", str(tmp_path / "o")]) == 2


class TestSurvival:
    def test_train_eval_explain(self, tmp_path, survival_files):
        data, schema, cfg = survival_files
        out = tmp_path / "s"
        args = ["--config", cfg, "--data", data, "--schema", schema]
        assert main(["train", *args, "--out", str(out), "--quantiles", "0.25,0.5,0.75"]) == 0
        metrics = json.loads((out / "metrics.json").read_text())
        assert len(metrics["test"]["acc_at_quantiles"]) == 3
        assert 0 <= metrics["test"]["rae"] <= 1
        ck = str(out / "checkpoint.json")
        assert main(["eval", "--checkpoint", ck, "--data", data, "--out", str(tmp_path / "e")]) == 0
        assert main(["explain", "--checkpoint", ck, "--data", data, "--out", str(tmp_path / "x"),
                     "--rows", "0:3"]) == 0
        rows = read_csv(tmp_path / "x" / "explanations.csv")
        assert len(rows) == 3 * 7
        assert list(rows[0])[:2] == ["row", "interval"] and "bias" in rows[0]
        curves = read_csv(tmp_path / "x" / "survival_curves.csv")
        assert len(curves) == 3 and len(curves[0]) == 1 + 8
        for c in curves:
            s = [float(c[f"S_{t}"]) for t in range(8)]
            assert s[0] == 1.0 and all(b <= a + 1e-12 for a, b in zip(s, s[1:]))

    def test_diagnose_rejects_survival(self, tmp_path, survival_files):
        data, schema, cfg = survival_files
        out = tmp_path / "s"
        assert main(["train", "--config", cfg, "--data", data, "--schema", schema, "--out", str(out)]) == 0
        assert main(["diagnose", "--checkpoint", str(out / "checkpoint.json"), "--data", data,
                     "--out", str(tmp_path / "d")]) == 2

    def test_eval_column_mismatch(self, tmp_path, survival_files):
        data, schema, cfg = survival_files
        out = tmp_path / "s"
        assert main(["train", "--config", cfg, "--data", data, "--schema", schema, "--out", str(out)]) == 0
        other = tmp_path / "other.csv"
        other.write_text("age,t,dead\n50,3,1\n")
        schema2 = write_json(tmp_path / "s2.json", {"columns": {"age": "numeric", "t": "event-time",
                                                                "dead": "censor-flag"}})
        code = main(["eval", "--checkpoint", str(out / "checkpoint.json"), "--data", str(other),
                     "--schema", schema2, "--out", str(tmp_path / "e")])
        assert code == 3


class TestExperiment:
    def test_unknown_name(self, tmp_path, capsys):
        assert main(["experiment", "warp", "--out", str(tmp_path / "o")]) == 2
        assert "dict-size" in capsys.readouterr().err

    def test_dict_size_rows(self, tmp_path):
        cfg = write_json(tmp_path / "c.json", {"n_seeds": 2, "experiment": {"epochs": 1, "sizes": [1, 2]}})
        assert main(["experiment", "dict-size", "--config", cfg, "--out", str(tmp_path / "o")]) == 0
        rows = read_csv(tmp_path / "o" / "dict-size.csv")
        assert len(rows) == 2 * 2
        assert list(rows[0])[0] == "experiment"

    def test_unknown_override(self, tmp_path):
        cfg = write_json(tmp_path / "c.json", {"experiment": {"epochz": 1}})
        assert main(["experiment", "dict-size", "--config", cfg, "--out", str(tmp_path / "o")]) == 2


def test_parse_config_defaults():
    cfg = parse_config({})
    assert cfg.model.kind == "cen" and cfg.survival.horizon == 1092
    with pytest.raises(UsageError):
        parse_config({"test_fraction": 1.5})
