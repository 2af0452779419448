import json

import numpy as np
import pytest

from metatl.cli import main
from metatl.model import init_params
from metatl.snapshot import load_params, save_params


def run(capsys, *argv):
    code = main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


def gen_args(out, train_users=30, test_users=8, items=20, noise=0.0,
             seed=7):
    return ["gen", "--out", str(out), "--gen-items", str(items),
            "--gen-train-users", str(train_users),
            "--gen-test-users", str(test_users),
            "--gen-seq-min", "6", "--gen-seq-max", "10",
            "--gen-noise", str(noise), "--seed", str(seed),
            "--min-item-count", "1"]


@pytest.fixture
def dataset(tmp_path, capsys):
    path = tmp_path / "data.tsv"
    code, _, _ = run(capsys, *gen_args(path))
    assert code == 0
    return path


def train_args(data, ckpt, **over):
    base = {"epochs": 2, "tasks_per_epoch": 8, "meta_batch": 4, "dim": 8,
            "k": 3, "seed": 1, "min_item_count": 1, "workers": 1}
    base.update(over)
    argv = ["train", "--data", str(data), "--checkpoint", str(ckpt)]
    for key, val in base.items():
        argv += [f"--{key.replace('_', '-')}", str(val)]
    return argv


def test_missing_dataset_exits_2(tmp_path, capsys):
    ckpt = tmp_path / "model.bin"
    code, _, err = run(capsys, "train", "--data", str(tmp_path / "nope.tsv"),
                       "--checkpoint", str(ckpt))
    assert code == 2
    assert "not found" in err
    assert not ckpt.exists()


def test_malformed_dataset_exits_2(tmp_path, capsys):
    bad = tmp_path / "bad.tsv"
    bad.write_text("u1,i1,5\n", encoding="utf-8")
    code, _, err = run(capsys, "train", "--data", str(bad), "--checkpoint",
                       str(tmp_path / "m.bin"))
    assert code == 2


def test_zero_epochs_checkpoint_equals_init(dataset, tmp_path, capsys):
    ckpt = tmp_path / "init.bin"
    code, out, _ = run(capsys, *train_args(dataset, ckpt, epochs=0, seed=3))
    assert code == 0
    assert out == ""  # no metrics lines
    loaded = load_params(ckpt)
    want = init_params(loaded.n_items, loaded.dim, np.random.default_rng(3))
    assert np.array_equal(loaded.embeddings, want.embeddings)
    assert np.array_equal(loaded.transform, want.transform)


def test_same_seed_byte_identical_checkpoints(dataset, tmp_path, capsys):
    a, b = tmp_path / "a.bin", tmp_path / "b.bin"
    assert run(capsys, *train_args(dataset, a))[0] == 0
    assert run(capsys, *train_args(dataset, b))[0] == 0
    assert a.read_bytes() == b.read_bytes()


def test_train_metrics_are_json_lines(dataset, tmp_path, capsys):
    ckpt = tmp_path / "m.bin"
    code, out, err = run(capsys, *train_args(dataset, ckpt))
    assert code == 0
    lines = [json.loads(line) for line in out.splitlines()]
    assert len(lines) == 4  # 2 epochs x ceil(8/4) steps
    for row in lines:
        assert {"step", "epoch", "support_loss", "query_loss",
                "wall_time"} <= set(row)
    assert lines[-1]["step"] == 4
    assert "checkpoint" in err


def test_eval_json_schema(dataset, tmp_path, capsys):
    ckpt = tmp_path / "m.bin"
    run(capsys, *train_args(dataset, ckpt))
    code, out, _ = run(capsys, "eval", "--data", str(dataset),
                       "--checkpoint", str(ckpt), "--k", "3",
                       "--eval-negatives", "5", "--min-item-count", "1",
                       "--seed", "1")
    assert code == 0
    payload = json.loads(out)
    assert set(payload) >= {"mrr", "hit_at_1", "users_evaluated",
                            "users_skipped", "k"}
    assert payload["users_evaluated"] > 0
    assert payload["k"] == 3


def test_eval_reproducible_and_csv(dataset, tmp_path, capsys):
    ckpt = tmp_path / "m.bin"
    run(capsys, *train_args(dataset, ckpt))
    csv = tmp_path / "per_user.csv"
    args = ["eval", "--data", str(dataset), "--checkpoint", str(ckpt),
            "--k", "3", "--eval-negatives", "5", "--min-item-count", "1",
            "--seed", "1"]
    _, out1, _ = run(capsys, *args, "--per-user-csv", str(csv))
    _, out2, _ = run(capsys, *args)
    assert json.loads(out1) == json.loads(out2)
    rows = csv.read_text().splitlines()
    assert rows[0] == "user,rank,reciprocal_rank"
    assert len(rows) == 1 + json.loads(out1)["users_evaluated"]


def test_eval_k_too_large_warns(dataset, tmp_path, capsys):
    ckpt = tmp_path / "m.bin"
    run(capsys, *train_args(dataset, ckpt))
    code, out, _ = run(capsys, "eval", "--data", str(dataset),
                       "--checkpoint", str(ckpt), "--k", "50",
                       "--min-item-count", "1", "--seed", "1")
    assert code == 0
    payload = json.loads(out)
    assert payload["users_evaluated"] == 0
    assert "warning" in payload


def test_eval_minus_mode_matches_zero_inner_steps(dataset, tmp_path, capsys):
    ckpt = tmp_path / "m.bin"
    run(capsys, *train_args(dataset, ckpt))
    base = ["--data", str(dataset), "--checkpoint", str(ckpt), "--k", "3",
            "--eval-negatives", "5", "--min-item-count", "1", "--seed", "1"]
    _, minus, _ = run(capsys, "eval", *base, "--mode", "metatl-minus",
                      "--inner-steps", "4")
    _, zero, _ = run(capsys, "eval", *base, "--inner-steps", "0")
    assert json.loads(minus) == json.loads(zero)


def test_eval_checkpoint_vocabulary_mismatch_exits_3(dataset, tmp_path,
                                                     capsys):
    ckpt = tmp_path / "wrong.bin"
    save_params(init_params(3, 4, np.random.default_rng(0)), ckpt)
    code, _, err = run(capsys, "eval", "--data", str(dataset),
                       "--checkpoint", str(ckpt), "--min-item-count", "1")
    assert code == 3
    assert "vocabulary" in err


def test_eval_corrupt_checkpoint_exits_3(dataset, tmp_path, capsys):
    bad = tmp_path / "bad.bin"
    bad.write_bytes(b"NOTMAGIC" + b"\x00" * 48)
    code, _, _ = run(capsys, "eval", "--data", str(dataset),
                     "--checkpoint", str(bad), "--min-item-count", "1")
    assert code == 3


def test_gen_deterministic(tmp_path, capsys):
    a, b = tmp_path / "a.tsv", tmp_path / "b.tsv"
    assert run(capsys, *gen_args(a))[0] == 0
    assert run(capsys, *gen_args(b))[0] == 0
    assert a.read_bytes() == b.read_bytes()


def test_gen_rejects_single_item(tmp_path, capsys):
    code, _, err = run(capsys, *gen_args(tmp_path / "x.tsv", items=1))
    assert code == 2
    assert "n_items" in err


def test_checkgrad_line(capsys):
    code, out, _ = run(capsys, "checkgrad", "--dim", "4", "--trials", "25",
                       "--seed", "5")
    assert code == 0
    assert out.startswith("pass")
    assert "relative error" in out


def test_config_file_and_flag_override(tmp_path, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# config\ndim=6\ntrials=10\nseed=2\n", encoding="utf-8")
    code, out, _ = run(capsys, "checkgrad", "--config", str(cfg),
                       "--trials", "5")
    assert code == 0
    assert "5 trials" in out  # flag wins over file


def test_config_file_bad_key(tmp_path, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("no_such_key=1\n", encoding="utf-8")
    code, _, err = run(capsys, "checkgrad", "--config", str(cfg))
    assert code == 2
    assert "unknown key" in err


def test_invalid_hyperparameter_exits_2(dataset, tmp_path, capsys):
    code, _, err = run(capsys, "train", "--data", str(dataset),
                       "--checkpoint", str(tmp_path / "m.bin"), "--k", "1")
    assert code == 2
    assert "k must be" in err
