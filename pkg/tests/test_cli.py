import json
from pathlib import Path

import numpy as np

import datlab.cli as cli
import datlab.training as training
from datlab import tasks
from datlab.checkpoint import checkpoint_hash, load_checkpoint
from datlab.cli import RunConfig, main, matrix_cells
from datlab.evaluation import DEFAULT_GRID
from datlab.models import ModelSpec, build
from datlab.rng import Rng


def run_cli(*argv):
    return main(list(argv))


def test_generate_and_validate(tmp_path):
    out = tmp_path / "corpus.jsonl"
    assert run_cli("generate", "--variant", "combined", "--n", "6",
                   "--count", "40", "--seed", "3", "--out", str(out)) == 0
    assert run_cli("validate", str(out)) == 0
    assert len(out.read_text().strip().split("\n")) == 40


def test_generate_zero_count_empty_file(tmp_path):
    out = tmp_path / "empty.jsonl"
    assert run_cli("generate", "--count", "0", "--out", str(out)) == 0
    assert out.read_text() == ""


def test_generate_deterministic_bytes(tmp_path):
    a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    for path in (a, b):
        run_cli("generate", "--n", "4", "--count", "25", "--seed", "11",
                "--out", str(path))
    assert a.read_bytes() == b.read_bytes()


def test_validate_bad_file_exit_codes(tmp_path):
    missing = tmp_path / "nope.jsonl"
    assert run_cli("validate", str(missing)) == 3  # i/o failure
    bad = tmp_path / "bad.jsonl"
    s = tasks.generate("combined", 3, Rng(0))
    s.recall_answer = (s.recall_answer + 1) % 10
    bad.write_text(tasks.sample_to_json(s) + "\n")
    assert run_cli("validate", str(bad)) == 1


def test_usage_errors():
    assert run_cli("train", "--arch", "gru") == 1
    assert run_cli() == 1


def _tiny_config(tmp_path, **kw):
    cfg = RunConfig(arch=kw.pop("arch", "lstm_o_attn"), variant="combined",
                    preset=kw.pop("preset", "dat"), scale="desk", seed=1,
                    out=str(tmp_path / "run"),
                    model=dict(d_model=16, n_heads=2, n_blocks=2),
                    plan=dict(epoch_samples=128, l_train=3,
                              phases=kw.pop("phases", [
                                  dict(epochs=1, lr=1e-3, attention_active=False),
                                  dict(epochs=1, lr=1e-3, attention_active=True),
                              ])),
                    **kw)
    path = tmp_path / "config.json"
    cfg.save(path)
    return cfg, path


def test_train_from_config_and_artifacts(tmp_path):
    cfg, path = _tiny_config(tmp_path)
    assert run_cli("train", "--config", str(path), "--quiet") == 0
    run_dir = Path(cfg.out)
    for name in ("init.ckpt", "phase1.ckpt", "phase2.ckpt", "final.ckpt",
                 "epochs.jsonl", "run.json", "config.json", "loss.png"):
        assert (run_dir / name).exists(), name
    saved = json.loads((run_dir / "config.json").read_text())
    assert saved["arch"] == "lstm_o_attn"


def test_train_rerun_identical_checkpoint(tmp_path):
    cfg, path = _tiny_config(tmp_path)
    run_cli("train", "--config", str(path), "--quiet")
    h1 = checkpoint_hash(Path(cfg.out) / "final.ckpt")
    run_cli("train", "--config", str(path), "--quiet")
    assert checkpoint_hash(Path(cfg.out) / "final.ckpt") == h1


def test_train_dat_phase1_checkpoint_untouched_attention(tmp_path):
    from datlab.checkpoint import load_checkpoint
    from datlab.models import ModelSpec, build
    cfg, path = _tiny_config(tmp_path)
    run_cli("train", "--config", str(path), "--quiet")
    run_dir = Path(cfg.out)
    _, at_init = load_checkpoint(run_dir / "init.ckpt")
    _, at_p1 = load_checkpoint(run_dir / "phase1.ckpt")
    model = build(ModelSpec.from_dict(json.loads((run_dir / "run.json").read_text())
                                      ["config"]["model_spec"]),
                  __import__("datlab.rng", fromlist=["Rng"]).Rng(0))
    for name in model.attention_parameter_names():
        assert np.array_equal(at_init[name], at_p1[name]), name


def test_eval_command_writes_reports(tmp_path):
    cfg, path = _tiny_config(tmp_path)
    run_cli("train", "--config", str(path), "--quiet")
    out = tmp_path / "eval"
    code = run_cli("eval", "--checkpoint", str(Path(cfg.out) / "final.ckpt"),
                   "--variant", "combined", "--grid", "2,3", "--samples", "32",
                   "--seed", "5", "--out", str(out))
    assert code == 0
    assert (out / "report.csv").exists()
    assert (out / "report.md").exists()
    assert (out / "report.png").exists()
    text = (out / "report.csv").read_text()
    assert text.splitlines()[0].startswith("arch,variant,dat,n,")
    assert len(text.strip().splitlines()) == 3


def test_eval_same_seed_identical_csv(tmp_path):
    cfg, path = _tiny_config(tmp_path)
    run_cli("train", "--config", str(path), "--quiet")
    ckpt = str(Path(cfg.out) / "final.ckpt")
    outs = []
    for name in ("e1", "e2"):
        out = tmp_path / name
        run_cli("eval", "--checkpoint", ckpt, "--grid", "2,4", "--samples", "32",
                "--seed", "9", "--out", str(out))
        outs.append((out / "report.csv").read_bytes())
    assert outs[0] == outs[1]


def test_eval_missing_checkpoint_is_io_error(tmp_path):
    assert run_cli("eval", "--checkpoint", str(tmp_path / "none.ckpt"),
                   "--out", str(tmp_path / "o")) == 3


def test_default_grid_flag():
    assert DEFAULT_GRID == (5, 10, 15, 20, 25, 30, 35, 40, 45, 50, 75, 100)


def test_matrix_cells_row_counts():
    combined = matrix_cells("combined")
    assert len(combined) == 12  # 7 base rows + 5 hybrid DAT rows
    assert combined.count(("hybrid_block", True)) == 1
    assert ("transformer", True) not in combined
    assert ("lstm", True) not in combined
    assert len(matrix_cells("recall_only")) == 7
    assert len(matrix_cells("modulo_only")) == 7


def test_matrix_tiny_end_to_end(tmp_path):
    # micro matrix on one variant: wiring, reports, and figure output
    orig_rows, orig_dat = cli.MATRIX_ROW_ORDER, cli.DAT_ARCHS
    cli.MATRIX_ROW_ORDER, cli.DAT_ARCHS = ("lstm", "lstm_o_attn"), ("lstm_o_attn",)
    training.SCALES["test"] = {"epoch_samples": 128, "l_train": 3,
                               "e2e": [(1, 1e-3)], "dat_frozen": (1, 1e-3)}
    try:
        code = run_cli("matrix", "--variant", "combined", "--scale", "test",
                       "--grid", "2,3", "--samples", "16", "--seed", "0",
                       "--out", str(tmp_path), "--quiet")
    finally:
        cli.MATRIX_ROW_ORDER, cli.DAT_ARCHS = orig_rows, orig_dat
        training.SCALES.pop("test")
    assert code == 0
    assert (tmp_path / "combined.csv").exists()
    assert (tmp_path / "combined.md").exists()
    assert (tmp_path / "combined.png").exists()
    md = (tmp_path / "combined.md").read_text()
    assert "LSTM" in md and "(+ DAT)" in md


def test_runconfig_roundtrip(tmp_path):
    cfg = RunConfig(arch="sandwich", seed=7, plan={"l_train": 5})
    path = tmp_path / "c.json"
    cfg.save(path)
    assert RunConfig.load(path) == cfg
