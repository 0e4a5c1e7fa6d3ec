"""Command-line pipeline: argument parsing, config overlays, and each
subcommand end-to-end on miniature inputs."""

import json

import pytest

from magnet.cli import _apply_config, _parse_seeds, _parse_shots, main
from magnet.errors import SchemaError
from magnet.experts import ExpertRegistry
from magnet.model import TrainConfig
from magnet.records import Dataset


# -- helpers -----------------------------------------------------------------------


def test_parse_seeds():
    assert _parse_seeds("5") == (0, 1, 2, 3, 4)
    assert _parse_seeds("0,3,7") == (0, 3, 7)
    assert _parse_seeds("1") == (0,)


def test_parse_shots():
    assert _parse_shots("10") == (10,)
    assert _parse_shots("1,3,5") == (1, 3, 5)


def test_apply_config_overlays_and_rejects_unknown(tmp_path):
    path = tmp_path / "train.json"
    path.write_text(
        json.dumps({"lr": 0.001, "max_epochs": 7, "patience": 5}), encoding="utf-8"
    )
    tc = _apply_config(TrainConfig(), path)
    assert tc.lr == 0.001 and tc.max_epochs == 7 and tc.patience == 5
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"learning_rate": 0.001}), encoding="utf-8")
    with pytest.raises(SchemaError, match="learning_rate"):
        _apply_config(TrainConfig(), bad)
    nonobj = tmp_path / "arr.json"
    nonobj.write_text("[1, 2]", encoding="utf-8")
    with pytest.raises(SchemaError, match="JSON object"):
        _apply_config(TrainConfig(), nonobj)


def test_version_flag(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["--version"])
    assert exc.value.code == 0
    assert "magnet" in capsys.readouterr().out


def test_errors_are_reported_not_raised(tmp_path, capsys):
    rc = main([
        "eval", "--data", str(tmp_path / "missing.jsonl"),
        "--registry", str(tmp_path / "missing.json"),
        "--out", str(tmp_path / "rows.csv"),
    ])
    assert rc == 1
    assert "error:" in capsys.readouterr().err


# -- pipeline on a miniature dataset --------------------------------------------------


@pytest.fixture(scope="module")
def cli_dir(tmp_path_factory):
    """datagen + fit-experts outputs shared by the command tests."""
    d = tmp_path_factory.mktemp("cli")
    sc_over = d / "scenario.json"
    sc_over.write_text(
        json.dumps({"widths": [65.0, 125.0], "speeds": [300.0, 800.0]}),
        encoding="utf-8",
    )
    rc = main([
        "datagen", "--preset", "mts2d", "--seed", "3",
        "--users", "2", "--reps", "3",
        "--config", str(sc_over), "--out", str(d / "tiny.jsonl"),
    ])
    assert rc == 0
    rc = main([
        "fit-experts",
        "--expert", f"s-f={d / 'tiny.jsonl'}@fixed",
        "--expert", f"s-h={d / 'tiny.jsonl'}@handheld",
        "--out", str(d / "registry.json"),
    ])
    assert rc == 0
    tc = d / "train.json"
    tc.write_text(json.dumps({"max_epochs": 2, "patience": 2}), encoding="utf-8")
    return d


def test_datagen_writes_loadable_deterministic_file(cli_dir, tmp_path, capsys):
    ds = Dataset.load(cli_dir / "tiny.jsonl")
    # users x gestures x 2x2 grid x reps
    assert len(ds) == 2 * 2 * 4 * 3
    assert ds.meta["scenario"]["widths"] == [65.0, 125.0]
    rc = main([
        "datagen", "--preset", "mts2d", "--seed", "3",
        "--users", "2", "--reps", "3",
        "--config", str(cli_dir / "scenario.json"),
        "--out", str(tmp_path / "again.jsonl"),
    ])
    assert rc == 0
    assert "wrote 48 trials" in capsys.readouterr().out
    again = Dataset.load(tmp_path / "again.jsonl")
    assert again.content_hash() == ds.content_hash()


def test_datagen_rejects_unknown_scenario_field(tmp_path, capsys):
    bad = tmp_path / "sc.json"
    bad.write_text(json.dumps({"n_target": 5}), encoding="utf-8")
    rc = main([
        "datagen", "--preset", "mts2d", "--config", str(bad),
        "--out", str(tmp_path / "x.jsonl"),
    ])
    assert rc == 1
    assert "n_target" in capsys.readouterr().err


def test_fit_experts_output_and_bad_spec(cli_dir, tmp_path, capsys):
    reg = ExpertRegistry.load(cli_dir / "registry.json")
    assert reg.ids() == ["s-f", "s-h"]
    assert reg.dim == 2
    rc = main([
        "fit-experts", "--expert", "nodataset",
        "--out", str(tmp_path / "r.json"),
    ])
    assert rc == 1
    assert "ID=DATASET" in capsys.readouterr().err


def test_train_command_writes_report_and_checkpoints(cli_dir, capsys):
    out = cli_dir / "train-out"
    rc = main([
        "train", "--data", str(cli_dir / "tiny.jsonl"),
        "--registry", str(cli_dir / "registry.json"),
        "--shots", "1", "--seeds", "1",
        "--test-count", "4", "--val-count", "4",
        "--config", str(cli_dir / "train.json"),
        "--quiet", "--out", str(out),
    ])
    assert rc == 0
    assert "magnet" in capsys.readouterr().out
    assert (out / "rows.csv").exists()
    assert (out / "rows-agg.csv").exists()
    assert (out / "rows-meta.json").exists()
    assert (out / "magnet-shots1-seed0.ckpt").exists()
    meta = json.loads((out / "rows-meta.json").read_text(encoding="utf-8"))
    assert meta["train"]["max_epochs"] == 2


def test_eval_baselines_only(cli_dir, capsys):
    out = cli_dir / "eval-baselines.csv"
    rc = main([
        "eval", "--data", str(cli_dir / "tiny.jsonl"),
        "--registry", str(cli_dir / "registry.json"),
        "--baselines", "only",
        "--test-count", "4", "--val-count", "4",
        "--quiet", "--out", str(out),
    ])
    assert rc == 0
    table = capsys.readouterr().out
    for method in ("border", "distance", "expert"):
        assert method in table
    assert out.exists()


def test_eval_checkpoint_row_uses_checkpoint_meta(cli_dir, capsys):
    out = cli_dir / "eval-model.csv"
    rc = main([
        "eval", "--data", str(cli_dir / "tiny.jsonl"),
        "--registry", str(cli_dir / "registry.json"),
        "--model", str(cli_dir / "train-out" / "magnet-shots1-seed0.ckpt"),
        "--baselines", "none",
        "--test-count", "4", "--val-count", "4",
        "--quiet", "--out", str(out),
    ])
    assert rc == 0
    assert "magnet" in capsys.readouterr().out
    rows = (out.read_text(encoding="utf-8")).splitlines()
    assert rows[1].startswith("magnet,1,0,")
    meta = json.loads(
        (cli_dir / "eval-model-meta.json").read_text(encoding="utf-8")
    )
    assert meta["checkpoints"][0]["dataset_hash"]


def test_eval_needs_model_or_baselines(cli_dir, capsys):
    rc = main([
        "eval", "--data", str(cli_dir / "tiny.jsonl"),
        "--registry", str(cli_dir / "registry.json"),
        "--baselines", "none",
        "--out", str(cli_dir / "x.csv"),
    ])
    assert rc == 1
    assert "needs --model" in capsys.readouterr().err


def test_ablate_command(cli_dir, capsys):
    out = cli_dir / "ablate.csv"
    rc = main([
        "ablate", "--data", str(cli_dir / "tiny.jsonl"),
        "--registry", str(cli_dir / "registry.json"),
        "--drop", "all", "--shots", "1", "--seeds", "1",
        "--test-count", "4", "--val-count", "4",
        "--config", str(cli_dir / "train.json"),
        "--quiet", "--out", str(out),
    ])
    assert rc == 0
    assert "magnet w/o all" in capsys.readouterr().out
    assert out.exists()


def test_report_merges_row_files(cli_dir, tmp_path, capsys):
    merged = tmp_path / "merged.csv"
    rc = main([
        "report", str(cli_dir / "eval-baselines.csv"),
        str(cli_dir / "train-out" / "rows.csv"),
        "--out", str(merged),
    ])
    assert rc == 0
    table = capsys.readouterr().out
    assert "border" in table and "magnet" in table
    assert merged.exists()
    meta = json.loads((tmp_path / "merged-meta.json").read_text(encoding="utf-8"))
    assert len(meta["sources"]) == 2


def test_serve_resolves_host_port(cli_dir, monkeypatch):
    calls = {}

    def fake_serve(checkpoint, registry, host, port):
        calls["args"] = (str(checkpoint), str(registry), host, port)

    monkeypatch.setattr("magnet.cli.serve", fake_serve)
    ckpt = cli_dir / "train-out" / "magnet-shots1-seed0.ckpt"
    rc = main([
        "serve", "--checkpoint", str(ckpt),
        "--registry", str(cli_dir / "registry.json"),
        "--host", "0.0.0.0", "--port", "9001",
    ])
    assert rc == 0
    assert calls["args"][2:] == ("0.0.0.0", 9001)
    monkeypatch.setenv("MAGNET_HOST", "10.0.0.5")
    monkeypatch.setenv("MAGNET_PORT", "7777")
    rc = main([
        "serve", "--checkpoint", str(ckpt),
        "--registry", str(cli_dir / "registry.json"),
    ])
    assert rc == 0
    assert calls["args"][2:] == ("10.0.0.5", 7777)
