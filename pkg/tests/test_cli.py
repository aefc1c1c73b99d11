import yaml
from click.testing import CliRunner

from segal.cli import main


def write_tiny_config(path):
    cfg = dict(
        n_images=24,
        image_height=32,
        image_width=32,
        epochs=1,
        batch_size=8,
        base_channels=4,
        attention_height=8,
        attention_width=8,
        initial_fraction=0.25,
        budget_fraction=0.15,
        rounds=1,
        test_fraction=0.2,
        strategy="entropy",
    )
    path.write_text(yaml.safe_dump(cfg))
    return path


def test_gen_data(tmp_path):
    runner = CliRunner()
    result = runner.invoke(main, ["gen-data", "--out", str(tmp_path / "ds"),
                                  "--n", "3", "--height", "32", "--width", "32"])
    assert result.exit_code == 0, result.output
    assert len(list((tmp_path / "ds" / "images").glob("*.png"))) == 3
    assert len(list((tmp_path / "ds" / "labels").glob("*.png"))) == 3


def test_run_score_plot_pipeline(tmp_path):
    runner = CliRunner()
    cfg_path = write_tiny_config(tmp_path / "cfg.yaml")
    out = tmp_path / "run"

    result = runner.invoke(main, ["run", "--config", str(cfg_path),
                                  "--seed", "0", "--out", str(out)])
    assert result.exit_code == 0, result.output
    ledger = out / "ledger_entropy_seed0.jsonl"
    assert ledger.exists()
    assert (out / "scores_round_1.tsv").read_text().startswith("id\tstrategy\tscore")

    result = runner.invoke(main, ["score", "--config", str(cfg_path),
                                  "--checkpoint", str(out / "checkpoint_round_1.pt"),
                                  "--strategy", "ds", "--seed", "0",
                                  "--out", str(tmp_path / "scores.tsv")])
    assert result.exit_code == 0, result.output
    lines = (tmp_path / "scores.tsv").read_text().splitlines()
    assert len(lines) > 1

    result = runner.invoke(main, ["plot", "--ledgers", str(ledger),
                                  "--out-dir", str(tmp_path / "plots")])
    assert result.exit_code == 0, result.output
    assert (tmp_path / "plots" / "growth_curve.png").exists()
    assert (tmp_path / "plots" / "class_iou_table.md").exists()
