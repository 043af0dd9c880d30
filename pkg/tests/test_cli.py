import pytest

from leanresnet import cli
from leanresnet.network import load_checkpoint


def run(argv):
    lines = []
    cfg = cli.parse_config(argv)
    code = cli.run_command(cfg, lines.append)
    return code, "\n".join(lines)


def test_defaults():
    cfg = cli.parse_config(["train", "--dataset", "cifar10", "--config", "A"])
    assert (cfg.epochs, cfg.batch, cfg.lr0, cfg.decay, cfg.decay_every) == (300, 100, 0.1, 0.5, 75)
    assert cfg.augment is True and cfg.seed == 0 and cfg.threads == 1


def test_synthetic_defaults():
    cfg = cli.parse_config(["train", "--dataset", "synthetic"])
    assert cfg.config == "custom" and cfg.widths == (8, 16, 32) and cfg.steps == (1, 1, 1)
    assert cfg.augment is False


def test_flags_override_file(tmp_path):
    f = tmp_path / "run.cfg"
    f.write_text("# comment\ndataset = synthetic\nepochs = 7\nlr0 = 0.01  # inline\nwidths = 4,8\nsteps = 1 1\n")
    cfg = cli.parse_config(["train", "-c", str(f), "--epochs", "3"])
    assert cfg.epochs == 3 and cfg.lr0 == 0.01 and cfg.widths == (4, 8) and cfg.steps == (1, 1)


def test_bad_conv_in_file(tmp_path, capsys):
    f = tmp_path / "run.cfg"
    f.write_text("conv = bogus\n")
    assert cli.main(["params", "--config", "A", "--config-file", str(f)]) == 2
    assert "conv" in capsys.readouterr().err


@pytest.mark.parametrize("argv,key", [
    (["train"], "dataset"),
    (["train", "--dataset", "cifar10"], "config"),
    (["eval", "--dataset", "synthetic"], "checkpoint"),
    (["train", "--dataset", "synthetic", "--epochs", "0"], "epochs"),
    (["train", "--dataset", "synthetic", "--epochs", "x"], "epochs"),
    (["train", "--dataset", "synthetic", "--widths", "4,8", "--steps", "1", "--config", "custom"], "steps"),
    (["params", "--config", "Z"], "config"),
])
def test_config_errors(argv, key):
    with pytest.raises(cli.ConfigError) as exc:
        cli.parse_config(argv)
    assert exc.value.key == key


def test_malformed_file_line(tmp_path):
    f = tmp_path / "run.cfg"
    f.write_text("epochs 5\n")
    with pytest.raises(cli.ConfigError):
        cli.read_config_file(f)


def test_usage_error_exit_code():
    assert cli.main(["frobnicate"]) == 2


def test_params_command():
    code, text = run(["params", "--config", "A"])
    assert code == 0
    counts = {}
    for line in text.splitlines()[1:]:
        kind = line.split()[1].rstrip(":")
        counts[kind] = int(line.split("params=")[1].split()[0])
    assert abs(counts["lean"] - 0.5e6) <= 0.075e6
    assert abs(counts["dense"] - 4.3e6) <= 0.15 * 4.3e6


def test_header_line():
    _, text = run(["params", "--config", "B"])
    assert text.splitlines()[0].startswith("seed=0 threads=1 backend=")


def test_train_then_eval(tmp_path):
    ckpt = tmp_path / "net.lrn"
    metrics = tmp_path / "m.csv"
    code, text = run(["train", "--dataset", "synthetic", "--epochs", "3", "--n-train", "200", "--n-val", "100",
                      "--hw", "8", "--widths", "4,8", "--steps", "1,1", "--lr0", "0.01", "--batch", "50",
                      "--checkpoint", str(ckpt), "--metrics", str(metrics)])
    assert code == 0 and ckpt.exists()
    assert len(metrics.read_text().splitlines()) == 4
    net = load_checkpoint(ckpt)
    assert net.config.widths == (4, 8)
    code, text = run(["eval", "--dataset", "synthetic", "--checkpoint", str(ckpt), "--n-val", "100",
                      "--hw", "8", "--batch", "50"])
    assert code == 0
    acc = float(text.rsplit("accuracy=", 1)[1])
    assert 0.0 <= acc <= 1.0


def test_eval_missing_checkpoint(tmp_path, capsys):
    code = cli.main(["eval", "--dataset", "synthetic", "--checkpoint", str(tmp_path / "none.lrn")])
    assert code == 1
    assert "none.lrn" in capsys.readouterr().err


def test_missing_dataset_directory(tmp_path, capsys):
    code = cli.main(["train", "--dataset", "cifar10", "--config", "A", "--data-dir", str(tmp_path), "--epochs", "1"])
    assert code == 1
    assert "data_batch_1.bin" in capsys.readouterr().err


def test_bench_command_small(tmp_path):
    out = tmp_path / "bench.csv"
    code, text = run(["bench", "--bench-scale", "32", "--bench-batch", "2", "--bench-reps", "3",
                      "--bench-warmup", "0", "--output", str(out)])
    assert code == 0
    rows = out.read_text().splitlines()
    assert rows[0] == "channels,map,variant,mean_s,stddev_s,ratio_to_dense3x3"
    assert len(rows) == 1 + 6 * 3


def test_verify_command():
    code, text = run(["verify"])
    assert code == 0
    assert "FAIL" not in text and text.count("PASS") == 10


def test_backend_env_selects_fallback():
    import os
    import subprocess
    import sys

    env = dict(os.environ, LEANRESNET_BACKEND="python")
    out = subprocess.run([sys.executable, "-c", "from leanresnet import conv; print(conv.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True).stdout
    assert out.strip() == "python"
