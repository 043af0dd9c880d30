"""``leanresnet`` command line: train, eval, bench, verify, params.

Settings come from an optional ``key = value`` file (``--config-file``) and
from flags; flags win. Exit codes: 0 success, 1 failed check or runtime
error, 2 usage error.
"""
from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from leanresnet import conv

log = logging.getLogger("leanresnet")

COMMANDS = ("train", "eval", "bench", "verify", "params")
DATASETS = ("cifar10", "cifar100", "stl10", "synthetic")
NETWORK_KINDS = ("A", "B", "C", "D", "E", "F", "custom")
SYNTHETIC_NET = ((8, 16, 32), (1, 1, 1))


class ConfigError(ValueError):
    def __init__(self, key, message):
        super().__init__(f"{key}: {message}")
        self.key = key


@dataclass
class RunConfig:
    command: str = "train"
    dataset: str | None = None
    data_dir: str | None = None
    config: str | None = None
    conv: str = "lean"
    widths: tuple | None = None
    steps: tuple | None = None
    early_dense_blocks: int = 0
    epochs: int = 300
    batch: int = 100
    lr0: float = 0.1
    decay: float = 0.5
    decay_every: int = 75
    augment: bool | None = None
    subset: int = 0
    seed: int = 0
    threads: int = 1
    checkpoint: str | None = None
    checkpoint_dir: str | None = None
    checkpoint_every: int = 0
    metrics: str | None = None
    output: str | None = None
    n_train: int = 1000
    n_val: int = 500
    hw: int = 16
    bench_batch: int = 64
    bench_scale: int = 1
    bench_reps: int = 10
    bench_warmup: int = 2
    compare_backends: bool = False


def _bool(text):
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _int_list(text):
    return tuple(int(v) for v in str(text).replace(",", " ").replace("-", " ").split())


_CHOICES = {"command": COMMANDS, "dataset": DATASETS, "config": NETWORK_KINDS, "conv": ("lean", "dense")}
_PARSERS = {"widths": _int_list, "steps": _int_list, "augment": _bool, "compare_backends": _bool}


def _coerce(key, raw):
    f = {f.name: f for f in fields(RunConfig)}.get(key)
    if f is None:
        raise ConfigError(key, "unknown key")
    try:
        if key in _PARSERS:
            value = _PARSERS[key](raw)
        elif f.type in ("int",):
            value = int(raw)
        elif f.type in ("float",):
            value = float(raw)
        else:
            value = str(raw).strip()
    except ValueError as exc:
        raise ConfigError(key, f"malformed value {raw!r} ({exc})") from None
    if key == "config":
        value = value.upper() if value.lower() != "custom" else "custom"
    if key in _CHOICES and value not in _CHOICES[key]:
        raise ConfigError(key, f"{value!r} is not one of {', '.join(_CHOICES[key])}")
    return value


def read_config_file(path) -> dict:
    out = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}", f"expected 'key = value', got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


def _argparser():
    p = argparse.ArgumentParser(prog="leanresnet", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config-file", "-c", help="key = value settings file")
    for f in fields(RunConfig):
        if f.name == "command":
            continue
        p.add_argument("--" + f.name.replace("_", "-"), dest=f.name, default=None, metavar="VALUE")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def parse_config(argv=None, file=None) -> RunConfig:
    """Resolve defaults <- config file <- flags into a validated RunConfig."""
    args = _argparser().parse_args(argv)
    raw = {}
    file = file or args.config_file
    if file:
        raw.update(read_config_file(file))
    raw.update({k: v for k, v in vars(args).items()
                if v is not None and k not in ("config_file", "verbose", "command")})
    raw["command"] = args.command
    values = {k: _coerce(k, v) for k, v in raw.items()}
    cfg = RunConfig(**values)
    validate(cfg)
    return cfg


def validate(cfg: RunConfig) -> None:
    if cfg.command in ("train", "eval") and cfg.dataset is None:
        raise ConfigError("dataset", f"required for {cfg.command}")
    if cfg.command == "train" and cfg.config is None:
        if cfg.dataset == "synthetic":
            cfg.config = "custom"
        else:
            raise ConfigError("config", "required for train")
    if cfg.command == "params" and cfg.config is None:
        raise ConfigError("config", "required for params")
    if cfg.config == "custom" and cfg.widths is None:
        if cfg.dataset == "synthetic":
            cfg.widths, cfg.steps = SYNTHETIC_NET
        else:
            raise ConfigError("widths", "required for a custom network")
    if cfg.config == "custom" and (cfg.steps is None or len(cfg.steps) != len(cfg.widths)):
        raise ConfigError("steps", "must list one step count per width")
    if cfg.command == "eval" and not cfg.checkpoint:
        raise ConfigError("checkpoint", "required for eval")
    for key in ("epochs", "batch", "decay_every", "threads", "bench_batch", "bench_scale", "hw"):
        if getattr(cfg, key) < 1:
            raise ConfigError(key, "must be positive")
    if cfg.bench_reps < 3:
        raise ConfigError("bench_reps", "must be at least 3")
    if cfg.augment is None:
        # flips and crops would move the synthetic task's class-defining cell
        cfg.augment = cfg.dataset != "synthetic"


# ---------------------------------------------------------------------------
# commands


def network_config(cfg: RunConfig, num_classes: int, conv_kind=None):
    from leanresnet.network import NetworkConfig

    kind = conv_kind or cfg.conv
    if cfg.config == "custom":
        return NetworkConfig(cfg.widths, cfg.steps, kind, num_classes,
                             early_dense_blocks=cfg.early_dense_blocks)
    return NetworkConfig.preset(cfg.config, kind, num_classes, early_dense_blocks=cfg.early_dense_blocks)


def load_data(cfg: RunConfig, seeds):
    from leanresnet import data

    if cfg.dataset == "synthetic":
        return (data.synthetic_quadrants(cfg.n_train, cfg.hw, seeds[0]),
                data.synthetic_quadrants(cfg.n_val, cfg.hw, seeds[1]))
    root = data.dataset_root(cfg.dataset, cfg.data_dir) if cfg.data_dir is None else Path(cfg.data_dir)
    train, test = data.LOADERS[cfg.dataset](root)
    if cfg.subset:
        train = train.subset(slice(0, cfg.subset))
    return train, test


def cmd_train(cfg: RunConfig, out) -> int:
    from leanresnet.network import build_network, count_params, save_checkpoint
    from leanresnet.optim import TrainPlan, fit

    seeds = np.random.SeedSequence(cfg.seed).spawn(4)
    train, val = load_data(cfg, seeds[:2])
    net = build_network(network_config(cfg, train.class_count), seeds[2])
    out(f"network {net.config.kind} {net.config.conv_kind}: {count_params(net)} parameters")
    plan = TrainPlan(cfg.epochs, cfg.batch, cfg.lr0, cfg.decay, cfg.decay_every, cfg.seed, cfg.augment)
    rng = np.random.default_rng(seeds[3])
    if cfg.metrics:
        with open(cfg.metrics, "w", newline="") as fh:
            rows = fit(net, train, val, plan, fh, cfg.checkpoint_dir, cfg.checkpoint_every, rng)
    else:
        rows = fit(net, train, val, plan, None, cfg.checkpoint_dir, cfg.checkpoint_every, rng)
    last = rows[-1]
    out(f"final epoch {last['epoch']}: train_loss={last['train_loss']:.4f} train_acc={last['train_acc']:.4f} "
        f"val_loss={last['val_loss']:.4f} val_acc={last['val_acc']:.4f}")
    if cfg.checkpoint:
        save_checkpoint(cfg.checkpoint, net)
        out(f"checkpoint written to {cfg.checkpoint}")
    return 0


def cmd_eval(cfg: RunConfig, out) -> int:
    from leanresnet.network import load_checkpoint
    from leanresnet.optim import evaluate

    net = load_checkpoint(cfg.checkpoint)
    seeds = np.random.SeedSequence(cfg.seed).spawn(4)
    _, test = load_data(cfg, seeds[:2])
    loss, acc = evaluate(net, test, cfg.batch)
    out(f"loss={loss:.6f} accuracy={acc:.6f}")
    return 0


def cmd_bench(cfg: RunConfig, out) -> int:
    from leanresnet import bench

    spec = bench.BenchSpec.scaled(cfg.bench_scale, batch=cfg.bench_batch, repetitions=cfg.bench_reps,
                                  warmup=cfg.bench_warmup, threads=cfg.threads, seed=cfg.seed,
                                  compare_backends=cfg.compare_backends)
    result = bench.run_pyramid(spec)
    if cfg.output:
        with open(cfg.output, "w", newline="") as fh:
            bench.write_csv(result, fh)
    else:
        import io

        buf = io.StringIO()
        bench.write_csv(result, buf)
        out(buf.getvalue().rstrip("\n"))
    out(bench.format_table(result))
    return 0


def cmd_verify(cfg: RunConfig, out) -> int:
    from leanresnet import verify

    return 0 if verify.run_all(out) else 1


def cmd_params(cfg: RunConfig, out) -> int:
    from leanresnet.network import build_network, count_flops, count_params

    classes = {"C": 100, "D": 100}.get(cfg.config, 10)
    hw = {"E": 96, "F": 96}.get(cfg.config, 32)
    for kind in ("lean", "dense"):
        nc = network_config(cfg, classes, kind)
        n = count_params(build_network(nc))
        out(f"{cfg.config} {kind}: params={n} ({n / 1e6:.3f}M) flops@{hw}x{hw}={count_flops(nc, hw)}")
    return 0


HANDLERS = {"train": cmd_train, "eval": cmd_eval, "bench": cmd_bench, "verify": cmd_verify, "params": cmd_params}


def run_command(cfg: RunConfig, out=print) -> int:
    out(f"seed={cfg.seed} threads={cfg.threads} backend={conv.BACKEND}")
    conv.set_num_threads(cfg.threads)
    with threadpool_limits(cfg.threads):
        return HANDLERS[cfg.command](cfg, out)


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    logging.basicConfig(level=logging.INFO if ("-v" in argv or "--verbose" in argv) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = parse_config(argv)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except SystemExit as exc:  # argparse usage errors
        return 2 if exc.code else 0
    try:
        return run_command(cfg)
    except Exception as exc:
        log.debug("command failed", exc_info=True)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
