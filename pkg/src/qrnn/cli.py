"""Command-line entry point: ``qrnn train|eval|generate|inspect``.

Runs are described by a JSON config::

    {"task": {"name": "memorize", "pattern": "4"},
     "topology": {"H": 5, "I": 2, "S": 2, "d": 3, "ord": 2},
     "init": {"bias_mean": 0.785}, "train": {"max_steps": 500, "optimizer": {...}},
     "paths": {"data_dir": null, "checkpoint": "model.json", "metrics": "metrics.csv"}}

Any field can be overridden with a dotted flag, e.g.
``--train.optimizer.learning_rate 0.01``.  Exit codes: 0 converged (or
success), 2 training stopped at ``max_steps``, 1 error.
"""

from __future__ import annotations

import argparse
import copy
import json
import sys
from dataclasses import asdict, fields
from pathlib import Path

import numpy as np

from .errors import ConfigError, QrnnError
from .model import CellTopology, InitConfig, QrnnModel, generate, parameter_count
from .tasks import build_task
from .tasks.mnist import image_from_words, write_pgm
from .training import OptimizerConfig, TrainConfig, evaluate, train

DEFAULT_CONFIG = {
    "task": {"name": "memorize", "pattern": "4", "length": 10},
    "topology": {"H": 5, "I": 2, "S": 2, "d": 3, "ord": 2},
    "init": asdict(InitConfig()),
    "train": {k: v for k, v in asdict(TrainConfig()).items() if k not in ("init", "optimizer")}
    | {"optimizer": asdict(OptimizerConfig())},
    "paths": {"data_dir": None, "checkpoint": None, "metrics": None},
}


def _merge(base, override, prefix=""):
    out = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict) and key != "task":
            out[key] = _merge(out[key], value, f"{prefix}{key}.")
        else:
            out[key] = copy.deepcopy(value)
    return out


def _parse_value(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def set_dotted(config: dict, path: str, value):
    keys = path.split(".")
    node = config
    for k in keys[:-1]:
        if not isinstance(node.get(k), dict):
            node[k] = {}
        node = node[k]
    node[keys[-1]] = value


def _dataclass_from(cls, data, section, problems):
    known = {f.name for f in fields(cls)}
    for key in set(data) - known:
        problems.append(f"{section}.{key} is not a known field")
    try:
        return cls(**{k: v for k, v in data.items() if k in known})
    except ConfigError as exc:
        problems.extend(exc.problems)
    except TypeError as exc:
        problems.append(f"{section}: {exc}")
    return None


class RunConfig:
    """Validated view of a config document."""

    def __init__(self, doc: dict):
        self.doc = _merge(DEFAULT_CONFIG, doc)
        problems = []
        for key in set(self.doc) - set(DEFAULT_CONFIG):
            problems.append(f"{key} is not a known section")
        if not isinstance(self.doc["task"], dict) or "name" not in self.doc["task"]:
            problems.append("task.name is required")
        self.topology = _dataclass_from(CellTopology, self.doc["topology"], "topology", problems)
        self.init = _dataclass_from(InitConfig, self.doc["init"], "init", problems)
        train_doc = dict(self.doc["train"])
        opt = _dataclass_from(OptimizerConfig, train_doc.pop("optimizer", {}), "train.optimizer",
                              problems)
        train_doc.pop("init", None)
        self.train = None
        if opt is not None and self.init is not None:
            self.train = _dataclass_from(TrainConfig, {**train_doc, "init": self.init,
                                                       "optimizer": opt}, "train", problems)
            if self.train is not None:
                problems.extend(self.train.problems())
        if problems:
            raise ConfigError(problems)

    @classmethod
    def load(cls, path=None, overrides=()) -> RunConfig:
        doc = {}
        if path is not None:
            try:
                doc = json.loads(Path(path).read_text())
            except (OSError, json.JSONDecodeError) as exc:
                raise ConfigError([f"cannot read config {path}: {exc}"]) from exc
        for key, value in overrides:
            set_dotted(doc, key, value)
        return cls(doc)

    def to_dict(self) -> dict:
        return copy.deepcopy(self.doc)

    def dumps(self) -> str:
        return json.dumps(self.doc, indent=2, sort_keys=True)

    @property
    def paths(self) -> dict:
        return self.doc["paths"]

    def build_task(self):
        task = build_task(self.doc["task"], self.paths.get("data_dir"))
        if self.topology is not None and task.io_bits != self.topology.I:
            raise ConfigError([f"topology.I = {self.topology.I} does not match the "
                               f"{task.io_bits}-bit words of task {task.name!r}"])
        return task


def _split_overrides(extra):
    pairs = []
    it = iter(extra)
    for flag in it:
        if not flag.startswith("--") or "." not in flag:
            raise ConfigError([f"unrecognized argument {flag!r}"])
        key = flag[2:]
        if "=" in key:
            key, value = key.split("=", 1)
        else:
            try:
                value = next(it)
            except StopIteration:
                raise ConfigError([f"{flag} needs a value"]) from None
        pairs.append((key, _parse_value(value)))
    return pairs


def _run_config(args, extra) -> RunConfig:
    overrides = _split_overrides(extra)
    if args.seed is not None:
        overrides.append(("train.seed", args.seed))
    if args.workers is not None:
        overrides.append(("train.workers", args.workers))
    if args.data_dir is not None:
        overrides.append(("paths.data_dir", args.data_dir))
    return RunConfig.load(args.config, overrides)


def cmd_train(args, extra) -> int:
    cfg = _run_config(args, extra)
    task = cfg.build_task()
    metrics_path = args.metrics or cfg.paths.get("metrics")
    ckpt_path = (args.checkpoint[0] if args.checkpoint else None) or cfg.paths.get("checkpoint")
    tc = cfg.train
    model = QrnnModel.initialized(cfg.topology, cfg.init, tc.seed)
    log = None
    if args.verbose:
        log = lambda row: print(f"step={row.step} val_loss={row.val_loss:.6g} "
                                f"accuracy={row.accuracy:.4g} overhead={row.overhead:.4g}",
                                file=sys.stderr)
    result = train(model, task, tc, metrics_path=metrics_path, log=log)
    if ckpt_path:
        result.model.save(ckpt_path)
    last = result.metrics.rows[-1]
    print(f"converged={int(result.converged)} steps={result.steps} val_loss={last.val_loss!r} "
          f"accuracy={last.accuracy!r}")
    return 0 if result.converged else 2


def _load_models(paths):
    if not paths:
        raise ConfigError(["--checkpoint is required"])
    models = [QrnnModel.load(p) for p in paths]
    shapes = {m.topology for m in models}
    if len(shapes) > 1:
        listing = "; ".join(f"{p}: {m.topology.shape_str()}" for p, m in zip(paths, models))
        raise ConfigError([f"ensemble topologies differ ({listing})"])
    return models


def cmd_eval(args, extra) -> int:
    models = _load_models(args.checkpoint)
    cfg = _run_config(args, extra)
    cfg.topology = models[0].topology
    task = cfg.build_task()
    if args.split == "test":
        samples = task.test_set(seed=cfg.train.seed)
    else:
        samples = task.validation_set(cfg.train.validation_size, cfg.train.seed)
    ev = evaluate(models, samples, cfg.train.workers)
    print(f"accuracy={ev.accuracy!r} loss={ev.loss!r}")
    return 0


def _parse_primer(text, io_bits):
    words = [int(w) for w in str(text).replace(",", " ").split()]
    if not words:
        raise ConfigError(["--primer needs at least one word"])
    for w in words:
        if not 0 <= w < 1 << io_bits:
            raise ConfigError([f"primer word {w} does not fit {io_bits} bits"])
    return words


def cmd_generate(args, extra) -> int:
    if extra:
        raise ConfigError([f"unrecognized arguments {extra}"])
    if args.steps < 1:
        raise ConfigError(["--steps must be >= 1"])
    models = _load_models(args.checkpoint[:1])
    model = models[0]
    primer = _parse_primer(args.primer, model.topology.I)
    rng = np.random.default_rng(args.seed if args.seed is not None else 0)
    words = generate(model, primer, args.steps, rng)
    text = " ".join(str(w) for w in words) + "\n"
    if args.output:
        Path(args.output).write_text(text)
    else:
        sys.stdout.write(text)
    image = args.image
    if image is None and args.output and model.topology.I == 2 and args.steps >= 100:
        image = str(Path(args.output).with_suffix(".pgm"))
    if image:
        write_pgm(image, image_from_words(words))
    return 0


def cmd_inspect(args, extra) -> int:
    if extra:
        raise ConfigError([f"unrecognized arguments {extra}"])
    model = _load_models(args.checkpoint[:1])[0]
    t = model.topology
    print(f"topology H={t.H} I={t.I} S={t.S} d={t.d} ord={t.ord} lanes={t.num_lanes}")
    print(f"parameters {parameter_count(t)}")
    print(f"step_count {model.step_count} rng_seed {model.rng_seed}")
    for name, arr in model.params.groups.items():
        print(f"group {name} shape={'x'.join(map(str, arr.shape))} "
              f"mean={arr.mean():.6g} std={arr.std():.6g}")
    bias = model.flat[model.params.bias_mask()]
    print(f"bias mean={bias.mean():.6g} std={bias.std():.6g}")
    return 0


COMMANDS = {"train": cmd_train, "eval": cmd_eval, "generate": cmd_generate, "inspect": cmd_inspect}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qrnn", description=__doc__.splitlines()[0])
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", help="JSON run configuration")
    parser.add_argument("--seed", type=int, help="training seed (generate: sampling seed)")
    parser.add_argument("--workers", type=int, help="threads for batch evaluation")
    parser.add_argument("--metrics", help="metrics CSV output path")
    parser.add_argument("--checkpoint", action="append", default=[],
                        help="checkpoint path (train: output; eval: repeat for an ensemble)")
    parser.add_argument("--data-dir", dest="data_dir", help="directory holding dataset files")
    parser.add_argument("--split", choices=("val", "test"), default="val", help="eval split")
    parser.add_argument("--primer", default="0", help="generate: primer words, e.g. '1' or '1,0'")
    parser.add_argument("--steps", type=int, default=100, help="generate: number of steps")
    parser.add_argument("--output", help="generate: output file for the sampled words")
    parser.add_argument("--image", help="generate: PGM output path")
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args, extra = parser.parse_known_args(argv)
    try:
        return COMMANDS[args.command](args, extra)
    except ConfigError as exc:
        for problem in exc.problems:
            print(f"error: {problem}", file=sys.stderr)
        return 1
    except (QrnnError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
