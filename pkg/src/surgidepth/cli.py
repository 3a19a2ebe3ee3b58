"""Command line: gen-data, train, infer, eval, sweep-rank.

Parameters come from an optional JSON file (``--config``) and are then
overridden by flags. Every key is type-checked and validated before any output
is written. Exit codes: 0 success, 1 runtime or data error, 2 usage error.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Optional, Sequence

from .datagen import synth_scene
from .decoder import BinConfig
from .errors import ConfigError, DataError
from .evaluation import METRIC_NAMES, MetricsReport, evaluate_images, mean_report
from .fileio import (
    ensure_dir,
    load_sample,
    read_depth,
    read_ppm,
    resize_image,
    sample_paths,
    write_depth,
    write_pgm8,
    write_ppm,
)
from .lora import count_trainable
from .model import PROFILES, build_model, load_model, save_model
from .train import TrainConfig, fit

logger = logging.getLogger("surgidepth")

COMMANDS = ("gen-data", "train", "infer", "eval", "sweep-rank")
SWEEP_RANKS = (1, 4, 8, 16)
DEPTH_FORMATS = ("pfm", "pgm")


class UsageError(Exception):
    """Bad configuration; reported with exit code 2 before anything is written."""


@dataclass
class RunConfig:
    # training, defaults as published
    lr: float = 1e-5
    weight_decay: float = 1e-4
    batch_size: int = 8
    epochs: int = 50
    lambda1: float = 1.0
    lambda2: float = 0.85
    lambda3: float = 0.5
    rank: int = 4
    seed: int = 0
    grad_scales: int = 4
    lora_scale: float = 1.0
    checkpoint_every: int = 0
    # model
    profile: str = "toy"
    n_bins: int = 256
    d_min: float = 0.0
    d_max: float = 150.0
    # data generation
    n: int = 16
    height: int = 56
    width: int = 56
    depth_format: str = "pfm"
    # paths and reports
    data: Optional[str] = None
    out: Optional[str] = None
    pred: Optional[str] = None
    gt: Optional[str] = None
    model: Optional[str] = None
    visualize: bool = False
    ranks: tuple = SWEEP_RANKS

    def train_config(self, rank: Optional[int] = None) -> TrainConfig:
        return TrainConfig(lr=self.lr, weight_decay=self.weight_decay, batch_size=self.batch_size,
                           epochs=self.epochs, lambda1=self.lambda1, lambda2=self.lambda2,
                           lambda3=self.lambda3, rank=self.rank if rank is None else rank,
                           seed=self.seed, grad_scales=self.grad_scales)

    def bins(self) -> BinConfig:
        return BinConfig(self.n_bins, self.d_min, self.d_max)


_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}
_REQUIRED = {
    "gen-data": ("out",),
    "train": ("data", "out"),
    "infer": ("model", "data", "out"),
    "eval": ("pred", "gt"),
    "sweep-rank": ("data", "out"),
}


def _check_type(key: str, value):
    kind = _FIELD_TYPES[key]
    if kind == "float":
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
        return float(value) if ok else _type_error(key, value, "a number")
    if kind == "int":
        ok = isinstance(value, int) and not isinstance(value, bool)
        return value if ok else _type_error(key, value, "an integer")
    if kind == "bool":
        return value if isinstance(value, bool) else _type_error(key, value, "true/false")
    if kind == "tuple":
        if (isinstance(value, list) and value
                and all(isinstance(v, int) and not isinstance(v, bool) for v in value)):
            return tuple(value)
        return _type_error(key, value, "a non-empty list of integers")
    if kind == "str" or value is not None:
        return value if isinstance(value, str) else _type_error(key, value, "a string")
    return value


def _type_error(key, value, expected):
    raise UsageError(f"config key {key!r}: expected {expected}, got {json.dumps(value)}")


def _validate(cfg: RunConfig, command: str) -> None:
    try:
        cfg.train_config()
        cfg.bins()
    except ConfigError as exc:
        raise UsageError(str(exc)) from None
    if cfg.profile not in PROFILES:
        raise UsageError(f"config key 'profile': unknown profile {cfg.profile!r}, "
                         f"choose from {sorted(PROFILES)}")
    if cfg.checkpoint_every < 0:
        raise UsageError(f"config key 'checkpoint_every' must be >= 0, got {cfg.checkpoint_every}")
    if cfg.lora_scale <= 0:
        raise UsageError(f"config key 'lora_scale' must be > 0, got {cfg.lora_scale}")
    if cfg.n < 1:
        raise UsageError(f"config key 'n' must be >= 1, got {cfg.n}")
    if cfg.height < 16 or cfg.width < 16:
        raise UsageError(f"config keys 'height'/'width' must be >= 16, got {cfg.height}x{cfg.width}")
    if cfg.depth_format not in DEPTH_FORMATS:
        raise UsageError(f"config key 'depth_format' must be one of {DEPTH_FORMATS}")
    dim = PROFILES[cfg.profile].dim
    for r in cfg.ranks if command == "sweep-rank" else (cfg.rank,):
        if not 0 <= r <= dim:
            raise UsageError(f"config key 'rank' must lie in [0, {dim}], got {r}")
    for key in _REQUIRED[command]:
        if getattr(cfg, key) is None:
            raise UsageError(f"{command} needs '{key}' (flag --{key} or config key)")


def parse_config(command: str, config_path: Optional[str], overrides: dict) -> RunConfig:
    """File values, then flag overrides, then validation. Raises :class:`UsageError`."""
    values = {}
    if config_path is not None:
        try:
            text = Path(config_path).read_text()
        except OSError as exc:
            raise UsageError(f"cannot read config {config_path}: {exc.strerror}") from None
        try:
            loaded = json.loads(text) if text.strip() else {}
        except json.JSONDecodeError as exc:
            raise UsageError(f"config {config_path}: invalid JSON ({exc.msg} at char {exc.pos})") from None
        if not isinstance(loaded, dict):
            raise UsageError(f"config {config_path}: top level must be a JSON object")
        values.update(loaded)
    values.update({k: v for k, v in overrides.items() if v is not None})
    unknown = sorted(set(values) - set(_FIELD_TYPES))
    if unknown:
        raise UsageError(f"unknown config key {unknown[0]!r}")
    cfg = RunConfig(**{k: _check_type(k, v) for k, v in values.items()})
    _validate(cfg, command)
    return cfg


# ---------------------------------------------------------------- reports


def _fmt(x: float) -> str:
    return "{:.10g}".format(x)


def metrics_csv(report: MetricsReport) -> str:
    return ",".join(METRIC_NAMES) + "\n" + ",".join(_fmt(v) for v in report.as_tuple()) + "\n"


def per_image_csv(names: Sequence[str], reports: Sequence[MetricsReport]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("image",) + METRIC_NAMES)
    for name, r in zip(names, reports):
        w.writerow([name] + [_fmt(v) for v in r.as_tuple()])
    return buf.getvalue()


def write_reports(out_dir, names, reports, overall: MetricsReport) -> None:
    out = ensure_dir(out_dir)
    (out / "metrics.csv").write_text(metrics_csv(overall))
    (out / "per_image.csv").write_text(per_image_csv(names, reports))


# ---------------------------------------------------------------- commands


def depth_files(directory) -> dict[str, Path]:
    """``{stem: path}`` for every ``.pfm`` / ``.pgm`` depth map; a ``.depth`` infix is dropped."""
    directory = Path(directory)
    if not directory.is_dir():
        raise DataError(f"not a directory: {directory}")
    out = {}
    for p in sorted(directory.iterdir()):
        if p.suffix.lower() not in (".pfm", ".pgm"):
            continue
        stem = p.stem[:-len(".depth")] if p.stem.endswith(".depth") else p.stem
        if stem in out:
            raise DataError(f"two depth maps for {stem!r} in {directory}")
        out[stem] = p
    return out


def cmd_gen_data(cfg: RunConfig) -> None:
    out = ensure_dir(cfg.out)
    for i in range(cfg.n):
        s = synth_scene(cfg.seed + i, cfg.height, cfg.width)
        stem = f"sample_{i:04d}"
        write_ppm(out / f"{stem}.ppm", s.image)
        write_depth(out / f"{stem}.depth.{cfg.depth_format}", s.depth)
    logger.info("wrote %d samples to %s", cfg.n, out)


def _load_data(cfg: RunConfig):
    enc = PROFILES[cfg.profile]
    triples = sample_paths(cfg.data)
    if not triples:
        raise DataError(f"no samples (*.ppm with depth) in {cfg.data}")
    return [stem for stem, _, _ in triples], [load_sample(i, d, enc.img_h, enc.img_w)
                                             for _, i, d in triples]


def _train_one(cfg: RunConfig, data, rank: int, out: Optional[Path]):
    tcfg = cfg.train_config(rank)
    model = build_model(PROFILES[cfg.profile], rank, cfg.seed, cfg.bins(), cfg.lora_scale)

    def on_epoch(epoch, log):
        if out is not None and cfg.checkpoint_every and epoch % cfg.checkpoint_every == 0:
            save_model(model, out / f"model_epoch{epoch:04d}.json")

    log = fit(model, data, tcfg, on_epoch)
    return model, log


def cmd_train(cfg: RunConfig) -> None:
    _, data = _load_data(cfg)
    out = ensure_dir(cfg.out)
    model, log = _train_one(cfg, data, cfg.rank, out)
    save_model(model, out / "model.json")
    lines = ["epoch,loss"] + [f"{i + 1},{v!r}" for i, v in enumerate(log.epoch_loss)]
    (out / "train_log.csv").write_text("\n".join(lines) + "\n")


def cmd_infer(cfg: RunConfig) -> None:
    model = load_model(cfg.model)
    src = Path(cfg.data)
    images = sorted(src.glob("*.ppm"))
    if not images:
        raise DataError(f"no *.ppm images in {src}")
    out = ensure_dir(cfg.out)
    vis = ensure_dir(out / "vis") if cfg.visualize else None
    for path in images:
        image = read_ppm(path)
        h, w = image.shape[:2]
        pred = model.predict(resize_image(image, model.cfg.img_h, model.cfg.img_w))
        depth = resize_image(pred.values[..., None], h, w)[..., 0] if (h, w) != pred.shape else pred.values
        write_depth(out / f"{path.stem}.depth.pfm", depth)
        if vis is not None:
            write_pgm8(vis / f"{path.stem}.pgm", depth)


def cmd_eval(cfg: RunConfig) -> None:
    preds, gts = depth_files(cfg.pred), depth_files(cfg.gt)
    if len(preds) != len(gts):
        raise DataError(f"{len(preds)} predictions in {cfg.pred} but {len(gts)} ground-truth maps in {cfg.gt}")
    missing = sorted(set(gts) - set(preds))
    if missing:
        raise DataError(f"no prediction for ground truth {missing[0]!r}")
    names = sorted(gts)
    pairs = [(read_depth(preds[n]), read_depth(gts[n])) for n in names]
    reports = evaluate_images(pairs, names)
    overall = mean_report(reports)
    sys.stdout.write(metrics_csv(overall))
    if cfg.out is not None:
        write_reports(cfg.out, names, reports, overall)
        if cfg.visualize:
            vis = ensure_dir(Path(cfg.out) / "vis")
            for n, (p, _) in zip(names, pairs):
                write_pgm8(vis / f"{n}.pgm", p.values)


def cmd_sweep_rank(cfg: RunConfig) -> None:
    names, data = _load_data(cfg)
    out = ensure_dir(cfg.out)
    enc = PROFILES[cfg.profile]
    rows = []
    for rank in cfg.ranks:
        model, log = _train_one(cfg, data, rank, None)
        reports = evaluate_images([(model.predict(s.image), s.depth) for s in data], names)
        overall = mean_report(reports)
        decoder = model.head.n_params
        rows.append([rank, count_trainable(enc.depth, enc.dim, rank, decoder),
                     count_trainable(enc.depth, enc.dim, rank), _fmt(log.epoch_loss[-1])]
                    + [_fmt(v) for v in overall.as_tuple()])
        logger.info("rank %d: delta %.4f", rank, overall.delta)
    with open(out / "rank_sweep.csv", "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(("rank", "trainable_params", "lora_params", "final_loss") + METRIC_NAMES)
        w.writerows(rows)


_DISPATCH = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "infer": cmd_infer,
    "eval": cmd_eval,
    "sweep-rank": cmd_sweep_rank,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="surgidepth", description=__doc__.split("\n")[0])
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", metavar="PATH", help="JSON file with parameters")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--rank", type=int)
    parser.add_argument("--lr", type=float)
    parser.add_argument("--epochs", type=int)
    parser.add_argument("--batch-size", dest="batch_size", type=int)
    parser.add_argument("--profile")
    parser.add_argument("--n", type=int, help="number of samples for gen-data")
    parser.add_argument("--out", metavar="DIR")
    parser.add_argument("--data", metavar="DIR")
    parser.add_argument("--pred", metavar="DIR")
    parser.add_argument("--gt", metavar="DIR")
    parser.add_argument("--model", metavar="PATH")
    parser.add_argument("--visualize", action="store_true", default=None,
                        help="also write 8-bit PGM depth views")
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    overrides = {k: v for k, v in vars(args).items() if k not in ("command", "config", "verbose")}
    try:
        cfg = parse_config(args.command, args.config, overrides)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"surgidepth: error: {exc}", file=sys.stderr)
        return 2
    try:
        _DISPATCH[args.command](cfg)
    except (ValueError, RuntimeError, OSError) as exc:
        print(f"surgidepth: {args.command} failed: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
