"""Command-line entry point.

Subcommands: ``gen`` (write synthetic scenes), ``segment`` (superpoint ids
for one scene), ``pretrain`` (contrastive pre-training to a checkpoint +
loss CSV), ``probe`` (linear-probe accuracy of a checkpoint), ``bench``
(pair-count/byte scaling report), ``check`` (oracle and gradient
self-tests).

Settings come from a plain-text config file of ``key = value`` lines with
``#`` comments and dot-namespaced keys; every key has a documented default
(``DEFAULTS``), unknown keys are rejected. Precedence, lowest to highest:
defaults, config file, the EPC_SEED environment variable (seed only),
``--set key=value`` overrides, dedicated flags. Each run prints the fully
resolved configuration before doing anything.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from . import bench as bench_mod
from .encoder import load_checkpoint, save_checkpoint
from .errors import ConfigError
from .losses import (
    LossConfig,
    ag_contrast,
    brute_force_loss,
    channel_contrast,
    ep_contrast,
    point_infonce,
)
from .pointcloud import AugmentParams, PointCloud, load_ascii, load_binary, save_binary
from .rng import substream
from .superpoint import KMeansConfig, SegmentAssignment, kmeans_segments
from .trainer import (
    ProbeConfig,
    SyntheticSceneConfig,
    TrainConfig,
    generate_scene,
    linear_probe,
    pretrain,
)

# key -> (default, help); value type is the type of the default
DEFAULTS: dict[str, tuple] = {
    "seed": (0, "master seed for every stream (EPC_SEED env overrides)"),
    "scene.clusters": (8, "blobs per synthetic scene"),
    "scene.points_per_cluster": (128, "points per blob"),
    "scene.cluster_std": (0.35, "blob spatial std dev in meters"),
    "scene.color_noise_std": (0.08, "per-point color noise std dev"),
    "scene.extent": (10.0, "room edge length in meters"),
    "augment.scale_min": (0.8, "lower bound of the uniform scale draw"),
    "augment.scale_max": (1.2, "upper bound of the uniform scale draw"),
    "augment.rot_axis": ("z", "rotation axis: x, y, or z"),
    "augment.rot_max": (6.283185307179586, "max rotation angle in radians"),
    "augment.jitter_sigma": (0.01, "per-coordinate jitter std dev in meters"),
    "augment.jitter_clip": (0.05, "jitter clipping bound in meters"),
    "kmeans.segments": (2000, "target superpoint segments per scene (clamped to N)"),
    "kmeans.max_iters": (100, "Lloyd iteration cap"),
    "kmeans.tol": (1e-4, "centroid-shift stopping threshold"),
    "kmeans.color_weight": (1.0, "color scale vs unit-box positions in clustering"),
    "loss.tau": (1.0, "softmax temperature"),
    "loss.lambda": (0.1, "channel-loss weight in the combined objective"),
    "loss.normalize_rows": (True, "L2-normalize point embeddings before similarities"),
    "loss.normalize_channels": (True, "L2-normalize channel maps before similarities"),
    "loss.include_positive": (False, "count the positive pair in the denominator"),
    "loss.reduction": ("mean", "'mean' over positives or 'sum'"),
    "loss.neg_samples": (0, "negatives sampled per anchor for the point loss; 0 = all"),
    "loss.symmetric_ag": (False, "average both directions of the segment loss"),
    "encoder.hidden": (64, "hidden width of the per-point MLP"),
    "encoder.dim": (32, "embedding dimension C"),
    "train.epochs": (20, "pre-training epochs"),
    "train.batch_size": (1, "scenes per optimizer step"),
    "train.lr": (0.01, "base learning rate"),
    "train.schedule": ("cosine", "'cosine' or 'constant' learning-rate schedule"),
    "train.beta1": (0.9, "first-moment decay"),
    "train.beta2": (0.999, "second-moment decay"),
    "train.eps": (1e-8, "optimizer epsilon"),
    "probe.steps": (200, "full-batch gradient-descent steps for the probe"),
    "probe.lr": (1.0, "probe learning rate"),
    "probe.label_fraction": (1.0, "fraction of training points whose labels the probe sees"),
    "probe.holdout": (0.25, "trailing fraction of scenes held out for evaluation"),
}


def _parse_value(key: str, raw: str):
    default = DEFAULTS[key][0]
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low in ("true", "yes", "1", "on"):
                return True
            if low in ("false", "no", "0", "off"):
                return False
            raise ValueError(f"not a boolean: {raw!r}")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        return raw
    except ValueError as exc:
        raise ConfigError(f"config key {key!r}: {exc}") from exc


class RunConfig:
    """Resolved key/value settings with typed views onto the dataclasses."""

    def __init__(self, values: dict):
        self.values = values

    @classmethod
    def resolve(cls, config_path=None, sets=()) -> "RunConfig":
        values = {k: v for k, (v, _) in DEFAULTS.items()}
        if config_path is not None:
            values.update(cls._read_file(config_path))
        env_seed = os.environ.get("EPC_SEED")
        if env_seed is not None:
            values["seed"] = _parse_value("seed", env_seed)
        for item in sets:
            if "=" not in item:
                raise ConfigError(f"--set expects key=value, got {item!r}")
            key, raw = item.split("=", 1)
            key = key.strip()
            if key not in DEFAULTS:
                raise ConfigError(f"unknown config key {key!r}")
            values[key] = _parse_value(key, raw)
        return cls(values)

    @staticmethod
    def _read_file(path) -> dict:
        values = {}
        with open(path, "r", encoding="utf-8") as fh:
            for lineno, raw in enumerate(fh, start=1):
                line = raw.strip()
                if not line or line.startswith("#"):
                    continue
                if "=" not in line:
                    raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
                key, val = line.split("=", 1)
                key = key.strip()
                if key not in DEFAULTS:
                    raise ConfigError(f"{path}:{lineno}: unknown config key {key!r}")
                values[key] = _parse_value(key, val)
        return values

    def describe(self) -> list[str]:
        return [f"{k} = {self.values[k]}" for k in sorted(self.values)]

    # typed views ---------------------------------------------------------

    @property
    def seed(self) -> int:
        return self.values["seed"]

    def scene_config(self) -> SyntheticSceneConfig:
        v = self.values
        return SyntheticSceneConfig(
            num_clusters=v["scene.clusters"],
            points_per_cluster=v["scene.points_per_cluster"],
            cluster_std=v["scene.cluster_std"],
            color_noise_std=v["scene.color_noise_std"],
            extent=v["scene.extent"],
            seed=self.seed,
        )

    def augment_params(self) -> AugmentParams:
        v = self.values
        return AugmentParams(
            scale_min=v["augment.scale_min"],
            scale_max=v["augment.scale_max"],
            rot_axis=v["augment.rot_axis"],
            rot_max=v["augment.rot_max"],
            jitter_sigma=v["augment.jitter_sigma"],
            jitter_clip=v["augment.jitter_clip"],
            seed=self.seed,
        )

    def kmeans_config(self) -> KMeansConfig:
        v = self.values
        return KMeansConfig(
            target_segments=v["kmeans.segments"],
            max_iters=v["kmeans.max_iters"],
            tol=v["kmeans.tol"],
            color_weight=v["kmeans.color_weight"],
            seed=self.seed,
        )

    def loss_config(self) -> LossConfig:
        v = self.values
        return LossConfig(
            tau=v["loss.tau"],
            lam=v["loss.lambda"],
            normalize_rows=v["loss.normalize_rows"],
            normalize_channels=v["loss.normalize_channels"],
            include_positive_in_denominator=v["loss.include_positive"],
            reduction=v["loss.reduction"],
            neg_sample_count=v["loss.neg_samples"] or None,
            symmetric_ag=v["loss.symmetric_ag"],
        )

    def train_config(self, loss_kind: str) -> TrainConfig:
        v = self.values
        return TrainConfig(
            epochs=v["train.epochs"],
            batch_size=v["train.batch_size"],
            base_lr=v["train.lr"],
            lr_schedule=v["train.schedule"],
            beta1=v["train.beta1"],
            beta2=v["train.beta2"],
            adam_eps=v["train.eps"],
            loss=self.loss_config(),
            augment=self.augment_params(),
            loss_kind=loss_kind,
            hidden=v["encoder.hidden"],
            embed_dim=v["encoder.dim"],
            seed=self.seed,
        )

    def probe_config(self, label_fraction: float | None = None) -> ProbeConfig:
        v = self.values
        return ProbeConfig(
            steps=v["probe.steps"],
            lr=v["probe.lr"],
            label_fraction=v["probe.label_fraction"] if label_fraction is None else label_fraction,
            holdout_fraction=v["probe.holdout"],
            seed=self.seed,
        )


def _print_config(cfg: RunConfig) -> None:
    for line in cfg.describe():
        print(f"config: {line}")


def load_cloud(path) -> PointCloud:
    """EPCC binary if the magic matches, ASCII otherwise."""
    with open(path, "rb") as fh:
        magic = fh.read(4)
    return load_binary(path) if magic == b"EPCC" else load_ascii(path)


def _load_scene_dir(data_dir) -> list[PointCloud]:
    paths = sorted(Path(data_dir).glob("*.epcc")) + sorted(Path(data_dir).glob("*.txt"))
    if not paths:
        raise FileNotFoundError(f"no *.epcc or *.txt scenes in {data_dir}")
    return [load_cloud(p) for p in paths]


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def _cmd_gen(args) -> int:
    cfg = RunConfig.resolve(args.config, args.set)
    _print_config(cfg)
    scene_cfg = cfg.scene_config()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for i in range(args.scenes):
        cloud = generate_scene(scene_cfg, substream(cfg.seed, i))
        save_binary(cloud, out / f"scene_{i:03d}.epcc")
    print(f"wrote {args.scenes} scenes to {out}")
    return 0


def _cmd_segment(args) -> int:
    cfg = RunConfig.resolve(args.config, args.set)
    if args.segments is not None:
        cfg.values["kmeans.segments"] = args.segments
    _print_config(cfg)
    cloud = load_cloud(getattr(args, "in"))
    kcfg = cfg.kmeans_config()
    if kcfg.target_segments > cloud.n:
        print(
            f"warning: {kcfg.target_segments} segments requested for {cloud.n} points; "
            f"clamping to {cloud.n}",
            file=sys.stderr,
        )
    assignment = kmeans_segments(cloud, kcfg)
    with open(args.out, "w", encoding="utf-8") as fh:
        for sid in assignment.segment_of:
            fh.write(f"{int(sid)}\n")
    print(f"wrote {assignment.num_segments} segments for {cloud.n} points to {args.out}")
    return 0


def _cmd_pretrain(args) -> int:
    cfg = RunConfig.resolve(args.config, args.set)
    _print_config(cfg)
    scenes = _load_scene_dir(args.data)
    train_cfg = cfg.train_config(args.loss)
    params, history = pretrain(scenes, train_cfg, cfg.kmeans_config())
    save_checkpoint(params, args.out)
    history_path = args.history or (str(args.out) + ".history.csv")
    with open(history_path, "w", encoding="utf-8") as fh:
        fh.write("step,epoch,loss,lr\n")
        for step, epoch, loss, lr in history:
            fh.write(f"{step},{epoch},{loss!r},{lr!r}\n")
    print(f"trained on {len(scenes)} scenes for {train_cfg.epochs} epochs")
    print(f"checkpoint: {args.out}")
    print(f"history: {history_path}")
    return 0


def _cmd_probe(args) -> int:
    cfg = RunConfig.resolve(args.config, args.set)
    _print_config(cfg)
    params = load_checkpoint(args.ckpt)
    scenes = _load_scene_dir(args.data)
    acc = linear_probe(params, scenes, cfg.probe_config(args.label_fraction))
    print(f"{acc:.6f}")
    return 0


def _cmd_bench(args) -> int:
    cfg = RunConfig.resolve(args.config, args.set)
    _print_config(cfg)
    sizes = [int(s) for s in args.sizes.split(",") if s]
    budget = None if args.budget_mb is None else int(args.budget_mb * 1024 * 1024)
    report = bench_mod.bench_loss(
        args.kind,
        sizes,
        m=args.m,
        c=args.c,
        repeats=args.repeats,
        seed=cfg.seed,
        byte_budget=budget,
        measure=not args.count_only,
    )
    for line in report.table_lines():
        print(line)
    if args.csv:
        with open(args.csv, "w", encoding="utf-8") as fh:
            fh.write("\n".join(report.csv_lines()) + "\n")
        print(f"csv: {args.csv}")
    return 0


# ---------------------------------------------------------------------------
# the `check` suites: oracle equivalence and gradient agreement
# ---------------------------------------------------------------------------


def _random_instance(rng, n, c, m):
    f1 = rng.normal(size=(n, c))
    f2 = rng.normal(size=(n, c))
    ids = np.concatenate([np.arange(m), rng.integers(0, m, size=n - m)])
    seg = SegmentAssignment(np.sort(ids).astype(np.int64), m)
    return f1, f2, seg


def _vector_loss(kind, f1, f2, seg, cfg):
    if kind == "pc":
        return point_infonce(f1, f2, cfg)
    if kind == "ag":
        return ag_contrast(f1, f2, seg, cfg)
    if kind == "cc":
        return channel_contrast(f1, f2, cfg)
    return ep_contrast(f1, f2, seg, cfg)


def _check_oracles(instances=25) -> list[str]:
    failures = []
    rng = substream(1345, 0)
    for kind in ("pc", "ag", "cc", "ep"):
        for i in range(instances):
            n = int(rng.integers(3, 33))
            c = int(rng.integers(2, 9))
            m = int(rng.integers(2, min(9, n + 1)))
            f1, f2, seg = _random_instance(rng, n, c, m)
            for include_pos in (False, True):
                for normalize in (False, True):
                    cfg = LossConfig(
                        reduction="sum",
                        include_positive_in_denominator=include_pos,
                        normalize_rows=normalize,
                        normalize_channels=normalize,
                    )
                    got = _vector_loss(kind, f1, f2, seg, cfg).value
                    want = brute_force_loss(kind, f1, f2, seg, cfg)
                    tol = 1e-10 * max(1.0, abs(want))
                    if abs(got - want) > tol:
                        failures.append(
                            f"oracle mismatch: kind={kind} instance={i} "
                            f"include_pos={include_pos} normalize={normalize} "
                            f"got={got!r} want={want!r}"
                        )
    return failures


def _check_gradients(instances=5, step=1e-5, tol=1e-5) -> list[str]:
    failures = []
    rng = substream(1346, 0)
    for kind in ("pc", "ag", "cc", "ep"):
        for i in range(instances):
            n = int(rng.integers(4, 8))
            c = int(rng.integers(3, 6))
            m = int(rng.integers(2, 4))
            f1, f2, seg = _random_instance(rng, n, c, m)
            cfg = LossConfig(reduction="mean")
            out = _vector_loss(kind, f1, f2, seg, cfg)
            for name, base, grad in (("f1", f1, out.grad_f1), ("f2", f2, out.grad_f2)):
                num = np.zeros_like(base)
                for idx in np.ndindex(base.shape):
                    bumped = base.copy()
                    bumped[idx] += step
                    up = _vector_loss(kind, bumped if name == "f1" else f1,
                                      bumped if name == "f2" else f2, seg, cfg).value
                    bumped[idx] -= 2 * step
                    dn = _vector_loss(kind, bumped if name == "f1" else f1,
                                      bumped if name == "f2" else f2, seg, cfg).value
                    num[idx] = (up - dn) / (2 * step)
                denom = np.maximum(1.0, np.maximum(np.abs(num), np.abs(grad)))
                err = float(np.max(np.abs(num - grad) / denom))
                if err > tol:
                    failures.append(
                        f"gradient mismatch: kind={kind} instance={i} wrt {name} "
                        f"max rel err {err:.2e}"
                    )
    return failures


def _cmd_check(args) -> int:
    del args
    ok = True
    for label, suite in (("oracle equivalence", _check_oracles),
                         ("gradient agreement", _check_gradients)):
        failures = suite()
        if failures:
            ok = False
            print(f"{label}: FAIL ({len(failures)} mismatches)")
            for f in failures[:10]:
                print(f"  {f}", file=sys.stderr)
        else:
            print(f"{label}: ok")
    return 0 if ok else 1


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="epcontrast",
        description="contrastive point-cloud pre-training at desk scale",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", default=None, help="key = value settings file")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override one config key (repeatable)")

    p = sub.add_parser("gen", help="write synthetic labeled scenes")
    common(p)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--scenes", type=int, required=True, help="number of scenes")
    p.set_defaults(func=_cmd_gen)

    p = sub.add_parser("segment", help="superpoint ids for one scene")
    common(p)
    p.add_argument("--in", required=True, help="input scene (EPCC or ASCII)")
    p.add_argument("--segments", type=int, default=None, help="target segment count")
    p.add_argument("--out", required=True, help="output file, one id per line")
    p.set_defaults(func=_cmd_segment)

    p = sub.add_parser("pretrain", help="contrastive pre-training")
    common(p)
    p.add_argument("--data", required=True, help="directory of scenes")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--loss", choices=("pc", "ag", "cc", "ep"), default="ep")
    p.add_argument("--history", default=None, help="loss CSV path (default: CKPT.history.csv)")
    p.set_defaults(func=_cmd_pretrain)

    p = sub.add_parser("probe", help="linear-probe accuracy of a checkpoint")
    common(p)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True, help="directory of labeled scenes")
    p.add_argument("--label-fraction", type=float, default=None)
    p.set_defaults(func=_cmd_probe)

    p = sub.add_parser("bench", help="pair-count / byte scaling report")
    common(p)
    p.add_argument("--kind", choices=("pc", "ag", "cc"), required=True)
    p.add_argument("--sizes", required=True, help="comma-separated point counts")
    p.add_argument("--m", type=int, default=32, help="segment count for the segment loss")
    p.add_argument("--c", type=int, default=32, help="embedding dimension")
    p.add_argument("--repeats", type=int, default=3)
    p.add_argument("--budget-mb", type=float, default=None,
                   help="accounted-byte budget in MiB; exceeding it is an error")
    p.add_argument("--count-only", action="store_true",
                   help="skip timing runs; counts and bytes only")
    p.add_argument("--csv", default=None, help="also write the report as CSV")
    p.set_defaults(func=_cmd_bench)

    p = sub.add_parser("check", help="run oracle and gradient self-tests")
    p.set_defaults(func=_cmd_check)

    return parser


def cli_main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except BrokenPipeError:
        return 1
    except Exception as exc:  # runtime failures: message to stderr, exit 1
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(cli_main(sys.argv[1:]))


if __name__ == "__main__":
    main()
