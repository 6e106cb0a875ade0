"""Batch command-line front end.

One experiment is one JSON config; commands read it with ``--config`` and
write their artifacts into the configured output directory, plus a
``run_meta.json`` recording the config hash, package version, and wall
time. ``--seed`` and ``--out`` override the config for sweeps.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .core import LabelSupport
from .data import (
    AmbiguityProfile,
    Dataset,
    generate_synthetic,
    load_csv,
    save_csv,
    split,
)
from .errors import InvalidParameterError, SaldlError, TrainingDivergedError
from .evaluation import anchor_similarity_curve, compute_metrics
from .model import forward_batch, init_model, predict_ages
from .staging import (
    StagePartition,
    decade_partition,
    kmeans_1d,
    load_partition,
    save_partition,
)
from .trainer import (
    TrainConfig,
    initial_stage_params,
    load_checkpoint,
    save_checkpoint,
    train_sav,
)

META_VERSION = 1

# The four arm names for the sav/saw ablation matrix, in reporting order.
ABLATION_ARMS = (
    ("base", False, False),
    ("sav", True, False),
    ("saw", False, True),
    ("sav_saw", True, True),
)


class CommandError(SaldlError):
    """Command-level failure with a user-facing message."""


def _strict(d: dict, allowed, ctx: str) -> None:
    unknown = sorted(set(d) - set(allowed))
    if unknown:
        raise InvalidParameterError(f"unknown keys in {ctx}: {unknown}")


@dataclass
class SyntheticSpec:
    levels: tuple[float, ...]
    boundaries: tuple[int, ...]
    feature_dim: int = 16
    noise_scale: float = 0.05
    n_per_label: int = 12

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticSpec":
        _strict(d, {"levels", "boundaries", "feature_dim", "noise_scale",
                    "n_per_label"}, "data.synthetic")
        return cls(levels=tuple(float(v) for v in d["levels"]),
                   boundaries=tuple(int(v) for v in d["boundaries"]),
                   feature_dim=int(d.get("feature_dim", 16)),
                   noise_scale=float(d.get("noise_scale", 0.05)),
                   n_per_label=int(d.get("n_per_label", 12)))

    def profile(self, support: LabelSupport) -> AmbiguityProfile:
        partition = StagePartition(boundaries=self.boundaries, support=support,
                                   provenance="manual")
        return AmbiguityProfile(levels=self.levels, partition=partition,
                                feature_dim=self.feature_dim,
                                noise_scale=self.noise_scale)


@dataclass
class DataSection:
    synthetic: SyntheticSpec | None = None
    fractions: tuple[float, float, float] = (0.7, 0.15, 0.15)
    train_csv: str | None = None
    val_csv: str | None = None
    test_csv: str | None = None

    @classmethod
    def from_dict(cls, d: dict) -> "DataSection":
        _strict(d, {"synthetic", "fractions", "train_csv", "val_csv", "test_csv"},
                "data")
        synth = SyntheticSpec.from_dict(d["synthetic"]) if d.get("synthetic") else None
        fr = d.get("fractions", (0.7, 0.15, 0.15))
        if len(fr) != 3:
            raise InvalidParameterError("data.fractions needs three values")
        return cls(synthetic=synth, fractions=tuple(float(f) for f in fr),
                   train_csv=d.get("train_csv"), val_csv=d.get("val_csv"),
                   test_csv=d.get("test_csv"))


@dataclass
class PartitionSection:
    mode: str = "kmeans"
    k: int = 10
    boundaries: tuple[int, ...] | None = None

    @classmethod
    def from_dict(cls, d: dict) -> "PartitionSection":
        _strict(d, {"mode", "k", "boundaries"}, "partition")
        mode = d.get("mode", "kmeans")
        if mode not in ("kmeans", "decade", "manual"):
            raise InvalidParameterError(f"partition.mode {mode!r} unknown")
        boundaries = d.get("boundaries")
        if mode == "manual" and not boundaries:
            raise InvalidParameterError("manual partition needs boundaries")
        return cls(mode=mode, k=int(d.get("k", 10)),
                   boundaries=tuple(int(b) for b in boundaries) if boundaries else None)


@dataclass
class ModelSection:
    hidden_dims: tuple[int, ...] = (64, 32)
    activation: str = "relu"

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSection":
        _strict(d, {"hidden_dims", "activation"}, "model")
        return cls(hidden_dims=tuple(int(v) for v in d.get("hidden_dims", (64, 32))),
                   activation=str(d.get("activation", "relu")))


@dataclass
class AblationSection:
    sav: bool = True
    saw: bool = True
    fixed_sigma: float = 2.0
    loss_mode: str | None = None
    seeds: tuple[int, ...] | None = None

    @classmethod
    def from_dict(cls, d: dict) -> "AblationSection":
        _strict(d, {"sav", "saw", "fixed_sigma", "loss_mode", "seeds"}, "ablation")
        loss_mode = d.get("loss_mode")
        if loss_mode is not None and loss_mode not in ("kl", "ce", "saw"):
            raise InvalidParameterError(f"ablation.loss_mode {loss_mode!r} unknown")
        seeds = d.get("seeds")
        return cls(sav=bool(d.get("sav", True)), saw=bool(d.get("saw", True)),
                   fixed_sigma=float(d.get("fixed_sigma", 2.0)), loss_mode=loss_mode,
                   seeds=tuple(int(s) for s in seeds) if seeds else None)


@dataclass
class EvalSection:
    cs_thresholds: tuple[float, ...] = (5.0,)
    anchors: tuple[int, ...] = ()
    similarity_aggregation: str = "pairwise"

    @classmethod
    def from_dict(cls, d: dict) -> "EvalSection":
        _strict(d, {"cs_thresholds", "anchors", "similarity_aggregation"}, "eval")
        return cls(cs_thresholds=tuple(float(t) for t in d.get("cs_thresholds", (5.0,))),
                   anchors=tuple(int(a) for a in d.get("anchors", ())),
                   similarity_aggregation=str(d.get("similarity_aggregation",
                                                    "pairwise")))


@dataclass
class ExperimentConfig:
    seed: int
    out_dir: str
    support: LabelSupport = field(default_factory=LabelSupport)
    data: DataSection = field(default_factory=DataSection)
    partition: PartitionSection = field(default_factory=PartitionSection)
    model: ModelSection = field(default_factory=ModelSection)
    train: dict = field(default_factory=dict)
    ablation: AblationSection = field(default_factory=AblationSection)
    eval: EvalSection = field(default_factory=EvalSection)

    TOP_KEYS = {"seed", "out_dir", "support", "data", "partition", "model",
                "train", "ablation", "eval"}
    TRAIN_KEYS = {"epochs", "batch_size", "learning_rate", "stage_lr",
                  "adaptation_mode", "sigma_grid", "alpha_grid",
                  "prediction_rule", "cs_threshold"}

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        _strict(d, cls.TOP_KEYS, "config")
        for key in ("seed", "out_dir"):
            if key not in d:
                raise InvalidParameterError(f"config is missing {key!r}")
        sup = d.get("support", {})
        _strict(sup, {"min_label", "max_label"}, "support")
        support = LabelSupport(int(sup.get("min_label", 0)),
                               int(sup.get("max_label", 100)))
        train = dict(d.get("train", {}))
        _strict(train, cls.TRAIN_KEYS, "train")
        return cls(
            seed=int(d["seed"]),
            out_dir=str(d["out_dir"]),
            support=support,
            data=DataSection.from_dict(d.get("data", {})),
            partition=PartitionSection.from_dict(d.get("partition", {})),
            model=ModelSection.from_dict(d.get("model", {})),
            train=train,
            ablation=AblationSection.from_dict(d.get("ablation", {})),
            eval=EvalSection.from_dict(d.get("eval", {})),
        )

    def train_config(self, seed: int | None = None) -> TrainConfig:
        loss_mode = self.ablation.loss_mode or ("saw" if self.ablation.saw else "kl")
        return TrainConfig(seed=self.seed if seed is None else seed,
                           sav=self.ablation.sav, loss_mode=loss_mode,
                           fixed_sigma=self.ablation.fixed_sigma, **self.train)

    def canonical_dict(self) -> dict:
        return {
            "seed": self.seed,
            "out_dir": self.out_dir,
            "support": {"min_label": self.support.min_label,
                        "max_label": self.support.max_label},
            "data": {
                "synthetic": None if self.data.synthetic is None else {
                    "levels": list(self.data.synthetic.levels),
                    "boundaries": list(self.data.synthetic.boundaries),
                    "feature_dim": self.data.synthetic.feature_dim,
                    "noise_scale": self.data.synthetic.noise_scale,
                    "n_per_label": self.data.synthetic.n_per_label,
                },
                "fractions": list(self.data.fractions),
                "train_csv": self.data.train_csv,
                "val_csv": self.data.val_csv,
                "test_csv": self.data.test_csv,
            },
            "partition": {"mode": self.partition.mode, "k": self.partition.k,
                          "boundaries": None if self.partition.boundaries is None
                          else list(self.partition.boundaries)},
            "model": {"hidden_dims": list(self.model.hidden_dims),
                      "activation": self.model.activation},
            "train": self.train,
            "ablation": {"sav": self.ablation.sav, "saw": self.ablation.saw,
                         "fixed_sigma": self.ablation.fixed_sigma,
                         "loss_mode": self.ablation.loss_mode,
                         "seeds": None if self.ablation.seeds is None
                         else list(self.ablation.seeds)},
            "eval": {"cs_thresholds": list(self.eval.cs_thresholds),
                     "anchors": list(self.eval.anchors),
                     "similarity_aggregation": self.eval.similarity_aggregation},
        }

    def sha256(self) -> str:
        blob = json.dumps(self.canonical_dict(), sort_keys=True,
                          separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def load_config(path, seed_override: int | None = None,
                out_override: str | None = None) -> ExperimentConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
    except FileNotFoundError:
        raise CommandError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise CommandError(f"config {path} is not valid JSON: {exc}") from None
    cfg = ExperimentConfig.from_dict(raw)
    if seed_override is not None:
        cfg.seed = seed_override
    if out_override is not None:
        cfg.out_dir = out_override
    return cfg


def _out(config: ExperimentConfig) -> Path:
    p = Path(config.out_dir)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _dataset_paths(config: ExperimentConfig) -> tuple[Path, Path, Path]:
    out = Path(config.out_dir)
    train = Path(config.data.train_csv) if config.data.train_csv else out / "train.csv"
    val = Path(config.data.val_csv) if config.data.val_csv else out / "val.csv"
    test = Path(config.data.test_csv) if config.data.test_csv else out / "test.csv"
    for p in (train, val, test):
        if not p.exists():
            raise CommandError(
                f"dataset file missing: {p} (run gen-data or set data.*_csv)")
    return train, val, test


def _build_partition(config: ExperimentConfig, train_data: Dataset) -> StagePartition:
    sect = config.partition
    if sect.mode == "decade":
        return decade_partition(config.support)
    if sect.mode == "manual":
        return StagePartition(boundaries=sect.boundaries, support=config.support,
                              provenance="manual")
    return kmeans_1d(train_data.labels_array().tolist(), sect.k, config.support)


def cmd_gen_data(config: ExperimentConfig) -> list[Path]:
    """Generate the synthetic dataset, split it, and write the three CSVs
    plus the profile actually used."""
    if config.data.synthetic is None:
        raise CommandError("gen-data needs a data.synthetic section")
    out = _out(config)
    profile = config.data.synthetic.profile(config.support)
    dataset = generate_synthetic(profile, config.data.synthetic.n_per_label,
                                 config.seed)
    train, val, test = split(dataset, config.data.fractions, config.seed)
    outputs = []
    for name, ds in (("train.csv", train), ("val.csv", val), ("test.csv", test)):
        path = out / name
        save_csv(ds, path)
        load_csv(path, config.support)  # round-trip sanity before declaring success
        outputs.append(path)
    profile_path = out / "profile.json"
    with open(profile_path, "w", encoding="utf-8") as fh:
        json.dump(profile.to_dict(), fh, indent=2)
        fh.write("\n")
    outputs.append(profile_path)
    return outputs


def cmd_stage(config: ExperimentConfig) -> list[Path]:
    """Compute the stage partition from the training labels and write it."""
    out = _out(config)
    train_path, _, _ = _dataset_paths(config)
    train_data = load_csv(train_path, config.support)
    partition = _build_partition(config, train_data)
    path = out / "partition.json"
    save_partition(partition, path)
    return [path]


def cmd_train(config: ExperimentConfig) -> list[Path]:
    """Train per the configured switches; write the best checkpoint and the
    per-epoch history. On divergence the history is still written."""
    out = _out(config)
    train_path, val_path, _ = _dataset_paths(config)
    train_data = load_csv(train_path, config.support)
    val_data = load_csv(val_path, config.support)
    partition_path = out / "partition.json"
    if partition_path.exists():
        partition = load_partition(partition_path, config.support)
    else:
        partition = _build_partition(config, train_data)
        save_partition(partition, partition_path)

    tc = config.train_config()
    dims = (train_data.feature_dim, *config.model.hidden_dims, config.support.size)
    model0 = init_model(dims, config.model.activation, tc.seed, config.support)
    params0 = initial_stage_params(partition.k, tc)
    history_csv = out / "history.csv"
    history_json = out / "history.json"
    try:
        best_model, best_params, history = train_sav(
            train_data, val_data, partition, model0, params0, tc)
    except TrainingDivergedError as exc:
        if exc.history is not None:
            exc.history.to_csv(history_csv)
            exc.history.to_json(history_json)
        raise CommandError(f"training diverged: {exc}") from exc
    checkpoint = out / "checkpoint.json"
    save_checkpoint(checkpoint, best_model, best_params, partition)
    history.to_csv(history_csv)
    history.to_json(history_json)
    return [checkpoint, history_csv, history_json, partition_path]


def _load_checkpoint_or_fail(config: ExperimentConfig):
    path = Path(config.out_dir) / "checkpoint.json"
    if not path.exists():
        raise CommandError(f"checkpoint missing: {path} (run train first)")
    return load_checkpoint(path)


def cmd_eval(config: ExperimentConfig) -> list[Path]:
    """Score the checkpoint on the test split."""
    out = _out(config)
    _, _, test_path = _dataset_paths(config)
    test_data = load_csv(test_path, config.support)
    model, _, partition, _ = _load_checkpoint_or_fail(config)
    tc = config.train_config()
    preds = predict_ages(model, test_data.features_matrix(), config.support,
                         tc.prediction_rule)
    report = compute_metrics(preds, test_data.labels_array(), partition,
                             config.eval.cs_thresholds)
    json_path, csv_path = out / "metrics.json", out / "metrics.csv"
    report.save_json(json_path)
    report.save_csv(csv_path)
    return [json_path, csv_path]


def cmd_analyze(config: ExperimentConfig) -> list[Path]:
    """Write one anchor similarity curve CSV per configured anchor, using
    the checkpoint's penultimate embeddings on the test split."""
    if not config.eval.anchors:
        raise CommandError("analyze needs a non-empty eval.anchors list")
    out = _out(config)
    _, _, test_path = _dataset_paths(config)
    test_data = load_csv(test_path, config.support)
    model, _, _, _ = _load_checkpoint_or_fail(config)
    _, embeddings, _, _ = forward_batch(model, test_data.features_matrix())
    outputs = []
    for anchor in config.eval.anchors:
        curve = anchor_similarity_curve(embeddings, test_data.labels_array(),
                                        anchor, config.support,
                                        config.eval.similarity_aggregation)
        path = out / f"similarity_anchor_{anchor}.csv"
        curve.to_csv(path)
        outputs.append(path)
    return outputs


def _run_arm(config: ExperimentConfig, arm: str, sav: bool, saw: bool,
             seed: int, arm_dir: Path) -> dict:
    sub = ExperimentConfig.from_dict(config.canonical_dict())
    sub.seed = seed
    sub.out_dir = str(arm_dir)
    sub.ablation.sav = sav
    sub.ablation.saw = saw
    sub.ablation.loss_mode = None
    cmd_gen_data(sub)
    cmd_stage(sub)
    cmd_train(sub)
    cmd_eval(sub)
    with open(arm_dir / "metrics.json", encoding="utf-8") as fh:
        metrics = json.load(fh)
    cs_first = next(iter(metrics["cs"].values())) if metrics["cs"] else ""
    return {"arm": arm, "sav": int(sav), "saw": int(saw), "seed": seed,
            "test_mae": metrics["mae"], "test_cs": cs_first}


def cmd_run_ablation(config: ExperimentConfig) -> list[Path]:
    """Run all four sav/saw arm combinations over the configured seeds and
    emit one comparison CSV (per-seed rows plus per-arm means)."""
    if config.data.synthetic is None:
        raise CommandError("run-ablation needs a data.synthetic section")
    out = _out(config)
    seeds = config.ablation.seeds or tuple(config.seed + i for i in range(5))
    rows = []
    for arm, sav, saw in ABLATION_ARMS:
        for seed in seeds:
            arm_dir = out / "ablation" / arm / f"seed_{seed}"
            arm_dir.mkdir(parents=True, exist_ok=True)
            rows.append(_run_arm(config, arm, sav, saw, seed, arm_dir))
    path = out / "ablation.csv"
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["arm", "sav", "saw", "seed", "test_mae", "test_cs"])
        for r in rows:
            writer.writerow([r["arm"], r["sav"], r["saw"], r["seed"],
                             repr(float(r["test_mae"])), repr(float(r["test_cs"]))])
        for arm, sav, saw in ABLATION_ARMS:
            maes = [r["test_mae"] for r in rows if r["arm"] == arm]
            css = [r["test_cs"] for r in rows if r["arm"] == arm]
            writer.writerow([arm, int(sav), int(saw), "mean",
                             repr(float(np.mean(maes))), repr(float(np.mean(css)))])
    return [path]


COMMANDS = {
    "gen-data": cmd_gen_data,
    "stage": cmd_stage,
    "train": cmd_train,
    "eval": cmd_eval,
    "analyze": cmd_analyze,
    "run-ablation": cmd_run_ablation,
}


def _write_run_meta(config: ExperimentConfig, command: str, status: str,
                    outputs: list[Path], started: float) -> None:
    meta = {
        "meta_version": META_VERSION,
        "command": command,
        "config_sha256": config.sha256(),
        "package_version": __version__,
        "status": status,
        "outputs": [str(p) for p in outputs],
        "started_at_unix": started,
        "wall_seconds": time.time() - started,
    }
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "run_meta.json", "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2)
        fh.write("\n")


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="saldl",
        description="Stage-wise adaptive label distribution learning experiments")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="experiment config JSON")
        p.add_argument("--seed", type=int, default=None, help="override config seed")
        p.add_argument("--out", default=None, help="override output directory")
    args = parser.parse_args(argv)

    started = time.time()
    try:
        config = load_config(args.config, args.seed, args.out)
    except (SaldlError, CommandError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1

    outputs: list[Path] = []
    try:
        outputs = COMMANDS[args.command](config)
    except SaldlError as exc:
        _write_run_meta(config, args.command, "partial", outputs, started)
        print(f"error: {exc}", file=sys.stderr)
        return 1
    missing = [p for p in outputs if not Path(p).exists()]
    if missing:
        _write_run_meta(config, args.command, "partial", outputs, started)
        print(f"error: outputs missing: {missing}", file=sys.stderr)
        return 1
    _write_run_meta(config, args.command, "complete", outputs, started)
    for p in outputs:
        print(p)
    return 0


if __name__ == "__main__":
    sys.exit(main())
