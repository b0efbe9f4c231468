"""End-to-end runs: dataset assembly, training, evaluation, comparison, export."""

import json
import logging
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import data as D
from .checkpoint import capture, load_checkpoint, restore, save_checkpoint
from .errors import ConfigError, InvalidInputError
from .evaluation import build_report, predict_scores
from .models import build_from_descriptor, build_generator, build_target
from .objectives import confidence_of
from .trainer import GanSnapshotStore, export_attack_samples, train

log = logging.getLogger(__name__)

ABSTAIN = "ABSTAIN"


# ----------------------------------------------------------------------
# datasets


def _load_one(spec, default_name):
    kind = spec["type"]
    name = spec.get("name", default_name)
    if kind == "blobs":
        ds = D.synth_blobs(spec.get("n_classes", 3), spec.get("per_class", 100),
                           spec.get("spread", 0.1), spec.get("seed", 0),
                           spec.get("extent", 2.0))
    elif kind == "ring":
        ds = D.synth_ood_ring(spec.get("count", 200), tuple(spec.get("radius_range", (1.5, 1.9))),
                              spec.get("seed", 0), spec.get("extent", 2.0),
                              spec.get("blob_radius", D.blob_region_radius(0.1)))
    elif kind == "idx":
        ds = D.load_idx(spec["images"], spec.get("labels"), name, spec.get("n_classes"),
                        spec.get("limit"))
        if spec.get("first_channel"):
            ds = replace(ds, samples=D.first_channel(ds.samples))
    elif kind == "signals":
        ds = D.load_raw_signals(spec["path"], spec.get("channels", 2), spec.get("labels"),
                                name, spec.get("n_classes"), spec.get("class_names"))
    else:
        raise ConfigError(f"unknown dataset type {kind!r}")
    if spec.get("limit") and kind != "idx":
        ds = ds.subset(slice(0, spec["limit"]))
    return replace(ds, name=name)


def normalization_of(cfg):
    """How raw inputs are mapped onto [-1, 1] for this run's training data."""
    spec = cfg.data["train"]
    if spec["type"] in ("blobs", "ring"):
        return {"kind": "box", "extent": spec.get("extent", 2.0)}
    return {"kind": "minmax"}


def apply_normalization(norm, samples):
    if norm["kind"] == "box":
        return D.normalize_box(samples, norm["extent"])
    return D.normalize_minmax(samples)


def load_datasets(cfg):
    """``(train, val, [ood...])`` as described by ``cfg.data``."""
    spec = cfg.data
    train_set = _load_one(spec["train"], "train")
    if "val" in spec:
        val_set = _load_one(spec["val"], "val")
    else:
        train_set, val_set = D.split_dataset(train_set, D.SplitSpec.from_dict(spec["split"]))
    oods = []
    exclude = spec.get("exclude_classes", [])
    for i, ood_spec in enumerate(spec.get("ood", [])):
        ds = _load_one(ood_spec, f"ood{i}")
        names = ood_spec.get("exclude_classes", exclude)
        if names and ds.labeled:
            ds = D.exclude_classes(ds, names)
        oods.append(replace(ds, labels=None, n_classes=None))
    return train_set, val_set, oods


def build_models(cfg, train_set):
    target_cfg = cfg.target
    if train_set.n_classes and train_set.n_classes != target_cfg.n_classes:
        raise ConfigError(f"target has {target_cfg.n_classes} classes, training data has "
                          f"{train_set.n_classes}")
    target = build_target(target_cfg)
    generator = build_generator(cfg.generator, target)
    return target, generator


# ----------------------------------------------------------------------
# train / eval / export


def out_dirs(out):
    out = Path(out)
    dirs = {name: out / name for name in
            ("checkpoints", "logs", "reports", "histograms", "attacks")}
    for d in dirs.values():
        d.mkdir(parents=True, exist_ok=True)
    return dirs


def run_train(cfg, out=None):
    """Train per ``cfg`` and write checkpoint, log, snapshot store and attacks."""
    dirs = out_dirs(out or cfg.out)
    train_set, val_set, _ = load_datasets(cfg)
    target, generator = build_models(cfg, train_set)
    log.info("training %s: target %d params, generator %d params", cfg.mode,
             target.num_parameters(), generator.num_parameters())
    result = train(target, generator, train_set, val_set, cfg.schedule, cfg.diversity)
    restore(target, result.best)
    best = capture(target, result.best.epoch, "target-best", {
        "normalization": normalization_of(cfg),
        "sample_shape": list(train_set.sample_shape),
        "mode": cfg.mode,
    })
    save_checkpoint(dirs["checkpoints"] / "target_best.ckpt", best)
    result.log.save(dirs["logs"] / "train_log.csv", include_timing=cfg.log_timing)
    if len(result.store):
        result.store.save(dirs["checkpoints"] / "gan")
        samples = export_attack_samples(result.store, generator, cfg.export_count, cfg.seed)
        write_attacks(dirs["attacks"], samples, cfg.target)
    return target, result


def load_target(cfg, checkpoint_path):
    path = Path(checkpoint_path)
    if not path.exists():
        raise ConfigError(f"checkpoint {path} does not exist")
    ckpt = load_checkpoint(path)
    if ckpt.architecture.get("role") != "target":
        raise ConfigError(f"{path} is not a target-model checkpoint")
    stored = dict(ckpt.architecture["config"])
    wanted = cfg.target.to_dict()
    stored.pop("seed", None)
    wanted.pop("seed", None)
    if stored != wanted:
        diff = sorted(k for k in wanted if stored.get(k) != wanted[k])
        raise ConfigError(f"checkpoint architecture differs from config in {diff}")
    return restore(build_from_descriptor(ckpt.architecture), ckpt), ckpt


def run_eval(cfg, checkpoint_path, out=None):
    dirs = out_dirs(out or cfg.out)
    model, _ = load_target(cfg, checkpoint_path)
    _, val_set, oods = load_datasets(cfg)
    id_set = _load_one(cfg.data["test"], "test") if "test" in cfg.data else val_set
    report = build_report(model, id_set, oods, cfg.methods, cfg.mcdropout,
                          conf_thresholds=(cfg.threshold,), tpr_targets=(0.90,))
    write_report(dirs, report)
    return report


def write_report(dirs, report):
    (dirs["reports"] / "eval.json").write_text(report.to_json())
    (dirs["reports"] / "eval.csv").write_text(report.to_csv())
    for (method, name), text in report.histogram_csvs().items():
        (dirs["histograms"] / f"{method}_{name}.csv").write_text(text)


def pgm_grid(samples, columns=8, pad=1):
    """Tile [count, 1, H, W] samples in [-1, 1] into a binary 8-bit PGM image."""
    count, _, h, w = samples.shape
    rows = -(-count // columns)
    canvas = np.zeros((rows * (h + pad) + pad, columns * (w + pad) + pad), dtype=np.uint8)
    pixels = np.round((np.clip(samples[:, 0], -1, 1) + 1.0) * 127.5).astype(np.uint8)
    for i in range(count):
        r, c = divmod(i, columns)
        y, x = pad + r * (h + pad), pad + c * (w + pad)
        canvas[y:y + h, x:x + w] = pixels[i]
    header = f"P5\n{canvas.shape[1]} {canvas.shape[0]}\n255\n".encode("ascii")
    return header + canvas.tobytes()


def write_attacks(directory, samples, target_cfg):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    np.save(directory / "attacks.npy", samples)
    if target_cfg.kind == "conv" and target_cfg.ndim == 2 and samples.shape[1] == 1:
        (directory / "attacks.pgm").write_bytes(pgm_grid(samples))


def run_export(cfg, out=None, count=None, seed=None):
    """Export attacks from the snapshot store written by a previous training run."""
    out = Path(out or cfg.out)
    store = GanSnapshotStore.load(out / "checkpoints" / "gan")
    if not len(store):
        raise ConfigError(f"no generator snapshots under {out / 'checkpoints' / 'gan'}")
    generator = build_from_descriptor(store.entries[0].architecture)
    samples = export_attack_samples(store, generator, count or cfg.export_count,
                                    cfg.seed if seed is None else seed)
    write_attacks(out / "attacks", samples, cfg.target)
    return samples


# ----------------------------------------------------------------------
# inference with abstention


def abstain_decisions(confidences, predictions, threshold):
    """Decision per sample, or ``None`` (abstain) when confidence < threshold."""
    return [int(p) if c >= threshold else None for p, c in zip(predictions, confidences)]


def read_input(path, sample_shape):
    path = Path(path)
    try:
        if path.suffix == ".npy":
            arr = np.load(path, allow_pickle=False)
        elif path.suffix == ".json":
            arr = np.asarray(json.loads(path.read_text()), dtype=np.float64)
        else:
            arr = np.loadtxt(path, delimiter=",", ndmin=2)
    except (OSError, ValueError) as exc:
        raise InvalidInputError(f"cannot parse {path}: {exc}") from exc
    arr = np.asarray(arr, dtype=np.float64)
    if arr.shape == tuple(sample_shape):
        arr = arr[None]
    if arr.shape[1:] != tuple(sample_shape):
        raise InvalidInputError(f"input shape {arr.shape} does not match sample shape "
                                f"{tuple(sample_shape)}")
    return arr


def run_infer(cfg, checkpoint_path, input_path, method="mcp"):
    """``[(decision or None, confidence)]`` for every sample of the input file."""
    model, ckpt = load_target(cfg, checkpoint_path)
    shape = ckpt.meta.get("sample_shape")
    if shape is None:
        raise ConfigError("checkpoint does not record the sample shape")
    raw = read_input(input_path, shape)
    norm = ckpt.meta.get("normalization", {"kind": "minmax"})
    samples = apply_normalization(norm, raw)
    conf = confidence_of(predict_scores(model, samples, method, cfg.mcdropout))
    decisions = abstain_decisions(conf.confidence, conf.class_index, cfg.threshold)
    return list(zip(decisions, conf.confidence.tolist()))


# ----------------------------------------------------------------------
# standard vs. trustgan


def summarize(report):
    out = {}
    for method, block in report.methods.items():
        out[method] = {
            "accuracy_id": block.id.accuracy_id,
            "mean_loss_id": block.id.mean_loss_id,
            "mean_conf_ood": {k: v.mean_conf_ood for k, v in block.ood.items()},
            "fpr_ood_at_conf": {k: v.fpr_ood_at_conf for k, v in block.ood.items()},
        }
    return out


def run_compare(cfg, out=None):
    """Train both pipelines from the same seed and data; report side by side."""
    out = Path(out or cfg.out)
    reports = {}
    for mode in ("standard", "trustgan"):
        mode_cfg = replace(cfg, mode=mode, schedule=replace(
            cfg.schedule,
            epochs_target_alone=cfg.schedule.epochs if mode == "standard" else
            min(cfg.schedule.epochs_target_alone, cfg.schedule.epochs - 1)))
        run_train(mode_cfg, out / mode)
        reports[mode] = run_eval(mode_cfg, out / mode / "checkpoints" / "target_best.ckpt",
                                 out / mode)
    std, tg = summarize(reports["standard"]), summarize(reports["trustgan"])
    ratios = {}
    for method in std:
        ratios[method] = {
            name: (tg[method]["mean_conf_ood"][name] / value if value > 0 else None)
            for name, value in std[method]["mean_conf_ood"].items()
        }
    comparison = {"standard": std, "trustgan": tg, "ratio_mean_conf_ood": ratios}
    path = out / "reports" / "compare.json"
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(comparison, sort_keys=True, indent=2) + "\n")
    return comparison
