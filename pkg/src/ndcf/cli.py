"""Command-line entry point: ``ndcf <subcommand> [options]``.

Exit codes: 0 success, 1 usage error, 2 data or version error, 3 numerical
failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import __version__
from .datagen import KINDS, GenConfig, PressError, generate_interaction, shape_samples
from .experiments import DEFAULT_VIEWS, ablate_noise, predict, summarize, sweep
from .fields import ModelConfig, init_model
from .geometry import evaluate
from .io import (ArchitectureMismatch, FormatError, load_checkpoint, load_split, prepare_dir, read_obj,
                 read_ply, save_checkpoint, save_dataset, write_obj, write_ply, _dump_json)
from .losses import LossWeights
from .pipeline import InferenceConfig, TrainConfig, TrainingDiverged, pretrain, train

log = logging.getLogger("ndcf")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


@dataclass
class RunConfig:
    profile: str = "desk"
    seed: int = 0
    model: ModelConfig = field(default_factory=ModelConfig.desk)
    train: TrainConfig = field(default_factory=TrainConfig.desk)
    inference: InferenceConfig = field(default_factory=InferenceConfig)
    weights: LossWeights = field(default_factory=LossWeights)
    gen: GenConfig = field(default_factory=GenConfig)
    per_kind: int = 20
    splits: tuple[float, float, float] = (0.70, 0.15, 0.15)
    views: tuple[int, ...] = DEFAULT_VIEWS
    sweep_eta: tuple[float, ...] = (1e-4, 1e-3, 1e-2, 1e-1)
    sweep_eps: tuple[float, ...] = (0.1, 0.2, 0.3, 0.5)
    sweep_steps: tuple[int, ...] = (50, 100, 200)
    noise_p: tuple[float, ...] = (0.0, 0.1, 0.5, 1.0)
    noise_seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    n_iou: int = 100_000
    grid_resolution: int = 64

    @classmethod
    def for_profile(cls, profile: str, seed: int = 0) -> "RunConfig":
        if profile == "desk":
            return cls(profile="desk", seed=seed)
        if profile == "paper":
            return cls(profile="paper", seed=seed, model=ModelConfig(), train=TrainConfig(),
                       per_kind=1000)
        raise UsageError(f"unknown profile {profile!r}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["model"] = self.model.to_dict()
        d["gen"] = self.gen.to_dict()
        return json.loads(json.dumps(d))

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        base = cls.for_profile(d.get("profile", "desk"), d.get("seed", 0))
        return base.merged(d)

    def merged(self, d: dict) -> "RunConfig":
        """Copy with the (possibly partial) settings in ``d`` applied."""
        cur = self.to_dict()
        for k, v in d.items():
            if k not in cur:
                raise UsageError(f"unknown config key {k!r}")
            if isinstance(cur[k], dict):
                unknown = set(v) - set(cur[k])
                if unknown:
                    raise UsageError(f"unknown keys in {k!r}: {sorted(unknown)}")
                cur[k] = {**cur[k], **v}
            else:
                cur[k] = v
        return RunConfig(
            profile=cur["profile"], seed=int(cur["seed"]),
            model=ModelConfig.from_dict(cur["model"]), train=TrainConfig.from_dict(cur["train"]),
            inference=InferenceConfig.from_dict(cur["inference"]),
            weights=LossWeights(**cur["weights"]), gen=GenConfig.from_dict(cur["gen"]),
            per_kind=int(cur["per_kind"]), splits=tuple(cur["splits"]), views=tuple(cur["views"]),
            sweep_eta=tuple(cur["sweep_eta"]), sweep_eps=tuple(cur["sweep_eps"]),
            sweep_steps=tuple(cur["sweep_steps"]), noise_p=tuple(cur["noise_p"]),
            noise_seeds=tuple(cur["noise_seeds"]), n_iou=int(cur["n_iou"]),
            grid_resolution=int(cur["grid_resolution"]))


def provenance(cfg: RunConfig, command: str, **extra) -> dict:
    return {"command": command, "code_version": __version__, "run_config": cfg.to_dict(), **extra}


# ---------------------------------------------------------------- commands


def split_counts(n: int, fractions) -> tuple[int, int, int]:
    n_train = int(round(fractions[0] * n))
    n_val = int(round(fractions[1] * n))
    return n_train, n_val, n - n_train - n_val


def cmd_datagen(cfg: RunConfig, out: Path, force: bool) -> dict:
    """``per_kind`` interactions of every environment kind, split 70/15/15 per kind."""
    prepare_dir(out, force)
    splits = {"train": [], "val": [], "test": []}
    pruned = []
    index = 0
    for kind in KINDS:
        got = []
        while len(got) < cfg.per_kind:
            try:
                inter = generate_interaction(kind, cfg.seed, index, cfg.gen)
            except PressError as e:
                pruned.append({"index": index, "kind": kind, "reason": str(e)})
                log.info("skipped interaction %d (%s): %s", index, kind, e)
            else:
                if inter.flagged:
                    pruned.append({"index": index, "kind": kind, "reason": "contact area below threshold"})
                    log.info("pruned interaction %d (%s): contact area below threshold", index, kind)
                else:
                    got.append(inter)
            index += 1
        a, b, _ = split_counts(len(got), cfg.splits)
        splits["train"] += got[:a]
        splits["val"] += got[a:a + b]
        splits["test"] += got[a + b:]
    save_dataset(out, splits, provenance(cfg, "datagen", generator=cfg.gen.to_dict(),
                                         pruned=pruned), force=True)
    return {k: len(v) for k, v in splits.items()}


def cmd_pretrain(cfg: RunConfig, out: Path, force: bool) -> dict:
    prepare_dir(out, force)
    tc = cfg.train
    held = shape_samples("cube", np.random.default_rng([cfg.seed, 99]), 20_000, 10_000)

    def draw(rng):
        return shape_samples("cube", rng, tc.pretrain_n_off, tc.pretrain_n_surface)

    res = pretrain(draw, replace_seed(tc, cfg.seed), model_config=cfg.model, held_out=held,
                   weights=cfg.weights, report_every=max(tc.pretrain_epochs // 20, 1))
    # wall-clock times stay in the log so the checkpoint is reproducible byte for byte
    history = [{k: v for k, v in h.items() if k != "seconds"} for h in res.history]
    save_checkpoint(out, res.model, provenance(cfg, "pretrain", held_out_error_mm=res.held_out_error,
                                                history=history), force=True)
    return {"held_out_error_mm": res.held_out_error}


def replace_seed(tc: TrainConfig, seed: int) -> TrainConfig:
    return replace(tc, seed=seed)


def cmd_train(cfg: RunConfig, data: Path, checkpoint: Path, out: Path, force: bool) -> dict:
    prepare_dir(out, force)
    pre, _ = load_checkpoint(checkpoint, expect=cfg.model)
    items = load_split(data, "train")
    log_path = out / "train_log.jsonl"
    lines = []

    def on_epoch(rec):
        lines.append(json.dumps(rec, sort_keys=True))
        log.info("epoch %d total %.6g", rec["epoch"], rec["total"])

    model = init_model(cfg.model, seed=cfg.seed)
    model.params["O"] = pre.params["O"]
    model.o_frozen = pre.o_frozen
    res = train(items, model, replace_seed(cfg.train, cfg.seed), cfg.weights, on_epoch)
    save_checkpoint(out / "checkpoint", res.model, provenance(
        cfg, "train", codes=[it.name for it in res.interactions], epochs=cfg.train.train_epochs))
    log_path.write_text("\n".join(lines) + "\n")
    return {"final_total": res.history[-1]["total"], "epochs": len(res.history) - 1}


def cmd_infer(cfg: RunConfig, data: Path, checkpoint: Path, out: Path, force: bool, split: str) -> dict:
    prepare_dir(out, force)
    model, _ = load_checkpoint(checkpoint, expect=cfg.model)
    items = load_split(data, split)
    rows = []
    for inter in items:
        p = predict(model, inter, cfg.inference, cfg.views, n_iou=cfg.n_iou,
                    grid_resolution=cfg.grid_resolution)
        d = out / inter.name
        d.mkdir()
        row = {"name": inter.name, "seconds": p.seconds,
               "inference_seconds": p.inference.seconds,
               "objective": p.inference.objective,
               "initial_objective": p.inference.initial_objective,
               "phi": p.inference.phi.tolist(), "psi": p.inference.psi.tolist(),
               "surface_found": p.reconstruction is not None}
        if p.reconstruction is not None:
            write_obj(d / "mesh.obj", p.reconstruction.mesh)
            write_ply(d / "patch.ply", p.reconstruction.patch.points, p.reconstruction.patch.probs)
            row["metrics"] = p.record.as_dict()
        rows.append(row)
        log.info("%s: %.2fs", inter.name, p.seconds)
    _dump_json(provenance(cfg, "infer", split=split, checkpoint=str(checkpoint), examples=rows),
               out / "predictions.json")
    secs = [r["seconds"] for r in rows]
    return {"n": len(rows), "mean_seconds": float(np.mean(secs)) if secs else None}


def cmd_eval(cfg: RunConfig, data: Path, predictions: Path, out: Path, force: bool, split: str) -> dict:
    """Score saved predictions (mesh.obj + patch.ply per example) against ground truth."""
    prepare_dir(out, force)
    items = load_split(data, split)
    records = []
    per_example = []
    for inter in items:
        d = predictions / inter.name
        if not (d / "mesh.obj").exists():
            records.append(None)
            per_example.append({"name": inter.name, "surface_found": False})
            continue
        patch, _ = read_ply(d / "patch.ply") if (d / "patch.ply").exists() else (np.zeros((0, 3)), None)
        rec = evaluate(read_obj(d / "mesh.obj"), patch, inter.deformed, inter.gt_patch,
                       seed=cfg.seed, n_iou=cfg.n_iou)
        records.append(rec)
        per_example.append({"name": inter.name, **rec.as_dict()})
    summary = summarize(records)
    _dump_json(provenance(cfg, "eval", split=split, summary=summary, examples=per_example,
                          boxplot={"surface_cd": [r.surface_cd for r in records if r],
                                   "patch_cd": [r.patch_cd for r in records if r and r.patch_cd is not None]}),
               out / "metrics.json")
    (out / "table.txt").write_text(format_table(summary))
    return summary


def format_table(summary: dict) -> str:
    lines = [f"{'metric':<12}{'mean':>12}{'std':>12}{'median':>12}{'q1':>12}{'q3':>12}"]
    for k in ("surface_cd", "iou", "patch_cd"):
        a = summary[k]
        if a.get("n", 0) == 0:
            lines.append(f"{k:<12}{'n/a':>12}")
            continue
        lines.append(f"{k:<12}" + "".join(f"{a[s]:>12.4f}" for s in ("mean", "std", "median", "q1", "q3")))
    lines.append(f"patch predicted: {summary['patch_predicted_pct']:.1f}% of {summary['n']}")
    return "\n".join(lines) + "\n"


def cmd_sweep(cfg: RunConfig, data: Path, checkpoint: Path, out: Path, force: bool) -> dict:
    prepare_dir(out, force)
    if not (cfg.sweep_eta and cfg.sweep_eps and cfg.sweep_steps):
        raise UsageError("the sweep grid is empty")
    model, _ = load_checkpoint(checkpoint, expect=cfg.model)
    rows, best = sweep(model, load_split(data, "val"), cfg.sweep_eta, cfg.sweep_eps,
                       cfg.sweep_steps, cfg.seed, cfg.views, cfg.n_iou, cfg.grid_resolution)
    _dump_json(provenance(cfg, "sweep", rows=rows, best=best), out / "sweep.json")
    return best


def cmd_ablate_noise(cfg: RunConfig, data: Path, checkpoint: Path, out: Path, force: bool,
                     split: str) -> dict:
    prepare_dir(out, force)
    model, _ = load_checkpoint(checkpoint, expect=cfg.model)
    rows = ablate_noise(model, load_split(data, split), cfg.noise_p, cfg.noise_seeds,
                        cfg.inference, cfg.views, cfg.n_iou, cfg.grid_resolution)
    _dump_json(provenance(cfg, "ablate-noise", split=split, rows=rows), out / "ablation.json")
    table = [f"{'p':>6}{'surface CD':>14}{'patch %':>10}{'patch CD':>12}{'median':>12}"]
    for r in rows:
        table.append(f"{r['p']:>6.2f}{_fmt(r['surface_cd_mean']):>14}{r['patch_predicted_pct']:>10.1f}"
                     f"{_fmt(r['patch_cd_mean']):>12}{_fmt(r['patch_cd_median']):>12}")
    (out / "table.txt").write_text("\n".join(table) + "\n")
    return {"rows": [{k: v for k, v in r.items() if k != "records"} for r in rows]}


def _fmt(v) -> str:
    return "n/a" if v is None else f"{v:.4f}"


# ---------------------------------------------------------------- argument handling


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON file with RunConfig overrides")
    common.add_argument("--seed", type=int)
    common.add_argument("--profile", choices=("desk", "paper"), default=None)
    common.add_argument("--out", type=Path, required=True)
    common.add_argument("--force", action="store_true", help="overwrite a non-empty --out")
    common.add_argument("-v", "--verbose", action="store_true")

    p = _Parser(prog="ndcf", description="Neural deforming contact fields")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("datagen", parents=[common], help="generate a labelled dataset")
    sub.add_parser("pretrain", parents=[common], help="fit the nominal SDF")
    t = sub.add_parser("train", parents=[common], help="end-to-end training")
    t.add_argument("--data", type=Path, required=True)
    t.add_argument("--checkpoint", type=Path, required=True, help="pretrained checkpoint")
    for name in ("infer", "sweep", "ablate-noise"):
        s = sub.add_parser(name, parents=[common])
        s.add_argument("--data", type=Path, required=True)
        s.add_argument("--checkpoint", type=Path, required=True)
        if name != "sweep":
            s.add_argument("--split", default="test")
    e = sub.add_parser("eval", parents=[common], help="score saved predictions")
    e.add_argument("--data", type=Path, required=True)
    e.add_argument("--predictions", type=Path, required=True)
    e.add_argument("--split", default="test")
    return p


def resolve_config(args) -> RunConfig:
    file_cfg = {}
    if args.config is not None:
        try:
            file_cfg = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as e:
            raise UsageError(f"cannot read config {args.config}: {e}") from e
    profile = args.profile or file_cfg.get("profile", "desk")
    seed = args.seed if args.seed is not None else file_cfg.get("seed", 0)
    cfg = RunConfig.for_profile(profile, seed)
    file_cfg = {k: v for k, v in file_cfg.items() if k not in ("profile", "seed")}
    try:
        return cfg.merged(file_cfg)
    except (TypeError, ValueError) as e:
        raise UsageError(f"invalid config: {e}") from e


def run(argv=None) -> dict:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    cfg = resolve_config(args)
    c = args.command
    if c == "datagen":
        return cmd_datagen(cfg, args.out, args.force)
    if c == "pretrain":
        return cmd_pretrain(cfg, args.out, args.force)
    if c == "train":
        return cmd_train(cfg, args.data, args.checkpoint, args.out, args.force)
    if c == "infer":
        return cmd_infer(cfg, args.data, args.checkpoint, args.out, args.force, args.split)
    if c == "eval":
        return cmd_eval(cfg, args.data, args.predictions, args.out, args.force, args.split)
    if c == "sweep":
        return cmd_sweep(cfg, args.data, args.checkpoint, args.out, args.force)
    return cmd_ablate_noise(cfg, args.data, args.checkpoint, args.out, args.force, args.split)


def main(argv=None) -> int:
    try:
        result = run(argv)
    except UsageError as e:
        print(f"ndcf: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except FileExistsError as e:
        print(f"ndcf: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except ArchitectureMismatch as e:
        print(f"ndcf: error: {e}", file=sys.stderr)
        return EXIT_DATA
    except (FormatError, FileNotFoundError) as e:
        print(f"ndcf: data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except (TrainingDiverged, FloatingPointError) as e:
        print(f"ndcf: numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    print(json.dumps(result, indent=2, sort_keys=True, default=float))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
