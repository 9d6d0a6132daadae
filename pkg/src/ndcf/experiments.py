"""Evaluation loops shared by the CLI, the scripts and the acceptance suite."""

from __future__ import annotations

import itertools
import time
from dataclasses import dataclass, replace

import numpy as np

from .datagen import HALF, Interaction, inject_wrench_noise, render_partial_cloud, ring_cameras
from .fields import FieldModel
from .geometry import EvalRecord, NoSurfaceError, aggregate, chamfer, voxel_downsample
from .pipeline import (InferenceConfig, InferenceResult, Reconstruction, default_grid, evaluate_reconstruction,
                       infer_latent, reconstruct)

DEFAULT_VIEWS = (0, 4)  # two opposite cameras of the ring


def partial_cloud(inter: Interaction, views=DEFAULT_VIEWS, n_cameras: int = 8) -> np.ndarray:
    return render_partial_cloud(inter.deformed, ring_cameras(n_cameras), list(views))


@dataclass
class Prediction:
    inference: InferenceResult
    reconstruction: Reconstruction | None  # None when no surface was found
    record: EvalRecord | None
    seconds: float


def predict(model: FieldModel, inter: Interaction, config: InferenceConfig = InferenceConfig(),
            views=DEFAULT_VIEWS, wrench=None, cloud=None, eval_seed: int = 0,
            n_iou: int = 100_000, grid_resolution: int = 64) -> Prediction:
    """Infer a code from a partial view plus wrench, reconstruct and score."""
    t0 = time.perf_counter()
    cloud = partial_cloud(inter, views) if cloud is None else cloud
    w = inter.wrench if wrench is None else wrench
    inf = infer_latent(model, cloud, w, config)
    try:
        rec = reconstruct(model, inf.phi, inf.psi, default_grid(grid_resolution), config.eps, seed=config.seed)
    except NoSurfaceError:
        return Prediction(inf, None, None, time.perf_counter() - t0)
    seconds = time.perf_counter() - t0
    return Prediction(inf, rec, evaluate_reconstruction(rec, inter, eval_seed, n_iou=n_iou), seconds)


def bottom_face_patch(n: int = 2_500) -> np.ndarray:
    """The trivial patch guess: the whole nominal contact face on a regular grid."""
    k = int(round(np.sqrt(n)))
    u = (np.arange(k) + 0.5) / k * 2 * HALF - HALF
    X, Y = np.meshgrid(u, u, indexing="ij")
    return np.stack([X.ravel(), Y.ravel(), np.full(k * k, -HALF)], axis=1)


def patch_cd(pred: np.ndarray, gt: np.ndarray, seed: int = 0, n: int = 300) -> float | None:
    """Chamfer between voxel-downsampled patches; None when either is empty."""
    if len(pred) == 0 or len(gt) == 0:
        return None
    a, _ = voxel_downsample(pred, n, np.random.default_rng(seed))
    b, _ = voxel_downsample(gt, n, np.random.default_rng(seed))
    return chamfer(a, b)


def summarize(records: list[EvalRecord | None]) -> dict:
    ok = [r for r in records if r is not None]
    return {
        "n": len(records),
        "surface_cd": aggregate([r.surface_cd for r in ok]),
        "iou": aggregate([r.iou for r in ok]),
        "patch_cd": aggregate([r.patch_cd for r in ok]),
        "patch_predicted_pct": 100.0 * sum(r.patch_predicted for r in ok) / max(len(records), 1),
    }


def sweep(model: FieldModel, items: list[Interaction], etas, epss, steps, seed: int = 0,
          views=DEFAULT_VIEWS, n_iou: int = 20_000, grid_resolution: int = 64) -> tuple[list[dict], dict]:
    """Grid search over inference settings, scored by mean patch CD.

    Cells where no example produced a patch score +inf.  Ties keep the
    first cell in grid order.
    """
    grid = list(itertools.product(etas, epss, steps))
    if not grid:
        raise ValueError("the sweep grid is empty")
    rows = []
    for eta, eps, n_steps in grid:
        cfg = InferenceConfig(eta=float(eta), eps=float(eps), steps=int(n_steps), seed=seed)
        cds = []
        for inter in items:
            p = predict(model, inter, cfg, views, n_iou=n_iou, grid_resolution=grid_resolution)
            if p.record is not None and p.record.patch_cd is not None:
                cds.append(p.record.patch_cd)
        score = float(np.mean(cds)) if cds else float("inf")
        rows.append({"eta": float(eta), "eps": float(eps), "steps": int(n_steps),
                     "patch_cd": score, "n_with_patch": len(cds)})
    best = min(rows, key=lambda r: r["patch_cd"])
    return rows, best


def ablate_noise(model: FieldModel, items: list[Interaction], ps, noise_seeds,
                 config: InferenceConfig = InferenceConfig(), views=DEFAULT_VIEWS,
                 n_iou: int = 20_000, grid_resolution: int = 64) -> list[dict]:
    """Metrics with noisy wrench inputs, one row per noise level p.

    The noise stream for (example, seed) is the same at every p, and p = 0
    passes the wrench through unchanged.
    """
    clouds = [partial_cloud(it, views) for it in items]
    rows = []
    for p in ps:
        recs, patch = [], []
        for s in noise_seeds:
            for j, (it, cloud) in enumerate(zip(items, clouds)):
                w = inject_wrench_noise(it.wrench, p, [int(s), j])
                pr = predict(model, it, config, views, wrench=w, cloud=cloud, n_iou=n_iou,
                             grid_resolution=grid_resolution)
                recs.append(pr.record)
                if pr.record is not None and pr.record.patch_cd is not None:
                    patch.append(pr.record.patch_cd)
        summ = summarize(recs)
        rows.append({"p": float(p), "surface_cd_mean": summ["surface_cd"].get("mean"),
                     "patch_predicted_pct": summ["patch_predicted_pct"],
                     "patch_cd_mean": summ["patch_cd"].get("mean"),
                     "patch_cd_median": summ["patch_cd"].get("median"),
                     "records": [r.as_dict() if r is not None else None for r in recs]})
    return rows
