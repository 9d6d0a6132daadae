"""Overfit run: train on a handful of desk interactions and score every one.

Needs a pretrained checkpoint (see pretrain_surrogate.py).  Prints surface
CD against the untrained model, IoU and contact balanced accuracy per
interaction, and writes the trained checkpoint.

    python3 scripts/overfit.py --pretrained runs/pre --out runs/overfit
"""

import argparse
import json
import logging
import time
from pathlib import Path

import numpy as np

from ndcf import datagen as dg
from ndcf import fields as fl
from ndcf import io
from ndcf import pipeline as pl


def balanced_accuracy(pred, truth):
    tpr = (pred & truth).sum() / truth.sum() if truth.any() else 1.0
    tnr = (~pred & ~truth).sum() / (~truth).sum() if (~truth).any() else 1.0
    return 0.5 * (tpr + tnr)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--pretrained", type=Path, required=True)
    ap.add_argument("--out", type=Path, required=True)
    ap.add_argument("--n", type=int, default=10)
    ap.add_argument("--epochs", type=int, default=200)
    ap.add_argument("--steps-per-interaction", type=int, default=8)
    ap.add_argument("--augment", type=int, default=1)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    items, i = [], 0
    while len(items) < args.n:
        it = dg.generate_interaction(dg.KINDS[i % 3], args.seed, i)
        if not it.flagged:
            items.append(it)
        i += 1
    pre, _ = io.load_checkpoint(args.pretrained)
    model = fl.init_model(pre.config, seed=args.seed)
    model.params["O"] = pre.params["O"]
    model.o_frozen = True
    cfg = pl.TrainConfig.desk(train_epochs=args.epochs, steps_per_interaction=args.steps_per_interaction,
                              augment=args.augment, seed=args.seed)
    def progress(rec):
        if rec["epoch"] % 10 == 0:
            logging.info("%s", rec)

    t0 = time.perf_counter()
    res = pl.train(items, model, cfg, on_epoch=progress)
    print(f"training took {time.perf_counter() - t0:.0f} s")
    io.save_checkpoint(args.out, res.model, {"history": res.history}, force=True)

    start = model.copy()
    start.codes = np.random.default_rng([cfg.seed, 2]).normal(0.0, cfg.code_std, size=res.model.codes.shape)
    rows = []
    for inter in res.interactions:
        if "@rz" in inter.name:
            continue
        cds = []
        for m in (start, res.model):
            psi = fl.encode_wrench(m, inter.wrench)
            rec = pl.reconstruct(m, m.codes[inter.code], psi)
            cds.append(pl.evaluate_reconstruction(rec, inter, n_iou=20_000))
        surf = inter.samples.on_surface
        c = fl.contact_prob(res.model, inter.samples.points[surf], res.model.codes[inter.code],
                            fl.encode_wrench(res.model, inter.wrench)) > 0.5
        row = {"name": inter.name, "cd_start": cds[0].surface_cd, "cd": cds[1].surface_cd,
               "iou": cds[1].iou, "patch_cd": cds[1].patch_cd,
               "contact_bal_acc": float(balanced_accuracy(c, inter.samples.contact[surf] > 0.5))}
        rows.append(row)
        print(json.dumps(row))
    (args.out / "overfit_metrics.json").write_text(json.dumps(rows, indent=2))


if __name__ == "__main__":
    main()
