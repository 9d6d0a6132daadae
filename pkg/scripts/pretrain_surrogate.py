"""Pretrain the nominal SDF network on analytic cube samples and report held-out error.

    python3 scripts/pretrain_surrogate.py --lr 1e-5 --epochs 5000 --out runs/pre
"""

import argparse
import logging
from pathlib import Path

import numpy as np

from ndcf import datagen as dg
from ndcf import fields as fl
from ndcf import io
from ndcf import pipeline as pl


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--lr", type=float, default=1e-4)
    ap.add_argument("--epochs", type=int, default=5_000)
    ap.add_argument("--w0", type=float, default=None, help="SIREN frequency (desk default if omitted)")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", type=Path, required=True)
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    cfg = pl.TrainConfig.desk(pretrain_lr=args.lr, pretrain_epochs=args.epochs, seed=args.seed)
    mc = fl.ModelConfig.desk(**({"o_w0": args.w0} if args.w0 else {}))
    held = dg.shape_samples("cube", np.random.default_rng(999), 20_000, 10_000)
    res = pl.pretrain(lambda rng: dg.shape_samples("cube", rng, cfg.pretrain_n_off, cfg.pretrain_n_surface),
                      cfg, model_config=mc, held_out=held, report_every=max(args.epochs // 20, 1))
    io.save_checkpoint(args.out, res.model, {"held_out_error_mm": res.held_out_error}, force=True)
    print(f"held-out mean |SDF error| {res.held_out_error:.4f} mm "
          f"({res.held_out_error / dg.HALF:.2e} x half extent)")


if __name__ == "__main__":
    main()
