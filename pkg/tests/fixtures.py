"""Small synthetic fixtures shared by several test modules."""

import numpy as np

from ndcf import fields as fl
from ndcf.datagen import Interaction, SampleSet
from ndcf.geometry import box_mesh

TINY = fl.ModelConfig(latent_dim=4, o_hidden=(8, 8), e_hidden=(8,), d_hidden=(8,), t_hidden=(8, 8),
                      hyper_hidden=8, o_w0=3.0, target_w0=3.0)


def unit_rows(rng, n):
    v = rng.normal(size=(n, 3))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def tiny_interaction(rng, n_surface=8, n_off=12, n_nominal=10, code=0) -> Interaction:
    surf = rng.uniform(-23, 23, size=(n_surface, 3))
    off = rng.uniform(-30, 30, size=(n_off, 3))
    sdf = np.concatenate([np.zeros(n_surface), rng.uniform(-10, 10, size=n_off)])
    normals = np.concatenate([unit_rows(rng, n_surface), np.full((n_off, 3), np.nan)])
    contact = np.concatenate([(rng.uniform(size=n_surface) < 0.5).astype(float), np.zeros(n_off)])
    samples = SampleSet(np.concatenate([surf, off]), sdf, normals, contact)
    wrench = rng.normal(size=6) * np.array([1, 1, 3, 20, 20, 5])
    return Interaction(samples, wrench, rng.uniform(-23, 23, size=(n_nominal, 3)),
                       box_mesh([-23] * 3, [23] * 3), np.zeros((0, 3)), code=code, name=f"tiny{code}")
