"""Training objectives.

Network-space quantities (SDF values, deformations, Chamfer terms) are in
model units, i.e. millimetres divided by ``ModelConfig.length_scale``.  The
Chamfer helpers also accept plain arrays and then return floats, which is
how the millimetre-space evaluation metrics use them.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields

import numpy as np
from scipy.spatial import cKDTree

from . import diffcore as dc
from .diffcore import Value

BCE_CLAMP = 1e-7


@dataclass(frozen=True)
class LossWeights:
    alpha: float = 1e-3  # embedding
    beta: float = 1.0  # deformation magnitude
    omega: float = 0.01  # nominal-surface chamfer
    gamma: float = 0.1  # contact BCE
    xi: float = 0.01  # normal alignment
    zeta: float = 1e-6  # hypernetwork output regularizer

    def __post_init__(self):
        for f in fields(self):
            if getattr(self, f.name) < 0:
                raise ValueError(f"loss weight {f.name} must be non-negative")


@dataclass
class LossBreakdown:
    """Unweighted terms plus their weighted total."""

    sdf: float
    normal: float
    embedding: float
    deform: float
    chamfer: float
    contact: float
    hyper: float
    weights: LossWeights
    total: float = 0.0

    def __post_init__(self):
        self.total = weighted_total(self, self.weights)

    def terms(self) -> dict[str, float]:
        return {k: getattr(self, k) for k in TERMS}

    def as_dict(self) -> dict:
        d = self.terms()
        d["total"] = self.total
        return d


TERMS = ("sdf", "normal", "embedding", "deform", "chamfer", "contact", "hyper")


def _coefficients(w: LossWeights) -> dict[str, float]:
    return {"sdf": 1.0, "normal": w.xi, "embedding": w.alpha, "deform": w.beta,
            "chamfer": w.omega, "contact": w.gamma, "hyper": w.zeta}


def weighted_total(terms, w: LossWeights):
    """Weighted sum in a fixed term order; works on floats and Values."""
    coef = _coefficients(w)
    get = terms.get if isinstance(terms, dict) else (lambda k: getattr(terms, k))
    total = 0.0
    for k in TERMS:
        total = total + coef[k] * get(k)
    return total


# ---------------------------------------------------------------- chamfer


def _nearest(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Index into y of the nearest point to each row of x."""
    _, idx = cKDTree(y).query(x, k=1)
    return idx


def _sqdist(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    return ((x - y) ** 2).sum(axis=1)


def _check_cloud(c, name):
    shape = c.shape if isinstance(c, Value) else np.shape(c)
    if len(shape) != 2 or shape[1] != 3:
        raise ValueError(f"{name} must have shape (N, 3), got {shape}")
    if shape[0] == 0:
        raise ValueError(f"{name} is an empty point cloud")


def uni_chamfer(c, p):
    """Mean squared distance from each point of ``c`` to its nearest in ``p``."""
    _check_cloud(c, "first cloud")
    _check_cloud(p, "second cloud")
    if not isinstance(c, Value) and not isinstance(p, Value):
        c, p = np.asarray(c, np.float64), np.asarray(p, np.float64)
        return float(_sqdist(c, p[_nearest(c, p)]).mean())
    c, p = dc.as_value(c), dc.as_value(p)
    idx = _nearest(c.data, p.data)
    diff = c - dc.getitem(p, idx)
    return (diff * diff).sum(axis=1).mean()


def chamfer(p1, p2):
    """Symmetric Chamfer distance: sum of both mean squared nearest distances."""
    return uni_chamfer(p1, p2) + uni_chamfer(p2, p1)


def brute_chamfer(p1: np.ndarray, p2: np.ndarray) -> float:
    """O(N*M) double loop reference."""
    def one(a, b):
        tot = 0.0
        for x in a:
            best = np.inf
            for y in b:
                d = ((x - y) ** 2).sum()
                if d < best:
                    best = d
            tot += best
        return tot / len(a)

    return one(p1, p2) + one(p2, p1)


# ---------------------------------------------------------------- terms


def bce(prob: Value, label: np.ndarray) -> Value:
    p = dc.clip(prob, BCE_CLAMP, 1.0 - BCE_CLAMP)
    label = np.asarray(label, dtype=np.float64).reshape(p.shape)
    return -(label * dc.log(p) + (1.0 - label) * dc.log(1.0 - p)).mean()


def normal_alignment(grad_q: Value, normals: np.ndarray) -> Value:
    """Mean of 1 - <predicted gradient, unit normal>."""
    return (1.0 - (grad_q * normals).sum(axis=1)).mean()


# ---------------------------------------------------------------- model losses


@dataclass
class Batch:
    """One interaction's training rows, in model units.

    Surface rows come first: ``points[:n_surface]`` have s* = 0.
    """

    points: np.ndarray
    sdf: np.ndarray
    normals: np.ndarray  # (n_surface, 3)
    contact: np.ndarray  # (n_surface,)
    n_surface: int
    nominal_cloud: np.ndarray
    wrench: np.ndarray  # model units
    code: int = 0


def make_batch(samples, wrench_model: np.ndarray, nominal_cloud: np.ndarray, length_scale: float,
               rng: np.random.Generator | None = None, n_off: int | None = None,
               n_surface: int | None = None, n_nominal: int | None = None, code: int = 0,
               contact_fraction: float = 0.0) -> Batch:
    """Select rows (all of them when the counts are None) and convert to model units.

    With ``contact_fraction > 0`` a subsampled batch reserves that share of its
    surface rows for contact samples (as many as exist), so small patches are
    seen at every step.
    """
    surf = np.flatnonzero(samples.on_surface)
    off = np.flatnonzero(~samples.on_surface)
    if len(surf) == 0:
        raise ValueError("interaction has no surface samples; contact and normal terms are undefined")
    if rng is not None and n_surface is not None and n_surface < len(surf):
        pos = surf[samples.contact[surf] > 0.5]
        k = min(len(pos), int(np.ceil(contact_fraction * n_surface)))
        pick = rng.choice(pos, size=k, replace=False) if k else pos[:0]
        rest = np.setdiff1d(surf, pick, assume_unique=True)
        surf = np.concatenate([pick, rng.choice(rest, size=n_surface - k, replace=False)])
    elif rng is not None and n_surface is not None:
        surf = rng.permutation(surf)
    if rng is not None and n_off is not None and len(off):
        off = rng.choice(off, size=min(n_off, len(off)), replace=False)
    nom = nominal_cloud
    if rng is not None and n_nominal is not None and len(nom) > n_nominal:
        nom = nom[rng.choice(len(nom), size=n_nominal, replace=False)]
    normals = samples.normals[surf]
    if not np.all(np.isfinite(normals)):
        raise ValueError("surface sample without a normal")
    idx = np.concatenate([surf, off])
    return Batch(samples.points[idx] / length_scale, samples.sdf[idx] / length_scale,
                 normals, samples.contact[surf], len(surf), nom / length_scale,
                 np.asarray(wrench_model, dtype=np.float64), code)


def pretrain_terms(config, O, batch: Batch) -> dict[str, Value]:
    """L1 SDF error over all rows and normal misalignment over surface rows."""
    from .fields import nominal_sdf_v

    q = dc.as_value(batch.points)
    if not q.requires_grad:
        q = (O.tape if isinstance(O, Value) and O.tape is not None else dc.Tape()).var(batch.points)
    s = nominal_sdf_v(config, O, q)
    err = dc.vabs(dc.sub(s, batch.sdf[:, None])).mean()
    g = dc.grad_input(dc.getitem(s, slice(0, batch.n_surface)).sum(), q)
    normal = normal_alignment(dc.getitem(g, slice(0, batch.n_surface)), batch.normals)
    return {"sdf": err, "normal": normal}


def pretrain_sdf_loss(model, samples, weights: LossWeights = LossWeights()) -> float:
    """mean |O(q) - s*| + xi * mean(1 - <grad O, n*>) over the whole sample set.

    Evaluated in model units.
    """
    b = make_batch(samples, np.zeros(6), np.zeros((1, 3)), model.config.length_scale)
    t = dc.Tape()
    O = t.var(model.params["O"])
    terms = pretrain_terms(model.config, O, b)
    return float(terms["sdf"].data + weights.xi * terms["normal"].data)


def sdf_normal_loss(pred_sdf, pred_grad, samples, weights: LossWeights = LossWeights()) -> float:
    """The pretraining objective from precomputed predictions (same units as ``samples``).

    ``pred_grad`` is needed at surface rows only; lets an analytic SDF stand in
    for the network.
    """
    surf = samples.on_surface
    n = samples.normals[surf]
    if not np.all(np.isfinite(n)):
        raise ValueError("surface sample without a normal")
    err = np.abs(np.asarray(pred_sdf) - samples.sdf).mean()
    g = np.asarray(pred_grad)[surf]
    normal = (1.0 - (g * n).sum(axis=1)).mean() if surf.any() else 0.0
    return float(err + weights.xi * normal)


def train_terms(config, P: dict, phi, batch: Batch) -> dict[str, Value]:
    """Every term of the end-to-end objective for one interaction.

    ``P`` maps group names to Values (leaves or constants); ``phi`` is the
    trial code.
    """
    from .fields import contact_v, deform_v, encode_v, hyper_v, nominal_sdf_v

    tape = next((v.tape for v in (*P.values(), phi) if isinstance(v, Value) and v.tape is not None), None)
    tape = tape or dc.Tape()
    q = tape.var(batch.points)
    ns = batch.n_surface
    psi = encode_v(config, P["E"], batch.wrench)
    hD = hyper_v(config, P["H_D"], phi, psi, "D")
    hT = hyper_v(config, P["H_T"], phi, psi, "T")

    dq = deform_v(config, hD, q)
    x = dc.add(q, dq)
    s = nominal_sdf_v(config, P["O"], x)
    sdf = dc.vabs(dc.sub(s, batch.sdf[:, None])).mean()
    g = dc.grad_input(dc.getitem(s, slice(0, ns)).sum(), q)
    normal = normal_alignment(dc.getitem(g, slice(0, ns)), batch.normals)

    phi_v = dc.as_value(phi)
    embedding = (phi_v * phi_v).sum()
    deform = (dq * dq).sum(axis=1).mean()
    chamfer_t = chamfer(dc.getitem(x, slice(0, ns)), batch.nominal_cloud)
    c = contact_v(config, hT, dc.getitem(q, slice(0, ns)))
    contact = bce(c, batch.contact)
    hyper = (hD * hD).mean() + (hT * hT).mean()
    return {"sdf": sdf, "normal": normal, "embedding": embedding, "deform": deform,
            "chamfer": chamfer_t, "contact": contact, "hyper": hyper}


def breakdown(terms: dict, weights: LossWeights) -> LossBreakdown:
    return LossBreakdown(**{k: float(np.asarray(dc.as_value(terms[k]).data)) for k in TERMS},
                         weights=weights)


def train_loss(model, interaction, weights: LossWeights = LossWeights(), code: int | None = None,
               rng: np.random.Generator | None = None, n_off=None, n_surface=None,
               n_nominal=None) -> LossBreakdown:
    """Loss breakdown of one interaction (all rows unless counts and rng are given)."""
    from .fields import wrench_to_model

    cfg = model.config
    b = make_batch(interaction.samples, wrench_to_model(cfg, interaction.wrench),
                   interaction.nominal_cloud, cfg.length_scale, rng, n_off, n_surface, n_nominal)
    phi = model.codes[interaction.code if code is None else code]
    return breakdown(train_terms(cfg, model.params, phi, b), weights)


def contact_bce(model, samples, phi, psi) -> float:
    """Mean BCE of the contact field on surface samples only."""
    from .fields import contact_prob

    if not np.all(samples.on_surface):
        raise ValueError("contact loss is defined on surface samples only")
    c = contact_prob(model, samples.points, phi, psi)
    return float(bce(Value(c), samples.contact).data)


def nominal_chamfer_term(model, interaction, phi, psi) -> float:
    """CD (mm^2) between surface samples mapped to nominal space and the nominal cloud."""
    from .fields import deform

    s = interaction.samples
    surf = s.points[s.on_surface]
    if len(surf) == 0:
        raise ValueError("interaction has no surface samples")
    mapped = surf + deform(model, surf, phi, psi)
    return chamfer(mapped, interaction.nominal_cloud)
