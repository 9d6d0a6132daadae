"""Pretraining, end-to-end training, latent inference and reconstruction."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field, replace
from typing import Callable

import numpy as np

from . import diffcore as dc
from .datagen import HALF, Interaction, SampleSet
from .fields import Field, FieldModel, ModelConfig, encode_wrench, init_model, wrench_to_model
from .geometry import ContactPatch, GridSpec, TriMesh, evaluate, extract_contact_patch, marching_cubes
from .losses import LossWeights, TERMS, breakdown, make_batch, pretrain_terms, train_terms, weighted_total

log = logging.getLogger(__name__)

MAX_PRESS_DEPTH = 10.0  # mm, bounds how far the surface can move


class TrainingDiverged(RuntimeError):
    """A loss became non-finite.  ``model`` holds the last finite parameters."""

    def __init__(self, message: str, model: FieldModel, term: str | None = None, epoch: int = 0):
        super().__init__(message)
        self.model = model
        self.term = term
        self.epoch = epoch


@dataclass(frozen=True)
class TrainConfig:
    pretrain_lr: float = 1e-5
    pretrain_epochs: int = 50_000
    pretrain_batch: int = 1024
    pretrain_n_off: int = 40_000
    pretrain_n_surface: int = 20_000
    pretrain_resample: int = 0  # epochs between fresh sample sets, 0 keeps one set
    train_lr: float = 1e-4
    train_epochs: int = 200
    steps_per_interaction: int = 1
    code_std: float = 0.1
    seed: int = 0
    n_off: int = 512
    n_surface: int = 256
    n_nominal: int = 256
    contact_fraction: float = 0.25  # share of surface rows reserved for contact samples
    augment: int = 4  # quarter-turn copies per interaction, 1 disables

    def __post_init__(self):
        if self.pretrain_lr <= 0 or self.train_lr <= 0:
            raise ValueError("learning rates must be positive")
        if self.pretrain_epochs < 0 or self.train_epochs < 0:
            raise ValueError("epoch counts must be non-negative")
        if not 0.0 <= self.contact_fraction <= 1.0:
            raise ValueError("contact_fraction must lie in [0, 1]")
        if not 1 <= self.augment <= 4:
            raise ValueError("augment must be between 1 and 4 quarter turns")

    @classmethod
    def desk(cls, **kw) -> "TrainConfig":
        base = dict(pretrain_lr=1e-4, pretrain_epochs=5_000, pretrain_n_off=4_000,
                    pretrain_n_surface=2_000, pretrain_batch=1_500, pretrain_resample=10)
        base.update(kw)
        return cls(**base)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**d)


@dataclass(frozen=True)
class InferenceConfig:
    lr: float = 2e-3
    steps: int = 100
    eta: float = 1e-3
    eps: float = 0.2
    code_std: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.eta < 0:
            raise ValueError("eta must be non-negative")
        if not 0.0 < self.eps < 1.0:
            raise ValueError("eps must lie strictly between 0 and 1")
        if self.steps < 0 or self.lr <= 0:
            raise ValueError("steps must be >= 0 and lr > 0")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "InferenceConfig":
        return cls(**d)


# ---------------------------------------------------------------- pretraining


@dataclass
class PretrainResult:
    model: FieldModel
    held_out_error: float  # mean |SDF error| in mm, NaN without a held-out set
    history: list[dict] = field(default_factory=list)


def held_out_error(model: FieldModel, samples: SampleSet) -> float:
    from .fields import nominal_sdf

    with dc.recording(False):
        return float(np.abs(nominal_sdf(model, samples.points) - samples.sdf).mean())


def pretrain(samples: SampleSet | Callable[[np.random.Generator], SampleSet],
             config: TrainConfig = TrainConfig(), model: FieldModel | None = None,
             model_config: ModelConfig | None = None, held_out: SampleSet | None = None,
             weights: LossWeights = LossWeights(), report_every: int = 0) -> PretrainResult:
    """Fit the nominal SDF network and freeze it.

    ``samples`` is a fixed sample set or a callable drawing one from a
    generator; with a callable and ``config.pretrain_resample > 0`` a fresh
    set is drawn every that many epochs.  One epoch is one pass over the
    current set in minibatches of ``config.pretrain_batch``.
    """
    rng = np.random.default_rng([config.seed, 1])
    if model is None:
        model = init_model(model_config or ModelConfig(), seed=config.seed)
    model = model.copy()
    draw = samples if callable(samples) else None
    current = draw(rng) if draw else samples
    cfg = model.config
    state = dc.OptimizerState(lr=config.pretrain_lr)
    history: list[dict] = []
    t0 = time.perf_counter()
    for epoch in range(1, config.pretrain_epochs + 1):
        if draw and config.pretrain_resample and epoch > 1 and (epoch - 1) % config.pretrain_resample == 0:
            current = draw(rng)
        order = rng.permutation(len(current))
        for lo in range(0, len(order), config.pretrain_batch):
            sub = current.subset(order[lo:lo + config.pretrain_batch])
            if not sub.on_surface.any():
                continue
            b = make_batch(sub, np.zeros(6), np.zeros((1, 3)), cfg.length_scale)
            tape = dc.Tape()
            O = tape.var(model.params["O"])
            terms = pretrain_terms(cfg, O, b)
            loss = terms["sdf"] + weights.xi * terms["normal"]
            if not np.isfinite(loss.data):
                bad = next(k for k, v in terms.items() if not np.all(np.isfinite(v.data)))
                raise TrainingDiverged(f"pretraining loss became non-finite in term {bad!r} "
                                       f"at epoch {epoch}", replace(model, o_frozen=True), bad, epoch)
            (g,) = dc.grad_params(loss, [O])
            new, _ = dc.adam_step({"O": model.params["O"]}, {"O": g}, state)
            model.params["O"] = new["O"]
        if report_every and (epoch % report_every == 0 or epoch == config.pretrain_epochs):
            rec = {"epoch": epoch, "loss": float(loss.data), "seconds": time.perf_counter() - t0}
            if held_out is not None:
                rec["held_out_error"] = held_out_error(model, held_out)
            history.append(rec)
            log.info("pretrain %s", rec)
    model.o_frozen = True
    err = held_out_error(model, held_out) if held_out is not None else float("nan")
    return PretrainResult(model, err, history)


# ---------------------------------------------------------------- training


def augment(interactions: list[Interaction], k: int) -> list[Interaction]:
    """k quarter-turn copies of every interaction, each with its own code id."""
    out = []
    for inter in interactions:
        for r in range(k):
            out.append(inter if r == 0 else inter.rotated(r))
    return [replace(x, code=i) for i, x in enumerate(out)]


@dataclass
class TrainResult:
    model: FieldModel
    history: list[dict]
    interactions: list[Interaction]  # the augmented set, code ids match model.codes


_TRAINED = ("E", "H_D", "H_T")


def _step_terms(model: FieldModel, inter: Interaction, rng, config: TrainConfig, tape: dc.Tape,
                params: dict, phi):
    cfg = model.config
    b = make_batch(inter.samples, wrench_to_model(cfg, inter.wrench), inter.nominal_cloud,
                   cfg.length_scale, rng, config.n_off, config.n_surface, config.n_nominal,
                   contact_fraction=config.contact_fraction)
    return train_terms(cfg, params, phi, b)


def train(interactions: list[Interaction], model: FieldModel, config: TrainConfig = TrainConfig(),
          weights: LossWeights = LossWeights(),
          on_epoch: Callable[[dict], None] | None = None) -> TrainResult:
    """Jointly fit E, H_D, H_T and one trial code per (augmented) interaction.

    O is passed as a constant so its parameters are never touched.  Every
    epoch visits all interactions once in a shuffled order and takes
    ``steps_per_interaction`` optimizer steps on each.  History entry 0 is
    the loss before any update.
    """
    if not model.o_frozen:
        raise ValueError("the nominal SDF network must be pretrained (frozen) before training")
    if not interactions:
        raise ValueError("no interactions to train on")
    data = augment(interactions, config.augment)
    rng = np.random.default_rng([config.seed, 2])
    model = model.copy()
    model.codes = rng.normal(0.0, config.code_std, size=(len(data), model.config.latent_dim))
    O = model.params["O"]
    net_state = dc.OptimizerState(lr=config.train_lr)
    code_states = [dc.OptimizerState(lr=config.train_lr) for _ in data]

    def record(epoch, items):
        rec = {"epoch": epoch}
        for k in (*TERMS, "total"):
            rec[k] = float(np.mean([getattr(b, k) for b in items]))
        return rec

    eval_rng = np.random.default_rng([config.seed, 3])
    start = [breakdown(_step_terms(model, it, eval_rng, config, dc.Tape(),
                                   {**model.params}, model.codes[it.code]), weights)
             for it in data]
    history = [record(0, start)]
    if on_epoch:
        on_epoch(history[0])

    for epoch in range(1, config.train_epochs + 1):
        items = []
        for i in rng.permutation(len(data)):
            inter = data[i]
            for _ in range(config.steps_per_interaction):
                tape = dc.Tape()
                P = {"O": O, **{k: tape.var(model.params[k]) for k in _TRAINED}}
                phi = tape.var(model.codes[i])
                terms = _step_terms(model, inter, rng, config, tape, P, phi)
                total = weighted_total(terms, weights)
                if not np.isfinite(total.data):
                    bad = [k for k in TERMS if not np.all(np.isfinite(terms[k].data))]
                    raise TrainingDiverged(
                        f"training loss became non-finite at epoch {epoch} on {inter.name or i}; "
                        f"offending term(s): {', '.join(bad) or 'total'}", model.copy(),
                        bad[0] if bad else "total", epoch)
                grads = dc.grad_params(total, [P[k] for k in _TRAINED] + [phi])
                new, _ = dc.adam_step({k: model.params[k] for k in _TRAINED},
                                      dict(zip(_TRAINED, grads[:3])), net_state)
                model.params.update(new)
                newc, _ = dc.adam_step({"phi": model.codes[i]}, {"phi": grads[3]}, code_states[i])
                model.codes[i] = newc["phi"]
                items.append(breakdown(terms, weights))
        history.append(record(epoch, items))
        if on_epoch:
            on_epoch(history[-1])
    return TrainResult(model, history, data)


# ---------------------------------------------------------------- inference


@dataclass
class InferenceResult:
    phi: np.ndarray
    psi: np.ndarray
    objective: float  # at the returned phi
    initial_objective: float
    history: list[float]
    seconds: float = 0.0


def inference_objective(model: FieldModel, cloud_model: np.ndarray, phi, psi, eta: float,
                        O=None):
    """mean |O(p + D(p))| + eta * |phi|^2 in model units; works on Values."""
    from .fields import deformed_sdf_v, hyper_v

    cfg = model.config
    wD = hyper_v(cfg, model.params["H_D"], phi, psi, "D")
    s, _ = deformed_sdf_v(cfg, model.params["O"] if O is None else O, wD, cloud_model)
    phi_v = dc.as_value(phi)
    return dc.vabs(s).mean() + eta * (phi_v * phi_v).sum()


def infer_latent(model: FieldModel, cloud: np.ndarray, wrench, config: InferenceConfig = InferenceConfig(),
                 phi0: np.ndarray | None = None) -> InferenceResult:
    """Optimise a fresh trial code so the partial cloud lies on the zero level set.

    The wrench latent is computed once and held fixed.  Returns the iterate
    with the lowest objective seen, so ``objective <= initial_objective``.
    """
    cloud = np.asarray(cloud, dtype=np.float64).reshape(-1, 3)
    if len(cloud) == 0:
        raise ValueError("partial point cloud is empty")
    t0 = time.perf_counter()
    psi = encode_wrench(model, wrench)
    if phi0 is None:
        rng = np.random.default_rng(config.seed)
        phi0 = rng.normal(0.0, config.code_std, size=model.config.latent_dim)
    phi = np.asarray(phi0, dtype=np.float64).copy()
    pts = cloud / model.config.length_scale
    state = dc.OptimizerState(lr=config.lr)
    best_phi, best = phi.copy(), math.inf
    history = []
    for step in range(config.steps + 1):
        tape = dc.Tape()
        p = tape.var(phi)
        obj = inference_objective(model, pts, p, psi, config.eta)
        val = float(obj.data)
        history.append(val)
        if val < best:
            best, best_phi = val, phi.copy()
        if step == config.steps or not np.isfinite(val):
            break
        (g,) = dc.grad_params(obj, [p])
        phi = dc.adam_step({"phi": phi}, {"phi": g}, state)[0]["phi"]
    return InferenceResult(best_phi, psi, best, history[0], history, time.perf_counter() - t0)


# ---------------------------------------------------------------- reconstruction


def default_grid(resolution: int = 64) -> GridSpec:
    """Nominal bounds grown by the largest press depth, plus 10% padding."""
    r = HALF + MAX_PRESS_DEPTH
    return GridSpec(np.full(3, -r), np.full(3, r), resolution, 0.1)


@dataclass
class Reconstruction:
    mesh: TriMesh
    patch: ContactPatch
    field: Field


def reconstruct(model: FieldModel, phi, psi, grid: GridSpec | None = None, eps: float = 0.2,
                n_candidates: int = 50_000, seed: int = 0) -> Reconstruction:
    """Marching cubes on the deformed SDF plus the rejection-sampled contact patch.

    Raises ``NoSurfaceError`` when the zero level set misses the grid.
    """
    grid = grid or default_grid()
    fld = Field(model, phi, psi)
    with dc.recording(False):
        mesh = marching_cubes(fld.sdf, grid)
        patch = extract_contact_patch(fld, mesh, eps, n_candidates, 2.0 * grid.voxel,
                                      np.random.default_rng(seed))
    return Reconstruction(mesh, patch, fld)


def evaluate_reconstruction(rec: Reconstruction, inter: Interaction, seed: int = 0, **kw):
    return evaluate(rec.mesh, rec.patch.points, inter.deformed, inter.gt_patch, seed=seed, **kw)
