"""The network family: nominal SDF, wrench encoder, hypernetworks and targets.

Public functions take millimetre query points and tool-frame wrenches
(N, N*mm) and return millimetres.  The ``*_v`` functions are the taped
versions used by losses and optimizers and work in model units.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import diffcore as dc
from .diffcore import MLPSpec, Value

GROUPS = ("O", "E", "H_D", "H_T")


@dataclass(frozen=True)
class ModelConfig:
    latent_dim: int = 16
    o_hidden: tuple[int, ...] = (256, 256)
    e_hidden: tuple[int, ...] = (16,)
    d_hidden: tuple[int, ...] = (256,)
    t_hidden: tuple[int, ...] = (256, 256)
    hyper_hidden: int = 64
    o_w0: float = 30.0
    target_activation: str = "sine"
    target_w0: float = 30.0
    length_scale: float = 23.0  # mm per model unit
    force_unit: float = 1.0  # N per model force unit
    head_scale: float = 1e-2  # hypernet head weights relative to target init

    def __post_init__(self):
        if self.latent_dim <= 0:
            raise ValueError("latent_dim must be positive")
        for name in ("o_hidden", "e_hidden", "d_hidden", "t_hidden"):
            object.__setattr__(self, name, tuple(int(h) for h in getattr(self, name)))

    @classmethod
    def desk(cls, **kw) -> "ModelConfig":
        """Reduced widths used for CPU-scale runs."""
        base = dict(o_hidden=(64, 64), d_hidden=(64,), t_hidden=(64, 64), o_w0=10.0,
                    target_w0=3.0)
        base.update(kw)
        return cls(**base)

    @property
    def o_spec(self) -> MLPSpec:
        return MLPSpec((3, *self.o_hidden, 1), hidden="sine", output="linear", w0=self.o_w0)

    @property
    def e_spec(self) -> MLPSpec:
        return MLPSpec((6, *self.e_hidden, self.latent_dim), hidden="softplus")

    @property
    def d_spec(self) -> MLPSpec:
        return MLPSpec((3, *self.d_hidden, 3), hidden=self.target_activation,
                       output="linear", w0=self.target_w0)

    @property
    def t_spec(self) -> MLPSpec:
        return MLPSpec((3, *self.t_hidden, 1), hidden=self.target_activation,
                       output="sigmoid", w0=self.target_w0)

    def hyper_spec(self, target: str) -> MLPSpec:
        n_out = (self.d_spec if target == "D" else self.t_spec).n_params
        return MLPSpec((2 * self.latent_dim, self.hyper_hidden, n_out), hidden="softplus")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


@dataclass
class FieldModel:
    config: ModelConfig
    params: dict[str, np.ndarray]
    codes: np.ndarray = field(default_factory=lambda: np.zeros((0, 16)))
    o_frozen: bool = False

    def copy(self) -> "FieldModel":
        return FieldModel(self.config, {k: v.copy() for k, v in self.params.items()},
                          self.codes.copy(), self.o_frozen)

    def with_codes(self, codes: np.ndarray) -> "FieldModel":
        return FieldModel(self.config, self.params, np.asarray(codes, dtype=np.float64),
                          self.o_frozen)


def init_model(config: ModelConfig, seed: int = 0, n_codes: int = 0,
               code_std: float = 0.1) -> FieldModel:
    rng = np.random.default_rng(seed)
    params = {
        "O": dc.init_mlp(config.o_spec, rng),
        "E": dc.init_mlp(config.e_spec, rng),
        "H_D": _init_hyper(config, "D", rng),
        "H_T": _init_hyper(config, "T", rng),
    }
    codes = rng.normal(0.0, code_std, size=(n_codes, config.latent_dim))
    return FieldModel(config, params, codes)


def _init_hyper(config: ModelConfig, target: str, rng) -> np.ndarray:
    """Trunk gets a standard init; each head's bias is a standard init of its
    target layer, its weights a small multiple of that scale."""
    hspec = config.hyper_spec(target)
    tspec = config.d_spec if target == "D" else config.t_spec
    trunk_in, width = hspec.sizes[0], hspec.sizes[1]
    bound = np.sqrt(6.0 / (trunk_in + width))
    trunk = np.concatenate([rng.uniform(-bound, bound, trunk_in * width),
                            rng.uniform(-1 / np.sqrt(trunk_in), 1 / np.sqrt(trunk_in), width)])
    bias = dc.init_mlp(tspec, rng)
    if target == "D":
        # deformation starts near zero
        w_lo, _, b_hi = tspec.offsets()[-1]
        bias[w_lo:b_hi] *= 1e-2
    scale = np.empty_like(bias)
    for (i, o), (w_lo, b_lo, b_hi) in zip(tspec.layer_shapes, tspec.offsets()):
        scale[w_lo:b_hi] = np.abs(bias[w_lo:b_hi]).max()
    W = rng.normal(0.0, 1.0, size=(width, bias.size)) * (config.head_scale * scale / np.sqrt(width))
    return np.concatenate([trunk, W.reshape(-1), bias])


# ---------------------------------------------------------------- taped pieces


def wrench_to_model(config: ModelConfig, w) -> np.ndarray:
    w = np.asarray(w, dtype=np.float64)
    if w.shape[-1] != 6:
        raise ValueError(f"wrench must have 6 components, got shape {w.shape}")
    if not np.all(np.isfinite(w)):
        raise ValueError("wrench contains non-finite values")
    s = np.array([1, 1, 1, 1 / config.length_scale, 1 / config.length_scale,
                  1 / config.length_scale]) / config.force_unit
    return w * s


def nominal_sdf_v(config: ModelConfig, O, q) -> Value:
    return dc.forward_mlp(O, config.o_spec, q)


def encode_v(config: ModelConfig, E, w_model) -> Value:
    return dc.forward_mlp(E, config.e_spec, w_model)


def hyper_v(config: ModelConfig, H, phi, psi, target: str) -> Value:
    z = dc.concatenate([phi, psi], axis=0)
    return dc.forward_mlp(H, config.hyper_spec(target), z)


def deform_v(config: ModelConfig, wD, q) -> Value:
    return dc.forward_mlp(wD, config.d_spec, q)


def contact_v(config: ModelConfig, wT, q) -> Value:
    return dc.forward_mlp(wT, config.t_spec, q)


def deformed_sdf_v(config: ModelConfig, O, wD, q) -> tuple[Value, Value]:
    """(s, dq) with s = O(q + D(q))."""
    dq = deform_v(config, wD, q)
    return nominal_sdf_v(config, O, dc.add(q, dq)), dq


# ---------------------------------------------------------------- public API


def _to_model(model: FieldModel, q) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    return q.reshape(-1, 3) / model.config.length_scale


def nominal_sdf(model: FieldModel, q) -> np.ndarray:
    """Nominal signed distance (mm) at query points (mm)."""
    q = np.asarray(q, dtype=np.float64)
    out = nominal_sdf_v(model.config, model.params["O"], _to_model(model, q)).data[:, 0]
    out = out * model.config.length_scale
    return out.reshape(q.shape[:-1])


def encode_wrench(model: FieldModel, w) -> np.ndarray:
    return encode_v(model.config, model.params["E"], wrench_to_model(model.config, w)).data


def hypernet_weights(model: FieldModel, phi, psi, target: str) -> np.ndarray:
    if target not in ("D", "T"):
        raise ValueError("target must be 'D' or 'T'")
    L = model.config.latent_dim
    phi, psi = np.asarray(phi, float), np.asarray(psi, float)
    if phi.shape != (L,) or psi.shape != (L,):
        raise ValueError(f"latents must have shape ({L},)")
    return hyper_v(model.config, model.params[f"H_{target}"], phi, psi, target).data


def deform(model: FieldModel, q, phi, psi) -> np.ndarray:
    """Displacement (mm) taking deformed-space queries back to nominal space."""
    q = np.asarray(q, dtype=np.float64)
    wD = hypernet_weights(model, phi, psi, "D")
    dq = deform_v(model.config, wD, _to_model(model, q)).data * model.config.length_scale
    return dq.reshape(q.shape)


def deformed_sdf(model: FieldModel, q, phi, psi) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    wD = hypernet_weights(model, phi, psi, "D")
    s, _ = deformed_sdf_v(model.config, model.params["O"], wD, _to_model(model, q))
    return (s.data[:, 0] * model.config.length_scale).reshape(q.shape[:-1])


def contact_prob(model: FieldModel, q, phi, psi) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    wT = hypernet_weights(model, phi, psi, "T")
    return contact_v(model.config, wT, _to_model(model, q)).data[:, 0].reshape(q.shape[:-1])


class Field:
    """Evaluation closure for one (phi, psi): hypernet outputs computed once."""

    def __init__(self, model: FieldModel, phi, psi):
        self.model = model
        self.phi = np.asarray(phi, float)
        self.psi = np.asarray(psi, float)
        self.wD = hypernet_weights(model, self.phi, self.psi, "D")
        self.wT = hypernet_weights(model, self.phi, self.psi, "T")

    def sdf(self, q) -> np.ndarray:
        cfg = self.model.config
        q = np.asarray(q, dtype=np.float64)
        s, _ = deformed_sdf_v(cfg, self.model.params["O"], self.wD, q.reshape(-1, 3) / cfg.length_scale)
        return (s.data[:, 0] * cfg.length_scale).reshape(q.shape[:-1])

    def contact(self, q) -> np.ndarray:
        cfg = self.model.config
        q = np.asarray(q, dtype=np.float64)
        return contact_v(cfg, self.wT, q.reshape(-1, 3) / cfg.length_scale).data[:, 0].reshape(q.shape[:-1])
