"""On-disk formats: checkpoints, datasets, OBJ meshes and PLY clouds.

Every directory format is a ``manifest.json`` plus little-endian float64
``.npy`` arrays.  ``.npy`` headers carry no timestamps, so identical data
gives identical bytes.
"""

from __future__ import annotations

import json
import shutil
from pathlib import Path

import numpy as np

from .datagen import Interaction, SampleSet
from .fields import GROUPS, FieldModel, ModelConfig
from .geometry import TriMesh

CHECKPOINT_FORMAT = "ndcf-checkpoint"
DATASET_FORMAT = "ndcf-dataset"
VERSION = 1


class FormatError(ValueError):
    """Unknown format name or version, or a malformed file."""


class ArchitectureMismatch(ValueError):
    pass


def _dump_json(obj, path: Path) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _save(path: Path, arr) -> None:
    np.save(path, np.ascontiguousarray(np.asarray(arr, dtype="<f8")), allow_pickle=False)


def _load(path: Path) -> np.ndarray:
    return np.load(path, allow_pickle=False).astype(np.float64, copy=False)


def read_manifest(directory, expected: str) -> dict:
    path = Path(directory) / "manifest.json"
    if not path.exists():
        raise FormatError(f"{directory} has no manifest.json")
    m = json.loads(path.read_text())
    if m.get("format") != expected:
        raise FormatError(f"{directory}: expected format {expected!r}, found {m.get('format')!r}")
    if m.get("version") != VERSION:
        raise FormatError(f"{directory}: unsupported {expected} version {m.get('version')!r} "
                          f"(this reader understands version {VERSION})")
    return m


def prepare_dir(directory, force: bool = False) -> Path:
    """Create ``directory``; refuse to reuse a non-empty one unless ``force``."""
    d = Path(directory)
    if d.exists() and any(d.iterdir()):
        if not force:
            raise FileExistsError(f"{d} exists and is not empty (use --force to overwrite)")
        shutil.rmtree(d)
    d.mkdir(parents=True, exist_ok=True)
    return d


# ---------------------------------------------------------------- checkpoints


def save_checkpoint(directory, model: FieldModel, extra: dict | None = None, force: bool = True) -> Path:
    d = prepare_dir(directory, force)
    groups = {}
    for g in GROUPS:
        _save(d / f"{g}.npy", model.params[g])
        groups[g] = {"file": f"{g}.npy", "length": int(model.params[g].size)}
    (d / "codes").mkdir()
    for i, c in enumerate(model.codes):
        _save(d / "codes" / f"{i:06d}.npy", c)
    _dump_json({
        "format": CHECKPOINT_FORMAT,
        "version": VERSION,
        "model_config": model.config.to_dict(),
        "o_frozen": bool(model.o_frozen),
        "groups": groups,
        "n_codes": int(len(model.codes)),
        "extra": extra or {},
    }, d / "manifest.json")
    return d


def load_checkpoint(directory, expect: ModelConfig | None = None) -> tuple[FieldModel, dict]:
    d = Path(directory)
    m = read_manifest(d, CHECKPOINT_FORMAT)
    cfg = ModelConfig.from_dict(m["model_config"])
    if expect is not None and expect != cfg:
        raise ArchitectureMismatch(
            f"checkpoint architecture does not match the requested one\n"
            f"  checkpoint: {cfg.to_dict()}\n  requested:  {expect.to_dict()}")
    params = {}
    for g in GROUPS:
        arr = _load(d / m["groups"][g]["file"])
        spec_len = (cfg.o_spec if g == "O" else cfg.e_spec if g == "E"
                    else cfg.hyper_spec(g[-1])).n_params
        if arr.size != spec_len:
            raise FormatError(f"parameter group {g} has {arr.size} values, architecture needs {spec_len}")
        params[g] = arr
    codes = np.array([_load(d / "codes" / f"{i:06d}.npy") for i in range(m["n_codes"])])
    codes = codes.reshape(m["n_codes"], cfg.latent_dim)
    return FieldModel(cfg, params, codes, m["o_frozen"]), m


# ---------------------------------------------------------------- datasets


_SAMPLE_FIELDS = ("points", "sdf", "normals", "contact")


def save_interaction(directory, inter: Interaction) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    for f in _SAMPLE_FIELDS:
        _save(d / f"samples_{f}.npy", getattr(inter.samples, f))
    _save(d / "wrench.npy", inter.wrench)
    _save(d / "nominal_cloud.npy", inter.nominal_cloud)
    _save(d / "gt_patch.npy", inter.gt_patch)
    write_obj(d / "deformed.obj", inter.deformed)
    _dump_json({"env": inter.env, "press": inter.press, "code": inter.code,
                "flagged": inter.flagged, "name": inter.name}, d / "meta.json")


def load_interaction(directory) -> Interaction:
    d = Path(directory)
    samples = SampleSet(*(_load(d / f"samples_{f}.npy") for f in _SAMPLE_FIELDS))
    meta = json.loads((d / "meta.json").read_text())
    return Interaction(samples, _load(d / "wrench.npy"), _load(d / "nominal_cloud.npy"),
                       read_obj(d / "deformed.obj"), _load(d / "gt_patch.npy").reshape(-1, 3),
                       meta["env"], meta["press"], meta["code"], meta["flagged"], meta["name"])


def save_dataset(directory, splits: dict[str, list[Interaction]], info: dict,
                 force: bool = False) -> Path:
    d = prepare_dir(directory, force)
    index = {}
    for split, items in splits.items():
        index[split] = []
        for inter in items:
            rel = f"{split}/{inter.name}"
            save_interaction(d / rel, inter)
            index[split].append(rel)
    _dump_json({"format": DATASET_FORMAT, "version": VERSION, "units": {"length": "mm",
                "force": "N", "torque": "N*mm"}, "splits": index,
                "counts": {k: len(v) for k, v in index.items()}, **info}, d / "manifest.json")
    return d


def load_split(directory, split: str) -> list[Interaction]:
    m = read_manifest(directory, DATASET_FORMAT)
    if split not in m["splits"]:
        raise FormatError(f"dataset has no split {split!r}; available: {sorted(m['splits'])}")
    return [load_interaction(Path(directory) / rel) for rel in m["splits"][split]]


# ---------------------------------------------------------------- meshes & clouds


def write_obj(path, mesh: TriMesh) -> None:
    lines = [f"v {x!r} {y!r} {z!r}" for x, y, z in mesh.vertices.tolist()]
    lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in mesh.faces.tolist()]
    Path(path).write_text("\n".join(lines) + "\n")


def read_obj(path) -> TriMesh:
    verts, faces = [], []
    for line in Path(path).read_text().splitlines():
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "v":
            verts.append([float(t) for t in parts[1:4]])
        elif parts[0] == "f":
            faces.append([int(t.split("/")[0]) - 1 for t in parts[1:4]])
    return TriMesh(np.array(verts, dtype=np.float64).reshape(-1, 3),
                   np.array(faces, dtype=np.int64).reshape(-1, 3))


def write_ply(path, points, confidence=None) -> None:
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    header = ["ply", "format ascii 1.0", f"element vertex {len(pts)}",
              "property double x", "property double y", "property double z"]
    rows = pts.tolist()
    if confidence is not None:
        header.append("property double confidence")
        rows = [r + [c] for r, c in zip(rows, np.asarray(confidence, dtype=np.float64).tolist())]
    header.append("end_header")
    body = [" ".join(repr(v) for v in r) for r in rows]
    Path(path).write_text("\n".join(header + body) + "\n")


def read_ply(path) -> tuple[np.ndarray, np.ndarray | None]:
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0] != "ply":
        raise FormatError(f"{path} is not a PLY file")
    end = lines.index("end_header")
    props = [ln.split()[-1] for ln in lines[:end] if ln.startswith("property")]
    n = next(int(ln.split()[-1]) for ln in lines[:end] if ln.startswith("element vertex"))
    data = np.array([[float(t) for t in ln.split()] for ln in lines[end + 1:end + 1 + n]],
                    dtype=np.float64).reshape(n, len(props))
    pts = data[:, [props.index(a) for a in "xyz"]]
    conf = data[:, props.index("confidence")] if "confidence" in props else None
    return pts, conf
