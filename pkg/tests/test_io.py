import json

import numpy as np
import pytest

from ndcf import datagen as dg
from ndcf import fields as fl
from ndcf import geometry as ge
from ndcf import io

from .fixtures import TINY, tiny_interaction


def test_checkpoint_round_trip_is_exact(tmp_path):
    m = fl.init_model(TINY, seed=2, n_codes=5)
    m.o_frozen = True
    io.save_checkpoint(tmp_path / "ck", m, {"epoch": 7})
    back, manifest = io.load_checkpoint(tmp_path / "ck", expect=TINY)
    for g in fl.GROUPS:
        assert back.params[g].tobytes() == m.params[g].tobytes()
    assert back.codes.tobytes() == m.codes.tobytes()
    assert back.o_frozen and back.config == TINY
    assert manifest["extra"] == {"epoch": 7}


def test_checkpoint_arrays_are_little_endian_f8(tmp_path):
    io.save_checkpoint(tmp_path / "ck", fl.init_model(TINY, n_codes=1))
    arr = np.load(tmp_path / "ck" / "O.npy")
    assert arr.dtype.str == "<f8"


def test_checkpoint_bytes_identical_across_saves(tmp_path):
    m = fl.init_model(TINY, seed=1, n_codes=2)
    io.save_checkpoint(tmp_path / "a", m)
    io.save_checkpoint(tmp_path / "b", m)
    files = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
    for f in files:
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_architecture_mismatch_names_both(tmp_path):
    io.save_checkpoint(tmp_path / "ck", fl.init_model(TINY))
    other = fl.ModelConfig.desk(latent_dim=4)
    with pytest.raises(io.ArchitectureMismatch) as exc:
        io.load_checkpoint(tmp_path / "ck", expect=other)
    assert "checkpoint:" in str(exc.value) and "requested:" in str(exc.value)


@pytest.mark.parametrize("edit", [{"version": 2}, {"format": "something-else"}])
def test_unknown_version_or_format_rejected(tmp_path, edit):
    d = io.save_checkpoint(tmp_path / "ck", fl.init_model(TINY))
    man = json.loads((d / "manifest.json").read_text())
    man.update(edit)
    (d / "manifest.json").write_text(json.dumps(man))
    with pytest.raises(io.FormatError):
        io.load_checkpoint(d)


def test_truncated_group_rejected(tmp_path):
    d = io.save_checkpoint(tmp_path / "ck", fl.init_model(TINY))
    np.save(d / "E.npy", np.zeros(3))
    with pytest.raises(io.FormatError, match="E"):
        io.load_checkpoint(d)


def test_missing_manifest(tmp_path):
    with pytest.raises(io.FormatError, match="manifest"):
        io.load_checkpoint(tmp_path)


def test_prepare_dir_refuses_non_empty(tmp_path):
    (tmp_path / "x").mkdir()
    (tmp_path / "x" / "keep").write_text("1")
    with pytest.raises(FileExistsError, match="--force"):
        io.prepare_dir(tmp_path / "x")
    io.prepare_dir(tmp_path / "x", force=True)
    assert not (tmp_path / "x" / "keep").exists()


def test_dataset_round_trip(tmp_path):
    cfg = dg.GenConfig(n_off=200, n_surface=100, n_nominal=50, n_patch=300, divisions=6)
    items = [dg.generate_interaction("ridges", 0, i, cfg) for i in range(3)]
    io.save_dataset(tmp_path / "ds", {"train": items[:2], "test": items[2:]}, {"seed": 0})
    man = io.read_manifest(tmp_path / "ds", io.DATASET_FORMAT)
    assert man["counts"] == {"train": 2, "test": 1} and man["units"]["length"] == "mm"
    back = io.load_split(tmp_path / "ds", "train")
    for a, b in zip(items[:2], back):
        for f in ("points", "sdf", "contact"):
            assert np.array_equal(getattr(a.samples, f), getattr(b.samples, f))
        assert np.array_equal(a.samples.normals, b.samples.normals, equal_nan=True)
        assert np.array_equal(a.wrench, b.wrench) and np.array_equal(a.gt_patch, b.gt_patch)
        assert np.array_equal(a.deformed.vertices, b.deformed.vertices)
        assert np.array_equal(a.deformed.faces, b.deformed.faces)
        assert (a.name, a.code, a.flagged, a.env, a.press) == (b.name, b.code, b.flagged, b.env, b.press)
    with pytest.raises(io.FormatError, match="no split"):
        io.load_split(tmp_path / "ds", "val")


def test_empty_patch_round_trips(tmp_path):
    inter = tiny_interaction(np.random.default_rng(0))
    io.save_interaction(tmp_path / "i", inter)
    back = io.load_interaction(tmp_path / "i")
    assert back.gt_patch.shape == (0, 3)


def test_obj_round_trip_exact(tmp_path):
    m = ge.box_mesh([-1.1, 0.3, -2.0], [1.7, 2.9, 0.123456789], 3)
    io.write_obj(tmp_path / "m.obj", m)
    back = io.read_obj(tmp_path / "m.obj")
    assert np.array_equal(back.vertices, m.vertices) and np.array_equal(back.faces, m.faces)


def test_ply_round_trip(tmp_path):
    pts = np.random.default_rng(0).normal(size=(20, 3))
    conf = np.linspace(0, 1, 20)
    io.write_ply(tmp_path / "a.ply", pts, conf)
    p, c = io.read_ply(tmp_path / "a.ply")
    assert np.array_equal(p, pts) and np.array_equal(c, conf)
    io.write_ply(tmp_path / "b.ply", pts)
    assert io.read_ply(tmp_path / "b.ply")[1] is None
    (tmp_path / "c.ply").write_text("nope\n")
    with pytest.raises(io.FormatError):
        io.read_ply(tmp_path / "c.ply")
