import json
import shutil

import numpy as np
import pytest

from ndcf import cli
from ndcf import io
from ndcf.fields import ModelConfig

from .fixtures import TINY

SMALL_GEN = {"n_off": 200, "n_surface": 100, "n_nominal": 50, "n_patch": 400, "divisions": 6}
CONFIG = {
    "model": TINY.to_dict(),
    "gen": SMALL_GEN,
    "per_kind": 3,
    "splits": [0.34, 0.33, 0.33],
    "train": {"pretrain_epochs": 2, "pretrain_n_off": 200, "pretrain_n_surface": 100, "pretrain_batch": 150,
              "train_epochs": 2, "augment": 1, "n_off": 16, "n_surface": 8, "n_nominal": 8},
    "inference": {"steps": 3},
    "n_iou": 2000,
    "grid_resolution": 16,
    "sweep_eta": [1e-3],
    "sweep_eps": [0.2],
    "sweep_steps": [3],
    "noise_p": [0.0, 1.0],
    "noise_seeds": [0, 1],
}


def files_of(d):
    return {p.relative_to(d): p.read_bytes() for p in sorted(d.rglob("*")) if p.is_file()}


@pytest.fixture(scope="module")
def work(tmp_path_factory):
    """datagen -> pretrain -> train -> infer, shared by the tests below."""
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "config.json"
    cfg.write_text(json.dumps(CONFIG))
    base = ["--config", str(cfg)]
    assert cli.main(["datagen", *base, "--out", str(root / "data")]) == 0
    assert cli.main(["pretrain", *base, "--out", str(root / "pre")]) == 0
    assert cli.main(["train", *base, "--data", str(root / "data"), "--checkpoint", str(root / "pre"),
                     "--out", str(root / "train")]) == 0
    assert cli.main(["infer", *base, "--data", str(root / "data"), "--checkpoint",
                     str(root / "train" / "checkpoint"), "--out", str(root / "pred")]) == 0
    return root, base


# ---------------------------------------------------------------- usage


def test_version(capsys):
    with pytest.raises(SystemExit) as exc:
        cli.main(["--version"])
    assert exc.value.code == 0


@pytest.mark.parametrize("argv", [[], ["fly", "--out", "x"], ["datagen"], ["datagen", "--out", "x", "--profile", "huge"]])
def test_usage_errors_exit_one(argv, tmp_path):
    assert cli.main(argv) == 1


def test_unknown_config_key_is_usage_error(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"train": {"learning_speed": 3}}))
    assert cli.main(["datagen", "--config", str(bad), "--out", str(tmp_path / "o")]) == 1


def test_profiles():
    desk = cli.RunConfig.for_profile("desk")
    paper = cli.RunConfig.for_profile("paper")
    assert 3 * desk.per_kind == 60
    assert 3 * paper.per_kind == 3000
    assert paper.model == ModelConfig() and paper.train.pretrain_epochs == 50_000


def test_run_config_round_trip():
    cfg = cli.RunConfig.for_profile("desk", 4).merged(CONFIG)
    assert cli.RunConfig.from_dict(cfg.to_dict()) == cfg


# ---------------------------------------------------------------- datagen


def test_datagen_splits_and_provenance(work):
    root, _ = work
    man = io.read_manifest(root / "data", io.DATASET_FORMAT)
    assert man["counts"] == {"train": 3, "val": 3, "test": 3}
    assert man["run_config"]["gen"]["n_off"] == 200 and man["code_version"]
    names = [n for split in man["splits"].values() for n in split]
    assert len(set(names)) == 9


def test_desk_profile_makes_sixty(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"gen": {**SMALL_GEN, "n_off": 20, "n_surface": 10, "n_nominal": 5, "n_patch": 20}}))
    assert cli.main(["datagen", "--config", str(cfg), "--out", str(tmp_path / "d")]) == 0
    man = io.read_manifest(tmp_path / "d", io.DATASET_FORMAT)
    assert sum(man["counts"].values()) == 60
    kinds = [n.split("/")[1].split("-")[0] for s in man["splits"].values() for n in s]
    assert {k: kinds.count(k) for k in set(kinds)} == {"box": 20, "curves": 20, "ridges": 20}


def test_non_empty_output_refused_without_force(work, tmp_path):
    root, base = work
    out = tmp_path / "d"
    out.mkdir()
    (out / "x").write_text("keep")
    assert cli.main(["datagen", *base, "--out", str(out)]) == 1
    assert (out / "x").read_text() == "keep"


def test_datagen_bytewise_deterministic(work, tmp_path):
    root, base = work
    assert cli.main(["datagen", *base, "--out", str(tmp_path / "again")]) == 0
    assert files_of(root / "data") == files_of(tmp_path / "again")


# ---------------------------------------------------------------- train


def test_train_log_and_determinism(work, tmp_path):
    root, base = work
    log = (root / "train" / "train_log.jsonl").read_text().splitlines()
    assert [json.loads(x)["epoch"] for x in log] == [0, 1, 2]
    assert cli.main(["train", *base, "--data", str(root / "data"), "--checkpoint", str(root / "pre"),
                     "--out", str(tmp_path / "t2")]) == 0
    assert files_of(root / "train") == files_of(tmp_path / "t2")


def test_architecture_mismatch_exit_two(work, tmp_path, capsys):
    root, _ = work
    other = tmp_path / "other.json"
    other.write_text(json.dumps({**CONFIG, "model": {**TINY.to_dict(), "latent_dim": 5}}))
    code = cli.main(["train", "--config", str(other), "--data", str(root / "data"), "--checkpoint",
                     str(root / "pre"), "--out", str(tmp_path / "t")])
    assert code == 2
    err = capsys.readouterr().err
    assert "checkpoint:" in err and "requested:" in err


def test_missing_dataset_exit_two(work, tmp_path):
    root, base = work
    assert cli.main(["train", *base, "--data", str(tmp_path / "nowhere"), "--checkpoint", str(root / "pre"),
                     "--out", str(tmp_path / "t")]) == 2


def test_divergence_exit_three(work, tmp_path):
    root, base = work
    model, _ = io.load_checkpoint(root / "pre")
    model.params["O"] = model.params["O"] * 1e200
    io.save_checkpoint(tmp_path / "bad", model)
    assert cli.main(["train", *base, "--data", str(root / "data"), "--checkpoint", str(tmp_path / "bad"),
                     "--out", str(tmp_path / "t")]) == 3


# ---------------------------------------------------------------- infer / eval


def test_infer_reports_timings(work):
    root, _ = work
    pred = json.loads((root / "pred" / "predictions.json").read_text())
    assert len(pred["examples"]) == 3
    for ex in pred["examples"]:
        assert ex["seconds"] > 0 and ex["objective"] <= ex["initial_objective"]
        if ex["surface_found"]:
            assert (root / "pred" / ex["name"] / "mesh.obj").exists()
    assert pred["run_config"]["inference"]["steps"] == 3


def test_eval_ground_truth_fixture_is_perfect(work, tmp_path):
    root, base = work
    preds = tmp_path / "gt"
    for inter in io.load_split(root / "data", "test"):
        d = preds / inter.name
        d.mkdir(parents=True)
        io.write_obj(d / "mesh.obj", inter.deformed)
        io.write_ply(d / "patch.ply", inter.gt_patch)
    assert cli.main(["eval", *base, "--data", str(root / "data"), "--predictions", str(preds),
                     "--out", str(tmp_path / "ev")]) == 0
    m = json.loads((tmp_path / "ev" / "metrics.json").read_text())
    for ex in m["examples"]:
        assert ex["surface_cd"] == 0.0 and ex["iou"] == 1.0
        assert ex["patch_cd"] in (0.0, None)
    assert m["summary"]["surface_cd"]["mean"] == 0.0 and m["summary"]["iou"]["mean"] == 1.0
    assert "surface_cd" in (tmp_path / "ev" / "table.txt").read_text()


def test_eval_of_infer_output(work, tmp_path):
    root, base = work
    assert cli.main(["eval", *base, "--data", str(root / "data"), "--predictions", str(root / "pred"),
                     "--out", str(tmp_path / "ev")]) == 0
    m = json.loads((tmp_path / "ev" / "metrics.json").read_text())
    assert m["summary"]["n"] == 3 and "boxplot" in m


# ---------------------------------------------------------------- sweep / ablation


def test_single_cell_sweep_returns_that_cell(work, tmp_path):
    root, base = work
    args = ["sweep", *base, "--data", str(root / "data"), "--checkpoint", str(root / "train" / "checkpoint")]
    assert cli.main([*args, "--out", str(tmp_path / "s1")]) == 0
    assert cli.main([*args, "--out", str(tmp_path / "s2")]) == 0
    a = json.loads((tmp_path / "s1" / "sweep.json").read_text())
    b = json.loads((tmp_path / "s2" / "sweep.json").read_text())
    assert len(a["rows"]) == 1 and a["best"] == a["rows"][0]
    assert (a["best"]["eta"], a["best"]["eps"], a["best"]["steps"]) == (1e-3, 0.2, 3)
    assert a["rows"] == b["rows"]


def test_empty_sweep_grid_refused(work, tmp_path):
    root, _ = work
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({**CONFIG, "sweep_eta": []}))
    assert cli.main(["sweep", "--config", str(cfg), "--data", str(root / "data"), "--checkpoint",
                     str(root / "train" / "checkpoint"), "--out", str(tmp_path / "s")]) == 1


def test_ablation_zero_noise_reproduces_inference(work, tmp_path):
    root, base = work
    assert cli.main(["ablate-noise", *base, "--data", str(root / "data"), "--checkpoint",
                     str(root / "train" / "checkpoint"), "--out", str(tmp_path / "ab")]) == 0
    rows = json.loads((tmp_path / "ab" / "ablation.json").read_text())["rows"]
    assert [r["p"] for r in rows] == [0.0, 1.0]
    pred = json.loads((root / "pred" / "predictions.json").read_text())["examples"]
    plain = [ex.get("metrics") for ex in pred]
    n = len(plain)
    for s in range(2):
        assert rows[0]["records"][s * n:(s + 1) * n] == plain
    assert "patch CD" in (tmp_path / "ab" / "table.txt").read_text()
