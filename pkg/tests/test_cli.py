import csv
import json

import pytest

from lrnoise.cli import EXIT_DATA, EXIT_OK, EXIT_USAGE, file_hash, main
from lrnoise.data import save_pairs
from lrnoise.experiments import make_oracle_dataset
from lrnoise.raw import format_profiles, load_raw

FAST = ("epochs=1\nbatch_size=2\nsteps_per_epoch=1\ncritic_steps_per_gen_step=1\n"
        "penalty_pairs=2\nlr_init=1e-3\n")


@pytest.fixture(scope="module")
def work(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    ds = make_oracle_dataset(isos=(100, 400), n_train=8, n_val=0, n_test=0, size=32, seed=4)
    save_pairs(ds.train, ds.profiles, root / "pairs")
    save_pairs(ds.train, ds.profiles, root / "clean", clean_only=True)
    (root / "profiles.txt").write_text(format_profiles(ds.profiles))
    (root / "fast.cfg").write_text(FAST)
    return root


def _run(*args):
    return main([str(a) for a in args])


def test_simulate_writes_outputs_and_manifest(work):
    out = work / "sim"
    assert _run("simulate", "--clean", work / "clean", "--profile", work / "profiles.txt",
                "--out", out, "--seed", 3) == EXIT_OK
    assert len(list(out.glob("*_noisy.lrf"))) == 8 and len(list(out.glob("*.pgm"))) == 8
    man = json.loads((out / "manifest.json").read_text())
    assert man["command"] == "simulate" and man["seed"] == 3
    assert len(man["inputs"]["files"]) == 9


def test_simulate_is_deterministic_and_refuses_overwrite(work):
    args = ["simulate", "--clean", work / "clean", "--profile", work / "profiles.txt", "--mode", "pg"]
    assert _run(*args, "--out", work / "a", "--seed", 1) == EXIT_OK
    assert _run(*args, "--out", work / "b", "--seed", 1) == EXIT_OK
    for f in sorted((work / "a").glob("*_noisy.lrf")):
        assert file_hash(f) == file_hash(work / "b" / f.name)
    assert _run(*args, "--out", work / "a", "--seed", 1) == EXIT_USAGE
    assert _run(*args, "--out", work / "a", "--seed", 1, "--force") == EXIT_OK


def test_simulate_missing_profile_is_data_error(work, capsys):
    (work / "p100.txt").write_text("100 2 2 2 1 1\n")
    out = work / "bad"
    assert _run("simulate", "--clean", work / "clean", "--profile", work / "p100.txt",
                "--out", out) == EXIT_DATA
    assert "ISO 400" in capsys.readouterr().err
    assert not out.exists()


def test_usage_errors(work):
    with pytest.raises(SystemExit) as exc:
        main(["simulate"])
    assert exc.value.code == 2
    assert _run("evaluate", "--clean", work / "clean", "--real", work / "pairs", "--models", "nope",
                "--out", work / "e.csv") == EXIT_USAGE


def test_bad_config_is_data_error(work):
    (work / "bad.cfg").write_text("epochs=zero\n")
    assert _run("train-denoiser", "--pairs", work / "pairs", "--config", work / "bad.cfg",
                "--out", work / "x.ckpt") == EXIT_DATA


@pytest.fixture(scope="module")
def trained(work):
    den = work / "den.ckpt"
    assert _run("train-denoiser", "--pairs", work / "pairs", "--config", work / "fast.cfg",
                "--out", den, "--val-count", 1) == EXIT_OK
    nm = work / "nm.ckpt"
    assert _run("train-noise-model", "--pairs", work / "pairs", "--denoiser", den,
                "--config", work / "fast.cfg", "--out", nm, "--val-count", 1) == EXIT_OK
    return den, nm


def test_training_outputs(trained):
    den, nm = trained
    rows = list(csv.DictReader(nm.with_suffix(".csv").open()))
    assert [r["epoch"] for r in rows] == ["0", "1"]
    assert rows[0]["critic_loss"] == "" and float(rows[1]["val_kld"]) >= 0
    man = json.loads(nm.with_suffix(".manifest.json").read_text())
    assert man["command"] == "train-noise-model" and str(den) in man["inputs"]["files"]
    assert list(csv.DictReader(den.with_suffix(".csv").open()))[0]["val_psnr"]


def test_training_is_deterministic(work, trained):
    den, nm = trained
    again = work / "nm2.ckpt"
    assert _run("train-noise-model", "--pairs", work / "pairs", "--denoiser", den,
                "--config", work / "fast.cfg", "--out", again, "--val-count", 1) == EXIT_OK
    assert again.read_bytes() == nm.read_bytes()
    assert again.with_suffix(".csv").read_text() == nm.with_suffix(".csv").read_text()


def test_resume_extends_training(work, trained):
    den, nm = trained
    ext = work / "ext.ckpt"
    ext.write_bytes(nm.read_bytes())
    (work / "two.cfg").write_text(FAST.replace("epochs=1", "epochs=2"))
    assert _run("train-noise-model", "--pairs", work / "pairs", "--denoiser", den,
                "--config", work / "two.cfg", "--out", ext, "--val-count", 1, "--resume") == EXIT_OK
    rows = list(csv.DictReader(ext.with_suffix(".csv").open()))
    assert [r["epoch"] for r in rows] == ["0", "1", "2"]
    assert _run("train-noise-model", "--pairs", work / "pairs", "--denoiser", den,
                "--out", work / "missing.ckpt", "--resume") == EXIT_USAGE


def test_synthesize_and_evaluate(work, trained):
    _, nm = trained
    out = work / "syn"
    assert _run("synthesize", "--clean", work / "clean", "--model", nm, "--iso", 400,
                "--out", out, "--seed", 2) == EXIT_OK
    files = sorted(out.glob("*_noisy.lrf"))
    assert len(files) == 8
    assert {load_raw(f)[1].iso for f in files} == {400}
    assert _run("synthesize", "--clean", work / "clean", "--model", nm, "--iso", 800,
                "--out", work / "syn2") == EXIT_DATA

    table = work / "eval.csv"
    assert _run("evaluate", "--clean", work / "clean", "--real", work / "pairs",
                "--models", f"oracle-replay,pg,{nm}", "--out", table, "--samples", 2,
                "--profile", work / "profiles.txt") == EXIT_OK
    rows = list(csv.DictReader(table.open()))
    assert len(rows) == 3 * 9
    means = {r["model"]: float(r["kld"]) for r in rows if r["image_id"] == "mean"}
    assert means["oracle-replay"] == 0.0 and means["pg"] > 0.0
    assert set(means) == {"oracle-replay", "pg", "nm"}


def test_evaluate_oracle_needs_oracle_profile(work):
    assert _run("evaluate", "--clean", work / "clean", "--real", work / "pairs", "--models", "oracle",
                "--out", work / "o.csv") == EXIT_USAGE


def test_corrupt_checkpoint_is_data_error(work):
    bad = work / "corrupt.ckpt"
    bad.write_bytes(b"LRDM" + b"\0" * 3)
    assert _run("synthesize", "--clean", work / "clean", "--model", bad, "--iso", 100,
                "--out", work / "syn3") == EXIT_DATA
    assert not (work / "syn3").exists()
