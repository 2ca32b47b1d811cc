import json
import subprocess
import sys

import pytest

from covaug import cli
from covaug import datakit as dk
from covaug import experiments as ex

TINY = {"train": {"episodes": 3, "batch_size": 20, "n_way": 2, "k_shot": 2, "hidden": 8,
                  "noise_dim": 2, "n_components": 3, "m": 2}}


@pytest.fixture(scope="module")
def clusters(tmp_path_factory):
    d = tmp_path_factory.mktemp("clusters")
    assert cli.main(["gen-data", "clusters", "--seed", "3", "--out", str(d)]) == 0
    return d


@pytest.fixture
def cfg_file(tmp_path):
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps(TINY))
    return p


def test_gen_data_spiral_files(tmp_path):
    assert cli.main(["gen-data", "spiral", "--seed", "7", "--out", str(tmp_path)]) == 0
    for name in ("base.csv", "seeds.csv", "heldout.csv"):
        assert (tmp_path / name).exists()
    assert dk.load_features(tmp_path / "seeds.csv").counts() == {2: 4, 3: 4}
    echoed = json.loads((tmp_path / "gen-data.config.json").read_text())
    assert echoed["command"] == "gen-data" and echoed["train"]["seed"] == 7


def test_gen_data_clusters_files(clusters):
    assert dk.load_features(clusters / "base_heldout.csv").classes() == list(range(20))


def test_train_writes_checkpoint_and_log(tmp_path, clusters, cfg_file):
    out = tmp_path / "run" / "ckpt.json"
    assert cli.main(["train", "--config", str(cfg_file), "--variant", "ccov", "--data", str(clusters),
                     "--out", str(out)]) == 0
    bundle, cfg, optim, episode = dk.load_checkpoint(out)
    assert episode == 3 and cfg.variant == "ccov" and optim["g"].step == 3
    lines = out.with_suffix(".log.csv").read_text().splitlines()
    assert lines[0] == "episode,lr,adv_n,adv_b,cyc,cov,total_g,total_d" and len(lines) == 4
    assert json.loads((out.parent / "train.config.json").read_text())["train"]["hidden"] == 8


def test_flags_override_config(tmp_path, clusters, cfg_file):
    out = tmp_path / "c.json"
    assert cli.main(["train", "--config", str(cfg_file), "--variant", "cgan", "--episodes", "1",
                     "--seed", "5", "--nbs", "hard", "--k", "3", "--data", str(clusters),
                     "--out", str(out)]) == 0
    _, cfg, _, episode = dk.load_checkpoint(out)
    assert (cfg.variant, cfg.seed, cfg.nbs, cfg.nbs_k, episode) == ("cgan", 5, "hard", 3, 1)


def test_train_is_byte_identical(tmp_path, clusters, cfg_file):
    outs = []
    for name in ("a", "b"):
        out = tmp_path / name / "ckpt.json"
        assert cli.main(["train", "--config", str(cfg_file), "--variant", "cdeli", "--seed", "2",
                         "--data", str(clusters), "--out", str(out)]) == 0
        outs.append(out)
    a, b = outs
    assert a.read_bytes() == b.read_bytes()
    assert a.with_suffix(".log.csv").read_bytes() == b.with_suffix(".log.csv").read_bytes()


def test_resume_equals_uninterrupted(tmp_path, clusters, cfg_file):
    full, part, resumed = tmp_path / "full.json", tmp_path / "part.json", tmp_path / "res.json"
    base = ["train", "--config", str(cfg_file), "--data", str(clusters)]
    assert cli.main(base + ["--episodes", "3", "--out", str(full)]) == 0
    assert cli.main(base + ["--episodes", "2", "--out", str(part)]) == 0
    assert cli.main(base + ["--episodes", "3", "--resume", str(part), "--out", str(resumed)]) == 0
    assert full.read_bytes() == resumed.read_bytes()
    assert full.with_suffix(".log.csv").read_bytes() == resumed.with_suffix(".log.csv").read_bytes()


def test_direct_training_augment_eval_viz(tmp_path):
    data = tmp_path / "spiral"
    assert cli.main(["gen-data", "spiral", "--out", str(data)]) == 0
    ckpt = tmp_path / "m.json"
    assert cli.main(["train", "--config", str(_cfg(tmp_path, batch_size=16, n_way=1, k_shot=2)),
                     "--direct", "--data", str(data), "--out", str(ckpt)]) == 0
    aug = tmp_path / "aug.csv"
    assert cli.main(["augment", "--data", str(data), "--checkpoint", str(ckpt), "--out", str(aug)]) == 0
    full = dk.load_features(aug)
    syn = dk.load_features(tmp_path / "aug_synthetic.csv")
    assert full.counts() == {2: 400, 3: 400} and len(syn) == 792
    rep = tmp_path / "rep.json"
    assert cli.main(["eval", "--data", str(data), "--checkpoint", str(ckpt), "--K", "4",
                     "--trials", "2", "--out", str(rep)]) == 0
    doc = json.loads(rep.read_text())
    assert doc["trials"] == 2 and doc["K"] == 4 and doc["setting"] == "lsl"
    viz = tmp_path / "viz"
    assert cli.main(["export-viz", "--data", str(data), "--checkpoint", str(ckpt), "--out", str(viz)]) == 0
    assert {p.name for p in viz.glob("*_2d.csv")} == {"base_2d.csv", "seeds_2d.csv", "heldout_2d.csv",
                                                     "synthetic_2d.csv"}


def _cfg(tmp_path, **train):
    p = tmp_path / "cfg2.json"
    p.write_text(json.dumps({"train": {**TINY["train"], **train}}))
    return p


def test_eval_glsl_without_model(tmp_path, clusters):
    rep = tmp_path / "glsl.json"
    assert cli.main(["eval", "--data", str(clusters), "--setting", "glsl", "--trials", "1",
                     "--out", str(rep)]) == 0
    assert json.loads(rep.read_text())["base_novel_ratio"] > 0


def test_export_viz_projects_high_dim(tmp_path, clusters):
    viz = tmp_path / "viz"
    assert cli.main(["export-viz", "--data", str(clusters), "--out", str(viz)]) == 0
    assert dk.load_features(viz / "base_2d.csv").dim == 2


def test_diversity_command(tmp_path, capsys):
    p = tmp_path / "x.csv"
    p.write_text("label,f0,f1\n0,0,0\n0,3,4\n1,1,1\n1,1,1\n")
    out = tmp_path / "d.json"
    assert cli.main(["diversity", "--input", str(p), "--out", str(out)]) == 0
    assert json.loads(out.read_text()) == {"mean": 2.5, "per_class": {"0": 5.0, "1": 0.0}}


def test_gradcheck_exit_codes(monkeypatch, capsys):
    monkeypatch.setattr(ex, "loss_gradcheck", lambda seed: {("ccov", "cov"): 3e-6})
    assert cli.main(["gradcheck", "--seed", "1"]) == 0
    monkeypatch.setattr(ex, "loss_gradcheck", lambda seed: {("ccov", "cov"): 2e-4})
    assert cli.main(["gradcheck", "--seed", "1"]) == 1
    assert "FAIL" in capsys.readouterr().out


def test_usage_errors_exit_2(tmp_path):
    for argv in (["train", "--bogus"], ["nope"], ["train", "--variant", "wgan", "--out", "x"]):
        with pytest.raises(SystemExit) as exc:
            cli.main(argv)
        assert exc.value.code == 2
    assert cli.main(["train", "--out", str(tmp_path / "c.json")]) == 2   # no --data
    assert cli.main(["augment", "--data", str(tmp_path), "--out", "x"]) == 2
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"train": {"learning_rate": 1}}))
    assert cli.main(["gen-data", "spiral", "--config", str(bad), "--out", str(tmp_path)]) == 2


def test_runtime_failure_exit_1(tmp_path):
    d = tmp_path / "d"
    d.mkdir()
    (d / "base.csv").write_text("label,f0\n0,nan?\n")
    assert cli.main(["train", "--data", str(d), "--out", str(tmp_path / "c.json")]) == 1


def test_console_entry_point():
    r = subprocess.run([sys.executable, "-m", "covaug.cli", "train", "--out", "x", "--nope"],
                       capture_output=True, text=True)
    assert r.returncode == 2 and "unrecognized arguments" in r.stderr


@pytest.mark.parametrize("command", ["gen-data", "train", "augment", "eval", "diversity", "gradcheck",
                                     "export-viz"])
def test_help_lists_flags_with_defaults(command, capsys):
    with pytest.raises(SystemExit) as exc:
        cli.main([command, "--help"])
    assert exc.value.code == 0
    text = capsys.readouterr().out
    action_lines = [line for line in text.splitlines() if line.strip().startswith("--")]
    assert "--seed" in text and "--config" in text
    # every flag's description mentions a default or says it is required
    blocks = text.split("options:")[1]
    for flag in [line.split()[0] for line in action_lines]:
        chunk = blocks.split(flag, 1)[1].split("\n  -", 1)[0]
        assert "default" in chunk or "required" in chunk, flag
