"""Command-line dispatch, configuration files and run outputs."""
import hashlib
import json

import numpy as np
import pytest

from gh3d import cli
from gh3d.config import RunConfig, load_config, parse_config_text
from gh3d.errors import ConfigurationError
from gh3d.gradcheck import CheckResult

TINY_DATA = ["--num-views", "2", "--image-size", "16", "--texture-resolution", "8"]


def checksums(directory):
    return {str(p.relative_to(directory)): hashlib.sha256(p.read_bytes()).hexdigest()
            for p in sorted(directory.rglob("*")) if p.is_file()}


def metrics(out):
    return [json.loads(line) for line in (out / "metrics.jsonl").read_text().splitlines()]


# ---------------------------------------------------------------- parsing and exit codes

def test_help_exits_zero(capsys):
    assert cli.main(["--help"]) == 0
    text = capsys.readouterr().out
    for name in cli.COMMANDS:
        assert name in text


def test_usage_errors_exit_two(tmp_path):
    assert cli.main(["gen-data", "--no-such-flag"]) == 2
    assert cli.main(["no-such-command"]) == 2
    assert cli.main([]) == 2


@pytest.mark.parametrize("extra", [["--set", "pose_swap_prob=2"], ["--set", "bogus=1"], ["--set", "weight.nope=1"],
                                   ["--set", "seed=abc"], ["--iterations", "-3"], ["--set", "nokeyvalue"]])
def test_invalid_config_exits_three(tmp_path, capsys, extra):
    assert cli.main(["gen-data", "--out", str(tmp_path)] + extra) == 3
    assert capsys.readouterr().err.startswith("error [ConfigurationError]:")


def test_missing_checkpoint_exits_three(tmp_path, capsys):
    assert cli.main(["sample", "--out", str(tmp_path)]) == 3
    assert cli.main(["edit", "--out", str(tmp_path), "--checkpoint", str(tmp_path / "nope.3dgh")]) == 3
    assert "ConfigurationError" in capsys.readouterr().err
    assert metrics(tmp_path)[-1]["error"] == "ConfigurationError"


def test_out_of_range_scene_exits_three(tmp_path):
    assert cli.main(["fit-gaussians", "--out", str(tmp_path), "--scene", "4", "--iterations", "1"] + TINY_DATA) == 3


# ---------------------------------------------------------------- configuration

def test_config_text_round_trip(tmp_path):
    cfg = RunConfig(mode="train-toy", seed=4, iterations=12, lr=1e-3, weights={"rgb": 2.5, "adv": 0.5},
                    image_size=32, pose_swap_prob=0.6, out_dir=str(tmp_path))
    values = parse_config_text(cfg.to_text())
    again = RunConfig.from_mapping(values)
    assert again.to_text() == cfg.to_text()
    assert again.loss_weights().rgb == 2.5 and again.loss_weights().seg_mesh == 100
    path = tmp_path / "run.cfg"
    path.write_text("# comment\nmode = fit-hair\nseed = 9  # trailing\n\nweight.mask = 3\n")
    loaded = load_config(path)
    assert (loaded.mode, loaded.seed, loaded.weights) == ("fit-hair", 9, {"mask": 3.0})


def test_config_file_and_flags_are_merged(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("seed = 3\nimage_size = 12\nweight.rgb = 4\n")
    out = tmp_path / "out"
    assert cli.main(["gen-data", "--config", str(path), "--seed", "5", "--out", str(out), "--num-views", "1",
                     "--texture-resolution", "4"]) == 0
    echo = parse_config_text((out / "config.txt").read_text())
    assert (echo["mode"], echo["seed"], echo["image_size"], echo["weight.rgb"]) == ("gen-data", "5", "12", "4.0")


def test_config_errors():
    with pytest.raises(ConfigurationError):
        parse_config_text("just words\n")
    with pytest.raises(ConfigurationError):
        parse_config_text(" = 3\n")
    with pytest.raises(ConfigurationError):
        RunConfig(mode="dance")
    with pytest.raises(ConfigurationError):
        RunConfig.from_mapping({"seed": "1"})


# ---------------------------------------------------------------- subcommands

def test_gen_data_is_reproducible(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for out in (a, b):
        assert cli.main(["gen-data", "--seed", "1", "--out", str(out)] + TINY_DATA) == 0
    sums = checksums(a)
    assert sums == checksums(b)
    assert "config.txt" in sums and "metrics.jsonl" in sums and "data/scene_000/scene.3dgh" in sums
    assert "scene_000_view_1_rgb.png" in sums


def test_render_reproduces_generated_data_and_emits_floats(tmp_path):
    data = tmp_path / "gen"
    assert cli.main(["gen-data", "--out", str(data)] + TINY_DATA) == 0
    out = tmp_path / "render"
    assert cli.main(["render", "--data", str(data / "data"), "--out", str(out), "--emit-float"]) == 0
    for line in metrics(out):
        assert line["max_abs_diff_rgb"] == 0.0 and line["max_abs_diff_mask"] == 0.0
    rgb = np.load(out / "view_0_rgb.npy")
    assert rgb.dtype == np.float64 and rgb.shape == (16, 16, 3)
    assert cli.main(["render", "--out", str(out)]) == 3


def test_fit_gaussians_then_render_fitted_textures(tmp_path):
    fit = tmp_path / "fit"
    assert cli.main(["fit-gaussians", "--out", str(fit), "--iterations", "3", "--emit-float"] + TINY_DATA) == 0
    lines = metrics(fit)
    assert [line["step"] for line in lines if "step" in line] == [0, 1, 2]
    assert "mean_psnr" in lines[-1]
    assert (fit / "textures.3dgh").is_file() and (fit / "view_1_mask.npy").is_file()
    data = tmp_path / "gen"
    assert cli.main(["gen-data", "--out", str(data)] + TINY_DATA) == 0
    out = tmp_path / "render"
    assert cli.main(["render", "--data", str(data / "data"), "--textures", str(fit / "textures.3dgh"),
                     "--out", str(out), "--emit-float"]) == 0
    # same seeded scene; the stored textures are single precision, hence the tolerance
    for v in range(2):
        for kind in ("rgb", "mask"):
            np.testing.assert_allclose(np.load(out / f"view_{v}_{kind}.npy"), np.load(fit / f"view_{v}_{kind}.npy"),
                                       atol=1e-5)


def test_fit_hair_and_build_pca(tmp_path):
    hair = tmp_path / "hair"
    assert cli.main(["fit-hair", "--out", str(hair), "--image-size", "32", "--iterations", "3"]) == 0
    assert metrics(hair)[-1]["iterations"] == 3
    assert (hair / "fitted_hair.obj").is_file() and (hair / "view_3_target.png").is_file()
    pca = tmp_path / "pca"
    assert cli.main(["build-pca", "--out", str(pca), "--num-meshes", "6", "--components", "5"]) == 0
    lines = metrics(pca)
    assert lines[-1]["rank"] == 5
    assert all(line["reconstruction_rms_over_diag"] <= 1e-5 for line in lines[:-1])


def test_train_then_sample_edit_and_sweep(tmp_path):
    train = tmp_path / "train"
    assert cli.main(["train-toy", "--out", str(train), "--iterations", "2", "--num-views", "2"]) == 0
    assert len(metrics(train)) == 2
    assert json.loads((train / "summary.json").read_text())["steps"] == 2
    ckpt = str(train / "checkpoint.3dgh")
    common = ["--checkpoint", ckpt, "--views", "2", "--image-size", "16"]
    assert cli.main(["sample", "--out", str(tmp_path / "s")] + common) == 0
    assert cli.main(["edit", "--out", str(tmp_path / "e")] + common) == 0
    assert cli.main(["cfg-sweep", "--out", str(tmp_path / "c"), "--omegas", "0,0.5,1"] + common) == 0
    sets = {line["set"] for line in metrics(tmp_path / "c")}
    assert sets == {"omega_0", "omega_0.5", "omega_1"}
    assert (tmp_path / "e" / "edit_view_1_rgb.png").is_file()
    assert cli.main(["cfg-sweep", "--out", str(tmp_path / "bad"), "--omegas", "a,b"] + common) == 3


def test_check_grads_exit_code_follows_suite(tmp_path, monkeypatch, capsys):
    out = tmp_path / "ok"
    assert cli.main(["check-grads", "--out", str(out), "--renderer-scenes", "1", "--skip-end-to-end"]) == 0
    lines = metrics(out)
    assert lines and all(line["passed"] for line in lines)
    assert "PASS" in capsys.readouterr().out

    import gh3d.gradcheck

    def failing_suite(renderer_scenes, include_end_to_end, log):
        result = CheckResult("renderer", 1.0, 1e-3, 10)
        log(result)
        return [result]

    monkeypatch.setattr(gh3d.gradcheck, "run_suite", failing_suite)
    assert cli.main(["check-grads", "--out", str(tmp_path / "bad")]) == 4
    assert "error [NumericError]" in capsys.readouterr().err
