import json
import logging

import pytest

from volfit.main import main
from volfit.utils.imageio import read_f32img

SMALL_MODEL = [
    "--set", "model.resolution=4", "--set", "model.n_warps=2", "--set", "model.warp_resolution=2",
    "--set", "render.step_count=16", "--set", "train.step_count=16",
    "--set", "train.batch_size=2", "--set", "train.pixels_per_image=16",
]


@pytest.fixture
def synth_dir(tmp_path, capsys):
    data = tmp_path / "data"
    code = main(["synth", "--scene", "solid_sphere", "--cameras", "3", "--holdout", "1", "--width", "8",
                 "--height", "8", "--steps", "32", "--out", str(data)])
    assert code == 0
    assert capsys.readouterr().out.strip() == str(data / "rig.json")
    return data


@pytest.fixture
def run_dir(tmp_path, synth_dir, capsys):
    run = tmp_path / "run"
    code = main(["fit", "--data", str(synth_dir), "--out", str(run), "--iters", "2", "--no-progress", *SMALL_MODEL])
    assert code == 0
    out = capsys.readouterr().out
    assert "final loss" in out
    assert "held-out psnr" in out
    return run


def test_fit_writes_run_outputs(run_dir):
    assert (run_dir / "final.ckpt").exists()
    assert (run_dir / "loss.txt").exists()
    config = json.loads((run_dir / "config.json").read_text())
    assert config["model"]["resolution"] == 4
    assert config["train"]["iterations"] == 2


def test_render_writes_every_camera(run_dir, tmp_path, capsys):
    out = tmp_path / "renders"
    code = main(["render", "--ckpt", str(run_dir / "final.ckpt"), "--out", str(out), "--slice", "0"])
    assert code == 0
    for name in ["cam00", "cam01", "cam02"]:
        rgb = read_f32img(out / f"{name}_f000_rgb.f32img")
        assert rgb.shape == (8, 8, 3)
        assert read_f32img(out / f"{name}_f000_depth.f32img").shape == (8, 8)
        assert (out / f"{name}_f000_alpha.png").exists()
    assert (out / "slice_f000_z+0.000.f32img").exists()


def test_render_warns_when_known_backgrounds_are_missing(run_dir, synth_dir, tmp_path, caplog):
    with caplog.at_level(logging.WARNING, logger="volfit.commands.render"):
        assert main(["render", "--ckpt", str(run_dir / "final.ckpt"), "--out", str(tmp_path / "bare")]) == 0
    assert "compositing over black" in caplog.text
    caplog.clear()
    with caplog.at_level(logging.WARNING, logger="volfit.commands.render"):
        assert main(["render", "--ckpt", str(run_dir / "final.ckpt"), "--data", str(synth_dir),
                     "--out", str(tmp_path / "with_data")]) == 0
    assert "compositing over black" not in caplog.text


def test_render_with_dataset_and_single_camera(run_dir, synth_dir, tmp_path):
    out = tmp_path / "renders"
    code = main(["render", "--ckpt", str(run_dir / "final.ckpt"), "--data", str(synth_dir), "--camera", "cam01",
                 "--out", str(out), "--march-steps", "8"])
    assert code == 0
    assert sorted(p.name for p in out.glob("*.f32img")) == [
        "cam01_f000_alpha.f32img", "cam01_f000_depth.f32img", "cam01_f000_rgb.f32img",
    ]


def test_eval_reproduces_the_held_out_metrics(run_dir, synth_dir, capsys):
    code = main(["eval", "--ckpt", str(run_dir / "final.ckpt"), "--data", str(synth_dir), "--holdout"])
    assert code == 0
    mean_line = capsys.readouterr().out.strip().splitlines()[-1]
    metrics = json.loads((run_dir / "fit_metrics.json").read_text())
    assert mean_line.split()[-1] == f"{metrics['mean_psnr']:.4f}"


def test_interpolation_needs_a_latent_model(run_dir, tmp_path, capsys):
    code = main(["render", "--ckpt", str(run_dir / "final.ckpt"), "--out", str(tmp_path / "i"),
                 "--interp", "0", "0"])
    assert code == 1
    assert "error:" in capsys.readouterr().err


def test_gradcheck_command(tmp_path, capsys):
    code = main(["gradcheck", "--mode", "direct", "--out", str(tmp_path / "report.txt")])
    assert code == 0
    assert "# overall ok" in capsys.readouterr().out
    assert (tmp_path / "report.txt").exists()


def test_missing_required_argument_is_a_usage_error(capsys):
    assert main(["fit"]) == 2
    assert "--data" in capsys.readouterr().err


def test_unknown_subcommand_is_a_usage_error():
    assert main(["paint"]) == 2


def test_bad_checkpoint_reports_an_error(tmp_path, capsys):
    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(b"garbage")
    code = main(["render", "--ckpt", str(bad), "--out", str(tmp_path / "out")])
    assert code == 1
    assert "error:" in capsys.readouterr().err


def test_invalid_override_reports_an_error(synth_dir, tmp_path, capsys):
    code = main(["fit", "--data", str(synth_dir), "--out", str(tmp_path / "run"), "--set", "model.resolution=-1"])
    assert code == 1
    assert "error:" in capsys.readouterr().err


def test_bad_frame_list_is_a_usage_error(synth_dir, tmp_path):
    assert main(["fit", "--data", str(synth_dir), "--frames", "a-b"]) == 2


def test_fit_help_lists_the_learning_rates(capsys):
    assert main(["fit", "--help"]) == 0
    out = capsys.readouterr().out
    assert "train.volume_learning_rate=0.01" in out
    assert "train.learning_rate=0.0001" in out
    assert "1e-4" in out
