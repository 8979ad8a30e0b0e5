"""CLI exit codes, determinism, and the full pipeline chain."""

import json

import numpy as np

from udeer.cli import main
from udeer.kitti_io import (
    SynthConfig,
    list_frame_ids,
    load_dataset,
    load_frame,
    read_png_gray,
    synth_scene,
)
from udeer.manifest import tree_checksums

TINY = "height = 48\nwidth = 64\nobstacle_count = 2\nnoise_level = 0.3\n"


def write_config(path, text):
    path.write_text(text, encoding="utf-8")
    return str(path)


def synth_dir(tmp_path, name="data", count=4, seed=0):
    cfg = write_config(tmp_path / f"{name}.cfg", f"count = {count}\nseed = {seed}\n{TINY}out_dir = {tmp_path / name}\n")
    assert main(["synth", "--config", cfg]) == 0
    return tmp_path / name


class TestSynthCommand:
    def test_count_zero_creates_structure_only(self, tmp_path):
        cfg = write_config(tmp_path / "s.cfg", f"count = 0\n{TINY}out_dir = {tmp_path / 'empty'}\n")
        assert main(["synth", "--config", cfg]) == 0
        assert (tmp_path / "empty" / "image_2").is_dir()
        assert list_frame_ids(tmp_path / "empty") == []

    def test_same_seed_byte_identical_trees(self, tmp_path):
        a = synth_dir(tmp_path, "a", count=3, seed=5)
        b = synth_dir(tmp_path, "b", count=3, seed=5)
        sums_a = {k: v for k, v in tree_checksums(a).items() if k != "manifest.json"}
        sums_b = {k: v for k, v in tree_checksums(b).items() if k != "manifest.json"}
        assert sums_a == sums_b

    def test_bundles_round_trip_through_io(self, tmp_path):
        out = synth_dir(tmp_path, "rt", count=3, seed=9)
        frames = load_dataset(out)
        assert len(frames) == 3
        direct = synth_scene(9, SynthConfig(height=48, width=64, obstacle_count=2, noise_level=0.3))
        loaded = load_frame(out, direct.frame_id)
        assert np.array_equal(loaded.image, direct.image)
        assert np.array_equal(loaded.cloud.points, direct.cloud.points)
        assert np.array_equal(loaded.gt.grid, direct.gt.grid)
        assert np.array_equal(loaded.calib.P, direct.calib.P)
        # depth round-trips through 16-bit quantization
        assert np.max(np.abs(loaded.depth.grid - direct.depth.grid)) < 1e-4

    def test_degenerate_resolution_is_config_error(self, tmp_path):
        cfg = write_config(tmp_path / "s.cfg", f"count = 1\nheight = 8\nwidth = 64\nout_dir = {tmp_path / 'x'}\n")
        assert main(["synth", "--config", cfg]) == 4

    def test_unknown_key_rejected(self, tmp_path):
        cfg = write_config(tmp_path / "s.cfg", f"count = 1\nbogus = 3\n{TINY}out_dir = {tmp_path / 'x'}\n")
        assert main(["synth", "--config", cfg]) == 4

    def test_missing_config_file(self, tmp_path):
        assert main(["synth", "--config", str(tmp_path / "nope.cfg")]) == 4


class TestAdaptCommand:
    def test_empty_input_ok(self, tmp_path):
        (tmp_path / "empty").mkdir()
        cfg = write_config(
            tmp_path / "a.cfg", f"input_dir = {tmp_path / 'empty'}\nout_dir = {tmp_path / 'out'}\n"
        )
        assert main(["adapt", "--config", cfg]) == 0
        assert list((tmp_path / "out" / "adm").glob("*.png")) == []

    def test_malformed_velodyne_names_frame(self, tmp_path, capsys):
        data = synth_dir(tmp_path, count=2)
        victim = sorted((data / "velodyne").glob("*.bin"))[0]
        victim.write_bytes(b"\x00" * 17)
        cfg = write_config(tmp_path / "a.cfg", f"input_dir = {data}\nout_dir = {tmp_path / 'out'}\n")
        assert main(["adapt", "--config", cfg]) == 3
        assert victim.stem in capsys.readouterr().err

    def test_emitted_adm_matches_in_process_result(self, tmp_path):
        data = synth_dir(tmp_path, count=1, seed=3)
        out = tmp_path / "out"
        cfg = write_config(tmp_path / "a.cfg", f"input_dir = {data}\nout_dir = {out}\n")
        assert main(["adapt", "--config", cfg]) == 0

        fid = list_frame_ids(data)[0]
        frame = load_frame(data, fid)
        from udeer.lidar_adaptation import altitude_difference, densify, normalize_adm, project_points

        proj = project_points(frame.cloud, frame.calib, 48, 64)
        adm = normalize_adm(densify(altitude_difference(proj, 2), 8), 2.0, 98.0)
        png = read_png_gray(out / "adm" / f"{fid}.png")
        quantized = np.round(adm.grid * 65535.0) / 65535.0
        assert np.array_equal(png, quantized)
        valid_png = read_png_gray(out / "adm_valid" / f"{fid}.png")
        assert np.array_equal(valid_png > 0, adm.valid)


class TestOrderingContracts:
    def test_pseudo_without_checkpoint_exits_5(self, tmp_path):
        data = synth_dir(tmp_path, count=1)
        cfg = write_config(
            tmp_path / "p.cfg",
            f"checkpoint = {tmp_path / 'missing.udcp'}\nlabeled_dir = {data}\n"
            f"unlabeled_dir = {data}\nout_dir = {tmp_path / 'out'}\n",
        )
        assert main(["pseudo", "--config", cfg]) == 5

    def test_eval_without_checkpoint_exits_5(self, tmp_path):
        data = synth_dir(tmp_path, count=1)
        cfg = write_config(
            tmp_path / "e.cfg",
            f"checkpoint = {tmp_path / 'missing.udcp'}\neval_dir = {data}\nout_dir = {tmp_path / 'out'}\n",
        )
        assert main(["eval", "--config", cfg]) == 5

    def test_eval_needs_some_source(self, tmp_path):
        data = synth_dir(tmp_path, count=1)
        cfg = write_config(tmp_path / "e.cfg", f"eval_dir = {data}\nout_dir = {tmp_path / 'out'}\n")
        assert main(["eval", "--config", cfg]) == 4


class TestEvalCommand:
    def test_perfect_predictions_score_100(self, tmp_path):
        data = synth_dir(tmp_path, count=2, seed=4)
        pred = tmp_path / "pred"
        pred.mkdir()
        from udeer.kitti_io import write_png_gray16

        for fid in list_frame_ids(data):
            frame = load_frame(data, fid)
            write_png_gray16(pred / f"{fid}.png", frame.gt.road.astype(np.float64))
        out = tmp_path / "evalout"
        cfg = write_config(tmp_path / "e.cfg", f"eval_dir = {data}\npred_dir = {pred}\nout_dir = {out}\n")
        assert main(["eval", "--config", cfg]) == 0
        summary = (out / "summary.txt").read_text()
        assert "MaxF=100.00" in summary
        assert (out / "report.csv").exists()
        assert (out / "manifest.json").exists()


class TestFullChain:
    def test_synth_adapt_train_pseudo_eval_visualize(self, tmp_path):
        labeled = synth_dir(tmp_path, "lab", count=3, seed=10)
        unlabeled = synth_dir(tmp_path, "unl", count=2, seed=40)
        input_sums = tree_checksums(labeled)

        adapt_cfg = write_config(
            tmp_path / "adapt.cfg", f"input_dir = {labeled}\nout_dir = {tmp_path / 'adm'}\n"
        )
        assert main(["adapt", "--config", adapt_cfg]) == 0

        train_out = tmp_path / "run"
        train_cfg = write_config(
            tmp_path / "train.cfg",
            f"train_dir = {labeled}\nout_dir = {train_out}\nsteps = 4\nlr = 0.05\nseed = 1\n",
        )
        assert main(["train", "--config", train_cfg]) == 0
        ckpt = train_out / "checkpoint.udcp"
        assert ckpt.exists()
        log_lines = (train_out / "loss_log.csv").read_text().strip().splitlines()
        assert log_lines[0] == "step,loss_fine,loss_image,loss_lidar,loss_depth,total"
        assert len(log_lines) == 5

        pseudo_out = tmp_path / "semi"
        pseudo_cfg = write_config(
            tmp_path / "pseudo.cfg",
            f"checkpoint = {ckpt}\nlabeled_dir = {labeled}\nunlabeled_dir = {unlabeled}\n"
            f"heldout_dir = {labeled}\nout_dir = {pseudo_out}\nrounds = 1\nsteps_per_round = 2\n"
            f"lr = 0.02\nseed = 2\n",
        )
        assert main(["pseudo", "--config", pseudo_cfg]) == 0
        rounds = [json.loads(line) for line in (pseudo_out / "rounds.jsonl").read_text().splitlines()]
        assert len(rounds) == 1
        assert set(rounds[0]) == {
            "round", "mean_confidence", "included_fraction", "labeled_loss", "pseudo_loss", "heldout_maxf",
        }
        assert rounds[0]["heldout_maxf"] is not None

        eval_out = tmp_path / "eval"
        eval_cfg = write_config(
            tmp_path / "eval.cfg",
            f"checkpoint = {pseudo_out / 'checkpoint_semi.udcp'}\neval_dir = {labeled}\nout_dir = {eval_out}\n",
        )
        assert main(["eval", "--config", eval_cfg]) == 0
        assert "MaxF=" in (eval_out / "summary.txt").read_text()

        vis_out = tmp_path / "vis"
        vis_cfg = write_config(
            tmp_path / "vis.cfg",
            f"checkpoint = {ckpt}\ndata_dir = {labeled}\nout_dir = {vis_out}\n",
        )
        assert main(["visualize", "--config", vis_cfg]) == 0
        overlays = list((vis_out / "overlays").glob("*.png"))
        assert len(overlays) == 3

        for out_dir in (train_out, pseudo_out, eval_out, vis_out):
            manifest = json.loads((out_dir / "manifest.json").read_text())
            assert manifest["tool"] == "udeer"
            assert manifest["input_checksums"]
            assert manifest["pipeline"]["camera_key"] == "P2"

        # no command mutated its input directory
        assert tree_checksums(labeled) == input_sums

    def test_train_determinism_across_runs(self, tmp_path):
        data = synth_dir(tmp_path, count=2, seed=7)
        outs = []
        for name in ("r1", "r2"):
            out = tmp_path / name
            cfg = write_config(
                tmp_path / f"{name}.cfg",
                f"train_dir = {data}\nout_dir = {out}\nsteps = 3\nlr = 0.05\nseed = 3\n",
            )
            assert main(["train", "--config", cfg]) == 0
            outs.append(out)
        a = (outs[0] / "checkpoint.udcp").read_bytes()
        b = (outs[1] / "checkpoint.udcp").read_bytes()
        assert a == b
        assert (outs[0] / "loss_log.csv").read_bytes() == (outs[1] / "loss_log.csv").read_bytes()

    def test_seed_override_flag(self, tmp_path):
        out_a = synth_dir(tmp_path, "s11", count=1, seed=11)
        cfg = write_config(
            tmp_path / "s.cfg", f"count = 1\nseed = 99\n{TINY}out_dir = {tmp_path / 's11b'}\n"
        )
        assert main(["synth", "--config", cfg, "--seed", "11"]) == 0
        ids_a = list_frame_ids(out_a)
        ids_b = list_frame_ids(tmp_path / "s11b")
        assert ids_a == ids_b


class TestFilteringAndOverrides:
    def test_frame_prefix_filter(self, tmp_path):
        data = synth_dir(tmp_path, count=2, seed=20)
        pred = tmp_path / "pred"
        pred.mkdir()
        from udeer.kitti_io import write_png_gray16

        for fid in list_frame_ids(data):
            frame = load_frame(data, fid)
            write_png_gray16(pred / f"{fid}.png", frame.gt.road.astype(np.float64))
        cfg = write_config(
            tmp_path / "e.cfg",
            f"eval_dir = {data}\npred_dir = {pred}\nout_dir = {tmp_path / 'o1'}\nframe_prefix = synth_0000\n",
        )
        assert main(["eval", "--config", cfg]) == 0
        cfg2 = write_config(
            tmp_path / "e2.cfg",
            f"eval_dir = {data}\npred_dir = {pred}\nout_dir = {tmp_path / 'o2'}\nframe_prefix = zzz\n",
        )
        assert main(["eval", "--config", cfg2]) == 3  # nothing matches

    def test_out_override_flag(self, tmp_path):
        cfg = write_config(
            tmp_path / "s.cfg", f"count = 1\nseed = 0\n{TINY}out_dir = {tmp_path / 'ignored'}\n"
        )
        assert main(["synth", "--config", cfg, "--out", str(tmp_path / "redirected")]) == 0
        assert (tmp_path / "redirected" / "image_2").is_dir()
        assert not (tmp_path / "ignored").exists()

    def test_unwritable_out_dir_is_io_error(self, tmp_path):
        data = synth_dir(tmp_path, count=1)
        blocker = tmp_path / "blocked"
        blocker.write_text("a file where a directory must go")
        cfg = write_config(tmp_path / "a.cfg", f"input_dir = {data}\nout_dir = {blocker / 'sub'}\n")
        assert main(["adapt", "--config", cfg]) == 2

    def test_thread_pool_matches_serial(self, tmp_path, monkeypatch):
        data = synth_dir(tmp_path, count=3, seed=2)
        outs = {}
        for label, threads in (("serial", "1"), ("pooled", "4")):
            monkeypatch.setenv("UDEER_THREADS", threads)
            out = tmp_path / label
            cfg = write_config(tmp_path / f"{label}.cfg", f"input_dir = {data}\nout_dir = {out}\n")
            assert main(["adapt", "--config", cfg]) == 0
            outs[label] = {
                k: v for k, v in tree_checksums(out).items() if k != "manifest.json"
            }
        assert outs["serial"] == outs["pooled"]


def test_usage_error_exits_4():
    assert main(["frobnicate"]) == 4
    assert main([]) == 4
