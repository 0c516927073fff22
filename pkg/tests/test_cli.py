import json
import struct

import numpy as np

from flowseg.cli import main
from flowseg import storage


def run(*argv):
    return main(list(argv))


def synth_select_associate(tmp_path, preset="identity", extra_select=()):
    data = tmp_path / "data"
    frames = tmp_path / "frames"
    tracks = tmp_path / "tracks"
    assert run("synth", "--out", str(data), "--preset", preset) == 0
    assert run("select", "--root", str(data), "--out", str(frames), *extra_select) == 0
    assert run("associate", "--root", str(data), "--pred", str(frames), "--out", str(tracks)) == 0
    return data, frames, tracks


class TestPipeline:
    def test_end_to_end_identity_j(self, tmp_path):
        data, frames, tracks = synth_select_associate(tmp_path)
        out = tmp_path / "eval"
        assert run("eval", "--root", str(data), "--pred", str(tracks), "--out", str(out),
                   "--protocol", "sequence") == 0
        report = json.loads((out / "report.json").read_text())
        assert abs(report["aggregate"]["J_mean"] - 1.0) <= 1e-6
        assert "config_hash" in report
        assert (out / "report.csv").is_file()
        # Boxes are present in the synthetic layout, so SR is reported too.
        assert report["sr"]["identity"]["mean"] == 1.0

    def test_frame_protocol_beats_sequence_on_permuted_frames(self, tmp_path):
        data, frames, _ = synth_select_associate(tmp_path)
        out_f = tmp_path / "eval_frame"
        out_s = tmp_path / "eval_seq"
        assert run("eval", "--root", str(data), "--pred", str(frames), "--out", str(out_f),
                   "--protocol", "frame") == 0
        assert run("eval", "--root", str(data), "--pred", str(frames), "--out", str(out_s),
                   "--protocol", "sequence") == 0
        j_frame = json.loads((out_f / "report.json").read_text())["aggregate"]["J_mean"]
        j_seq = json.loads((out_s / "report.json").read_text())["aggregate"]["J_mean"]
        assert j_frame > j_seq

    def test_top_n_one(self, tmp_path):
        data = tmp_path / "data"
        frames = tmp_path / "frames"
        assert run("synth", "--out", str(data)) == 0
        assert run("select", "--root", str(data), "--out", str(frames), "--top-n", "1") == 0
        loaded = storage.load_frame_masks_dir(frames / "identity")
        assert all(len(fm.objects) == 1 for fm in loaded)

    def test_combine_command(self, tmp_path):
        data, frames, _ = synth_select_associate(tmp_path)
        out = tmp_path / "combined"
        assert run("combine", "--front", str(frames), "--back", str(frames),
                   "--out", str(out)) == 0
        front = storage.load_frame_masks_dir(frames / "identity")
        combined = storage.load_frame_masks_dir(out / "identity")
        for fa, fb in zip(combined, front):
            assert len(fa.objects) == len(fb.objects)
            for a, b in zip(fa.objects, fb.objects):
                assert np.array_equal(a.mask, b.mask)


class TestErrors:
    def test_missing_scores_json_exits_2_with_manifest(self, tmp_path):
        data = tmp_path / "data"
        assert run("synth", "--out", str(data)) == 0
        (data / "identity" / "candidates" / "00000" / "scores.json").unlink()
        out = tmp_path / "frames"
        assert run("select", "--root", str(data), "--out", str(out)) == 2
        manifest = json.loads((out / "errors.json").read_text())
        assert "identity" in manifest
        assert "scores.json" in manifest["identity"]

    def test_usage_error_exit_1(self, capsys):
        assert run("select", "--no-such-flag") == 1
        assert run("frobnicate") == 1

    def test_missing_root_exit_2(self, tmp_path):
        assert run("select", "--root", str(tmp_path / "nope"), "--out", str(tmp_path / "o")) == 2

    def test_missing_config_exit_2(self, tmp_path):
        assert run("select", "--config", str(tmp_path / "none.yaml"),
                   "--root", str(tmp_path), "--out", str(tmp_path / "o")) == 2

    def test_unknown_config_key_exit_2(self, tmp_path):
        cfg = tmp_path / "cfg.yaml"
        cfg.write_text("selection:\n  not_a_knob: 3\n")
        assert run("select", "--config", str(cfg), "--root", str(tmp_path),
                   "--out", str(tmp_path / "o")) == 2


class TestConfigFile:
    def test_yaml_config_with_flag_override(self, tmp_path):
        data = tmp_path / "data"
        assert run("synth", "--out", str(data)) == 0
        cfg = tmp_path / "cfg.yaml"
        cfg.write_text(
            "dataset_root: {root}\noutput_dir: {out}\nselection:\n  top_n: 2\n".format(
                root=data, out=tmp_path / "frames_a")
        )
        assert run("select", "--config", str(cfg)) == 0
        loaded = storage.load_frame_masks_dir(tmp_path / "frames_a" / "identity")
        assert all(len(fm.objects) <= 2 for fm in loaded)
        # Flag overrides the file value.
        assert run("select", "--config", str(cfg), "--out", str(tmp_path / "frames_b"),
                   "--top-n", "1") == 0
        loaded = storage.load_frame_masks_dir(tmp_path / "frames_b" / "identity")
        assert all(len(fm.objects) == 1 for fm in loaded)


class TestFlowVis:
    def test_zero_flow_gives_white_png(self, tmp_path):
        flo = tmp_path / "z.flo"
        flo.write_bytes(struct.pack("<fii", 202021.25, 3, 2) + b"\0" * (8 * 6))
        out = tmp_path / "z.png"
        assert run("flow-vis", "--flo", str(flo), "--out", str(out)) == 0
        from PIL import Image
        img = np.asarray(Image.open(out))
        assert img.shape == (2, 3, 3)
        assert np.all(img >= 254)

    def test_bad_flo_exit_2(self, tmp_path):
        flo = tmp_path / "bad.flo"
        flo.write_bytes(b"garbage")
        assert run("flow-vis", "--flo", str(flo), "--out", str(tmp_path / "o.png")) == 2


class TestLossesCmd:
    def test_flowi_and_flowp(self, tmp_path):
        gt_masks = np.zeros((1, 4, 4))
        gt_masks[0, :2, :2] = 1.0
        np.savez(tmp_path / "gt.npz", masks=gt_masks.astype(bool),
                 fious=np.array([0.7]), mos=np.array([1.0]))
        np.savez(tmp_path / "pred_i.npz", masks=gt_masks, fious=np.array([0.6]))
        out = tmp_path / "loss.json"
        assert run("losses", "--pred", str(tmp_path / "pred_i.npz"),
                   "--gt", str(tmp_path / "gt.npz"), "--out", str(out)) == 0
        payload = json.loads(out.read_text())
        assert payload["kind"] == "flowi"
        assert abs(payload["loss"] - 1e-4) < 1e-12
        np.savez(tmp_path / "pred_p.npz", masks=gt_masks, fious=np.array([0.7]),
                 mos=np.array([0.5]))
        assert run("losses", "--pred", str(tmp_path / "pred_p.npz"),
                   "--gt", str(tmp_path / "gt.npz"), "--out", str(out)) == 0
        payload = json.loads(out.read_text())
        assert payload["kind"] == "flowp"
        assert abs(payload["loss"] - 0.01 * np.log(2)) < 1e-9

    def test_missing_npz_exit_2(self, tmp_path):
        assert run("losses", "--pred", str(tmp_path / "a.npz"),
                   "--gt", str(tmp_path / "b.npz")) == 2
