import csv
import json
import math
import subprocess
import sys

import numpy as np
import pytest

from sardespeckle.checkpoint import Checkpoint, save_checkpoint
from sardespeckle.cli import EXIT_CONFIG, EXIT_NUMERIC, EXIT_OK, main
from sardespeckle.config import ConfigError, load_config, parse_config
from sardespeckle.image import Domain, Image
from sardespeckle.imageio import ImageFormatError, decode_image, encode_image, export_pgm, read_image, write_image
from sardespeckle.nn import NetworkConfig, zero_params

SIM = """
seed = 5
depth = 1
channels = 4
n_scenes = 2
n_test = 1
scene_size = 64
n_series = 2
series_size = 64
dates = 3
"""


def _write(path, text):
    path.write_text(text)
    return path


def _files(root):
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


@pytest.fixture(scope="module")
def simulated(tmp_path_factory):
    root = tmp_path_factory.mktemp("sim")
    cfg = _write(root / "sim.cfg", SIM)
    assert main(["simulate", "--config", str(cfg), "--out", str(root / "data")]) == EXIT_OK
    return root


@pytest.fixture(scope="module")
def trained_a(simulated):
    cfg = _write(simulated / "a.cfg", SIM + "data_dir = data\nphase = A\nepochs = 1\npatch_size = 32\n")
    assert main(["train", "--config", str(cfg), "--out", str(simulated / "runA")]) == EXIT_OK
    return simulated / "runA"


class TestImageFormat:
    @pytest.mark.parametrize("domain", list(Domain))
    def test_round_trip(self, tmp_path, domain):
        v = np.random.default_rng(int(domain)).random((7, 11)).astype(np.float32)
        if domain == Domain.LOG_INTENSITY:
            v -= 0.5
        p = write_image(tmp_path / "x.s2s1", Image(v, domain))
        back = read_image(p)
        assert back.domain == domain
        assert back.values.dtype == np.float32 and np.array_equal(back.values, v)
        assert write_image(tmp_path / "y.s2s1", back).read_bytes() == p.read_bytes()

    def test_header_layout(self):
        raw = encode_image(Image(np.ones((2, 3)), Domain.AMPLITUDE))
        assert raw[:4] == b"S2S1"
        assert raw[4:6] == (1).to_bytes(2, "little")
        assert raw[6] == 2 and raw[7] == 0
        assert int.from_bytes(raw[8:12], "little") == 3 and int.from_bytes(raw[12:16], "little") == 2
        assert len(raw) == 16 + 6 * 4
        assert np.frombuffer(raw[16:], "<f4").tolist() == [1.0] * 6

    @pytest.mark.parametrize(
        "mutate",
        [
            lambda b: b"XXXX" + b[4:],
            lambda b: b[:4] + (2).to_bytes(2, "little") + b[6:],
            lambda b: b[:6] + bytes([9]) + b[7:],
            lambda b: b[:7] + bytes([1]) + b[8:],
            lambda b: b[:-1],
            lambda b: b[:10],
        ],
    )
    def test_rejects_corruption(self, mutate):
        raw = encode_image(Image(np.ones((2, 3)), Domain.INTENSITY))
        with pytest.raises(ImageFormatError):
            decode_image(mutate(raw))

    def test_rejects_float32_overflow(self):
        with pytest.raises(ImageFormatError):
            encode_image(Image(np.full((1, 1), 1e300), Domain.INTENSITY))

    def test_pgm_preview(self, tmp_path):
        p = export_pgm(tmp_path / "a.pgm", Image(np.random.default_rng(0).random((5, 6)) + 0.1, Domain.INTENSITY))
        raw = p.read_bytes()
        assert raw.startswith(b"P5\n6 5\n255\n") and len(raw) == len(b"P5\n6 5\n255\n") + 30


class TestConfig:
    def test_parse_types_and_paths(self, tmp_path):
        cfg = parse_config("channels = 8, 16\nlr_milestones = 5:0.1, 10:0.01\nregion = 1,2,30,40\ninput = a/b.s2s1\n# note\n", tmp_path)
        assert cfg.channels == (8, 16)
        assert cfg.lr_milestones == ((5, 0.1), (10, 0.01))
        assert (cfg.region.x, cfg.region.h) == (1, 40)
        assert cfg.input == tmp_path / "a/b.s2s1"
        assert cfg.epochs is None and cfg.loss == "likelihood"

    @pytest.mark.parametrize("text", ["colour = red", "seed = 1\nseed = 2", "seed", "seed = one", "change_compensation = maybe"])
    def test_rejects(self, text):
        with pytest.raises(ConfigError):
            parse_config(text)

    def test_digest_tracks_values(self):
        assert parse_config("seed = 1").digest() == parse_config("seed = 1\n").digest()
        assert parse_config("seed = 1").digest() != parse_config("seed = 2").digest()

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            load_config(tmp_path / "none.cfg")


class TestSimulate:
    def test_layout(self, simulated):
        files = _files(simulated / "data")
        assert "train/clean_01.s2s1" in files and "test/noisy_00.s2s1" in files
        assert "series/s01/date_02.s2s1" in files and "series/s01/mask_02.s2s1" in files
        man = json.loads(files["manifest.json"])
        assert man["command"] == "simulate" and man["seed"] == 5 and man["code_version"]
        listed = {a["path"] for a in man["artifacts"]}
        assert listed == set(files) - {"manifest.json"}

    def test_noisy_is_speckled_clean(self, simulated):
        clean = read_image(simulated / "data/train/clean_00.s2s1")
        noisy = read_image(simulated / "data/train/noisy_00.s2s1")
        assert clean.domain == Domain.REFLECTIVITY and noisy.domain == Domain.INTENSITY
        ratio = noisy.values.astype(np.float64) / clean.values
        assert abs(ratio.mean() - 1) < 3 / math.sqrt(ratio.size)

    def test_deterministic(self, simulated, tmp_path):
        assert main(["simulate", "--config", str(simulated / "sim.cfg"), "--out", str(tmp_path / "again")]) == EXIT_OK
        assert _files(tmp_path / "again") == _files(simulated / "data")

    def test_seed_override(self, simulated, tmp_path):
        assert main(["simulate", "--config", str(simulated / "sim.cfg"), "--out", str(tmp_path / "o"), "--seed", "6"]) == 0
        a = _files(tmp_path / "o")
        assert a["train/noisy_00.s2s1"] != _files(simulated / "data")["train/noisy_00.s2s1"]
        assert json.loads(a["manifest.json"])["seed"] == 6


class TestTrain:
    def test_outputs(self, trained_a):
        names = set(_files(trained_a))
        assert {"phaseA.s2sw", "phaseA_last.s2sw", "report.csv", "report.jsonl", "manifest.json"} <= names
        recs = (trained_a / "report.jsonl").read_text().splitlines()
        assert len(recs) == 1 and json.loads(recs[0])["epoch"] == 1

    def test_phase_b_without_checkpoint(self, simulated, tmp_path, capsys):
        cfg = _write(simulated / "b.cfg", SIM + "data_dir = data\nphase = B\nepochs = 1\npatch_size = 32\n")
        assert main(["train", "--config", str(cfg), "--out", str(tmp_path / "b")]) == EXIT_CONFIG
        assert "phase-A checkpoint" in capsys.readouterr().err
        assert not (tmp_path / "b").exists()

    def test_phase_b_with_missing_file(self, simulated, tmp_path, capsys):
        cfg = _write(simulated / "b2.cfg", SIM + "data_dir = data\nphase = B\nepochs = 1\npatch_size = 32\ninit_checkpoint = nowhere.s2sw\n")
        assert main(["train", "--config", str(cfg), "--out", str(tmp_path / "b")]) == EXIT_CONFIG
        assert "nowhere.s2sw" in capsys.readouterr().err

    def test_phase_b_then_c(self, simulated, trained_a, tmp_path):
        base = SIM + "data_dir = data\nepochs = 1\npatch_size = 32\n"
        b = _write(simulated / "b3.cfg", base + f"phase = B\ninit_checkpoint = {trained_a / 'phaseA.s2sw'}\n")
        assert main(["train", "--config", str(b), "--out", str(tmp_path / "B")]) == EXIT_OK
        c = _write(simulated / "c3.cfg", base + f"phase = C\ninit_checkpoint = {tmp_path / 'B/phaseB.s2sw'}\n")
        assert main(["train", "--config", str(c), "--out", str(tmp_path / "C")]) == EXIT_OK
        assert (tmp_path / "C/phaseC.s2sw").is_file()

    def test_deterministic(self, simulated, trained_a, tmp_path):
        assert main(["train", "--config", str(simulated / "a.cfg"), "--out", str(tmp_path / "again")]) == EXIT_OK
        assert _files(tmp_path / "again") == _files(trained_a)

    def test_bad_patch_size(self, simulated, tmp_path):
        cfg = _write(simulated / "bad.cfg", SIM + "data_dir = data\nphase = A\nepochs = 1\npatch_size = 31\n")
        assert main(["train", "--config", str(cfg), "--out", str(tmp_path / "x")]) == EXIT_CONFIG
        assert not (tmp_path / "x").exists()


class TestDespeckle:
    def test_zero_checkpoint_is_identity(self, simulated, tmp_path):
        ck = save_checkpoint(tmp_path / "zero.s2sw", Checkpoint(zero_params(NetworkConfig(depth=1, channels=(4,)))))
        noisy = simulated / "data/test/noisy_00.s2s1"
        cfg = _write(tmp_path / "d.cfg", f"checkpoint = {ck}\ninput = {noisy}\n")
        assert main(["despeckle", "--config", str(cfg), "--out", str(tmp_path / "o")]) == EXIT_OK
        out = read_image(tmp_path / "o/noisy_00_despeckled.s2s1")
        assert out.domain == Domain.REFLECTIVITY
        assert np.array_equal(out.values, read_image(noisy).values)
        amp = read_image(tmp_path / "o/noisy_00_amplitude.s2s1")
        assert amp.domain == Domain.AMPLITUDE and np.allclose(amp.values**2, out.values, rtol=1e-6)

    def test_idempotent_and_tiled(self, simulated, trained_a, tmp_path):
        noisy = simulated / "data/test/noisy_00.s2s1"
        text = f"checkpoint = {trained_a / 'phaseA.s2sw'}\ninput = {noisy}\npreview = yes\n"
        cfg = _write(tmp_path / "d.cfg", text)
        for name in ("o1", "o2"):
            assert main(["despeckle", "--config", str(cfg), "--out", str(tmp_path / name)]) == EXIT_OK
        assert _files(tmp_path / "o1") == _files(tmp_path / "o2")
        assert (tmp_path / "o1/noisy_00_despeckled_preview.pgm").is_file()
        tiled = _write(tmp_path / "t.cfg", text + "tile = 48\ntile_ramp = 4\n")
        assert main(["despeckle", "--config", str(tiled), "--out", str(tmp_path / "t")]) == EXIT_OK
        a = read_image(tmp_path / "o1/noisy_00_despeckled.s2s1").values.astype(np.float64)
        b = read_image(tmp_path / "t/noisy_00_despeckled.s2s1").values.astype(np.float64)
        assert np.sqrt(np.mean((np.log(a) - np.log(b)) ** 2)) < 1e-5

    def test_input_flag(self, simulated, tmp_path):
        ck = save_checkpoint(tmp_path / "zero.s2sw", Checkpoint(zero_params(NetworkConfig(depth=1, channels=(4,)))))
        cfg = _write(tmp_path / "d.cfg", f"checkpoint = {ck}\n")
        noisy = simulated / "data/test/noisy_00.s2s1"
        assert main(["despeckle", "--config", str(cfg), "--out", str(tmp_path / "o"), "--input", str(noisy)]) == 0

    def test_garbage_checkpoint(self, simulated, tmp_path):
        p = zero_params(NetworkConfig(depth=1, channels=(4,)))
        p.tensors["head.conv.bias"][0] = -1e6
        ck = save_checkpoint(tmp_path / "bad.s2sw", Checkpoint(p))
        cfg = _write(tmp_path / "d.cfg", f"checkpoint = {ck}\ninput = {simulated / 'data/test/noisy_00.s2s1'}\n")
        assert main(["despeckle", "--config", str(cfg), "--out", str(tmp_path / "o")]) == EXIT_NUMERIC

    def test_wrong_domain(self, simulated, tmp_path):
        ck = save_checkpoint(tmp_path / "zero.s2sw", Checkpoint(zero_params(NetworkConfig(depth=1, channels=(4,)))))
        cfg = _write(tmp_path / "d.cfg", f"checkpoint = {ck}\ninput = {simulated / 'data/test/clean_00.s2s1'}\n")
        assert main(["despeckle", "--config", str(cfg), "--out", str(tmp_path / "o")]) == EXIT_CONFIG
        assert not (tmp_path / "o").exists()


class TestEvaluate:
    def _rows(self, path):
        return list(csv.DictReader(path.open()))

    def test_self_evaluation(self, simulated, tmp_path):
        clean = simulated / "data/test/clean_00.s2s1"
        cfg = _write(tmp_path / "e.cfg", f"reference = {clean}\nestimate = {clean}\n")
        assert main(["evaluate", "--config", str(cfg), "--out", str(tmp_path / "o")]) == EXIT_OK
        (row,) = self._rows(tmp_path / "o/metrics.csv")
        assert row["metric"] == "psnr" and float(row["value"]) == math.inf

    def test_protocol_enl_wasserstein(self, simulated, trained_a, tmp_path):
        d = simulated / "data/test"
        cfg = _write(
            tmp_path / "e.cfg",
            f"reference = {d / 'clean_00.s2s1'}\nestimate = {d / 'clean_00.s2s1'}\nnoisy = {d / 'noisy_00.s2s1'}\n"
            f"checkpoint = {trained_a / 'phaseA.s2sw'}\nmetrics = psnr_protocol, enl, wasserstein\nregion = 0,0,20,20\n"
            "protocol_instances = 3\n",
        )
        assert main(["evaluate", "--config", str(cfg), "--out", str(tmp_path / "o")]) == EXIT_OK
        rows = {r["metric"]: r for r in self._rows(tmp_path / "o/metrics.csv")}
        assert set(rows) == {"psnr_protocol", "enl", "wasserstein"}
        assert float(rows["psnr_protocol"]["sigma"]) > 0
        assert float(rows["wasserstein"]["value"]) < 0.05  # residual of the true reflectivity

    def test_enl_needs_region(self, simulated, tmp_path):
        clean = simulated / "data/test/clean_00.s2s1"
        cfg = _write(tmp_path / "e.cfg", f"estimate = {clean}\nmetrics = enl\n")
        assert main(["evaluate", "--config", str(cfg), "--out", str(tmp_path / "o")]) == EXIT_CONFIG
        assert not (tmp_path / "o").exists()

    def test_unknown_metric(self, tmp_path):
        cfg = _write(tmp_path / "e.cfg", "metrics = ssim\n")
        assert main(["evaluate", "--config", str(cfg), "--out", str(tmp_path / "o")]) == EXIT_CONFIG


class TestEfficiency:
    def test_csv_and_determinism(self, tmp_path):
        cfg = _write(tmp_path / "f.cfg", "seed = 3\ntrials = 2000\nsample_counts = 1,2,5,20\n")
        for name in ("a", "b"):
            assert main(["efficiency", "--config", str(cfg), "--out", str(tmp_path / name)]) == EXIT_OK
        assert _files(tmp_path / "a") == _files(tmp_path / "b")
        rows = list(csv.DictReader((tmp_path / "a/efficiency.csv").open()))
        assert [int(r["N"]) for r in rows] == [1, 2, 5, 20]
        assert all(float(r["rmse_lik"]) < float(r["rmse_l2"]) for r in rows[1:])

    def test_too_few_trials(self, tmp_path):
        cfg = _write(tmp_path / "f.cfg", "trials = 10\n")
        assert main(["efficiency", "--config", str(cfg), "--out", str(tmp_path / "a")]) == EXIT_CONFIG


def test_unknown_key_exit_code(tmp_path, capsys):
    cfg = _write(tmp_path / "x.cfg", "colour = red\n")
    assert main(["efficiency", "--config", str(cfg), "--out", str(tmp_path / "o")]) == EXIT_CONFIG
    assert "unknown key" in capsys.readouterr().err


def test_console_script_entry(tmp_path):
    cfg = _write(tmp_path / "f.cfg", "trials = 1000\nsample_counts = 1,2\n")
    res = subprocess.run(
        [sys.executable, "-m", "sardespeckle.cli", "efficiency", "--config", str(cfg), "--out", str(tmp_path / "o")],
        capture_output=True,
        text=True,
    )
    assert res.returncode == 0, res.stderr
    assert (tmp_path / "o/efficiency.csv").is_file()


def test_digest_uses_paths_as_written(tmp_path):
    a = parse_config("data_dir = data\n", base_dir=tmp_path / "one")
    b = parse_config("data_dir = data\n", base_dir=tmp_path / "two")
    assert a.data_dir != b.data_dir
    assert a.digest() == b.digest()
    assert a.digest() != parse_config("data_dir = other\n", base_dir=tmp_path / "one").digest()


def test_tile_too_small_for_ramp(simulated, trained_a, tmp_path, capsys):
    noisy = simulated / "data/test/noisy_00.s2s1"
    cfg = _write(tmp_path / "d.cfg", f"checkpoint = {trained_a / 'phaseA.s2sw'}\ninput = {noisy}\ntile = 32\ntile_ramp = 16\n")
    assert main(["despeckle", "--config", str(cfg), "--out", str(tmp_path / "o")]) == EXIT_CONFIG
    assert "too small" in capsys.readouterr().err
