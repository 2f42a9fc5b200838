import csv
import subprocess
import sys

import numpy as np
import pytest

from noisesep.cli import load_config, main, param_counts
from noisesep.errors import ConfigError
from noisesep.separator import SeparatorConfig, SeparatorModel
from noisesep.signals import AudioSignal, read_wav, write_wav

from conftest import TINY

TINY_CONF = "\n".join([f"model.{k}={v}" for k, v in TINY.items()] + [
    "pcl.M=4", "pcl.Q=8", "pcl.lambda=2", "train.segment_s=0.05", "train.lr0=0.001",
])


@pytest.fixture
def conf(tmp_path):
    path = tmp_path / "tiny.conf"
    path.write_text(TINY_CONF + "\n")
    return path


@pytest.fixture
def dataset(tmp_path, conf):
    out = tmp_path / "data"
    assert main(["mix", "--out", str(out), "--num-items", "2", "--duration", "0.05", "--seed", "3"]) == 0
    return out / "train.tsv"


class TestConfigFile:
    def test_lambda_alias_and_sections(self, conf):
        cfg = load_config(conf)
        assert cfg["pcl"]["lam"] == "2"
        assert cfg["model"]["N"] == "8"

    def test_unknown_key(self, tmp_path):
        (tmp_path / "bad.conf").write_text("model.depth=3\n")
        with pytest.raises(ConfigError):
            load_config(tmp_path / "bad.conf")

    def test_unknown_section(self, tmp_path):
        (tmp_path / "bad.conf").write_text("optimizer.lr=3\n")
        with pytest.raises(ConfigError):
            load_config(tmp_path / "bad.conf")


class TestExitCodes:
    def test_unknown_flag(self, capsys):
        assert main(["params", "--frobnicate"]) == 1
        err = capsys.readouterr().err
        assert "usage:" in err and "--frobnicate" in err

    def test_no_command(self, capsys):
        assert main([]) == 1
        assert "usage:" in capsys.readouterr().err

    def test_missing_input_is_io_error(self, tmp_path, capsys):
        rc = main(["spectrogram", "--input", str(tmp_path / "nope.wav"), "--out", str(tmp_path)])
        assert rc == 2

    def test_bad_config_is_validation_error(self, tmp_path):
        (tmp_path / "bad.conf").write_text("model.K=5\n")
        assert main(["params", "--config", str(tmp_path / "bad.conf")]) == 1

    def test_global_flags_after_subcommand(self, conf, capsys):
        assert main(["params", "--config", str(conf)]) == 0
        after = capsys.readouterr().out
        assert main(["--config", str(conf), "params"]) == 0
        assert capsys.readouterr().out == after
        # the tiny config is actually applied, not the desk default
        assert f"params_with_noise_speaker={SeparatorModel.init(SeparatorConfig(**TINY)).num_parameters()}" in after


class TestParams:
    def test_desk_config_delta(self, capsys):
        assert main(["params"]) == 0
        out = dict(line.split("=", 1) for line in capsys.readouterr().out.split()
                   if "=" in line)
        off, on = int(out["params_without_noise_speaker"]), int(out["params_with_noise_speaker"])
        cfg = SeparatorConfig()
        assert on - off == int(out["delta"]) == cfg.hidden * cfg.N + cfg.N
        assert (off, on) == param_counts(cfg)
        assert float(out["delta_pct"]) < 2.0

    def test_counts_match_models(self):
        cfg = SeparatorConfig(**TINY)
        off, on = param_counts(cfg)
        assert on == SeparatorModel.init(cfg).num_parameters()


class TestPipeline:
    def test_mix_train_separate_evaluate(self, tmp_path, conf, dataset, capsys):
        out = tmp_path / "run"
        rc = main(["train", "--config", str(conf), "--train", str(dataset), "--epochs", "2",
                   "--out", str(out), "--seed", "1"])
        assert rc == 0
        ckpt = out / "checkpoints" / "last.ckpt"
        log = (out / "checkpoints" / "train_log.csv").read_text().splitlines()
        assert log[0] == "step,epoch,lr,total,si_snr,pcl" and len(log) == 1 + 2 * 2

        # resume for one more epoch appends to the same log
        assert main(["train", "--train", str(dataset), "--resume", str(ckpt), "--epochs", "3",
                     "--out", str(out)]) == 0
        assert len((out / "checkpoints" / "train_log.csv").read_text().splitlines()) == 1 + 3 * 2

        mix = next((dataset.parent / "train").glob("*_mix.wav"))
        sep_dir = tmp_path / "sep"
        assert main(["separate", "--checkpoint", str(ckpt), "--input", str(mix), "--out", str(sep_dir)]) == 0
        wavs = sorted(p.name for p in sep_dir.glob("*.wav"))
        assert len(wavs) == 3
        assert wavs == sorted([f"{mix.stem}_s1.wav", f"{mix.stem}_s2.wav", f"{mix.stem}_noise.wav"])
        assert all(len(read_wav(sep_dir / w)) == len(read_wav(mix)) for w in wavs)

        ev = tmp_path / "ev"
        assert main(["evaluate", "--checkpoint", str(ckpt), "--manifest", str(dataset), "--out", str(ev)]) == 0
        rows = list(csv.reader(open(ev / "eval.csv")))
        assert rows[0] == ["item", "perm", "si_snri_db", "sdri_db", "noise_si_snr_db"]
        assert len(rows) == 2 + 2  # header, two items, mean

    def test_separate_without_noise_output(self, tmp_path, rng):
        model = SeparatorModel.init(SeparatorConfig(noise_speaker=False, **TINY), seed=0)
        ckpt = model.save(tmp_path / "m.ckpt")
        write_wav(tmp_path / "x.wav", AudioSignal(rng.uniform(-0.5, 0.5, 400)), "pcm16")
        assert main(["separate", "--checkpoint", str(ckpt), "--input", str(tmp_path / "x.wav"),
                     "--out", str(tmp_path / "o"), "--bit-depth", "pcm16"]) == 0
        assert len(list((tmp_path / "o").glob("*.wav"))) == 2

    def test_spectrogram_outputs(self, tmp_path):
        t = np.arange(2000) / 8000
        write_wav(tmp_path / "tone.wav", AudioSignal(0.5 * np.sin(2 * np.pi * 1000 * t)), "float32")
        assert main(["spectrogram", "--input", str(tmp_path / "tone.wav"), "--out", str(tmp_path)]) == 0
        assert (tmp_path / "tone.pgm").read_bytes().startswith(b"P5")
        assert (tmp_path / "tone.csv").exists()

    def test_evaluate_speaker_mismatch(self, tmp_path):
        main(["mix", "--out", str(tmp_path / "d3"), "--num-items", "1", "--num-speakers", "3",
              "--duration", "0.05"])
        ckpt = SeparatorModel.init(SeparatorConfig(**TINY)).save(tmp_path / "m.ckpt")
        assert main(["evaluate", "--checkpoint", str(ckpt), "--manifest",
                     str(tmp_path / "d3" / "train.tsv"), "--out", str(tmp_path)]) == 1


class TestGradcheckCommand:
    def test_installed_entry_point_passes(self):
        proc = subprocess.run([sys.executable, "-m", "noisesep.cli", "gradcheck"],
                              capture_output=True, text=True, timeout=600)
        assert proc.returncode == 0, proc.stderr
        line = proc.stdout.strip().splitlines()[-1]
        assert "max_rel_err=" in line and line.endswith("PASS")
