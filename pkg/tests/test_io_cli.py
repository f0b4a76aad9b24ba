import struct
from pathlib import Path

import numpy as np
import pytest

from sldsica.cli import main
from sldsica.errors import ConfigInvalid, FormatError, IoError
from sldsica.io_formats import (
    load_checkpoint,
    load_dataset,
    read_tensor,
    save_checkpoint,
    save_dataset,
    write_tensor,
)
from sldsica.config import RunConfig, parse_config
from sldsica.model import SimConfig, default_params, simulate
from sldsica.nets import init_mlp


# -- tensor files -------------------------------------------------------------


def test_tensor_round_trip_bit_identical(tmp_path):
    rng = np.random.default_rng(0)
    for shape in [(), (5,), (3, 4), (2, 3, 4)]:
        arr = rng.standard_normal(shape)
        path = tmp_path / "t.snt"
        write_tensor(path, arr, meta="seed=7")
        back, meta = read_tensor(path)
        assert back.shape == arr.shape
        assert np.array_equal(back, arr)  # bit-identical float64 payload
        assert meta == "seed=7"


def test_tensor_bad_magic(tmp_path):
    path = tmp_path / "bad.snt"
    path.write_bytes(b"NOPE" + b"\x00" * 20)
    with pytest.raises(FormatError):
        read_tensor(path)


def test_tensor_newer_version_rejected(tmp_path):
    path = tmp_path / "v9.snt"
    arr = np.zeros(2)
    write_tensor(path, arr)
    blob = bytearray(path.read_bytes())
    blob[4:8] = struct.pack("<I", 99)
    path.write_bytes(bytes(blob))
    with pytest.raises(FormatError):
        read_tensor(path)


def test_tensor_truncated_payload(tmp_path):
    path = tmp_path / "trunc.snt"
    write_tensor(path, np.zeros((4, 4)))
    blob = path.read_bytes()
    path.write_bytes(blob[: len(blob) - 40])
    with pytest.raises(FormatError):
        read_tensor(path)


def test_missing_file_is_io_error(tmp_path):
    with pytest.raises(IoError):
        read_tensor(tmp_path / "absent.snt")


# -- datasets -------------------------------------------------------------------


def test_dataset_round_trip(tmp_path):
    data = simulate(SimConfig(T=20, N=2, M=5, seed=3))
    save_dataset(tmp_path / "ds", data)
    back = load_dataset(tmp_path / "ds")
    assert np.array_equal(back.x, data.x)
    assert np.array_equal(back.s, data.s)
    assert np.array_equal(back.u, data.u)
    assert np.array_equal(back.f_s, data.f_s)
    assert back.seed == 3
    assert back.meta["N"] == 2


def test_dataset_without_truth(tmp_path):
    from sldsica.model import Dataset

    data = Dataset(x=np.random.default_rng(0).standard_normal((10, 3)))
    save_dataset(tmp_path / "ds", data)
    back = load_dataset(tmp_path / "ds")
    assert back.s is None and back.u is None and back.f_s is None


# -- checkpoints -------------------------------------------------------------------


def test_checkpoint_round_trip(tmp_path):
    params = default_params(SimConfig(T=10, N=2, M=5, seed=1))
    encoder = init_mlp(5, 4, 2, 8, np.random.default_rng(1), "relu")
    save_checkpoint(tmp_path / "ckpt", params, encoder, {"steps": "10"})
    params2, encoder2, snap = load_checkpoint(tmp_path / "ckpt")
    assert snap["steps"] == "10"
    assert np.array_equal(params2.trans, params.trans)
    assert np.array_equal(params2.dyn_matrix, params.dyn_matrix)
    assert np.array_equal(params2.obs_noise_diag, params.obs_noise_diag)
    for (w1, b1), (w2, b2) in zip(encoder.layers, encoder2.layers):
        assert np.array_equal(w1, w2) and np.array_equal(b1, b2)
    for (w1, b1), (w2, b2) in zip(params.decoder.layers, params2.decoder.layers):
        assert np.array_equal(w1, w2) and np.array_equal(b1, b2)


def test_checkpoint_newer_version_fails(tmp_path):
    params = default_params(SimConfig(T=10, N=2, M=5, seed=1))
    encoder = init_mlp(5, 4, 1, 8, np.random.default_rng(1), "relu")
    save_checkpoint(tmp_path / "ckpt", params, encoder)
    manifest = tmp_path / "ckpt" / "manifest.txt"
    text = manifest.read_text().replace("checkpoint-version 1", "checkpoint-version 2")
    manifest.write_text(text)
    with pytest.raises(FormatError):
        load_checkpoint(tmp_path / "ckpt")


# -- config -------------------------------------------------------------------------


def test_parse_config(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("T 100  # length\nN = 3\nlr 0.01\n\n# comment only\n")
    vals = parse_config(cfg)
    assert vals == {"T": "100", "N": "3", "lr": "0.01"}


def test_config_missing_key_names_it(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("T 100\n")
    rc = RunConfig.from_file(cfg)
    with pytest.raises(ConfigInvalid, match="'N'"):
        rc.get_int("N")


def test_config_bad_value(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("T banana\n")
    rc = RunConfig.from_file(cfg)
    with pytest.raises(ConfigInvalid, match="'T'"):
        rc.get_int("T")


# -- CLI ------------------------------------------------------------------------------


def write_cfg(path: Path, text: str) -> str:
    path.write_text(text)
    return str(path)


def test_cli_simulate_round_trip(tmp_path):
    cfg = write_cfg(tmp_path / "sim.cfg", "T 50\nN 2\nM 5\nmixing_layers 2\n")
    code = main(["simulate", "--config", cfg, "--seed", "4", "--out", str(tmp_path / "ds")])
    assert code == 0
    for name in ("x", "s", "u", "f_s"):
        assert (tmp_path / "ds" / f"{name}.snt").exists()
    back = load_dataset(tmp_path / "ds")
    again = simulate(SimConfig(T=50, N=2, M=5, mixing_layers=2, seed=4))
    assert np.array_equal(back.x, again.x)


def test_cli_simulate_missing_key_exit_2(tmp_path, capsys):
    cfg = write_cfg(tmp_path / "sim.cfg", "T 50\nN 2\n")  # no M
    code = main(["simulate", "--config", cfg, "--out", str(tmp_path / "ds")])
    assert code == 2
    assert "'M'" in capsys.readouterr().err


def test_cli_train_eval_diagnose_pipeline(tmp_path):
    sim_cfg = write_cfg(tmp_path / "sim.cfg", "T 60\nN 2\nM 4\nmixing_layers 1\n")
    assert main(["simulate", "--config", sim_cfg, "--seed", "5", "--out", str(tmp_path / "ds")]) == 0

    train_cfg = write_cfg(
        tmp_path / "train.cfg",
        "N 2\nd 2\nK 2\nsteps 6\nrestarts 1\ninner_iters 1\nelbo_every 2\n",
    )
    assert main(
        [
            "train",
            "--config",
            train_cfg,
            "--data",
            str(tmp_path / "ds"),
            "--seed",
            "6",
            "--out",
            str(tmp_path / "ckpt"),
        ]
    ) == 0
    assert (tmp_path / "ckpt" / "manifest.txt").exists()
    trace = (tmp_path / "ckpt" / "elbo_trace.csv").read_text()
    assert trace.startswith("step,elbo")
    assert len(trace.strip().splitlines()) >= 2

    assert main(
        [
            "eval",
            "--checkpoint",
            str(tmp_path / "ckpt"),
            "--data",
            str(tmp_path / "ds"),
            "--out",
            str(tmp_path / "eval"),
        ]
    ) == 0
    report = (tmp_path / "eval" / "report.txt").read_text()
    assert "mcc" in report and "denoise" in report

    assert main(
        [
            "diagnose",
            "--checkpoint",
            str(tmp_path / "ckpt"),
            "--out",
            str(tmp_path / "diag"),
        ]
    ) == 0
    assert (tmp_path / "diag" / "assumptions.txt").exists()


def test_cli_eval_without_truth_graceful(tmp_path):
    sim_cfg = write_cfg(tmp_path / "sim.cfg", "T 40\nN 2\nM 4\n")
    assert main(["simulate", "--config", sim_cfg, "--seed", "7", "--out", str(tmp_path / "ds")]) == 0
    # strip the ground truth
    for name in ("s", "u", "f_s"):
        (tmp_path / "ds" / f"{name}.snt").unlink()
    train_cfg = write_cfg(
        tmp_path / "train.cfg", "N 2\nsteps 2\nrestarts 1\ninner_iters 1\n"
    )
    assert main(
        ["train", "--config", train_cfg, "--data", str(tmp_path / "ds"), "--seed", "8", "--out", str(tmp_path / "ckpt")]
    ) == 0
    code = main(
        ["eval", "--checkpoint", str(tmp_path / "ckpt"), "--data", str(tmp_path / "ds"), "--out", str(tmp_path / "eval")]
    )
    assert code == 0
    report = (tmp_path / "eval" / "report.txt").read_text()
    assert "mcc unavailable" in report
    assert "denoise unavailable" in report


def test_cli_train_resume_determinism(tmp_path):
    """Same seed, same data -> identical checkpoint tensors."""
    sim_cfg = write_cfg(tmp_path / "sim.cfg", "T 40\nN 2\nM 4\n")
    main(["simulate", "--config", sim_cfg, "--seed", "9", "--out", str(tmp_path / "ds")])
    train_cfg = write_cfg(
        tmp_path / "train.cfg", "N 2\nsteps 4\nrestarts 1\ninner_iters 1\n"
    )
    for name in ("a", "b"):
        main(
            ["train", "--config", train_cfg, "--data", str(tmp_path / "ds"), "--seed", "11", "--out", str(tmp_path / name)]
        )
    for fname in sorted((tmp_path / "a").glob("*.snt")):
        one, _ = read_tensor(fname)
        two, _ = read_tensor(tmp_path / "b" / fname.name)
        assert np.array_equal(one, two), fname.name


def test_cli_diagnose_needs_source(tmp_path, capsys):
    assert main(["diagnose"]) == 2


def test_cli_bad_subcommand_exit_2():
    assert main(["frobnicate"]) == 2
