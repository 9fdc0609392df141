import copy

import numpy as np
import pytest
import yaml

from mrfdiff.cli import main
from mrfdiff.epg import load_dictionary
from mrfdiff.subspace import load_basis
from mrfdiff.tensorio import read_meta, read_tensor
from smallcfg import SMALL


def _write(tmp_path, cfg, name="cfg.yaml"):
    p = tmp_path / name
    p.write_text(yaml.safe_dump(cfg))
    return str(p)


def test_simulate_dict(tmp_path):
    out = tmp_path / "d"
    assert main(["simulate-dict", "--config", _write(tmp_path, SMALL), "--out", str(out), "--s", "4"]) == 0
    d = load_dictionary(str(out / "dict_short"))
    b = load_basis(out / "basis_short.qmrf")
    assert d.length == 20 and b.s == 4 and read_meta(out / "basis_short.qmrf")["s"] == 4
    assert (out / "config_resolved.yaml").exists()


def test_simulate_dict_invalid_range(tmp_path):
    cfg = copy.deepcopy(SMALL)
    cfg["dictionary"]["t1_range"] = [2.0, 1.0]
    assert main(["simulate-dict", "--config", _write(tmp_path, cfg), "--out", str(tmp_path / "d")]) == 2


def test_unknown_key_exit_code(tmp_path):
    assert main(["pipeline", "--config", _write(tmp_path, {"bogus": 1}), "--out", str(tmp_path / "o")]) == 2


def test_pipeline_then_reconstruct_only(tmp_path):
    cfg = _write(tmp_path, SMALL)
    out = tmp_path / "run"
    assert main(["pipeline", "--config", cfg, "--out", str(out)]) == 0
    for f in ("metrics.csv", "summary.csv", "config_resolved.yaml", "x_hat.qmrf", "maps_iddpm_t1.qmrf",
              "train_log.csv", "checkpoint/checkpoint.json"):
        assert (out / f).exists(), f
    first = (out / "metrics.csv").read_bytes()
    assert b"MRF-IDDPM" in first and b"LRTV" in first and b"SVDMRF" in first
    assert main(["pipeline", "--config", cfg, "--out", str(out), "--reconstruct-only"]) == 0
    assert (out / "metrics.csv").read_bytes() == first


def test_reconstruct_only_without_checkpoint(tmp_path):
    rc = main(["pipeline", "--config", _write(tmp_path, SMALL), "--out", str(tmp_path / "empty"),
               "--reconstruct-only"])
    assert rc == 2


def test_ablate_steps_rows(tmp_path):
    out = tmp_path / "ab"
    assert main(["ablate", "--config", _write(tmp_path, SMALL), "--out", str(out), "--axis", "steps",
                 "--values", "5,10"]) == 0
    rows = (out / "ablate_steps.csv").read_text().strip().splitlines()
    assert rows[0].startswith("steps,wall_time_s") and len(rows) == 3


def test_ablate_invalid_axis_and_values(tmp_path, capsys):
    with pytest.raises(SystemExit):
        main(["ablate", "--axis", "depth", "--values", "1"])
    assert main(["ablate", "--config", _write(tmp_path, SMALL), "--out", str(tmp_path / "ab"), "--axis", "steps",
                 "--values", "a,b"]) == 2


@pytest.mark.parametrize("method", ["svdmrf", "lrtv"])
def test_baseline(tmp_path, method):
    out = tmp_path / method
    assert main(["baseline", "--config", _write(tmp_path, SMALL), "--out", str(out), "--method", method]) == 0
    assert (out / f"metrics_{method}.csv").exists()
    assert read_tensor(out / f"x_{method}.qmrf").shape == (32, 32, 5)


def test_match_command(tmp_path):
    d = tmp_path / "d"
    assert main(["simulate-dict", "--config", _write(tmp_path, SMALL), "--out", str(d)]) == 0
    from mrfdiff.tensorio import write_tensor
    dic = load_dictionary(str(d / "dict_short"))
    b = load_basis(d / "basis_short.qmrf")
    x = (dic.atoms[:4] @ b.V).reshape(2, 2, 5)
    write_tensor(tmp_path / "x.qmrf", x.astype(np.complex64))
    rc = main(["match", "--tsmi", str(tmp_path / "x.qmrf"), "--dictionary", str(d / "dict_short"),
               "--basis", str(d / "basis_short.qmrf"), "--out", str(tmp_path / "m" / "maps")])
    assert rc == 0
    idx = read_tensor(tmp_path / "m" / "maps_index.qmrf")
    np.testing.assert_array_equal(idx.ravel(), np.arange(4))


def test_match_missing_file(tmp_path):
    assert main(["match", "--tsmi", str(tmp_path / "no.qmrf"), "--dictionary", "x", "--basis", "y",
                 "--out", str(tmp_path / "m")]) == 2


def test_numerical_failure_exit_code(tmp_path, monkeypatch):
    import mrfdiff.cli as cli

    def boom(*a, **k):
        raise FloatingPointError("diverged")
    monkeypatch.setattr(cli, "lrtv", boom)
    assert main(["baseline", "--config", _write(tmp_path, SMALL), "--out", str(tmp_path / "b"),
                 "--method", "lrtv"]) == 3


def test_pipeline_x0_with_channel_weights(tmp_path):
    import json
    cfg = copy.deepcopy(SMALL)
    cfg["train"].update(predict="x0", channel_weighting=True)
    out = tmp_path / "run"
    assert main(["pipeline", "--config", _write(tmp_path, cfg), "--out", str(out)]) == 0
    extra = json.loads((out / "checkpoint" / "checkpoint.json").read_text())["extra"]
    assert extra["predict"] == "x0" and len(extra["channel_weights"]) == 5 and extra["channel_weights"][0] == 1.0
    first = (out / "metrics.csv").read_bytes()
    assert main(["pipeline", "--config", _write(tmp_path, cfg), "--out", str(out), "--reconstruct-only"]) == 0
    assert (out / "metrics.csv").read_bytes() == first
