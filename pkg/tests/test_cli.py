import json
import subprocess
import sys

import pytest

from bmctri.cli import bundled_configs, load_config, main
from bmctri.errors import ConfigParse


def test_bundled_configs_listed():
    assert {"subcritical_k1", "critical_k2", "supercritical_k3", "special_alpha_independence"} <= set(bundled_configs())
    for name in bundled_configs():
        cfg = load_config(name)
        assert cfg.experiments


def test_subcritical_bundle_passes(tmp_path):
    assert main(["--config", "subcritical_k1", "--out-dir", str(tmp_path)]) == 0
    rep = json.loads((tmp_path / "report.json").read_text())
    assert rep["schema_version"] == 1
    assert rep["spectral"]["alpha"] == pytest.approx(0.5, abs=1e-12)
    assert rep["spectral"]["provenance"] == "formula"
    assert all(r["provenance"] == "oracle" for r in rep["oracle_reports"])
    assert all("provenance" in v for v in rep["verdicts"])
    header = (tmp_path / "plotdata.csv").read_text().splitlines()[0]
    assert header.startswith("depth,empirical_var,se,theoretical,regime")
    assert (tmp_path / "replicates.csv").read_text().splitlines()[0] == "replicate,seed,statistic,label"


def test_non_stochastic_config_exit_2(tmp_path):
    cfg = tmp_path / "bad.json"
    cfg.write_text(json.dumps({"kernel": {"type": "QQ", "Q": [[0.5, 0.6], [0.5, 0.5]]},
                               "sequence": [{"type": "affine", "a": 1}]}))
    assert main(["--config", str(cfg), "--out-dir", str(tmp_path / "o")]) == 2


def test_input_errors_exit_2(tmp_path, capsys):
    assert main(["--config", "no_such_config"]) == 2
    broken = tmp_path / "broken.json"
    broken.write_text("{not json")
    assert main(["--config", str(broken)]) == 2
    missing = tmp_path / "missing.json"
    missing.write_text(json.dumps({"kernel": "K1"}))
    assert main(["--config", str(missing)]) == 2
    with pytest.raises(ConfigParse):
        load_config(str(missing))
    assert main([]) == 2


def test_oracle_only(tmp_path):
    assert main(["--config", "critical_k2", "--oracle-only", "--out-dir", str(tmp_path)]) == 0
    rep = json.loads((tmp_path / "report.json").read_text())
    assert max(r["gap"] for r in rep["oracle_reports"]) < 1e-11
    assert not (tmp_path / "replicates.csv").exists()


def test_replicates_byte_identical(tmp_path):
    args = ["--config", "supercritical_k3", "--replicates", "12", "--depth", "7"]
    assert main(args + ["--out-dir", str(tmp_path / "a")]) in (0, 1)
    assert main(args + ["--out-dir", str(tmp_path / "b"), "--threads", "4"]) in (0, 1)
    a = (tmp_path / "a" / "replicates.csv").read_bytes()
    assert a == (tmp_path / "b" / "replicates.csv").read_bytes()
    assert len(a.splitlines()) == 1 + 2 * 12
    # 17 significant digits survive a round trip
    row = a.splitlines()[1].decode().split(",")
    assert float(row[2]) == float(format(float(row[2]), ".17g"))


def test_out_dir_environment_override(tmp_path):
    env_dir = tmp_path / "env_out"
    code = subprocess.run(
        [sys.executable, "-m", "bmctri", "--config", "subcritical_k1", "--oracle-only"],
        env={**__import__("os").environ, "BMCTRI_OUT_DIR": str(env_dir)}, capture_output=True, text=True,
    ).returncode
    assert code == 0 and (env_dir / "report.json").exists()


def test_verdict_failure_exit_1(tmp_path):
    cfg = tmp_path / "fail.json"
    cfg.write_text(json.dumps({
        "kernel": "K1", "sequence": [{"type": "affine", "a": 1, "b": 2, "c": 3}], "seed": 1,
        "experiments": [{"kind": "variance", "statistic": "N", "depths": [8], "replicates": 100, "target": 100.0}],
    }))
    assert main(["--config", str(cfg), "--out-dir", str(tmp_path / "o")]) == 1
