import json

import numpy as np
import pytest

from hybriddft.cli import ConfigError, build_parser, main, parse_config

SURROGATE = """\
# linear surrogate
system = surrogate
n_coords = 12
target_c = 0.8
mode = fcfp
a = 1.0
max_iter = 100
reference = oracle
"""

SMALL_CHAIN = """\
system = chain
n_atoms = 4
length = 16.0
points = 64
stride = 2
beta = 8.0
charges = 2, 1
width = 0.7
"""


def write(tmp_path, text, name="run.cfg"):
    path = tmp_path / name
    path.write_text(text)
    return path


def test_minimal_config_defaults():
    cfg = parse_config("points = 64\nlength = 16.0\nn_atoms = 4\nmode = FCFP\n")
    assert cfg["order"] == 2
    assert cfg["tol"] == 1e-6
    assert cfg["a"] == 0.3
    assert cfg["mode"] == "fcfp"
    assert cfg.scf_config().damping == 0.3


def test_comments_and_blank_lines():
    cfg = parse_config("\n# header\n  a = 0.5   # trailing\n\n")
    assert cfg["a"] == 0.5


@pytest.mark.parametrize(
    "text, key, line",
    [
        ("a = 0.3\ndampnig = 0.5\n", "dampnig", 2),
        ("tol = 1e-6\n\nmax_iter = many\n", "max_iter", 3),
        ("a = 1.5\n", "a", 1),
        ("a = 0\n", "a", 1),
        ("eta = 1.0\n", "eta", 1),
        ("order = 3\n", "order", 1),
        ("mode = anderson\n", "mode", 1),
        ("a = 0.3\na = 0.4\n", "a", 2),
    ],
)
def test_config_errors_name_key_and_line(text, key, line):
    with pytest.raises(ConfigError) as err:
        parse_config(text)
    msg = str(err.value)
    assert repr(key) in msg and f"line {line}" in msg


def test_missing_equals_is_error():
    with pytest.raises(ConfigError, match="line 1"):
        parse_config("a 0.3\n")


def test_atoms_system_needs_positions():
    with pytest.raises(ConfigError, match="positions"):
        parse_config("system = atoms\ncharges = 1\n")
    with pytest.raises(ConfigError, match="positions"):
        parse_config("system = atoms\ndims = 2\npositions = 1.0, 2.0, 3.0\ncharges = 1\n")


def test_missing_reference_file(tmp_path):
    with pytest.raises(ConfigError, match="reference"):
        parse_config("reference = nope.npy\n", base_dir=tmp_path)


def test_help_documents_defaults(capsys):
    with pytest.raises(SystemExit) as ex:
        build_parser().parse_args(["--help"])
    assert ex.value.code == 0
    out = capsys.readouterr().out
    for text in ("order", "[default: 2]", "[default: 1e-06]", "[default: 0.3]", "sweep-damping"):
        assert text in out


def test_run_writes_trace_and_manifest(tmp_path):
    cfg = write(tmp_path, SURROGATE)
    out = tmp_path / "out"
    assert main(["run", "--config", str(cfg), "--out", str(out)]) == 0
    lines = (out / "trace.csv").read_text().splitlines()
    assert lines[0] == "# schema 1"
    assert lines[1].split(",")[:4] == ["status", "k", "evaluations", "error"]
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["experiment"] == "run" and manifest["files"] == ["trace.csv"]
    assert manifest["statuses"] == ["converged"]
    assert "time" not in json.dumps(manifest)


def test_outputs_byte_identical_for_same_seed(tmp_path):
    cfg = write(tmp_path, SURROGATE + "noise = born\nshots = 100\ntol = 1e-300\n")
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["run", "--config", str(cfg), "--out", str(a), "--seed", "7"]) == 0
    assert main(["run", "--config", str(cfg), "--out", str(b), "--seed", "7"]) == 0
    for name in ("trace.csv", "manifest.json"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    c = tmp_path / "c"
    main(["run", "--config", str(cfg), "--out", str(c), "--seed", "8"])
    assert (a / "trace.csv").read_bytes() != (c / "trace.csv").read_bytes()


def test_floats_round_trip(tmp_path):
    cfg = write(tmp_path, SURROGATE)
    out = tmp_path / "out"
    main(["run", "--config", str(cfg), "--out", str(out)])
    data = np.genfromtxt(out / "trace.csv", delimiter=",", skip_header=2, usecols=3)
    text = [line.split(",")[3] for line in (out / "trace.csv").read_text().splitlines()[2:]]
    assert all(float(t) == d for t, d in zip(text, data))


def test_ensemble_writes_one_trace_per_seed(tmp_path):
    cfg = write(tmp_path, SURROGATE + "noise = born\nshots = 100\n")
    out = tmp_path / "out"
    assert main(["run", "--config", str(cfg), "--out", str(out), "--seed", "3", "--ensemble", "2"]) == 0
    assert (out / "trace_seed3.csv").exists() and (out / "trace_seed4.csv").exists()
    assert json.loads((out / "manifest.json").read_text())["seeds"] == [3, 4]


def test_divergence_only_exit_code(tmp_path):
    text = SURROGATE.replace("a = 1.0", "a = 0.3") + "sweep_a = 1.0\n"
    cfg = write(tmp_path, text)
    out = tmp_path / "out"
    assert main(["sweep-damping", "--config", str(cfg), "--out", str(out)]) == 2
    assert "DIVERGED" in (out / "sweep.csv").read_text()


def test_sweep_reports_threshold(tmp_path):
    text = SURROGATE.replace("a = 1.0", "a = 0.3").replace("max_iter = 100", "max_iter = 2000") + "sweep_a = 0.1, 0.3, 0.5\n"
    cfg = write(tmp_path, text)
    out = tmp_path / "out"
    assert main(["sweep-damping", "--config", str(cfg), "--out", str(out)]) == 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert 0.3 < manifest["jacobian_threshold"] < 0.5
    rows = (out / "sweep.csv").read_text().splitlines()[2:]
    assert [r.split(",")[1] for r in rows] == ["converged", "converged", "DIVERGED"]


def test_config_error_exit_code(tmp_path, capsys):
    cfg = write(tmp_path, "bogus = 1\n")
    assert main(["run", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 1
    assert "bogus" in capsys.readouterr().err
    assert main(["run", "--config", str(tmp_path / "missing.cfg")]) == 1
    assert main(["run", "--config", str(cfg), "--seed", "-1"]) == 1


def test_approx_error_experiment(tmp_path):
    cfg = write(tmp_path, SMALL_CHAIN + "degrees = 20, 80\n")
    out = tmp_path / "out"
    assert main(["approx-error", "--config", str(cfg), "--out", str(out)]) == 0
    data = np.genfromtxt(out / "approx_error.csv", delimiter=",", skip_header=2)
    assert data.shape == (2, 5)
    assert np.all(data[:, 3] <= data[:, 4])
    assert data[1, 3] < data[0, 3]


def test_mu_track_experiment(tmp_path):
    cfg = write(tmp_path, SMALL_CHAIN + "a = 0.1\ntol = 1e-6\nmax_iter = 400\nreference = oracle\n")
    out = tmp_path / "out"
    assert main(["mu-track", "--config", str(cfg), "--out", str(out)]) == 0
    header = (out / "mu_track.csv").read_text().splitlines()[1].split(",")
    data = np.genfromtxt(out / "mu_track.csv", delimiter=",", skip_header=2)
    mu = data[:, header.index("mu")]
    assert len(np.unique(mu)) > 1
    assert abs(data[-1, header.index("g")]) < 1e-5


def test_reference_file(tmp_path):
    text = SMALL_CHAIN + "a = 0.3\nmax_iter = 3\nreference = ref.txt\n"
    np.savetxt(tmp_path / "ref.txt", np.ones(32))
    cfg = write(tmp_path, text)
    assert main(["run", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 0
    np.savetxt(tmp_path / "ref.txt", np.ones(5))
    assert main(["run", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 1


def test_compare_experiment(tmp_path):
    text = SURROGATE.replace("a = 1.0", "a = 0.5") + "compare_m = 1, 4\ncompare_a_rbcfp = 0.9\ncompare_a_fcfp = 0.5\n"
    cfg = write(tmp_path, text)
    out = tmp_path / "out"
    main(["compare", "--config", str(cfg), "--out", str(out)])
    summary = (out / "compare_summary.csv").read_text().splitlines()[2:]
    assert [row.split(",")[1] for row in summary] == ["fcfp", "rbcfp", "rbcfp", "fcfp"]
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["optimal_damping"] <= manifest["jacobian_threshold"]
