"""CSV/JSON round trips: byte-identical writes, row-level validation."""

import hashlib
import math

import numpy as np
import pytest

from fading_cvqkd import (
    PackageEstimate,
    ProtocolParams,
    Uniform,
    ValidationError,
    estimate_run,
    simulate_run,
)
from fading_cvqkd.storage import (
    RUN_CSV,
    RUN_JSON,
    TRUE_T_CSV,
    jsonable,
    protocol_descriptor,
    protocol_from_descriptor,
    read_estimates,
    read_json,
    read_run,
    read_trace,
    write_estimates,
    write_json,
    write_run,
    write_table,
    write_trace,
)

P = ProtocolParams()
DIST = Uniform(0.3, 0.9)


def _small_run(seed=99, n=40, m=6):
    return simulate_run(DIST, n, m, P, seed=seed)


def _digest(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


# ---- runs ---------------------------------------------------------------

def test_run_round_trip_is_exact(tmp_path):
    run = _small_run()
    write_run(run, tmp_path)
    back = read_run(tmp_path)
    assert back.n == run.n and back.m == run.m and back.seed == run.seed
    assert back.dist.descriptor() == run.dist.descriptor()
    assert back.protocol == run.protocol
    for a, b in zip(run.packages, back.packages):
        assert b.true_T == a.true_T
        assert np.array_equal(a.M, b.M)
        assert np.array_equal(a.B, b.B)
        assert not b.M.flags.writeable and not b.B.flags.writeable


def test_run_files_are_byte_identical_across_reruns(tmp_path):
    a_dir, b_dir = tmp_path / "a", tmp_path / "b"
    write_run(_small_run(seed=7), a_dir)
    write_run(_small_run(seed=7), b_dir)
    for name in (RUN_CSV, RUN_JSON, TRUE_T_CSV):
        assert _digest(a_dir / name) == _digest(b_dir / name)


def _corrupt(path, old, new, count=1):
    text = path.read_text()
    assert old in text
    path.write_text(text.replace(old, new, count))


def test_read_run_reports_bad_rows(tmp_path):
    run = _small_run(n=5, m=3)
    write_run(run, tmp_path)

    _corrupt(tmp_path / RUN_CSV, "package,j,M,B", "package,k,M,B")
    with pytest.raises(ValidationError, match="bad header"):
        read_run(tmp_path)
    write_run(run, tmp_path)

    # drop the last data row: one state missing
    csv_path = tmp_path / RUN_CSV
    lines = csv_path.read_text().splitlines()
    csv_path.write_text("\n".join(lines[:-1]) + "\n")
    with pytest.raises(ValidationError, match="missing"):
        read_run(tmp_path)
    write_run(run, tmp_path)

    # duplicate a data row
    lines = csv_path.read_text().splitlines()
    csv_path.write_text("\n".join(lines + [lines[1]]) + "\n")
    with pytest.raises(ValidationError, match="duplicate"):
        read_run(tmp_path)
    write_run(run, tmp_path)

    # non-numeric field carries its row number
    lines = csv_path.read_text().splitlines()
    parts = lines[3].split(",")
    parts[2] = "oops"
    lines[3] = ",".join(parts)
    csv_path.write_text("\n".join(lines) + "\n")
    with pytest.raises(ValidationError, match="row 4"):
        read_run(tmp_path)
    write_run(run, tmp_path)

    _corrupt(tmp_path / TRUE_T_CSV, "package,T_true", "pkg,T_true")
    with pytest.raises(ValidationError, match="bad header"):
        read_run(tmp_path)
    write_run(run, tmp_path)

    sidecar = read_json(tmp_path / RUN_JSON)
    del sidecar["seed"]
    write_json(sidecar, tmp_path / RUN_JSON)
    with pytest.raises(ValidationError, match="missing key 'seed'"):
        read_run(tmp_path)


def test_protocol_descriptor_round_trip():
    p = ProtocolParams(V=7.5, epsilon=0.02, r=0.2)
    assert protocol_from_descriptor(protocol_descriptor(p)) == p
    with pytest.raises(ValidationError, match="unknown protocol keys"):
        protocol_from_descriptor({"V": 5.0, "chroma": 1.0})


# ---- estimates ----------------------------------------------------------

def test_estimates_round_trip_is_exact(tmp_path):
    ests = estimate_run(_small_run())
    path = tmp_path / "est.csv"
    write_estimates(ests, path)
    back = read_estimates(path)
    assert len(back) == len(ests)
    for a, b in zip(ests, back):
        assert b.sqrtT_hat == a.sqrtT_hat
        assert b.T_hat == a.T_hat
        assert b.sigma_sqrtT == a.sigma_sqrtT
        assert b.sigma_T == a.sigma_T
        assert b.vN_hat == a.vN_hat
        assert b.k == a.k


def test_read_estimates_recomputes_sign_anomaly(tmp_path):
    neg = PackageEstimate(sqrtT_hat=-0.02, T_hat=0.0004, sigma_sqrtT=0.05,
                          sigma_T=0.01, vN_hat=1.0, k=100, sign_anomaly=True)
    pos = PackageEstimate(sqrtT_hat=0.7, T_hat=0.49, sigma_sqrtT=0.05,
                          sigma_T=0.07, vN_hat=1.0, k=100)
    path = tmp_path / "est.csv"
    write_estimates([neg, pos], path)
    back = read_estimates(path)
    assert back[0].sign_anomaly is True
    assert back[1].sign_anomaly is False


def test_read_estimates_validates(tmp_path):
    ests = estimate_run(_small_run(m=4))
    path = tmp_path / "est.csv"

    write_estimates(ests, path)
    _corrupt(path, "sqrtT_hat", "sqrt_hat")
    with pytest.raises(ValidationError, match="bad header"):
        read_estimates(path)

    write_estimates(ests, path)
    lines = path.read_text().splitlines()
    lines[2] = lines[2].rsplit(",", 1)[0]  # drop the k field on row 3
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(ValidationError, match="row 3"):
        read_estimates(path)

    write_estimates(ests, path)
    lines = path.read_text().splitlines()
    lines[2] = "7" + lines[2][1:]  # package index jumps
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(ValidationError, match="expected 1"):
        read_estimates(path)

    path.write_text("package,sqrtT_hat,T_hat,sigma_sqrtT,sigma_T,vN_hat,k\n")
    with pytest.raises(ValidationError, match="no estimate rows"):
        read_estimates(path)


# ---- traces -------------------------------------------------------------

def test_trace_round_trip(tmp_path):
    values = np.array([0.1, 0.5, 0.987654321012345, 1.0, 0.0])
    path = tmp_path / "trace.csv"
    write_trace(values, path)
    assert np.array_equal(read_trace(path), values)


def test_trace_reads_true_t_sidecar(tmp_path):
    run = _small_run(m=5)
    write_run(run, tmp_path)
    trace = read_trace(tmp_path / TRUE_T_CSV)
    assert np.array_equal(trace, [pkg.true_T for pkg in run.packages])


def test_read_trace_validates(tmp_path):
    path = tmp_path / "trace.csv"

    path.write_text("transmission\n0.5\n")
    with pytest.raises(ValidationError, match="T or T_true"):
        read_trace(path)

    path.write_text("T\n0.5\n1.5\n")
    with pytest.raises(ValidationError, match="row 3.*outside"):
        read_trace(path)

    path.write_text("package,T_true\n0,0.5\n1\n")
    with pytest.raises(ValidationError, match="row 3.*expected 2 fields"):
        read_trace(path)

    path.write_text("T\n")
    with pytest.raises(ValidationError, match="empty trace"):
        read_trace(path)


# ---- primitives ----------------------------------------------------------

def test_write_table_floats_use_repr(tmp_path):
    path = tmp_path / "t.csv"
    write_table(path, ["a", "b", "c"], [[1, 1.0 / 3.0, "x"]])
    lines = path.read_text().splitlines()
    assert lines[0] == "a,b,c"
    assert lines[1] == f"1,{1.0 / 3.0!r},x"


def test_jsonable_handles_special_values():
    out = jsonable({"x": math.inf, "y": -math.inf, "z": math.nan,
                    "arr": np.array([1.5]), "n": np.int64(3)})
    assert out == {"x": "inf", "y": "-inf", "z": "nan", "arr": [1.5], "n": 3}
    assert jsonable(ProtocolParams()) == protocol_descriptor(ProtocolParams())


def test_read_json_reports_invalid_files(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text("{not json")
    with pytest.raises(ValidationError, match="not valid JSON"):
        read_json(path)
