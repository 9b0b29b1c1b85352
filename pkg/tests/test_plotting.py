import json
import math
import os

import pytest

from gibbslab.errors import ConfigError
from gibbslab.plotting import plot_emit


def write(path, text):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)
    return str(path)


@pytest.fixture()
def line_csv(tmp_path):
    rows = ["theta,density,overlay"]
    for k in range(32):
        t = 2.0 * math.pi * k / 32
        rows.append(f"{t},{1.0 + 0.5 * math.cos(t)},{1.0}")
    return write(tmp_path / "density.csv", "\n".join(rows) + "\n")


@pytest.fixture()
def gap_csv(tmp_path):
    rows = ["n,inf_n,inf_macro,gap"]
    for n, gap in [(4, 0.2), (8, 0.09), (16, 0.04), (32, 0.018)]:
        rows.append(f"{n},{-0.3 + gap},-0.3,{gap}")
    return write(tmp_path / "table.csv", "\n".join(rows) + "\n")


@pytest.fixture()
def scatter_csv(tmp_path):
    rows = ["index,theta"]
    for k in range(6):
        rows.append(f"{k},{2.0 * math.pi * k / 6}")
    return write(tmp_path / "points.csv", "\n".join(rows) + "\n")


def test_line_plot_is_deterministic(line_csv):
    first = plot_emit(line_csv, "line")
    with open(first, "rb") as fh:
        bytes_one = fh.read()
    os.remove(first)
    second = plot_emit(line_csv, "line")
    with open(second, "rb") as fh:
        bytes_two = fh.read()
    assert first == second
    assert bytes_one == bytes_two
    text = bytes_one.decode("utf-8")
    assert text.startswith('<?xml version="1.0" encoding="UTF-8"?>')
    assert 'version="1.1"' in text
    assert text.count("<polyline") == 2  # solid series + dashed overlay
    assert "stroke-dasharray" in text


def test_default_output_name(line_csv):
    path = plot_emit(line_csv, "line")
    assert path.endswith("density_line.svg")


def test_explicit_output_path(line_csv, tmp_path):
    target = str(tmp_path / "custom.svg")
    assert plot_emit(line_csv, "line", output=target) == target
    assert os.path.exists(target)


def test_gap_log_from_csv(gap_csv):
    path = plot_emit(gap_csv, "gap-log")
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    assert "<circle" in text
    assert ">0.1<" in text  # decade tick inside the padded range


def test_gap_log_from_json(tmp_path):
    blob = {"n_values": [4, 8, 16], "gaps": [0.1, 0.04, 0.015]}
    path = write(tmp_path / "verdict.json", json.dumps(blob))
    out = plot_emit(path, "gap-log")
    assert os.path.exists(out)


def test_gap_log_drops_zero_gaps(tmp_path):
    path = write(tmp_path / "t.csv",
                 "n,gap\n2,0.0\n4,0.5\n8,0.25\n")
    out = plot_emit(path, "gap-log")
    with open(out, "r", encoding="utf-8") as fh:
        assert fh.read().count("<circle") == 2


def test_gap_log_all_zero_rejected(tmp_path):
    path = write(tmp_path / "t.csv", "n,gap\n2,0.0\n4,0.0\n")
    with pytest.raises(ConfigError, match="no positive gaps"):
        plot_emit(path, "gap-log")
    assert not os.path.exists(str(tmp_path / "t_gap-log.svg"))


def test_gap_log_json_without_table(tmp_path):
    path = write(tmp_path / "other.json", json.dumps({"value": 1.0}))
    with pytest.raises(ConfigError, match="n_values/gaps"):
        plot_emit(path, "gap-log")


def test_scatter_circle(scatter_csv):
    path = plot_emit(scatter_csv, "scatter")
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    assert text.count("<circle") == 6
    assert "#bbbbbb" in text  # reference ring


def test_scatter_sphere_hollow_far_side(tmp_path):
    rows = ["index,x,y,z", "0,1.0,0.0,0.0", "1,0.0,0.0,-1.0"]
    path = write(tmp_path / "p.csv", "\n".join(rows) + "\n")
    out = plot_emit(path, "scatter")
    with open(out, "r", encoding="utf-8") as fh:
        text = fh.read()
    assert 'fill="none"' in text


def test_scatter_torus(tmp_path):
    rows = ["index,u,v", "0,0.25,0.5", "1,0.75,0.1"]
    path = write(tmp_path / "p.csv", "\n".join(rows) + "\n")
    assert os.path.exists(plot_emit(path, "scatter"))


def test_scatter_box_number_line(tmp_path):
    rows = ["index,x", "0,-1.5", "1,0.25", "2,2.0"]
    path = write(tmp_path / "p.csv", "\n".join(rows) + "\n")
    out = plot_emit(path, "scatter")
    with open(out, "r", encoding="utf-8") as fh:
        assert fh.read().count("<circle") == 3


def test_scatter_rejects_finite_labels(tmp_path):
    path = write(tmp_path / "p.csv", "index,atom\n0,2\n1,0\n")
    with pytest.raises(ConfigError, match="counts table"):
        plot_emit(path, "scatter")


def test_scatter_rejects_other_headers(line_csv):
    with pytest.raises(ConfigError, match="index column"):
        plot_emit(line_csv, "scatter")


def test_heat_full_grid(tmp_path):
    rows = ["u,v,value"]
    for i in range(4):
        for j in range(4):
            rows.append(f"{i / 4},{j / 4},{math.sin(i + j)}")
    path = write(tmp_path / "grid.csv", "\n".join(rows) + "\n")
    out = plot_emit(path, "heat")
    with open(out, "r", encoding="utf-8") as fh:
        text = fh.read()
    assert text.count('fill="#') >= 16
    assert 'ff"' in text


def test_heat_rejects_partial_grid(tmp_path):
    path = write(tmp_path / "grid.csv", "u,v,value\n0,0,1\n0,1,2\n1,0,3\n")
    with pytest.raises(ConfigError, match="full grid"):
        plot_emit(path, "heat")


def test_heat_rejects_wrong_columns(gap_csv):
    with pytest.raises(ConfigError, match="columns"):
        plot_emit(gap_csv, "heat")


def test_unknown_kind(line_csv):
    with pytest.raises(ConfigError, match="unknown plot kind"):
        plot_emit(line_csv, "surface")


def test_missing_result_file(tmp_path):
    with pytest.raises(ConfigError, match="does not exist"):
        plot_emit(str(tmp_path / "nope.csv"), "line")


def test_empty_result_file(tmp_path):
    path = write(tmp_path / "empty.csv", "")
    with pytest.raises(ConfigError, match="empty"):
        plot_emit(path, "line")
    path = write(tmp_path / "header.csv", "theta,density\n")
    with pytest.raises(ConfigError, match="no data rows"):
        plot_emit(path, "line")
    assert not os.path.exists(str(tmp_path / "header_line.svg"))


def test_line_needs_value_column(tmp_path):
    path = write(tmp_path / "one.csv", "x\n1\n2\n")
    with pytest.raises(ConfigError, match="value column"):
        plot_emit(path, "line")


def test_non_numeric_column(tmp_path):
    path = write(tmp_path / "bad.csv", "x,y\n1,fast\n")
    with pytest.raises(ConfigError, match="not numeric"):
        plot_emit(path, "line")
