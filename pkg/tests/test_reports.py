"""Tests for CSV tables and SVG charts."""

import xml.etree.ElementTree as ET

import pytest

from hifql import reports

SVG = "{http://www.w3.org/2000/svg}"


class TestCsv:
    """Tests for fixed-header CSV files."""

    def test_round_trip(self, tmp_path):
        path = reports.write_csv(tmp_path / "out" / "t.csv", ("a", "b"), [[1, "x"], [2, "y"]])
        rows = reports.read_csv(path)
        assert rows == [{"a": "1", "b": "x"}, {"a": "2", "b": "y"}]

    def test_header_first(self, tmp_path):
        path = reports.write_csv(tmp_path / "t.csv", ("lam", "seed"), [])
        assert path.read_text() == "lam,seed\n"

    def test_row_length_checked(self, tmp_path):
        with pytest.raises(ValueError):
            reports.write_csv(tmp_path / "t.csv", ("a", "b"), [[1]])


class TestSvg:
    """Tests for the chart writers."""

    def test_line_chart_is_valid_svg(self, tmp_path):
        path = reports.svg_line_chart(tmp_path / "c.svg",
                                      {"loss": ([1, 2, 3], [3.0, 2.0, 1.5]),
                                       "other": ([1, 2, 3], [1.0, 1.0, 1.0])},
                                      "Losses", "step", "loss")
        root = ET.parse(path).getroot()
        assert root.tag == f"{SVG}svg"
        assert len(root.findall(f"{SVG}polyline")) == 2

    def test_line_chart_flat_series(self, tmp_path):
        path = reports.svg_line_chart(tmp_path / "c.svg", {"s": ([0.5], [0.5])}, "One point")
        assert len(ET.parse(path).getroot().findall(f"{SVG}circle")) == 1

    def test_bar_chart(self, tmp_path):
        path = reports.svg_bar_chart(tmp_path / "b.svg", ["hifql", "gcbc"], [0.9, 0.5],
                                     [0.05, 0.0], "Success")
        root = ET.parse(path).getroot()
        # background plus one bar per label
        assert len(root.findall(f"{SVG}rect")) == 3
        assert len(root.findall(f"{SVG}line")) == 3

    def test_title_escaped(self, tmp_path):
        path = reports.svg_bar_chart(tmp_path / "b.svg", ["a<b"], [1.0], title="x & y")
        ET.parse(path)
        assert "x &amp; y" in path.read_text()

    def test_scatter(self, tmp_path):
        path = reports.svg_scatter(tmp_path / "s.svg", {"pts": [(0, 0), (1, 2), (3, 1)]}, "S")
        assert len(ET.parse(path).getroot().findall(f"{SVG}circle")) == 3
