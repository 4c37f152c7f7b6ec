from pathlib import Path

import matplotlib.pyplot as plt
import numpy as np
import pytest

from swimplots import cli
from swimplots.figures import ACTION_COLORS, FigureSpec, render, _heatmap_panel
from swimplots.schemas import SchemaError, load_table

FIXTURES = Path(__file__).parent / "fixtures"


def spec_for(kind, name, out, **kw):
    return FigureSpec(kind=kind, inputs=[str(FIXTURES / name)], output=str(out), **kw)


class TestSchemas:
    def test_loads_documented_schema(self):
        table = load_table(FIXTURES / "sherwood.csv", "sherwood")
        assert table.columns[0] == "pe"
        assert len(table.rows) == 6

    def test_mismatch_reports_column_diff(self, tmp_path):
        bad = tmp_path / "bad.csv"
        bad.write_text("pe,wR,J0,Jbar,sherwood,periodic_flag\n1,2,3,4,5,6\n")
        with pytest.raises(SchemaError) as err:
            load_table(bad, "sherwood")
        assert "missing ['Sh']" in str(err.value)
        assert "unexpected ['sherwood']" in str(err.value)

    def test_empty_rows_rejected(self, tmp_path):
        bad = tmp_path / "empty.csv"
        bad.write_text("pe,wR,J0,Jbar,Sh,periodic_flag\n")
        with pytest.raises(SchemaError):
            load_table(bad, "sherwood")


class TestRenderKinds:
    def test_sherwood_curve(self, tmp_path):
        out = tmp_path / "sh.png"
        render(spec_for("curve", "sherwood.csv", out))
        assert out.exists() and out.stat().st_size > 5000

    def test_transient_curve(self, tmp_path):
        out = tmp_path / "tr.png"
        render(spec_for("curve", "transient.csv", out, schema="transient",
                        log_x=False))
        assert out.exists()

    def test_scatter_action_colors(self, tmp_path, monkeypatch):
        captured = []
        orig = plt.Axes.scatter

        def spy(self, *args, **kwargs):
            captured.append(kwargs.get("color"))
            return orig(self, *args, **kwargs)

        monkeypatch.setattr(plt.Axes, "scatter", spy)
        out = tmp_path / "sc.png"
        render(spec_for("scatter", "experience.csv", out, state_filter=2))
        assert captured == [ACTION_COLORS[1], ACTION_COLORS[2]]

    def test_scatter_state_filter_empty_is_error(self, tmp_path):
        out = tmp_path / "sc.png"
        with pytest.raises(SchemaError):
            render(spec_for("scatter", "experience.csv", out, state_filter=4))

    def test_boxplot(self, tmp_path):
        out = tmp_path / "bp.png"
        render(spec_for("boxplot", "boxplot.csv", out))
        assert out.exists()


class TestHeatmapAnnotations:
    def _annotations(self, csv_name, reward):
        fig, ax = plt.subplots()
        table = load_table(FIXTURES / csv_name, "heatmap")
        _heatmap_panel(fig, ax, table, reward)
        texts = sorted(t.get_text() for t in ax.texts)
        plt.close(fig)
        return texts

    def test_all_ones_annotations(self):
        assert self._annotations("heatmap.csv", "disp") == ["1", "1", "1", "1"]

    def test_annotations_match_csv_values(self):
        texts = self._annotations("heatmap_mixed.csv", "acc")
        assert sorted(texts) == sorted(["0", "0.2", "0.5", "0.3"])

    def test_missing_cell_not_annotated(self):
        # the diff channel has 3 of 4 grid cells
        texts = self._annotations("heatmap_mixed.csv", "diff")
        assert len(texts) == 3

    def test_multi_reward_file_renders_panels(self, tmp_path):
        out = tmp_path / "hm.png"
        render(spec_for("heatmap", "heatmap_mixed.csv", out))
        assert out.exists()


class TestDeterminism:
    @pytest.mark.parametrize(
        "kind,name,kw",
        [
            ("curve", "sherwood.csv", {}),
            ("heatmap", "heatmap_mixed.csv", {}),
            ("boxplot", "boxplot.csv", {}),
            ("scatter", "experience.csv", {"state_filter": 2}),
        ],
    )
    def test_byte_stable_regeneration(self, tmp_path, kind, name, kw):
        a = tmp_path / "a.png"
        b = tmp_path / "b.png"
        render(spec_for(kind, name, a, **kw))
        render(spec_for(kind, name, b, **kw))
        assert a.read_bytes() == b.read_bytes()

    def test_rendering_does_not_mutate_input(self, tmp_path):
        src = FIXTURES / "sherwood.csv"
        before = src.read_bytes()
        render(spec_for("curve", "sherwood.csv", tmp_path / "x.png"))
        assert src.read_bytes() == before


class TestCli:
    def test_cli_renders(self, tmp_path):
        out = tmp_path / "fig.png"
        code = cli.main(
            ["curve", "--in", str(FIXTURES / "sherwood.csv"), "--out", str(out)]
        )
        assert code == 0 and out.exists()

    def test_cli_schema_error_exit(self, tmp_path):
        code = cli.main(
            ["heatmap", "--in", str(FIXTURES / "sherwood.csv"),
             "--out", str(tmp_path / "x.png")]
        )
        assert code == 1

    def test_cli_missing_file(self, tmp_path):
        code = cli.main(
            ["curve", "--in", str(tmp_path / "nope.csv"),
             "--out", str(tmp_path / "x.png")]
        )
        assert code == 1
