import numpy as np
import pytest

from emorec.emotion import build_emotion_matrix
from emorec.errors import ConfigError
from emorec.evaluation import EvalReport
from emorec.item_stats import classify, compute_item_stats
from emorec.render import (VIRIDIS9, Colormap, RasterSpec, emit_comparison_plot_data,
                           pooled_grid, read_ppm, render_heatmap)


@pytest.fixture
def matrix(synthetic):
    return build_emotion_matrix(synthetic, classify(compute_item_stats(synthetic)))


def test_colormap_endpoints_and_midpoint():
    cmap = Colormap.named("viridis")
    assert cmap([0.0, 1.0]).tolist() == [list(VIRIDIS9[0]), list(VIRIDIS9[-1])]
    assert cmap([0.5]).tolist() == [list(VIRIDIS9[4])]
    gray = Colormap.named("gray")
    assert gray([0.5, -1.0, 2.0]).tolist() == [[128] * 3, [0] * 3, [255] * 3]
    with pytest.raises(ConfigError):
        Colormap.named("jet")


def test_unpooled_grid_is_the_dense_matrix(matrix):
    np.testing.assert_array_equal(pooled_grid(matrix), matrix.dense())


def test_mean_pooling_preserves_the_mean(matrix):
    dense = matrix.dense()
    grid = pooled_grid(matrix, RasterSpec(max_width=7, max_height=12))
    assert grid.shape == (12, 7)
    rows = np.arange(dense.shape[0]) * 12 // dense.shape[0]
    cols = np.arange(dense.shape[1]) * 7 // dense.shape[1]
    for r in range(12):
        for c in range(7):
            assert grid[r, c] == pytest.approx(dense[np.ix_(rows == r, cols == c)].mean())


def test_max_pooling(matrix):
    dense = matrix.dense()
    grid = pooled_grid(matrix, RasterSpec(max_width=1, max_height=1, pooling="max"))
    assert grid[0, 0] == dense.max()


def test_remap_separates_observed_cells(matrix):
    grid = pooled_grid(matrix, RasterSpec(remap_observed=True))
    observed = grid[matrix.user_idx, matrix.item_idx]
    assert observed.min() >= 0.05
    assert np.count_nonzero(grid) == len(matrix.raw)


def test_sort_by_count_puts_busy_rows_first(matrix):
    grid = pooled_grid(matrix, RasterSpec(sort_by_count=True))
    per_row = np.count_nonzero(grid, axis=1)
    assert list(per_row) == sorted(per_row, reverse=True) or per_row[0] == per_row.max()
    assert np.sort(grid.ravel()).tolist() == np.sort(matrix.dense().ravel()).tolist()


def test_ppm_round_trip(matrix, tmp_path):
    path = tmp_path / "h.ppm"
    rgb = render_heatmap(matrix, RasterSpec(max_width=16, max_height=9), path)
    assert path.read_bytes().startswith(b"P6\n16 9\n255\n")
    np.testing.assert_array_equal(read_ppm(path), rgb)
    again = tmp_path / "h2.ppm"
    render_heatmap(matrix, RasterSpec(max_width=16, max_height=9), again)
    assert path.read_bytes() == again.read_bytes()


@pytest.mark.parametrize("kwargs", [{"max_width": 0}, {"pooling": "median"}, {"colormap": "x"}])
def test_raster_spec_validation(kwargs):
    with pytest.raises(ConfigError):
        RasterSpec(**kwargs)


def test_comparison_plot(tmp_path):
    reports = [EvalReport("mf", 0.8, 0.9, 10, 0, "d", 0.0, ""),
               EvalReport("emf", 0.81, 0.85, 10, 0, "d", 0.01, ""),
               EvalReport("random", 1.4, 0.4, 10, 0, "d", 0.0, "")]
    svg, csv_path = tmp_path / "c.svg", tmp_path / "c.csv"
    emit_comparison_plot_data(reports, svg, csv_path)
    text = svg.read_text()
    assert text.count('class="bar"') == 6
    assert "emf λ=0.01" in text and ">0.850<" in text
    rows = csv_path.read_text().splitlines()
    assert rows[0] == "metric,label,value" and len(rows) == 7
    with pytest.raises(ConfigError):
        emit_comparison_plot_data([], svg)


def _matrix_of(cells, shape):
    from emorec.emotion import EmotionMatrix
    rows = np.array([c[0] for c in cells], dtype=np.int64)
    cols = np.array([c[1] for c in cells], dtype=np.int64)
    vals = np.array([c[2] for c in cells], dtype=float)
    return EmotionMatrix(rows, cols, vals, vals, shape, np.arange(shape[0]), np.arange(shape[1]))


def test_two_by_two_with_two_colors():
    m = _matrix_of([(0, 1, 1.0), (1, 0, 1.0)], (2, 2))
    rgb = render_heatmap(m, RasterSpec(colormap="gray"))
    assert rgb.reshape(4, 3).tolist() == [[0] * 3, [255] * 3, [255] * 3, [0] * 3]


def test_empty_matrix_renders_the_zero_color():
    rgb = render_heatmap(_matrix_of([], (3, 5)))
    assert (rgb == np.array(VIRIDIS9[0], dtype=np.uint8)).all()


def test_zero_mae_bar_and_regeneration(tmp_path):
    from emorec.evaluation import read_comparison_csv, write_comparison_csv
    reports = [EvalReport("mf", 0.0, 0.5, 10, 0, "d", 0.0, ""),
               EvalReport("random", 1.3, 0.4, 10, 0, "d", 0.0, "")]
    csv_path = tmp_path / "r.csv"
    write_comparison_csv(reports, csv_path)
    first, second = tmp_path / "a.svg", tmp_path / "b.svg"
    emit_comparison_plot_data(reports, first)
    emit_comparison_plot_data(read_comparison_csv(csv_path), second)
    text = first.read_text()
    assert 'height="0.000"' in text and ">0.000<" in text
    assert first.read_bytes() == second.read_bytes()
