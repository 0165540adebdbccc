import numpy as np
import pytest

from egfl_lab import artifacts
from egfl_lab.reports import (
    FIGURES,
    attribution_summary,
    correlation_matrix,
    feature_correlations,
    figure_table,
    write_figure,
)


def test_ignored_feature_has_zero_correlation():
    """Test a constant-zero attribution column correlates with nothing"""
    rng = np.random.default_rng(6)
    values = rng.normal(size=(50, 3))
    values[:, 1] = 0.0
    y_hat = values[:, 0] * 0.5 + 0.1
    corr = feature_correlations(values, y_hat)
    assert corr[0] == pytest.approx(1.0)
    assert corr[1] == 0.0


def test_correlation_matrix_shape_and_diagonal():
    """Test the matrix is symmetric with a unit diagonal on live columns"""
    rng = np.random.default_rng(7)
    R = np.column_stack([rng.normal(size=40), rng.normal(size=40), np.full(40, 3.0)])
    corr = correlation_matrix(R)
    np.testing.assert_allclose(corr, corr.T, atol=1e-15)
    assert corr.diagonal().tolist() == [1.0, 1.0, 0.0]
    assert np.all(np.abs(corr) <= 1.0)
    assert correlation_matrix(np.column_stack([R[:, 0], -R[:, 0]]))[0, 1] == pytest.approx(-1.0)


def test_attribution_summary():
    """Test per-feature statistics of an attribution matrix"""
    values = np.array([[1.0, -2.0], [3.0, -4.0], [-1.0, 0.0], [5.0, -6.0]])
    first, second = attribution_summary(values)
    assert first["mean"] == pytest.approx(2.0)
    assert first["mean_abs"] == pytest.approx(2.5)
    assert first["median"] == pytest.approx(2.0)
    assert (first["min"], first["max"]) == (-1.0, 5.0)
    assert first["negative_fraction"] == 0.25
    assert second["negative_fraction"] == 0.75


def test_unknown_figure(tiny_run):
    """Test an unknown figure name is refused"""
    run_dir, _ = tiny_run
    with pytest.raises(ValueError, match="unknown figure"):
        figure_table(run_dir, "heatmap")


def test_loss_table_covers_every_round(tiny_run):
    """Test the loss figure has T rows per variant and slice"""
    run_dir, cfg = tiny_run
    header, rows = figure_table(run_dir, "loss")
    assert header[:3] == ("variant", "slice", "round")
    assert len(rows) == len(cfg.variants) * cfg.N * cfg.T
    assert [r[0] for r in rows[:cfg.N]] == ["EGFL-JS"] * cfg.N
    assert all(0.0 <= r[4] <= 1.0 for r in rows)


def test_sweep_and_attribution_tables(tiny_run):
    """Test the sweep and attribution figures list every slice"""
    run_dir, cfg = tiny_run
    _, sweep = figure_table(run_dir, "sweep")
    assert {r[2] for r in sweep} == {33.3, 66.7}
    assert len(sweep) == 2 * cfg.N * len(cfg.variants)
    _, attr = figure_table(run_dir, "attributions")
    assert len(attr) == 3 * cfg.N * len(cfg.variants)
    assert all(0.0 <= r[-1] <= 1.0 for r in attr)


def test_comprehensiveness_table_labels_splits(tiny_run):
    """Test the faithfulness figure has a test and a train row per variant and slice"""
    run_dir, cfg = tiny_run
    header, rows = figure_table(run_dir, "comprehensiveness")
    assert header[:3] == ("variant", "slice", "split")
    assert len(rows) == 2 * cfg.N * len(cfg.variants)
    assert [r[2] for r in rows[:2]] == ["test", "train"]
    _, sweep = figure_table(run_dir, "sweep")
    assert {r[-1] for r in sweep} == {"test"}


@pytest.mark.parametrize("figure", sorted(FIGURES))
def test_write_figure(tiny_run, figure, tmp_path):
    """Test each figure writes a CSV with a header row"""
    run_dir, _ = tiny_run
    written = write_figure(run_dir, figure, out_dir=tmp_path)
    rows = artifacts.read_csv_dicts(written[0])
    assert written[0].name == f"{figure}.csv"
    assert rows
    if figure == "correlation":
        matrices = artifacts.read_json(tmp_path / "correlation_matrix.json")
        assert matrices["labels"][-1] == "y_hat"
        assert len(matrices["matrices"]["EGFL-JS"]["eMBB"]) == 4
