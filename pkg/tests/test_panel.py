import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from scmlab.panel import (ColumnSpec, PanelData, PanelFormatError,
                          PredictorMatrix, build_predictors, load_panel_csv,
                          write_panel_csv)


def make_panel(outcomes, t0, covariates=None, labels=None):
    outcomes = np.asarray(outcomes, dtype=float)
    if covariates is None:
        covariates = np.zeros((outcomes.shape[0], 0))
    return PanelData(outcomes=outcomes, covariates=covariates, t0=t0,
                     t1=outcomes.shape[1] - t0, unit_labels=labels)


class TestPanelData:
    def test_basic_properties(self):
        panel = make_panel([[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]], t0=2)
        assert panel.n_controls == 1
        assert panel.n_covariates == 0
        np.testing.assert_array_equal(panel.pre_outcomes, [[1.0, 2.0], [4.0, 5.0]])
        np.testing.assert_array_equal(panel.post_outcomes, [[3.0], [6.0]])

    def test_synthesized_labels(self):
        panel = make_panel([[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]], t0=1)
        assert panel.labels() == ("u0", "u1", "u2")

    def test_arrays_are_read_only(self):
        panel = make_panel([[1.0, 2.0], [3.0, 4.0]], t0=1)
        with pytest.raises(ValueError):
            panel.outcomes[0, 0] = 99.0

    def test_rejects_missing_control(self):
        with pytest.raises(PanelFormatError):
            make_panel([[1.0, 2.0]], t0=1)

    def test_rejects_no_post_period(self):
        with pytest.raises(PanelFormatError):
            make_panel([[1.0, 2.0], [3.0, 4.0]], t0=2)

    def test_rejects_nonfinite(self):
        with pytest.raises(PanelFormatError):
            make_panel([[1.0, np.nan], [3.0, 4.0]], t0=1)

    def test_rejects_covariate_unit_mismatch(self):
        with pytest.raises(PanelFormatError):
            PanelData(outcomes=np.ones((3, 2)), covariates=np.ones((2, 1)),
                      t0=1, t1=1)


class TestBuildPredictors:
    def test_stacks_pre_outcomes(self):
        panel = make_panel([[1.0, 2.0, 9.0], [3.0, 4.0, 9.0]], t0=2)
        pred = build_predictors(panel)
        np.testing.assert_array_equal(pred.target, [1.0, 2.0])
        np.testing.assert_array_equal(pred.controls, [[3.0], [4.0]])

    def test_covariates_land_last_in_target(self):
        panel = make_panel([[1.0, 2.0, 9.0], [3.0, 4.0, 9.0]], t0=2,
                           covariates=[[5.0], [7.0]])
        pred = build_predictors(panel)
        assert pred.target[-1] == 5.0
        assert pred.controls[-1, 0] == 7.0

    def test_shapes_for_random_panel(self):
        rng = np.random.default_rng(3)
        panel = make_panel(rng.normal(size=(6, 9)), t0=7,
                           covariates=rng.normal(size=(6, 2)))
        pred = build_predictors(panel)
        assert pred.target.shape == (7 + 2,)
        assert pred.controls.shape == (7 + 2, 5)
        assert pred.n_controls == 5

    def test_predictor_matrix_validates(self):
        with pytest.raises(PanelFormatError):
            PredictorMatrix(target=np.ones(3), controls=np.ones((4, 2)))


class TestLoadPanelCsv:
    def write(self, tmp_path, text):
        path = tmp_path / "panel.csv"
        path.write_text(text, encoding="utf-8")
        return path

    def test_two_units_three_times(self, tmp_path):
        path = self.write(tmp_path, "\n".join([
            "unit,time,outcome,treated",
            "A,0,1.0,0", "A,1,2.0,1", "A,2,3.0,1",
            "B,0,4.0,0", "B,1,5.0,0", "B,2,6.0,0", ""]))
        panel = load_panel_csv(path)
        assert panel.n_controls == 1
        assert panel.t0 == 1 and panel.t1 == 2
        np.testing.assert_array_equal(panel.outcomes,
                                      [[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]])
        assert panel.labels() == ("A", "B")

    def test_treated_unit_moved_to_row_zero(self, tmp_path):
        path = self.write(tmp_path, "\n".join([
            "unit,time,outcome,treated",
            "B,0,4.0,0", "B,1,5.0,0",
            "A,0,1.0,0", "A,1,2.0,1", ""]))
        panel = load_panel_csv(path)
        assert panel.labels() == ("A", "B")
        np.testing.assert_array_equal(panel.outcomes[0], [1.0, 2.0])

    def test_missing_cell_named(self, tmp_path):
        path = self.write(tmp_path, "\n".join([
            "unit,time,outcome,treated",
            "A,0,1.0,0", "A,1,2.0,1",
            "B,1,5.0,0", ""]))
        with pytest.raises(PanelFormatError, match=r"\(B,0\)"):
            load_panel_csv(path)

    def test_duplicate_cell_rejected(self, tmp_path):
        path = self.write(tmp_path, "\n".join([
            "unit,time,outcome,treated",
            "A,0,1.0,0", "A,0,1.5,0", "A,1,2.0,1",
            "B,0,4.0,0", "B,1,5.0,0", ""]))
        with pytest.raises(PanelFormatError, match="duplicate"):
            load_panel_csv(path)

    def test_multiple_treated_rejected(self, tmp_path):
        path = self.write(tmp_path, "\n".join([
            "unit,time,outcome,treated",
            "A,0,1.0,0", "A,1,2.0,1",
            "B,0,4.0,0", "B,1,5.0,1", ""]))
        with pytest.raises(PanelFormatError, match="one treated"):
            load_panel_csv(path)

    def test_non_numeric_outcome_rejected(self, tmp_path):
        path = self.write(tmp_path, "\n".join([
            "unit,time,outcome,treated",
            "A,0,oops,0", "A,1,2.0,1",
            "B,0,4.0,0", "B,1,5.0,0", ""]))
        with pytest.raises(PanelFormatError, match="non-numeric"):
            load_panel_csv(path)

    def test_covariate_column_detected(self, tmp_path):
        path = self.write(tmp_path, "\n".join([
            "unit,time,outcome,treated,z1",
            "A,0,1.0,0,2.5", "A,1,2.0,1,2.5",
            "B,0,4.0,0,-1.0", "B,1,5.0,0,-1.0", ""]))
        panel = load_panel_csv(path)
        assert panel.covariates.shape == (2, 1)
        np.testing.assert_array_equal(panel.covariates, [[2.5], [-1.0]])

    def test_time_varying_covariate_rejected(self, tmp_path):
        path = self.write(tmp_path, "\n".join([
            "unit,time,outcome,treated,z1",
            "A,0,1.0,0,2.5", "A,1,2.0,1,3.5",
            "B,0,4.0,0,-1.0", "B,1,5.0,0,-1.0", ""]))
        with pytest.raises(PanelFormatError, match="vary"):
            load_panel_csv(path)

    def test_numeric_times_sorted_numerically(self, tmp_path):
        path = self.write(tmp_path, "\n".join([
            "unit,time,outcome,treated",
            "A,10,2.0,1", "A,9,1.0,0", "A,2,0.5,0",
            "B,2,3.5,0", "B,9,4.0,0", "B,10,5.0,0", ""]))
        panel = load_panel_csv(path)
        assert panel.t0 == 2
        np.testing.assert_array_equal(panel.outcomes[0], [0.5, 1.0, 2.0])

    def test_treatment_at_first_period_rejected(self, tmp_path):
        path = self.write(tmp_path, "\n".join([
            "unit,time,outcome,treated",
            "A,0,1.0,1", "A,1,2.0,1",
            "B,0,4.0,0", "B,1,5.0,0", ""]))
        with pytest.raises(PanelFormatError):
            load_panel_csv(path)

    def test_custom_schema(self, tmp_path):
        path = self.write(tmp_path, "\n".join([
            "id,year,gdp,flag",
            "A,0,1.0,0", "A,1,2.0,1",
            "B,0,4.0,0", "B,1,5.0,0", ""]))
        schema = ColumnSpec(unit="id", time="year", outcome="gdp", treated="flag")
        panel = load_panel_csv(path, schema)
        assert panel.t0 == 1


class TestWritePanelCsv:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(11)
        panel = make_panel(rng.normal(size=(4, 6)), t0=4,
                           covariates=rng.normal(size=(4, 2)),
                           labels=("tr", "c1", "c2", "c3"))
        path = tmp_path / "out.csv"
        write_panel_csv(panel, path)
        assert load_panel_csv(path) == panel

    def test_row_count_in_long_format(self, tmp_path):
        rng = np.random.default_rng(12)
        panel = make_panel(rng.normal(size=(31, 60)), t0=50)
        path = tmp_path / "big.csv"
        write_panel_csv(panel, path)
        lines = path.read_text(encoding="utf-8").splitlines()
        assert len(lines) == 1 + 31 * 60

    def test_synthetic_labels_emitted(self, tmp_path):
        panel = make_panel([[1.0, 2.0], [3.0, 4.0]], t0=1)
        path = tmp_path / "lab.csv"
        write_panel_csv(panel, path)
        body = path.read_text(encoding="utf-8")
        assert "u0,0," in body and "u1,0," in body

    @settings(max_examples=25, deadline=None)
    @given(st.data())
    def test_round_trip_property(self, tmp_path_factory, data):
        n_units = data.draw(st.integers(2, 5))
        t0 = data.draw(st.integers(1, 4))
        t1 = data.draw(st.integers(1, 3))
        r = data.draw(st.integers(0, 2))
        finite = st.floats(-1e12, 1e12, allow_nan=False, allow_infinity=False,
                           width=64)
        outcomes = np.array(data.draw(st.lists(
            st.lists(finite, min_size=t0 + t1, max_size=t0 + t1),
            min_size=n_units, max_size=n_units)))
        covariates = np.array(data.draw(st.lists(
            st.lists(finite, min_size=r, max_size=r),
            min_size=n_units, max_size=n_units))).reshape(n_units, r)
        panel = PanelData(outcomes=outcomes, covariates=covariates, t0=t0, t1=t1)
        path = tmp_path_factory.mktemp("rt") / "p.csv"
        write_panel_csv(panel, path)
        assert load_panel_csv(path) == panel
