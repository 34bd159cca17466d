import numpy as np
import pandas as pd
import pytest

from ivinfer.data import (
    CARD_COLSPEC,
    ColSpec,
    DataSet,
    absorb_exogenous,
    assemble_dataset,
    build_card_dataset,
    read_fixed_width,
    residualize,
)
from ivinfer.exceptions import ConfigError, RankDeficiencyError
from ivinfer.kclass import fit_kclass


class TestReadFixedWidth:
    def test_parses_card_head(self, card_table):
        row = card_table.iloc[0]
        assert row["id"] == 2
        assert row["nearc2"] == 0
        assert row["nearc4a"] == 0
        assert row["ed76"] == 7
        assert row["age76"] == 29

    def test_missing_token(self, tmp_path):
        path = tmp_path / "small.dat"
        path.write_text("12  3.5\n 4    .\n")
        spec = [ColSpec("a", 1, 2), ColSpec("b", 4, 8)]
        table = read_fixed_width(path, spec)
        assert table["a"].tolist() == [12, 4]
        assert table["b"][0] == 3.5
        assert np.isnan(table["b"][1])

    def test_short_lines_blank_fill(self, tmp_path):
        path = tmp_path / "short.dat"
        path.write_text("12\n")
        spec = [ColSpec("a", 1, 2), ColSpec("b", 4, 8)]
        table = read_fixed_width(path, spec)
        assert np.isnan(table["b"][0])

    def test_empty_file(self, tmp_path):
        path = tmp_path / "empty.dat"
        path.write_text("")
        table = read_fixed_width(path, [ColSpec("a", 1, 2)])
        assert len(table) == 0

    def test_unparseable_field(self, tmp_path):
        path = tmp_path / "bad.dat"
        path.write_text("12 ab\n")
        with pytest.raises(ValueError, match="line 1, column 'b'"):
            read_fixed_width(path, [ColSpec("a", 1, 2), ColSpec("b", 4, 5)])

    def test_overlapping_spec(self, tmp_path):
        path = tmp_path / "x.dat"
        path.write_text("123\n")
        with pytest.raises(ConfigError, match="overlaps"):
            read_fixed_width(path, [ColSpec("a", 1, 2), ColSpec("b", 2, 3)])

    def test_invalid_range(self):
        with pytest.raises(ConfigError):
            ColSpec("a", 3, 2)


class TestBuildCard:
    def test_row_count(self, card_table, card_full):
        assert len(card_table) == 3013  # three rows have a missing outcome
        assert card_full.n == 3010

    def test_first_row_values(self, card_table):
        df = card_table[card_table["lwage76"].notna()].copy()
        df["exp76"] = df["age76"] - df["ed76"] - 6
        first = df.iloc[0]
        assert first["ed76"] == 7
        assert first["exp76"] == 16
        assert first["exp76"] ** 2 == 256
        assert abs(first["lwage76"] - 6.306275) < 1e-6

    def test_famed_indicators(self, card_full):
        names = card_full.names["C"]
        famed = card_full.C[:, names.index("famed")]
        f3 = card_full.C[:, names.index("f3")]
        np.testing.assert_array_equal(f3, (famed == 3).astype(float))
        for i in range(1, 8):
            fi = card_full.C[:, names.index(f"f{i}")]
            np.testing.assert_array_equal(fi, (famed == i).astype(float))

    def test_dimensions_and_roles(self, card_full):
        assert card_full.k == 5
        assert card_full.m_x == 3
        assert card_full.m_c == 26
        assert card_full.intercept
        assert card_full.names["X"] == ["ed76", "exp76", "exp762"]
        assert card_full.names["Z"] == ["nearc4a", "nearc4b", "nearc2", "age76", "age762"]

    def test_role_repartition(self, card_race):
        assert card_race.m_x == 0
        assert card_race.m_w == 3
        assert card_race.m_d == 1
        assert card_race.m_c == 25

    def test_unknown_role_column(self, card_table):
        with pytest.raises(ConfigError):
            build_card_dataset(card_table, x=["nonsense"])


class TestDataSet:
    def test_requires_enough_instruments(self):
        with pytest.raises(ConfigError, match="instruments"):
            DataSet(y=np.zeros(5), X=np.ones((5, 2)), Z=np.ones((5, 1)))

    def test_rejects_nonfinite(self):
        x = np.ones((5, 1))
        x[0] = np.nan
        with pytest.raises(ConfigError, match="non-finite"):
            DataSet(y=np.zeros(5), X=x, Z=np.ones((5, 1)))

    def test_duplicate_names(self):
        with pytest.raises(ConfigError, match="more than one role"):
            DataSet(
                y=np.zeros(5), X=np.ones((5, 1)), Z=np.ones((5, 1)),
                names={"X": ["a"], "Z": ["a"]},
            )

    def test_instrument_free_ols_dataset(self):
        ds = DataSet(y=np.zeros(5), X=np.ones((5, 1)), Z=np.zeros((5, 0)))
        assert ds.k == 0


class TestAssemble:
    def test_drops_missing_rows(self, caplog):
        table = pd.DataFrame({
            "y": [1.0, 2.0, np.nan, 4.0],
            "x": [1.0, np.nan, 3.0, 4.0],
            "z": [1.0, 2.0, 3.0, 4.0],
        })
        ds = assemble_dataset(table, y="y", x=["x"], z=["z"])
        assert ds.n == 2

    def test_duplicate_role(self):
        table = pd.DataFrame({"y": [1.0], "x": [1.0], "z": [1.0]})
        with pytest.raises(ConfigError, match="more than one role"):
            assemble_dataset(table, y="y", x=["x"], z=["x"])

    def test_missing_column(self):
        table = pd.DataFrame({"y": [1.0]})
        with pytest.raises(ConfigError, match="not found"):
            assemble_dataset(table, y="y", x=["x"], z=[])


class TestResidualize:
    def test_centering_when_intercept_only(self):
        rng = np.random.default_rng(0)
        ds = DataSet(
            y=rng.standard_normal(30) + 5,
            X=rng.standard_normal((30, 1)) + 2,
            Z=rng.standard_normal((30, 2)) - 1,
            intercept=True,
        )
        out = residualize(ds)
        assert not out.intercept
        np.testing.assert_allclose(out.y.mean(), 0, atol=1e-12)
        np.testing.assert_allclose(out.X.mean(axis=0), 0, atol=1e-12)
        np.testing.assert_allclose(out.Z.mean(axis=0), 0, atol=1e-12)

    def test_idempotent(self, card_full):
        once = residualize(card_full)
        twice = residualize(once)
        np.testing.assert_allclose(once.y, twice.y, atol=1e-10)
        np.testing.assert_allclose(once.X, twice.X, atol=1e-10)
        assert once.m_c == 0 and not once.intercept

    def test_orthogonal_to_controls(self, card_full):
        out = residualize(card_full)
        ce = card_full.exog()
        for block in (out.y.reshape(-1, 1), out.X, out.Z):
            rel = np.abs(ce.T @ block).max() / max(np.abs(block).max(), 1.0)
            assert rel < 1e-6

    def test_reproduces_partial_regression(self, card_full):
        out = residualize(card_full)
        coef, *_ = np.linalg.lstsq(out.X, out.y, rcond=None)
        assert abs(coef[0] - 0.072634) < 1e-6

    def test_endogenous_coefficients_match_explicit_fit(self, card_full):
        explicit = fit_kclass(card_full, "liml")
        reduced_fit = fit_kclass(residualize(card_full), "liml")
        np.testing.assert_allclose(
            explicit.coef_endog, reduced_fit.coef_endog, atol=1e-8
        )

    def test_collinear_controls_detected(self):
        rng = np.random.default_rng(1)
        c = rng.standard_normal((20, 2))
        c = np.column_stack([c, c[:, 0]])
        ds = DataSet(
            y=rng.standard_normal(20), X=rng.standard_normal((20, 1)),
            Z=rng.standard_normal((20, 2)), C=c,
            names={"C": ["c0", "c1", "c2"]},
        )
        with pytest.raises(RankDeficiencyError, match="collinear"):
            residualize(ds)


class TestAbsorb:
    def test_means_restored(self, card_full):
        out = absorb_exogenous(card_full)
        assert out.intercept and out.m_c == 0
        np.testing.assert_allclose(out.y.mean(), card_full.y.mean(), atol=1e-10)
        np.testing.assert_allclose(out.X.mean(axis=0), card_full.X.mean(axis=0), atol=1e-10)

    def test_statistics_match_paper_workflow(self, card_absorbed):
        fit = fit_kclass(card_absorbed, "ols")
        named = fit.named_coef()
        assert abs(named["intercept"] - 4.768683) < 1e-6
        assert abs(named["ed76"] - 0.072634) < 1e-6
