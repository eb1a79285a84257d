import numpy as np
import pytest
from pydantic import ValidationError as PydanticValidationError

from baseline import baseline_correct_dataset
from importance import (
    BandEntry,
    BandTable,
    VipVector,
    band_indices,
    bmi,
    component_ss,
    default_band_table,
    load_band_table,
    normalize_vip,
    save_band_table,
    vip_scores,
)
from pls import PlsConfig, PlsModel, pls_fit
from spectra_data import WavenumberGrid, canonical_grid
from spectra_errors import DegenerateError, PreconditionError, ShapeError, ValidationError


def make_model(W, Q, T):
    W = np.asarray(W, dtype=float)
    m, n = W.shape
    return PlsModel(
        W_L=W,
        P=W,
        Q=np.asarray(Q, dtype=float).reshape(1, n),
        B=np.zeros((m, 1)),
        x_mean=np.zeros(m),
        T_train=np.asarray(T, dtype=float),
        y_mean=0.0,
        config=PlsConfig(n_components=n),
        inner_iterations=(1,) * n,
        y_residual_norms=(1.0,) * (n + 1),
    )


class TestVipScores:
    def test_unit_scores_explain_one_each(self, rng):
        X = rng.normal(size=(20, 10))
        y = (rng.uniform(size=20) < 0.5).astype(float)
        y[:2] = [0.0, 1.0]
        model = pls_fit(X, y, PlsConfig(n_components=4))
        np.testing.assert_allclose(component_ss(model), 1.0, atol=1e-10)

    def test_squares_sum_to_feature_count(self, rng):
        X = rng.normal(size=(30, 50))
        y = (rng.uniform(size=30) < 0.5).astype(float)
        y[:2] = [0.0, 1.0]
        v = vip_scores(pls_fit(X, y, PlsConfig(n_components=6)))

        assert not v.normalized
        assert np.sum(v.values**2) == pytest.approx(50.0, rel=1e-10)

    def test_single_component_formula(self):
        w = np.array([3.0, -4.0, 0.0])
        t = np.array([[0.6], [0.8]])
        v = vip_scores(make_model(w[:, None], [1.0], t))
        np.testing.assert_allclose(v.values, np.sqrt(3.0) * np.abs(w) / 5.0, atol=1e-12)

    def test_weights_by_explained_sum_of_squares(self):
        W = np.array([[1.0, 0.0], [0.0, 1.0]])
        T = np.eye(2)
        v = vip_scores(make_model(W, [1.0, 0.0], T))
        np.testing.assert_allclose(v.values, [np.sqrt(2.0), 0.0], atol=1e-12)

    def test_zero_explained_sum_of_squares(self):
        with pytest.raises(DegenerateError):
            vip_scores(make_model(np.eye(2), [0.0, 0.0], np.eye(2)))


class TestNormalizeVip:
    def test_three_values(self):
        out = normalize_vip(VipVector(np.array([1.0, 2.0, 3.0]), normalized=False))
        assert out.normalized
        np.testing.assert_allclose(out.values, [0.0, 0.5, 1.0], atol=1e-15)

    def test_endpoints_are_exact(self, rng):
        raw = rng.uniform(0.1, 3.0, size=200)
        out = normalize_vip(VipVector(raw, normalized=False))
        assert out.values[np.argmin(raw)] == 0.0
        assert out.values[np.argmax(raw)] == 1.0
        assert np.all((out.values >= 0.0) & (out.values <= 1.0))

    def test_already_normalized(self):
        with pytest.raises(PreconditionError):
            normalize_vip(VipVector(np.array([0.0, 1.0]), normalized=True))

    def test_constant_vector(self):
        with pytest.raises(DegenerateError):
            normalize_vip(VipVector(np.full(5, 0.7), normalized=False))


class TestBandTable:
    def test_default_table(self):
        table = default_band_table()
        assert table.names == ["Lipids", "Amide I", "Amide II", "Amide III", "Nucleic acids", "Carbohydrates"]

    def test_reversed_interval(self):
        with pytest.raises(PydanticValidationError):
            BandEntry(name="x", intervals=((1700.0, 1600.0),))

    def test_duplicate_names(self):
        entry = BandEntry(name="x", intervals=((1600.0, 1700.0),))
        with pytest.raises(PydanticValidationError):
            BandTable(bands=(entry, entry))

    def test_save_and_load(self, tmp_path):
        path = save_band_table(default_band_table(), tmp_path / "bands.json")
        assert load_band_table(path) == default_band_table()

    def test_union_of_intervals_has_no_duplicates(self):
        grid = WavenumberGrid(np.array([1700.0, 1650.0, 1600.0, 1550.0]))
        entry = BandEntry(name="x", intervals=((1600.0, 1700.0), (1640.0, 1660.0)))
        assert band_indices(entry, grid).tolist() == [0, 1, 2]


class TestBmi:
    grid = canonical_grid()

    def test_constant_vip_gives_constant_bmi(self):
        v = VipVector(np.full(self.grid.count, 0.4), normalized=True)
        report = bmi(v, default_band_table(), self.grid)
        for value in report.per_biomolecule.values():
            assert value == pytest.approx(0.4, abs=1e-12)

    def test_band_covering_the_grid(self, rng):
        values = rng.uniform(size=self.grid.count)
        table = BandTable(bands=(BandEntry(name="all", intervals=((900.0, 1800.0),)),))
        report = bmi(VipVector(values, normalized=True), table, self.grid)
        assert report.per_biomolecule["all"] == pytest.approx(np.sqrt(np.mean(values**2)), rel=1e-12)

    def test_percent(self):
        v = VipVector(np.full(self.grid.count, 0.25), normalized=True)
        percent = bmi(v, default_band_table(), self.grid).as_percent()
        assert percent["Amide I"] == pytest.approx(25.0)

    def test_requires_normalized_vip(self):
        with pytest.raises(PreconditionError):
            bmi(VipVector(np.ones(self.grid.count), normalized=False), default_band_table(), self.grid)

    def test_length_mismatch(self):
        with pytest.raises(ShapeError):
            bmi(VipVector(np.ones(10), normalized=True), default_band_table(), self.grid)

    def test_band_without_grid_points(self):
        table = BandTable(bands=(BandEntry(name="far infrared", intervals=((400.0, 500.0),)),))
        with pytest.raises(ValidationError) as info:
            bmi(VipVector(np.ones(self.grid.count), normalized=True), table, self.grid)
        assert "far infrared" in str(info.value)

    @pytest.mark.slow
    def test_perturbed_biomolecules_outrank_lipids(self, default_cohort):
        ds, _ = default_cohort
        corrected = baseline_correct_dataset(ds)
        model = pls_fit(corrected.X, corrected.labels.astype(float), PlsConfig(n_components=24))

        report = bmi(normalize_vip(vip_scores(model)), default_band_table(), corrected.grid)

        values = report.per_biomolecule
        for name in ("Amide I", "Amide II", "Amide III", "Nucleic acids"):
            assert values[name] > values["Lipids"], name
