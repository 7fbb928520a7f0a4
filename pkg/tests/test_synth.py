import numpy as np
import pytest

from wormbody.errors import InfeasibleParamsError
from wormbody.synth import (
    GenParams,
    generate_samples,
    identity_traits,
    make_sample,
    read_manifest,
    read_sample,
    render_worm,
    sample_centerline,
    split_by_identity,
    write_dataset,
)

PARAMS = GenParams.for_canvas(128)


class TestSampleCenterline:
    def test_same_seed_is_bit_identical(self):
        a = sample_centerline(99, PARAMS, 120.0)
        b = sample_centerline(99, PARAMS, 120.0)
        np.testing.assert_array_equal(a.points, b.points)
        np.testing.assert_array_equal(a.cum_arclen, b.cum_arclen)

    def test_length_tracks_age_map(self):
        young = sample_centerline(5, PARAMS, 0.0)
        old = sample_centerline(5, PARAMS, 300.0)
        expected = PARAMS.length(300.0) / PARAMS.length(0.0)
        assert old.total_length / young.total_length == pytest.approx(expected, rel=0.01)

    def test_length_matches_params_within_one_percent(self):
        for seed in range(20):
            cl = sample_centerline(seed, PARAMS, 200.0)
            assert cl.total_length == pytest.approx(PARAMS.length(200.0), rel=0.01)

    def test_turn_per_step_bounded(self):
        # resampled tangent headings may turn at most the walk's per-step bound
        for seed in range(200):
            cl = sample_centerline(seed, PARAMS, 250.0)
            headings = np.arctan2(cl.tangents[:, 0], cl.tangents[:, 1])
            turns = np.abs((np.diff(headings) + np.pi) % (2 * np.pi) - np.pi)
            assert turns.max() <= PARAMS.max_turn_per_step + 1e-6, seed

    def test_tube_stays_inside_canvas(self):
        for seed in range(50):
            cl = sample_centerline(seed, PARAMS, 380.0)
            hw = PARAMS.halfwidth(380.0)
            assert cl.points.min() >= hw - 1e-9
            assert cl.points.max() <= PARAMS.canvas - 1 - hw + 1e-9

    def test_infeasible_params_raise(self):
        bad = GenParams.for_canvas(128, length_range=(2000.0, 3000.0), max_retries=10)
        with pytest.raises(InfeasibleParamsError):
            sample_centerline(0, bad, 200.0)


class TestRenderWorm:
    def test_age_zero_has_no_speckles_and_no_haze(self):
        params = GenParams.for_canvas(128, noise_sigma=0.0, haze_jitter=0.0)
        cl = sample_centerline(3, params, 0.0)
        sample = render_worm(cl, 0.0, params, 4)
        bg = sample.image[sample.mask == 0]
        np.testing.assert_allclose(bg, params.background_level, atol=1e-9)

    def test_intensities_clamped_to_unit_interval(self):
        for seed in range(10):
            sample = make_sample(21, seed, 9, 10, PARAMS)
            assert sample.image.min() >= 0.0
            assert sample.image.max() <= 1.0

    def test_mask_area_increases_with_age(self):
        mean_area = {}
        for age in (50.0, 300.0):
            areas = []
            for seed in range(50):
                cl = sample_centerline(seed, PARAMS, age)
                areas.append(render_worm(cl, age, PARAMS, seed + 1000).mask.sum())
            mean_area[age] = np.mean(areas)
        assert mean_area[300.0] > mean_area[50.0]

    def test_uv_valid_equals_mask(self):
        sample = make_sample(8, 2, 4, 10, PARAMS)
        np.testing.assert_array_equal(sample.uv.valid, sample.mask)

    def test_determinism_bit_exact(self):
        a = make_sample(13, 5, 2, 10, PARAMS)
        b = make_sample(13, 5, 2, 10, PARAMS)
        np.testing.assert_array_equal(a.image, b.image)
        np.testing.assert_array_equal(a.mask, b.mask)
        np.testing.assert_array_equal(a.uv.u, b.uv.u)
        assert a.age_hours == b.age_hours
        assert a.seed == b.seed

    def test_ages_within_lifespan(self):
        for w in range(6):
            for t in range(10):
                s = make_sample(17, w, t, 10, PARAMS)
                assert 0.0 <= s.age_hours <= PARAMS.age_max

    def test_identity_traits_persist_across_timepoints(self):
        s1, o1 = identity_traits(42, 7, PARAMS)
        s2, o2 = identity_traits(42, 7, PARAMS)
        assert (s1, o1) == (s2, o2)
        s3, _ = identity_traits(42, 8, PARAMS)
        assert s3 != s1


class TestSplitByIdentity:
    def test_exact_division(self):
        samples = generate_samples(10, 2, 31, PARAMS)
        train, val = split_by_identity(samples, 0.8, 0)
        assert len({s.worm_id for s in train}) == 8
        assert len({s.worm_id for s in val}) == 2

    def test_no_identity_straddles_split(self):
        samples = generate_samples(7, 3, 31, PARAMS)
        train, val = split_by_identity(samples, 0.6, 5)
        assert {s.worm_id for s in train} & {s.worm_id for s in val} == set()
        assert len(train) + len(val) == len(samples)

    def test_same_seed_same_split(self):
        samples = generate_samples(6, 2, 31, PARAMS)
        a = split_by_identity(samples, 0.5, 9)
        b = split_by_identity(samples, 0.5, 9)
        assert [s.seed for s in a[0]] == [s.seed for s in b[0]]

    def test_too_few_identities_rejected(self):
        samples = generate_samples(1, 4, 31, PARAMS)
        with pytest.raises(ValueError):
            split_by_identity(samples, 0.5, 0)

    def test_bad_fraction_rejected(self):
        samples = generate_samples(4, 1, 31, PARAMS)
        with pytest.raises(ValueError):
            split_by_identity(samples, 1.0, 0)


class TestDatasetOnDisk:
    def test_round_trip(self, tmp_path):
        root = tmp_path / "ds"
        manifest = write_dataset(str(root), 4, 2, 77, PARAMS, 0.75)
        assert len(manifest["train_ids"].split(",")) == 3
        back = read_manifest(str(root))
        assert back["train_ids"] == [int(x) for x in manifest["train_ids"].split(",")]
        sample = make_sample(77, 0, 1, 2, PARAMS)
        loaded = read_sample(str(root), 0, 1)
        assert loaded.age_hours == pytest.approx(sample.age_hours)
        assert loaded.worm_id == 0
        np.testing.assert_array_equal(loaded.mask, sample.mask)
        np.testing.assert_allclose(loaded.image, sample.image, atol=1.0 / 65535)
        np.testing.assert_allclose(loaded.uv.u, sample.uv.u, atol=1e-3)

    def test_rerun_is_byte_identical(self, tmp_path):
        r1, r2 = tmp_path / "a", tmp_path / "b"
        write_dataset(str(r1), 3, 2, 5, PARAMS, 0.67)
        write_dataset(str(r2), 3, 2, 5, PARAMS, 0.67)
        files1 = sorted(p.relative_to(r1) for p in r1.rglob("*") if p.is_file())
        files2 = sorted(p.relative_to(r2) for p in r2.rglob("*") if p.is_file())
        assert files1 == files2
        for rel in files1:
            assert (r1 / rel).read_bytes() == (r2 / rel).read_bytes(), rel

    def test_gen_params_validation(self):
        with pytest.raises(ValueError):
            GenParams(length_range=(0.0, 10.0))
        with pytest.raises(ValueError):
            GenParams(speckle_rate_max=-1.0)
