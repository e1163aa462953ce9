import numpy as np
import pytest

import pacbandits as pb


class TestRngStream:
    def test_same_stream_reproduces(self):
        a = pb.RngStream(42, 3).generator().random(8)
        b = pb.RngStream(42, 3).generator().random(8)
        np.testing.assert_array_equal(a, b)

    def test_different_streams_differ(self):
        a = pb.RngStream(42, 0).generator().random(8)
        b = pb.RngStream(42, 1).generator().random(8)
        assert not np.array_equal(a, b)

    def test_different_seeds_differ(self):
        a = pb.RngStream(1, 0).generator().random(8)
        b = pb.RngStream(2, 0).generator().random(8)
        assert not np.array_equal(a, b)


class TestSampleStep:
    def test_context_distribution_matches_column(self, easy_nonsep):
        gen = np.random.default_rng(0)
        draws = np.array([pb.sample_step(easy_nonsep, 0, gen)[0]
                          for _ in range(20_000)])
        freq = np.bincount(draws, minlength=2) / draws.size
        np.testing.assert_allclose(freq, easy_nonsep.a[:, 0], atol=0.02)

    def test_noise_is_unit_variance_around_cell_mean(self, easy_nonsep):
        gen = np.random.default_rng(1)
        resid = []
        for _ in range(10_000):
            z, y = pb.sample_step(easy_nonsep, 1, gen)
            resid.append(y - easy_nonsep.mu[z, 1])
        resid = np.array(resid)
        assert abs(resid.mean()) < 0.05
        assert abs(resid.std() - 1.0) < 0.05

    def test_separator_reward_depends_on_context_only(self, anchor_instance):
        gen = np.random.default_rng(2)
        resid = []
        for _ in range(5_000):
            z, y = pb.sample_step(anchor_instance, 2, gen)
            resid.append(y - anchor_instance.mu[z])
        resid = np.array(resid)
        assert abs(resid.mean()) < 0.06

    def test_accepts_rng_stream(self, easy_nonsep):
        z1, y1 = pb.sample_step(easy_nonsep, 0, pb.RngStream(9, 0))
        z2, y2 = pb.sample_step(easy_nonsep, 0, pb.RngStream(9, 0))
        assert (z1, y1) == (z2, y2)

    def test_bad_arm_rejected(self, easy_nonsep):
        with pytest.raises(ValueError):
            pb.sample_step(easy_nonsep, 5, np.random.default_rng(0))


class TestGenConstraints:
    def test_defaults(self):
        c = pb.GenConstraints(n=4, k=2)
        assert c.mu_range == (0.0, 10.0)
        assert c.floor == pytest.approx(1.0 / 8.0)
        assert len(c.bands) == 3

    def test_default_gap_bands_frozen_n3(self):
        assert pb.default_gap_bands(3) == [(1 / 6, 1 / 2), (1 / 6, 2 / 3)]

    def test_validation(self):
        with pytest.raises(ValueError):
            pb.GenConstraints(n=1, k=2)
        with pytest.raises(ValueError):
            pb.GenConstraints(n=2, k=0)
        with pytest.raises(ValueError):
            pb.GenConstraints(n=2, k=2, mu_range=(3.0, 3.0))
        with pytest.raises(ValueError):
            pb.GenConstraints(n=2, k=2, a_min_floor=0.9)
        with pytest.raises(ValueError):
            pb.GenConstraints(n=3, k=2, gap_bands=[(0.1, 0.2)])


class TestGenRandomInstance:
    @pytest.mark.parametrize("kind", [pb.NON_SEPARATOR, pb.SEPARATOR])
    def test_valid_and_deterministic(self, kind):
        c = pb.GenConstraints(n=4, k=3)
        one = pb.gen_random_instance(c, kind, pb.RngStream(7, 0))
        two = pb.gen_random_instance(c, kind, pb.RngStream(7, 0))
        assert one.kind == kind
        np.testing.assert_array_equal(one.a, two.a)
        np.testing.assert_array_equal(one.mu, two.mu)
        np.testing.assert_allclose(one.a.sum(axis=0), 1.0, atol=1e-12)
        assert one.a.min() >= c.floor - 1e-12

    @pytest.mark.parametrize("kind", [pb.NON_SEPARATOR, pb.SEPARATOR])
    def test_gaps_fall_in_bands(self, kind):
        c = pb.GenConstraints(n=5, k=3)
        for stream in range(8):
            inst = pb.gen_random_instance(c, kind, pb.RngStream(11, stream))
            g = pb.gaps(inst)
            best = pb.best_arm(inst)
            nonzero = np.sort(np.delete(g, best))
            bands = sorted(c.bands, key=lambda b: b[1])
            for value, (lo, hi) in zip(nonzero, bands):
                assert lo - 1e-9 <= value <= hi + 1e-9, (value, lo, hi)

    def test_custom_bands_respected(self):
        c = pb.GenConstraints(n=3, k=2, gap_bands=[(1.0, 1.5), (2.0, 2.5)],
                              mu_range=(0.0, 10.0))
        inst = pb.gen_random_instance(c, pb.NON_SEPARATOR, pb.RngStream(3, 0))
        g = np.sort(pb.gaps(inst))[1:]
        assert 1.0 <= g[0] <= 1.5
        assert 2.0 <= g[1] <= 2.5

    def test_mu_range_respected(self):
        c = pb.GenConstraints(n=3, k=2, mu_range=(-1.0, 1.0),
                              gap_bands=[(0.1, 0.3), (0.1, 0.5)])
        for stream in range(4):
            inst = pb.gen_random_instance(c, pb.NON_SEPARATOR, pb.RngStream(5, stream))
            assert inst.mu.min() >= -1.0 - 1e-12
            assert inst.mu.max() <= 1.0 + 1e-12

    def test_unknown_kind_rejected(self):
        with pytest.raises(ValueError):
            pb.gen_random_instance(pb.GenConstraints(n=2, k=2), "other",
                                   pb.RngStream(0, 0))
