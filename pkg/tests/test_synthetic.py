"""Synthetic pair generator tests."""

import numpy as np

from signlight.synthetic import darkened_dataset, darkened_pair, smooth_image


class TestSmoothImage:
    def test_dims_and_range(self):
        rng = np.random.default_rng(140)
        img = smooth_image(rng, 16, 24)
        assert img.dims == (1, 3, 16, 24)
        assert float(img.data.min()) >= 0.05
        assert float(img.data.max()) <= 0.95

    def test_smoother_than_noise(self):
        # upsampled coarse noise has far less neighbour-to-neighbour jump
        rng = np.random.default_rng(141)
        img = smooth_image(rng, 32, 32).data
        noise = np.random.default_rng(141).uniform(0.05, 0.95, img.shape)
        jump = lambda a: float(np.abs(np.diff(a, axis=3)).mean())
        assert jump(img) < 0.5 * jump(noise)


class TestDarkenedPair:
    def test_low_is_darker_everywhere(self):
        rng = np.random.default_rng(142)
        pair = darkened_pair(rng, 16, 16)
        assert np.all(pair.low.data < pair.high.data)
        assert float(pair.low.data.min()) >= 0.0

    def test_dataset_is_reproducible(self):
        a = darkened_dataset(7, 3, 16, 16)
        b = darkened_dataset(7, 3, 16, 16)
        assert [p.pair_id for p in a] == ["pair_000", "pair_001", "pair_002"]
        for pa, pb in zip(a, b):
            np.testing.assert_array_equal(pa.low.data, pb.low.data)
            np.testing.assert_array_equal(pa.high.data, pb.high.data)

    def test_seeds_differ(self):
        a = darkened_dataset(1, 1, 16, 16)[0]
        b = darkened_dataset(2, 1, 16, 16)[0]
        assert not np.array_equal(a.high.data, b.high.data)

    def test_degradations_vary_between_pairs(self):
        pairs = darkened_dataset(3, 4, 16, 16)
        ratios = [float((p.low.data / p.high.data).mean()) for p in pairs]
        assert len({round(r, 6) for r in ratios}) == len(ratios)
