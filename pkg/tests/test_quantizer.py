import numpy as np
import pytest

from spfann import quantizer as pq
from spfann.errors import TrainingError


def _clustered(rng, n, dim, k=8, spread=4.0):
    centers = rng.normal(0.0, spread, size=(k, dim)).astype(np.float32)
    assign = rng.integers(0, k, size=n)
    return centers[assign] + rng.normal(0, 1, size=(n, dim)).astype(np.float32)


def _spearman(a, b):
    ra = np.argsort(np.argsort(a))
    rb = np.argsort(np.argsort(b))
    return np.corrcoef(ra, rb)[0, 1]


class TestExactDistance:
    def test_three_four_five(self):
        assert pq.exact_distance([0.0, 0.0], [3.0, 4.0]) == 25.0

    def test_identity(self):
        v = np.asarray([1.5, -2.0, 7.0], dtype=np.float32)
        assert pq.exact_distance(v, v) == 0.0

    def test_unit_offset(self):
        assert pq.exact_distance([1.0, 2.0, 3.0], [1.0, 2.0, 4.0]) == 1.0

    def test_shape_error(self):
        with pytest.raises(ValueError):
            pq.exact_distance([1.0, 2.0], [1.0, 2.0, 3.0])

    def test_symmetry_and_triangle(self):
        rng = np.random.default_rng(11)
        for _ in range(100):
            a, b, c = rng.normal(size=(3, 8)).astype(np.float32)
            dab = pq.exact_distance(a, b)
            assert dab == pq.exact_distance(b, a)
            assert dab >= 0.0
            # triangle inequality holds for the square root
            assert np.sqrt(dab) <= np.sqrt(pq.exact_distance(a, c)) + np.sqrt(
                pq.exact_distance(c, b)
            ) + 1e-5


class TestTraining:
    def test_k_equals_n_perfect_reconstruction(self):
        rng = np.random.default_rng(5)
        sample = rng.normal(size=(256, 8)).astype(np.float32)
        book = pq.train_codebook(sample, n_subspaces=1, seed=1)
        codes = pq.encode_many(book, sample)
        recon = pq.reconstruct(book, codes)
        assert np.allclose(recon, sample, atol=1e-5)

    def test_degenerate_identical_vectors(self):
        v = np.asarray([2.0, -1.0, 0.5, 3.0], dtype=np.float32)
        sample = np.tile(v, (1000, 1))
        book = pq.train_codebook(sample, n_subspaces=2, seed=3)
        codes = pq.encode_many(book, sample)
        assert (codes == codes[0]).all()
        rng = np.random.default_rng(4)
        query = rng.normal(size=4).astype(np.float32)
        table = pq.adc_table(book, query)
        approx = pq.adc_distance(table, codes[0])
        assert abs(approx - pq.exact_distance(query, v)) <= 1e-4

    def test_beats_zero_codebook_oracle(self):
        # Oracle: the trivial all-zeros codebook reconstructs every vector as
        # the origin, so its MSE equals the mean squared norm of the data.
        rng = np.random.default_rng(7)
        sample = rng.normal(size=(10_000, 64)).astype(np.float32)
        zero_mse = float((sample.astype(np.float64) ** 2).sum(axis=1).mean())
        book = pq.train_codebook(sample, n_subspaces=16, seed=2)
        recon = pq.reconstruct(book, pq.encode_many(book, sample))
        mse = float(((sample - recon).astype(np.float64) ** 2).sum(axis=1).mean())
        assert mse < zero_mse

    def test_deterministic(self):
        rng = np.random.default_rng(9)
        sample = rng.normal(size=(512, 16)).astype(np.float32)
        b1 = pq.train_codebook(sample, n_subspaces=4, seed=42)
        b2 = pq.train_codebook(sample, n_subspaces=4, seed=42)
        assert b1.centroids.tobytes() == b2.centroids.tobytes()

    def test_too_few_samples(self):
        with pytest.raises(TrainingError):
            pq.train_codebook(np.zeros((100, 8), dtype=np.float32), 2, 0)

    def test_inertia_non_increasing(self):
        rng = np.random.default_rng(13)
        sample = _clustered(rng, 2000, 8)
        book = pq.train_codebook(sample, n_subspaces=2, seed=5)
        for hist in book.inertia_history:
            diffs = np.diff(hist)
            assert (diffs <= 1e-9).all()


class TestEncode:
    def _hand_codebook(self):
        # 2 subspaces of 2 dims; centroid c sits at (c, c) in each subspace.
        grid = np.arange(256, dtype=np.float32)
        cents = np.stack([grid, grid], axis=1)
        return pq.PqCodebook(centroids=np.stack([cents, cents]))

    def test_exact_centroid_hit(self):
        book = self._hand_codebook()
        v = np.asarray([7.0, 7.0, 250.0, 250.0], dtype=np.float32)
        assert pq.encode(book, v).tolist() == [7, 250]

    def test_tie_prefers_lower_index(self):
        book = self._hand_codebook()
        # midway between centroids 3 and 4 in both subspaces
        v = np.asarray([3.5, 3.5, 3.5, 3.5], dtype=np.float32)
        assert pq.encode(book, v).tolist() == [3, 3]

    def test_shape_error(self):
        book = self._hand_codebook()
        with pytest.raises(ValueError):
            pq.encode(book, np.zeros(6, dtype=np.float32))

    def test_reconstruction_within_training_error(self):
        rng = np.random.default_rng(21)
        sample = _clustered(rng, 4000, 16)
        book = pq.train_codebook(sample, n_subspaces=4, seed=8)
        recon = pq.reconstruct(book, pq.encode_many(book, sample))
        per_vec = ((sample - recon) ** 2).sum(axis=1)
        # Training inertia bounds the mean reconstruction error per subspace.
        train_mse = sum(h[-1] for h in book.inertia_history)
        assert per_vec.mean() <= train_mse * 1.001 + 1e-6


class TestAdc:
    def test_query_on_centroid_zeroes_entry(self):
        rng = np.random.default_rng(31)
        sample = rng.normal(size=(600, 8)).astype(np.float32)
        book = pq.train_codebook(sample, n_subspaces=2, seed=3)
        q = np.concatenate([book.centroids[0][17], book.centroids[1][99]])
        table = pq.adc_table(book, q)
        assert table[0][17] == pytest.approx(0.0, abs=1e-8)
        assert table[1][99] == pytest.approx(0.0, abs=1e-8)

    def test_all_zero_table(self):
        table = np.zeros((4, 256), dtype=np.float32)
        assert pq.adc_distance(table, np.zeros(4, dtype=np.uint8)) == 0.0

    def test_additivity(self):
        table = np.zeros((2, 256), dtype=np.float32)
        table[0, 5] = 1.0
        table[1, 9] = 2.5
        assert pq.adc_distance(table, np.asarray([5, 9], dtype=np.uint8)) == 3.5

    def test_matches_reconstruction_distance(self):
        rng = np.random.default_rng(41)
        sample = _clustered(rng, 3000, 16)
        book = pq.train_codebook(sample, n_subspaces=4, seed=6)
        codes = pq.encode_many(book, sample[:50])
        recon = pq.reconstruct(book, codes)
        q = rng.normal(size=16).astype(np.float32)
        table = pq.adc_table(book, q)
        for i in range(50):
            expected = pq.exact_distance(q, recon[i])
            got = pq.adc_distance(table, codes[i])
            assert got == pytest.approx(expected, rel=1e-4, abs=1e-4)

    def test_error_bound_and_rank_correlation(self):
        rng = np.random.default_rng(51)
        data = _clustered(rng, 5000, 32)
        book = pq.train_codebook(data, n_subspaces=8, seed=9)
        codes = pq.encode_many(book, data)
        recon = pq.reconstruct(book, codes)
        idx = rng.choice(5000, size=1000, replace=False)
        q = _clustered(rng, 1, 32)[0]
        table = pq.adc_table(book, q)
        approx = pq.adc_distances(table, codes[idx])
        exact = np.asarray([pq.exact_distance(q, data[i]) for i in idx])
        # |adc - exact| <= e^2 + 2 e sqrt(exact), with e the per-vector
        # reconstruction norm (triangle bound on squared distances).
        err = np.sqrt(((data[idx] - recon[idx]) ** 2).sum(axis=1))
        bound = err**2 + 2 * err * np.sqrt(exact) + 1e-3
        assert (np.abs(approx - exact) <= bound).all()
        assert _spearman(approx, exact) > 0.9

    def test_navigation_quality_top_decile(self):
        rng = np.random.default_rng(61)
        data = _clustered(rng, 4000, 16)
        book = pq.train_codebook(data, n_subspaces=4, seed=12)
        codes = pq.encode_many(book, data)
        q = _clustered(rng, 1, 16)[0]
        exact = np.asarray([pq.exact_distance(q, v) for v in data])
        nearest = int(np.argmin(exact))
        table = pq.adc_table(book, q)
        sample_ids = rng.choice(4000, size=1000, replace=False)
        sample_ids[0] = nearest
        approx = pq.adc_distances(table, codes[sample_ids])
        rank = int((approx < approx[0]).sum())
        assert rank <= 100


class TestSerialization:
    def test_codebook_roundtrip(self, tmp_path):
        rng = np.random.default_rng(71)
        sample = rng.normal(size=(300, 8)).astype(np.float32)
        book = pq.train_codebook(sample, n_subspaces=2, seed=1)
        path = str(tmp_path / "book.bin")
        pq.save_codebook(book, path)
        loaded = pq.load_codebook(path)
        assert loaded.centroids.tobytes() == book.centroids.tobytes()

    def test_codes_roundtrip(self, tmp_path):
        rng = np.random.default_rng(72)
        codes = rng.integers(0, 256, size=(100, 4)).astype(np.uint8)
        path = str(tmp_path / "codes.bin")
        pq.save_codes(codes, path)
        assert (pq.load_codes(path) == codes).all()
