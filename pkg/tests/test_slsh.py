import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ahe_slsh.errors import ConfigError, DataError
from ahe_slsh.slsh import (
    BIT_SAMPLING,
    COSINE,
    SlshParams,
    bucket_sizes,
    build,
    candidates,
    distances,
    load_index,
    make_family,
    query,
    save_index,
    signature,
)

SMALL = SlshParams(L_out=6, m_out=8, L_in=4, m_in=4, alpha=0.1)


def clustered(n, dim=8, centers=3, spread=0.3, seed=0, weights=None):
    rng = np.random.default_rng(seed)
    C = rng.normal(scale=3.0, size=(centers, dim))
    which = rng.choice(centers, size=n, p=weights)
    return C[which] + spread * rng.normal(size=(n, dim))


class TestFamilies:
    def test_cosine_unit_vectors(self):
        fam = make_family(COSINE, 8, 100, seed=3)
        assert fam.directions.shape == (100, 8)
        np.testing.assert_allclose(np.linalg.norm(fam.directions, axis=1), 1.0, atol=1e-12)

    def test_bit_sampling_within_ranges(self):
        ranges = np.array([[0.0, 1.0], [-5.0, -2.0], [3.0, 3.0], [10.0, 20.0]])
        fam = make_family(BIT_SAMPLING, 4, 500, ranges, seed=1)
        lo, hi = ranges[fam.coords, 0], ranges[fam.coords, 1]
        assert np.all((fam.thresholds >= lo) & (fam.thresholds <= hi))
        # the degenerate coordinate is never drawn
        assert 2 not in set(fam.coords.tolist())
        assert set(fam.coords.tolist()) == {0, 1, 3}

    def test_all_degenerate(self):
        with pytest.raises(DataError):
            make_family(BIT_SAMPLING, 2, 3, np.array([[1.0, 1.0], [0.0, 0.0]]))

    def test_bit_sampling_needs_ranges(self):
        with pytest.raises(ConfigError):
            make_family(BIT_SAMPLING, 2, 3)

    def test_seed_determinism(self):
        a = make_family(COSINE, 5, 10, seed=7)
        b = make_family(COSINE, 5, 10, seed=7)
        c = make_family(COSINE, 5, 10, seed=8)
        np.testing.assert_array_equal(a.directions, b.directions)
        assert not np.array_equal(a.directions, c.directions)


class TestSignature:
    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.floats(-100, 100), min_size=6, max_size=6), st.floats(1e-3, 1e3))
    def test_cosine_scale_invariance(self, v, scale):
        fam = make_family(COSINE, 6, 40, seed=2)
        v = np.array(v)
        # skip vectors lying (numerically) on a hyperplane
        if np.min(np.abs(fam.directions @ v)) < 1e-9:
            return
        assert signature(fam, range(0, 40), v) == signature(fam, range(0, 40), scale * v)
        assert signature(fam, range(5, 17), v) == signature(fam, range(5, 17), scale * v)

    def test_negation_flips_every_bit(self):
        fam = make_family(COSINE, 6, 24, seed=4)
        v = np.random.default_rng(0).normal(size=6)
        a, b = fam.bits(v[None])[0], fam.bits(-v[None])[0]
        assert np.all(a != b)

    def test_bit_sampling_rule(self):
        ranges = np.array([[0.0, 1.0]] * 3)
        fam = make_family(BIT_SAMPLING, 3, 12, ranges, seed=0)
        v = np.array([0.2, 0.5, 0.9])
        want = [v[c] > t for c, t in zip(fam.coords, fam.thresholds)]
        assert fam.bits(v[None])[0].tolist() == want
        assert signature(fam, range(12), v) == np.packbits(want).tobytes()

    def test_dim_mismatch(self):
        with pytest.raises(ConfigError):
            signature(make_family(COSINE, 3, 4), range(4), np.ones(4))


def oracle_outer_buckets(X, params, seed, t):
    """Independent re-hash of outer table t: group rows by their sign pattern."""
    rng = np.random.default_rng([seed, 0, t])
    D = rng.standard_normal((params.m_out, X.shape[1]))
    D /= np.linalg.norm(D, axis=1, keepdims=True)
    groups = {}
    for i, x in enumerate(X):
        key = tuple(int(np.dot(d, x) >= 0) for d in D)
        groups.setdefault(key, []).append(i)
    return sorted(groups.values())


class TestBuild:
    def test_small_n_threshold(self):
        X = np.vstack([np.ones((2, 3)), np.random.default_rng(0).normal(size=(8, 3)) * 10])
        index = build(X, SlshParams(L_out=3, m_out=64), seed=0)
        for t in range(3):
            for size, strat in bucket_sizes(index, t):
                assert strat == (size >= 2)

    def test_identical_vectors(self):
        X = np.tile([1.0, -2.0, 0.5], (20, 1))
        index = build(X, SlshParams(L_out=4, m_out=16, L_in=3, m_in=5), seed=1)
        for table in index.tables:
            (bucket,) = table.values()
            assert len(bucket.members) == 20 and bucket.stratified
            for _, inner in bucket.inner:
                assert [len(m) for m in inner.values()] == [20]

    def test_clustered_matches_independent_rehash(self):
        X = clustered(300, weights=[0.8, 0.1, 0.1], seed=2)
        params = SlshParams(L_out=5, m_out=4, L_in=2, m_in=3, alpha=0.1)
        index = build(X, params, seed=11)
        dominant_stratified = 0
        for t in range(params.L_out):
            want = oracle_outer_buckets(X, params, 11, t)
            got = sorted(sorted(b.members) for b in index.tables[t].values())
            assert got == want
            for b in index.tables[t].values():
                assert b.stratified == (len(b.members) > 30)
                dominant_stratified += b.stratified
        assert dominant_stratified >= params.L_out

    def test_every_id_once_per_table(self):
        X = np.random.default_rng(3).normal(size=(50, 4))
        index = build(X, SMALL, seed=0)
        for table in index.tables:
            members = sorted(p for b in table.values() for p in b.members)
            assert members == list(range(50))

    def test_mapping_ids(self):
        index = build({10: [0.0, 1.0], 4: [1.0, 0.0]}, SMALL)
        assert query(index, [1.0, 0.0]).ids == [4]

    @pytest.mark.parametrize("bad", [
        dict(L_out=0), dict(alpha=1.0), dict(alpha=0.0), dict(outer_kind=COSINE, inner_kind=COSINE),
        dict(metric="hamming"), dict(k=0),
    ])
    def test_param_validation(self, bad):
        with pytest.raises(ConfigError):
            SlshParams(**bad)

    def test_inconsistent_dims(self):
        with pytest.raises(ConfigError):
            build({0: [1.0, 2.0], 1: [1.0]})


class TestQuery:
    def test_self_retrieval(self):
        X = np.random.default_rng(4).normal(size=(80, 6))
        index = build(X, SMALL, seed=5)
        for i, x in enumerate(X):
            assert i in candidates(index, x)
            res = query(index, x)
            assert res.ids == [i] and res.distances == [0.0] and not res.fallback

    def test_adversarial_empty(self):
        v = np.random.default_rng(5).normal(size=8)
        index = build(v[None], SlshParams(L_out=10, m_out=12), seed=0)
        # negating v flips every projection sign, so no outer bucket matches
        q = -v
        for fam in index.outer_families:
            assert np.all(fam.bits(q[None])[0] != fam.bits(v[None])[0])
        assert candidates(index, q) == set()
        res = query(index, q)
        assert res.fallback and res.ids == [0] and res.candidate_count == 0

    def test_tie_break_smaller_id(self):
        v = [0.3, -1.2, 2.0]
        index = build({9: v, 4: v, 6: [5.0, 5.0, 5.0]}, SMALL)
        res = query(index, v, k=2)
        assert res.ids == [4, 9] and res.distances == [0.0, 0.0]

    def test_matches_brute_force_within_candidates(self):
        rng = np.random.default_rng(6)
        X = rng.normal(size=(500, 10))
        index = build(X, SMALL, seed=2)
        for q in rng.normal(size=(100, 10)):
            cand = sorted(candidates(index, q))
            res = query(index, q)
            if not cand:
                assert res.fallback
                cand = list(range(500))
            d = [float(np.sqrt(np.sum((X[i] - q) ** 2))) for i in cand]
            best = min(range(len(cand)), key=lambda j: (d[j], cand[j]))
            assert res.ids == [cand[best]]
            assert res.distances[0] == pytest.approx(d[best], rel=1e-14)

    def test_k_covers_all_candidates(self):
        rng = np.random.default_rng(7)
        X = rng.normal(size=(60, 4))
        index = build(X, SMALL, seed=1)
        q = rng.normal(size=4)
        cand = candidates(index, q)
        res = query(index, q, k=len(cand) + 5)
        assert sorted(res.ids) == sorted(cand)
        assert res.distances == sorted(res.distances)

    def test_distance_metrics(self):
        X = np.array([[1.0, 0.0], [0.0, 3.0], [0.0, 0.0]])
        q = np.array([2.0, 2.0])
        np.testing.assert_allclose(distances(X, q, "euclidean"), [np.sqrt(5), np.sqrt(5), np.sqrt(8)])
        np.testing.assert_allclose(distances(X, q, "l1"), [3.0, 3.0, 4.0])
        # zero vectors sit at cosine distance 1 from everything
        np.testing.assert_allclose(distances(X, q, "cosine"), [1 - 1 / np.sqrt(2), 1 - 1 / np.sqrt(2), 1.0])

    def test_monotone_in_l_out(self):
        rng = np.random.default_rng(8)
        X = clustered(400, dim=6, seed=8)
        small = build(X, SlshParams(L_out=3, m_out=10, L_in=3, m_in=4), seed=4)
        large = build(X, SlshParams(L_out=9, m_out=10, L_in=3, m_in=4), seed=4)
        for q in rng.normal(scale=3, size=(60, 6)):
            assert candidates(small, q) <= candidates(large, q)

    def test_query_dim_mismatch(self):
        with pytest.raises(ConfigError):
            query(build(np.ones((3, 2)), SMALL), np.ones(3))


class TestPersistence:
    def test_roundtrip_identical_queries(self, tmp_path):
        rng = np.random.default_rng(9)
        X = clustered(300, dim=5, weights=[0.6, 0.3, 0.1], seed=9)
        index = build(X, SMALL, seed=3)
        save_index(index, tmp_path / "a.slh")
        back = load_index(tmp_path / "a.slh")
        for q in rng.normal(scale=3, size=(50, 5)):
            assert query(back, q, k=3) == query(index, q, k=3)
        save_index(back, tmp_path / "b.slh")
        assert (tmp_path / "a.slh").read_bytes() == (tmp_path / "b.slh").read_bytes()

    def test_swapped_kinds_roundtrip(self, tmp_path):
        X = np.random.default_rng(1).normal(size=(40, 3))
        p = SlshParams(L_out=3, m_out=6, L_in=2, m_in=3, outer_kind=BIT_SAMPLING, inner_kind=COSINE)
        index = build(X, p, seed=0)
        save_index(index, tmp_path / "i.slh")
        back = load_index(tmp_path / "i.slh")
        for x in X[:10]:
            assert query(back, x) == query(index, x)

    def test_bad_magic_and_truncation(self, tmp_path):
        p = tmp_path / "i.slh"
        save_index(build(np.ones((3, 2)), SMALL), p)
        data = p.read_bytes()
        p.write_bytes(b"XXXX" + data[4:])
        with pytest.raises(DataError, match="magic"):
            load_index(p)
        p.write_bytes(data[:-3])
        with pytest.raises(DataError, match="truncated"):
            load_index(p)
