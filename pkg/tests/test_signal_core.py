import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ahe_slsh.errors import ConfigError, DataError
from ahe_slsh.signal_core import (
    NEGATIVE,
    POSITIVE,
    DatasetSplit,
    LabeledExample,
    StayRecord,
    VitalWindow,
    balance_and_split,
    channel_exclusion,
    denormalize_values,
    detect_ahe,
    extract_examples,
    impute,
    load_csv,
    load_dataset,
    normalize,
    preprocess,
    save_dataset,
    write_csv,
)


def brute_force_ahe(series, mask):
    """Union of every qualifying 6-sample run, returned as maximal intervals."""
    n = len(series)
    covered = [False] * n
    for j in range(n - 5):
        if all(mask[i] and series[i] <= 60.0 for i in range(j, j + 6)):
            for i in range(j, j + 6):
                covered[i] = True
    out, i = [], 0
    while i < n:
        if covered[i]:
            j = i
            while j < n and covered[j]:
                j += 1
            out.append((i, j))
            i = j
        else:
            i += 1
    return out


def make_stay(map_values, n_other=1, stay_id="s"):
    map_values = np.asarray(map_values, dtype=float)
    T = len(map_values)
    other = np.tile(np.arange(T, dtype=float)[:, None], (1, n_other))
    samples = np.column_stack([map_values, other])
    return StayRecord(stay_id, ("MAP", *[f"X{i}" for i in range(n_other)]), samples,
                      np.ones(samples.shape, dtype=bool))


class TestDetectAhe:
    def test_six_samples_below(self):
        assert detect_ahe([55.0] * 6) == [(0, 6)]

    def test_boundary_inclusive(self):
        assert detect_ahe([60.0] * 6) == [(0, 6)]

    def test_interrupted_run(self):
        assert detect_ahe([55, 55, 55, 70, 55, 55, 55, 55, 55]) == []
        series = [55, 55, 55, 70, 55, 55, 55, 55, 55]
        assert brute_force_ahe(series, [True] * 9) == []

    def test_short_series_is_empty(self):
        assert detect_ahe([50.0] * 5) == []

    def test_missing_sample_breaks_run(self):
        series = [50.0] * 12
        mask = [True] * 12
        mask[5] = False
        assert detect_ahe(series, mask) == [(6, 12)]

    @settings(max_examples=1000, deadline=None)
    @given(st.lists(st.tuples(st.sampled_from([40.0, 58.0, 60.0, 60.5, 75.0]), st.booleans()),
                    min_size=0, max_size=40))
    def test_matches_brute_force(self, cells):
        series = [v for v, _ in cells]
        # bias towards present samples so long runs actually occur
        mask = [m or v < 60.5 for v, m in cells]
        assert detect_ahe(series, mask) == brute_force_ahe(series, mask)


class TestExtractExamples:
    def test_single_trailing_episode(self):
        stay = make_stay([80.0] * 78 + [50.0] * 6)
        ex = extract_examples(stay, 30)
        pos = [e for e in ex if e.label == POSITIVE]
        assert len(pos) == 1
        assert pos[0].window.window_start == 0
        assert pos[0].window.values.shape == (72, 2)

    def test_window_does_not_fit(self):
        stay = make_stay([80.0] * 71 + [50.0] * 6)
        assert [e for e in extract_examples(stay, 30) if e.label == POSITIVE] == []

    def test_two_episodes_match_enumeration(self):
        lead = 6
        series = [80.0] * 200
        for s in (90, 180):
            series[s:s + 8] = [50.0] * 8
        stay = make_stay(series)
        got = sorted(e.window.window_start for e in extract_examples(stay, 30) if e.label == POSITIVE)
        # enumerate every placement whose window ends `lead` before an AHE onset
        onsets = [i for i in range(len(series)) if series[i] <= 60
                  and (i == 0 or series[i - 1] > 60)]
        want = sorted(st_ for st_ in range(len(series) - 72 + 1)
                      if st_ + 72 + lead in onsets)
        assert got == want == [12, 102]

    def test_negative_blocks(self):
        stay = make_stay([80.0] * 96)
        ex = extract_examples(stay, 30)
        assert all(e.label == NEGATIVE for e in ex)
        # blocks start at 72 + 6 = 78 and then every 6 samples while they fit
        assert [e.outcome_start for e in ex] == [78, 84, 90]
        for e in ex:
            assert e.window.window_start + 72 + 6 == e.outcome_start

    def test_negatives_skip_low_blocks(self):
        series = [80.0] * 96
        series[86] = 59.0
        ex = extract_examples(make_stay(series), 30)
        assert [e.outcome_start for e in ex] == [78, 90]

    def test_window_end_invariant(self):
        rng = np.random.default_rng(3)
        series = 75 + 10 * rng.standard_normal(400)
        series[150:160] = 50
        series[300:307] = 45
        stay = make_stay(series)
        for lead in (30, 60, 120):
            for e in extract_examples(stay, lead):
                assert e.window.window_start + 72 + lead // 5 == e.outcome_start
                np.testing.assert_array_equal(
                    e.window.values, stay.samples[e.window.window_start:e.window.window_start + 72])

    def test_missing_map_channel(self):
        stay = StayRecord("s", ("HR",), np.ones((100, 1)), np.ones((100, 1), bool))
        with pytest.raises(ConfigError, match="MAP"):
            extract_examples(stay, 30)

    def test_lead_not_multiple_of_five(self):
        with pytest.raises(ConfigError):
            extract_examples(make_stay([80.0] * 100), 32)


def window(column, mask):
    values = np.array([[v if m else np.nan] for v, m in zip(column, mask)])
    return VitalWindow(values, np.array(mask)[:, None])


class TestImpute:
    def test_midpoint(self):
        out = impute(window([1, 0, 3], [True, False, True]), [0.0])
        np.testing.assert_array_equal(out.values[:, 0], [1, 2, 3])
        assert out.mask.all()

    def test_all_missing_uses_population_mean(self):
        out = impute(window([0] * 5, [False] * 5), [80.0])
        np.testing.assert_array_equal(out.values[:, 0], [80.0] * 5)

    def test_three_fill_rules(self):
        col = [0, 0, 5, 0, 9, 0]
        mask = [False, False, True, False, True, False]
        out = impute(window(col, mask), [0.0])
        np.testing.assert_array_equal(out.values[:, 0], [5, 5, 5, 7, 9, 9])

    def test_nonfinite_mean_rejected(self):
        with pytest.raises(ConfigError):
            impute(window([0, 0], [False, False]), [np.nan])

    @settings(max_examples=200, deadline=None)
    @given(st.lists(st.tuples(st.floats(-100, 100), st.booleans()), min_size=1, max_size=30),
           st.floats(-50, 50))
    def test_idempotent_and_preserves_present(self, cells, mean):
        w = window([v for v, _ in cells], [m for _, m in cells])
        once = impute(w, [mean])
        twice = impute(once, [mean])
        np.testing.assert_array_equal(once.values, twice.values)
        present = w.mask[:, 0]
        np.testing.assert_array_equal(once.values[present, 0], w.values[present, 0])
        assert np.isfinite(once.values).all()


class TestChannelExclusion:
    def _stay(self, missing_counts, T=100):
        C = len(missing_counts)
        mask = np.ones((T, C), dtype=bool)
        for c, k in enumerate(missing_counts):
            mask[:k, c] = False
        return StayRecord("s", tuple(f"c{i}" for i in range(C)), np.zeros((T, C)), mask)

    def test_drop_and_keep(self):
        assert channel_exclusion([self._stay([90, 0])]) == ["c1"]

    def test_exactly_threshold_is_retained(self):
        # 85 of 100 missing is not "more than" 85%
        assert channel_exclusion([self._stay([85, 86])]) == ["c0"]

    def test_global_fraction_across_stays(self):
        stays = [self._stay([100, 0]), self._stay([60, 0])]
        # (100 + 60) / 200 = 80% -> retained
        assert channel_exclusion(stays) == ["c0", "c1"]

    def test_all_dropped_is_error(self):
        with pytest.raises(DataError):
            channel_exclusion([self._stay([95])])


def labeled(values, label=POSITIVE):
    values = np.asarray(values, dtype=float)
    return LabeledExample(VitalWindow(values, np.ones(values.shape, bool)), label, 30)


class TestNormalize:
    def test_train_statistics(self):
        train = [labeled([[90.0]]), labeled([[110.0]])]
        split = normalize(DatasetSplit(train, [], [labeled([[110.0]])]))
        mean, std = split.normalization_stats
        assert mean[0] == 100.0 and std[0] == 10.0
        assert split.test[0].window.values[0, 0] == 1.0

    def test_constant_channel_centered(self):
        split = normalize(DatasetSplit([labeled([[5.0], [5.0]])], [], [labeled([[5.0]])]))
        assert split.train[0].window.values.tolist() == [[0.0], [0.0]]
        assert split.test[0].window.values.tolist() == [[0.0]]

    def test_test_split_uses_train_stats(self):
        rng = np.random.default_rng(0)
        train = [labeled(rng.normal(10, 2, size=(6, 2))) for _ in range(5)]
        test = [labeled(rng.normal(-3, 7, size=(6, 2))) for _ in range(5)]
        split = normalize(DatasetSplit(train, [], test))
        tr = np.concatenate([e.window.values for e in train])
        te = np.concatenate([e.window.values for e in test])
        own = (te - te.mean(0)) / te.std(0)
        with_train = (te - tr.mean(0)) / tr.std(0)
        got = np.concatenate([e.window.values for e in split.test])
        np.testing.assert_allclose(got, with_train, rtol=1e-12)
        assert not np.allclose(got, own)

    def test_denormalize_roundtrip(self):
        rng = np.random.default_rng(1)
        train = [labeled(rng.normal(50, 9, size=(8, 3))) for _ in range(4)]
        split = normalize(DatasetSplit(train, [], []))
        for orig, norm in zip(train, split.train):
            back = denormalize_values(norm.window.values, split.normalization_stats)
            np.testing.assert_allclose(back, orig.window.values, rtol=1e-9)


def examples(n_pos, n_neg):
    out = [labeled([[float(i)]], POSITIVE) for i in range(n_pos)]
    out += [labeled([[float(1000 + i)]], NEGATIVE) for i in range(n_neg)]
    return out


class TestBalanceAndSplit:
    def test_down_sampling(self):
        split = balance_and_split(examples(100, 300), seed=4)
        allx = split.train + split.validation + split.test
        assert len(allx) == 200
        assert sum(e.label == POSITIVE for e in allx) == 100

    def test_sizes(self):
        split = balance_and_split(examples(100, 100), (81, 9, 10), seed=0)
        assert (len(split.train), len(split.validation), len(split.test)) == (162, 18, 20)

    def test_deterministic(self):
        a = balance_and_split(examples(50, 80), seed=11)
        b = balance_and_split(examples(50, 80), seed=11)
        for pa, pb in zip(a.parts().values(), b.parts().values()):
            assert [e.window.values[0, 0] for e in pa] == [e.window.values[0, 0] for e in pb]

    def test_missing_class(self):
        with pytest.raises(DataError):
            balance_and_split(examples(10, 0))

    @settings(max_examples=60, deadline=None)
    @given(st.integers(1, 120), st.integers(1, 120), st.integers(0, 10_000))
    def test_disjoint_and_balanced(self, n_pos, n_neg, seed):
        split = balance_and_split(examples(n_pos, n_neg), seed=seed)
        seen = [id(e) for part in split.parts().values() for e in part]
        assert len(seen) == len(set(seen))
        n = 2 * min(n_pos, n_neg)
        assert len(split.validation) == 2 * math.floor(n / 2 * 9 / 100)
        for part in split.parts().values():
            pos = sum(e.label == POSITIVE for e in part)
            assert abs(pos - (len(part) - pos)) <= 1


class TestCsv:
    def test_three_rows(self, tmp_path):
        p = tmp_path / "a.csv"
        p.write_text("stay_id,sample_index,MAP,HR\na,0,70,80\na,1,71,81\na,2,72,82\n")
        (stay,) = load_csv(p)
        assert stay.length == 3 and stay.channels == ("MAP", "HR")

    def test_empty_field_is_missing(self, tmp_path):
        p = tmp_path / "a.csv"
        p.write_text("stay_id,sample_index,MAP,HR\na,0,,80\na,1,NaN,81\n")
        (stay,) = load_csv(p)
        assert stay.mask[:, 0].tolist() == [False, False]
        assert stay.mask[:, 1].tolist() == [True, True]

    def test_interleaved_stays(self, tmp_path):
        p = tmp_path / "a.csv"
        p.write_text("stay_id,sample_index,MAP\n"
                     "a,0,70\nb,0,60\na,1,71\nb,1,61\nb,2,62\na,2,72\nb,3,63\n")
        stays = {s.stay_id: s for s in load_csv(p)}
        assert stays["a"].length == 3 and stays["b"].length == 4
        assert stays["b"].samples[:, 0].tolist() == [60, 61, 62, 63]

    @pytest.mark.parametrize("body, match", [
        ("a,0,70\na,0,71\n", ":3: duplicate"),
        ("a,0,70,1\n", ":2: expected 3 fields"),
        ("a,x,70\n", ":2: sample_index"),
        ("a,0,abc\n", ":2: MAP"),
    ])
    def test_parse_errors(self, tmp_path, body, match):
        p = tmp_path / "a.csv"
        p.write_text("stay_id,sample_index,MAP\n" + body)
        with pytest.raises(DataError, match=match):
            load_csv(p)

    def test_unknown_channel(self, tmp_path):
        p = tmp_path / "a.csv"
        p.write_text("stay_id,sample_index,MAP,FOO\na,0,1,2\n")
        with pytest.raises(DataError, match="unknown channel"):
            load_csv(p, channels=["MAP"])

    def test_write_roundtrip(self, tmp_path):
        rng = np.random.default_rng(0)
        samples = rng.normal(size=(10, 2))
        mask = rng.random((10, 2)) > 0.3
        stay = StayRecord("z", ("MAP", "HR"), np.where(mask, samples, np.nan), mask)
        write_csv([stay], tmp_path / "o.csv")
        (back,) = load_csv(tmp_path / "o.csv")
        np.testing.assert_array_equal(back.mask, mask)
        np.testing.assert_array_equal(back.samples[mask], samples[mask])


def test_dataset_roundtrip(tmp_path):
    rng = np.random.default_rng(5)
    stays = []
    for s in range(12):
        series = 75 + 5 * rng.standard_normal(180)
        series[120:128] = 50
        stays.append(make_stay(series, n_other=2, stay_id=f"s{s}"))
    split = preprocess(stays, 30, seed=2)
    save_dataset(split, tmp_path / "ds")
    raw = (tmp_path / "ds" / "train.vsw").read_bytes()
    assert raw[:4] == b"VSW1"
    back = load_dataset(tmp_path / "ds")
    assert back.channels == split.channels
    for a, b in zip(split.parts().values(), back.parts().values()):
        assert [e.label for e in a] == [e.label for e in b]
        for ea, eb in zip(a, b):
            np.testing.assert_array_equal(ea.window.values, eb.window.values)
            assert ea.window.window_start == eb.window.window_start
    np.testing.assert_array_equal(back.normalization_stats[0], split.normalization_stats[0])


def test_dataset_bad_magic(tmp_path):
    rng = np.random.default_rng(5)
    series = 75 + 5 * rng.standard_normal(180)
    series[120:128] = 50
    split = preprocess([make_stay(series, stay_id=f"s{i}") for i in range(3)], 30, seed=0)
    save_dataset(split, tmp_path / "ds")
    p = tmp_path / "ds" / "test.vsw"
    p.write_bytes(b"XXXX" + p.read_bytes()[4:])
    with pytest.raises(DataError, match="magic"):
        load_dataset(tmp_path / "ds")
