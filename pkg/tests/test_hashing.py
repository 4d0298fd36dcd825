import numpy as np
import pytest

from supermajority.hashing import (
    HashFamily,
    SortedMemberTable,
    hash_prefix,
    is_prime,
    mix64,
    mix64_np,
    modinv,
    next_prime,
    path_fingerprint,
    path_fingerprints_np,
    sample_members,
    sample_universe,
)


def trial_division_next_prime(m):
    def prime(x):
        if x < 2:
            return False
        f = 2
        while f * f <= x:
            if x % f == 0:
                return False
            f += 1
        return True

    while not prime(m):
        m += 1
    return m


def brute_filter(eta, a, delta, xs, q):
    return sorted(int(x) for x in xs if (eta + a * int(x)) % q < delta)


class TestPrimes:
    @pytest.mark.parametrize("m,want", [(100, 101), (2, 2), (3, 3), (4, 5), (10 ** 6, 1000003)])
    def test_examples(self, m, want):
        assert next_prime(m) == want

    def test_matches_trial_division(self):
        for m in range(2, 3000):
            assert next_prime(m) == trial_division_next_prime(m)

    def test_large(self):
        assert next_prime(2 ** 61 - 2) == 2 ** 61 - 1
        assert is_prime((1 << 64) - 59)
        assert not is_prime(3215031751)  # strong pseudoprime to bases 2, 3, 5, 7

    def test_overflow(self):
        with pytest.raises(OverflowError):
            next_prime((1 << 64) - 58)

    def test_rejects_small(self):
        with pytest.raises(ValueError):
            next_prime(1)

    def test_modinv(self):
        q = 1009
        for a in range(1, q):
            assert a * modinv(a, q) % q == 1
        with pytest.raises(ZeroDivisionError):
            modinv(q, q)


class TestHashFamily:
    def test_arithmetic(self):
        fam = HashFamily(q=101, a=(1, 1), b=(0, 0))
        assert hash_prefix(fam, 2, (2, 3)) == 5

    def test_reduction_to_matrix(self):
        fam = HashFamily.from_seed(7, 1009, 5)
        m = fam.coefficient_matrix()
        r = (3, 500, 17, 1008, 0)
        for i in range(1, 6):
            want = (sum(int(m[i - 1, j]) * r[j] for j in range(i)) + fam.b[i - 1]) % 1009
            assert hash_prefix(fam, i, r[:i]) == want

    def test_level_checks(self):
        fam = HashFamily.from_seed(0, 101, 3)
        with pytest.raises(ValueError):
            hash_prefix(fam, 0, ())
        with pytest.raises(ValueError):
            hash_prefix(fam, 2, (1,))
        with pytest.raises(ValueError):
            hash_prefix(fam, 4, (1, 2, 3, 4))

    def test_coefficient_ranges(self):
        fam = HashFamily.from_seed(3, 13, 200)
        assert all(1 <= a < 13 for a in fam.a)
        assert all(0 <= b < 13 for b in fam.b)

    def test_rejects_zero_coefficient(self):
        with pytest.raises(ValueError):
            HashFamily(q=7, a=(1, 7), b=(0, 0))

    def test_deterministic(self):
        assert HashFamily.from_seed(5, 1009, 8, (1, 2)) == HashFamily.from_seed(5, 1009, 8, (1, 2))
        assert HashFamily.from_seed(5, 1009, 8, (1, 2)) != HashFamily.from_seed(5, 1009, 8, (1, 3))
        assert HashFamily.from_seed(5, 1009, 8) != HashFamily.from_seed(6, 1009, 8)

    def test_collision_rate(self):
        q, k, trials = 101, 3, 10 ** 5
        rng = np.random.default_rng(11)
        hits = 0
        for _ in range(trials):
            a = rng.integers(1, q, k)
            b = rng.integers(0, q, k)
            fam = HashFamily(q=q, a=tuple(int(v) for v in a), b=tuple(int(v) for v in b))
            r = tuple(int(v) for v in rng.integers(0, q, k))
            s = tuple(int(v) for v in rng.integers(0, q, k))
            if r == s:
                s = (r[0] + 1) % q, *r[1:]
            hits += hash_prefix(fam, k, r) == hash_prefix(fam, k, s)
        assert hits / trials <= 1.5 / q

    def test_level_uniform(self):
        q = 31
        vals = np.array([hash_prefix(HashFamily.from_seed(s, q, 2), 2, (4, 9)) for s in range(6200)])
        counts = np.bincount(vals, minlength=q)
        # chi-square with 30 degrees of freedom, far tail
        chi = ((counts - 200) ** 2 / 200).sum()
        assert chi < 70


class TestSampleMembers:
    def test_extremes(self):
        xs = np.array([0, 5, 9, 40, 100])
        t = SortedMemberTable.build(xs, 17, 101)
        assert sorted(sample_members(3, 17, 101, t).tolist()) == xs.tolist()
        assert sample_members(3, 17, 0, t).size == 0

    def test_matches_brute_force(self):
        rng = np.random.default_rng(0)
        for _ in range(10 ** 4):
            q = int(rng.choice([2, 3, 7, 13, 101, 1009]))
            xs = np.unique(rng.integers(0, q, rng.integers(0, min(q, 30) + 1)))
            a = int(rng.integers(1, q)) if q > 1 else 1
            eta = int(rng.integers(0, q))
            delta = int(rng.integers(0, q + 1))
            t = SortedMemberTable.build(xs, a, q)
            got = sample_members(eta, a, delta, t)
            assert sorted(got.tolist()) == brute_filter(eta, a, delta, xs, q)
            vals = (eta + a * got) % q
            assert np.all(np.diff(vals) > 0)

    def test_wrap_boundaries(self):
        q, a = 101, 1
        xs = np.arange(q)
        t = SortedMemberTable.build(xs, a, q)
        # window [q - 1, q + 1) wraps after one residue
        got = sample_members(1, a, 2, t)
        assert got.tolist() == [100, 0]
        # window that ends exactly at q does not wrap
        got = sample_members(2, a, 2, t)
        assert got.tolist() == [99, 100]

    def test_agrees_with_universe(self):
        rng = np.random.default_rng(1)
        q = 257
        for _ in range(500):
            xs = np.unique(rng.integers(0, q, 40))
            a, eta, delta = int(rng.integers(1, q)), int(rng.integers(0, q)), int(rng.integers(0, q + 1))
            t = SortedMemberTable.build(xs, a, q)
            want = sorted(set(sample_universe(eta, a, delta, q).tolist()) & set(xs.tolist()))
            assert sorted(sample_members(eta, a, delta, t).tolist()) == want

    def test_wrong_coefficient(self):
        t = SortedMemberTable.build([1, 2], 3, 101)
        with pytest.raises(ValueError):
            sample_members(0, 4, 10, t)


class TestSampleUniverse:
    def test_single(self):
        assert sample_universe(0, 37, 1, 101).tolist() == [0]

    def test_full(self):
        assert sorted(sample_universe(5, 37, 101, 101).tolist()) == list(range(101))

    def test_matches_brute_force(self):
        rng = np.random.default_rng(2)
        q = 101
        for _ in range(2000):
            a, eta, delta = int(rng.integers(1, q)), int(rng.integers(0, q)), int(rng.integers(0, q + 1))
            got = sample_universe(eta, a, delta, q)
            assert sorted(got.tolist()) == brute_filter(eta, a, delta, range(q), q)
            assert ((eta + a * got) % q).tolist() == list(range(delta))

    def test_large_modulus(self):
        q = next_prime(2 ** 40)
        got = sample_universe(12345, 987654321, 3, q)
        assert [(12345 + 987654321 * int(x)) % q for x in got] == [0, 1, 2]


class TestFingerprints:
    def test_splitmix_reference(self):
        # first output of splitmix64 seeded with 0
        assert mix64(0x9E3779B97F4A7C15) == 0xE220A8397B1DCDAF

    def test_vectorized(self):
        rng = np.random.default_rng(3)
        z = rng.integers(0, 2 ** 63, 100, dtype=np.int64).astype(np.uint64) * np.uint64(2)
        assert [int(v) for v in mix64_np(z)] == [mix64(int(v)) for v in z]
        paths = rng.integers(0, 10 ** 6, (50, 6))
        h, l = path_fingerprints_np(paths)
        for row, a, b in zip(paths, h, l):
            assert path_fingerprint(row) == (int(a), int(b))

    def test_order_sensitive(self):
        assert path_fingerprint((1, 2, 3)) != path_fingerprint((3, 2, 1))
        assert path_fingerprint((1, 2)) != path_fingerprint((1, 2, 0))
