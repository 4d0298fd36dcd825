import math

import numpy as np
import pytest

from conftest import toy_configs
from supermajority.divergence import GapParams, Thresholds
from supermajority.exponents import ConfigurationError, rho_pair, tree_depth
from supermajority.instance import MalformedFileError, generate
from supermajority.lsf_index import (
    CapacityWarning,
    SideSchedule,
    branching_sequence,
    build,
    decode,
    load_index,
    make_config,
    pair_keys,
    pilot_collisions,
    plan,
    query,
    query_batch,
    save_index,
    shared_counts,
    slack_sequence,
    snap_thresholds,
    wilson_lower,
)
from supermajority.oracle import brute_force_decode

EX = GapParams(0.1, 0.1, 0.05, 0.01)


@pytest.fixture(scope="module")
def inst():
    return generate(300, 1000, EX, 30, seed=5, strict=False)


@pytest.fixture(scope="module")
def config():
    return plan(EX, n=300, d=1000, reps=24, seed=1)


@pytest.fixture(scope="module")
def index(inst, config):
    return build(config, inst.dataset, threads=1)


class TestSchedules:
    def test_slack(self):
        c = slack_sequence(0.8, 4)
        assert c[-1] == 0.0
        assert c[0] == pytest.approx(0.4 * math.sqrt(6.5 * math.log(12)))
        assert all(a < b for a, b in zip(c[:-2], c[1:-1]))

    def test_slack_vanishes_at_corners(self):
        assert slack_sequence(1.0, 5) == (0.0,) * 5

    def test_branching(self):
        for delta in (1.0, 1.7, 2.0, 5.3, 40.0):
            for K in (1, 3, 4, 7):
                seq = branching_sequence(delta, K)
                assert all(v & (v - 1) == 0 for v in seq)
                for i in range(1, K + 1):
                    assert math.log2(math.prod(seq[:i])) == math.floor(i * math.log2(delta) + 1e-12)

    def test_need_and_reach(self):
        s = SideSchedule.build(0.75, 1, 4)
        assert s.need[-1] == 3
        assert all(r >= n for r, n in zip(s.reach, (0,) + s.need[:-1]))
        # a prefix at reach can still complete
        for l in range(4):
            assert all(s.reach[l] + (j - l) >= s.need[j] for j in range(l, 4))

    def test_complement(self):
        s = SideSchedule.build(0.25, -1, 4)
        assert s.complement and s.need[-1] == 3


class TestSnapping:
    def test_example(self):
        assert snap_thresholds(EX, Thresholds(0.9, 0.9), 4).as_tuple() == (1.0, 1.0)
        assert snap_thresholds(EX, Thresholds(0.74, 0.9), 4).as_tuple() == (0.75, 1.0)

    def test_on_grid_with_gap(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            K = int(rng.integers(2, 9))
            thr = snap_thresholds(EX, Thresholds(*rng.uniform(0.05, 0.95, 2)), K)
            assert round(thr.tq * K, 9) % 1 == 0 and round(thr.tu * K, 9) % 1 == 0
            e = rho_pair(EX, thr)
            assert math.isfinite(e.rho_q) and math.isfinite(e.rho_u)

    def test_avoids_density(self):
        p = GapParams(0.5, 0.5, 0.4, 0.25)
        thr = snap_thresholds(p, Thresholds(0.52, 0.49), 2)
        assert thr.tq != 0.5 and thr.tu != 0.5


class TestMakeConfig:
    def test_derived_fields(self):
        cfg = make_config(EX, Thresholds(0.75, 0.75), 4, 1009, seed=3, reps=2)
        assert cfg.k == 8 and cfg.K == 4
        assert math.prod(cfg.delta_seq) == 2 ** math.floor(4 * math.log2(cfg.delta) + 1e-12)
        assert cfg.directions == (1, 1)
        assert cfg.summary()["delta_seq"] == list(cfg.delta_seq)

    def test_off_grid(self):
        with pytest.raises(ConfigurationError):
            make_config(EX, Thresholds(0.7, 0.75), 4, 1009)

    def test_equal_density(self):
        with pytest.raises(ConfigurationError):
            make_config(GapParams(0.5, 0.5, 0.4, 0.25), Thresholds(0.5, 0.75), 4, 1009)

    def test_branching_exceeds_q(self):
        with pytest.raises(ConfigurationError):
            make_config(EX, Thresholds(1.0, 1.0), 2, 5)

    def test_families(self):
        cfg = make_config(EX, Thresholds(0.75, 0.75), 4, 1009, seed=3, reps=2)
        assert cfg.family(0, 1) == cfg.family(0, 1)
        assert cfg.family(0, 1) != cfg.family(0, 2)
        assert cfg.family(0, 1) != cfg.family(1, 1)
        with pytest.raises(ValueError):
            cfg.family(0, 3)


class TestDecode:
    def test_brute_force(self):
        for cfg, X in toy_configs(40, seed=1, max_space=5 * 10 ** 4):
            for side in ("query", "update"):
                sch = cfg.schedule(side)
                fam = cfg.family(1, 2)
                got = decode(cfg, 1, 2, X, side=side)
                want = brute_force_decode(cfg.q, fam.a, fam.b, cfg.delta_seq, sch.need, X,
                                          complement=sch.complement)
                assert sorted(p.elements for p in got) == [tuple(r) for r in want.tolist()]
                for p in got:
                    m = np.isin(p.elements, X)
                    assert p.score == (int((~m).sum()) if sch.complement else int(m.sum()))

    def test_zero_threshold_keeps_admitted(self):
        cfg = make_config(EX, Thresholds(1.0, 1.0), 3, 31, delta_seq=(4, 2, 3))
        fam = cfg.family(0, 1)
        paths = decode(cfg, 0, 1, [1, 2, 3], t=0.0)
        want = brute_force_decode(31, fam.a, fam.b, (4, 2, 3), (0, 0, 0), [1, 2, 3])
        assert len(paths) == len(want) == 24

    def test_full_threshold_members_only(self):
        cfg = make_config(EX, Thresholds(1.0, 1.0), 3, 31, delta_seq=(31, 31, 31))
        X = [0, 4, 7, 30]
        paths = decode(cfg, 0, 1, X, t=1.0)
        assert len(paths) == len(X) ** 3
        assert all(set(p.elements) <= set(X) for p in paths)

    def test_admission_order(self):
        cfg = make_config(EX, Thresholds(1.0, 1.0), 2, 31, delta_seq=(8, 8))
        fam = cfg.family(0, 1)
        paths = decode(cfg, 0, 1, range(31), t=0.0)
        first = [p.elements[0] for p in paths[::8]]
        assert [(fam.a[0] * x + fam.b[0]) % 31 for x in first] == list(range(8))

    def test_rejects_out_of_range(self):
        cfg = make_config(EX, Thresholds(1.0, 1.0), 2, 31, delta_seq=(2, 2))
        with pytest.raises(ValueError):
            decode(cfg, 0, 1, [40])

    def test_deterministic(self, config, inst):
        a = decode(config, 3, 1, inst.queries[0])
        b = decode(config, 3, 1, inst.queries[0])
        assert a == b


class TestPilot:
    def test_wilson(self):
        assert wilson_lower(0, 100) == 0.0
        lo = wilson_lower(10, 100)
        assert 0.05 < lo < 0.1
        assert wilson_lower(100, 1000) > lo
        assert wilson_lower(5, 0) == 0.0

    def test_shared_counts(self):
        u = np.uint64
        c = shared_counts([2, 1], np.array([1, 2, 3], dtype=u), np.array([0, 0, 0], dtype=u),
                          [1, 2], np.array([2, 3, 4], dtype=u), np.array([0, 0, 0], dtype=u))
        assert c.tolist() == [1, 1]

    def test_pilot_deterministic(self, config):
        a = pilot_collisions(config, 50)
        assert a == pilot_collisions(config, 50)
        assert 0 <= a[0] <= 50 and a[1] == 50

    def test_plan_defaults(self):
        cfg = plan(EX, n=1024, reps=3)
        assert cfg.d == math.ceil(20 * math.log(1024) / 0.01)
        assert cfg.k == tree_depth(1024, EX, cfg.requested) and cfg.reps == 3
        assert cfg.requested.tq == pytest.approx(0.9, abs=1e-6)

    def test_plan_pilot(self):
        cfg = plan(EX, n=1024, d=1000, seed=0, pilot_pairs=200)
        succ, trials = cfg.pilot
        assert cfg.reps == math.ceil(math.log(10) / wilson_lower(succ, trials))

    def test_plan_rejects(self):
        with pytest.raises(ConfigurationError):
            plan(GapParams(0.3, 0.3, 0.05, 0.01), n=100, reps=1)
        with pytest.raises(ConfigurationError):
            plan(EX, n=100, d=1000, reps=0)


class TestIndex:
    def test_entries(self, index, config, inst):
        assert index.n_points == inst.n
        assert len(index.tables) == config.reps
        for t in index.tables:
            assert np.all(np.diff(t.key_hi.astype(np.float64)) >= 0)

    def test_every_point_under_its_keys(self, index, config, inst):
        from supermajority.lsf_index import _cross, _stack, decode_batch
        from supermajority.instance import to_csr

        i = 17
        indptr, indices = to_csr([inst.dataset[i]])
        fam = np.zeros(1, dtype=np.int64)
        h = [decode_batch(config, indptr, indices, fam, _stack([config.family(2, s)], config.K),
                          "update") for s in (1, 2)]
        _, hi, lo = _cross(h[0][0], h[0][3], h[0][4], h[1][0], h[1][3], h[1][4])
        ids = index.tables[2].lookup(hi, lo)
        assert np.sum(ids == i) >= hi.size

    def test_recall(self, index, inst):
        reps = query_batch(index, inst.queries, mode="first")
        found = sum(r.matched is not None and r.overlap > 0.01 * index.config.q for r in reps)
        assert found >= 0.75 * len(inst.queries)
        assert all(r.verified <= r.candidates for r in reps)

    def test_best_mode_finds_partner(self, index, inst):
        reps = query_batch(index, inst.queries, mode="best")
        for (j, i), r in zip(inst.planted, reps):
            if r.matched is not None:
                assert r.overlap <= 50
                if r.overlap == 50:
                    assert r.matched == i

    def test_sampled_verification(self, index, inst):
        a = query(index, inst.queries[0], verify="sample", seed=3)
        b = query(index, inst.queries[0], verify="sample", seed=3)
        assert (a.matched, a.candidates) == (b.matched, b.candidates)

    def test_bad_mode(self, index):
        with pytest.raises(ValueError):
            query(index, [1, 2], mode="all")
        with pytest.raises(ValueError):
            query(index, [1, 2], verify="guess")

    def test_threads_do_not_change_result(self, config, inst, index):
        again = build(config, inst.dataset, threads=3)
        assert again.fingerprint() == index.fingerprint()

    def test_capacity_warning(self, config, inst):
        cfg = make_config(EX, Thresholds(1.0, 1.0), 2, config.q, reps=1, delta_seq=(64, 64))
        with pytest.warns(CapacityWarning):
            build(cfg, inst.dataset[:5], key_ceiling=1)

    def test_rejects_out_of_range(self, config):
        with pytest.raises(ValueError):
            build(config, [np.array([config.q])])

    def test_pair_keys_ordered(self):
        u = np.uint64
        a = pair_keys(np.array([1], u), np.array([2], u), np.array([3], u), np.array([4], u))
        b = pair_keys(np.array([3], u), np.array([4], u), np.array([1], u), np.array([2], u))
        assert (int(a[0][0]), int(a[1][0])) != (int(b[0][0]), int(b[1][0]))


class TestSerialization:
    def test_roundtrip(self, index, inst, tmp_path):
        p = tmp_path / "x.smj"
        save_index(index, p)
        back = load_index(p)
        assert back.fingerprint() == index.fingerprint()
        assert back.config.delta_seq == index.config.delta_seq
        assert back.config.pilot == index.config.pilot
        r1 = [r.matched for r in query_batch(index, inst.queries[:10])]
        r2 = [r.matched for r in query_batch(back, inst.queries[:10])]
        assert r1 == r2

    def test_layout_prefix(self, index, tmp_path):
        p = tmp_path / "x.smj"
        save_index(index, p)
        raw = p.read_bytes()
        assert raw[:4] == b"SMJ1" and raw[4:6] == b"\x01\x00"

    def test_corrupt(self, index, tmp_path):
        p = tmp_path / "x.smj"
        save_index(index, p)
        raw = p.read_bytes()
        for bad, what in ((b"NOPE" + raw[4:], "magic"), (raw[:100], "truncated"),
                          (raw + b"\0", "trailing")):
            p.write_bytes(bad)
            with pytest.raises(MalformedFileError, match=what):
                load_index(p)
