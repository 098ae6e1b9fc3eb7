import math
import warnings
from dataclasses import replace

import numpy as np
import pytest

from hyperdisc import data, harness, netcore, schedules
from hyperdisc.harness import RunConfig, RunLog
from hyperdisc.objectives import QuadraticBowl
from hyperdisc.schedules import LrPolicy, MomentumPolicy


@pytest.fixture(scope="module")
def moons():
    return data.gen_synthetic("moons", 500, 0.2, seed=1)


def _cfg(**kw):
    base = dict(arch=netcore.ArchSpec((2, 16, 2)), lr_policy=LrPolicy.one_cycle(0.05, 0.5, 1, 2),
                momentum_policy=MomentumPolicy.one_cycle_inverse(0.95, 0.85, 1), weight_decay=1e-4,
                tbs=32, epochs=3, eval_interval_iters=5)
    base.update(kw)
    return RunConfig(**base)


def test_same_seed_bit_identical(moons):
    cfg = harness.fit_config(_cfg(), moons)
    a = harness.train(cfg, moons)
    b = harness.train(cfg, moons)
    assert a.records == b.records and not a.diverged


def test_single_gd_step_by_hand():
    x = np.array([[1.0], [-2.0], [0.5]])
    y = np.array([0, 1, 1])
    train_set = data.Dataset(x, y, 2)
    arch = netcore.ArchSpec((1, 2))
    cfg = RunConfig(arch, LrPolicy.constant(0.3, 1), MomentumPolicy.constant(0.0), tbs=3, epochs=1)
    log = harness.train(cfg, (train_set, train_set))
    theta0 = netcore.init_network(arch, cfg.init_scheme, cfg.seed).params
    w, b = theta0[:2], theta0[2:]
    z = x * w + b
    p = np.exp(z - z.max(1, keepdims=True))
    p /= p.sum(1, keepdims=True)
    d = p.copy()
    d[np.arange(3), y] -= 1
    d /= 3
    grad = np.concatenate([(x * d).sum(0), d.sum(0)])
    assert np.allclose(log.state.params, theta0 - 0.3 * grad, rtol=0, atol=1e-15)


def test_huge_lr_on_quadratic_diverges_and_truncates():
    obj = QuadraticBowl(1.0, n=1000, seed=0)
    cfg = RunConfig(netcore.ArchSpec((1, 2)), LrPolicy.constant(2.5, 200), MomentumPolicy.constant(0.0),
                    tbs=100, epochs=20)
    log = harness.train(cfg, obj)
    assert log.diverged and len(log.records) < 200
    assert all(math.isfinite(v) for r in log.records for v in r)


def test_schedule_fidelity_and_epoch_accounting(moons):
    cfg = harness.fit_config(_cfg(), moons)
    log = harness.train(cfg, moons)
    ipe = math.ceil(400 / 32)
    assert len(log.records) == 3 * ipe
    for r in log.records:
        assert abs(r.lr - schedules.lr_at(cfg.lr_policy, r.iter)) <= 1e-12
        assert abs(r.momentum - schedules.momentum_at(cfg.momentum_policy, r.iter)) <= 1e-12
        assert r.epoch == r.iter // ipe
    assert log.records[-1].modeled_time == pytest.approx(3 * ipe * 32)


def test_misfit_policy_length_rejected(moons):
    with pytest.raises(harness.ConfigError, match="lr policy spans"):
        harness.train(_cfg(lr_policy=LrPolicy.constant(0.1, 7)), moons)


def test_csv_round_trip(moons, tmp_path):
    log = harness.train(harness.fit_config(_cfg(epochs=1), moons), moons)
    p = tmp_path / "log.csv"
    log.to_csv(p)
    assert p.read_text().splitlines()[0] == ",".join(harness.CSV_COLUMNS)
    assert RunLog.from_csv(p).records == log.records


def test_snapshot_resume_is_bit_identical(moons, tmp_path):
    cfg = harness.fit_config(_cfg(), moons)
    full = harness.train(cfg, moons)
    n = 17
    head = harness.train(cfg, moons, stop_after=n - 1)
    assert len(head.records) == n
    p = tmp_path / "s.hdsn"
    harness.save_snapshot(head.state, cfg, p)
    snap = harness.load_snapshot(p)
    tail = harness.train(cfg, moons, resume=snap)
    assert head.records + tail.records == full.records
    assert np.array_equal(tail.state.params, full.state.params)


def test_resume_with_other_weight_decay_changes_course(moons):
    cfg = harness.fit_config(_cfg(), moons)
    full = harness.train(cfg, moons)
    head = harness.train(cfg, moons, stop_after=9)
    snap = harness.save_snapshot(head.state, cfg)
    with pytest.warns(UserWarning, match="resuming snapshot"):
        other = harness.train(replace(cfg, weight_decay=3e-3), moons, resume=snap)
    assert other.records[0].iter == 10
    assert [r.iter for r in other.records] == [r.iter for r in full.records[10:]]
    assert [r.train_loss for r in other.records] != [r.train_loss for r in full.records[10:]]


def test_snapshot_version_and_magic(moons, tmp_path):
    cfg = harness.fit_config(_cfg(epochs=1), moons)
    head = harness.train(cfg, moons, stop_after=3)
    p = tmp_path / "s.hdsn"
    harness.save_snapshot(head.state, cfg, p)
    raw = bytearray(p.read_bytes())
    assert raw[:4] == b"HDSN"
    raw[4] = 99
    p.write_bytes(bytes(raw))
    with pytest.raises(harness.SnapshotError, match="version"):
        harness.load_snapshot(p)
    p.write_bytes(b"XXXX" + bytes(raw[4:]))
    with pytest.raises(harness.SnapshotError):
        harness.load_snapshot(p)


def test_four_run_batch_sizes():
    cfgs = harness.four_run_configs(_cfg(tbs=128), 4000)
    sizes = [c.tbs for c in cfgs]
    assert all(128 <= s <= 140 for s in sizes)
    assert sum(s % 2 == 0 for s in sizes) == 2 and len(set(sizes)) == 4
    assert len({c.init_scheme for c in cfgs}) == 2 and len({c.seed for c in cfgs}) == 4
    for c in cfgs:
        assert c.violations(4000) == []


def test_average_of_identical_runs(moons):
    log = harness.train(harness.fit_config(_cfg(epochs=1), moons), moons)
    avg = harness.average_logs([log] * 4)
    assert avg.records == log.records


def test_average_aligns_unequal_lengths(moons):
    a = harness.train(harness.fit_config(_cfg(tbs=128, epochs=2), moons), moons)
    b = harness.train(harness.fit_config(_cfg(tbs=130, epochs=2), moons), moons)
    assert len(a.records) == 8 and len(b.records) == 8
    c = harness.train(harness.fit_config(_cfg(tbs=100, epochs=2), moons), moons)
    avg = harness.average_logs([a, c])
    assert len(avg.records) == min(len(a.records), len(c.records))
    # both runs end at progress 1, so the last averaged point is the mean of the last points
    assert avg.records[-1].val_acc == pytest.approx((a.records[-1].val_acc + c.records[-1].val_acc) / 2)
    with pytest.raises(ValueError):
        harness.average_logs([a, harness.train(harness.fit_config(_cfg(tbs=32, epochs=2), moons), moons)])


def test_config_dict_round_trip_and_hash():
    cfg = _cfg()
    again = RunConfig.from_dict(cfg.to_dict())
    assert again == cfg and again.hash() == cfg.hash()
    assert replace(cfg, seed=1).hash() != cfg.hash()


def test_run_many_matches_serial(moons):
    cfgs = [harness.fit_config(_cfg(epochs=1, seed=s), moons) for s in range(2)]
    serial = harness.run_many(cfgs, moons, jobs=1)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        parallel = harness.run_many(cfgs, moons, jobs=2)
    assert [l.records for l in serial] == [l.records for l in parallel]
