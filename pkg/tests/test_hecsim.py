import numpy as np
import pytest

from hecad import hecsim
from hecad.hecsim import Deployment, LayerProfile, SimClock
from stubs import TableDetector, make_windows


@pytest.mark.parametrize("kind, expected", [
    ("univariate", (12.4, 257.4, 504.5)),
    ("multivariate", (591.0, 667.3, 732.3)),
])
def test_default_profile_delays(kind, expected):
    got = [p.mean_e2e_ms for p in hecsim.default_profiles(kind)]
    np.testing.assert_allclose(got, expected, atol=1e-9)


def test_profile_validation():
    with pytest.raises(ValueError):
        LayerProfile("iot", 1.0, net_rtt_ms=5.0)
    with pytest.raises(ValueError):
        LayerProfile("edge", -1.0)
    with pytest.raises(ValueError):
        hecsim.default_profiles("video")
    with pytest.raises(ValueError):
        hecsim.tier_index("fog")
    with pytest.raises(ValueError):
        hecsim.tier_index(3)
    assert hecsim.tier_index("cloud") == 2 == hecsim.tier_index(2)


def test_jitter_bounds_and_determinism():
    p = LayerProfile("edge", 10.0, 250.0, jitter=0.1)
    a = [p.exec_time(np.random.default_rng(3)) for _ in range(3)]
    assert len(set(a)) == 1
    draws = [p.exec_time(r) for r in [np.random.default_rng(0)] * 200]
    assert 9.0 <= min(draws) and max(draws) <= 11.0
    assert p.exec_time(None) == 10.0


def test_clock():
    c = SimClock()
    assert c.advance(2.5) == 2.5
    with pytest.raises(ValueError):
        c.advance(-1)


def _deployment(windows, table=None):
    table = table or {w.origin: (w.label, True) for w in windows}
    return Deployment(hecsim.default_profiles("univariate"), [TableDetector(table) for _ in range(3)])


def test_simulate_e2e_advances_clock():
    ws = make_windows([False, True])
    dep = _deployment(ws)
    clock = SimClock()
    rec = hecsim.simulate_e2e(dep, "edge", ws[1], clock)
    assert rec.t_e2e_ms == pytest.approx(257.4) and clock.now_ms == pytest.approx(257.4)
    assert rec.prediction and rec.correct and rec.attempts == ("edge",)


def test_replay_mean_delay_iot_cloud():
    ws = make_windows([False, False])
    dep = _deployment(ws)
    sel = {("s", 0): "iot", ("s", 1): "cloud"}
    recs, rep = hecsim.replay(dep, ws, lambda w: sel[w.origin])
    assert rep.mean_delay_ms == pytest.approx(258.45, abs=1e-9)
    assert rep.tier_counts == {"iot": 1, "edge": 0, "cloud": 1}
    assert rep.accuracy == 1.0


def test_replay_reward():
    ws = make_windows([False])
    _, rep = hecsim.replay(_deployment(ws), ws, lambda w: "edge", cost_alpha=0.0005)
    c = 0.0005 * 257.4 / (1 + 0.0005 * 257.4)
    assert rep.mean_reward == pytest.approx(1 - c, abs=1e-12)


def test_deployment_memoizes():
    ws = make_windows([False, True, False])
    dep = _deployment(ws)
    dep.results(0, ws)
    dep.results(0, ws[:2])
    assert dep.detectors[0].calls == 1


def test_deployment_needs_three_tiers():
    with pytest.raises(ValueError):
        Deployment(hecsim.default_profiles("univariate")[:2], [None, None])


def test_empty_replay():
    with pytest.raises(ValueError):
        hecsim.replay(_deployment([]), [], lambda w: 0)


def test_profiles_and_records_io(tmp_path):
    profs = hecsim.default_profiles("multivariate")
    hecsim.save_profiles(tmp_path / "p.json", profs, {"data_type": "multivariate"})
    back, extra = hecsim.load_profiles(tmp_path / "p.json")
    assert back == profs and extra == {"data_type": "multivariate"}
    ws = make_windows([True])
    recs, _ = hecsim.replay(_deployment(ws), ws, lambda w: 1)
    hecsim.write_records_csv(tmp_path / "r.csv", recs)
    lines = (tmp_path / "r.csv").read_text().splitlines()
    assert lines[0] == ",".join(hecsim.RECORD_COLUMNS) and lines[1].startswith("s:0,edge,1,1,257.4")
