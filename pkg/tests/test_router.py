import json
from concurrent.futures import ThreadPoolExecutor
from itertools import product

import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import risk_coverage_by_enumeration
from reliroute.calibration import CalibratedPrediction
from reliroute.errors import ConfigurationError, ContractViolation
from reliroute.router import (
    PADS_THRESHOLDS,
    ThresholdConfig,
    fired,
    fit_thresholds,
    nearest_rank,
    risk_coverage_curve,
    route,
    route_batch,
    summarize_actions,
)
from reliroute.symptom_space import ReliabilitySignals


def pads_config(**overrides):
    kw = dict(PADS_THRESHOLDS, tau_c=1.0, tau_w=2.0)
    kw.update(overrides)
    return ThresholdConfig(**kw).freeze()


def pred(width=1.0):
    return CalibratedPrediction(kind="regression", point=0.0, width=width, interval=(0.0, width))


def sig(q=0.99, c=1.0, o=0.1, u=0.1):
    return ReliabilitySignals(q, u, o, c)


def test_pads_constants_fixture():
    assert PADS_THRESHOLDS == {"tau_q": 0.9816, "tau_u_abstain": 0.2182, "tau_u_refer": 0.2427,
                               "tau_ood": 0.5706}


def test_reacquire_on_quality():
    d = route(sig(q=0.95), pred(), pads_config())
    assert (d.action, d.trigger, d.trigger_value, d.threshold_value) == ("REACQUIRE", "quality", 0.95, 0.9816)


def test_refer_on_ood():
    d = route(sig(o=0.60), pred(), pads_config())
    assert (d.action, d.trigger) == ("REFER", "ood")


def test_abstain_on_uncertainty():
    d = route(sig(u=0.30), pred(), pads_config())
    assert (d.action, d.trigger, d.threshold_value) == ("ABSTAIN", "uncertainty", 0.2182)


def test_predict_fall_through():
    d = route(sig(), pred(width=2.0), pads_config())
    assert (d.action, d.trigger, d.trigger_value) == ("PREDICT", "none", None)


def test_abstain_on_width():
    d = route(sig(), pred(width=2.5), pads_config())
    assert (d.action, d.trigger) == ("ABSTAIN", "width")


def test_completeness_after_quality():
    d = route(sig(q=0.5, c=0.5), pred(), pads_config())
    assert d.trigger == "quality"
    d = route(sig(c=0.5), pred(), pads_config())
    assert d.trigger == "completeness"


def test_refer_on_uncertainty_toggle():
    cfg = pads_config(refer_on_uncertainty=True)
    assert route(sig(u=0.25), pred(), cfg).action == "REFER"
    assert route(sig(u=0.25), pred(), pads_config()).action == "ABSTAIN"
    off = pads_config(refer_on_ood=False)
    assert route(sig(o=0.9), pred(), off).action == "PREDICT"


def test_unfrozen_config_rejected():
    cfg = ThresholdConfig(**PADS_THRESHOLDS, tau_c=1.0, tau_w=1.0)
    with pytest.raises(ContractViolation):
        route(sig(), pred(), cfg)


def test_priority_soundness_grid():
    cfg = pads_config(tau_c=0.5)
    levels = {"q": [0.5, 0.9816, 0.99], "c": [0.25, 0.5, 1.0], "o": [0.1, 0.5706, 0.9],
              "u": [0.1, 0.2182, 0.9], "w": [1.0, 2.0, 3.0]}
    for q, c, o, u, w in product(*levels.values()):
        d = route(sig(q, c, o, u), pred(w), cfg)
        if q < cfg.tau_q or c < cfg.tau_c:
            assert d.action == "REACQUIRE"
        assert fired(d)


@given(st.floats(0, 1), st.floats(0, 1), st.floats(0, 1), st.floats(0, 1), st.floats(0, 5), st.floats(0, 1))
def test_monotone_safety(q, c, o, u, w, du):
    cfg = pads_config(tau_c=0.5)
    before = route(sig(q, c, o, u), pred(w), cfg)
    after = route(sig(q, c, o, u + du), pred(w), cfg)
    if before.action != "PREDICT":
        assert after.action != "PREDICT"


def test_routing_determinism_across_threads():
    cfg = pads_config()
    items = [(f"s{i}", sig(q=0.97 + i % 5 * 0.01, o=i % 7 / 7, u=i % 11 / 11), pred(1 + i % 3), ())
             for i in range(300)]
    serial = route_batch(items, cfg, threads=1)
    threaded = route_batch(items, cfg, threads=8)
    assert serial == threaded
    with ThreadPoolExecutor(4) as pool:
        again = list(pool.map(lambda it: route(it[1], it[2], cfg, it[0]), items))
    assert again == serial


def test_config_digest_stable_and_sensitive():
    a, b = pads_config(), pads_config()
    assert a.digest == b.digest and a.digest.startswith("sha256:")
    assert pads_config(tau_w=2.5).digest != a.digest
    assert json.loads(a.canonical_json())["tau_q"] == 0.9816
    assert ThresholdConfig.from_json(a.to_json()) == a


def test_nearest_rank_example():
    assert nearest_rank([0.0, 0.25, 0.5, 0.75, 1.0], 20) == 0.25
    assert nearest_rank([1.0, 0.75, 0.5, 0.25, 0.0], 20) == 0.25


def test_fit_thresholds_constant_uncertainty():
    val = [(ReliabilitySignals(0.99, 0.3, 0.2, 1.0), pred(1.0)) for _ in range(7)]
    cfg = fit_thresholds(val)
    assert cfg.tau_u_abstain == cfg.tau_u_refer == 0.3
    assert cfg.frozen


def test_fit_thresholds_quantiles_and_width():
    val = [(ReliabilitySignals(q / 10, u / 10, o / 10, 1.0), pred(w))
           for q, u, o, w in zip(range(10), range(10), range(10), range(1, 11))]
    cfg = fit_thresholds(val, coverage_budget=0.8, tau_c=0.5)
    assert cfg.tau_q == 0.2          # floor(2) + 1 = 3rd smallest
    assert cfg.tau_u_abstain == 0.7  # floor(7) + 1 = 8th smallest
    assert cfg.tau_ood == 0.8        # floor(8.5) + 1 = 9th smallest
    assert cfg.tau_w == 8            # 8 of 10 widths <= 8
    assert cfg.tau_c == 0.5
    widths = [p.width for _, p in val]
    assert sum(w <= cfg.tau_w for w in widths) / len(widths) == 0.8
    assert cfg.quantile_spec["quality"] == 20.0


def test_fit_thresholds_errors():
    with pytest.raises(ConfigurationError):
        fit_thresholds([])
    with pytest.raises(ConfigurationError):
        fit_thresholds([(sig(), pred())], {"quality": 100})
    with pytest.raises(ConfigurationError):
        fit_thresholds([(sig(), pred())], {"bogus": 50})


def test_summarize_all_predict_correct():
    cfg = pads_config()
    decisions = [route(sig(), pred(), cfg, f"s{i}") for i in range(4)]
    s = summarize_actions(decisions, [1, 0, 1, 1], [1, 0, 1, 1])
    assert s.fractions == {"PREDICT": 1.0, "ABSTAIN": 0.0, "REACQUIRE": 0.0, "REFER": 0.0}
    assert s.conditional["PREDICT"] == 1.0 and s.overall == 1.0


def test_summarize_fractions_sum_to_one():
    cfg = pads_config()
    decisions = [route(sig(q=0.9 + i / 100, o=i / 13, u=i / 17), pred(), cfg) for i in range(13)]
    s = summarize_actions(decisions)
    assert abs(sum(s.fractions.values()) - 1.0) <= 1e-12


def test_summary_schema_matches_reported_operating_point():
    # counts for a 61.8% PREDICT operating point
    counts = {"PREDICT": 618, "ABSTAIN": 84, "REACQUIRE": 155, "REFER": 143}
    decisions = []
    for action, n in counts.items():
        decisions += [type("D", (), {"action": action})() for _ in range(n)]
    s = summarize_actions(decisions)
    assert s.coverage == 0.618
    assert set(s.to_json()) >= {"counts", "fractions", "conditional", "coverage", "selective_risk"}


def test_risk_coverage_examples():
    assert risk_coverage_curve([0.1, 0.2], [True, True]) == [(0.5, 0.0), (1.0, 0.0)]
    curve = risk_coverage_curve([0.1, 0.2, 0.3, 0.4], [True, True, True, False])
    assert (0.75, 0.0) in curve and curve[-1] == (1.0, 0.25)
    assert risk_coverage_curve([0.5], [False]) == [(1.0, 1.0)]


def test_risk_coverage_ties_accepted_together():
    curve = risk_coverage_curve([0.2, 0.1, 0.2], [False, True, True])
    assert curve == [(1 / 3, 0.0), (1.0, pytest.approx(1 / 3, abs=1e-15))]


@given(st.lists(st.tuples(st.integers(0, 5), st.booleans()), min_size=1, max_size=40))
def test_risk_coverage_matches_enumeration(pairs):
    u = [p[0] / 5 for p in pairs]
    ok = [p[1] for p in pairs]
    curve = risk_coverage_curve(u, ok)
    expected = risk_coverage_by_enumeration(u, ok)
    assert len(curve) == len(expected)
    for (c1, r1), (c2, r2) in zip(curve, expected):
        assert c1 == pytest.approx(c2, abs=1e-12) and r1 == pytest.approx(r2, abs=1e-12)
    assert curve[-1][0] == 1.0
    assert curve[-1][1] == 1 - sum(ok) / len(ok)

