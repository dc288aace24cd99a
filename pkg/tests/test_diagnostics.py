import numpy as np
import pytest
from conftest import loop_mdp, random_mdp

from ddq.agent import INFINITY, AgentConfig, new_agent
from ddq.diagnostics import (
    AuditReport,
    KnownSet,
    StepRecord,
    TraceError,
    check_optimism_accuracy,
    compute_known_set,
    detect_escape,
    invariant_audit,
    kappa,
    pac_monitor_step,
    read_trace,
    write_trace,
)
from ddq.envs import compile_gridworld, default_gridworld
from ddq.mdp import build_known_mdp, optimal_action_values

CFG = AgentConfig.from_epsilon(0.06, 0.8, 65, 175)


@pytest.fixture(scope="module")
def grid():
    return compile_gridworld(default_gridworld())


class TestKnownSet:
    def test_optimistic_values_consistent_when_rewarded(self):
        m = loop_mdp(1.0)
        q = new_agent(CFG, 1, 1).Q
        k = compute_known_set(m, q, np.zeros((1, 1)), CFG)
        assert k.k1[0, 0] and not k.k2[0, 0]

    def test_unrewarded_loop_is_unknown(self):
        m = loop_mdp(0.0)
        q = new_agent(CFG, 1, 1).Q
        # residual 5 - 0.8 * 5 = 1 > 3 * 0.004
        k = compute_known_set(m, q, np.zeros((1, 1)), CFG)
        assert not k.k[0, 0]

    def test_visits_make_known(self):
        m = loop_mdp(0.0)
        q = new_agent(CFG, 1, 1).Q
        k = compute_known_set(m, q, np.array([[175]]), CFG)
        assert k.k2[0, 0] and k.k[0, 0]

    def test_escape(self):
        known = KnownSet(np.array([[True, False]]), np.array([[False, False]]))
        assert not detect_escape(known, 0, 0)
        assert detect_escape(known, 0, 1)


class TestPacMonitor:
    def test_optimal_q_never_violates(self, grid):
        q = optimal_action_values(grid)
        assert not any(pac_monitor_step(grid, q, s, 0.06) for s in range(9))

    def test_uniform_q_at_start(self, grid):
        # tie-break policy walks down to cell 7 and bumps the border forever: value 0
        q = np.full((9, 4), 5.0)
        v_star_start = optimal_action_values(grid).max(axis=1)[0]
        assert v_star_start - 4 * 0.06 > 0.0
        assert pac_monitor_step(grid, q, 0, 0.06)


class TestOptimismAccuracy:
    def test_fresh_agent_is_optimistic(self, grid):
        q = new_agent(CFG, 9, 4).Q
        known = compute_known_set(grid, q, np.zeros((9, 4)), CFG)
        rep = check_optimism_accuracy(grid, q, known, CFG, 0.06)
        assert rep.optimism_pass and rep.optimism_margin > 0

    def test_optimal_q_fully_known_is_accurate(self, grid):
        q = optimal_action_values(grid, 1e-12)
        all_known = KnownSet(np.ones((9, 4), bool), np.ones((9, 4), bool))
        rep = check_optimism_accuracy(grid, q, all_known, CFG, 0.06)
        assert rep.accuracy_margin == pytest.approx(0.06, abs=1e-9)
        assert rep.optimism_margin == pytest.approx(0.06, abs=1e-9)

    def test_optimistic_unknown_pairs_are_accurate(self, grid):
        # nothing known and Q = v_max: the known MDP pays exactly v_max everywhere
        q = new_agent(CFG, 9, 4).Q
        none = KnownSet(np.zeros((9, 4), bool), np.zeros((9, 4), bool))
        rep = check_optimism_accuracy(grid, q, none, CFG, 0.06)
        assert rep.accuracy_pass


class TestAudit:
    def test_kappa(self):
        assert kappa(9, 4, 0.8, 0.004) == pytest.approx(45036)

    def test_empty_trace(self):
        rep = invariant_audit([], CFG, 9, 4)
        assert rep.hard_pass
        assert rep.successful_total.observed == 0
        assert rep.attempted_total.observed == 0
        assert rep.escape_total.observed == 0
        assert rep.escape_total.bound == pytest.approx(6300)

    def test_escape_bound_expression(self):
        k = kappa(9, 4, 0.8, 0.004)
        assert min(2 * 65 * k, 36 * 175) == pytest.approx(6300)
        assert 2 * 65 * k == pytest.approx(5854680)

    def test_gap_in_t(self):
        with pytest.raises(TraceError):
            invariant_audit([StepRecord(t=2, s=0, a=0, r=0.0, s_next=0)], CFG, 9, 4)

    def test_detects_increase(self):
        recs = [
            StepRecord(t=1, s=0, a=0, r=0.0, s_next=0, q_changes=[(0, 0, CFG.v_max, 3.0)]),
            StepRecord(t=2, s=0, a=0, r=0.0, s_next=0, q_changes=[(0, 0, 3.0, 4.0)]),
        ]
        rep = invariant_audit(recs, CFG, 9, 4)
        assert not rep.q_monotone and not rep.hard_pass
        assert "increased" in rep.first_failure

    def test_detects_out_of_range(self):
        recs = [StepRecord(t=1, s=0, a=0, r=0.0, s_next=0, q_changes=[(0, 0, CFG.v_max, -0.5)])]
        assert not invariant_audit(recs, CFG, 9, 4).q_in_range

    def test_per_pair_bound(self):
        cfg = AgentConfig(m1=1, m2=INFINITY, epsilon1=0.5, epsilon2=0.1, gamma=0.5)
        # per-pair bound 1 + 1 / (0.5 * 0.5) = 5
        recs = [StepRecord(t=i, s=0, a=0, r=0.0, s_next=0, type1_succeeded=True) for i in range(1, 7)]
        rep = invariant_audit(recs, cfg, 1, 1)
        assert rep.per_pair.observed == 6 and not rep.per_pair.passed

    def test_degenerate_escape_bounds(self):
        dq = AgentConfig(m1=65, m2=INFINITY, epsilon1=0.004, epsilon2=0.004 / 3, gamma=0.8)
        assert invariant_audit([], dq, 9, 4).escape_total.bound == pytest.approx(2 * 65 * 45036)
        rm = AgentConfig(m1=INFINITY, m2=175, epsilon1=0.004, epsilon2=0.004 / 3, gamma=0.8)
        assert invariant_audit([], rm, 9, 4).escape_total.bound == 6300

    def test_report_json_ready(self):
        d = invariant_audit([], CFG, 9, 4).to_dict()
        assert d["hard_pass"] is True
        assert set(d["per_pair"]) == {"observed", "bound", "passed"}
        assert isinstance(invariant_audit([], CFG, 9, 4), AuditReport)


def test_trace_round_trip(tmp_path):
    recs = [
        StepRecord(t=1, s=0, a=1, r=0.0, s_next=1, escape=True, violation=False, q_changes=[(0, 1, 5.0, 4.0)]),
        StepRecord(t=2, s=1, a=0, r=1.0, s_next=0, learn_changes=[((1, 0), True, False)]),
    ]
    path = tmp_path / "trace.jsonl"
    write_trace(recs, path)
    assert len(path.read_text().splitlines()) == 2
    assert read_trace(path) == recs


@pytest.mark.parametrize("seed", range(10))
def test_known_mdp_values_capped(seed):
    rng = np.random.default_rng(seed)
    m = random_mdp(rng, 4, 2, 0.8)
    q = rng.random((4, 2)) * m.v_max
    km = build_known_mdp(m, rng.random((4, 2)) < 0.5, q)
    assert optimal_action_values(km.mdp, 1e-10).max() <= m.v_max + 1e-10
