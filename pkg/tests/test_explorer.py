"""End-to-end exploration: reports, schedule classes, budgets.

Every reported witness is replayed on the concrete cache model and must
reproduce both verdicts at the reported access.  Counter values are
pinned so schedule-class deduplication and search-order changes show up.
"""

from dataclasses import replace

import pytest

from symleak.cache import CacheConfig, ReduceOptions
from symleak.explorer import ExploreOptions, explore
from symleak.ir import SymbolicBase
from symleak.oracle import replay_trace, schedule_from_lines
from symleak.solver import DivergenceResult, EnumerativeBackend

from conftest import load_program, make_backend

ALL_REDUCTIONS = ExploreOptions(reductions=ReduceOptions())


def lines_of(report):
    return [int(site.split(":")[1][1:]) for (_, site) in report.schedule]


def confirm_witness(p, cfg, report):
    """Replay both models of a report concretely; the verdicts at the
    reported access must match."""
    base_inputs = {}
    for d in p.decls:
        if isinstance(d.placement, SymbolicBase):
            base_inputs[d.placement.var] = report.adversary_addr
    for model, want in ((report.k1, report.verdict1),
                        (report.k2, report.verdict2)):
        inputs = {**base_inputs, **model}
        tids = schedule_from_lines(p, inputs, lines_of(report), cfg)
        tr = replay_trace(p, inputs, tids, cfg)
        assert tr[report.access_index][2] == want
        assert tr[report.access_index][1] == report.site


def test_sequential_program_single_interleaving(fig3_cfg):
    p = load_program("seq_leaky_reuse.ir")
    reports, stats = explore(p, fig3_cfg, ALL_REDUCTIONS, make_backend(p, fig3_cfg))
    assert [r.site for r in reports] == ["t1:L11:store:p"]
    r = reports[0]
    assert r.access_index == 2
    assert lines_of(r) == [5, 7, 11]
    assert (r.k1, r.verdict1) == ({"k": 1}, "hit")
    assert (r.k2, r.verdict2) == ({"k": 0}, "miss")
    assert r.adversary_addr is None and r.mode == "precise"
    assert stats.interleavings_explored == 1
    assert stats.leak_checks == 5
    assert stats.solver_calls == 5
    assert stats.complete and stats.indeterminate == 0
    confirm_witness(p, fig3_cfg, r)


def test_repaired_program_is_clean(fig3_cfg):
    p = load_program("seq_repaired.ir")
    reports, stats = explore(p, fig3_cfg, ALL_REDUCTIONS, make_backend(p, fig3_cfg))
    assert reports == [] and stats.complete


def test_concurrent_program_schedule_classes(fig3_cfg):
    p = load_program("conc_tmp_fixed.ir")
    reports, stats = explore(p, fig3_cfg, ALL_REDUCTIONS, make_backend(p, fig3_cfg))
    assert [r.site for r in reports] == ["t1:L11:store:p"]
    r = reports[0]
    assert r.access_index == 3
    assert lines_of(r) == [6, 9, 13, 11]
    assert (r.k1, r.verdict1) == ({"k": 0}, "hit")
    assert (r.k2, r.verdict2) == ({"k": 1}, "miss")
    # Four schedule classes: the probe position matters only between the
    # three dependent placements of the then arm, the else arm is one
    # class because its accesses never alias the probe.
    assert stats.interleavings_explored == 4
    assert stats.leak_checks == 3
    assert stats.solver_calls == 11
    confirm_witness(p, fig3_cfg, r)


def test_two_step_mode_agrees_here(fig3_cfg):
    p = load_program("conc_tmp_fixed.ir")
    opts = replace(ALL_REDUCTIONS, mode="two_step")
    reports, stats = explore(p, fig3_cfg, opts, make_backend(p, fig3_cfg))
    assert [r.site for r in reports] == ["t1:L11:store:p"]
    assert reports[0].mode == "two_step"
    assert lines_of(reports[0]) == [6, 9, 13, 11]
    assert stats.solver_calls == 12
    confirm_witness(p, fig3_cfg, reports[0])


def test_symbolic_probe_placement(fig3_cfg):
    p = load_program("adv_symbolic.ir")
    reports, stats = explore(p, fig3_cfg, ALL_REDUCTIONS, make_backend(p, fig3_cfg))
    found = {r.site: r.adversary_addr for r in reports}
    # The probe can be placed to alias the store reuse (512), p itself
    # (0), or either arm's q access (385 / 257).
    assert found == {"t1:L11:store:p": 512, "t1:L9:load:p": 0,
                     "t1:L6:load:q": 385, "t1:L8:load:q": 257}
    assert stats.interleavings_explored == 4
    assert stats.solver_calls == 20
    for r in reports:
        confirm_witness(p, fig3_cfg, r)


def test_two_secret_inputs_and_fresh_cells(fig3_cfg):
    p = load_program("sbox16.ir")
    reports, stats = explore(p, fig3_cfg, ALL_REDUCTIONS, make_backend(p, fig3_cfg))
    assert [r.site for r in reports] == ["t1:L7:load:sb", "t1:L9:store:sb"]
    assert reports[0].k1 == {"klo": 4, "khi": 0}
    assert reports[0].k2 == {"klo": 0, "khi": 0}
    for r in reports:
        confirm_witness(p, fig3_cfg, r)

    p = load_program("sbox_feedback.ir")
    reports, stats = explore(p, fig3_cfg, ALL_REDUCTIONS, make_backend(p, fig3_cfg))
    assert [r.site for r in reports] == ["t1:L9:store:key"]
    # The diverging value is one read out of secret memory, not an input.
    assert set(reports[0].k1) == {"j", "ld0_key"}
    assert stats.solver_calls == 1
    for r in reports:
        confirm_witness(p, fig3_cfg, r)


def test_exploration_is_deterministic(fig3_cfg):
    p = load_program("adv_symbolic.ir")
    runs = [explore(p, fig3_cfg, ALL_REDUCTIONS, make_backend(p, fig3_cfg))
            for _ in range(2)]
    assert runs[0][0] == runs[1][0]
    assert runs[0][1] == runs[1][1]


@pytest.mark.parametrize("name", ["conc_tmp_fixed.ir", "sbox16.ir",
                                  "sbox_branch.ir", "adv_symbolic.ir"])
def test_early_termination_keeps_site_set(fig3_cfg, name):
    p = load_program(name)
    on, stats_on = explore(p, fig3_cfg, ALL_REDUCTIONS, make_backend(p, fig3_cfg))
    off, stats_off = explore(p, fig3_cfg,
                             replace(ALL_REDUCTIONS, early_termination=False),
                             make_backend(p, fig3_cfg))
    assert {r.site for r in on} == {r.site for r in off}
    assert stats_on.leak_checks <= stats_off.leak_checks


def test_early_termination_prunes_concurrent_paths(fig3_cfg):
    # The probe program leaks at the first access of some interleavings,
    # so stopping there halves the checks.  The site set is unchanged.
    p = load_program("adv_symbolic.ir")
    _, on = explore(p, fig3_cfg, ALL_REDUCTIONS, make_backend(p, fig3_cfg))
    _, off = explore(p, fig3_cfg,
                     replace(ALL_REDUCTIONS, early_termination=False),
                     make_backend(p, fig3_cfg))
    assert (on.leak_checks, off.leak_checks) == (6, 12)
    assert on.solver_calls < off.solver_calls


def test_schedule_classes_cover_all_order_behaviors(fig3_cfg):
    # Quotient check: for each key, the set of critical behaviors over
    # every raw total order equals the set over the explored classes'
    # representative schedules plus the common non-leaky one.
    p = load_program("conc_tmp_fixed.ir")
    raw_orders = [(2, 1, 1, 1), (1, 2, 1, 1), (1, 1, 2, 1), (1, 1, 1, 2)]
    reports, stats = explore(p, fig3_cfg, ALL_REDUCTIONS, make_backend(p, fig3_cfg))
    leak_lines = lines_of(reports[0])
    for k in (0, 1, 64, 130):
        raw = set()
        for order in raw_orders:
            tr = replay_trace(p, {"k": k}, order, fig3_cfg)
            raw.add(tuple(v for (t, _, v) in tr if t == 1))
        tids = schedule_from_lines(p, {"k": k},
                                   leak_lines if k <= 127 else [13, 8, 9, 11],
                                   fig3_cfg)
        tr = replay_trace(p, {"k": k}, tids, fig3_cfg)
        from_class = tuple(v for (t, _, v) in tr if t == 1)
        assert raw <= {from_class, ("miss", "miss", "hit")}, k


def test_interleaving_budget_marks_incomplete(fig3_cfg):
    p = load_program("conc_tmp_fixed.ir")
    opts = replace(ALL_REDUCTIONS, max_interleavings=1)
    reports, stats = explore(p, fig3_cfg, opts, make_backend(p, fig3_cfg))
    assert not stats.complete
    assert stats.interleavings_explored <= 1


def test_unknown_solver_counts_indeterminate(fig3_cfg):
    class Inconclusive(EnumerativeBackend):
        def check_divergence(self, *a, **kw):
            self.calls += 1
            return DivergenceResult("unknown")

    p = load_program("seq_leaky_reuse.ir")
    reports, stats = explore(p, fig3_cfg, ALL_REDUCTIONS, Inconclusive())
    assert reports == []
    assert stats.indeterminate > 0
    assert stats.complete  # search finished; the verdicts did not


def test_sequential_checks_can_be_disabled(fig3_cfg):
    p = load_program("seq_leaky_reuse.ir")
    opts = replace(ALL_REDUCTIONS, check_sequential=False)
    reports, stats = explore(p, fig3_cfg, opts, make_backend(p, fig3_cfg))
    assert reports == [] and stats.leak_checks == 0
