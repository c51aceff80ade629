from __future__ import annotations

import csv

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import BENCHMARKS
from edgehorizon.centrality import KatzParams
from edgehorizon.cfg import CfgError
from edgehorizon.graph import topological_order
from edgehorizon.simulator import (
    BENCHMARK_SUITE,
    BenchmarkSpec,
    Strategy,
    SyntheticProgram,
    _Fuzzer,
    format_program,
    generate_program,
    hop_reach_profile,
    parse_program,
    run_campaign,
    run_trials,
    simulate_campaign,
)


def saturated(program: SyntheticProgram) -> SyntheticProgram:
    return SyntheticProgram(program.cfg, {e: 1.0 for e in program.traverse_prob}, program.rng_seed)


# -- program generation -----------------------------------------------------------


def test_generation_is_deterministic():
    a, b = generate_program(100, rng_seed=42), generate_program(100, rng_seed=42)
    assert a.cfg == b.cfg and a.traverse_prob == b.traverse_prob
    assert format_program(a) != format_program(generate_program(100, rng_seed=43))


def test_two_nodes_give_one_edge():
    program = generate_program(2, rng_seed=5)
    assert set(program.traverse_prob) == {(0, 1)}
    assert program.cfg.entry == 0


@settings(max_examples=25, deadline=None)
@given(
    st.integers(2, 120),
    st.integers(1, 4),
    st.floats(0, 1),
    st.integers(0, 2**32 - 1),
    st.integers(0, 3),
)
def test_generated_program_is_a_rooted_dag(n, branching, depth_bias, seed, rare):
    program = generate_program(n, branching, depth_bias, seed, rare_regions=rare)
    g = program.cfg.graph
    assert g.n == n
    assert len(topological_order(g)) == n
    # Every node is reachable from the entry.
    seen, stack = {0}, [0]
    while stack:
        for v in program.cfg.successor_map[stack.pop()]:
            if v not in seen:
                seen.add(v)
                stack.append(v)
    assert seen == set(range(n))
    assert all(0 < p <= 1 for p in program.traverse_prob.values())


def test_generator_rejects_bad_arguments():
    for kwargs in ({"n_nodes": 1}, {"n_nodes": 5, "branching": 0}, {"n_nodes": 5, "depth_bias": 1.5}):
        with pytest.raises(ValueError):
            generate_program(**kwargs)
    with pytest.raises(ValueError):
        generate_program(10, rare_regions=1, rare_prob=0.0)


def test_hop_reach_decays():
    program = generate_program(1000, 3, 0.5, 7)
    profile = hop_reach_profile(program, n_seeds=10, mutations_per_seed=1000, max_hops=3, rng_seed=3)
    assert profile[0] > profile[1] > profile[2] > 0


def test_program_round_trip(tmp_path):
    program = generate_program(60, 3, 0.4, 9, rare_regions=1)
    text = format_program(program)
    back = parse_program(text)
    assert back.cfg == program.cfg
    assert back.traverse_prob == program.traverse_prob
    assert back.rng_seed == 9
    assert format_program(back) == text


@pytest.mark.parametrize(
    "text",
    [
        "entry 0\nN 0\nN 1\nE 0 1 intra\n",  # missing probability
        "entry 0\nN 0\nN 1\nE 0 1 intra\nP 0 1 0\n",  # probability out of range
        "entry 0\nN 0\nN 1\nE 0 1 intra\nP 0 1\n",
        "seed x\nentry 0\nN 0\n",
    ],
)
def test_program_format_errors(text):
    with pytest.raises(CfgError):
        parse_program(text)


def test_program_errors_keep_line_numbers():
    with pytest.raises(CfgError) as info:
        parse_program("seed 1\nP 0 1 0.5\nentry 0\nN 0\nE 0 9 intra\n")
    assert info.value.line == 5


def test_committed_benchmarks_regenerate():
    with open(BENCHMARKS / "manifest.tsv", newline="") as fh:
        rows = list(csv.DictReader(fh, delimiter="\t"))
    assert [r["name"] for r in rows] == [s.name for s in BENCHMARK_SUITE]
    for row, spec in zip(rows, BENCHMARK_SUITE):
        rebuilt = BenchmarkSpec(
            row["name"],
            int(row["n_nodes"]),
            int(row["branching"]),
            float(row["depth_bias"]),
            int(row["rng_seed"]),
            int(row["rare_regions"]),
        )
        assert rebuilt == spec
        text = format_program(spec.generate())
        assert (BENCHMARKS / f"{spec.name}.prog").read_text() == text
        assert len(spec.generate().traverse_prob) == int(row["edges"])


# -- mutation model ------------------------------------------------------------------


def chain_program(prob: float = 1.0) -> SyntheticProgram:
    # 0 -> 1 -> 2 with side branches 0 -> 3 and 1 -> 4.
    from edgehorizon.cfg import Cfg, EdgeKind

    edges = [(0, 1), (1, 2), (0, 3), (1, 4)]
    cfg = Cfg.build(range(5), [(s, d, EdgeKind.INTRA) for s, d in edges], 0)
    return SyntheticProgram(cfg, {e: prob for e in edges}, 0)


def test_first_fresh_crossing_in_path_order_ends_a_mutation():
    program = chain_program()
    fuzzer = _Fuzzer(program, np.random.default_rng(0))
    fuzzer.add_seed(0, np.array([0, 1]))
    at, targets, _ = fuzzer.frontier(0)
    assert at.tolist() == [0, 1, 1] and sorted(targets[1:].tolist()) == [2, 4]
    batch, found = fuzzer.mutate(0, frozenset({0, 1}), 1)
    # One mutation crosses every edge; only the one off block 0 extends.
    assert [p.tolist() for p in found] == [[0, 3]]
    assert batch.extra == (frozenset({2, 3, 4}),)
    _, found = fuzzer.mutate(0, frozenset({0, 1}), 5)
    assert sorted(p.tolist() for p in found) == [[0, 1, 2], [0, 1, 4]]
    assert fuzzer.mutate(0, frozenset({0, 1}), 3)[1] == []


def test_zero_budget_is_a_no_op():
    fuzzer = _Fuzzer(chain_program(), np.random.default_rng(0))
    fuzzer.add_seed(0, np.array([0]))
    batch, found = fuzzer.mutate(0, frozenset({0}), 0)
    assert batch.size == 0 and found == []


# -- campaigns --------------------------------------------------------------------------


@pytest.mark.parametrize("strategy", list(Strategy))
def test_campaigns_are_deterministic_and_monotone(strategy):
    program = generate_program(150, 3, 0.5, 4, rare_regions=1)
    a = simulate_campaign(program, strategy, 60, 10, 123)
    b = simulate_campaign(program, strategy, 60, 10, 123)
    assert a == b
    assert a.strategy_name == strategy.value
    counts = [c for _, c in a.coverage_timeline]
    assert [r for r, _ in a.coverage_timeline] == list(range(1, 61))
    assert all(x <= y for x, y in zip(counts, counts[1:]))
    assert 1 <= counts[0] and counts[-1] <= 150
    assert a.final_corpus_size == counts[-1]  # every new block mints exactly one seed


def test_single_round():
    result = simulate_campaign(generate_program(30, rng_seed=1), "katz", 1, 5, 0)
    assert len(result.coverage_timeline) == 1


def test_saturated_program_is_fully_covered():
    # Round robin schedules every seed once within n rounds.
    program = saturated(generate_program(80, 3, 0.5, 2))
    result = simulate_campaign(program, "round_robin", 80, 80, 0)
    assert result.final_coverage == 80


def test_max_mutations_caps_work():
    program = generate_program(200, 3, 0.5, 3)
    result, state = run_campaign(program, "katz", 500, 20, 0, mode="queue", max_mutations=333)
    assert state.stats.total == 333
    assert len(result.coverage_timeline) < 500


def test_campaign_argument_checks():
    program = generate_program(10)
    for args in ((0, 5), (5, 0)):
        with pytest.raises(ValueError):
            simulate_campaign(program, "katz", *args, 0)
    with pytest.raises(ValueError):
        simulate_campaign(program, "bogus", 5, 5, 0)
    with pytest.raises(ValueError):
        simulate_campaign(program, "katz", 5, 5, 0, max_mutations=0)


def test_timeline_tsv():
    result = simulate_campaign(generate_program(20, rng_seed=2), "random", 3, 4, 1)
    lines = result.to_tsv().splitlines()
    assert lines[0] == "round\tcovered_nodes"
    assert len(lines) == 4


def test_trials_are_paired_and_independent_of_jobs():
    program = generate_program(120, 3, 0.5, 8)
    serial = run_trials(program, ["katz", "random"], 3, 20, 10, base_seed=50)
    parallel = run_trials(program, ["katz", "random"], 3, 20, 10, base_seed=50, jobs=2)
    assert serial == parallel
    assert serial["random"][1] == simulate_campaign(program, "random", 20, 10, 51)


def test_eigenvector_never_beats_katz_in_aggregate():
    # Deep programs with rare regions; 30 paired trials each.
    katz_total = eig_total = 0
    for seed in (11, 12, 13):
        program = generate_program(300, 3, 0.7, seed, rare_regions=2)
        res = run_trials(program, ["katz", "eigenvector"], 30, 100, 20, params=KatzParams(alpha=0.5))
        katz_total += sum(r.final_coverage for r in res["katz"])
        eig_total += sum(r.final_coverage for r in res["eigenvector"])
    assert katz_total >= eig_total
