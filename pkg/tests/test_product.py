import numpy as np
import pytest

from gtlsynth.bench.crop import CROP_SPEC, CropConfig, gen_crop
from gtlsynth.fmdp import OWN_NEXT, AgentKernel, FactoredMdp, local_mdp, simulate_batch
from gtlsynth.graph import InteractionGraph
from gtlsynth.logic.automaton import Polarity
from gtlsynth.logic.formula import parse
from gtlsynth.logic.monitor import Evaluator, label_atom_fn, verdicts
from gtlsynth.product import (
    build_agent_product,
    build_product,
    compile_spec,
    memoryful_policy,
    product_chain,
    product_summary,
    reach_probability,
    satisfaction_probability,
    transient,
    trivial_automaton,
)
from oracles import random_single_agent


def chain_model(table, labels, init="s0"):
    n_states, n_actions, _ = table.shape
    names = tuple(f"s{k}" for k in range(n_states))
    return FactoredMdp(
        InteractionGraph((1,)),
        {1: names},
        {1: tuple(f"a{k}" for k in range(n_actions))},
        {1: init},
        {1: AgentKernel(OWN_NEXT, (1,), table)},
        {1: {names[k]: frozenset(v) for k, v in labels.items()}},
        {},
    )


def two_path():
    # s0 goes to the goal s1 with probability 0.6 and to the trap s2 otherwise
    table = np.zeros((3, 1, 3))
    table[0, 0] = [0.0, 0.6, 0.4]
    table[1, 0, 1] = 1.0
    table[2, 0, 2] = 1.0
    return chain_model(table, {1: {"g"}})


def random_table(prod, seed):
    rng = np.random.default_rng(seed)
    return rng.dirichlet(np.ones(prod.n_actions), size=prod.n_states)


def check_routing(prod):
    nA = prod.n_actions
    T = prod.trans.tocoo()
    delta = prod.automaton.delta
    for row, col, val in zip(T.row, T.col, T.data):
        p, a = divmod(int(row), nA)
        s, q = prod.states[p]
        sn, qn = prod.states[col]
        assert qn == delta[q, prod.letters[sn]]
        assert val == prod.local.kernel[s, a, sn]


# --- construction ---------------------------------------------------------------

def test_trivial_product_is_isomorphic_to_neighbourhood_model():
    m = gen_crop(CropConfig(rows=2, cols=2))
    prod = build_agent_product(m, 1, None)
    loc = local_mdp(m, 1)
    assert not prod.has_spec
    assert np.all(prod.states[:, 1] == 0)
    s = prod.states[:, 0]
    dense = prod.trans.toarray().reshape(prod.n_states, prod.n_actions, prod.n_states)
    assert np.array_equal(dense, loc.kernel[s][:, :, s])
    assert np.array_equal(prod.reward, loc.reward[s])
    assert trivial_automaton().n_states == 1


def test_small_cross_product_routes_by_delta():
    table = np.zeros((2, 1, 2))
    table[0, 0] = [0.5, 0.5]
    table[1, 0] = [0.3, 0.7]
    m = chain_model(table, {1: {"p"}})
    aut = compile_spec(m, 1, "F[<=1] p")
    prod = build_agent_product(m, 1, aut, 0.5)
    assert prod.n_states <= 2 * aut.n_states
    check_routing(prod)
    rows = prod.trans.toarray()
    assert np.allclose(rows.sum(axis=1), 1.0, atol=1e-9)


def test_crop_product_size_bounded_by_cross_product():
    m = gen_crop(CropConfig(rows=2, cols=2))
    product = build_product(m)
    for i, prod in product.agents.items():
        assert prod.n_states <= prod.local.n_states * prod.automaton.n_states
        check_routing(prod)
        assert np.allclose(np.asarray(prod.trans.sum(axis=1)).ravel(), 1.0, atol=1e-9)
        assert np.array_equal(prod.reward, prod.local.reward[prod.states[:, 0]])
    crit = product.spec_agents
    assert crit == (1, 4)
    assert all(product[i].polarity is Polarity.VIOLATION for i in crit)


def test_accepting_states_are_absorbing():
    m = gen_crop(CropConfig(rows=2, cols=2))
    prod = build_product(m)[1]
    T = prod.trans.tocoo()
    src = T.row // prod.n_actions
    assert prod.accepting.any()
    assert np.all(prod.accepting[T.col[prod.accepting[src]]])


def test_initial_state_reads_first_label():
    m = two_path()
    aut = compile_spec(m, 1, "g")
    prod = build_agent_product(m, 1, aut, 0.5)
    assert not prod.accepting[prod.initial]
    m2 = chain_model(two_path().kernels[1].table, {0: {"g"}})
    prod2 = build_agent_product(m2, 1, compile_spec(m2, 1, "g"), 0.5)
    assert prod2.accepting[prod2.initial]


def test_summary_reports_every_agent():
    m = gen_crop(CropConfig(rows=2, cols=2))
    summary = product_summary(build_product(m))
    assert set(summary) == {"1", "2", "3", "4"}
    assert summary["1"]["polarity"] == "accepts-violation"
    assert summary["2"]["polarity"] is None


# --- satisfaction ---------------------------------------------------------------

def test_accepting_initial_state_has_probability_one():
    m = chain_model(two_path().kernels[1].table, {0: {"g"}})
    prod = build_agent_product(m, 1, compile_spec(m, 1, "F g"), 0.5)
    assert satisfaction_probability(prod, np.ones((prod.n_states, 1))) == 1.0


def test_two_path_probability():
    m = two_path()
    prod = build_agent_product(m, 1, compile_spec(m, 1, "F g"), 0.5)
    assert satisfaction_probability(prod, np.ones((prod.n_states, 1))) == pytest.approx(0.6, abs=1e-12)
    # killed before the first step with probability 0.1
    assert reach_probability(prod, np.ones((prod.n_states, 1)), 0.9) == pytest.approx(0.54, abs=1e-12)


def test_safe_polarity_reports_complement():
    m = two_path()
    prod = build_agent_product(m, 1, compile_spec(m, 1, "G ! g"), 0.5)
    assert prod.polarity is Polarity.VIOLATION
    assert satisfaction_probability(prod, np.ones((prod.n_states, 1))) == pytest.approx(0.4, abs=1e-12)


def test_transience_check():
    m = two_path()
    prod = build_agent_product(m, 1, compile_spec(m, 1, "F g"), 0.5)
    assert not transient(prod)
    sure = np.zeros((2, 1, 2))
    sure[:, 0, 1] = 1.0
    m = chain_model(sure, {1: {"g"}})
    assert transient(build_agent_product(m, 1, compile_spec(m, 1, "F g"), 0.5))


# --- finite-memory policies -------------------------------------------------------

def test_trivial_lift_is_memoryless():
    m = gen_crop(CropConfig(rows=2, cols=2))
    product = build_product(m, automata={})
    tables = {i: random_table(p, i) for i, p in product.agents.items()}
    pol = memoryful_policy(product, tables)
    assert pol.memoryless
    for i, prod in product.agents.items():
        assert np.array_equal(pol.tables[i][0][prod.states[:, 0]], tables[i])


def test_lift_keeps_memory_dependent_choices():
    m = random_single_agent(3, 5, 2, spec="F[<=3] g")
    product = build_product(m)
    prod = product[1]
    table = random_table(prod, 7)
    pol = memoryful_policy(product, {1: table})
    assert not pol.memoryless
    assert np.array_equal(pol.tables[1][prod.states[:, 1], prod.states[:, 0]], table)
    # some model state is visited under two automaton states with different choices
    s_counts = np.bincount(prod.states[:, 0])
    assert s_counts.max() >= 2


def test_memory_tracks_product_state_along_runs():
    m = random_single_agent(4, 5, 2, spec="F[<=3] g")
    product = build_product(m)
    prod = product[1]
    pol = memoryful_policy(product, {1: random_table(prod, 1)})
    runs = simulate_batch(m, pol, 6, 300, np.random.default_rng(0))[:, :, 0]
    mem = pol.memory[1]
    P = product_chain(prod, np.full((prod.n_states, prod.n_actions), 1.0 / prod.n_actions))
    for run in runs:
        q = mem.start(run[0])
        p = prod.index[q, run[0]]
        assert p == prod.initial
        for s in run[1:]:
            q = mem.step(q, s)
            nxt = prod.index[q, s]
            assert nxt >= 0 and P[p, nxt] > 0
            p = nxt


def test_monte_carlo_satisfaction_matches_exact():
    m = random_single_agent(5, 6, 2, spec="F[<=3] g")
    product = build_product(m)
    prod = product[1]
    table = random_table(prod, 2)
    exact = satisfaction_probability(prod, table)
    n = 10_000
    runs = simulate_batch(m, memoryful_policy(product, {1: table}), 3, n, np.random.default_rng(9))
    atom = label_atom_fn(runs, m.agents, m.node_label)
    codes = verdicts(Evaluator(m.graph, atom, n, 4), parse("F[<=3] g"), 1, 0)
    assert np.all(codes >= 0)
    freq = float(np.mean(codes == 1))
    se = np.sqrt(exact * (1 - exact) / n)
    assert abs(freq - exact) <= 3 * se


def test_product_of_crop_spec_compiles_for_every_field():
    m = gen_crop(CropConfig(rows=2, cols=2))
    for i in m.agents:
        aut = compile_spec(m, i, CROP_SPEC)
        assert aut.polarity is Polarity.VIOLATION
