import numpy as np
import pytest

from cachefield.schemes import (
    LP,
    LRU,
    RR,
    TLP,
    RecencyTooLarge,
    conditional_matrices,
    conditional_matrix,
    lp_replacement_probability,
    lru_recency_profile,
    overall_matrix,
    recency_order_distribution,
    scheme_from_config,
    tlp_target,
)
from cachefield.sim import estimate_recency_profile
from cachefield.states import enumerate_states, sorted_space
from oracles import lru_ordered_chain, rule_theta


def test_rr_conditional_column(v3, space3):
    th = conditional_matrix(RR(0.45), space3, v3, 3)
    np.testing.assert_allclose(th[:, 0], [0.10, 0.45, 0.45], atol=1e-15)


@pytest.mark.parametrize("scheme", [RR(0.45), LP(0.9), TLP("A"), TLP("P"), LRU()])
def test_cached_request_leaves_state_alone(scheme, v3, space3):
    for l in (1, 2):
        assert conditional_matrix(scheme, space3, v3, l)[:, 0].tolist() == [1, 0, 0]


def test_tlp_a_moves_all_mass(v3, space3):
    th = conditional_matrix(TLP("A"), space3, v3, 1)
    assert th[:, space3.index({2, 3})].tolist() == [1, 0, 0]


def test_overall_diagonals(v3, space3):
    assert overall_matrix(RR(0.45), space3, v3)[0, 0] == pytest.approx(0.811, abs=1e-12)
    assert overall_matrix(LRU(), space3, v3)[0, 0] == pytest.approx(0.79, abs=1e-12)


def test_rr_uniform_symmetry():
    sp = enumerate_states(4, 2)
    v = np.full(4, 0.25)
    th = overall_matrix(RR(0.3), sp, v)
    # relabel contents by a permutation and map states accordingly
    perm = {1: 3, 2: 1, 3: 4, 4: 2}
    P = [sp.index({perm[c] for c in s}) for s in sp.states]
    np.testing.assert_allclose(th[np.ix_(P, P)], th, atol=1e-15)


@pytest.mark.parametrize(
    "kind,scheme,kw",
    [("rr", RR(0.2), {"phi": 0.2}), ("lp", LP(0.6), {"alpha": 0.6}), ("tlp", TLP("A"), {}), ("tlp", TLP("P"), {"variant": "P"})],
)
def test_matches_rule_oracle(kind, scheme, kw):
    v = np.array([0.31, 0.25, 0.2, 0.14, 0.1])
    sp = enumerate_states(5, 2)
    np.testing.assert_allclose(overall_matrix(scheme, sp, v), rule_theta(kind, 5, 2, v, **kw), atol=1e-14)


def test_lp_replacement_probabilities(v3):
    assert lp_replacement_probability(v3, 1, 2, (2, 3)) == pytest.approx(0.42)
    assert lp_replacement_probability(v3, 1, 3, (2, 3)) == pytest.approx(0.58)
    assert lp_replacement_probability(v3, 2, 3, (1, 3)) == pytest.approx(1.0)
    assert lp_replacement_probability([0.4, 0.3, 0.15, 0.15], 1, 3, (3, 4)) == pytest.approx(0.5)
    with pytest.raises(ValueError):
        lp_replacement_probability(v3, 3, 1, (1, 2))


def test_tlp_target():
    assert tlp_target([0.5, 0.29, 0.21], (1, 3)) == 3
    assert tlp_target([0.2] * 5, (2, 5)) == 2
    assert tlp_target([0.1, 0.4, 0.2, 0.3], (2, 3, 4)) == 3


def test_lp_tlp_lower_triangular_sorted():
    v = np.array([0.3, 0.25, 0.2, 0.15, 0.1])
    sp = sorted_space(enumerate_states(5, 3), v)
    for s in (LP(0.9), TLP("A"), TLP("P")):
        assert np.all(np.triu(overall_matrix(s, sp, v), 1) == 0)


def test_sparsity_only_neighbors():
    v = np.array([0.4, 0.3, 0.2, 0.1])
    sp = enumerate_states(4, 2)
    for s in (RR(0.5), LP(1.0), TLP("A"), LRU()):
        th = overall_matrix(s, sp, v)
        for k in range(sp.n_states):
            allowed = set(sp.neighbors(k)) | {k}
            assert all(th[m, k] == 0 for m in range(sp.n_states) if m not in allowed)


def test_rr_phi_above_one_over_l_rejected(v3, space3):
    with pytest.raises(ValueError):
        overall_matrix(RR(0.6), space3, v3)
    with pytest.raises(ValueError):
        RR(0.0)
    with pytest.raises(ValueError):
        LP(1.5)
    with pytest.raises(ValueError):
        TLP("Q")


def test_recency_two_contents(v3, space3):
    rho = lru_recency_profile(space3, v3)
    # stationary LRU list law: weight of order (a, b) is 1 / (1 - v_a)
    w12, w21 = 1 / (1 - 0.5), 1 / (1 - 0.29)
    assert rho[0, 1] == pytest.approx(w12 / (w12 + w21), abs=1e-12)
    assert rho[0, 1] == pytest.approx(0.586777, abs=1e-6)
    np.testing.assert_allclose(rho.sum(axis=1), 1.0, atol=1e-12)


def test_recency_uniform_is_flat():
    sp = enumerate_states(5, 3)
    rho = lru_recency_profile(sp, np.full(5, 0.2))
    for k, s in enumerate(sp.states):
        np.testing.assert_allclose(rho[k, [c - 1 for c in s]], 1 / 3, atol=1e-12)


def test_recency_three_contents_exact_and_monte_carlo():
    v = np.array([0.45, 0.27, 0.18, 0.10])
    sp = enumerate_states(4, 3)
    rho = lru_recency_profile(sp, v)
    _, rho_exact = lru_ordered_chain(4, 3, v)
    np.testing.assert_allclose(rho, rho_exact, atol=1e-12)
    k = sp.index({1, 2, 3})
    orders, probs = recency_order_distribution((1, 2, 3), v)
    assert rho[k, 2] == pytest.approx(sum(p for o, p in zip(orders, probs) if o[-1] == 3), abs=1e-12)
    rho_mc, visits = estimate_recency_profile(sp, v, 200_000, seed=7)
    se = np.sqrt(rho[k] * (1 - rho[k]) / visits[k])
    assert np.all(np.abs(rho_mc[k] - rho[k]) <= 4 * se + 1e-12)


def test_recency_matches_exact_lru_chain():
    for n, L in [(3, 2), (4, 2), (5, 2), (5, 3)]:
        v = np.random.default_rng(n * 10 + L).dirichlet(np.ones(n))
        _, rho_exact = lru_ordered_chain(n, L, v)
        np.testing.assert_allclose(lru_recency_profile(enumerate_states(n, L), v), rho_exact, atol=1e-11)


def test_recency_cap():
    sp = enumerate_states(4, 3)
    with pytest.raises(RecencyTooLarge, match="estimate_recency_profile"):
        lru_recency_profile(sp, np.full(4, 0.25), max_orders=5)


def test_conditional_stack_shape(v3, space3):
    assert conditional_matrices(LRU(), space3, v3).shape == (3, 3, 3)
    with pytest.raises(ValueError):
        conditional_matrix(LRU(), space3, v3, 4)


def test_scheme_config_round_trip():
    for s in (RR(0.45), LP(0.9, [0.5, 0.3, 0.2]), TLP("P"), LRU()):
        assert scheme_from_config(s.to_config()) == s
    assert scheme_from_config({"scheme": "rr", "phi": 0.2, "seed": 4}) == RR(0.2)
    with pytest.raises(ValueError):
        scheme_from_config({"scheme": "fifo"})


def test_imperfect_prediction_changes_ordering():
    v = np.array([0.5, 0.29, 0.21])
    sp = enumerate_states(3, 2)
    # predicted ranking swaps contents 2 and 3
    th = overall_matrix(TLP("A", [0.5, 0.2, 0.3]), sp, v)
    assert th[sp.index({1, 3}), sp.index({1, 2})] == pytest.approx(0.21)
    assert th[sp.index({1, 2}), sp.index({1, 3})] == 0


def test_certain_replacement_keeps_entries_non_negative():
    v = np.random.default_rng(3).dirichlet(np.ones(6))
    sp = enumerate_states(6, 3)
    for s in (RR(1 / 3), LP(1.0), TLP("A")):
        assert conditional_matrices(s, sp, v).min() >= 0
        assert overall_matrix(s, sp, v).min() >= 0
