import numpy as np
import pytest

from fairmdp.causal import CausalGraph, InterventionPlan, Noise, evaluate_with_plan, path_specific_groups
from fairmdp.mdp import MAJ, MIN, ContractError


def credit_graph(p_flip=0.2):
    """Z -> Y -> X and Z -> X, all binary.

    ``Y = Z xor U_y`` and ``X = Y or (Z == 0 and U_x)``.
    """
    parents = {"Z": [], "Y": ["Z"], "X": ["Z", "Y"]}
    eqs = {
        "Z": lambda pv, e: e,
        "Y": lambda pv, e: np.logical_xor(pv["Z"], e).astype(int),
        "X": lambda pv, e: np.logical_or(pv["Y"], (pv["Z"] == 0) & (e == 1)).astype(int),
    }
    noise = {"Z": Noise((0, 1), (0.7, 0.3)), "Y": Noise((0, 1), (1 - p_flip, p_flip)),
             "X": Noise((0, 1), (0.5, 0.5))}
    return CausalGraph(parents, eqs, noise)


def assembler(v):
    return 2 * v["X"] + v["Y"]


def test_topological_order_and_cycle_detection():
    g = credit_graph()
    assert g.order.index("Z") < g.order.index("Y") < g.order.index("X")
    with pytest.raises(ContractError, match="cycle"):
        CausalGraph({"A": ["B"], "B": ["A"]}, {"A": None, "B": None},
                    {"A": Noise((0,), (1.0,)), "B": Noise((0,), (1.0,))})
    with pytest.raises(ContractError):
        CausalGraph({"A": ["C"]}, {"A": None}, {"A": Noise((0,), (1.0,))})


def test_do_intervention_pins_vertex():
    g = credit_graph()
    noise = {"Z": np.array([0, 1]), "Y": np.array([0, 0]), "X": np.array([1, 1])}
    out = evaluate_with_plan(g, InterventionPlan(("Z", 1)), noise)
    np.testing.assert_array_equal(out["Z"], [1, 1])
    np.testing.assert_array_equal(out["Y"], [1, 1])


def test_mediated_intervention_takes_mediator_from_counterfactual():
    g = credit_graph()
    noise = {"Z": np.array([0]), "Y": np.array([0]), "X": np.array([1])}
    out = evaluate_with_plan(g, InterventionPlan(("Z", 0), ("Y", 1)), noise)
    # Y comes from do(Z=1) (Y=1); X uses Z=0 with that Y
    assert out["Z"][0] == 0 and out["Y"][0] == 1 and out["X"][0] == 1
    with pytest.raises(ContractError):
        InterventionPlan(None, ("Y", 1))
    with pytest.raises(ContractError):
        InterventionPlan(("Z", 0), ("Z", 1))


def test_exact_path_specific_distributions_by_hand():
    g = credit_graph(p_flip=0.2)
    d_maj, d_min = path_specific_groups(g, assembler, 4, 0, None, maj=0, mino=1, exact=True)
    # maj side: do(Z=0), Y from do(Z=1) -> Y = not U_y; X = Y or U_x
    # Y=1 w.p. 0.8 (then X=1); Y=0 w.p. 0.2, X = U_x
    np.testing.assert_allclose(d_maj, [0.1, 0.0, 0.1, 0.8])
    # min side: do(Z=1) -> Y = not U_y, X = Y
    np.testing.assert_allclose(d_min, [0.2, 0.0, 0.0, 0.8])


def test_sampled_matches_exact(rng):
    g = credit_graph(p_flip=0.35)
    exact = path_specific_groups(g, assembler, 4, 0, None, maj=0, mino=1, exact=True)
    sampled = path_specific_groups(g, assembler, 4, 40000, rng, maj=0, mino=1)
    for e, s in zip(exact, sampled):
        np.testing.assert_allclose(s, e, atol=0.01)


def test_symmetric_variant_returns_both_pairs():
    g = credit_graph()
    pairs = path_specific_groups(g, assembler, 4, 0, None, maj=0, mino=1, exact=True, symmetric=True)
    assert len(pairs) == 2
    swapped = path_specific_groups(g, assembler, 4, 0, None, maj=1, mino=0, exact=True)
    for a, b in zip(pairs[1], swapped):
        np.testing.assert_allclose(a, b)


def test_invalid_assembler_output_reported():
    g = credit_graph()
    with pytest.raises(ContractError, match="invalid state"):
        path_specific_groups(g, lambda v: v["X"] + 5, 4, 0, None, exact=True)


def test_json_graph_linear_and_table(tmp_path):
    doc = {"vertices": [
        {"name": "Z", "parents": [], "noise": {"values": [0, 1], "probs": [0.5, 0.5]},
         "equation": {"type": "linear", "coef": {}, "noise_coef": 1}},
        {"name": "Y", "parents": ["Z"], "noise": {"values": [0, 1], "probs": [0.5, 0.5]},
         "equation": {"type": "table", "rows": [[0, 0, 0], [0, 1, 1], [1, 0, 1], [1, 1, 1]]}},
        {"name": "S", "parents": ["Z", "Y"], "noise": {"values": [0], "probs": [1.0]},
         "equation": {"type": "linear", "coef": {"Z": 2, "Y": 1}, "noise_coef": 0}},
    ]}
    g = CausalGraph.from_dict(doc)
    d_maj, d_min = path_specific_groups(g, lambda v: v["S"].astype(int), 4, 0, None, y="Y",
                                        maj=MAJ, mino=MIN, exact=True)
    # maj: Z=0, Y from do(Z=1) is always 1 -> S = 1
    np.testing.assert_allclose(d_maj, [0, 1, 0, 0])
    # min: Z=1, Y=1 -> S = 3
    np.testing.assert_allclose(d_min, [0, 0, 0, 1])
    bad = {"vertices": [dict(doc["vertices"][0], equation={"type": "spline"})]}
    with pytest.raises(ContractError, match="unknown equation type"):
        CausalGraph.from_dict(bad)
    missing = {"vertices": [{"name": "Z", "noise": {"values": [0], "probs": [1.0]}}]}
    with pytest.raises(ContractError, match="equation"):
        CausalGraph.from_dict(missing)


def test_noise_validation_and_sampler(rng):
    with pytest.raises(ContractError):
        Noise((0, 1), (0.5, 0.6))
    cont = Noise(sampler=lambda r, n: r.normal(size=n))
    assert cont.sample(rng, 7).shape == (7,)
    g = CausalGraph({"A": []}, {"A": lambda pv, e: e}, {"A": cont})
    with pytest.raises(ContractError):
        g.enumerate_noise()
