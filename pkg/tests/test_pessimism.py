import itertools
import math

import numpy as np
import pytest

from p3olab.errors import EmptyRegion
from p3olab.minimax import FeatureMap, LinearBridge, fit_chain
from p3olab.oracle import solve_value_bridge
from p3olab.pessimism import (CandidateGrid, build_region,
                              first_step_functional, make_grid, p3o,
                              pessimistic_value, xi_schedule)
from p3olab.policies import PolicySet, reactive, uniform_policy
from p3olab.simulate import generate


def test_xi_schedule_matches_formula():
    n, d, H = 1000, 4, 2
    xi = xi_schedule(n, d, H, M_B=1.0, M_G=1.0, L_b=1.0, L_pi=1.0, delta=0.1,
                     C1=1.0)
    expect = 1.0 * 1.0 * 1.0 * d * H * math.log(1 + 1.0 * 1.0 * H * n / 0.1) / n
    assert xi == pytest.approx(expect, rel=1e-12)


def test_xi_schedule_monotone_in_n():
    prev = None
    for n in (100, 200, 400, 800, 1600):
        xi = xi_schedule(n, 4, 2, 2.0, 2.0, 8.0, 4.0, 0.1, 1.0)
        if prev is not None:
            assert xi < prev
        prev = xi


def test_xi_schedule_zero_constant():
    assert xi_schedule(1000, 4, 2, 1.0, 1.0, 1.0, 1.0, 0.5, 0.0) == 0.0


def test_xi_schedule_rejects_bad_args():
    with pytest.raises(ValueError):
        xi_schedule(0, 4, 2, 1, 1, 1, 1, 0.1)
    with pytest.raises(ValueError):
        xi_schedule(10, 4, 2, 1, 1, 1, 1, 1.5)


def fitted_setup(benchmark, n=1500, seed=0, n_perturb=6, radius=1.0):
    inst = benchmark
    ds = generate(inst.model, inst.behavior, n, seed=seed)
    pol = inst.policy_set[4]
    fits = fit_chain(ds, pol, 1.0, inst.feature_map, inst.feature_map.L_g,
                     inst.feature_map.L_b, gamma=inst.model.gamma)
    grid = make_grid(fits, inst.feature_map, n_perturb=n_perturb,
                     radius=radius, seed=5)
    return inst, ds, pol, fits, grid


def test_region_infinite_xi_everything_feasible(benchmark):
    inst, ds, pol, fits, grid = fitted_setup(benchmark)
    region = build_region(ds, pol, grid, 1.0, np.inf, inst.feature_map,
                          gamma=inst.model.gamma)
    for feas in region.feasible:
        assert feas.all()


def test_region_zero_xi_keeps_column_minimizers(benchmark):
    inst, ds, pol, fits, grid = fitted_setup(benchmark)
    region = build_region(ds, pol, grid, 1.0, 0.0, inst.feature_map,
                          gamma=inst.model.gamma)
    for vals, feas in zip(region.pair_values, region.feasible):
        for j in range(vals.shape[1]):
            col = vals[:, j]
            assert feas[int(np.argmin(col)), j]
            assert np.all(col[feas[:, j]] <= col.min() + 1e-15)


def test_region_row_minimizer_always_feasible(benchmark):
    inst, ds, pol, fits, grid = fitted_setup(benchmark)
    for xi in (0.0, 0.01, 0.5):
        region = build_region(ds, pol, grid, 1.0, xi, inst.feature_map,
                              gamma=inst.model.gamma)
        for vals, feas in zip(region.pair_values, region.feasible):
            for j in range(vals.shape[1]):
                assert feas[int(np.argmin(vals[:, j])), j]


def test_pessimistic_value_singleton_grid(benchmark):
    inst, ds, pol, fits, _ = fitted_setup(benchmark)
    grid = CandidateGrid(layers=tuple((f.bridge,) for f in fits),
                         provenance="fitted-only")
    region = build_region(ds, pol, grid, 1.0, 1.0, inst.feature_map,
                          gamma=inst.model.gamma)
    pv = pessimistic_value(ds, region, grid, inst.feature_map)
    fvec = first_step_functional(ds, inst.feature_map)
    assert pv.value == pytest.approx(float(fits[0].bridge.theta @ fvec))
    assert pv.chain == (0, 0)


def test_pessimistic_value_zero_member_bound(benchmark):
    inst, ds, pol, fits, grid = fitted_setup(benchmark)
    region = build_region(ds, pol, grid, 1.0, np.inf, inst.feature_map,
                          gamma=inst.model.gamma)
    pv = pessimistic_value(ds, region, grid, inst.feature_map)
    assert pv.value <= 0.0 + 1e-12  # the zero bridge head is feasible


def _xi_at_quantile(ds, pol, grid, inst, q):
    region = build_region(ds, pol, grid, 1.0, 0.0, inst.feature_map,
                          gamma=inst.model.gamma)
    gaps = np.concatenate([
        (v - v.min(axis=0, keepdims=True)).ravel()
        for v in region.pair_values
    ])
    return float(np.quantile(gaps, q))


def brute_force_chain_min(region, grid, fvec):
    """Enumerate feasible chains exhaustively.

    Returns (min head value, witness chain), with the witness defined as the
    lexicographically smallest feasible chain among those whose head index
    is the smallest index attaining the minimum.
    """
    H = grid.horizon
    feasible_chains = []
    for chain in itertools.product(*(range(m) for m in grid.sizes())):
        ok = region.feasible[H - 1][chain[H - 1], 0]
        for h in range(H - 1):
            ok = ok and region.feasible[h][chain[h], chain[h + 1]]
        if ok:
            feasible_chains.append(chain)
    if not feasible_chains:
        return np.inf, None
    vals = {c[0]: float(grid.layers[0][c[0]].theta @ fvec)
            for c in feasible_chains}
    best = min(vals.values())
    head = min(i for i, v in vals.items() if v == best)
    chain = min(c for c in feasible_chains if c[0] == head)
    return best, chain


def test_pessimistic_value_matches_brute_force(benchmark):
    inst, ds, pol, fits, grid = fitted_setup(benchmark, n_perturb=4)
    fvec = first_step_functional(ds, inst.feature_map)
    for xi_q in (0.0, 0.3, 0.7, 1.0):
        xi = _xi_at_quantile(ds, pol, grid, inst, xi_q)
        region = build_region(ds, pol, grid, 1.0, xi, inst.feature_map,
                              gamma=inst.model.gamma)
        pv = pessimistic_value(ds, region, grid, inst.feature_map)
        best, chain = brute_force_chain_min(region, grid, fvec)
        assert pv.value == pytest.approx(best, abs=1e-12)
        assert pv.chain == chain


def test_pessimistic_value_raises_on_negative_xi(benchmark):
    inst, ds, pol, fits, grid = fitted_setup(benchmark)
    region = build_region(ds, pol, grid, 1.0, -1.0, inst.feature_map,
                          gamma=inst.model.gamma)
    with pytest.raises(EmptyRegion):
        pessimistic_value(ds, region, grid, inst.feature_map)


def test_pessimistic_value_monotone_in_xi(benchmark):
    inst, ds, pol, fits, grid = fitted_setup(benchmark)
    prev = np.inf
    for xi in (0.0, 0.005, 0.02, 0.1, 1.0, np.inf):
        region = build_region(ds, pol, grid, 1.0, xi, inst.feature_map,
                              gamma=inst.model.gamma)
        val = pessimistic_value(ds, region, grid, inst.feature_map).value
        assert val <= prev + 1e-12
        prev = val


def test_pessimism_upper_bounded_by_oracle_head(benchmark):
    inst = benchmark
    pol = inst.policy_set[4]
    vb = solve_value_bridge(inst.model, inst.behavior, pol)
    oracle_chain = [LinearBridge(inst.feature_map.theta_from_table(t), h)
                    for h, t in enumerate(vb.tables, start=1)]
    fvec_of = first_step_functional
    for seed in range(10):
        ds = generate(inst.model, inst.behavior, 2000, seed=seed)
        fits = fit_chain(ds, pol, 1.0, inst.feature_map, inst.feature_map.L_g,
                         inst.feature_map.L_b, gamma=inst.model.gamma)
        grid = make_grid(fits, inst.feature_map, n_perturb=8, radius=1.0,
                         seed=3)
        grid, idx = grid.with_injected(oracle_chain)
        xi = xi_schedule(ds.n, inst.feature_map.dim, inst.model.horizon,
                         inst.feature_map.M_B, inst.feature_map.M_G,
                         inst.feature_map.L_b, 4.0, 0.1, 1.0)
        region = build_region(ds, pol, grid, 1.0, xi, inst.feature_map,
                              gamma=inst.model.gamma)
        feas = region.feasible[1][idx[1], 0] and \
            region.feasible[0][idx[0], idx[1]]
        if not feas:
            continue
        pv = pessimistic_value(ds, region, grid, inst.feature_map)
        head = float(oracle_chain[0].theta @ fvec_of(ds, inst.feature_map))
        assert pv.value <= head + 1e-12


def test_p3o_singleton_policy_set(benchmark):
    inst = benchmark
    ds = generate(inst.model, inst.behavior, 800, seed=0)
    ps = PolicySet(history_class=reactive(),
                   members=(inst.policy_set[0],), provenance="one")
    rep = p3o(ds, ps, inst.feature_map, inst.config, gamma=inst.model.gamma)
    assert rep.selected == 0


def test_p3o_tie_break_lowest_index(benchmark):
    inst = benchmark
    ds = generate(inst.model, inst.behavior, 800, seed=0)
    pol = uniform_policy(reactive(), 2, 2)
    ps = PolicySet(history_class=reactive(), members=(pol, pol),
                   provenance="twins")
    rep = p3o(ds, ps, inst.feature_map, inst.config, gamma=inst.model.gamma)
    assert rep.evaluations[0].j_pess == rep.evaluations[1].j_pess
    assert rep.selected == 0


def test_p3o_records_policy_failures(benchmark):
    inst = benchmark
    ds = generate(inst.model, inst.behavior, 300, seed=0)
    # a feature map with all-zero primal features breaks the primal solve
    broken = FeatureMap(dim=4, phi_table=np.zeros((2, 2, 4)),
                        nu_table=inst.feature_map.nu_table, L_b=8.0, L_g=8.0,
                        M_B=2.0, M_G=2.0, name="broken")
    rep = p3o(ds, inst.policy_set, broken, inst.config,
              gamma=inst.model.gamma)
    assert all(e.j_pess == -math.inf for e in rep.evaluations)
    assert all(e.error for e in rep.evaluations)
    assert rep.selected == 0  # sentinel ties break to the lowest index


def test_p3o_report_pessimism_invariant(benchmark):
    inst = benchmark
    ds = generate(inst.model, inst.behavior, 3000, seed=4)
    rep = p3o(ds, inst.policy_set, inst.feature_map, inst.config,
              gamma=inst.model.gamma)
    fvec = first_step_functional(ds, inst.feature_map)
    for e in rep.evaluations:
        if e.error is None:
            fits = fit_chain(ds, inst.policy_set[e.index], 1.0,
                             inst.feature_map, inst.feature_map.L_g,
                             inst.feature_map.L_b, gamma=inst.model.gamma)
            head = float(fits[0].bridge.theta @ fvec)
            assert e.j_pess <= head + 1e-9
