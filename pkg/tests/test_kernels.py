import numpy as np
import pytest

import clustermd as cm
from clustermd.kernels import FLOPS_PER_PAIR
from helpers import fluid, max_rel_force_error, type_table, uniform_system


def _two_body(r, q1=0.0, q2=0.0, eps=0.996, sig=0.34, r_cut=0.9, r_list=1.0,
              shift=False):
    box = cm.SimBox([10.0, 10.0, 10.0])
    system = cm.ParticleSystem(
        positions=[[5.0, 5.0, 5.0], [5.0 + r, 5.0, 5.0]],
        velocities=np.zeros((2, 3)),
        masses=[39.948, 39.948],
        charges=[q1, q2],
        lj_type=[0, 0],
        box=box,
    )
    params = cm.NonbondedParams(
        r_cut=r_cut, r_list=r_list, lj_table=np.array([[[eps, sig]]]),
        shift_potential=shift,
    )
    return system, params


def test_pair_interaction_pure_coulomb_frozen_values():
    params = cm.NonbondedParams(
        r_cut=0.9, r_list=1.0, lj_table=np.array([[[0.0, 0.3]]])
    )
    energy, f_over_r = cm.pair_interaction(0.25, 0, 0, 1.0, -1.0, params)
    assert energy == pytest.approx(-277.870916, rel=1e-12)
    assert f_over_r == pytest.approx(-1111.483664, rel=1e-12)


def test_pair_interaction_lj_minimum_and_contact():
    sig = 0.3
    params = cm.NonbondedParams(
        r_cut=0.9, r_list=1.0, lj_table=np.array([[[1.0, sig]]])
    )
    r2_min = 2.0 ** (1.0 / 3.0) * sig * sig
    energy, f_over_r = cm.pair_interaction(r2_min, 0, 0, 0.0, 0.0, params)
    assert energy == pytest.approx(-1.0, rel=1e-12)
    assert abs(f_over_r) < 1e-12
    energy, f_over_r = cm.pair_interaction(sig * sig, 0, 0, 0.0, 0.0, params)
    assert energy == pytest.approx(0.0, abs=1e-12)
    assert f_over_r == pytest.approx(24.0 / (sig * sig), rel=1e-12)


def test_shift_zeroes_energy_at_cutoff_but_not_force():
    table = np.array([[[0.996, 0.34]]])
    plain = cm.NonbondedParams(r_cut=0.9, r_list=1.0, lj_table=table)
    shifted = cm.NonbondedParams(
        r_cut=0.9, r_list=1.0, lj_table=table, shift_potential=True
    )
    r2 = 0.9 * 0.9
    energy, _ = cm.pair_interaction(r2, 0, 0, 0.5, -0.5, shifted)
    assert energy == pytest.approx(0.0, abs=1e-12)
    _, f_plain = cm.pair_interaction(0.5, 0, 0, 0.5, -0.5, plain)
    _, f_shift = cm.pair_interaction(0.5, 0, 0, 0.5, -0.5, shifted)
    assert f_plain == f_shift


def test_pair_interaction_vectorized_matches_scalar():
    params = cm.NonbondedParams(
        r_cut=0.9, r_list=1.0, lj_table=type_table(2), shift_potential=True
    )
    rng = np.random.default_rng(60)
    r2 = rng.uniform(0.05, 0.81, 50)
    ti = rng.integers(0, 2, 50)
    tj = rng.integers(0, 2, 50)
    qi = rng.uniform(-0.3, 0.3, 50)
    qj = rng.uniform(-0.3, 0.3, 50)
    e_vec, f_vec = cm.pair_interaction(r2, ti, tj, qi, qj, params)
    for k in range(50):
        e, f = cm.pair_interaction(
            float(r2[k]), int(ti[k]), int(tj[k]), float(qi[k]), float(qj[k]), params
        )
        assert e == e_vec[k]
        assert f == f_vec[k]


def test_pair_interaction_zero_distance_raises():
    params = cm.NonbondedParams(r_cut=0.9, r_list=1.0, lj_table=[[[1.0, 0.3]]])
    with pytest.raises(cm.SingularityError):
        cm.pair_interaction(0.0, 0, 0, 0.0, 0.0, params)


def test_kernel_layout_default_j_unroll():
    assert cm.KernelLayout(m=4, n_lane=8).j_unroll == 2
    assert cm.KernelLayout(m=8, n_lane=4).j_unroll == 1
    assert cm.KernelLayout(m=1, n_lane=8).j_unroll == 8
    assert cm.KernelLayout(m=4, n_lane=8, j_unroll=3).j_unroll == 3
    with pytest.raises(cm.ParameterError):
        cm.KernelLayout(m=3, n_lane=4)
    with pytest.raises(cm.ParameterError):
        cm.KernelLayout(m=4, n_lane=5)


def test_kernel_matches_pair_interaction_on_dimer():
    system, params = _two_body(0.5, q1=0.2, q2=-0.2, shift=True)
    layout = cm.KernelLayout(m=1, n_lane=1)
    grid = cm.build_cluster_grid(system, 1)
    plist = cm.build_pair_list(grid, system.box, params.r_list)
    result = cm.compute_nonbonded_original(
        plist, grid, system.positions, system.charges, system.lj_type,
        params, system.box, layout,
    )
    e_lj, e_c, f_over_r = cm.lj_coulomb_terms(0.25, 0, 0, 0.2, -0.2, params)
    assert result.e_lj == pytest.approx(float(e_lj), rel=1e-14)
    assert result.e_coulomb == pytest.approx(float(e_c), rel=1e-14)
    # force on particle 0 points along -x toward/away from particle 1
    expected_fx = float(f_over_r) * (-0.5)
    assert result.forces[0, 0] == pytest.approx(expected_fx, rel=1e-14)
    np.testing.assert_array_equal(result.forces[0], -result.forces[1])


def test_beyond_cutoff_admitted_pairs_contribute_nothing():
    system, params = _two_body(0.95, r_cut=0.9, r_list=1.2)
    box = cm.SimBox([10.0, 10.0, 10.0])
    layout = cm.KernelLayout(m=1, n_lane=1)
    grid = cm.build_cluster_grid(system, 1)
    plist = cm.build_pair_list(grid, box, params.r_list)
    assert len(cm.admitted_pairs(plist, grid)) == 1
    result = cm.compute_nonbonded_original(
        plist, grid, system.positions, system.charges, system.lj_type,
        params, box, layout,
    )
    assert np.all(result.forces == 0.0)
    assert result.e_lj == 0.0
    assert result.e_coulomb == 0.0


def test_pair_exactly_at_cutoff_is_included():
    # 5.5 - 5.0 and 0.5 * 0.5 are exact in binary, so r2 == r_cut^2 exactly
    system, params = _two_body(0.5, r_cut=0.5, r_list=1.0)
    layout = cm.KernelLayout(m=1, n_lane=1)
    grid = cm.build_cluster_grid(system, 1)
    plist = cm.build_pair_list(grid, system.box, params.r_list)
    result = cm.compute_nonbonded_original(
        plist, grid, system.positions, system.charges, system.lj_type,
        params, system.box, layout,
    )
    expected, _ = cm.pair_interaction(0.5 * 0.5, 0, 0, 0.0, 0.0, params)
    assert result.e_lj == pytest.approx(float(expected), rel=1e-14)
    assert result.e_lj != 0.0


def test_overlapping_particles_raise_with_original_indices():
    positions = np.array([[1.0, 1.0, 1.0], [2.0, 2.0, 2.0], [1.0, 1.0, 1.0]])
    system = cm.ParticleSystem(
        positions=positions,
        velocities=np.zeros((3, 3)),
        masses=np.ones(3),
        charges=np.zeros(3),
        lj_type=np.zeros(3, dtype=int),
        box=cm.SimBox([10.0, 10.0, 10.0]),
    )
    params = cm.NonbondedParams(r_cut=0.9, r_list=1.0, lj_table=[[[1.0, 0.3]]])
    layout = cm.KernelLayout(m=4, n_lane=2)
    grid = cm.build_cluster_grid(system, 4)
    plist = cm.build_pair_list(grid, system.box, 1.0)
    with pytest.raises(cm.SingularityError) as info:
        cm.compute_nonbonded(
            plist, grid, system.positions, system.charges, system.lj_type,
            params, system.box, layout,
        )
    assert {info.value.i, info.value.j} == {0, 2}


def test_padding_slots_never_evaluated():
    # 5 particles with m=4 forces one padded cluster whose filler duplicates
    # a real particle; a singularity would fire if the mask were ignored.
    system = uniform_system(5, [3.0, 3.0, 3.0], seed=61)
    params = cm.NonbondedParams(r_cut=0.9, r_list=1.0, lj_table=[[[1.0, 0.3]]])
    layout = cm.KernelLayout(m=4, n_lane=4)
    grid = cm.build_cluster_grid(system, 4)
    assert grid.fill_mask.any()
    plist = cm.build_pair_list(grid, system.box, 1.0)
    result = cm.compute_nonbonded_original(
        plist, grid, system.positions, system.charges, system.lj_type,
        params, system.box, layout,
    )
    reference = cm.brute_force_nonbonded(system, params)
    assert max_rel_force_error(result.forces, reference.forces) < 1e-12


@pytest.mark.parametrize("supercluster", [1, 8])
def test_all_layouts_agree_with_each_other(supercluster):
    system, params = fluid("charged_fluid", 300, 22.0, 150.0, seed=62)
    reference = None
    for m in (1, 2, 4, 8):
        grid = cm.build_cluster_grid(system, m)
        plist = cm.build_pair_list(
            grid, system.box, params.r_list, supercluster_size=supercluster
        )
        plist = cm.prune_pair_list(plist, grid.clustered_positions, system.box)
        for n_lane in (1, 2, 4, 8):
            layout = cm.KernelLayout(m=m, n_lane=n_lane)
            result = cm.compute_nonbonded_original(
                plist, grid, system.positions, system.charges, system.lj_type,
                params, system.box, layout,
            )
            if reference is None:
                reference = result
                continue
            assert max_rel_force_error(result.forces, reference.forces) < 1e-13
            assert result.e_lj == pytest.approx(reference.e_lj, rel=1e-13)
            assert result.e_coulomb == pytest.approx(reference.e_coulomb, rel=1e-13)


def test_forces_sum_to_zero():
    system, params = fluid("lj_fluid", 500, 26.3, 120.0, seed=63)
    layout = cm.KernelLayout(m=4, n_lane=4)
    grid = cm.build_cluster_grid(system, 4)
    plist = cm.build_pair_list(grid, system.box, params.r_list)
    result = cm.compute_nonbonded_original(
        plist, grid, system.positions, system.charges, system.lj_type,
        params, system.box, layout,
    )
    scale = np.abs(result.forces).max()
    assert np.abs(result.forces.sum(axis=0)).max() < 1e-10 * scale


def test_flop_count_arithmetic():
    system = uniform_system(200, [4.0, 4.0, 4.0], seed=64)
    grid = cm.build_cluster_grid(system, 4)
    plist = cm.build_pair_list(grid, system.box, 1.0)
    layout = cm.KernelLayout(m=4, n_lane=8)  # j_unroll 2
    flops = cm.flop_count(plist, grid, layout, system.box, 0.9)

    expected_slots = 0
    for ci in range(plist.n_i_clusters):
        count = int(plist.offsets[ci + 1] - plist.offsets[ci])
        full, rem = divmod(count, layout.j_unroll)
        blocks = full * ((layout.j_unroll * 4 + 7) // 8)
        if rem:
            blocks += (rem * 4 + 7) // 8
        expected_slots += blocks * 8 * 4
    assert flops.total_flops == expected_slots * FLOPS_PER_PAIR

    stats = cm.interaction_stats(
        plist, grid, grid.clustered_positions, system.box, 0.9
    )
    assert flops.useful_flops == stats.n_within_cutoff * FLOPS_PER_PAIR
    assert 0 < flops.useful_flops <= flops.total_flops
    assert 0.0 < flops.ratio <= 1.0


def test_flop_total_never_below_admitted_work():
    system = uniform_system(300, [4.5, 4.5, 4.5], seed=65)
    grid = cm.build_cluster_grid(system, 4)
    plist = cm.build_pair_list(grid, system.box, 1.0)
    for n_lane in (1, 2, 4, 8):
        layout = cm.KernelLayout(m=4, n_lane=n_lane)
        flops = cm.flop_count(plist, grid, layout, system.box, 1.0)
        admitted = int(np.count_nonzero(plist.masks))
        assert flops.total_flops >= admitted * FLOPS_PER_PAIR


def test_chunked_evaluation_sums_to_full_evaluation():
    system, params = fluid("lj_fluid", 400, 26.3, 120.0, seed=66)
    layout = cm.KernelLayout(m=4, n_lane=4)
    grid = cm.build_cluster_grid(system, 4)
    plist = cm.build_pair_list(grid, system.box, params.r_list)
    full = cm.compute_nonbonded(
        plist, grid, system.positions, system.charges, system.lj_type,
        params, system.box, layout,
    )
    from clustermd.kernels import compute_nonbonded_into

    buf = np.zeros((grid.n_slots, 3))
    e_lj = e_c = 0.0
    cut = plist.n_i_clusters // 3
    for sel in (np.arange(cut), np.arange(cut, plist.n_i_clusters)):
        part_lj, part_c = compute_nonbonded_into(
            plist, grid, system.positions, system.charges, system.lj_type,
            params, system.box, layout, buf, i_sel=sel.astype(np.int64),
        )
        e_lj += part_lj
        e_c += part_c
    assert max_rel_force_error(buf, full.forces) < 1e-13
    assert e_lj == pytest.approx(full.e_lj, rel=1e-13)
