import json

import numpy as np
import pytest

import clustermd as cm
from helpers import min_image_brute, uniform_system


def test_wrap_maps_into_box_and_is_idempotent():
    box = cm.SimBox([3.0, 4.0, 5.0])
    rng = np.random.default_rng(101)
    points = rng.uniform(-2.0, 3.0, (1000, 3)) * box.lengths
    wrapped = cm.wrap_position(points, box)
    assert np.all(wrapped >= 0.0)
    assert np.all(wrapped < box.lengths)
    again = cm.wrap_position(wrapped, box)
    assert np.array_equal(wrapped, again)


def test_wrap_single_vector_shape():
    box = cm.SimBox([2.0, 2.0, 2.0])
    out = cm.wrap_position([-0.5, 2.5, 1.0], box)
    assert out.shape == (3,)
    np.testing.assert_allclose(out, [1.5, 0.5, 1.0], rtol=0, atol=1e-15)


def test_wrap_tiny_negative_does_not_return_box_length():
    box = cm.SimBox([1.0, 1.0, 1.0])
    out = cm.wrap_position([-1e-20, 0.0, 0.0], box)
    assert np.all(out < 1.0)


def test_minimum_image_matches_enumeration_oracle():
    box = cm.SimBox([2.0, 3.0, 4.0])
    rng = np.random.default_rng(77)
    for _ in range(300):
        dr = rng.uniform(-6.0, 6.0, 3)
        got = cm.minimum_image(dr, box)
        best = min_image_brute(dr, box.lengths)
        # same squared norm; components in the canonical half-open interval
        assert np.dot(got, got) <= np.dot(best, best) + 1e-12
        assert np.all(got >= -0.5 * box.lengths)
        assert np.all(got < 0.5 * box.lengths)
        # differs from dr by whole boxes
        shifts = (dr - got) / box.lengths
        assert np.allclose(shifts, np.round(shifts), atol=1e-9)


def test_minimum_image_half_box_boundary_is_negative_side():
    box = cm.SimBox([2.0, 2.0, 2.0])
    out = cm.minimum_image([1.0, -1.0, 0.3], box)
    np.testing.assert_array_equal(out, [-1.0, -1.0, 0.3])


def test_minimum_image_batch_shape():
    box = cm.SimBox([2.0, 3.0, 4.0])
    dr = np.array([[2.1, 0.0, 0.0], [0.0, -2.9, 0.0]])
    out = cm.minimum_image(dr, box)
    assert out.shape == (2, 3)
    np.testing.assert_allclose(out, [[0.1, 0.0, 0.0], [0.0, 0.1, 0.0]], atol=1e-12)


def test_simbox_rejects_bad_shape():
    with pytest.raises(cm.ParameterError):
        cm.SimBox([1.0, 2.0])


def test_params_reject_bad_table_shape():
    with pytest.raises(cm.ParameterError):
        cm.NonbondedParams(r_cut=0.9, r_list=1.0, lj_table=np.ones((2, 3, 2)))
    with pytest.raises(cm.ParameterError):
        cm.NonbondedParams(r_cut=0.9, r_list=1.0, lj_table=np.ones((2, 2, 3)))


def test_system_arrays_are_read_only():
    system = uniform_system(10, [3.0, 3.0, 3.0], seed=1)
    with pytest.raises(ValueError):
        system.positions[0, 0] = 1.0
    with pytest.raises(Exception):
        system.box = cm.SimBox([1.0, 1.0, 1.0])


def test_validate_clean_system_is_empty():
    system = uniform_system(50, [4.0, 4.0, 4.0], seed=2)
    params = cm.NonbondedParams(
        r_cut=0.9, r_list=1.0, lj_table=np.array([[[1.0, 0.3]]])
    )
    assert cm.validate_system(system, params) == []


def test_validate_reports_mismatched_lengths():
    system = cm.ParticleSystem(
        positions=np.zeros((4, 3)),
        velocities=np.zeros((3, 3)),
        masses=np.ones(4),
        charges=np.zeros(4),
        lj_type=np.zeros(4, dtype=int),
        box=cm.SimBox([5.0, 5.0, 5.0]),
    )
    params = cm.NonbondedParams(r_cut=1.0, r_list=1.0, lj_table=[[[1.0, 0.3]]])
    problems = cm.validate_system(system, params)
    assert any("velocities" in p for p in problems)


def test_validate_reports_each_violation():
    system = cm.ParticleSystem(
        positions=np.zeros((2, 3)),
        velocities=np.zeros((2, 3)),
        masses=[1.0, 0.0],
        charges=[0.0, 0.0],
        lj_type=[0, 5],
        box=cm.SimBox([1.5, 5.0, 5.0]),
    )
    params = cm.NonbondedParams(
        r_cut=1.2,
        r_list=1.0,
        lj_table=np.array([[[1.0, 0.3], [1.0, 0.3]], [[2.0, 0.3], [1.0, -0.1]]]),
    )
    problems = "\n".join(cm.validate_system(system, params))
    assert "masses" in problems
    assert "lj_type" in problems
    assert "r_cut" in problems
    assert "symmetric" in problems
    assert "sigma" in problems
    assert "2*r_list" in problems


def test_save_load_round_trip_is_exact():
    system = uniform_system(17, [3.0, 4.0, 5.0], seed=3, charged=True, n_types=2)
    system = cm.ParticleSystem(
        positions=system.positions,
        velocities=np.random.default_rng(4).normal(size=(17, 3)),
        masses=system.masses,
        charges=system.charges,
        lj_type=system.lj_type,
        box=system.box,
    )
    table = np.array([[[1.0, 0.3], [0.9, 0.32]], [[0.9, 0.32], [0.8, 0.34]]])
    path = "/tmp/clustermd_test_system.json"
    cm.save_system(path, system, table)
    loaded, loaded_table = cm.load_system(path)
    assert np.array_equal(loaded.positions, system.positions)
    assert np.array_equal(loaded.velocities, system.velocities)
    assert np.array_equal(loaded.masses, system.masses)
    assert np.array_equal(loaded.charges, system.charges)
    assert np.array_equal(loaded.lj_type, system.lj_type)
    assert np.array_equal(loaded.box.lengths, system.box.lengths)
    assert np.array_equal(loaded_table, table)
    # a second save of the loaded system is byte-identical
    path2 = "/tmp/clustermd_test_system2.json"
    cm.save_system(path2, loaded, loaded_table)
    with open(path, "rb") as fh1, open(path2, "rb") as fh2:
        assert fh1.read() == fh2.read()


def test_load_missing_keys_raises():
    path = "/tmp/clustermd_bad_system.json"
    with open(path, "w") as fh:
        json.dump({"box": [1, 1, 1]}, fh)
    with pytest.raises(cm.ParameterError, match="missing keys"):
        cm.load_system(path)


def test_unit_constants():
    assert cm.COULOMB_CONSTANT == 138.935458
    assert cm.BOLTZMANN_KJ_MOL_K == 0.008314462618
