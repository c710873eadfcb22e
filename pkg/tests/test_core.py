import numpy as np
import pytest

from tiermarket.core import (
    ProblemInstance,
    allocation_value,
    capped_allocation,
    completion_tiers,
    completion_times,
    derive_values,
    instance_from_dict,
    instance_to_dict,
    marginal_utilities,
    realized_welfare,
    utilities_from_marginals,
    validate_instance,
)


def test_toy_derived_values(toy):
    dv = derive_values(toy)
    assert np.allclose(dv.marginal, [[3, 0, 0], [1.5, 1.5, 1], [0, 0, 2]])
    assert np.allclose(dv.per_function, toy.utilities / 10)


def test_marginals_round_trip(rng):
    U = np.sort(rng.uniform(0, 5, size=(6, 4)), axis=1)[:, ::-1]
    assert np.allclose(utilities_from_marginals(marginal_utilities(U)), U)


def test_instance_is_read_only(toy):
    with pytest.raises(ValueError):
        toy.utilities[0, 0] = 9.0


def test_shape_mismatch_rejected():
    with pytest.raises(ValueError):
        ProblemInstance(np.ones((2, 3)), [1, 1, 1], [1, 1, 1])


def test_validation_messages():
    inst = ProblemInstance([[1.0, 2.0]], [3], [4, 0])
    msgs = validate_instance(inst).violations
    assert "non-monotone utility, user 0" in msgs
    assert "nonpositive capacity, tier 1" in msgs
    assert not validate_instance(inst)


def test_completion_and_welfare(toy):
    x = np.diag([10.0, 10.0, 10.0])
    prof = completion_times(toy, x)
    assert prof.completion_tier.tolist() == [1, 2, 3]
    assert realized_welfare(toy, x) == pytest.approx(3 + 2.5 + 2)


def test_unfinished_job_gets_nothing(toy):
    x = np.zeros((3, 3))
    x[0, 0] = 9.0
    assert completion_tiers(x, toy.job_sizes).tolist() == [3, 3, 3]
    assert completion_times(toy, x).completion_tier.tolist() == [4, 4, 4]
    assert realized_welfare(toy, x) == 0.0


def test_capped_allocation_drops_surplus(toy):
    x = np.array([[8.0, 6.0, 1.0], [0, 0, 0], [0, 0, 0]])
    capped = capped_allocation(toy, x)
    assert capped[0].tolist() == [8.0, 2.0, 0.0]
    assert allocation_value(toy, x) == pytest.approx(0.3 * 8)


def test_dict_round_trip(toy):
    again = instance_from_dict(instance_to_dict(toy))
    assert np.array_equal(again.utilities, toy.utilities)
    assert np.array_equal(again.job_sizes, toy.job_sizes)
    assert np.array_equal(again.capacities, toy.capacities)
