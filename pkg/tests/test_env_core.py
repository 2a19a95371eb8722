import itertools
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from crashmarl.env_core import (
    CrashBehavior,
    CrashMask,
    apply_crash_behavior,
    crash_cap,
    sample_crash_mask,
    sample_crash_mask_resampled,
    sample_crash_masks_resampled,
)
from crashmarl.errors import ParameterDomainError, SamplingFailureError
from crashmarl.gridworld import LEFT, STAY, UP

from oracles import binomial_halfwidth, total_variation, truncated_bernoulli


def test_alpha_zero_never_crashes():
    mask = sample_crash_mask(2, 0.0, np.random.default_rng(0))
    assert mask.bits == (False, False)


def test_alpha_one_always_crashes():
    mask = sample_crash_mask(3, 1.0, np.random.default_rng(0))
    assert mask.bits == (True, True, True)


def test_per_bit_frequency_matches_alpha():
    rng = np.random.default_rng(123)
    draws = np.array([sample_crash_mask(8, 0.1, rng).bits for _ in range(100_000)])
    freq = draws.mean(axis=0)
    # 0.005 is the stated tolerance; 4 sigma for 1e5 draws is ~0.0038
    assert binomial_halfwidth(0.1, 100_000) < 0.005
    assert np.all(np.abs(freq - 0.1) <= 0.005)


@pytest.mark.parametrize("alpha", [-0.1, 1.5, float("nan")])
def test_alpha_out_of_domain(alpha):
    with pytest.raises(ParameterDomainError):
        sample_crash_mask(3, alpha, np.random.default_rng(0))


def test_zero_agents_rejected():
    with pytest.raises(ParameterDomainError):
        sample_crash_mask(0, 0.5, np.random.default_rng(0))


def test_resampled_cap_for_eight_agents():
    rng = np.random.default_rng(5)
    assert crash_cap(8, 0.1) == 1
    assert all(sample_crash_mask_resampled(8, 0.1, rng).popcount <= 1 for _ in range(20_000))


def test_resampled_two_agents_half_is_uniform_over_allowed_masks():
    oracle = truncated_bernoulli(2, 0.5)
    assert oracle == pytest.approx({(False, False): 1 / 3, (True, False): 1 / 3, (False, True): 1 / 3})
    rng = np.random.default_rng(9)
    counts = Counter(sample_crash_mask_resampled(2, 0.5, rng).bits for _ in range(60_000))
    assert (True, True) not in counts
    for bits, p in oracle.items():
        assert counts[bits] / 60_000 == pytest.approx(p, abs=binomial_halfwidth(p, 60_000))


def test_resampled_alpha_zero_first_try():
    rng = np.random.default_rng(0)
    assert sample_crash_mask_resampled(4, 0.0, rng, max_tries=1).bits == (False,) * 4


def test_resampled_exhaustion_raises():
    # alpha = 1 forces popcount n > cap only if cap < n, which never happens;
    # a stub generator that always crashes everything exercises the guard.
    class AllCrash:
        def random(self, n):
            return np.zeros(n)

    with pytest.raises(SamplingFailureError):
        sample_crash_mask_resampled(4, 0.1, AllCrash(), max_tries=3)


def test_crash_cap_is_ceiling():
    assert crash_cap(2, 0.05) == 1
    assert crash_cap(4, 0.5) == 2
    assert crash_cap(10, 0.1) == 1
    assert crash_cap(3, 0.0) == 0


@pytest.mark.parametrize("n,alpha", [(2, 0.05), (3, 0.3), (4, 0.5)])
def test_resampled_distribution_total_variation(n, alpha):
    rng = np.random.default_rng(1000 + n)
    draws = 100_000
    counts = Counter(sample_crash_mask_resampled(n, alpha, rng).bits for _ in range(draws))
    empirical = {k: v / draws for k, v in counts.items()}
    assert total_variation(empirical, truncated_bernoulli(n, alpha)) <= 0.01


def test_identity_when_no_crash():
    rng = np.random.default_rng(0)
    for behavior in CrashBehavior:
        assert apply_crash_behavior(CrashMask((False, False)), behavior, [LEFT, UP], STAY, rng) == [LEFT, UP]


def test_freeze_replaces_crashed_action_with_noop():
    proposed = [LEFT, UP]
    out = apply_crash_behavior(CrashMask((True, False)), CrashBehavior.FREEZE, proposed, STAY, None)
    assert out == [STAY, UP]
    assert proposed == [LEFT, UP]


def test_random_behavior_is_uniform():
    rng = np.random.default_rng(3)
    mask = CrashMask((True,))
    counts = Counter(apply_crash_behavior(mask, CrashBehavior.RANDOM, [0], STAY, rng, 5)[0] for _ in range(10_000))
    assert set(counts) == set(range(5))
    for a in range(5):
        assert counts[a] / 10_000 == pytest.approx(0.2, abs=0.02)


def test_length_mismatch():
    with pytest.raises(ParameterDomainError):
        apply_crash_behavior(CrashMask((True, False)), CrashBehavior.FREEZE, [0], STAY, None)


def test_behavior_parse():
    assert CrashBehavior.parse("Freeze") is CrashBehavior.FREEZE
    with pytest.raises(ParameterDomainError):
        CrashBehavior.parse("explode")


def test_same_seed_same_masks():
    a = [sample_crash_mask_resampled(5, 0.3, r).bits for r in [np.random.default_rng(4)] for _ in range(50)]
    b = [sample_crash_mask_resampled(5, 0.3, r).bits for r in [np.random.default_rng(4)] for _ in range(50)]
    assert a == b


def test_mask_is_immutable():
    mask = CrashMask([1, 0])
    assert mask.bits == (True, False)
    with pytest.raises(Exception):
        mask.bits = (False, False)


@settings(max_examples=60, deadline=None)
@given(n=st.integers(1, 10), alpha=st.floats(0.0, 1.0), seed=st.integers(0, 2**31))
def test_resampling_cap_property(n, alpha, seed):
    rng = np.random.default_rng(seed)
    cap = crash_cap(n, alpha)
    for _ in range(20):
        mask = sample_crash_mask_resampled(n, alpha, rng)
        assert len(mask) == n
        assert mask.popcount <= cap


@settings(max_examples=60, deadline=None)
@given(bits=st.lists(st.booleans(), min_size=1, max_size=8), seed=st.integers(0, 2**31))
def test_crash_behavior_touches_only_crashed(bits, seed):
    rng = np.random.default_rng(seed)
    proposed = list(rng.integers(0, 5, size=len(bits)))
    mask = CrashMask(bits)
    for behavior in CrashBehavior:
        out = apply_crash_behavior(mask, behavior, proposed, STAY, rng)
        for i, crashed in enumerate(bits):
            if not crashed:
                assert out[i] == proposed[i]
            elif behavior is CrashBehavior.FREEZE:
                assert out[i] == STAY
            else:
                assert 0 <= out[i] < 5


def test_all_masks_enumerated_by_oracle_sum_to_one():
    for n, alpha in itertools.product([1, 2, 3, 4], [0.05, 0.1, 0.5, 0.9]):
        assert sum(truncated_bernoulli(n, alpha).values()) == pytest.approx(1.0)


@pytest.mark.parametrize("n,alpha", [(2, 0.5), (8, 0.1), (4, 0.05), (3, 0.9), (5, 0.0)])
def test_batch_resampler_matches_sequential_calls(n, alpha):
    batch = sample_crash_masks_resampled(n, alpha, np.random.default_rng(5), 2000)
    rng = np.random.default_rng(5)
    seq = np.array([sample_crash_mask_resampled(n, alpha, rng).as_array() for _ in range(2000)])
    np.testing.assert_array_equal(batch, seq)


def test_batch_resampler_gives_up():
    class AllCrash:
        def random(self, shape):
            return np.zeros(shape)

    with pytest.raises(SamplingFailureError):
        sample_crash_masks_resampled(4, 0.1, AllCrash(), 3, max_tries=100)
