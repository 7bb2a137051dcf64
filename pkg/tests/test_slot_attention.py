import numpy as np
import pytest
from hypothesis import given, strategies as st

from oracles import RefStream
from slotfilter import slot_attention as sa
from slotfilter.errors import DimensionError, UsageError
from slotfilter.rng import RNG


def params(d, seed=0):
    return sa.init_slot_params(d, RNG(seed))


def test_init_slots_zero_noise_copies_token():
    tok = np.array([0.3, -1.0, 2.0])
    s = sa.init_slots(tok, 3, 0.0, RNG(0)).data
    assert s.shape == (3, 3) and all(np.array_equal(row, tok) for row in s)


def test_init_slots_deterministic():
    tok = np.arange(4.0)
    a = sa.init_slots(tok, 5, 0.1, RNG(7)).data
    b = sa.init_slots(tok, 5, 0.1, RNG(7)).data
    assert np.array_equal(a, b)


def test_init_slots_zero_token_equals_scaled_stream():
    s = sa.init_slots(np.zeros(4), 2, 0.1, RNG(7)).data
    want = 0.1 * np.array(RefStream(7).normals(8)).reshape(2, 4)
    assert np.allclose(s, want, rtol=0, atol=1e-15)


def test_init_slots_rejects_zero_slots():
    with pytest.raises(UsageError):
        sa.init_slots(np.zeros(4), 0, 0.1, RNG(0))


def test_default_noise_is_tenth_of_rms():
    tok = np.array([3.0, 4.0, 0.0, 0.0])
    assert sa.default_noise_scale(tok) == pytest.approx(0.1 * np.sqrt(25 / 4))


@given(st.integers(0, 2**32), st.integers(2, 6), st.integers(1, 9))
def test_attention_columns_sum_to_one(seed, n, p):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((p, 8))
    slots = rng.standard_normal((n, 8))
    _, attn = sa.attention_step(slots, x, params(8, seed % 5))
    a = attn.data
    assert a.shape == (n, p)
    assert np.all(np.abs(a.sum(axis=0) - 1.0) < 1e-9)
    assert np.all((a >= 0) & (a <= 1))


def test_patch_permutation_equivariance(nprng):
    x = nprng.standard_normal((6, 8))
    slots = nprng.standard_normal((3, 8))
    pr = params(8)
    perm = nprng.permutation(6)
    s1, a1 = sa.attention_step(slots, x, pr)
    s2, a2 = sa.attention_step(slots, x[perm], pr)
    assert np.allclose(a2.data, a1.data[:, perm], atol=1e-12)
    assert np.allclose(s2.data, s1.data, atol=1e-9)


def test_identical_slots_stay_identical(nprng):
    tok = nprng.standard_normal(8)
    x = nprng.standard_normal((7, 8))
    state = sa.run(x, tok, n_slots=4, n_iters=5, params=params(8), rng=RNG(0), noise_scale=0.0,
                   keep_history=True)
    for attn in state.history:
        assert np.allclose(attn, attn[0], atol=1e-9)
    assert np.allclose(state.slots.data, state.slots.data[0], atol=1e-9)


def test_one_iteration_is_one_step(nprng):
    tok = nprng.standard_normal(8)
    x = nprng.standard_normal((5, 8))
    pr = params(8)
    state = sa.run(x, tok, 3, 1, pr, RNG(4), noise_scale=0.1)
    seeded = sa.init_slots(tok, 3, 0.1, RNG(4))
    new, attn = sa.attention_step(seeded, x, pr)
    assert np.array_equal(state.slots.data, new.data)
    assert np.array_equal(state.attention.data, attn.data)


@pytest.mark.parametrize("n_slots", [3, 5, 10])
@pytest.mark.parametrize("n_iters", [3, 5, 10])
def test_grid_runs_and_stays_normalized(n_slots, n_iters, nprng):
    x = nprng.standard_normal((9, 16))
    tok = nprng.standard_normal(16)
    state = sa.run(x, tok, n_slots, n_iters, params(16), RNG(1), keep_history=True)
    assert state.iterations_run == n_iters and len(state.history) == n_iters
    assert state.attention.shape == (n_slots, 9)
    assert np.all(np.abs(state.attention.data.sum(axis=0) - 1.0) < 1e-9)
    assert np.array_equal(state.history[-1], state.attention.data)


def test_batched_run_matches_single(nprng):
    x = nprng.standard_normal((3, 5, 8))
    tok = nprng.standard_normal((3, 8))
    pr = params(8)
    batch = sa.run(x, tok, 4, 3, pr, RNG(2), noise_scale=0.0)
    for i in range(3):
        one = sa.run(x[i], tok[i], 4, 3, pr, RNG(2), noise_scale=0.0)
        assert np.allclose(batch.slots.data[i], one.slots.data, atol=1e-12)
        assert np.allclose(batch.attention.data[i], one.attention.data, atol=1e-12)


def test_run_rejects_zero_iterations(nprng):
    with pytest.raises(UsageError):
        sa.run(nprng.standard_normal((4, 8)), np.ones(8), 3, 0, params(8), RNG(0))


def test_dimension_mismatch(nprng):
    with pytest.raises(DimensionError):
        sa.attention_step(nprng.standard_normal((3, 8)), nprng.standard_normal((4, 6)), params(8))


def test_named_round_trip():
    pr = params(6)
    back = sa.SlotAttentionParams.from_named(pr.named())
    assert back.named().keys() == pr.named().keys()
    assert all(back.named()[k] is pr.named()[k] for k in pr.named())
