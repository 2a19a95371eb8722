import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from crashmarl.errors import ConfigurationError, ParameterDomainError
from crashmarl.gridworld import (
    LEFT,
    RIGHT,
    STAY,
    UP,
    GridButtonsConfig,
    GridButtonsEnv,
    GridState,
    desk_layout,
    is_success,
    make_parametric_env,
    paper_layout,
    reset,
    step,
)

from oracles import bfs_team_plan_length, solo_plan_length


def test_paper_reset_observes_own_location_only():
    cfg = paper_layout()
    state, obs, gs = reset(cfg)
    assert obs.shape[0] == 2
    assert state.agent_positions == ((1, 1), (8, 8))
    assert state.button_touched == (False, False)
    assert state.step_index == 0
    env = GridButtonsEnv(cfg)
    # moving agent 1 leaves agent 0's observation untouched
    _, obs2, _, _, _ = env.step(state, [STAY, UP])
    np.testing.assert_array_equal(obs[0], obs2[0])
    assert not np.array_equal(obs[1], obs2[1])


def test_scaled_observation_is_two_coordinates():
    cfg = GridButtonsConfig(10, 10, 2, 2, ((1, 1), (8, 8)), ((8, 1), (1, 8)), 20, obs_encoding="scaled")
    _, obs, gs = reset(cfg)
    np.testing.assert_allclose(obs, [[1 / 9, 1 / 9], [8 / 9, 8 / 9]])
    assert gs.shape == (2 * 2 + 3 * 2,)


def test_onehot_observation_marks_row_and_column():
    cfg = desk_layout()
    env = GridButtonsEnv(cfg)
    _, obs, _ = env.reset()
    assert obs.shape == (2, 2 + 6 + 6)
    row = obs[1]
    assert row[2 + 5] == 1.0 and row[2 + 6 + 5] == 1.0
    assert row[2:].sum() == 2.0


def test_global_state_layout():
    env = GridButtonsEnv(paper_layout())
    state, _, gs = env.reset()
    assert gs.shape == (env.state_dim,)
    np.testing.assert_allclose(gs[:4], [1 / 9, 1 / 9, 8 / 9, 8 / 9])
    np.testing.assert_allclose(gs[4:8], [8 / 9, 1 / 9, 1 / 9, 8 / 9])
    np.testing.assert_array_equal(gs[8:], [0.0, 0.0])


def test_reset_is_deterministic():
    a = reset(desk_layout(), np.random.default_rng(1))
    b = reset(desk_layout(), np.random.default_rng(1))
    assert a[0] == b[0]
    np.testing.assert_array_equal(a[1], b[1])
    np.testing.assert_array_equal(a[2], b[2])


def test_step_reward_without_button():
    cfg = paper_layout()
    state, _, _ = reset(cfg)
    nxt, _, _, reward, done = step(cfg, state, [STAY, STAY])
    assert reward == -1.0
    assert nxt.agent_positions == state.agent_positions
    assert not done


def test_button_reward_stacks_on_step_reward():
    cfg = GridButtonsConfig(3, 1, 1, 2, ((0, 0),), ((1, 0), (2, 0)), 5)
    env = GridButtonsEnv(cfg)
    state, _, _ = env.reset()
    state, _, _, r1, d1 = env.step(state, [RIGHT])
    state, _, _, r2, d2 = env.step(state, [RIGHT])
    assert (r1, d1) == (4.0, False)
    assert (r2, d2) == (4.0, True)
    # episode-return oracle: step_reward * steps + button_reward * buttons
    assert r1 + r2 == -1.0 * 2 + 5.0 * 2


def test_two_buttons_same_step():
    cfg = desk_layout()
    env = GridButtonsEnv(cfg)
    state, _, _ = env.reset()
    state, _, _, r, done = env.step(state, [RIGHT, LEFT])
    state, _, _, r, done = env.step(state, [RIGHT, LEFT])
    assert r == -1.0 + 2 * 5.0
    assert done and env.is_success(state)


def test_budget_terminates():
    cfg = paper_layout()
    env = GridButtonsEnv(cfg)
    state, _, _ = env.reset()
    for t in range(20):
        state, _, _, _, done = env.step(state, [STAY, STAY])
        assert done == (t == 19)
    assert state.step_index == 20


def test_off_grid_move_is_noop():
    cfg = GridButtonsConfig(2, 2, 1, 1, ((0, 0),), ((1, 1),), 5)
    env = GridButtonsEnv(cfg)
    state, _, _ = env.reset()
    for a in (UP, LEFT):
        nxt, _, _, _, _ = env.step(state, [a])
        assert nxt.agent_positions == ((0, 0),)


@pytest.mark.parametrize("bad", [5, -1, 2.5])
def test_malformed_action(bad):
    env = GridButtonsEnv(paper_layout())
    state, _, _ = env.reset()
    with pytest.raises(ParameterDomainError):
        env.step(state, [bad, STAY])


def test_wrong_action_count():
    env = GridButtonsEnv(paper_layout())
    state, _, _ = env.reset()
    with pytest.raises(ParameterDomainError):
        env.step(state, [STAY])


def test_is_success():
    assert is_success(GridState(((0, 0),), (True, True)))
    assert not is_success(GridState(((0, 0),), (True, False)))
    assert is_success(GridState(((0, 0),), ()))


def test_parametric_is_deterministic():
    a = make_parametric_env(8, 8, 12, 30, seed=7)
    b = make_parametric_env(8, 8, 12, 30, seed=7)
    assert a == b
    cells = a.agent_starts + a.button_positions
    assert len(set(cells)) == 16


def test_parametric_paper_shape():
    cfg = make_parametric_env(2, 2, 10, 20, seed=3)
    env = GridButtonsEnv(cfg)
    assert (cfg.width, cfg.height, cfg.n_agents, cfg.n_buttons, cfg.max_steps) == (10, 10, 2, 2, 20)
    assert env.state_dim == GridButtonsEnv(paper_layout()).state_dim


def test_parametric_pigeonhole():
    with pytest.raises(ConfigurationError):
        make_parametric_env(100, 1, 1, 10, seed=0)


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(agent_starts=((0, 0),)),
        dict(button_positions=((9, 9),)),
        dict(max_steps=0),
        dict(agent_starts=((0, 0), (0, 5))),
    ],
)
def test_invalid_config(kwargs):
    base = dict(width=4, height=4, n_agents=2, n_buttons=1, agent_starts=((0, 0), (1, 1)),
                button_positions=((2, 2),), max_steps=5)
    base.update(kwargs)
    with pytest.raises(ConfigurationError):
        GridButtonsConfig(**base)


def test_config_dict_round_trip():
    cfg = make_parametric_env(3, 4, (5, 7), 12, seed=2)
    assert GridButtonsConfig.from_dict(cfg.to_dict()) == cfg


def test_optimal_play_beats_budget_on_paper_layout():
    cfg = paper_layout()
    best = bfs_team_plan_length(cfg.width, cfg.height, cfg.agent_starts, cfg.button_positions, max_depth=20)
    assert best == 7
    assert best < cfg.max_steps


def test_desk_layout_solo_completion_fits_budget():
    cfg = desk_layout()
    for start in cfg.agent_starts:
        assert solo_plan_length(cfg.width, cfg.height, start, cfg.button_positions) <= cfg.max_steps
    assert bfs_team_plan_length(cfg.width, cfg.height, cfg.agent_starts, cfg.button_positions) == 2


def test_paper_layout_solo_completion_exceeds_budget():
    cfg = paper_layout()
    for start in cfg.agent_starts:
        assert solo_plan_length(cfg.width, cfg.height, start, cfg.button_positions) == 21


@settings(max_examples=50, deadline=None)
@given(
    seed=st.integers(0, 10_000),
    n_agents=st.integers(1, 4),
    n_buttons=st.integers(1, 4),
    size=st.integers(3, 7),
    actions=st.lists(st.lists(st.integers(0, 4), min_size=4, max_size=4), min_size=1, max_size=40),
)
def test_rollout_invariants(seed, n_agents, n_buttons, size, actions):
    cfg = make_parametric_env(n_agents, n_buttons, size, 25, seed)
    env = GridButtonsEnv(cfg)
    state, _, _ = env.reset()
    total, steps, done = 0.0, 0, False
    prev_touched = state.button_touched
    for joint in actions:
        if done:
            break
        state, _, _, r, done = env.step(state, joint[:n_agents])
        total += r
        steps += 1
        assert all(0 <= x < size and 0 <= y < size for x, y in state.agent_positions)
        assert all(b or not a for a, b in zip(prev_touched, state.button_touched))
        prev_touched = state.button_touched
        assert state.step_index <= cfg.max_steps
    assert total == pytest.approx(cfg.step_reward * steps + cfg.button_reward * sum(state.button_touched))
