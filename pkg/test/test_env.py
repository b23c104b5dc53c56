import numpy as np
import pytest

from mixflow.config import hyperparameters
from mixflow.env import MixedTrafficEnv, SpeedTrackingEnv
from mixflow.errors import ValidationError
from mixflow.mdp import RewardWeights, padding
from mixflow.network import build_intersection, shortest_route
from mixflow.network.graph import connector_id
from mixflow.sim import RV, VehicleState


@pytest.fixture(scope="module")
def crossing():
    return build_intersection(4, 1, 1, 100.0)


@pytest.fixture
def env(crossing):
    return MixedTrafficEnv(crossing, hyperparameters(), demand=2000.0, episode_steps=60)


### MixedTrafficEnv ###
def test_step_before_reset(env):
    with pytest.raises(ValidationError):
        env.step({})
    with pytest.raises(ValidationError):
        env.observations()


def test_episode_loop(env):
    obs = env.reset(seed=1, p_rv=1.0)
    bound = RewardWeights().bound
    seen = 0
    steps = 0
    while not env.done:
        for vid, o in obs.items():
            assert env.state.vehicles[vid].kind == RV
            assert o.shape == (env.obs_dim,)
        actions = {vid: 0.0 for vid in obs}
        seen += len(actions)
        obs, r, dones, info = env.step(actions)
        steps += 1
        assert abs(r) <= bound
        assert set(info.next_obs) == set(actions)
        assert set(dones) == set(actions)
    assert steps == 60
    assert info.truncated
    assert seen > 0
    print(f"[SUCCESS] {seen} RV decisions over 60 steps")


def test_hv_only_traffic_has_no_agents(env):
    obs = env.reset(seed=1, p_rv=0.0)
    for _ in range(30):
        assert obs == {}
        obs, _, _, _ = env.step({})


def test_exited_vehicle_gets_padding(env, crossing):
    env.reset(seed=0, p_rv=1.0)
    cid = connector_id("leg00_in_0", "leg02_out_0")
    env.state.vehicles["veh900000"] = VehicleState(
        "veh900000",
        RV,
        shortest_route(crossing, "leg00_in", "leg02_out"),
        0,
        cid,
        crossing.connectors[cid].lane.length - 1.0,
        10.0,
    )
    _, _, dones, info = env.step({"veh900000": 3.0})
    assert "veh900000" not in env.state.vehicles
    np.testing.assert_array_equal(info.next_obs["veh900000"], padding(env.obs_cfg))
    assert dones["veh900000"] is False
    assert info.exited >= 1


def test_only_rvs_in_the_control_zone_act(crossing):
    env = MixedTrafficEnv(crossing, hyperparameters({"control_zone_radius": 50.0}), demand=0.0, episode_steps=10)
    env.reset(seed=0, p_rv=1.0)
    cid = connector_id("leg00_in_0", "leg02_out_0")
    inside = VehicleState(
        "veh900001", RV, shortest_route(crossing, "leg00_in", "leg02_out"), 0, cid,
        crossing.connectors[cid].lane.length / 2, 5.0,
    )
    outside = VehicleState(
        "veh900002", RV, shortest_route(crossing, "leg01_in", "leg03_out"), 0, "leg01_in_0", 0.0, 5.0,
    )
    env.state.vehicles[inside.id] = inside
    env.state.vehicles[outside.id] = outside

    obs = env.observations()
    assert sorted(obs) == ["veh900001"]
    assert env.state.live_rvs() == ["veh900001", "veh900002"]
    # one transition per acting RV: the one far up its approach drives by IDM
    _, _, dones, info = env.step({vid: 0.0 for vid in obs})
    assert set(dones) == set(info.next_obs) == {"veh900001"}
    assert env.state.vehicles["veh900002"].speed > 5.0

    # a command for an RV outside the zone does not override IDM
    before = env.state.vehicles["veh900002"].speed
    env.step({"veh900002": -10.0})
    assert env.state.vehicles["veh900002"].speed > before


def test_reset_is_reproducible(crossing):
    def run():
        env = MixedTrafficEnv(crossing, hyperparameters(), demand=1500.0, episode_steps=40)
        obs = env.reset(seed=4, p_rv=0.5)
        rewards = []
        while not env.done:
            obs, r, _, _ = env.step({vid: 1.0 for vid in obs})
            rewards.append(r)
        return rewards, sorted(env.state.vehicles)

    assert run() == run()


### SpeedTrackingEnv ###
def test_speed_tracking_dynamics():
    env = SpeedTrackingEnv()
    obs = env.reset(np.random.default_rng(0))
    assert 0.0 <= env.v <= SpeedTrackingEnv.SPEED_LIMIT
    assert obs.shape == (60,)
    assert obs[1] == pytest.approx(25.0 / 50.0)
    env.v = 4.0
    obs, r, terminal, truncated = env.step(100.0)
    assert env.v == 14.0
    assert r == pytest.approx(-0.4)
    assert obs[3] == pytest.approx((10.0 - 14.0) / 20.0)
    assert not terminal and not truncated


def test_speed_tracking_episode_ends():
    env = SpeedTrackingEnv(max_steps=20)
    env.reset(np.random.default_rng(1))
    env.v = 20.0
    ends = [env.step(0.0)[2] for _ in range(10)]
    assert ends[-1] is True
    env.reset(np.random.default_rng(1))
    env.v = 0.0
    truncs = [env.step(0.0)[3] for _ in range(20)]
    assert truncs.count(True) == 1 and truncs[-1]
