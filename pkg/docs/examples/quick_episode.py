from mixflow import build_intersection, hyperparameters, MixedTrafficEnv

# 4-leg, one lane each way, 150 m legs
g = build_intersection(4, 1, 1, 150.0)
env = MixedTrafficEnv(g, hyperparameters(), demand=2000.0, episode_steps=300)

obs = env.reset(seed=7, p_rv=0.5)
total = 0.0
while not env.done:
    # hold speed: zero acceleration for every RV in the control zone
    obs, reward, dones, info = env.step({vid: 0.0 for vid in obs})
    total += reward
    if info.collisions:
        print(f"step {env.state.step_index}: {info.collisions} collision(s)")

print(f"Return over 300 steps: {total:.2f}")
