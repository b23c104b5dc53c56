from mixflow import hyperparameters
from mixflow.training import train_speed_tracking

hyper = hyperparameters({"warmup": 200, "batch_size": 64, "hidden_layers": [64, 64], "learning_rate": 1e-3})
returns = train_speed_tracking(hyper, seed=0, episodes=300)

for start in range(0, len(returns), 50):
    window = returns[start:start + 50]
    print(f"episodes {start:3d}-{start + len(window) - 1:3d}: mean return {sum(window) / len(window):8.3f}")
