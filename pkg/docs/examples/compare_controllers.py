from mixflow import ScenarioSpec, hyperparameters, run_episode
from mixflow.evaluation import make_controller
from mixflow.scenarios import STATIC_TL, build_graph

spec = ScenarioSpec(
    name="x4_demo",
    demand=1500.0,
    recipe={"kind": "intersection", "legs": 4, "in_lanes": 1, "out_lanes": 1, "leg_length": 200.0},
    tl_program=dict(STATIC_TL),
)
hyper = hyperparameters()
g = build_graph(spec)

for name in ("notl", "tl"):
    report = run_episode(spec, make_controller(name, spec, g, hyper), seed=1, steps=1000, g=g, hyper=hyper)
    print(
        f"{name:5s} throughput={report.throughput_e3:.1f}/1000 steps "
        f"wait={report.avg_wait:.2f} s collisions={report.collisions_total}"
    )
