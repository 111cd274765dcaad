"""Scenario runs as used by the command line tool, with CSV and markdown output.

Run: python3 demos/08_benchmark_suite.py
"""

from fedspar.bench import ScenarioConfig, default_scenarios, emit, run_scenario

small = [
    ScenarioConfig(n=300, m=4, d=40, s_star=4, s0=2, epsilon=eps, replications=5,
                   mode="homogeneous", seed=1)
    for eps in (0.8, 2.0)
]
rows = [run_scenario(cfg) for cfg in small]
print(emit(rows, "md"))
print(emit(rows, "csv"))

print("reference suite (desk mirrors):")
for cfg in default_scenarios():
    print(f"  {cfg.label:32s} -> n={cfg.n}, m={cfg.m}, d={cfg.d}")
print("\nthe same runs from the shell: fedspar run --config demos/desk_config.json --format md")
