"""Every adversarial scenario, end to end.

Each run wires a full network (miners, backbones, producers, consumers,
meters), lets the attacker do its worst, and checks the protocol's
defenses as verdicts. The same seed always reproduces the same run.

Run:  python demos/04_adversarial_scenarios.py
"""

from gridtrade.sim import SCENARIOS, preset, run_scenario

for attack, blurb in SCENARIOS.items():
    result = run_scenario(preset(attack, seed=42))
    print(f"== {attack} ==")
    print(f"   {blurb}")
    for verdict in result.metrics.verdicts:
        print("  ", verdict.line())
    marker = "all defenses held" if result.passed else "SOMETHING BROKE"
    print(f"   -> {marker}\n")
