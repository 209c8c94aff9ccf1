"""Run the efficacy scenario once per defense and print the table.

Four of ten clients send random noise every round. Plain averaging loses
about a quarter of its accuracy; the robust aggregators and the two-stage
defense stay near the clean baseline, and Foolsgold, which down-weights
look-alike clients, suffers because the honest clients look alike here.

    python demos/compare_defenses.py
"""
from zkfl.scenario import compare_defenses, load_config

cfg = load_config("configs/efficacy.yaml")
rows = compare_defenses(cfg, ["none", "two_stage", "krum", "m_krum", "rfa", "foolsgold"],
                        write=False)
print(f"{'defense':<12}{'accuracy':>10}")
for r in rows:
    print(f"{r['defense']:<12}{r['final_accuracy']:>10.4f}")
