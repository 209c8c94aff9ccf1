"""Walk through one round of two-stage detection by hand.

Ten clients fit softmax regression on Gaussian blobs. We then poison three
of them with random noise and watch each stage react: stage 1 compares every
update with last round's references and raises a flag, stage 2 scores each
update against last round's average and drops the outliers.

    python demos/detect_one_round.py
"""
import numpy as np

from zkfl import DefenseParams, Simulation, TrainConfig, ThreatPlan, generate_blobs, partition
from zkfl.dataset import PartitionSpec
from zkfl.defense import two_stage_defense
from zkfl.engine import local_train
from zkfl.threat import apply_byzantine

data = generate_blobs(n_classes=10, n_features=50, n_samples=3000, seed=0, scale=0.25)
train, test = data.subset(np.arange(2250)), data.subset(np.arange(2250, 3000))
shards = partition(train, PartitionSpec(10), seed=0)
cfg = TrainConfig(n_clients=10, learning_rate=1.0, weight_decay=0.015)
sim = Simulation(cfg, shards, test, ThreatPlan())

print("warming up five clean rounds")
for r in sim.run(5):
    print(f"  round {r.round}: accuracy {r.accuracy:.3f}, flagged {r.report.attack_flag}")

honest = [local_train(sim.global_model, shard, cfg, client_seed=100 + cid, client_id=cid,
                      round=sim.tau) for cid, shard in enumerate(shards)]
params = DefenseParams(gamma=0.5, lam=0.5)

_, clean = two_stage_defense(honest, sim.cache, sim.tau, params)
print("\nclean round: stage 1 flag =", clean.attack_flag)
worst = min(min(s for s in pair if s is not None) for pair in clean.cross_round_scores.values())
print(f"  lowest cosine similarity to a reference: {worst:.3f} (gamma 0.5)")

rng = np.random.default_rng(1)
poisoned = [apply_byzantine(u, 1.0, rng) if u.client_id in (2, 5, 7) else u for u in honest]
survivors, rep = two_stage_defense(poisoned, sim.cache, sim.tau, params)
print("\npoisoned round (clients 2, 5, 7): stage 1 flag =", rep.attack_flag)
print(f"  evilness mean {rep.stats.mean:.3f}, std {rep.stats.std_dev:.3f}, bound {rep.bound:.3f}")
for cid, score in sorted(rep.evilness.items()):
    mark = "removed" if cid in rep.removed else ""
    print(f"  client {cid}: L2 to last average {score:7.3f} {mark}")
print("  survivors:", [u.client_id for u in survivors])
