"""Two-stage poisoning detection for federated learning, with replayable proofs."""
from .dataset import (BackdoorSpec, LabeledDataset, PartitionSpec, generate_blobs, load_idx,
                      partition)
from .defense import (DefenseParams, DetectionReport, cross_client_detect, cross_round_check,
                      fedavg, krum_aggregate, two_stage_defense)
from .engine import Simulation, TrainConfig, evaluate, local_train
from .metrics import ConfusionTally, accumulate, cross_round_success_rate, modified_ppv
from .scenario import ScenarioConfig, compare_defenses, load_config, run_scenario
from .state import ClientUpdate, ReferenceCache
from .threat import ThreatPlan

__version__ = "0.1.0"
