"""Defense comparison on the fixed-seed efficacy scenario (seed 0)."""
import dataclasses
from pathlib import Path

import pytest

from zkfl.scenario import compare_defenses, load_config
from zkfl.threat import ThreatPlan

CONFIG = Path(__file__).resolve().parent.parent / "configs" / "efficacy.yaml"
BASELINES = ["none", "krum", "m_krum", "rfa", "foolsgold"]
REWEIGHTING = {"foolsgold"}


@pytest.fixture(scope="module")
def byzantine_rows():
    rows = compare_defenses(load_config(CONFIG), ["two_stage"] + BASELINES, write=False)
    return {r["defense"]: r["final_accuracy"] for r in rows}


def test_benign_defenses_agree_within_one_point():
    cfg = dataclasses.replace(load_config(CONFIG), threat=ThreatPlan())
    rows = compare_defenses(cfg, ["two_stage"] + BASELINES, write=False)
    acc = {r["defense"]: r["final_accuracy"] for r in rows if r["defense"] not in REWEIGHTING}
    assert max(acc.values()) - min(acc.values()) <= 0.01, acc


def test_two_stage_at_least_every_baseline_under_byzantine_noise(byzantine_rows):
    best = max(BASELINES, key=byzantine_rows.get)
    assert byzantine_rows["two_stage"] >= byzantine_rows[best], byzantine_rows


def test_two_stage_beats_undefended_and_reweighting(byzantine_rows):
    assert byzantine_rows["two_stage"] > byzantine_rows["none"] + 0.15
    assert byzantine_rows["two_stage"] > byzantine_rows["foolsgold"]
