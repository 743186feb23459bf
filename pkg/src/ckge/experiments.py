"""Shared setup for the forgetting and ablation experiments on synthetic data."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

from ckge.config import Hyperparameters, RunConfig
from ckge.pipeline import run_continual
from ckge.synthetic import SyntheticSpec, generate_synthetic_sequence

# name -> (disable_bayes, disable_fcc)
VARIANTS = {
    "full": (False, False),
    "no_bayes": (True, False),
    "no_fcc": (False, True),
    "fine_tune": (True, True),
}


def forgetting_config(seed: int, disable_bayes: bool = False, disable_fcc: bool = False, **hp) -> RunConfig:
    """Three growing snapshots, 500 entities, 20 relations, d=32, 100 epochs per snapshot."""
    spec = SyntheticSpec(n_snapshots=3, n_entities=500, n_relations=20, n_triples=6000, seed=seed)
    hp = {"dim": 32, "epochs": 100, **hp}
    return RunConfig(synthetic=spec, hp=Hyperparameters(seed=seed, **hp),
                     disable_bayes=disable_bayes, disable_fcc=disable_fcc)


@dataclass
class VariantOutcome:
    seed: int
    variant: str
    first_snapshot_mrr: float  # snapshot-0 test MRR after the final snapshot
    averaged_mrr: float  # mean over all test sets after the final snapshot
    seconds: float
    per_snapshot: list[float] = field(default_factory=list)


def run_variants(seed: int, variants=VARIANTS, **hp) -> dict[str, VariantOutcome]:
    """Run each ablation variant on the same generated sequence."""
    seq = None
    out = {}
    for name, (no_bayes, no_fcc) in variants.items():
        cfg = forgetting_config(seed, no_bayes, no_fcc, **hp)
        if seq is None:
            seq = generate_synthetic_sequence(cfg.synthetic)
        start = time.perf_counter()
        rep = run_continual(cfg, seq).report
        last = len(seq) - 1
        out[name] = VariantOutcome(
            seed, name, rep.entries[(last, 0)]["MRR"], rep.averaged(last)["MRR"],
            time.perf_counter() - start, [rep.averaged(i)["MRR"] for i in range(last + 1)],
        )
    return out
