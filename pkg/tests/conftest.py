import numpy as np
import pytest

from verbatim_audit.genbackend.simulation import SimulationConfig, SimulationWorld


@pytest.fixture(scope="session")
def small_world() -> SimulationWorld:
    """520-caption world with every plant kind present."""
    cfg = SimulationConfig(
        corpus_size=520,
        exact_fraction=0.05,
        template_fraction=0.05,
        retrieval_fraction=0.01,
        noise_seed=3,
    )
    return SimulationWorld(cfg)


@pytest.fixture(scope="session")
def small_captions(small_world):
    return {r.id: r for r in small_world.captions()}


def auc(positives, negatives) -> float:
    """Rank-based AUC (Mann-Whitney), ties counted half."""
    pos = np.asarray(positives, dtype=np.float64)
    neg = np.asarray(negatives, dtype=np.float64)
    wins = (pos[:, None] > neg[None, :]).sum() + 0.5 * (pos[:, None] == neg[None, :]).sum()
    return float(wins / (len(pos) * len(neg)))
