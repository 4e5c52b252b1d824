"""Generator/denoiser contracts, the simulated memorizing backend, and the
wire-protocol client for remote backends.

Real diffusion models are never linked into this package; they live behind
the HTTP protocol (see ``client`` and the adapter service that implements
the server side for actual models).
"""

from verbatim_audit.genbackend.contracts import (
    BackendCapabilities,
    CorpusStore,
    DenoiserContract,
    EmbedderContract,
    GeneratorContract,
)
from verbatim_audit.genbackend.ledger import CallLedger, LedgeredBackend
from verbatim_audit.genbackend.simulation import (
    SimulatedBackend,
    SimulationConfig,
    SimulationWorld,
    SimEmbedder,
)
from verbatim_audit.genbackend.client import RemoteBackend, remote_generate

__all__ = [
    "BackendCapabilities",
    "CorpusStore",
    "DenoiserContract",
    "EmbedderContract",
    "GeneratorContract",
    "CallLedger",
    "LedgeredBackend",
    "SimulatedBackend",
    "SimulationConfig",
    "SimulationWorld",
    "SimEmbedder",
    "RemoteBackend",
    "remote_generate",
]
