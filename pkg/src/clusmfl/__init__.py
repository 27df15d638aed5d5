"""Simulator of multimodal federated learning under modality incompleteness.

Implements the clusmfl method (first-neighbor cluster-center pools,
contrastive feature alignment, cluster-proxy modality completion and
modality-aware aggregation) next to FedAvg/FedProx baselines, with a
synthetic region-feature data generator and an experiment harness.
"""

__version__ = "0.1.0"
