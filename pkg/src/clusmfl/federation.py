"""Round-based federated engine with modality-aware aggregation and baselines.

One round: broadcast the global model, (clusmfl) rebuild the cluster-center
pool, train every client locally, aggregate, evaluate on the held-out test
set. Clients may train on worker threads; every reduction runs in ascending
client order so results are independent of scheduling.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .clusterpool import ClusterPool, LocalClusters, assemble_global_pool, compute_local_clusters
from .data import PET, MRI, Instance
from .losses import LossWeights, cross_entropy, overall_loss, softmax
from .metrics import eval_from_scores
from .model import MultimodalModel, model_arrays, with_arrays, zero_fill_logits
from .numkit import AdamState, CosineSchedule, adam_init, adam_step, cosine_lr

CLUSMFL = "clusmfl"
FEDAVG = "fedavg"
FEDPROX = "fedprox"
METHODS = (CLUSMFL, FEDAVG, FEDPROX)


@dataclass
class ClientState:
    client_id: int
    dataset: list[Instance]
    model: MultimodalModel | None = None  # last local model, for inspection
    opt_state: AdamState | None = None
    n_total: int = 0
    n_pet: int = 0
    n_mri: int = 0

    def __post_init__(self):
        self.n_total = len(self.dataset)
        self.n_pet = sum(1 for inst in self.dataset if inst.has(PET))
        self.n_mri = sum(1 for inst in self.dataset if inst.has(MRI))


@dataclass
class ServerState:
    model: MultimodalModel
    schedule: CosineSchedule
    method: str = CLUSMFL
    use_maa: bool = True
    use_ctr: bool = True
    use_mc: bool = True
    round_index: int = 0  # completed rounds
    last_components: dict = field(default_factory=dict)
    last_pool: ClusterPool | None = None  # debug hook for pool dumps


@dataclass
class RoundMetrics:
    fold: int
    round: int
    wall_ms: int
    test_loss: float
    accuracy: float
    precision_weighted: float
    recall_macro: float
    f1_weighted: float
    auc_weighted: float


@dataclass
class TrainSettings:
    """Per-client training knobs, decoupled from experiment orchestration."""

    method: str = CLUSMFL
    use_ctr: bool = True
    use_mc: bool = True
    local_epochs: int = 10
    batch_size: int = 0  # 0 = full batch
    mu_prox: float = 0.01
    weights: LossWeights = field(default_factory=LossWeights)


@dataclass
class LocalUpdate:
    client_id: int
    arrays: list[np.ndarray]
    n_total: int
    n_pet: int
    n_mri: int
    components: dict[str, float]


def make_clients(datasets: list[list[Instance]]) -> list[ClientState]:
    return [ClientState(client_id=i, dataset=d) for i, d in enumerate(datasets)]


def local_train(
    client: ClientState,
    global_model: MultimodalModel,
    pool: ClusterPool | None,
    settings: TrainSettings,
    lr: float,
    rng: np.random.Generator,
) -> LocalUpdate:
    """Train a fresh copy of the global model on one client's data."""
    arrays = [a.copy() for a in model_arrays(global_model)]
    global_arrays = model_arrays(global_model)
    opt = adam_init(arrays)
    local = with_arrays(global_model, arrays)

    clus = settings.method == CLUSMFL
    lam1 = settings.weights.lambda1 if (clus and settings.use_ctr) else 0.0
    lam2 = settings.weights.lambda2 if (clus and settings.use_mc) else 0.0
    weights = LossWeights(lam1, lam2, settings.weights.tau)
    mu = settings.mu_prox if settings.method == FEDPROX else 0.0

    sums: dict[str, float] = {"ce": 0.0, "ctr": 0.0, "mc": 0.0}
    n_steps = 0
    for _ in range(settings.local_epochs):
        for batch in _batches(client.dataset, settings.batch_size, rng):
            loss, grads, comps = overall_loss(
                local, batch, pool, weights, use_ctr=lam1 > 0.0, use_mc=lam2 > 0.0
            )
            if mu > 0.0:
                for g, p, p0 in zip(grads, arrays, global_arrays):
                    g += mu * (p - p0)
            arrays, opt = adam_step(arrays, grads, opt, lr)
            local = with_arrays(local, arrays)
            for key, value in comps.items():
                sums[key] += value
            n_steps += 1

    client.model = local
    client.opt_state = opt
    components = {k: (v / n_steps if n_steps else 0.0) for k, v in sums.items()}
    return LocalUpdate(client.client_id, arrays, client.n_total, client.n_pet, client.n_mri, components)


def _batches(dataset: list[Instance], batch_size: int, rng: np.random.Generator):
    if batch_size <= 0 or batch_size >= len(dataset):
        yield dataset
        return
    order = rng.permutation(len(dataset))
    for start in range(0, len(dataset), batch_size):
        yield [dataset[i] for i in order[start : start + batch_size]]


def uniform_aggregate(updates: list[LocalUpdate], template: MultimodalModel) -> MultimodalModel:
    """Instance-count-weighted average of all modules."""
    total = sum(u.n_total for u in updates)
    if total == 0:
        raise ValueError("no client contributed any instances")
    arrays = _weighted_sum(
        [u.arrays for u in updates], [u.n_total / total for u in updates]
    )
    return with_arrays(template, arrays)


def maa_aggregate(updates: list[LocalUpdate], previous: MultimodalModel) -> MultimodalModel:
    """Per-module averaging: encoders weighted by per-modality counts,
    classifier by total counts. An encoder nobody holds data for keeps its
    previous global parameters."""
    total = sum(u.n_total for u in updates)
    if total == 0:
        raise ValueError("no client contributed any instances")
    total_pet = sum(u.n_pet for u in updates)
    total_mri = sum(u.n_mri for u in updates)

    n_pet_arrays = 2 * previous.pet_encoder.n_layers
    n_mri_arrays = 2 * previous.mri_encoder.n_layers
    prev_arrays = model_arrays(previous)

    def module_slice(start, count, weights_per_update):
        parts = [u.arrays[start : start + count] for u in updates]
        return _weighted_sum(parts, weights_per_update)

    if total_pet > 0:
        pet = module_slice(0, n_pet_arrays, [u.n_pet / total_pet for u in updates])
    else:
        pet = [a.copy() for a in prev_arrays[:n_pet_arrays]]
    if total_mri > 0:
        mri = module_slice(
            n_pet_arrays, n_mri_arrays, [u.n_mri / total_mri for u in updates]
        )
    else:
        mri = [a.copy() for a in prev_arrays[n_pet_arrays : n_pet_arrays + n_mri_arrays]]
    clf_start = n_pet_arrays + n_mri_arrays
    clf = module_slice(
        clf_start, len(prev_arrays) - clf_start, [u.n_total / total for u in updates]
    )
    return with_arrays(previous, pet + mri + clf)


def _weighted_sum(parts: list[list[np.ndarray]], weights: list[float]) -> list[np.ndarray]:
    out = [np.zeros_like(a) for a in parts[0]]
    for arrays, w in zip(parts, weights):
        if w == 0.0:
            continue  # absent contributors add exactly nothing
        for acc, a in zip(out, arrays):
            acc += w * a
    return out


def run_round(
    server: ServerState,
    clients: list[ClientState],
    test: list[Instance],
    fold: int = 0,
    workers: int = 1,
    wall_clock: bool = False,
    settings: TrainSettings | None = None,
    seed=0,
) -> RoundMetrics:
    """One communication round; mutates the server state and returns metrics."""
    if not clients:
        raise ValueError("no clients registered")
    if settings is None:
        settings = TrainSettings(
            method=server.method, use_ctr=server.use_ctr, use_mc=server.use_mc
        )
    started = time.perf_counter()
    active = [c for c in clients if c.dataset]
    if not active:
        raise ValueError("every client dataset is empty")
    round_index = server.round_index
    lr = cosine_lr(server.schedule, round_index)
    n_classes = server.model.n_classes

    pool: ClusterPool | None = None
    if server.method == CLUSMFL and (settings.use_ctr or settings.use_mc):
        local_clusters = []
        for client in clients:
            if client.dataset:
                local_clusters.append(
                    compute_local_clusters(server.model, client.dataset, n_classes)
                )
            else:
                local_clusters.append(LocalClusters())
        pool = assemble_global_pool(local_clusters, n_classes)

    def train(client: ClientState) -> LocalUpdate:
        rng = np.random.default_rng((_seed_int(seed), fold, round_index, client.client_id))
        return local_train(client, server.model, pool, settings, lr, rng)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool_exec:
            updates = list(pool_exec.map(train, active))
    else:
        updates = [train(c) for c in active]

    if server.method == CLUSMFL and server.use_maa:
        server.model = maa_aggregate(updates, server.model)
    else:
        server.model = uniform_aggregate(updates, server.model)
    server.round_index = round_index + 1
    server.last_components = _mean_components(updates)
    server.last_pool = pool

    logits = zero_fill_logits(server.model, test)
    labels = np.array([inst.label for inst in test], dtype=np.int64)
    test_loss, _ = cross_entropy(logits, labels)
    result = eval_from_scores(softmax(logits), labels)
    elapsed_ms = int(round((time.perf_counter() - started) * 1000.0)) if wall_clock else 0
    return RoundMetrics(
        fold=fold,
        round=server.round_index,
        wall_ms=elapsed_ms,
        test_loss=test_loss,
        accuracy=result.accuracy,
        precision_weighted=result.precision_weighted,
        recall_macro=result.recall_macro,
        f1_weighted=result.f1_weighted,
        auc_weighted=result.auc_weighted,
    )


def _mean_components(updates: list[LocalUpdate]) -> dict[str, float]:
    keys = updates[0].components.keys()
    return {k: float(np.mean([u.components[k] for u in updates])) for k in keys}


def _seed_int(seed) -> int:
    if isinstance(seed, (tuple, list)):
        return int(seed[0])
    return int(seed)
