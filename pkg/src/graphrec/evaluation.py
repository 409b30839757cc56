"""Leave-one-out HR/ARHR evaluation and reconstruction statistics."""

from __future__ import annotations

import csv
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .data import RNG_ALGORITHM, FoldSplit, InteractionMatrix, split_loo_folds
from .errors import GraphRecError, SpecError
from .graph import METRICS, Laplacian, laplacian, similarity_graph
from .recommend import RankedList, itemknn_scores, popularity_scores, raw_scores, top_n
from .solver import ModelConfig, ReconstructedMatrix, solve

logger = logging.getLogger(__name__)

MODELS = ("graph", "raw", "popularity", "itemknn")


def _test_pairs(test) -> list[tuple[int, int]]:
    if isinstance(test, FoldSplit):
        return list(zip(test.test_users.tolist(), test.test_items.tolist()))
    return [(int(t[0]), int(t[1])) for t in test]


def _hit_ranks(lists: Mapping[int, RankedList], test) -> list[int]:
    ranks = []
    for u, i in _test_pairs(test):
        if u not in lists:
            raise GraphRecError(f"user {u} has a test entry but no ranked list")
        ranks.append(lists[u].rank_of(i))
    return ranks


def hit_rate(lists: Mapping[int, RankedList], test) -> float:
    """Fraction of test users whose held-out item appears in their list."""
    ranks = _hit_ranks(lists, test)
    if not ranks:
        return 0.0
    return sum(1 for r in ranks if r > 0) / len(ranks)


def arhr(lists: Mapping[int, RankedList], test) -> float:
    """Average reciprocal hit rank: mean of 1/position over test users (0 on a miss)."""
    ranks = _hit_ranks(lists, test)
    if not ranks:
        return 0.0
    return math.fsum(1.0 / r for r in ranks if r > 0) / len(ranks)


def truncate(lists: Mapping[int, RankedList], N: int) -> dict[int, RankedList]:
    return {u: RankedList(rl.user_index, rl.items[:N]) for u, rl in lists.items()}


@dataclass(frozen=True)
class ReconStats:
    """How well a dense reconstruction keeps the observed entries.

    ``density_Y`` counts entries with ``|y| > epsilon`` over the whole matrix;
    the other fields only look at positions stored in the training matrix.
    """

    density_Y: float
    recovered_fraction: float
    recovered_mean: float
    original_mean: float
    mae: float
    rmse: float
    epsilon: float


def reconstruction_stats(X_train: InteractionMatrix, Y, epsilon: float = 1e-8) -> ReconStats:
    Yd = Y.Y if isinstance(Y, ReconstructedMatrix) else np.asarray(Y, dtype=np.float64)
    if Yd.shape != X_train.shape:
        raise ValueError(f"Y has shape {Yd.shape}, training matrix has shape {X_train.shape}")
    users, items, x = X_train.triples()
    y = Yd[users, items]
    err = y - x
    nz = x.size
    return ReconStats(
        density_Y=float(np.count_nonzero(np.abs(Yd) > epsilon) / Yd.size),
        recovered_fraction=float(np.count_nonzero(np.abs(y) > epsilon) / nz) if nz else 0.0,
        recovered_mean=float(y.mean()) if nz else 0.0,
        original_mean=float(x.mean()) if nz else 0.0,
        mae=float(np.abs(err).mean()) if nz else 0.0,
        rmse=float(np.sqrt(np.mean(err**2))) if nz else 0.0,
        epsilon=epsilon,
    )


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything that determines one evaluation run."""

    model: str = "graph"
    alpha: float = 0.0
    beta: float = 0.0
    metric_users: str = "cosine"
    metric_items: str = "cosine"
    k_users: int | None = None
    k_items: int | None = None
    normalize: bool = False
    method: str = "auto"
    cg_tol: float = 1e-10
    cg_max_iter: int = 1000
    itemknn_k: int = 50
    n_folds: int = 5
    seed: int = 0
    ns: tuple[int, ...] = (10,)
    recon_stats: bool = False
    epsilon: float = 1e-8
    jobs: int = 1

    def __post_init__(self):
        if self.model not in MODELS:
            raise SpecError(f"model must be one of {MODELS}, got {self.model!r}")
        for name in ("metric_users", "metric_items"):
            if getattr(self, name) not in METRICS:
                raise SpecError(f"{name} must be one of {METRICS}")
        if not self.ns or min(self.ns) < 1:
            raise SpecError("ns must be a nonempty list of positive list lengths")
        if self.n_folds < 1:
            raise SpecError("n_folds must be >= 1")
        for name in ("k_users", "k_items"):
            v = getattr(self, name)
            if v is not None and v < 1:
                raise SpecError(f"{name} must be >= 1")
        object.__setattr__(self, "ns", tuple(sorted(set(int(n) for n in self.ns))))
        self.model_config()

    def model_config(self) -> ModelConfig:
        return ModelConfig(self.alpha, self.beta, self.method, self.cg_tol, self.cg_max_iter)


@dataclass
class FoldResult:
    fold_index: int
    n_users_evaluated: int
    hr: dict[int, float]
    arhr: dict[int, float]
    residual_fro: float | None = None
    method_used: str | None = None
    reconstruction: ReconStats | None = None


@dataclass
class EvalReport:
    """Per-fold and fold-averaged metrics plus the configuration that produced them."""

    config: ExperimentConfig
    per_fold: list[FoldResult]
    dataset: dict = field(default_factory=dict)

    @property
    def ns(self) -> tuple[int, ...]:
        return self.config.ns

    @property
    def mean_hr(self) -> dict[int, float]:
        return {n: math.fsum(f.hr[n] for f in self.per_fold) / len(self.per_fold) for n in self.ns}

    @property
    def mean_arhr(self) -> dict[int, float]:
        return {n: math.fsum(f.arhr[n] for f in self.per_fold) / len(self.per_fold) for n in self.ns}

    def to_dict(self) -> dict:
        folds = []
        for f in self.per_fold:
            d = asdict(f)
            d["hr"] = {str(n): v for n, v in f.hr.items()}
            d["arhr"] = {str(n): v for n, v in f.arhr.items()}
            folds.append(d)
        return {
            "config": asdict(self.config),
            "dataset": self.dataset,
            "rng": RNG_ALGORITHM,
            "N": list(self.ns),
            "mean_HR": {str(n): v for n, v in self.mean_hr.items()},
            "mean_ARHR": {str(n): v for n, v in self.mean_arhr.items()},
            "per_fold": folds,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def summary_rows(self, dataset_name: str = "") -> list[dict]:
        """Long-format rows: dataset, method, alpha, beta, metric_name, value."""
        rows = []
        for n in self.ns:
            for metric, val in (("HR", self.mean_hr[n]), ("ARHR", self.mean_arhr[n])):
                rows.append(
                    {
                        "dataset": dataset_name,
                        "method": self.config.model,
                        "alpha": self.config.alpha,
                        "beta": self.config.beta,
                        "metric_name": f"{metric}@{n}",
                        "value": val,
                    }
                )
        return rows


SUMMARY_COLUMNS = ["dataset", "method", "alpha", "beta", "metric_name", "value"]


def write_summary_csv(reports: Iterable[EvalReport], path: str | Path, dataset_name: str = "") -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=SUMMARY_COLUMNS, lineterminator="\n")
        w.writeheader()
        for r in reports:
            w.writerows(r.summary_rows(dataset_name))


@dataclass
class _FoldContext:
    fold: FoldSplit
    L_r: Laplacian | None
    L_c: Laplacian | None
    item_graph: object = None


def _needs(configs: Sequence[ExperimentConfig]) -> tuple[bool, bool]:
    graph = [c for c in configs if c.model == "graph"]
    return any(c.beta > 0 for c in graph), any(c.alpha > 0 for c in graph)


def _prepare(
    fold: FoldSplit, base: ExperimentConfig, need_r: bool, need_c: bool, need_knn: bool, spectral: bool
) -> _FoldContext:
    # graphs are always built on the training fold only
    X = fold.train
    L_r = L_c = None
    if need_r:
        S = similarity_graph(X, "users", base.metric_users, base.k_users, base.normalize)
        L_r = laplacian(S, cache_spectrum=spectral)
    if need_c:
        S = similarity_graph(X, "items", base.metric_items, base.k_items, base.normalize)
        L_c = laplacian(S, cache_spectrum=spectral)
    item_graph = None
    if need_knn:
        item_graph = similarity_graph(X, "items", base.metric_items, None, base.normalize)
    return _FoldContext(fold, L_r, L_c, item_graph)


def _score_fold(ctx: _FoldContext, cfg: ExperimentConfig) -> FoldResult:
    fold = ctx.fold
    X = fold.train
    rec = None
    if cfg.model == "graph":
        rec = solve(X, ctx.L_r, ctx.L_c, cfg.model_config())
        scores = rec.Y
    elif cfg.model == "raw":
        scores = raw_scores(X)
    elif cfg.model == "popularity":
        scores = popularity_scores(X)
    else:
        scores = itemknn_scores(X, ctx.item_graph, min(cfg.itemknn_k, X.n_items - 1))

    max_n = max(cfg.ns)
    lists = {int(u): top_n(scores, X, int(u), max_n) for u in fold.test_users}
    hr, ar = {}, {}
    for n in cfg.ns:
        cut = truncate(lists, n)
        hr[n] = hit_rate(cut, fold)
        ar[n] = arhr(cut, fold)
    stats = None
    if cfg.recon_stats and rec is not None:
        stats = reconstruction_stats(X, rec, cfg.epsilon)
    return FoldResult(
        fold_index=fold.fold_index,
        n_users_evaluated=fold.n_test,
        hr=hr,
        arhr=ar,
        residual_fro=rec.residual_fro if rec is not None else None,
        method_used=rec.method_used if rec is not None else None,
        reconstruction=stats,
    )


def _map(fn, items, jobs: int):
    if jobs <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def run_sweep(
    X: InteractionMatrix,
    configs: Sequence[ExperimentConfig],
    folds: Sequence[FoldSplit] | None = None,
) -> list[EvalReport]:
    """Evaluate several configurations on shared folds.

    All configurations must agree on everything that shapes the folds and
    graphs (seed, n_folds, metrics, k, normalization); only the model and
    the regularization weights may vary. Graphs and spectra are computed once
    per fold and reused.
    """
    if not configs:
        return []
    base = configs[0]
    shared = ("seed", "n_folds", "metric_users", "metric_items", "k_users", "k_items", "normalize", "method")
    for c in configs[1:]:
        for name in shared:
            if getattr(c, name) != getattr(base, name):
                raise SpecError(f"sweep configurations disagree on {name!r}")
    if folds is None:
        folds = split_loo_folds(X, base.n_folds, base.seed)
    need_r, need_c = _needs(configs)
    need_knn = any(c.model == "itemknn" for c in configs)
    m, n = X.shape
    spectral = base.method == "spectral" or (base.method == "auto" and max(m, n) <= ModelConfig().spectral_max_nodes)
    dataset = {"checksum": X.checksum(), **X.stats()}

    def per_fold(fold):
        try:
            ctx = _prepare(fold, base, need_r, need_c, need_knn, spectral)
            return [_score_fold(ctx, c) for c in configs]
        except GraphRecError as exc:
            raise type(exc)(f"fold {fold.fold_index}: {exc}") from exc

    by_fold = _map(per_fold, folds, base.jobs)
    return [EvalReport(c, [res[j] for res in by_fold], dataset) for j, c in enumerate(configs)]


def run_experiment(X: InteractionMatrix, config: ExperimentConfig, folds: Sequence[FoldSplit] | None = None) -> EvalReport:
    """Split, build graphs on each training fold, score, rank and average."""
    return run_sweep(X, [config], folds)[0]


def grid_configs(base: ExperimentConfig, alphas: Iterable[float], betas: Iterable[float]) -> list[ExperimentConfig]:
    return [replace(base, alpha=float(a), beta=float(b)) for a in alphas for b in betas]
