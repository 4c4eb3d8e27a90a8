"""Surrogate-assisted search loop: archive, infill, persistence and resume."""
from __future__ import annotations

import hashlib
import itertools
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .errors import DivergenceError, FlatSearchError
from .nn.data import LabeledDataset, area_resize, make_rings, read_cifar_binary
from .nn.network import build_network, param_count
from .nn.train import TrainConfig, eval_error, train
from .nsga2 import fast_nondominated_sort, run_nsga2, survivor_order
from .objectives import EvalRecord, FomConfig, f_cp, gamma, record_objectives, robustness
from .search_space import Gene, NetworkConfig, SearchSpaceDef, decode, normalize, sample_uniform, validate
from .surrogate import adaptive_switch

log = logging.getLogger(__name__)

FAILED_ROBUSTNESS = 1.0

# Small-scale training settings that converge on the toy space in seconds per candidate.
TOY_TRAIN = TrainConfig(learning_rate=0.01, momentum=0.9, batch_size=32, weight_decay=5e-4,
                        epochs=30, optimizer="asam", rho=0.05)


@dataclass(frozen=True)
class DataConfig:
    """Where candidate data comes from: generated rings or CIFAR-style binary batches."""

    kind: str = "rings"
    n_train: int = 256
    n_val: int = 256
    n_test: int = 256
    seed: int = 0
    path: str | None = None  # directory with data_batch_*.bin / test_batch.bin
    label_noise: float = 0.0

    def __post_init__(self):
        if self.kind not in ("rings", "cifar"):
            raise ValueError("data kind must be 'rings' or 'cifar'")
        if self.kind == "cifar" and not self.path:
            raise ValueError("cifar data needs a path")
        if min(self.n_train, self.n_val, self.n_test) < 1:
            raise ValueError("every split needs at least one sample")


class DataBundle:
    """Train/val/test splits materialized per resolution and cached."""

    def __init__(self, cfg: DataConfig, in_channels: int = 3):
        self.cfg = cfg
        self.in_channels = in_channels
        self._cache: dict[tuple[str, int], LabeledDataset] = {}
        self._raw: dict[str, LabeledDataset] = {}

    def _cifar(self, split: str) -> LabeledDataset:
        if not self._raw:
            root = Path(self.cfg.path)
            trainval = read_cifar_binary(sorted(root.glob("data_batch_*.bin")))
            test = read_cifar_binary([root / "test_batch.bin"], split="test")
            n = len(trainval)
            if self.cfg.n_train + self.cfg.n_val > n:
                raise ValueError(f"only {n} training images for {self.cfg.n_train} + {self.cfg.n_val}")
            self._raw["train"] = trainval.subset(np.arange(self.cfg.n_train))
            self._raw["val"] = LabeledDataset(trainval.inputs[n - self.cfg.n_val:],
                                              trainval.labels[n - self.cfg.n_val:], "val")
            self._raw["test"] = test.subset(np.arange(min(self.cfg.n_test, len(test))))
        return self._raw[split]

    def get(self, split: str, resolution: int) -> LabeledDataset:
        key = (split, resolution)
        if key not in self._cache:
            if self.cfg.kind == "rings":
                n = {"train": self.cfg.n_train, "val": self.cfg.n_val, "test": self.cfg.n_test}[split]
                offset = ("train", "val", "test").index(split)
                noise = self.cfg.label_noise if split == "train" else 0.0
                self._cache[key] = make_rings(n, resolution, [self.cfg.seed, offset], split,
                                              channels=self.in_channels, label_noise=noise)
            else:
                raw = self._cifar(split)
                self._cache[key] = LabeledDataset(area_resize(raw.inputs, resolution), raw.labels, split)
        return self._cache[key]


@dataclass(frozen=True)
class EngineConfig:
    n_start: int = 16
    iterations: int = 5
    infill_per_iter: int = 4
    top_k: int = 3
    feasible_first: bool = True  # X° drawn from records within the parameter limit when any exist
    fom: FomConfig = field(default_factory=FomConfig)
    train: TrainConfig = TOY_TRAIN
    space: SearchSpaceDef = field(default_factory=SearchSpaceDef)
    data: DataConfig = field(default_factory=DataConfig)
    master_seed: int = 0
    nsga_pop_size: int = 40
    nsga_generations: int = 20
    robustness_subsample: int = 2048
    workers: int = 1
    archive_path: str | None = None
    log_path: str | None = None
    report_dir: str | None = None

    def __post_init__(self):
        if self.n_start < 8 or self.infill_per_iter < 1 or self.top_k < 1 or self.iterations < 0:
            raise ValueError("need n_start >= 8, infill_per_iter >= 1, top_k >= 1, iterations >= 0")
        if self.nsga_pop_size < 2 or self.nsga_generations < 0 or self.workers < 1:
            raise ValueError("invalid NSGA-II budget or worker count")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["space"] = self.space.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "EngineConfig":
        d = dict(d)
        nested = {"fom": FomConfig, "train": TrainConfig, "data": DataConfig, "space": SearchSpaceDef}
        base = cls()
        for key, kind in nested.items():
            if key in d:
                d[key] = kind(**{**asdict(getattr(base, key)), **d[key]})
        return cls(**d)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def load(cls, path: str | Path) -> "EngineConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    @classmethod
    def full_scale(cls, data: DataConfig, **overrides) -> "EngineConfig":
        """Full-size budget: 100 initial samples, 30 iterations of 8."""
        return cls(n_start=100, iterations=30, infill_per_iter=8, train=TrainConfig(),
                   space=SearchSpaceDef.full_size(), data=data, **overrides)


class Archive:
    """Append-only list of evaluated records, mirrored to a JSON-lines file when a path is set."""

    def __init__(self, path: str | Path | None = None):
        self.path = Path(path) if path else None
        self.records: list[EvalRecord] = []
        self.iteration = 0
        self._genes: set[Gene] = set()

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def __contains__(self, gene) -> bool:
        return tuple(gene) in self._genes

    def append(self, record: EvalRecord, persist: bool = True) -> None:
        if record.gene in self._genes:
            raise FlatSearchError(f"gene {record.gene} already archived")
        self.records.append(record)
        self._genes.add(record.gene)
        if persist and self.path is not None:
            with self.path.open("a") as fh:
                fh.write(record.to_json() + "\n")

    @staticmethod
    def read(path: str | Path) -> list[EvalRecord]:
        # an unterminated last line is a write cut short by a kill; it is not a record yet
        lines = Path(path).read_text().split("\n")[:-1]
        return [EvalRecord.from_json(line) for line in lines if line.strip()]

    @classmethod
    def load(cls, path: str | Path) -> "Archive":
        archive = cls()
        for rec in cls.read(path):
            archive.append(rec)
        archive.path = Path(path)
        return archive


class RunLog:
    def __init__(self, path: str | Path | None = None):
        self.path = Path(path) if path else None
        self.events: list[dict] = []
        if self.path is not None:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self.path.write_text("")

    def write(self, event: dict) -> None:
        self.events.append(event)
        log.info("%s", event)
        if self.path is not None:
            with self.path.open("a") as fh:
                fh.write(json.dumps(event, sort_keys=True) + "\n")


def _block_params(c_in: int, c_out: int, k: int, e: int) -> int:
    expand = c_in * c_in * e + c_in * e if e > 1 else 0
    return expand + c_in * e * c_out * k * k + c_out


def param_count_distribution(space: SearchSpaceDef) -> tuple[np.ndarray, np.ndarray]:
    """Exact distribution of the parameter count under uniform gene sampling.

    Stages contribute independently, so the total is a convolution of
    per-stage distributions (resolution does not change the count).
    """
    c0 = space.base_channels[0]
    values = np.array([space.in_channels * c0 * 9 + c0
                       + space.base_channels[-1] * space.num_classes + space.num_classes])
    probs = np.ones(1)
    c_in = c0
    pairs = [(k, e) for k in space.kernel_choices for e in space.expansion_choices]
    for c in space.base_channels:
        stage: dict[int, float] = {}
        for depth in space.depth_choices:
            p = 1.0 / (len(space.depth_choices) * len(pairs) ** depth)
            for combo in itertools.product(pairs, repeat=depth):
                n = sum(_block_params(c_in if b == 0 else c, c, k, e) for b, (k, e) in enumerate(combo))
                stage[n] = stage.get(n, 0.0) + p
        sv = np.fromiter(stage.keys(), dtype=np.int64)
        sp = np.fromiter(stage.values(), dtype=float)
        total, inverse = np.unique(np.add.outer(values, sv).ravel(), return_inverse=True)
        probs = np.bincount(inverse.ravel(), weights=np.outer(probs, sp).ravel())
        values = total
        c_in = c
    return values, probs


def median_param_count(space: SearchSpaceDef) -> int:
    """Lower median of F_P over the space (uniform genes)."""
    values, probs = param_count_distribution(space)
    return int(values[np.searchsorted(np.cumsum(probs), 0.5 - 1e-12)])


def candidate_seed(master_seed: int, gene: Sequence[int]) -> int:
    """Order-independent per-candidate seed derived from the master seed and the gene."""
    text = f"{master_seed}:{','.join(str(int(v)) for v in gene)}"
    return int.from_bytes(hashlib.sha256(text.encode()).digest()[:8], "big") >> 1


def train_candidate(gene: Sequence[int], cfg: EngineConfig, seed: int | None = None,
                    data: DataBundle | None = None,
                    train_cfg: TrainConfig | None = None) -> tuple[NetworkConfig, np.ndarray]:
    """Decode, initialize and train; raises DivergenceError on a non-finite loss."""
    gene = validate(cfg.space, gene)
    seed = candidate_seed(cfg.master_seed, gene) if seed is None else seed
    data = data or DataBundle(cfg.data, cfg.space.in_channels)
    config = decode(cfg.space, gene)
    tc = replace(train_cfg or cfg.train, rng_seed=seed)
    w = train(build_network(config, seed), config, data.get("train", config.input_resolution), tc)
    return config, w


def evaluate_candidate(gene: Sequence[int], cfg: EngineConfig, seed: int | None = None,
                       data: DataBundle | None = None) -> EvalRecord:
    gene = validate(cfg.space, gene)
    seed = candidate_seed(cfg.master_seed, gene) if seed is None else seed
    data = data or DataBundle(cfg.data, cfg.space.in_channels)
    started = time.perf_counter()
    config = decode(cfg.space, gene)
    common = dict(gene=gene, param_count=param_count(config), sigma=cfg.fom.sigma,
                  optimizer=cfg.train.optimizer, seed=seed)
    try:
        _, w = train_candidate(gene, cfg, seed, data)
    except DivergenceError as exc:
        log.warning("candidate %s diverged: %s", gene, exc)
        return EvalRecord(top1_accuracy=0.0, robustness=FAILED_ROBUSTNESS, failed=True,
                          wall_clock_seconds=time.perf_counter() - started, **common)
    res = config.input_resolution
    acc = 1.0 - eval_error(w, config, data.get("val", res))
    rob = robustness(w, config, data.get("train", res), cfg.fom.sigma, cfg.fom.samples, seed,
                     cfg.robustness_subsample)
    return EvalRecord(top1_accuracy=acc, robustness=rob,
                      wall_clock_seconds=time.perf_counter() - started, **common)


def _evaluate_in_worker(args) -> EvalRecord:
    gene, cfg = args
    return evaluate_candidate(gene, cfg)


def true_objectives(records: Sequence[EvalRecord], fom: FomConfig) -> np.ndarray:
    g = gamma(records)
    return np.array([record_objectives(r, fom, g) for r in records])


def select_top_k(records: Sequence[EvalRecord], fom: FomConfig, k: int,
                 feasible_first: bool = True) -> list[EvalRecord]:
    """Nondominated records under true (F_AR, F_CP), best F_AR first.

    F_CP grows with F_P for any penalty, so the penalty never changes Pareto
    ranks and the lowest-F_AR record sits on the front even when it is over
    the limit. With ``feasible_first`` the front is taken over records within
    the limit whenever there are any.
    """
    obj = true_objectives(records, fom)
    pool = np.arange(len(records))
    if feasible_first:
        feasible = pool[[r.params_millions <= fom.param_limit for r in records]]
        if len(feasible):
            pool = feasible
    front = [int(pool[i]) for i in fast_nondominated_sort(obj[pool])[0]]
    front.sort(key=lambda i: (obj[i, 0], obj[i, 1], i))
    return [records[i] for i in front[:k]]


class _Evaluator:
    """Evaluates genes in canonical order, replaying persisted records first."""

    def __init__(self, cfg: EngineConfig, archive: Archive, replay: list[EvalRecord]):
        self.cfg = cfg
        self.archive = archive
        self.replay = replay
        self.data = DataBundle(cfg.data, cfg.space.in_channels)
        self.replayed = 0

    def __call__(self, genes: list[Gene]) -> None:
        rest: list[Gene] = []
        for idx, gene in enumerate(genes):
            pos = len(self.archive)
            if pos >= len(self.replay):
                rest = genes[idx:]
                break
            rec = self.replay[pos]
            if rec.gene != gene:
                raise FlatSearchError(f"archive record {pos} has gene {rec.gene}, run expects {gene}; "
                                      "the archive was produced by a different configuration")
            self.archive.append(rec, persist=False)
            self.replayed += 1
        if not rest:
            return
        if self.cfg.workers > 1 and len(rest) > 1:
            with ProcessPoolExecutor(self.cfg.workers) as pool:
                records = list(pool.map(_evaluate_in_worker, [(g, self.cfg) for g in rest]))
        else:
            records = [evaluate_candidate(g, self.cfg, data=self.data) for g in rest]
        for rec in records:
            self.archive.append(rec)


def _surrogate_objectives(model, cfg: EngineConfig, genes: list[Gene], params: dict) -> np.ndarray:
    for g in genes:
        if g not in params:
            params[g] = param_count(decode(cfg.space, g)) / 1e6
    pred = np.atleast_1d(model.predict(np.array([normalize(cfg.space, g) for g in genes])))
    cp = [f_cp(params[g], cfg.fom.param_limit, cfg.fom.penalty) for g in genes]
    return np.column_stack([pred, cp])


def run(cfg: EngineConfig, resume: bool = False,
        on_iteration: Callable[[int, Archive], None] | None = None) -> tuple[list[EvalRecord], Archive]:
    """Full search. Returns the top-k nondominated records and the archive.

    With ``resume`` the persisted archive is replayed record by record; the
    loop is deterministic, so replay reproduces the interrupted run exactly.
    ``on_iteration`` is called after the initial sampling (k = 0) and after
    every search iteration.
    """
    replay: list[EvalRecord] = []
    path = Path(cfg.archive_path) if cfg.archive_path else None
    if path is not None:
        path.parent.mkdir(parents=True, exist_ok=True)
        if path.exists() and path.stat().st_size > 0:
            if not resume:
                raise FlatSearchError(f"{path} already holds records; resume or choose a new path")
            replay = Archive.read(path)
            path.write_text("".join(r.to_json() + "\n" for r in replay))
        else:
            path.write_text("")
    elif resume:
        raise FlatSearchError("resume needs an archive path")

    archive = Archive(path)
    runlog = RunLog(cfg.log_path)
    evaluate = _Evaluator(cfg, archive, replay)
    init_seed, *iter_seeds = np.random.SeedSequence(cfg.master_seed).spawn(1 + cfg.iterations)

    sampler = np.random.default_rng(init_seed)
    initial: list[Gene] = []
    skipped = 0
    for _ in range(cfg.n_start):
        g = sample_uniform(cfg.space, sampler.integers(2**63))
        if g in initial:
            skipped += 1
        else:
            initial.append(g)
    evaluate(initial)
    runlog.write({"event": "init", "archive_size": len(archive), "duplicates_skipped": skipped})
    if on_iteration is not None:
        on_iteration(0, archive)

    params: dict[Gene, float] = {}
    for k, seed in enumerate(iter_seeds, start=1):
        archive.iteration = k
        switch_seed, nsga_seed = seed.spawn(2)
        g_k = gamma(archive.records)
        model = adaptive_switch(archive.records, cfg.fom, g_k, cfg.space, switch_seed)

        true_obj = true_objectives(archive.records, cfg.fom)
        elite = [archive.records[i].gene for i in survivor_order(true_obj)[: cfg.nsga_pop_size // 2]]
        pop = run_nsga2(cfg.space, lambda genes: _surrogate_objectives(model, cfg, genes, params),
                        nsga_seed, cfg.nsga_pop_size, cfg.nsga_generations, initial=elite)
        fronts = fast_nondominated_sort(pop)
        chosen: list[Gene] = []
        for i in survivor_order(pop.objectives):
            g = pop.individuals[i].gene
            if g not in archive and g not in chosen:
                chosen.append(g)
            if len(chosen) == cfg.infill_per_iter:
                break
        evaluate(chosen)
        runlog.write({
            "event": "iteration", "iteration": k, "gamma": g_k, "surrogate": model.kind,
            "kendall_tau": model.cv_tau, "front_sizes": [len(f) for f in fronts],
            "infill": [list(g) for g in chosen], "shortfall": cfg.infill_per_iter - len(chosen),
            "archive_size": len(archive),
            "best_f_ar": float(true_objectives(archive.records, cfg.fom)[:, 0].min()),
        })
        if on_iteration is not None:
            on_iteration(k, archive)

    top = select_top_k(archive.records, cfg.fom, cfg.top_k, cfg.feasible_first)
    runlog.write({"event": "done", "archive_size": len(archive), "replayed": evaluate.replayed,
                  "top_k": [list(r.gene) for r in top]})
    return top, archive
