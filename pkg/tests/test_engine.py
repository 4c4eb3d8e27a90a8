import itertools
import json
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from flatsearch.engine import (Archive, DataBundle, DataConfig, EngineConfig, candidate_seed,
                               evaluate_candidate, median_param_count, param_count_distribution, run,
                               select_top_k, true_objectives)
from flatsearch.errors import FlatSearchError
from flatsearch.nn import LabeledDataset, param_count, write_cifar_binary
from flatsearch.nn.train import TrainConfig
from flatsearch.nsga2 import dominates
from flatsearch.objectives import EvalRecord, FomConfig
from flatsearch.search_space import SearchSpaceDef, decode, sample_uniform


def quick_config(tmp_path=None, **overrides):
    paths = {}
    if tmp_path is not None:
        paths = dict(archive_path=str(tmp_path / "archive.jsonl"), log_path=str(tmp_path / "log.jsonl"))
    base = EngineConfig(
        n_start=8, iterations=2, infill_per_iter=2, top_k=3,
        train=TrainConfig(learning_rate=0.01, batch_size=16, epochs=1, optimizer="asam", rho=0.05),
        data=DataConfig(n_train=24, n_val=24, n_test=24),
        fom=FomConfig(samples=2),
        nsga_pop_size=10, nsga_generations=2, **paths)
    return replace(base, **overrides)


def strip_clock(records):
    return [replace(r, wall_clock_seconds=0.0) for r in records]


def test_config_json_round_trip(tmp_path):
    cfg = quick_config(tmp_path)
    path = tmp_path / "cfg.json"
    path.write_text(cfg.to_json())
    assert EngineConfig.load(path) == cfg


def test_config_partial_dict_keeps_defaults():
    cfg = EngineConfig.from_dict({"n_start": 12, "fom": {"alpha": 1.0}, "train": {"optimizer": "sgd"}})
    assert cfg.n_start == 12 and cfg.fom.alpha == 1.0 and cfg.fom.sigma == 0.05
    assert cfg.train.optimizer == "sgd" and cfg.train.learning_rate == EngineConfig().train.learning_rate


@pytest.mark.parametrize("kwargs", [dict(n_start=7), dict(infill_per_iter=0), dict(top_k=0)])
def test_config_invariants(kwargs):
    with pytest.raises(ValueError):
        EngineConfig(**kwargs)


def test_full_scale_budget():
    cfg = EngineConfig.full_scale(DataConfig(kind="cifar", path="/data"))
    assert (cfg.n_start, cfg.iterations, cfg.infill_per_iter) == (100, 30, 8)
    assert cfg.train.learning_rate == 0.1 and cfg.train.rho == 2.0


def test_candidate_seed_depends_on_master_and_gene():
    g = sample_uniform(SearchSpaceDef(), 0)
    assert candidate_seed(0, g) == candidate_seed(0, list(g))
    assert candidate_seed(0, g) != candidate_seed(1, g)
    assert 0 <= candidate_seed(5, g) < 2**63


def test_exact_param_distribution_matches_enumeration():
    space = SearchSpaceDef(resolution_choices=(8,), stage_count=2, depth_choices=(1, 2),
                           kernel_choices=(3, 5), expansion_choices=(1, 2, 4), base_channels=(2, 3))
    counts = [param_count(decode(space, g))
              for g in itertools.product(*[range(n) for n in space.domain_sizes()])]
    values, probs = param_count_distribution(space)
    u, c = np.unique(counts, return_counts=True)
    assert np.array_equal(values, u) and np.allclose(probs, c / len(counts))
    assert median_param_count(space) == int(np.sort(counts)[(len(counts) - 1) // 2])


def test_evaluate_candidate_record():
    cfg = quick_config()
    gene = sample_uniform(cfg.space, 1)
    rec = evaluate_candidate(gene, cfg)
    assert rec.gene == gene and not rec.failed
    assert rec.param_count == param_count(decode(cfg.space, gene))
    assert rec.seed == candidate_seed(cfg.master_seed, gene)
    assert 0.0 <= rec.top1_accuracy <= 1.0 and rec.sigma == cfg.fom.sigma
    assert strip_clock([rec]) == strip_clock([evaluate_candidate(gene, cfg)])


def test_diverging_candidate_is_flagged():
    cfg = quick_config(train=TrainConfig(learning_rate=1e30, batch_size=8, epochs=2, optimizer="sgd"))
    rec = evaluate_candidate(sample_uniform(cfg.space, 2), cfg)
    assert rec.failed and rec.top1_accuracy == 0.0 and rec.robustness == 1.0


def test_data_bundle_caches_and_separates_splits():
    bundle = DataBundle(DataConfig(n_train=10, n_val=12, n_test=14))
    a = bundle.get("train", 16)
    assert bundle.get("train", 16) is a
    assert len(bundle.get("val", 16)) == 12 and len(bundle.get("test", 24)) == 14
    assert not np.array_equal(a.inputs[:10], bundle.get("val", 16).inputs[:10])


def test_data_bundle_reads_cifar_layout(tmp_path):
    rng = np.random.default_rng(0)
    for name, n in [("data_batch_1.bin", 30), ("test_batch.bin", 10)]:
        write_cifar_binary(LabeledDataset(rng.random((n, 3, 32, 32)), rng.integers(0, 10, n)), tmp_path / name)
    bundle = DataBundle(DataConfig(kind="cifar", path=str(tmp_path), n_train=20, n_val=10, n_test=5))
    assert len(bundle.get("train", 16)) == 20 and bundle.get("train", 16).resolution == 16
    assert len(bundle.get("val", 32)) == 10 and len(bundle.get("test", 32)) == 5


def test_run_counts_persistence_and_selection(tmp_path):
    cfg = quick_config(tmp_path)
    top, archive = run(cfg)
    assert len(archive) == cfg.n_start + cfg.iterations * cfg.infill_per_iter
    assert len({r.gene for r in archive}) == len(archive)
    assert strip_clock(Archive.read(cfg.archive_path)) == strip_clock(archive.records)

    obj = true_objectives(archive.records, cfg.fom)
    index = {r.gene: i for i, r in enumerate(archive.records)}
    for rec in top:
        i = index[rec.gene]
        assert not any(dominates(obj[j], obj[i]) for j in range(len(obj)))
    assert [obj[index[r.gene], 0] for r in top] == sorted(obj[index[r.gene], 0] for r in top)

    events = [json.loads(line) for line in open(cfg.log_path)]
    iters = [e for e in events if e["event"] == "iteration"]
    assert len(iters) == cfg.iterations
    for e in iters:
        assert e["surrogate"] in ("rbf", "gp", "ridge", "knn")
        assert set(e["kendall_tau"]) == {"rbf", "gp", "ridge", "knn"}
        assert e["gamma"] > 0 and sum(e["front_sizes"]) == cfg.nsga_pop_size


def test_run_is_deterministic(tmp_path):
    a_top, a = run(quick_config(tmp_path / "a"))
    b_top, b = run(quick_config(tmp_path / "b"))
    assert strip_clock(a.records) == strip_clock(b.records)
    assert strip_clock(a_top) == strip_clock(b_top)


class Interrupt(Exception):
    pass


def test_kill_and_resume_matches_uninterrupted(tmp_path):
    _, full = run(quick_config(tmp_path / "full"))
    cfg = quick_config(tmp_path / "killed")

    def kill(k, archive):
        if k == 1:
            raise Interrupt

    with pytest.raises(Interrupt):
        run(cfg, on_iteration=kill)
    partial = Archive.read(cfg.archive_path)
    assert 0 < len(partial) < len(full)
    with pytest.raises(FlatSearchError):
        run(cfg)  # refuses to clobber an existing archive
    _, resumed = run(cfg, resume=True)
    assert strip_clock(resumed.records) == strip_clock(full.records)
    assert strip_clock(Archive.read(cfg.archive_path)) == strip_clock(full.records)


def test_resume_rejects_foreign_archive(tmp_path):
    cfg = quick_config(tmp_path)
    run(cfg)
    with pytest.raises(FlatSearchError):
        run(replace(cfg, master_seed=99), resume=True)


def test_zero_penalty_matches_unconstrained(tmp_path):
    tight = quick_config(tmp_path / "t", fom=FomConfig(samples=2, param_limit=1e-9, penalty=0.0))
    loose = quick_config(tmp_path / "l", fom=FomConfig(samples=2, param_limit=1e9, penalty=0.0))
    t_top, t = run(tight)
    l_top, l = run(loose)
    assert strip_clock(t.records) == strip_clock(l.records)
    assert strip_clock(t_top) == strip_clock(l_top)


def test_best_f_ar_never_worsens(tmp_path):
    cfg = quick_config(tmp_path)
    _, archive = run(cfg)
    far = true_objectives(archive.records, cfg.fom)[:, 0]
    prefix_best = np.minimum.accumulate(far)
    checkpoints = [cfg.n_start + k * cfg.infill_per_iter for k in range(cfg.iterations + 1)]
    best = [prefix_best[c - 1] for c in checkpoints]
    assert all(b <= a for a, b in zip(best, best[1:]))


def test_select_top_k_limits_and_orders():
    space = SearchSpaceDef()
    recs = [EvalRecord(sample_uniform(space, i), acc, 0.0, p, 0.05, "sgd", 0)
            for i, (acc, p) in enumerate([(0.9, 100), (0.8, 50), (0.95, 300), (0.7, 400)])]
    top = select_top_k(recs, FomConfig(alpha=1.0), 2)
    assert [r.top1_accuracy for r in top] == [0.95, 0.9]


def test_resume_drops_a_half_written_record(tmp_path):
    _, full = run(quick_config(tmp_path / "full"))
    cfg = quick_config(tmp_path / "cut")
    path = Path(cfg.archive_path)
    path.parent.mkdir(parents=True)
    lines = [r.to_json() + "\n" for r in full.records[:9]]
    path.write_text("".join(lines) + full.records[9].to_json()[:40])
    assert len(Archive.read(path)) == 9
    _, resumed = run(cfg, resume=True)
    assert strip_clock(Archive.read(path)) == strip_clock(full.records)


def selection_records():
    # (accuracy, params): the most accurate record is far over a 0.001M limit
    rows = [(0.95, 5000), (0.9, 800), (0.85, 500), (0.6, 3000)]
    return [EvalRecord(sample_uniform(SearchSpaceDef(), i), acc, 0.0, p, 0.05, "sgd", 0)
            for i, (acc, p) in enumerate(rows)]


def test_feasible_first_keeps_x_star_within_the_limit():
    recs = selection_records()
    fom = FomConfig(alpha=1.0, param_limit=0.001, penalty=10.0)
    pareto = select_top_k(recs, fom, 3, feasible_first=False)
    assert [r.param_count for r in pareto] == [5000, 800, 500]
    assert [r.param_count for r in select_top_k(recs, fom, 3)] == [800, 500]


def test_feasible_first_falls_back_to_the_full_front():
    recs = selection_records()
    fom = FomConfig(alpha=1.0, param_limit=1e-6, penalty=10.0)
    assert select_top_k(recs, fom, 3) == select_top_k(recs, fom, 3, feasible_first=False)
