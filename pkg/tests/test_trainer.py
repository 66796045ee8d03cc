import numpy as np
import pytest

from procan import trainer as trainer_mod
from procan.config import (
    TrainConfig,
    config_from_dict,
    config_to_dict,
    desk_preset,
    format_config,
    load_config,
    parse_config,
)
from procan.datapipe import gen_synthetic
from procan.errors import ConfigurationError, UsageError
from procan.metrics import evaluate_scores
from procan.network import build, predict_proba
from procan.numerics import stable_sigmoid
from procan.trainer import (
    batch_chunks,
    FoldResult,
    PreparedSet,
    cross_validate,
    ensemble_predict,
    evaluate,
    format_pm,
    learning_rate,
    prepare,
    spec_for,
    stratified_folds,
    stratified_split,
    summarize,
    train_procan,
)

TINY = TrainConfig(
    total_epochs=18,
    batch_size=16,
    base_block_count=2,
    channels=(4, 8),
    strides=(2, 2),
    cube_size=16,
    extended_block_budget=2,
    augment_mode="sample",
    max_phase_epochs=2,
    refine_start_epoch=10,
    lr_drop_epoch=6,
)


@pytest.fixture(scope="module")
def data():
    return prepare(gen_synthetic(60, seed=1), TINY)


@pytest.fixture(scope="module")
def tiny_run(data):
    return train_procan(data, TINY)


# -- phases and budget ---------------------------------------------------------------
def test_phase_sequence(tiny_run):
    _, tlog = tiny_run
    grown = ["grow"] + ["transition"] * 4 + ["settle"]
    assert tlog.phase_sequence() == ["easy", "full"] + grown * 2 + ["remainder"]
    assert [e.block for e in tlog.events] == [1, 2]
    assert [r.p for r in tlog.records if r.phase == "transition"] == [0.25, 0.5, 0.75, 1.0] * 2
    assert len(tlog.insertion_jumps) == 2 and tlog.notes == []


def test_epoch_accounting(tiny_run):
    _, tlog = tiny_run
    assert [r.epoch for r in tlog.records] == list(range(1, TINY.total_epochs + 1))


def test_lr_and_refinement_flags(tiny_run):
    _, tlog = tiny_run
    for r in tlog.records:
        assert r.lr == (1e-3 if r.epoch < 6 else 1e-4)
        assert r.augment == (r.epoch < 10)


def test_default_lr_schedule():
    cfg = TrainConfig()
    assert [learning_rate(cfg, e) for e in (1, 19, 20, 21, 60)] == [1e-3, 1e-3, 1e-4, 1e-4, 1e-4]


def test_network_is_fully_grown_and_final(tiny_run):
    net, _ = tiny_run
    assert len(net.extended) == 2 and all(e.state.phase == "final" for e in net.extended)
    assert net.mode == "eval"


def test_plain_training_without_growth_or_curriculum(data):
    cfg = TINY.replace(extended_block_budget=0, curriculum="none", total_epochs=5, refine_start_epoch=5)
    net, tlog = train_procan(data, cfg)
    assert net.extended == [] and tlog.events == [] and tlog.insertion_jumps == []
    assert set(tlog.phase_sequence()) <= {"easy", "full", "remainder"}
    assert len(tlog.records) == 5


def test_budget_exhaustion_finalises_block(data):
    cfg = TINY.replace(total_epochs=6, refine_start_epoch=6)
    net, tlog = train_procan(data, cfg)
    assert len(tlog.records) == 6
    assert [r.phase for r in tlog.records][-2:] == ["transition", "transition"]
    assert len(net.extended) == 1 and net.extended[0].state.phase == "final"
    assert any("block 1" in n and "finalized" in n for n in tlog.notes)


def test_validation_never_enters_training_batches(data, monkeypatch):
    seen, runs = set(), []
    original_init, original_batch = trainer_mod._Run.__init__, trainer_mod._Run.batch

    def init(self, *a, **kw):
        original_init(self, *a, **kw)
        runs.append(self)

    def batch(self, pairs):
        seen.update(self.train.ids[i] for i, _ in pairs)
        return original_batch(self, pairs)

    monkeypatch.setattr(trainer_mod._Run, "__init__", init)
    monkeypatch.setattr(trainer_mod._Run, "batch", batch)
    train_procan(data, TINY.replace(total_epochs=4, refine_start_epoch=4, extended_block_budget=0))
    val_ids = set(runs[0].val.ids)
    assert val_ids and seen and not (seen & val_ids)
    assert len(val_ids) == 6


def test_no_easy_samples_is_configuration_error(data):
    hard = PreparedSet(data.cubes, data.fills, data.labels, data.ids, ["hard"] * len(data))
    with pytest.raises(ConfigurationError, match="curriculum"):
        train_procan(hard, TINY)
    with pytest.raises(UsageError):
        train_procan(data.subset([]), TINY)


def test_training_is_deterministic(data):
    cfg = TINY.replace(total_epochs=3, refine_start_epoch=3, extended_block_budget=0)
    a, la = train_procan(data, cfg)
    b, lb = train_procan(data, cfg)
    assert [r.train_loss for r in la.records] == [r.train_loss for r in lb.records]
    assert np.array_equal(predict_proba(a, data.cubes), predict_proba(b, data.cubes))


@pytest.mark.parametrize("n,bs", [(33, 16), (17, 16), (65, 16), (32, 16), (1, 16), (10, 3)])
def test_batch_chunks_cover_every_sample_once(n, bs):
    order = np.random.default_rng(n).permutation(n)
    chunks = batch_chunks(order, bs)
    assert np.array_equal(np.concatenate(chunks), order)
    assert all(len(c) >= 2 for c in chunks) or n == 1


# -- splits --------------------------------------------------------------------------
def test_stratified_split_keeps_class_ratio():
    labels = np.array([0] * 30 + [1] * 20)
    kept, held = stratified_split(labels, 0.1, np.random.default_rng(0))
    assert len(held) == 5 and sorted(labels[held]) == [0, 0, 0, 1, 1]
    assert set(kept).isdisjoint(held) and len(kept) + len(held) == 50


def test_folds_partition_and_determinism():
    labels = np.random.default_rng(3).integers(0, 2, 47)
    a = stratified_folds(labels, 10, np.random.default_rng(5))
    assert np.array_equal(a, stratified_folds(labels, 10, np.random.default_rng(5)))
    assert sorted(np.bincount(a, minlength=10)) == [4] * 3 + [5] * 7
    for c in (0, 1):
        counts = np.bincount(a[labels == c], minlength=10)
        assert counts.max() - counts.min() <= 1
    with pytest.raises(ConfigurationError):
        stratified_folds(labels[:3], 4, np.random.default_rng(0))


def test_cross_validation_smoke(data):
    cfg = TINY.replace(total_epochs=2, refine_start_epoch=2, extended_block_budget=0)
    results, summary = cross_validate(data, cfg, folds=3)
    assert [r.fold for r in results] == [0, 1, 2]
    assert sum(r.n_test for r in results) == len(data)
    assert set(summary) == {"accuracy", "sensitivity", "precision", "f1", "auc"}
    again, _ = cross_validate(data, cfg, folds=3)
    assert [r.metrics for r in again] == [r.metrics for r in results]


def test_summary_formatting():
    assert summarize([0.9713, 0.9715]) == pytest.approx((0.9714, 0.0001))
    assert format_pm((0.9713, 0.0002)) == "97.13±0.02"
    assert summarize([None, None]) is None and format_pm(None) == "nan"
    assert FoldResult(0, 3, {}).n_test == 3


# -- evaluation and ensembles --------------------------------------------------------
def test_evaluate_is_deterministic_and_matches_metrics(tiny_run, data):
    net, _ = tiny_run
    m1, s1 = evaluate(net, data)
    m2, s2 = evaluate(net, data)
    assert m1 == m2 and np.array_equal(s1, s2)
    assert m1 == evaluate_scores(s1, data.labels)
    assert np.array_equal(s1, predict_proba(net, data.cubes))
    with pytest.raises(UsageError):
        evaluate(net, data.subset([]))


def constant_net(prob, seed=0):
    net = build(spec_for(TINY), np.random.default_rng(seed))
    net.fc_weight.data[...] = 0.0
    net.fc_bias.data[...] = np.log(prob / (1 - prob))
    return net.eval()


def test_ensemble_examples(data):
    x = data.cubes[:4]
    net = constant_net(0.3)
    assert np.array_equal(ensemble_predict([net, net], x), predict_proba(net, x))
    assert np.allclose(ensemble_predict([constant_net(0.2), constant_net(0.8, 1)], x), 0.5, rtol=0, atol=1e-15)
    with pytest.raises(ConfigurationError):
        ensemble_predict([net], x)
    other = build(spec_for(TINY.replace(cube_size=32)), np.random.default_rng(0))
    with pytest.raises(ConfigurationError):
        ensemble_predict([net, other], x)


def test_evaluate_on_constant_scores_uses_half_threshold(data):
    m, s = evaluate(constant_net(0.5), data)
    assert np.all(s == 0.5) and m["sensitivity"] == 1.0 and m["auc"] == 0.5


# -- configuration -------------------------------------------------------------------
def test_defaults_and_desk_preset():
    cfg = TrainConfig()
    assert (cfg.total_epochs, cfg.batch_size, cfg.refine_start_epoch, cfg.extended_block_budget) == (60, 256, 51, 3)
    assert (cfg.lr_initial, cfg.lr_after_epoch20, cfg.fc_weight_decay, cfg.dropout_p) == (1e-3, 1e-4, 1e-4, 0.5)
    desk = desk_preset()
    assert (desk.batch_size, desk.cube_size, desk.channels, desk.extended_block_budget) == (32, 16, (8, 16, 32, 32), 2)


def test_config_round_trip(tmp_path):
    cfg = desk_preset(seed=7, c_bar="in/4", blending="scalar")
    text = format_config(cfg)
    assert "fc_weight_decay applies to fc.weight and fc.bias only" in text
    back = parse_config(text)
    assert back.replace(**{k: None for k in ("model_seed", "data_seed", "mask_seed", "dropout_seed")}) == cfg
    assert back.resolved_seeds() == cfg.resolved_seeds()
    assert parse_config(format_config(cfg, resolved=False)) == cfg
    assert config_from_dict(config_to_dict(cfg)) == cfg
    (tmp_path / "c.cfg").write_text("total_epochs = 30  # shorter\n\nrefine_start_epoch = 25\nchannels = 4,8,8,8\n")
    loaded = load_config(tmp_path / "c.cfg")
    assert loaded.total_epochs == 30 and loaded.channels == (4, 8, 8, 8)


@pytest.mark.parametrize(
    "text",
    ["learning_rate = 0.1", "total_epochs = ten", "total_epochs", "refine_start_epoch = 70", "validation_fraction = 0.5"],
)
def test_bad_config_text(text):
    with pytest.raises(ConfigurationError):
        parse_config(text)


def test_seed_resolution():
    a = TrainConfig(seed=3).resolved_seeds()
    assert a == TrainConfig(seed=3).resolved_seeds() and len(set(a.values())) == 4
    assert TrainConfig(seed=3, mask_seed=11).resolved_seeds()["mask_seed"] == 11
    assert TrainConfig(seed=4).resolved_seeds() != a


def test_prepare_needs_volumes():
    recs = gen_synthetic(20, seed=0)
    recs[0].volume = None
    with pytest.raises(UsageError):
        prepare(recs, TINY)
    with pytest.raises(UsageError):
        prepare([], TINY)


def test_prepared_cubes_are_standardized(data):
    assert data.cubes.shape == (60, 16, 16, 16)
    assert np.max(np.abs(data.cubes.mean(axis=(1, 2, 3)))) < 1e-10
    assert np.max(np.abs(data.cubes.std(axis=(1, 2, 3)) - 1)) < 1e-10
    assert np.all(stable_sigmoid(data.fills) < 0.5)
