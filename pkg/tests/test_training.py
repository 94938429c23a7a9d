import numpy as np
import pytest
import torch

import paits.training as training
from conftest import small_experiment
from paits.data import subsample_labels
from paits.dataio import prepare_data
from paits.metrics import auroc
from paits.model import build_model
from paits.strategy import NULL_STRATEGY, PretrainPlan, Strategy, baseline_strategy
from paits.synthetic import generate_synthetic
from paits.training import (
    TrainConfig,
    finetune,
    make_batch,
    predict_proba,
    pretrain,
    run_plan,
    supervised_val_loss,
)


def _state_equal(a, b):
    return all(torch.equal(a[k], b[k]) for k in a) and a.keys() == b.keys()


class TestTrainConfig:
    def test_defaults(self):
        cfg = TrainConfig()
        assert cfg.lr == 5e-4 and cfg.batch_size == 32 and cfg.patience == 5 and cfg.min_delta == 1e-5

    @pytest.mark.parametrize("field", ["lr", "batch_size", "max_epochs", "eval_every"])
    def test_positive(self, field):
        with pytest.raises(ValueError):
            TrainConfig(**{field: 0})

    def test_patience(self):
        with pytest.raises(ValueError):
            TrainConfig(patience=0)


class TestBatches:
    def test_padding_contract(self, small_data, rng):
        batch = make_batch(small_data.unlabeled_train[:8], small_data.ctx, rng)
        p = batch["padding"]
        for i, w in enumerate(small_data.unlabeled_train[:8]):
            assert int(p[i].sum()) == min(len(w.series), small_data.ctx.seqlen)
        pad = p == 0
        assert (batch["times"][pad] == 0).all() and (batch["features"][pad] == 0).all()

    def test_masked_only_recon_mask(self, small_data, rng):
        spec = Strategy((0, 1), 0.0, 0.5, "random").augmentation(small_data.ctx.n_features)
        batch = make_batch(small_data.unlabeled_train[:8], small_data.ctx, rng, spec, masked_only=True)
        changed = batch["features"] == small_data.ctx.n_features + 1
        assert torch.equal(changed.float(), batch["recon"])


class TestPretrain:
    def test_null_weights_skip(self, small_data, fast_cfg):
        model = build_model(small_data.ctx.encoder, 0)
        before = {k: v.clone() for k, v in model.state_dict().items()}
        res = pretrain(model, small_data.unlabeled_train, small_data.unlabeled_val, NULL_STRATEGY, fast_cfg, small_data.ctx)
        assert res.history.skipped and res.history.epochs == []
        assert _state_equal(before, res.model.state_dict())

    def test_empty_set(self, small_data, fast_cfg):
        with pytest.raises(ValueError):
            pretrain(build_model(small_data.ctx.encoder, 0), [], small_data.unlabeled_val, Strategy((1, 0)),
                     fast_cfg, small_data.ctx)

    def test_forecast_loss_decreases(self, small_data, fast_cfg):
        model = build_model(small_data.ctx.encoder, 0)
        res = pretrain(model, small_data.unlabeled_train, small_data.unlabeled_val, Strategy((1, 0)), fast_cfg,
                       small_data.ctx, seed=0)
        h = res.history
        assert len(h.epochs) == fast_cfg.max_epochs or len(h.epochs) < fast_cfg.max_epochs
        assert h.best_val_loss < h.initial_val_loss
        assert h.best_val_loss == min([h.initial_val_loss] + [e["val_loss"] for e in h.epochs])

    def test_eval_cadence(self, small_data):
        cfg = TrainConfig(max_epochs=4, eval_every=2, pool_size=2000)
        res = pretrain(build_model(small_data.ctx.encoder, 0), small_data.unlabeled_train, small_data.unlabeled_val,
                       Strategy((1, 1), 0.1, 0.5, "geometric"), cfg, small_data.ctx, seed=1)
        assert [e["epoch"] for e in res.history.epochs] == [2, 4]

    def test_restores_best_parameters(self, small_data, fast_cfg):
        model = build_model(small_data.ctx.encoder, 0)
        res = pretrain(model, small_data.unlabeled_train, small_data.unlabeled_val, Strategy((1, 0)), fast_cfg,
                       small_data.ctx, seed=0)
        obj = training._PretrainObjective("paits", Strategy((1, 0)), small_data.ctx, fast_cfg)
        again = training._evaluate(res.model, lambda items, r: obj.loss(res.model, items, r, small_data.ctx.n_unlabeled_val),
                                   small_data.unlabeled_val, fast_cfg.batch_size)
        assert again == pytest.approx(res.history.best_val_loss, abs=1e-9)

    @pytest.mark.parametrize("name", ["tst", "tstcc", "cl_paits"])
    def test_baseline_objectives_run(self, small_data, name):
        cfg = TrainConfig(max_epochs=1, finetune_max_epochs=1, pool_size=2000)
        plan = baseline_strategy(name)
        strategy = Strategy((0, 0), 0.1, 0.3, "random") if plan.searched else plan.strategy
        pre, ft = run_plan(plan, small_data, cfg, seed=0, strategy=strategy)
        assert not pre.history.skipped and len(pre.history.epochs) == 1
        assert np.isfinite(ft.val_loss)

    def test_tst_loss_ignores_unmasked_predictions(self, small_data, monkeypatch):
        real = training.reconstruction_loss
        checked = []

        def spy(pred, values, padding, recon, count, **kw):
            out = real(pred, values, padding, recon, count, **kw)
            moved = torch.where(recon == 0, pred + 1e3, pred)
            assert torch.equal(real(moved, values, padding, recon, count, **kw), out)
            checked.append(float((recon == 0).sum()))
            return out

        monkeypatch.setattr(training, "reconstruction_loss", spy)
        plan = baseline_strategy("tst")
        obj = training._PretrainObjective(plan.objective, plan.strategy, small_data.ctx, TrainConfig(pool_size=2000))
        model = build_model(small_data.ctx.encoder, 0)
        obj.loss(model, small_data.unlabeled_train[:16], np.random.default_rng(0), 10)
        assert checked and checked[0] > 0

    def test_tst_plan(self):
        plan = baseline_strategy("tst")
        s = plan.strategy
        assert plan.objective == "masked_reconstruction"
        assert s.weights == (0.0, 1.0) and s.sampling == "geometric" and s.elements == ("v",)


class TestFinetune:
    def test_deterministic(self, small_data, fast_cfg):
        a = finetune(None, small_data.labeled_train, small_data.labeled_val, fast_cfg, small_data.ctx, seed=3)
        b = finetune(None, small_data.labeled_train, small_data.labeled_val, fast_cfg, small_data.ctx, seed=3)
        assert a.val_loss == b.val_loss
        assert _state_equal(a.model.state_dict(), b.model.state_dict())

    def test_restore_contract(self, small_data, fast_cfg):
        res = finetune(None, small_data.labeled_train, small_data.labeled_val, fast_cfg, small_data.ctx, seed=0)
        again = supervised_val_loss(res.model, small_data.labeled_val, small_data.ctx)
        assert abs(again - res.val_loss) < 1e-9

    def test_empty_sets(self, small_data, fast_cfg):
        with pytest.raises(ValueError):
            finetune(None, [], small_data.labeled_val, fast_cfg, small_data.ctx)
        with pytest.raises(ValueError):
            finetune(None, small_data.labeled_train, [], fast_cfg, small_data.ctx)

    def test_discards_pretraining_heads(self, small_data, fast_cfg):
        pre = pretrain(build_model(small_data.ctx.encoder, 0), small_data.unlabeled_train, small_data.unlabeled_val,
                       Strategy((1, 0)), fast_cfg, small_data.ctx, seed=0)
        cfg = TrainConfig(finetune_max_epochs=1)
        ft = finetune(pre.encoder_state(), small_data.labeled_train, small_data.labeled_val, cfg, small_data.ctx, seed=0)
        fresh = build_model(small_data.ctx.encoder, 0)
        assert torch.equal(ft.model.forecast_head.weight, fresh.forecast_head.weight)

    def test_finetune_augmentation_changes_training(self, small_data):
        cfg = TrainConfig(finetune_max_epochs=1, pool_size=2000)
        s_none = Strategy((1, 0), 0.1, 0.5, "random", finetune_aug="none")
        s_same = Strategy((1, 0), 0.1, 0.5, "random", finetune_aug="same")
        a = finetune(None, small_data.labeled_train, small_data.labeled_val, cfg, small_data.ctx, strategy=s_none, seed=0)
        b = finetune(None, small_data.labeled_train, small_data.labeled_val, cfg, small_data.ctx, strategy=s_same, seed=0)
        assert a.history.epochs[0]["train_loss"] != b.history.epochs[0]["train_loss"]
        # validation inputs are never augmented: the initial losses agree
        assert a.history.initial_val_loss == b.history.initial_val_loss


def test_strats_equals_paits_point(small_data, fast_cfg):
    """The STraTS baseline is the grid point ((1,0), sigma=0, r=0, FTA=none)."""
    grid_point = Strategy((1.0, 0.0), 0.0, 0.0, "geometric", (-100.0, -100.0), ("v",), "none")
    y = [x.label for x in small_data.labeled_test]
    out = []
    for plan in (baseline_strategy("strats"), PretrainPlan("paits", "paits", grid_point)):
        _, ft = run_plan(plan, small_data, fast_cfg, seed=11)
        probs = predict_proba(ft.model, small_data.labeled_test, small_data.ctx)
        out.append((ft.val_loss, auroc(probs, y), probs))
    assert out[0][0] == out[1][0] and out[0][1] == out[1][1]
    assert np.array_equal(out[0][2], out[1][2])


def test_none_baseline_has_no_pretraining_epochs(small_data, fast_cfg):
    pre, _ = run_plan(baseline_strategy("none"), small_data, TrainConfig(finetune_max_epochs=1), seed=0)
    assert pre.history.skipped and pre.history.epochs == []


@pytest.mark.slow
def test_pretrained_finetune_beats_random_init_on_validation():
    exp = small_experiment(**{"synth.n_entities": 600, "model.seqlen": 40, "train.max_epochs": 4,
                              "train.finetune_max_epochs": 30})
    data = prepare_data(generate_synthetic(exp.synth), exp)
    pre = pretrain(build_model(data.ctx.encoder, 0), data.unlabeled_train, data.unlabeled_val, Strategy((1, 0)),
                   exp.train, data.ctx, seed=0)
    state = pre.encoder_state()
    pretrained, scratch = [], []
    for seed in range(5):
        subset = subsample_labels(data.labeled_train, 0.1, seed)
        pretrained.append(finetune(state, subset, data.labeled_val, exp.train, data.ctx, seed=seed).val_loss)
        scratch.append(finetune(None, subset, data.labeled_val, exp.train, data.ctx, seed=seed).val_loss)
    assert np.mean(pretrained) <= np.mean(scratch)
