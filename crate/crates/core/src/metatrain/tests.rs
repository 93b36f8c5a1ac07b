use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::data::synthetic::family_corpora;
use crate::data::{corpora_from_raw, Corpus, CorpusCaps};
use crate::model::{ModelConfig, Seq2Seq, TensorMap, TrainableMode};
use crate::tensor::Tensor;

fn scalar_map(name: &str, x: f64) -> TensorMap<f64> {
    [(name.to_string(), Tensor::scalar(x))].into_iter().collect()
}

fn tiny_setup(styles: usize, per_style: usize) -> (Seq2Seq<f64>, Vec<Corpus>) {
    let caps = CorpusCaps {
        max_examples: per_style,
        max_src_len: 64,
        max_tgt_len: 24,
    };
    let (vocab, corpora) = corpora_from_raw(family_corpora(3, styles, per_style, 4), 1000, caps).unwrap();
    let model = Seq2Seq::new(ModelConfig::tiny(vocab.len()), 7).unwrap();
    (model, corpora)
}

fn regression_task(rng: &mut impl Rng, n: usize) -> (Vec<Point>, Vec<Point>) {
    let (a, c) = (rng.gen_range(-2.0..2.0), rng.gen_range(-1.0..1.0));
    let mut pts = |n: usize| -> Vec<Point> {
        (0..n)
            .map(|_| {
                let x: f64 = rng.gen_range(-1.0..1.0);
                Point { x, y: a * x + c }
            })
            .collect()
    };
    let train = pts(n);
    let test = pts(n);
    (train, test)
}

#[test]
fn single_sgd_step_on_quadratic() {
    let learner = Quadratic { target: 1.0 };
    let mut opt = Optimizer::new(OptimizerKind::Sgd, 0.1);
    let a = inner_adapt(&learner, &scalar_map("p", 0.0), &[()], 1, &mut opt).unwrap();
    assert!((a.phi["p"].item() - 0.2).abs() < 1e-15);
    assert_eq!(a.losses, vec![1.0]);
}

#[test]
fn zero_inner_steps_is_identity() {
    let psi = LinearRegression::params::<f64>(0.3, -0.2);
    let mut opt = Optimizer::new(OptimizerKind::Adam, 0.1);
    let a = inner_adapt(&LinearRegression, &psi, &[Point { x: 1.0, y: 2.0 }], 0, &mut opt).unwrap();
    assert_eq!(a.phi, psi);
    assert_eq!(opt.steps(), 0);
}

#[test]
fn inner_loss_strictly_decreases() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (train, _) = regression_task(&mut rng, 8);
    let psi = LinearRegression::params::<f64>(0.0, 0.0);
    let mut opt = Optimizer::new(OptimizerKind::Adam, 0.1);
    let a = inner_adapt(&LinearRegression, &psi, &train, 4, &mut opt).unwrap();
    let final_loss = evaluate_loss(&LinearRegression, &a.phi, &train).unwrap();
    let mut seq = a.losses.clone();
    seq.push(final_loss);
    assert!(seq.windows(2).all(|w| w[1] < w[0]), "{seq:?}");
}

/// Post-adaptation test loss computed with plain (non-differentiated) updates.
fn post_adaptation(psi: &TensorMap<f64>, train: &[Point], test: &[Point], steps: usize, lr: f64) -> f64 {
    let mut opt = Optimizer::new(OptimizerKind::Sgd, lr);
    let a = inner_adapt(&LinearRegression, psi, train, steps, &mut opt).unwrap();
    evaluate_loss(&LinearRegression, &a.phi, test).unwrap()
}

#[test]
fn exact_meta_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..10 {
        let (train, test) = regression_task(&mut rng, 6);
        let psi = LinearRegression::params::<f64>(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        for steps in [1, 2] {
            let (_, grads, _) = exact_meta_gradient(&LinearRegression, &psi, &train, &test, steps, 0.05).unwrap();
            for name in ["w", "b"] {
                let h = 1e-6;
                let mut plus = psi.clone();
                plus.get_mut(name).unwrap().data_mut()[0] += h;
                let mut minus = psi.clone();
                minus.get_mut(name).unwrap().data_mut()[0] -= h;
                let fd = (post_adaptation(&plus, &train, &test, steps, 0.05)
                    - post_adaptation(&minus, &train, &test, steps, 0.05))
                    / (2.0 * h);
                let an = grads[name].item();
                assert!((an - fd).abs() <= 1e-5 * fd.abs().max(1.0), "{name}: {an} vs {fd}");
            }
        }
    }
}

#[test]
fn first_order_gradient_differs_from_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (train, test) = regression_task(&mut rng, 6);
    let psi = LinearRegression::params::<f64>(0.5, 0.5);
    let (_, exact, _) = exact_meta_gradient(&LinearRegression, &psi, &train, &test, 1, 0.2).unwrap();
    let mut opt = Optimizer::new(OptimizerKind::Sgd, 0.2);
    let a = inner_adapt(&LinearRegression, &psi, &train, 1, &mut opt).unwrap();
    let (_, fo) = loss_and_grads(&LinearRegression, &a.phi, &test).unwrap();
    let diff: f64 = ["w", "b"]
        .iter()
        .map(|n| (exact[*n].item() - fo[*n].item()).abs())
        .sum();
    assert!(diff > 1e-6);
}

fn regression_cfg(first_order: bool) -> MetaTrainConfig {
    MetaTrainConfig {
        inner_steps: 2,
        inner_lr: 0.05,
        outer_lr: 0.01,
        first_order,
        inner_optimizer: if first_order {
            OptimizerKind::Adam
        } else {
            OptimizerKind::Sgd
        },
        ..MetaTrainConfig::default()
    }
}

#[test]
fn outer_step_bookkeeping() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let tasks: Vec<_> = (0..3).map(|_| regression_task(&mut rng, 5)).collect();
    let eps: Vec<Episode<'_, Point>> = tasks
        .iter()
        .zip(["a", "b", "a"])
        .map(|((tr, te), c)| Episode {
            corpus: c,
            train: tr,
            test: te,
        })
        .collect();
    let cfg = regression_cfg(true);
    let mut opts = PerCorpusOptimizers::<f64>::from_config(&cfg);
    opts.register("a");
    opts.register("b");
    let mut psi = LinearRegression::params(0.0, 0.0);
    let before = psi.clone();
    let (rec, outcomes) = outer_step(&LinearRegression, &mut psi, &eps, &cfg, &mut opts, 0).unwrap();
    assert_eq!(outcomes.len(), 3);
    assert_eq!(opts.inner("a").unwrap().steps(), 4);
    assert_eq!(opts.inner("b").unwrap().steps(), 2);
    assert_eq!(opts.outer.steps(), 1);
    assert_ne!(psi, before);
    assert!(rec.grad_norm.is_finite() && rec.outer_loss.is_finite());

    let zero = MetaTrainConfig { outer_lr: 0.0, ..cfg };
    let mut opts = PerCorpusOptimizers::<f64>::from_config(&zero);
    opts.register("a");
    opts.register("b");
    let mut psi = before.clone();
    let (rec, _) = outer_step(&LinearRegression, &mut psi, &eps, &zero, &mut opts, 0).unwrap();
    assert_eq!(psi, before);
    assert!(rec.outer_loss > 0.0);
}

#[test]
fn unregistered_corpus_and_exact_adam_are_rejected() {
    let pts = [Point { x: 1.0, y: 1.0 }];
    let eps = [Episode {
        corpus: "x",
        train: &pts[..],
        test: &pts[..],
    }];
    let cfg = regression_cfg(true);
    let mut opts = PerCorpusOptimizers::<f64>::from_config(&cfg);
    let mut psi = LinearRegression::params(0.0, 0.0);
    assert!(outer_step(&LinearRegression, &mut psi, &eps, &cfg, &mut opts, 0).is_err());
    let bad = MetaTrainConfig {
        first_order: false,
        ..MetaTrainConfig::default()
    };
    assert!(bad.validate().is_err());
}

#[test]
fn gradient_overflow_aborts() {
    let pts = [Point { x: 1000.0, y: -1000.0 }];
    let eps = [Episode {
        corpus: "x",
        train: &pts[..],
        test: &pts[..],
    }];
    let cfg = MetaTrainConfig {
        grad_norm_ceiling: 10.0,
        ..regression_cfg(true)
    };
    let mut opts = PerCorpusOptimizers::<f64>::from_config(&cfg);
    opts.register("x");
    let mut psi = LinearRegression::params(1.0, 0.0);
    let before = psi.clone();
    let err = outer_step(&LinearRegression, &mut psi, &eps, &cfg, &mut opts, 7).unwrap_err();
    assert!(matches!(err, crate::Error::GradientOverflow { step: 7, .. }));
    assert!(err.is_numerical());
    assert_eq!(psi, before);
}

#[test]
fn corpus_optimizers_are_isolated() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let tasks: Vec<_> = (0..4).map(|_| regression_task(&mut rng, 5)).collect();
    let eps: Vec<Episode<'_, Point>> = tasks
        .iter()
        .zip(["a", "b", "a", "b"])
        .map(|((tr, te), c)| Episode {
            corpus: c,
            train: tr,
            test: te,
        })
        .collect();
    let cfg = regression_cfg(true);
    let mut opts = PerCorpusOptimizers::<f64>::from_config(&cfg);
    opts.register("a");
    opts.register("b");
    let mut psi = LinearRegression::params(0.1, 0.1);
    outer_step(&LinearRegression, &mut psi, &eps, &cfg, &mut opts, 0).unwrap();

    let mut zeroed = opts.clone();
    zeroed.inner_mut("a").unwrap().zero_moments();
    let x = adapt_batch(&LinearRegression, &psi, &eps, &cfg, &mut opts).unwrap();
    let y = adapt_batch(&LinearRegression, &psi, &eps, &cfg, &mut zeroed).unwrap();
    for (p, q) in x.iter().zip(&y) {
        if p.corpus == "a" {
            assert_ne!(p.phi, q.phi);
        } else {
            for (n, t) in &p.phi {
                let bits: Vec<u64> = t.data().iter().map(|v| v.to_bits()).collect();
                let other: Vec<u64> = q.phi[n].data().iter().map(|v| v.to_bits()).collect();
                assert_eq!(bits, other);
            }
        }
    }
}

#[test]
fn optimizer_state_export_round_trip() {
    let cfg = regression_cfg(true);
    let mut opts = PerCorpusOptimizers::<f64>::from_config(&cfg);
    opts.register("a");
    let mut psi = LinearRegression::params(0.1, 0.1);
    let pts = [Point { x: 1.0, y: 2.0 }, Point { x: -1.0, y: 0.5 }];
    let eps = [Episode {
        corpus: "a",
        train: &pts[..],
        test: &pts[..],
    }];
    outer_step(&LinearRegression, &mut psi, &eps, &cfg, &mut opts, 0).unwrap();
    let (state, steps) = opts.export();
    let mut back = PerCorpusOptimizers::<f64>::from_config(&cfg);
    back.import(&state, &steps);
    let (mut p1, mut p2) = (psi.clone(), psi.clone());
    let (r1, _) = outer_step(&LinearRegression, &mut p1, &eps, &cfg, &mut opts, 1).unwrap();
    let (r2, _) = outer_step(&LinearRegression, &mut p2, &eps, &cfg, &mut back, 1).unwrap();
    assert_eq!(p1, p2);
    assert_eq!(r1.grad_norm, r2.grad_norm);
}

#[test]
fn pretraining_overfits_a_single_example() {
    let (mut model, corpora) = tiny_setup(1, 1);
    let cfg = PretrainConfig {
        steps: 200,
        lr: 1e-2,
        batch_size: 1,
        seed: 0,
    };
    let log = pretrain_base(&mut model, &corpora[0].examples, &cfg, &mut |_| Ok(())).unwrap();
    assert!(log[1].loss < log[0].loss);
    let nll = model
        .evaluate_nll(&corpora[0].examples, crate::model::Forward::base())
        .unwrap();
    assert!(nll < 0.1, "{nll}");
}

#[test]
fn pretraining_with_zero_lr_changes_nothing() {
    let (mut model, corpora) = tiny_setup(1, 8);
    let before = model.params.clone();
    let cfg = PretrainConfig {
        steps: 3,
        lr: 0.0,
        batch_size: 4,
        seed: 0,
    };
    pretrain_base(&mut model, &corpora[0].examples, &cfg, &mut |_| Ok(())).unwrap();
    for (n, p) in before.iter() {
        assert_eq!(p.value.data(), model.params.tensor(n).unwrap().data(), "{n}");
    }
}

fn meta_cfg(steps: usize) -> MetaTrainConfig {
    MetaTrainConfig {
        tasks_per_batch: 3,
        task_batch_size: 2,
        inner_steps: 2,
        inner_lr: 1e-2,
        outer_lr: 1e-2,
        meta_steps: steps,
        validation_interval: 5,
        validation_batches: 1,
        seed: 9,
        ..MetaTrainConfig::default()
    }
}

#[test]
fn meta_training_is_stable_and_leaves_base_untouched() {
    let (mut model, corpora) = tiny_setup(4, 12);
    let (sources, val) = corpora.split_at(3);
    let base_before = model.params.snapshot(TrainableMode::Full);
    let cfg = meta_cfg(10);
    let mut seen = 0;
    let (state, log) = meta_train(&mut model, sources, Some(&val[0]), &cfg, None, &mut |r, _| {
        seen += 1;
        assert!(r.grad_norm.is_finite());
        Ok(())
    })
    .unwrap();
    assert_eq!((log.len(), seen, state.step), (10, 10, 10));
    assert_eq!(log.iter().filter(|r| r.val_loss.is_some()).count(), 2);
    assert_eq!(state.opts.outer.steps(), 10);
    for (n, p) in model.params.iter() {
        if p.group == crate::model::Group::Base {
            assert_eq!(p.value.data(), base_before[n].data(), "{n} changed");
        }
    }
    // The model ends on the best validated meta-parameters.
    let best = state.best.unwrap();
    for (n, t) in &best.psi {
        assert_eq!(model.params.tensor(n).unwrap(), t);
    }
}

#[test]
fn validation_corpus_never_feeds_training_tasks() {
    let (mut model, corpora) = tiny_setup(3, 10);
    let cfg = meta_cfg(4);
    for step in 0..50 {
        let batch = meta_batch_for_step(&corpora[..2], &cfg, step).unwrap();
        assert!(batch.tasks.iter().all(|t| *t.corpus != *corpora[2].name));
    }
    let err = meta_train(&mut model, &corpora, Some(&corpora[1]), &cfg, None, &mut |_, _| Ok(()));
    assert!(matches!(err, Err(crate::Error::Config(_))));
}

#[test]
fn meta_training_replays_and_resumes_identically() {
    let (model, corpora) = tiny_setup(2, 10);
    let cfg = meta_cfg(6);
    let run = || {
        let mut m = model.clone();
        meta_train(&mut m, &corpora, None, &cfg, None, &mut |_, _| Ok(()))
            .unwrap()
            .1
    };
    let (a, b) = (run(), run());
    for (x, y) in a.iter().zip(&b) {
        assert!((x.outer_loss - y.outer_loss).abs() <= 1e-10);
        assert!((x.inner_loss - y.inner_loss).abs() <= 1e-10);
    }

    let mut m = model.clone();
    let short = MetaTrainConfig {
        meta_steps: 3,
        ..cfg.clone()
    };
    let (state, _) = meta_train(&mut m, &corpora, None, &short, None, &mut |_, _| Ok(())).unwrap();
    let (_, rest) = meta_train(&mut m, &corpora, None, &cfg, Some(state), &mut |_, _| Ok(())).unwrap();
    assert_eq!(rest.iter().map(|r| r.step).collect::<Vec<_>>(), vec![3, 4, 5]);
    for (x, y) in a[3..].iter().zip(&rest) {
        assert_eq!(x.outer_loss, y.outer_loss);
    }
}

#[test]
fn exact_mode_on_tiny_model_matches_finite_differences() {
    let (model, corpora) = tiny_setup(1, 4);
    let cfg = ModelConfig {
        hidden_dim: 8,
        num_heads: 2,
        ff_dim: 16,
        adapter_dim: 2,
        enc_layers: 1,
        ..model.config.clone()
    };
    let model = Seq2Seq::<f64>::new(cfg, 8).unwrap();
    let ex = &corpora[0].examples;
    let (train, test) = (&ex[..2], &ex[2..4]);
    // A subset of meta-parameters keeps the probe count small.
    let psi: TensorMap<f64> = model
        .params
        .snapshot(TrainableMode::AdapterOnly)
        .into_iter()
        .filter(|(n, _)| n.starts_with("dec.0.sa1") || n.starts_with("enc.0.adapter"))
        .collect();
    let lr = 0.05;
    let (_, grads, _) = exact_meta_gradient(&model, &psi, train, test, 1, lr).unwrap();
    let post = |p: &TensorMap<f64>| {
        let mut opt = Optimizer::new(OptimizerKind::Sgd, lr);
        let a = inner_adapt(&model, p, train, 1, &mut opt).unwrap();
        evaluate_loss(&model, &a.phi, test).unwrap()
    };
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for (n, t) in &psi {
        for i in 0..t.len() {
            let mut plus = psi.clone();
            plus.get_mut(n).unwrap().data_mut()[i] += h;
            let mut minus = psi.clone();
            minus.get_mut(n).unwrap().data_mut()[i] -= h;
            let fd = (post(&plus) - post(&minus)) / (2.0 * h);
            let an = grads[n].data()[i];
            worst = worst.max((an - fd).abs() / an.abs().max(fd.abs()).max(1e-3));
        }
    }
    assert!(worst < 1e-4, "max relative error {worst}");
}

#[test]
fn finetuning_descends_and_respects_mode() {
    let (mut model, corpora) = tiny_setup(1, 10);
    let ex = &corpora[0].examples;
    let cfg = FinetuneConfig {
        steps: 300,
        lr: 1e-2,
        batch_size: 10,
        ..FinetuneConfig::default()
    };
    let base = model.params.snapshot(TrainableMode::Full);
    let report = finetune(&mut model, ex, None, &cfg).unwrap();
    let first = report.records[0].loss;
    let last = model.evaluate_nll(ex, crate::model::Forward::default()).unwrap();
    assert!(last <= 0.5 * first, "{first} -> {last}");
    for (n, p) in model.params.iter() {
        if p.group == crate::model::Group::Base {
            assert_eq!(p.value.data(), base[n].data());
        }
    }

    let (mut full, _) = tiny_setup(1, 10);
    let before = full.params.snapshot(TrainableMode::Full);
    let cfg = FinetuneConfig {
        steps: 1,
        lr: 1e-3,
        mode: TrainableMode::Full,
        ..cfg
    };
    finetune(&mut full, ex, None, &cfg).unwrap();
    for n in ["enc.0.sa0.attn.wq", "dec.0.ff.w1", "out.w", "out.b"] {
        assert_ne!(full.params.tensor(n).unwrap(), &before[n], "{n} frozen");
    }
}

#[test]
fn finetuning_zero_steps_and_early_stop() {
    let (mut model, corpora) = tiny_setup(1, 12);
    let ex = &corpora[0].examples;
    let before = model.params.snapshot(TrainableMode::Full);
    let cfg = FinetuneConfig {
        steps: 0,
        ..FinetuneConfig::default()
    };
    finetune(&mut model, &ex[..4], Some(&ex[4..]), &cfg).unwrap();
    assert_eq!(model.params.snapshot(TrainableMode::Full), before);

    // A huge learning rate makes held-out NLL worse, so training stops and the
    // starting parameters are kept.
    let cfg = FinetuneConfig {
        steps: 200,
        lr: 0.5,
        eval_every: 1,
        patience: 2,
        ..FinetuneConfig::default()
    };
    let r = finetune(&mut model, &ex[..2], Some(&ex[4..]), &cfg).unwrap();
    if r.stopped_early {
        assert!(r.records.len() < 200);
    }
    let best = r.heldout.iter().map(|h| h.1).fold(f64::INFINITY, f64::min);
    let now = model.evaluate_nll(&ex[4..], crate::model::Forward::default()).unwrap();
    assert!((now - best).abs() < 1e-12);
}

#[test]
fn derived_seeds_differ() {
    let s: std::collections::BTreeSet<u64> = (0..100).map(|i| derive_seed(1, 1, i)).collect();
    assert_eq!(s.len(), 100);
    assert_ne!(derive_seed(1, 1, 0), derive_seed(1, 2, 0));
    let _ = BTreeMap::<u8, u8>::new();
}
