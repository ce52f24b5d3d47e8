use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use triage_core::corpus::{stratified_split, Label};
use triage_core::features::{FeatureVector, VocabularySettings};
use triage_core::fixtures;
use triage_core::pipeline::{examples, train_classifier};
use triage_core::trainer::*;

fn random_batch(rng: &mut ChaCha8Rng, dim: usize) -> Vec<Example> {
    let n = rng.random_range(1..=8);
    (0..n)
        .map(|_| {
            let mut pairs = Vec::new();
            for i in 0..dim {
                if rng.random_bool(0.6) {
                    pairs.push((i, rng.random_range(-1.5..1.5)));
                }
            }
            Example::new(FeatureVector::from_pairs(pairs), Label::from_bool(rng.random_bool(0.3)))
        })
        .collect()
}

fn random_params(rng: &mut ChaCha8Rng, dim: usize) -> ModelParams {
    ModelParams { weights: (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect(), bias: rng.random_range(-1.0..1.0) }
}

fn relative_error(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale < 1e-8 {
        (a - b).abs()
    } else {
        (a - b).abs() / scale
    }
}

#[test]
fn gradient_matches_central_differences() {
    const H: f64 = 1e-6;
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst: f64 = 0.0;
    for instance in 0..100 {
        let dim = rng.random_range(1..=12);
        let batch = random_batch(&mut rng, dim);
        let params = random_params(&mut rng, dim);
        let weights = if instance % 2 == 0 {
            ClassWeights::default()
        } else {
            ClassWeights { positive: rng.random_range(0.1..3.0), negative: rng.random_range(0.1..3.0) }
        };
        let analytic = gradient(&batch, &params, weights);
        let numeric = |bump: &dyn Fn(&mut ModelParams, f64)| {
            let mut plus = params.clone();
            bump(&mut plus, H);
            let mut minus = params.clone();
            bump(&mut minus, -H);
            (weighted_loss(&batch, &plus, weights) - weighted_loss(&batch, &minus, weights)) / (2.0 * H)
        };
        for i in 0..dim {
            let fd = numeric(&|p: &mut ModelParams, h| p.weights[i] += h);
            worst = worst.max(relative_error(analytic.weights[i], fd));
        }
        let fd = numeric(&|p: &mut ModelParams, h| p.bias += h);
        worst = worst.max(relative_error(analytic.bias, fd));
    }
    assert!(worst < 1e-5, "max relative error {worst}");
}

/// Scalar Adam written from the update equations, tracking the bias
/// correction products incrementally.
#[derive(Clone, Copy)]
struct ScalarAdam {
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: f64,
    v: f64,
    beta1_t: f64,
    beta2_t: f64,
}

impl ScalarAdam {
    fn step(&mut self, theta: f64, g: f64, lr: f64) -> f64 {
        self.beta1_t *= self.beta1;
        self.beta2_t *= self.beta2;
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * g;
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * g * g;
        let m_hat = self.m / (1.0 - self.beta1_t);
        let v_hat = self.v / (1.0 - self.beta2_t);
        theta - lr * m_hat / (v_hat.sqrt() + self.eps)
    }
}

#[test]
fn adam_matches_scalar_reference() {
    let cfg = OptimizerConfig::paper().with_total_steps(150);
    let cfg = OptimizerConfig { warmup_steps: 20, ..cfg };
    for (target, lr_scale) in [(3.0, 5e3), (-0.7, 1e4), (0.0, 1.0)] {
        let mut reference = ScalarAdam {
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.epsilon,
            m: 0.0,
            v: 0.0,
            beta1_t: 1.0,
            beta2_t: 1.0,
        };
        let mut params = ModelParams { weights: vec![1.0], bias: 0.5 };
        let mut state = AdamState::new(1);
        let mut theta = 1.0;
        let mut phi = 0.5;
        let mut ref_bias = reference;
        for step in 0..120 {
            let lr = lr_at(step, &cfg).unwrap() * lr_scale;
            let grads = Gradient { weights: vec![params.weights[0] - target], bias: 2.0 * params.bias };
            adam_step(&mut state, &grads, lr, &cfg, &mut params).unwrap();
            theta = reference.step(theta, theta - target, lr);
            phi = ref_bias.step(phi, 2.0 * phi, lr);
            assert!((params.weights[0] - theta).abs() < 1e-10, "step {step}: {} vs {theta}", params.weights[0]);
            assert!((params.bias - phi).abs() < 1e-10, "step {step}: bias {} vs {phi}", params.bias);
        }
        assert_eq!(state.t, 120);
    }
}

#[test]
fn first_adam_step_moves_by_lr() {
    let cfg = OptimizerConfig::paper();
    let mut params = ModelParams::zeros(1);
    let mut state = AdamState::new(1);
    let grads = Gradient { weights: vec![1.0], bias: 0.0 };
    adam_step(&mut state, &grads, 0.1, &cfg, &mut params).unwrap();
    assert!((params.weights[0] + 0.1 / (1.0 + 1e-8)).abs() < 1e-15);
    assert_eq!(params.bias, 0.0);
}

#[test]
fn schedule_anchor_points() {
    let cfg = OptimizerConfig::paper().with_total_steps(7200);
    assert_eq!(lr_at(0, &cfg).unwrap(), 0.0);
    assert_eq!(lr_at(500, &cfg).unwrap(), 2e-5);
    assert_eq!(lr_at(250, &cfg).unwrap(), 1e-5);
    assert_eq!(lr_at(7200, &cfg).unwrap(), 0.0);
    assert!(matches!(lr_at(7201, &cfg), Err(TrainError::StepOutOfRange { .. })));
}

proptest! {
    #[test]
    fn schedule_is_piecewise_linear(warmup in 1usize..300, extra in 1usize..300, peak in 1e-6f64..1.0) {
        let cfg = OptimizerConfig { peak_lr: peak, warmup_steps: warmup, ..OptimizerConfig::paper() }
            .with_total_steps(warmup + extra);
        let lr = |s| lr_at(s, &cfg).unwrap();
        prop_assert_eq!(lr(0), 0.0);
        prop_assert_eq!(lr(warmup), peak);
        prop_assert_eq!(lr(warmup + extra), 0.0);
        let max = (0..=warmup + extra).map(lr).fold(0.0, f64::max);
        prop_assert_eq!(max, peak);
        // Constant slope on each piece: second differences vanish.
        for s in 1..warmup + extra {
            if s == warmup {
                continue;
            }
            let second = lr(s + 1) - 2.0 * lr(s) + lr(s - 1);
            prop_assert!(second.abs() < 1e-12 * peak.max(1.0));
        }
        // Continuity: neighbouring steps differ by at most one slope unit.
        let step_bound = peak / warmup.min(extra) as f64 + 1e-15;
        for s in 0..warmup + extra {
            prop_assert!((lr(s + 1) - lr(s)).abs() <= step_bound);
        }
    }
}

/// Replays a fixed F1 sequence and keeps a copy of every snapshot it saw.
struct Scripted {
    scores: Vec<f64>,
    seen: Vec<ModelParams>,
}

impl Validator for Scripted {
    fn validate(&mut self, params: &ModelParams) -> ValidationScore {
        let f1 = self.scores.get(self.seen.len()).copied().unwrap_or(0.0);
        self.seen.push(params.clone());
        ValidationScore { f1, loss: 1.0 - f1 }
    }
}

fn scripted_train(n: usize) -> Vec<Example> {
    (0..n).map(|i| Example::new(FeatureVector::from_pairs([(i % 4, 1.0)]), Label::from_bool(i % 4 == 0))).collect()
}

fn scripted_config() -> TrainingConfig {
    TrainingConfig { batch_size: 4, validate_every: 1, max_epochs: 100, ..TrainingConfig::default() }
}

#[test]
fn early_stop_after_patience_and_restore_best() {
    let mut scores = vec![0.2, 0.4, 0.8];
    scores.extend(std::iter::repeat_n(0.5, 50));
    let mut v = Scripted { scores, seen: Vec::new() };
    let (params, log) =
        fit_with(&scripted_train(40), &mut v, 4, &scripted_config(), &OptimizerConfig::linear_preset()).unwrap();
    assert_eq!(log.stop_reason, StopReason::EarlyStopped);
    assert_eq!(log.records.len(), 13);
    assert_eq!(log.best_index, 3);
    assert_eq!(log.best().f1, 0.8);
    assert_eq!(params, v.seen[2]);
    assert_ne!(params, v.seen[12]);
}

#[test]
fn exhaustion_before_patience() {
    let mut v = Scripted { scores: vec![0.1, 0.3, 0.2], seen: Vec::new() };
    let cfg = TrainingConfig { max_epochs: 1, ..scripted_config() };
    let (params, log) = fit_with(&scripted_train(12), &mut v, 4, &cfg, &OptimizerConfig::linear_preset()).unwrap();
    assert_eq!(log.stop_reason, StopReason::MaxEpochs);
    assert_eq!(log.records.len(), 3);
    assert_eq!(params, v.seen[1]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn stale_validations_never_exceed_patience(scores in prop::collection::vec(0.0f64..1.0, 1..60), patience in 1usize..12) {
        let mut v = Scripted { scores: scores.clone(), seen: Vec::new() };
        let cfg = TrainingConfig { patience, max_epochs: 15, ..scripted_config() };
        let (params, log) = fit_with(&scripted_train(16), &mut v, 4, &cfg, &OptimizerConfig::linear_preset()).unwrap();
        let best = log.best_index;
        prop_assert!(log.records.len() - best <= patience);
        let max = log.records.iter().map(|r| r.f1).fold(f64::MIN, f64::max);
        prop_assert_eq!(log.best().f1, max);
        prop_assert!(log.records[..best - 1].iter().all(|r| r.f1 < max));
        prop_assert_eq!(&params, &v.seen[best - 1]);
    }
}

#[test]
fn returned_params_reproduce_best_f1() {
    let data = fixtures::planted_corpus(1500, 0.05, 4);
    let split = stratified_split(&data, [0.8, 0.1, 0.1], 4).unwrap();
    let tcfg = TrainingConfig { validate_every: 20, ..TrainingConfig::default() };
    let (clf, log) = train_classifier(
        &split.train,
        &split.validation,
        VocabularySettings::default(),
        &tcfg,
        &OptimizerConfig::linear_preset(),
    )
    .unwrap();
    let val = examples(&split.validation, clf.vocabulary());
    let mut held_out = HeldOut { examples: &val, threshold: 0.5, class_weights: tcfg.class_weights };
    assert_eq!(held_out.validate(&clf.model().params).f1, log.best().f1);
}

#[test]
fn training_is_deterministic() {
    let data = fixtures::planted_corpus(800, 0.05, 9);
    let split = stratified_split(&data, [0.8, 0.1, 0.1], 9).unwrap();
    let tcfg = TrainingConfig { validate_every: 10, seed: 17, ..TrainingConfig::default() };
    let run = || {
        train_classifier(
            &split.train,
            &split.validation,
            VocabularySettings::default(),
            &tcfg,
            &OptimizerConfig::linear_preset(),
        )
        .unwrap()
    };
    let (a, log_a) = run();
    let (b, log_b) = run();
    assert_eq!(log_a, log_b);
    assert_eq!(log_a.to_tsv(), log_b.to_tsv());
    assert_eq!(a.model().to_text(), b.model().to_text());
}

#[test]
fn uniform_class_weight_scale_leaves_boundary_unchanged() {
    let data = fixtures::planted_corpus(1000, 0.05, 12);
    let split = stratified_split(&data, [0.8, 0.1, 0.1], 12).unwrap();
    let predictions = |c: f64| {
        let tcfg = TrainingConfig {
            class_weights: ClassWeights { positive: c, negative: c },
            validate_every: 25,
            ..TrainingConfig::default()
        };
        let (clf, _) = train_classifier(
            &split.train,
            &split.validation,
            VocabularySettings::default(),
            &tcfg,
            &OptimizerConfig::linear_preset(),
        )
        .unwrap();
        examples(&data, clf.vocabulary())
            .iter()
            .map(|e| predict_proba(&clf.model().params, &e.features) >= 0.5)
            .collect::<Vec<bool>>()
    };
    let reference = predictions(1.0);
    assert!(reference.iter().any(|&p| p));
    for c in [0.05, 0.5, 3.0, 20.0] {
        assert_eq!(predictions(c), reference, "scale {c}");
    }
}

#[test]
fn separable_two_feature_fixture() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut sample = |positive: bool| {
        // Separating plane x1 = 0; x2 is noise.
        let x1: f64 = rng.random_range(1.0..2.0);
        let x1 = if positive { x1 } else { -x1 };
        let x2: f64 = rng.random_range(-1.0..1.0);
        Example::new(FeatureVector::from_pairs([(0, x1), (1, x2)]), Label::from_bool(positive))
    };
    let mut data: Vec<Example> = (0..5000).map(|i| sample(i % 50 == 0)).collect();
    let validation = data.split_off(4000);
    let (_, log) = fit(&data, &validation, 2, &TrainingConfig::default(), &OptimizerConfig::linear_preset()).unwrap();
    assert!(log.best().f1 >= 0.9, "{}", log.to_tsv());
}
