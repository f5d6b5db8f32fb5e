use rgse_core::config::{ExperimentConfig, LayerRange, ModelKind, RnmtEncoder};
use rgse_core::encoders::Vocab;
use rgse_core::models::{Example, Model};
use rgse_core::synth::{generate_task, SynthSpec};
use rgse_core::train::{train, TrainReport};
use rgse_core::{Error, ParamStore};

struct Setup {
    model: Model,
    store: ParamStore,
    examples: Vec<Example>,
    tgt_vocab: usize,
}

fn setup(config: &ExperimentConfig, spec: &SynthSpec) -> Setup {
    let task = generate_task(spec).unwrap();
    let src = Vocab::build(task.train.iter().flat_map(|p| p.source.tokens()).map(String::as_str));
    let tgt = Vocab::build(task.train.iter().flat_map(|p| &p.target).map(String::as_str));
    let examples: Vec<Example> = task.train.into_iter().map(|p| Example::new(p.source, &p.target, &src, &tgt)).collect();
    let mut store = ParamStore::new(config.seed);
    let model = Model::build(config, &mut store, src.len(), tgt.len(), &[]).unwrap();
    Setup {
        model,
        store,
        examples,
        tgt_vocab: tgt.len(),
    }
}

fn run(config: &ExperimentConfig, spec: &SynthSpec) -> (Setup, TrainReport) {
    let mut s = setup(config, spec);
    let report = train(&s.model, &mut s.store, &s.examples, None, config, |_| {}).unwrap();
    (s, report)
}

fn one_pair() -> SynthSpec {
    SynthSpec {
        min_len: 5,
        max_len: 5,
        train: 1,
        test: 0,
        seed: 3,
        ..SynthSpec::default()
    }
}

fn hybrid() -> ExperimentConfig {
    ExperimentConfig {
        model: ModelKind::Hybrid,
        layers: 2,
        rgse_layers: LayerRange::new(1, 1).unwrap(),
        ..ExperimentConfig::default()
    }
}

fn memorizes(config: ExperimentConfig) {
    let config = ExperimentConfig {
        epochs: 200,
        learning_rate: 0.01,
        ..config
    };
    let (s, report) = run(&config, &one_pair());
    assert!(report.final_loss() < 0.01, "final loss {}", report.final_loss());
    let ex = &s.examples[0];
    let out = s.model.greedy_decode(&s.store, &ex.graph, &ex.src, 20).unwrap();
    assert_eq!(out, ex.tgt);
}

#[test]
fn rnmt_memorizes_one_pair() {
    memorizes(ExperimentConfig::default());
}

#[test]
fn hybrid_memorizes_one_pair() {
    memorizes(hybrid());
}

#[test]
fn initial_loss_is_near_uniform_entropy() {
    let spec = SynthSpec {
        train: 64,
        test: 0,
        ..SynthSpec::default()
    };
    for config in [ExperimentConfig::default(), hybrid()] {
        let config = ExperimentConfig { epochs: 0, ..config };
        let (s, report) = run(&config, &spec);
        let uniform = (s.tgt_vocab as f64).ln();
        let first = report.epochs[0].train_loss;
        assert!((first - uniform).abs() <= 0.2 * uniform, "{first} vs ln|V| = {uniform}");
    }
}

#[test]
fn zero_learning_rate_keeps_loss_constant() {
    let config = ExperimentConfig {
        learning_rate: 0.0,
        epochs: 3,
        optimizer: rgse_core::config::OptimizerName::Sgd,
        ..ExperimentConfig::default()
    };
    let spec = SynthSpec {
        train: 32,
        test: 0,
        ..SynthSpec::default()
    };
    let (_, report) = run(&config, &spec);
    let first = report.epochs[0].train_loss;
    assert!(report.epochs.iter().all(|e| e.train_loss == first));
}

#[test]
fn same_config_same_trajectory() {
    let spec = SynthSpec {
        train: 48,
        test: 0,
        ..SynthSpec::default()
    };
    for encoder in [RnmtEncoder::BiGru, RnmtEncoder::BiGruRgse, RnmtEncoder::BiGruGcn] {
        let config = ExperimentConfig {
            encoder,
            epochs: 2,
            ..ExperimentConfig::default()
        };
        let (a, ra) = run(&config, &spec);
        let (b, rb) = run(&config, &spec);
        assert_eq!(ra, rb);
        assert_eq!(a.store, b.store);
    }
}

#[test]
fn non_finite_loss_aborts_with_the_parameter() {
    let config = ExperimentConfig {
        epochs: 1,
        ..ExperimentConfig::default()
    };
    let mut s = setup(&config, &one_pair());
    let name = "dec.out.w";
    let t = s.store.get_mut(name).expect("output projection exists");
    t.data_mut()[0] = f64::NAN;
    match train(&s.model, &mut s.store, &s.examples, None, &config, |_| {}) {
        Err(Error::Numeric { detail, .. }) => assert!(detail.contains("epoch 0"), "{detail}"),
        other => panic!("expected a numeric error, got {other:?}"),
    }
}
