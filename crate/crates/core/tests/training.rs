use dart_core::data::{synth_dataset, SynthSpec};
use dart_core::model::{
    extract_embeddings, learning_rate, read_checkpoint, reconstruct, train, train_from, write_checkpoint, CodebookSizes,
    StepRecord, Trainer,
};
use dart_core::{Dataset, Error, ModelConfig};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn small_data() -> Dataset {
    synth_dataset(&SynthSpec {
        n_accents: 3,
        speakers_per_accent: 2,
        utterances_per_speaker: 10,
        frames: 6,
        feature_dim: 8,
        seed: 3,
        ..SynthSpec::default()
    })
    .unwrap()
}

fn small_config() -> ModelConfig {
    ModelConfig {
        feature_dim: 8,
        hidden_dim: 32,
        latent_dim: 3,
        codebook_sizes: CodebookSizes { speaker: 16, accent: 16 },
        batch_size: 12,
        seed: 8,
        ..ModelConfig::default()
    }
    .scaled_to(200)
}

fn bits(history: &[StepRecord]) -> Vec<[u64; 6]> {
    history
        .iter()
        .map(|r| {
            let l = r.loss;
            [r.learning_rate, l.recon, l.kl, l.commitment, l.codebook, l.total].map(f64::to_bits)
        })
        .collect()
}

#[test]
fn two_hundred_steps_reduce_the_loss() {
    let data = small_data();
    assert_eq!(data.len(), 60);
    let out = train(&small_config(), &data).unwrap();
    assert_eq!(out.history.len(), 200);
    let first = out.history.first().unwrap().loss.total;
    let last = out.history.last().unwrap().loss.total;
    assert!(last < first, "{first} -> {last}");
    for r in &out.history {
        let l = r.loss;
        assert!(l.first_non_finite().is_none());
        assert!((l.total - (l.recon + l.beta * l.kl + l.commitment + l.codebook)).abs() <= 1e-12);
    }
}

#[test]
fn training_is_deterministic_and_order_invariant() {
    let data = small_data();
    let cfg = small_config().scaled_to(60);
    let a = train(&cfg, &data).unwrap();
    let b = train(&cfg, &data).unwrap();
    assert_eq!(bits(&a.history), bits(&b.history));

    let mut shuffled = data.clone();
    shuffled.utterances.shuffle(&mut ChaCha8Rng::seed_from_u64(99));
    assert_ne!(shuffled, data);
    let c = train(&cfg, &shuffled).unwrap();
    assert_eq!(bits(&a.history), bits(&c.history));
    assert_eq!(extract_embeddings(&a.model, &data).unwrap(), extract_embeddings(&c.model, &data).unwrap());

    let other = train(&ModelConfig { seed: cfg.seed + 1, ..cfg }, &data).unwrap();
    assert_ne!(bits(&a.history), bits(&other.history));
}

#[test]
fn stepping_manually_matches_run() {
    let data = small_data();
    let cfg = small_config().scaled_to(10);
    let mut trainer = Trainer::new(&cfg, &data, None).unwrap();
    let manual: Vec<StepRecord> = (0..10).map(|_| trainer.step().unwrap()).collect();
    assert_eq!(trainer.steps_done(), 10);
    assert!(matches!(trainer.step(), Err(Error::Contract(_))));
    assert_eq!(bits(&manual), bits(&train(&cfg, &data).unwrap().history));
    for r in &manual {
        assert_eq!(r.learning_rate, learning_rate(r.step, &cfg).unwrap());
    }
}

#[test]
fn trained_checkpoints_round_trip() {
    let data = small_data();
    let out = train(&small_config().scaled_to(20), &data).unwrap();
    let mut buf = Vec::new();
    write_checkpoint(&out.model, &mut buf).unwrap();
    let back = read_checkpoint(buf.as_slice()).unwrap();
    assert_eq!(extract_embeddings(&back, &data).unwrap(), extract_embeddings(&out.model, &data).unwrap());
    assert_eq!(reconstruct(&back, &data).unwrap(), reconstruct(&out.model, &data).unwrap());
    let mut again = Vec::new();
    write_checkpoint(&back, &mut again).unwrap();
    assert_eq!(again, buf);
}

#[test]
fn frozen_decoder_fine_tuning_keeps_decoder_weights() {
    let data = small_data();
    let base = train(&small_config().scaled_to(20), &data).unwrap();
    let cfg = ModelConfig { freeze_decoder: true, ..small_config().scaled_to(20) };
    let tuned = train_from(&cfg, &data, &base.model).unwrap();
    for ((name, a), (_, b)) in base.model.named_tensors().into_iter().zip(tuned.model.named_tensors()) {
        if name.starts_with("decoder.") {
            assert_eq!(a, b, "{name}");
        }
    }
    assert_ne!(
        extract_embeddings(&base.model, &data).unwrap(),
        extract_embeddings(&tuned.model, &data).unwrap()
    );
}

#[test]
fn overflowing_features_report_divergence() {
    let mut data = small_data();
    for row in &mut data.utterances[0].features {
        row.iter_mut().for_each(|v| *v = 1e200);
    }
    let cfg = ModelConfig { batch_size: 60, ..small_config() };
    match train(&cfg, &data) {
        Err(Error::Divergence { step: 1, term }) => assert_eq!(term, "recon"),
        other => panic!("expected divergence, got {other:?}"),
    }
}

#[test]
fn empty_and_mismatched_datasets_are_rejected() {
    assert!(matches!(train(&small_config(), &Dataset::default()), Err(Error::Validation(_))));
    let cfg = ModelConfig { feature_dim: 5, ..small_config() };
    assert!(train(&cfg, &small_data()).is_err());
}
