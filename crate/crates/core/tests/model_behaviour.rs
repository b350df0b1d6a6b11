use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sttune::builder::{DatasetHeader, Split, StatementDataset, StatementRecord};
use sttune::model::{train, ModelHandle, StatementScorer, TrainConfig};
use sttune::templates::Polarity;

const WORDS: [&str; 16] = [
    "river", "stone", "light", "paper", "cloud", "glass", "tiger", "house", "green", "metal", "sound", "field", "night",
    "bread", "chair", "water",
];

fn sentence(rng: &mut ChaCha8Rng, n: usize) -> String {
    (0..n).map(|_| *WORDS.choose(rng).unwrap()).collect::<Vec<_>>().join(" ")
}

fn record(statement: String, truth: bool, split: Split, i: usize) -> StatementRecord {
    StatementRecord {
        statement,
        truth,
        task_id: "synthetic".into(),
        dataset_id: "synthetic".into(),
        language: "en".into(),
        template_id: "marker".into(),
        polarity: Polarity::Affirmative,
        candidate: None,
        gold: truth.to_string(),
        source_row_id: i.to_string(),
        split,
    }
}

/// True statements carry a marker word somewhere in the sentence.
fn marker_dataset(n: usize, seed: u64) -> StatementDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let records = (0..n)
        .map(|i| {
            let truth = i % 2 == 0;
            let mut s = sentence(&mut rng, 7);
            if truth {
                s.push_str(" TRUEMARK");
            } else {
                s.push_str(" plain");
            }
            let split = if i % 10 == 9 || i % 10 == 8 { Split::Validation } else { Split::Train };
            record(s, truth, split, i)
        })
        .collect();
    StatementDataset {
        header: DatasetHeader {
            format_version: sttune::builder::FORMAT_VERSION,
            spec_digest: "synthetic".into(),
            seed,
            created_utc: "1970-01-01T00:00:00Z".into(),
        },
        records,
    }
}

fn one_epoch(seed: u64) -> TrainConfig {
    TrainConfig {
        epochs: 1,
        seed: Some(seed),
        ..TrainConfig::preset("tiny-encoder").unwrap()
    }
}

#[test]
fn marker_task_learned_in_one_epoch() {
    let data = marker_dataset(2000, 1);
    let model = train(&data, &one_epoch(7), "tiny-encoder").unwrap();
    let acc = model.provenance.validation_accuracy.unwrap();
    assert!(acc >= 0.95, "validation accuracy {acc}");
}

#[test]
fn untrained_model_is_near_uniform() {
    let model = ModelHandle::init("tiny-encoder", 11, 64).unwrap();
    let data = marker_dataset(1000, 2);
    let statements: Vec<String> = data.records.iter().map(|r| r.statement.clone()).collect();
    let p = model.score_chunked(&statements, 128).unwrap();
    let mean = p.iter().sum::<f64>() / p.len() as f64;
    assert!((0.35..=0.65).contains(&mean), "mean probability {mean}");
}

#[test]
fn scores_do_not_depend_on_batching() {
    let model = ModelHandle::init("tiny-encoder", 3, 64).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let statements: Vec<String> = (1..=24).map(|n| sentence(&mut rng, n)).collect();
    let whole = model.score(&statements).unwrap();
    for chunk in [1, 5, 16] {
        let parts = model.score_chunked(&statements, chunk).unwrap();
        for (a, b) in whole.iter().zip(&parts) {
            assert!((a - b).abs() <= 1e-4, "chunk {chunk}: {a} vs {b}");
        }
    }
}

#[test]
fn training_is_repeatable() {
    let data = marker_dataset(600, 4);
    let a = train(&data, &one_epoch(9), "tiny-encoder").unwrap();
    let b = train(&data, &one_epoch(9), "tiny-encoder").unwrap();
    let (va, vb) = (a.provenance.validation_accuracy.unwrap(), b.provenance.validation_accuracy.unwrap());
    assert!((va - vb).abs() <= 1e-6);
    let probe: Vec<String> = data.records.iter().take(50).map(|r| r.statement.clone()).collect();
    let (pa, pb) = (a.score(&probe).unwrap(), b.score(&probe).unwrap());
    for (x, y) in pa.iter().zip(&pb) {
        assert!((x - y).abs() <= 1e-6);
    }
}

#[test]
fn unknown_backend_is_rejected() {
    let data = marker_dataset(20, 1);
    assert!(train(&data, &one_epoch(1), "no-such-model").is_err());
}
