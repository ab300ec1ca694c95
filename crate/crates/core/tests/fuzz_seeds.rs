//! Replays the checked-in fuzz corpora, plus deterministic mutations of each
//! seed, through the same assertions the fuzz targets make.

use std::path::PathBuf;

use pctnews::checkpoint::{sniff, CheckpointKind, EncoderCheckpoint};
use pctnews::config::ConfigFile;
use pctnews::data::{read_dataset, validate_dataset, write_dataset, Ar1Config, SynthConfig};
use pctnews::evaluation::{ComparisonTable, MetricsReport};
use pctnews::lstm::{LstmCheckpoint, LstmConfig};
use pctnews::model::ModelConfig;
use pctnews::numerics::Rng;
use pctnews::tokenizer::{build_vocab, encode, Vocabulary};
use pctnews::training::TrainConfig;

const MUTANTS_PER_SEED: usize = 300;

fn seeds(target: &str) -> Vec<Vec<u8>> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus").join(target);
    let mut paths: Vec<PathBuf> = std::fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| e.unwrap().path())
        .collect();
    paths.sort();
    assert!(!paths.is_empty(), "no seeds for {target}");
    paths.iter().map(|p| std::fs::read(p).unwrap()).collect()
}

fn mutate(rng: &mut Rng, seed: &[u8]) -> Vec<u8> {
    let mut out = seed.to_vec();
    for _ in 0..1 + rng.below(4) {
        match rng.below(4) {
            0 if !out.is_empty() => out.truncate(rng.below(out.len())),
            1 if !out.is_empty() => {
                let i = rng.below(out.len());
                out[i] ^= 1 << rng.below(8);
            }
            2 => {
                let i = rng.below(out.len() + 1);
                out.insert(i, b",\n\"#=|0\xff"[rng.below(8)]);
            }
            _ if !out.is_empty() => {
                let i = rng.below(out.len());
                out.remove(i);
            }
            _ => {}
        }
    }
    out
}

fn replay(target: &str, check: impl Fn(&[u8])) {
    let mut rng = Rng::new(0, target);
    for seed in seeds(target) {
        check(&seed);
        for _ in 0..MUTANTS_PER_SEED {
            check(&mutate(&mut rng, &seed));
        }
    }
}

#[test]
fn dataset_csv() {
    replay("dataset_csv", |data| {
        let report = validate_dataset(data);
        match read_dataset(data) {
            Ok(dataset) => {
                assert!(report.is_valid());
                let mut buf = Vec::new();
                write_dataset(&dataset, &mut buf).unwrap();
                assert_eq!(read_dataset(buf.as_slice()).unwrap(), dataset);
            }
            Err(_) => assert!(!report.is_valid()),
        }
    });
}

#[test]
fn vocab_file() {
    replay("vocab_file", |data| {
        if let Ok(vocab) = Vocabulary::read(data) {
            let mut buf = Vec::new();
            vocab.write(&mut buf).unwrap();
            assert_eq!(Vocabulary::read(buf.as_slice()).unwrap(), vocab);
        }
    });
}

#[test]
fn checkpoint() {
    let mut accepted = 0;
    for seed in seeds("checkpoint") {
        if EncoderCheckpoint::from_bytes(&seed).is_ok() || LstmCheckpoint::from_bytes(&seed).is_ok() {
            accepted += 1;
        }
    }
    assert_eq!(accepted, 2, "both trained seed checkpoints must load");
    replay("checkpoint", |data| match sniff(data) {
        Ok(CheckpointKind::Encoder) => {
            if let Ok(ck) = EncoderCheckpoint::from_bytes(data) {
                let bytes = ck.to_bytes().unwrap();
                assert_eq!(EncoderCheckpoint::from_bytes(&bytes).unwrap().to_bytes().unwrap(), bytes);
            }
        }
        Ok(CheckpointKind::Lstm) => {
            if let Ok(ck) = LstmCheckpoint::from_bytes(data) {
                let bytes = ck.to_bytes().unwrap();
                assert_eq!(LstmCheckpoint::from_bytes(&bytes).unwrap().to_bytes().unwrap(), bytes);
            }
        }
        Err(_) => {
            assert!(EncoderCheckpoint::from_bytes(data).is_err());
            assert!(LstmCheckpoint::from_bytes(data).is_err());
        }
    });
}

#[test]
fn config_file() {
    replay("config_file", |data| {
        let Ok(text) = std::str::from_utf8(data) else { return };
        let Ok(file) = ConfigFile::parse(text) else { return };
        let mut f = file.clone();
        if f.model_config(ModelConfig::micro()).is_ok() && f.train_config(TrainConfig::default()).is_ok() {
            let _ = f.finish();
        }
        let _ = file.clone().lstm_config(LstmConfig::default());
        let _ = file.clone().synth_config(SynthConfig::default());
        let _ = file.clone().ar1_config(Ar1Config::default());
    });
}

#[test]
fn report_json() {
    for seed in seeds("report_json") {
        MetricsReport::from_json(std::str::from_utf8(&seed).unwrap()).unwrap();
    }
    replay("report_json", |data| {
        let Ok(text) = std::str::from_utf8(data) else { return };
        if let Ok(report) = MetricsReport::from_json(text) {
            if report.per_example.iter().all(|e| e.prediction.is_finite() && e.actual.is_finite()) {
                let json = report.to_json().unwrap();
                assert_eq!(MetricsReport::from_json(&json).unwrap().to_json().unwrap(), json);
            }
        }
    });
}

#[test]
fn report_csv() {
    replay("report_csv", |data| {
        let Ok(text) = std::str::from_utf8(data) else { return };
        if let Ok(table) = ComparisonTable::from_csv(text) {
            let csv = table.to_csv();
            assert_eq!(ComparisonTable::from_csv(&csv).unwrap().to_csv(), csv);
        }
    });
}

#[test]
fn tokenizer_encode() {
    let vocab = build_vocab(
        &[
            "Acme beats estimates as profit surges | Newswire | Acme Corp | 2023-01-05",
            "Shares plunge after recall probe | Market Daily | Globex | 2023-02-11",
        ],
        300,
    )
    .unwrap();
    replay("tokenizer_encode", |data| {
        let Some((&len, rest)) = data.split_first() else { return };
        let text = String::from_utf8_lossy(rest);
        match encode(&text, &vocab, len as usize) {
            Ok(seq) => seq.check(vocab.len()).unwrap(),
            Err(_) => assert!(len < 2),
        }
    });
}
