use std::fs;
use std::path::Path;

use degen_core::decode::StepDistribution;
use degen_core::rng::SplitMix64;
use degen_core::trace::{
    load_corpus, read_tensor, write_corpus, write_tensor, Corpus, Passage, Split, StateTrace,
    TensorHeader,
};
use degen_core::Error;
use proptest::prelude::*;

/// Header and payload assembled byte by byte.
fn expected_bytes(l: u32, t: u32, d: u32, data: &[f32]) -> Vec<u8> {
    let mut out = b"HS".to_vec();
    out.extend_from_slice(&1u16.to_le_bytes());
    for x in [l, t, d] {
        out.extend_from_slice(&x.to_le_bytes());
    }
    for v in data {
        out.extend_from_slice(&v.to_bits().to_le_bytes());
    }
    out
}

#[test]
fn hundred_random_traces_roundtrip_bitwise() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = SplitMix64::new(2024);
    for i in 0..100 {
        let l = 1 + rng.below(3) as u32;
        let t = 1 + rng.below(40) as u32;
        let d = 1 + rng.below(24) as u32;
        let data: Vec<f32> = (0..l * t * d)
            .map(|_| match rng.below(20) {
                0 => f32::from_bits(rng.next_u64() as u32),
                1 => f32::MIN_POSITIVE / 3.0,
                2 => -0.0,
                _ => (rng.next_f64() * 200.0 - 100.0) as f32,
            })
            .collect();
        let path = dir.path().join(format!("{i}.hst"));
        let header = TensorHeader { layers: l, steps: t, dim: d };
        write_tensor(&path, header, &data).unwrap();
        assert_eq!(fs::read(&path).unwrap(), expected_bytes(l, t, d, &data));
        let (h, back) = read_tensor(&path).unwrap();
        assert_eq!(h, header);
        let a: Vec<u32> = data.iter().map(|v| v.to_bits()).collect();
        let b: Vec<u32> = back.iter().map(|v| v.to_bits()).collect();
        assert_eq!(a, b);
    }
}

#[test]
fn malformed_tensors_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("x.hst");
    let good = expected_bytes(1, 2, 2, &[1.0, 2.0, 3.0, 4.0]);

    fs::write(&p, &good[..good.len() - 1]).unwrap();
    assert!(matches!(read_tensor(&p), Err(Error::Format(_))));
    let mut bad = good.clone();
    bad[0] = b'X';
    fs::write(&p, &bad).unwrap();
    assert!(matches!(read_tensor(&p), Err(Error::Format(_))));
    let mut bad = good.clone();
    bad[2] = 2;
    fs::write(&p, &bad).unwrap();
    assert!(matches!(read_tensor(&p), Err(Error::Format(_))));
    fs::write(&p, &good[..10]).unwrap();
    assert!(matches!(read_tensor(&p), Err(Error::Format(_))));
    assert!(write_tensor(&p, TensorHeader { layers: 1, steps: 1, dim: 2 }, &[1.0]).is_err());
}

fn random_corpus(seed: u64, n: usize, with_states: bool) -> Corpus {
    let mut rng = SplitMix64::new(seed);
    let vocab_size = 50;
    let mut c = Corpus::new(vocab_size);
    c.vocab = Some((0..vocab_size).map(|i| format!(" tok{i}")).collect());
    c.metadata.insert("source".into(), serde_json::json!("unit"));
    c.metadata.insert("seed".into(), serde_json::json!(seed));
    for i in 0..n {
        let len = 1 + rng.below(30) as usize;
        let tokens: Vec<u32> = (0..len).map(|_| rng.below(vocab_size as u64) as u32).collect();
        let split = [Split::Train, Split::Valid, Split::Test][i % 3];
        let mut p = if i % 2 == 0 {
            Passage::real(format!("p{i}"), tokens, split)
        } else {
            Passage::generated(format!("g{i}"), tokens, len / 2, Split::Synthetic)
        };
        if i % 4 == 0 {
            p.text = Some(format!("text {i} \u{e9}\n"));
        }
        let states = with_states.then(|| {
            let data = (0..2 * len * 3).map(|_| rng.next_f64() as f32 - 0.5).collect();
            StateTrace::new(p.id.clone(), 2, len, 3, data).unwrap()
        });
        c.push(p, states);
    }
    c
}

fn dir_snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                out.push((rel, fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn corpus_roundtrip_is_identity(seed in any::<u64>(), n in 1usize..12, with_states in any::<bool>()) {
        let dir = tempfile::tempdir().unwrap();
        let corpus = random_corpus(seed, n, with_states);
        let manifest = write_corpus(&corpus, dir.path()).unwrap();
        let before = dir_snapshot(dir.path());
        let loaded = load_corpus(&manifest).unwrap();
        prop_assert_eq!(&loaded, &corpus);
        // loading leaves files untouched
        prop_assert_eq!(dir_snapshot(dir.path()), before);
    }
}

#[test]
fn writing_twice_is_byte_identical() {
    let corpus = random_corpus(7, 9, true);
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    write_corpus(&corpus, a.path()).unwrap();
    write_corpus(&corpus, b.path()).unwrap();
    assert_eq!(dir_snapshot(a.path()), dir_snapshot(b.path()));
}

fn write_manifest(dir: &Path, body: serde_json::Value) -> std::path::PathBuf {
    let p = dir.join("manifest.json");
    fs::write(&p, serde_json::to_string_pretty(&body).unwrap()).unwrap();
    p
}

/// A corpus laid out the way an external exporter would write it.
fn exporter_layout(dir: &Path) {
    fs::create_dir_all(dir.join("st")).unwrap();
    fs::write(
        dir.join("tokens.jsonl"),
        concat!(
            r#"{"id": "a", "tokens": [0, 1, 2], "origin": "real", "condition_len": 0, "split": "train"}"#,
            "\n",
            r#"{"id": "b", "tokens": [2, 2], "text": "cc", "origin": "generated", "condition_len": 1, "split": "synthetic"}"#,
            "\n"
        ),
    )
    .unwrap();
    fs::write(dir.join("vocab.json"), r#"["a", "b", "c"]"#).unwrap();
    let data: Vec<f32> = (0..6).map(|x| x as f32).collect();
    write_tensor(&dir.join("st/a.hst"), TensorHeader { layers: 1, steps: 3, dim: 2 }, &data).unwrap();
    write_tensor(&dir.join("st/a.logits.hst"), TensorHeader { layers: 1, steps: 3, dim: 3 }, &[0.0, 0.0, 0.0, 1.0, 2.0, 3.0, -1.0, 0.0, 1.0]).unwrap();
}

#[test]
fn exporter_manifest_loads() {
    let dir = tempfile::tempdir().unwrap();
    exporter_layout(dir.path());
    let m = write_manifest(
        dir.path(),
        serde_json::json!({
            "format_version": 1,
            "vocab_size": 3,
            "vocab": "vocab.json",
            "metadata": {"model": "toy"},
            "entries": [
                {"passage_id": "a", "tokens": "tokens.jsonl", "states": "st/a.hst", "state_shape": [1, 3, 2], "logits": "st/a.logits.hst"},
                {"passage_id": "b", "tokens": "tokens.jsonl"}
            ]
        }),
    );
    let c = load_corpus(&m).unwrap();
    assert_eq!(c.entries.len(), 2);
    assert_eq!(c.token_text(2), Some("c"));
    let a = &c.entries[0];
    assert_eq!(a.states.as_ref().unwrap().state(0, 2), &[4.0, 5.0]);
    let (h, logits) = read_tensor(a.logits.as_ref().unwrap()).unwrap();
    assert_eq!((h.steps, h.dim), (3, 3));
    let d = StepDistribution::from_logits(&logits[3..6]).unwrap();
    assert_eq!(d.argmax(), 2);
    assert_eq!(c.entries[1].passage.continuation(), &[2]);
}

fn load_err(body: serde_json::Value, tweak: impl FnOnce(&Path)) -> Error {
    let dir = tempfile::tempdir().unwrap();
    exporter_layout(dir.path());
    tweak(dir.path());
    let m = write_manifest(dir.path(), body);
    load_corpus(&m).unwrap_err()
}

fn manifest_with(entry: serde_json::Value) -> serde_json::Value {
    serde_json::json!({"format_version": 1, "vocab_size": 3, "entries": [entry]})
}

#[test]
fn loader_errors_name_the_passage() {
    let e = load_err(
        manifest_with(serde_json::json!({"passage_id": "a", "tokens": "tokens.jsonl", "states": "st/missing.hst"})),
        |_| {},
    );
    assert!(matches!(&e, Error::Load { passage_id, .. } if passage_id == "a"), "{e}");

    let e = load_err(
        manifest_with(serde_json::json!({"passage_id": "zzz", "tokens": "tokens.jsonl"})),
        |_| {},
    );
    assert!(matches!(&e, Error::Load { passage_id, .. } if passage_id == "zzz"), "{e}");

    let e = load_err(
        manifest_with(serde_json::json!({"passage_id": "a", "tokens": "nope.jsonl"})),
        |_| {},
    );
    assert!(matches!(&e, Error::Load { passage_id, .. } if passage_id == "a"), "{e}");
}

#[test]
fn loader_rejects_inconsistent_files() {
    // declared shape differs from the file
    let e = load_err(
        manifest_with(serde_json::json!({"passage_id": "a", "tokens": "tokens.jsonl", "states": "st/a.hst", "state_shape": [1, 3, 4]})),
        |_| {},
    );
    assert!(matches!(e, Error::Format(_)), "{e}");
    // T disagrees with the token count
    let e = load_err(
        manifest_with(serde_json::json!({"passage_id": "a", "tokens": "tokens.jsonl", "states": "st/a.hst"})),
        |d| {
            write_tensor(&d.join("st/a.hst"), TensorHeader { layers: 1, steps: 2, dim: 3 }, &[0.0; 6]).unwrap();
        },
    );
    assert!(matches!(e, Error::Format(_)), "{e}");
    // token outside the vocabulary
    let e = load_err(
        serde_json::json!({"format_version": 1, "vocab_size": 2, "entries": [{"passage_id": "a", "tokens": "tokens.jsonl"}]}),
        |_| {},
    );
    assert!(matches!(e, Error::Format(_) | Error::Usage(_)), "{e}");
    // duplicate ids
    let e = load_err(
        serde_json::json!({"format_version": 1, "vocab_size": 3, "entries": [
            {"passage_id": "a", "tokens": "tokens.jsonl"}, {"passage_id": "a", "tokens": "tokens.jsonl"}]}),
        |_| {},
    );
    assert!(matches!(e, Error::Format(_)), "{e}");
    // unknown format version
    let e = load_err(
        serde_json::json!({"format_version": 2, "vocab_size": 3, "entries": []}),
        |_| {},
    );
    assert!(matches!(e, Error::Format(_)), "{e}");
    // vocabulary length mismatch
    let e = load_err(
        serde_json::json!({"format_version": 1, "vocab_size": 3, "vocab": "vocab.json", "entries": []}),
        |d| fs::write(d.join("vocab.json"), r#"["a"]"#).unwrap(),
    );
    assert!(matches!(e, Error::Format(_)), "{e}");
    // malformed JSON line
    let e = load_err(
        manifest_with(serde_json::json!({"passage_id": "a", "tokens": "tokens.jsonl"})),
        |d| fs::write(d.join("tokens.jsonl"), "{not json}\n").unwrap(),
    );
    assert!(matches!(e, Error::Format(_)), "{e}");
}

#[test]
fn logits_are_copied_on_write() {
    let dir = tempfile::tempdir().unwrap();
    exporter_layout(dir.path());
    let m = write_manifest(
        dir.path(),
        manifest_with(serde_json::json!({"passage_id": "a", "tokens": "tokens.jsonl", "logits": "st/a.logits.hst"})),
    );
    let c = load_corpus(&m).unwrap();
    let out = tempfile::tempdir().unwrap();
    let m2 = write_corpus(&c, out.path()).unwrap();
    let c2 = load_corpus(&m2).unwrap();
    assert_eq!(
        fs::read(c2.entries[0].logits.as_ref().unwrap()).unwrap(),
        fs::read(dir.path().join("st/a.logits.hst")).unwrap()
    );
}
