//! End-to-end runs of the `multirate` binary.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn multirate(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_multirate"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn vector(n: usize, offset: f32) -> String {
    let v: Vec<String> = (0..n).map(|i| format!("{}", (i as f32 * 0.37 + offset).sin())).collect();
    format!("[{}]", v.join(", "))
}

/// One word, one syllable, two phones lasting 2 and 3 frames.
fn tiny_tree(dir: &Path) -> String {
    let doc = format!(
        r#"{{
  "sentence": {},
  "phrases": [{{"features": {}, "span": [0, 1]}}],
  "words": [{}],
  "syllables": [{}],
  "phones": [{}, {}],
  "alignment": {{"word_syllable_counts": [1], "syllable_phone_counts": [2]}},
  "durations": [2, 3]
}}"#,
        vector(4, 0.1),
        vector(4, 0.2),
        vector(32, 0.3),
        vector(16, 0.4),
        vector(24, 0.5),
        vector(24, 0.6),
    );
    let path = dir.join("tiny.json");
    fs::write(&path, doc).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn synth_writes_header_and_frames() {
    let dir = tempfile::tempdir().unwrap();
    let tree = tiny_tree(dir.path());
    let out = dir.path().join("tiny.frames");
    let run = multirate(&["synth", &tree, "--out", out.to_str().unwrap()]);
    assert_eq!(code(&run), 0, "{}", String::from_utf8_lossy(&run.stderr));
    let bytes = fs::read(&out).unwrap();
    assert_eq!(bytes.len(), 8 + 5 * 19 * 4);
    assert_eq!(u64::from_le_bytes(bytes[..8].try_into().unwrap()), 5);
}

#[test]
fn synth_is_reproducible_for_every_model() {
    let dir = tempfile::tempdir().unwrap();
    let tree = tiny_tree(dir.path());
    for model in ["multirate", "multirate-nopool", "lstm", "selfattn"] {
        let mut files = Vec::new();
        for run in 0..2 {
            let out = dir.path().join(format!("{model}-{run}.frames"));
            let r = multirate(&["synth", &tree, "--model", model, "--seed", "3", "--out", out.to_str().unwrap()]);
            assert_eq!(code(&r), 0, "{model}: {}", String::from_utf8_lossy(&r.stderr));
            files.push(fs::read(out).unwrap());
        }
        assert_eq!(files[0], files[1], "{model}");
    }
}

#[test]
fn weight_file_and_seeded_init_agree() {
    let dir = tempfile::tempdir().unwrap();
    let tree = tiny_tree(dir.path());
    let w = dir.path().join("w.smw");
    let w2 = dir.path().join("w2.smw");
    for path in [&w, &w2] {
        let r = multirate(&["init-weights", "--seed", "9", "--out", path.to_str().unwrap()]);
        assert_eq!(code(&r), 0);
    }
    assert_eq!(fs::read(&w).unwrap(), fs::read(&w2).unwrap());

    let a = dir.path().join("a.frames");
    let b = dir.path().join("b.frames");
    multirate(&["synth", &tree, "--weights", w.to_str().unwrap(), "--out", a.to_str().unwrap()]);
    multirate(&["synth", &tree, "--seed", "9", "--out", b.to_str().unwrap()]);
    assert_eq!(fs::read(a).unwrap(), fs::read(b).unwrap());
}

#[test]
fn text_output_has_named_columns() {
    let dir = tempfile::tempdir().unwrap();
    let tree = tiny_tree(dir.path());
    let out = dir.path().join("tiny.csv");
    let r = multirate(&["synth", &tree, "--text", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&r), 0);
    let text = fs::read_to_string(out).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 6);
    assert!(lines[0].starts_with("mfcc0,"));
    assert!(lines[0].ends_with(",f0,periodicity0,periodicity1,periodicity2,periodicity3,periodicity4"));
    assert!(lines[1..].iter().all(|l| l.split(',').count() == 19));
}

#[test]
fn corpus_and_multi_tree_synth() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus");
    let r = multirate(&["gen-corpus", "--count", "3", "--seconds", "1", "--out", corpus.to_str().unwrap()]);
    assert_eq!(code(&r), 0);
    let mut trees: Vec<String> = fs::read_dir(&corpus)
        .unwrap()
        .map(|e| e.unwrap().path().to_str().unwrap().to_string())
        .collect();
    trees.sort();
    assert_eq!(trees.len(), 3);
    let out = dir.path().join("frames");
    let mut args = vec!["synth", "--jobs", "2", "--out", out.to_str().unwrap()];
    args.extend(trees.iter().map(String::as_str));
    let r = multirate(&args);
    assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stderr));
    for entry in fs::read_dir(&out).unwrap() {
        let bytes = fs::read(entry.unwrap().path()).unwrap();
        let frames = u64::from_le_bytes(bytes[..8].try_into().unwrap()) as usize;
        assert_eq!(frames, 80);
        assert_eq!(bytes.len(), 8 + frames * 19 * 4);
    }
}

#[test]
fn validate_passes_and_detects_a_perturbed_kernel() {
    let ok = multirate(&["validate", "--cases", "50", "--decode-cases", "2"]);
    assert_eq!(code(&ok), 0, "{}", String::from_utf8_lossy(&ok.stdout));
    let stdout = String::from_utf8_lossy(&ok.stdout);
    assert_eq!(stdout.lines().filter(|l| l.contains(" PASS ")).count(), 8);

    let bad = multirate(&["validate", "--cases", "50", "--decode-cases", "2", "--perturb", "attend_head"]);
    assert_eq!(code(&bad), 1);
    assert!(String::from_utf8_lossy(&bad.stdout).contains("attend_head        FAIL"));
}

#[test]
fn bench_writes_csv_and_chart() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("bench");
    let r = multirate(&[
        "bench", "--models", "multirate,lstm", "--lengths", "1,2", "--best-of", "1", "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stderr));
    let csv = fs::read_to_string(out.join("bench.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "model,audio_s,synth_s,rtf,first_frame_ms,per_frame_macs,encoder_macs,repeats");
    assert_eq!(lines.len(), 5);
    assert!(fs::read_to_string(out.join("rtf.svg")).unwrap().starts_with("<svg"));
}

#[test]
fn exit_codes_follow_error_kinds() {
    let dir = tempfile::tempdir().unwrap();
    let tree = tiny_tree(dir.path());
    let out = dir.path().join("x.frames");
    let out = out.to_str().unwrap();

    assert_eq!(code(&multirate(&["synth"])), 2);
    assert_eq!(code(&multirate(&["frobnicate"])), 2);
    assert_eq!(code(&multirate(&["synth", &tree, "--model", "rnn", "--out", out])), 2);
    assert_eq!(code(&multirate(&["bench", "--repeats", "2"])), 2);

    let missing = dir.path().join("missing.json");
    assert_eq!(code(&multirate(&["synth", missing.to_str().unwrap(), "--out", out])), 3);

    let w = dir.path().join("w.smw");
    multirate(&["init-weights", "--out", w.to_str().unwrap()]);
    let bytes = fs::read(&w).unwrap();
    fs::write(&w, &bytes[..bytes.len() / 2]).unwrap();
    assert_eq!(code(&multirate(&["synth", &tree, "--weights", w.to_str().unwrap(), "--out", out])), 4);

    let bad_tree = dir.path().join("bad.json");
    let doc = fs::read_to_string(&tree).unwrap().replace("\"durations\": [2, 3]", "\"durations\": [2]");
    fs::write(&bad_tree, doc).unwrap();
    assert_eq!(code(&multirate(&["synth", bad_tree.to_str().unwrap(), "--out", out])), 4);
}

#[test]
fn synth_output_matches_the_batch_oracle() {
    use multirate_core::oracle::{oracle_batch_decode, OracleReport};
    use multirate_core::{
        parse_context_tree, unroll_frames, weights_init, DecoderWeights, ModelConfig,
        MultiRateEncoder,
    };

    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus");
    let r = multirate(&["gen-corpus", "--count", "1", "--seed", "4", "--out", corpus.to_str().unwrap()]);
    assert_eq!(code(&r), 0);
    let tree_path = corpus.join("utt_0000.json");
    let out = dir.path().join("utt.frames");
    let r = multirate(&["synth", tree_path.to_str().unwrap(), "--seed", "5", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&r), 0);
    let bytes = fs::read(out).unwrap();
    let got: Vec<f32> = bytes[8..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();

    let config = ModelConfig::default();
    let w = weights_init(5, &config).unwrap();
    let tree = parse_context_tree(&fs::read_to_string(tree_path).unwrap()).unwrap();
    let enc = MultiRateEncoder::from_model(&w).unwrap().encode(&tree, &config, None).unwrap();
    let dw = DecoderWeights::from_model(&w).unwrap();
    let reference: Vec<f32> = oracle_batch_decode(&unroll_frames(&tree), &enc, &dw)
        .unwrap()
        .iter()
        .flat_map(|f| f.0)
        .collect();
    let report = OracleReport::compare(&got, &reference).unwrap();
    assert!(report.within(1e-4), "{report:?}");
}
