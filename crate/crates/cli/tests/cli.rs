use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use cner_core::corpus::{corpus_stats, parse_bio_file, render_stats_tables};

const BIO: &str = "\
Patient\tO
denies\tO
chest\tB-Sign
pain\tI-Sign

Started\tO
metoprolol\tB-Drug
daily\tO

Metoprolol\tB-Drug
for\tO
palpitations\tB-Sign
";

const TEXT: &str = "Patient denies chest pain. Started metoprolol daily.\nMetoprolol for palpitations.\n";

fn cner(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cner")).args(args).output().unwrap()
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "status {:?}\nstderr:\n{}",
        out.status,
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).unwrap()
}

struct Fixture {
    _dir: tempfile::TempDir,
    root: PathBuf,
}

impl Fixture {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        fs::write(root.join("data.bio"), BIO).unwrap();
        fs::write(root.join("corpus.txt"), TEXT).unwrap();
        let words = ["Patient", "denies", "chest", "pain", "Started", "metoprolol", "daily", "Metoprolol", "for", "palpitations"];
        let vectors: String = words
            .iter()
            .enumerate()
            .map(|(i, w)| format!("{w} {} {}\n", (i as f32 * 0.7).sin(), (i as f32 * 1.3).cos()))
            .collect();
        fs::write(root.join("vectors.txt"), vectors).unwrap();
        Fixture { _dir: dir, root }
    }

    fn path(&self, name: &str) -> String {
        self.root.join(name).display().to_string()
    }

    fn char_lm(&self, name: &str) -> String {
        let out = self.path(name);
        ok(&cner(&[
            "pretrain-char",
            "--train",
            &self.path("corpus.txt"),
            "--output",
            &out,
            "--hidden-size",
            "8",
            "--char-embed-dim",
            "4",
            "--sequence-length",
            "16",
            "--batch-size",
            "2",
            "--lr",
            "2",
            "--max-epochs",
            "3",
        ]));
        out
    }

    fn tagger(&self, stack: &str) -> String {
        let out = self.path("tagger.bin");
        ok(&cner(&[
            "train",
            "--train",
            &self.path("data.bio"),
            "--dev",
            &self.path("data.bio"),
            "--stack",
            stack,
            "--output",
            &out,
            "--hidden-size",
            "8",
            "--dropout",
            "0",
            "--lr",
            "0.5",
            "--batch-size",
            "1",
            "--max-epochs",
            "40",
            "--patience",
            "10",
            "--eval-train",
            "true",
        ]));
        out
    }
}

fn bytes(p: &str) -> Vec<u8> {
    fs::read(Path::new(p)).unwrap()
}

#[test]
fn usage_errors_exit_2() {
    let f = Fixture::new();
    let out = cner(&["stats", "--train", &f.path("data.bio"), "--colour", "red"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("colour"));
    assert_eq!(cner(&["stats", "--train", &f.path("missing.bio")]).status.code(), Some(2));
    assert_eq!(cner(&["train", "--train", &f.path("data.bio")]).status.code(), Some(2));
    assert_eq!(cner(&["bogus"]).status.code(), Some(2));
    let stack = format!("static:{}", f.path("nope.txt"));
    let out = cner(&["train", "--train", &f.path("data.bio"), "--stack", &stack, "--output", &f.path("t.bin")]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("member 0"));
}

#[test]
fn runtime_errors_exit_1() {
    let f = Fixture::new();
    fs::write(f.root.join("bad.bio"), "a\tB-X\textra\n").unwrap();
    assert_eq!(cner(&["stats", "--train", &f.path("bad.bio")]).status.code(), Some(1));
}

#[test]
fn config_file_and_flag_precedence() {
    let f = Fixture::new();
    let cfg = f.root.join("run.cfg");
    fs::write(&cfg, format!("# stats run\ntrain = {}\nformat = tables\nname = Toy\n", f.path("data.bio"))).unwrap();
    let out = cner(&["stats", "--config", cfg.to_str().unwrap(), "--format", "kv"]);
    let text = ok(&out);
    assert!(text.starts_with("dataset=Toy split=train sentences=3 tokens=10 entity_types=2"));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("# format = kv"));
    assert!(err.contains("# seed = 1"));
}

#[test]
fn stats_matches_library() {
    let f = Fixture::new();
    let text = ok(&cner(&["stats", "--train", &f.path("data.bio"), "--name", "Toy"]));
    let stats = corpus_stats(&parse_bio_file(BIO.as_bytes()).unwrap().sentences);
    assert_eq!(text, render_stats_tables("Toy", &[("train", &stats)]));
}

#[test]
fn pretraining_is_deterministic_and_logged() {
    let f = Fixture::new();
    let a = f.char_lm("a.bin");
    let b = f.char_lm("b.bin");
    assert_eq!(bytes(&a), bytes(&b));
    let log = fs::read_to_string(format!("{a}.log")).unwrap();
    assert_eq!(log.lines().filter(|l| l.starts_with("epoch=")).count(), 3);
    assert!(log.contains("# seed = 1"));
    assert!(log.contains("# checkpoint_sha256 = "));

    let word = |name: &str| {
        let out = f.path(name);
        ok(&cner(&[
            "pretrain-word",
            "--train",
            &f.path("corpus.txt"),
            "--output",
            &out,
            "--hidden-size",
            "8",
            "--projection-dim",
            "4",
            "--cnn-filters",
            "1x4,2x4",
            "--batch-size",
            "2",
            "--max-epochs",
            "2",
        ]));
        out
    };
    assert_eq!(bytes(&word("w1.bin")), bytes(&word("w2.bin")));
}

#[test]
fn embed_header_and_kind_check() {
    let f = Fixture::new();
    let lm = f.char_lm("char.bin");
    let text = ok(&cner(&["embed", "--model", &lm, "--input", &f.path("corpus.txt")]));
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), format!("# dim=16 stack=char_lm:{lm}"));
    let first = lines.next().unwrap();
    let (token, values) = first.split_once('\t').unwrap();
    assert_eq!(token, "Patient");
    assert_eq!(values.split(' ').count(), 16);

    let stack = format!("static:{};char_lm:{lm}", f.path("vectors.txt"));
    let text = ok(&cner(&["embed", "--stack", &stack, "--input", &f.path("corpus.txt")]));
    assert!(text.starts_with(&format!("# dim=18 stack={stack}\n")));

    let tagger = f.tagger(&stack);
    let out = cner(&["embed", "--model", &tagger, "--input", &f.path("corpus.txt")]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("char_lm or word_lm") && err.contains("tagger"), "{err}");
}

#[test]
fn train_predict_eval_round_trip() {
    let f = Fixture::new();
    let lm = f.char_lm("char.bin");
    let stack = format!("static:{};char_lm:{lm}", f.path("vectors.txt"));
    let tagger = f.tagger(&stack);
    let log = fs::read_to_string(format!("{tagger}.log")).unwrap();
    let epochs: Vec<&str> = log.lines().filter(|l| l.starts_with("epoch=")).collect();
    assert!(!epochs.is_empty());
    assert!(epochs.iter().any(|l| l.contains("train_f1=1.000000")), "{log}");

    let pred_path = f.path("pred.tsv");
    ok(&cner(&["predict", "--model", &tagger, "--input", &f.path("data.bio"), "--output", &pred_path]));
    let pred = fs::read_to_string(&pred_path).unwrap();
    assert!(pred.starts_with("Patient\tO\tO\n"));
    let report = ok(&cner(&["eval", "--gold", &f.path("data.bio"), "--pred", &pred_path, "--format", "kv"]));
    assert!(report.contains("type=micro") && report.contains("f1=1.0000"), "{report}");
    let direct = ok(&cner(&["eval", "--gold", &f.path("data.bio"), "--model", &tagger, "--format", "kv"]));
    assert_eq!(direct, report);

    let spans = ok(&cner(&["predict", "--model", &tagger, "--input", &f.path("data.bio"), "--format", "spans"]));
    assert_eq!(spans.lines().next().unwrap(), "0\tSign\t2\t3");

    let again = f.tagger(&stack);
    let first = bytes(&tagger);
    assert_eq!(bytes(&again), first);
}
