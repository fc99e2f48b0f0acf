use std::collections::BTreeSet;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use paradigm::baseline::Transducer;
use paradigm::corpus::{levenshtein, within_distance_bound, SplitManifest};

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_paradigm"))
        .current_dir(dir)
        .env_remove("PARADIGM_CONFIG")
        .args(args)
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = run(dir, args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_lines(path: &Path, rows: &[(String, &str, String)]) {
    let text: String = rows.iter().map(|(b, t, d)| format!("{b}\t{t}\t{d}\n")).collect();
    fs::write(path, text).unwrap();
}

fn words(n: usize) -> Vec<String> {
    let letters = ["ka", "lo", "mi", "ne", "pu", "ro", "sa", "ti", "vu", "de"];
    (0..n)
        .map(|i| {
            format!(
                "{}{}{}",
                letters[i % 10],
                letters[(i / 10) % 10],
                letters[(i / 100) % 10]
            )
        })
        .collect()
}

fn random_words(n: usize) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let letters: Vec<char> = "abcdeghiklmnoprstu".chars().collect();
    let mut out = BTreeSet::new();
    while out.len() < n {
        let len = rng.gen_range(3..=6);
        out.insert((0..len).map(|_| *letters.choose(&mut rng).unwrap()).collect::<String>());
    }
    out.into_iter().collect()
}

#[test]
fn split_twenty_lines_gives_14_3_3_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let rows: Vec<_> = words(20)
        .into_iter()
        .map(|w| (w.clone(), "AGENT", format!("{w}er")))
        .collect();
    write_lines(&dir.path().join("raw.tsv"), &rows);
    let out = ok(dir.path(), &["split", "--data", "raw.tsv", "--out", "a", "--seed", "3"]);
    let line = String::from_utf8_lossy(&out.stdout);
    assert!(line.contains("retained=20 removed=0 train=14 dev=3 test=3"), "{line}");
    ok(dir.path(), &["split", "--data", "raw.tsv", "--out", "b", "--seed", "3"]);
    for f in ["train.tsv", "dev.tsv", "test.tsv", "manifest.json"] {
        assert_eq!(
            fs::read(dir.path().join("a").join(f)).unwrap(),
            fs::read(dir.path().join("b").join(f)).unwrap()
        );
    }
}

#[test]
fn split_reports_removed_pairs() {
    let dir = tempfile::tempdir().unwrap();
    let mut rows: Vec<_> = words(9)
        .into_iter()
        .map(|w| (w.clone(), "NOMINAL", format!("{w}ness")))
        .collect();
    // an unrelated pair: distance 5 against lengths 3 + 5
    let (base, derived) = ("cat", "zebra".to_string());
    assert!(2 * levenshtein(base, &derived) > 8 && !within_distance_bound(base, &derived));
    rows.push((base.to_string(), "AGENT", derived));
    write_lines(&dir.path().join("raw.tsv"), &rows);
    ok(dir.path(), &["split", "--data", "raw.tsv", "--out", "s"]);
    let manifest: SplitManifest =
        serde_json::from_str(&fs::read_to_string(dir.path().join("s/manifest.json")).unwrap()).unwrap();
    assert_eq!((manifest.retained, manifest.removed), (9, 1));
}

#[test]
fn malformed_input_is_a_data_error_with_line_number() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("raw.tsv"), "walk\tAGENT\twalker\nbroken line\n").unwrap();
    let out = run(dir.path(), &["split", "--data", "raw.tsv", "--out", "s"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("raw.tsv:2"), "{}", stderr(&out));
}

#[test]
fn exit_codes_distinguish_usage_data_and_model_errors() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run(dir.path(), &["frobnicate"]).status.code(), Some(1));
    assert_eq!(run(dir.path(), &["train", "--model", "m"]).status.code(), Some(1));
    assert_eq!(
        run(dir.path(), &["train", "--splits", "missing", "--model", "m"])
            .status
            .code(),
        Some(2)
    );
    fs::write(dir.path().join("q.tsv"), "walk\tAGENT\n").unwrap();
    assert_eq!(
        run(dir.path(), &["predict", "--model", "q.tsv", "--input", "q.tsv"])
            .status
            .code(),
        Some(3)
    );
    assert_eq!(run(dir.path(), &["--help"]).status.code(), Some(0));
}

fn identity_split(dir: &Path) {
    let rows: Vec<_> = words(60).into_iter().map(|w| (w.clone(), "SAME", w)).collect();
    write_lines(&dir.join("raw.tsv"), &rows);
    ok(dir, &["split", "--data", "raw.tsv", "--out", "s"]);
}

#[test]
fn baseline_learns_identity_and_is_greedy_only() {
    let dir = tempfile::tempdir().unwrap();
    identity_split(dir.path());
    let out = ok(
        dir.path(),
        &["train", "--splits", "s", "--model", "b.model", "--kind", "baseline"],
    );
    assert!(
        stderr(&out).starts_with("kind=baseline window=3 history=2 epochs=10"),
        "{}",
        stderr(&out)
    );
    let t = Transducer::load(dir.path().join("b.model")).unwrap();
    for w in words(60) {
        assert_eq!(t.predict(&w, "SAME").0, w);
    }

    let out = run(
        dir.path(),
        &["predict", "--model", "b.model", "--input", "s/test.tsv", "--k", "10"],
    );
    assert_eq!(out.status.code(), Some(3));
    assert!(stderr(&out).contains("baseline is greedy-only"));

    ok(
        dir.path(),
        &[
            "predict",
            "--model",
            "b.model",
            "--input",
            "s/test.tsv",
            "--output",
            "p.tsv",
        ],
    );
    let out = ok(
        dir.path(),
        &["evaluate", "--predictions", "p.tsv", "--gold", "s/test.tsv"],
    );
    let text = String::from_utf8_lossy(&out.stdout);
    let json_end = text.find("\n\n").unwrap();
    let report: serde_json::Value = serde_json::from_str(&text[..json_end]).unwrap();
    assert_eq!(report["accuracy"], 1.0);
    assert_eq!(report["avg_edit"], 0.0);
    assert!(text[json_end..].contains("SAME"));
}

#[test]
fn train_log_echoes_recipe_defaults() {
    let dir = tempfile::tempdir().unwrap();
    identity_split(dir.path());
    // default network, one epoch
    let out = run(
        dir.path(),
        &["train", "--splits", "s", "--model", "m", "--set", "epochs=1"],
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let header = stderr(&out).lines().next().unwrap().to_string();
    for kv in ["embedding=300", "hidden=100", "batch_size=20", "beam=12", "epochs=1"] {
        assert!(header.contains(kv), "{header}");
    }
    let log = fs::read_to_string(dir.path().join("m.log")).unwrap();
    assert!(log.lines().any(|l| l.starts_with("epoch=1 train_loss=")));

    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, "splits = \"s\"\n").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_paradigm"))
        .current_dir(dir.path())
        .env("PARADIGM_CONFIG", &cfg)
        .args(["train", "--model", "m2", "--epochs", "0"])
        .output()
        .unwrap();
    // the config file supplied `splits`; epochs=0 is rejected as a usage error
    assert_eq!(out.status.code(), Some(1), "{}", stderr(&out));
    assert!(stderr(&out).contains("epochs must be positive"));
}

#[test]
fn seq2seq_learns_a_suffix_and_kbest_rows_are_ranked() {
    let dir = tempfile::tempdir().unwrap();
    let rows: Vec<_> = random_words(1200)
        .into_iter()
        .map(|w| (w.clone(), "T", format!("{w}x")))
        .collect();
    write_lines(&dir.path().join("raw.tsv"), &rows);
    ok(dir.path(), &["split", "--data", "raw.tsv", "--out", "s"]);
    let small = [
        "--set",
        "embedding=16",
        "--set",
        "hidden=32",
        "--set",
        "attention=32",
        "--set",
        "readout=32",
        "--set",
        "batch_size=5",
    ];
    let mut args = vec![
        "train", "--splits", "s", "--model", "m", "--epochs", "15", "--seed", "3",
    ];
    args.extend(small);
    ok(dir.path(), &args);
    let log = fs::read_to_string(dir.path().join("m.log")).unwrap();
    let accs: Vec<f64> = log
        .lines()
        .filter(|l| l.starts_with("epoch="))
        .map(|l| {
            let field = l.split(' ').find(|kv| kv.starts_with("dev_accuracy=")).unwrap();
            field["dev_accuracy=".len()..].parse().unwrap()
        })
        .collect();
    assert_eq!(accs.len(), 15);
    let first = accs.iter().position(|&a| a == 1.0).expect(&log);
    assert!(accs[first..].iter().all(|&a| a == 1.0), "{log}");
    assert!(log.lines().last().unwrap().starts_with("selected_epoch="));

    ok(
        dir.path(),
        &[
            "predict",
            "--model",
            "m",
            "--input",
            "s/test.tsv",
            "--k",
            "10",
            "--output",
            "k.tsv",
        ],
    );
    ok(
        dir.path(),
        &["predict", "--model", "m", "--input", "s/test.tsv", "--output", "g.tsv"],
    );
    let kbest = fs::read_to_string(dir.path().join("k.tsv")).unwrap();
    let greedy = fs::read_to_string(dir.path().join("g.tsv")).unwrap();
    let mut prev: Option<(String, usize)> = None;
    for line in kbest.lines() {
        let cols: Vec<&str> = line.split('\t').collect();
        let rank: usize = cols[2].parse().unwrap();
        assert!(rank <= 10);
        match &prev {
            Some((base, r)) if base == cols[0] && rank != 1 => assert_eq!(rank, r + 1),
            _ => assert_eq!(rank, 1),
        }
        prev = Some((cols[0].to_string(), rank));
    }
    // on a well-trained model the greedy output is the beam's first choice
    let top: Vec<&str> = kbest
        .lines()
        .filter(|l| l.split('\t').nth(2) == Some("1"))
        .map(|l| l.split('\t').nth(3).unwrap())
        .collect();
    let greedy_forms: Vec<&str> = greedy.lines().map(|l| l.split('\t').nth(3).unwrap()).collect();
    assert_eq!(top, greedy_forms);

    let out = ok(
        dir.path(),
        &[
            "evaluate",
            "--predictions",
            "k.tsv",
            "--gold",
            "s/test.tsv",
            "--k",
            "10",
        ],
    );
    let text = String::from_utf8_lossy(&out.stdout);
    let report: serde_json::Value = serde_json::from_str(&text[..text.find("\n\n").unwrap()]).unwrap();
    assert_eq!(report["kbest_accuracy"], 1.0);
}

#[test]
fn evaluate_rejects_row_count_mismatch_and_handles_single_rows() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("gold.tsv"),
        "walk\tAGENT\twalker\nkind\tNOMINAL\tkindness\n",
    )
    .unwrap();
    fs::write(dir.path().join("pred.tsv"), "walk\tAGENT\t1\twalker\t-0.1\n").unwrap();
    let out = run(
        dir.path(),
        &["evaluate", "--predictions", "pred.tsv", "--gold", "gold.tsv"],
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("1 predictions vs 2 gold"), "{}", stderr(&out));

    fs::write(dir.path().join("gold1.tsv"), "walk\tAGENT\twalker\n").unwrap();
    let out = ok(
        dir.path(),
        &[
            "evaluate",
            "--predictions",
            "pred.tsv",
            "--gold",
            "gold1.tsv",
            "--whole-word",
            "--json",
            "r.json",
        ],
    );
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("r.json")).unwrap()).unwrap();
    assert_eq!(report["accuracy"], 1.0);
    assert_eq!(report["per_tag"].as_object().unwrap().len(), 1);
    assert!(String::from_utf8_lossy(&out.stdout).contains("-er"));
}
