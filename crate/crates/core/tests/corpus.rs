use std::fs;
use std::path::Path;

use mtlsp::corpus::{
    align_gold_actions, build_vocabs, load_dataset, write_jsonl, Action, CorpusError, Example, Formalism,
    ManifestEntry, TaskSpec,
};
use mtlsp::model::ArchMode;

fn pairs(n: usize) -> Vec<(String, String)> {
    (0..n)
        .map(|i| (format!("show w{i}"), format!("answer ( w{i} )")))
        .collect()
}

fn write_task(dir: &Path, name: &str, sizes: [usize; 3]) -> ManifestEntry {
    let mut files = Vec::new();
    for (split, n) in ["train", "dev", "test"].iter().zip(sizes) {
        let file = format!("{name}.{split}.jsonl");
        write_jsonl(&dir.join(&file), &pairs(n)).unwrap();
        files.push(file.into());
    }
    ManifestEntry {
        name: name.into(),
        formalism: Formalism::TreeString,
        train: files.remove(0),
        dev: files.remove(0),
        test: files.remove(0),
        tokenizer: None,
    }
}

fn write_manifest(dir: &Path, entries: &[ManifestEntry]) -> std::path::PathBuf {
    let path = dir.join("manifest.json");
    fs::write(
        &path,
        serde_json::to_string(&serde_json::json!({ "tasks": entries })).unwrap(),
    )
    .unwrap();
    path
}

#[test]
fn loads_sizes_in_manifest_order() {
    let dir = tempfile::tempdir().unwrap();
    let entries: Vec<_> = [("geo", 7), ("top", 3), ("amrish", 5)]
        .iter()
        .map(|(n, d)| write_task(dir.path(), n, [*d, 1, 1]))
        .collect();
    let tasks = load_dataset(&write_manifest(dir.path(), &entries)).unwrap();
    let sizes: Vec<usize> = tasks.iter().map(TaskSpec::size_train).collect();
    assert_eq!(sizes, [7, 3, 5]);
    assert_eq!(tasks[1].train[2].target_tokens, ["answer", "(", "w2", ")"]);
}

#[test]
fn one_example_task_is_allowed() {
    let dir = tempfile::tempdir().unwrap();
    let entry = write_task(dir.path(), "tiny", [1, 1, 1]);
    let tasks = load_dataset(&write_manifest(dir.path(), &[entry])).unwrap();
    assert_eq!(tasks[0].size_train(), 1);
}

#[test]
fn empty_dev_split_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let entry = write_task(dir.path(), "geo", [4, 0, 1]);
    let err = load_dataset(&write_manifest(dir.path(), &[entry])).unwrap_err();
    assert!(err.to_string().contains("split 'dev' empty"), "{err}");
}

#[test]
fn duplicate_task_names_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let entry = write_task(dir.path(), "geo", [2, 1, 1]);
    let err = load_dataset(&write_manifest(dir.path(), &[entry.clone(), entry])).unwrap_err();
    assert!(matches!(err, CorpusError::DuplicateTask(ref n) if n == "geo"), "{err}");
}

#[test]
fn missing_file_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let mut entry = write_task(dir.path(), "geo", [2, 1, 1]);
    entry.test = "gone.jsonl".into();
    let err = load_dataset(&write_manifest(dir.path(), &[entry])).unwrap_err();
    match err {
        CorpusError::Io { path, .. } => assert!(path.ends_with("gone.jsonl")),
        other => panic!("unexpected {other}"),
    }
}

#[test]
fn malformed_line_reports_line_number() {
    let dir = tempfile::tempdir().unwrap();
    let entry = write_task(dir.path(), "geo", [2, 1, 1]);
    let train = dir.path().join(&entry.train);
    let mut text = fs::read_to_string(&train).unwrap();
    text.push_str("{\"source\": \"broken\"\n");
    fs::write(&train, text).unwrap();
    let err = load_dataset(&write_manifest(dir.path(), &[entry])).unwrap_err();
    assert!(matches!(err, CorpusError::MalformedLine { line: 3, .. }), "{err}");
}

#[test]
fn unknown_tokenizer_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let mut entry = write_task(dir.path(), "geo", [2, 1, 1]);
    entry.tokenizer = Some("bpe".into());
    let err = load_dataset(&write_manifest(dir.path(), &[entry])).unwrap_err();
    assert!(matches!(err, CorpusError::UnknownTokenizer(_)), "{err}");
}

#[test]
fn amr_targets_are_linearized() {
    let dir = tempfile::tempdir().unwrap();
    let amr = [("the boy wants".to_string(), "(w / want-01 :ARG0 (b / boy))".to_string())];
    for split in ["train", "dev", "test"] {
        write_jsonl(&dir.path().join(format!("amr.{split}.jsonl")), &amr).unwrap();
    }
    let entry = ManifestEntry {
        name: "amr".into(),
        formalism: Formalism::Amr,
        train: "amr.train.jsonl".into(),
        dev: "amr.dev.jsonl".into(),
        test: "amr.test.jsonl".into(),
        tokenizer: Some("whitespace".into()),
    };
    let tasks = load_dataset(&write_manifest(dir.path(), &[entry])).unwrap();
    let ex = &tasks[0].train[0];
    assert_eq!(ex.target_text(), "( want-01 :ARG0 ( boy ) )");
    assert!(ex.gold_penman.is_some());
}

fn task(name: &str, targets: &[&str]) -> TaskSpec {
    let ex = Example::new("x y", &targets.join(" "));
    TaskSpec {
        name: name.into(),
        formalism: Formalism::TreeString,
        train: vec![ex.clone()],
        dev: vec![ex.clone()],
        test: vec![ex],
    }
}

#[test]
fn vocab_sharing_follows_the_mode() {
    let tasks = [task("t1", &["a", "b"]), task("t2", &["b", "c"])];
    let shared = build_vocabs(&tasks, ArchMode::OneToOne).unwrap();
    let v = shared.target(0);
    assert_eq!(v.len(), v.reserved() + 3);
    assert!(["a", "b", "c"].iter().all(|t| v.id(t).is_some()));
    assert!(shared.source.id("<t1>").is_some() && shared.source.id("<t2>").is_some());

    let split = build_vocabs(&tasks, ArchMode::OneToN).unwrap();
    assert_eq!(split.target(0).len(), split.target(0).reserved() + 2);
    assert!(split.target(1).id("a").is_none());
    assert!(split.source.id("<t1>").is_none());
}

#[test]
fn alignment_prefers_copy_and_falls_back_to_unk() {
    let tasks = [task("geo", &["count", "hotel"])];
    let vocabs = build_vocabs(&tasks, ArchMode::Single).unwrap();
    let v = vocabs.target(0);
    let ex = Example::new("number of hotels in Edinburgh", "count ( Edinburgh ) zzz");
    let actions = align_gold_actions(&ex, v);
    assert_eq!(actions[0], Action::Gen(v.id("count").unwrap()));
    assert_eq!(actions[2], Action::Copy(5));
    assert_eq!(actions[4], Action::Gen(mtlsp::corpus::UNK));
}
