//! Line-delimited dataset files plus the sibling `manifest.json`.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use super::{DatasetManifest, PreferenceExample, Topic};
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

/// `manifest.json` in the directory holding `dataset_path`.
pub fn manifest_path_for(dataset_path: &Path) -> PathBuf {
    dataset_path
        .parent()
        .map(|p| p.join(MANIFEST_FILE))
        .unwrap_or_else(|| PathBuf::from(MANIFEST_FILE))
}

/// Writes one JSON record per line at `path` and the manifest next to it.
pub fn serialize_dataset(
    examples: &[PreferenceExample],
    manifest: &DatasetManifest,
    path: &Path,
) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for ex in examples {
        let line = serde_json::to_string(ex).expect("examples serialize");
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    write_json(&manifest_path_for(path), manifest)
}

/// Reads a dataset file and its manifest.
pub fn load_dataset(path: &Path) -> Result<(Vec<PreferenceExample>, DatasetManifest)> {
    let manifest_path = manifest_path_for(path);
    let manifest: DatasetManifest = read_json(&manifest_path)?;
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut examples = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let ex: PreferenceExample = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_owned(),
            line: i + 1,
            message: e.to_string(),
        })?;
        ex.validate(None).map_err(|e| Error::Parse {
            path: path.to_owned(),
            line: i + 1,
            message: e.to_string(),
        })?;
        examples.push(ex);
    }
    Ok((examples, manifest))
}

pub fn save_topics(topics: &[Topic], path: &Path) -> Result<()> {
    write_json(path, &topics)
}

pub fn load_topics(path: &Path) -> Result<Vec<Topic>> {
    let topics: Vec<Topic> = read_json(path)?;
    for (i, t) in topics.iter().enumerate() {
        if t.id != i {
            return Err(Error::Parse {
                path: path.to_owned(),
                line: 0,
                message: format!("topic at position {i} has id {}", t.id),
            });
        }
    }
    Ok(topics)
}

pub(crate) fn write_json<T: serde::Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("value serializes");
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub(crate) fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_owned(),
        line: e.line(),
        message: e.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{
        build_preference_pairs, generate_topics, DistributionSource, SplitSizes, TaskKind,
        TopicSpec,
    };

    fn fixture() -> (Vec<PreferenceExample>, DatasetManifest, Vec<Topic>) {
        let spec = TopicSpec {
            topics: 1,
            beliefs: 5,
            styles: 2,
            task: TaskKind::Opinion,
            distribution: DistributionSource::Explicit {
                probs: vec![vec![0.06, 0.56, 0.24, 0.08, 0.06]],
            },
            seed: 4,
        };
        let topics = generate_topics(&spec).unwrap();
        let examples = build_preference_pairs(&topics[0], 3, 4).unwrap();
        let manifest = DatasetManifest::new(
            spec,
            SplitSizes {
                train: 3,
                eval: 0,
                test: 0,
            },
        );
        (examples, manifest, topics)
    }

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("train.jsonl");
        let (examples, manifest, topics) = fixture();
        serialize_dataset(&examples, &manifest, &path).unwrap();
        let (back, m) = load_dataset(&path).unwrap();
        assert_eq!(back, examples);
        assert_eq!(m, manifest);

        let tpath = dir.path().join("topics.json");
        save_topics(&topics, &tpath).unwrap();
        assert_eq!(load_topics(&tpath).unwrap(), topics);
    }

    #[test]
    fn empty_file_gives_empty_list() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("eval.jsonl");
        let (_, manifest, _) = fixture();
        serialize_dataset(&[], &manifest, &path).unwrap();
        assert_eq!(fs::read_to_string(&path).unwrap(), "");
        let (back, m) = load_dataset(&path).unwrap();
        assert!(back.is_empty());
        assert_eq!(m, manifest);
    }

    #[test]
    fn truncated_line_names_the_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("train.jsonl");
        let (examples, manifest, _) = fixture();
        serialize_dataset(&examples, &manifest, &path).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        let cut = &text[..text.len() - 20];
        fs::write(&path, cut).unwrap();
        match load_dataset(&path) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn invalid_record_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("train.jsonl");
        let (mut examples, manifest, _) = fixture();
        examples[1].rejected_belief = examples[1].accepted_belief;
        serialize_dataset(&examples, &manifest, &path).unwrap();
        let err = load_dataset(&path).unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
    }
}
