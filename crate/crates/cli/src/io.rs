use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use corefline_core::{parse_conllu, ConlluError, Corpus, Dataset, Document};

use crate::error::{CliError, Result};

fn is_stdio(path: &Path) -> bool {
    path.as_os_str() == "-"
}

/// Reads a file, or stdin for `-`.
pub fn read_text(path: &Path) -> Result<String> {
    if is_stdio(path) {
        let mut s = String::new();
        std::io::stdin()
            .read_to_string(&mut s)
            .map_err(|e| CliError::io(path, e))?;
        Ok(s)
    } else {
        fs::read_to_string(path).map_err(|e| CliError::io(path, e))
    }
}

/// Writes to a file, or stdout for `None` and `-`.
pub fn write_text(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) if !is_stdio(p) => fs::write(p, text).map_err(|e| CliError::io(p, e)),
        _ => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes())
                .and_then(|_| out.flush())
                .map_err(|e| CliError::Data(format!("stdout: {e}")))
        }
    }
}

/// One JSON object per line.
pub fn to_jsonl<T: serde::Serialize>(items: impl IntoIterator<Item = T>) -> String {
    let mut out = String::new();
    for item in items {
        out.push_str(&serde_json::to_string(&item).expect("serializable"));
        out.push('\n');
    }
    out
}

pub fn from_jsonl<T: serde::de::DeserializeOwned>(text: &str, origin: &Path) -> Result<Vec<T>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l)
                .map_err(|e| CliError::Data(format!("{}:{}: {e}", origin.display(), i + 1)))
        })
        .collect()
}

pub fn parse_documents(text: &str, origin: &Path) -> Result<Vec<Document>> {
    let parsed = parse_conllu(text).map_err(|e| match e {
        ConlluError::Syntax { line, message } => {
            CliError::Data(format!("{}:{line}: {message}", origin.display()))
        }
        other => CliError::Data(format!("{}: {other}", origin.display())),
    })?;
    for w in &parsed.warnings {
        log::warn!("{}:{}: {}", origin.display(), w.line, w.message);
    }
    Ok(parsed.documents)
}

pub fn load_documents(path: &Path) -> Result<Vec<Document>> {
    parse_documents(&read_text(path)?, path)
}

fn dataset_id(path: &Path) -> String {
    path.file_stem()
        .map_or_else(|| "stdin".into(), |s| s.to_string_lossy().into_owned())
}

/// A CoNLL-U file is one dataset named after its stem; a directory holds one
/// dataset per `*.conllu` file, in name order.
pub fn load_corpus(path: &Path) -> Result<Corpus> {
    let files: Vec<PathBuf> = if path.is_dir() {
        let mut files: Vec<PathBuf> = fs::read_dir(path)
            .map_err(|e| CliError::io(path, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "conllu"))
            .collect();
        files.sort();
        if files.is_empty() {
            return Err(CliError::Data(format!(
                "{}: no .conllu files",
                path.display()
            )));
        }
        files
    } else {
        vec![path.to_path_buf()]
    };
    let mut corpus = Corpus::default();
    for f in files {
        let documents = load_documents(&f)?;
        corpus
            .add_dataset(Dataset {
                id: dataset_id(&f),
                documents,
            })
            .map_err(|e| CliError::Data(e.to_string()))?;
    }
    Ok(corpus)
}
