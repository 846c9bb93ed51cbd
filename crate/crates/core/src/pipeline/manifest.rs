use std::collections::HashSet;
use std::path::{Path, PathBuf};

use regex::Regex;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub writer_id: String,
    pub doc_id: String,
    pub language: Option<String>,
}

impl ManifestEntry {
    /// Identifier of the document across the whole dataset, also used as the
    /// stem of its artifact files.
    pub fn key(&self) -> String {
        format!("{}_{}", self.writer_id, self.doc_id)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Sorted distinct writer ids.
    pub fn writers(&self) -> Vec<String> {
        let mut w: Vec<String> = self.entries.iter().map(|e| e.writer_id.clone()).collect();
        w.sort();
        w.dedup();
        w
    }
}

/// A file-stem pattern such as `{writer}_{doc}`. Placeholders match lazily;
/// everything else matches literally.
#[derive(Debug, Clone)]
pub struct IdPattern {
    source: String,
    regex: Regex,
}

impl IdPattern {
    pub fn new(pattern: &str) -> Result<Self> {
        let placeholder = Regex::new(r"\{(writer|doc|lang)\}").expect("static regex");
        let mut re = String::from("^");
        let mut last = 0;
        let mut seen = HashSet::new();
        for m in placeholder.captures_iter(pattern) {
            let whole = m.get(0).expect("group 0");
            let name = &m[1];
            if !seen.insert(name.to_string()) {
                return Err(Error::Config(format!("id pattern {pattern:?} repeats {{{name}}}")));
            }
            re.push_str(&regex::escape(&pattern[last..whole.start()]));
            re.push_str(&format!("(?P<{name}>.+?)"));
            last = whole.end();
        }
        re.push_str(&regex::escape(&pattern[last..]));
        re.push('$');
        if !seen.contains("writer") && !seen.contains("doc") {
            return Err(Error::Config(format!(
                "id pattern {pattern:?} needs {{writer}} or {{doc}}"
            )));
        }
        Ok(Self {
            source: pattern.to_string(),
            regex: Regex::new(&re).map_err(|e| Error::Config(e.to_string()))?,
        })
    }

    pub fn as_str(&self) -> &str {
        &self.source
    }

    /// `(writer, doc, lang)` captured from `stem`, or `None` if it does not match.
    pub fn captures(&self, stem: &str) -> Option<(Option<String>, Option<String>, Option<String>)> {
        let c = self.regex.captures(stem)?;
        let get = |n: &str| c.name(n).map(|m| m.as_str().to_string());
        Some((get("writer"), get("doc"), get("lang")))
    }
}

/// Parses manifest text. Each non-blank line not starting with `#` is
/// `path[<TAB>writer_id[<TAB>language]]`; relative paths are joined to
/// `base_dir`. A writer column overrides the pattern's writer, and the file
/// stem serves as document id when the pattern has no `{doc}`.
pub fn parse_manifest_str(text: &str, base_dir: &Path, pattern: &IdPattern, source: &Path) -> Result<DatasetManifest> {
    let err = |line: usize, reason: String| Error::Manifest {
        path: source.to_path_buf(),
        line,
        reason,
    };
    let mut entries = Vec::new();
    let mut seen = HashSet::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() || line.trim_start().starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').map(str::trim).collect();
        if cols.len() > 3 {
            return Err(err(line_no, format!("expected at most 3 tab-separated columns, found {}", cols.len())));
        }
        let rel = cols[0];
        if rel.is_empty() {
            return Err(err(line_no, "empty path".into()));
        }
        let path = base_dir.join(rel);
        let stem = Path::new(rel)
            .file_stem()
            .and_then(|s| s.to_str())
            .ok_or_else(|| err(line_no, format!("cannot take a file stem of {rel:?}")))?;
        let column = |k: usize| cols.get(k).filter(|s| !s.is_empty()).map(|s| s.to_string());
        let captured = pattern.captures(stem);
        let (pat_writer, pat_doc, pat_lang) = captured.clone().unwrap_or((None, None, None));
        let writer_id = column(1)
            .or(pat_writer)
            .ok_or_else(|| err(line_no, format!("{stem:?} does not match pattern {:?}", pattern.as_str())))?;
        let doc_id = pat_doc.unwrap_or_else(|| stem.to_string());
        let language = column(2).or(pat_lang);
        if !seen.insert((writer_id.clone(), doc_id.clone())) {
            return Err(err(line_no, format!("duplicate document (writer {writer_id}, doc {doc_id})")));
        }
        entries.push(ManifestEntry {
            path,
            writer_id,
            doc_id,
            language,
        });
    }
    let mut keys = HashSet::new();
    for e in &entries {
        if !keys.insert(e.key()) {
            return Err(err(0, format!("two documents share the artifact name {:?}", e.key())));
        }
    }
    if entries.is_empty() {
        log::warn!("manifest {} lists no documents", source.display());
    }
    Ok(DatasetManifest { entries })
}

pub fn parse_manifest(path: &Path, pattern: &IdPattern) -> Result<DatasetManifest> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new(""));
    parse_manifest_str(&text, base, pattern, path)
}
