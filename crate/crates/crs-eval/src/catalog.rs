//! Item catalog, target attribute groups, and the adjusted-phrase lexicon.
//!
//! The catalog is the ground truth that every metric resolves against: an
//! item "matches" a user's target exactly when its attribute set covers every
//! label of the target group. Free-text item mentions in CRS replies are
//! resolved back to catalog ids through a conservative normalizer that never
//! guesses: a span resolves only when its normalized form equals a normalized
//! catalog title, and ties between distinct items stay unresolved.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::fs;
use std::path::Path;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type ItemId = String;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Item {
    pub id: ItemId,
    pub title: String,
    /// Lowercased canonical labels, never empty.
    pub attributes: BTreeSet<String>,
}

/// A user's target preference: the conjunction of all its labels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributeGroup {
    pub labels: Vec<String>,
}

impl AttributeGroup {
    pub fn new(labels: Vec<String>) -> Result<Self, CatalogError> {
        if labels.is_empty() {
            return Err(CatalogError::EmptyGroup);
        }
        Ok(Self {
            labels: labels.iter().map(|l| canonical_label(l)).collect(),
        })
    }
}

impl fmt::Display for AttributeGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}]", self.labels.join(", "))
    }
}

#[derive(Debug, Clone)]
pub struct Catalog {
    items: Vec<Item>,
    by_id: HashMap<ItemId, usize>,
    by_norm_title: HashMap<String, Vec<usize>>,
    vocabulary: BTreeSet<String>,
}

/// One resolved or unresolved mention span from a CRS reply.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mention {
    pub span: String,
    pub item: Option<ItemId>,
    /// True when two or more distinct items share the span's normalized title.
    pub ambiguous: bool,
}

/// Maps raw attribute labels to the softened phrases the simulator speaks.
#[derive(Debug, Clone, Default)]
pub struct AdjustedLexicon {
    // key: canonical (lowercased) label; value: phrase as shipped.
    map: BTreeMap<String, String>,
}

#[derive(Debug, Error)]
pub enum CatalogError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: invalid record: {detail}")]
    Parse {
        path: String,
        line: usize,
        detail: String,
    },
    #[error("duplicate item id \"{id}\"")]
    DuplicateId { id: String },
    #[error("item \"{id}\" has an empty attribute list")]
    EmptyAttributes { id: String },
    #[error("item id must not be empty")]
    EmptyId,
    #[error("attribute group must not be empty")]
    EmptyGroup,
    #[error("attribute group label \"{label}\" is not in the catalog vocabulary")]
    UnknownGroupLabel { label: String },
    #[error("attribute label \"{label}\" has no adjusted phrase")]
    MissingLabel { label: String },
    #[error("adjusted phrase \"{phrase}\" does not contain its label \"{label}\"")]
    PhraseMismatch { label: String, phrase: String },
    #[error("duplicate lexicon label \"{label}\"")]
    DuplicateLabel { label: String },
    #[error("lexicon has no phrase for labels: {missing}")]
    LexiconGap { missing: String },
}

#[derive(Deserialize)]
struct ItemRow {
    id: String,
    title: String,
    attributes: Vec<String>,
}

#[derive(Deserialize)]
struct LexiconRow {
    label: String,
    phrase: String,
}

#[derive(Deserialize)]
struct GroupRow {
    labels: Vec<String>,
}

fn canonical_label(label: &str) -> String {
    label.trim().to_lowercase()
}

fn read_lines(path: &Path) -> Result<Vec<String>, CatalogError> {
    let text = fs::read_to_string(path).map_err(|source| CatalogError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Ok(text.lines().map(str::to_owned).collect())
}

/// Loads a line-delimited item table: one JSON record per line with fields
/// `id`, `title`, and `attributes`.
pub fn load_catalog(path: &Path) -> Result<Catalog, CatalogError> {
    let mut items = Vec::new();
    for (idx, line) in read_lines(path)?.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row: ItemRow =
            serde_json::from_str(line).map_err(|e| CatalogError::Parse {
                path: path.display().to_string(),
                line: idx + 1,
                detail: e.to_string(),
            })?;
        items.push(Item {
            id: row.id,
            title: row.title,
            attributes: row.attributes.iter().map(|a| canonical_label(a)).collect(),
        });
    }
    Catalog::from_items(items)
}

/// Loads the two-column label-to-phrase mapping, one JSON record per line.
pub fn load_lexicon(path: &Path) -> Result<AdjustedLexicon, CatalogError> {
    let mut lexicon = AdjustedLexicon::default();
    for (idx, line) in read_lines(path)?.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row: LexiconRow =
            serde_json::from_str(line).map_err(|e| CatalogError::Parse {
                path: path.display().to_string(),
                line: idx + 1,
                detail: e.to_string(),
            })?;
        lexicon.insert(&row.label, &row.phrase)?;
    }
    Ok(lexicon)
}

/// Loads target attribute groups, one JSON record per line with a `labels` array.
pub fn load_groups(path: &Path) -> Result<Vec<AttributeGroup>, CatalogError> {
    let mut groups = Vec::new();
    for (idx, line) in read_lines(path)?.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row: GroupRow =
            serde_json::from_str(line).map_err(|e| CatalogError::Parse {
                path: path.display().to_string(),
                line: idx + 1,
                detail: e.to_string(),
            })?;
        groups.push(AttributeGroup::new(row.labels)?);
    }
    Ok(groups)
}

impl Catalog {
    pub fn from_items(items: Vec<Item>) -> Result<Self, CatalogError> {
        let mut by_id = HashMap::new();
        let mut by_norm_title: HashMap<String, Vec<usize>> = HashMap::new();
        let mut vocabulary = BTreeSet::new();
        for (idx, item) in items.iter().enumerate() {
            if item.id.is_empty() {
                return Err(CatalogError::EmptyId);
            }
            if item.attributes.is_empty() {
                return Err(CatalogError::EmptyAttributes { id: item.id.clone() });
            }
            if by_id.insert(item.id.clone(), idx).is_some() {
                return Err(CatalogError::DuplicateId { id: item.id.clone() });
            }
            by_norm_title
                .entry(normalize_title(&item.title))
                .or_default()
                .push(idx);
            vocabulary.extend(item.attributes.iter().cloned());
        }
        Ok(Self {
            items,
            by_id,
            by_norm_title,
            vocabulary,
        })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn items(&self) -> impl Iterator<Item = &Item> {
        self.items.iter()
    }

    pub fn get(&self, id: &str) -> Option<&Item> {
        self.by_id.get(id).map(|&i| &self.items[i])
    }

    pub fn contains(&self, id: &str) -> bool {
        self.by_id.contains_key(id)
    }

    pub fn vocabulary(&self) -> &BTreeSet<String> {
        &self.vocabulary
    }

    /// All items whose attribute set covers the target group.
    pub fn target_matching(&self, group: &AttributeGroup) -> Vec<&Item> {
        self.items
            .iter()
            .filter(|i| matches_preference(i, group))
            .collect()
    }

    /// Every group label must already occur on some item.
    pub fn validate_group(&self, group: &AttributeGroup) -> Result<(), CatalogError> {
        for label in &group.labels {
            if !self.vocabulary.contains(label) {
                return Err(CatalogError::UnknownGroupLabel {
                    label: label.clone(),
                });
            }
        }
        Ok(())
    }
}

/// True when the item's attributes cover every label of the target group.
pub fn matches_preference(item: &Item, group: &AttributeGroup) -> bool {
    group.labels.iter().all(|l| item.attributes.contains(l))
}

impl AdjustedLexicon {
    pub fn from_rows<L, P>(rows: impl IntoIterator<Item = (L, P)>) -> Result<Self, CatalogError>
    where
        L: AsRef<str>,
        P: AsRef<str>,
    {
        let mut lexicon = Self::default();
        for (label, phrase) in rows {
            lexicon.insert(label.as_ref(), phrase.as_ref())?;
        }
        Ok(lexicon)
    }

    pub fn insert(&mut self, label: &str, phrase: &str) -> Result<(), CatalogError> {
        let key = canonical_label(label);
        if !phrase.to_lowercase().contains(&key) {
            return Err(CatalogError::PhraseMismatch {
                label: label.to_string(),
                phrase: phrase.to_string(),
            });
        }
        if self.map.insert(key, phrase.to_string()).is_some() {
            return Err(CatalogError::DuplicateLabel {
                label: label.to_string(),
            });
        }
        Ok(())
    }

    /// Case-insensitive lookup; every label fed to the simulator must resolve.
    pub fn adjusted_phrase(&self, raw: &str) -> Result<&str, CatalogError> {
        self.map
            .get(&canonical_label(raw))
            .map(String::as_str)
            .ok_or_else(|| CatalogError::MissingLabel {
                label: raw.to_string(),
            })
    }

    pub fn labels(&self) -> impl Iterator<Item = &str> {
        self.map.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// Checks totality over an attribute vocabulary.
    pub fn validate_covers<'a, I: IntoIterator<Item = &'a String>>(
        &self,
        vocabulary: I,
    ) -> Result<(), CatalogError> {
        let missing: Vec<&str> = vocabulary
            .into_iter()
            .filter(|l| !self.map.contains_key(&canonical_label(l)))
            .map(String::as_str)
            .collect();
        if missing.is_empty() {
            Ok(())
        } else {
            Err(CatalogError::LexiconGap {
                missing: missing.join(", "),
            })
        }
    }
}

fn year_suffix_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\s*\(\d{4}\)\s*$").expect("static regex"))
}

/// Canonical form used for title comparison: case-folded, punctuation
/// stripped, a trailing parenthesized 4-digit year removed, and a leading
/// article ("the", "a") dropped when more words follow it.
pub fn normalize_title(title: &str) -> String {
    let trimmed = year_suffix_re().replace(title.trim(), "");
    let lower = trimmed.to_lowercase();
    let mut words: Vec<&str> = lower
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .collect();
    if words.len() > 1 && (words[0] == "the" || words[0] == "a") {
        words.remove(0);
    }
    words.join(" ")
}

const CONNECTORS: [&str; 13] = [
    "and", "of", "the", "a", "an", "in", "on", "at", "to", "for", "with", "or", "&",
];

fn is_connector(word: &str) -> bool {
    CONNECTORS.contains(&word)
}

fn is_capitalized(word: &str) -> bool {
    word.chars().next().is_some_and(|c| c.is_uppercase())
}

/// Byte ranges of text enclosed in balanced single or double quotes. A quote
/// only opens or closes against a non-alphanumeric neighbor, so apostrophes
/// inside contractions do not pair up.
fn quoted_ranges(text: &str) -> Vec<(usize, usize)> {
    let bytes: Vec<(usize, char)> = text.char_indices().collect();
    let mut ranges = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let (pos, c) = bytes[i];
        if c == '\'' || c == '"' {
            let prev_ok = i == 0 || !bytes[i - 1].1.is_alphanumeric();
            if prev_ok {
                let mut j = i + 1;
                while j < bytes.len() {
                    let (jpos, jc) = bytes[j];
                    if jc == c {
                        let next_ok =
                            j + 1 >= bytes.len() || !bytes[j + 1].1.is_alphanumeric();
                        if next_ok && jpos > pos + c.len_utf8() {
                            ranges.push((pos + c.len_utf8(), jpos));
                            i = j;
                            break;
                        }
                    }
                    j += 1;
                }
            }
        }
        i += 1;
    }
    ranges
}

fn word_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\(\d{4}\)|[A-Za-z][A-Za-z'’\-]*|&").expect("static regex"))
}

/// Title-case runs outside quoted regions: two or more capitalized words
/// (lowercase connectors allowed between them), or a single capitalized word
/// directly followed by a parenthesized year.
fn title_case_spans(text: &str, masked: &[(usize, usize)]) -> Vec<(usize, usize)> {
    #[derive(Clone)]
    struct Tok {
        start: usize,
        end: usize,
        cap: bool,
        conn: bool,
        year: bool,
    }
    let toks: Vec<Tok> = word_re()
        .find_iter(text)
        .filter(|m| {
            !masked
                .iter()
                .any(|&(s, e)| m.start() < e && m.end() > s)
        })
        .map(|m| {
            let w = m.as_str();
            Tok {
                start: m.start(),
                end: m.end(),
                cap: is_capitalized(w),
                conn: is_connector(w),
                year: w.starts_with('('),
            }
        })
        .collect();

    let mut spans = Vec::new();
    let mut run: Vec<&Tok> = Vec::new();
    let flush = |run: &mut Vec<&Tok>, spans: &mut Vec<(usize, usize)>| {
        while run.last().is_some_and(|t| t.conn && !t.cap) {
            run.pop();
        }
        let caps = run.iter().filter(|t| t.cap).count();
        let has_year = run.last().is_some_and(|t| t.year);
        if caps >= 2 || (caps >= 1 && has_year) {
            spans.push((run[0].start, run.last().unwrap().end));
        }
        run.clear();
    };
    let mut last_end = 0usize;
    for tok in &toks {
        // A gap with sentence punctuation breaks the run.
        let gap = &text[last_end.min(tok.start)..tok.start];
        if !run.is_empty() && gap.chars().any(|c| ".!?;:,".contains(c)) {
            flush(&mut run, &mut spans);
        }
        if tok.year {
            if !run.is_empty() {
                run.push(tok);
                flush(&mut run, &mut spans);
            }
        } else if tok.cap {
            run.push(tok);
        } else if tok.conn && run.last().is_some_and(|t| t.cap || t.conn) && !run.is_empty() {
            run.push(tok);
        } else {
            flush(&mut run, &mut spans);
        }
        last_end = tok.end;
    }
    flush(&mut run, &mut spans);
    spans
}

fn resolve_span(span: &str, catalog: &Catalog) -> Mention {
    // Longest suffix first: the full span, then successively dropping leading
    // words. A match is only ever exact on normalized titles.
    let words: Vec<&str> = span.split_whitespace().collect();
    for skip in 0..words.len() {
        if skip > 0 && is_connector(&words[skip].to_lowercase()) {
            continue;
        }
        let candidate = words[skip..].join(" ");
        let norm = normalize_title(&candidate);
        if norm.is_empty() {
            continue;
        }
        if let Some(idxs) = catalog.by_norm_title.get(&norm) {
            if idxs.len() == 1 {
                return Mention {
                    span: candidate,
                    item: Some(catalog.items[idxs[0]].id.clone()),
                    ambiguous: false,
                };
            }
            return Mention {
                span: candidate,
                item: None,
                ambiguous: true,
            };
        }
    }
    Mention {
        span: span.to_string(),
        item: None,
        ambiguous: false,
    }
}

/// Extracts candidate title spans (quoted text, Title-Case runs, year-suffixed
/// forms) and resolves each against the catalog. Mentions are deduplicated by
/// normalized span, in order of first appearance.
pub fn resolve_item_mentions(text: &str, catalog: &Catalog) -> Vec<Mention> {
    let quoted = quoted_ranges(text);
    let mut spans: Vec<String> = quoted
        .iter()
        .map(|&(s, e)| text[s..e].trim().to_string())
        .filter(|s| s.chars().any(char::is_alphanumeric))
        .collect();
    for (s, e) in title_case_spans(text, &quoted) {
        spans.push(text[s..e].to_string());
    }

    let mut seen = BTreeSet::new();
    let mut mentions = Vec::new();
    for span in spans {
        let mention = resolve_span(&span, catalog);
        let key = normalize_title(&mention.span);
        if key.is_empty() || !seen.insert(key) {
            continue;
        }
        mentions.push(mention);
    }
    mentions
}
