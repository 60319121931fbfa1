//! Knowledge acquisition pipeline over a local document corpus.
//!
//! corpus → intermediary index (postings) → domain dataset (weighted terms)
//! → knowledge base (merged, versioned). Every stage is a pure function of
//! its inputs.
//!
//! Term weight: `cf(t) · ln(1 + N / df(t))` where `cf` is the total number
//! of occurrences of `t` in the corpus, `N` the number of documents and
//! `df` the number of documents containing `t`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

pub const DEFAULT_TOP_K: usize = 100;

/// Fixed English stopword list, sorted.
pub const STOPWORDS: &[&str] = &[
    "a", "about", "above", "after", "again", "against", "all", "also", "am", "an", "and", "any",
    "are", "as", "at", "be", "because", "been", "before", "being", "below", "between", "both",
    "but", "by", "can", "could", "did", "do", "does", "doing", "down", "during", "each", "either",
    "etc", "few", "for", "from", "further", "had", "has", "have", "having", "he", "her", "here",
    "hers", "him", "his", "how", "i", "if", "in", "into", "is", "it", "its", "itself", "just",
    "me", "more", "most", "my", "no", "nor", "not", "of", "off", "on", "once", "only", "or",
    "other", "our", "ours", "out", "over", "own", "same", "she", "so", "some", "such", "than",
    "that", "the", "their", "theirs", "them", "then", "there", "these", "they", "this", "those",
    "through", "to", "too", "under", "until", "up", "upon", "us", "very", "via", "was", "we",
    "were", "what", "when", "where", "which", "while", "who", "whom", "why", "will", "with",
    "within", "would", "you", "your", "yours",
];

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SkauError {
    #[error("document `{0}` is empty")]
    EmptyDocument(String),
    #[error("document id must not be empty")]
    EmptyDocId,
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("index is stale or has not been built")]
    StaleIndex,
    #[error("parse error at line {line}: {message}")]
    ParseError { line: usize, message: String },
    #[error("i/o error: {0}")]
    Io(String),
}

pub fn is_stopword(token: &str) -> bool {
    STOPWORDS.binary_search(&token).is_ok()
}

/// Lowercase alphanumeric tokens; hyphens survive only inside a token.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !(c.is_alphanumeric() || c == '-'))
        .map(|raw| raw.trim_matches('-'))
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .filter(|t| !is_stopword(t))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusDoc {
    pub doc_id: String,
    pub text: String,
    pub fetched_at: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Corpus {
    docs: BTreeMap<String, CorpusDoc>,
    generation: u64,
}

impl Corpus {
    pub fn new() -> Self {
        Self::default()
    }

    /// Store `text` under `doc_id`, replacing any previous version.
    pub fn ingest_document(
        &mut self,
        doc_id: &str,
        text: &str,
        fetched_at: u64,
    ) -> Result<&CorpusDoc, SkauError> {
        if doc_id.is_empty() {
            return Err(SkauError::EmptyDocId);
        }
        if text.is_empty() {
            return Err(SkauError::EmptyDocument(doc_id.to_string()));
        }
        self.generation += 1;
        let doc = CorpusDoc {
            doc_id: doc_id.to_string(),
            text: text.to_string(),
            fetched_at,
        };
        self.docs.insert(doc_id.to_string(), doc);
        Ok(&self.docs[doc_id])
    }

    /// Ingest every regular file of `dir`; the file name is the doc id.
    /// Files are visited in name order.
    pub fn ingest_dir(&mut self, dir: &Path, fetched_at: u64) -> Result<Vec<String>, SkauError> {
        let io = |e: std::io::Error| SkauError::Io(format!("{}: {e}", dir.display()));
        let mut files = Vec::new();
        for entry in std::fs::read_dir(dir).map_err(io)? {
            let entry = entry.map_err(io)?;
            if entry.file_type().map_err(io)?.is_file() {
                files.push(entry.path());
            }
        }
        files.sort();
        let mut ids = Vec::new();
        for path in files {
            let Some(id) = path.file_name().and_then(|n| n.to_str()) else {
                continue;
            };
            if id.starts_with('.') {
                continue;
            }
            let text = std::fs::read_to_string(&path).map_err(io)?;
            self.ingest_document(id, &text, fetched_at)?;
            ids.push(id.to_string());
        }
        Ok(ids)
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn get(&self, doc_id: &str) -> Option<&CorpusDoc> {
        self.docs.get(doc_id)
    }

    pub fn docs(&self) -> impl Iterator<Item = &CorpusDoc> {
        self.docs.values()
    }

    /// Bumped on every ingest; indexes remember the generation they saw.
    pub fn generation(&self) -> u64 {
        self.generation
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Posting {
    pub doc_id: String,
    pub frequency: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IntermediaryIndex {
    pub postings: BTreeMap<String, Vec<Posting>>,
    pub doc_lengths: BTreeMap<String, u64>,
    generation: u64,
}

impl IntermediaryIndex {
    pub fn doc_count(&self) -> usize {
        self.doc_lengths.len()
    }

    pub fn is_stale(&self, corpus: &Corpus) -> bool {
        self.generation != corpus.generation
    }

    pub fn document_frequency(&self, term: &str) -> usize {
        self.postings.get(term).map_or(0, Vec::len)
    }

    pub fn corpus_frequency(&self, term: &str) -> u64 {
        self.postings
            .get(term)
            .map_or(0, |p| p.iter().map(|p| p.frequency).sum())
    }

    /// `cf(t) · ln(1 + N / df(t))`, or 0 for unknown terms.
    pub fn weight(&self, term: &str) -> f64 {
        let df = self.document_frequency(term);
        if df == 0 {
            return 0.0;
        }
        let n = self.doc_count() as f64;
        self.corpus_frequency(term) as f64 * (1.0 + n / df as f64).ln()
    }

    /// Tab-separated dump: `term`, then `doc_id:frequency` pairs.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (term, postings) in &self.postings {
            out.push_str(term);
            for p in postings {
                let _ = write!(out, "\t{}:{}", p.doc_id, p.frequency);
            }
            out.push('\n');
        }
        out
    }
}

pub fn build_index(corpus: &Corpus) -> Result<IntermediaryIndex, SkauError> {
    if corpus.is_empty() {
        return Err(SkauError::EmptyCorpus);
    }
    let mut postings: BTreeMap<String, Vec<Posting>> = BTreeMap::new();
    let mut doc_lengths = BTreeMap::new();
    for doc in corpus.docs() {
        let tokens = tokenize(&doc.text);
        doc_lengths.insert(doc.doc_id.clone(), tokens.len() as u64);
        let mut counts: BTreeMap<String, u64> = BTreeMap::new();
        for t in tokens {
            *counts.entry(t).or_default() += 1;
        }
        // docs are visited in id order, so posting lists stay sorted
        for (term, frequency) in counts {
            postings.entry(term).or_default().push(Posting {
                doc_id: doc.doc_id.clone(),
                frequency,
            });
        }
    }
    Ok(IntermediaryIndex {
        postings,
        doc_lengths,
        generation: corpus.generation,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetEntry {
    pub term: String,
    pub weight: f64,
    pub doc_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DomainDataset {
    pub name: String,
    pub entries: Vec<DatasetEntry>,
}

fn write_entry(out: &mut String, term: &str, weight: f64, docs: impl Iterator<Item = impl AsRef<str>>) {
    let docs: Vec<String> = docs.map(|d| d.as_ref().to_string()).collect();
    let _ = writeln!(out, "{term}\t{weight:.6}\t{}", docs.join(","));
}

fn parse_entry_line(line_no: usize, line: &str) -> Result<DatasetEntry, SkauError> {
    let perr = |message: &str| SkauError::ParseError {
        line: line_no,
        message: message.to_string(),
    };
    let fields: Vec<&str> = line.split('\t').collect();
    let [term, weight, docs] = fields[..] else {
        return Err(perr("expected 3 tab-separated fields"));
    };
    let weight: f64 = weight.parse().map_err(|_| perr("bad weight"))?;
    if term.is_empty() || !weight.is_finite() || weight < 0.0 {
        return Err(perr("bad entry"));
    }
    let doc_ids = if docs.is_empty() {
        Vec::new()
    } else {
        docs.split(',').map(String::from).collect()
    };
    Ok(DatasetEntry {
        term: term.to_string(),
        weight,
        doc_ids,
    })
}

impl DomainDataset {
    /// `term \t weight (6 dp) \t doc_ids comma-joined`, in entry order.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            write_entry(&mut out, &e.term, e.weight, e.doc_ids.iter());
        }
        out
    }

    pub fn from_tsv(name: &str, text: &str) -> Result<DomainDataset, SkauError> {
        let entries = text
            .lines()
            .enumerate()
            .map(|(i, l)| parse_entry_line(i + 1, l))
            .collect::<Result<_, _>>()?;
        Ok(DomainDataset {
            name: name.to_string(),
            entries,
        })
    }
}

/// Rank terms of `index` by weight. With seed terms, only terms sharing at
/// least one document with a seed are kept. Ties break on term order.
pub fn distill(
    index: &IntermediaryIndex,
    dataset_name: &str,
    seed_terms: &[String],
    top_k: usize,
) -> DomainDataset {
    let seed_docs: Option<BTreeSet<&str>> = (!seed_terms.is_empty()).then(|| {
        seed_terms
            .iter()
            .filter_map(|s| index.postings.get(&s.to_lowercase()))
            .flatten()
            .map(|p| p.doc_id.as_str())
            .collect()
    });
    let mut entries: Vec<DatasetEntry> = index
        .postings
        .iter()
        .filter(|(_, postings)| match &seed_docs {
            Some(docs) => postings.iter().any(|p| docs.contains(p.doc_id.as_str())),
            None => true,
        })
        .map(|(term, postings)| DatasetEntry {
            term: term.clone(),
            weight: index.weight(term),
            doc_ids: postings.iter().map(|p| p.doc_id.clone()).collect(),
        })
        .collect();
    entries.sort_by(|a, b| b.weight.total_cmp(&a.weight).then_with(|| a.term.cmp(&b.term)));
    entries.truncate(top_k);
    DomainDataset {
        name: dataset_name.to_string(),
        entries,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KbFact {
    pub weight: f64,
    pub doc_ids: BTreeSet<String>,
}

/// Immutable, versioned knowledge base. Rebuilding yields a new value.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct KnowledgeBase {
    facts: BTreeMap<String, KbFact>,
    version: u64,
}

pub const KB_HEADER: &str = "# a2rd-kb version";

impl KnowledgeBase {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn len(&self) -> usize {
        self.facts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.facts.is_empty()
    }

    pub fn facts(&self) -> &BTreeMap<String, KbFact> {
        &self.facts
    }

    /// Header line with the version, then one fact per line sorted by term.
    pub fn to_text(&self) -> String {
        let mut out = format!("{KB_HEADER} {}\n", self.version);
        for (term, fact) in &self.facts {
            write_entry(&mut out, term, fact.weight, fact.doc_ids.iter());
        }
        out
    }

    pub fn from_text(text: &str) -> Result<KnowledgeBase, SkauError> {
        let mut lines = text.lines();
        let version = lines
            .next()
            .and_then(|h| h.strip_prefix(KB_HEADER))
            .and_then(|v| v.trim().parse().ok())
            .ok_or(SkauError::ParseError {
                line: 1,
                message: "missing version header".into(),
            })?;
        let mut facts = BTreeMap::new();
        for (i, line) in lines.enumerate() {
            let e = parse_entry_line(i + 2, line)?;
            facts.insert(
                e.term,
                KbFact {
                    weight: e.weight,
                    doc_ids: e.doc_ids.into_iter().collect(),
                },
            );
        }
        Ok(KnowledgeBase { facts, version })
    }
}

/// Merge `datasets` into a fresh knowledge base one version above `kb`.
/// A term present in several datasets keeps the highest weight and the
/// union of supporting documents.
pub fn rebuild_kb(kb: &KnowledgeBase, datasets: &[DomainDataset]) -> KnowledgeBase {
    let mut facts: BTreeMap<String, KbFact> = BTreeMap::new();
    for entry in datasets.iter().flat_map(|d| &d.entries) {
        let fact = facts.entry(entry.term.clone()).or_insert(KbFact {
            weight: entry.weight,
            doc_ids: BTreeSet::new(),
        });
        fact.weight = fact.weight.max(entry.weight);
        fact.doc_ids.extend(entry.doc_ids.iter().cloned());
    }
    KnowledgeBase {
        facts,
        version: kb.version + 1,
    }
}

/// Exact-term lookup. Unknown terms give an empty list.
pub fn query_knowledge(kb: &KnowledgeBase, term: &str) -> Vec<(f64, Vec<String>)> {
    kb.facts
        .get(term)
        .map(|f| vec![(f.weight, f.doc_ids.iter().cloned().collect())])
        .unwrap_or_default()
}

/// Corpus plus its derived index, tracking staleness across re-ingests.
#[derive(Debug, Clone, Default)]
pub struct Pipeline {
    corpus: Corpus,
    index: Option<IntermediaryIndex>,
}

impl Pipeline {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_corpus(corpus: Corpus) -> Self {
        Self {
            corpus,
            index: None,
        }
    }

    pub fn corpus(&self) -> &Corpus {
        &self.corpus
    }

    pub fn ingest_document(&mut self, doc_id: &str, text: &str, fetched_at: u64) -> Result<&CorpusDoc, SkauError> {
        self.corpus.ingest_document(doc_id, text, fetched_at)
    }

    pub fn index_stale(&self) -> bool {
        self.index.as_ref().is_none_or(|i| i.is_stale(&self.corpus))
    }

    pub fn build_index(&mut self) -> Result<&IntermediaryIndex, SkauError> {
        let index = build_index(&self.corpus)?;
        Ok(self.index.insert(index))
    }

    pub fn index(&self) -> Option<&IntermediaryIndex> {
        self.index.as_ref()
    }

    pub fn distill(&self, name: &str, seed_terms: &[String], top_k: usize) -> Result<DomainDataset, SkauError> {
        match &self.index {
            Some(index) if !index.is_stale(&self.corpus) => Ok(distill(index, name, seed_terms, top_k)),
            _ => Err(SkauError::StaleIndex),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn strs(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn stopwords_sorted() {
        assert!(STOPWORDS.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn tokenize_examples() {
        assert_eq!(tokenize("The Border Gateway Protocol (BGP)"), strs(&["border", "gateway", "protocol", "bgp"]));
        assert_eq!(tokenize("route-object"), strs(&["route-object"]));
        assert!(tokenize("").is_empty());
        assert_eq!(tokenize("-lead trail- -- a-b-c RFC2622."), strs(&["lead", "trail", "a-b-c", "rfc2622"]));
    }

    #[test]
    fn ingest_replaces_and_marks_stale() {
        let mut p = Pipeline::new();
        p.ingest_document("rfc2622", "routing policy", 0).unwrap();
        assert_eq!(p.corpus().len(), 1);
        p.build_index().unwrap();
        assert!(!p.index_stale());
        p.ingest_document("rfc2622", "new text", 1).unwrap();
        assert_eq!(p.corpus().len(), 1);
        assert!(p.index_stale());
        assert_eq!(p.distill("d", &[], 10), Err(SkauError::StaleIndex));
        assert_eq!(
            p.ingest_document("x", "", 0).unwrap_err(),
            SkauError::EmptyDocument("x".into())
        );
    }

    #[test]
    fn index_hand_count() {
        let mut c = Corpus::new();
        c.ingest_document("d", "bgp bgp route", 0).unwrap();
        let index = build_index(&c).unwrap();
        assert_eq!(index.postings.len(), 2);
        assert_eq!(index.postings["bgp"], vec![Posting { doc_id: "d".into(), frequency: 2 }]);
        assert_eq!(index.postings["route"], vec![Posting { doc_id: "d".into(), frequency: 1 }]);
        assert_eq!(index.doc_lengths["d"], 3);
        assert_eq!(build_index(&c).unwrap(), index);
        assert_eq!(build_index(&Corpus::new()), Err(SkauError::EmptyCorpus));
    }

    #[test]
    fn distill_single_doc() {
        let mut c = Corpus::new();
        c.ingest_document("d", "bgp bgp route", 0).unwrap();
        let ds = distill(&build_index(&c).unwrap(), "net", &[], DEFAULT_TOP_K);
        assert_eq!(ds.entries[0].term, "bgp");
        assert!((ds.entries[0].weight - 2.0 * 2f64.ln()).abs() < 1e-12);
        assert_eq!(ds.entries[1].term, "route");
        assert!((ds.entries[1].weight - 2f64.ln()).abs() < 1e-12);
        assert_eq!(ds.to_tsv(), "bgp\t1.386294\td\nroute\t0.693147\td\n");
    }

    #[test]
    fn seed_filter_and_ties() {
        let mut c = Corpus::new();
        c.ingest_document("a", "bgp peer", 0).unwrap();
        c.ingest_document("b", "route object", 0).unwrap();
        let index = build_index(&c).unwrap();
        let ds = distill(&index, "s", &strs(&["BGP"]), 10);
        let terms: Vec<&str> = ds.entries.iter().map(|e| e.term.as_str()).collect();
        assert_eq!(terms, ["bgp", "peer"]);
        let all = distill(&index, "s", &[], 10);
        let terms: Vec<&str> = all.entries.iter().map(|e| e.term.as_str()).collect();
        assert_eq!(terms, ["bgp", "object", "peer", "route"]);
        assert_eq!(distill(&index, "s", &[], 2).entries.len(), 2);
        assert!(distill(&index, "s", &strs(&["absent"]), 10).entries.is_empty());
    }

    #[test]
    fn kb_merge_and_versions() {
        let d1 = DomainDataset {
            name: "one".into(),
            entries: vec![DatasetEntry { term: "bgp".into(), weight: 3.0, doc_ids: strs(&["a"]) }],
        };
        let d2 = DomainDataset {
            name: "two".into(),
            entries: vec![
                DatasetEntry { term: "bgp".into(), weight: 5.0, doc_ids: strs(&["b"]) },
                DatasetEntry { term: "irr".into(), weight: 1.0, doc_ids: strs(&["b"]) },
            ],
        };
        let kb = rebuild_kb(&KnowledgeBase::empty(), &[d1.clone(), d2.clone()]);
        assert_eq!(kb.version(), 1);
        assert_eq!(query_knowledge(&kb, "bgp"), vec![(5.0, strs(&["a", "b"]))]);
        assert_eq!(query_knowledge(&kb, "irr"), vec![(1.0, strs(&["b"]))]);
        assert!(query_knowledge(&kb, "nonexistent").is_empty());
        let again = rebuild_kb(&kb, &[d1, d2]);
        assert_eq!(again.version(), 2);
        assert_eq!(again.facts(), kb.facts());

        let parsed = KnowledgeBase::from_text(&kb.to_text()).unwrap();
        assert_eq!(parsed, kb);
    }

    #[test]
    fn dataset_tsv_round_trip() {
        let ds = DomainDataset {
            name: "x".into(),
            entries: vec![DatasetEntry { term: "bgp".into(), weight: 1.5, doc_ids: strs(&["a", "b"]) }],
        };
        assert_eq!(DomainDataset::from_tsv("x", &ds.to_tsv()).unwrap(), ds);
        assert!(DomainDataset::from_tsv("x", "bgp\tnope\ta").is_err());
    }
}
