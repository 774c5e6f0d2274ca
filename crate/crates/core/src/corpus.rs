//! Documents, gold mentions, BIO and JSON-lines readers, and context windows.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::spanspace::Span;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: io::Error },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("document `{doc}`: {message}")]
    Validation { doc: String, message: String },
    #[error("configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EntityMention {
    pub span: Span,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RelationMention {
    pub subject: Span,
    pub object: Span,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    pub tokens: Vec<String>,
    /// 1-based inclusive bounds partitioning `1..=tokens.len()`.
    pub sentence_bounds: Vec<(usize, usize)>,
    pub entities: Vec<EntityMention>,
    pub relations: Vec<RelationMention>,
}

impl Document {
    pub fn num_sentences(&self) -> usize {
        self.sentence_bounds.len()
    }

    /// 1-based index of the sentence containing `span`, if it lies in one.
    pub fn sentence_of(&self, span: Span) -> Option<usize> {
        self.sentence_bounds
            .iter()
            .position(|&(s, e)| s <= span.start && span.end <= e)
            .map(|i| i + 1)
    }

    pub fn sentence_span(&self, sent_idx: usize) -> Span {
        let (s, e) = self.sentence_bounds[sent_idx - 1];
        Span { start: s, end: e }
    }

    /// Relations whose endpoints sit in different sentences. They are kept at
    /// ingestion but never produced as candidates.
    pub fn cross_sentence_relations(&self) -> Vec<&RelationMention> {
        self.relations
            .iter()
            .filter(|r| self.sentence_of(r.subject) != self.sentence_of(r.object))
            .collect()
    }

    pub fn validate(&self) -> Result<(), CorpusError> {
        let err = |message: String| CorpusError::Validation { doc: self.doc_id.clone(), message };
        let mut next = 1;
        for &(s, e) in &self.sentence_bounds {
            if s != next || e < s {
                return Err(err(format!("sentence bounds ({s},{e}) do not continue from token {next}")));
            }
            next = e + 1;
        }
        if next != self.tokens.len() + 1 {
            return Err(err(format!(
                "sentence bounds cover {} tokens, document has {}",
                next - 1,
                self.tokens.len()
            )));
        }
        for ent in &self.entities {
            if ent.span.start == 0 || ent.span.start > ent.span.end || self.sentence_of(ent.span).is_none() {
                return Err(err(format!("entity span {} ({}) lies outside every sentence", ent.span, ent.label)));
            }
        }
        let spans: BTreeSet<Span> = self.entities.iter().map(|e| e.span).collect();
        for rel in &self.relations {
            if rel.subject == rel.object {
                return Err(err(format!("relation {} has identical subject and object {}", rel.label, rel.subject)));
            }
            for sp in [rel.subject, rel.object] {
                if !spans.contains(&sp) {
                    return Err(err(format!("relation {} references {sp}, which is not an entity", rel.label)));
                }
            }
        }
        Ok(())
    }

    /// Entities whose span lies in sentence `sent_idx` (1-based).
    pub fn entities_in_sentence(&self, sent_idx: usize) -> Vec<&EntityMention> {
        let sent = self.sentence_span(sent_idx);
        self.entities.iter().filter(|e| sent.contains(&e.span)).collect()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Corpus {
    pub documents: Vec<Document>,
}

impl Corpus {
    pub fn num_sentences(&self) -> usize {
        self.documents.iter().map(Document::num_sentences).sum()
    }

    pub fn entity_types(&self) -> Vec<String> {
        let set: BTreeSet<&str> =
            self.documents.iter().flat_map(|d| d.entities.iter().map(|e| e.label.as_str())).collect();
        set.into_iter().map(String::from).collect()
    }

    pub fn relation_types(&self) -> Vec<String> {
        let set: BTreeSet<&str> =
            self.documents.iter().flat_map(|d| d.relations.iter().map(|r| r.label.as_str())).collect();
        set.into_iter().map(String::from).collect()
    }

    pub fn validate_against(&self, schema: &LabelSchema) -> Result<(), CorpusError> {
        for doc in &self.documents {
            doc.validate()?;
            for e in &doc.entities {
                if !schema.entity_types.contains(&e.label) {
                    return Err(CorpusError::Validation {
                        doc: doc.doc_id.clone(),
                        message: format!("entity type `{}` is not in the schema", e.label),
                    });
                }
            }
            for r in &doc.relations {
                if !schema.relation_types.contains(&r.label) {
                    return Err(CorpusError::Validation {
                        doc: doc.doc_id.clone(),
                        message: format!("relation type `{}` is not in the schema", r.label),
                    });
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSchema {
    pub entity_types: Vec<String>,
    pub relation_types: Vec<String>,
    pub symmetric_relations: Vec<String>,
    /// Nested schemas keep overlapping predictions; flat ones resolve them.
    #[serde(default)]
    pub nested: bool,
}

impl LabelSchema {
    pub fn new(
        entity_types: Vec<String>,
        relation_types: Vec<String>,
        symmetric_relations: Vec<String>,
        nested: bool,
    ) -> Result<Self, CorpusError> {
        fn unique(v: &[String], what: &str) -> Result<(), CorpusError> {
            let set: BTreeSet<&String> = v.iter().collect();
            if set.len() != v.len() {
                return Err(CorpusError::Config(format!("duplicate {what} in schema")));
            }
            Ok(())
        }
        unique(&entity_types, "entity types")?;
        unique(&relation_types, "relation types")?;
        unique(&symmetric_relations, "symmetric relations")?;
        if let Some(s) = symmetric_relations.iter().find(|s| !relation_types.contains(s)) {
            return Err(CorpusError::Config(format!("symmetric relation `{s}` is not a relation type")));
        }
        Ok(LabelSchema { entity_types, relation_types, symmetric_relations, nested })
    }

    /// Entity and relation inventories collected from a corpus.
    pub fn infer(corpus: &Corpus, symmetric: &[String], nested: bool) -> Result<Self, CorpusError> {
        Self::new(corpus.entity_types(), corpus.relation_types(), symmetric.to_vec(), nested)
    }

    pub fn entity_id(&self, label: &str) -> Option<usize> {
        self.entity_types.iter().position(|t| t == label)
    }

    pub fn is_symmetric(&self, label: &str) -> bool {
        self.symmetric_relations.iter().any(|s| s == label)
    }
}

/// A sentence with surrounding document context.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContextWindow {
    pub doc_id: String,
    pub tokens: Vec<String>,
    /// Focus sentence bounds inside the window, 1-based inclusive.
    pub focus_range: (usize, usize),
    /// Window position `i` is document position `i + origin_offset`.
    pub origin_offset: usize,
}

impl ContextWindow {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn focus(&self) -> Span {
        Span { start: self.focus_range.0, end: self.focus_range.1 }
    }

    pub fn to_doc(&self, window_pos: usize) -> usize {
        window_pos + self.origin_offset
    }

    pub fn to_window(&self, doc_pos: usize) -> Option<usize> {
        doc_pos
            .checked_sub(self.origin_offset)
            .filter(|&p| p >= 1 && p <= self.tokens.len())
    }

    pub fn span_to_doc(&self, span: Span) -> Span {
        Span { start: self.to_doc(span.start), end: self.to_doc(span.end) }
    }

    pub fn span_to_window(&self, span: Span) -> Option<Span> {
        Some(Span { start: self.to_window(span.start)?, end: self.to_window(span.end)? })
    }
}

/// Extend sentence `sent_idx` (1-based) with neighbouring document tokens up
/// to `max_len` tokens, keeping the sentence as centred as possible. When an
/// exact centre is impossible the extra token goes to the left.
pub fn expand_context(doc: &Document, sent_idx: usize, max_len: usize) -> Result<ContextWindow, CorpusError> {
    if sent_idx == 0 || sent_idx > doc.num_sentences() {
        return Err(CorpusError::Config(format!(
            "sentence index {sent_idx} out of range 1..={}",
            doc.num_sentences()
        )));
    }
    let (s, e) = doc.sentence_bounds[sent_idx - 1];
    let m = e - s + 1;
    if max_len < m {
        return Err(CorpusError::Config(format!(
            "context window {max_len} is shorter than sentence {sent_idx} ({m} tokens)"
        )));
    }
    let n = doc.tokens.len();
    let (ws, we) = if n <= max_len {
        (1, n)
    } else {
        let extra = max_len - m;
        let avail_left = s - 1;
        let avail_right = n - e;
        let mut left = extra.div_ceil(2).min(avail_left);
        let right = (extra - left).min(avail_right);
        left = (extra - right).min(avail_left);
        (s - left, e + right)
    };
    Ok(ContextWindow {
        doc_id: doc.doc_id.clone(),
        tokens: doc.tokens[ws - 1..we].to_vec(),
        focus_range: (s - ws + 1, e - ws + 1),
        origin_offset: ws - 1,
    })
}

// ---------------------------------------------------------------------------
// BIO
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    pub line: usize,
    pub message: String,
}

/// Result of reading a BIO file: the accepted corpus plus one diagnostic per
/// rejected sentence.
#[derive(Debug, Clone, Default)]
pub struct BioRead {
    pub corpus: Corpus,
    pub diagnostics: Vec<Diagnostic>,
}

fn is_doc_marker(line: &str) -> bool {
    line.split_whitespace().next().is_some_and(|t| t == "-DOCSTART-")
}

pub fn read_bio(path: impl AsRef<Path>) -> Result<BioRead, CorpusError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)
        .map_err(|source| CorpusError::Io { path: path.display().to_string(), source })?;
    Ok(parse_bio(&text, &path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()))
}

struct PendingDoc {
    tokens: Vec<String>,
    bounds: Vec<(usize, usize)>,
    entities: Vec<EntityMention>,
}

/// Decodes contiguous `B-X (I-X)*` runs. IOB1-style leading `I-` tags are
/// rejected with the offending line number.
fn decode_sentence(rows: &[(usize, String, String)], offset: usize) -> Result<Vec<EntityMention>, Diagnostic> {
    let mut out = Vec::new();
    let mut open: Option<(usize, String)> = None;
    for (i, (line, _, tag)) in rows.iter().enumerate() {
        let pos = offset + i + 1;
        if tag == "O" {
            if let Some((start, label)) = open.take() {
                out.push(EntityMention { span: Span { start, end: pos - 1 }, label });
            }
        } else if let Some(label) = tag.strip_prefix("B-") {
            if let Some((start, l)) = open.take() {
                out.push(EntityMention { span: Span { start, end: pos - 1 }, label: l });
            }
            open = Some((pos, label.to_string()));
        } else if let Some(label) = tag.strip_prefix("I-") {
            match &open {
                Some((_, l)) if l == label => {}
                _ => {
                    return Err(Diagnostic {
                        line: *line,
                        message: format!("tag `{tag}` does not continue a B-{label} or I-{label} run"),
                    })
                }
            }
        } else {
            return Err(Diagnostic { line: *line, message: format!("malformed tag `{tag}`") });
        }
    }
    if let Some((start, label)) = open {
        out.push(EntityMention { span: Span { start, end: offset + rows.len() }, label });
    }
    Ok(out)
}

pub fn parse_bio(text: &str, name: &str) -> BioRead {
    let mut read = BioRead::default();
    let mut doc = PendingDoc { tokens: vec![], bounds: vec![], entities: vec![] };
    let mut sentence: Vec<(usize, String, String)> = Vec::new();

    let flush_sentence = |doc: &mut PendingDoc, sentence: &mut Vec<(usize, String, String)>, diags: &mut Vec<Diagnostic>| {
        if sentence.is_empty() {
            return;
        }
        let offset = doc.tokens.len();
        match decode_sentence(sentence, offset) {
            Ok(ents) => {
                doc.tokens.extend(sentence.iter().map(|(_, t, _)| t.clone()));
                doc.bounds.push((offset + 1, offset + sentence.len()));
                doc.entities.extend(ents);
            }
            Err(d) => diags.push(d),
        }
        sentence.clear();
    };
    let flush_doc = |doc: &mut PendingDoc, corpus: &mut Corpus| {
        if doc.tokens.is_empty() {
            return;
        }
        let d = std::mem::replace(doc, PendingDoc { tokens: vec![], bounds: vec![], entities: vec![] });
        corpus.documents.push(Document {
            doc_id: format!("{name}-{}", corpus.documents.len()),
            tokens: d.tokens,
            sentence_bounds: d.bounds,
            entities: d.entities,
            relations: vec![],
        });
    };

    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim();
        if line.is_empty() {
            flush_sentence(&mut doc, &mut sentence, &mut read.diagnostics);
            continue;
        }
        if is_doc_marker(line) {
            flush_sentence(&mut doc, &mut sentence, &mut read.diagnostics);
            flush_doc(&mut doc, &mut read.corpus);
            continue;
        }
        let cols: Vec<&str> = line.split_whitespace().collect();
        if cols.len() < 2 {
            read.diagnostics.push(Diagnostic { line: line_no, message: "expected token and tag columns".into() });
            continue;
        }
        sentence.push((line_no, cols[0].to_string(), cols[cols.len() - 1].to_string()));
    }
    flush_sentence(&mut doc, &mut sentence, &mut read.diagnostics);
    flush_doc(&mut doc, &mut read.corpus);
    read
}

/// Two-column BIO rendering with `-DOCSTART-` separators. Nested entities
/// cannot be expressed; the outermost, earliest span wins.
pub fn write_bio(corpus: &Corpus) -> String {
    let mut out = String::new();
    for doc in &corpus.documents {
        out.push_str("-DOCSTART- O\n\n");
        let mut tags = vec!["O".to_string(); doc.tokens.len()];
        let mut ents: Vec<&EntityMention> = doc.entities.iter().collect();
        ents.sort_by_key(|e| (e.span.start, std::cmp::Reverse(e.span.end)));
        let mut covered_to = 0;
        for e in ents {
            if e.span.start <= covered_to {
                continue;
            }
            tags[e.span.start - 1] = format!("B-{}", e.label);
            for t in e.span.start + 1..=e.span.end {
                tags[t - 1] = format!("I-{}", e.label);
            }
            covered_to = e.span.end;
        }
        for &(s, e) in &doc.sentence_bounds {
            for t in s..=e {
                let _ = writeln!(out, "{} {}", doc.tokens[t - 1], tags[t - 1]);
            }
            out.push('\n');
        }
    }
    out
}

// ---------------------------------------------------------------------------
// JSON lines
// ---------------------------------------------------------------------------

/// `(subject_start, subject_end, object_start, object_end, label)`, 1-based inclusive document positions.
pub type JsonRelation = (usize, usize, usize, usize, String);

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JsonDocument {
    #[serde(default)]
    pub doc_key: Option<String>,
    pub sentences: Vec<Vec<String>>,
    #[serde(default)]
    pub ner: Vec<Vec<(usize, usize, String)>>,
    #[serde(default)]
    pub relations: Vec<Vec<JsonRelation>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ner_scores: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub relation_scores: Option<Vec<Vec<f64>>>,
}

impl JsonDocument {
    pub fn into_document(self, fallback_id: String) -> Result<Document, CorpusError> {
        let doc_id = self.doc_key.unwrap_or(fallback_id);
        let mut tokens = Vec::new();
        let mut bounds = Vec::new();
        for sent in &self.sentences {
            let start = tokens.len() + 1;
            tokens.extend(sent.iter().cloned());
            if !sent.is_empty() {
                bounds.push((start, tokens.len()));
            }
        }
        let check_in_sentence = |sent_idx: usize, sp: (usize, usize), what: &str| -> Result<Span, CorpusError> {
            let err = || CorpusError::Validation {
                doc: doc_id.clone(),
                message: format!("{what} span ({},{}) lies outside sentence {}", sp.0, sp.1, sent_idx + 1),
            };
            let (lo, hi) = bounds.get(sent_idx).copied().ok_or_else(err)?;
            if sp.0 < lo || sp.1 > hi || sp.0 > sp.1 {
                return Err(err());
            }
            Ok(Span { start: sp.0, end: sp.1 })
        };
        if self.ner.len() > self.sentences.len() || self.relations.len() > self.sentences.len() {
            return Err(CorpusError::Validation {
                doc: doc_id.clone(),
                message: "more annotation lists than sentences".into(),
            });
        }
        let mut entities = Vec::new();
        for (si, sent) in self.ner.iter().enumerate() {
            for (a, b, label) in sent {
                let span = check_in_sentence(si, (*a, *b), "entity")?;
                entities.push(EntityMention { span, label: label.clone() });
            }
        }
        let mut relations = Vec::new();
        // Endpoints only need to be entities of the document; cross-sentence
        // relations are flagged later.
        for (a, b, c, d, label) in self.relations.iter().flatten() {
            let subject = Span { start: *a, end: *b };
            let object = Span { start: *c, end: *d };
            relations.push(RelationMention { subject, object, label: label.clone() });
        }
        let doc = Document { doc_id, tokens, sentence_bounds: bounds, entities, relations };
        doc.validate()?;
        Ok(doc)
    }

    pub fn from_document(doc: &Document) -> Self {
        let mut ner = vec![Vec::new(); doc.num_sentences()];
        for e in &doc.entities {
            if let Some(si) = doc.sentence_of(e.span) {
                ner[si - 1].push((e.span.start, e.span.end, e.label.clone()));
            }
        }
        let mut relations = vec![Vec::new(); doc.num_sentences()];
        for r in &doc.relations {
            if let Some(si) = doc.sentence_of(r.subject) {
                relations[si - 1].push((r.subject.start, r.subject.end, r.object.start, r.object.end, r.label.clone()));
            }
        }
        JsonDocument {
            doc_key: Some(doc.doc_id.clone()),
            sentences: doc.sentence_bounds.iter().map(|&(s, e)| doc.tokens[s - 1..e].to_vec()).collect(),
            ner,
            relations,
            ner_scores: None,
            relation_scores: None,
        }
    }
}

pub fn parse_jsonl(text: &str) -> Result<Corpus, CorpusError> {
    let mut documents = Vec::new();
    let mut ids = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let jd: JsonDocument = serde_json::from_str(line)
            .map_err(|e| CorpusError::Parse { line: i + 1, message: e.to_string() })?;
        let doc = jd.into_document(format!("doc-{}", i + 1))?;
        if ids.insert(doc.doc_id.clone(), i + 1).is_some() {
            return Err(CorpusError::Parse { line: i + 1, message: format!("duplicate doc_key `{}`", doc.doc_id) });
        }
        documents.push(doc);
    }
    Ok(Corpus { documents })
}

pub fn read_jsonl(path: impl AsRef<Path>) -> Result<Corpus, CorpusError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)
        .map_err(|source| CorpusError::Io { path: path.display().to_string(), source })?;
    parse_jsonl(&text)
}

pub fn to_jsonl(corpus: &Corpus) -> String {
    let mut out = String::new();
    for doc in &corpus.documents {
        out.push_str(&serde_json::to_string(&JsonDocument::from_document(doc)).expect("serializable"));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc(n: usize, bounds: &[(usize, usize)]) -> Document {
        Document {
            doc_id: "d".into(),
            tokens: (1..=n).map(|i| format!("t{i}")).collect(),
            sentence_bounds: bounds.to_vec(),
            entities: vec![],
            relations: vec![],
        }
    }

    #[test]
    fn bio_basic() {
        let read = parse_bio("EU B-ORG\nrejects O\nGerman B-MISC\n", "x");
        assert!(read.diagnostics.is_empty());
        let d = &read.corpus.documents[0];
        assert_eq!(d.num_sentences(), 1);
        let ents: Vec<_> = d.entities.iter().map(|e| (e.span.start, e.span.end, e.label.as_str())).collect();
        assert_eq!(ents, vec![(1, 1, "ORG"), (3, 3, "MISC")]);
    }

    #[test]
    fn bio_empty_and_malformed() {
        assert!(parse_bio("", "x").corpus.documents.is_empty());
        let read = parse_bio("a B-PER\nb I-PER\n\nc I-LOC\nd O\n\ne B-LOC\nf I-PER\n", "x");
        assert_eq!(read.corpus.documents[0].num_sentences(), 1);
        let lines: Vec<_> = read.diagnostics.iter().map(|d| d.line).collect();
        assert_eq!(lines, vec![4, 8]);
    }

    #[test]
    fn bio_four_type_inventory() {
        let text = "-DOCSTART- O\n\nA B-PER\nB B-ORG\nC B-LOC\nD B-MISC\nE I-MISC\n\n-DOCSTART- O\n\nF B-PER\n";
        let read = parse_bio(text, "x");
        assert_eq!(read.corpus.documents.len(), 2);
        assert_eq!(read.corpus.entity_types().len(), 4);
    }

    #[test]
    fn bio_round_trip() {
        let text = "-DOCSTART- O\n\nA B-PER\nB I-PER\nC O\n\nD B-LOC\n\n";
        let first = parse_bio(text, "x").corpus;
        let again = parse_bio(&write_bio(&first), "x").corpus;
        assert_eq!(first, again);
    }

    #[test]
    fn jsonl_fields() {
        let c = parse_jsonl(r#"{"sentences":[["a","b","c"]],"ner":[[[1,1,"PER"],[3,3,"LOC"]]],"relations":[[[1,1,3,3,"PHYS"]]]}"#)
            .unwrap();
        let d = &c.documents[0];
        assert_eq!(d.entities.len(), 2);
        assert_eq!(d.relations[0].label, "PHYS");
        assert_eq!(d.relations[0].subject, Span::new(1, 1));
    }

    #[test]
    fn jsonl_errors() {
        let e = parse_jsonl(r#"{"sentences":[["a","b","c"]],"ner":[[[1,5,"PER"]]]}"#).unwrap_err();
        assert!(matches!(e, CorpusError::Validation { .. }), "{e}");
        assert!(e.to_string().contains("(1,5)"));
        let e = parse_jsonl("{\"sentences\":[]}\n{oops").unwrap_err();
        assert!(matches!(e, CorpusError::Parse { line: 2, .. }));
    }

    #[test]
    fn cross_sentence_relations_are_flagged() {
        let c = parse_jsonl(
            r#"{"sentences":[["a","b"],["c"]],"ner":[[[1,1,"P"]],[[3,3,"L"]]],"relations":[[[1,1,3,3,"R"]]]}"#,
        )
        .unwrap();
        assert_eq!(c.documents[0].cross_sentence_relations().len(), 1);
    }

    #[test]
    fn context_centered() {
        let d = doc(10, &[(1, 4), (5, 6), (7, 10)]);
        let w = expand_context(&d, 2, 6).unwrap();
        assert_eq!(w.origin_offset, 2);
        assert_eq!(w.tokens.first().unwrap(), "t3");
        assert_eq!(w.tokens.last().unwrap(), "t8");
        assert_eq!(w.focus_range, (3, 4));
    }

    #[test]
    fn context_short_doc_and_edges() {
        let d = doc(4, &[(1, 2), (3, 4)]);
        let w = expand_context(&d, 2, 512).unwrap();
        assert_eq!(w.len(), 4);
        assert_eq!(w.focus_range, (3, 4));
        let d = doc(10, &[(1, 2), (3, 10)]);
        let w = expand_context(&d, 1, 5).unwrap();
        assert_eq!((w.origin_offset, w.len(), w.focus_range), (0, 5, (1, 2)));
        assert!(matches!(expand_context(&d, 2, 5), Err(CorpusError::Config(_))));
    }

    #[test]
    fn context_tie_prefers_left() {
        // Sentence 5..6 in 10 tokens, C=5: one extra token, goes left.
        let d = doc(10, &[(1, 4), (5, 6), (7, 10)]);
        let w = expand_context(&d, 2, 5).unwrap();
        assert_eq!((w.origin_offset, w.focus_range), (2, (3, 4)));
    }
}
