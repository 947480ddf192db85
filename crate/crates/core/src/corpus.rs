//! Student learning logs: the question catalog, CSV ingestion, splitting and
//! the empirical statistics the augmentor and trainer consume.
//!
//! Log format, one interaction per row, header required:
//!
//! ```text
//! student_id,order,question_id,concept_ids,response
//! 7,1,1034,12|47,1
//! ```
//!
//! `concept_ids` is `|`-separated, `order` strictly increases per student and
//! `response` is 0 or 1. Question and concept ids are re-indexed densely in
//! order of first appearance; the original ids are kept in the [`Catalog`].

use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, Write};
use std::sync::Arc;

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub const CSV_HEADER: &str = "student_id,order,question_id,concept_ids,response";

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Question {
    pub id: usize,
    pub concept_ids: Vec<usize>,
}

/// Questions with their concept sets, plus the original-id side map.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Catalog {
    questions: Vec<Question>,
    question_labels: Vec<i64>,
    concept_labels: Vec<i64>,
    question_index: HashMap<i64, usize>,
    concept_index: HashMap<i64, usize>,
}

impl Catalog {
    /// Builds a catalog from original ids. `concepts[q]` lists the dense
    /// concept indices of question `q`.
    pub fn from_parts(
        question_labels: Vec<i64>,
        concept_labels: Vec<i64>,
        concepts: Vec<Vec<usize>>,
    ) -> Result<Self> {
        if question_labels.len() != concepts.len() {
            return Err(Error::Validation(
                "question labels and concept lists differ in length".into(),
            ));
        }
        let n_concepts = concept_labels.len();
        let mut questions = Vec::with_capacity(concepts.len());
        for (id, cs) in concepts.into_iter().enumerate() {
            if cs.is_empty() {
                return Err(Error::Validation(format!(
                    "question {} has no concepts",
                    question_labels[id]
                )));
            }
            if let Some(bad) = cs.iter().find(|&&c| c >= n_concepts) {
                return Err(Error::Validation(format!(
                    "question {} references unknown concept index {bad}",
                    question_labels[id]
                )));
            }
            questions.push(Question {
                id,
                concept_ids: cs,
            });
        }
        let question_index = index_of(&question_labels, "question")?;
        let concept_index = index_of(&concept_labels, "concept")?;
        Ok(Self {
            questions,
            question_labels,
            concept_labels,
            question_index,
            concept_index,
        })
    }

    pub fn n_questions(&self) -> usize {
        self.questions.len()
    }

    pub fn n_concepts(&self) -> usize {
        self.concept_labels.len()
    }

    /// Dense id of the `[MASK]` token: one past the last real question.
    pub fn mask_id(&self) -> usize {
        self.questions.len()
    }

    pub fn is_mask(&self, q: usize) -> bool {
        q == self.mask_id()
    }

    pub fn question(&self, q: usize) -> Result<&Question> {
        self.questions
            .get(q)
            .ok_or_else(|| Error::Lookup(format!("unknown question id {q}")))
    }

    pub fn questions(&self) -> &[Question] {
        &self.questions
    }

    pub fn question_label(&self, q: usize) -> i64 {
        self.question_labels[q]
    }

    pub fn concept_label(&self, c: usize) -> i64 {
        self.concept_labels[c]
    }

    pub fn question_labels(&self) -> &[i64] {
        &self.question_labels
    }

    pub fn concept_labels(&self) -> &[i64] {
        &self.concept_labels
    }

    pub fn question_by_label(&self, label: i64) -> Option<usize> {
        self.question_index.get(&label).copied()
    }

    pub fn concept_by_label(&self, label: i64) -> Option<usize> {
        self.concept_index.get(&label).copied()
    }
}

fn index_of(labels: &[i64], what: &str) -> Result<HashMap<i64, usize>> {
    let mut map = HashMap::with_capacity(labels.len());
    for (i, &l) in labels.iter().enumerate() {
        if map.insert(l, i).is_some() {
            return Err(Error::Validation(format!("duplicate {what} id {l}")));
        }
    }
    Ok(map)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Step {
    pub question: usize,
    pub response: u8,
}

impl Step {
    pub fn new(question: usize, response: u8) -> Self {
        Self { question, response }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LearningSequence {
    pub student_id: i64,
    pub steps: Vec<Step>,
}

impl LearningSequence {
    pub fn new(student_id: i64, steps: Vec<Step>) -> Self {
        Self { student_id, steps }
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn questions(&self) -> Vec<usize> {
        self.steps.iter().map(|s| s.question).collect()
    }

    pub fn responses(&self) -> Vec<u8> {
        self.steps.iter().map(|s| s.response).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub catalog: Arc<Catalog>,
    pub sequences: Vec<LearningSequence>,
}

impl Dataset {
    pub fn new(catalog: Arc<Catalog>, sequences: Vec<LearningSequence>) -> Result<Self> {
        let ds = Self { catalog, sequences };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = std::collections::HashSet::new();
        for s in &self.sequences {
            if s.is_empty() {
                return Err(Error::Validation(format!(
                    "student {} has an empty sequence",
                    s.student_id
                )));
            }
            if !seen.insert(s.student_id) {
                return Err(Error::Validation(format!(
                    "duplicate student id {}",
                    s.student_id
                )));
            }
            for st in &s.steps {
                if st.question >= self.catalog.n_questions() {
                    return Err(Error::Validation(format!(
                        "student {} references unknown question {}",
                        s.student_id, st.question
                    )));
                }
                if st.response > 1 {
                    return Err(Error::Validation(format!(
                        "student {} has non-binary response {}",
                        s.student_id, st.response
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }

    pub fn n_interactions(&self) -> usize {
        self.sequences.iter().map(|s| s.len()).sum()
    }

    /// The sequences at `idx`, sharing this catalog.
    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            catalog: Arc::clone(&self.catalog),
            sequences: idx.iter().map(|&i| self.sequences[i].clone()).collect(),
        }
    }

    /// Writes the dataset in the log CSV format; `order` is rewritten as 1..=T.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{CSV_HEADER}")?;
        for s in &self.sequences {
            for (i, st) in s.steps.iter().enumerate() {
                let q = self.catalog.question(st.question)?;
                writeln!(
                    w,
                    "{},{},{},{},{}",
                    s.student_id,
                    i + 1,
                    self.catalog.question_label(st.question),
                    join_concepts(&self.catalog, q),
                    st.response
                )?;
            }
        }
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("csv is utf-8")
    }
}

pub(crate) fn join_concepts(catalog: &Catalog, q: &Question) -> String {
    q.concept_ids
        .iter()
        .map(|&c| catalog.concept_label(c).to_string())
        .collect::<Vec<_>>()
        .join("|")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct IngestOptions {
    /// Students with fewer interactions are dropped.
    pub min_interactions: usize,
    /// Only the last `max_len` interactions of each student are kept.
    pub max_len: usize,
}

impl Default for IngestOptions {
    fn default() -> Self {
        Self {
            min_interactions: 10,
            max_len: 200,
        }
    }
}

struct RawRow {
    question: i64,
    concepts: Vec<i64>,
    response: u8,
}

struct RawStudent {
    id: i64,
    last_order: i64,
    rows: Vec<RawRow>,
}

fn parse_field<T: std::str::FromStr>(s: &str, line: usize, what: &str) -> Result<T> {
    s.trim().parse().map_err(|_| Error::Parse {
        line,
        message: format!("invalid {what} {s:?}"),
    })
}

/// Reads raw rows grouped per student in first-appearance order.
fn parse_rows<R: BufRead>(reader: R) -> Result<Vec<RawStudent>> {
    let mut students: Vec<RawStudent> = Vec::new();
    let mut by_id: HashMap<i64, usize> = HashMap::new();
    let mut concept_sets: HashMap<i64, Vec<i64>> = HashMap::new();
    let mut header_seen = false;

    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        let line = line.trim_end_matches('\r');
        if !header_seen {
            let cols: Vec<&str> = line.split(',').map(str::trim).collect();
            if cols.join(",") != CSV_HEADER {
                return Err(Error::Parse {
                    line: line_no,
                    message: format!("expected header {CSV_HEADER:?}"),
                });
            }
            header_seen = true;
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            return Err(Error::Parse {
                line: line_no,
                message: format!("expected 5 fields, found {}", fields.len()),
            });
        }
        let student: i64 = parse_field(fields[0], line_no, "student_id")?;
        let order: i64 = parse_field(fields[1], line_no, "order")?;
        let question: i64 = parse_field(fields[2], line_no, "question_id")?;
        let concepts = fields[3]
            .split('|')
            .map(|c| parse_field::<i64>(c, line_no, "concept id"))
            .collect::<Result<Vec<_>>>()?;
        let response: i64 = parse_field(fields[4], line_no, "response")?;
        if response != 0 && response != 1 {
            return Err(Error::Validation(format!(
                "line {line_no}: response must be 0 or 1, found {response}"
            )));
        }
        match concept_sets.get(&question) {
            Some(known) if *known != concepts => {
                return Err(Error::Validation(format!(
                    "line {line_no}: question {question} has unknown concept set {} (expected {})",
                    fields[3].trim(),
                    known.iter().map(|c| c.to_string()).collect::<Vec<_>>().join("|")
                )));
            }
            Some(_) => {}
            None => {
                concept_sets.insert(question, concepts.clone());
            }
        }
        let slot = *by_id.entry(student).or_insert_with(|| {
            students.push(RawStudent {
                id: student,
                last_order: i64::MIN,
                rows: Vec::new(),
            });
            students.len() - 1
        });
        let st = &mut students[slot];
        if order <= st.last_order {
            return Err(Error::Validation(format!(
                "line {line_no}: order {order} for student {student} is not increasing"
            )));
        }
        st.last_order = order;
        st.rows.push(RawRow {
            question,
            concepts,
            response: response as u8,
        });
    }
    if !header_seen {
        return Err(Error::Parse {
            line: 1,
            message: "missing header".into(),
        });
    }
    Ok(students)
}

fn filter_students(mut students: Vec<RawStudent>, opts: &IngestOptions) -> Vec<RawStudent> {
    students.retain(|s| s.rows.len() >= opts.min_interactions);
    for s in &mut students {
        if s.rows.len() > opts.max_len {
            let drop = s.rows.len() - opts.max_len;
            s.rows.drain(..drop);
        }
    }
    students
}

#[derive(Default)]
struct CatalogBuilder {
    question_labels: Vec<i64>,
    concept_labels: Vec<i64>,
    concepts: Vec<Vec<usize>>,
    q_index: HashMap<i64, usize>,
    c_index: HashMap<i64, usize>,
}

impl CatalogBuilder {
    fn question(&mut self, label: i64, concepts: &[i64]) -> usize {
        if let Some(&q) = self.q_index.get(&label) {
            return q;
        }
        let dense: Vec<usize> = concepts
            .iter()
            .map(|&c| {
                *self.c_index.entry(c).or_insert_with(|| {
                    self.concept_labels.push(c);
                    self.concept_labels.len() - 1
                })
            })
            .collect();
        self.question_labels.push(label);
        self.concepts.push(dense);
        let q = self.question_labels.len() - 1;
        self.q_index.insert(label, q);
        q
    }

    fn finish(self) -> Result<Catalog> {
        Catalog::from_parts(self.question_labels, self.concept_labels, self.concepts)
    }
}

fn build_sequences(
    students: Vec<RawStudent>,
    mut lookup: impl FnMut(&RawRow) -> Result<usize>,
) -> Result<Vec<LearningSequence>> {
    students
        .into_iter()
        .map(|s| {
            let steps = s
                .rows
                .iter()
                .map(|r| Ok(Step::new(lookup(r)?, r.response)))
                .collect::<Result<Vec<_>>>()?;
            Ok(LearningSequence::new(s.id, steps))
        })
        .collect()
}

/// Parses one log and builds a fresh catalog from the retained interactions.
pub fn ingest_log<R: BufRead>(reader: R, opts: &IngestOptions) -> Result<Dataset> {
    Ok(ingest_logs(vec![reader], opts)?.remove(0))
}

/// Parses several logs that share one catalog (e.g. train and validation).
pub fn ingest_logs<R: BufRead>(readers: Vec<R>, opts: &IngestOptions) -> Result<Vec<Dataset>> {
    let parsed = readers
        .into_iter()
        .map(|r| parse_rows(r).map(|s| filter_students(s, opts)))
        .collect::<Result<Vec<_>>>()?;
    let mut builder = CatalogBuilder::default();
    for students in &parsed {
        for s in students {
            for r in &s.rows {
                builder.question(r.question, &r.concepts);
            }
        }
    }
    // rows in later files must agree with the first concept set seen
    let q_index = builder.q_index.clone();
    let catalog = Arc::new(builder.finish()?);
    parsed
        .into_iter()
        .map(|students| {
            let catalog_ref = &catalog;
            let sequences = build_sequences(students, |r| {
                let q = q_index[&r.question];
                check_concepts(catalog_ref, q, r)?;
                Ok(q)
            })?;
            Dataset::new(Arc::clone(&catalog), sequences)
        })
        .collect()
}

/// Parses a log against an existing catalog; unknown questions or concepts
/// are validation errors.
pub fn ingest_log_with_catalog<R: BufRead>(
    reader: R,
    opts: &IngestOptions,
    catalog: Arc<Catalog>,
) -> Result<Dataset> {
    let students = filter_students(parse_rows(reader)?, opts);
    let sequences = build_sequences(students, |r| {
        let q = catalog.question_by_label(r.question).ok_or_else(|| {
            Error::Validation(format!("question {} is not in the catalog", r.question))
        })?;
        check_concepts(&catalog, q, r)?;
        Ok(q)
    })?;
    Dataset::new(catalog, sequences)
}

fn check_concepts(catalog: &Catalog, q: usize, row: &RawRow) -> Result<()> {
    let known = &catalog.questions[q].concept_ids;
    let matches = row.concepts.len() == known.len()
        && row
            .concepts
            .iter()
            .zip(known)
            .all(|(&label, &c)| catalog.concept_by_label(label) == Some(c));
    if matches {
        Ok(())
    } else {
        Err(Error::Validation(format!(
            "question {} listed with unknown concept set",
            row.question
        )))
    }
}

/// Splits by student. Both parts keep the original student order.
pub fn split(dataset: &Dataset, test_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::Split(format!(
            "test fraction must lie in (0, 1), got {test_fraction}"
        )));
    }
    let n = dataset.len();
    if n < 2 {
        return Err(Error::Split(format!("need at least 2 students, have {n}")));
    }
    let n_test = ((test_fraction * n as f64).round() as usize).clamp(1, n - 1);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut test: Vec<usize> = idx[..n_test].to_vec();
    let mut train: Vec<usize> = idx[n_test..].to_vec();
    test.sort_unstable();
    train.sort_unstable();
    Ok((dataset.subset(&train), dataset.subset(&test)))
}

/// A finite categorical distribution over `usize` outcomes.
#[derive(Clone, Debug)]
pub struct Categorical {
    support: Vec<usize>,
    probs: Vec<f64>,
    sampler: WeightedIndex<f64>,
}

impl Categorical {
    /// Empirical frequencies; outcomes are ordered ascending.
    pub fn from_counts(counts: &BTreeMap<usize, u64>) -> Option<Self> {
        let total: u64 = counts.values().sum();
        if total == 0 {
            return None;
        }
        let support: Vec<usize> = counts.keys().copied().collect();
        let probs: Vec<f64> = counts.values().map(|&c| c as f64 / total as f64).collect();
        let sampler = WeightedIndex::new(counts.values().map(|&c| c as f64)).ok()?;
        Some(Self {
            support,
            probs,
            sampler,
        })
    }

    pub fn support(&self) -> &[usize] {
        &self.support
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn prob(&self, x: usize) -> f64 {
        self.support
            .binary_search(&x)
            .map(|i| self.probs[i])
            .unwrap_or(0.0)
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.support.iter().copied().zip(self.probs.iter().copied())
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        self.support[self.sampler.sample(rng)]
    }
}

/// Empirical statistics of a training corpus.
#[derive(Clone, Debug)]
pub struct CorpusStats {
    /// Correct-rate per question; higher means easier.
    pub difficulty: Vec<f64>,
    pub attempts: Vec<u64>,
    pub correct: Vec<u64>,
    pub transition_counts: Vec<BTreeMap<usize, u64>>,
    transitions: Vec<Option<Categorical>>,
    pub initial_dist: Categorical,
    pub length_dist: Categorical,
    by_difficulty: Vec<usize>,
}

impl CorpusStats {
    /// Successor distribution of `q`, or `None` for dead ends.
    pub fn transitions(&self, q: usize) -> Option<&Categorical> {
        self.transitions.get(q).and_then(Option::as_ref)
    }

    pub fn n_questions(&self) -> usize {
        self.difficulty.len()
    }

    /// Questions with strictly higher correct-rate than `q`.
    pub fn easier_than(&self, q: usize) -> &[usize] {
        let d = self.difficulty[q];
        let start = self
            .by_difficulty
            .partition_point(|&x| self.difficulty[x] <= d);
        &self.by_difficulty[start..]
    }

    /// Questions with strictly lower correct-rate than `q`.
    pub fn harder_than(&self, q: usize) -> &[usize] {
        let d = self.difficulty[q];
        let end = self
            .by_difficulty
            .partition_point(|&x| self.difficulty[x] < d);
        &self.by_difficulty[..end]
    }
}

/// Difficulty is `(correct + smoothing/2) / (attempts + smoothing)`, which is
/// the plain correct-rate at zero smoothing and 0.5 for unattempted questions.
/// Transitions count adjacent pairs within each student's sequence.
pub fn compute_stats(dataset: &Dataset, smoothing: f64) -> Result<CorpusStats> {
    if dataset.is_empty() {
        return Err(Error::Contract("statistics need a non-empty dataset".into()));
    }
    if smoothing < 0.0 {
        return Err(Error::Contract("smoothing must be non-negative".into()));
    }
    let n_q = dataset.catalog.n_questions();
    let mut attempts = vec![0u64; n_q];
    let mut correct = vec![0u64; n_q];
    let mut transition_counts = vec![BTreeMap::new(); n_q];
    let mut initial = BTreeMap::new();
    let mut lengths = BTreeMap::new();

    for s in &dataset.sequences {
        *initial.entry(s.steps[0].question).or_insert(0u64) += 1;
        *lengths.entry(s.len()).or_insert(0u64) += 1;
        for st in &s.steps {
            attempts[st.question] += 1;
            correct[st.question] += st.response as u64;
        }
        for pair in s.steps.windows(2) {
            *transition_counts[pair[0].question]
                .entry(pair[1].question)
                .or_insert(0u64) += 1;
        }
    }

    let difficulty: Vec<f64> = attempts
        .iter()
        .zip(&correct)
        .map(|(&a, &c)| {
            let denom = a as f64 + smoothing;
            if denom == 0.0 {
                0.5
            } else {
                (c as f64 + 0.5 * smoothing) / denom
            }
        })
        .collect();
    let transitions = transition_counts.iter().map(Categorical::from_counts).collect();
    let mut by_difficulty: Vec<usize> = (0..n_q).collect();
    by_difficulty.sort_by(|&a, &b| difficulty[a].total_cmp(&difficulty[b]).then(a.cmp(&b)));

    Ok(CorpusStats {
        difficulty,
        attempts,
        correct,
        transition_counts,
        transitions,
        initial_dist: Categorical::from_counts(&initial).expect("non-empty corpus"),
        length_dist: Categorical::from_counts(&lengths).expect("non-empty corpus"),
        by_difficulty,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn csv(rows: &[(i64, i64, i64, &str, u8)]) -> String {
        let mut s = String::from(CSV_HEADER);
        s.push('\n');
        for (st, o, q, c, r) in rows {
            s.push_str(&format!("{st},{o},{q},{c},{r}\n"));
        }
        s
    }

    fn student_rows(student: i64, n: usize) -> Vec<(i64, i64, i64, &'static str, u8)> {
        (0..n)
            .map(|i| (student, i as i64 + 1, 100 + (i % 3) as i64, "5|6", (i % 2) as u8))
            .collect()
    }

    #[test]
    fn twelve_interactions_pass_threshold() {
        let text = csv(&student_rows(1, 12));
        let ds = ingest_log(text.as_bytes(), &IngestOptions::default()).unwrap();
        assert_eq!(ds.len(), 1);
        assert_eq!(ds.sequences[0].len(), 12);
        assert_eq!(ds.catalog.n_questions(), 3);
        assert_eq!(ds.catalog.n_concepts(), 2);
    }

    #[test]
    fn nine_interactions_are_dropped() {
        let text = csv(&student_rows(1, 9));
        let ds = ingest_log(text.as_bytes(), &IngestOptions::default()).unwrap();
        assert!(ds.is_empty());
    }

    #[test]
    fn long_students_keep_last_records() {
        let rows: Vec<_> = (0..250)
            .map(|i| (1, i as i64 + 1, i as i64, "1", (i % 2) as u8))
            .collect();
        let ds = ingest_log(csv(&rows).as_bytes(), &IngestOptions::default()).unwrap();
        let s = &ds.sequences[0];
        assert_eq!(s.len(), 200);
        assert_eq!(ds.catalog.question_label(s.steps[0].question), 50);
        assert_eq!(ds.catalog.question_label(s.steps[199].question), 249);
    }

    #[test]
    fn malformed_row_reports_line() {
        let mut text = csv(&student_rows(1, 12));
        text.push_str("1,13,100\n");
        match ingest_log(text.as_bytes(), &IngestOptions::default()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 14),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn non_binary_response_is_validation_error() {
        let text = csv(&[(1, 1, 1, "1", 2)]);
        let err = ingest_log(text.as_bytes(), &IngestOptions::default()).unwrap_err();
        assert!(matches!(err, Error::Validation(_)), "{err}");
    }

    #[test]
    fn inconsistent_concepts_are_rejected() {
        let text = csv(&[(1, 1, 7, "1", 1), (1, 2, 7, "2", 0)]);
        let err = ingest_log(text.as_bytes(), &IngestOptions::default()).unwrap_err();
        assert!(matches!(err, Error::Validation(_)), "{err}");
    }

    #[test]
    fn unknown_concept_against_catalog() {
        let base = ingest_log(csv(&student_rows(1, 12)).as_bytes(), &IngestOptions::default())
            .unwrap();
        let other: Vec<_> = (0..12).map(|i| (2, i + 1, 100, "5|9", 1)).collect();
        let err = ingest_log_with_catalog(
            csv(&other).as_bytes(),
            &IngestOptions::default(),
            Arc::clone(&base.catalog),
        )
        .unwrap_err();
        assert!(matches!(err, Error::Validation(_)), "{err}");
    }

    #[test]
    fn order_must_increase() {
        let text = csv(&[(1, 2, 7, "1", 1), (1, 2, 8, "1", 0)]);
        assert!(ingest_log(text.as_bytes(), &IngestOptions::default()).is_err());
    }

    #[test]
    fn header_is_required_and_crlf_accepted() {
        let err = ingest_log("1,1,1,1,1\n".as_bytes(), &IngestOptions::default()).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
        let mut text = csv(&student_rows(3, 10)).replace('\n', "\r\n");
        text.truncate(text.len() - 2);
        let ds = ingest_log(text.as_bytes(), &IngestOptions::default()).unwrap();
        assert_eq!(ds.sequences[0].len(), 10);
    }

    #[test]
    fn interleaved_students_grouped_in_file_order() {
        let opts = IngestOptions {
            min_interactions: 1,
            max_len: 200,
        };
        let text = csv(&[(9, 1, 1, "1", 1), (4, 1, 2, "1", 0), (9, 2, 3, "2", 1)]);
        let ds = ingest_log(text.as_bytes(), &opts).unwrap();
        assert_eq!(ds.sequences[0].student_id, 9);
        assert_eq!(ds.sequences[0].len(), 2);
        assert_eq!(ds.sequences[1].student_id, 4);
    }

    fn toy(n_students: usize) -> Dataset {
        let rows: Vec<_> = (0..n_students as i64)
            .flat_map(|s| (0..10).map(move |i| (s, i + 1, (s + i) % 4, "1", ((s + i) % 2) as u8)))
            .collect();
        ingest_log(csv(&rows).as_bytes(), &IngestOptions::default()).unwrap()
    }

    #[test]
    fn split_cardinality_and_determinism() {
        let ds = toy(10);
        let (tr, te) = split(&ds, 0.2, 7).unwrap();
        assert_eq!((tr.len(), te.len()), (8, 2));
        let (tr2, te2) = split(&ds, 0.2, 7).unwrap();
        assert_eq!(tr, tr2);
        assert_eq!(te, te2);
        let big = toy(500);
        let (tr, te) = split(&big, 0.2, 1).unwrap();
        assert_eq!((tr.len(), te.len()), (400, 100));
    }

    #[test]
    fn split_needs_two_students() {
        assert!(matches!(split(&toy(1), 0.2, 0), Err(Error::Split(_))));
        assert!(matches!(split(&toy(5), 1.0, 0), Err(Error::Split(_))));
    }

    fn manual(seqs: Vec<Vec<(usize, u8)>>, n_q: usize) -> Dataset {
        let catalog = Catalog::from_parts(
            (0..n_q as i64).collect(),
            vec![0],
            vec![vec![0]; n_q],
        )
        .unwrap();
        let sequences = seqs
            .into_iter()
            .enumerate()
            .map(|(i, s)| {
                LearningSequence::new(i as i64, s.into_iter().map(|(q, r)| Step::new(q, r)).collect())
            })
            .collect();
        Dataset::new(Arc::new(catalog), sequences).unwrap()
    }

    #[test]
    fn difficulty_is_correct_rate_with_neutral_fallback() {
        let ds = manual(vec![vec![(0, 1), (0, 1), (0, 0), (0, 1), (0, 0)]], 2);
        let st = compute_stats(&ds, 0.0).unwrap();
        assert_eq!(st.difficulty[0], 0.6);
        assert_eq!(st.difficulty[1], 0.5);
    }

    #[test]
    fn alternating_sequence_transitions() {
        let ds = manual(vec![vec![(0, 1), (1, 0), (0, 1), (1, 1)]], 2);
        let st = compute_stats(&ds, 0.0).unwrap();
        assert_eq!(st.transitions(0).unwrap().prob(1), 1.0);
        assert_eq!(st.transitions(1).unwrap().prob(0), 1.0);
        assert_eq!(st.initial_dist.prob(0), 1.0);
        assert_eq!(st.length_dist.prob(4), 1.0);
    }

    #[test]
    fn easier_and_harder_partitions() {
        // difficulties: q0 = 1.0, q1 = 0.0, q2 = 0.5
        let ds = manual(vec![vec![(0, 1), (1, 0), (2, 1), (2, 0)]], 3);
        let st = compute_stats(&ds, 0.0).unwrap();
        assert_eq!(st.easier_than(2), &[0]);
        assert_eq!(st.harder_than(2), &[1]);
        assert!(st.easier_than(0).is_empty());
        assert!(st.harder_than(1).is_empty());
    }

    #[test]
    fn round_trip_through_csv() {
        let ds = toy(6);
        let again = ingest_log(ds.to_csv_string().as_bytes(), &IngestOptions::default()).unwrap();
        assert_eq!(ds, again);
    }

    #[test]
    fn shared_catalog_across_files() {
        let a = csv(&student_rows(1, 10));
        let b = csv(&(0..10).map(|i| (2, i + 1, 500, "77", 1)).collect::<Vec<_>>());
        let sets = ingest_logs(vec![a.as_bytes(), b.as_bytes()], &IngestOptions::default()).unwrap();
        assert!(Arc::ptr_eq(&sets[0].catalog, &sets[1].catalog));
        assert_eq!(sets[0].catalog.n_questions(), 4);
    }
}
