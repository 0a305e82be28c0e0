//! Response datasets: ingestion, canonical emission, cross-validation folds,
//! per-student training/meta partitions and synthetic 1PL data.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// Students with fewer (deduplicated) interactions are dropped on ingest.
pub const MIN_INTERACTIONS: usize = 20;

/// Fraction of a student's questions placed in the training pool.
pub const DEFAULT_TRAIN_RATIO: f64 = 0.8;

pub const NUM_FOLDS: usize = 5;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResponseRecord {
    pub student_id: String,
    pub question: usize,
    pub correct: bool,
}

/// One student's responses, sorted by dense question index.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StudentResponses {
    pub id: String,
    pub responses: Vec<(usize, bool)>,
}

impl StudentResponses {
    pub fn len(&self) -> usize {
        self.responses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.responses.is_empty()
    }

    /// Looks up the recorded answer to `question`, if any.
    pub fn answer(&self, question: usize) -> Option<bool> {
        self.responses
            .binary_search_by_key(&question, |&(q, _)| q)
            .ok()
            .map(|i| self.responses[i].1)
    }

    pub fn questions(&self) -> impl Iterator<Item = usize> + '_ {
        self.responses.iter().map(|&(q, _)| q)
    }
}

/// Immutable collection of student responses with dense question indices.
///
/// Students are stored in canonical id order; a student's position in
/// [`Dataset::students`] is its index everywhere else in the crate.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dataset {
    students: Vec<StudentResponses>,
    question_ids: Vec<String>,
}

/// Orders identifiers numerically when both parse as integers, otherwise
/// lexicographically (integers first).
fn id_order(a: &str, b: &str) -> Ordering {
    match (a.parse::<i64>(), b.parse::<i64>()) {
        (Ok(x), Ok(y)) => x.cmp(&y),
        (Ok(_), Err(_)) => Ordering::Less,
        (Err(_), Ok(_)) => Ordering::Greater,
        (Err(_), Err(_)) => a.cmp(b),
    }
}

impl Dataset {
    /// Builds a dataset from per-student answers keyed by external question
    /// id. Question indices are assigned densely in canonical id order.
    ///
    /// No interaction-count filter is applied here; see [`ingest_csv`].
    pub fn from_external(students: Vec<(String, Vec<(String, bool)>)>) -> Result<Self> {
        let mut qids: Vec<String> = students
            .iter()
            .flat_map(|(_, rs)| rs.iter().map(|(q, _)| q.clone()))
            .collect::<HashSet<_>>()
            .into_iter()
            .collect();
        qids.sort_by(|a, b| id_order(a, b));
        let index: HashMap<&str, usize> = qids
            .iter()
            .enumerate()
            .map(|(i, q)| (q.as_str(), i))
            .collect();

        let mut out = Vec::with_capacity(students.len());
        let mut seen_students = HashSet::new();
        for (id, rs) in students {
            if !seen_students.insert(id.clone()) {
                return Err(Error::Config(format!("duplicate student id {id}")));
            }
            let mut responses: Vec<(usize, bool)> =
                rs.iter().map(|(q, y)| (index[q.as_str()], *y)).collect();
            responses.sort_unstable_by_key(|&(q, _)| q);
            if responses.windows(2).any(|w| w[0].0 == w[1].0) {
                return Err(Error::Config(format!(
                    "student {id} has more than one record for a question"
                )));
            }
            out.push(StudentResponses { id, responses });
        }
        out.sort_by(|a, b| id_order(&a.id, &b.id));
        if out.is_empty() || qids.is_empty() {
            return Err(Error::DatasetEmpty);
        }
        Ok(Self {
            students: out,
            question_ids: qids,
        })
    }

    pub fn num_students(&self) -> usize {
        self.students.len()
    }

    pub fn num_questions(&self) -> usize {
        self.question_ids.len()
    }

    pub fn num_records(&self) -> usize {
        self.students.iter().map(StudentResponses::len).sum()
    }

    pub fn students(&self) -> &[StudentResponses] {
        &self.students
    }

    pub fn student(&self, index: usize) -> &StudentResponses {
        &self.students[index]
    }

    /// External id of each dense question index.
    pub fn question_ids(&self) -> &[String] {
        &self.question_ids
    }

    pub fn question_index(&self, external: &str) -> Option<usize> {
        self.question_ids.iter().position(|q| q == external)
    }

    pub fn records(&self) -> impl Iterator<Item = ResponseRecord> + '_ {
        self.students.iter().flat_map(|s| {
            s.responses.iter().map(move |&(q, y)| ResponseRecord {
                student_id: s.id.clone(),
                question: q,
                correct: y,
            })
        })
    }

    /// Restricts the dataset to the given student indices, keeping the
    /// question index space unchanged.
    pub fn subset(&self, students: &[usize]) -> Dataset {
        let mut picked: Vec<StudentResponses> =
            students.iter().map(|&i| self.students[i].clone()).collect();
        picked.sort_by(|a, b| id_order(&a.id, &b.id));
        Dataset {
            students: picked,
            question_ids: self.question_ids.clone(),
        }
    }

    /// Writes the canonical CSV: header plus rows sorted by
    /// (student_id, question index).
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["student_id", "question_id", "correct"])?;
        for s in &self.students {
            for &(q, y) in &s.responses {
                wtr.write_record([
                    s.id.as_str(),
                    self.question_ids[q].as_str(),
                    if y { "1" } else { "0" },
                ])?;
            }
        }
        wtr.flush().map_err(|e| Error::io("<csv writer>", e))?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(BufWriter::new(f))
    }
}

/// Reads a response CSV with header `student_id,question_id,correct[,timestamp]`.
///
/// Duplicate (student, question) rows keep the first occurrence in file
/// order. Students left with fewer than [`MIN_INTERACTIONS`] records after
/// deduplication are dropped, then question ids are remapped densely.
pub fn ingest_csv(path: &Path) -> Result<Dataset> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    ingest_reader(f, MIN_INTERACTIONS)
}

pub fn ingest_reader<R: Read>(reader: R, min_interactions: usize) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);

    let header = rdr.headers().map_err(|e| Error::Ingest {
        line: 1,
        message: e.to_string(),
    })?;
    let expected = ["student_id", "question_id", "correct"];
    let ok = header.len() >= 3
        && header.len() <= 4
        && header.iter().take(3).zip(expected).all(|(h, e)| h == e)
        && (header.len() == 3 || header.get(3) == Some("timestamp"));
    if !ok {
        return Err(Error::Ingest {
            line: 1,
            message: format!(
                "expected header student_id,question_id,correct[,timestamp], found {:?}",
                header.iter().collect::<Vec<_>>()
            ),
        });
    }

    let mut order: Vec<String> = Vec::new();
    let mut per_student: HashMap<String, (HashSet<String>, Vec<(String, bool)>)> = HashMap::new();
    for row in rdr.records() {
        let row = row.map_err(|e| Error::Ingest {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = row.position().map_or(0, |p| p.line());
        if row.len() < 3 || row.len() > 4 {
            return Err(Error::Ingest {
                line,
                message: format!("expected 3 or 4 fields, found {}", row.len()),
            });
        }
        let student = &row[0];
        let question = &row[1];
        if student.is_empty() || question.is_empty() {
            return Err(Error::Ingest {
                line,
                message: "empty student or question id".into(),
            });
        }
        let correct = match &row[2] {
            "0" => false,
            "1" => true,
            other => {
                return Err(Error::Ingest {
                    line,
                    message: format!("correct must be 0 or 1, found {other:?}"),
                })
            }
        };
        let entry = per_student.entry(student.to_string()).or_insert_with(|| {
            order.push(student.to_string());
            (HashSet::new(), Vec::new())
        });
        if entry.0.insert(question.to_string()) {
            entry.1.push((question.to_string(), correct));
        }
    }

    let kept: Vec<(String, Vec<(String, bool)>)> = order
        .into_iter()
        .filter_map(|id| {
            let (_, rs) = per_student.remove(&id).expect("student recorded");
            (rs.len() >= min_interactions).then_some((id, rs))
        })
        .collect();
    if kept.is_empty() {
        return Err(Error::DatasetEmpty);
    }
    Dataset::from_external(kept)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldSplit {
    pub fold_index: usize,
    pub train_students: Vec<usize>,
    pub val_students: Vec<usize>,
    pub test_students: Vec<usize>,
}

/// Shuffles students with `seed` and cuts them into five equal chunks. Fold
/// `f` tests on chunk `f`, validates on chunk `f + 1` and trains on the rest.
pub fn make_folds(dataset: &Dataset, seed: u64) -> Result<Vec<FoldSplit>> {
    let n = dataset.num_students();
    if n < NUM_FOLDS {
        return Err(Error::InsufficientStudents {
            needed: NUM_FOLDS,
            found: n,
        });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::stream(seed, &[0xF01D]));
    let bounds: Vec<usize> = (0..=NUM_FOLDS).map(|k| (k * n + NUM_FOLDS / 2) / NUM_FOLDS).collect();
    let chunk = |k: usize| -> Vec<usize> {
        let mut c = order[bounds[k]..bounds[k + 1]].to_vec();
        c.sort_unstable();
        c
    };
    Ok((0..NUM_FOLDS)
        .map(|f| {
            let test = chunk(f);
            let val = chunk((f + 1) % NUM_FOLDS);
            let mut train: Vec<usize> = (0..NUM_FOLDS)
                .filter(|&k| k != f && k != (f + 1) % NUM_FOLDS)
                .flat_map(chunk)
                .collect();
            train.sort_unstable();
            FoldSplit {
                fold_index: f,
                train_students: train,
                val_students: val,
                test_students: test,
            }
        })
        .collect())
}

/// Disjoint split of one student's answered questions into the training
/// pool (selectable) and the meta set (held out for scoring).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StudentPartition {
    pub training: Vec<usize>,
    pub meta: Vec<usize>,
}

pub fn partition_student<R: Rng + ?Sized>(
    student: &StudentResponses,
    ratio: f64,
    rng: &mut R,
) -> Result<StudentPartition> {
    let m = student.len();
    if m < 2 {
        return Err(Error::Partition(m));
    }
    if !(0.0..=1.0).contains(&ratio) {
        return Err(Error::Config(format!("partition ratio {ratio} outside [0, 1]")));
    }
    let n_train = ((ratio * m as f64 + 1e-9).floor() as usize).clamp(1, m - 1);
    let mut qs: Vec<usize> = student.questions().collect();
    qs.shuffle(rng);
    let mut training = qs[..n_train].to_vec();
    let mut meta = qs[n_train..].to_vec();
    training.sort_unstable();
    meta.sort_unstable();
    Ok(StudentPartition { training, meta })
}

/// Partition for a student derived from its own stream, so adding or
/// removing other students never perturbs it.
pub fn partition_for(
    dataset: &Dataset,
    student: usize,
    seed: u64,
    tags: &[u64],
) -> Result<StudentPartition> {
    let s = dataset.student(student);
    let mut all_tags = vec![rng::tag_str(&s.id)];
    all_tags.extend_from_slice(tags);
    let mut r = rng::stream(seed, &all_tags);
    partition_student(s, DEFAULT_TRAIN_RATIO, &mut r)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StudentEvalPartitions {
    pub student: usize,
    pub student_id: String,
    pub repetitions: Vec<StudentPartition>,
}

/// Fixed training/meta partitions for evaluation students, shared by every
/// model evaluated on them.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalPartitionSet {
    pub seed: u64,
    pub repetitions: usize,
    pub students: Vec<StudentEvalPartitions>,
}

const EVAL_TAG: u64 = 0xE7A1;

pub fn make_eval_partitions(
    dataset: &Dataset,
    students: &[usize],
    repetitions: usize,
    seed: u64,
) -> Result<EvalPartitionSet> {
    if repetitions == 0 {
        return Err(Error::Config("repetition count must be at least 1".into()));
    }
    let mut sorted = students.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    let students = sorted
        .into_iter()
        .map(|s| {
            let reps = (0..repetitions)
                .map(|r| partition_for(dataset, s, seed, &[EVAL_TAG, r as u64]))
                .collect::<Result<Vec<_>>>()?;
            Ok(StudentEvalPartitions {
                student: s,
                student_id: dataset.student(s).id.clone(),
                repetitions: reps,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalPartitionSet {
        seed,
        repetitions,
        students,
    })
}

impl EvalPartitionSet {
    pub fn save_json(&self, path: &Path) -> Result<()> {
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        serde_json::to_writer(BufWriter::new(f), self)?;
        Ok(())
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let f = File::open(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_reader(std::io::BufReader::new(f))?)
    }
}

/// Ground truth returned alongside a synthetic dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticTruth {
    pub abilities: Vec<f64>,
    pub difficulties: Vec<f64>,
}

/// Draws abilities and difficulties from N(0, 1) and a full response matrix
/// from the 1PL model. Student ids are `0..N`, question ids `0..Q`.
pub fn generate_synthetic(
    num_students: usize,
    num_questions: usize,
    seed: u64,
) -> Result<(Dataset, SyntheticTruth)> {
    if num_students == 0 || num_questions == 0 {
        return Err(Error::Config("synthetic data needs N, Q >= 1".into()));
    }
    let mut r = rng::stream(seed, &[0x5EED]);
    let abilities: Vec<f64> = (0..num_students).map(|_| StandardNormal.sample(&mut r)).collect();
    let difficulties: Vec<f64> = (0..num_questions).map(|_| StandardNormal.sample(&mut r)).collect();
    let dataset = synthetic_responses(&abilities, &difficulties, &mut r)?;
    Ok((
        dataset,
        SyntheticTruth {
            abilities,
            difficulties,
        },
    ))
}

/// Samples a full response matrix under the 1PL model for given parameters.
pub fn synthetic_responses<R: Rng + ?Sized>(
    abilities: &[f64],
    difficulties: &[f64],
    rng: &mut R,
) -> Result<Dataset> {
    let students = abilities
        .iter()
        .enumerate()
        .map(|(i, &theta)| {
            let rs = difficulties
                .iter()
                .enumerate()
                .map(|(j, &b)| {
                    let p = 1.0 / (1.0 + (-(theta - b)).exp());
                    (j.to_string(), rng.random::<f64>() < p)
                })
                .collect();
            (i.to_string(), rs)
        })
        .collect();
    Dataset::from_external(students)
}

/// Fraction of students who answered each question.
pub fn question_frequencies(dataset: &Dataset) -> Vec<f64> {
    let mut counts = vec![0usize; dataset.num_questions()];
    for s in dataset.students() {
        for q in s.questions() {
            counts[q] += 1;
        }
    }
    let n = dataset.num_students() as f64;
    counts.into_iter().map(|c| c as f64 / n).collect()
}

/// Per-question (correct, total) counts.
pub fn question_counts(dataset: &Dataset) -> BTreeMap<usize, (usize, usize)> {
    let mut out = BTreeMap::new();
    for s in dataset.students() {
        for &(q, y) in &s.responses {
            let e = out.entry(q).or_insert((0, 0));
            e.0 += usize::from(y);
            e.1 += 1;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn csv_of(rows: &[(&str, &str, u8)]) -> String {
        let mut s = String::from("student_id,question_id,correct\n");
        for (a, b, c) in rows {
            s.push_str(&format!("{a},{b},{c}\n"));
        }
        s
    }

    #[test]
    fn nineteen_questions_is_filtered_to_empty() {
        let rows: Vec<(String, String, u8)> =
            (0..19).map(|q| ("a".to_string(), q.to_string(), 1)).collect();
        let refs: Vec<(&str, &str, u8)> =
            rows.iter().map(|(a, b, c)| (a.as_str(), b.as_str(), *c)).collect();
        let err = ingest_reader(csv_of(&refs).as_bytes(), MIN_INTERACTIONS).unwrap_err();
        assert!(matches!(err, Error::DatasetEmpty));
    }

    #[test]
    fn duplicates_keep_first_occurrence() {
        // 25 rows; rows 3 and 7 (1-based) repeat question 5 with different answers.
        let mut rows: Vec<(String, String, u8)> = Vec::new();
        let mut next_q = 100;
        for r in 1..=25 {
            match r {
                3 => rows.push(("a".into(), "5".into(), 1)),
                7 => rows.push(("a".into(), "5".into(), 0)),
                _ => {
                    rows.push(("a".into(), next_q.to_string(), (r % 2) as u8));
                    next_q += 1;
                }
            }
        }
        let refs: Vec<(&str, &str, u8)> =
            rows.iter().map(|(a, b, c)| (a.as_str(), b.as_str(), *c)).collect();
        let ds = ingest_reader(csv_of(&refs).as_bytes(), MIN_INTERACTIONS).unwrap();
        assert_eq!(ds.num_records(), 24);
        let q5 = ds.question_index("5").unwrap();
        assert_eq!(ds.student(0).answer(q5), Some(true));
    }

    #[test]
    fn three_full_students_are_kept() {
        let mut rows = Vec::new();
        for s in ["x", "y", "z"] {
            for q in 0..20 {
                rows.push((s.to_string(), (q + if s == "z" { 5 } else { 0 }).to_string(), 1u8));
            }
        }
        let refs: Vec<(&str, &str, u8)> =
            rows.iter().map(|(a, b, c)| (a.as_str(), b.as_str(), *c)).collect();
        let ds = ingest_reader(csv_of(&refs).as_bytes(), MIN_INTERACTIONS).unwrap();
        assert_eq!(ds.num_students(), 3);
        assert_eq!(ds.num_questions(), 25);
    }

    #[test]
    fn malformed_row_reports_line() {
        let text = "student_id,question_id,correct\na,1,1\na,2,maybe\n";
        match ingest_reader(text.as_bytes(), 1).unwrap_err() {
            Error::Ingest { line, .. } => assert_eq!(line, 3),
            e => panic!("unexpected {e}"),
        }
        let bad_header = "sid,qid,y\n";
        assert!(matches!(
            ingest_reader(bad_header.as_bytes(), 1).unwrap_err(),
            Error::Ingest { line: 1, .. }
        ));
    }

    #[test]
    fn timestamp_column_is_accepted() {
        let text = "student_id,question_id,correct,timestamp\na,1,1,10\na,2,0,11\n";
        let ds = ingest_reader(text.as_bytes(), 2).unwrap();
        assert_eq!(ds.num_records(), 2);
    }

    #[test]
    fn folds_split_ten_students() {
        let (ds, _) = generate_synthetic(10, 3, 1).unwrap();
        let folds = make_folds(&ds, 1).unwrap();
        assert_eq!(folds.len(), 5);
        for f in &folds {
            assert_eq!(f.test_students.len(), 2);
            assert_eq!(f.val_students.len(), 2);
            assert_eq!(f.train_students.len(), 6);
        }
        assert_eq!(folds, make_folds(&ds, 1).unwrap());
        let mut all: Vec<usize> = folds.iter().flat_map(|f| f.test_students.clone()).collect();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn folds_need_five_students() {
        let (ds, _) = generate_synthetic(4, 3, 1).unwrap();
        assert!(matches!(
            make_folds(&ds, 1).unwrap_err(),
            Error::InsufficientStudents { found: 4, .. }
        ));
    }

    #[test]
    fn partition_sizes() {
        let s = StudentResponses {
            id: "a".into(),
            responses: (0..20).map(|q| (q, q % 3 == 0)).collect(),
        };
        let p = partition_student(&s, 0.8, &mut rng::stream(1, &[])).unwrap();
        assert_eq!((p.training.len(), p.meta.len()), (16, 4));
        let p2 = partition_student(&s, 0.8, &mut rng::stream(1, &[])).unwrap();
        assert_eq!(p, p2);

        let two = StudentResponses {
            id: "b".into(),
            responses: vec![(0, true), (1, false)],
        };
        let p = partition_student(&two, 0.8, &mut rng::stream(1, &[])).unwrap();
        assert_eq!((p.training.len(), p.meta.len()), (1, 1));

        let one = StudentResponses {
            id: "c".into(),
            responses: vec![(0, true)],
        };
        assert!(matches!(
            partition_student(&one, 0.8, &mut rng::stream(1, &[])),
            Err(Error::Partition(1))
        ));
    }

    #[test]
    fn eval_partitions_are_stable() {
        let (ds, _) = generate_synthetic(30, 25, 3).unwrap();
        let students: Vec<usize> = (0..10).collect();
        let a = make_eval_partitions(&ds, &students, 5, 9).unwrap();
        let b = make_eval_partitions(&ds, &students, 5, 9).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        assert!(a.students.iter().all(|s| s.repetitions.len() == 5));
        let one = make_eval_partitions(&ds, &students, 1, 9).unwrap();
        assert!(one.students.iter().all(|s| s.repetitions.len() == 1));
        // Adding students leaves existing partitions untouched.
        let more: Vec<usize> = (0..20).collect();
        let c = make_eval_partitions(&ds, &more, 5, 9).unwrap();
        assert_eq!(a.students[..], c.students[..10]);
        assert!(make_eval_partitions(&ds, &students, 0, 9).is_err());
    }

    #[test]
    fn synthetic_shape_and_determinism() {
        let (ds, truth) = generate_synthetic(500, 50, 4).unwrap();
        assert_eq!(ds.num_records(), 25_000);
        assert_eq!(truth.abilities.len(), 500);
        let (ds2, _) = generate_synthetic(500, 50, 4).unwrap();
        assert_eq!(ds, ds2);
    }

    #[test]
    fn saturated_ability_answers_correctly() {
        let abilities = vec![10.0; 2000];
        let mut r = rng::stream(5, &[]);
        let ds = synthetic_responses(&abilities, &[0.0], &mut r).unwrap();
        let rate = ds.records().filter(|r| r.correct).count() as f64 / 2000.0;
        assert!(rate > 0.999);
    }

    #[test]
    fn synthetic_cell_rate_matches_model() {
        // Monte Carlo over regenerations of a single cell.
        let (theta, b) = (0.7, -0.3);
        let p = 1.0 / (1.0 + (-(theta - b) as f64).exp());
        let reps = 20_000;
        let mut r = rng::stream(11, &[]);
        let mut hits = 0usize;
        for _ in 0..reps {
            let ds = synthetic_responses(&[theta], &[b], &mut r).unwrap();
            hits += usize::from(ds.student(0).responses[0].1);
        }
        let rate = hits as f64 / reps as f64;
        let se = (p * (1.0 - p) / reps as f64).sqrt();
        assert!((rate - p).abs() < 3.0 * se, "rate {rate} vs {p}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn canonical_csv_is_a_fixed_point(n in 1usize..8, q in 20usize..26, seed in 0u64..1000) {
            let (ds, _) = generate_synthetic(n, q, seed).unwrap();
            let mut buf = Vec::new();
            ds.write_csv(&mut buf).unwrap();
            let again = ingest_reader(buf.as_slice(), MIN_INTERACTIONS).unwrap();
            prop_assert_eq!(&again, &ds);
        }

        #[test]
        fn partitions_are_disjoint_subsets(m in 2usize..60, seed in 0u64..1000) {
            let s = StudentResponses { id: "p".into(), responses: (0..m).map(|q| (q * 2, true)).collect() };
            let p = partition_student(&s, 0.8, &mut rng::stream(seed, &[])).unwrap();
            let tr: HashSet<usize> = p.training.iter().copied().collect();
            prop_assert!(p.meta.iter().all(|q| !tr.contains(q)));
            prop_assert_eq!(p.training.len() + p.meta.len(), m);
            prop_assert!(!p.training.is_empty() && !p.meta.is_empty());
            prop_assert!(p.training.iter().chain(&p.meta).all(|q| s.answer(*q).is_some()));
        }

        #[test]
        fn fold_test_sets_partition_students(n in 5usize..80, seed in 0u64..1000) {
            let (ds, _) = generate_synthetic(n, 2, 0).unwrap();
            let folds = make_folds(&ds, seed).unwrap();
            let mut all: Vec<usize> = folds.iter().flat_map(|f| f.test_students.clone()).collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
            for f in &folds {
                let mut u: Vec<usize> = f.train_students.iter().chain(&f.val_students).chain(&f.test_students).copied().collect();
                u.sort_unstable();
                prop_assert_eq!(u, (0..n).collect::<Vec<_>>());
            }
        }
    }
}
