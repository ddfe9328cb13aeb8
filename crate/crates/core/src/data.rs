//! Long-format panel data: ingestion, listwise deletion and canonical
//! relabeling of subjects, occasions and response categories.
//!
//! Canonical indices are zero-based throughout the library. Subject `i`,
//! occasion `t` and category `j` correspond to the one-based labels
//! `i + 1`, `t + 1`, `j + 1` used in printed output.

use std::cmp::Ordering;
use std::collections::HashMap;
use std::io::Read;

use crate::error::{Error, Result};

/// Cell values treated as missing.
pub const MISSING_TOKENS: [&str; 2] = ["", "NA"];

/// One row of long-format input before canonicalization. `None` marks a
/// missing value; rows with any missing field are dropped on load.
#[derive(Debug, Clone, PartialEq)]
pub struct RawRow {
    pub subject: Option<String>,
    pub time: Option<String>,
    pub response: Option<String>,
    pub covariates: Vec<Option<f64>>,
}

impl RawRow {
    fn is_complete(&self) -> bool {
        self.subject.is_some()
            && self.time.is_some()
            && self.response.is_some()
            && self.covariates.iter().all(|c| c.is_some_and(f64::is_finite))
    }
}

/// Bijection between observed labels and canonical indices, ordered
/// ascending. If every label parses as a number the order is numeric,
/// otherwise lexicographic.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelMap {
    labels: Vec<String>,
    numeric: bool,
    index: HashMap<LabelKey, usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
enum LabelKey {
    Number(u64),
    Text(String),
}

fn parse_number(s: &str) -> Option<f64> {
    s.trim().parse::<f64>().ok().filter(|v| v.is_finite())
}

fn number_key(v: f64) -> LabelKey {
    // fold -0.0 onto 0.0
    LabelKey::Number(if v == 0.0 { 0f64.to_bits() } else { v.to_bits() })
}

impl LabelMap {
    pub fn from_labels<'a, I: IntoIterator<Item = &'a str>>(labels: I) -> Self {
        let raw: Vec<&str> = labels.into_iter().collect();
        let numeric = !raw.is_empty() && raw.iter().all(|s| parse_number(s).is_some());
        let mut distinct: Vec<(LabelKey, String)> = Vec::new();
        let mut seen = HashMap::new();
        for s in raw {
            let key = Self::key_for(s, numeric);
            if seen.insert(key.clone(), ()).is_none() {
                distinct.push((key, s.to_string()));
            }
        }
        if numeric {
            distinct.sort_by(|a, b| {
                let x = parse_number(&a.1).unwrap();
                let y = parse_number(&b.1).unwrap();
                x.partial_cmp(&y).unwrap_or(Ordering::Equal)
            });
        } else {
            distinct.sort_by(|a, b| a.1.cmp(&b.1));
        }
        let index = distinct
            .iter()
            .enumerate()
            .map(|(i, (k, _))| (k.clone(), i))
            .collect();
        LabelMap {
            labels: distinct.into_iter().map(|(_, s)| s).collect(),
            numeric,
            index,
        }
    }

    fn key_for(s: &str, numeric: bool) -> LabelKey {
        if numeric {
            number_key(parse_number(s).expect("numeric label map"))
        } else {
            LabelKey::Text(s.to_string())
        }
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        if self.numeric {
            parse_number(label).and_then(|v| self.index.get(&number_key(v)).copied())
        } else {
            self.index.get(&LabelKey::Text(label.to_string())).copied()
        }
    }

    pub fn label(&self, index: usize) -> &str {
        &self.labels[index]
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn is_numeric(&self) -> bool {
        self.numeric
    }
}

/// A retained observation with canonical indices.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub subject: usize,
    pub time: usize,
    pub category: usize,
    pub covariates: Vec<f64>,
}

/// Validated long-format dataset. Observations are sorted by subject, then
/// by occasion.
#[derive(Debug, Clone, PartialEq)]
pub struct LongDataset {
    observations: Vec<Observation>,
    covariate_names: Vec<String>,
    subject_map: LabelMap,
    time_map: LabelMap,
    category_map: LabelMap,
    /// `block_starts[i]..block_starts[i + 1]` indexes subject `i`'s rows.
    block_starts: Vec<usize>,
}

impl LongDataset {
    /// Canonicalize raw rows. Incomplete rows are dropped one occasion at a
    /// time; the subject keeps its remaining occasions.
    pub fn from_rows(rows: Vec<RawRow>, covariate_names: Vec<String>) -> Result<Self> {
        for r in &rows {
            if r.covariates.len() != covariate_names.len() {
                return Err(Error::DimensionMismatch(format!(
                    "row has {} covariates, expected {}",
                    r.covariates.len(),
                    covariate_names.len()
                )));
            }
        }
        let rows: Vec<RawRow> = rows.into_iter().filter(RawRow::is_complete).collect();
        if rows.is_empty() {
            return Err(Error::EmptyData);
        }
        let subject_map = LabelMap::from_labels(rows.iter().map(|r| r.subject.as_deref().unwrap()));
        let time_map = LabelMap::from_labels(rows.iter().map(|r| r.time.as_deref().unwrap()));
        let category_map =
            LabelMap::from_labels(rows.iter().map(|r| r.response.as_deref().unwrap()));
        if category_map.len() < 3 {
            return Err(Error::InvalidResponseScale {
                found: category_map.len(),
            });
        }

        let mut observations: Vec<Observation> = rows
            .into_iter()
            .map(|r| Observation {
                subject: subject_map.index_of(r.subject.as_deref().unwrap()).unwrap(),
                time: time_map.index_of(r.time.as_deref().unwrap()).unwrap(),
                category: category_map.index_of(r.response.as_deref().unwrap()).unwrap(),
                covariates: r.covariates.into_iter().map(Option::unwrap).collect(),
            })
            .collect();
        observations.sort_by_key(|o| (o.subject, o.time));
        for w in observations.windows(2) {
            if w[0].subject == w[1].subject && w[0].time == w[1].time {
                return Err(Error::DuplicateObservation {
                    subject: subject_map.label(w[0].subject).to_string(),
                    time: time_map.label(w[0].time).to_string(),
                });
            }
        }

        let mut block_starts = Vec::with_capacity(subject_map.len() + 1);
        for (k, o) in observations.iter().enumerate() {
            if block_starts.len() == o.subject {
                block_starts.push(k);
            }
        }
        block_starts.push(observations.len());

        Ok(LongDataset {
            observations,
            covariate_names,
            subject_map,
            time_map,
            category_map,
            block_starts,
        })
    }

    pub fn n_subjects(&self) -> usize {
        self.subject_map.len()
    }

    pub fn n_times(&self) -> usize {
        self.time_map.len()
    }

    pub fn n_categories(&self) -> usize {
        self.category_map.len()
    }

    pub fn n_covariates(&self) -> usize {
        self.covariate_names.len()
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn observations(&self) -> &[Observation] {
        &self.observations
    }

    pub fn subject_map(&self) -> &LabelMap {
        &self.subject_map
    }

    pub fn time_map(&self) -> &LabelMap {
        &self.time_map
    }

    pub fn category_map(&self) -> &LabelMap {
        &self.category_map
    }

    /// Per-subject blocks in subject order, each sorted by occasion.
    pub fn subject_blocks(&self) -> Vec<SubjectBlock<'_>> {
        self.block_starts
            .windows(2)
            .enumerate()
            .map(|(subject, w)| SubjectBlock {
                subject,
                observations: &self.observations[w[0]..w[1]],
            })
            .collect()
    }

    /// Same data with the response categories reversed (`j -> J - 1 - j`).
    pub fn with_reversed_categories(&self) -> Self {
        let j = self.n_categories();
        let mut out = self.clone();
        for o in &mut out.observations {
            o.category = j - 1 - o.category;
        }
        out
    }
}

/// Observations of one subject, strictly increasing in occasion.
#[derive(Debug, Clone, Copy)]
pub struct SubjectBlock<'a> {
    pub subject: usize,
    pub observations: &'a [Observation],
}

impl SubjectBlock<'_> {
    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn times(&self) -> impl Iterator<Item = usize> + '_ {
        self.observations.iter().map(|o| o.time)
    }
}

/// Ordered time-pairs `(t, t')`, `t < t'`, rightmost index varying fastest.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairGrouping {
    n_times: usize,
    pairs: Vec<(usize, usize)>,
}

impl PairGrouping {
    pub fn new(n_times: usize) -> Result<Self> {
        if n_times < 2 {
            return Err(Error::SingleOccasion(n_times));
        }
        let pairs = (0..n_times)
            .flat_map(|t| (t + 1..n_times).map(move |u| (t, u)))
            .collect();
        Ok(PairGrouping { n_times, pairs })
    }

    pub fn n_times(&self) -> usize {
        self.n_times
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    /// Position of `(t, u)` with `t < u` in the canonical order.
    pub fn index_of(&self, t: usize, u: usize) -> Option<usize> {
        if t >= u || u >= self.n_times {
            return None;
        }
        let n = self.n_times;
        Some(t * (2 * n - t - 1) / 2 + (u - t - 1))
    }
}

/// Free function form of [`PairGrouping::new`].
pub fn pair_grouping(n_times: usize) -> Result<PairGrouping> {
    PairGrouping::new(n_times)
}

/// Header plus string cells, missing cells as `None`.
#[derive(Debug, Clone)]
pub struct RawTable {
    pub headers: Vec<String>,
    pub rows: Vec<Vec<Option<String>>>,
}

impl RawTable {
    pub fn from_reader<R: Read>(reader: R, delimiter: u8) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .delimiter(delimiter)
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let headers = rdr.headers()?.iter().map(str::to_string).collect();
        let mut rows = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            rows.push(
                rec.iter()
                    .map(|c| (!MISSING_TOKENS.contains(&c)).then(|| c.to_string()))
                    .collect(),
            );
        }
        Ok(RawTable { headers, rows })
    }

    pub fn column(&self, name: &str) -> Result<usize> {
        self.headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    }

    /// Parse a column as numbers; missing cells stay `None`.
    pub fn numeric_column(&self, index: usize) -> Result<Vec<Option<f64>>> {
        self.rows
            .iter()
            .enumerate()
            .map(|(k, row)| match row.get(index).and_then(Option::as_deref) {
                None => Ok(None),
                Some(s) => parse_number(s).map(Some).ok_or_else(|| Error::Parse {
                    line: k + 2,
                    column: self.headers[index].clone(),
                    value: s.to_string(),
                }),
            })
            .collect()
    }

    pub fn text_column(&self, index: usize) -> Vec<Option<String>> {
        self.rows
            .iter()
            .map(|row| row.get(index).cloned().flatten())
            .collect()
    }

    /// Occasion labels: the named column, or each row's position among its
    /// subject's rows (counting rows later dropped for missingness).
    pub fn time_labels(&self, id_col: usize, time_col: Option<usize>) -> Vec<Option<String>> {
        match time_col {
            Some(c) => self.text_column(c),
            None => {
                let mut counter: HashMap<Option<String>, usize> = HashMap::new();
                self.text_column(id_col)
                    .into_iter()
                    .map(|id| {
                        let n = counter.entry(id).or_insert(0);
                        *n += 1;
                        Some(n.to_string())
                    })
                    .collect()
            }
        }
    }
}

/// Column roles for [`load_dataset`].
#[derive(Debug, Clone)]
pub struct ColumnSpec {
    pub response: String,
    pub id: String,
    pub time: Option<String>,
    pub covariates: Vec<String>,
    pub delimiter: u8,
}

impl ColumnSpec {
    pub fn new(response: &str, id: &str) -> Self {
        ColumnSpec {
            response: response.to_string(),
            id: id.to_string(),
            time: None,
            covariates: Vec::new(),
            delimiter: b',',
        }
    }

    pub fn time(mut self, time: &str) -> Self {
        self.time = Some(time.to_string());
        self
    }

    pub fn covariates<S: AsRef<str>>(mut self, cols: &[S]) -> Self {
        self.covariates = cols.iter().map(|c| c.as_ref().to_string()).collect();
        self
    }
}

/// Load a long-format CSV whose covariate columns are already numeric.
pub fn load_dataset<R: Read>(source: R, spec: &ColumnSpec) -> Result<LongDataset> {
    let table = RawTable::from_reader(source, spec.delimiter)?;
    let id_col = table.column(&spec.id)?;
    let resp_col = table.column(&spec.response)?;
    let time_col = spec.time.as_deref().map(|t| table.column(t)).transpose()?;
    let cov_cols = spec
        .covariates
        .iter()
        .map(|c| table.column(c))
        .collect::<Result<Vec<_>>>()?;
    let covs = cov_cols
        .iter()
        .map(|&c| table.numeric_column(c))
        .collect::<Result<Vec<_>>>()?;
    let ids = table.text_column(id_col);
    let responses = table.text_column(resp_col);
    let times = table.time_labels(id_col, time_col);
    let rows = (0..table.rows.len())
        .map(|k| RawRow {
            subject: ids[k].clone(),
            time: times[k].clone(),
            response: responses[k].clone(),
            covariates: covs.iter().map(|c| c[k]).collect(),
        })
        .collect();
    LongDataset::from_rows(rows, spec.covariates.clone())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(s: &str, t: &str, y: &str, x: f64) -> RawRow {
        RawRow {
            subject: Some(s.into()),
            time: Some(t.into()),
            response: Some(y.into()),
            covariates: vec![Some(x)],
        }
    }

    #[test]
    fn text_labels_sort_lexicographically() {
        let ids = ["s2", "s10", "s1", "s3"];
        let mut rows = Vec::new();
        for (k, id) in ids.iter().enumerate() {
            for t in ["1", "2"] {
                rows.push(row(id, t, &((k % 3) + 1).to_string(), 0.0));
            }
        }
        let d = LongDataset::from_rows(rows, vec!["x".into()]).unwrap();
        // reference: std sort of the distinct labels
        let mut oracle: Vec<String> = ids.iter().map(|s| s.to_string()).collect();
        oracle.sort();
        assert_eq!(d.subject_map().labels(), oracle.as_slice());
        assert_eq!(d.subject_map().index_of("s10"), Some(1));
        assert_eq!(d.subject_map().index_of("s2"), Some(2));
    }

    #[test]
    fn numeric_labels_sort_numerically() {
        let m = LabelMap::from_labels(["10", "2", "3", "1", "2.0"]);
        assert!(m.is_numeric());
        assert_eq!(m.len(), 4);
        assert_eq!(m.index_of("10"), Some(3));
        assert_eq!(m.index_of("2"), Some(1));
        assert_eq!(m.index_of("2.0"), Some(1));
    }

    #[test]
    fn two_categories_rejected() {
        let rows = vec![row("a", "1", "1", 0.), row("a", "2", "2", 0.), row("b", "1", "1", 0.)];
        assert!(matches!(
            LongDataset::from_rows(rows, vec!["x".into()]),
            Err(Error::InvalidResponseScale { found: 2 })
        ));
    }

    #[test]
    fn duplicate_rejected() {
        let rows = vec![row("a", "1", "1", 0.), row("a", "1", "2", 0.), row("b", "1", "3", 0.)];
        assert!(matches!(
            LongDataset::from_rows(rows, vec!["x".into()]),
            Err(Error::DuplicateObservation { .. })
        ));
    }

    #[test]
    fn empty_after_na_removal() {
        let mut r = row("a", "1", "1", 0.);
        r.response = None;
        assert!(matches!(
            LongDataset::from_rows(vec![r], vec!["x".into()]),
            Err(Error::EmptyData)
        ));
    }

    #[test]
    fn listwise_deletion_keeps_other_occasions() {
        let mut rows = vec![
            row("a", "1", "1", 0.),
            row("a", "2", "2", 0.),
            row("a", "3", "3", 0.),
            row("b", "1", "1", 1.),
            row("b", "2", "2", 1.),
            row("b", "3", "3", 1.),
        ];
        rows[4].covariates[0] = None;
        let d = LongDataset::from_rows(rows, vec!["x".into()]).unwrap();
        let blocks = d.subject_blocks();
        assert_eq!(blocks.len(), 2);
        assert_eq!(blocks[0].len(), 3);
        assert_eq!(blocks[1].times().collect::<Vec<_>>(), vec![0, 2]);
    }

    #[test]
    fn pair_grouping_order() {
        let g = PairGrouping::new(3).unwrap();
        assert_eq!(g.pairs(), &[(0, 1), (0, 2), (1, 2)]);
        assert_eq!(PairGrouping::new(2).unwrap().len(), 1);
        let g5 = PairGrouping::new(5).unwrap();
        let mut oracle = Vec::new();
        for t in 0..5 {
            for u in 0..5 {
                if t < u {
                    oracle.push((t, u));
                }
            }
        }
        assert_eq!(g5.pairs(), oracle.as_slice());
        assert_eq!(g5.len(), 10);
        for (k, &(t, u)) in g5.pairs().iter().enumerate() {
            assert_eq!(g5.index_of(t, u), Some(k));
        }
        assert!(matches!(PairGrouping::new(1), Err(Error::SingleOccasion(1))));
    }

    #[test]
    fn csv_with_na_and_no_time_column() {
        let csv = "id,y,x\n1,1,0.5\n1,NA,0.1\n1,3,0.2\n2,2,\n2,3,1\n2,2,1\n";
        let spec = ColumnSpec::new("y", "id").covariates(&["x"]);
        let d = load_dataset(csv.as_bytes(), &spec).unwrap();
        assert_eq!(d.n_subjects(), 2);
        assert_eq!(d.n_times(), 3);
        assert_eq!(d.n_categories(), 3);
        let b = d.subject_blocks();
        assert_eq!(b[0].times().collect::<Vec<_>>(), vec![0, 2]);
        assert_eq!(b[1].times().collect::<Vec<_>>(), vec![1, 2]);
    }

    #[test]
    fn missing_column_is_reported() {
        let csv = "id,y\n1,1\n";
        let spec = ColumnSpec::new("y", "id").time("time");
        assert!(matches!(load_dataset(csv.as_bytes(), &spec), Err(Error::MissingColumn(c)) if c == "time"));
    }

    #[test]
    fn unparseable_covariate() {
        let csv = "id,y,x\n1,1,abc\n";
        let spec = ColumnSpec::new("y", "id").covariates(&["x"]);
        assert!(matches!(load_dataset(csv.as_bytes(), &spec), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn relabeling_is_a_bijection() {
        let csv = "id,t,y\nb,5,low\nb,1,mid\na,3,high\na,1,low\nc,3,mid\n";
        let spec = ColumnSpec::new("y", "id").time("t");
        let d = load_dataset(csv.as_bytes(), &spec).unwrap();
        let table = RawTable::from_reader(csv.as_bytes(), b',').unwrap();
        let mut rec: Vec<(String, String, String)> = d
            .observations()
            .iter()
            .map(|o| {
                (
                    d.subject_map().label(o.subject).to_string(),
                    d.time_map().label(o.time).to_string(),
                    d.category_map().label(o.category).to_string(),
                )
            })
            .collect();
        let mut orig: Vec<(String, String, String)> = table
            .rows
            .iter()
            .map(|r| (r[0].clone().unwrap(), r[1].clone().unwrap(), r[2].clone().unwrap()))
            .collect();
        rec.sort();
        orig.sort();
        assert_eq!(rec, orig);
    }
}
