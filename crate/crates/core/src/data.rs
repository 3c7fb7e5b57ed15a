//! Sparsely observed multivariate functional samples.
//!
//! Each subject contributes a strictly increasing list of observation times
//! in `[0, 1]` and, at each time, a full `q`-vector of responses. Times are
//! kept internally on the unit interval; the original study-time bounds are
//! retained so that files can be written back in study units.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// One joint observation of all `q` outcomes of a subject.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationRecord {
    pub subject_id: String,
    pub group: usize,
    pub time: f64,
    pub values: Vec<f64>,
}

/// Time-sorted observations of one subject. `values` is `m × q`, row `j`
/// holding the response vector at `times[j]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SubjectSeries {
    id: String,
    group: usize,
    times: Vec<f64>,
    values: DMatrix<f64>,
}

impl SubjectSeries {
    pub fn new(id: impl Into<String>, group: usize, times: Vec<f64>, values: DMatrix<f64>) -> Result<Self> {
        let id = id.into();
        if times.is_empty() {
            return Err(Error::InvalidData(format!("subject {id:?} has no observations")));
        }
        if values.nrows() != times.len() {
            return Err(Error::InvalidData(format!(
                "subject {id:?}: {} times but {} value rows",
                times.len(),
                values.nrows()
            )));
        }
        if values.ncols() == 0 {
            return Err(Error::InvalidData(format!("subject {id:?} has zero components")));
        }
        for (j, &t) in times.iter().enumerate() {
            if !t.is_finite() || !(0.0..=1.0).contains(&t) {
                return Err(Error::OutOfDomain {
                    value: t,
                    lower: 0.0,
                    upper: 1.0,
                });
            }
            if j > 0 && t <= times[j - 1] {
                return Err(Error::InvalidData(format!(
                    "subject {id:?}: times must be strictly increasing ({} then {t})",
                    times[j - 1]
                )));
            }
            if values.row(j).iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite { subject: id, time: t });
            }
        }
        Ok(Self {
            id,
            group,
            times,
            values,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn group(&self) -> usize {
        self.group
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    /// `m × q` response matrix.
    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Copy with the same times and group but new responses.
    pub fn with_values(&self, values: DMatrix<f64>) -> Result<Self> {
        Self::new(self.id.clone(), self.group, self.times.clone(), values)
    }
}

/// Immutable collection of subjects sharing one `q` and one domain.
#[derive(Debug, Clone, PartialEq)]
pub struct MvFunctionalDataset {
    q: usize,
    domain: (f64, f64),
    group_count: usize,
    subjects: Vec<SubjectSeries>,
}

impl MvFunctionalDataset {
    /// Validates every dataset invariant in one pass.
    pub fn new(q: usize, domain: (f64, f64), subjects: Vec<SubjectSeries>) -> Result<Self> {
        if q == 0 {
            return Err(Error::InvalidData("q must be at least 1".into()));
        }
        if !(domain.0.is_finite() && domain.1.is_finite() && domain.0 < domain.1) {
            return Err(Error::InvalidData(format!(
                "domain [{}, {}] is not a proper interval",
                domain.0, domain.1
            )));
        }
        if subjects.is_empty() {
            return Err(Error::InvalidData("dataset has no subjects".into()));
        }
        let mut seen_ids = HashMap::new();
        let mut max_group = 0;
        for (i, s) in subjects.iter().enumerate() {
            if s.values.ncols() != q {
                return Err(Error::InvalidData(format!(
                    "subject {:?} has {} components, expected {q}",
                    s.id,
                    s.values.ncols()
                )));
            }
            if seen_ids.insert(s.id.clone(), i).is_some() {
                return Err(Error::InvalidData(format!("subject {:?} appears twice", s.id)));
            }
            max_group = max_group.max(s.group);
        }
        let group_count = max_group + 1;
        let mut present = vec![false; group_count];
        for s in &subjects {
            present[s.group] = true;
        }
        if let Some(missing) = present.iter().position(|p| !p) {
            return Err(Error::InvalidData(format!(
                "group labels must be dense 0..{}; label {missing} is unused",
                group_count - 1
            )));
        }
        Ok(Self {
            q,
            domain,
            group_count,
            subjects,
        })
    }

    /// Assemble a dataset from individual joint observations (times in `[0, 1]`).
    pub fn from_records(q: usize, domain: (f64, f64), records: Vec<ObservationRecord>) -> Result<Self> {
        let mut order: Vec<String> = Vec::new();
        let mut by_subject: HashMap<String, (usize, Vec<ObservationRecord>)> = HashMap::new();
        for rec in records {
            if rec.values.len() != q {
                return Err(Error::InvalidData(format!(
                    "record for subject {:?} has {} values, expected {q}",
                    rec.subject_id,
                    rec.values.len()
                )));
            }
            let entry = by_subject.entry(rec.subject_id.clone()).or_insert_with(|| {
                order.push(rec.subject_id.clone());
                (rec.group, Vec::new())
            });
            if entry.0 != rec.group {
                return Err(Error::InvalidData(format!(
                    "subject {:?} has more than one group label",
                    rec.subject_id
                )));
            }
            entry.1.push(rec);
        }
        let mut subjects = Vec::with_capacity(order.len());
        for id in order {
            let (group, mut recs) = by_subject.remove(&id).expect("subject recorded");
            recs.sort_by(|a, b| a.time.total_cmp(&b.time));
            let times: Vec<f64> = recs.iter().map(|r| r.time).collect();
            let values = DMatrix::from_fn(recs.len(), q, |j, l| recs[j].values[l]);
            subjects.push(SubjectSeries::new(id, group, times, values)?);
        }
        Self::new(q, domain, subjects)
    }

    pub fn q(&self) -> usize {
        self.q
    }

    /// Original study-time bounds `[a, b]`.
    pub fn domain(&self) -> (f64, f64) {
        self.domain
    }

    /// Number of distinct groups `G`.
    pub fn group_count(&self) -> usize {
        self.group_count
    }

    pub fn subjects(&self) -> &[SubjectSeries] {
        &self.subjects
    }

    pub fn n(&self) -> usize {
        self.subjects.len()
    }

    pub fn group_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.group_count];
        for s in &self.subjects {
            sizes[s.group] += 1;
        }
        sizes
    }

    pub fn subject(&self, id: &str) -> Option<(usize, &SubjectSeries)> {
        self.subjects.iter().enumerate().find(|(_, s)| s.id == id)
    }

    pub fn total_observations(&self) -> usize {
        self.subjects.iter().map(|s| s.len()).sum()
    }

    /// Internal time on `[0, 1]` back to study units.
    pub fn to_raw_time(&self, t: f64) -> f64 {
        let (a, b) = self.domain;
        a + t * (b - a)
    }

    /// Study-time value mapped onto `[0, 1]`.
    pub fn to_unit_time(&self, raw: f64) -> f64 {
        let (a, b) = self.domain;
        (raw - a) / (b - a)
    }

    pub fn records(&self) -> impl Iterator<Item = ObservationRecord> + '_ {
        self.subjects.iter().flat_map(|s| {
            (0..s.len()).map(move |j| ObservationRecord {
                subject_id: s.id.clone(),
                group: s.group,
                time: s.times[j],
                values: s.values.row(j).iter().copied().collect(),
            })
        })
    }

    /// Same structure with every subject's responses replaced.
    pub fn with_subject_values(&self, values: Vec<DMatrix<f64>>) -> Result<Self> {
        if values.len() != self.n() {
            return Err(Error::InvalidArgument(format!(
                "expected {} value matrices, got {}",
                self.n(),
                values.len()
            )));
        }
        let subjects = self
            .subjects
            .iter()
            .zip(values)
            .map(|(s, v)| s.with_values(v))
            .collect::<Result<Vec<_>>>()?;
        Self::new(self.q, self.domain, subjects)
    }

    /// Subset (or reordering, or resample with duplicates renamed) of subjects.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        let mut subjects = Vec::with_capacity(indices.len());
        let mut used: HashMap<&str, usize> = HashMap::new();
        for &i in indices {
            let s = self
                .subjects
                .get(i)
                .ok_or_else(|| Error::InvalidArgument(format!("subject index {i} out of range")))?;
            let count = used.entry(s.id.as_str()).or_insert(0);
            let mut copy = s.clone();
            if *count > 0 {
                copy.id = format!("{}#{}", s.id, count);
            }
            *count += 1;
            subjects.push(copy);
        }
        Self::new(self.q, self.domain, subjects)
    }
}

/// Column names of the long-format file and optional study-time bounds.
#[derive(Debug, Clone)]
pub struct LongFormatSchema {
    pub subject: String,
    pub group: String,
    pub time: String,
    pub outcome: String,
    pub value: String,
    /// Study-time bounds; when absent, taken from a `# domain:` header
    /// line, else from the observed time range.
    pub domain: Option<(f64, f64)>,
}

impl Default for LongFormatSchema {
    fn default() -> Self {
        Self {
            subject: "subject".into(),
            group: "group".into(),
            time: "time".into(),
            outcome: "outcome".into(),
            value: "value".into(),
            domain: None,
        }
    }
}

const TIME_RAW: &str = "time_raw";

/// Read a long-format file from disk.
pub fn load_long_format(path: impl AsRef<Path>, schema: &LongFormatSchema) -> Result<MvFunctionalDataset> {
    let file = File::open(path)?;
    read_long_format(file, schema)
}

/// Read a long-format table: header `subject,group,time,outcome,value`,
/// optionally followed by `time_raw` (files written by
/// [`write_long_format`], whose `time` column is already on `[0, 1]`).
pub fn read_long_format(reader: impl Read, schema: &LongFormatSchema) -> Result<MvFunctionalDataset> {
    let mut text = String::new();
    BufReader::new(reader).read_to_string(&mut text)?;
    let mut header_domain = None;
    for line in text.lines().take_while(|l| l.starts_with('#')) {
        if let Some(rest) = line.trim_start_matches('#').trim().strip_prefix("domain:") {
            header_domain = Some(parse_pair(rest).ok_or_else(|| Error::Parse {
                line: 0,
                message: format!("bad domain header {rest:?}"),
            })?);
        }
    }

    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = rdr.headers()?.clone();
    let col = |name: &str| {
        headers.iter().position(|h| h == name).ok_or_else(|| Error::Parse {
            line: 1,
            message: format!("missing column {name:?}"),
        })
    };
    let (c_subj, c_group, c_time, c_out, c_val) = (
        col(&schema.subject)?,
        col(&schema.group)?,
        col(&schema.time)?,
        col(&schema.outcome)?,
        col(&schema.value)?,
    );
    let c_raw = headers.iter().position(|h| h == TIME_RAW);

    struct Row {
        subject: String,
        group: usize,
        time: f64,
        outcome: usize,
        value: f64,
    }
    let mut rows = Vec::new();
    for (idx, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(idx + 2);
        let field = |c: usize| rec.get(c).unwrap_or("");
        let num = |c: usize, what: &str| {
            field(c).parse::<f64>().map_err(|_| Error::Parse {
                line,
                message: format!("{what} {:?} is not a number", field(c)),
            })
        };
        let int = |c: usize, what: &str| {
            field(c).parse::<usize>().map_err(|_| Error::Parse {
                line,
                message: format!("{what} {:?} is not a nonnegative integer", field(c)),
            })
        };
        let subject = field(c_subj).to_string();
        let time = num(c_time, "time")?;
        let value = num(c_val, "value")?;
        if !time.is_finite() {
            return Err(Error::Parse {
                line,
                message: "time is not finite".into(),
            });
        }
        if !value.is_finite() {
            return Err(Error::NonFinite { subject, time });
        }
        let outcome = int(c_out, "outcome")?;
        if outcome == 0 {
            return Err(Error::Parse {
                line,
                message: "outcome index is 1-based".into(),
            });
        }
        if let Some(c) = c_raw {
            num(c, TIME_RAW)?;
        }
        rows.push(Row {
            subject,
            group: int(c_group, "group")?,
            time,
            outcome,
            value,
        });
    }
    if rows.is_empty() {
        return Err(Error::InvalidData("file has no observations".into()));
    }
    let q = rows.iter().map(|r| r.outcome).max().unwrap();

    // times in the `time` column are already unit-scaled when `time_raw` is present
    let pre_scaled = c_raw.is_some();
    let domain = match schema.domain.or(header_domain) {
        Some(d) => d,
        None if pre_scaled => (0.0, 1.0),
        None => {
            let lo = rows.iter().map(|r| r.time).fold(f64::INFINITY, f64::min);
            let hi = rows.iter().map(|r| r.time).fold(f64::NEG_INFINITY, f64::max);
            (lo, hi)
        }
    };
    if !(domain.0 < domain.1) {
        return Err(Error::InvalidData(format!(
            "domain [{}, {}] is degenerate; pass explicit bounds",
            domain.0, domain.1
        )));
    }

    // (subject, time) -> q-vector slots
    let mut order: Vec<String> = Vec::new();
    let mut cells: HashMap<String, (usize, Vec<(f64, Vec<Option<f64>>)>)> = HashMap::new();
    for row in rows {
        if !pre_scaled && (row.time < domain.0 || row.time > domain.1) {
            return Err(Error::OutOfDomain {
                value: row.time,
                lower: domain.0,
                upper: domain.1,
            });
        }
        let entry = cells.entry(row.subject.clone()).or_insert_with(|| {
            order.push(row.subject.clone());
            (row.group, Vec::new())
        });
        if entry.0 != row.group {
            return Err(Error::InvalidData(format!(
                "subject {:?} has more than one group label",
                row.subject
            )));
        }
        let slot = match entry.1.iter_mut().position(|(t, _)| *t == row.time) {
            Some(p) => &mut entry.1[p].1,
            None => {
                entry.1.push((row.time, vec![None; q]));
                &mut entry.1.last_mut().unwrap().1
            }
        };
        if slot[row.outcome - 1].is_some() {
            return Err(Error::DuplicateObservation {
                subject: row.subject,
                time: row.time,
                outcome: row.outcome,
            });
        }
        slot[row.outcome - 1] = Some(row.value);
    }

    let mut records = Vec::new();
    for id in order {
        let (group, slots) = cells.remove(&id).unwrap();
        for (time, vals) in slots {
            let missing: Vec<usize> = vals
                .iter()
                .enumerate()
                .filter(|(_, v)| v.is_none())
                .map(|(l, _)| l + 1)
                .collect();
            if !missing.is_empty() {
                return Err(Error::MissingComponent {
                    subject: id,
                    time,
                    missing,
                });
            }
            let unit = if pre_scaled {
                time
            } else {
                (time - domain.0) / (domain.1 - domain.0)
            };
            records.push(ObservationRecord {
                subject_id: id.clone(),
                group,
                time: unit,
                values: vals.into_iter().map(Option::unwrap).collect(),
            });
        }
    }
    MvFunctionalDataset::from_records(q, domain, records)
}

fn parse_pair(s: &str) -> Option<(f64, f64)> {
    let mut it = s.split(',').map(|p| p.trim().parse::<f64>());
    let a = it.next()?.ok()?;
    let b = it.next()?.ok()?;
    Some((a, b))
}

/// Write the long format: comment header (`extra_header` lines, then the
/// domain), then `subject,group,time,outcome,value,time_raw` with `time` on
/// `[0, 1]`.
pub fn write_long_format(data: &MvFunctionalDataset, mut out: impl Write, extra_header: &[String]) -> Result<()> {
    for line in extra_header {
        writeln!(out, "# {line}")?;
    }
    let (a, b) = data.domain();
    writeln!(out, "# domain: {a},{b}")?;
    writeln!(out, "subject,group,time,outcome,value,time_raw")?;
    for s in data.subjects() {
        for (j, &t) in s.times().iter().enumerate() {
            for l in 0..data.q() {
                writeln!(
                    out,
                    "{},{},{},{},{},{}",
                    s.id(),
                    s.group(),
                    t,
                    l + 1,
                    s.values()[(j, l)],
                    data.to_raw_time(t)
                )?;
            }
        }
    }
    Ok(())
}

/// Leading `#` comment lines of a file, without the marker.
pub fn read_comment_header(path: impl AsRef<Path>) -> Result<Vec<String>> {
    let file = BufReader::new(File::open(path)?);
    let mut lines = Vec::new();
    for line in file.lines() {
        let line = line?;
        match line.strip_prefix('#') {
            Some(rest) => lines.push(rest.trim().to_string()),
            None => break,
        }
    }
    Ok(lines)
}

/// Per-component location and scale used by [`standardize_outcomes`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Standardization {
    pub center: f64,
    pub scale: f64,
}

/// Center each component at its mean over records at `reference_time`
/// (unit-interval time) and divide by the sample SD there.
pub fn standardize_outcomes(
    data: &MvFunctionalDataset,
    reference_time: f64,
) -> Result<(MvFunctionalDataset, Vec<Standardization>)> {
    const TOL: f64 = 1e-9;
    let q = data.q();
    let rows: Vec<(usize, usize)> = data
        .subjects()
        .iter()
        .enumerate()
        .filter_map(|(i, s)| {
            s.times()
                .iter()
                .position(|t| (t - reference_time).abs() <= TOL)
                .map(|j| (i, j))
        })
        .collect();
    if rows.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "{} subject(s) observed at reference time {reference_time}; need at least 2",
            rows.len()
        )));
    }
    let mut params = Vec::with_capacity(q);
    for l in 0..q {
        let vals: Vec<f64> = rows
            .iter()
            .map(|&(i, j)| data.subjects()[i].values()[(j, l)])
            .collect();
        let n = vals.len() as f64;
        let center = vals.iter().sum::<f64>() / n;
        let var = vals.iter().map(|v| (v - center).powi(2)).sum::<f64>() / (n - 1.0);
        let scale = var.sqrt();
        if !(scale > 0.0) {
            return Err(Error::DegenerateBaseline { component: l + 1 });
        }
        params.push(Standardization { center, scale });
    }
    let values = data
        .subjects()
        .iter()
        .map(|s| {
            let mut v = s.values().clone();
            for (l, p) in params.iter().enumerate() {
                v.column_mut(l).apply(|x| *x = (*x - p.center) / p.scale);
            }
            v
        })
        .collect();
    Ok((data.with_subject_values(values)?, params))
}

/// Flip the sign of the listed 1-based components.
pub fn negate_components(data: &MvFunctionalDataset, components: &[usize]) -> Result<MvFunctionalDataset> {
    if let Some(&bad) = components.iter().find(|&&c| c == 0 || c > data.q()) {
        return Err(Error::InvalidArgument(format!(
            "component index {bad} outside 1..{}",
            data.q()
        )));
    }
    let values = data
        .subjects()
        .iter()
        .map(|s| {
            let mut v = s.values().clone();
            for &c in components {
                v.column_mut(c - 1).neg_mut();
            }
            v
        })
        .collect();
    data.with_subject_values(values)
}
