//! CSV ingestion and deterministic cohort splitting.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use crate::error::{Error, Result};
use crate::schema::{ColumnKind, FeatureSchema};

/// One subject: raw continuous covariates, discrete covariates as category
/// indices into the schema's label tables, the event indicator, and the
/// observed time in study units.
#[derive(Debug, Clone, PartialEq)]
pub struct SurvivalRecord {
    pub x_cont: Vec<f64>,
    pub x_disc: Vec<usize>,
    pub event: u8,
    pub time: f64,
}

impl SurvivalRecord {
    pub fn validate(&self, schema: &FeatureSchema) -> Result<()> {
        if self.x_cont.len() != schema.d_cont() {
            return Err(Error::InvalidArgument(format!(
                "record has {} continuous values, schema expects {}",
                self.x_cont.len(),
                schema.d_cont()
            )));
        }
        if self.x_disc.len() != schema.d_disc() {
            return Err(Error::InvalidArgument(format!(
                "record has {} discrete values, schema expects {}",
                self.x_disc.len(),
                schema.d_disc()
            )));
        }
        for (idx, card) in self.x_disc.iter().zip(schema.cardinalities()) {
            if *idx >= card {
                return Err(Error::InvalidArgument(format!(
                    "category index {idx} out of range for cardinality {card}"
                )));
            }
        }
        if !(self.time > 0.0) || !self.time.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "time must be a positive finite real, got {}",
                self.time
            )));
        }
        if self.event > 1 {
            return Err(Error::InvalidArgument(format!(
                "event indicator must be 0 or 1, got {}",
                self.event
            )));
        }
        Ok(())
    }
}

/// Fraction of records with `E = 0`; `None` on an empty cohort.
pub fn censoring_rate(records: &[SurvivalRecord]) -> Option<f64> {
    if records.is_empty() {
        return None;
    }
    let censored = records.iter().filter(|r| r.event == 0).count();
    Some(censored as f64 / records.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadSummary {
    pub n_rows: usize,
    pub censoring_rate: Option<f64>,
}

/// Parse a delimited survival table against `schema`.
///
/// The header must contain every schema column plus the time and event
/// columns; extra columns are ignored. Lines starting with `#` are treated
/// as comments (synthetic cohorts carry provenance comments). Row errors
/// carry the 1-based line number of the offending record.
pub fn load_csv(
    path: &std::path::Path,
    schema: &FeatureSchema,
    delimiter: u8,
) -> Result<(Vec<SurvivalRecord>, LoadSummary)> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .flexible(false)
        .from_reader(file);

    let headers = reader
        .headers()
        .map_err(|e| Error::Csv(e.to_string()))?
        .clone();
    let col_index = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Schema(format!("column '{name}' missing from CSV header")))
    };

    let time_idx = col_index(&schema.time_column)?;
    let event_idx = col_index(&schema.event_column)?;
    let mut cont_idx = Vec::new();
    let mut disc_idx = Vec::new();
    for col in &schema.columns {
        let idx = col_index(&col.name)?;
        match &col.kind {
            ColumnKind::Continuous => cont_idx.push((idx, col.name.clone())),
            ColumnKind::Discrete { categories } => {
                disc_idx.push((idx, col.name.clone(), categories.clone()))
            }
        }
    }

    let mut records = Vec::new();
    for row in reader.records() {
        let row = row.map_err(|e| Error::Csv(e.to_string()))?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);

        let field = |idx: usize| -> &str { row.get(idx).unwrap_or("") };
        let mut x_cont = Vec::with_capacity(cont_idx.len());
        for (idx, name) in &cont_idx {
            let raw = field(*idx);
            let v: f64 = raw.parse().map_err(|_| Error::Row {
                line,
                msg: format!("cannot parse '{raw}' in column '{name}' as a real"),
            })?;
            if !v.is_finite() {
                return Err(Error::Row {
                    line,
                    msg: format!("non-finite value in column '{name}'"),
                });
            }
            x_cont.push(v);
        }
        let mut x_disc = Vec::with_capacity(disc_idx.len());
        for (idx, name, categories) in &disc_idx {
            let raw = field(*idx);
            let pos = categories
                .iter()
                .position(|c| c == raw)
                .ok_or_else(|| Error::Row {
                    line,
                    msg: format!("unknown category '{raw}' in column '{name}'"),
                })?;
            x_disc.push(pos);
        }
        let traw = field(time_idx);
        let time: f64 = traw.parse().map_err(|_| Error::Row {
            line,
            msg: format!("cannot parse time '{traw}'"),
        })?;
        if !(time > 0.0) || !time.is_finite() {
            return Err(Error::Row {
                line,
                msg: format!("time must be positive, got {traw}"),
            });
        }
        let eraw = field(event_idx);
        let event: u8 = match eraw {
            "0" | "0.0" => 0,
            "1" | "1.0" => 1,
            other => {
                return Err(Error::Row {
                    line,
                    msg: format!("event indicator must be 0 or 1, got '{other}'"),
                })
            }
        };
        records.push(SurvivalRecord {
            x_cont,
            x_disc,
            event,
            time,
        });
    }

    let summary = LoadSummary {
        n_rows: records.len(),
        censoring_rate: censoring_rate(&records),
    };
    Ok((records, summary))
}

/// Write records as CSV in schema order (covariates, then time, then event).
/// `comments` are emitted first, one `# `-prefixed line each.
pub fn write_csv(
    path: &std::path::Path,
    records: &[SurvivalRecord],
    schema: &FeatureSchema,
    comments: &[String],
) -> Result<()> {
    use std::io::Write;
    let mut out = std::io::BufWriter::new(
        std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?,
    );
    let wr = |e: std::io::Error| Error::io(path.display().to_string(), e);
    for c in comments {
        writeln!(out, "# {c}").map_err(wr)?;
    }
    let mut header: Vec<&str> = schema.columns.iter().map(|c| c.name.as_str()).collect();
    header.push(&schema.time_column);
    header.push(&schema.event_column);
    writeln!(out, "{}", header.join(",")).map_err(wr)?;

    let tables: Vec<&[String]> = schema
        .columns
        .iter()
        .filter_map(|c| match &c.kind {
            ColumnKind::Discrete { categories } => Some(categories.as_slice()),
            ColumnKind::Continuous => None,
        })
        .collect();
    for rec in records {
        let mut fields: Vec<String> = Vec::with_capacity(schema.columns.len() + 2);
        let (mut ci, mut di) = (0, 0);
        for col in &schema.columns {
            match &col.kind {
                ColumnKind::Continuous => {
                    fields.push(format!("{}", rec.x_cont[ci]));
                    ci += 1;
                }
                ColumnKind::Discrete { .. } => {
                    fields.push(tables[di][rec.x_disc[di]].clone());
                    di += 1;
                }
            }
        }
        fields.push(format!("{}", rec.time));
        fields.push(format!("{}", rec.event));
        writeln!(out, "{}", fields.join(",")).map_err(wr)?;
    }
    Ok(())
}

/// Deterministic split stratified on the event indicator. Both halves get at
/// least one event whenever the cohort has two or more; an all-censored
/// cohort splits with a warning.
pub fn split(
    records: &[SurvivalRecord],
    fraction: f64,
    seed: u64,
) -> Result<(Vec<SurvivalRecord>, Vec<SurvivalRecord>)> {
    let n = records.len();
    if n < 2 {
        return Err(Error::InvalidArgument("split needs at least 2 records".into()));
    }
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "split fraction must lie in (0,1), got {fraction}"
        )));
    }
    let train_n = (n as f64 * fraction).round() as usize;
    if train_n == 0 || train_n == n {
        return Err(Error::InvalidArgument(format!(
            "fraction {fraction} leaves an empty side for n={n}"
        )));
    }

    let mut events: Vec<usize> = (0..n).filter(|&i| records[i].event == 1).collect();
    let mut censored: Vec<usize> = (0..n).filter(|&i| records[i].event == 0).collect();
    if events.is_empty() {
        log::warn!("split: cohort has no events; stratification is degenerate");
    }

    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    events.shuffle(&mut rng);
    censored.shuffle(&mut rng);

    // Largest-remainder allocation of the train quota across the two strata.
    let exact_ev = events.len() as f64 * fraction;
    let mut train_ev = exact_ev.floor() as usize;
    let rem_ev = exact_ev - train_ev as f64;
    let exact_ce = censored.len() as f64 * fraction;
    let mut train_ce = exact_ce.floor() as usize;
    let rem_ce = exact_ce - train_ce as f64;
    while train_ev + train_ce < train_n {
        if rem_ev >= rem_ce && train_ev < events.len() {
            train_ev += 1;
        } else if train_ce < censored.len() {
            train_ce += 1;
        } else {
            train_ev += 1;
        }
    }
    while train_ev + train_ce > train_n {
        if train_ce > 0 {
            train_ce -= 1;
        } else {
            train_ev -= 1;
        }
    }
    // Guarantee an event on both sides when possible.
    if events.len() >= 2 {
        if train_ev == 0 && train_ce > 0 {
            train_ev = 1;
            train_ce -= 1;
        }
        if train_ev == events.len() && train_ce < censored.len() {
            train_ev -= 1;
            train_ce += 1;
        }
    }

    let mut train_idx: Vec<usize> = events[..train_ev]
        .iter()
        .chain(censored[..train_ce].iter())
        .copied()
        .collect();
    let mut test_idx: Vec<usize> = events[train_ev..]
        .iter()
        .chain(censored[train_ce..].iter())
        .copied()
        .collect();
    train_idx.sort_unstable();
    test_idx.sort_unstable();

    let take = |idx: &[usize]| idx.iter().map(|&i| records[i].clone()).collect();
    Ok((take(&train_idx), take(&test_idx)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::{continuous, discrete};

    fn schema() -> FeatureSchema {
        FeatureSchema::new(
            vec![continuous("age"), discrete("grade", &["low", "high"])],
            "time",
            "event",
        )
        .unwrap()
    }

    fn write_tmp(content: &str) -> (tempfile::TempDir, std::path::PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.csv");
        std::fs::write(&path, content).unwrap();
        (dir, path)
    }

    #[test]
    fn loads_and_reports_censoring() {
        let (_d, path) = write_tmp("age,grade,time,event\n50,low,10,1\n60,high,5,0\n40,low,2,0\n");
        let (records, summary) = load_csv(&path, &schema(), b',').unwrap();
        assert_eq!(records.len(), 3);
        assert_eq!(summary.n_rows, 3);
        // loader censoring rate equals 1 - mean(E) exactly
        assert_eq!(summary.censoring_rate, Some(2.0 / 3.0));
        assert_eq!(records[0].x_disc, vec![0]);
        assert_eq!(records[1].x_disc, vec![1]);
    }

    #[test]
    fn empty_file_with_header_gives_empty_list() {
        let (_d, path) = write_tmp("age,grade,time,event\n");
        let (records, summary) = load_csv(&path, &schema(), b',').unwrap();
        assert!(records.is_empty());
        assert_eq!(summary.censoring_rate, None);
    }

    #[test]
    fn missing_column_is_schema_error() {
        let (_d, path) = write_tmp("age,time,event\n50,10,1\n");
        let err = load_csv(&path, &schema(), b',').unwrap_err();
        assert!(matches!(err, Error::Schema(_)), "{err}");
    }

    #[test]
    fn negative_time_is_row_error_with_line() {
        let (_d, path) = write_tmp("age,grade,time,event\n50,low,10,1\n60,high,-5,0\n");
        let err = load_csv(&path, &schema(), b',').unwrap_err();
        match err {
            Error::Row { line, .. } => assert_eq!(line, 3),
            other => panic!("expected row error, got {other}"),
        }
    }

    #[test]
    fn unknown_category_is_row_error() {
        let (_d, path) = write_tmp("age,grade,time,event\n50,medium,10,1\n");
        let err = load_csv(&path, &schema(), b',').unwrap_err();
        assert!(matches!(err, Error::Row { .. }), "{err}");
    }

    #[test]
    fn comment_lines_are_skipped() {
        let (_d, path) =
            write_tmp("# seed=7\n# steps=300\nage,grade,time,event\n50,low,10,1\n");
        let (records, _) = load_csv(&path, &schema(), b',').unwrap();
        assert_eq!(records.len(), 1);
    }

    fn toy_records(n: usize, events: usize) -> Vec<SurvivalRecord> {
        (0..n)
            .map(|i| SurvivalRecord {
                x_cont: vec![i as f64],
                x_disc: vec![i % 2],
                event: u8::from(i < events),
                time: 1.0 + i as f64,
            })
            .collect()
    }

    #[test]
    fn split_sizes_and_determinism() {
        let records = toy_records(10, 4);
        let (a1, b1) = split(&records, 0.5, 99).unwrap();
        assert_eq!(a1.len(), 5);
        assert_eq!(b1.len(), 5);
        let (a2, b2) = split(&records, 0.5, 99).unwrap();
        assert_eq!(a1, a2);
        assert_eq!(b1, b2);
        // disjoint and exhaustive
        let mut all: Vec<f64> = a1.iter().chain(b1.iter()).map(|r| r.time).collect();
        all.sort_by(f64::total_cmp);
        let mut expect: Vec<f64> = records.iter().map(|r| r.time).collect();
        expect.sort_by(f64::total_cmp);
        assert_eq!(all, expect);
    }

    #[test]
    fn split_keeps_events_on_both_sides() {
        let records = toy_records(12, 2);
        for seed in 0..20 {
            let (a, b) = split(&records, 0.5, seed).unwrap();
            assert!(a.iter().any(|r| r.event == 1), "seed {seed}");
            assert!(b.iter().any(|r| r.event == 1), "seed {seed}");
        }
    }

    #[test]
    fn split_all_censored_succeeds() {
        let records = toy_records(6, 0);
        let (a, b) = split(&records, 0.5, 1).unwrap();
        assert_eq!(a.len() + b.len(), 6);
    }

    #[test]
    fn split_rejects_degenerate_fraction() {
        let records = toy_records(4, 2);
        assert!(split(&records, 0.01, 1).is_err());
        assert!(split(&records, 0.999, 1).is_err());
    }

    #[test]
    fn csv_roundtrip_via_writer() {
        let records = toy_records(5, 3);
        let s = schema();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("out.csv");
        write_csv(&path, &records, &s, &["seed=1".into()]).unwrap();
        let (back, _) = load_csv(&path, &s, b',').unwrap();
        assert_eq!(records, back);
    }
}
