//! Encoding between raw records and the numeric view the diffusion model
//! consumes.
//!
//! Continuous covariates are z-scored per column; the observed time is
//! mapped through `log1p` and z-scored, then appended as the last column of
//! the continuous block. Each discrete covariate and the event indicator
//! become a one-hot channel with one extra trailing slot reserved for the
//! mask state of the absorbing diffusion.

use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::dataset::SurvivalRecord;
use crate::error::{Error, Result};
use crate::schema::FeatureSchema;

pub const DEFAULT_TIME_FLOOR: f64 = 1e-6;

/// Standardization statistics fitted on a training cohort. Means and
/// standard deviations use the population convention (denominator `n`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodecStats {
    /// (mean, std) per continuous covariate, schema order.
    pub cont: Vec<(f64, f64)>,
    /// (mean, std) of log1p(time).
    pub time: (f64, f64),
    /// Ordered label table per discrete covariate, schema order.
    pub disc_tables: Vec<Vec<String>>,
    /// Decoded times are clamped below at this positive floor.
    pub time_floor: f64,
}

/// Matrix view of a cohort. `z_cont` is `n x (d_cont + 1)` with the
/// standardized time last; `z_disc` holds one `n x (C_j + 1)` one-hot matrix
/// per channel, covariates first and the event channel last, mask slot last
/// within each row.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedBatch {
    pub z_cont: Array2<f64>,
    pub z_disc: Vec<Array2<f64>>,
}

impl EncodedBatch {
    pub fn n_rows(&self) -> usize {
        self.z_cont.nrows()
    }

    /// Rows `rows` of this batch, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> EncodedBatch {
        let pick = |m: &Array2<f64>| {
            let mut out = Array2::zeros((rows.len(), m.ncols()));
            for (k, &r) in rows.iter().enumerate() {
                out.row_mut(k).assign(&m.row(r));
            }
            out
        };
        EncodedBatch {
            z_cont: pick(&self.z_cont),
            z_disc: self.z_disc.iter().map(pick).collect(),
        }
    }
}

/// Index of the single 1-entry if the row is an exact one-hot vertex.
pub fn one_hot_index(row: ArrayView1<f64>) -> Option<usize> {
    let mut hot = None;
    for (i, &v) in row.iter().enumerate() {
        if v == 1.0 {
            if hot.is_some() {
                return None;
            }
            hot = Some(i);
        } else if v != 0.0 {
            return None;
        }
    }
    hot
}

fn mean_std_population(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Fit standardization statistics on a cohort. Constant columns (including
/// a constant log1p-time) are rejected by name.
pub fn fit_codec(records: &[SurvivalRecord], schema: &FeatureSchema) -> Result<CodecStats> {
    if records.len() < 2 {
        return Err(Error::Codec(format!(
            "codec fitting needs at least 2 records, got {}",
            records.len()
        )));
    }
    for r in records {
        r.validate(schema)?;
    }
    let cont_names: Vec<&str> = schema.continuous_columns().map(|c| c.name.as_str()).collect();
    let mut cont = Vec::with_capacity(cont_names.len());
    for (j, name) in cont_names.iter().enumerate() {
        let values: Vec<f64> = records.iter().map(|r| r.x_cont[j]).collect();
        let (mean, std) = mean_std_population(&values);
        if std <= 0.0 {
            return Err(Error::ConstantColumn {
                column: name.to_string(),
            });
        }
        cont.push((mean, std));
    }
    let log_times: Vec<f64> = records.iter().map(|r| r.time.ln_1p()).collect();
    let time = mean_std_population(&log_times);
    if time.1 <= 0.0 {
        return Err(Error::ConstantColumn {
            column: schema.time_column.clone(),
        });
    }
    let disc_tables = schema
        .discrete_columns()
        .map(|c| match &c.kind {
            crate::schema::ColumnKind::Discrete { categories } => categories.clone(),
            _ => unreachable!(),
        })
        .collect();
    Ok(CodecStats {
        cont,
        time,
        disc_tables,
        time_floor: DEFAULT_TIME_FLOOR,
    })
}

impl CodecStats {
    pub fn d_cont(&self) -> usize {
        self.cont.len()
    }

    pub fn channel_sizes(&self) -> Vec<usize> {
        let mut sizes: Vec<usize> = self.disc_tables.iter().map(|t| t.len() + 1).collect();
        sizes.push(3);
        sizes
    }
}

pub fn encode(records: &[SurvivalRecord], codec: &CodecStats) -> Result<EncodedBatch> {
    let n = records.len();
    let d_cont = codec.d_cont();
    let mut z_cont = Array2::zeros((n, d_cont + 1));
    let mut z_disc: Vec<Array2<f64>> = codec
        .channel_sizes()
        .iter()
        .map(|&c| Array2::zeros((n, c)))
        .collect();

    for (i, rec) in records.iter().enumerate() {
        if rec.x_cont.len() != d_cont || rec.x_disc.len() != codec.disc_tables.len() {
            return Err(Error::Codec(format!(
                "record {i} does not match the fitted codec layout"
            )));
        }
        for (j, &v) in rec.x_cont.iter().enumerate() {
            let (mean, std) = codec.cont[j];
            z_cont[[i, j]] = (v - mean) / std;
        }
        z_cont[[i, d_cont]] = (rec.time.ln_1p() - codec.time.0) / codec.time.1;
        for (c, &idx) in rec.x_disc.iter().enumerate() {
            if idx >= codec.disc_tables[c].len() {
                return Err(Error::Codec(format!(
                    "record {i}: category index {idx} not in the label table of channel {c}"
                )));
            }
            z_disc[c][[i, idx]] = 1.0;
        }
        let ev = codec.disc_tables.len();
        z_disc[ev][[i, rec.event as usize]] = 1.0;
    }
    Ok(EncodedBatch { z_cont, z_disc })
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DecodeSummary {
    /// Times that fell below the floor after the inverse transform.
    pub time_clamps: usize,
}

/// Invert [`encode`]. All discrete rows must be exact mask-free one-hots;
/// a surviving mask state indicates a sampler bug and is an error.
pub fn decode(batch: &EncodedBatch, codec: &CodecStats) -> Result<(Vec<SurvivalRecord>, DecodeSummary)> {
    let n = batch.n_rows();
    let d_cont = codec.d_cont();
    let sizes = codec.channel_sizes();
    if batch.z_cont.ncols() != d_cont + 1 || batch.z_disc.len() != sizes.len() {
        return Err(Error::Codec("batch layout does not match codec".into()));
    }
    let mut summary = DecodeSummary::default();
    let mut records = Vec::with_capacity(n);
    for i in 0..n {
        let mut x_cont = Vec::with_capacity(d_cont);
        for j in 0..d_cont {
            let (mean, std) = codec.cont[j];
            x_cont.push(mean + std * batch.z_cont[[i, j]]);
        }
        let zt = batch.z_cont[[i, d_cont]];
        let mut time = (codec.time.0 + codec.time.1 * zt).exp_m1();
        if time < codec.time_floor {
            time = codec.time_floor;
            summary.time_clamps += 1;
        }
        let mut x_disc = Vec::with_capacity(codec.disc_tables.len());
        let mut event = 0u8;
        for (c, m) in batch.z_disc.iter().enumerate() {
            if m.ncols() != sizes[c] {
                return Err(Error::Codec(format!("channel {c} has wrong width")));
            }
            let idx = one_hot_index(m.row(i)).ok_or_else(|| {
                Error::Codec(format!("row {i} channel {c} is not a valid one-hot row"))
            })?;
            if idx == sizes[c] - 1 {
                return Err(Error::Codec(format!(
                    "row {i} channel {c} is still in the mask state"
                )));
            }
            if c < codec.disc_tables.len() {
                x_disc.push(idx);
            } else {
                event = idx as u8;
            }
        }
        records.push(SurvivalRecord {
            x_cont,
            x_disc,
            event,
            time,
        });
    }
    Ok((records, summary))
}
