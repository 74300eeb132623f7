//! CSV ingestion, synthetic one-source/multi-target problems, and result export.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::num::Float;
use crate::solver::SktrResult;
use crate::source::{from_row_major, row_major};
use crate::types::{Dataset, SharedState, SolverConfig, TargetState};

/// Reads one sample per row; when `has_labels` the last column is an
/// integer class label. A first row with no numeric cell is a header.
pub fn read_csv<T: Float, R: Read>(
    reader: R,
    has_labels: bool,
    domain_id: &str,
) -> Result<Dataset<T>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut values: Vec<f64> = Vec::new();
    let mut labels: Vec<usize> = Vec::new();
    let mut width: Option<usize> = None;
    let mut samples = 0usize;
    for (idx, record) in rdr.records().enumerate() {
        let record = record?;
        let row = idx + 1;
        if record.iter().all(|c| c.is_empty()) {
            continue;
        }
        if idx == 0 && record.iter().all(|c| c.parse::<f64>().is_err()) {
            continue;
        }
        match width {
            None => width = Some(record.len()),
            Some(w) if w != record.len() => {
                return Err(Error::Parse {
                    row,
                    col: record.len().min(w) + 1,
                    msg: format!("expected {w} columns, found {}", record.len()),
                })
            }
            _ => {}
        }
        let n_features = if has_labels {
            if record.len() < 2 {
                return Err(Error::Parse {
                    row,
                    col: 1,
                    msg: "a labeled row needs at least one feature and a label".into(),
                });
            }
            record.len() - 1
        } else {
            record.len()
        };
        for (c, cell) in record.iter().take(n_features).enumerate() {
            let v: f64 = cell.parse().map_err(|_| Error::Parse {
                row,
                col: c + 1,
                msg: format!("not a number: {cell:?}"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    row,
                    col: c + 1,
                    msg: format!("non-finite value {cell:?}"),
                });
            }
            values.push(v);
        }
        if has_labels {
            let cell = &record[n_features];
            let label: usize = cell.parse().map_err(|_| Error::Parse {
                row,
                col: n_features + 1,
                msg: format!("not a non-negative integer label: {cell:?}"),
            })?;
            labels.push(label);
        }
        samples += 1;
    }
    let Some(width) = width else {
        return Err(Error::Parse {
            row: 1,
            col: 1,
            msg: "no data rows".into(),
        });
    };
    let d = if has_labels { width - 1 } else { width };
    // rows are samples; transpose into d × N
    let features = DMatrix::from_iterator(d, samples, values.into_iter().map(T::lit));
    Dataset::new(features, has_labels.then_some(labels), domain_id)
}

pub fn load_csv<T: Float>(path: impl AsRef<Path>, has_labels: bool) -> Result<Dataset<T>> {
    let path = path.as_ref();
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    read_csv(fs::File::open(path)?, has_labels, &id)
}

/// Inverse of [`read_csv`]; floats are written in shortest round-trip form.
pub fn write_csv<T: Float, W: Write>(data: &Dataset<T>, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for i in 0..data.len() {
        let mut row: Vec<String> = data
            .features
            .column(i)
            .iter()
            .map(|x| x.wide().to_string())
            .collect();
        if let Some(labels) = &data.labels {
            row.push(labels[i].to_string());
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_csv<T: Float>(data: &Dataset<T>, path: impl AsRef<Path>) -> Result<()> {
    write_csv(data, fs::File::create(path)?)
}

/// One label per line.
pub fn save_labels(labels: &[usize], path: impl AsRef<Path>) -> Result<()> {
    let mut text = String::with_capacity(labels.len() * 2);
    for l in labels {
        text.push_str(&l.to_string());
        text.push('\n');
    }
    fs::write(path, text)?;
    Ok(())
}

pub fn load_labels(path: impl AsRef<Path>) -> Result<Vec<usize>> {
    let text = fs::read_to_string(path)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            l.trim().parse().map_err(|_| Error::Parse {
                row: i + 1,
                col: 1,
                msg: format!("not a label: {l:?}"),
            })
        })
        .collect()
}

/// Parameters of a synthetic one-source/multi-target problem.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub dim: usize,
    pub classes: usize,
    pub per_class: usize,
    pub targets: usize,
    /// Distance of every class mean from the origin.
    pub separation: f64,
    /// Standard deviation of each source class.
    pub class_std: f64,
    /// Rotation magnitude (radians) of the source-to-target transforms.
    pub angle: f64,
    /// Norm of the source-to-target translation.
    pub offset: f64,
    /// Per-target additive noise.
    pub sigma: f64,
    /// 1 makes every target share one transform, 0 draws them independently.
    pub relatedness: f64,
    /// Subtract each domain's feature mean after generation.
    pub center: bool,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            dim: 5,
            classes: 3,
            per_class: 50,
            targets: 3,
            separation: 3.0,
            class_std: 1.0,
            angle: 0.5,
            offset: 0.0,
            sigma: 0.1,
            relatedness: 0.9,
            center: true,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SyntheticProblem<T: Float> {
    /// Labeled source samples.
    pub source: Dataset<T>,
    /// Target samples; labels are ground truth for evaluation only.
    pub targets: Vec<Dataset<T>>,
}

fn gaussian_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

/// Unit-Frobenius skew-symmetric generator.
fn skew_generator(d: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let g = gaussian_matrix(d, d, rng);
    let s = (&g - g.transpose()) * 0.5;
    let n = s.norm();
    if n > 0.0 {
        s / n
    } else {
        s
    }
}

fn unit_vector(d: usize, rng: &mut ChaCha8Rng) -> DVector<f64> {
    loop {
        let v = DVector::from_fn(d, |_, _| StandardNormal.sample(rng));
        let n: f64 = v.norm();
        if n > 1e-8 {
            return v / n;
        }
    }
}

/// Generates a labeled Gaussian-mixture source and `targets` transformed
/// copies of the same samples. Target `m` is rotated by
/// `exp(angle·(ρ·S + (1−ρ)·S_m))` and shifted by `offset·(ρ·o + (1−ρ)·o_m)`
/// (shared `S`, `o`; per-target `S_m`, `o_m`), then perturbed with noise.
pub fn gen_1smt<T: Float>(spec: &SyntheticSpec) -> Result<SyntheticProblem<T>> {
    let rho = spec.relatedness;
    if !(0.0..=1.0).contains(&rho) {
        return Err(Error::InvalidArgument(format!(
            "relatedness must lie in [0, 1], got {rho}"
        )));
    }
    if spec.dim == 0 || spec.classes < 2 || spec.per_class == 0 || spec.targets == 0 {
        return Err(Error::InvalidArgument(format!(
            "need dim >= 1, classes >= 2, per_class >= 1, targets >= 1; got {spec:?}"
        )));
    }
    for (name, v) in [
        ("separation", spec.separation),
        ("class_std", spec.class_std),
        ("sigma", spec.sigma),
        ("offset", spec.offset),
    ] {
        if !(v >= 0.0 && v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "{name} must be finite and >= 0, got {v}"
            )));
        }
    }
    let d = spec.dim;
    let n = spec.classes * spec.per_class;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let means: Vec<DVector<f64>> = (0..spec.classes)
        .map(|_| unit_vector(d, &mut rng) * spec.separation)
        .collect();
    let labels: Vec<usize> = (0..n).map(|i| i / spec.per_class).collect();
    let noise = gaussian_matrix(d, n, &mut rng) * spec.class_std;
    let base = DMatrix::from_fn(d, n, |r, i| means[labels[i]][r] + noise[(r, i)]);

    let shared_gen = skew_generator(d, &mut rng);
    let shared_shift = unit_vector(d, &mut rng);
    let mut targets = Vec::with_capacity(spec.targets);
    for m in 0..spec.targets {
        // independent stream per target so ρ only changes the mixing
        let mut trng = ChaCha8Rng::seed_from_u64(
            spec.seed
                .wrapping_add(1 + m as u64)
                .wrapping_mul(0x9e37_79b9_7f4a_7c15),
        );
        let own_gen = skew_generator(d, &mut trng);
        let own_shift = unit_vector(d, &mut trng);
        let rotation = ((&shared_gen * rho + own_gen * (1.0 - rho)) * spec.angle).exp();
        let shift = (&shared_shift * rho + own_shift * (1.0 - rho)) * spec.offset;
        let jitter = gaussian_matrix(d, n, &mut trng) * spec.sigma;
        let mut x = &rotation * &base + jitter;
        for mut col in x.column_iter_mut() {
            col += &shift;
        }
        let target = Dataset::new(
            x.map(T::lit),
            Some(labels.clone()),
            format!("target{}", m + 1),
        )?;
        targets.push(if spec.center {
            target.centered()
        } else {
            target
        });
    }
    let source = Dataset::new(base.map(T::lit), Some(labels), "source")?;
    let source = if spec.center {
        source.centered()
    } else {
        source
    };
    Ok(SyntheticProblem { source, targets })
}

/// Row-major matrix record used in the JSON artifacts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatrixRecord {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl MatrixRecord {
    pub fn from_matrix<T: Float>(m: &DMatrix<T>) -> Self {
        Self {
            rows: m.nrows(),
            cols: m.ncols(),
            data: row_major(m),
        }
    }

    pub fn to_matrix<T: Float>(&self) -> Result<DMatrix<T>> {
        from_row_major(self.rows, self.cols, &self.data)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TargetRecord {
    pub domain_id: String,
    pub w_t: MatrixRecord,
    pub u: MatrixRecord,
    pub v_src: MatrixRecord,
    pub v_dict: MatrixRecord,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SharedRecord {
    pub q: MatrixRecord,
    pub dict: MatrixRecord,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultMeta {
    /// Seconds since the Unix epoch. The only field that differs between
    /// otherwise identical runs.
    pub generated_at: u64,
    pub nmi_normalization: String,
}

/// JSON form of a solver run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub meta: ResultMeta,
    pub seed: u64,
    pub config: SolverConfig,
    pub converged: bool,
    pub iters: usize,
    pub objective_trace: Vec<f64>,
    pub shared: SharedRecord,
    pub targets: Vec<TargetRecord>,
}

impl ResultRecord {
    pub fn new<T: Float>(
        result: &SktrResult<T>,
        domain_ids: &[String],
        cfg: &SolverConfig,
    ) -> Self {
        let generated_at = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map_or(0, |d| d.as_secs());
        Self {
            meta: ResultMeta {
                generated_at,
                nmi_normalization: crate::metrics::NMI_NORMALIZATION.to_owned(),
            },
            seed: cfg.seed,
            config: cfg.clone(),
            converged: result.converged,
            iters: result.iters,
            objective_trace: result.objective_trace.clone(),
            shared: SharedRecord {
                q: MatrixRecord::from_matrix(&result.shared.q),
                dict: MatrixRecord::from_matrix(&result.shared.dict),
            },
            targets: result
                .targets
                .iter()
                .enumerate()
                .map(|(m, t)| TargetRecord {
                    domain_id: domain_ids
                        .get(m)
                        .cloned()
                        .unwrap_or_else(|| format!("target{}", m + 1)),
                    w_t: MatrixRecord::from_matrix(&t.w_t),
                    u: MatrixRecord::from_matrix(&t.u),
                    v_src: MatrixRecord::from_matrix(&t.v_src),
                    v_dict: MatrixRecord::from_matrix(&t.v_dict),
                })
                .collect(),
        }
    }

    pub fn to_state<T: Float>(&self) -> Result<(SharedState<T>, Vec<TargetState<T>>)> {
        let shared = SharedState {
            q: self.shared.q.to_matrix()?,
            dict: self.shared.dict.to_matrix()?,
        };
        let targets = self
            .targets
            .iter()
            .map(|t| {
                Ok(TargetState {
                    w_t: t.w_t.to_matrix()?,
                    u: t.u.to_matrix()?,
                    v_src: t.v_src.to_matrix()?,
                    v_dict: t.v_dict.to_matrix()?,
                })
            })
            .collect::<Result<_>>()?;
        Ok((shared, targets))
    }
}

/// Per-cycle evaluation row of the trace CSV.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TraceRow {
    pub cycle: usize,
    pub objective: f64,
    /// One `(accuracy, nmi)` pair per target; empty when targets are unlabeled.
    pub metrics: Vec<(f64, f64)>,
}

pub const RESULT_FILE: &str = "result.json";
pub const TRACE_FILE: &str = "trace.csv";

/// Writes `result.json` (full state) and `trace.csv` (one row per cycle)
/// into `dir`, creating it when missing.
pub fn export_results(
    record: &ResultRecord,
    trace: &[TraceRow],
    dir: impl AsRef<Path>,
) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    fs::write(
        dir.join(RESULT_FILE),
        serde_json::to_string_pretty(record)? + "\n",
    )?;

    let mut w = csv::Writer::from_path(dir.join(TRACE_FILE))?;
    let m = trace.iter().map(|r| r.metrics.len()).max().unwrap_or(0);
    let mut header = vec!["cycle".to_owned(), "objective".to_owned()];
    for t in 1..=m {
        header.push(format!("accuracy_t{t}"));
        header.push(format!("nmi_t{t}"));
    }
    w.write_record(&header)?;
    for row in trace {
        let mut rec = vec![row.cycle.to_string(), row.objective.to_string()];
        for (acc, nmi) in &row.metrics {
            rec.push(acc.to_string());
            rec.push(nmi.to_string());
        }
        rec.resize(header.len(), String::new());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_rows_three_columns() {
        let data: Dataset<f64> = read_csv("1,2,3\n4,5,6\n".as_bytes(), false, "x").unwrap();
        assert_eq!(data.features.shape(), (3, 2));
        assert_eq!(data.features[(2, 1)], 6.0);
    }

    #[test]
    fn header_row_is_skipped() {
        let data: Dataset<f64> =
            read_csv("a,b,label\n1,2,0\n3,4,1\n".as_bytes(), true, "x").unwrap();
        assert_eq!(data.features.shape(), (2, 2));
        assert_eq!(data.labels, Some(vec![0, 1]));
    }

    #[test]
    fn malformed_cell_reports_coordinates() {
        let err = read_csv::<f64, _>("1,2\nabc,3\n".as_bytes(), false, "x").unwrap_err();
        match err {
            Error::Parse { row, col, .. } => assert_eq!((row, col), (2, 1)),
            e => panic!("unexpected {e:?}"),
        }
    }

    #[test]
    fn ragged_rows_rejected() {
        assert!(matches!(
            read_csv::<f64, _>("1,2\n3\n".as_bytes(), false, "x"),
            Err(Error::Parse { row: 2, .. })
        ));
    }

    #[test]
    fn non_finite_rejected() {
        assert!(matches!(
            read_csv::<f64, _>("1,NaN\n".as_bytes(), false, "x"),
            Err(Error::Parse { row: 1, col: 2, .. })
        ));
    }

    #[test]
    fn empty_input_rejected() {
        assert!(matches!(
            read_csv::<f64, _>("".as_bytes(), false, "x"),
            Err(Error::Parse { .. })
        ));
    }

    #[test]
    fn bad_relatedness_rejected() {
        let spec = SyntheticSpec {
            relatedness: 1.5,
            ..SyntheticSpec::default()
        };
        assert!(matches!(
            gen_1smt::<f64>(&spec),
            Err(Error::InvalidArgument(_))
        ));
    }
}
