//! On-disk formats: dense CSV matrices, plain PGM heatmaps, JSON weights,
//! manifests and verification reports.
//!
//! Every file is written to a sibling temporary and renamed into place, so a
//! reader never observes a half-written artifact.

use std::fs;
use std::io::Write;
use std::path::Path;

use anyhow::{bail, Context, Result};
use otlab_core::transformer::{AttentionHead, LayerWeights, Transformer};
use otlab_core::Matrix;
use serde::{Deserialize, Serialize};

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let name = path.file_name().context("output path has no file name")?;
    let tmp = dir.join(format!(".{}.tmp", name.to_string_lossy()));
    {
        let mut f = fs::File::create(&tmp).with_context(|| format!("writing {}", tmp.display()))?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path).with_context(|| format!("renaming into {}", path.display()))?;
    Ok(())
}

/// First line `rows,cols`, then one comma-separated row per line. Values
/// use the shortest round-trip exponent form, so a read-back is exact.
pub fn matrix_to_csv(m: &Matrix) -> String {
    let mut s = format!("{},{}\n", m.rows(), m.cols());
    for i in 0..m.rows() {
        let row: Vec<String> = m.row(i).iter().map(|v| format!("{v:e}")).collect();
        s.push_str(&row.join(","));
        s.push('\n');
    }
    s
}

pub fn csv_to_matrix(text: &str) -> Result<Matrix> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines.next().context("empty CSV")?;
    let (r, c) = header.split_once(',').context("CSV header must be `rows,cols`")?;
    let (rows, cols): (usize, usize) = (r.trim().parse()?, c.trim().parse()?);
    let mut data = Vec::with_capacity(rows * cols);
    for (i, line) in lines.enumerate() {
        let vals: Vec<f64> = line
            .split(',')
            .map(|v| v.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .with_context(|| format!("CSV row {i}"))?;
        if vals.len() != cols {
            bail!("CSV row {i} has {} values, expected {cols}", vals.len());
        }
        data.extend(vals);
    }
    Ok(Matrix::from_row_major(rows, cols, data)?)
}

pub fn write_csv(path: &Path, m: &Matrix) -> Result<()> {
    write_atomic(path, matrix_to_csv(m).as_bytes())
}

pub fn read_csv(path: &Path) -> Result<Matrix> {
    csv_to_matrix(&fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?)
}

/// Plain (P2) greymap, linearly scaled so the smallest entry is black and
/// the largest white. The comment line records the original range.
pub fn matrix_to_pgm(m: &Matrix) -> String {
    let (lo, hi) = (m.min(), m.max());
    let span = hi - lo;
    let mut s = format!("P2\n# min={lo:e} max={hi:e}\n{} {}\n255\n", m.cols(), m.rows());
    for i in 0..m.rows() {
        let row: Vec<String> = m
            .row(i)
            .iter()
            .map(|v| {
                let g = if span > 0.0 {
                    ((v - lo) / span * 255.0).round()
                } else {
                    0.0
                };
                (g as u8).to_string()
            })
            .collect();
        s.push_str(&row.join(" "));
        s.push('\n');
    }
    s
}

pub fn write_pgm(path: &Path, m: &Matrix) -> Result<()> {
    write_atomic(path, matrix_to_pgm(m).as_bytes())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

/// Nested-array form of a matrix for JSON.
fn rows_of(m: &Matrix) -> Vec<Vec<f64>> {
    (0..m.rows()).map(|i| m.row(i).to_vec()).collect()
}

fn matrix_of(rows: &[Vec<f64>], what: &str) -> Result<Matrix> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|row| row.len() != c) {
        bail!("{what}: ragged rows");
    }
    Ok(Matrix::from_row_major(r, c, rows.concat())?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[allow(non_snake_case)]
pub struct LayerFile {
    pub Q1: Vec<Vec<f64>>,
    pub Q2: Vec<Vec<f64>>,
    pub Wv1: Vec<Vec<f64>>,
    pub Wv2: Vec<Vec<f64>>,
    pub B1: Vec<Vec<f64>>,
    pub B2: Vec<Vec<f64>>,
    pub Wf: Vec<Vec<f64>>,
}

/// `{d, lambda, gamma, layers: [...]}`; a single layer is reused at every
/// depth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightsFile {
    pub d: usize,
    pub lambda: f64,
    pub gamma: f64,
    pub layers: Vec<LayerFile>,
}

impl WeightsFile {
    pub fn from_model(model: &Transformer, d: usize, lambda: f64, gamma: f64) -> Self {
        let layers = model
            .layers()
            .iter()
            .map(|l| LayerFile {
                Q1: rows_of(&l.heads[0].q),
                Q2: rows_of(&l.heads[1].q),
                Wv1: rows_of(&l.heads[0].wv),
                Wv2: rows_of(&l.heads[1].wv),
                B1: rows_of(&l.mix[0]),
                B2: rows_of(&l.mix[1]),
                Wf: rows_of(&l.wf),
            })
            .collect();
        Self {
            d,
            lambda,
            gamma,
            layers,
        }
    }

    pub fn to_model(&self) -> Result<Transformer> {
        let layers = self
            .layers
            .iter()
            .enumerate()
            .map(|(k, l)| -> Result<LayerWeights> {
                let m = |rows: &[Vec<f64>], name: &str| matrix_of(rows, &format!("layer {k} {name}"));
                Ok(LayerWeights {
                    heads: [
                        AttentionHead {
                            q: m(&l.Q1, "Q1")?,
                            wv: m(&l.Wv1, "Wv1")?,
                        },
                        AttentionHead {
                            q: m(&l.Q2, "Q2")?,
                            wv: m(&l.Wv2, "Wv2")?,
                        },
                    ],
                    mix: [m(&l.B1, "B1")?, m(&l.B2, "B2")?],
                    wf: m(&l.Wf, "Wf")?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let model = Transformer::new(layers)?;
        if model.width() != 2 * self.d + 9 {
            bail!(
                "weights have width {} but d = {} needs {}",
                model.width(),
                self.d,
                2 * self.d + 9
            );
        }
        Ok(model)
    }
}
