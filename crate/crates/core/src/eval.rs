//! Out-of-distribution evaluation and embedding self-similarity heatmaps.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::datagen::Dataset;
use crate::error::{Error, Result};
use crate::model::{Scalar, Transformer};
use crate::tokenizer::{SchemeKind, TokenScheme};
use crate::trainer::{evaluate_rows, ErrorCounts, Predictor};

/// Cosine similarities between the rows of an embedding table.
#[derive(Clone, Debug, PartialEq)]
pub struct SimilarityMatrix {
    pub values: Array2<f64>,
    pub labels: Vec<String>,
    /// Rows that were all zero; their similarities are reported as 0.
    pub zero_rows: Vec<usize>,
    /// Indices where a new block of the layout starts, drawn as lines.
    pub boundaries: Vec<usize>,
}

impl SimilarityMatrix {
    pub fn size(&self) -> usize {
        self.values.nrows()
    }
}

/// Normalizes every row to unit length and returns `A Aᵀ`. The result is
/// exactly symmetric with a unit diagonal (zero rows excepted).
pub fn self_similarity<F: Scalar>(table: ArrayView2<F>, labels: Vec<String>) -> SimilarityMatrix {
    let (rows, cols) = table.dim();
    let mut unit = Array2::<f64>::zeros((rows, cols));
    let mut zero_rows = Vec::new();
    for (r, row) in table.outer_iter().enumerate() {
        let norm = row
            .iter()
            .map(|&v| v.to_f64().unwrap().powi(2))
            .sum::<f64>()
            .sqrt();
        if norm == 0.0 {
            zero_rows.push(r);
            continue;
        }
        for (c, &v) in row.iter().enumerate() {
            unit[[r, c]] = v.to_f64().unwrap() / norm;
        }
    }
    let mut values = Array2::<f64>::zeros((rows, rows));
    for i in 0..rows {
        for j in i..rows {
            let v = if i == j {
                if zero_rows.contains(&i) {
                    0.0
                } else {
                    1.0
                }
            } else {
                unit.row(i).dot(&unit.row(j)).clamp(-1.0, 1.0)
            };
            values[[i, j]] = v;
            values[[j, i]] = v;
        }
    }
    SimilarityMatrix {
        values,
        labels,
        zero_rows,
        boundaries: Vec::new(),
    }
}

fn token_label(scheme: &TokenScheme, token: usize) -> String {
    let t = scheme.transposition_tokens();
    let n = scheme.n;
    if token < t {
        match scheme.kind {
            // Labelled in encoding order, token = i − 1 + n(j − 1).
            SchemeKind::General => format!("s({},{})", token % n + 1, token / n + 1),
            SchemeKind::Adjacent if token == 0 => "id".to_string(),
            SchemeKind::Adjacent => format!("s{token}"),
        }
    } else if token < t + n {
        format!("p{}", token - t + 1)
    } else if token == t + n {
        "Δ".to_string()
    } else {
        "PAD".to_string()
    }
}

/// Token-embedding self-similarity: transposition tokens, then permutation
/// values, then (if `include_special`) Δ and PAD.
pub fn token_similarity<F: Scalar>(model: &Transformer<F>, include_special: bool) -> SimilarityMatrix {
    let scheme = *model.scheme();
    let p = model.params();
    let table = p.mat(p.layout().tok_emb);
    let t = scheme.transposition_tokens();
    let rows = if include_special {
        scheme.vocab_size()
    } else {
        t + scheme.n
    };
    let labels = (0..rows).map(|k| token_label(&scheme, k)).collect();
    let mut m = self_similarity(table.slice(ndarray::s![..rows, ..]), labels);
    m.boundaries = vec![t];
    if include_special {
        m.boundaries.push(t + scheme.n);
    }
    m
}

/// Position-embedding self-similarity over the whole context: word
/// positions, the Δ position, then permutation positions.
pub fn position_similarity<F: Scalar>(model: &Transformer<F>) -> SimilarityMatrix {
    let scheme = *model.scheme();
    let p = model.params();
    let table = p.mat(p.layout().pos_emb);
    let word_len = scheme.word_len();
    let labels = (0..table.nrows())
        .map(|k| {
            if k < word_len {
                format!("x{}", k + 1)
            } else if k == word_len {
                "Δ".to_string()
            } else {
                format!("p{}", k - word_len)
            }
        })
        .collect();
    let mut m = self_similarity(table, labels);
    m.boundaries = vec![word_len, word_len + 1];
    m
}

/// Mean cosine similarity between the embeddings of `s(i,j)` and `s(j,i)`
/// over all `i ≠ j` (general scheme only).
pub fn swapped_pair_similarity<F: Scalar>(model: &Transformer<F>) -> Result<f64> {
    let scheme = *model.scheme();
    if scheme.kind != SchemeKind::General {
        return Err(Error::Config("swapped-pair similarity needs the general scheme".into()));
    }
    let sim = token_similarity(model, false);
    let n = scheme.n;
    let mut total = 0.0;
    let mut count = 0;
    for i in 1..=n {
        for j in (i + 1)..=n {
            let a = i - 1 + n * (j - 1);
            let b = j - 1 + n * (i - 1);
            total += sim.values[[a, b]];
            count += 1;
        }
    }
    Ok(total / count as f64)
}

pub fn heatmap_paths(prefix: &Path) -> (PathBuf, PathBuf) {
    let mut csv = prefix.as_os_str().to_owned();
    csv.push(".csv");
    let mut png = prefix.as_os_str().to_owned();
    png.push(".png");
    (PathBuf::from(csv), PathBuf::from(png))
}

/// Writes `PREFIX.csv` (labelled matrix) and `PREFIX.png` (heatmap with the
/// block boundaries drawn as black lines).
pub fn export_heatmap(matrix: &SimilarityMatrix, prefix: &Path) -> Result<(PathBuf, PathBuf)> {
    if matrix.values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Shape("similarity matrix has non-finite entries".into()));
    }
    let (csv_path, png_path) = heatmap_paths(prefix);
    write_heatmap_csv(matrix, &csv_path)?;
    render_heatmap(matrix).save(&png_path)?;
    Ok((csv_path, png_path))
}

fn write_heatmap_csv(matrix: &SimilarityMatrix, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
    let mut header = vec![String::new()];
    header.extend(matrix.labels.iter().cloned());
    w.write_record(&header)?;
    for (label, row) in matrix.labels.iter().zip(matrix.values.outer_iter()) {
        let mut rec = vec![label.clone()];
        rec.extend(row.iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a matrix written by [`export_heatmap`] back (labels and values).
pub fn read_heatmap_csv(path: &Path) -> Result<(Vec<String>, Array2<f64>)> {
    let mut r = csv::Reader::from_reader(BufReader::new(File::open(path)?));
    let labels: Vec<String> = r.headers()?.iter().skip(1).map(str::to_string).collect();
    let size = labels.len();
    let mut values = Array2::zeros((size, size));
    let mut rows = 0;
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        if i >= size || rec.len() != size + 1 {
            return Err(Error::Shape(format!("heatmap CSV {} is not square", path.display())));
        }
        for (j, field) in rec.iter().skip(1).enumerate() {
            values[[i, j]] = field
                .parse()
                .map_err(|_| Error::Shape(format!("bad number {field:?} in {}", path.display())))?;
        }
        rows += 1;
    }
    if rows != size {
        return Err(Error::Shape(format!("heatmap CSV {} is not square", path.display())));
    }
    Ok((labels, values))
}

/// Blue (−1) through white (0) to red (+1).
fn color(v: f64) -> Rgb<u8> {
    let v = v.clamp(-1.0, 1.0);
    let fade = |x: f64| (255.0 * (1.0 - x)).round() as u8;
    if v >= 0.0 {
        Rgb([255, fade(v), fade(v)])
    } else {
        Rgb([fade(-v), fade(-v), 255])
    }
}

fn render_heatmap(matrix: &SimilarityMatrix) -> RgbImage {
    let n = matrix.size().max(1);
    let cell = (800 / n).clamp(1, 16) as u32;
    let side = n as u32 * cell;
    let mut img = RgbImage::from_fn(side, side, |x, y| {
        let (i, j) = ((y / cell) as usize, (x / cell) as usize);
        matrix.values.get([i, j]).map_or(Rgb([0, 0, 0]), |&v| color(v))
    });
    for &b in &matrix.boundaries {
        let at = (b as u32 * cell).min(side.saturating_sub(1));
        for k in 0..side {
            img.put_pixel(at, k, Rgb([0, 0, 0]));
            img.put_pixel(k, at, Rgb([0, 0, 0]));
        }
    }
    img
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ConditionalError {
    pub rows: usize,
    pub rows_wrong: usize,
    pub error: f64,
}

impl ConditionalError {
    fn from_counts(rows: usize, rows_wrong: usize) -> Self {
        Self {
            rows,
            rows_wrong,
            error: if rows == 0 {
                0.0
            } else {
                rows_wrong as f64 / rows as f64
            },
        }
    }
}

/// Test-set evaluation with the in-subgroup contamination separated out.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OodReport {
    pub scheme: SchemeKind,
    pub n: usize,
    pub m: usize,
    pub counts: ErrorCounts,
    pub full_permutation_error: f64,
    pub single_token_error: f64,
    /// Share of test targets moving at most `m` points.
    pub subgroup_fraction: f64,
    /// Error on targets with support size ≤ m.
    pub within_support_m: ConditionalError,
    /// Error on targets with support size > m.
    pub beyond_support_m: ConditionalError,
}

pub fn evaluate_ood<P: Predictor + ?Sized>(predictor: &P, test_set: &Dataset, m: usize) -> Result<OodReport> {
    let scheme = *test_set.scheme();
    let outcomes = evaluate_rows(predictor, test_set, None)?;
    let counts = ErrorCounts::from_outcomes(&outcomes, scheme.n);
    let (mut in_rows, mut in_wrong, mut out_rows, mut out_wrong) = (0, 0, 0, 0);
    for o in &outcomes {
        if o.support <= m {
            in_rows += 1;
            in_wrong += !o.correct as usize;
        } else {
            out_rows += 1;
            out_wrong += !o.correct as usize;
        }
    }
    Ok(OodReport {
        scheme: scheme.kind,
        n: scheme.n,
        m,
        counts,
        full_permutation_error: counts.full_error(),
        single_token_error: counts.token_error(),
        subgroup_fraction: in_rows as f64 / outcomes.len() as f64,
        within_support_m: ConditionalError::from_counts(in_rows, in_wrong),
        beyond_support_m: ConditionalError::from_counts(out_rows, out_wrong),
    })
}

pub fn write_report(report: &OodReport, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, report)?;
    writeln!(w)?;
    Ok(())
}

pub fn read_report(path: &Path) -> Result<OodReport> {
    let r = BufReader::new(File::open(path)?);
    let text: String = r.lines().collect::<std::io::Result<Vec<_>>>()?.join("\n");
    Ok(serde_json::from_str(&text)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{subgroup_fraction, DataGenConfig, Split};
    use crate::model::ModelConfig;
    use crate::trainer::OraclePredictor;
    use ndarray::array;

    #[test]
    fn orthonormal_rows_give_identity() {
        let t = array![[1.0f64, 0.0, 0.0], [0.0, 2.0, 0.0], [0.0, 0.0, -3.0]];
        let s = self_similarity(t.view(), vec![]);
        assert_eq!(s.values, Array2::<f64>::eye(3));
    }

    #[test]
    fn parallel_rows_are_one_and_zero_rows_flagged() {
        let t = array![[1.0f32, 2.0], [2.0, 4.0], [0.0, 0.0], [-1.0, -2.0]];
        let s = self_similarity(t.view(), vec![]);
        assert!((s.values[[0, 1]] - 1.0).abs() < 1e-12);
        assert!((s.values[[0, 3]] + 1.0).abs() < 1e-12);
        assert_eq!(s.zero_rows, vec![2]);
        assert_eq!(s.values[[2, 2]], 0.0);
    }

    #[test]
    fn matches_hand_cosines() {
        let t = array![[0.3f64, -1.2, 0.5], [2.0, 0.1, -0.7], [-0.4, 0.9, 1.1], [1.5, 1.5, 0.2]];
        let s = self_similarity(t.view(), vec![]);
        for i in 0..4 {
            for j in 0..4 {
                let (a, b) = (t.row(i), t.row(j));
                let want = a.dot(&b) / (a.dot(&a).sqrt() * b.dot(&b).sqrt());
                assert!((s.values[[i, j]] - want).abs() < 1e-6);
                assert_eq!(s.values[[i, j]], s.values[[j, i]]);
            }
        }
    }

    #[test]
    fn heatmap_sizes_and_csv_round_trip() {
        let scheme = TokenScheme::general(5).unwrap();
        let model: Transformer<f32> = Transformer::new(ModelConfig::new(scheme, 16, 2, 1), 2).unwrap();
        let tok = token_similarity(&model, true);
        assert_eq!(tok.size(), scheme.vocab_size());
        assert_eq!(token_similarity(&model, false).size(), 25 + 5);
        assert_eq!(tok.labels[1], "s(2,1)");
        let pos = position_similarity(&model);
        assert_eq!(pos.size(), scheme.context_len());
        let dir = tempfile::tempdir().unwrap();
        let (csv, png) = export_heatmap(&tok, &dir.path().join("tok")).unwrap();
        assert!(png.exists());
        let (labels, values) = read_heatmap_csv(&csv).unwrap();
        assert_eq!(labels, tok.labels);
        assert_eq!(values, tok.values);
    }

    #[test]
    fn oracle_ood_report() {
        let scheme = TokenScheme::general(6).unwrap();
        let test = Dataset::generate(&DataGenConfig::new(scheme, 3, 2000, 4, Split::Test)).unwrap();
        let r = evaluate_ood(&OraclePredictor { scheme }, &test, 3).unwrap();
        assert_eq!(r.full_permutation_error, 0.0);
        assert_eq!(r.single_token_error, 0.0);
        assert_eq!(r.subgroup_fraction, subgroup_fraction(&test, 3).unwrap());
        assert_eq!(r.within_support_m.rows + r.beyond_support_m.rows, 2000);
    }
}
