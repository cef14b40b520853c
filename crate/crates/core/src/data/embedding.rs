use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::ndiff::Tensor;
use crate::rng;

const MAX_RESAMPLES: usize = 1000;

#[derive(Clone, Debug, PartialEq)]
pub enum Provenance {
    Synthetic { seed: u64 },
    File,
}

/// `n × C` class embeddings with unit-norm rows, used as frozen head weights.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    rows: Tensor,
    provenance: Provenance,
}

impl EmbeddingTable {
    pub fn new(rows: Tensor, provenance: Provenance) -> Result<Self> {
        if rows.rank() != 2 || rows.rows() < 2 {
            return Err(Error::dim("embedding table", rows.shape(), &[]));
        }
        for i in 0..rows.rows() {
            let norm = rows.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
            if (norm - 1.0).abs() > 1e-9 {
                return Err(Error::contract(format!(
                    "embedding row {i} has norm {norm}"
                )));
            }
        }
        Ok(Self { rows, provenance })
    }

    pub fn rows(&self) -> &Tensor {
        &self.rows
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    pub fn num_classes(&self) -> usize {
        self.rows.rows()
    }

    pub fn dim(&self) -> usize {
        self.rows.cols()
    }

    /// Largest cosine similarity between two distinct rows.
    pub fn max_pairwise_cosine(&self) -> f64 {
        let n = self.num_classes();
        let mut worst = f64::NEG_INFINITY;
        for i in 0..n {
            for j in i + 1..n {
                worst = worst.max(dot(self.rows.row(i), self.rows.row(j)));
            }
        }
        worst
    }

    /// Header `n C`, then one space-separated row per class.
    pub fn to_text(&self) -> String {
        let mut out = format!("{} {}\n", self.num_classes(), self.dim());
        for i in 0..self.num_classes() {
            let row: Vec<String> = self.rows.row(i).iter().map(|v| format!("{v:?}")).collect();
            out.push_str(&row.join(" "));
            out.push('\n');
        }
        out
    }

    pub fn parse_text(text: &str) -> Result<Self> {
        let bad = |reason: String| Error::Format { offset: 0, reason };
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines
            .next()
            .ok_or_else(|| bad("empty embedding file".into()))?;
        let dims: Vec<usize> = header
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| bad(format!("bad header '{header}'"))))
            .collect::<Result<_>>()?;
        let [n, c] = dims[..] else {
            return Err(bad(format!("header must be 'n C', got '{header}'")));
        };
        let mut data = Vec::with_capacity(n * c);
        for (i, line) in lines.enumerate() {
            let row: Vec<f64> = line
                .split_whitespace()
                .map(|t| {
                    t.parse()
                        .map_err(|_| bad(format!("row {i}: bad number '{t}'")))
                })
                .collect::<Result<_>>()?;
            if row.len() != c {
                return Err(bad(format!(
                    "row {i} has {} values, expected {c}",
                    row.len()
                )));
            }
            data.extend(row);
        }
        if data.len() != n * c {
            return Err(bad(format!(
                "expected {n} rows, got {}",
                data.len() / c.max(1)
            )));
        }
        Self::new(Tensor::matrix(n, c, data)?, Provenance::File)
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn normalize(v: &mut [f64]) {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
}

pub(crate) fn random_unit<R: Rng>(rng: &mut R, dim: usize) -> Vec<f64> {
    loop {
        let mut v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        if v.iter().any(|x| *x != 0.0) {
            normalize(&mut v);
            return v;
        }
    }
}

/// Simulated prompt-ensembled class embeddings.
///
/// Each class draws a base direction; `drafts` noisy copies (σ = `noise`)
/// stand in for the per-template encodings and are averaged and
/// re-normalized. A class is redrawn while its cosine with an earlier class
/// exceeds `ceiling`.
pub fn synth_class_embeddings(
    n: usize,
    dim: usize,
    drafts: usize,
    noise: f64,
    ceiling: f64,
    seed: u64,
) -> Result<EmbeddingTable> {
    if n < 2 || dim < 8 || drafts == 0 {
        return Err(Error::contract(format!(
            "need n ≥ 2, C ≥ 8, drafts ≥ 1 (got n={n}, C={dim}, drafts={drafts})"
        )));
    }
    let mut rng = rng::stream(seed, "embeddings", 0);
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(n);
    for class in 0..n {
        let mut accepted = None;
        for _ in 0..MAX_RESAMPLES {
            let base = random_unit(&mut rng, dim);
            let mut avg = vec![0.0; dim];
            for _ in 0..drafts {
                for (a, b) in avg.iter_mut().zip(&base) {
                    let eps: f64 = rng.sample(StandardNormal);
                    *a += b + noise * eps;
                }
            }
            if drafts == 1 && noise == 0.0 {
                avg = base;
            } else {
                normalize(&mut avg);
            }
            if rows.iter().all(|r| dot(r, &avg) <= ceiling) {
                accepted = Some(avg);
                break;
            }
        }
        match accepted {
            Some(row) => rows.push(row),
            None => {
                return Err(Error::Capacity(format!(
                    "could not place class {class} of {n} in {dim} dimensions under cosine ceiling {ceiling}"
                )))
            }
        }
    }
    let table = Tensor::from_rows(&rows)?;
    EmbeddingTable::new(table, Provenance::Synthetic { seed })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_noiseless_draft_keeps_raw_samples() {
        let t = synth_class_embeddings(4, 16, 1, 0.0, 1.0, 3).unwrap();
        let mut rng = rng::stream(3, "embeddings", 0);
        let first = random_unit(&mut rng, 16);
        assert_eq!(t.rows().row(0), &first[..]);
    }

    #[test]
    fn prompt_averaged_table_respects_ceiling() {
        let t = synth_class_embeddings(8, 32, 85, 0.1, 0.5, 11).unwrap();
        assert!(t.max_pairwise_cosine() <= 0.5);
        for i in 0..8 {
            let norm = dot(t.rows().row(i), t.rows().row(i)).sqrt();
            assert!((norm - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn impossible_ceiling_is_a_capacity_error() {
        let r = synth_class_embeddings(40, 8, 1, 0.0, -0.5, 1);
        assert!(matches!(r, Err(Error::Capacity(_))));
    }

    #[test]
    fn text_round_trip_is_exact() {
        let t = synth_class_embeddings(9, 32, 85, 0.1, 0.5, 5).unwrap();
        let back = EmbeddingTable::parse_text(&t.to_text()).unwrap();
        assert_eq!(back.rows(), t.rows());
        assert!(EmbeddingTable::parse_text("2 8\n1 0 0\n").is_err());
    }
}
