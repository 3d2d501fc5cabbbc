//! Pseudoword vectors sampled at a calibrated distance from the `[MASK]`
//! embedding.
//!
//! With `z` the static embeddings and `d = alpha * min_{t != MASK} |z_t -
//! z_MASK|`, every sampled vector `v` satisfies `|v - z_MASK| = d` (sphere
//! mode) or `<= d` (ball mode), and every two sampled vectors are at least
//! `d` apart.

use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::backend::PseudoVectors;
use crate::util::seeded_rng;

pub const DEFAULT_ALPHA: f64 = 0.5;
pub const DEFAULT_PAIRS: usize = 10;
/// Rejection attempts allowed per vector.
pub const DEFAULT_BUDGET: usize = 100_000;

const MAGIC: &[u8; 4] = b"OPEM";
const VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum PseudowordError {
    #[error("alpha must lie in (0, 1), got {0}")]
    Alpha(f64),
    #[error("count must be at least 1")]
    ZeroCount,
    #[error("embedding table is degenerate: {0}")]
    Degenerate(String),
    #[error("rejection budget of {budget} attempts exhausted after placing {placed} of {count} vectors in dimension {dimension}")]
    BudgetExhausted {
        budget: usize,
        placed: usize,
        count: usize,
        dimension: usize,
    },
    #[error("embedding table file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Static token embeddings, one row per vocabulary entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingTable {
    pub dimension: usize,
    pub mask_index: usize,
    pub rows: Vec<Vec<f32>>,
}

impl EmbeddingTable {
    pub fn new(rows: Vec<Vec<f32>>, mask_index: usize) -> Result<Self, PseudowordError> {
        let dimension = rows.first().map(Vec::len).unwrap_or(0);
        let t = EmbeddingTable {
            dimension,
            mask_index,
            rows,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<(), PseudowordError> {
        if self.dimension == 0 {
            return Err(PseudowordError::Degenerate("zero dimension".into()));
        }
        if self.mask_index >= self.rows.len() {
            return Err(PseudowordError::Degenerate(format!(
                "mask index {} outside {} rows",
                self.mask_index,
                self.rows.len()
            )));
        }
        for (i, r) in self.rows.iter().enumerate() {
            if r.len() != self.dimension {
                return Err(PseudowordError::Degenerate(format!(
                    "row {i} has dimension {} instead of {}",
                    r.len(),
                    self.dimension
                )));
            }
            if r.iter().any(|x| !x.is_finite()) {
                return Err(PseudowordError::Degenerate(format!("row {i} is not finite")));
            }
        }
        Ok(())
    }

    pub fn mask(&self) -> &[f32] {
        &self.rows[self.mask_index]
    }

    /// Binary layout, little-endian: magic `OPEM`, `u32` version (1), `u32`
    /// vocabulary size, `u32` dimension, `u32` mask row index, then
    /// vocabulary-size rows of `dimension` `f32` values.
    pub fn write_to(&self, out: &mut impl Write) -> Result<(), PseudowordError> {
        out.write_all(MAGIC)?;
        for v in [VERSION as usize, self.rows.len(), self.dimension, self.mask_index] {
            let v = u32::try_from(v).map_err(|_| PseudowordError::Format("header field exceeds u32".into()))?;
            out.write_all(&v.to_le_bytes())?;
        }
        for r in &self.rows {
            for x in r {
                out.write_all(&x.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from(input: &mut impl Read) -> Result<Self, PseudowordError> {
        let mut magic = [0u8; 4];
        input.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(PseudowordError::Format("bad magic".into()));
        }
        let mut u = || -> Result<usize, PseudowordError> {
            let mut b = [0u8; 4];
            input.read_exact(&mut b)?;
            Ok(u32::from_le_bytes(b) as usize)
        };
        let version = u()?;
        if version != VERSION as usize {
            return Err(PseudowordError::Format(format!("unsupported version {version}")));
        }
        let (vocab, dimension, mask_index) = (u()?, u()?, u()?);
        let mut rows = Vec::with_capacity(vocab);
        let mut buf = vec![0u8; dimension * 4];
        for _ in 0..vocab {
            input.read_exact(&mut buf)?;
            rows.push(
                buf.chunks_exact(4)
                    .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                    .collect(),
            );
        }
        let t = EmbeddingTable {
            dimension,
            mask_index,
            rows,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, PseudowordError> {
        let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
        EmbeddingTable::read_from(&mut f)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), PseudowordError> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut f)?;
        f.flush()?;
        Ok(())
    }
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn to_f64(v: &[f32]) -> Vec<f64> {
    v.iter().map(|&x| f64::from(x)).collect()
}

/// `alpha` times the distance from `[MASK]` to its nearest other token.
pub fn sampling_distance(table: &EmbeddingTable, alpha: f64) -> Result<f64, PseudowordError> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(PseudowordError::Alpha(alpha));
    }
    table.validate()?;
    let mask = to_f64(table.mask());
    let min = table
        .rows
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != table.mask_index)
        .map(|(_, r)| distance(&to_f64(r), &mask))
        .fold(f64::INFINITY, f64::min);
    if !min.is_finite() {
        return Err(PseudowordError::Degenerate("no token besides [MASK]".into()));
    }
    if min == 0.0 {
        return Err(PseudowordError::Degenerate("a token coincides with [MASK]".into()));
    }
    Ok(alpha * min)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleMode {
    /// Exactly at distance d.
    #[default]
    Sphere,
    /// Uniform within the ball of radius d.
    Ball,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudowordSet {
    pub seed: u64,
    pub alpha: f64,
    pub d: f64,
    pub mode: SampleMode,
    pub dimension: usize,
    pub vectors: Vec<Vec<f64>>,
}

impl PseudowordSet {
    /// Vectors for pair `k`, bound to placeholders `X` and `Y`.
    pub fn pair(&self, k: usize) -> Option<PseudoVectors> {
        let x = self.vectors.get(2 * k)?;
        let y = self.vectors.get(2 * k + 1)?;
        Some([("X".to_string(), x.clone()), ("Y".to_string(), y.clone())].into())
    }

    pub fn pair_count(&self) -> usize {
        self.vectors.len() / 2
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, PseudowordError> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| PseudowordError::Format(e.to_string()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), PseudowordError> {
        let text = serde_json::to_string_pretty(self).map_err(|e| PseudowordError::Format(e.to_string()))?;
        std::fs::write(path, text + "\n")?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SampleOptions {
    pub alpha: f64,
    pub mode: SampleMode,
    pub budget: usize,
}

impl Default for SampleOptions {
    fn default() -> Self {
        SampleOptions {
            alpha: DEFAULT_ALPHA,
            mode: SampleMode::Sphere,
            budget: DEFAULT_BUDGET,
        }
    }
}

fn unit_vector(rng: &mut impl Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

pub fn sample_pseudowords(
    table: &EmbeddingTable,
    count: usize,
    seed: u64,
    opts: SampleOptions,
) -> Result<PseudowordSet, PseudowordError> {
    if count == 0 {
        return Err(PseudowordError::ZeroCount);
    }
    let d = sampling_distance(table, opts.alpha)?;
    let mask = to_f64(table.mask());
    let dim = table.dimension;
    let mut rng = seeded_rng(seed, "pseudowords");
    let mut vectors: Vec<Vec<f64>> = Vec::with_capacity(count);
    while vectors.len() < count {
        let mut placed = false;
        for _ in 0..opts.budget {
            let u = unit_vector(&mut rng, dim);
            let radius = match opts.mode {
                SampleMode::Sphere => d,
                SampleMode::Ball => d * rng.random::<f64>().powf(1.0 / dim as f64),
            };
            let v: Vec<f64> = mask.iter().zip(&u).map(|(m, x)| m + radius * x).collect();
            if vectors.iter().all(|w| distance(w, &v) >= d) {
                vectors.push(v);
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(PseudowordError::BudgetExhausted {
                budget: opts.budget,
                placed: vectors.len(),
                count,
                dimension: dim,
            });
        }
    }
    Ok(PseudowordSet {
        seed,
        alpha: opts.alpha,
        d,
        mode: opts.mode,
        dimension: dim,
        vectors,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn table(rows: Vec<Vec<f32>>, mask: usize) -> EmbeddingTable {
        EmbeddingTable::new(rows, mask).unwrap()
    }

    #[test]
    fn nearest_at_two_gives_one() {
        let t = table(vec![vec![0.0, 0.0], vec![2.0, 0.0], vec![0.0, 3.0]], 0);
        assert_eq!(sampling_distance(&t, 0.5).unwrap(), 1.0);
    }

    #[test]
    fn alpha_and_degenerate_errors() {
        let t = table(vec![vec![0.0, 0.0], vec![2.0, 0.0]], 0);
        assert!(matches!(sampling_distance(&t, 1.0), Err(PseudowordError::Alpha(_))));
        assert!(matches!(sampling_distance(&t, 0.0), Err(PseudowordError::Alpha(_))));
        let t = table(vec![vec![1.0, 1.0], vec![1.0, 1.0]], 1);
        assert!(matches!(
            sampling_distance(&t, 0.5),
            Err(PseudowordError::Degenerate(_))
        ));
        let t = table(vec![vec![1.0, 1.0]], 0);
        assert!(matches!(
            sampling_distance(&t, 0.5),
            Err(PseudowordError::Degenerate(_))
        ));
    }

    #[test]
    fn single_vector_sits_on_the_sphere() {
        let t = table(vec![vec![0.5, 0.0, 0.0], vec![0.0, 1.0, 0.0]], 0);
        let s = sample_pseudowords(&t, 1, 3, SampleOptions::default()).unwrap();
        let d = s.d;
        let got = distance(&s.vectors[0], &to_f64(t.mask()));
        assert!((got - d).abs() <= 1e-9 * d);
    }

    #[test]
    fn budget_exhaustion_names_the_budget() {
        // In one dimension at most two points fit on the sphere.
        let t = table(vec![vec![0.0], vec![1.0]], 0);
        let opts = SampleOptions {
            budget: 50,
            ..SampleOptions::default()
        };
        let err = sample_pseudowords(&t, 3, 1, opts).unwrap_err();
        assert!(err.to_string().contains("budget of 50"), "{err}");
    }

    #[test]
    fn ball_mode_stays_inside() {
        let t = table(vec![vec![0.0; 4], vec![1.0, 0.0, 0.0, 0.0]], 0);
        let opts = SampleOptions {
            mode: SampleMode::Ball,
            ..SampleOptions::default()
        };
        let s = sample_pseudowords(&t, 4, 9, opts).unwrap();
        for v in &s.vectors {
            assert!(distance(v, &[0.0; 4]) <= s.d * (1.0 + 1e-12));
        }
    }

    #[test]
    fn pairs_bind_x_and_y() {
        let t = table(vec![vec![0.0; 8], vec![1.0; 8]], 0);
        let s = sample_pseudowords(&t, 4, 2, SampleOptions::default()).unwrap();
        assert_eq!(s.pair_count(), 2);
        let p = s.pair(1).unwrap();
        assert_eq!(p["X"], s.vectors[2]);
        assert_eq!(p["Y"], s.vectors[3]);
        assert!(s.pair(2).is_none());
    }

    #[test]
    fn binary_round_trip() {
        let t = table(vec![vec![0.25, -1.0], vec![3.5, 0.0], vec![1.0, 2.0]], 2);
        let mut buf = Vec::new();
        t.write_to(&mut buf).unwrap();
        assert_eq!(&buf[..4], b"OPEM");
        assert_eq!(buf.len(), 4 + 16 + 3 * 2 * 4);
        assert_eq!(EmbeddingTable::read_from(&mut buf.as_slice()).unwrap(), t);
        buf[0] = b'X';
        assert!(EmbeddingTable::read_from(&mut buf.as_slice()).is_err());
    }

    proptest! {
        #[test]
        fn sampled_sets_respect_geometry(seed in any::<u64>(), dim in 4usize..12, count in 1usize..6) {
            let mut rng = seeded_rng(seed, "table");
            let rows: Vec<Vec<f32>> = (0..6)
                .map(|_| (0..dim).map(|_| rand::Rng::random_range(&mut rng, -1.0f32..1.0)).collect())
                .collect();
            let t = EmbeddingTable::new(rows, 0).unwrap();
            let s = sample_pseudowords(&t, count, seed, SampleOptions::default()).unwrap();
            let mask = to_f64(t.mask());
            for (i, v) in s.vectors.iter().enumerate() {
                prop_assert!((distance(v, &mask) - s.d).abs() <= 1e-6 * s.d);
                for w in &s.vectors[..i] {
                    prop_assert!(distance(v, w) >= s.d);
                }
            }
            let again = sample_pseudowords(&t, count, seed, SampleOptions::default()).unwrap();
            prop_assert_eq!(again, s);
        }
    }
}
