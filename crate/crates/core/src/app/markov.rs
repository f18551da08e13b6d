//! Markov transition matrix over operations.

use thiserror::Error;

use super::{OpCatalog, OpId};
use crate::simcore::RngStream;

const ROW_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error, PartialEq)]
pub enum MarkovError {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("row `{row}` sums to {sum}, not 1")]
    NotStochastic { row: String, sum: f64 },
    #[error("negative probability in row `{0}`")]
    Negative(String),
    #[error("power iteration did not converge")]
    NoConvergence,
}

#[derive(Debug, Clone)]
pub struct TransitionMatrix {
    dense: Vec<Vec<f64>>,
    /// Per row: cumulative probabilities over nonzero targets.
    cumulative: Vec<Vec<(f64, usize)>>,
}

impl TransitionMatrix {
    pub fn from_dense(dense: Vec<Vec<f64>>) -> Result<Self, MarkovError> {
        for (i, row) in dense.iter().enumerate() {
            if row.iter().any(|p| *p < 0.0) {
                return Err(MarkovError::Negative(i.to_string()));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ROW_TOLERANCE {
                return Err(MarkovError::NotStochastic { row: i.to_string(), sum });
            }
        }
        let cumulative = dense
            .iter()
            .map(|row| {
                let mut acc = 0.0;
                row.iter()
                    .enumerate()
                    .filter(|(_, p)| **p > 0.0)
                    .map(|(j, p)| {
                        acc += p;
                        (acc, j)
                    })
                    .collect()
            })
            .collect();
        Ok(Self { dense, cumulative })
    }

    pub fn parse(text: &str, ops: &OpCatalog) -> Result<Self, MarkovError> {
        let n = ops.len();
        let mut dense = vec![vec![0.0; n]; n];
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let body = raw.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let syntax = |msg: String| MarkovError::Syntax { line, msg };
            let toks: Vec<&str> = body.split_whitespace().collect();
            let [from, to, p] = toks[..] else {
                return Err(syntax(format!("expected `<from> <to> <prob>`, found `{body}`")));
            };
            let from = ops.id(from).ok_or_else(|| syntax(format!("unknown op `{from}`")))?;
            let to = ops.id(to).ok_or_else(|| syntax(format!("unknown op `{to}`")))?;
            let p: f64 = p.parse().map_err(|_| syntax(format!("bad probability `{p}`")))?;
            dense[from.index()][to.index()] += p;
        }
        for (i, row) in dense.iter().enumerate() {
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ROW_TOLERANCE {
                return Err(MarkovError::NotStochastic {
                    row: ops.get(OpId(i as u8)).name.clone(),
                    sum,
                });
            }
        }
        Self::from_dense(dense)
    }

    pub fn demo(ops: &OpCatalog) -> Self {
        Self::parse(include_str!("../../data/matrix.txt"), ops).expect("shipped matrix is valid")
    }

    pub fn len(&self) -> usize {
        self.dense.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dense.is_empty()
    }

    pub fn prob(&self, from: usize, to: usize) -> f64 {
        self.dense[from][to]
    }

    pub fn dense(&self) -> &[Vec<f64>] {
        &self.dense
    }

    pub fn sample(&self, from: OpId, rng: &mut RngStream) -> OpId {
        let row = &self.cumulative[from.index()];
        let u = rng.uniform() * row.last().map_or(1.0, |(c, _)| *c);
        let k = row.partition_point(|(c, _)| *c <= u).min(row.len() - 1);
        OpId(row[k].1 as u8)
    }

    /// Stationary distribution by power iteration on the lazy chain
    /// (P + I) / 2, which shares P's stationary vector but is aperiodic.
    pub fn stationary(&self) -> Result<Vec<f64>, MarkovError> {
        let n = self.dense.len();
        if n == 0 {
            return Ok(Vec::new());
        }
        let mut pi = vec![1.0 / n as f64; n];
        for _ in 0..200_000 {
            let mut next = vec![0.0; n];
            for (i, row) in self.dense.iter().enumerate() {
                for (j, p) in row.iter().enumerate() {
                    next[j] += pi[i] * p;
                }
            }
            let next: Vec<f64> = next.iter().zip(&pi).map(|(a, b)| 0.5 * (a + b)).collect();
            let delta: f64 = next.iter().zip(&pi).map(|(a, b)| (a - b).abs()).sum();
            pi = next;
            if delta < 1e-13 {
                return Ok(pi);
            }
        }
        Err(MarkovError::NoConvergence)
    }
}
