//! Learnable centroids and the temperature-controlled transition
//! distribution over them.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{softmax_row, Tape, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Similarity {
    /// `α_i ∝ exp(u·s_i / τ)`
    #[default]
    Dot,
    /// `α_i ∝ exp(-‖u - s_i‖ / τ)`
    Euclidean,
}

impl FromStr for Similarity {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dot" => Ok(Similarity::Dot),
            "euclidean" => Ok(Similarity::Euclidean),
            other => Err(Error::InvalidArgument(format!(
                "unknown similarity `{other}`"
            ))),
        }
    }
}

impl fmt::Display for Similarity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Similarity::Dot => "dot",
            Similarity::Euclidean => "euclidean",
        })
    }
}

/// `k` centroids stored as the columns of a `d × k` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CentroidSet {
    s: Tensor,
    tau: f64,
    similarity: Similarity,
}

impl CentroidSet {
    pub fn new(s: Tensor, tau: f64, similarity: Similarity) -> Result<Self> {
        if s.shape().len() != 2 {
            return Err(Error::shape(
                "centroids",
                format!("expected d × k, got {:?}", s.shape()),
            ));
        }
        if s.cols() < 2 {
            return Err(Error::InvalidArgument(format!(
                "need at least 2 centroids, got {}",
                s.cols()
            )));
        }
        check_tau(tau)?;
        if !s.is_finite() {
            return Err(Error::NonFinite { op: "centroids" });
        }
        Ok(CentroidSet { s, tau, similarity })
    }

    /// Entries drawn i.i.d. from `U[-0.5, 0.5]`.
    pub fn init(
        k: usize,
        d: usize,
        tau: f64,
        similarity: Similarity,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if k < 2 || d == 0 {
            return Err(Error::InvalidArgument(format!(
                "need k >= 2 and d >= 1, got k={k}, d={d}"
            )));
        }
        let data = (0..d * k).map(|_| rng.gen_range(-0.5..=0.5)).collect();
        CentroidSet::new(Tensor::new(vec![d, k], data)?, tau, similarity)
    }

    pub fn k(&self) -> usize {
        self.s.cols()
    }

    pub fn dim(&self) -> usize {
        self.s.rows()
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn similarity(&self) -> Similarity {
        self.similarity
    }

    pub fn matrix(&self) -> &Tensor {
        &self.s
    }

    pub fn with_tau(&self, tau: f64) -> Result<Self> {
        check_tau(tau)?;
        Ok(CentroidSet {
            tau,
            ..self.clone()
        })
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        let k = self.k();
        (0..self.dim()).map(|r| self.s.data()[r * k + j]).collect()
    }

    /// `α = softmax(score(u, s_i) / τ)`.
    pub fn transition_probs(&self, u: &[f64]) -> Result<Vec<f64>> {
        let (d, k) = (self.dim(), self.k());
        if u.len() != d {
            return Err(Error::shape(
                "transition_probs",
                format!("u has {} entries, centroids {d}", u.len()),
            ));
        }
        let s = self.s.data();
        let scores: Vec<f64> = (0..k)
            .map(|j| match self.similarity {
                Similarity::Dot => (0..d).map(|r| u[r] * s[r * k + j]).sum(),
                Similarity::Euclidean => -(0..d)
                    .map(|r| (u[r] - s[r * k + j]).powi(2))
                    .sum::<f64>()
                    .sqrt(),
            })
            .collect();
        if scores.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                op: "transition_probs",
            });
        }
        Ok(softmax_row(&scores, self.tau))
    }

    /// `h = Σ α_i s_i`.
    pub fn mix_state(&self, alpha: &[f64]) -> Result<Vec<f64>> {
        self.check_alpha(alpha)?;
        let k = self.k();
        let s = self.s.data();
        Ok((0..self.dim())
            .map(|r| (0..k).map(|j| alpha[j] * s[r * k + j]).sum())
            .collect())
    }

    /// Draws `j ~ α`; returns `(j, s_j)`.
    pub fn sample_state(&self, alpha: &[f64], rng: &mut impl Rng) -> Result<(usize, Vec<f64>)> {
        self.check_alpha(alpha)?;
        let x: f64 = rng.gen();
        let mut acc = 0.0;
        let mut j = alpha.len() - 1;
        for (i, &a) in alpha.iter().enumerate() {
            acc += a;
            if x < acc {
                j = i;
                break;
            }
        }
        // Never land on a zero-probability tail index through rounding.
        while alpha[j] == 0.0 && j > 0 {
            j -= 1;
        }
        Ok((j, self.column(j)))
    }

    /// `(argmax α, s_argmax)`, lowest index on ties.
    pub fn hard_state(&self, alpha: &[f64]) -> Result<(usize, Vec<f64>)> {
        self.check_alpha(alpha)?;
        let j = argmax(alpha);
        Ok((j, self.column(j)))
    }

    fn check_alpha(&self, alpha: &[f64]) -> Result<()> {
        if alpha.len() != self.k() {
            return Err(Error::shape(
                "centroid selection",
                format!("α has {} entries for k={}", alpha.len(), self.k()),
            ));
        }
        Ok(())
    }
}

fn check_tau(tau: f64) -> Result<()> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "temperature must be positive, got {tau}"
        )));
    }
    Ok(())
}

/// Index of the largest entry; the lowest index wins ties.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Recorded transition distribution for a batch `u: [n, d]` against
/// centroids `s: [d, k]`, giving `[n, k]`.
pub fn tape_transition(
    tape: &mut Tape<'_>,
    u: Var,
    s: Var,
    tau: f64,
    similarity: Similarity,
) -> Result<Var> {
    check_tau(tau)?;
    let scores = match similarity {
        Similarity::Dot => tape.matmul(u, s)?,
        Similarity::Euclidean => {
            let sq = tape.sq_dist(u, s)?;
            let dist = tape.sqrt(sq)?;
            tape.neg(dist)?
        }
    };
    tape.softmax(scores, tau)
}

/// Recorded mixture `α Sᵀ`, giving `[n, d]`.
pub fn tape_mix(tape: &mut Tape<'_>, alpha: Var, s: Var) -> Result<Var> {
    tape.matmul_nt(alpha, s)
}
