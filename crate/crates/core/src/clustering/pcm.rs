//! Possibilistic C-Means (Krishnapuram & Keller).
//!
//! Memberships `u[c][i] = 1 / (1 + (d2(x_i, v_c) / eta_c)^(1/(m-1)))` are
//! independent per cluster; rows do not sum to one. Prototypes are
//! `u^m`-weighted means. `eta_c` is estimated once after initialization and
//! held fixed while iterating.
//!
//! Initialization: farthest-point sampling of `k` data points (the first
//! chosen from the seed), one fuzzy-c-means membership pass against those
//! seeds, one prototype update, then `eta_c = sum u^m d2 / sum u^m`.

use serde::{Deserialize, Serialize};

use crate::embedding::{splitmix64, EmbeddingVector};
use crate::error::{Error, Result};

const GOLDEN_GAMMA: u64 = 0x9e37_79b9_7f4a_7c15;

fn default_fuzzifier() -> f64 {
    2.0
}
fn default_max_iterations() -> usize {
    300
}
fn default_tolerance() -> f64 {
    1e-4
}
fn default_eta_floor() -> f64 {
    1e-12
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PcmConfig {
    /// Cluster count; `None` means `n - 1`.
    #[serde(default)]
    pub k: Option<usize>,
    #[serde(default = "default_fuzzifier")]
    pub fuzzifier: f64,
    #[serde(default = "default_max_iterations")]
    pub max_iterations: usize,
    /// Stop once the largest absolute membership change falls below this.
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    #[serde(default = "default_eta_floor")]
    pub eta_floor: f64,
    /// Seeding entropy. Not read from config files: pipelines copy their
    /// single run seed here.
    #[serde(skip)]
    pub seed: u64,
}

impl Default for PcmConfig {
    fn default() -> Self {
        PcmConfig {
            k: None,
            fuzzifier: default_fuzzifier(),
            max_iterations: default_max_iterations(),
            tolerance: default_tolerance(),
            eta_floor: default_eta_floor(),
            seed: 0,
        }
    }
}

impl PcmConfig {
    pub fn with_k(k: usize) -> Self {
        PcmConfig {
            k: Some(k),
            ..Default::default()
        }
    }

    /// Cluster count for a corpus of `n` questions.
    pub fn cluster_count(&self, n: usize) -> usize {
        self.k.unwrap_or(n.saturating_sub(1).max(1))
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fuzzifier > 1.0 && self.fuzzifier.is_finite()) {
            return Err(Error::Config("pcm.fuzzifier must be > 1".into()));
        }
        if self.k == Some(0) {
            return Err(Error::Config("pcm.k must be >= 1".into()));
        }
        if self.max_iterations < 1 {
            return Err(Error::Config("pcm.max_iterations must be >= 1".into()));
        }
        if self.tolerance.is_nan() || self.tolerance <= 0.0 {
            return Err(Error::Config("pcm.tolerance must be > 0".into()));
        }
        if self.eta_floor.is_nan() || self.eta_floor <= 0.0 {
            return Err(Error::Config("pcm.eta_floor must be > 0".into()));
        }
        Ok(())
    }
}

/// `k x n` possibilistic memberships with the prototypes and bandwidths they
/// were computed from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MembershipMatrix {
    pub values: Vec<Vec<f64>>,
    pub prototypes: Vec<Vec<f64>>,
    pub eta: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

impl MembershipMatrix {
    pub fn rows(&self) -> usize {
        self.values.len()
    }

    pub fn cols(&self) -> usize {
        self.values.first().map_or(0, Vec::len)
    }

    pub fn row(&self, c: usize) -> &[f64] {
        &self.values[c]
    }

    /// Wraps raw memberships (no prototypes), e.g. for extraction tests.
    pub fn from_values(values: Vec<Vec<f64>>) -> Result<Self> {
        let n = values.first().map_or(0, Vec::len);
        for row in &values {
            if row.len() != n {
                return Err(Error::InvalidInput("ragged membership matrix".into()));
            }
            if row.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::InvalidInput("membership outside [0, 1]".into()));
            }
        }
        let k = values.len();
        Ok(MembershipMatrix {
            values,
            prototypes: vec![Vec::new(); k],
            eta: vec![1.0; k],
            iterations: 0,
            converged: true,
        })
    }
}

/// Possibilistic membership for squared distance `d2` and bandwidth `eta`.
/// Non-increasing in `d2`; exactly 1 at `d2 = 0`.
pub fn possibilistic_membership(d2: f64, eta: f64, fuzzifier: f64) -> f64 {
    if d2 == 0.0 {
        return 1.0;
    }
    let ratio = (d2 / eta).powf(1.0 / (fuzzifier - 1.0));
    1.0 / (1.0 + ratio)
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn distances(points: &[&[f64]], prototypes: &[Vec<f64>]) -> Vec<Vec<f64>> {
    prototypes
        .iter()
        .map(|v| points.iter().map(|x| sq_dist(x, v)).collect())
        .collect()
}

/// Farthest-point seeding: the first index comes from the seed, each next one
/// maximizes the squared distance to the nearest already chosen point (lowest
/// index on ties).
pub(crate) fn farthest_point_seeds(points: &[&[f64]], k: usize, seed: u64) -> Vec<usize> {
    let n = points.len();
    let first = (splitmix64(seed.wrapping_add(GOLDEN_GAMMA)) % n as u64) as usize;
    let mut chosen = vec![first];
    let mut nearest: Vec<f64> = points.iter().map(|x| sq_dist(x, points[first])).collect();
    let mut taken = vec![false; n];
    taken[first] = true;
    while chosen.len() < k {
        let mut best: Option<usize> = None;
        for i in 0..n {
            if taken[i] {
                continue;
            }
            if best.is_none_or(|b| nearest[i] > nearest[b]) {
                best = Some(i);
            }
        }
        let next = best.expect("k <= n leaves an unchosen point");
        taken[next] = true;
        chosen.push(next);
        for i in 0..n {
            nearest[i] = nearest[i].min(sq_dist(points[i], points[next]));
        }
    }
    chosen
}

fn fuzzy_memberships(d2: &[Vec<f64>], fuzzifier: f64) -> Vec<Vec<f64>> {
    let k = d2.len();
    let n = d2.first().map_or(0, Vec::len);
    let exponent = 1.0 / (fuzzifier - 1.0);
    let mut u = vec![vec![0.0; n]; k];
    for i in 0..n {
        let zeros = (0..k).filter(|&c| d2[c][i] == 0.0).count();
        if zeros > 0 {
            for c in 0..k {
                if d2[c][i] == 0.0 {
                    u[c][i] = 1.0 / zeros as f64;
                }
            }
            continue;
        }
        for c in 0..k {
            let denom: f64 = (0..k).map(|j| (d2[c][i] / d2[j][i]).powf(exponent)).sum();
            u[c][i] = 1.0 / denom;
        }
    }
    u
}

fn update_prototypes(points: &[&[f64]], u: &[Vec<f64>], fuzzifier: f64, previous: &mut [Vec<f64>]) {
    let dims = points[0].len();
    for (c, proto) in previous.iter_mut().enumerate() {
        let mut acc = vec![0.0; dims];
        let mut weight = 0.0;
        for (i, x) in points.iter().enumerate() {
            let w = u[c][i].powf(fuzzifier);
            weight += w;
            for (a, xv) in acc.iter_mut().zip(x.iter()) {
                *a += w * xv;
            }
        }
        if weight > 0.0 {
            for (p, a) in proto.iter_mut().zip(acc) {
                *p = a / weight;
            }
        }
    }
}

/// Runs PCM on `embeddings`. Hitting `max_iterations` is reported through
/// `converged = false`, not as an error.
pub fn run_pcm(embeddings: &[EmbeddingVector], config: &PcmConfig) -> Result<MembershipMatrix> {
    config.validate()?;
    let n = embeddings.len();
    if n < 2 {
        return Err(Error::InvalidInput(format!("PCM needs at least 2 points, got {n}")));
    }
    let dims = embeddings[0].dims();
    for e in embeddings {
        if e.dims() != dims {
            return Err(Error::DimensionMismatch {
                expected: dims,
                actual: e.dims(),
            });
        }
        if e.values().iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("embedding".into()));
        }
    }
    let k = config.cluster_count(n);
    if k > n {
        return Err(Error::Config(format!("pcm.k = {k} exceeds n = {n}")));
    }
    let m = config.fuzzifier;
    let points: Vec<&[f64]> = embeddings.iter().map(|e| e.values()).collect();

    let seeds = farthest_point_seeds(&points, k, config.seed);
    let mut prototypes: Vec<Vec<f64>> = seeds.iter().map(|&i| points[i].to_vec()).collect();
    let init = fuzzy_memberships(&distances(&points, &prototypes), m);
    update_prototypes(&points, &init, m, &mut prototypes);

    let d2 = distances(&points, &prototypes);
    let eta: Vec<f64> = (0..k)
        .map(|c| {
            let (num, den) = (0..n).fold((0.0, 0.0), |(num, den), i| {
                let w = init[c][i].powf(m);
                (num + w * d2[c][i], den + w)
            });
            let e = if den > 0.0 { num / den } else { 0.0 };
            e.max(config.eta_floor)
        })
        .collect();

    let mut previous = init;
    let mut iterations = 0;
    let mut converged = false;
    let memberships = loop {
        iterations += 1;
        let d2 = distances(&points, &prototypes);
        let u: Vec<Vec<f64>> = (0..k)
            .map(|c| (0..n).map(|i| possibilistic_membership(d2[c][i], eta[c], m)).collect())
            .collect();
        let delta = u
            .iter()
            .zip(&previous)
            .flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).abs()))
            .fold(0.0, f64::max);
        if delta < config.tolerance {
            converged = true;
            break u;
        }
        if iterations >= config.max_iterations {
            break u;
        }
        update_prototypes(&points, &u, m, &mut prototypes);
        previous = u;
    };

    Ok(MembershipMatrix {
        values: memberships,
        prototypes,
        eta,
        iterations,
        converged,
    })
}
