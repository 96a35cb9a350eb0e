use std::str::FromStr;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{usage, Error, Result};
use crate::harness::data::Dataset;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Protocol {
    None,
    Asymmetric,
    Uniform,
    Focused,
    /// Per-evaluation Bernoulli contamination of an observation channel.
    BoChannel,
}

impl Protocol {
    pub fn name(self) -> &'static str {
        match self {
            Protocol::None => "none",
            Protocol::Asymmetric => "asymmetric",
            Protocol::Uniform => "uniform",
            Protocol::Focused => "focused",
            Protocol::BoChannel => "bochannel",
        }
    }

    /// Magnitude bounds in units of σ̄.
    pub fn default_bounds(self) -> (f64, f64) {
        match self {
            Protocol::BoChannel => (1.0, 2.0),
            _ => (3.0, 9.0),
        }
    }
}

impl std::fmt::Display for Protocol {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Protocol {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "none" | "clean" => Ok(Protocol::None),
            "asymmetric" => Ok(Protocol::Asymmetric),
            "uniform" => Ok(Protocol::Uniform),
            "focused" => Ok(Protocol::Focused),
            "bochannel" | "bo" => Ok(Protocol::BoChannel),
            other => usage(format!("unknown contamination protocol `{other}`")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContaminationSpec {
    pub protocol: Protocol,
    pub fraction: f64,
    /// Lower and upper magnitude in units of σ̄.
    pub bounds: (f64, f64),
    /// Absolute σ̄; `None` uses the sample std of the targets being contaminated.
    pub sigma_bar: Option<f64>,
    pub seed: u64,
}

impl ContaminationSpec {
    pub fn new(protocol: Protocol, fraction: f64, seed: u64) -> Self {
        Self {
            protocol,
            fraction,
            bounds: protocol.default_bounds(),
            sigma_bar: None,
            seed,
        }
    }

    pub fn none() -> Self {
        Self::new(Protocol::None, 0.0, 0)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.fraction) {
            return usage(format!("contamination fraction must lie in [0, 1], got {}", self.fraction));
        }
        let (lo, hi) = self.bounds;
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return usage(format!("contamination bounds must be ordered, got ({lo}, {hi})"));
        }
        if let Some(s) = self.sigma_bar {
            if !(s.is_finite() && s >= 0.0) {
                return usage(format!("sigma_bar must be non-negative, got {s}"));
            }
        }
        Ok(())
    }
}

fn sample_std(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    (v.iter().map(|a| (a - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n == 0 {
        0.0
    } else if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

fn mad(v: &[f64]) -> f64 {
    let m = median(v);
    median(&v.iter().map(|a| (a - m).abs()).collect::<Vec<_>>())
}

/// Contaminates a training set. Returns the new data and the sorted indices of
/// the rows that were altered.
pub fn contaminate(train: &Dataset, spec: &ContaminationSpec) -> Result<(Dataset, Vec<usize>)> {
    spec.validate()?;
    let mut out = train.clone();
    let n = train.len();
    if spec.protocol == Protocol::None || spec.fraction == 0.0 || n == 0 {
        return Ok((out, Vec::new()));
    }
    let sigma = spec.sigma_bar.unwrap_or_else(|| sample_std(&train.y));
    let (lo, hi) = spec.bounds;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let magnitude = |rng: &mut ChaCha8Rng| sigma * (lo + (hi - lo) * rng.random::<f64>());

    let mut idx: Vec<usize> = if spec.protocol == Protocol::BoChannel {
        (0..n).filter(|_| rng.random::<f64>() < spec.fraction).collect()
    } else {
        let count = (spec.fraction * n as f64).floor() as usize;
        sample(&mut rng, n, count).into_vec()
    };
    idx.sort_unstable();

    match spec.protocol {
        Protocol::None => {}
        Protocol::Asymmetric => {
            for &i in &idx {
                out.y[i] -= magnitude(&mut rng);
            }
        }
        Protocol::Uniform => {
            let half = idx.len() / 2;
            for (k, &i) in idx.iter().enumerate() {
                let u = magnitude(&mut rng);
                out.y[i] += if k < half { u } else { -u };
            }
        }
        Protocol::BoChannel => {
            for &i in &idx {
                out.y[i] += magnitude(&mut rng);
            }
        }
        Protocol::Focused => {
            let d = train.dim();
            let med: Vec<f64> = (0..d).map(|j| median(&train.x.column(j))).collect();
            let alpha: Vec<f64> = (0..d).map(|j| 0.1 * mad(&train.x.column(j))).collect();
            let my = median(&train.y);
            let ay = 0.1 * mad(&train.y);
            for &i in &idx {
                let u: f64 = rng.random();
                let row = out.x.row_mut(i);
                for j in 0..d {
                    row[j] = med[j] + alpha[j] * u;
                }
                out.y[i] = my - 3.0 * sigma + ay * rng.random::<f64>();
            }
        }
    }
    Ok((out, idx))
}

/// Observation channel for sequential evaluations: each value is shifted up
/// by `U(lo·σ̄, hi·σ̄)` with probability `p`.
#[derive(Clone, Debug)]
pub struct ObservationChannel {
    fraction: f64,
    bounds: (f64, f64),
    sigma_bar: f64,
    rng: ChaCha8Rng,
}

impl ObservationChannel {
    pub fn new(spec: &ContaminationSpec, sigma_bar: f64) -> Result<Self> {
        spec.validate()?;
        let fraction = if spec.protocol == Protocol::None { 0.0 } else { spec.fraction };
        Ok(Self {
            fraction,
            bounds: spec.bounds,
            sigma_bar: spec.sigma_bar.unwrap_or(sigma_bar),
            rng: ChaCha8Rng::seed_from_u64(spec.seed),
        })
    }

    /// Returns the observed value and whether it was contaminated. Exactly two
    /// draws are consumed per call so that streams stay aligned across `p`.
    pub fn observe(&mut self, y: f64) -> (f64, bool) {
        let hit = self.rng.random::<f64>() < self.fraction;
        let (lo, hi) = self.bounds;
        let u = self.sigma_bar * (lo + (hi - lo) * self.rng.random::<f64>());
        if hit {
            (y + u, true)
        } else {
            (y, false)
        }
    }
}
