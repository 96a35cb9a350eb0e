use std::f64::consts::PI;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{usage, Error, Result};

/// Synthetic benchmark objectives, all to be minimized.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TestFunction {
    Hartmann6,
    Branin2,
    Gist1D,
}

const HARTMANN_ALPHA: [f64; 4] = [1.0, 1.2, 3.0, 3.2];
const HARTMANN_A: [[f64; 6]; 4] = [
    [10.0, 3.0, 17.0, 3.5, 1.7, 8.0],
    [0.05, 10.0, 17.0, 0.1, 8.0, 14.0],
    [3.0, 3.5, 1.7, 10.0, 17.0, 8.0],
    [17.0, 8.0, 0.05, 10.0, 0.1, 14.0],
];
const HARTMANN_P: [[f64; 6]; 4] = [
    [0.1312, 0.1696, 0.5569, 0.0124, 0.8283, 0.5886],
    [0.2329, 0.4135, 0.8307, 0.3736, 0.1004, 0.9991],
    [0.2348, 0.1451, 0.3522, 0.2883, 0.3047, 0.6650],
    [0.4047, 0.8828, 0.8732, 0.5743, 0.1091, 0.0381],
];

impl TestFunction {
    pub fn name(self) -> &'static str {
        match self {
            TestFunction::Hartmann6 => "hartmann6",
            TestFunction::Branin2 => "branin2",
            TestFunction::Gist1D => "gist1d",
        }
    }

    pub fn dim(self) -> usize {
        match self {
            TestFunction::Hartmann6 => 6,
            TestFunction::Branin2 => 2,
            TestFunction::Gist1D => 1,
        }
    }

    /// Per-dimension `(lower, upper)` bounds.
    pub fn domain(self) -> Vec<(f64, f64)> {
        match self {
            TestFunction::Hartmann6 => vec![(0.0, 1.0); 6],
            TestFunction::Branin2 => vec![(-5.0, 10.0), (0.0, 15.0)],
            TestFunction::Gist1D => vec![(-3.0, 3.0)],
        }
    }

    /// Known global minimum value, where one is published.
    pub fn optimum(self) -> Option<f64> {
        match self {
            TestFunction::Hartmann6 => Some(-3.32237),
            TestFunction::Branin2 => Some(0.397887),
            TestFunction::Gist1D => None,
        }
    }

    pub fn eval(self, x: &[f64]) -> Result<f64> {
        let dom = self.domain();
        if x.len() != dom.len() {
            return Err(Error::DimensionMismatch {
                expected: dom.len(),
                got: x.len(),
            });
        }
        for (k, (&v, &(lo, hi))) in x.iter().zip(&dom).enumerate() {
            if !(v >= lo && v <= hi) {
                return usage(format!("{}: coordinate {k} = {v} outside [{lo}, {hi}]", self.name()));
            }
        }
        Ok(match self {
            TestFunction::Hartmann6 => -(0..4)
                .map(|i| {
                    let e: f64 = (0..6).map(|j| HARTMANN_A[i][j] * (x[j] - HARTMANN_P[i][j]).powi(2)).sum();
                    HARTMANN_ALPHA[i] * (-e).exp()
                })
                .sum::<f64>(),
            TestFunction::Branin2 => {
                let b = 5.1 / (4.0 * PI * PI);
                let c = 5.0 / PI;
                let t = 1.0 / (8.0 * PI);
                (x[1] - b * x[0] * x[0] + c * x[0] - 6.0).powi(2) + 10.0 * (1.0 - t) * x[0].cos() + 10.0
            }
            TestFunction::Gist1D => (3.0 * x[0]).sin() + 0.3 * x[0] * x[0],
        })
    }
}

impl FromStr for TestFunction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "hartmann6" | "hartmann" => Ok(TestFunction::Hartmann6),
            "branin2" | "branin" => Ok(TestFunction::Branin2),
            "gist1d" | "gist" => Ok(TestFunction::Gist1D),
            other => usage(format!("unknown test function `{other}`")),
        }
    }
}

pub fn test_function(f: TestFunction, x: &[f64]) -> Result<f64> {
    f.eval(x)
}
