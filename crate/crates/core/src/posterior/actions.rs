use std::ops::Range;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{usage, Error, Result};
use crate::kernels::KernelSpec;
use crate::points::Points;

/// The `n × i` action matrix defining the low-rank projection.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ActionMatrix {
    /// Columns `k(X, zₐ)`; recomputed whenever the kernel changes.
    InducingKernel { z: Points },
    /// Column `a` is non-zero only on the contiguous row block
    /// `bounds[a]..bounds[a + 1]`; `values` holds the `n` stored entries.
    SparseBlock { values: Vec<f64>, bounds: Vec<usize> },
    Dense { values: DMatrix<f64> },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionKind {
    InducingKernel,
    SparseBlock,
    Dense,
}

impl std::str::FromStr for ActionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "inducing" | "inducing_kernel" => Ok(ActionKind::InducingKernel),
            "block" | "sparse_block" => Ok(ActionKind::SparseBlock),
            "dense" => Ok(ActionKind::Dense),
            other => usage(format!("unknown action kind `{other}`")),
        }
    }
}

/// What to build the actions from.
#[derive(Clone, Debug)]
pub enum ActionParam {
    Locations(Points),
    Count(usize),
}

/// A concrete dense `S` together with the row support of each column.
#[derive(Clone, Debug)]
pub(crate) struct Materialized {
    pub s: DMatrix<f64>,
    pub support: Vec<Range<usize>>,
}

pub fn build_actions(kind: ActionKind, x: &Points, param: ActionParam) -> Result<ActionMatrix> {
    let n = x.len();
    match (kind, param) {
        (ActionKind::InducingKernel, ActionParam::Locations(z)) => {
            if z.len() > n {
                return usage(format!("{} actions requested for {n} points", z.len()));
            }
            if !z.is_empty() && z.dim() != x.dim() {
                return Err(Error::DimensionMismatch {
                    expected: x.dim(),
                    got: z.dim(),
                });
            }
            Ok(ActionMatrix::InducingKernel { z })
        }
        (ActionKind::InducingKernel, ActionParam::Count(i)) => {
            check_count(i, n)?;
            Ok(ActionMatrix::InducingKernel {
                z: x.select(&farthest_point_subset(x, i)),
            })
        }
        (ActionKind::SparseBlock, ActionParam::Count(i)) => ActionMatrix::sparse_block(n, i),
        (ActionKind::Dense, ActionParam::Count(i)) => {
            check_count(i, n)?;
            Ok(ActionMatrix::Dense {
                values: DMatrix::from_fn(n, i, |r, c| if r == c { 1.0 } else { 0.0 }),
            })
        }
        (kind, ActionParam::Locations(_)) => {
            usage(format!("{kind:?} actions are built from a count, not locations"))
        }
    }
}

fn check_count(i: usize, n: usize) -> Result<()> {
    if i > n {
        usage(format!("{i} actions requested for {n} points"))
    } else {
        Ok(())
    }
}

/// Greedy farthest-point traversal starting from the first point.
fn farthest_point_subset(x: &Points, i: usize) -> Vec<usize> {
    let n = x.len();
    if i == 0 || n == 0 {
        return Vec::new();
    }
    let dist2 = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(u, v)| (u - v) * (u - v)).sum::<f64>();
    let mut chosen = vec![0];
    let mut nearest: Vec<f64> = x.rows().map(|r| dist2(r, x.row(0))).collect();
    while chosen.len() < i {
        let (next, _) = nearest
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (j, &d)| if d > acc.1 { (j, d) } else { acc });
        chosen.push(next);
        for (j, r) in x.rows().enumerate() {
            nearest[j] = nearest[j].min(dist2(r, x.row(next)));
        }
    }
    chosen
}

impl ActionMatrix {
    pub fn inducing(z: Points) -> Self {
        ActionMatrix::InducingKernel { z }
    }

    /// `i` unit-valued blocks over `n` rows; the last block absorbs the
    /// remainder when `i` does not divide `n`.
    pub fn sparse_block(n: usize, i: usize) -> Result<Self> {
        check_count(i, n)?;
        let mut bounds = Vec::with_capacity(i + 1);
        if i > 0 {
            let k = n / i;
            for a in 0..i {
                bounds.push(a * k);
            }
            bounds.push(n);
        } else {
            bounds.push(0);
        }
        Ok(ActionMatrix::SparseBlock {
            values: vec![1.0; n],
            bounds,
        })
    }

    pub fn dense(values: DMatrix<f64>) -> Self {
        ActionMatrix::Dense { values }
    }

    pub fn identity(n: usize) -> Self {
        ActionMatrix::Dense {
            values: DMatrix::identity(n, n),
        }
    }

    /// No actions at all: the posterior equals the prior.
    pub fn empty(n: usize) -> Self {
        ActionMatrix::Dense {
            values: DMatrix::zeros(n, 0),
        }
    }

    pub fn kind(&self) -> ActionKind {
        match self {
            ActionMatrix::InducingKernel { .. } => ActionKind::InducingKernel,
            ActionMatrix::SparseBlock { .. } => ActionKind::SparseBlock,
            ActionMatrix::Dense { .. } => ActionKind::Dense,
        }
    }

    /// Number of actions `i`.
    pub fn count(&self) -> usize {
        match self {
            ActionMatrix::InducingKernel { z } => z.len(),
            ActionMatrix::SparseBlock { bounds, .. } => bounds.len() - 1,
            ActionMatrix::Dense { values } => values.ncols(),
        }
    }

    /// Whether the stored entries are free parameters.
    pub fn trainable(&self) -> bool {
        !matches!(self, ActionMatrix::InducingKernel { .. })
    }

    pub fn values(&self) -> Vec<f64> {
        match self {
            ActionMatrix::InducingKernel { .. } => Vec::new(),
            ActionMatrix::SparseBlock { values, .. } => values.clone(),
            ActionMatrix::Dense { values } => values.as_slice().to_vec(),
        }
    }

    pub fn set_values(&mut self, new: &[f64]) -> Result<()> {
        match self {
            ActionMatrix::InducingKernel { .. } => {
                if new.is_empty() {
                    Ok(())
                } else {
                    usage("inducing-kernel actions have no free values")
                }
            }
            ActionMatrix::SparseBlock { values, .. } => {
                if new.len() != values.len() {
                    return Err(Error::DimensionMismatch {
                        expected: values.len(),
                        got: new.len(),
                    });
                }
                values.copy_from_slice(new);
                Ok(())
            }
            ActionMatrix::Dense { values } => {
                if new.len() != values.len() {
                    return Err(Error::DimensionMismatch {
                        expected: values.len(),
                        got: new.len(),
                    });
                }
                values.as_mut_slice().copy_from_slice(new);
                Ok(())
            }
        }
    }

    /// The same actions applied to data whose rows were reordered so that
    /// new row `r` is old row `perm[r]`.
    pub fn permute_rows(&self, perm: &[usize]) -> Result<Self> {
        match self {
            ActionMatrix::InducingKernel { .. } => Ok(self.clone()),
            ActionMatrix::SparseBlock { .. } => {
                let dense = self.to_dense(perm.len())?;
                Ok(ActionMatrix::Dense {
                    values: DMatrix::from_fn(perm.len(), dense.ncols(), |r, c| dense[(perm[r], c)]),
                })
            }
            ActionMatrix::Dense { values } => Ok(ActionMatrix::Dense {
                values: DMatrix::from_fn(perm.len(), values.ncols(), |r, c| values[(perm[r], c)]),
            }),
        }
    }

    /// Reorder the action columns.
    pub fn permute_columns(&self, perm: &[usize]) -> Result<Self> {
        match self {
            ActionMatrix::InducingKernel { z } => Ok(ActionMatrix::InducingKernel { z: z.select(perm) }),
            ActionMatrix::SparseBlock { values, .. } => {
                let n = values.len();
                let dense = self.to_dense(n)?;
                Ok(ActionMatrix::Dense {
                    values: DMatrix::from_fn(n, perm.len(), |r, c| dense[(r, perm[c])]),
                })
            }
            ActionMatrix::Dense { values } => Ok(ActionMatrix::Dense {
                values: DMatrix::from_fn(values.nrows(), perm.len(), |r, c| values[(r, perm[c])]),
            }),
        }
    }

    fn to_dense(&self, n: usize) -> Result<DMatrix<f64>> {
        match self {
            ActionMatrix::SparseBlock { values, bounds } => {
                if values.len() != n {
                    return Err(Error::DimensionMismatch {
                        expected: values.len(),
                        got: n,
                    });
                }
                let mut s = DMatrix::zeros(n, bounds.len() - 1);
                for a in 0..bounds.len() - 1 {
                    for r in bounds[a]..bounds[a + 1] {
                        s[(r, a)] = values[r];
                    }
                }
                Ok(s)
            }
            ActionMatrix::Dense { values } => Ok(values.clone()),
            ActionMatrix::InducingKernel { .. } => usage("inducing actions need a kernel to materialize"),
        }
    }

    pub(crate) fn materialize(&self, kernel: &KernelSpec, x: &Points) -> Result<Materialized> {
        let n = x.len();
        match self {
            ActionMatrix::InducingKernel { z } => {
                if z.len() > n {
                    return usage(format!("{} actions for {n} points", z.len()));
                }
                let s = if z.is_empty() {
                    DMatrix::zeros(n, 0)
                } else {
                    orthonormal_basis(kernel.gram(x, z)?)?
                };
                Ok(Materialized {
                    support: vec![0..n; s.ncols()],
                    s,
                })
            }
            ActionMatrix::SparseBlock { values, bounds } => {
                if values.len() != n {
                    return Err(Error::DimensionMismatch {
                        expected: values.len(),
                        got: n,
                    });
                }
                let support = bounds.windows(2).map(|w| w[0]..w[1]).collect();
                Ok(Materialized {
                    s: self.to_dense(n)?,
                    support,
                })
            }
            ActionMatrix::Dense { values } => {
                if values.nrows() != n {
                    return Err(Error::DimensionMismatch {
                        expected: values.nrows(),
                        got: n,
                    });
                }
                if values.ncols() > n {
                    return usage(format!("{} actions for {n} points", values.ncols()));
                }
                Ok(Materialized {
                    support: vec![0..n; values.ncols()],
                    s: values.clone(),
                })
            }
        }
    }
}

/// Thin-QR basis of the column span. The posterior depends on the actions
/// only through their span, and the orthonormal basis keeps `SᵀK̃S` as well
/// conditioned as `K̃` itself.
fn orthonormal_basis(s: DMatrix<f64>) -> Result<DMatrix<f64>> {
    let qr = s.qr();
    let r = qr.r();
    let d: Vec<f64> = r.diagonal().iter().map(|v| v.abs()).collect();
    let max = d.iter().cloned().fold(0.0_f64, f64::max);
    let min = d.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(min > 1e-13 * max) {
        return Err(Error::IllConditionedActions {
            condition: if min > 0.0 { (max / min).powi(2) } else { f64::INFINITY },
        });
    }
    Ok(qr.q())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::KernelKind;

    #[test]
    fn sparse_block_shape() {
        let a = ActionMatrix::sparse_block(6, 3).unwrap();
        assert_eq!(a.count(), 3);
        assert_eq!(a.values().len(), 6);
        let x = Points::from_scalars(&[0.0, 1.0, 2.0, 3.0, 4.0, 5.0]);
        let k = KernelSpec::isotropic(KernelKind::Rbf, 1.0, 1.0).unwrap();
        let m = a.materialize(&k, &x).unwrap();
        for c in 0..3 {
            let nnz = m.s.column(c).iter().filter(|v| **v != 0.0).count();
            assert_eq!(nnz, 2);
            assert_eq!(m.support[c].len(), 2);
        }
    }

    #[test]
    fn sparse_block_remainder_goes_to_last_block() {
        let a = ActionMatrix::sparse_block(7, 3).unwrap();
        match a {
            ActionMatrix::SparseBlock { bounds, .. } => assert_eq!(bounds, vec![0, 2, 4, 7]),
            _ => unreachable!(),
        }
    }

    #[test]
    fn too_many_actions_is_a_usage_error() {
        let x = Points::from_scalars(&[0.0, 1.0]);
        assert!(matches!(
            build_actions(ActionKind::SparseBlock, &x, ActionParam::Count(3)),
            Err(Error::Usage(_))
        ));
        assert!(build_actions(ActionKind::InducingKernel, &x, ActionParam::Count(3)).is_err());
    }

    #[test]
    fn inducing_at_training_points_is_the_gram_matrix() {
        let x = Points::from_scalars(&[0.0, 0.5, 2.0]);
        let k = KernelSpec::isotropic(KernelKind::Matern52, 0.7, 1.2).unwrap();
        let a = build_actions(ActionKind::InducingKernel, &x, ActionParam::Locations(x.clone())).unwrap();
        let m = a.materialize(&k, &x).unwrap();
        let g = k.gram(&x, &x).unwrap();
        // same span: projecting the Gram columns onto the basis loses nothing
        let proj = &m.s * (m.s.transpose() * &g);
        assert!((proj - &g).abs().max() < 1e-12);
        assert!((m.s.transpose() * &m.s - DMatrix::identity(3, 3)).abs().max() < 1e-12);
    }

    #[test]
    fn farthest_point_subset_is_spread_out() {
        let x = Points::from_scalars(&[0.0, 0.1, 0.2, 5.0, 9.9, 10.0]);
        let idx = farthest_point_subset(&x, 3);
        assert_eq!(idx[0], 0);
        assert_eq!(idx[1], 5);
        assert_eq!(idx[2], 3);
    }
}
