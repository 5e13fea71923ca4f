use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::linear::{least_squares, Collinear};
use crate::error::{Error, Result};
use crate::model::StateMatrix;

/// Piecewise-linear regression on an adaptive equi-count partition.
///
/// Coordinate 1 is split into `bins` groups of (nearly) equal size, then
/// coordinate 2 within each group, and so on; each of the `bins^d` cells gets
/// its own degree-1 least-squares fit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PiecewiseFit {
    pub dim: usize,
    pub bins: usize,
    pub root: Node,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "snake_case")]
pub enum Node {
    Split {
        coord: usize,
        /// Lower edge of cells `1..bins`; points below the first edge go to cell 0.
        edges: Vec<f64>,
        children: Vec<Node>,
    },
    Leaf {
        count: usize,
        /// Intercept first, then one slope per coordinate.
        coef: Vec<f64>,
    },
}

pub fn fit_piecewise(x: &StateMatrix, y: &[f64], bins: usize) -> Result<PiecewiseFit> {
    let d = x.cols();
    if x.rows() != y.len() {
        return Err(Error::dims("regression responses", x.rows(), y.len()));
    }
    if bins == 0 {
        return Err(Error::Precondition(
            "number of bins must be positive".into(),
        ));
    }
    let cells = bins.checked_pow(d as u32).unwrap_or(usize::MAX);
    let needed = cells.saturating_mul(d + 2);
    if x.rows() < needed {
        return Err(Error::InsufficientData {
            step: None,
            needed,
            got: x.rows(),
        });
    }
    let idx: Vec<usize> = (0..x.rows()).collect();
    let root = build(x, y, idx, 0, bins)?;
    Ok(PiecewiseFit { dim: d, bins, root })
}

fn build(
    x: &StateMatrix,
    y: &[f64],
    mut idx: Vec<usize>,
    coord: usize,
    bins: usize,
) -> Result<Node> {
    let d = x.cols();
    if coord == d {
        let mut a = DMatrix::<f64>::zeros(idx.len(), d + 1);
        let mut yy = Vec::with_capacity(idx.len());
        for (r, &i) in idx.iter().enumerate() {
            a[(r, 0)] = 1.0;
            for (j, v) in x.row(i).iter().enumerate() {
                a[(r, j + 1)] = *v;
            }
            yy.push(y[i]);
        }
        let coef = least_squares(a, &yy, Collinear::Drop)?;
        return Ok(Node::Leaf {
            count: idx.len(),
            coef,
        });
    }
    idx.sort_by(|&a, &b| x.row(a)[coord].total_cmp(&x.row(b)[coord]));
    let n = idx.len();
    let base = n / bins;
    let extra = n % bins;
    let mut edges = Vec::with_capacity(bins - 1);
    let mut children = Vec::with_capacity(bins);
    let mut at = 0;
    for g in 0..bins {
        let size = base + usize::from(g < extra);
        let group = idx[at..at + size].to_vec();
        if g > 0 {
            edges.push(x.row(group[0])[coord]);
        }
        at += size;
        children.push(build(x, y, group, coord + 1, bins)?);
    }
    Ok(Node::Split {
        coord,
        edges,
        children,
    })
}

impl PiecewiseFit {
    pub fn predict_row(&self, x: &[f64]) -> f64 {
        let mut node = &self.root;
        loop {
            match node {
                Node::Split {
                    coord,
                    edges,
                    children,
                } => {
                    let cell = edges.partition_point(|&e| e <= x[*coord]);
                    node = &children[cell];
                }
                Node::Leaf { coef, .. } => {
                    return coef[0] + coef[1..].iter().zip(x).map(|(c, v)| c * v).sum::<f64>();
                }
            }
        }
    }

    /// Training-point counts of the terminal cells, in traversal order.
    pub fn leaf_counts(&self) -> Vec<usize> {
        fn walk(n: &Node, out: &mut Vec<usize>) {
            match n {
                Node::Split { children, .. } => children.iter().for_each(|c| walk(c, out)),
                Node::Leaf { count, .. } => out.push(*count),
            }
        }
        let mut out = Vec::new();
        walk(&self.root, &mut out);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampling::RandomStream;

    #[test]
    fn equi_partition_counts() {
        let n = 300_000;
        let u = RandomStream::new(4).uniforms(n * 3);
        let x = StateMatrix::new(n, 3, u).unwrap();
        let y: Vec<f64> = x.iter_rows().map(|r| r[0] + r[1] * r[2]).collect();
        let fit = fit_piecewise(&x, &y, 5).unwrap();
        let counts = fit.leaf_counts();
        assert_eq!(counts.len(), 125);
        assert!(counts.iter().all(|&c| c == 2400));
    }

    #[test]
    fn one_bin_is_global_linear() {
        let xs: Vec<Vec<f64>> = (0..50)
            .map(|i| vec![(i as f64).sin(), (i as f64 * 0.7).cos()])
            .collect();
        let x = StateMatrix::from_rows(&xs).unwrap();
        let y: Vec<f64> = xs
            .iter()
            .map(|v| 0.5 - v[0] + 2.0 * v[1] + v[0] * v[1])
            .collect();
        let pw = fit_piecewise(&x, &y, 1).unwrap();
        let b =
            crate::emulators::BasisSet::new(2, vec![vec![1, 0], vec![0, 1]], false, None).unwrap();
        let lm = crate::emulators::fit_lm(&x, &y, &b).unwrap();
        let mut buf = Vec::new();
        for r in x.iter_rows() {
            assert!((pw.predict_row(r) - lm.predict_row(r, &mut buf)).abs() < 1e-10);
        }
    }

    #[test]
    fn too_few_points() {
        let x = StateMatrix::zeros(10, 2);
        assert!(matches!(
            fit_piecewise(&x, &[0.0; 10], 3),
            Err(Error::InsufficientData { needed: 36, .. })
        ));
    }
}
