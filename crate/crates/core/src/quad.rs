//! Composite Gauss-Legendre helpers.

use gauss_quad::legendre::GaussLegendre;

use crate::error::{Error, Result};

/// Gauss-Legendre nodes and weights on `[-1, 1]`.
#[derive(Debug, Clone)]
pub struct Rule {
    pairs: Vec<(f64, f64)>,
}

impl Rule {
    pub fn new(order: usize) -> Result<Self> {
        let gl = GaussLegendre::new(order).map_err(|_| Error::OutOfRange {
            what: "quadrature order",
            value: order as f64,
            range: "[2, inf)",
        })?;
        let mut pairs = gl.as_node_weight_pairs().to_vec();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        Ok(Self { pairs })
    }

    pub fn order(&self) -> usize {
        self.pairs.len()
    }

    /// Nodes and weights mapped onto `[a, b]`.
    pub fn panel(&self, a: f64, b: f64) -> impl Iterator<Item = (f64, f64)> + '_ {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        self.pairs.iter().map(move |&(x, w)| (mid + half * x, half * w))
    }

    /// Composite nodes over consecutive panel edges.
    pub fn composite(&self, edges: &[f64]) -> Vec<(f64, f64)> {
        edges
            .windows(2)
            .flat_map(|e| self.panel(e[0], e[1]).collect::<Vec<_>>())
            .collect()
    }
}

/// Each interval between consecutive `breaks` split into `per` equal panels.
pub fn subdivide(breaks: &[f64], per: usize) -> Vec<f64> {
    let mut out = vec![breaks[0]];
    for w in breaks.windows(2) {
        for k in 1..=per {
            out.push(w[0] + (w[1] - w[0]) * k as f64 / per as f64);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn integrates_polynomials_exactly() {
        let rule = Rule::new(5).unwrap();
        let s: f64 = rule.panel(0.0, 2.0).map(|(x, w)| w * x.powi(9)).sum();
        assert_relative_eq!(s, 2f64.powi(10) / 10.0, max_relative = 1e-13);
        let edges = subdivide(&[0.0, 1.0, 3.0], 2);
        assert_eq!(edges, vec![0.0, 0.5, 1.0, 2.0, 3.0]);
        let s: f64 = rule.composite(&edges).iter().map(|(x, w)| w * x.sin()).sum();
        assert_relative_eq!(s, 1.0 - 3f64.cos(), max_relative = 1e-12);
        assert!(Rule::new(1).is_err());
    }
}
