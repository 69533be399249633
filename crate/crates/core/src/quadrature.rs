//! Gauss-Hermite quadrature rules (weight `exp(-t^2)` on the real line),
//! computed with the Golub-Welsch eigenvalue method.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

/// Nodes and weights of an order-`n` Gauss-Hermite rule.
///
/// `sum(weights) = sqrt(pi)` and the rule integrates polynomials of degree
/// up to `2n - 1` exactly against the Hermite weight.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QuadratureRule {
    pub order: usize,
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl QuadratureRule {
    pub fn gauss_hermite(order: usize) -> Self {
        assert!(order >= 1, "quadrature order must be at least 1");
        if order == 1 {
            return QuadratureRule {
                order,
                nodes: vec![0.0],
                weights: vec![std::f64::consts::PI.sqrt()],
            };
        }
        // Jacobi matrix: zero diagonal, off-diagonal sqrt(i/2).
        let mut j = DMatrix::zeros(order, order);
        for i in 1..order {
            let b = (i as f64 / 2.0).sqrt();
            j[(i, i - 1)] = b;
            j[(i - 1, i)] = b;
        }
        let eig = j.symmetric_eigen();
        let mut pairs: Vec<(f64, f64)> = (0..order)
            .map(|i| {
                let node = eig.eigenvalues[i];
                let v0 = eig.eigenvectors[(0, i)];
                (node, std::f64::consts::PI.sqrt() * v0 * v0)
            })
            .collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        QuadratureRule {
            order,
            nodes: pairs.iter().map(|p| p.0).collect(),
            weights: pairs.iter().map(|p| p.1).collect(),
        }
    }

    /// Nodes for integrating against `N(mean, std^2)`: `x_j = mean + sqrt(2) std t_j`
    /// with normalized weights `w_j / sqrt(pi)`.
    pub fn gaussian_points(&self, mean: f64, std: f64) -> impl Iterator<Item = (f64, f64)> + '_ {
        let norm = 1.0 / std::f64::consts::PI.sqrt();
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(move |(&t, &w)| (mean + std::f64::consts::SQRT_2 * std * t, w * norm))
    }
}
