use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// Symmetric `n × n` Gaussian similarity matrix with unit diagonal.
#[derive(Clone, Debug, PartialEq)]
pub struct AdjacencyWeights {
    n: usize,
    w: Vec<f64>,
}

impl AdjacencyWeights {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.w[i * self.n + j]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.w
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::matrix(self.n, self.n, self.w.clone()).expect("square weights")
    }

    /// Sum of the strict upper triangle, the largest connectivity possible.
    pub fn upper_sum(&self) -> f64 {
        let mut total = 0.0;
        for i in 0..self.n {
            for j in (i + 1)..self.n {
                total += self.get(i, j);
            }
        }
        total
    }
}

/// `w[i][j] = exp(-‖p_i − p_j‖²)`.
pub fn gauss_weights(points: &[[f64; 3]]) -> Result<AdjacencyWeights> {
    if points.is_empty() {
        return Err(Error::Empty {
            op: "gauss_weights",
        });
    }
    if let Some(p) = points.iter().find(|p| p.iter().any(|c| !c.is_finite())) {
        return Err(Error::NonFinite(format!("point {p:?}")));
    }
    let n = points.len();
    let mut w = vec![0.0; n * n];
    for i in 0..n {
        w[i * n + i] = 1.0;
        for j in (i + 1)..n {
            let d2: f64 = points[i]
                .iter()
                .zip(&points[j])
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            let v = (-d2).exp();
            w[i * n + j] = v;
            w[j * n + i] = v;
        }
    }
    Ok(AdjacencyWeights { n, w })
}
