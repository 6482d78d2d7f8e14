//! Small dense vector helpers and the symmetric channel-correlation matrix.

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `a / |a|`, or `None` for zero or non-finite norms.
pub fn normalized(a: &[f64]) -> Option<Vec<f64>> {
    let n = norm(a);
    if n > 0.0 && n.is_finite() {
        Some(a.iter().map(|x| x / n).collect())
    } else {
        None
    }
}

/// Cosine similarity; zero when either vector has zero norm.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let denom = norm(a) * norm(b);
    if denom > 0.0 {
        (dot(a, b) / denom).clamp(-1.0, 1.0)
    } else {
        0.0
    }
}

pub fn widen(v: &[f32]) -> Vec<f64> {
    v.iter().map(|&x| x as f64).collect()
}

/// Dense `dim x dim` symmetric matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GramMatrix {
    dim: usize,
    data: Vec<f64>,
}

impl GramMatrix {
    /// Mean outer product of the given unit vectors.
    pub fn mean_outer<'a>(dim: usize, units: impl IntoIterator<Item = &'a [f64]>) -> Self {
        let mut data = vec![0.0; dim * dim];
        let mut n = 0usize;
        for u in units {
            debug_assert_eq!(u.len(), dim);
            n += 1;
            for i in 0..dim {
                let ui = u[i];
                if ui == 0.0 {
                    continue;
                }
                let row = &mut data[i * dim..(i + 1) * dim];
                for (j, r) in row.iter_mut().enumerate().skip(i) {
                    *r += ui * u[j];
                }
            }
        }
        let scale = if n > 0 { 1.0 / n as f64 } else { 0.0 };
        for i in 0..dim {
            for j in i..dim {
                let v = data[i * dim + j] * scale;
                data[i * dim + j] = v;
                data[j * dim + i] = v;
            }
        }
        Self { dim, data }
    }

    pub fn from_rows(dim: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), dim * dim, "gram matrix size");
        Self { dim, data }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.dim + j]
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim).map(|i| self.get(i, i)).sum()
    }

    /// `q^T G q`.
    pub fn quadratic_form(&self, q: &[f64]) -> f64 {
        debug_assert_eq!(q.len(), self.dim);
        self.data
            .chunks_exact(self.dim)
            .zip(q)
            .map(|(row, qi)| qi * dot(row, q))
            .sum()
    }

    /// Frobenius norm of `self - other`.
    pub fn frobenius_distance(&self, other: &GramMatrix) -> f64 {
        assert_eq!(self.dim, other.dim, "gram dimensions");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cosine_of_diagonal_against_axis() {
        assert!((cosine(&[1.0, 1.0], &[1.0, 0.0]) - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
        assert_eq!(cosine(&[0.0, 0.0], &[1.0, 0.0]), 0.0);
    }

    #[test]
    fn quadratic_form_of_projector() {
        let f = [0.6, 0.8];
        let g = GramMatrix::mean_outer(2, [&f[..]]);
        assert!((g.quadratic_form(&f) - 1.0).abs() < 1e-12);
        assert!(g.quadratic_form(&[-0.8, 0.6]).abs() < 1e-12);
    }
}
