//! Adam optimiser over named parameter lists.

use crate::tensor::{Matrix, Scalar};

#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub lr: T,
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
    step: i32,
    m: Vec<Matrix<T>>,
    v: Vec<Matrix<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(lr: T, shapes: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let (m, v): (Vec<_>, Vec<_>) =
            shapes.into_iter().map(|(r, c)| (Matrix::zeros(r, c), Matrix::zeros(r, c))).unzip();
        Adam { lr, beta1: T::of(0.9), beta2: T::of(0.999), eps: T::of(1e-8), step: 0, m, v }
    }

    pub fn steps(&self) -> i32 {
        self.step
    }

    /// Applies one update; `grads[i] = None` leaves parameter `i` untouched.
    pub fn step(&mut self, params: &mut [&mut Matrix<T>], grads: &[Option<Matrix<T>>]) {
        self.step += 1;
        let one = T::one();
        let c1 = one - self.beta1.powi(self.step);
        let c2 = one - self.beta2.powi(self.step);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let Some(g) = g else { continue };
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for k in 0..g.data.len() {
                let gk = g.data[k];
                m.data[k] = self.beta1 * m.data[k] + (one - self.beta1) * gk;
                v.data[k] = self.beta2 * v.data[k] + (one - self.beta2) * gk * gk;
                let mh = m.data[k] / c1;
                let vh = v.data[k] / c2;
                p.data[k] -= self.lr * mh / (vh.sqrt() + self.eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr() {
        let mut x = Matrix::<f64>::scalar(1.0);
        let mut opt = Adam::new(0.1, [(1, 1)]);
        opt.step(&mut [&mut x], &[Some(Matrix::scalar(3.0))]);
        assert!((x.item() - 0.9).abs() < 1e-9);
    }

    #[test]
    fn minimises_quadratic() {
        let mut x = Matrix::<f64>::row_vector(vec![3.0, -2.0]);
        let mut opt = Adam::new(0.05, [(1, 2)]);
        for _ in 0..2000 {
            let g = x.map(|v| 2.0 * v);
            opt.step(&mut [&mut x], &[Some(g)]);
        }
        assert!(x.data.iter().all(|v| v.abs() < 1e-3));
    }
}
