//! Dense numeric substrate: row-major matrices, linear layers, a two-layer
//! MLP, row softmax, and the central finite-difference gradient oracle.
//!
//! Everything is `f64`. Weight initialization is uniform in
//! `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` from a seeded ChaCha generator so
//! that every network in the crate is reproducible from a `u64` seed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};

/// Deterministic generator used for every seeded quantity in the crate.
pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Row-major dense matrix of finite reals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        ensure!(
            data.len() == rows * cols,
            "matrix data length {} does not match {rows}x{cols}",
            data.len()
        );
        if let Some(i) = data.iter().position(|x| !x.is_finite()) {
            return Err(Error::contract(format!(
                "matrix entry {i} is not finite ({})",
                data[i]
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub(crate) fn from_raw(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), rows * cols);
        Self { rows, cols, data }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::from_raw(rows, cols, vec![0.0; rows * cols])
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    /// Builds a matrix from equal-length rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        ensure!(
            rows.iter().all(|r| r.len() == cols),
            "ragged rows: expected every row to have length {cols}"
        );
        Self::new(rows.len(), cols, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_iter(&self) -> impl Iterator<Item = &[f64]> {
        (0..self.rows).map(move |r| self.row(r))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// `self · other`.
    pub fn matmul(&self, other: &DenseMatrix) -> Result<DenseMatrix> {
        ensure!(
            self.cols == other.rows,
            "matmul shape mismatch: {}x{} · {}x{}",
            self.rows,
            self.cols,
            other.rows,
            other.cols
        );
        let mut out = vec![0.0; self.rows * other.cols];
        for i in 0..self.rows {
            let a = self.row(i);
            let o = &mut out[i * other.cols..(i + 1) * other.cols];
            for (k, &aik) in a.iter().enumerate() {
                if aik == 0.0 {
                    continue;
                }
                for (oj, &bkj) in o.iter_mut().zip(other.row(k)) {
                    *oj += aik * bkj;
                }
            }
        }
        Ok(Self::from_raw(self.rows, other.cols, out))
    }

    /// `self · otherᵀ`, the shape of attention logits `q·kᵀ`.
    pub fn matmul_transposed(&self, other: &DenseMatrix) -> Result<DenseMatrix> {
        ensure!(
            self.cols == other.cols,
            "q·kᵀ shape mismatch: {}x{} vs {}x{}",
            self.rows,
            self.cols,
            other.rows,
            other.cols
        );
        let mut out = Vec::with_capacity(self.rows * other.rows);
        for a in self.row_iter() {
            for b in other.row_iter() {
                out.push(dot(a, b));
            }
        }
        Ok(Self::from_raw(self.rows, other.rows, out))
    }

    /// Elementwise sum.
    pub fn add(&self, other: &DenseMatrix) -> Result<DenseMatrix> {
        ensure!(
            self.rows == other.rows && self.cols == other.cols,
            "add shape mismatch: {}x{} vs {}x{}",
            self.rows,
            self.cols,
            other.rows,
            other.cols
        );
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a + b)
            .collect();
        Ok(Self::from_raw(self.rows, self.cols, data))
    }

    pub fn scale(&self, factor: f64) -> DenseMatrix {
        Self::from_raw(
            self.rows,
            self.cols,
            self.data.iter().map(|x| x * factor).collect(),
        )
    }

    /// Gathers the listed rows, in the listed order.
    pub fn select_rows(&self, indices: &[usize]) -> Result<DenseMatrix> {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            ensure!(i < self.rows, "row index {i} out of range ({})", self.rows);
            data.extend_from_slice(self.row(i));
        }
        Ok(Self::from_raw(indices.len(), self.cols, data))
    }

    /// Stacks matrices with equal column counts on top of each other.
    pub fn vstack(parts: &[&DenseMatrix]) -> Result<DenseMatrix> {
        let cols = parts.first().map_or(0, |m| m.cols);
        ensure!(
            parts.iter().all(|m| m.cols == cols),
            "vstack requires equal column counts"
        );
        let rows = parts.iter().map(|m| m.rows).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for m in parts {
            data.extend_from_slice(&m.data);
        }
        Ok(Self::from_raw(rows, cols, data))
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Row-wise softmax, stabilized by subtracting each row's maximum.
///
/// Entries equal to `-inf` receive zero weight; a row needs at least one
/// finite entry.
pub fn softmax_rows(m: &DenseMatrix) -> DenseMatrix {
    let mut out = m.clone();
    for r in 0..out.rows {
        softmax_in_place(out.row_mut(r));
    }
    out
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in row.iter_mut() {
        *x /= sum;
    }
}

/// Activation between the two layers of an [`Mlp2`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Relu,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
        }
    }
}

/// Activation used by every MLP built through the seeded constructors.
pub const MLP_ACTIVATION: Activation = Activation::Relu;

/// Affine map `y = W x + b` with `W` stored as `out × in`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    weight: DenseMatrix,
    bias: Vec<f64>,
}

impl Linear {
    pub fn new(weight: DenseMatrix, bias: Vec<f64>) -> Result<Self> {
        ensure!(
            weight.rows() == bias.len(),
            "bias length {} does not match {} output rows",
            bias.len(),
            weight.rows()
        );
        ensure!(
            weight.all_finite() && bias.iter().all(|b| b.is_finite()),
            "linear layer weights must be finite"
        );
        Ok(Self { weight, bias })
    }

    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            weight: DenseMatrix::zeros(out_dim, in_dim),
            bias: vec![0.0; out_dim],
        }
    }

    /// Uniform `±1/sqrt(fan_in)` initialization for weights and biases.
    pub fn from_rng<R: Rng>(in_dim: usize, out_dim: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (in_dim.max(1) as f64).sqrt();
        let weight = (0..in_dim * out_dim)
            .map(|_| rng.gen_range(-bound..=bound))
            .collect();
        let bias = (0..out_dim).map(|_| rng.gen_range(-bound..=bound)).collect();
        Self {
            weight: DenseMatrix::from_raw(out_dim, in_dim, weight),
            bias,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn weight(&self) -> &DenseMatrix {
        &self.weight
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn bias_mut(&mut self) -> &mut [f64] {
        &mut self.bias
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        ensure!(
            x.len() == self.in_dim(),
            "linear layer expects input of length {}, got {}",
            self.in_dim(),
            x.len()
        );
        Ok(self
            .weight
            .row_iter()
            .zip(&self.bias)
            .map(|(w, b)| dot(w, x) + b)
            .collect())
    }
}

/// Two affine layers with an activation in between.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp2 {
    hidden: Linear,
    output: Linear,
    activation: Activation,
}

impl Mlp2 {
    pub fn new(hidden: Linear, output: Linear) -> Result<Self> {
        ensure!(
            hidden.out_dim() == output.in_dim(),
            "mlp layers disagree on hidden width: {} vs {}",
            hidden.out_dim(),
            output.in_dim()
        );
        Ok(Self {
            hidden,
            output,
            activation: MLP_ACTIVATION,
        })
    }

    pub fn zeros(in_dim: usize, hidden_dim: usize, out_dim: usize) -> Self {
        Self {
            hidden: Linear::zeros(in_dim, hidden_dim),
            output: Linear::zeros(hidden_dim, out_dim),
            activation: MLP_ACTIVATION,
        }
    }

    pub fn from_rng<R: Rng>(in_dim: usize, hidden_dim: usize, out_dim: usize, rng: &mut R) -> Self {
        let hidden = Linear::from_rng(in_dim, hidden_dim, rng);
        let output = Linear::from_rng(hidden_dim, out_dim, rng);
        Self {
            hidden,
            output,
            activation: MLP_ACTIVATION,
        }
    }

    pub fn seeded(in_dim: usize, hidden_dim: usize, out_dim: usize, seed: u64) -> Self {
        Self::from_rng(in_dim, hidden_dim, out_dim, &mut seeded_rng(seed))
    }

    /// An MLP whose output is the constant `value` for every input.
    pub fn constant(in_dim: usize, hidden_dim: usize, value: &[f64]) -> Self {
        let mut mlp = Self::zeros(in_dim, hidden_dim, value.len());
        mlp.output.bias_mut().copy_from_slice(value);
        mlp
    }

    pub fn in_dim(&self) -> usize {
        self.hidden.in_dim()
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden.out_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.output.out_dim()
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut h = self.hidden.forward(x)?;
        for v in &mut h {
            *v = self.activation.apply(*v);
        }
        self.output.forward(&h)
    }

    /// Applies [`Mlp2::forward`] to every row.
    pub fn forward_rows(&self, x: &DenseMatrix) -> Result<DenseMatrix> {
        let mut data = Vec::with_capacity(x.rows() * self.out_dim());
        for row in x.row_iter() {
            data.extend(self.forward(row)?);
        }
        Ok(DenseMatrix::from_raw(x.rows(), self.out_dim(), data))
    }
}

/// Central finite-difference gradient `(f(x+h e_i) - f(x-h e_i)) / 2h`.
pub fn finite_diff_grad<F>(mut f: F, x: &[f64], h: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> f64,
{
    ensure!(h > 0.0 && h.is_finite(), "finite-difference step must be positive, got {h}");
    let mut probe = x.to_vec();
    let mut grad = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        probe[i] = x[i] + h;
        let plus = f(&probe);
        probe[i] = x[i] - h;
        let minus = f(&probe);
        probe[i] = x[i];
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::NonFinite { coordinate: i });
        }
        grad.push((plus - minus) / (2.0 * h));
    }
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn row_sums(m: &DenseMatrix) -> Vec<f64> {
        m.row_iter().map(|r| r.iter().sum()).collect()
    }

    #[test]
    fn softmax_uniform_row() {
        let m = DenseMatrix::from_rows(&[vec![0.0, 0.0, 0.0]]).unwrap();
        let s = softmax_rows(&m);
        for &x in s.row(0) {
            assert_abs_diff_eq!(x, 1.0 / 3.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn softmax_ln2_gap() {
        for c in [-7.0, 0.0, 3.5, 120.0] {
            let m = DenseMatrix::from_rows(&[vec![c, c + 2f64.ln()]]).unwrap();
            let s = softmax_rows(&m);
            assert_abs_diff_eq!(s.get(0, 0), 1.0 / 3.0, epsilon = 1e-12);
            assert_abs_diff_eq!(s.get(0, 1), 2.0 / 3.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn softmax_shift_invariant_and_stable() {
        let m = DenseMatrix::from_rows(&[vec![1e4, -1e4, 9999.0, 0.5]]).unwrap();
        let shifted = DenseMatrix::from_rows(&[vec![1e4 + 3.0, -1e4 + 3.0, 10002.0, 3.5]]).unwrap();
        let a = softmax_rows(&m);
        let b = softmax_rows(&shifted);
        for (x, y) in a.data().iter().zip(b.data()) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-12);
        }
        assert_abs_diff_eq!(row_sums(&a)[0], 1.0, epsilon = 1e-9);
    }

    #[test]
    fn softmax_masks_negative_infinity() {
        let mut row = vec![1.0, f64::NEG_INFINITY, 1.0];
        softmax_in_place(&mut row);
        assert_eq!(row, vec![0.5, 0.0, 0.5]);
    }

    #[test]
    fn dense_matrix_rejects_bad_input() {
        assert!(DenseMatrix::new(2, 2, vec![1.0; 3]).is_err());
        assert!(DenseMatrix::new(1, 2, vec![1.0, f64::NAN]).is_err());
        assert!(DenseMatrix::from_rows(&[vec![1.0], vec![1.0, 2.0]]).is_err());
    }

    #[test]
    fn matmul_small() {
        let a = DenseMatrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let b = DenseMatrix::from_rows(&[vec![5.0, 6.0], vec![7.0, 8.0]]).unwrap();
        assert_eq!(a.matmul(&b).unwrap().data(), &[19.0, 22.0, 43.0, 50.0]);
        assert_eq!(a.matmul_transposed(&b).unwrap().data(), &[17.0, 23.0, 39.0, 53.0]);
        assert!(a.matmul(&DenseMatrix::zeros(3, 1)).is_err());
    }

    #[test]
    fn linear_identity_and_bias() {
        let id = Linear::new(DenseMatrix::identity(3), vec![0.0; 3]).unwrap();
        assert_eq!(id.forward(&[1.0, -2.0, 3.0]).unwrap(), vec![1.0, -2.0, 3.0]);

        let b0 = Linear::new(DenseMatrix::zeros(2, 3), vec![4.0, 5.0]).unwrap();
        assert_eq!(b0.forward(&[9.0, 9.0, 9.0]).unwrap(), vec![4.0, 5.0]);
    }

    #[test]
    fn linear_hand_arithmetic() {
        let l = Linear::new(DenseMatrix::from_rows(&[vec![1.0, 2.0]]).unwrap(), vec![3.0]).unwrap();
        assert_eq!(l.forward(&[1.0, 1.0]).unwrap(), vec![6.0]);
    }

    #[test]
    fn linear_dimension_mismatch() {
        let l = Linear::zeros(2, 1);
        assert!(matches!(l.forward(&[1.0]), Err(Error::Contract(_))));
        assert!(Linear::new(DenseMatrix::zeros(2, 2), vec![0.0]).is_err());
    }

    #[test]
    fn mlp_zero_weights() {
        let mlp = Mlp2::zeros(3, 5, 4);
        assert_eq!(mlp.forward(&[1.0, 2.0, 3.0]).unwrap(), vec![0.0; 4]);
    }

    #[test]
    fn mlp_identity_passthrough() {
        let l1 = Linear::new(DenseMatrix::identity(3), vec![0.0; 3]).unwrap();
        let l2 = Linear::new(DenseMatrix::identity(3), vec![0.0; 3]).unwrap();
        let mlp = Mlp2::new(l1, l2).unwrap();
        assert_eq!(mlp.forward(&[0.5, 0.0, 7.0]).unwrap(), vec![0.5, 0.0, 7.0]);
    }

    #[test]
    fn mlp_one_one_one() {
        let l1 = Linear::new(DenseMatrix::from_rows(&[vec![2.0]]).unwrap(), vec![-1.0]).unwrap();
        let l2 = Linear::new(DenseMatrix::from_rows(&[vec![3.0]]).unwrap(), vec![0.0]).unwrap();
        let mlp = Mlp2::new(l1, l2).unwrap();
        assert_eq!(mlp.forward(&[1.0]).unwrap(), vec![3.0]);
        // Negative pre-activation is cut by ReLU.
        assert_eq!(mlp.forward(&[0.0]).unwrap(), vec![0.0]);
        assert!(mlp.forward(&[1.0, 2.0]).is_err());
    }

    #[test]
    fn mlp_seeded_is_deterministic() {
        let a = Mlp2::seeded(6, 8, 4, 11);
        let b = Mlp2::seeded(6, 8, 4, 11);
        assert_eq!(a, b);
        let x = [0.1, -0.2, 0.3, 0.4, -0.5, 0.6];
        let ya = a.forward(&x).unwrap();
        let yb = b.forward(&x).unwrap();
        assert!(ya.iter().zip(&yb).all(|(p, q)| p.to_bits() == q.to_bits()));
        assert_ne!(Mlp2::seeded(6, 8, 4, 12), a);
    }

    #[test]
    fn init_respects_fan_in_bound() {
        let l = Linear::from_rng(16, 8, &mut seeded_rng(3));
        let bound = 0.25;
        assert!(l.weight().data().iter().all(|w| w.abs() <= bound));
        assert!(l.bias().iter().all(|b| b.abs() <= bound));
    }

    #[test]
    fn finite_diff_square() {
        let g = finite_diff_grad(|x| x[0] * x[0], &[3.0], 1e-5).unwrap();
        assert!((g[0] - 6.0).abs() < 1e-6);
    }

    #[test]
    fn finite_diff_constant_and_sum() {
        let g = finite_diff_grad(|_| 4.2, &[1.0, 2.0, 3.0], 1e-5).unwrap();
        assert_eq!(g, vec![0.0; 3]);
        let g = finite_diff_grad(|x| x.iter().sum(), &[1.0, 2.0, 3.0], 1e-5).unwrap();
        for v in g {
            assert_abs_diff_eq!(v, 1.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn finite_diff_reports_non_finite_coordinate() {
        let err = finite_diff_grad(|x| if x[1] > 1.0 { f64::NAN } else { 0.0 }, &[0.0, 1.0], 1e-3)
            .unwrap_err();
        assert!(matches!(err, Error::NonFinite { coordinate: 1 }));
        assert!(finite_diff_grad(|_| 0.0, &[0.0], 0.0).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn softmax_rows_sum_to_one(row in prop::collection::vec(-1e4f64..1e4, 1..32)) {
                let m = DenseMatrix::from_rows(&[row]).unwrap();
                let s = softmax_rows(&m);
                let sum: f64 = s.row(0).iter().sum();
                prop_assert!((sum - 1.0).abs() < 1e-9);
                prop_assert!(s.data().iter().all(|&x| x >= 0.0));
            }

            #[test]
            fn finite_diff_matches_quadratic_form(
                a in prop::collection::vec(-3.0f64..3.0, 9),
                x in prop::collection::vec(-2.0f64..2.0, 3),
            ) {
                // f(x) = xᵀ A x, ∇f = (A + Aᵀ) x
                let f = |v: &[f64]| {
                    let mut s = 0.0;
                    for i in 0..3 {
                        for j in 0..3 {
                            s += v[i] * a[i * 3 + j] * v[j];
                        }
                    }
                    s
                };
                let g = finite_diff_grad(f, &x, 1e-5).unwrap();
                for i in 0..3 {
                    let exact: f64 = (0..3).map(|j| (a[i * 3 + j] + a[j * 3 + i]) * x[j]).sum();
                    let rel = (g[i] - exact).abs() / exact.abs().max(1.0);
                    prop_assert!(rel < 1e-6, "coord {i}: fd {} exact {exact}", g[i]);
                }
            }
        }
    }
}
