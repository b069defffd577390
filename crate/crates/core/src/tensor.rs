//! Dense row-major `f64` tensors and the forward kernels shared by the
//! autograd tape.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::rng::StreamKey;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::InvalidShape(format!(
                "dimensions must be positive, got {shape:?}"
            )));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::InvalidShape(format!(
                "shape {shape:?} holds {n} elements but {} were given",
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Tensor {
            shape: vec![data.len().max(1)],
            data,
        }
    }

    /// Builds a 2-D tensor from equally long rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::InvalidShape("rows have different lengths".into()));
        }
        Tensor::new(vec![rows.len(), cols], rows.concat())
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Tensor::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// `(rows, cols)` of a 2-D tensor.
    pub fn dims2(&self) -> Result<(usize, usize)> {
        match self.shape[..] {
            [r, c] => Ok((r, c)),
            _ => Err(Error::InvalidShape(format!(
                "expected a matrix, got shape {:?}",
                self.shape
            ))),
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let cols = *self.shape.last().unwrap_or(&1);
        &self.data[i * cols..(i + 1) * cols]
    }

    pub fn reshape(self, shape: Vec<usize>) -> Result<Self> {
        Tensor::new(shape, self.data)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn transpose(&self) -> Result<Tensor> {
        let (r, c) = self.dims2()?;
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = self.data[i * c + j];
            }
        }
        Tensor::new(vec![c, r], out)
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Matrix product of an `m×k` and a `k×n` tensor.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = a.dims2()?;
    let (k2, n) = b.dims2()?;
    if k != k2 {
        return Err(Error::ShapeMismatch {
            op: "matmul",
            left: a.shape.clone(),
            right: b.shape.clone(),
        });
    }
    let mut out = vec![0.0; m * n];
    gemm_nn(m, k, n, &a.data, &b.data, &mut out);
    Tensor::new(vec![m, n], out)
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(x: &Tensor) -> Result<Tensor> {
    let (_, n) = x.dims2()?;
    let mut out = x.data.clone();
    for row in out.chunks_mut(n) {
        softmax_in_place(row);
    }
    Tensor::new(x.shape.clone(), out)
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = libm::exp(*v - max);
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// `ln Σ exp(x)` over the entries selected by `mask`, stable. Returns
/// negative infinity for an empty selection.
pub(crate) fn masked_logsumexp(row: &[f64], mask: &[bool]) -> f64 {
    let max = row
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|(&v, _)| v)
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    let sum: f64 = row
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|(&v, _)| libm::exp(v - max))
        .sum();
    max + libm::log(sum)
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    libm::sqrt(dot(a, a))
}

/// Cosine similarity of two vectors, clamped to `[-1, 1]`.
pub fn cosine_similarity(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::ShapeMismatch {
            op: "cosine_similarity",
            left: vec![u.len()],
            right: vec![v.len()],
        });
    }
    let (nu, nv) = (norm(u), norm(v));
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::DegenerateInput(
            "cosine similarity of a zero-norm vector".into(),
        ));
    }
    Ok((dot(u, v) / (nu * nv)).clamp(-1.0, 1.0))
}

/// Per-row standardization followed by an affine map.
pub fn layer_norm(x: &Tensor, gain: &Tensor, bias: &Tensor, eps: f64) -> Result<Tensor> {
    let (_, h) = x.dims2()?;
    if h < 2 {
        return Err(Error::InvalidShape("layer_norm needs h >= 2".into()));
    }
    if gain.len() != h || bias.len() != h {
        return Err(Error::ShapeMismatch {
            op: "layer_norm",
            left: x.shape.clone(),
            right: gain.shape.clone(),
        });
    }
    let mut out = vec![0.0; x.len()];
    for (src, dst) in x.data.chunks(h).zip(out.chunks_mut(h)) {
        let (mean, inv_std) = row_moments(src, eps);
        for j in 0..h {
            dst[j] = (src[j] - mean) * inv_std * gain.data[j] + bias.data[j];
        }
    }
    Tensor::new(x.shape.clone(), out)
}

/// Mean and `1/sqrt(var + eps)` of a row (population variance).
pub(crate) fn row_moments(row: &[f64], eps: f64) -> (f64, f64) {
    let n = row.len() as f64;
    let mean = row.iter().sum::<f64>() / n;
    let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, 1.0 / libm::sqrt(var + eps))
}

/// Inverted dropout mask: each entry is `0` with probability `rate` and
/// `1/(1-rate)` otherwise. A pure function of its arguments.
pub fn dropout_mask(shape: &[usize], rate: f64, seed: u64) -> Result<Tensor> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::InvalidArgument(format!(
            "dropout rate must lie in [0, 1), got {rate}"
        )));
    }
    let n: usize = shape.iter().product();
    if rate == 0.0 {
        return Tensor::new(shape.to_vec(), vec![1.0; n]);
    }
    let keep = 1.0 / (1.0 - rate);
    let mut rng = StreamKey::root(seed).child("dropout").rng();
    let data = (0..n)
        .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep })
        .collect();
    Tensor::new(shape.to_vec(), data)
}

// Kernels. All accumulate into `out`.

/// `out[m×n] += a[m×k] · b[k×n]`
pub(crate) fn gemm_nn(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], out: &mut [f64]) {
    for i in 0..m {
        let o = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let br = &b[p * n..(p + 1) * n];
            for (ov, bv) in o.iter_mut().zip(br) {
                *ov += av * bv;
            }
        }
    }
}

/// `out[m×n] += a[m×k] · b[n×k]ᵀ`
pub(crate) fn gemm_nt(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], out: &mut [f64]) {
    for i in 0..m {
        let ar = &a[i * k..(i + 1) * k];
        for j in 0..n {
            out[i * n + j] += dot(ar, &b[j * k..(j + 1) * k]);
        }
    }
}

/// `out[m×n] += a[k×m]ᵀ · b[k×n]`
pub(crate) fn gemm_tn(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], out: &mut [f64]) {
    for p in 0..k {
        let br = &b[p * n..(p + 1) * n];
        for i in 0..m {
            let av = a[p * m + i];
            if av == 0.0 {
                continue;
            }
            let o = &mut out[i * n..(i + 1) * n];
            for (ov, bv) in o.iter_mut().zip(br) {
                *ov += av * bv;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{normal, StreamKey};
    use proptest::prelude::*;

    fn random(shape: &[usize], seed: u64) -> Tensor {
        let mut rng = StreamKey::root(seed).rng();
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| normal(&mut rng)).collect()).unwrap()
    }

    fn triple_loop(a: &Tensor, b: &Tensor) -> Tensor {
        let (m, k) = a.dims2().unwrap();
        let (_, n) = b.dims2().unwrap();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                let mut s = 0.0;
                for p in 0..k {
                    s += a.data()[i * k + p] * b.data()[p * n + j];
                }
                out[i * n + j] = s;
            }
        }
        Tensor::new(vec![m, n], out).unwrap()
    }

    #[test]
    fn matmul_identity_and_small_case() {
        let a = random(&[3, 3], 1);
        assert_eq!(matmul(&Tensor::identity(3), &a).unwrap(), a);
        let a = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let b = Tensor::from_rows(&[vec![0.0], vec![1.0]]).unwrap();
        assert_eq!(matmul(&a, &b).unwrap().data(), &[2.0, 4.0]);
    }

    #[test]
    fn matmul_matches_triple_loop() {
        let a = random(&[5, 7], 2);
        let b = random(&[7, 3], 3);
        assert!(matmul(&a, &b).unwrap().max_abs_diff(&triple_loop(&a, &b)) < 1e-12);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let err = matmul(&Tensor::zeros(&[2, 3]), &Tensor::zeros(&[2, 3])).unwrap_err();
        let msg = alloc::format!("{err}");
        assert!(msg.contains("[2, 3]"), "{msg}");
        assert!(matches!(err, Error::ShapeMismatch { .. }));
    }

    #[test]
    fn transposed_kernels_agree_with_matmul() {
        let a = random(&[4, 6], 4);
        let b = random(&[5, 6], 5);
        let mut out = vec![0.0; 20];
        gemm_nt(4, 6, 5, a.data(), b.data(), &mut out);
        let want = matmul(&a, &b.transpose().unwrap()).unwrap();
        assert!(Tensor::new(vec![4, 5], out).unwrap().max_abs_diff(&want) < 1e-12);

        let c = random(&[6, 3], 6);
        let mut out = vec![0.0; 12];
        gemm_tn(4, 6, 3, a.transpose().unwrap().data(), c.data(), &mut out);
        let want = matmul(&a, &c).unwrap();
        assert!(Tensor::new(vec![4, 3], out).unwrap().max_abs_diff(&want) < 1e-12);
    }

    #[test]
    fn softmax_cases() {
        let s = softmax_rows(&Tensor::from_rows(&[vec![0.0, 0.0]]).unwrap()).unwrap();
        assert_eq!(s.data(), &[0.5, 0.5]);
        let s = softmax_rows(&Tensor::from_rows(&[vec![1000.0, 0.0]]).unwrap()).unwrap();
        assert_eq!(s.data()[0], 1.0);
        assert!(s.data()[1] < 1e-300 && s.is_finite());

        let x = random(&[1, 9], 7);
        let s = softmax_rows(&x).unwrap();
        let denom: f64 = x.data().iter().map(|v| libm::exp(*v)).sum();
        for (got, v) in s.data().iter().zip(x.data()) {
            assert!((got - libm::exp(*v) / denom).abs() < 1e-12);
        }
    }

    #[test]
    fn cosine_cases() {
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[1.0, 0.0]).unwrap(), 1.0);
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        let c = cosine_similarity(&[1.0, 1.0], &[1.0, 0.0]).unwrap();
        assert!((c - core::f64::consts::FRAC_1_SQRT_2).abs() < 1e-15);
        assert!(matches!(
            cosine_similarity(&[0.0, 0.0], &[1.0, 0.0]),
            Err(Error::DegenerateInput(_))
        ));
    }

    #[test]
    fn layer_norm_cases() {
        let ones = Tensor::full(&[3], 1.0);
        let zeros = Tensor::zeros(&[3]);
        let c = Tensor::from_rows(&[vec![2.0, 2.0, 2.0]]).unwrap();
        assert_eq!(layer_norm(&c, &ones, &zeros, 1e-5).unwrap().data(), &[0.0; 3]);

        let r = Tensor::from_rows(&[vec![1.0, 2.0, 3.0]]).unwrap();
        let y = layer_norm(&r, &ones, &zeros, 0.0).unwrap();
        let want = [-1.224_744_871_391_589, 0.0, 1.224_744_871_391_589];
        for (g, w) in y.data().iter().zip(want) {
            assert!((g - w).abs() < 1e-12);
        }

        let x = random(&[4, 8], 8);
        let gain = random(&[8], 9);
        let bias = random(&[8], 10);
        let y = layer_norm(&x, &gain, &bias, 1e-5).unwrap();
        for i in 0..4 {
            let row = x.row(i);
            let mean = row.iter().sum::<f64>() / 8.0;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 8.0;
            for j in 0..8 {
                let want = (row[j] - mean) / libm::sqrt(var + 1e-5) * gain.data()[j]
                    + bias.data()[j];
                assert!((y.row(i)[j] - want).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn dropout_mask_contract() {
        let m = dropout_mask(&[4, 5], 0.0, 99).unwrap();
        assert!(m.data().iter().all(|&v| v == 1.0));
        assert_eq!(
            dropout_mask(&[8, 8], 0.3, 5).unwrap(),
            dropout_mask(&[8, 8], 0.3, 5).unwrap()
        );
        assert_ne!(
            dropout_mask(&[8, 8], 0.3, 5).unwrap(),
            dropout_mask(&[8, 8], 0.3, 6).unwrap()
        );
        assert!(matches!(
            dropout_mask(&[2], 1.0, 0),
            Err(Error::InvalidArgument(_))
        ));
        let m = dropout_mask(&[8, 8], 0.25, 1).unwrap();
        assert!(m.data().iter().all(|&v| v == 0.0 || v == 1.0 / 0.75));
    }

    #[test]
    fn dropout_keep_fraction_concentrates() {
        // Binomial(1e6, 0.9): sd is 3e-4, so the window is ten sd wide.
        let m = dropout_mask(&[1_000_000], 0.1, 42).unwrap();
        let kept = m.data().iter().filter(|&&v| v != 0.0).count() as f64 / 1e6;
        assert!((0.897..=0.903).contains(&kept), "kept {kept}");
    }

    proptest! {
        #[test]
        fn softmax_rows_sum_to_one(row in proptest::collection::vec(-1e4f64..1e4, 1..12)) {
            let n = row.len();
            let s = softmax_rows(&Tensor::new(vec![1, n], row).unwrap()).unwrap();
            let sum: f64 = s.data().iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-12);
            prop_assert!(s.data().iter().all(|&v| v >= 0.0));
        }

        #[test]
        fn matmul_is_associative(seed in 0u64..10_000) {
            let a = random(&[4, 4], seed);
            let b = random(&[4, 4], seed + 1);
            let c = random(&[4, 4], seed + 2);
            let left = matmul(&matmul(&a, &b).unwrap(), &c).unwrap();
            let right = matmul(&a, &matmul(&b, &c).unwrap()).unwrap();
            let scale = left.data().iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
            prop_assert!(left.max_abs_diff(&right) / scale < 1e-9);
        }

        #[test]
        fn dropout_is_pure(rate in 0.0f64..0.9, seed in any::<u64>()) {
            prop_assert_eq!(
                dropout_mask(&[3, 7], rate, seed).unwrap(),
                dropout_mask(&[3, 7], rate, seed).unwrap()
            );
        }
    }
}
