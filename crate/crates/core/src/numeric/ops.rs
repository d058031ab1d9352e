use super::{Matrix, Rng};
use crate::error::{Error, Result};

/// Additive logit penalty applied to masked positions before softmax.
pub const MASK_PENALTY: f64 = -1e9;

fn shape_err(op: &'static str, a: &Matrix, b: &Matrix) -> Error {
    Error::Shape {
        op,
        left: a.shape(),
        right: b.shape(),
    }
}

/// `a · b`. Every output entry accumulates over `k` in ascending order.
pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols() != b.rows() {
        return Err(shape_err("matmul", a, b));
    }
    let (m, kk, n) = (a.rows(), a.cols(), b.cols());
    let mut out = vec![0.0; m * n];
    let (ad, bd) = (a.data(), b.data());
    for i in 0..m {
        let out_row = &mut out[i * n..(i + 1) * n];
        for k in 0..kk {
            let aik = ad[i * kk + k];
            let b_row = &bd[k * n..(k + 1) * n];
            for (o, &bkj) in out_row.iter_mut().zip(b_row) {
                *o += aik * bkj;
            }
        }
    }
    Ok(Matrix::from_raw(m, n, out))
}

/// `aᵀ · b` without materializing the transpose.
pub fn matmul_at_b(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.rows() != b.rows() {
        return Err(shape_err("matmul_at_b", a, b));
    }
    let (kk, m, n) = (a.rows(), a.cols(), b.cols());
    let mut out = vec![0.0; m * n];
    for k in 0..kk {
        let a_row = a.row(k);
        let b_row = b.row(k);
        for (i, &aki) in a_row.iter().enumerate() {
            let out_row = &mut out[i * n..(i + 1) * n];
            for (o, &bkj) in out_row.iter_mut().zip(b_row) {
                *o += aki * bkj;
            }
        }
    }
    Ok(Matrix::from_raw(m, n, out))
}

/// `a · bᵀ` without materializing the transpose.
pub fn matmul_a_bt(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols() != b.cols() {
        return Err(shape_err("matmul_a_bt", a, b));
    }
    let (m, n) = (a.rows(), b.rows());
    let mut out = Vec::with_capacity(m * n);
    for i in 0..m {
        let a_row = a.row(i);
        for j in 0..n {
            let mut acc = 0.0;
            for (x, y) in a_row.iter().zip(b.row(j)) {
                acc += x * y;
            }
            out.push(acc);
        }
    }
    Ok(Matrix::from_raw(m, n, out))
}

/// Gradients of `a · b` given the upstream gradient: `(dout · bᵀ, aᵀ · dout)`.
pub fn matmul_backward(a: &Matrix, b: &Matrix, dout: &Matrix) -> Result<(Matrix, Matrix)> {
    if a.cols() != b.rows() || dout.shape() != (a.rows(), b.cols()) {
        return Err(shape_err("matmul_backward", a, dout));
    }
    Ok((matmul_a_bt(dout, b)?, matmul_at_b(a, dout)?))
}

/// `ln Σ exp(x_i)`, shifted by the maximum.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    let sum: f64 = xs.iter().map(|&x| (x - max).exp()).sum();
    max + sum.ln()
}

fn softmax_in_place(row: &mut [f64]) {
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

/// Row-wise softmax with max subtraction.
pub fn row_softmax(x: &Matrix) -> Matrix {
    let mut out = x.clone();
    for r in 0..out.rows() {
        softmax_in_place(out.row_mut(r));
    }
    out
}

/// Row-wise softmax where column `j` participates only if `valid[j]`.
///
/// Masked logits receive [`MASK_PENALTY`] before normalization, which drives
/// their weight to zero while leaving the valid columns normalized exactly.
pub fn masked_row_softmax(x: &Matrix, valid: &[bool]) -> Result<Matrix> {
    if valid.len() != x.cols() {
        return Err(Error::Shape {
            op: "masked_row_softmax",
            left: x.shape(),
            right: (1, valid.len()),
        });
    }
    if !valid.iter().any(|&v| v) {
        return Err(Error::EmptyMask { row: 0 });
    }
    let mut out = x.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        for (x, &ok) in row.iter_mut().zip(valid) {
            if !ok {
                *x += MASK_PENALTY;
            }
        }
        softmax_in_place(row);
    }
    Ok(out)
}

/// Backward of a row softmax given its output `y`:
/// `dx = y ⊙ (dy − rowsum(dy ⊙ y))`.
pub fn softmax_backward(y: &Matrix, dy: &Matrix) -> Result<Matrix> {
    y.check_same_shape(dy, "softmax_backward")?;
    let mut dx = Matrix::zeros(y.rows(), y.cols());
    for r in 0..y.rows() {
        let (yr, dyr) = (y.row(r), dy.row(r));
        let dot: f64 = yr.iter().zip(dyr).map(|(a, b)| a * b).sum();
        for ((d, &yi), &dyi) in dx.row_mut(r).iter_mut().zip(yr).zip(dyr) {
            *d = yi * (dyi - dot);
        }
    }
    Ok(dx)
}

/// Values cached by [`layer_norm`] for its backward pass.
#[derive(Debug, Clone)]
pub struct LayerNormCache {
    pub xhat: Matrix,
    pub inv_std: Vec<f64>,
}

/// Per-row layer normalization with biased variance: `gain ⊙ x̂ + bias`.
pub fn layer_norm(
    x: &Matrix,
    gain: &Matrix,
    bias: &Matrix,
    eps: f64,
) -> Result<(Matrix, LayerNormCache)> {
    let d = x.cols();
    if gain.shape() != (1, d) || bias.shape() != (1, d) {
        return Err(shape_err("layer_norm", x, gain));
    }
    let mut xhat = Matrix::zeros(x.rows(), d);
    let mut out = Matrix::zeros(x.rows(), d);
    let mut inv_std = Vec::with_capacity(x.rows());
    for r in 0..x.rows() {
        let row = x.row(r);
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let is = 1.0 / (var + eps).sqrt();
        inv_std.push(is);
        for (c, &v) in row.iter().enumerate() {
            let h = (v - mean) * is;
            xhat.set(r, c, h);
            out.set(r, c, gain.data()[c] * h + bias.data()[c]);
        }
    }
    Ok((out, LayerNormCache { xhat, inv_std }))
}

/// Backward of [`layer_norm`]. Returns `(dx, dgain, dbias)`.
pub fn layer_norm_backward(
    cache: &LayerNormCache,
    gain: &Matrix,
    dy: &Matrix,
) -> Result<(Matrix, Matrix, Matrix)> {
    cache.xhat.check_same_shape(dy, "layer_norm_backward")?;
    let (n, d) = dy.shape();
    if gain.shape() != (1, d) {
        return Err(shape_err("layer_norm_backward", dy, gain));
    }
    let mut dx = Matrix::zeros(n, d);
    let mut dgain = Matrix::zeros(1, d);
    let mut dbias = Matrix::zeros(1, d);
    let mut dxhat = vec![0.0; d];
    for r in 0..n {
        let (xh, dyr) = (cache.xhat.row(r), dy.row(r));
        for c in 0..d {
            dgain.data_mut()[c] += dyr[c] * xh[c];
            dbias.data_mut()[c] += dyr[c];
            dxhat[c] = dyr[c] * gain.data()[c];
        }
        let mean_dxhat = dxhat.iter().sum::<f64>() / d as f64;
        let mean_dxhat_xhat = dxhat.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>() / d as f64;
        let is = cache.inv_std[r];
        for (c, out) in dx.row_mut(r).iter_mut().enumerate() {
            *out = is * (dxhat[c] - mean_dxhat - xh[c] * mean_dxhat_xhat);
        }
    }
    Ok((dx, dgain, dbias))
}

pub fn relu(x: &Matrix) -> Matrix {
    x.map(|v| v.max(0.0))
}

/// Gradient through ReLU, using the pre-activation `x`. Zero for `x <= 0`.
pub fn relu_backward(x: &Matrix, dy: &Matrix) -> Result<Matrix> {
    x.check_same_shape(dy, "relu_backward")?;
    Ok(Matrix::from_raw(
        x.rows(),
        x.cols(),
        x.data()
            .iter()
            .zip(dy.data())
            .map(|(&v, &g)| if v > 0.0 { g } else { 0.0 })
            .collect(),
    ))
}

/// Adds a `1 × c` bias to every row.
pub fn add_bias(x: &Matrix, bias: &Matrix) -> Result<Matrix> {
    if bias.shape() != (1, x.cols()) {
        return Err(shape_err("add_bias", x, bias));
    }
    let mut out = x.clone();
    for r in 0..out.rows() {
        for (o, b) in out.row_mut(r).iter_mut().zip(bias.data()) {
            *o += b;
        }
    }
    Ok(out)
}

/// Bias gradient: column sums of the upstream gradient.
pub fn add_bias_backward(dy: &Matrix) -> Matrix {
    let mut db = Matrix::zeros(1, dy.cols());
    for r in 0..dy.rows() {
        for (d, g) in db.data_mut().iter_mut().zip(dy.row(r)) {
            *d += g;
        }
    }
    db
}

/// Glorot-uniform initialization in `[-√(6/(rows+cols)), √(6/(rows+cols)))`.
/// Consumes exactly `rows × cols` draws, in row-major order.
pub fn init_xavier(rng: &mut Rng, rows: usize, cols: usize) -> Matrix {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols)
        .map(|_| rng.uniform(-bound, bound))
        .collect();
    Matrix::from_raw(rows, cols, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random(rng: &mut Rng, r: usize, c: usize) -> Matrix {
        Matrix::from_raw(r, c, (0..r * c).map(|_| rng.uniform(-2.0, 2.0)).collect())
    }

    #[test]
    fn matmul_hand_example() {
        let a = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]);
        let b = Matrix::from_rows(&[vec![5.0], vec![6.0]]);
        // 1*5 + 2*6 = 17, 3*5 + 4*6 = 39
        assert_eq!(
            matmul(&a, &b).unwrap(),
            Matrix::from_rows(&[vec![17.0], vec![39.0]])
        );
    }

    #[test]
    fn matmul_identity_and_zero() {
        let mut rng = Rng::new(1);
        let a = random(&mut rng, 3, 4);
        assert_eq!(matmul(&a, &Matrix::identity(4)).unwrap(), a);
        let z = matmul(&Matrix::zeros(2, 3), &a).unwrap();
        assert!(z.data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let err = matmul(&Matrix::zeros(2, 3), &Matrix::zeros(2, 3)).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("(2, 3)"), "{msg}");
    }

    #[test]
    fn transposed_products_agree_with_explicit_transpose() {
        let mut rng = Rng::new(2);
        let a = random(&mut rng, 4, 3);
        let b = random(&mut rng, 4, 5);
        let c = random(&mut rng, 6, 3);
        assert_eq!(
            matmul_at_b(&a, &b).unwrap(),
            matmul(&a.transpose(), &b).unwrap()
        );
        assert_eq!(
            matmul_a_bt(&a, &c).unwrap(),
            matmul(&a, &c.transpose()).unwrap()
        );
    }

    #[test]
    fn softmax_uniform_and_shift() {
        let s = row_softmax(&Matrix::from_rows(&[vec![0.0, 0.0, 0.0]]));
        for &v in s.data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        let big = row_softmax(&Matrix::from_rows(&[vec![1000.0, 1000.0, 1001.0]]));
        let small = row_softmax(&Matrix::from_rows(&[vec![0.0, 0.0, 1.0]]));
        assert!(big.is_finite());
        assert_eq!(big, small);
    }

    #[test]
    fn softmax_matches_high_precision_values() {
        // softmax([1,2,3]) evaluated with 50-digit arithmetic (mpmath).
        let expected = [
            0.090_030_573_170_380_46,
            0.244_728_471_054_797_64,
            0.665_240_955_774_821_9,
        ];
        let s = row_softmax(&Matrix::from_rows(&[vec![1.0, 2.0, 3.0]]));
        for (a, b) in s.data().iter().zip(expected) {
            assert!((a - b).abs() < 1e-15, "{a} vs {b}");
        }
    }

    #[test]
    fn masked_softmax_cases() {
        let x = Matrix::from_rows(&[vec![5.0, 5.0]]);
        let y = masked_row_softmax(&x, &[true, false]).unwrap();
        assert!((y.get(0, 0) - 1.0).abs() < 1e-12);
        assert!(y.get(0, 1) <= 1e-12);

        let x = Matrix::from_rows(&[vec![0.3, -1.0, 2.0], vec![1.0, 1.0, 0.0]]);
        assert_eq!(masked_row_softmax(&x, &[true; 3]).unwrap(), row_softmax(&x));

        let x = Matrix::from_rows(&[vec![0.0, 0.0, 0.0]]);
        let y = masked_row_softmax(&x, &[true, true, false]).unwrap();
        assert_eq!(y.get(0, 0), 0.5);
        assert_eq!(y.get(0, 1), 0.5);
        assert!(y.get(0, 2) <= 1e-12);

        assert!(matches!(
            masked_row_softmax(&x, &[false, false, false]),
            Err(Error::EmptyMask { .. })
        ));
    }

    #[test]
    fn relu_backward_blocks_negative_inputs() {
        let x = Matrix::from_rows(&[vec![-1.0, 0.5, -0.1]]);
        let dy = Matrix::from_rows(&[vec![3.0, 3.0, 3.0]]);
        let dx = relu_backward(&x, &dy).unwrap();
        assert_eq!(dx.data(), &[0.0, 3.0, 0.0]);
    }

    #[test]
    fn softmax_backward_of_uniform_upstream_is_zero() {
        let mut rng = Rng::new(5);
        let y = row_softmax(&random(&mut rng, 3, 4));
        let dx = softmax_backward(&y, &Matrix::filled(3, 4, 0.7)).unwrap();
        assert!(dx.data().iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn log_sum_exp_is_stable() {
        assert!((log_sum_exp(&[1e4, 1e4]) - (1e4 + 2f64.ln())).abs() < 1e-9);
        assert!((log_sum_exp(&[0.0; 4]) - 4f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn xavier_bounds_and_determinism() {
        let a = init_xavier(&mut Rng::new(9), 7, 5);
        let b = init_xavier(&mut Rng::new(9), 7, 5);
        assert_eq!(a, b);
        let bound = (6.0f64 / 12.0).sqrt();
        assert!(a.data().iter().all(|v| v.abs() <= bound));
    }

    #[test]
    fn xavier_mean_near_zero() {
        let m = init_xavier(&mut Rng::new(11), 100, 100);
        let mean = m.data().iter().sum::<f64>() / m.len() as f64;
        // bound ≈ 0.173, so the standard error of the mean is ≈ 0.001.
        assert!(mean.abs() < 0.05, "mean {mean}");
    }
}
