//! Forward kernels shared by the tape and by direct callers.

use rand::Rng;

use crate::error::{invalid, Error, Result};
use crate::numerics::Array;
use crate::scalar::Scalar;
use crate::syntax::{AttentionMask, DistanceMatrix};

fn check_square(x: &Array<impl Scalar>, n: usize, op: &'static str) -> Result<()> {
    if x.rows() != n || x.cols() != n {
        return Err(Error::Shape {
            op,
            detail: format!("{}x{} against {n} tokens", x.rows(), x.cols()),
        });
    }
    Ok(())
}

/// Row softmax restricted to allowed entries; forbidden entries are exactly 0.
pub fn masked_softmax<T: Scalar>(scores: &Array<T>, mask: &AttentionMask) -> Result<Array<T>> {
    check_square(scores, mask.len(), "masked_softmax")?;
    let n = mask.len();
    let mut out = Array::zeros(n, n);
    for i in 0..n {
        let row = scores.row(i);
        let max = (0..n)
            .filter(|&j| mask.allows(i, j))
            .map(|j| row[j])
            .fold(None, |m: Option<T>, v| Some(m.map_or(v, |m| m.max(v))))
            .ok_or_else(|| invalid(format!("row {i} of the attention mask forbids every token")))?;
        let out_row = out.row_mut(i);
        let mut total = T::zero();
        for j in 0..n {
            if mask.allows(i, j) {
                let e = (row[j] - max).exp();
                out_row[j] = e;
                total += e;
            }
        }
        for v in out_row.iter_mut() {
            *v /= total;
        }
    }
    out.ensure_finite("masked_softmax")
}

/// Divides each attention weight by its syntactic distance and renormalizes
/// every row: `F(P)_ij = P_ij / (Z_i D_ij)` with `Z_i = Σ_j P_ij / D_ij`.
///
/// Returns the reweighted matrix and the per-row normalizers.
pub fn distance_reweight<T: Scalar>(
    p: &Array<T>,
    d: &DistanceMatrix,
    mask: &AttentionMask,
) -> Result<(Array<T>, Vec<T>)> {
    let n = d.len();
    check_square(p, n, "distance_reweight")?;
    if mask.len() != n {
        return Err(Error::Shape {
            op: "distance_reweight",
            detail: format!("mask over {} tokens, distances over {n}", mask.len()),
        });
    }
    let mut out = Array::zeros(n, n);
    let mut z = Vec::with_capacity(n);
    for i in 0..n {
        let out_row = out.row_mut(i);
        let mut zi = T::zero();
        for j in 0..n {
            if mask.allows(i, j) {
                let w = p.get(i, j) / T::of(f64::from(d.get(i, j)));
                out_row[j] = w;
                zi += w;
            }
        }
        if zi <= T::zero() {
            return Err(invalid(format!("attention row {i} has zero mass after reweighting")));
        }
        for v in out_row.iter_mut() {
            *v /= zi;
        }
        z.push(zi);
    }
    Ok((out.ensure_finite("distance_reweight")?, z))
}

/// Unmasked row softmax.
pub fn softmax_rows<T: Scalar>(x: &Array<T>) -> Array<T> {
    let mut out = x.clone();
    for i in 0..x.rows() {
        let row = out.row_mut(i);
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut total = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        for v in row.iter_mut() {
            *v /= total;
        }
    }
    out
}

/// Normalized rows `x̂` and per-row `1/σ`; the affine part is applied by the caller.
pub(crate) fn normalize_rows<T: Scalar>(x: &Array<T>) -> (Array<T>, Vec<T>) {
    let d = T::of(x.cols() as f64);
    let mut xhat = x.clone();
    let mut inv_std = Vec::with_capacity(x.rows());
    for i in 0..x.rows() {
        let row = xhat.row_mut(i);
        let mean = row.iter().copied().sum::<T>() / d;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / d;
        let s = T::one() / (var + T::layer_norm_eps()).sqrt();
        for v in row.iter_mut() {
            *v = (*v - mean) * s;
        }
        inv_std.push(s);
    }
    (xhat, inv_std)
}

/// Normalizes each row to zero mean and unit variance, then applies `gain` and `bias`.
pub fn layer_norm<T: Scalar>(x: &Array<T>, gain: &Array<T>, bias: &Array<T>) -> Result<Array<T>> {
    check_affine(x, gain, bias)?;
    let (mut y, _) = normalize_rows(x);
    for i in 0..y.rows() {
        for (j, v) in y.row_mut(i).iter_mut().enumerate() {
            *v = *v * gain.data()[j] + bias.data()[j];
        }
    }
    y.ensure_finite("layer_norm")
}

pub(crate) fn check_affine<T: Scalar>(x: &Array<T>, gain: &Array<T>, bias: &Array<T>) -> Result<()> {
    if gain.shape() != [1, x.cols()] || bias.shape() != [1, x.cols()] {
        return Err(Error::Shape {
            op: "layer_norm",
            detail: format!(
                "gain {:?} / bias {:?} for {} columns",
                gain.shape(),
                bias.shape(),
                x.cols()
            ),
        });
    }
    Ok(())
}

pub fn relu<T: Scalar>(x: &Array<T>) -> Array<T> {
    x.map(|v| v.max(T::zero()))
}

/// Inverted-dropout multipliers: `0` with probability `rate`, else `1/(1-rate)`.
pub fn dropout_mask<T: Scalar, R: Rng + ?Sized>(rows: usize, cols: usize, rate: f64, rng: &mut R) -> Result<Array<T>> {
    check_rate(rate)?;
    let keep = T::of(1.0 / (1.0 - rate));
    let data = (0..rows * cols)
        .map(|_| if rng.gen::<f64>() < rate { T::zero() } else { keep })
        .collect();
    Array::from_vec(rows, cols, data)
}

pub(crate) fn check_rate(rate: f64) -> Result<()> {
    if !(0.0..1.0).contains(&rate) {
        return Err(invalid(format!("dropout rate {rate} outside [0, 1)")));
    }
    Ok(())
}

/// Applies dropout when `train` is set; identity otherwise.
pub fn dropout<T: Scalar, R: Rng + ?Sized>(x: &Array<T>, rate: f64, rng: &mut R, train: bool) -> Result<Array<T>> {
    check_rate(rate)?;
    if !train || rate == 0.0 {
        return Ok(x.clone());
    }
    let mask = dropout_mask(x.rows(), x.cols(), rate, rng)?;
    let data = x.data().iter().zip(mask.data()).map(|(&a, &m)| a * m).collect();
    Array::from_vec(x.rows(), x.cols(), data)
}

/// Column-wise maximum with the arg-max row of each column (first on ties).
pub fn max_pool_rows<T: Scalar>(x: &Array<T>) -> Result<(Array<T>, Vec<usize>)> {
    if x.rows() == 0 {
        return Err(invalid("max-pool over zero rows"));
    }
    let mut best = x.row(0).to_vec();
    let mut arg = vec![0; x.cols()];
    for i in 1..x.rows() {
        for (j, &v) in x.row(i).iter().enumerate() {
            if v > best[j] {
                best[j] = v;
                arg[j] = i;
            }
        }
    }
    Ok((Array::row_vector(best), arg))
}

/// `-log softmax(logits)[target]` with max-subtraction, plus the softmax.
pub fn cross_entropy<T: Scalar>(logits: &Array<T>, target: usize) -> Result<(T, Array<T>)> {
    if logits.rows() != 1 {
        return Err(Error::Shape {
            op: "cross_entropy",
            detail: format!("expected a single row of logits, got {:?}", logits.shape()),
        });
    }
    if target >= logits.cols() {
        return Err(invalid(format!(
            "target {target} out of range for {} classes",
            logits.cols()
        )));
    }
    let row = logits.row(0);
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let lse = row.iter().map(|&v| (v - max).exp()).sum::<T>().ln() + max;
    let loss = lse - row[target];
    if !loss.is_finite() {
        return Err(Error::NonFinite("cross_entropy"));
    }
    Ok((loss, softmax_rows(logits)))
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::syntax::AttentionMask;

    type A = Array<f64>;

    #[test]
    fn uniform_scores_give_uniform_rows() {
        let p = masked_softmax(&A::zeros(3, 3), &AttentionMask::all_allowed(3)).unwrap();
        assert!(p.data().iter().all(|&v| (v - 1.0 / 3.0).abs() < 1e-15));
    }

    #[test]
    fn forbidden_entries_are_excluded() {
        let mask = AttentionMask::from_allow(2, vec![true, false, false, true]).unwrap();
        let s = A::from_rows(&[[5.0, 5.0], [5.0, 5.0]]).unwrap();
        let p = masked_softmax(&s, &mask).unwrap();
        assert_eq!(p.row(0), &[1.0, 0.0]);
    }

    #[test]
    fn softmax_of_one_two_three() {
        // exp(k) / (e + e^2 + e^3), k = 1, 2, 3
        let expected = [0.09003057317038046, 0.24472847105479765, 0.6652409557748219];
        let s = A::from_rows(&[[1.0, 2.0, 3.0], [0.0, 0.0, 0.0], [0.0, 0.0, 0.0]]).unwrap();
        let p = masked_softmax(&s, &AttentionMask::all_allowed(3)).unwrap();
        for (a, b) in p.row(0).iter().zip(expected) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn fully_forbidden_row_errors() {
        let mask = AttentionMask::from_allow(2, vec![false, false, true, true]).unwrap();
        assert!(masked_softmax(&A::zeros(2, 2), &mask).is_err());
    }

    #[test]
    fn reweight_hand_case() {
        let p = A::from_rows(&[[0.5, 0.5], [0.5, 0.5]]).unwrap();
        let d = DistanceMatrix::from_raw(2, vec![1, 2, 2, 1]).unwrap();
        let (f, z) = distance_reweight(&p, &d, &AttentionMask::all_allowed(2)).unwrap();
        assert!((f.get(0, 0) - 2.0 / 3.0).abs() < 1e-15);
        assert!((f.get(0, 1) - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(z[0], 0.75);
    }

    #[test]
    fn layer_norm_of_constant_row_is_zero() {
        let x = A::from_rows(&[[3.0, 3.0, 3.0, 3.0]]).unwrap();
        let y = layer_norm(&x, &A::filled(1, 4, 1.0), &A::zeros(1, 4)).unwrap();
        assert_eq!(y.data(), &[0.0; 4]);
        assert!(layer_norm(&x, &A::filled(1, 3, 1.0), &A::zeros(1, 4)).is_err());
    }

    #[test]
    fn dropout_identity_when_not_training() {
        let x = A::from_rows(&[[1.0, -2.0, 3.0]]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(dropout(&x, 0.5, &mut rng, false).unwrap(), x);
        assert!(dropout(&x, 1.0, &mut rng, true).is_err());
        assert!(dropout(&x, -0.1, &mut rng, true).is_err());
    }

    #[test]
    fn dropout_survivor_fraction() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let x = A::filled(100, 100, 1.0);
        let y = dropout(&x, 0.5, &mut rng, true).unwrap();
        let survivors = y.data().iter().filter(|&&v| v != 0.0).count() as f64 / 1e4;
        assert!((survivors - 0.5).abs() <= 0.05, "{survivors}");
        assert!(y.data().iter().all(|&v| v == 0.0 || v == 2.0));
    }

    #[test]
    fn max_pool_cases() {
        let x = A::from_rows(&[[1.0, 4.0], [3.0, 2.0]]).unwrap();
        let (m, arg) = max_pool_rows(&x).unwrap();
        assert_eq!(m.data(), &[3.0, 4.0]);
        assert_eq!(arg, vec![1, 0]);
        let tie = A::from_rows(&[[1.0], [1.0]]).unwrap();
        assert_eq!(max_pool_rows(&tie).unwrap().1, vec![0]);
        assert!(max_pool_rows(&A::zeros(0, 2)).is_err());
    }

    #[test]
    fn cross_entropy_cases() {
        let (l, _) = cross_entropy(&A::row_vector(vec![0.0, 0.0]), 0).unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-15);
        let (l, _) = cross_entropy(&A::row_vector(vec![1e6, 0.0]), 0).unwrap();
        assert!(l.abs() < 1e-12);
        // log(e + e^2 + e^3) - 3
        let (l, _) = cross_entropy(&A::row_vector(vec![1.0, 2.0, 3.0]), 2).unwrap();
        assert!((l - 0.4076059644443803).abs() < 1e-14);
        assert!(cross_entropy(&A::row_vector(vec![1.0, 2.0]), 2).is_err());
    }
}
