use super::TrainError;
use crate::num::Scalar;
use crate::tensor::{Graph, Tensor, TensorError, Var};

/// Largest tolerated deviation of an embedding norm from 1.
pub const NORM_TOL: f64 = 1e-6;

/// Symmetric InfoNCE, minimised convention:
/// `-(1/B) sum_i [log softmax_j(s_ij / tau)_i + log softmax_j(s_ji / tau)_i]`
/// over dot products of unit-norm rows. `ev` and `et` are row-major `[B, D]`.
pub fn info_nce(ev: &[f64], et: &[f64], b: usize, d: usize, tau: f64) -> Result<f64, TrainError> {
    if b == 0 || ev.len() != b * d || et.len() != b * d {
        return Err(TrainError::Batch(format!(
            "info_nce needs two [{b}, {d}] matrices with B >= 1"
        )));
    }
    if !(tau > 0.0) {
        return Err(TrainError::Config(format!("temperature must be positive, got {tau}")));
    }
    for (name, m) in [("video", ev), ("text", et)] {
        for (i, row) in m.chunks(d).enumerate() {
            let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if (n - 1.0).abs() > NORM_TOL {
                return Err(TrainError::Normalization { which: name, row: i, norm: n });
            }
        }
    }
    let s: Vec<f64> = (0..b * b)
        .map(|k| {
            let (i, j) = (k / b, k % b);
            (0..d).map(|c| ev[i * d + c] * et[j * d + c]).sum::<f64>() / tau
        })
        .collect();
    let lse = |vals: &mut dyn Iterator<Item = f64>| {
        let v: Vec<f64> = vals.collect();
        let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
    };
    let mut total = 0.0;
    for i in 0..b {
        let row = lse(&mut (0..b).map(|j| s[i * b + j]));
        let col = lse(&mut (0..b).map(|j| s[j * b + i]));
        total += (row - s[i * b + i]) + (col - s[i * b + i]);
    }
    Ok(total / b as f64)
}

/// Graph form of [`info_nce`]; `ev` and `et` must already be unit rows.
pub fn info_nce_graph<S: Scalar>(g: &mut Graph<S>, ev: Var, et: Var, tau: f64) -> Result<Var, TensorError> {
    let b = g.shape(ev)[0];
    let ett = g.transpose(et)?;
    let s = g.matmul(ev, ett)?;
    let s = g.scale(s, S::of(1.0 / tau));
    let rows = g.log_softmax(s, 1)?;
    let cols = g.log_softmax(s, 0)?;
    let both = g.add(rows, cols)?;
    let eye = g.constant(Tensor::eye(b));
    let diag = g.mul(both, eye)?;
    let sum = g.sum_all(diag);
    Ok(g.scale(sum, S::of(-1.0 / b as f64)))
}
