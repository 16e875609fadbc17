use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{Graph, Tensor, TensorError, Var};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradcheckConfig {
    pub h: f64,
    pub tol: f64,
    /// Above this many coordinates a seeded random subsample is checked.
    pub max_coords: usize,
    pub seed: u64,
    /// Lower bound on the relative-error denominator.
    pub floor: f64,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self {
            h: 1e-5,
            tol: 1e-4,
            max_coords: 10_000,
            seed: 0,
            floor: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradReport {
    pub max_rel_err: f64,
    /// `(input index, coordinate)` of the worst disagreement.
    pub worst: Option<(usize, usize)>,
    pub checked: usize,
    pub tol: f64,
    pub pass: bool,
}

/// Compares reverse-mode gradients against central differences.
///
/// `f` builds the expression from the input variables. A non-scalar output
/// is contracted with a fixed seeded random tensor so every output
/// coordinate contributes. The error per coordinate is
/// `|a - n| / max(|a|, |n|, floor)`.
pub fn gradcheck<F>(f: F, inputs: &[Tensor<f64>], cfg: &GradcheckConfig) -> Result<GradReport, TensorError>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var, TensorError>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut projection: Option<Tensor<f64>> = None;

    let mut build = |g: &mut Graph<f64>, vars: &[Var], rng: &mut ChaCha8Rng| -> Result<Var, TensorError> {
        let out = f(g, vars)?;
        if let Some((_, op)) = g.first_non_finite() {
            return Err(TensorError::Instability { op: op.to_string() });
        }
        if g.value(out).numel() == 1 {
            return g.reshape(out, &[]);
        }
        let shape = g.shape(out).to_vec();
        let r = projection.get_or_insert_with(|| {
            let n = shape.iter().product();
            Tensor::new(shape.clone(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
        });
        let rv = g.constant(r.clone());
        let prod = g.mul(out, rv)?;
        Ok(g.sum_all(prod))
    };

    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let loss = build(&mut g, &vars, &mut rng)?;
    g.backward(loss)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(v, t)| g.grad(*v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; t.numel()]))
        .collect();

    let coords: Vec<(usize, usize)> = inputs
        .iter()
        .enumerate()
        .flat_map(|(i, t)| (0..t.numel()).map(move |c| (i, c)))
        .collect();
    let chosen: Vec<(usize, usize)> = if coords.len() > cfg.max_coords {
        let mut idx = sample(&mut rng, coords.len(), cfg.max_coords).into_vec();
        idx.sort_unstable();
        idx.into_iter().map(|i| coords[i]).collect()
    } else {
        coords
    };

    let mut eval = |perturbed: &[Tensor<f64>], rng: &mut ChaCha8Rng| -> Result<f64, TensorError> {
        let mut g = Graph::new();
        let vars: Vec<Var> = perturbed.iter().map(|t| g.constant(t.clone())).collect();
        let loss = build(&mut g, &vars, rng)?;
        Ok(g.value(loss).item())
    };

    let mut work = inputs.to_vec();
    let mut max_rel_err = 0.0f64;
    let mut worst = None;
    for &(i, c) in &chosen {
        let orig = work[i].data()[c];
        work[i].data_mut()[c] = orig + cfg.h;
        let plus = eval(&work, &mut rng)?;
        work[i].data_mut()[c] = orig - cfg.h;
        let minus = eval(&work, &mut rng)?;
        work[i].data_mut()[c] = orig;
        let numeric = (plus - minus) / (2.0 * cfg.h);
        let a = analytic[i][c];
        let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(cfg.floor);
        if err > max_rel_err || worst.is_none() {
            max_rel_err = max_rel_err.max(err);
            worst = Some((i, c));
        }
    }
    Ok(GradReport {
        max_rel_err,
        worst,
        checked: chosen.len(),
        tol: cfg.tol,
        pass: max_rel_err <= cfg.tol,
    })
}
