use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::loss::info_nce_graph;
use super::TrainError;
use crate::model::bpe::{BOS, EOS};
use crate::model::{Bindings, EgoVideo, ModelConfig};
use crate::tensor::{gradcheck, GradReport, GradcheckConfig, Graph, Tensor, TensorError, Var};

/// Denominator floor for the whole-model check.
pub const MODEL_FLOOR: f64 = 1e-6;

/// Central-difference check of the whole model: both pathways, fusion, text
/// encoder and InfoNCE over a two-pair batch of random inputs, in `f64`.
///
/// Every parameter is jittered first so zero-initialised adapter
/// projections do not hide the adapter interior from the check.
pub fn gradcheck_model(cfg: &ModelConfig, tau: f64, seed: u64, check: &GradcheckConfig) -> Result<GradReport, TrainError> {
    let mut model = EgoVideo::<f64>::new(cfg.clone(), seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9);
    let trainable: Vec<usize> = (0..model.store().len())
        .filter(|&i| model.store().entry(i).group.trainable())
        .collect();
    for &i in &trainable {
        for v in model.store_mut().value_mut(i).data_mut() {
            *v += rng.gen_range(-0.2..0.2);
        }
    }
    let frames = |n: usize, rng: &mut ChaCha8Rng| {
        let len = n * 3 * cfg.image_size * cfg.image_size;
        Tensor::new(
            vec![n, 3, cfg.image_size, cfg.image_size],
            (0..len).map(|_| rng.gen_range(0.0..1.0)).collect(),
        )
        .expect("shape matches")
    };
    let clips: Vec<(Tensor<f64>, Tensor<f64>)> = (0..2)
        .map(|_| (frames(cfg.frames, &mut rng), frames(cfg.high_frames(), &mut rng)))
        .collect();
    let texts: Vec<Vec<u32>> = (0..2)
        .map(|_| {
            let body = (cfg.max_text_len - 2).min(3);
            let mut t = vec![BOS];
            t.extend((0..body).map(|_| rng.gen_range(4..cfg.vocab_size as u32)));
            t.push(EOS);
            t
        })
        .collect();
    let inputs: Vec<Tensor<f64>> = trainable.iter().map(|&i| model.store().value(i).clone()).collect();
    let n = model.store().len();
    let f = |g: &mut Graph<f64>, vars: &[Var]| -> Result<Var, TensorError> {
        let mut slots = vec![None; n];
        for (k, &i) in trainable.iter().enumerate() {
            slots[i] = Some(vars[k]);
        }
        let b = Bindings::from_vars(slots);
        let model_err = |e: crate::model::ModelError| match e {
            crate::model::ModelError::Tensor(t) => t,
            other => TensorError::Shape {
                op: "model",
                detail: other.to_string(),
            },
        };
        let mut ev = Vec::new();
        let mut et = Vec::new();
        for ((lo, hi), t) in clips.iter().zip(&texts) {
            ev.push(model.encode_video(g, &b, lo, hi, true, &mut Vec::new()).map_err(model_err)?.e_v);
            et.push(model.encode_text(g, &b, t).map_err(model_err)?);
        }
        let ev = g.concat(&ev, 0)?;
        let ev = g.l2_normalize(ev, 1)?;
        let et = g.concat(&et, 0)?;
        let et = g.l2_normalize(et, 1)?;
        info_nce_graph(g, ev, et, tau)
    };
    // Key biases have an exactly zero gradient, so central-difference
    // roundoff alone would dominate a 1e-8 floor.
    let check = GradcheckConfig {
        floor: check.floor.max(MODEL_FLOOR),
        ..*check
    };
    Ok(gradcheck(f, &inputs, &check)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::AdapterKind;

    #[test]
    fn tiny_model_passes() {
        let cfg = ModelConfig {
            embed_dim: 8,
            layers: 1,
            heads: 2,
            patch_size: 4,
            image_size: 8,
            frames: 2,
            upsample: 2,
            vocab_size: 10,
            max_text_len: 5,
            adapter_kind: AdapterKind::Motion,
            ..Default::default()
        };
        let r = gradcheck_model(&cfg, 0.5, 1, &GradcheckConfig { max_coords: 400, ..Default::default() }).unwrap();
        assert!(r.pass, "{r:?}");
    }
}
