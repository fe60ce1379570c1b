//! Flat parameter storage and the segment layout over it.
//!
//! All parameters live in one `Vec<f64>` so the optimizer, EMA, gradient
//! check, and checkpoint serialization can treat the model as a single
//! vector. The layout maps named segments to ranges in that vector.

use std::ops::Range;

use rand::Rng;

use super::ModelConfig;

/// Offsets of one encoder layer's segments.
#[derive(Clone, Copy, Debug)]
pub struct LayerOffsets {
    pub ln1_g: usize,
    pub ln1_b: usize,
    pub wq: usize,
    pub bq: usize,
    pub wk: usize,
    pub bk: usize,
    pub wv: usize,
    pub bv: usize,
    pub wo: usize,
    pub bo: usize,
    pub ln2_g: usize,
    pub ln2_b: usize,
    pub w1: usize,
    pub b1: usize,
    pub w2: usize,
    pub b2: usize,
}

/// Segment offsets for a given [`ModelConfig`].
#[derive(Clone, Debug)]
pub struct ParamLayout {
    pub cfg: ModelConfig,
    pub embed_w: usize,
    pub embed_b: usize,
    pub pos: usize,
    pub layers: Vec<LayerOffsets>,
    pub final_ln_g: usize,
    pub final_ln_b: usize,
    pub readout_w: usize,
    pub readout_b: usize,
    pub total: usize,
}

impl ParamLayout {
    pub fn new(cfg: ModelConfig) -> Self {
        let d = cfg.d_model;
        let f = cfg.d_ff;
        let out = cfg.outputs();
        let mut at = 0usize;
        let mut take = |len: usize| {
            let start = at;
            at += len;
            start
        };
        let embed_w = take(d);
        let embed_b = take(d);
        let pos = take(cfg.context * d);
        let layers = (0..cfg.n_layers)
            .map(|_| LayerOffsets {
                ln1_g: take(d),
                ln1_b: take(d),
                wq: take(d * d),
                bq: take(d),
                wk: take(d * d),
                bk: take(d),
                wv: take(d * d),
                bv: take(d),
                wo: take(d * d),
                bo: take(d),
                ln2_g: take(d),
                ln2_b: take(d),
                w1: take(d * f),
                b1: take(f),
                w2: take(f * d),
                b2: take(d),
            })
            .collect();
        let final_ln_g = take(d);
        let final_ln_b = take(d);
        let readout_w = take(d * out);
        let readout_b = take(out);
        Self {
            cfg,
            embed_w,
            embed_b,
            pos,
            layers,
            final_ln_g,
            final_ln_b,
            readout_w,
            readout_b,
            total: at,
        }
    }

    /// Named segments with their ranges, for per-group diagnostics.
    pub fn segments(&self) -> Vec<(String, Range<usize>)> {
        let d = self.cfg.d_model;
        let f = self.cfg.d_ff;
        let out = self.cfg.outputs();
        let mut segs = vec![
            ("embed_w".to_string(), self.embed_w..self.embed_w + d),
            ("embed_b".to_string(), self.embed_b..self.embed_b + d),
            ("pos".to_string(), self.pos..self.pos + self.cfg.context * d),
        ];
        for (l, lo) in self.layers.iter().enumerate() {
            let named = [
                ("ln1_g", lo.ln1_g, d),
                ("ln1_b", lo.ln1_b, d),
                ("wq", lo.wq, d * d),
                ("bq", lo.bq, d),
                ("wk", lo.wk, d * d),
                ("bk", lo.bk, d),
                ("wv", lo.wv, d * d),
                ("bv", lo.bv, d),
                ("wo", lo.wo, d * d),
                ("bo", lo.bo, d),
                ("ln2_g", lo.ln2_g, d),
                ("ln2_b", lo.ln2_b, d),
                ("w1", lo.w1, d * f),
                ("b1", lo.b1, f),
                ("w2", lo.w2, f * d),
                ("b2", lo.b2, d),
            ];
            for (name, start, len) in named {
                segs.push((format!("layer{l}.{name}"), start..start + len));
            }
        }
        segs.push(("final_ln_g".to_string(), self.final_ln_g..self.final_ln_g + d));
        segs.push(("final_ln_b".to_string(), self.final_ln_b..self.final_ln_b + d));
        segs.push(("readout_w".to_string(), self.readout_w..self.readout_w + d * out));
        segs.push(("readout_b".to_string(), self.readout_b..self.readout_b + out));
        segs
    }
}

/// Model parameters as one flat vector plus the layout describing it.
#[derive(Clone, Debug)]
pub struct ModelParams {
    pub layout: ParamLayout,
    pub data: Vec<f64>,
}

impl ModelParams {
    /// Fan-in-scaled uniform init for weights, zeros for biases, identity
    /// for layer norms.
    pub fn init(cfg: ModelConfig, rng: &mut impl Rng) -> Self {
        let layout = ParamLayout::new(cfg);
        let mut data = vec![0.0; layout.total];
        let d = cfg.d_model;
        let f = cfg.d_ff;

        let mut fill_uniform = |data: &mut [f64], start: usize, len: usize, fan_in: usize| {
            let bound = 1.0 / (fan_in as f64).sqrt();
            for v in &mut data[start..start + len] {
                *v = rng.gen_range(-bound..=bound);
            }
        };

        fill_uniform(&mut data, layout.embed_w, d, 1);
        fill_uniform(&mut data, layout.pos, cfg.context * d, d);
        for lo in &layout.layers {
            for &w in &[lo.wq, lo.wk, lo.wv, lo.wo] {
                fill_uniform(&mut data, w, d * d, d);
            }
            fill_uniform(&mut data, lo.w1, d * f, d);
            fill_uniform(&mut data, lo.w2, f * d, f);
            data[lo.ln1_g..lo.ln1_g + d].fill(1.0);
            data[lo.ln2_g..lo.ln2_g + d].fill(1.0);
        }
        data[layout.final_ln_g..layout.final_ln_g + d].fill(1.0);
        fill_uniform(&mut data, layout.readout_w, d * cfg.outputs(), d);

        Self { layout, data }
    }

    pub fn cfg(&self) -> &ModelConfig {
        &self.layout.cfg
    }

    pub fn from_data(cfg: ModelConfig, data: Vec<f64>) -> Option<Self> {
        let layout = ParamLayout::new(cfg);
        (data.len() == layout.total).then_some(Self { layout, data })
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;

    #[test]
    fn layout_covers_data_exactly_once() {
        let cfg = ModelConfig { d_model: 8, n_layers: 2, n_heads: 2, d_ff: 16, context: 5, horizon: 3, n_quantiles: 9 };
        let layout = ParamLayout::new(cfg);
        let mut covered = vec![0u8; layout.total];
        for (_, range) in layout.segments() {
            for i in range {
                covered[i] += 1;
            }
        }
        assert!(covered.iter().all(|&c| c == 1));
    }

    #[test]
    fn init_is_deterministic_and_finite() {
        let cfg = ModelConfig::desk();
        let a = ModelParams::init(cfg, &mut substream(5, "init", 0));
        let b = ModelParams::init(cfg, &mut substream(5, "init", 0));
        assert_eq!(a.data, b.data);
        assert!(a.all_finite());
        assert_eq!(a.data.len(), a.layout.total);
    }
}
