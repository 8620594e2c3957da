//! Wide-and-deep model: a wide linear part over raw plus crossed sparse
//! features, and a deep part that embeds active features and passes their
//! combination through leaky-rectifier hidden layers.
//!
//! logit = w_wide . [x, phi(x)] + w_deep . a_last + bias

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{glorot_uniform, ModelError};
use crate::features::{hash_pair, FeatureLayout};
use crate::types::{CoreError, SparseVector};

/// Negative slope of the leaky rectifier.
const LEAK: f64 = 0.01;

fn leaky(pre: f64) -> f64 {
    if pre > 0.0 {
        pre
    } else {
        LEAK * pre
    }
}

fn leaky_deriv(pre: f64) -> f64 {
    if pre > 0.0 {
        1.0
    } else {
        LEAK
    }
}

/// How active-feature embeddings are pooled into the deep input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbedCombine {
    Sum,
    Mean,
}

/// Shape of a wide-and-deep model. The raw feature space comes from
/// `layout`; crossed features occupy the id range
/// `[input_dim, input_dim + cross_dim)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WideDeepConfig {
    pub layout: FeatureLayout,
    /// Field-name pairs to cross; empty disables the transform.
    pub cross_pairs: Vec<(String, String)>,
    /// Width of the reserved crossed-feature range.
    pub cross_dim: usize,
    pub embed_dim: usize,
    /// Hidden layer sizes; may be empty (deep part becomes linear in the
    /// pooled embedding).
    pub layers: Vec<usize>,
    pub combine: EmbedCombine,
}

impl WideDeepConfig {
    /// Minimal config over a layout: no crosses, 16-wide embeddings pooled
    /// by summation.
    pub fn new(layout: FeatureLayout, layers: Vec<usize>) -> Self {
        Self { layout, cross_pairs: Vec::new(), cross_dim: 0, embed_dim: 16, layers, combine: EmbedCombine::Sum }
    }

    pub fn input_dim(&self) -> usize {
        self.layout.input_dim()
    }

    /// Width of the wide weight vector: raw plus crossed feature space.
    pub fn wide_dim(&self) -> usize {
        self.input_dim() + self.cross_dim
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let cfg = |msg: String| Err(ModelError::Config(msg));
        if self.embed_dim == 0 {
            return cfg("embed_dim must be positive".into());
        }
        if self.layers.iter().any(|&l| l == 0) {
            return cfg("hidden layer sizes must be positive".into());
        }
        if !self.cross_pairs.is_empty() && self.cross_dim == 0 {
            return cfg("cross_pairs given but cross_dim is 0".into());
        }
        for (a, b) in &self.cross_pairs {
            for field in [a, b] {
                if self.layout.block(field).is_none() {
                    return cfg(format!("cross_pairs references unknown field {field:?}"));
                }
            }
        }
        if u32::try_from(self.wide_dim()).is_err() {
            return cfg(format!("wide dimension {} exceeds u32 range", self.wide_dim()));
        }
        Ok(())
    }
}

/// Crossed features phi(x): for every configured field pair, each pair of
/// active ids hashes to one crossed id carrying the product of the two
/// values. Crossed ids live in `[cross_base, cross_base + cross_dim)`,
/// disjoint from raw ids. Assumes finite feature values.
pub fn cross_product_transform(
    x: &SparseVector,
    layout: &FeatureLayout,
    cross_pairs: &[(String, String)],
    cross_base: u32,
    cross_dim: usize,
) -> SparseVector {
    if cross_pairs.is_empty() || cross_dim == 0 {
        return SparseVector::empty();
    }
    let in_block = |name: &str, id: u32| {
        layout.block(name).is_some_and(|b| id >= b.start && id - b.start < b.size)
    };
    let mut entries: Vec<(u32, f64)> = Vec::new();
    for (field_a, field_b) in cross_pairs {
        for &(id_a, v_a) in x.entries().iter().filter(|&&(id, _)| in_block(field_a, id)) {
            for &(id_b, v_b) in x.entries().iter().filter(|&&(id, _)| in_block(field_b, id)) {
                let slot = (hash_pair(id_a, id_b) % cross_dim as u64) as u32;
                entries.push((cross_base + slot, v_a * v_b));
            }
        }
    }
    entries.sort_by_key(|&(id, _)| id);
    let mut canon: Vec<(u32, f64)> = Vec::with_capacity(entries.len());
    for (id, v) in entries {
        match canon.last_mut() {
            Some(last) if last.0 == id => last.1 += v,
            _ => canon.push((id, v)),
        }
    }
    canon.retain(|&(_, v)| v != 0.0);
    SparseVector::from_canonical(canon)
}

#[derive(Debug, Clone, PartialEq)]
pub struct WideDeepModel {
    config: WideDeepConfig,
    /// Length wide_dim: raw weights then crossed weights.
    wide: Vec<f64>,
    /// Row-major `input_dim x embed_dim`.
    embeddings: Vec<f64>,
    /// Per layer, row-major `out x in`.
    layer_weights: Vec<Vec<f64>>,
    layer_biases: Vec<Vec<f64>>,
    /// Output weights over the final activation.
    deep_out: Vec<f64>,
    bias: f64,
}

/// Cached forward state for one example.
#[derive(Debug, Clone)]
pub struct WideDeepForward {
    pub logit: f64,
    crossed: SparseVector,
    /// activations[0] is the pooled embedding; activations[l+1] the output
    /// of hidden layer l.
    activations: Vec<Vec<f64>>,
    /// Pre-activation values per hidden layer.
    pres: Vec<Vec<f64>>,
}

/// Gradient accumulator. Wide weights and embedding rows stay sparse and
/// ordered; dense layers accumulate densely.
#[derive(Debug, Clone)]
pub struct WideDeepGradients {
    wide: BTreeMap<u32, f64>,
    embeddings: BTreeMap<u32, Vec<f64>>,
    layer_weights: Vec<Vec<f64>>,
    layer_biases: Vec<Vec<f64>>,
    deep_out: Vec<f64>,
    bias: f64,
}

impl WideDeepModel {
    /// Glorot-uniform init for all dense matrices (wide vector, embedding
    /// table, hidden layers, output weights); biases start at zero. The draw
    /// order is fixed, so equal seeds give equal parameters.
    pub fn init<R: Rng>(config: WideDeepConfig, rng: &mut R) -> Result<Self, ModelError> {
        config.validate()?;
        let input_dim = config.input_dim();
        let wide_dim = config.wide_dim();
        let embed_dim = config.embed_dim;

        let wide = glorot_uniform(rng, wide_dim, 1, wide_dim);
        let embeddings = glorot_uniform(rng, input_dim, embed_dim, input_dim * embed_dim);
        let mut layer_weights = Vec::with_capacity(config.layers.len());
        let mut layer_biases = Vec::with_capacity(config.layers.len());
        let mut in_dim = embed_dim;
        for &out_dim in &config.layers {
            layer_weights.push(glorot_uniform(rng, in_dim, out_dim, out_dim * in_dim));
            layer_biases.push(vec![0.0; out_dim]);
            in_dim = out_dim;
        }
        let deep_out = glorot_uniform(rng, in_dim, 1, in_dim);
        Ok(Self { config, wide, embeddings, layer_weights, layer_biases, deep_out, bias: 0.0 })
    }

    /// All-zero parameters; the skeleton checkpoints load into.
    pub fn zeros(config: WideDeepConfig) -> Result<Self, ModelError> {
        config.validate()?;
        let wide = vec![0.0; config.wide_dim()];
        let embeddings = vec![0.0; config.input_dim() * config.embed_dim];
        let mut layer_weights = Vec::with_capacity(config.layers.len());
        let mut layer_biases = Vec::with_capacity(config.layers.len());
        let mut in_dim = config.embed_dim;
        for &out_dim in &config.layers {
            layer_weights.push(vec![0.0; out_dim * in_dim]);
            layer_biases.push(vec![0.0; out_dim]);
            in_dim = out_dim;
        }
        let deep_out = vec![0.0; in_dim];
        Ok(Self { config, wide, embeddings, layer_weights, layer_biases, deep_out, bias: 0.0 })
    }

    pub fn config(&self) -> &WideDeepConfig {
        &self.config
    }

    /// 1 for summation pooling, 1/n_active for mean pooling.
    fn combine_scale(&self, x: &SparseVector) -> f64 {
        match self.config.combine {
            EmbedCombine::Sum => 1.0,
            EmbedCombine::Mean => {
                if x.is_empty() {
                    0.0
                } else {
                    1.0 / x.len() as f64
                }
            }
        }
    }

    pub fn forward(&self, x: &SparseVector) -> Result<WideDeepForward, ModelError> {
        let input_dim = self.config.input_dim();
        let embed_dim = self.config.embed_dim;

        // Pooled embedding of the active raw features.
        let mut pooled = vec![0.0; embed_dim];
        let scale = self.combine_scale(x);
        for &(id, v) in x.entries() {
            if id as usize >= input_dim {
                return Err(CoreError::FeatureIdOutOfRange { id, dim: input_dim }.into());
            }
            let row = &self.embeddings[id as usize * embed_dim..(id as usize + 1) * embed_dim];
            for (p, &e) in pooled.iter_mut().zip(row) {
                *p += v * scale * e;
            }
        }

        // Hidden layers.
        let mut activations = vec![pooled];
        let mut pres = Vec::with_capacity(self.layer_weights.len());
        for (w, b) in self.layer_weights.iter().zip(&self.layer_biases) {
            let input = activations.last().unwrap();
            let in_dim = input.len();
            let mut pre = b.clone();
            for (i, pre_i) in pre.iter_mut().enumerate() {
                let row = &w[i * in_dim..(i + 1) * in_dim];
                *pre_i += row.iter().zip(input).map(|(wij, aj)| wij * aj).sum::<f64>();
            }
            activations.push(pre.iter().map(|&p| leaky(p)).collect());
            pres.push(pre);
        }

        let crossed = cross_product_transform(
            x,
            &self.config.layout,
            &self.config.cross_pairs,
            input_dim as u32,
            self.config.cross_dim,
        );
        let logit = x.dot(&self.wide)?
            + crossed.dot(&self.wide)?
            + self
                .deep_out
                .iter()
                .zip(activations.last().unwrap())
                .map(|(w, a)| w * a)
                .sum::<f64>()
            + self.bias;
        Ok(WideDeepForward { logit, crossed, activations, pres })
    }

    pub fn new_gradients(&self) -> WideDeepGradients {
        WideDeepGradients {
            wide: BTreeMap::new(),
            embeddings: BTreeMap::new(),
            layer_weights: self.layer_weights.iter().map(|w| vec![0.0; w.len()]).collect(),
            layer_biases: self.layer_biases.iter().map(|b| vec![0.0; b.len()]).collect(),
            deep_out: vec![0.0; self.deep_out.len()],
            bias: 0.0,
        }
    }

    /// Backpropagates d(loss)/d(logit) for one example into the accumulator.
    pub fn accumulate_gradient(
        &self,
        x: &SparseVector,
        fwd: &WideDeepForward,
        d_logit: f64,
        grads: &mut WideDeepGradients,
    ) {
        let embed_dim = self.config.embed_dim;
        grads.bias += d_logit;
        for &(id, v) in x.entries().iter().chain(fwd.crossed.entries()) {
            *grads.wide.entry(id).or_insert(0.0) += d_logit * v;
        }

        let a_last = fwd.activations.last().unwrap();
        for (g, a) in grads.deep_out.iter_mut().zip(a_last) {
            *g += d_logit * a;
        }

        // delta = d logit / d activation, walked backwards through layers.
        let mut delta: Vec<f64> = self.deep_out.iter().map(|w| d_logit * w).collect();
        for l in (0..self.layer_weights.len()).rev() {
            let input = &fwd.activations[l];
            let in_dim = input.len();
            let w = &self.layer_weights[l];
            let mut delta_prev = vec![0.0; in_dim];
            for (i, (&d_i, &pre_i)) in delta.iter().zip(&fwd.pres[l]).enumerate() {
                let d_pre = d_i * leaky_deriv(pre_i);
                grads.layer_biases[l][i] += d_pre;
                let w_row = &w[i * in_dim..(i + 1) * in_dim];
                let g_row = &mut grads.layer_weights[l][i * in_dim..(i + 1) * in_dim];
                for j in 0..in_dim {
                    g_row[j] += d_pre * input[j];
                    delta_prev[j] += d_pre * w_row[j];
                }
            }
            delta = delta_prev;
        }

        // delta is now d logit / d pooled-embedding.
        let scale = self.combine_scale(x);
        for &(id, v) in x.entries() {
            let row = grads.embeddings.entry(id).or_insert_with(|| vec![0.0; embed_dim]);
            for (g, &d) in row.iter_mut().zip(&delta) {
                *g += d * v * scale;
            }
        }
    }

    /// params -= step * grads
    pub fn apply_gradients(&mut self, grads: &WideDeepGradients, step: f64) {
        for (&id, &g) in &grads.wide {
            self.wide[id as usize] -= step * g;
        }
        let embed_dim = self.config.embed_dim;
        for (&id, row) in &grads.embeddings {
            let dst = &mut self.embeddings[id as usize * embed_dim..(id as usize + 1) * embed_dim];
            for (p, &g) in dst.iter_mut().zip(row) {
                *p -= step * g;
            }
        }
        for (w, g) in self.layer_weights.iter_mut().zip(&grads.layer_weights) {
            for (p, &gi) in w.iter_mut().zip(g) {
                *p -= step * gi;
            }
        }
        for (b, g) in self.layer_biases.iter_mut().zip(&grads.layer_biases) {
            for (p, &gi) in b.iter_mut().zip(g) {
                *p -= step * gi;
            }
        }
        for (p, &g) in self.deep_out.iter_mut().zip(&grads.deep_out) {
            *p -= step * g;
        }
        self.bias -= step * grads.bias;
    }

    /// Multiplies every parameter by `factor`.
    pub fn scale_params(&mut self, factor: f64) {
        for w in self
            .wide
            .iter_mut()
            .chain(self.embeddings.iter_mut())
            .chain(self.layer_weights.iter_mut().flatten())
            .chain(self.layer_biases.iter_mut().flatten())
            .chain(self.deep_out.iter_mut())
        {
            *w *= factor;
        }
        self.bias *= factor;
    }

    pub fn params_finite(&self) -> bool {
        self.wide.iter().all(|w| w.is_finite())
            && self.embeddings.iter().all(|w| w.is_finite())
            && self.layer_weights.iter().flatten().all(|w| w.is_finite())
            && self.layer_biases.iter().flatten().all(|w| w.is_finite())
            && self.deep_out.iter().all(|w| w.is_finite())
            && self.bias.is_finite()
    }

    /// Flat order: wide, embeddings, (layer weights, layer biases)*,
    /// deep_out, bias.
    pub fn params_flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        out.extend_from_slice(&self.wide);
        out.extend_from_slice(&self.embeddings);
        for (w, b) in self.layer_weights.iter().zip(&self.layer_biases) {
            out.extend_from_slice(w);
            out.extend_from_slice(b);
        }
        out.extend_from_slice(&self.deep_out);
        out.push(self.bias);
        out
    }

    pub fn set_params_flat(&mut self, params: &[f64]) -> Result<(), ModelError> {
        let expected = self.params_flat().len();
        if params.len() != expected {
            return Err(ModelError::ArrayShape {
                name: "wide_deep".into(),
                got: params.len(),
                expected,
            });
        }
        let mut pos = 0;
        let mut take = |dst: &mut [f64]| {
            dst.copy_from_slice(&params[pos..pos + dst.len()]);
            pos += dst.len();
        };
        take(&mut self.wide);
        take(&mut self.embeddings);
        for (w, b) in self.layer_weights.iter_mut().zip(&mut self.layer_biases) {
            take(w);
            take(b);
        }
        take(&mut self.deep_out);
        self.bias = params[pos];
        Ok(())
    }

    /// Dense gradient vector in [`WideDeepModel::params_flat`] order.
    pub fn gradients_flat(&self, grads: &WideDeepGradients) -> Vec<f64> {
        let embed_dim = self.config.embed_dim;
        let mut out = Vec::new();
        let mut wide = vec![0.0; self.wide.len()];
        for (&id, &g) in &grads.wide {
            wide[id as usize] = g;
        }
        out.extend_from_slice(&wide);
        let mut embed = vec![0.0; self.embeddings.len()];
        for (&id, row) in &grads.embeddings {
            embed[id as usize * embed_dim..(id as usize + 1) * embed_dim].copy_from_slice(row);
        }
        out.extend_from_slice(&embed);
        for (w, b) in grads.layer_weights.iter().zip(&grads.layer_biases) {
            out.extend_from_slice(w);
            out.extend_from_slice(b);
        }
        out.extend_from_slice(&grads.deep_out);
        out.push(grads.bias);
        out
    }

    pub fn named_arrays(&self) -> Vec<(String, Vec<f64>)> {
        let mut out = vec![
            ("wide".to_string(), self.wide.clone()),
            ("embeddings".to_string(), self.embeddings.clone()),
        ];
        for (l, (w, b)) in self.layer_weights.iter().zip(&self.layer_biases).enumerate() {
            out.push((format!("layer{l}_weights"), w.clone()));
            out.push((format!("layer{l}_biases"), b.clone()));
        }
        out.push(("deep_out".to_string(), self.deep_out.clone()));
        out.push(("bias".to_string(), vec![self.bias]));
        out
    }

    pub fn set_named_array(&mut self, name: &str, values: &[f64]) -> Result<(), ModelError> {
        let dst: &mut [f64] = match name {
            "wide" => &mut self.wide,
            "embeddings" => &mut self.embeddings,
            "deep_out" => &mut self.deep_out,
            "bias" => {
                if values.len() != 1 {
                    return Err(ModelError::ArrayShape { name: name.into(), got: values.len(), expected: 1 });
                }
                self.bias = values[0];
                return Ok(());
            }
            layer => {
                let rest = layer
                    .strip_prefix("layer")
                    .ok_or_else(|| ModelError::UnknownArray(name.to_string()))?;
                let (idx, suffix) = rest
                    .split_once('_')
                    .ok_or_else(|| ModelError::UnknownArray(name.to_string()))?;
                let l: usize =
                    idx.parse().map_err(|_| ModelError::UnknownArray(name.to_string()))?;
                match suffix {
                    "weights" => self
                        .layer_weights
                        .get_mut(l)
                        .ok_or_else(|| ModelError::UnknownArray(name.to_string()))?,
                    "biases" => self
                        .layer_biases
                        .get_mut(l)
                        .ok_or_else(|| ModelError::UnknownArray(name.to_string()))?,
                    _ => return Err(ModelError::UnknownArray(name.to_string())),
                }
            }
        };
        if values.len() != dst.len() {
            return Err(ModelError::ArrayShape { name: name.into(), got: values.len(), expected: dst.len() });
        }
        dst.copy_from_slice(values);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sv(entries: &[(u32, f64)]) -> SparseVector {
        SparseVector::new(entries.to_vec()).unwrap()
    }

    fn two_field_layout() -> FeatureLayout {
        FeatureLayout::from_cardinalities(&[("a".into(), 2), ("b".into(), 2)], 8).unwrap()
    }

    #[test]
    fn cross_transform_examples() {
        let layout = two_field_layout();
        let x = sv(&[(0, 1.0), (2, 1.0)]);
        assert!(cross_product_transform(&x, &layout, &[], 8, 16).is_empty());

        let pairs = vec![("a".to_string(), "b".to_string())];
        let phi = cross_product_transform(&x, &layout, &pairs, 8, 16);
        assert_eq!(phi.len(), 1);
        let (id, v) = phi.entries()[0];
        assert!((8..24).contains(&id));
        assert_eq!(v, 1.0);

        let x = sv(&[(0, 0.5), (2, 2.0)]);
        let phi = cross_product_transform(&x, &layout, &pairs, 8, 16);
        assert_eq!(phi.entries()[0].1, 1.0);
    }

    #[test]
    fn cross_ids_are_deterministic_and_disjoint_from_raw() {
        let layout = two_field_layout();
        let pairs = vec![("a".to_string(), "b".to_string())];
        for a in 0..2u32 {
            for b in 0..2u32 {
                let x = sv(&[(a, 1.0), (2 + b, 1.0)]);
                let p1 = cross_product_transform(&x, &layout, &pairs, 8, 16);
                let p2 = cross_product_transform(&x, &layout, &pairs, 8, 16);
                assert_eq!(p1, p2);
                assert!(p1.entries().iter().all(|&(id, _)| id >= 8));
            }
        }
    }

    fn tiny_config(layers: Vec<usize>, embed_dim: usize) -> WideDeepConfig {
        let layout = FeatureLayout::from_cardinalities(&[("f".into(), 3)], 3).unwrap();
        WideDeepConfig { embed_dim, ..WideDeepConfig::new(layout, layers) }
    }

    #[test]
    fn zero_params_predict_half() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut m = WideDeepModel::init(tiny_config(vec![2], 2), &mut rng).unwrap();
        let zeros = vec![0.0; m.params_flat().len()];
        m.set_params_flat(&zeros).unwrap();
        assert_eq!(m.forward(&sv(&[(0, 1.0)])).unwrap().logit, 0.0);
    }

    #[test]
    fn leaky_rectifier_single_layer() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut m = WideDeepModel::init(tiny_config(vec![1], 1), &mut rng).unwrap();
        let zeros = vec![0.0; m.params_flat().len()];
        m.set_params_flat(&zeros).unwrap();
        m.set_named_array("embeddings", &[1.3, 0.0, 0.0]).unwrap();
        m.set_named_array("layer0_weights", &[1.0]).unwrap();
        m.set_named_array("deep_out", &[1.0]).unwrap();

        // Positive pre-activation passes through unchanged.
        let fwd = m.forward(&sv(&[(0, 1.0)])).unwrap();
        assert!((fwd.logit - 1.3).abs() < 1e-15);

        // Negative pre-activation is scaled by the 0.01 leak.
        m.set_named_array("embeddings", &[-1.0, 0.0, 0.0]).unwrap();
        let fwd = m.forward(&sv(&[(0, 1.0)])).unwrap();
        assert!((fwd.logit - -0.01).abs() < 1e-15);
    }

    #[test]
    fn degenerates_to_logistic_when_deep_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut m = WideDeepModel::init(tiny_config(vec![2, 2], 2), &mut rng).unwrap();
        m.set_named_array("embeddings", &[0.0; 6]).unwrap();
        let wide = vec![0.3, -0.7, 1.1];
        m.set_named_array("wide", &wide).unwrap();
        m.set_named_array("bias", &[0.25]).unwrap();

        let mut logistic = crate::models::LogisticModel::new(3);
        let mut params = wide.clone();
        params.push(0.25);
        {
            let mut as_model = crate::models::Model::Logistic(logistic.clone());
            as_model.set_params_flat(&params).unwrap();
            if let crate::models::Model::Logistic(l) = as_model {
                logistic = l;
            }
        }

        for x in [sv(&[(0, 1.0)]), sv(&[(1, 2.0), (2, -0.5)])] {
            let wd = m.forward(&x).unwrap().logit;
            let lr = logistic.predict_logit(&x).unwrap();
            assert!((wd - lr).abs() < 1e-15, "{wd} vs {lr}");
        }
    }

    #[test]
    fn mean_pooling_halves_two_feature_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let config = WideDeepConfig { combine: EmbedCombine::Mean, ..tiny_config(vec![], 1) };
        let mut m = WideDeepModel::init(config, &mut rng).unwrap();
        let zeros = vec![0.0; m.params_flat().len()];
        m.set_params_flat(&zeros).unwrap();
        m.set_named_array("embeddings", &[1.0, 3.0, 0.0]).unwrap();
        m.set_named_array("deep_out", &[1.0]).unwrap();
        let fwd = m.forward(&sv(&[(0, 1.0), (1, 1.0)])).unwrap();
        assert!((fwd.logit - 2.0).abs() < 1e-15);
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let layout =
            FeatureLayout::from_cardinalities(&[("a".into(), 2), ("b".into(), 2)], 4).unwrap();
        let config = WideDeepConfig {
            cross_pairs: vec![("a".to_string(), "b".to_string())],
            cross_dim: 4,
            embed_dim: 2,
            ..WideDeepConfig::new(layout, vec![3, 2])
        };
        let model = WideDeepModel::init(config, &mut rng).unwrap();
        let x = sv(&[(0, 1.0), (3, -0.5)]);

        let fwd = model.forward(&x).unwrap();
        let mut grads = model.new_gradients();
        model.accumulate_gradient(&x, &fwd, 1.0, &mut grads);
        let analytic = model.gradients_flat(&grads);

        let params = model.params_flat();
        let h = 1e-6;
        for i in 0..params.len() {
            let mut probe = model.clone();
            let mut p = params.clone();
            p[i] += h;
            probe.set_params_flat(&p).unwrap();
            let plus = probe.forward(&x).unwrap().logit;
            p[i] -= 2.0 * h;
            probe.set_params_flat(&p).unwrap();
            let minus = probe.forward(&x).unwrap().logit;
            let fd = (plus - minus) / (2.0 * h);
            let denom = fd.abs().max(analytic[i].abs()).max(1e-8);
            assert!(
                ((fd - analytic[i]) / denom).abs() < 1e-5,
                "param {i}: fd {fd} vs analytic {}",
                analytic[i]
            );
        }
    }

    #[test]
    fn config_validation() {
        let layout = two_field_layout();
        let bad = WideDeepConfig {
            cross_pairs: vec![("a".to_string(), "missing".to_string())],
            cross_dim: 4,
            ..WideDeepConfig::new(layout.clone(), vec![2])
        };
        assert!(bad.validate().is_err());
        let bad = WideDeepConfig {
            cross_pairs: vec![("a".to_string(), "b".to_string())],
            cross_dim: 0,
            ..WideDeepConfig::new(layout.clone(), vec![2])
        };
        assert!(bad.validate().is_err());
        let bad = WideDeepConfig { embed_dim: 0, ..WideDeepConfig::new(layout, vec![2]) };
        assert!(bad.validate().is_err());
    }
}
