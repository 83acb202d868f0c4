//! Feedforward regression network for PaO2: ReLU hidden layers, affine
//! output, z-scored inputs and target, inverted dropout and Adam.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::abga::{example_weight, AbgaSample, InputMode, SaturationCounts};
use crate::rng::stream_rng;
use crate::{EwsError, Result, Seconds};

pub const MLP_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    #[default]
    Mae,
    Mse,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperparamPoint {
    pub batch_size: usize,
    pub hidden_layers: Vec<usize>,
    pub gamma: Option<f64>,
    pub learning_rate: f64,
    pub dropout_rate: f64,
}

impl HyperparamPoint {
    /// Selected configuration of the saturation-only network.
    pub fn spo2_nn_default() -> Self {
        HyperparamPoint { batch_size: 50, hidden_layers: vec![64, 128, 64], gamma: None, learning_rate: 1e-4, dropout_rate: 0.5 }
    }

    /// Selected configuration of the network with previous blood-gas inputs.
    pub fn full_nn_default() -> Self {
        HyperparamPoint { batch_size: 50, hidden_layers: vec![8, 8], gamma: Some(0.2), learning_rate: 1e-3, dropout_rate: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(EwsError::Config("batch_size must be positive".into()));
        }
        if self.hidden_layers.contains(&0) {
            return Err(EwsError::Config("hidden layers must have at least one node".into()));
        }
        if self.gamma.is_some_and(|g| !(g >= 0.0)) {
            return Err(EwsError::Config("gamma must be non-negative".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(EwsError::Config("learning_rate must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(EwsError::Config("dropout_rate must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub loss: LossKind,
    /// Return the parameters with the lowest validation MAE seen.
    pub keep_best: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { epochs: 100, loss: LossKind::Mae, keep_best: true }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingExample {
    pub target_pao2: f64,
    pub inputs: Vec<f64>,
    /// Saturation (fraction) used for weighting and region selection.
    pub sao2: f64,
    pub last_abga_age: Option<Seconds>,
    pub weight: f64,
}

/// Examples for fitting: SaO2 drives the saturation input and the weights are
/// `1 / c^gamma` counted over these samples. Samples lacking an input are skipped.
pub fn training_examples(samples: &[AbgaSample], input_names: &[String], gamma: Option<f64>) -> Vec<TrainingExample> {
    let usable: Vec<&AbgaSample> = samples
        .iter()
        .filter(|s| s.target().is_some() && s.current.sao2.is_some() && s.inputs(input_names, InputMode::Training).is_some())
        .collect();
    let counts = SaturationCounts::from_values(usable.iter().filter_map(|s| s.current.sao2));
    usable
        .into_iter()
        .map(|s| {
            let sao2 = s.current.sao2.expect("filtered");
            TrainingExample {
                target_pao2: s.target().expect("filtered"),
                inputs: s.inputs(input_names, InputMode::Training).expect("filtered"),
                sao2,
                last_abga_age: s.last_abga_age(),
                weight: example_weight(sao2, &counts, gamma),
            }
        })
        .collect()
}

/// Unweighted examples whose saturation input comes from `mode`.
pub fn evaluation_examples(samples: &[AbgaSample], input_names: &[String], mode: InputMode) -> Vec<TrainingExample> {
    samples
        .iter()
        .filter_map(|s| {
            Some(TrainingExample {
                target_pao2: s.target()?,
                inputs: s.inputs(input_names, mode)?,
                sao2: s.saturation(mode)?,
                last_abga_age: s.last_abga_age(),
                weight: 1.0,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub inputs: usize,
    pub outputs: usize,
    /// Row-major `inputs x outputs`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl DenseLayer {
    fn weights_view(&self) -> ArrayView2<'_, f64> {
        ArrayView2::from_shape((self.inputs, self.outputs), &self.weights).expect("validated layer shape")
    }

    fn bias_view(&self) -> ArrayView1<'_, f64> {
        ArrayView1::from(&self.bias[..])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub validation_mae: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    pub format_version: u32,
    pub input_names: Vec<String>,
    /// Input width, hidden widths, then 1.
    pub layer_sizes: Vec<usize>,
    pub layers: Vec<DenseLayer>,
    pub dropout_rate: f64,
    pub input_normalization: Normalization,
    pub target_mean: f64,
    pub target_scale: f64,
    pub validation_mae: Option<f64>,
    #[serde(default)]
    pub history: Vec<EpochRecord>,
}

struct Forward {
    /// `acts[l]` feeds layer `l`; `acts[0]` is the normalized input batch.
    acts: Vec<Array2<f64>>,
    pre: Vec<Array2<f64>>,
    masks: Vec<Option<Array2<f64>>>,
}

fn column_stats(rows: &[Vec<f64>], width: usize) -> Normalization {
    let n = rows.len().max(1) as f64;
    let mut mean = vec![0.0; width];
    for r in rows {
        for (m, v) in mean.iter_mut().zip(r) {
            *m += v / n;
        }
    }
    let mut var = vec![0.0; width];
    for r in rows {
        for ((s, v), m) in var.iter_mut().zip(r).zip(&mean) {
            *s += (v - m).powi(2) / n;
        }
    }
    let scale = var.into_iter().map(|v| if v.sqrt() > 1e-12 { v.sqrt() } else { 1.0 }).collect();
    Normalization { mean, scale }
}

impl MlpModel {
    /// He-initialized hidden layers and a zero output layer, so the untrained
    /// model predicts `target_mean`.
    pub fn initialize(
        input_names: Vec<String>,
        hidden_layers: &[usize],
        dropout_rate: f64,
        input_normalization: Normalization,
        target_mean: f64,
        target_scale: f64,
        seed: u64,
    ) -> Self {
        let mut sizes = vec![input_names.len()];
        sizes.extend_from_slice(hidden_layers);
        sizes.push(1);
        let mut rng = stream_rng(seed, "mlp-init", 0);
        let last = sizes.len() - 2;
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(l, w)| {
                let (inputs, outputs) = (w[0], w[1]);
                let weights = if l == last {
                    vec![0.0; inputs * outputs]
                } else {
                    let he = Normal::new(0.0, (2.0 / inputs.max(1) as f64).sqrt()).expect("finite sd");
                    (0..inputs * outputs).map(|_| he.sample(&mut rng)).collect()
                };
                DenseLayer { inputs, outputs, weights, bias: vec![0.0; outputs] }
            })
            .collect();
        MlpModel {
            format_version: MLP_FORMAT_VERSION,
            input_names,
            layer_sizes: sizes,
            layers,
            dropout_rate,
            input_normalization,
            target_mean,
            target_scale,
            validation_mae: None,
            history: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(EwsError::Config(format!("invalid network: {m}")));
        if self.format_version != MLP_FORMAT_VERSION {
            return bad("unsupported format version");
        }
        if self.layer_sizes.len() < 2 || self.layers.len() != self.layer_sizes.len() - 1 {
            return bad("layer count does not match layer_sizes");
        }
        if self.layer_sizes[0] != self.input_names.len() || *self.layer_sizes.last().unwrap() != 1 {
            return bad("input or output width mismatch");
        }
        for (l, layer) in self.layers.iter().enumerate() {
            if layer.inputs != self.layer_sizes[l]
                || layer.outputs != self.layer_sizes[l + 1]
                || layer.weights.len() != layer.inputs * layer.outputs
                || layer.bias.len() != layer.outputs
            {
                return bad("incompatible layer dimensions");
            }
        }
        let norm = &self.input_normalization;
        if norm.mean.len() != self.input_names.len() || norm.scale.len() != self.input_names.len() {
            return bad("normalization width mismatch");
        }
        if norm.scale.iter().chain([&self.target_scale]).any(|s| !(*s > 0.0)) {
            return bad("normalization scales must be positive");
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let model: MlpModel = serde_json::from_str(text)?;
        model.validate()?;
        Ok(model)
    }

    pub fn n_weights(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    /// Parameters flattened layer by layer, weights then biases.
    pub fn flat_params(&self) -> Vec<f64> {
        self.layers.iter().flat_map(|l| l.weights.iter().chain(&l.bias).copied()).collect()
    }

    pub fn set_flat_params(&mut self, params: &[f64]) {
        assert_eq!(params.len(), self.n_weights(), "parameter count");
        let mut it = params.iter().copied();
        for l in &mut self.layers {
            for w in l.weights.iter_mut().chain(l.bias.iter_mut()) {
                *w = it.next().expect("length checked");
            }
        }
    }

    pub fn normalize_row(&self, x: &[f64]) -> Vec<f64> {
        let n = &self.input_normalization;
        x.iter().zip(&n.mean).zip(&n.scale).map(|((v, m), s)| (v - m) / s).collect()
    }

    pub fn normalize_target(&self, pao2: f64) -> f64 {
        (pao2 - self.target_mean) / self.target_scale
    }

    fn batch(&self, rows: &[&[f64]]) -> Array2<f64> {
        let d = self.input_names.len();
        let mut x = Array2::zeros((rows.len(), d));
        for (mut out, r) in x.rows_mut().into_iter().zip(rows) {
            assert_eq!(r.len(), d, "input width");
            out.assign(&ArrayView1::from(&self.normalize_row(r)[..]));
        }
        x
    }

    fn forward<R: Rng>(&self, x: Array2<f64>, mut dropout: Option<&mut R>) -> Forward {
        let n_layers = self.layers.len();
        let keep = 1.0 - self.dropout_rate;
        let mut acts = vec![x];
        let mut pre = Vec::with_capacity(n_layers);
        let mut masks = Vec::with_capacity(n_layers);
        for (l, layer) in self.layers.iter().enumerate() {
            let mut z = acts[l].dot(&layer.weights_view());
            z += &layer.bias_view();
            if l + 1 < n_layers {
                let mut a = z.mapv(|v| v.max(0.0));
                let mask = match dropout.as_deref_mut() {
                    Some(rng) if self.dropout_rate > 0.0 => {
                        let m = Array2::from_shape_fn(a.raw_dim(), |_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 });
                        a *= &m;
                        Some(m)
                    }
                    _ => None,
                };
                masks.push(mask);
                acts.push(a);
            }
            pre.push(z);
        }
        Forward { acts, pre, masks }
    }

    fn output(f: &Forward) -> ArrayView1<'_, f64> {
        f.pre.last().expect("at least one layer").column(0)
    }

    /// Weighted loss in normalized target units and its gradient in
    /// [`flat_params`](Self::flat_params) order.
    fn backward(&self, f: &Forward, y: &Array1<f64>, w: &Array1<f64>, loss: LossKind) -> (f64, Vec<f64>) {
        let pred = Self::output(f);
        let total_w: f64 = w.sum();
        let resid = &pred - y;
        let (value, dloss) = match loss {
            LossKind::Mse => ((&resid * &resid * w).sum() / total_w, resid.mapv(|r| 2.0 * r)),
            LossKind::Mae => (
                (resid.mapv(f64::abs) * w).sum() / total_w,
                resid.mapv(|r| if r > 0.0 { 1.0 } else if r < 0.0 { -1.0 } else { 0.0 }),
            ),
        };
        let mut delta = (dloss * w / total_w).insert_axis(Axis(1));
        let mut grads: Vec<(Array2<f64>, Array1<f64>)> = Vec::with_capacity(self.layers.len());
        for l in (0..self.layers.len()).rev() {
            let gw = f.acts[l].t().dot(&delta);
            let gb = delta.sum_axis(Axis(0));
            if l > 0 {
                let mut back = delta.dot(&self.layers[l].weights_view().t());
                back.zip_mut_with(&f.pre[l - 1], |d, &z| {
                    if z <= 0.0 {
                        *d = 0.0
                    }
                });
                if let Some(m) = &f.masks[l - 1] {
                    back *= m;
                }
                delta = back;
            }
            grads.push((gw, gb));
        }
        grads.reverse();
        let flat = grads.iter().flat_map(|(gw, gb)| gw.iter().chain(gb.iter()).copied()).collect();
        (value, flat)
    }

    /// Loss and gradient without dropout on raw (unnormalized) rows.
    pub fn loss_and_gradient(&self, rows: &[&[f64]], targets: &[f64], weights: &[f64], loss: LossKind) -> (f64, Vec<f64>) {
        let f = self.forward::<crate::rng::EwsRng>(self.batch(rows), None);
        let y = Array1::from_iter(targets.iter().map(|&t| self.normalize_target(t)));
        self.backward(&f, &y, &Array1::from(weights.to_vec()), loss)
    }

    /// Weighted loss over `examples` in normalized units, without dropout.
    pub fn dataset_loss(&self, examples: &[TrainingExample], loss: LossKind) -> f64 {
        let rows: Vec<&[f64]> = examples.iter().map(|e| &e.inputs[..]).collect();
        let targets: Vec<f64> = examples.iter().map(|e| e.target_pao2).collect();
        let weights: Vec<f64> = examples.iter().map(|e| e.weight).collect();
        self.loss_and_gradient(&rows, &targets, &weights, loss).0
    }

    pub fn predict_rows(&self, rows: &[&[f64]]) -> Vec<f64> {
        if rows.is_empty() {
            return Vec::new();
        }
        let f = self.forward::<crate::rng::EwsRng>(self.batch(rows), None);
        Self::output(&f).iter().map(|z| z * self.target_scale + self.target_mean).collect()
    }

    /// PaO2 (mmHg) for one raw input row ordered as `input_names`.
    pub fn predict_one(&self, x: &[f64]) -> f64 {
        self.predict_rows(&[x])[0]
    }

    /// Prediction with SpO2 as the saturation input.
    pub fn predict_sample(&self, sample: &AbgaSample) -> Option<f64> {
        sample.inputs(&self.input_names, InputMode::Prediction).map(|x| self.predict_one(&x))
    }

    /// Mean absolute error in mmHg, unweighted.
    pub fn mae(&self, examples: &[TrainingExample]) -> Option<f64> {
        if examples.is_empty() {
            return None;
        }
        let rows: Vec<&[f64]> = examples.iter().map(|e| &e.inputs[..]).collect();
        let pred = self.predict_rows(&rows);
        Some(pred.iter().zip(examples).map(|(p, e)| (p - e.target_pao2).abs()).sum::<f64>() / examples.len() as f64)
    }
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize) -> Self {
        Adam { m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.t);
        let c2 = 1.0 - Self::BETA2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = Self::BETA1 * self.m[i] + (1.0 - Self::BETA1) * grad[i];
            self.v[i] = Self::BETA2 * self.v[i] + (1.0 - Self::BETA2) * grad[i] * grad[i];
            params[i] -= lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + Self::EPS);
        }
    }
}

/// Fits a network on `train` by weighted mini-batch Adam. The recorded
/// validation MAE (mmHg) is over `valid`; with `keep_best` the returned
/// parameters are those of the best validation epoch (epoch 0 included).
pub fn train_mlp(
    train: &[TrainingExample],
    valid: &[TrainingExample],
    input_names: &[String],
    hp: &HyperparamPoint,
    config: &TrainConfig,
    seed: u64,
) -> Result<MlpModel> {
    hp.validate()?;
    if train.is_empty() {
        return Err(EwsError::Empty("training set has no usable examples".into()));
    }
    let width = input_names.len();
    if let Some(e) = train.iter().chain(valid).find(|e| e.inputs.len() != width) {
        return Err(EwsError::SchemaMismatch(format!("example has {} inputs, expected {width}", e.inputs.len())));
    }
    if let Some(e) = train.iter().find(|e| !(e.weight > 0.0) || !e.target_pao2.is_finite() || e.inputs.iter().any(|v| !v.is_finite())) {
        return Err(EwsError::Domain(format!("invalid training example with target {}", e.target_pao2)));
    }
    let rows: Vec<Vec<f64>> = train.iter().map(|e| e.inputs.clone()).collect();
    let targets: Vec<Vec<f64>> = train.iter().map(|e| vec![e.target_pao2]).collect();
    let target_norm = column_stats(&targets, 1);
    let input_norm = column_stats(&rows, width);
    if target_norm.scale.iter().chain(&input_norm.scale).chain(&target_norm.mean).chain(&input_norm.mean).any(|v| !v.is_finite()) {
        return Err(EwsError::Domain("normalization statistics overflow".into()));
    }
    let mut model = MlpModel::initialize(
        input_names.to_vec(),
        &hp.hidden_layers,
        hp.dropout_rate,
        input_norm,
        target_norm.mean[0],
        target_norm.scale[0],
        seed,
    );

    let mut rng = stream_rng(seed, "mlp-train", 0);
    let mut params = model.flat_params();
    let mut adam = Adam::new(params.len());
    let mut order: Vec<usize> = (0..train.len()).collect();
    let record = |model: &MlpModel, epoch: usize| EpochRecord {
        epoch,
        train_loss: model.dataset_loss(train, config.loss),
        validation_mae: model.mae(valid),
    };
    let first = record(&model, 0);
    let mut best = (first.validation_mae, params.clone());
    model.history.push(first);

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(hp.batch_size) {
            let batch_rows: Vec<&[f64]> = chunk.iter().map(|&i| &train[i].inputs[..]).collect();
            let y = Array1::from_iter(chunk.iter().map(|&i| model.normalize_target(train[i].target_pao2)));
            let w = Array1::from_iter(chunk.iter().map(|&i| train[i].weight));
            let f = model.forward(model.batch(&batch_rows), Some(&mut rng));
            let (loss, grad) = model.backward(&f, &y, &w, config.loss);
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(EwsError::Diverged {
                    epoch,
                    message: format!("non-finite loss {loss} (lr {}, batch {})", hp.learning_rate, hp.batch_size),
                });
            }
            adam.step(&mut params, &grad, hp.learning_rate);
            model.set_flat_params(&params);
        }
        let rec = record(&model, epoch);
        if !rec.train_loss.is_finite() {
            return Err(EwsError::Diverged { epoch, message: "non-finite epoch loss".into() });
        }
        if let (Some(v), Some(b)) = (rec.validation_mae, best.0) {
            if v < b {
                best = (Some(v), params.clone());
            }
        }
        model.history.push(rec);
    }
    if config.keep_best && best.0.is_some() {
        model.set_flat_params(&best.1);
    }
    model.validation_mae = model.mae(valid);
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oxy::curve::severinghaus_sao2;
    use crate::oxy::abga::{synthetic_abga, AbgaSynthConfig};

    fn names(n: &[&str]) -> Vec<String> {
        n.iter().map(|s| s.to_string()).collect()
    }

    fn curve_examples(n: usize, seed: u64) -> Vec<TrainingExample> {
        let mut rng = stream_rng(seed, "test", 0);
        (0..n)
            .map(|_| {
                let p: f64 = rng.random_range(36.0..85.0);
                let s = severinghaus_sao2(p).unwrap();
                TrainingExample { target_pao2: p, inputs: vec![s], sao2: s, last_abga_age: None, weight: 1.0 }
            })
            .collect()
    }

    #[test]
    fn zero_epochs_predicts_target_mean() {
        let data = curve_examples(200, 1);
        let hp = HyperparamPoint { batch_size: 20, hidden_layers: vec![8], gamma: None, learning_rate: 1e-3, dropout_rate: 0.0 };
        let cfg = TrainConfig { epochs: 0, ..Default::default() };
        let m = train_mlp(&data, &[], &names(&["sao2"]), &hp, &cfg, 3).unwrap();
        let mean = data.iter().map(|e| e.target_pao2).sum::<f64>() / 200.0;
        assert!((m.predict_one(&[0.9]) - mean).abs() < 1e-9);
        assert!((m.predict_one(&[0.5]) - m.target_mean).abs() < 1e-9);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let data = curve_examples(5, 2);
        let hp_layers = [6, 5];
        let mut m = MlpModel::initialize(
            names(&["sao2", "x"]),
            &hp_layers,
            0.0,
            Normalization { mean: vec![0.9, 0.0], scale: vec![0.05, 1.0] },
            60.0,
            15.0,
            4,
        );
        let mut rng = stream_rng(9, "grad", 0);
        let params: Vec<f64> = (0..m.n_weights()).map(|_| rng.random_range(-0.8..0.8)).collect();
        m.set_flat_params(&params);
        let inputs: Vec<Vec<f64>> = data.iter().map(|e| vec![e.sao2, rng.random_range(-1.0..1.0)]).collect();
        let rows: Vec<&[f64]> = inputs.iter().map(|r| &r[..]).collect();
        let targets: Vec<f64> = data.iter().map(|e| e.target_pao2).collect();
        let weights = vec![1.0, 0.5, 2.0, 1.0, 0.3];
        let (_, grad) = m.loss_and_gradient(&rows, &targets, &weights, LossKind::Mse);
        for _ in 0..10 {
            let k = rng.random_range(0..params.len());
            let h = 1e-5;
            let mut p = params.clone();
            p[k] += h;
            m.set_flat_params(&p);
            let up = m.loss_and_gradient(&rows, &targets, &weights, LossKind::Mse).0;
            p[k] -= 2.0 * h;
            m.set_flat_params(&p);
            let down = m.loss_and_gradient(&rows, &targets, &weights, LossKind::Mse).0;
            m.set_flat_params(&params);
            let numeric = (up - down) / (2.0 * h);
            let rel = (numeric - grad[k]).abs() / (numeric.abs() + grad[k].abs()).max(1e-8);
            assert!(rel < 1e-4, "param {k}: analytic {} numeric {numeric}", grad[k]);
        }
    }

    #[test]
    fn learns_noise_free_curve() {
        let train = curve_examples(3000, 5);
        let valid = curve_examples(500, 6);
        let hp = HyperparamPoint { batch_size: 32, hidden_layers: vec![32, 32], gamma: None, learning_rate: 3e-3, dropout_rate: 0.0 };
        let cfg = TrainConfig { epochs: 60, loss: LossKind::Mae, keep_best: true };
        let m = train_mlp(&train, &valid, &names(&["sao2"]), &hp, &cfg, 7).unwrap();
        let region: Vec<TrainingExample> = valid.into_iter().filter(|e| (0.7..=0.96).contains(&e.sao2)).collect();
        let mae = m.mae(&region).unwrap();
        assert!(mae < 2.0, "mae {mae}");
    }

    #[test]
    fn small_learning_rate_loss_non_increasing() {
        let data = curve_examples(400, 8);
        let hp = HyperparamPoint { batch_size: 400, hidden_layers: vec![16], gamma: None, learning_rate: 1e-4, dropout_rate: 0.0 };
        let cfg = TrainConfig { epochs: 40, loss: LossKind::Mse, keep_best: false };
        let m = train_mlp(&data, &[], &names(&["sao2"]), &hp, &cfg, 1).unwrap();
        for w in m.history.windows(2) {
            assert!(w[1].train_loss <= w[0].train_loss + 1e-12, "{:?}", w);
        }
    }

    #[test]
    fn deterministic_and_json_round_trip() {
        let samples = synthetic_abga(3, 300, &AbgaSynthConfig::default());
        let input = names(&["sao2", "last_pao2"]);
        let ex = training_examples(&samples, &input, Some(0.2));
        let hp = HyperparamPoint { batch_size: 50, hidden_layers: vec![8, 8], gamma: Some(0.2), learning_rate: 1e-3, dropout_rate: 0.2 };
        let cfg = TrainConfig { epochs: 3, ..Default::default() };
        let a = train_mlp(&ex, &ex, &input, &hp, &cfg, 11).unwrap();
        let b = train_mlp(&ex, &ex, &input, &hp, &cfg, 11).unwrap();
        assert_eq!(a, b);
        let back = MlpModel::from_json(&a.to_json().unwrap()).unwrap();
        assert_eq!(back.predict_one(&[0.9, 70.0]), a.predict_one(&[0.9, 70.0]));
        assert!(a.validation_mae.is_some());
    }

    #[test]
    fn rejects_empty_and_invalid() {
        let hp = HyperparamPoint::full_nn_default();
        assert!(matches!(train_mlp(&[], &[], &names(&["sao2"]), &hp, &TrainConfig::default(), 1), Err(EwsError::Empty(_))));
        let mut bad = MlpModel::initialize(names(&["sao2"]), &[4], 0.0, Normalization { mean: vec![0.0], scale: vec![1.0] }, 0.0, 1.0, 1);
        bad.input_normalization.scale[0] = 0.0;
        assert!(MlpModel::from_json(&bad.to_json().unwrap()).is_err());
    }

    #[test]
    fn divergence_is_reported() {
        let mut data = curve_examples(50, 1);
        data[0].target_pao2 = 1e308;
        data[1].target_pao2 = -1e308;
        let hp = HyperparamPoint { batch_size: 10, hidden_layers: vec![4], gamma: None, learning_rate: 1e-3, dropout_rate: 0.0 };
        let r = train_mlp(&data, &[], &names(&["sao2"]), &hp, &TrainConfig { epochs: 2, ..Default::default() }, 1);
        assert!(matches!(r, Err(EwsError::Diverged { .. }) | Err(EwsError::Domain(_))), "{r:?}");
    }
}
