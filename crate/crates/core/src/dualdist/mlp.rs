//! Imitation-trained surrogate for the dual solver.
//!
//! Six fully connected hidden layers of 32 units (linear, layer norm, ReLU)
//! followed by a tanh-bounded head mapped affinely into `[0, mu_max]` per
//! face plus a raw pair for `lambda`. The network consumes the point in body
//! coordinates, which makes the map pose-invariant; `(G, g)` are baked into
//! the model file. Trained with mean squared error and plain stochastic
//! gradient descent.

use std::path::Path;

use nalgebra::Vector2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::demos::DemoSample;
use super::{DualDistError, DualPair};
use crate::geometry::{Pose2, RobotPolytope};
use crate::scalar::Real;

const MODEL_VERSION: u32 = 1;
const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    /// Multiplicative learning-rate decay applied after each epoch.
    pub lr_decay: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub holdout_fraction: f64,
    pub hidden_layers: usize,
    pub hidden_width: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 150,
            learning_rate: 0.06,
            lr_decay: 0.975,
            batch_size: 24,
            seed: 0,
            holdout_fraction: 0.1,
            hidden_layers: 6,
            hidden_width: 32,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
struct HiddenLayer<S> {
    w: Vec<S>, // out x in, row-major
    b: Vec<S>,
    gamma: Vec<S>,
    beta: Vec<S>,
    in_dim: usize,
    out_dim: usize,
}

#[derive(Clone, Debug, PartialEq)]
struct OutputLayer<S> {
    w: Vec<S>,
    b: Vec<S>,
    in_dim: usize,
    out_dim: usize,
}

/// Learned dual surrogate for one robot polytope.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpModel<S> {
    hidden: Vec<HiddenLayer<S>>,
    output: OutputLayer<S>,
    input_dim: usize,
    output_dim: usize,
    mu_max: S,
    input_scale: S,
    polytope: RobotPolytope<S>,
    body_radius: S,
    /// 99th-percentile distance slack measured on held-out data.
    pub rho_p99: S,
    pub held_out_mae: S,
}

/// Per-epoch training telemetry plus held-out evaluation.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainReport {
    pub epoch_losses: Vec<f64>,
    pub final_loss: f64,
    pub held_out_distance_mae: f64,
    pub rho_p99: f64,
    pub sample_count: usize,
}

/// Projected surrogate output for one point.
#[derive(Clone, Debug)]
pub struct SurrogateDual<S> {
    pub pair: DualPair<S>,
    pub distance: S,
    /// Upper bound on how far the predicted distance can exceed the true
    /// one: `|coupling|_2 * (|q| + body_radius)` by weak duality.
    pub slack: S,
}

struct ForwardCache<S> {
    inputs: Vec<Vec<S>>,  // per hidden layer input
    zs: Vec<Vec<S>>,      // pre-norm linear outputs
    normed: Vec<Vec<S>>,  // normalized pre-activation
    stds: Vec<S>,         // layer-norm denominators
    relu_in: Vec<Vec<S>>, // gamma * normed + beta
    out_in: Vec<S>,
    tanh: Vec<S>,
}

struct Grads<S> {
    hidden: Vec<(Vec<S>, Vec<S>, Vec<S>, Vec<S>)>, // (w, b, gamma, beta)
    output: (Vec<S>, Vec<S>),
}

fn normal_sample<S: Real>(rng: &mut ChaCha8Rng, std: f64) -> S {
    // Box-Muller; both uniforms drawn every call keeps the stream regular.
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    S::from_f64((-2.0 * u1.ln()).sqrt() * u2.cos() * std)
}

impl<S: Real> MlpModel<S> {
    /// Fresh network with seeded initialization. `mu_max` should be the
    /// dataset maximum so the bounded head can express every target.
    pub fn init(polytope: &RobotPolytope<S>, cfg: &TrainConfig, mu_max: S) -> Self {
        let input_dim = 2;
        let faces = polytope.face_count();
        let output_dim = faces + 2;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x6d6c70);
        let mut hidden = Vec::with_capacity(cfg.hidden_layers);
        let mut prev = input_dim;
        for _ in 0..cfg.hidden_layers {
            let out = cfg.hidden_width;
            let std = (2.0 / prev as f64).sqrt();
            let w = (0..out * prev).map(|_| normal_sample(&mut rng, std)).collect();
            hidden.push(HiddenLayer {
                w,
                b: vec![S::zero(); out],
                gamma: vec![S::one(); out],
                beta: vec![S::zero(); out],
                in_dim: prev,
                out_dim: out,
            });
            prev = out;
        }
        let std = (1.0 / prev as f64).sqrt();
        let output = OutputLayer {
            w: (0..output_dim * prev)
                .map(|_| normal_sample(&mut rng, std))
                .collect(),
            b: vec![S::zero(); output_dim],
            in_dim: prev,
            out_dim: output_dim,
        };
        Self {
            hidden,
            output,
            input_dim,
            output_dim,
            mu_max,
            input_scale: S::from_f64(0.2),
            polytope: polytope.clone(),
            body_radius: polytope.circumradius(),
            rho_p99: S::zero(),
            held_out_mae: S::zero(),
        }
    }

    pub fn polytope(&self) -> &RobotPolytope<S> {
        &self.polytope
    }

    pub fn face_count(&self) -> usize {
        self.output_dim - 2
    }

    fn forward(&self, q: Vector2<S>, cache: Option<&mut ForwardCache<S>>) -> Vec<S> {
        let mut x = vec![q.x * self.input_scale, q.y * self.input_scale];
        let mut cache = cache;
        for (li, layer) in self.hidden.iter().enumerate() {
            let n = layer.out_dim;
            let mut z = vec![S::zero(); n];
            for i in 0..n {
                let mut acc = layer.b[i];
                let row = &layer.w[i * layer.in_dim..(i + 1) * layer.in_dim];
                for (wv, xv) in row.iter().zip(&x) {
                    acc += *wv * *xv;
                }
                z[i] = acc;
            }
            let inv_n = S::one() / S::from_f64(n as f64);
            let mean = z.iter().fold(S::zero(), |a, &v| a + v) * inv_n;
            let var = z
                .iter()
                .fold(S::zero(), |a, &v| a + (v - mean) * (v - mean))
                * inv_n;
            let std = (var + S::from_f64(LAYER_NORM_EPS)).sqrt();
            let normed: Vec<S> = z.iter().map(|&v| (v - mean) / std).collect();
            let pre: Vec<S> = normed
                .iter()
                .zip(layer.gamma.iter().zip(&layer.beta))
                .map(|(&nh, (&g, &b))| g * nh + b)
                .collect();
            let next: Vec<S> = pre.iter().map(|&v| v.max(S::zero())).collect();
            if let Some(c) = cache.as_deref_mut() {
                c.inputs[li] = x.clone();
                c.zs[li] = z;
                c.normed[li] = normed;
                c.stds[li] = std;
                c.relu_in[li] = pre;
            }
            x = next;
        }
        let mut out = vec![S::zero(); self.output.out_dim];
        for i in 0..self.output.out_dim {
            let mut acc = self.output.b[i];
            let row = &self.output.w[i * self.output.in_dim..(i + 1) * self.output.in_dim];
            for (wv, xv) in row.iter().zip(&x) {
                acc += *wv * *xv;
            }
            out[i] = acc.tanh();
        }
        if let Some(c) = cache {
            c.out_in = x;
            c.tanh = out.clone();
        }
        out
    }

    /// Map tanh outputs to the dual box: `mu` in `[0, mu_max]`, `lambda` raw.
    fn head(&self, t: &[S]) -> (Vec<S>, Vector2<S>) {
        let faces = self.face_count();
        let half = S::from_f64(0.5);
        let mu = t[..faces]
            .iter()
            .map(|&v| (v + S::one()) * half * self.mu_max)
            .collect();
        let lambda_b = Vector2::new(t[faces], t[faces + 1]);
        (mu, lambda_b)
    }

    /// Batched inference with projection onto the dual-feasible box. Output
    /// order matches input order.
    pub fn infer_duals(&self, pose: &Pose2<S>, points: &[Vector2<S>]) -> Vec<SurrogateDual<S>> {
        let rot = pose.rotation();
        points
            .iter()
            .map(|&p| {
                let q = pose.to_body(p);
                let t = self.forward(q, None);
                let (mut mu, mut lambda_b) = self.head(&t);
                for m in &mut mu {
                    *m = m.max(S::zero());
                }
                let norm = lambda_b.dot(&lambda_b).sqrt();
                if norm > S::one() {
                    lambda_b /= norm;
                }
                let mut coupling = lambda_b;
                let mut distance = S::zero();
                for ((n, &g), &m) in self
                    .polytope
                    .normals()
                    .iter()
                    .zip(self.polytope.offsets())
                    .zip(&mu)
                {
                    coupling += n * m;
                    distance += m * (n.dot(&q) - g);
                }
                let q_norm = q.dot(&q).sqrt();
                let slack = coupling.dot(&coupling).sqrt() * (q_norm + self.body_radius);
                SurrogateDual {
                    pair: DualPair {
                        mu,
                        lambda: rot * lambda_b,
                    },
                    distance,
                    slack,
                }
            })
            .collect()
    }

    fn loss_and_backward(
        &self,
        sample: &DemoSample<S>,
        cache: &mut ForwardCache<S>,
        grads: &mut Grads<S>,
    ) -> S {
        let t = self.forward(sample.point, Some(cache));
        let faces = self.face_count();
        let half = S::from_f64(0.5);
        let inv_out = S::one() / S::from_f64(self.output_dim as f64);
        let two = S::from_f64(2.0);

        // Loss and gradient through the affine head.
        let mut loss = S::zero();
        let mut d_t = vec![S::zero(); self.output_dim];
        for i in 0..self.output_dim {
            let (pred, target, scale) = if i < faces {
                ((t[i] + S::one()) * half * self.mu_max, sample.mu[i], half * self.mu_max)
            } else if i == faces {
                (t[i], sample.lambda.x, S::one())
            } else {
                (t[i], sample.lambda.y, S::one())
            };
            let err = pred - target;
            loss += err * err * inv_out;
            d_t[i] = two * inv_out * err * scale * (S::one() - t[i] * t[i]);
        }

        // Output layer.
        let x = &cache.out_in;
        let mut d_x = vec![S::zero(); self.output.in_dim];
        for i in 0..self.output.out_dim {
            let gi = d_t[i];
            grads.output.1[i] += gi;
            let row = &mut grads.output.0[i * self.output.in_dim..(i + 1) * self.output.in_dim];
            let wrow = &self.output.w[i * self.output.in_dim..(i + 1) * self.output.in_dim];
            for j in 0..self.output.in_dim {
                row[j] += gi * x[j];
                d_x[j] += gi * wrow[j];
            }
        }

        // Hidden layers in reverse.
        for (li, layer) in self.hidden.iter().enumerate().rev() {
            let n = layer.out_dim;
            let inv_n = S::one() / S::from_f64(n as f64);
            let (gw, gb, gg, gbeta) = &mut grads.hidden[li];
            // ReLU.
            let mut d_pre = vec![S::zero(); n];
            for i in 0..n {
                if cache.relu_in[li][i] > S::zero() {
                    d_pre[i] = d_x[i];
                }
            }
            // Gamma/beta.
            let mut d_normed = vec![S::zero(); n];
            for i in 0..n {
                gg[i] += d_pre[i] * cache.normed[li][i];
                gbeta[i] += d_pre[i];
                d_normed[i] = d_pre[i] * layer.gamma[i];
            }
            // Layer norm.
            let std = cache.stds[li];
            let mean_dn = d_normed.iter().fold(S::zero(), |a, &v| a + v) * inv_n;
            let mean_dn_nh = d_normed
                .iter()
                .zip(&cache.normed[li])
                .fold(S::zero(), |a, (&dv, &nh)| a + dv * nh)
                * inv_n;
            let mut d_z = vec![S::zero(); n];
            for i in 0..n {
                d_z[i] = (d_normed[i] - mean_dn - cache.normed[li][i] * mean_dn_nh) / std;
            }
            // Linear.
            let input = &cache.inputs[li];
            d_x = vec![S::zero(); layer.in_dim];
            for i in 0..n {
                let gi = d_z[i];
                gb[i] += gi;
                let row = &mut gw[i * layer.in_dim..(i + 1) * layer.in_dim];
                let wrow = &layer.w[i * layer.in_dim..(i + 1) * layer.in_dim];
                for j in 0..layer.in_dim {
                    row[j] += gi * input[j];
                    d_x[j] += gi * wrow[j];
                }
            }
        }
        loss
    }

    fn apply_grads(&mut self, grads: &Grads<S>, lr: S, batch: usize) {
        let scale = lr / S::from_f64(batch as f64);
        for (layer, (gw, gb, gg, gbeta)) in self.hidden.iter_mut().zip(&grads.hidden) {
            for (w, g) in layer.w.iter_mut().zip(gw) {
                *w -= scale * *g;
            }
            for (b, g) in layer.b.iter_mut().zip(gb) {
                *b -= scale * *g;
            }
            for (gm, g) in layer.gamma.iter_mut().zip(gg) {
                *gm -= scale * *g;
            }
            for (bt, g) in layer.beta.iter_mut().zip(gbeta) {
                *bt -= scale * *g;
            }
        }
        for (w, g) in self.output.w.iter_mut().zip(&grads.output.0) {
            *w -= scale * *g;
        }
        for (b, g) in self.output.b.iter_mut().zip(&grads.output.1) {
            *b -= scale * *g;
        }
    }

    /// Run SGD over the demonstration set. Deterministic under the config
    /// seed. Populates the held-out evaluation fields on `self`.
    pub fn fit(
        &mut self,
        demos: &[DemoSample<S>],
        cfg: &TrainConfig,
    ) -> Result<TrainReport, DualDistError> {
        if demos.is_empty() {
            return Err(DualDistError::EmptyDataset);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x747261696e);
        let mut order: Vec<usize> = (0..demos.len()).collect();
        shuffle(&mut order, &mut rng);
        let holdout_len = ((demos.len() as f64 * cfg.holdout_fraction) as usize)
            .min(demos.len().saturating_sub(1));
        let (holdout_idx, train_idx) = order.split_at(holdout_len);
        let holdout_idx = holdout_idx.to_vec();
        let mut train_idx = train_idx.to_vec();

        let mut cache = ForwardCache {
            inputs: vec![Vec::new(); self.hidden.len()],
            zs: vec![Vec::new(); self.hidden.len()],
            normed: vec![Vec::new(); self.hidden.len()],
            stds: vec![S::zero(); self.hidden.len()],
            relu_in: vec![Vec::new(); self.hidden.len()],
            out_in: Vec::new(),
            tanh: Vec::new(),
        };
        let mut grads = Grads {
            hidden: self
                .hidden
                .iter()
                .map(|l| {
                    (
                        vec![S::zero(); l.w.len()],
                        vec![S::zero(); l.b.len()],
                        vec![S::zero(); l.gamma.len()],
                        vec![S::zero(); l.beta.len()],
                    )
                })
                .collect(),
            output: (
                vec![S::zero(); self.output.w.len()],
                vec![S::zero(); self.output.b.len()],
            ),
        };

        let mut lr = cfg.learning_rate;
        let mut epoch_losses = Vec::with_capacity(cfg.epochs);
        for epoch in 0..cfg.epochs {
            shuffle(&mut train_idx, &mut rng);
            let mut epoch_loss = 0.0f64;
            let mut seen = 0usize;
            for chunk in train_idx.chunks(cfg.batch_size.max(1)) {
                for g in grads.hidden.iter_mut() {
                    g.0.iter_mut().for_each(|v| *v = S::zero());
                    g.1.iter_mut().for_each(|v| *v = S::zero());
                    g.2.iter_mut().for_each(|v| *v = S::zero());
                    g.3.iter_mut().for_each(|v| *v = S::zero());
                }
                grads.output.0.iter_mut().for_each(|v| *v = S::zero());
                grads.output.1.iter_mut().for_each(|v| *v = S::zero());
                for &idx in chunk {
                    let loss = self.loss_and_backward(&demos[idx], &mut cache, &mut grads);
                    epoch_loss += loss.as_f64();
                    seen += 1;
                }
                self.apply_grads(&grads, S::from_f64(lr), chunk.len());
            }
            let mean_loss = epoch_loss / seen.max(1) as f64;
            if !mean_loss.is_finite() {
                return Err(DualDistError::TrainingDiverged { epoch });
            }
            epoch_losses.push(mean_loss);
            lr *= cfg.lr_decay;
        }

        // Held-out evaluation: distance error and coupling slack.
        let eval_idx: &[usize] = if holdout_idx.is_empty() {
            &train_idx
        } else {
            &holdout_idx
        };
        let pose = Pose2::origin();
        let mut abs_err = Vec::with_capacity(eval_idx.len());
        let mut slacks = Vec::with_capacity(eval_idx.len());
        for &idx in eval_idx {
            let s = &demos[idx];
            let out = self.infer_duals(&pose, std::slice::from_ref(&s.point));
            abs_err.push((out[0].distance - s.distance).abs().as_f64());
            slacks.push(out[0].slack.as_f64());
        }
        let mae = abs_err.iter().sum::<f64>() / abs_err.len().max(1) as f64;
        slacks.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let p99 = if slacks.is_empty() {
            0.0
        } else {
            slacks[((slacks.len() as f64 * 0.99) as usize).min(slacks.len() - 1)]
        };
        self.held_out_mae = S::from_f64(mae);
        self.rho_p99 = S::from_f64(p99);

        Ok(TrainReport {
            final_loss: *epoch_losses.last().unwrap_or(&f64::NAN),
            epoch_losses,
            held_out_distance_mae: mae,
            rho_p99: p99,
            sample_count: demos.len(),
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), DualDistError> {
        let file = ModelFile::from_model(self);
        let json = serde_json::to_string(&file)
            .map_err(|e| DualDistError::BadModelFile(e.to_string()))?;
        std::fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, DualDistError> {
        let text = std::fs::read_to_string(path)?;
        let file: ModelFile = serde_json::from_str(&text)
            .map_err(|e| DualDistError::BadModelFile(e.to_string()))?;
        file.into_model()
    }
}

/// Train a surrogate from scratch: calibrates `mu_max` from the dataset,
/// initializes with the config seed, and fits.
pub fn train_mlp<S: Real>(
    demos: &[DemoSample<S>],
    cfg: &TrainConfig,
    polytope: &RobotPolytope<S>,
) -> Result<(MlpModel<S>, TrainReport), DualDistError> {
    if demos.is_empty() {
        return Err(DualDistError::EmptyDataset);
    }
    let mut mu_max = S::zero();
    for s in demos {
        for &m in &s.mu {
            mu_max = mu_max.max(m);
        }
    }
    if mu_max <= S::zero() {
        mu_max = S::one();
    }
    let mut model = MlpModel::init(polytope, cfg, mu_max);
    let report = model.fit(demos, cfg)?;
    Ok((model, report))
}

fn shuffle(indices: &mut [usize], rng: &mut ChaCha8Rng) {
    for i in (1..indices.len()).rev() {
        let j = rng.gen_range(0..=i);
        indices.swap(i, j);
    }
}

#[derive(Serialize, Deserialize)]
struct LayerDto {
    w: Vec<f64>,
    b: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    gamma: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    beta: Option<Vec<f64>>,
    in_dim: usize,
    out_dim: usize,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    version: u32,
    input_dim: usize,
    output_dim: usize,
    hidden_width: usize,
    activations: Vec<String>,
    mu_max: f64,
    input_scale: f64,
    rho_p99: f64,
    held_out_mae: f64,
    polytope_normals: Vec<[f64; 2]>,
    polytope_offsets: Vec<f64>,
    layers: Vec<LayerDto>,
}

impl ModelFile {
    fn from_model<S: Real>(m: &MlpModel<S>) -> Self {
        let mut layers: Vec<LayerDto> = m
            .hidden
            .iter()
            .map(|l| LayerDto {
                w: l.w.iter().map(|v| v.as_f64()).collect(),
                b: l.b.iter().map(|v| v.as_f64()).collect(),
                gamma: Some(l.gamma.iter().map(|v| v.as_f64()).collect()),
                beta: Some(l.beta.iter().map(|v| v.as_f64()).collect()),
                in_dim: l.in_dim,
                out_dim: l.out_dim,
            })
            .collect();
        layers.push(LayerDto {
            w: m.output.w.iter().map(|v| v.as_f64()).collect(),
            b: m.output.b.iter().map(|v| v.as_f64()).collect(),
            gamma: None,
            beta: None,
            in_dim: m.output.in_dim,
            out_dim: m.output.out_dim,
        });
        Self {
            version: MODEL_VERSION,
            input_dim: m.input_dim,
            output_dim: m.output_dim,
            hidden_width: m.hidden.first().map_or(0, |l| l.out_dim),
            activations: vec![
                "relu".into(),
                "layer_norm".into(),
                "tanh_bounded_head".into(),
            ],
            mu_max: m.mu_max.as_f64(),
            input_scale: m.input_scale.as_f64(),
            rho_p99: m.rho_p99.as_f64(),
            held_out_mae: m.held_out_mae.as_f64(),
            polytope_normals: m
                .polytope
                .normals()
                .iter()
                .map(|n| [n.x.as_f64(), n.y.as_f64()])
                .collect(),
            polytope_offsets: m.polytope.offsets().iter().map(|v| v.as_f64()).collect(),
            layers,
        }
    }

    fn into_model<S: Real>(self) -> Result<MlpModel<S>, DualDistError> {
        if self.version != MODEL_VERSION {
            return Err(DualDistError::BadModelFile(format!(
                "unsupported version {} (expected {MODEL_VERSION})",
                self.version
            )));
        }
        if self.layers.is_empty() {
            return Err(DualDistError::BadModelFile("no layers".into()));
        }
        let faces = self.polytope_normals.len();
        if self.output_dim != faces + 2 {
            return Err(DualDistError::BadModelFile(
                "output dimension does not match polytope".into(),
            ));
        }
        let mut prev = self.input_dim;
        for l in &self.layers {
            if l.in_dim != prev || l.w.len() != l.in_dim * l.out_dim || l.b.len() != l.out_dim {
                return Err(DualDistError::BadModelFile("layer dimensions broken".into()));
            }
            if l.w.iter().chain(&l.b).any(|v| !v.is_finite()) {
                return Err(DualDistError::BadModelFile("non-finite weight".into()));
            }
            prev = l.out_dim;
        }
        if prev != self.output_dim {
            return Err(DualDistError::BadModelFile("dimension chain broken".into()));
        }
        let rebuilt_poly = {
            let normals = self
                .polytope_normals
                .iter()
                .map(|n| Vector2::new(S::from_f64(n[0]), S::from_f64(n[1])))
                .collect();
            let offsets = self
                .polytope_offsets
                .iter()
                .map(|&v| S::from_f64(v))
                .collect();
            // Preserve the rectangle tag when the geometry matches one.
            rebuild_polytope(normals, offsets)
                .map_err(|e| DualDistError::BadModelFile(e.to_string()))?
        };
        let n_hidden = self.layers.len() - 1;
        let mut hidden = Vec::with_capacity(n_hidden);
        for l in &self.layers[..n_hidden] {
            hidden.push(HiddenLayer {
                w: l.w.iter().map(|&v| S::from_f64(v)).collect(),
                b: l.b.iter().map(|&v| S::from_f64(v)).collect(),
                gamma: l
                    .gamma
                    .as_ref()
                    .map(|g| g.iter().map(|&v| S::from_f64(v)).collect())
                    .unwrap_or_else(|| vec![S::one(); l.out_dim]),
                beta: l
                    .beta
                    .as_ref()
                    .map(|g| g.iter().map(|&v| S::from_f64(v)).collect())
                    .unwrap_or_else(|| vec![S::zero(); l.out_dim]),
                in_dim: l.in_dim,
                out_dim: l.out_dim,
            });
        }
        let last = &self.layers[n_hidden];
        let output = OutputLayer {
            w: last.w.iter().map(|&v| S::from_f64(v)).collect(),
            b: last.b.iter().map(|&v| S::from_f64(v)).collect(),
            in_dim: last.in_dim,
            out_dim: last.out_dim,
        };
        let body_radius = rebuilt_poly.circumradius();
        Ok(MlpModel {
            hidden,
            output,
            input_dim: self.input_dim,
            output_dim: self.output_dim,
            mu_max: S::from_f64(self.mu_max),
            input_scale: S::from_f64(self.input_scale),
            polytope: rebuilt_poly,
            body_radius,
            rho_p99: S::from_f64(self.rho_p99),
            held_out_mae: S::from_f64(self.held_out_mae),
        })
    }
}

fn rebuild_polytope<S: Real>(
    normals: Vec<Vector2<S>>,
    offsets: Vec<S>,
) -> Result<RobotPolytope<S>, crate::geometry::GeometryError> {
    // Canonical rectangle detection: face order (+x, -x, +y, -y).
    if normals.len() == 4 {
        let expect = [
            Vector2::new(S::one(), S::zero()),
            Vector2::new(-S::one(), S::zero()),
            Vector2::new(S::zero(), S::one()),
            Vector2::new(S::zero(), -S::one()),
        ];
        let is_rect = normals
            .iter()
            .zip(&expect)
            .all(|(a, b)| (a - b).dot(&(a - b)) < S::from_f64(1e-18))
            && (offsets[0] - offsets[1]).abs() < S::from_f64(1e-12)
            && (offsets[2] - offsets[3]).abs() < S::from_f64(1e-12);
        if is_rect {
            let two = S::from_f64(2.0);
            return RobotPolytope::rectangle(offsets[0] * two, offsets[2] * two);
        }
    }
    RobotPolytope::new(normals, offsets)
}
