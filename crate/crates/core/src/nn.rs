//! Small feed-forward scorers with exact reverse-mode gradients.
//!
//! A [`Scorer`] maps an input vector to one raw score. Hidden layers use the
//! configured activation and the output layer is linear. Gradients are
//! accumulated into a [`GradientTape`] aligned with the scorer parameters and
//! applied by [`Scorer::sgd_step`].

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::calibration::Calibrator;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Tanh,
    Relu,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(0.0),
        }
    }

    /// Derivative expressed through the pre-activation `z` and output `h`.
    fn derivative(self, z: f64, h: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - h * h,
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// Dense layer with row-major `n_out x n_in` weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    n_in: usize,
    n_out: usize,
    weights: Vec<f64>,
    biases: Vec<f64>,
}

impl Layer {
    pub fn new(n_in: usize, n_out: usize, weights: Vec<f64>, biases: Vec<f64>) -> Result<Self> {
        if n_in == 0 || n_out == 0 {
            return Err(Error::Config("layer sizes must be positive".into()));
        }
        if weights.len() != n_in * n_out {
            return Err(Error::DimensionMismatch {
                expected: n_in * n_out,
                got: weights.len(),
            });
        }
        if biases.len() != n_out {
            return Err(Error::DimensionMismatch {
                expected: n_out,
                got: biases.len(),
            });
        }
        if weights.iter().chain(&biases).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("layer parameter".into()));
        }
        Ok(Layer {
            n_in,
            n_out,
            weights,
            biases,
        })
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn biases(&self) -> &[f64] {
        &self.biases
    }

    fn affine(&self, x: &[f64]) -> Vec<f64> {
        self.weights
            .chunks_exact(self.n_in)
            .zip(&self.biases)
            .map(|(row, b)| row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + b)
            .collect()
    }
}

/// Scalar-output MLP, optionally carrying an affine calibration head.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "ScorerCheckpoint", into = "ScorerCheckpoint")]
pub struct Scorer {
    layers: Vec<Layer>,
    activation: Activation,
    seed: Option<u64>,
    /// Calibration head used when turning raw scores into accept
    /// probabilities; never applied by [`Scorer::forward`].
    pub calibration: Option<Calibrator>,
    /// Bumped by every parameter update; caches from older versions are stale.
    version: u64,
}

impl PartialEq for Scorer {
    fn eq(&self, other: &Self) -> bool {
        self.layers == other.layers
            && self.activation == other.activation
            && self.seed == other.seed
            && self.calibration == other.calibration
    }
}

/// Activations kept by [`Scorer::forward`] for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    version: u64,
    sizes: Vec<usize>,
    /// `activations[0]` is the input, `activations[l + 1]` the output of layer `l`.
    activations: Vec<Vec<f64>>,
    pre_activations: Vec<Vec<f64>>,
}

impl ForwardCache {
    pub fn input(&self) -> &[f64] {
        &self.activations[0]
    }
}

/// Gradient buffers aligned with a scorer's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientTape {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
    /// Gradients for the calibration head `(a, b)`. Only applied when the
    /// scorer carries a calibrator.
    pub calibration: (f64, f64),
}

impl GradientTape {
    pub fn for_scorer(s: &Scorer) -> Self {
        GradientTape {
            weights: s.layers.iter().map(|l| vec![0.0; l.weights.len()]).collect(),
            biases: s.layers.iter().map(|l| vec![0.0; l.biases.len()]).collect(),
            calibration: (0.0, 0.0),
        }
    }

    pub fn reset(&mut self) {
        for g in self.weights.iter_mut().chain(self.biases.iter_mut()) {
            g.fill(0.0);
        }
        self.calibration = (0.0, 0.0);
    }

    /// Flattened gradient in [`Scorer::params`] order (calibration excluded).
    pub fn flat(&self) -> Vec<f64> {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(w, b)| w.iter().chain(b.iter()).copied())
            .collect()
    }

    pub fn is_zero(&self) -> bool {
        self.flat().iter().all(|&g| g == 0.0) && self.calibration == (0.0, 0.0)
    }

    fn matches(&self, s: &Scorer) -> bool {
        self.weights.len() == s.layers.len()
            && s.layers
                .iter()
                .zip(self.weights.iter().zip(&self.biases))
                .all(|(l, (w, b))| w.len() == l.weights.len() && b.len() == l.biases.len())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepDirection {
    Ascent,
    Descent,
}

impl Scorer {
    /// Randomly initialized scorer; weights and biases are drawn uniformly
    /// from `[-1/sqrt(n_in), 1/sqrt(n_in)]`.
    pub fn new(sizes: &[usize], activation: Activation, seed: u64) -> Result<Self> {
        validate_sizes(sizes)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = sizes
            .windows(2)
            .map(|w| {
                let (n_in, n_out) = (w[0], w[1]);
                let bound = 1.0 / (n_in as f64).sqrt();
                let mut draw = || rng.random_range(-bound..=bound);
                let weights = (0..n_in * n_out).map(|_| draw()).collect();
                let biases = (0..n_out).map(|_| draw()).collect();
                Layer {
                    n_in,
                    n_out,
                    weights,
                    biases,
                }
            })
            .collect();
        Ok(Scorer {
            layers,
            activation,
            seed: Some(seed),
            calibration: None,
            version: 0,
        })
    }

    pub fn zeros(sizes: &[usize], activation: Activation) -> Result<Self> {
        validate_sizes(sizes)?;
        let layers = sizes
            .windows(2)
            .map(|w| Layer {
                n_in: w[0],
                n_out: w[1],
                weights: vec![0.0; w[0] * w[1]],
                biases: vec![0.0; w[1]],
            })
            .collect();
        Ok(Scorer {
            layers,
            activation,
            seed: None,
            calibration: None,
            version: 0,
        })
    }

    pub fn from_layers(layers: Vec<Layer>, activation: Activation) -> Result<Self> {
        let mut sizes = vec![layers.first().map_or(0, |l| l.n_in)];
        for l in &layers {
            if l.n_in != *sizes.last().unwrap() {
                return Err(Error::DimensionMismatch {
                    expected: *sizes.last().unwrap(),
                    got: l.n_in,
                });
            }
            sizes.push(l.n_out);
        }
        validate_sizes(&sizes)?;
        Ok(Scorer {
            layers,
            activation,
            seed: None,
            calibration: None,
            version: 0,
        })
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![self.layers[0].n_in];
        sizes.extend(self.layers.iter().map(|l| l.n_out));
        sizes
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].n_in
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.biases.len()).sum()
    }

    /// All MLP parameters, layer by layer, weights before biases.
    pub fn params(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(l.biases.iter()).copied())
            .collect()
    }

    /// Mutable access to parameter `i` in [`Scorer::params`] order.
    pub fn param_mut(&mut self, mut i: usize) -> &mut f64 {
        self.version += 1;
        for l in &mut self.layers {
            if i < l.weights.len() {
                return &mut l.weights[i];
            }
            i -= l.weights.len();
            if i < l.biases.len() {
                return &mut l.biases[i];
            }
            i -= l.biases.len();
        }
        panic!("parameter index out of range");
    }

    pub fn forward(&self, x: &[f64]) -> Result<(f64, ForwardCache)> {
        if x.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        if let Some(i) = x.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("input[{i}]")));
        }
        let last = self.layers.len() - 1;
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        let mut pre_activations = Vec::with_capacity(self.layers.len());
        activations.push(x.to_vec());
        for (l, layer) in self.layers.iter().enumerate() {
            let z = layer.affine(activations.last().unwrap());
            let h = if l == last {
                z.clone()
            } else {
                z.iter().map(|&v| self.activation.apply(v)).collect()
            };
            pre_activations.push(z);
            activations.push(h);
        }
        let score = activations[self.layers.len()][0];
        Ok((
            score,
            ForwardCache {
                version: self.version,
                sizes: self.layer_sizes(),
                activations,
                pre_activations,
            },
        ))
    }

    pub fn score(&self, x: &[f64]) -> Result<f64> {
        Ok(self.forward(x)?.0)
    }

    /// Accumulates `upstream * d(score)/d(param)` into `tape` and returns
    /// `upstream * d(score)/d(input)`.
    pub fn backward(&self, cache: &ForwardCache, upstream: f64, tape: &mut GradientTape) -> Result<Vec<f64>> {
        if cache.version != self.version {
            return Err(Error::StaleCache(format!(
                "cache from parameter version {}, scorer is at {}",
                cache.version, self.version
            )));
        }
        if cache.sizes != self.layer_sizes() {
            return Err(Error::StaleCache("layer sizes differ".into()));
        }
        if !tape.matches(self) {
            return Err(Error::StaleCache("gradient tape shape differs".into()));
        }
        if !upstream.is_finite() {
            return Err(Error::NonFiniteGradient("upstream gradient".into()));
        }
        let last = self.layers.len() - 1;
        // delta = d(out)/d(pre-activation of current layer) * upstream
        let mut delta = vec![upstream];
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            if l != last {
                let z = &cache.pre_activations[l];
                let h = &cache.activations[l + 1];
                for (k, d) in delta.iter_mut().enumerate() {
                    *d *= self.activation.derivative(z[k], h[k]);
                }
            }
            let input = &cache.activations[l];
            let gw = &mut tape.weights[l];
            for (o, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                for (i, &v) in input.iter().enumerate() {
                    gw[o * layer.n_in + i] += d * v;
                }
                tape.biases[l][o] += d;
            }
            let mut next = vec![0.0; layer.n_in];
            for (o, &d) in delta.iter().enumerate() {
                for (i, n) in next.iter_mut().enumerate() {
                    *n += d * layer.weights[o * layer.n_in + i];
                }
            }
            delta = next;
        }
        Ok(delta)
    }

    /// `params <- params +/- lr * grad`, then zeroes the tape. A non-finite
    /// gradient aborts the step before any parameter changes.
    pub fn sgd_step(&mut self, tape: &mut GradientTape, lr: f64, direction: StepDirection) -> Result<()> {
        if !tape.matches(self) {
            return Err(Error::StaleCache("gradient tape shape differs".into()));
        }
        for (l, (gw, gb)) in tape.weights.iter().zip(&tape.biases).enumerate() {
            if let Some(i) = gw.iter().position(|g| !g.is_finite()) {
                let n_in = self.layers[l].n_in;
                return Err(Error::NonFiniteGradient(format!(
                    "layer {l} weight[{}, {}]",
                    i / n_in,
                    i % n_in
                )));
            }
            if let Some(o) = gb.iter().position(|g| !g.is_finite()) {
                return Err(Error::NonFiniteGradient(format!("layer {l} bias[{o}]")));
            }
        }
        let (ga, gb) = tape.calibration;
        if !ga.is_finite() || !gb.is_finite() {
            return Err(Error::NonFiniteGradient("calibration head".into()));
        }
        let sign = match direction {
            StepDirection::Ascent => 1.0,
            StepDirection::Descent => -1.0,
        };
        let step = sign * lr;
        for (layer, (gw, gb)) in self.layers.iter_mut().zip(tape.weights.iter().zip(&tape.biases)) {
            for (w, g) in layer.weights.iter_mut().zip(gw) {
                *w += step * g;
            }
            for (b, g) in layer.biases.iter_mut().zip(gb) {
                *b += step * g;
            }
        }
        if let Some(c) = self.calibration.as_mut() {
            c.a += step * ga;
            c.b += step * gb;
        }
        self.version += 1;
        tape.reset();
        Ok(())
    }
}

fn validate_sizes(sizes: &[usize]) -> Result<()> {
    if sizes.len() < 2 {
        return Err(Error::Config("a scorer needs at least input and output sizes".into()));
    }
    if sizes.contains(&0) {
        return Err(Error::Config("layer sizes must be positive".into()));
    }
    if *sizes.last().unwrap() != 1 {
        return Err(Error::Config(format!(
            "scorer output size must be 1, got {}",
            sizes.last().unwrap()
        )));
    }
    Ok(())
}

/// JSON checkpoint layout of a [`Scorer`].
#[derive(Debug, Clone, Serialize, Deserialize)]
struct ScorerCheckpoint {
    layer_sizes: Vec<usize>,
    activation: Activation,
    /// Row-major `n_out x n_in` per layer.
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
    seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    calibration: Option<Calibrator>,
}

impl From<Scorer> for ScorerCheckpoint {
    fn from(s: Scorer) -> Self {
        ScorerCheckpoint {
            layer_sizes: s.layer_sizes(),
            activation: s.activation,
            weights: s.layers.iter().map(|l| l.weights.clone()).collect(),
            biases: s.layers.iter().map(|l| l.biases.clone()).collect(),
            seed: s.seed,
            calibration: s.calibration,
        }
    }
}

impl TryFrom<ScorerCheckpoint> for Scorer {
    type Error = Error;

    fn try_from(c: ScorerCheckpoint) -> Result<Self> {
        validate_sizes(&c.layer_sizes)?;
        let n = c.layer_sizes.len() - 1;
        if c.weights.len() != n || c.biases.len() != n {
            return Err(Error::Config(format!(
                "checkpoint has {} weight and {} bias arrays for {n} layers",
                c.weights.len(),
                c.biases.len()
            )));
        }
        let layers = c
            .layer_sizes
            .windows(2)
            .zip(c.weights.into_iter().zip(c.biases))
            .map(|(w, (weights, biases))| Layer::new(w[0], w[1], weights, biases))
            .collect::<Result<Vec<_>>>()?;
        let mut s = Scorer::from_layers(layers, c.activation)?;
        s.seed = c.seed;
        s.calibration = c.calibration;
        Ok(s)
    }
}
