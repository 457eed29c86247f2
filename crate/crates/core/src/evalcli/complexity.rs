//! Parameter counts and timed probe passes relative to a baseline model.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::nnarch::layers::{Builder, Init};
use crate::nnarch::{Conv2d, CveNet, Network};
use crate::tensor::{no_grad, Params, Tensor};

/// A model the ledger can count and time.
pub trait ProbeModel {
    fn name(&self) -> String;
    fn parameter_count(&self) -> usize;
    /// Spatial size of the probe input.
    fn probe_size(&self) -> usize;
    fn probe(&self, x: &Tensor<f32>) -> Result<Tensor<f32>>;
}

impl ProbeModel for CveNet {
    fn name(&self) -> String {
        format!("cvenet-w{}-m{}", self.config().width, self.config().num_mul2res)
    }

    fn parameter_count(&self) -> usize {
        Network::parameter_count(self)
    }

    fn probe_size(&self) -> usize {
        self.config().block_size
    }

    fn probe(&self, x: &Tensor<f32>) -> Result<Tensor<f32>> {
        self.forward(x)
    }
}

/// Plain stack of `depth` same-padded convolutions `3 -> w -> ... -> w -> 3`
/// with ReLU between them.
pub struct ConvStub {
    width: usize,
    kernel: usize,
    size: usize,
    layers: Vec<Conv2d>,
    params: Params<f32>,
}

impl ConvStub {
    pub fn new(width: usize, depth: usize, kernel: usize, size: usize, seed: u64) -> Result<Self> {
        if width == 0 || depth < 2 || size == 0 {
            return Err(invalid(format!("conv stub width {width}, depth {depth}, size {size}")));
        }
        let mut params = Params::new();
        let mut rng = Builder::seeded_rng(seed);
        let mut b = Builder::new(&mut params, &mut rng);
        let mut layers = Vec::with_capacity(depth);
        for i in 0..depth {
            let ci = if i == 0 { 3 } else { width };
            let co = if i + 1 == depth { 3 } else { width };
            layers.push(b.conv(&format!("conv{i}"), ci, co, kernel, 1, Init::Uniform(1.0))?);
        }
        Ok(ConvStub {
            width,
            kernel,
            size,
            layers,
            params,
        })
    }

    /// `sum k^2 ci co + co` over the layers.
    pub fn analytic_parameter_count(width: usize, depth: usize, kernel: usize) -> usize {
        let k2 = kernel * kernel;
        let edge = k2 * 3 * width + width + k2 * width * 3 + 3;
        edge + (depth - 2) * (k2 * width * width + width)
    }
}

impl ProbeModel for ConvStub {
    fn name(&self) -> String {
        format!("conv-stub-w{}-d{}-k{}", self.width, self.layers.len(), self.kernel)
    }

    fn parameter_count(&self) -> usize {
        self.params.num_elements()
    }

    fn probe_size(&self) -> usize {
        self.size
    }

    fn probe(&self, x: &Tensor<f32>) -> Result<Tensor<f32>> {
        let mut h = x.clone();
        for (i, l) in self.layers.iter().enumerate() {
            h = l.forward(&h)?;
            if i + 1 < self.layers.len() {
                h = h.relu();
            }
        }
        Ok(h)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProbeConfig {
    pub batch: usize,
    /// Timed passes after one warm-up; the median is reported.
    pub repeats: usize,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            batch: 1,
            repeats: 3,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComplexityRow {
    pub model: String,
    pub parameters: usize,
    pub forward_ms: f64,
    /// Relative to the first model.
    pub parameter_ratio: f64,
    pub runtime_ratio: f64,
}

fn probe_input(batch: usize, size: usize, seed: u64) -> Result<Tensor<f32>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_vec(&[batch, 3, size, size], (0..batch * 3 * size * size).map(|_| rng.gen::<f32>()).collect())
}

/// Counts and times each model; the first entry is the baseline.
pub fn complexity_ledger(models: &[&dyn ProbeModel], cfg: &ProbeConfig) -> Result<Vec<ComplexityRow>> {
    let _g = no_grad();
    let mut rows: Vec<ComplexityRow> = Vec::with_capacity(models.len());
    for m in models {
        let x = probe_input(cfg.batch.max(1), m.probe_size(), cfg.seed)?;
        m.probe(&x)?;
        let mut times: Vec<f64> = (0..cfg.repeats.max(1))
            .map(|_| {
                let t = Instant::now();
                m.probe(&x).map(|_| t.elapsed().as_secs_f64() * 1e3)
            })
            .collect::<Result<_>>()?;
        times.sort_by(f64::total_cmp);
        let ms = times[times.len() / 2];
        let parameters = m.parameter_count();
        let (p0, t0) = rows.first().map_or((parameters, ms), |r| (r.parameters, r.forward_ms));
        rows.push(ComplexityRow {
            model: m.name(),
            parameters,
            forward_ms: ms,
            parameter_ratio: parameters as f64 / p0 as f64,
            runtime_ratio: if t0 > 0.0 { ms / t0 } else { f64::NAN },
        });
    }
    Ok(rows)
}

pub fn write_complexity_csv(path: &std::path::Path, rows: &[ComplexityRow]) -> Result<()> {
    super::report::write_rows(
        path,
        &["model", "parameters", "forward_ms", "parameter_ratio", "runtime_ratio"],
        rows,
    )
}
