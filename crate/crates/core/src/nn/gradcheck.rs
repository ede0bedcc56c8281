//! Central-difference check of the hand-written backward passes.

use crate::error::Result;
use crate::nn::layer::Mode;
use crate::nn::network::{cross_entropy, Network};
use crate::rng::Prng;
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct GradCheckOptions {
    pub step: f64,
    /// Check at most this many entries per parameter tensor (random subset);
    /// `None` checks every entry.
    pub max_per_param: Option<usize>,
    /// Also check dL/d input.
    pub check_input: bool,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-5,
            max_per_param: None,
            check_input: true,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckEntry {
    /// Layer index, or `None` for the network input.
    pub layer: Option<usize>,
    pub kind: &'static str,
    pub checked: usize,
    pub max_rel_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub entries: Vec<GradCheckEntry>,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

fn pick(len: usize, limit: Option<usize>, rng: &mut Prng) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..len).collect();
    if let Some(n) = limit.filter(|&n| n < len) {
        rng.shuffle(&mut idx);
        idx.truncate(n);
        idx.sort_unstable();
    }
    idx
}

/// Max relative error between analytic gradients and central differences of
/// the mean cross-entropy. Runs in eval mode, so dropout is inactive.
pub fn grad_check(
    net: &mut Network,
    input: &Tensor,
    labels: &[usize],
    opts: &GradCheckOptions,
) -> Result<GradCheckReport> {
    let probs = net.forward(input, Mode::Eval)?;
    let d_input = net.backward(&probs, labels)?;
    let h = opts.step;
    let mut rng = Prng::new(opts.seed);
    let mut entries = Vec::new();

    let loss = |net: &Network, x: &Tensor| -> Result<f64> { cross_entropy(&net.predict(x)?, labels) };

    for li in 0..net.layers().len() {
        let kind = net.layers()[li].kind().name();
        let n_params = net.layers()[li].params().len();
        for pi in 0..n_params {
            let analytic = net.layers()[li].params()[pi].grad.clone();
            let mut worst: f64 = 0.0;
            let idx = pick(analytic.len(), opts.max_per_param, &mut rng);
            for &i in &idx {
                let orig = net.layers()[li].params()[pi].value.data()[i];
                net.layers_mut()[li].params_mut()[pi].value.data_mut()[i] = orig + h;
                let up = loss(net, input)?;
                net.layers_mut()[li].params_mut()[pi].value.data_mut()[i] = orig - h;
                let down = loss(net, input)?;
                net.layers_mut()[li].params_mut()[pi].value.data_mut()[i] = orig;
                let numeric = (up - down) / (2.0 * h);
                worst = worst.max(relative_error(analytic.data()[i], numeric));
            }
            entries.push(GradCheckEntry {
                layer: Some(li),
                kind,
                checked: idx.len(),
                max_rel_error: worst,
            });
        }
    }

    if opts.check_input {
        let mut x = input.clone();
        let mut worst: f64 = 0.0;
        let idx = pick(x.len(), opts.max_per_param, &mut rng);
        for &i in &idx {
            let orig = x.data()[i];
            x.data_mut()[i] = orig + h;
            let up = loss(net, &x)?;
            x.data_mut()[i] = orig - h;
            let down = loss(net, &x)?;
            x.data_mut()[i] = orig;
            worst = worst.max(relative_error(d_input.data()[i], (up - down) / (2.0 * h)));
        }
        entries.push(GradCheckEntry {
            layer: None,
            kind: "input",
            checked: idx.len(),
            max_rel_error: worst,
        });
    }

    let max_rel_error = entries.iter().map(|e| e.max_rel_error).fold(0.0, f64::max);
    Ok(GradCheckReport {
        max_rel_error,
        entries,
    })
}
