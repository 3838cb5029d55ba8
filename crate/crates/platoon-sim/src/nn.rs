//! Action-value network for the platoon leader.
//!
//! A small 1-D convolutional network maps the encoded feedback history
//! (channels = interleaved action / observation streams) to one Q value per
//! VRB. Everything is hand-rolled on flat `Vec<f64>` storage: forward,
//! backprop, SGD, and (de)serialization all address the same parameter
//! vector, which keeps finite-difference verification and model files
//! trivial.

use std::io::{Read, Write};
use std::ops::Range;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Layer widths. The defaults are the smallest round sizes that train
/// reliably on the 2 x 16 history encoding; all of them can be overridden
/// before construction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QnnArchitecture {
    /// History length M: time steps per channel.
    pub history_len: usize,
    /// Input channels (action stream + observation stream).
    pub channels: usize,
    /// Convolution kernel width, shared by both conv layers.
    pub kernel: usize,
    pub conv1_channels: usize,
    pub conv2_channels: usize,
    pub fc1_width: usize,
    pub fc2_width: usize,
    /// Output width: one Q value per VRB.
    pub actions: usize,
}

impl Default for QnnArchitecture {
    fn default() -> Self {
        QnnArchitecture {
            history_len: 16,
            channels: 2,
            kernel: 3,
            conv1_channels: 8,
            conv2_channels: 16,
            fc1_width: 128,
            fc2_width: 64,
            actions: 200,
        }
    }
}

impl QnnArchitecture {
    pub fn validate(&self) -> Result<()> {
        for (v, name) in [
            (self.history_len, "history_len"),
            (self.channels, "channels"),
            (self.kernel, "kernel"),
            (self.conv1_channels, "conv1_channels"),
            (self.conv2_channels, "conv2_channels"),
            (self.fc1_width, "fc1_width"),
            (self.fc2_width, "fc2_width"),
            (self.actions, "actions"),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.conv2_len() < 1 {
            return Err(Error::Config(format!(
                "history_len {} too short for two kernel-{} convolutions",
                self.history_len, self.kernel
            )));
        }
        Ok(())
    }

    pub fn input_len(&self) -> usize {
        self.channels * self.history_len
    }

    fn conv1_len(&self) -> usize {
        self.history_len + 1 - self.kernel
    }

    fn conv2_len(&self) -> usize {
        // Signed to let validate() catch histories shorter than the kernels.
        (self.conv1_len() as isize + 1 - self.kernel as isize).max(0) as usize
    }

    fn flat_len(&self) -> usize {
        self.conv2_channels * self.conv2_len()
    }
}

/// Where each layer's parameters live in the flat vector.
#[derive(Debug, Clone)]
struct Layout {
    c1w: Range<usize>,
    c1b: Range<usize>,
    c2w: Range<usize>,
    c2b: Range<usize>,
    f1w: Range<usize>,
    f1b: Range<usize>,
    f2w: Range<usize>,
    f2b: Range<usize>,
    f3w: Range<usize>,
    f3b: Range<usize>,
}

impl Layout {
    fn new(a: &QnnArchitecture) -> Self {
        let mut at = 0;
        let mut next = |len: usize| {
            let r = at..at + len;
            at += len;
            r
        };
        Layout {
            c1w: next(a.conv1_channels * a.channels * a.kernel),
            c1b: next(a.conv1_channels),
            c2w: next(a.conv2_channels * a.conv1_channels * a.kernel),
            c2b: next(a.conv2_channels),
            f1w: next(a.fc1_width * a.flat_len()),
            f1b: next(a.fc1_width),
            f2w: next(a.fc2_width * a.fc1_width),
            f2b: next(a.fc2_width),
            f3w: next(a.actions * a.fc2_width),
            f3b: next(a.actions),
        }
    }

    fn total(&self) -> usize {
        self.f3b.end
    }
}

/// Everything the backward pass needs from one forward evaluation.
pub struct ForwardTrace {
    input: Vec<f64>,
    c1_pre: Vec<f64>,
    c2_pre: Vec<f64>,
    f1_pre: Vec<f64>,
    f2_pre: Vec<f64>,
    /// Q values, one per action.
    pub out: Vec<f64>,
}

/// JSON sidecar stored next to a flat parameter file.
#[derive(Debug, Serialize, Deserialize)]
pub struct ModelSidecar {
    pub architecture: QnnArchitecture,
    pub parameter_count: usize,
    /// Free-form training metadata (hyper-parameters, period counts).
    #[serde(default)]
    pub training: serde_json::Value,
}

#[derive(Debug, Clone)]
pub struct QNetwork {
    arch: QnnArchitecture,
    layout: Layout,
    params: Vec<f64>,
}

fn relu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

impl QNetwork {
    /// Fresh network with every layer drawn uniform in +-1/sqrt(fan_in).
    pub fn new<R: Rng>(arch: QnnArchitecture, rng: &mut R) -> Result<Self> {
        arch.validate()?;
        let layout = Layout::new(&arch);
        let mut params = vec![0.0; layout.total()];
        let fans = [
            (layout.c1w.clone(), arch.channels * arch.kernel),
            (layout.c1b.clone(), arch.channels * arch.kernel),
            (layout.c2w.clone(), arch.conv1_channels * arch.kernel),
            (layout.c2b.clone(), arch.conv1_channels * arch.kernel),
            (layout.f1w.clone(), arch.flat_len()),
            (layout.f1b.clone(), arch.flat_len()),
            (layout.f2w.clone(), arch.fc1_width),
            (layout.f2b.clone(), arch.fc1_width),
            (layout.f3w.clone(), arch.fc2_width),
            (layout.f3b.clone(), arch.fc2_width),
        ];
        for (range, fan_in) in fans {
            let bound = 1.0 / (fan_in as f64).sqrt();
            for p in &mut params[range] {
                *p = rng.random_range(-bound..bound);
            }
        }
        Ok(QNetwork {
            arch,
            layout,
            params,
        })
    }

    pub fn arch(&self) -> &QnnArchitecture {
        &self.arch
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Named parameter ranges, one per trainable layer piece.
    pub fn layer_ranges(&self) -> Vec<(&'static str, Range<usize>)> {
        let l = &self.layout;
        vec![
            ("conv1.weight", l.c1w.clone()),
            ("conv1.bias", l.c1b.clone()),
            ("conv2.weight", l.c2w.clone()),
            ("conv2.bias", l.c2b.clone()),
            ("fc1.weight", l.f1w.clone()),
            ("fc1.bias", l.f1b.clone()),
            ("fc2.weight", l.f2w.clone()),
            ("fc2.bias", l.f2b.clone()),
            ("fc3.weight", l.f3w.clone()),
            ("fc3.bias", l.f3b.clone()),
        ]
    }

    /// Q values for an encoded state. The flat input interleaves the
    /// channels per time step, matching the state encoding.
    pub fn forward(&self, input: &[f64]) -> Vec<f64> {
        self.forward_trace(input).out
    }

    pub fn forward_trace(&self, input: &[f64]) -> ForwardTrace {
        let a = &self.arch;
        let l = &self.layout;
        assert_eq!(input.len(), a.input_len(), "encoded state length");
        let p = &self.params;

        let (l1, l2) = (a.conv1_len(), a.conv2_len());
        let mut c1_pre = vec![0.0; a.conv1_channels * l1];
        for o in 0..a.conv1_channels {
            let bias = p[l.c1b.start + o];
            for pos in 0..l1 {
                let mut acc = bias;
                for i in 0..a.channels {
                    let wbase = l.c1w.start + (o * a.channels + i) * a.kernel;
                    for t in 0..a.kernel {
                        // input is interleaved: channel i at time s sits at
                        // s * channels + i.
                        acc += p[wbase + t] * input[(pos + t) * a.channels + i];
                    }
                }
                c1_pre[o * l1 + pos] = acc;
            }
        }

        let mut c2_pre = vec![0.0; a.conv2_channels * l2];
        for o in 0..a.conv2_channels {
            let bias = p[l.c2b.start + o];
            for pos in 0..l2 {
                let mut acc = bias;
                for i in 0..a.conv1_channels {
                    let wbase = l.c2w.start + (o * a.conv1_channels + i) * a.kernel;
                    let row = i * l1 + pos;
                    for t in 0..a.kernel {
                        acc += p[wbase + t] * relu(c1_pre[row + t]);
                    }
                }
                c2_pre[o * l2 + pos] = acc;
            }
        }

        let flat = a.flat_len();
        let mut f1_pre = vec![0.0; a.fc1_width];
        for o in 0..a.fc1_width {
            let wbase = l.f1w.start + o * flat;
            let mut acc = p[l.f1b.start + o];
            for i in 0..flat {
                acc += p[wbase + i] * relu(c2_pre[i]);
            }
            f1_pre[o] = acc;
        }

        let mut f2_pre = vec![0.0; a.fc2_width];
        for o in 0..a.fc2_width {
            let wbase = l.f2w.start + o * a.fc1_width;
            let mut acc = p[l.f2b.start + o];
            for i in 0..a.fc1_width {
                acc += p[wbase + i] * relu(f1_pre[i]);
            }
            f2_pre[o] = acc;
        }

        let mut out = vec![0.0; a.actions];
        for o in 0..a.actions {
            let wbase = l.f3w.start + o * a.fc2_width;
            let mut acc = p[l.f3b.start + o];
            for i in 0..a.fc2_width {
                acc += p[wbase + i] * relu(f2_pre[i]);
            }
            out[o] = acc;
        }

        ForwardTrace {
            input: input.to_vec(),
            c1_pre,
            c2_pre,
            f1_pre,
            f2_pre,
            out,
        }
    }

    /// Adds d(loss)/d(params) to `grads` for a loss whose derivative with
    /// respect to `out[action]` is `g_out`; other outputs do not enter.
    pub fn accumulate_grad(&self, trace: &ForwardTrace, action: usize, g_out: f64, grads: &mut [f64]) {
        let a = &self.arch;
        let l = &self.layout;
        assert_eq!(grads.len(), self.params.len());
        assert!(action < a.actions);
        let p = &self.params;
        let (l1, l2) = (a.conv1_len(), a.conv2_len());
        let flat = a.flat_len();

        // Output layer: only the selected action's row carries gradient.
        let mut d_f2 = vec![0.0; a.fc2_width];
        {
            let wbase = l.f3w.start + action * a.fc2_width;
            grads[l.f3b.start + action] += g_out;
            for i in 0..a.fc2_width {
                grads[wbase + i] += g_out * relu(trace.f2_pre[i]);
                if trace.f2_pre[i] > 0.0 {
                    d_f2[i] = g_out * p[wbase + i];
                }
            }
        }

        let mut d_f1 = vec![0.0; a.fc1_width];
        for o in 0..a.fc2_width {
            let d = d_f2[o];
            if d == 0.0 {
                continue;
            }
            let wbase = l.f2w.start + o * a.fc1_width;
            grads[l.f2b.start + o] += d;
            for i in 0..a.fc1_width {
                grads[wbase + i] += d * relu(trace.f1_pre[i]);
                if trace.f1_pre[i] > 0.0 {
                    d_f1[i] += d * p[wbase + i];
                }
            }
        }

        let mut d_c2 = vec![0.0; flat];
        for o in 0..a.fc1_width {
            let d = d_f1[o];
            if d == 0.0 {
                continue;
            }
            let wbase = l.f1w.start + o * flat;
            grads[l.f1b.start + o] += d;
            for i in 0..flat {
                grads[wbase + i] += d * relu(trace.c2_pre[i]);
                if trace.c2_pre[i] > 0.0 {
                    d_c2[i] += d * p[wbase + i];
                }
            }
        }

        let mut d_c1 = vec![0.0; a.conv1_channels * l1]; // grad at relu(c1_pre)
        for o in 0..a.conv2_channels {
            for pos in 0..l2 {
                let d = d_c2[o * l2 + pos];
                if d == 0.0 {
                    continue;
                }
                grads[l.c2b.start + o] += d;
                for i in 0..a.conv1_channels {
                    let wbase = l.c2w.start + (o * a.conv1_channels + i) * a.kernel;
                    let row = i * l1 + pos;
                    for t in 0..a.kernel {
                        grads[wbase + t] += d * relu(trace.c1_pre[row + t]);
                        d_c1[row + t] += d * p[wbase + t];
                    }
                }
            }
        }

        for o in 0..a.conv1_channels {
            for pos in 0..l1 {
                if trace.c1_pre[o * l1 + pos] <= 0.0 {
                    continue; // dead unit: no gradient through or into it
                }
                let d = d_c1[o * l1 + pos];
                if d == 0.0 {
                    continue;
                }
                grads[l.c1b.start + o] += d;
                for i in 0..a.channels {
                    let wbase = l.c1w.start + (o * a.channels + i) * a.kernel;
                    for t in 0..a.kernel {
                        grads[wbase + t] += d * trace.input[(pos + t) * a.channels + i];
                    }
                }
            }
        }
    }

    /// One plain gradient-descent step: params -= rate * grads.
    pub fn sgd_step(&mut self, grads: &[f64], rate: f64) {
        assert_eq!(grads.len(), self.params.len());
        for (p, g) in self.params.iter_mut().zip(grads) {
            *p -= rate * g;
        }
    }

    /// Smallest |pre-activation| across all hidden units for this input.
    /// Finite-difference tests use it to reject parameterizations that sit
    /// on a ReLU kink.
    pub fn min_hidden_preactivation(&self, input: &[f64]) -> f64 {
        let t = self.forward_trace(input);
        t.c1_pre
            .iter()
            .chain(&t.c2_pre)
            .chain(&t.f1_pre)
            .chain(&t.f2_pre)
            .fold(f64::INFINITY, |m, &z| m.min(z.abs()))
    }

    /// Writes the parameters as little-endian f64 and the sidecar JSON.
    pub fn save(&self, params_path: &Path, sidecar_path: &Path, training: serde_json::Value) -> Result<()> {
        let mut bytes = Vec::with_capacity(self.params.len() * 8);
        for v in &self.params {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        std::fs::File::create(params_path)?.write_all(&bytes)?;
        let sidecar = ModelSidecar {
            architecture: self.arch,
            parameter_count: self.params.len(),
            training,
        };
        std::fs::write(sidecar_path, serde_json::to_string_pretty(&sidecar)?)?;
        Ok(())
    }

    /// Rebuilds a network from [`save`] output, validating sizes.
    pub fn load(params_path: &Path, sidecar_path: &Path) -> Result<Self> {
        let sidecar: ModelSidecar = serde_json::from_str(&std::fs::read_to_string(sidecar_path)?)?;
        sidecar.architecture.validate()?;
        let layout = Layout::new(&sidecar.architecture);
        if sidecar.parameter_count != layout.total() {
            return Err(Error::ModelFormat(format!(
                "sidecar claims {} parameters, architecture needs {}",
                sidecar.parameter_count,
                layout.total()
            )));
        }
        let mut bytes = Vec::new();
        std::fs::File::open(params_path)?.read_to_end(&mut bytes)?;
        if bytes.len() != layout.total() * 8 {
            return Err(Error::ModelFormat(format!(
                "parameter file holds {} bytes, expected {}",
                bytes.len(),
                layout.total() * 8
            )));
        }
        let params = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunked by 8")))
            .collect();
        Ok(QNetwork {
            arch: sidecar.architecture,
            layout,
            params,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, STREAM_NET_INIT};
    use rand::Rng;

    fn tiny_arch() -> QnnArchitecture {
        QnnArchitecture {
            history_len: 6,
            channels: 2,
            kernel: 3,
            conv1_channels: 3,
            conv2_channels: 4,
            fc1_width: 10,
            fc2_width: 7,
            actions: 5,
        }
    }

    fn make(arch: QnnArchitecture, seed: u64) -> QNetwork {
        let mut rng = stream(seed, 0, STREAM_NET_INIT);
        QNetwork::new(arch, &mut rng).unwrap()
    }

    #[test]
    fn default_architecture_shape() {
        let net = make(QnnArchitecture::default(), 0);
        // 2x16 input -> conv 8x14 -> conv 16x12 -> 192 -> 128 -> 64 -> 200.
        assert_eq!(
            net.num_params(),
            8 * 2 * 3 + 8 + 16 * 8 * 3 + 16 + 128 * 192 + 128 + 64 * 128 + 64 + 200 * 64 + 200
        );
        let out = net.forward(&vec![0.25; 32]);
        assert_eq!(out.len(), 200);
        assert!(out.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn init_respects_fan_in_bounds() {
        let net = make(QnnArchitecture::default(), 3);
        for (name, range) in net.layer_ranges() {
            let fan = match name {
                "conv1.weight" | "conv1.bias" => 2 * 3,
                "conv2.weight" | "conv2.bias" => 8 * 3,
                "fc1.weight" | "fc1.bias" => 192,
                "fc2.weight" | "fc2.bias" => 128,
                _ => 64,
            } as f64;
            let bound = 1.0 / fan.sqrt();
            for &v in &net.params()[range] {
                assert!(v.abs() <= bound, "{name}: {v} outside +-{bound}");
            }
        }
        // Same seed, same network.
        let again = make(QnnArchitecture::default(), 3);
        assert_eq!(net.params(), again.params());
    }

    #[test]
    fn too_short_history_is_rejected() {
        let arch = QnnArchitecture {
            history_len: 4,
            kernel: 3,
            ..tiny_arch()
        };
        // 4 -> 2 -> 0 positions after two valid convolutions.
        assert!(arch.validate().is_err());
    }

    /// Central-difference check of the analytic gradient, every layer.
    #[test]
    fn gradients_match_finite_differences() {
        let arch = tiny_arch();
        // Pick a parameterization that keeps pre-activations off the ReLU
        // kinks; finite differences would straddle them otherwise.
        let mut input = vec![0.0; arch.input_len()];
        let mut seed_rng = stream(99, 0, STREAM_NET_INIT);
        for v in input.iter_mut() {
            *v = seed_rng.random_range(0.0..1.0);
        }
        let net = (0..100)
            .map(|s| make(arch, s))
            .find(|n| n.min_hidden_preactivation(&input) > 1e-3)
            .expect("no margin seed in 100 tries");

        let action = 2;
        let target = 1.5;
        let trace = net.forward_trace(&input);
        let mut grads = vec![0.0; net.num_params()];
        let g_out = 2.0 * (trace.out[action] - target);
        net.accumulate_grad(&trace, action, g_out, &mut grads);

        let loss = |net: &QNetwork| {
            let q = net.forward(&input)[action];
            (target - q) * (target - q)
        };
        let mut checked = 0usize;
        let mut net = net;
        for (name, range) in net.layer_ranges() {
            for k in range.clone().step_by(range.len().div_ceil(25).max(1)) {
                let orig = net.params()[k];
                let h = 1e-5 * orig.abs().max(1.0);
                net.params_mut()[k] = orig + h;
                let up = loss(&net);
                net.params_mut()[k] = orig - h;
                let down = loss(&net);
                net.params_mut()[k] = orig;
                let numeric = (up - down) / (2.0 * h);
                let analytic = grads[k];
                if numeric.abs() < 1e-8 && analytic.abs() < 1e-8 {
                    checked += 1;
                    continue; // both zero up to FD noise
                }
                let rel = (numeric - analytic).abs() / (numeric.abs() + analytic.abs()).max(1e-8);
                assert!(
                    rel < 1e-4,
                    "{name}[{k}]: numeric {numeric} vs analytic {analytic} (rel {rel})"
                );
                checked += 1;
            }
        }
        assert!(checked > 100, "only {checked} parameters sampled");
    }

    #[test]
    fn sgd_step_moves_against_gradient() {
        let mut net = make(tiny_arch(), 1);
        let input = vec![0.5; net.arch().input_len()];
        let before = net.forward(&input)[0];
        let trace = net.forward_trace(&input);
        let mut grads = vec![0.0; net.num_params()];
        // d(out[0])/d(params), so descending must lower out[0].
        net.accumulate_grad(&trace, 0, 1.0, &mut grads);
        net.sgd_step(&grads, 0.05);
        let after = net.forward(&input)[0];
        assert!(after < before, "{after} !< {before}");

        let snapshot = net.params().to_vec();
        net.sgd_step(&grads, 0.0);
        assert_eq!(net.params(), &snapshot[..], "zero rate must be a no-op");
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let bin = dir.path().join("q.params");
        let json = dir.path().join("q.json");
        let net = make(tiny_arch(), 7);
        net.save(&bin, &json, serde_json::json!({"periods": 123}))
            .unwrap();
        let loaded = QNetwork::load(&bin, &json).unwrap();
        assert_eq!(net.params(), loaded.params());
        assert_eq!(net.arch(), loaded.arch());

        // Truncated parameter file is rejected.
        let bytes = std::fs::read(&bin).unwrap();
        std::fs::write(&bin, &bytes[..bytes.len() - 8]).unwrap();
        assert!(matches!(
            QNetwork::load(&bin, &json),
            Err(Error::ModelFormat(_))
        ));
    }
}
