use rand::Rng;
use rand_distr::Normal;

use super::norm::Normalizer;
use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::field::{wrap, GridField, N_PM, N_VARS};
use crate::rng;

/// Named slice of the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorSpec {
    pub name: &'static str,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub len: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitMode {
    /// Weights ~ N(0, init_std), biases zero.
    Normal,
    /// Everything zero: the network is exact persistence.
    Zeros,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Layout {
    feat: usize,
    hidden: usize,
    lin_w: usize,
    lin_b: usize,
    hid_w: usize,
    hid_b: usize,
    out_w: usize,
    total: usize,
}

impl Layout {
    fn new(t_in: usize, k: usize, hidden: usize) -> Self {
        let feat = N_VARS * t_in * k * k;
        let lin_w = 0;
        let lin_b = lin_w + N_PM * feat;
        let hid_w = lin_b + N_PM;
        let hid_b = hid_w + hidden * feat;
        let out_w = hid_b + hidden;
        let total = out_w + N_PM * hidden;
        Self {
            feat,
            hidden,
            lin_w,
            lin_b,
            hid_w,
            hid_b,
            out_w,
            total,
        }
    }
}

/// Activations recorded by a forward pass for the matching backward pass.
#[derive(Debug, Clone, Default)]
pub struct Tape {
    nx: usize,
    ny: usize,
    feats: Vec<f64>,
    hid: Vec<f64>,
    neighbours: Vec<u32>,
}

impl Tape {
    pub fn is_empty(&self) -> bool {
        self.feats.is_empty()
    }

    pub fn clear(&mut self) {
        self.feats.clear();
        self.hid.clear();
        self.neighbours.clear();
    }
}

/// Model weights, a matching gradient buffer and the normalizer the weights
/// were trained against.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParameters {
    pub t_in: usize,
    pub kernel: usize,
    pub hidden: usize,
    pub values: Vec<f64>,
    pub grad: Vec<f64>,
    pub norm: Normalizer,
    layout: Layout,
}

impl ModelParameters {
    pub fn new(cfg: &ModelConfig, norm: Normalizer, seed: u64, mode: InitMode) -> Result<Self> {
        if cfg.t_in == 0 {
            return Err(Error::InvalidInput("t_in must be at least 1".into()));
        }
        if cfg.kernel == 0 || cfg.kernel.is_multiple_of(2) {
            return Err(Error::InvalidInput(format!(
                "kernel must be odd, got {}",
                cfg.kernel
            )));
        }
        let layout = Layout::new(cfg.t_in, cfg.kernel, cfg.hidden);
        let mut values = vec![0.0; layout.total];
        if mode == InitMode::Normal {
            if !(cfg.init_std.is_finite() && cfg.init_std > 0.0) {
                return Err(Error::InvalidInput(format!(
                    "init_std must be positive, got {}",
                    cfg.init_std
                )));
            }
            let dist = Normal::new(0.0, cfg.init_std).expect("validated std");
            let mut r = rng::stream(seed, "model-init", 0);
            let weights = (layout.lin_w..layout.lin_b)
                .chain(layout.hid_w..layout.hid_b)
                .chain(layout.out_w..layout.total);
            for i in weights {
                values[i] = r.sample(dist);
            }
        }
        Ok(Self {
            t_in: cfg.t_in,
            kernel: cfg.kernel,
            hidden: cfg.hidden,
            grad: vec![0.0; layout.total],
            values,
            norm,
            layout,
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Features per cell.
    pub fn fan_in(&self) -> usize {
        self.layout.feat
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = 0.0);
    }

    pub fn tensors(&self) -> Vec<TensorSpec> {
        let l = &self.layout;
        let k = self.kernel;
        let mut v = vec![
            TensorSpec {
                name: "stencil.weight",
                shape: vec![N_PM, N_VARS, self.t_in, k, k],
                offset: l.lin_w,
                len: l.lin_b - l.lin_w,
            },
            TensorSpec {
                name: "stencil.bias",
                shape: vec![N_PM],
                offset: l.lin_b,
                len: N_PM,
            },
        ];
        if self.hidden > 0 {
            v.push(TensorSpec {
                name: "hidden.weight",
                shape: vec![self.hidden, N_VARS, self.t_in, k, k],
                offset: l.hid_w,
                len: l.hid_b - l.hid_w,
            });
            v.push(TensorSpec {
                name: "hidden.bias",
                shape: vec![self.hidden],
                offset: l.hid_b,
                len: self.hidden,
            });
            v.push(TensorSpec {
                name: "readout.weight",
                shape: vec![N_PM, self.hidden],
                offset: l.out_w,
                len: N_PM * self.hidden,
            });
        }
        v
    }

    /// Rebuilds parameters from raw tensor data, checking every shape.
    pub fn from_tensors(
        cfg: &ModelConfig,
        norm: Normalizer,
        tensors: &[(String, Vec<usize>, Vec<f64>)],
    ) -> Result<Self> {
        let mut p = Self::new(cfg, norm, 0, InitMode::Zeros)?;
        let specs = p.tensors();
        if tensors.len() != specs.len() {
            return Err(Error::shape(
                format!("{} parameter tensors", specs.len()),
                tensors.len(),
            ));
        }
        for spec in specs {
            let (_, shape, data) = tensors
                .iter()
                .find(|(n, _, _)| n == spec.name)
                .ok_or_else(|| Error::MissingData(format!("tensor {}", spec.name)))?;
            if *shape != spec.shape || data.len() != spec.len {
                return Err(Error::shape(
                    format!("{} {:?}", spec.name, spec.shape),
                    format!("{shape:?}"),
                ));
            }
            p.values[spec.offset..spec.offset + spec.len].copy_from_slice(data);
        }
        Ok(p)
    }

    fn check_window(&self, window: &[&[f64]], nx: usize, ny: usize) -> Result<()> {
        if window.len() != self.t_in {
            return Err(Error::shape(
                format!("{} input frames", self.t_in),
                window.len(),
            ));
        }
        let want = N_VARS * nx * ny;
        for (t, frame) in window.iter().enumerate() {
            if frame.len() != want {
                return Err(Error::shape(format!("frame of {want} values"), frame.len()));
            }
            if let Some(i) = frame.iter().position(|v| !v.is_finite()) {
                return Err(Error::InvalidInput(format!(
                    "non-finite input in frame {t} at flat index {i}"
                )));
            }
        }
        Ok(())
    }

    fn neighbour_table(&self, nx: usize, ny: usize) -> Vec<u32> {
        let k = self.kernel;
        let r = (k / 2) as isize;
        let mut tab = Vec::with_capacity(nx * ny * k * k);
        for y in 0..ny {
            for x in 0..nx {
                for dy in 0..k as isize {
                    let yy = wrap(y as isize + dy - r, ny);
                    for dx in 0..k as isize {
                        let xx = wrap(x as isize + dx - r, nx);
                        tab.push((yy * nx + xx) as u32);
                    }
                }
            }
        }
        tab
    }

    /// One-step prediction of the normalized PM channels, `[N_PM][y][x]`.
    /// `window` holds `t_in` normalized frames, oldest first.
    pub fn forward(&self, window: &[&[f64]], nx: usize, ny: usize) -> Result<Vec<f64>> {
        self.forward_impl(window, nx, ny, None)
    }

    /// Like [`forward`](Self::forward) but records a tape for backward.
    pub fn forward_tape(
        &self,
        window: &[&[f64]],
        nx: usize,
        ny: usize,
        tape: &mut Tape,
    ) -> Result<Vec<f64>> {
        self.forward_impl(window, nx, ny, Some(tape))
    }

    fn forward_impl(
        &self,
        window: &[&[f64]],
        nx: usize,
        ny: usize,
        mut tape: Option<&mut Tape>,
    ) -> Result<Vec<f64>> {
        self.check_window(window, nx, ny)?;
        let n = nx * ny;
        let l = self.layout;
        let f_len = l.feat;
        let hd = l.hidden;
        let kk = self.kernel * self.kernel;
        let nb = self.neighbour_table(nx, ny);
        let w = &self.values;
        let last = window[self.t_in - 1];
        let mut out = vec![0.0; N_PM * n];
        let mut feat = vec![0.0; f_len];
        let mut hid = vec![0.0; hd];
        if let Some(t) = tape.as_deref_mut() {
            t.nx = nx;
            t.ny = ny;
            t.feats.clear();
            t.feats.reserve(n * f_len);
            t.hid.clear();
            t.hid.reserve(n * hd);
        }
        for c in 0..n {
            let cell_nb = &nb[c * kk..(c + 1) * kk];
            let mut fi = 0;
            for v in 0..N_VARS {
                for frame in window {
                    let chan = &frame[v * n..(v + 1) * n];
                    for &j in cell_nb {
                        feat[fi] = chan[j as usize];
                        fi += 1;
                    }
                }
            }
            for j in 0..hd {
                let row = &w[l.hid_w + j * f_len..l.hid_w + (j + 1) * f_len];
                hid[j] = (w[l.hid_b + j] + dot(row, &feat)).tanh();
            }
            for o in 0..N_PM {
                let row = &w[l.lin_w + o * f_len..l.lin_w + (o + 1) * f_len];
                let mut y = last[o * n + c] + w[l.lin_b + o] + dot(row, &feat);
                let ro = &w[l.out_w + o * hd..l.out_w + (o + 1) * hd];
                y += dot(ro, &hid);
                out[o * n + c] = y;
            }
            if let Some(t) = tape.as_deref_mut() {
                t.feats.extend_from_slice(&feat);
                t.hid.extend_from_slice(&hid);
            }
        }
        if let Some(t) = tape {
            t.neighbours = nb;
        }
        Ok(out)
    }

    /// Accumulates `d loss / d params` into `grad` given `upstream =
    /// d loss / d output`. When `input_grad` is given (one buffer per window
    /// frame) the input gradients are accumulated there as well.
    pub fn backward(
        &self,
        tape: &Tape,
        upstream: &[f64],
        grad: &mut [f64],
        mut input_grad: Option<&mut [Vec<f64>]>,
    ) -> Result<()> {
        if tape.is_empty() {
            return Err(Error::Usage("backward called without a recorded forward pass".into()));
        }
        let n = tape.nx * tape.ny;
        let l = self.layout;
        let f_len = l.feat;
        let hd = l.hidden;
        let kk = self.kernel * self.kernel;
        if upstream.len() != N_PM * n {
            return Err(Error::shape(format!("{} upstream values", N_PM * n), upstream.len()));
        }
        if grad.len() != l.total {
            return Err(Error::shape(format!("{} gradient slots", l.total), grad.len()));
        }
        if let Some(ig) = input_grad.as_deref() {
            if ig.len() != self.t_in || ig.iter().any(|f| f.len() != N_VARS * n) {
                return Err(Error::shape(
                    format!("{} input-gradient frames of {}", self.t_in, N_VARS * n),
                    ig.len(),
                ));
            }
        }
        let w = &self.values;
        let mut dz = vec![0.0; hd];
        let mut dfeat = vec![0.0; f_len];
        for c in 0..n {
            let feat = &tape.feats[c * f_len..(c + 1) * f_len];
            let hid = &tape.hid[c * hd..(c + 1) * hd];
            let g = [upstream[c], upstream[n + c]];
            for o in 0..N_PM {
                grad[l.lin_b + o] += g[o];
                axpy(g[o], feat, &mut grad[l.lin_w + o * f_len..l.lin_w + (o + 1) * f_len]);
            }
            for j in 0..hd {
                let mut dh = 0.0;
                for o in 0..N_PM {
                    dh += w[l.out_w + o * hd + j] * g[o];
                    grad[l.out_w + o * hd + j] += g[o] * hid[j];
                }
                dz[j] = dh * (1.0 - hid[j] * hid[j]);
                grad[l.hid_b + j] += dz[j];
                axpy(dz[j], feat, &mut grad[l.hid_w + j * f_len..l.hid_w + (j + 1) * f_len]);
            }
            if let Some(ig) = input_grad.as_deref_mut() {
                dfeat.iter_mut().for_each(|d| *d = 0.0);
                for o in 0..N_PM {
                    axpy(g[o], &w[l.lin_w + o * f_len..l.lin_w + (o + 1) * f_len], &mut dfeat);
                }
                for j in 0..hd {
                    axpy(dz[j], &w[l.hid_w + j * f_len..l.hid_w + (j + 1) * f_len], &mut dfeat);
                }
                let cell_nb = &tape.neighbours[c * kk..(c + 1) * kk];
                let mut fi = 0;
                for v in 0..N_VARS {
                    for frame in ig.iter_mut() {
                        let chan = &mut frame[v * n..(v + 1) * n];
                        for &j in cell_nb {
                            chan[j as usize] += dfeat[fi];
                            fi += 1;
                        }
                    }
                }
                let last = &mut ig[self.t_in - 1];
                for o in 0..N_PM {
                    last[o * n + c] += g[o];
                }
            }
        }
        Ok(())
    }

    /// Backward into the internal gradient buffer.
    pub fn accumulate_grad(&mut self, tape: &Tape, upstream: &[f64]) -> Result<()> {
        let mut g = std::mem::take(&mut self.grad);
        let r = self.backward(tape, upstream, &mut g, None);
        self.grad = g;
        r
    }

    /// Physical-unit one-step forecast from `t_in` physical fields. Returns an
    /// `N_PM`-channel field stamped one step after the last input.
    pub fn predict_field(&self, inputs: &[GridField]) -> Result<GridField> {
        let first = inputs
            .first()
            .ok_or_else(|| Error::InvalidInput("no input fields".into()))?;
        for f in inputs {
            first.check_same_shape(f)?;
        }
        let enc = inputs
            .iter()
            .map(|f| self.norm.encode(f))
            .collect::<Result<Vec<_>>>()?;
        let window: Vec<&[f64]> = enc.iter().map(|v| v.as_slice()).collect();
        let z = self.forward(&window, first.nx, first.ny)?;
        let phys = self.norm.decode_pm(&z);
        let last = inputs.last().expect("non-empty");
        GridField::from_values(
            first.nx,
            first.ny,
            N_PM,
            last.time_index + 1,
            phys.iter().map(|v| *v as f32).collect(),
        )
    }
}

/// Dot product with four interleaved partial sums, combined in a fixed order.
#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut tail = 0.0;
    for (x, y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}
