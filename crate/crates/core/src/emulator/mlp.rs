//! Dense network: `[linear -> layer norm -> GELU] x L -> linear` over a flat
//! parameter vector, with hand-written backpropagation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::linalg::gemm;

const LN_EPS: f64 = 1e-5;
const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// One named parameter block inside the flat vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Block {
    pub name: String,
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
    /// Subject to weight decay (dense matrices only).
    pub decay: bool,
}

impl Block {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Architecture {
    pub input: usize,
    pub output: usize,
    pub width: usize,
    pub hidden_layers: usize,
    pub layer_norm: bool,
}

struct Layer {
    w: Block,
    b: Block,
    ln: Option<(Block, Block)>,
}

/// Per-layer activations kept for the backward pass.
struct Cache {
    input: Vec<f64>,
    zhat: Vec<f64>,
    inv_std: Vec<f64>,
    pre: Vec<f64>,
}

impl Architecture {
    /// Parameter blocks in storage order: per hidden layer `W, b, gamma, beta`,
    /// then the output `W, b`. Matrices are `out x in`, row-major.
    pub fn blocks(&self) -> Vec<Block> {
        let mut out = Vec::new();
        let mut offset = 0;
        let mut push = |name: String, rows: usize, cols: usize, decay: bool| {
            out.push(Block {
                name,
                offset,
                rows,
                cols,
                decay,
            });
            offset += rows * cols;
        };
        let mut fan_in = self.input;
        for l in 0..self.hidden_layers {
            push(format!("hidden{l}.weight"), self.width, fan_in, true);
            push(format!("hidden{l}.bias"), self.width, 1, false);
            if self.layer_norm {
                push(format!("hidden{l}.norm.scale"), self.width, 1, false);
                push(format!("hidden{l}.norm.shift"), self.width, 1, false);
            }
            fan_in = self.width;
        }
        push("output.weight".into(), self.output, fan_in, true);
        push("output.bias".into(), self.output, 1, false);
        out
    }

    pub fn param_count(&self) -> usize {
        self.blocks().iter().map(Block::len).sum()
    }

    fn layers(&self) -> (Vec<Layer>, Block, Block) {
        let mut blocks = self.blocks().into_iter();
        let mut layers = Vec::with_capacity(self.hidden_layers);
        for _ in 0..self.hidden_layers {
            let w = blocks.next().unwrap();
            let b = blocks.next().unwrap();
            let ln = if self.layer_norm {
                Some((blocks.next().unwrap(), blocks.next().unwrap()))
            } else {
                None
            };
            layers.push(Layer { w, b, ln });
        }
        let w = blocks.next().unwrap();
        let b = blocks.next().unwrap();
        (layers, w, b)
    }

    /// Uniform `(-1/sqrt(fan_in), 1/sqrt(fan_in))` for dense weights and
    /// biases; unit scale and zero shift for layer norm.
    pub fn init(&self, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = vec![0.0; self.param_count()];
        let (layers, ow, ob) = self.layers();
        let mut fill = |w: &Block, b: &Block, params: &mut [f64]| {
            let bound = 1.0 / (w.cols as f64).sqrt();
            for p in &mut params[w.range()] {
                *p = rng.random_range(-bound..bound);
            }
            for p in &mut params[b.range()] {
                *p = rng.random_range(-bound..bound);
            }
        };
        for layer in &layers {
            fill(&layer.w, &layer.b, &mut params);
            if let Some((scale, _)) = &layer.ln {
                params[scale.range()].fill(1.0);
            }
        }
        fill(&ow, &ob, &mut params);
        params
    }

    /// Outputs for `n` row-major input rows.
    pub fn forward(&self, params: &[f64], x: &[f64], n: usize) -> Vec<f64> {
        self.run(params, x, n, None)
    }

    fn run(&self, params: &[f64], x: &[f64], n: usize, mut caches: Option<&mut Vec<Cache>>) -> Vec<f64> {
        let (layers, ow, ob) = self.layers();
        let mut h = x.to_vec();
        let mut fan_in = self.input;
        for layer in &layers {
            let w = self.width;
            let mut z = affine(&h, n, fan_in, &params[layer.w.range()], &params[layer.b.range()], w);
            let (zhat, inv_std) = match &layer.ln {
                Some((scale, shift)) => {
                    let inv = normalize_rows(&mut z, n, w);
                    let zhat = if caches.is_some() { z.clone() } else { Vec::new() };
                    let (g, s) = (&params[scale.range()], &params[shift.range()]);
                    for row in z.chunks_exact_mut(w) {
                        for ((v, g), s) in row.iter_mut().zip(g).zip(s) {
                            *v = *v * g + s;
                        }
                    }
                    (zhat, inv)
                }
                None => (Vec::new(), Vec::new()),
            };
            let next: Vec<f64> = z.iter().map(|&a| gelu(a)).collect();
            match caches.as_deref_mut() {
                Some(c) => c.push(Cache {
                    input: std::mem::replace(&mut h, next),
                    zhat,
                    inv_std,
                    pre: z,
                }),
                None => h = next,
            }
            fan_in = w;
        }
        let y = affine(&h, n, fan_in, &params[ow.range()], &params[ob.range()], self.output);
        if let Some(c) = caches {
            c.push(Cache {
                input: h,
                zhat: Vec::new(),
                inv_std: Vec::new(),
                pre: Vec::new(),
            });
        }
        y
    }

    /// Mean squared error over all `n x output` entries and its gradient,
    /// written into `grad` (overwritten).
    pub fn loss_and_grad(&self, params: &[f64], x: &[f64], target: &[f64], n: usize, grad: &mut [f64]) -> f64 {
        let mut caches = Vec::with_capacity(self.hidden_layers + 1);
        let y = self.run(params, x, n, Some(&mut caches));
        let scale = 1.0 / (n * self.output) as f64;
        let mut loss = 0.0;
        let mut dy: Vec<f64> = y
            .iter()
            .zip(target)
            .map(|(y, t)| {
                let e = y - t;
                loss += e * e;
                2.0 * e * scale
            })
            .collect();
        loss *= scale;

        grad.fill(0.0);
        let (layers, ow, ob) = self.layers();
        let last = caches.pop().expect("output cache");
        let fan_in = if self.hidden_layers == 0 { self.input } else { self.width };
        let mut dh = linear_backward(&dy, &last.input, n, fan_in, self.output, &params[ow.range()], grad, &ow, &ob);

        for (l, layer) in layers.iter().enumerate().rev() {
            let cache = caches.pop().expect("hidden cache");
            let w = self.width;
            // through GELU
            for (d, &a) in dh.iter_mut().zip(&cache.pre) {
                *d *= gelu_grad(a);
            }
            // through layer norm
            if let Some((scale, shift)) = &layer.ln {
                let g = &params[scale.range()];
                let mut dz = vec![0.0; n * w];
                for r in 0..n {
                    let da = &dh[r * w..(r + 1) * w];
                    let zh = &cache.zhat[r * w..(r + 1) * w];
                    let mut mean_d = 0.0;
                    let mut mean_dz = 0.0;
                    for j in 0..w {
                        grad[scale.offset + j] += da[j] * zh[j];
                        grad[shift.offset + j] += da[j];
                        let d = da[j] * g[j];
                        mean_d += d;
                        mean_dz += d * zh[j];
                    }
                    mean_d /= w as f64;
                    mean_dz /= w as f64;
                    let inv = cache.inv_std[r];
                    for j in 0..w {
                        dz[r * w + j] = inv * (da[j] * g[j] - mean_d - zh[j] * mean_dz);
                    }
                }
                dy = dz;
            } else {
                dy = dh;
            }
            let fan_in = if l == 0 { self.input } else { w };
            dh = linear_backward(&dy, &cache.input, n, fan_in, w, &params[layer.w.range()], grad, &layer.w, &layer.b);
        }
        loss
    }
}

/// `h W^T + b` for `n` rows.
fn affine(h: &[f64], n: usize, fan_in: usize, w: &[f64], b: &[f64], fan_out: usize) -> Vec<f64> {
    let mut z = Vec::with_capacity(n * fan_out);
    for _ in 0..n {
        z.extend_from_slice(b);
    }
    gemm(n, fan_in, fan_out, 1.0, (h, fan_in, 1), (w, 1, fan_in), 1.0, &mut z);
    z
}

/// Accumulates weight and bias gradients; returns the gradient w.r.t. the
/// layer input.
#[allow(clippy::too_many_arguments)]
fn linear_backward(
    dz: &[f64],
    input: &[f64],
    n: usize,
    fan_in: usize,
    fan_out: usize,
    w: &[f64],
    grad: &mut [f64],
    wb: &Block,
    bb: &Block,
) -> Vec<f64> {
    gemm(fan_out, n, fan_in, 1.0, (dz, 1, fan_out), (input, fan_in, 1), 1.0, &mut grad[wb.range()]);
    let gb = &mut grad[bb.range()];
    for row in dz.chunks_exact(fan_out) {
        for (g, d) in gb.iter_mut().zip(row) {
            *g += d;
        }
    }
    let mut dh = vec![0.0; n * fan_in];
    gemm(n, fan_out, fan_in, 1.0, (dz, fan_out, 1), (w, fan_in, 1), 0.0, &mut dh);
    dh
}

/// Normalizes each row in place to zero mean and unit variance; returns the
/// per-row `1/sqrt(var + eps)`.
fn normalize_rows(z: &mut [f64], n: usize, w: usize) -> Vec<f64> {
    let mut inv = Vec::with_capacity(n);
    for row in z.chunks_exact_mut(w) {
        let mean = row.iter().sum::<f64>() / w as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / w as f64;
        let s = 1.0 / (var + LN_EPS).sqrt();
        for v in row.iter_mut() {
            *v = (*v - mean) * s;
        }
        inv.push(s);
    }
    inv
}

pub fn gelu(a: f64) -> f64 {
    0.5 * a * (1.0 + libm::erf(a * std::f64::consts::FRAC_1_SQRT_2))
}

fn gelu_grad(a: f64) -> f64 {
    0.5 * (1.0 + libm::erf(a * std::f64::consts::FRAC_1_SQRT_2)) + a * FRAC_1_SQRT_2PI * (-0.5 * a * a).exp()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn arch(layer_norm: bool) -> Architecture {
        Architecture {
            input: 5,
            output: 3,
            width: 8,
            hidden_layers: 2,
            layer_norm,
        }
    }

    #[test]
    fn parameter_count_from_shapes() {
        let a = Architecture {
            input: 84,
            output: 84,
            width: 256,
            hidden_layers: 4,
            layer_norm: true,
        };
        assert_eq!(
            a.param_count(),
            (84 * 256 + 256) + 3 * (256 * 256 + 256) + (256 * 84 + 84) + 4 * 2 * 256
        );
    }

    #[test]
    fn init_is_deterministic_and_forward_finite() {
        let a = arch(true);
        let p = a.init(11);
        assert_eq!(p, a.init(11));
        assert_ne!(p, a.init(12));
        let y = a.forward(&p, &[0.0; 5], 1);
        assert_eq!(y.len(), 3);
        assert!(y.iter().all(|v| v.is_finite()));
    }

    fn check_gradient(layer_norm: bool) {
        let a = arch(layer_norm);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        // perturb the norm parameters away from (1, 0) so their gradients matter
        let params: Vec<f64> = a.init(3).iter().map(|p| p + rng.random_range(-0.2..0.2)).collect();
        let n = 4;
        let x: Vec<f64> = (0..n * 5).map(|_| rng.random_range(-2.0..2.0)).collect();
        let t: Vec<f64> = (0..n * 3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut grad = vec![0.0; params.len()];
        a.loss_and_grad(&params, &x, &t, n, &mut grad);
        let loss = |p: &[f64]| {
            let y = a.forward(p, &x, n);
            y.iter().zip(&t).map(|(y, t)| (y - t).powi(2)).sum::<f64>() / (n * 3) as f64
        };
        let h = 1e-6;
        let mut worst: f64 = 0.0;
        for i in 0..params.len() {
            let mut p = params.clone();
            p[i] += h;
            let up = loss(&p);
            p[i] -= 2.0 * h;
            let down = loss(&p);
            let fd = (up - down) / (2.0 * h);
            let rel = (fd - grad[i]).abs() / (fd.abs() + grad[i].abs()).max(1e-7);
            worst = worst.max(rel);
        }
        assert!(worst < 1e-4, "worst relative gradient error {worst}");
    }

    #[test]
    fn gradients_match_central_differences() {
        check_gradient(true);
        check_gradient(false);
    }

    #[test]
    fn gelu_matches_reference_values() {
        assert_eq!(gelu(0.0), 0.0);
        assert!((gelu(1.0) - 0.841_344_746_068_542_9).abs() < 1e-15);
        assert!((gelu(-1.0) + 0.158_655_253_931_457_05).abs() < 1e-15);
    }
}
