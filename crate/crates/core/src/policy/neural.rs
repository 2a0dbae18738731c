//! Small causal self-attention model with hand-written reverse pass.
//!
//! Each block is single-head attention followed by a tanh MLP, both with
//! residual connections and no normalization. All weights live in one flat
//! vector; `Layout` records where each matrix starts.

use ndarray::{s, Array2, ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::SequenceModel;
use crate::error::{Error, Result};
use crate::vocab::TokenId;

pub const MAX_WIDTH: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NeuralConfig {
    /// Embedding width.
    pub width: usize,
    /// Number of attention blocks (1 or 2).
    pub blocks: usize,
    /// MLP hidden size.
    pub hidden: usize,
    pub context_length: usize,
    pub init_seed: u64,
}

impl Default for NeuralConfig {
    fn default() -> Self {
        Self {
            width: 32,
            blocks: 1,
            hidden: 64,
            context_length: 24,
            init_seed: 0,
        }
    }
}

impl NeuralConfig {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.width > MAX_WIDTH {
            return Err(Error::InvalidArgument(format!(
                "neural width must be in 1..={MAX_WIDTH}, got {}",
                self.width
            )));
        }
        if !(1..=2).contains(&self.blocks) {
            return Err(Error::InvalidArgument(format!(
                "neural blocks must be 1 or 2, got {}",
                self.blocks
            )));
        }
        if self.hidden == 0 || self.context_length < 2 {
            return Err(Error::InvalidArgument(
                "neural hidden must be >= 1 and context_length >= 2".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct BlockLayout {
    wq: usize,
    wk: usize,
    wv: usize,
    wo: usize,
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
}

#[derive(Debug, Clone, PartialEq)]
struct Layout {
    tok: usize,
    pos: usize,
    blocks: Vec<BlockLayout>,
    w_out: usize,
    b_out: usize,
    total: usize,
}

impl Layout {
    fn new(v: usize, c: &NeuralConfig) -> Self {
        let (d, h) = (c.width, c.hidden);
        let mut off = 0;
        let mut take = |n: usize| {
            let at = off;
            off += n;
            at
        };
        let tok = take(v * d);
        let pos = take(c.context_length * d);
        let blocks = (0..c.blocks)
            .map(|_| BlockLayout {
                wq: take(d * d),
                wk: take(d * d),
                wv: take(d * d),
                wo: take(d * d),
                w1: take(d * h),
                b1: take(h),
                w2: take(h * d),
                b2: take(d),
            })
            .collect();
        let w_out = take(d * v);
        let b_out = take(v);
        Layout {
            tok,
            pos,
            blocks,
            w_out,
            b_out,
            total: off,
        }
    }
}

/// Activations of one block kept for the reverse pass.
struct BlockCache {
    x: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    att: Array2<f64>,
    h: Array2<f64>,
    y: Array2<f64>,
    m: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NeuralModel {
    config: NeuralConfig,
    vocab_size: usize,
    layout: Layout,
    params: Vec<f64>,
}

fn mat(p: &[f64], off: usize, r: usize, c: usize) -> ArrayView2<'_, f64> {
    ArrayView2::from_shape((r, c), &p[off..off + r * c]).expect("layout fits")
}

fn mat_mut(p: &mut [f64], off: usize, r: usize, c: usize) -> ArrayViewMut2<'_, f64> {
    ArrayViewMut2::from_shape((r, c), &mut p[off..off + r * c]).expect("layout fits")
}

fn vec_view(p: &[f64], off: usize, n: usize) -> ArrayView1<'_, f64> {
    ArrayView1::from(&p[off..off + n])
}

fn vec_mut(p: &mut [f64], off: usize, n: usize) -> ArrayViewMut1<'_, f64> {
    ArrayViewMut1::from(&mut p[off..off + n])
}

impl NeuralModel {
    /// Seeded Gaussian initialization scaled by fan-in.
    pub fn new(vocab_size: usize, config: &NeuralConfig) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(vocab_size, config);
        let mut params = vec![0.0; layout.total];
        let mut rng = ChaCha8Rng::seed_from_u64(config.init_seed);
        let (d, h) = (config.width, config.hidden);
        let mut fill = |params: &mut [f64], off: usize, n: usize, std: f64| {
            let dist = Normal::new(0.0, std).expect("positive std");
            for x in &mut params[off..off + n] {
                *x = dist.sample(&mut rng);
            }
        };
        fill(&mut params, layout.tok, vocab_size * d, 0.1);
        fill(&mut params, layout.pos, config.context_length * d, 0.1);
        let attn_std = 1.0 / (d as f64).sqrt();
        for b in &layout.blocks {
            for off in [b.wq, b.wk, b.wv, b.wo] {
                fill(&mut params, off, d * d, attn_std);
            }
            fill(&mut params, b.w1, d * h, attn_std);
            fill(&mut params, b.w2, h * d, 1.0 / (h as f64).sqrt());
        }
        fill(&mut params, layout.w_out, d * vocab_size, attn_std);
        Ok(Self {
            config: config.clone(),
            vocab_size,
            layout,
            params,
        })
    }

    pub fn from_parts(vocab_size: usize, config: &NeuralConfig, params: Vec<f64>) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(vocab_size, config);
        if params.len() != layout.total {
            return Err(Error::Checkpoint(format!(
                "neural parameter count {} does not match layout {}",
                params.len(),
                layout.total
            )));
        }
        Ok(Self {
            config: config.clone(),
            vocab_size,
            layout,
            params,
        })
    }

    pub fn config(&self) -> &NeuralConfig {
        &self.config
    }

    /// Runs the first `n` tokens; returns final hidden states and caches.
    fn forward(&self, tokens: &[TokenId], n: usize) -> (Array2<f64>, Vec<BlockCache>) {
        let (d, hid) = (self.config.width, self.config.hidden);
        let p = &self.params;
        let tok = mat(p, self.layout.tok, self.vocab_size, d);
        let pos = mat(p, self.layout.pos, self.config.context_length, d);
        let mut x = Array2::zeros((n, d));
        for i in 0..n {
            let mut row = x.row_mut(i);
            row.assign(&tok.row(tokens[i] as usize));
            row += &pos.row(i);
        }
        let scale = 1.0 / (d as f64).sqrt();
        let mut caches = Vec::with_capacity(self.layout.blocks.len());
        for b in &self.layout.blocks {
            let q = x.dot(&mat(p, b.wq, d, d));
            let k = x.dot(&mat(p, b.wk, d, d));
            let v = x.dot(&mat(p, b.wv, d, d));
            let mut att = Array2::zeros((n, n));
            for i in 0..n {
                let scores: Vec<f64> = (0..=i).map(|j| q.row(i).dot(&k.row(j)) * scale).collect();
                for (j, a) in super::softmax(&scores).into_iter().enumerate() {
                    att[[i, j]] = a;
                }
            }
            let h = att.dot(&v);
            let y = &x + &h.dot(&mat(p, b.wo, d, d));
            let m = (y.dot(&mat(p, b.w1, d, hid)) + vec_view(p, b.b1, hid)).mapv(f64::tanh);
            let out = &y + &m.dot(&mat(p, b.w2, hid, d)) + vec_view(p, b.b2, d);
            caches.push(BlockCache {
                x,
                q,
                k,
                v,
                att,
                h,
                y,
                m,
            });
            x = out;
        }
        (x, caches)
    }

    fn output_logits(&self, hidden: ArrayView1<'_, f64>) -> Vec<f64> {
        let d = self.config.width;
        let w_out = mat(&self.params, self.layout.w_out, d, self.vocab_size);
        let b_out = vec_view(&self.params, self.layout.b_out, self.vocab_size);
        (hidden.dot(&w_out) + b_out).to_vec()
    }
}

impl SequenceModel for NeuralModel {
    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn params(&self) -> &[f64] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn logits(&self, tokens: &[TokenId], positions: &[usize]) -> Vec<Vec<f64>> {
        let n = positions.iter().copied().max().unwrap_or(0);
        let (x, _) = self.forward(tokens, n);
        positions
            .iter()
            .map(|&p| self.output_logits(x.row(p - 1)))
            .collect()
    }

    fn backprop(
        &self,
        tokens: &[TokenId],
        positions: &[usize],
        dlogits: &[Vec<f64>],
        grad: &mut [f64],
    ) {
        let n = positions.iter().copied().max().unwrap_or(0);
        if n == 0 {
            return;
        }
        let (d, hid, vs) = (self.config.width, self.config.hidden, self.vocab_size);
        let p = &self.params;
        let (x_last, caches) = self.forward(tokens, n);

        let w_out = mat(p, self.layout.w_out, d, vs);
        let mut dx = Array2::<f64>::zeros((n, d));
        for (&pos, dl) in positions.iter().zip(dlogits) {
            let i = pos - 1;
            let dl = ArrayView1::from(dl.as_slice());
            dx.row_mut(i).scaled_add(1.0, &w_out.dot(&dl));
            let xi = x_last.row(i);
            let mut gw = mat_mut(grad, self.layout.w_out, d, vs);
            for a in 0..d {
                gw.row_mut(a).scaled_add(xi[a], &dl);
            }
            vec_mut(grad, self.layout.b_out, vs).scaled_add(1.0, &dl);
        }

        let scale = 1.0 / (d as f64).sqrt();
        for (b, c) in self.layout.blocks.iter().zip(&caches).rev() {
            // out = y + m w2 + b2
            let w2 = mat(p, b.w2, hid, d);
            mat_mut(grad, b.w2, hid, d).scaled_add(1.0, &c.m.t().dot(&dx));
            vec_mut(grad, b.b2, d).scaled_add(1.0, &dx.sum_axis(Axis(0)));
            let dm = dx.dot(&w2.t());
            // m = tanh(y w1 + b1)
            let dz = dm * &c.m.mapv(|m| 1.0 - m * m);
            let w1 = mat(p, b.w1, d, hid);
            mat_mut(grad, b.w1, d, hid).scaled_add(1.0, &c.y.t().dot(&dz));
            vec_mut(grad, b.b1, hid).scaled_add(1.0, &dz.sum_axis(Axis(0)));
            let dy = dx + dz.dot(&w1.t());
            // y = x + h wo
            let wo = mat(p, b.wo, d, d);
            mat_mut(grad, b.wo, d, d).scaled_add(1.0, &c.h.t().dot(&dy));
            let dh = dy.dot(&wo.t());
            // h = att v
            let datt = dh.dot(&c.v.t());
            let dv = c.att.t().dot(&dh);
            let mut ds = Array2::<f64>::zeros((n, n));
            for i in 0..n {
                let a = c.att.slice(s![i, ..=i]);
                let g = datt.slice(s![i, ..=i]);
                let mean = a.dot(&g);
                for j in 0..=i {
                    ds[[i, j]] = a[j] * (g[j] - mean);
                }
            }
            let dq = ds.dot(&c.k) * scale;
            let dk = ds.t().dot(&c.q) * scale;
            mat_mut(grad, b.wq, d, d).scaled_add(1.0, &c.x.t().dot(&dq));
            mat_mut(grad, b.wk, d, d).scaled_add(1.0, &c.x.t().dot(&dk));
            mat_mut(grad, b.wv, d, d).scaled_add(1.0, &c.x.t().dot(&dv));
            dx = dy
                + dq.dot(&mat(p, b.wq, d, d).t())
                + dk.dot(&mat(p, b.wk, d, d).t())
                + dv.dot(&mat(p, b.wv, d, d).t());
        }

        for i in 0..n {
            let t = tokens[i] as usize;
            let row = dx.row(i);
            mat_mut(grad, self.layout.tok, vs, d)
                .row_mut(t)
                .scaled_add(1.0, &row);
            mat_mut(grad, self.layout.pos, self.config.context_length, d)
                .row_mut(i)
                .scaled_add(1.0, &row);
        }
    }
}

impl NeuralModel {
    /// Number of parameters implied by a configuration.
    pub fn param_count(vocab_size: usize, config: &NeuralConfig) -> usize {
        Layout::new(vocab_size, config).total
    }
}
