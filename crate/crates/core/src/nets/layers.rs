use rand::Rng;

use crate::autograd::{softmax, Graph, Matrix, ParamId, ParamStore, Var};

pub(crate) const LN_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Self {
        Self {
            w: store.add_glorot(format!("{name}.w"), fan_in, fan_out, rng),
            b: store.add(format!("{name}.b"), Matrix::zeros(1, fan_out)),
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Var {
        let w = g.param(store, self.w);
        let b = g.param(store, self.b);
        let y = g.matmul(x, w);
        g.add_row(y, b)
    }

    pub fn eval(&self, store: &ParamStore, x: &Matrix) -> Matrix {
        let mut y = x.matmul(store.value(self.w));
        let b = store.value(self.b);
        for i in 0..y.rows() {
            for (v, bb) in y.row_mut(i).iter_mut().zip(b.row(0)) {
                *v += bb;
            }
        }
        y
    }
}

#[derive(Clone, Copy, Debug)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Self {
        Self {
            gain: store.add(format!("{name}.g"), Matrix::filled(1, dim, 1.0)),
            bias: store.add(format!("{name}.b"), Matrix::zeros(1, dim)),
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Var {
        let n = g.layer_norm_rows(x, LN_EPS);
        let gain = g.param(store, self.gain);
        let bias = g.param(store, self.bias);
        let y = g.mul_row(n, gain);
        g.add_row(y, bias)
    }

    pub fn eval(&self, store: &ParamStore, x: &Matrix) -> Matrix {
        let gain = store.value(self.gain).row(0);
        let bias = store.value(self.bias).row(0);
        let mut y = x.clone();
        let n = x.cols() as f64;
        for i in 0..y.rows() {
            let row = y.row_mut(i);
            let mean = row.iter().sum::<f64>() / n;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let s = 1.0 / (var + LN_EPS).sqrt();
            for (j, v) in row.iter_mut().enumerate() {
                *v = (*v - mean) * s * gain[j] + bias[j];
            }
        }
        y
    }
}

#[derive(Clone, Debug)]
pub struct Block {
    ln1: LayerNorm,
    qkv: Linear,
    out: Linear,
    ln2: LayerNorm,
    ff1: Linear,
    ff2: Linear,
}

/// Pre-norm transformer stack with sinusoidal positions.
#[derive(Clone, Debug)]
pub struct Transformer {
    blocks: Vec<Block>,
    ln_f: LayerNorm,
    width: usize,
    heads: usize,
    pub causal: bool,
}

pub fn sinusoid(pos: usize, width: usize) -> Vec<f64> {
    (0..width)
        .map(|i| {
            let freq = 1.0 / 10000f64.powf((2 * (i / 2)) as f64 / width as f64);
            let a = pos as f64 * freq;
            if i % 2 == 0 {
                a.sin()
            } else {
                a.cos()
            }
        })
        .collect()
}

fn positions(t: usize, width: usize) -> Matrix {
    let data = (0..t).flat_map(|p| sinusoid(p, width)).collect();
    Matrix::from_vec(t, width, data)
}

impl Transformer {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        width: usize,
        layers: usize,
        heads: usize,
        ff: usize,
        causal: bool,
        rng: &mut impl Rng,
    ) -> Self {
        assert!(width % heads == 0, "width must divide into heads");
        let blocks = (0..layers)
            .map(|l| {
                let p = format!("{name}.{l}");
                Block {
                    ln1: LayerNorm::new(store, &format!("{p}.ln1"), width),
                    qkv: Linear::new(store, &format!("{p}.qkv"), width, 3 * width, rng),
                    out: Linear::new(store, &format!("{p}.attn_out"), width, width, rng),
                    ln2: LayerNorm::new(store, &format!("{p}.ln2"), width),
                    ff1: Linear::new(store, &format!("{p}.ff1"), width, ff, rng),
                    ff2: Linear::new(store, &format!("{p}.ff2"), ff, width, rng),
                }
            })
            .collect();
        Self {
            blocks,
            ln_f: LayerNorm::new(store, &format!("{name}.ln_f"), width),
            width,
            heads,
            causal,
        }
    }

    /// `x` is `T x width` (already projected); returns `T x width`.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Var {
        let (t, _) = g.shape(x);
        let pos = g.constant(positions(t, self.width));
        let mut h = g.add(x, pos);
        let mask = if self.causal {
            let mut m = Matrix::zeros(t, t);
            for i in 0..t {
                for j in i + 1..t {
                    m.set(i, j, -1e30);
                }
            }
            Some(g.constant(m))
        } else {
            None
        };
        let dh = self.width / self.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        for b in &self.blocks {
            let n = b.ln1.forward(g, store, h);
            let qkv = b.qkv.forward(g, store, n);
            let mut outs = Vec::with_capacity(self.heads);
            for hd in 0..self.heads {
                let q = g.slice_cols(qkv, hd * dh, dh);
                let k = g.slice_cols(qkv, self.width + hd * dh, dh);
                let v = g.slice_cols(qkv, 2 * self.width + hd * dh, dh);
                let kt = g.transpose(k);
                let s = g.matmul(q, kt);
                let mut s = g.scale(s, scale);
                if let Some(m) = mask {
                    s = g.add(s, m);
                }
                let a = g.softmax_rows(s);
                outs.push(g.matmul(a, v));
            }
            let cat = if outs.len() == 1 { outs[0] } else { g.concat_cols(&outs) };
            let o = b.out.forward(g, store, cat);
            h = g.add(h, o);
            let n = b.ln2.forward(g, store, h);
            let f = b.ff1.forward(g, store, n);
            let f = g.relu(f);
            let f = b.ff2.forward(g, store, f);
            h = g.add(h, f);
        }
        self.ln_f.forward(g, store, h)
    }

    pub fn new_cache(&self) -> KvCache {
        KvCache {
            keys: vec![Vec::new(); self.blocks.len()],
            values: vec![Vec::new(); self.blocks.len()],
        }
    }

    /// One causal step: appends this position's keys and values to the
    /// cache and returns the output row.
    pub fn step(&self, store: &ParamStore, x: &[f64], cache: &mut KvCache) -> Vec<f64> {
        assert!(self.causal, "incremental decoding needs a causal stack");
        let pos = cache.keys.first().map_or(0, |k| k.len());
        let mut h = Matrix::row_vector(x.iter().zip(sinusoid(pos, self.width)).map(|(a, b)| a + b).collect());
        let dh = self.width / self.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        for (l, b) in self.blocks.iter().enumerate() {
            let n = b.ln1.eval(store, &h);
            let qkv = b.qkv.eval(store, &n);
            let row = qkv.row(0);
            cache.keys[l].push(row[self.width..2 * self.width].to_vec());
            cache.values[l].push(row[2 * self.width..].to_vec());
            let mut cat = vec![0.0; self.width];
            for hd in 0..self.heads {
                let q = &row[hd * dh..(hd + 1) * dh];
                let scores: Vec<f64> = cache.keys[l]
                    .iter()
                    .map(|k| q.iter().zip(&k[hd * dh..(hd + 1) * dh]).map(|(a, b)| a * b).sum::<f64>() * scale)
                    .collect();
                let a = softmax(&scores);
                for (w, v) in a.iter().zip(&cache.values[l]) {
                    for j in 0..dh {
                        cat[hd * dh + j] += w * v[hd * dh + j];
                    }
                }
            }
            let o = b.out.eval(store, &Matrix::row_vector(cat));
            h.add_assign(&o);
            let n = b.ln2.eval(store, &h);
            let f = b.ff1.eval(store, &n).map(|v| v.max(0.0));
            let f = b.ff2.eval(store, &f);
            h.add_assign(&f);
        }
        self.ln_f.eval(store, &h).into_data()
    }
}

/// Per-layer keys and values of every position seen so far.
#[derive(Clone, Debug, Default)]
pub struct KvCache {
    keys: Vec<Vec<Vec<f64>>>,
    values: Vec<Vec<Vec<f64>>>,
}

impl KvCache {
    pub fn len(&self) -> usize {
        self.keys.first().map_or(0, |k| k.len())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
