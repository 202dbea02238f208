//! Independent oracles shared by the integration tests. Nothing here calls
//! into the library's numeric code; models are read through their public
//! fields only.

#![allow(dead_code)]

use std::ops::{Add, Div, Mul, Neg, Sub};

use bicap_core::data::CaptionedExample;
use bicap_core::dd::Dd;
use bicap_core::lstm::LstmParams;
use bicap_core::model::{CaptionModel, Direction, BOUNDARY};
use bicap_core::numcore::{Matrix, Vector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub trait Real:
    Copy + Add<Output = Self> + Sub<Output = Self> + Mul<Output = Self> + Div<Output = Self> + Neg<Output = Self>
{
    fn lift(x: f64) -> Self;
    fn lower(self) -> f64;
    fn exp_(self) -> Self;
    fn tanh_(self) -> Self;
    fn sigmoid_(self) -> Self {
        Self::lift(1.0) / (Self::lift(1.0) + (-self).exp_())
    }
}

impl Real for f64 {
    fn lift(x: f64) -> Self {
        x
    }
    fn lower(self) -> f64 {
        self
    }
    fn exp_(self) -> Self {
        self.exp()
    }
    fn tanh_(self) -> Self {
        self.tanh()
    }
}

impl Real for Dd {
    fn lift(x: f64) -> Self {
        Dd::new(x)
    }
    fn lower(self) -> f64 {
        self.to_f64()
    }
    fn exp_(self) -> Self {
        self.exp()
    }
    fn tanh_(self) -> Self {
        self.tanh()
    }
    fn sigmoid_(self) -> Self {
        self.sigmoid()
    }
}

/// Flat LSTM weights: `wx` is `4H × D`, `wh` is `4H × H`, rows ordered
/// input, forget, output, candidate.
#[derive(Clone, Debug)]
pub struct ScalarLstm<T> {
    pub d: usize,
    pub h: usize,
    pub wx: Vec<T>,
    pub wh: Vec<T>,
    pub b: Vec<T>,
}

impl<T: Real> ScalarLstm<T> {
    pub fn from_params(p: &LstmParams) -> Self {
        ScalarLstm {
            d: p.input_dim,
            h: p.hidden_dim,
            wx: p.wx.as_slice().iter().map(|&v| T::lift(v)).collect(),
            wh: p.wh.as_slice().iter().map(|&v| T::lift(v)).collect(),
            b: p.b.iter().map(|&v| T::lift(v)).collect(),
        }
    }

    /// One step, written out gate by gate with explicit loops.
    pub fn step(&self, x: &[T], h_prev: &[T], c_prev: &[T]) -> (Vec<T>, Vec<T>) {
        let (d, hd) = (self.d, self.h);
        let pre = |row: usize| {
            let mut s = self.b[row];
            for j in 0..d {
                s = s + self.wx[row * d + j] * x[j];
            }
            for j in 0..hd {
                s = s + self.wh[row * hd + j] * h_prev[j];
            }
            s
        };
        let mut h = Vec::with_capacity(hd);
        let mut c = Vec::with_capacity(hd);
        for k in 0..hd {
            let i = pre(k).sigmoid_();
            let f = pre(hd + k).sigmoid_();
            let o = pre(2 * hd + k).sigmoid_();
            let g = pre(3 * hd + k).tanh_();
            let ck = f * c_prev[k] + i * g;
            c.push(ck);
            h.push(o * ck.tanh_());
        }
        (h, c)
    }

    /// Hidden and cell states after every step.
    pub fn run(&self, xs: &[Vec<T>], h0: &[T], c0: &[T]) -> Vec<(Vec<T>, Vec<T>)> {
        let mut out: Vec<(Vec<T>, Vec<T>)> = Vec::with_capacity(xs.len());
        let (mut h, mut c) = (h0.to_vec(), c0.to_vec());
        for x in xs {
            (h, c) = self.step(x, &h, &c);
            out.push((h.clone(), c.clone()));
        }
        out
    }
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-scale..scale)).collect()
}

pub fn random_lstm(rng: &mut ChaCha8Rng, d: usize, h: usize, scale: f64) -> LstmParams {
    LstmParams {
        input_dim: d,
        hidden_dim: h,
        wx: Matrix::from_vec(4 * h, d, uniform_vec(rng, 4 * h * d, scale)).unwrap(),
        wh: Matrix::from_vec(4 * h, h, uniform_vec(rng, 4 * h * h, scale)).unwrap(),
        b: uniform_vec(rng, 4 * h, scale).into(),
    }
}

/// Random caption of `t - 1` content words (ids `2..k`), so each direction
/// runs `t` steps.
pub fn random_example(seed: u64, k: usize, feat: usize, t: usize) -> CaptionedExample {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xA5A5);
    CaptionedExample {
        image_id: format!("ex{seed}"),
        feature: (0..feat).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vector>(),
        tokens: (0..t - 1).map(|_| rng.gen_range(2..k)).collect(),
    }
}

fn ln_softmax_at(logits: &[f64], j: usize) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let s: f64 = logits.iter().map(|z| (z - max).exp()).sum();
    logits[j] - max - s.ln()
}

/// Straight-line forward pass of one direction of a transition-free model:
/// embedding column, T-LSTM, concat with feature, M-LSTM, shared softmax.
/// Returns the per-step probability vectors.
pub fn inline_bilstm_probs(m: &CaptionModel, dir: Direction, inputs: &[usize], feature: &[f64]) -> Vec<Vec<f64>> {
    let p = m.direction(dir);
    let t_lstm = ScalarLstm::<f64>::from_params(&p.t_lstm);
    let m_lstm = ScalarLstm::<f64>::from_params(&p.m_lstm);
    let hd = m.dims.hidden_dim;
    let k = m.dims.vocab_size;
    let (mut h1, mut c1) = (vec![0.0; hd], vec![0.0; hd]);
    let (mut hm, mut cm) = (vec![0.0; hd], vec![0.0; hd]);
    let mut out = Vec::new();
    for &tok in inputs {
        let x: Vec<f64> = (0..m.dims.embed_dim).map(|r| p.embedding.get(r, tok)).collect();
        (h1, c1) = t_lstm.step(&x, &h1, &c1);
        let mut m_in = h1.clone();
        m_in.extend_from_slice(feature);
        (hm, cm) = m_lstm.step(&m_in, &hm, &cm);
        let logits: Vec<f64> = (0..k)
            .map(|r| {
                let mut s = m.softmax_b[r];
                for j in 0..hd {
                    s += m.softmax_w.get(r, j) * hm[j];
                }
                s
            })
            .collect();
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
        let s: f64 = e.iter().sum();
        out.push(e.iter().map(|v| v / s).collect());
    }
    out
}

/// Log-probability of generating `seq` from the boundary token, scoring
/// every prefix with a fresh full forward pass.
pub fn sequence_logprob(m: &CaptionModel, dir: Direction, seq: &[usize], feature: &[f64]) -> f64 {
    let mut inputs = vec![BOUNDARY];
    inputs.extend_from_slice(&seq[..seq.len() - 1]);
    let rec = bicap_core::model::direction_forward(m, dir, &inputs, feature).unwrap();
    seq.iter()
        .enumerate()
        .map(|(t, &w)| ln_softmax_at(&rec.logits[t], w))
        .sum()
}

/// Greedy decoding that re-runs the whole prefix every step and picks the
/// lowest-index maximum.
pub fn greedy_by_prefix(m: &CaptionModel, dir: Direction, feature: &[f64], max_len: usize) -> Vec<usize> {
    let mut seq: Vec<usize> = Vec::new();
    while seq.len() < max_len {
        let mut inputs = vec![BOUNDARY];
        inputs.extend_from_slice(&seq);
        let rec = bicap_core::model::direction_forward(m, dir, &inputs, feature).unwrap();
        let last = rec.logits.last().unwrap();
        let mut best = 0;
        for (j, &z) in last.iter().enumerate() {
            if z > last[best] {
                best = j;
            }
        }
        seq.push(best);
        if best == BOUNDARY {
            break;
        }
    }
    seq
}

/// Every sequence a decoder can finish with: boundary-terminated ones of
/// length ≤ `max_len`, and boundary-free ones of exactly `max_len`.
pub fn all_finished_sequences(k: usize, max_len: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut frontier: Vec<Vec<usize>> = vec![Vec::new()];
    for len in 1..=max_len {
        let mut next = Vec::new();
        for prefix in &frontier {
            for tok in 0..k {
                let mut s = prefix.clone();
                s.push(tok);
                if tok == BOUNDARY || len == max_len {
                    out.push(s);
                } else {
                    next.push(s);
                }
            }
        }
        frontier = next;
    }
    out
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn bits(m: &CaptionModel) -> Vec<u64> {
    m.blocks().iter().flat_map(|b| b.data.iter().map(|x| x.to_bits())).collect()
}
