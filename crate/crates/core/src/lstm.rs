//! Single-direction LSTM cell and backpropagation through time.
//!
//! The four gate blocks are packed row-wise in the order input, forget,
//! output, candidate, so a step is two matrix-vector products:
//!
//! ```text
//! z = Wx·x + Wh·h_prev + b
//! i = σ(z[0..H])   f = σ(z[H..2H])   o = σ(z[2H..3H])   g = tanh(z[3H..4H])
//! c = f ⊙ c_prev + i ⊙ g
//! h = o ⊙ tanh(c)
//! ```

use crate::error::{Error, Result};
use crate::numcore::{matvec, matvec_t, sigmoid_scalar, Matrix, Vector};

/// Weights of one LSTM layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmParams {
    pub input_dim: usize,
    pub hidden_dim: usize,
    /// `4H × D`, gate blocks in order i, f, o, g.
    pub wx: Matrix,
    /// `4H × H`, same block order.
    pub wh: Matrix,
    /// `4H`.
    pub b: Vector,
}

impl LstmParams {
    pub fn zeros(input_dim: usize, hidden_dim: usize) -> Self {
        LstmParams {
            input_dim,
            hidden_dim,
            wx: Matrix::zeros(4 * hidden_dim, input_dim),
            wh: Matrix::zeros(4 * hidden_dim, hidden_dim),
            b: Vector::zeros(4 * hidden_dim),
        }
    }

    pub fn zeros_like(&self) -> Self {
        LstmParams::zeros(self.input_dim, self.hidden_dim)
    }

    pub fn check_shapes(&self) -> Result<()> {
        let h4 = 4 * self.hidden_dim;
        if self.wx.shape() != (h4, self.input_dim)
            || self.wh.shape() != (h4, self.hidden_dim)
            || self.b.len() != h4
        {
            return Err(Error::shape(format!(
                "lstm params inconsistent with D={} H={}: Wx {:?}, Wh {:?}, b {}",
                self.input_dim,
                self.hidden_dim,
                self.wx.shape(),
                self.wh.shape(),
                self.b.len()
            )));
        }
        Ok(())
    }
}

/// Everything one step computed; enough to run the backward pass without
/// recomputing the forward.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmStepTrace {
    pub x: Vector,
    pub i: Vector,
    pub f: Vector,
    pub o: Vector,
    pub g: Vector,
    pub c: Vector,
    pub h: Vector,
    pub c_prev: Vector,
    pub h_prev: Vector,
}

/// Gradients of a sequence loss with respect to one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmGrads {
    pub dwx: Matrix,
    pub dwh: Matrix,
    pub db: Vector,
    pub dx_seq: Vec<Vector>,
    pub dh0: Vector,
    pub dc0: Vector,
}

/// Input-side gradients produced by one backward step.
#[derive(Debug, Clone)]
pub struct StepGrads {
    pub dx: Vector,
    pub dh_prev: Vector,
    pub dc_prev: Vector,
}

pub fn cell_forward(
    p: &LstmParams,
    x: &[f64],
    h_prev: &[f64],
    c_prev: &[f64],
) -> Result<LstmStepTrace> {
    let hd = p.hidden_dim;
    if x.len() != p.input_dim || h_prev.len() != hd || c_prev.len() != hd {
        return Err(Error::shape(format!(
            "cell_forward: expected x[{}], h[{hd}], c[{hd}], got x[{}], h[{}], c[{}]",
            p.input_dim,
            x.len(),
            h_prev.len(),
            c_prev.len()
        )));
    }
    let mut z = matvec(&p.wx, x)?;
    let zh = matvec(&p.wh, h_prev)?;
    for ((a, b), bias) in z.iter_mut().zip(zh.iter()).zip(p.b.iter()) {
        *a += b + bias;
    }

    let i: Vector = z[..hd].iter().map(|&v| sigmoid_scalar(v)).collect();
    let f: Vector = z[hd..2 * hd].iter().map(|&v| sigmoid_scalar(v)).collect();
    let o: Vector = z[2 * hd..3 * hd].iter().map(|&v| sigmoid_scalar(v)).collect();
    let g: Vector = z[3 * hd..].iter().map(|v| v.tanh()).collect();

    let c: Vector = (0..hd).map(|k| f[k] * c_prev[k] + i[k] * g[k]).collect();
    let h: Vector = (0..hd).map(|k| o[k] * c[k].tanh()).collect();

    Ok(LstmStepTrace {
        x: x.into(),
        i,
        f,
        o,
        g,
        c,
        h,
        c_prev: c_prev.into(),
        h_prev: h_prev.into(),
    })
}

pub fn sequence_forward(
    p: &LstmParams,
    xs: &[Vector],
    h0: &[f64],
    c0: &[f64],
) -> Result<Vec<LstmStepTrace>> {
    let mut traces: Vec<LstmStepTrace> = Vec::with_capacity(xs.len());
    for x in xs {
        let step = match traces.last() {
            Some(prev) => cell_forward(p, x, &prev.h, &prev.c)?,
            None => cell_forward(p, x, h0, c0)?,
        };
        traces.push(step);
    }
    Ok(traces)
}

/// Backpropagates one step. `dh` and `dc` are the total gradients reaching
/// `h_t` and `c_t`; parameter gradients are accumulated into `acc`.
pub fn cell_backward(
    p: &LstmParams,
    tr: &LstmStepTrace,
    dh: &[f64],
    dc: &[f64],
    acc: &mut LstmParams,
) -> Result<StepGrads> {
    let hd = p.hidden_dim;
    if dh.len() != hd || dc.len() != hd {
        return Err(Error::shape(format!(
            "cell_backward: expected dh[{hd}], dc[{hd}], got dh[{}], dc[{}]",
            dh.len(),
            dc.len()
        )));
    }
    let mut dz = Vector::zeros(4 * hd);
    let mut dc_prev = Vector::zeros(hd);
    for k in 0..hd {
        let tc = tr.c[k].tanh();
        let dc_k = dc[k] + dh[k] * tr.o[k] * (1.0 - tc * tc);
        let (i, f, o, g) = (tr.i[k], tr.f[k], tr.o[k], tr.g[k]);
        dz[k] = dc_k * g * i * (1.0 - i);
        dz[hd + k] = dc_k * tr.c_prev[k] * f * (1.0 - f);
        dz[2 * hd + k] = dh[k] * tc * o * (1.0 - o);
        dz[3 * hd + k] = dc_k * i * (1.0 - g * g);
        dc_prev[k] = dc_k * f;
    }
    acc.wx.add_outer(&dz, &tr.x);
    acc.wh.add_outer(&dz, &tr.h_prev);
    acc.b.add_assign(&dz);
    Ok(StepGrads {
        dx: matvec_t(&p.wx, &dz)?,
        dh_prev: matvec_t(&p.wh, &dz)?,
        dc_prev,
    })
}

/// Full BPTT over a stored trace. `dh_seq[t]` is the gradient arriving at
/// `h_t` from outside the recurrence; `dh_final`/`dc_final` seed the last
/// step's recurrent gradients.
pub fn sequence_backward(
    p: &LstmParams,
    traces: &[LstmStepTrace],
    dh_seq: &[Vector],
    dh_final: &[f64],
    dc_final: &[f64],
) -> Result<LstmGrads> {
    if traces.len() != dh_seq.len() {
        return Err(Error::shape(format!(
            "sequence_backward: {} traces but {} upstream gradients",
            traces.len(),
            dh_seq.len()
        )));
    }
    let hd = p.hidden_dim;
    if dh_final.len() != hd || dc_final.len() != hd {
        return Err(Error::shape(format!(
            "sequence_backward: final gradients must have length {hd}"
        )));
    }
    let mut acc = p.zeros_like();
    let mut dx_seq = vec![Vector::default(); traces.len()];
    let mut dh_next = Vector::from(dh_final);
    let mut dc_next = Vector::from(dc_final);
    for t in (0..traces.len()).rev() {
        let mut dh = dh_seq[t].clone();
        if dh.len() != hd {
            return Err(Error::shape(format!(
                "sequence_backward: dh_seq[{t}] has length {}, expected {hd}",
                dh.len()
            )));
        }
        dh.add_assign(&dh_next);
        let step = cell_backward(p, &traces[t], &dh, &dc_next, &mut acc)?;
        dx_seq[t] = step.dx;
        dh_next = step.dh_prev;
        dc_next = step.dc_prev;
    }
    Ok(LstmGrads {
        dwx: acc.wx,
        dwh: acc.wh,
        db: acc.b,
        dx_seq,
        dh0: dh_next,
        dc0: dc_next,
    })
}
