//! The bidirectional captioning network.
//!
//! Each direction owns a word embedding, a text LSTM (T-LSTM) and a
//! multimodal LSTM (M-LSTM). At every step the M-LSTM reads the text-side
//! vector concatenated with the image feature. The deep variants insert a
//! transition between the two LSTMs:
//!
//! * `BiSLstm`: `s_t = U·h1_t + V·hm_{t-1}`, where `hm_{t-1}` is the
//!   M-LSTM's own previous hidden state.
//! * `BiFLstm`: `r_t = relu([W·h1_t ; V·(U·h1_t)])`.
//!
//! Both directions share one softmax head.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::lstm::{cell_backward, cell_forward, LstmParams, LstmStepTrace};
use crate::numcore::{matvec, matvec_t, relu, softmax, Matrix, Vector};

/// Reserved id used as start input and stop target in both directions.
pub const BOUNDARY: usize = 0;
/// Reserved id for out-of-vocabulary words.
pub const UNK: usize = 1;

/// Half-width of the uniform weight initialisation interval.
pub const INIT_RANGE: f64 = 0.08;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ArchitectureKind {
    BiLstm,
    BiSLstm,
    BiFLstm,
}

impl ArchitectureKind {
    pub const ALL: [ArchitectureKind; 3] = [
        ArchitectureKind::BiLstm,
        ArchitectureKind::BiSLstm,
        ArchitectureKind::BiFLstm,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ArchitectureKind::BiLstm => "bi-lstm",
            ArchitectureKind::BiSLstm => "bi-s-lstm",
            ArchitectureKind::BiFLstm => "bi-f-lstm",
        }
    }

    pub fn tag(self) -> u8 {
        match self {
            ArchitectureKind::BiLstm => 0,
            ArchitectureKind::BiSLstm => 1,
            ArchitectureKind::BiFLstm => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|a| a.tag() == tag)
    }
}

impl fmt::Display for ArchitectureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ArchitectureKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown architecture `{s}` (expected bi-lstm, bi-s-lstm or bi-f-lstm)"
                ))
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Direction {
    Forward,
    Backward,
}

impl Direction {
    pub fn name(self) -> &'static str {
        match self {
            Direction::Forward => "forward",
            Direction::Backward => "backward",
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Output widths of the fully connected transition: `U: u_out×H`,
/// `V: v_out×u_out`, `W: w_out×H`. Ignored by the other architectures.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TransitionWidths {
    pub u_out: usize,
    pub v_out: usize,
    pub w_out: usize,
}

impl TransitionWidths {
    /// `U` and `V` at `H/2`, `W` taking the remainder so the transition
    /// output is `H` wide.
    pub fn for_hidden(hidden: usize) -> Self {
        let half = (hidden / 2).max(1);
        TransitionWidths {
            u_out: half,
            v_out: half,
            w_out: hidden.saturating_sub(half).max(1),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelDims {
    pub vocab_size: usize,
    pub feature_dim: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub transition: TransitionWidths,
}

impl ModelDims {
    pub fn new(vocab_size: usize, feature_dim: usize, embed_dim: usize, hidden_dim: usize) -> Self {
        ModelDims {
            vocab_size,
            feature_dim,
            embed_dim,
            hidden_dim,
            transition: TransitionWidths::for_hidden(hidden_dim),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let t = self.transition;
        let all = [
            ("vocab_size", self.vocab_size),
            ("feature_dim", self.feature_dim),
            ("embed_dim", self.embed_dim),
            ("hidden_dim", self.hidden_dim),
            ("transition.u_out", t.u_out),
            ("transition.v_out", t.v_out),
            ("transition.w_out", t.w_out),
        ];
        for (name, v) in all {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        Ok(())
    }

    /// Width of the text-side vector the M-LSTM reads.
    pub fn text_dim(&self, arch: ArchitectureKind) -> usize {
        match arch {
            ArchitectureKind::BiLstm | ArchitectureKind::BiSLstm => self.hidden_dim,
            ArchitectureKind::BiFLstm => self.transition.w_out + self.transition.v_out,
        }
    }

    pub fn m_input_dim(&self, arch: ArchitectureKind) -> usize {
        self.text_dim(arch) + self.feature_dim
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Transition {
    /// `U·h_below + V·h_prev_same`.
    Stacked { u: Matrix, v: Matrix },
    /// `relu([W·h_below ; V·(U·h_below)])`.
    Shortcut { u: Matrix, v: Matrix, w: Matrix },
}

#[derive(Debug, Clone, PartialEq)]
pub struct DirectionParams {
    /// `D_e × K`; column `k` is the embedding of token `k`.
    pub embedding: Matrix,
    pub t_lstm: LstmParams,
    pub m_lstm: LstmParams,
    pub transition: Option<Transition>,
}

impl DirectionParams {
    fn zeros(arch: ArchitectureKind, d: &ModelDims) -> Self {
        let h = d.hidden_dim;
        let t = d.transition;
        let transition = match arch {
            ArchitectureKind::BiLstm => None,
            ArchitectureKind::BiSLstm => Some(Transition::Stacked {
                u: Matrix::zeros(h, h),
                v: Matrix::zeros(h, h),
            }),
            ArchitectureKind::BiFLstm => Some(Transition::Shortcut {
                u: Matrix::zeros(t.u_out, h),
                v: Matrix::zeros(t.v_out, t.u_out),
                w: Matrix::zeros(t.w_out, h),
            }),
        };
        DirectionParams {
            embedding: Matrix::zeros(d.embed_dim, d.vocab_size),
            t_lstm: LstmParams::zeros(d.embed_dim, h),
            m_lstm: LstmParams::zeros(d.m_input_dim(arch), h),
            transition,
        }
    }

    fn push_blocks<'a>(&'a self, prefix: &str, out: &mut Vec<ParamBlock<'a>>) {
        let mut push = |name: &str, kind, data: &'a [f64]| {
            out.push(ParamBlock {
                name: format!("{prefix}.{name}"),
                kind,
                data,
            })
        };
        push("embedding", BlockKind::Weight, self.embedding.as_slice());
        push("t_lstm.wx", BlockKind::Weight, self.t_lstm.wx.as_slice());
        push("t_lstm.wh", BlockKind::Weight, self.t_lstm.wh.as_slice());
        push("t_lstm.b", BlockKind::Bias, &self.t_lstm.b);
        push("m_lstm.wx", BlockKind::Weight, self.m_lstm.wx.as_slice());
        push("m_lstm.wh", BlockKind::Weight, self.m_lstm.wh.as_slice());
        push("m_lstm.b", BlockKind::Bias, &self.m_lstm.b);
        match &self.transition {
            None => {}
            Some(Transition::Stacked { u, v }) => {
                push("transition.u", BlockKind::Weight, u.as_slice());
                push("transition.v", BlockKind::Weight, v.as_slice());
            }
            Some(Transition::Shortcut { u, v, w }) => {
                push("transition.u", BlockKind::Weight, u.as_slice());
                push("transition.v", BlockKind::Weight, v.as_slice());
                push("transition.w", BlockKind::Weight, w.as_slice());
            }
        }
    }

    fn push_blocks_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamBlockMut<'a>>) {
        let mut push = |name: &str, kind, data: &'a mut [f64]| {
            out.push(ParamBlockMut {
                name: format!("{prefix}.{name}"),
                kind,
                data,
            })
        };
        push("embedding", BlockKind::Weight, self.embedding.as_mut_slice());
        push("t_lstm.wx", BlockKind::Weight, self.t_lstm.wx.as_mut_slice());
        push("t_lstm.wh", BlockKind::Weight, self.t_lstm.wh.as_mut_slice());
        push("t_lstm.b", BlockKind::Bias, &mut self.t_lstm.b);
        push("m_lstm.wx", BlockKind::Weight, self.m_lstm.wx.as_mut_slice());
        push("m_lstm.wh", BlockKind::Weight, self.m_lstm.wh.as_mut_slice());
        push("m_lstm.b", BlockKind::Bias, &mut self.m_lstm.b);
        match &mut self.transition {
            None => {}
            Some(Transition::Stacked { u, v }) => {
                push("transition.u", BlockKind::Weight, u.as_mut_slice());
                push("transition.v", BlockKind::Weight, v.as_mut_slice());
            }
            Some(Transition::Shortcut { u, v, w }) => {
                push("transition.u", BlockKind::Weight, u.as_mut_slice());
                push("transition.v", BlockKind::Weight, v.as_mut_slice());
                push("transition.w", BlockKind::Weight, w.as_mut_slice());
            }
        }
    }
}

/// Whether weight decay applies to a block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockKind {
    Weight,
    Bias,
}

#[derive(Debug)]
pub struct ParamBlock<'a> {
    pub name: String,
    pub kind: BlockKind,
    pub data: &'a [f64],
}

#[derive(Debug)]
pub struct ParamBlockMut<'a> {
    pub name: String,
    pub kind: BlockKind,
    pub data: &'a mut [f64],
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaptionModel {
    pub arch: ArchitectureKind,
    pub dims: ModelDims,
    pub fwd: DirectionParams,
    pub bwd: DirectionParams,
    /// `K × H`, shared by both directions.
    pub softmax_w: Matrix,
    pub softmax_b: Vector,
}

/// Gradients share the model's layout block for block.
pub type ModelGrads = CaptionModel;

impl CaptionModel {
    pub fn zeros(arch: ArchitectureKind, dims: ModelDims) -> Result<Self> {
        dims.validate()?;
        Ok(CaptionModel {
            arch,
            dims,
            fwd: DirectionParams::zeros(arch, &dims),
            bwd: DirectionParams::zeros(arch, &dims),
            softmax_w: Matrix::zeros(dims.vocab_size, dims.hidden_dim),
            softmax_b: Vector::zeros(dims.vocab_size),
        })
    }

    /// Weights i.i.d. uniform on `[-0.08, 0.08]` in block order, biases zero.
    pub fn init(arch: ArchitectureKind, dims: ModelDims, seed: u64) -> Result<Self> {
        let mut model = CaptionModel::zeros(arch, dims)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for block in model.blocks_mut() {
            if block.kind == BlockKind::Weight {
                for w in block.data.iter_mut() {
                    *w = rng.gen_range(-INIT_RANGE..=INIT_RANGE);
                }
            }
        }
        Ok(model)
    }

    pub fn zeros_like(&self) -> Self {
        CaptionModel {
            arch: self.arch,
            dims: self.dims,
            fwd: DirectionParams::zeros(self.arch, &self.dims),
            bwd: DirectionParams::zeros(self.arch, &self.dims),
            softmax_w: self.softmax_w.zeros_like(),
            softmax_b: Vector::zeros(self.softmax_b.len()),
        }
    }

    pub fn direction(&self, dir: Direction) -> &DirectionParams {
        match dir {
            Direction::Forward => &self.fwd,
            Direction::Backward => &self.bwd,
        }
    }

    pub fn direction_mut(&mut self, dir: Direction) -> &mut DirectionParams {
        match dir {
            Direction::Forward => &mut self.fwd,
            Direction::Backward => &mut self.bwd,
        }
    }

    /// All parameter blocks in the fixed checkpoint order: forward
    /// direction, backward direction, softmax weight, softmax bias.
    pub fn blocks(&self) -> Vec<ParamBlock<'_>> {
        let mut out = Vec::new();
        self.fwd.push_blocks("fwd", &mut out);
        self.bwd.push_blocks("bwd", &mut out);
        out.push(ParamBlock {
            name: "softmax.w".into(),
            kind: BlockKind::Weight,
            data: self.softmax_w.as_slice(),
        });
        out.push(ParamBlock {
            name: "softmax.b".into(),
            kind: BlockKind::Bias,
            data: &self.softmax_b,
        });
        out
    }

    pub fn blocks_mut(&mut self) -> Vec<ParamBlockMut<'_>> {
        let mut out = Vec::new();
        self.fwd.push_blocks_mut("fwd", &mut out);
        self.bwd.push_blocks_mut("bwd", &mut out);
        out.push(ParamBlockMut {
            name: "softmax.w".into(),
            kind: BlockKind::Weight,
            data: self.softmax_w.as_mut_slice(),
        });
        out.push(ParamBlockMut {
            name: "softmax.b".into(),
            kind: BlockKind::Bias,
            data: &mut self.softmax_b,
        });
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.blocks().iter().map(|b| b.data.len()).sum()
    }

    /// `self += scale · other`, block by block.
    pub fn axpy(&mut self, scale: f64, other: &CaptionModel) {
        for (dst, src) in self.blocks_mut().into_iter().zip(other.blocks()) {
            for (d, s) in dst.data.iter_mut().zip(src.data) {
                *d += scale * s;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for block in self.blocks_mut() {
            for v in block.data.iter_mut() {
                *v *= factor;
            }
        }
    }

    pub fn check_token(&self, token: usize) -> Result<()> {
        if token >= self.dims.vocab_size {
            return Err(Error::Vocab {
                id: token,
                size: self.dims.vocab_size,
            });
        }
        Ok(())
    }

    pub fn check_feature(&self, feature: &[f64]) -> Result<()> {
        if feature.len() != self.dims.feature_dim {
            return Err(Error::shape(format!(
                "feature has length {}, model expects {}",
                feature.len(),
                self.dims.feature_dim
            )));
        }
        Ok(())
    }

    /// Runs one time step of one direction.
    pub fn step(
        &self,
        dir: Direction,
        state: &RecurrentState,
        token: usize,
        feature: &[f64],
    ) -> Result<StepOutput> {
        self.check_token(token)?;
        let d = self.direction(dir);
        let x = d.embedding.column(token);
        let t_trace = cell_forward(&d.t_lstm, &x, &state.t_h, &state.t_c)?;
        let (text, transition) = match &d.transition {
            None => (t_trace.h.clone(), None),
            Some(Transition::Stacked { u, v }) => {
                let s = bi_s_transition(u, v, &t_trace.h, &state.m_h)?;
                (s.clone(), Some(s))
            }
            Some(Transition::Shortcut { u, v, w }) => {
                let r = bi_f_transition(w, u, v, &t_trace.h)?;
                (r.clone(), Some(r))
            }
        };
        let m_in = Vector::concat(&text, feature);
        let m_trace = cell_forward(&d.m_lstm, &m_in, &state.m_h, &state.m_c)?;
        let mut logits = matvec(&self.softmax_w, &m_trace.h)?;
        logits.add_assign(&self.softmax_b);
        Ok(StepOutput {
            t_trace,
            m_trace,
            transition,
            logits,
        })
    }
}

/// Hidden and cell states of both LSTM layers of one direction.
#[derive(Debug, Clone, PartialEq)]
pub struct RecurrentState {
    pub t_h: Vector,
    pub t_c: Vector,
    pub m_h: Vector,
    pub m_c: Vector,
}

impl RecurrentState {
    pub fn zeros(hidden: usize) -> Self {
        RecurrentState {
            t_h: Vector::zeros(hidden),
            t_c: Vector::zeros(hidden),
            m_h: Vector::zeros(hidden),
            m_c: Vector::zeros(hidden),
        }
    }
}

#[derive(Debug, Clone)]
pub struct StepOutput {
    pub t_trace: LstmStepTrace,
    pub m_trace: LstmStepTrace,
    pub transition: Option<Vector>,
    pub logits: Vector,
}

impl StepOutput {
    pub fn next_state(&self) -> RecurrentState {
        RecurrentState {
            t_h: self.t_trace.h.clone(),
            t_c: self.t_trace.c.clone(),
            m_h: self.m_trace.h.clone(),
            m_c: self.m_trace.c.clone(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ForwardPassRecord {
    pub direction: Direction,
    pub inputs: Vec<usize>,
    pub t_traces: Vec<LstmStepTrace>,
    pub m_traces: Vec<LstmStepTrace>,
    pub transition_activations: Option<Vec<Vector>>,
    pub logits: Vec<Vector>,
    /// `probs[t]` is the distribution over the word at position `t + 1`.
    pub probs: Vec<Vector>,
}

impl ForwardPassRecord {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }
}

/// Runs one direction over `tokens` as given. Backward-direction callers
/// pass the already reversed caption.
pub fn direction_forward(
    m: &CaptionModel,
    dir: Direction,
    tokens: &[usize],
    feature: &[f64],
) -> Result<ForwardPassRecord> {
    m.check_feature(feature)?;
    let n = tokens.len();
    let mut rec = ForwardPassRecord {
        direction: dir,
        inputs: tokens.to_vec(),
        t_traces: Vec::with_capacity(n),
        m_traces: Vec::with_capacity(n),
        transition_activations: m.direction(dir).transition.as_ref().map(|_| Vec::with_capacity(n)),
        logits: Vec::with_capacity(n),
        probs: Vec::with_capacity(n),
    };
    let mut state = RecurrentState::zeros(m.dims.hidden_dim);
    for &token in tokens {
        let out = m.step(dir, &state, token, feature)?;
        state = out.next_state();
        if let (Some(acts), Some(a)) = (rec.transition_activations.as_mut(), out.transition) {
            acts.push(a);
        }
        rec.probs.push(softmax(&out.logits)?);
        rec.logits.push(out.logits);
        rec.t_traces.push(out.t_trace);
        rec.m_traces.push(out.m_trace);
    }
    Ok(rec)
}

/// `U·h_below + V·h_prev_same`.
pub fn bi_s_transition(
    u: &Matrix,
    v: &Matrix,
    h_below: &[f64],
    h_prev_same: &[f64],
) -> Result<Vector> {
    if u.rows() != v.rows() {
        return Err(Error::shape(format!(
            "stacked transition: U is {:?} but V is {:?}",
            u.shape(),
            v.shape()
        )));
    }
    let mut out = matvec(u, h_below)?;
    out.add_assign(&matvec(v, h_prev_same)?);
    Ok(out)
}

/// `relu([W·h_below ; V·(U·h_below)])`.
pub fn bi_f_transition(w: &Matrix, u: &Matrix, v: &Matrix, h_below: &[f64]) -> Result<Vector> {
    let direct = matvec(w, h_below)?;
    let hidden = matvec(u, h_below)?;
    let deep = matvec(v, &hidden)?;
    Ok(relu(&Vector::concat(&direct, &deep)))
}

/// Teacher-forcing inputs and targets for one direction of a caption given
/// in natural order: inputs `[BOUNDARY, w..]`, targets `[w.., BOUNDARY]`,
/// with the words reversed for the backward direction.
pub fn teacher_forcing(caption: &[usize], dir: Direction) -> (Vec<usize>, Vec<usize>) {
    let words: Vec<usize> = match dir {
        Direction::Forward => caption.to_vec(),
        Direction::Backward => caption.iter().rev().copied().collect(),
    };
    let mut inputs = Vec::with_capacity(words.len() + 1);
    inputs.push(BOUNDARY);
    inputs.extend_from_slice(&words);
    let mut targets = words;
    targets.push(BOUNDARY);
    (inputs, targets)
}

/// Summed cross-entropy `Σ_t −log probs[t][targets[t]]`, via log-sum-exp.
pub fn sequence_loss(rec: &ForwardPassRecord, targets: &[usize]) -> Result<f64> {
    check_targets(rec, targets)?;
    let mut loss = 0.0;
    for (logits, &y) in rec.logits.iter().zip(targets) {
        loss += crate::numcore::log_sum_exp(logits)? - logits[y];
    }
    Ok(loss)
}

fn check_targets(rec: &ForwardPassRecord, targets: &[usize]) -> Result<()> {
    if targets.len() != rec.len() {
        return Err(Error::shape(format!(
            "{} targets for a record of length {}",
            targets.len(),
            rec.len()
        )));
    }
    if let Some(&bad) = targets
        .iter()
        .find(|&&y| rec.logits.first().is_some_and(|l| y >= l.len()))
    {
        return Err(Error::Vocab {
            id: bad,
            size: rec.logits[0].len(),
        });
    }
    Ok(())
}

/// Gradients of one direction's summed cross-entropy.
pub fn model_backward(
    m: &CaptionModel,
    rec: &ForwardPassRecord,
    targets: &[usize],
) -> Result<ModelGrads> {
    let mut grads = m.zeros_like();
    accumulate_backward(m, rec, targets, &mut grads)?;
    Ok(grads)
}

/// Like [`model_backward`] but adds into an existing gradient buffer.
pub fn accumulate_backward(
    m: &CaptionModel,
    rec: &ForwardPassRecord,
    targets: &[usize],
    grads: &mut ModelGrads,
) -> Result<()> {
    check_targets(rec, targets)?;
    let hd = m.dims.hidden_dim;
    let text_dim = m.dims.text_dim(m.arch);
    let d = m.direction(rec.direction);
    let CaptionModel {
        fwd,
        bwd,
        softmax_w: gsw,
        softmax_b: gsb,
        ..
    } = grads;
    let gd = match rec.direction {
        Direction::Forward => fwd,
        Direction::Backward => bwd,
    };

    let n = rec.len();
    let mut dh1_ext = vec![Vector::zeros(hd); n];
    let mut dhm_next = Vector::zeros(hd);
    let mut dcm_next = Vector::zeros(hd);

    for t in (0..n).rev() {
        let m_tr = &rec.m_traces[t];
        let mut dlogits = rec.probs[t].clone();
        dlogits[targets[t]] -= 1.0;
        gsw.add_outer(&dlogits, &m_tr.h);
        gsb.add_assign(&dlogits);

        let mut dhm = matvec_t(&m.softmax_w, &dlogits)?;
        dhm.add_assign(&dhm_next);
        let step = cell_backward(&d.m_lstm, m_tr, &dhm, &dcm_next, &mut gd.m_lstm)?;
        dhm_next = step.dh_prev;
        dcm_next = step.dc_prev;
        let dtext = &step.dx[..text_dim];
        let h1 = &rec.t_traces[t].h;

        dh1_ext[t] = match (&d.transition, &mut gd.transition) {
            (None, _) => dtext.into(),
            (Some(Transition::Stacked { u, v }), Some(Transition::Stacked { u: gu, v: gv })) => {
                gu.add_outer(dtext, h1);
                gv.add_outer(dtext, &m_tr.h_prev);
                dhm_next.add_assign(&matvec_t(v, dtext)?);
                matvec_t(u, dtext)?
            }
            (
                Some(Transition::Shortcut { u, v, w }),
                Some(Transition::Shortcut {
                    u: gu,
                    v: gv,
                    w: gw,
                }),
            ) => {
                let acts = rec
                    .transition_activations
                    .as_ref()
                    .ok_or_else(|| Error::shape("record lacks transition activations"))?;
                let r = &acts[t];
                let w_out = w.rows();
                let dr: Vector = dtext
                    .iter()
                    .zip(r.iter())
                    .map(|(&g, &a)| if a > 0.0 { g } else { 0.0 })
                    .collect();
                let (d_direct, d_deep) = dr.split_at(w_out);
                let hidden = matvec(u, h1)?;
                gw.add_outer(d_direct, h1);
                gv.add_outer(d_deep, &hidden);
                let d_hidden = matvec_t(v, d_deep)?;
                gu.add_outer(&d_hidden, h1);
                let mut dh1 = matvec_t(w, d_direct)?;
                dh1.add_assign(&matvec_t(u, &d_hidden)?);
                dh1
            }
            _ => return Err(Error::shape("gradient buffer architecture mismatch")),
        };
    }

    let mut dh_next = Vector::zeros(hd);
    let mut dc_next = Vector::zeros(hd);
    for t in (0..n).rev() {
        let mut dh = std::mem::take(&mut dh1_ext[t]);
        dh.add_assign(&dh_next);
        let step = cell_backward(&d.t_lstm, &rec.t_traces[t], &dh, &dc_next, &mut gd.t_lstm)?;
        gd.embedding.add_to_column(rec.inputs[t], &step.dx);
        dh_next = step.dh_prev;
        dc_next = step.dc_prev;
    }
    Ok(())
}
