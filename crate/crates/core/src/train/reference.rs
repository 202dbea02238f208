//! Straight-line double-double evaluation of the joint loss, used as the
//! numeric side of the gradient check. It shares no code with the `f64`
//! model path beyond the parameter block order.

use crate::data::CaptionedExample;
use crate::dd::Dd;
use crate::model::{teacher_forcing, ArchitectureKind, CaptionModel, Direction};

pub(crate) struct ReferenceModel {
    arch: ArchitectureKind,
    vocab: usize,
    embed: usize,
    hidden: usize,
    feature: usize,
    u_out: usize,
    v_out: usize,
    w_out: usize,
    /// Same order as `CaptionModel::blocks`.
    pub(crate) blocks: Vec<Vec<Dd>>,
}

struct Lstm<'a> {
    wx: &'a [Dd],
    wh: &'a [Dd],
    b: &'a [Dd],
    input: usize,
}

impl ReferenceModel {
    pub(crate) fn new(m: &CaptionModel) -> Self {
        ReferenceModel {
            arch: m.arch,
            vocab: m.dims.vocab_size,
            embed: m.dims.embed_dim,
            hidden: m.dims.hidden_dim,
            feature: m.dims.feature_dim,
            u_out: m.dims.transition.u_out,
            v_out: m.dims.transition.v_out,
            w_out: m.dims.transition.w_out,
            blocks: m
                .blocks()
                .iter()
                .map(|b| b.data.iter().map(|&x| Dd::new(x)).collect())
                .collect(),
        }
    }

    fn blocks_per_direction(&self) -> usize {
        match self.arch {
            ArchitectureKind::BiLstm => 7,
            ArchitectureKind::BiSLstm => 9,
            ArchitectureKind::BiFLstm => 10,
        }
    }

    /// `y = M·x` for a row-major `rows × x.len()` block.
    fn mv(m: &[Dd], x: &[Dd], rows: usize) -> Vec<Dd> {
        let cols = x.len();
        (0..rows)
            .map(|r| {
                let mut acc = Dd::ZERO;
                for c in 0..cols {
                    acc += m[r * cols + c] * x[c];
                }
                acc
            })
            .collect()
    }

    fn lstm_step(&self, p: &Lstm<'_>, x: &[Dd], h: &[Dd], c: &[Dd]) -> (Vec<Dd>, Vec<Dd>) {
        let hd = self.hidden;
        debug_assert_eq!(x.len(), p.input);
        let zx = Self::mv(p.wx, x, 4 * hd);
        let zh = Self::mv(p.wh, h, 4 * hd);
        let z: Vec<Dd> = (0..4 * hd).map(|k| zx[k] + zh[k] + p.b[k]).collect();
        let mut h_new = Vec::with_capacity(hd);
        let mut c_new = Vec::with_capacity(hd);
        for k in 0..hd {
            let i = z[k].sigmoid();
            let f = z[hd + k].sigmoid();
            let o = z[2 * hd + k].sigmoid();
            let g = z[3 * hd + k].tanh();
            let ck = f * c[k] + i * g;
            h_new.push(o * ck.tanh());
            c_new.push(ck);
        }
        (h_new, c_new)
    }

    /// Whether block `b` feeds the forward and the backward loss.
    pub(crate) fn block_directions(&self, b: usize) -> [bool; 2] {
        let n = self.blocks_per_direction();
        if b < n {
            [true, false]
        } else if b < 2 * n {
            [false, true]
        } else {
            [true, true]
        }
    }

    /// One direction's summed loss and the sign pattern of every relu input.
    pub(crate) fn direction_loss(&self, dir: Direction, ex: &CaptionedExample) -> (Dd, Vec<bool>) {
        let feature: Vec<Dd> = ex.feature.iter().map(|&x| Dd::new(x)).collect();
        let mut signs = Vec::new();
        let loss = self.direction_loss_inner(dir, &ex.tokens, &feature, &mut signs);
        (loss, signs)
    }

    fn direction_loss_inner(
        &self,
        dir: Direction,
        caption: &[usize],
        feature: &[Dd],
        relu_signs: &mut Vec<bool>,
    ) -> Dd {
        let base = match dir {
            Direction::Forward => 0,
            Direction::Backward => self.blocks_per_direction(),
        };
        let blk = |i: usize| self.blocks[base + i].as_slice();
        let text_dim = match self.arch {
            ArchitectureKind::BiFLstm => self.w_out + self.v_out,
            _ => self.hidden,
        };
        let t_lstm = Lstm {
            wx: blk(1),
            wh: blk(2),
            b: blk(3),
            input: self.embed,
        };
        let m_lstm = Lstm {
            wx: blk(4),
            wh: blk(5),
            b: blk(6),
            input: text_dim + self.feature,
        };
        let n = 2 * self.blocks_per_direction();
        let (softmax_w, softmax_b) = (&self.blocks[n], &self.blocks[n + 1]);

        let (inputs, targets) = teacher_forcing(caption, dir);
        let zeros = vec![Dd::ZERO; self.hidden];
        let (mut h1, mut c1) = (zeros.clone(), zeros.clone());
        let (mut hm, mut cm) = (zeros.clone(), zeros);
        let mut loss = Dd::ZERO;
        for (&tok, &target) in inputs.iter().zip(&targets) {
            let x: Vec<Dd> = (0..self.embed).map(|r| blk(0)[r * self.vocab + tok]).collect();
            (h1, c1) = self.lstm_step(&t_lstm, &x, &h1, &c1);
            let mut m_in = match self.arch {
                ArchitectureKind::BiLstm => h1.clone(),
                ArchitectureKind::BiSLstm => {
                    let a = Self::mv(blk(7), &h1, self.hidden);
                    let b = Self::mv(blk(8), &hm, self.hidden);
                    a.iter().zip(&b).map(|(&p, &q)| p + q).collect()
                }
                ArchitectureKind::BiFLstm => {
                    let hidden = Self::mv(blk(7), &h1, self.u_out);
                    let deep = Self::mv(blk(8), &hidden, self.v_out);
                    let direct = Self::mv(blk(9), &h1, self.w_out);
                    direct
                        .into_iter()
                        .chain(deep)
                        .map(|v| {
                            relu_signs.push(v.is_positive());
                            v.max(Dd::ZERO)
                        })
                        .collect()
                }
            };
            m_in.extend_from_slice(feature);
            (hm, cm) = self.lstm_step(&m_lstm, &m_in, &hm, &cm);

            let logits: Vec<Dd> = Self::mv(softmax_w, &hm, self.vocab)
                .into_iter()
                .zip(softmax_b.iter())
                .map(|(a, &b)| a + b)
                .collect();
            let max = logits.iter().copied().fold(logits[0], Dd::max);
            let mut sum = Dd::ZERO;
            for &z in &logits {
                sum += (z - max).exp();
            }
            loss += max + sum.ln() - logits[target];
        }
        loss
    }

    #[cfg(test)]
    fn joint_loss(&self, ex: &CaptionedExample) -> Dd {
        self.direction_loss(Direction::Forward, ex).0 + self.direction_loss(Direction::Backward, ex).0
    }
}
