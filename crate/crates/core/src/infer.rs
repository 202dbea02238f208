//! Caption generation, two-direction selection and gate traces.

use std::fmt::Write as _;

use crate::data::Vocabulary;
use crate::error::{Error, Result};
use crate::lstm::LstmStepTrace;
use crate::model::{CaptionModel, Direction, RecurrentState, BOUNDARY};
use crate::numcore::{argmax, log_softmax, softmax};

pub const DEFAULT_MAX_LEN: usize = 50;

/// A partial or complete decode in one direction. `tokens` are in
/// generation order and include the closing boundary token when emitted.
#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    pub tokens: Vec<usize>,
    pub logprob_sum: f64,
    pub per_step_logprobs: Vec<f64>,
    pub finished: bool,
}

impl Hypothesis {
    fn start() -> Self {
        Hypothesis {
            tokens: Vec::new(),
            logprob_sum: 0.0,
            per_step_logprobs: Vec::new(),
            finished: false,
        }
    }

    /// Generated words without the closing boundary token.
    pub fn words(&self) -> &[usize] {
        match self.tokens.split_last() {
            Some((&BOUNDARY, rest)) => rest,
            _ => &self.tokens,
        }
    }
}

fn check_decode_args(m: &CaptionModel, feature: &[f64], beam_k: usize, max_len: usize) -> Result<()> {
    if beam_k == 0 {
        return Err(Error::Config("beam size must be at least 1".into()));
    }
    if max_len == 0 {
        return Err(Error::Config("max_len must be at least 1".into()));
    }
    m.check_feature(feature)
}

struct Beam {
    hyp: Hypothesis,
    state: RecurrentState,
}

/// Beam search from the boundary token. Finished hypotheses keep their
/// slot in the beam; the search ends once every slot is finished. Ties in
/// score keep the earlier beam entry and then the lower token id, so
/// `beam_k = 1` is greedy argmax decoding.
pub fn decode_direction(
    m: &CaptionModel,
    dir: Direction,
    feature: &[f64],
    beam_k: usize,
    max_len: usize,
) -> Result<Hypothesis> {
    check_decode_args(m, feature, beam_k, max_len)?;
    let mut beam = vec![Beam {
        hyp: Hypothesis::start(),
        state: RecurrentState::zeros(m.dims.hidden_dim),
    }];

    while beam.iter().any(|b| !b.hyp.finished) {
        // (score, beam index, token or None for a carried finished entry)
        let mut candidates: Vec<(f64, usize, Option<usize>, f64)> = Vec::new();
        let mut next_states = Vec::with_capacity(beam.len());
        for (bi, b) in beam.iter().enumerate() {
            if b.hyp.finished {
                candidates.push((b.hyp.logprob_sum, bi, None, 0.0));
                next_states.push(None);
                continue;
            }
            let last = b.hyp.tokens.last().copied().unwrap_or(BOUNDARY);
            let out = m.step(dir, &b.state, last, feature)?;
            let lp = log_softmax(&out.logits)?;
            for (tok, &l) in lp.iter().enumerate() {
                candidates.push((b.hyp.logprob_sum + l, bi, Some(tok), l));
            }
            next_states.push(Some(out.next_state()));
        }
        candidates.sort_by(|a, b| b.0.total_cmp(&a.0));
        candidates.truncate(beam_k);

        beam = candidates
            .into_iter()
            .map(|(score, bi, tok, l)| {
                let parent = &beam[bi];
                match tok {
                    None => Beam {
                        hyp: parent.hyp.clone(),
                        state: parent.state.clone(),
                    },
                    Some(tok) => {
                        let mut hyp = parent.hyp.clone();
                        hyp.tokens.push(tok);
                        hyp.per_step_logprobs.push(l);
                        hyp.logprob_sum = score;
                        hyp.finished = tok == BOUNDARY || hyp.tokens.len() >= max_len;
                        Beam {
                            hyp,
                            state: next_states[bi].clone().expect("expanded entry has a state"),
                        }
                    }
                }
            })
            .collect();
    }
    Ok(beam.into_iter().next().expect("beam is never empty").hyp)
}

/// Result of choosing between the two directions' decodes.
#[derive(Debug, Clone, PartialEq)]
pub struct FinalCaption {
    /// Words in natural reading order, without boundary tokens.
    pub caption: Vec<usize>,
    pub chosen: Direction,
    pub logprob_fwd: f64,
    pub logprob_bwd: f64,
}

/// Picks the direction with the larger summed log-probability, forward on
/// ties. A backward winner is reversed into reading order.
pub fn select_final_caption(hf: &Hypothesis, hb: &Hypothesis) -> FinalCaption {
    let (chosen, caption) = if hb.logprob_sum > hf.logprob_sum {
        let mut words = hb.words().to_vec();
        words.reverse();
        (Direction::Backward, words)
    } else {
        (Direction::Forward, hf.words().to_vec())
    };
    FinalCaption {
        caption,
        chosen,
        logprob_fwd: hf.logprob_sum,
        logprob_bwd: hb.logprob_sum,
    }
}

/// Decodes both directions and selects the final caption.
pub fn caption_image(
    m: &CaptionModel,
    feature: &[f64],
    beam_k: usize,
    max_len: usize,
) -> Result<FinalCaption> {
    let hf = decode_direction(m, Direction::Forward, feature, beam_k, max_len)?;
    let hb = decode_direction(m, Direction::Backward, feature, beam_k, max_len)?;
    Ok(select_final_caption(&hf, &hb))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Layer {
    TLstm,
    MLstm,
}

impl Layer {
    pub fn name(self) -> &'static str {
        match self {
            Layer::TLstm => "t_lstm",
            Layer::MLstm => "m_lstm",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmittedWord {
    pub step: usize,
    pub token: usize,
    pub prob: f64,
}

#[derive(Debug, Clone)]
pub struct GateStep {
    pub t_lstm: LstmStepTrace,
    pub m_lstm: LstmStepTrace,
}

impl GateStep {
    pub fn layer(&self, layer: Layer) -> &LstmStepTrace {
        match layer {
            Layer::TLstm => &self.t_lstm,
            Layer::MLstm => &self.m_lstm,
        }
    }
}

/// Per-step gate activations of a greedy decode.
#[derive(Debug, Clone)]
pub struct GateTrace {
    pub direction: Direction,
    pub steps: Vec<GateStep>,
    pub emitted_words: Vec<EmittedWord>,
}

impl GateTrace {
    /// Rows `step,layer,direction,unit,i,f,o,g,c,h` with a header line.
    pub fn gates_csv(&self) -> String {
        let mut out = String::from("step,layer,direction,unit,i,f,o,g,c,h\n");
        for (step, s) in self.steps.iter().enumerate() {
            for layer in [Layer::TLstm, Layer::MLstm] {
                let tr = s.layer(layer);
                for u in 0..tr.h.len() {
                    let _ = writeln!(
                        out,
                        "{step},{},{},{u},{:e},{:e},{:e},{:e},{:e},{:e}",
                        layer.name(),
                        self.direction.name(),
                        tr.i[u],
                        tr.f[u],
                        tr.o[u],
                        tr.g[u],
                        tr.c[u],
                        tr.h[u]
                    );
                }
            }
        }
        out
    }

    /// Rows `step,token,vocab_index,prob` with a header line. Without a
    /// vocabulary the token column repeats the index.
    pub fn words_csv(&self, vocab: Option<&Vocabulary>) -> String {
        let mut out = String::from("step,token,vocab_index,prob\n");
        for w in &self.emitted_words {
            let token = vocab
                .and_then(|v| v.token(w.token))
                .map_or_else(|| w.token.to_string(), str::to_string);
            let _ = writeln!(out, "{},{token},{},{:e}", w.step, w.token, w.prob);
        }
        out
    }
}

/// Greedy decode in one direction, recording both LSTM layers at every step.
pub fn dump_gate_trace(
    m: &CaptionModel,
    feature: &[f64],
    dir: Direction,
    max_len: usize,
) -> Result<GateTrace> {
    check_decode_args(m, feature, 1, max_len)?;
    let mut trace = GateTrace {
        direction: dir,
        steps: Vec::new(),
        emitted_words: Vec::new(),
    };
    let mut state = RecurrentState::zeros(m.dims.hidden_dim);
    let mut last = BOUNDARY;
    for step in 0..max_len {
        let out = m.step(dir, &state, last, feature)?;
        let probs = softmax(&out.logits)?;
        let tok = argmax(&probs);
        state = out.next_state();
        trace.steps.push(GateStep {
            t_lstm: out.t_trace,
            m_lstm: out.m_trace,
        });
        trace.emitted_words.push(EmittedWord {
            step,
            token: tok,
            prob: probs[tok],
        });
        if tok == BOUNDARY {
            break;
        }
        last = tok;
    }
    Ok(trace)
}
