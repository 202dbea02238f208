use std::fmt::Write as _;

use super::joint_gradients;
use super::reference::ReferenceModel;
use crate::data::CaptionedExample;
use crate::dd::Dd;
use crate::error::{Error, Result};
use crate::model::{CaptionModel, Direction};

/// Denominator floor in `|a − n| / max(|a|, |n|, floor)`.
const REL_ERR_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WorstEntry {
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockCheck {
    pub name: String,
    pub checked: usize,
    /// Entries whose perturbation flipped a relu, so the central difference
    /// straddles a kink.
    pub skipped: usize,
    pub worst: Option<WorstEntry>,
}

impl BlockCheck {
    pub fn max_rel_err(&self) -> f64 {
        self.worst.map_or(0.0, |w| w.rel_err)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub epsilon: f64,
    pub tolerance: f64,
    pub blocks: Vec<BlockCheck>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.blocks.iter().all(|b| b.max_rel_err() < self.tolerance)
    }

    pub fn max_rel_err(&self) -> f64 {
        self.blocks.iter().map(BlockCheck::max_rel_err).fold(0.0, f64::max)
    }

    /// Block and entry with the largest relative error.
    pub fn worst(&self) -> Option<(&str, WorstEntry)> {
        self.blocks
            .iter()
            .filter_map(|b| b.worst.map(|w| (b.name.as_str(), w)))
            .max_by(|a, b| a.1.rel_err.total_cmp(&b.1.rel_err))
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "block,checked,skipped,max_rel_err,status");
        for b in &self.blocks {
            let status = if b.max_rel_err() < self.tolerance { "pass" } else { "FAIL" };
            let _ = writeln!(
                out,
                "{},{},{},{:.3e},{status}",
                b.name,
                b.checked,
                b.skipped,
                b.max_rel_err()
            );
        }
        if let Some((name, w)) = self.worst() {
            let _ = writeln!(
                out,
                "worst {name}[{}] analytic {:.12e} numeric {:.12e} rel_err {:.3e}",
                w.index, w.analytic, w.numeric, w.rel_err
            );
        }
        let _ = writeln!(
            out,
            "{} (tolerance {:e}, epsilon {:e})",
            if self.passed() { "PASS" } else { "FAIL" },
            self.tolerance,
            self.epsilon
        );
        out
    }
}

/// Compares the analytic joint-loss gradient against central differences
/// `(L(θ+ε) − L(θ−ε)) / 2ε` for every scalar parameter. The loss on the
/// numeric side is evaluated in double-double precision so that the
/// difference resolves gradients far below `f64` loss rounding. Entries
/// whose perturbation flips any relu input are skipped.
pub fn grad_check(
    m: &CaptionModel,
    ex: &CaptionedExample,
    epsilon: f64,
    tolerance: f64,
) -> Result<GradCheckReport> {
    if !(epsilon > 0.0 && epsilon <= 1e-3) {
        return Err(Error::Config(format!("epsilon must lie in (0, 1e-3], got {epsilon}")));
    }
    let (_, analytic) = joint_gradients(m, ex)?;
    let mut reference = ReferenceModel::new(m);
    let dirs = [Direction::Forward, Direction::Backward];
    let base = dirs.map(|d| reference.direction_loss(d, ex));
    let two_eps = Dd::new(2.0 * epsilon);

    // Joint loss at the current reference parameters, re-evaluating only the
    // directions that block `b` feeds. `None` when a relu input flipped sign.
    let perturbed_loss = |reference: &ReferenceModel, b: usize| -> Option<Dd> {
        let mut total = Dd::ZERO;
        for ((dir, feeds), (base_loss, base_signs)) in
            dirs.iter().zip(reference.block_directions(b)).zip(&base)
        {
            if feeds {
                let (loss, signs) = reference.direction_loss(*dir, ex);
                if &signs != base_signs {
                    return None;
                }
                total += loss;
            } else {
                total += *base_loss;
            }
        }
        Some(total)
    };

    let mut blocks = Vec::new();
    for (b, grad_block) in analytic.blocks().into_iter().enumerate() {
        let mut check = BlockCheck {
            name: grad_block.name,
            checked: 0,
            skipped: 0,
            worst: None,
        };
        for (idx, &a) in grad_block.data.iter().enumerate() {
            let orig = reference.blocks[b][idx];
            reference.blocks[b][idx] = orig + Dd::new(epsilon);
            let plus = perturbed_loss(&reference, b);
            reference.blocks[b][idx] = orig - Dd::new(epsilon);
            let minus = perturbed_loss(&reference, b);
            reference.blocks[b][idx] = orig;

            let (Some(plus), Some(minus)) = (plus, minus) else {
                check.skipped += 1;
                continue;
            };
            let numeric = ((plus - minus) / two_eps).to_f64();
            let rel_err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_ERR_FLOOR);
            check.checked += 1;
            if check.worst.is_none_or(|w| rel_err > w.rel_err) {
                check.worst = Some(WorstEntry {
                    index: idx,
                    analytic: a,
                    numeric,
                    rel_err,
                });
            }
        }
        blocks.push(check);
    }
    Ok(GradCheckReport {
        epsilon,
        tolerance,
        blocks,
    })
}
