mod common;

use bicap_core::dd::Dd;
use bicap_core::lstm::{cell_forward, sequence_backward, sequence_forward, LstmParams};
use bicap_core::numcore::Vector;
use bicap_core::Error;
use common::{max_abs_diff, random_lstm, rng, uniform_vec, Real, ScalarLstm};
use proptest::prelude::*;
use rand::Rng;

fn inputs(r: &mut rand_chacha::ChaCha8Rng, t: usize, d: usize) -> Vec<Vector> {
    (0..t).map(|_| uniform_vec(r, d, 1.0).into()).collect()
}

fn lift(v: &[f64]) -> Vec<Dd> {
    v.iter().map(|&x| Dd::new(x)).collect()
}

#[test]
fn matches_scalar_loop_seed_42() {
    let mut r = rng(42);
    let p = random_lstm(&mut r, 3, 4, 0.5);
    let xs = inputs(&mut r, 5, 3);
    let h0 = uniform_vec(&mut r, 4, 0.5);
    let c0 = uniform_vec(&mut r, 4, 0.5);
    let traces = sequence_forward(&p, &xs, &h0, &c0).unwrap();
    let oracle = ScalarLstm::<f64>::from_params(&p).run(
        &xs.iter().map(|x| x.to_vec()).collect::<Vec<_>>(),
        &h0,
        &c0,
    );
    assert!(max_abs_diff(&traces[4].h, &oracle[4].0) < 1e-12);
}

#[test]
fn matches_scalar_loop_on_random_instances() {
    let mut r = rng(7);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let (d, h, t) = (r.gen_range(1..=8), r.gen_range(1..=8), r.gen_range(1..=10));
        let p = random_lstm(&mut r, d, h, 1.0);
        let xs = inputs(&mut r, t, d);
        let h0 = uniform_vec(&mut r, h, 1.0);
        let c0 = uniform_vec(&mut r, h, 1.0);
        let traces = sequence_forward(&p, &xs, &h0, &c0).unwrap();
        let oracle = ScalarLstm::<f64>::from_params(&p).run(
            &xs.iter().map(|x| x.to_vec()).collect::<Vec<_>>(),
            &h0,
            &c0,
        );
        for (tr, (oh, oc)) in traces.iter().zip(&oracle) {
            worst = worst.max(max_abs_diff(&tr.h, oh)).max(max_abs_diff(&tr.c, oc));
        }
    }
    assert!(worst < 1e-12, "max abs diff {worst:e}");
}

#[test]
fn sequence_is_composed_of_cells() {
    let mut r = rng(3);
    let p = random_lstm(&mut r, 3, 2, 0.5);
    let xs = inputs(&mut r, 3, 3);
    let (h0, c0) = (vec![0.1, -0.2], vec![0.3, 0.0]);
    let seq = sequence_forward(&p, &xs, &h0, &c0).unwrap();
    let s0 = cell_forward(&p, &xs[0], &h0, &c0).unwrap();
    let s1 = cell_forward(&p, &xs[1], &s0.h, &s0.c).unwrap();
    let s2 = cell_forward(&p, &xs[2], &s1.h, &s1.c).unwrap();
    assert_eq!(seq, vec![s0.clone(), s1, s2]);
    assert_eq!(sequence_forward(&p, &xs[..1], &h0, &c0).unwrap(), vec![s0]);
}

/// `L = Σ_t a_t·h_t + e·h_T + b·c_T`, evaluated in double-double.
struct Probe {
    a: Vec<Vec<f64>>,
    e: Vec<f64>,
    b: Vec<f64>,
}

impl Probe {
    fn loss(&self, p: &ScalarLstm<Dd>, xs: &[Vec<Dd>], h0: &[Dd], c0: &[Dd]) -> Dd {
        let states = p.run(xs, h0, c0);
        let mut l = Dd::ZERO;
        for (t, (h, _)) in states.iter().enumerate() {
            for (k, &hk) in h.iter().enumerate() {
                l += Dd::new(self.a[t][k]) * hk;
            }
        }
        let (h, c) = states.last().unwrap();
        for k in 0..h.len() {
            l += Dd::new(self.e[k]) * h[k] + Dd::new(self.b[k]) * c[k];
        }
        l
    }
}

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-8)
}

/// Largest relative error between the analytic BPTT gradients and central
/// differences of the probe loss over every weight, bias, input and
/// initial state entry.
fn bptt_vs_finite_differences(seed: u64, d: usize, h: usize, t: usize) -> f64 {
    let mut r = rng(seed);
    let p = random_lstm(&mut r, d, h, 0.5);
    let xs = inputs(&mut r, t, d);
    let h0 = uniform_vec(&mut r, h, 0.5);
    let c0 = uniform_vec(&mut r, h, 0.5);
    let probe = Probe {
        a: (0..t).map(|_| uniform_vec(&mut r, h, 1.0)).collect(),
        e: uniform_vec(&mut r, h, 1.0),
        b: uniform_vec(&mut r, h, 1.0),
    };
    let traces = sequence_forward(&p, &xs, &h0, &c0).unwrap();
    let dh_seq: Vec<Vector> = probe.a.iter().map(|v| Vector::from(v.clone())).collect();
    let g = sequence_backward(&p, &traces, &dh_seq, &probe.e, &probe.b).unwrap();

    let eps = 1e-6;
    let base = ScalarLstm::<Dd>::from_params(&p);
    let xs_dd: Vec<Vec<Dd>> = xs.iter().map(|x| lift(x)).collect();
    let (h0_dd, c0_dd) = (lift(&h0), lift(&c0));
    let central = |plus: Dd, minus: Dd| ((plus - minus) / Dd::new(2.0 * eps)).to_f64();
    let mut worst: f64 = 0.0;

    // parameters
    for which in 0..3 {
        let n = [base.wx.len(), base.wh.len(), base.b.len()][which];
        let analytic: &[f64] = match which {
            0 => g.dwx.as_slice(),
            1 => g.dwh.as_slice(),
            _ => &g.db,
        };
        for idx in 0..n {
            let mut shifted = [base.clone(), base.clone()];
            for (s, sign) in shifted.iter_mut().zip([1.0, -1.0]) {
                let slot = match which {
                    0 => &mut s.wx[idx],
                    1 => &mut s.wh[idx],
                    _ => &mut s.b[idx],
                };
                *slot = *slot + Dd::new(sign * eps);
            }
            let num = central(
                probe.loss(&shifted[0], &xs_dd, &h0_dd, &c0_dd),
                probe.loss(&shifted[1], &xs_dd, &h0_dd, &c0_dd),
            );
            worst = worst.max(rel_err(analytic[idx], num));
        }
    }
    // inputs and initial state
    for step in 0..t {
        for j in 0..d {
            let mut pm = [xs_dd.clone(), xs_dd.clone()];
            pm[0][step][j] = pm[0][step][j] + Dd::new(eps);
            pm[1][step][j] = pm[1][step][j] - Dd::new(eps);
            let num = central(probe.loss(&base, &pm[0], &h0_dd, &c0_dd), probe.loss(&base, &pm[1], &h0_dd, &c0_dd));
            worst = worst.max(rel_err(g.dx_seq[step][j], num));
        }
    }
    for k in 0..h {
        for (state, analytic) in [(0, &g.dh0), (1, &g.dc0)] {
            let mut pm = [[h0_dd.clone(), c0_dd.clone()], [h0_dd.clone(), c0_dd.clone()]];
            pm[0][state][k] = pm[0][state][k] + Dd::new(eps);
            pm[1][state][k] = pm[1][state][k] - Dd::new(eps);
            let num = central(
                probe.loss(&base, &xs_dd, &pm[0][0], &pm[0][1]),
                probe.loss(&base, &xs_dd, &pm[1][0], &pm[1][1]),
            );
            worst = worst.max(rel_err(analytic[k], num));
        }
    }
    worst
}

#[test]
fn bptt_matches_finite_differences_t4_h6_d5() {
    let worst = bptt_vs_finite_differences(99, 5, 6, 4);
    assert!(worst < 1e-5, "worst relative error {worst:e}");
}

#[test]
fn bptt_matches_finite_differences_twenty_seeds() {
    for seed in 0..20 {
        let worst = bptt_vs_finite_differences(seed, 3, 4, 5);
        assert!(worst < 1e-5, "seed {seed}: worst relative error {worst:e}");
    }
}

#[test]
fn truncated_upstream_matches_shorter_sequence() {
    let mut r = rng(5);
    let p = random_lstm(&mut r, 3, 4, 0.5);
    let xs = inputs(&mut r, 6, 3);
    let (h0, c0) = (vec![0.0; 4], vec![0.0; 4]);
    let traces = sequence_forward(&p, &xs, &h0, &c0).unwrap();
    let k = 3;
    let mut dh_seq: Vec<Vector> = (0..6).map(|_| Vector::from(uniform_vec(&mut r, 4, 1.0))).collect();
    for dh in dh_seq.iter_mut().skip(k) {
        *dh = Vector::zeros(4);
    }
    let full = sequence_backward(&p, &traces, &dh_seq, &[0.0; 4], &[0.0; 4]).unwrap();
    let short = sequence_backward(&p, &traces[..k], &dh_seq[..k], &[0.0; 4], &[0.0; 4]).unwrap();
    assert!(max_abs_diff(full.dwx.as_slice(), short.dwx.as_slice()) < 1e-15);
    assert!(max_abs_diff(full.dwh.as_slice(), short.dwh.as_slice()) < 1e-15);
    assert!(max_abs_diff(&full.db, &short.db) < 1e-15);
}

#[test]
fn length_mismatch_is_shape_error() {
    let p = LstmParams::zeros(2, 2);
    let traces = sequence_forward(&p, &[Vector::zeros(2)], &[0.0; 2], &[0.0; 2]).unwrap();
    assert!(matches!(
        sequence_backward(&p, &traces, &[], &[0.0; 2], &[0.0; 2]),
        Err(Error::Shape(_))
    ));
}

proptest! {
    #[test]
    fn gates_stay_in_range_and_runs_repeat(seed in any::<u64>(), scale in 0.1f64..20.0) {
        let mut r = rng(seed);
        let p = random_lstm(&mut r, 3, 4, scale);
        let xs = inputs(&mut r, 4, 3);
        let h0 = uniform_vec(&mut r, 4, 1.0);
        let c0 = uniform_vec(&mut r, 4, 1.0);
        let a = sequence_forward(&p, &xs, &h0, &c0).unwrap();
        let b = sequence_forward(&p, &xs, &h0, &c0).unwrap();
        prop_assert_eq!(&a, &b);
        for tr in &a {
            prop_assert!(tr.i.iter().chain(tr.f.iter()).chain(tr.o.iter()).all(|&v| (0.0..=1.0).contains(&v)));
            prop_assert!(tr.g.iter().all(|&v| (-1.0..=1.0).contains(&v)));
        }
    }

    #[test]
    fn moderate_inputs_keep_gates_strictly_inside(seed in any::<u64>()) {
        let mut r = rng(seed);
        let p = random_lstm(&mut r, 3, 4, 1.0);
        let xs = inputs(&mut r, 4, 3);
        for tr in sequence_forward(&p, &xs, &[0.0; 4], &[0.0; 4]).unwrap() {
            prop_assert!(tr.i.iter().chain(tr.f.iter()).chain(tr.o.iter()).all(|&v| v > 0.0 && v < 1.0));
            prop_assert!(tr.g.iter().all(|&v| v > -1.0 && v < 1.0));
        }
    }
}

#[test]
fn scalar_oracle_is_generic_over_precision() {
    // the double-double instance of the oracle agrees with the f64 one
    let mut r = rng(11);
    let p = random_lstm(&mut r, 2, 3, 0.7);
    let x = uniform_vec(&mut r, 2, 1.0);
    let (hf, _) = ScalarLstm::<f64>::from_params(&p).step(&x, &[0.0; 3], &[0.0; 3]);
    let (hd, _) = ScalarLstm::<Dd>::from_params(&p).step(&lift(&x), &[Dd::ZERO; 3], &[Dd::ZERO; 3]);
    let hd: Vec<f64> = hd.iter().map(|v| v.lower()).collect();
    assert!(max_abs_diff(&hf, &hd) < 1e-15);
}
