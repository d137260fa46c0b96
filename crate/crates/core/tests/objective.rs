use approx::assert_abs_diff_eq;
use cntm_core::gradcheck::grad_check;
use cntm_core::numerics::{Graph, Tensor, Var};
use cntm_core::objective::{
    attention_loss, ctc_loss, ctc_min_frames, ctc_nll_from_log_probs, joint_loss, joint_loss_value, CtcTap,
    ObjectiveConfig,
};
use cntm_core::rng::substream;
use cntm_core::{Error, Result};
use proptest::prelude::*;
use rand::Rng;

const BLANK: usize = 0;

fn ctc(logits: &[f64], frames: usize, classes: usize, y: &[usize]) -> Result<f64> {
    let mut g = Graph::detached();
    let x = g.constant(Tensor::matrix(frames, classes, logits.to_vec())?);
    let l = ctc_loss(&mut g, x, y, BLANK)?;
    Ok(g.value(l).item())
}

fn attention(logits: &[f64], vocab: usize, y: &[usize], smoothing: f64) -> f64 {
    let mut g = Graph::detached();
    let x = g.constant(Tensor::matrix(y.len(), vocab, logits.to_vec()).unwrap());
    let l = attention_loss(&mut g, x, y, smoothing).unwrap();
    g.value(l).item()
}

/// Remove repeats, then blanks.
fn collapse(path: &[usize]) -> Vec<usize> {
    let mut out = Vec::new();
    let mut prev = None;
    for &p in path {
        if Some(p) != prev && p != BLANK {
            out.push(p);
        }
        prev = Some(p);
    }
    out
}

/// `−ln Σ` over every length-T path that collapses to `y`.
fn brute_force(probs: &[Vec<f64>], y: &[usize]) -> f64 {
    let (frames, classes) = (probs.len(), probs[0].len());
    let mut total = 0.0;
    for code in 0..classes.pow(frames as u32) {
        let path: Vec<usize> = (0..frames).map(|t| code / classes.pow(t as u32) % classes).collect();
        if collapse(&path) == y {
            total += path.iter().enumerate().map(|(t, &c)| probs[t][c]).product::<f64>();
        }
    }
    -total.ln()
}

fn softmax_rows(logits: &[f64], classes: usize) -> Vec<Vec<f64>> {
    logits
        .chunks(classes)
        .map(|row| {
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = row.iter().map(|x| (x - m).exp()).collect();
            let s: f64 = e.iter().sum();
            e.into_iter().map(|x| x / s).collect()
        })
        .collect()
}

/// Every label sequence over `1..classes` of length at most `max_len`.
fn all_targets(classes: usize, max_len: usize) -> Vec<Vec<usize>> {
    let mut out = vec![vec![]];
    let mut frontier = vec![vec![]];
    for _ in 0..max_len {
        let mut next = Vec::new();
        for y in &frontier {
            for c in 1..classes {
                let mut z: Vec<usize> = y.clone();
                z.push(c);
                next.push(z);
            }
        }
        out.extend(next.iter().cloned());
        frontier = next;
    }
    out
}

#[test]
fn ctc_examples() {
    assert_abs_diff_eq!(ctc(&[0.0, 0.0], 1, 2, &[1]).unwrap(), 2f64.ln(), epsilon = 1e-12);
    assert_abs_diff_eq!(ctc(&[0.0; 4], 2, 2, &[1]).unwrap(), -(0.75f64).ln(), epsilon = 1e-12);
    let logits = [0.3, -1.0, 0.5, 2.0, 0.1, -0.4, -0.2, 0.0, 1.5];
    let probs = softmax_rows(&logits, 3);
    let want: f64 = -probs.iter().map(|p| p[BLANK].ln()).sum::<f64>();
    assert_abs_diff_eq!(ctc(&logits, 3, 3, &[]).unwrap(), want, epsilon = 1e-12);
}

#[test]
fn ctc_rejects_short_inputs() {
    assert_eq!(ctc_min_frames(&[1, 1, 2]), 4);
    assert_eq!(ctc_min_frames(&[1, 2, 1]), 3);
    let err = ctc(&[0.0; 6], 2, 3, &[1, 1]).unwrap_err();
    assert!(matches!(err, Error::InfeasibleAlignment { frames: 2, required: 3 }));
    assert!(ctc(&[0.0; 9], 3, 3, &[1, 1]).is_ok());
    assert!(matches!(ctc(&[0.0; 6], 2, 3, &[0]), Err(Error::Shape(_))));
    assert!(matches!(ctc(&[0.0; 6], 2, 3, &[3]), Err(Error::Shape(_))));
}

#[test]
fn ctc_matches_exhaustive_enumeration() {
    let mut rng = substream(1, "ctc-oracle");
    let mut cases = 0;
    for classes in 2..=3 {
        for frames in 1..=4 {
            for y in all_targets(classes, 3) {
                let logits: Vec<f64> = (0..frames * classes).map(|_| rng.gen_range(-3.0..3.0)).collect();
                let want = brute_force(&softmax_rows(&logits, classes), &y);
                match ctc(&logits, frames, classes, &y) {
                    Ok(got) => {
                        assert!((got - want).abs() < 1e-8, "T={frames} y={y:?}: {got} vs {want}");
                        cases += 1;
                    }
                    Err(Error::InfeasibleAlignment { .. }) => assert!(want.is_infinite()),
                    Err(e) => panic!("{e}"),
                }
            }
        }
    }
    assert!(cases >= 40, "{cases}");
}

#[test]
fn ctc_from_log_probs_agrees() {
    let logits = [0.3, -1.0, 0.5, 2.0, 0.1, -0.4, -0.2, 0.0, 1.5, 0.7, 0.7, -2.0];
    let lp: Vec<f64> = softmax_rows(&logits, 3).concat().iter().map(|p| p.ln()).collect();
    let a = ctc_nll_from_log_probs(&lp, 4, 3, &[1, 2], BLANK).unwrap();
    let b = ctc(&logits, 4, 3, &[1, 2]).unwrap();
    assert_abs_diff_eq!(a, b, epsilon = 1e-12);
}

#[test]
fn ctc_gradients() {
    for (frames, y) in [(4usize, vec![1usize, 2]), (5, vec![1, 1]), (3, vec![]), (6, vec![2, 1, 2])] {
        let mut rng = substream(frames as u64, "ctc-grad");
        let theta = Tensor::matrix(frames, 3, (0..frames * 3).map(|_| rng.gen_range(-2.0..2.0)).collect()).unwrap();
        let f = |g: &mut Graph<'_, f64>, x: Var| ctc_loss(g, x, &y, BLANK);
        let r = grad_check("ctc", f, &theta, 1e-5, 1e-4).unwrap();
        assert!(r.passed, "{r:?}");
    }
}

#[test]
fn attention_examples() {
    let confident = [60.0, 0.0, 0.0, 0.0, 0.0, 60.0];
    assert!(attention(&confident, 3, &[0, 2], 0.0) < 1e-20);
    assert_abs_diff_eq!(attention(&[0.0; 10], 5, &[1, 4], 0.0), 5f64.ln(), epsilon = 1e-12);
    assert_abs_diff_eq!(attention(&[0.0; 10], 5, &[1, 4], 0.1), 5f64.ln(), epsilon = 1e-12);

    // V = 3, L = 1, target 1, smoothing 0.1: q = (0.1/3, 0.9 + 0.1/3, 0.1/3)
    let z = [1.0, 2.0, 0.5];
    let lse = (1f64.exp() + 2f64.exp() + 0.5f64.exp()).ln();
    let q = [0.1 / 3.0, 0.9 + 0.1 / 3.0, 0.1 / 3.0];
    let want: f64 = -(0..3).map(|v| q[v] * (z[v] - lse)).sum::<f64>();
    assert_abs_diff_eq!(attention(&z, 3, &[1], 0.1), want, epsilon = 1e-12);
}

#[test]
fn attention_rejects_bad_shapes() {
    let mut g = Graph::<f64>::detached();
    let x = g.constant(Tensor::zeros(&[2, 3]));
    assert!(attention_loss(&mut g, x, &[1], 0.0).is_err());
    assert!(attention_loss(&mut g, x, &[1, 3], 0.0).is_err());
}

#[test]
fn attention_gradients() {
    let mut rng = substream(4, "att-grad");
    let theta = Tensor::matrix(3, 5, (0..15).map(|_| rng.gen_range(-2.0..2.0)).collect()).unwrap();
    let f = |g: &mut Graph<'_, f64>, x: Var| attention_loss(g, x, &[4, 0, 2], 0.1);
    assert!(grad_check("attention", f, &theta, 1e-5, 1e-4).unwrap().passed);
}

#[test]
fn joint_examples() {
    assert_abs_diff_eq!(joint_loss_value(1.0, 2.0, 0.3), 1.3, epsilon = 1e-15);
    assert_eq!(joint_loss_value(1.5, 7.0, 0.0), 1.5);
    assert_eq!(joint_loss_value(1.5, 7.0, 1.0), 7.0);
    let mut g = Graph::<f64>::detached();
    let (a, c) = (g.scalar(1.0), g.scalar(2.0));
    let j = joint_loss(&mut g, a, c, 0.3).unwrap();
    assert_abs_diff_eq!(g.value(j).item(), 1.3, epsilon = 1e-15);
}

#[test]
fn objective_config() {
    let cfg = ObjectiveConfig::new(17);
    assert_eq!((cfg.ctc_weight, cfg.label_smoothing, cfg.blank), (0.3, 0.1, 17));
    assert_eq!(cfg.ctc_tap, CtcTap::Memory);
    assert!(cfg.validate().is_ok());
    assert!(ObjectiveConfig { ctc_weight: 1.2, ..cfg.clone() }.validate().is_err());
    assert!(ObjectiveConfig { label_smoothing: 1.0, ..cfg }.validate().is_err());
    assert_eq!("encoder".parse::<CtcTap>().unwrap(), CtcTap::Encoder);
}

proptest! {
    #[test]
    fn losses_are_nonnegative(
        logits in prop::collection::vec(-10.0f64..10.0, 12),
        y in prop::collection::vec(1usize..3, 0..3),
    ) {
        prop_assert!(ctc(&logits, 4, 3, &y).unwrap() >= 0.0);
        prop_assert!(attention(&logits, 3, &[0, 1, 2, 1], 0.0) >= 0.0);
    }

    #[test]
    fn joint_is_monotone(a in 0.0f64..10.0, c in 0.0f64..10.0, d in 0.0f64..5.0, lambda in 0.0f64..=1.0) {
        prop_assert!(joint_loss_value(a + d, c, lambda) >= joint_loss_value(a, c, lambda));
        prop_assert!(joint_loss_value(a, c + d, lambda) >= joint_loss_value(a, c, lambda));
    }
}
