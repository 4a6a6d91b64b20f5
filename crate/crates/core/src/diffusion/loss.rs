//! Training objective: variational bound plus the masked reconstruction terms.

use ndarray::Array2;

use super::schedule::NoiseSchedule;
use super::tape::{Tape, Var};
use super::{LossWeights, CHANNELS, SEQ_LEN};
use crate::scalar::Real;

/// Targets and noise levels of one batch, in normalized units.
#[derive(Clone, Debug, PartialEq)]
pub struct LossBatch<T> {
    /// Clean samples, `(B * 80) x 6`.
    pub x0: Array2<T>,
    /// Noised samples fed to the network.
    pub x_t: Array2<T>,
    pub steps: Vec<usize>,
    pub l_valid: Vec<usize>,
}

/// Tape nodes of every loss term; `total` is their weighted sum.
#[derive(Clone, Copy, Debug)]
pub struct LossTerms {
    pub vlb: Var,
    pub valid: Var,
    pub velocity: Var,
    pub padding: Var,
    pub start: Var,
    pub end: Var,
    pub total: Var,
}

impl LossTerms {
    pub fn values<T: Real>(&self, tape: &Tape<T>) -> [T; 7] {
        [self.vlb, self.valid, self.velocity, self.padding, self.start, self.end, self.total].map(|v| tape.scalar(v))
    }
}

/// Row mask over `(B * 80) x cols`, 1 where `keep(row, l_valid)`.
fn row_mask<T: Real>(l_valid: &[usize], cols: usize, keep: impl Fn(usize, usize) -> bool) -> (Array2<T>, usize) {
    let mut m = Array2::zeros((l_valid.len() * SEQ_LEN, cols));
    let mut count = 0;
    for (b, &l) in l_valid.iter().enumerate() {
        for i in 0..SEQ_LEN {
            if keep(i, l) {
                m.row_mut(b * SEQ_LEN + i).fill(T::one());
                count += cols;
            }
        }
    }
    (m, count)
}

fn masked_mean<T: Real>(tape: &mut Tape<T>, x: Var, mask: (Array2<T>, usize)) -> Var {
    let (m, count) = mask;
    let m = tape.constant(m);
    let masked = tape.mul(x, m);
    let s = tape.sum_all(masked);
    tape.scale(s, T::one() / T::of_usize(count.max(1)))
}

/// Per-row constant from a per-sample value.
fn per_row<T: Real>(steps: &[usize], f: impl Fn(usize) -> T) -> Array2<T> {
    let mut m = Array2::zeros((steps.len() * SEQ_LEN, CHANNELS));
    for (b, &t) in steps.iter().enumerate() {
        let v = f(t);
        m.slice_mut(ndarray::s![b * SEQ_LEN..(b + 1) * SEQ_LEN, ..]).fill(v);
    }
    m
}

/// Builds every loss term on the tape from the network output `out`
/// (`(B * 80) x 12`).
///
/// The reconstruction terms are means over their masks: all channels of
/// valid rows, all channels of padded rows, first and second differences of
/// the position channels inside the valid range, and the position channels
/// of the first and last valid rows. The bound term is the mean over every
/// element of the Gaussian KL between the true and predicted reverse steps,
/// or the Gaussian negative log likelihood of `x0` at `t = 0`. With
/// `learn_variance` off it is the constant 0. With
/// `weights.detach_vlb_mean` the bound sees the predicted mean as a constant.
pub fn loss_terms<T: Real>(
    tape: &mut Tape<T>,
    out: Var,
    batch: &LossBatch<T>,
    schedule: &NoiseSchedule<T>,
    weights: &LossWeights<T>,
    learn_variance: bool,
) -> LossTerms {
    let l = &batch.l_valid;
    let pred = tape.slice_cols(out, 0, CHANNELS);
    let x0 = tape.constant(batch.x0.clone());
    let err = tape.sub(pred, x0);
    let err2 = tape.square(err);

    let valid = masked_mean(tape, err2, row_mask(l, CHANNELS, |i, l| i < l));
    let padding = masked_mean(tape, err2, row_mask(l, CHANNELS, |i, l| i >= l));

    let pos = tape.slice_cols(err, 0, 3);
    let pos2 = tape.square(pos);
    let start = masked_mean(tape, pos2, row_mask(l, 3, |i, _| i == 0));
    let end = masked_mean(tape, pos2, row_mask(l, 3, |i, l| i + 1 == l));

    let next = tape.shift(pos, SEQ_LEN, 1);
    let d1 = tape.sub(next, pos);
    let next = tape.shift(d1, SEQ_LEN, 1);
    let d2 = tape.sub(next, d1);
    let d1 = tape.square(d1);
    let d2 = tape.square(d2);
    let vel = masked_mean(tape, d1, row_mask(l, 3, |i, l| i + 1 < l));
    let acc = masked_mean(tape, d2, row_mask(l, 3, |i, l| i + 2 < l));
    let velocity = tape.add(vel, acc);

    let vlb = if learn_variance {
        let mean_source = if weights.detach_vlb_mean {
            let frozen = tape.value(pred).clone();
            tape.constant(frozen)
        } else {
            pred
        };
        vlb_term(tape, out, mean_source, batch, schedule)
    } else {
        tape.constant(Array2::zeros((1, 1)))
    };

    let mut total = tape.scale(vlb, weights.vlb);
    for (term, w) in [
        (valid, weights.valid),
        (velocity, weights.velocity),
        (padding, weights.padding),
        (start, weights.start),
        (end, weights.end),
    ] {
        let scaled = tape.scale(term, w);
        total = tape.add(total, scaled);
    }
    LossTerms { vlb, valid, velocity, padding, start, end, total }
}

fn vlb_term<T: Real>(
    tape: &mut Tape<T>,
    out: Var,
    pred: Var,
    batch: &LossBatch<T>,
    s: &NoiseSchedule<T>,
) -> Var {
    let steps = &batch.steps;
    let half = T::of(0.5);
    let v = tape.slice_cols(out, CHANNELS, 2 * CHANNELS);

    // log variance = frac * log(beta) + (1 - frac) * log(posterior var), frac = (v + 1) / 2
    let lq = per_row(steps, |t| s.posterior_log_variance[t]);
    let slope = per_row(steps, |t| (s.betas[t].ln() - s.posterior_log_variance[t]) * half);
    let offset = per_row(steps, |t| (s.betas[t].ln() + s.posterior_log_variance[t]) * half);
    let slope = tape.constant(slope);
    let offset = tape.constant(offset);
    let lv = tape.mul(v, slope);
    let lv = tape.add(lv, offset);

    // Predicted reverse-step mean.
    let c0 = per_row(steps, |t| s.posterior_mean_x0[t]);
    let ct = per_row(steps, |t| s.posterior_mean_xt[t]);
    let c0v = tape.constant(c0.clone());
    let mean = tape.mul(pred, c0v);
    let from_xt = tape.constant(&ct * &batch.x_t);
    let mean = tape.add(mean, from_xt);

    // KL target is the true posterior mean; at t = 0 it is x0 itself.
    let is_kl = per_row(steps, |t| if t > 0 { T::one() } else { T::zero() });
    let true_mean = &c0 * &batch.x0 + &ct * &batch.x_t;
    let target = &is_kl * &true_mean + &(is_kl.mapv(|k| T::one() - k)) * &batch.x0;

    let target = tape.constant(target);
    let diff = tape.sub(target, mean);
    let diff2 = tape.square(diff);
    let neg_lv = tape.scale(lv, -T::one());
    let inv_var = tape.exp(neg_lv);
    let quad = tape.mul(diff2, inv_var);

    let lq_c = tape.constant(lq.clone());
    let ratio = tape.sub(lq_c, lv);
    let ratio = tape.exp(ratio);
    let kl_mask = tape.constant(is_kl.clone());
    let ratio = tape.mul(ratio, kl_mask);

    // KL: -1 - lq + lv + exp(lq - lv) + quad; NLL: ln(2 pi) + lv + quad.
    let ln_2pi = (T::PI() + T::PI()).ln();
    let consts = ndarray::Zip::from(&is_kl)
        .and(&lq)
        .map_collect(|&k, &lq| if k > T::zero() { -T::one() - lq } else { ln_2pi });
    let consts = tape.constant(consts);
    let sum = tape.add(lv, quad);
    let sum = tape.add(sum, ratio);
    let sum = tape.add(sum, consts);
    let total = tape.sum_all(sum);
    let n = batch.x0.len();
    tape.scale(total, half / T::of_usize(n))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn batch(l_valid: Vec<usize>, steps: Vec<usize>) -> LossBatch<f64> {
        let n = l_valid.len() * SEQ_LEN;
        let x0 = Array2::from_shape_fn((n, CHANNELS), |(r, c)| ((r * 7 + c * 3) % 11) as f64 * 0.1 - 0.5);
        let x_t = Array2::from_shape_fn((n, CHANNELS), |(r, c)| ((r * 5 + c) % 13) as f64 * 0.07 - 0.4);
        LossBatch { x0, x_t, steps, l_valid }
    }

    /// Output whose prediction equals `x0` and whose variance channels select
    /// the posterior variance exactly (`v = -1`).
    fn perfect(b: &LossBatch<f64>) -> Array2<f64> {
        let mut out = Array2::from_elem((b.x0.nrows(), 2 * CHANNELS), -1.0);
        out.slice_mut(ndarray::s![.., 0..CHANNELS]).assign(&b.x0);
        out
    }

    #[test]
    fn perfect_prediction_zeroes_reconstruction_and_kl() {
        let s = NoiseSchedule::<f64>::cosine(100);
        let b = batch(vec![30, 80, 1], vec![10, 50, 99]);
        let mut tape = Tape::new();
        let out = tape.param(perfect(&b));
        let terms = loss_terms(&mut tape, out, &b, &s, &LossWeights::default(), true);
        let [vlb, valid, vel, pad, start, end, _] = terms.values(&tape);
        assert_eq!([valid, vel, pad, start, end], [0.0; 5]);
        assert!(vlb.abs() < 1e-12, "{vlb}");
    }

    #[test]
    fn padded_only_error_touches_only_padding_term() {
        let s = NoiseSchedule::<f64>::cosine(100);
        let b = batch(vec![30, 12], vec![10, 20]);
        let mut out = perfect(&b);
        for bi in 0..2 {
            for i in b.l_valid[bi]..SEQ_LEN {
                out[[bi * SEQ_LEN + i, 1]] += 0.3;
            }
        }
        let mut tape = Tape::new();
        let o = tape.param(out);
        let terms = loss_terms(&mut tape, o, &b, &s, &LossWeights::default(), true);
        let [_, valid, vel, pad, start, end, _] = terms.values(&tape);
        assert_eq!([valid, vel, start, end], [0.0; 4]);
        assert!(pad > 0.0);
    }

    #[test]
    fn gradients_respect_masks_exactly() {
        let s = NoiseSchedule::<f64>::cosine(100);
        let b = batch(vec![30, 57], vec![3, 0]);
        let raw = perfect(&b) + 0.1;
        let check = |pick: fn(&LossTerms) -> Var, on_pad: bool| {
            let mut tape = Tape::new();
            let o = tape.param(raw.clone());
            let terms = loss_terms(&mut tape, o, &b, &s, &LossWeights::default(), true);
            let g = tape.backward(pick(&terms));
            let g = g.get(o).unwrap();
            for (bi, &l) in b.l_valid.iter().enumerate() {
                for i in 0..SEQ_LEN {
                    if (i >= l) == on_pad {
                        for c in 0..CHANNELS {
                            assert_eq!(g[[bi * SEQ_LEN + i, c]], 0.0);
                        }
                    }
                }
            }
        };
        check(|t| t.valid, true);
        check(|t| t.start, true);
        check(|t| t.end, true);
        check(|t| t.velocity, true);
        check(|t| t.padding, false);
    }

    #[test]
    fn fixed_variance_drops_bound() {
        let s = NoiseSchedule::<f64>::cosine(100);
        let b = batch(vec![20], vec![40]);
        let mut tape = Tape::new();
        let o = tape.param(perfect(&b) * 1.5);
        let terms = loss_terms(&mut tape, o, &b, &s, &LossWeights::default(), false);
        assert_eq!(tape.scalar(terms.vlb), 0.0);
    }

    #[test]
    fn reconstruction_terms_match_direct_sums() {
        let s = NoiseSchedule::<f64>::cosine(100);
        let b = batch(vec![6], vec![5]);
        let mut out = perfect(&b);
        out[[0, 0]] += 0.2; // start row
        out[[5, 1]] -= 0.1; // end row
        out[[7, 3]] += 0.4; // padding, velocity channel
        let mut tape = Tape::new();
        let o = tape.param(out);
        let t = loss_terms(&mut tape, o, &b, &s, &LossWeights::default(), false);
        let [_, valid, vel, pad, start, end, total] = t.values(&tape);
        assert!((valid - (0.04 + 0.01) / 36.0).abs() < 1e-15);
        assert!((pad - 0.16 / (74.0 * 6.0)).abs() < 1e-15);
        assert!((start - 0.04 / 3.0).abs() < 1e-15);
        assert!((end - 0.01 / 3.0).abs() < 1e-15);
        // Position errors e0 = (0.2, 0, 0), e5 = (0, -0.1, 0).
        let d1 = (0.04 + 0.01) / 15.0;
        let d2 = (0.04 + 0.01) / 12.0;
        assert!((vel - (d1 + d2)).abs() < 1e-15, "{vel} vs {}", d1 + d2);
        let expected = valid + 0.5 * vel + 0.2 * pad + start + end;
        assert!((total - expected).abs() < 1e-15);
    }
}
