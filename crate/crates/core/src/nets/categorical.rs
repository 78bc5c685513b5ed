//! Independent categorical distribution per action coordinate.

use rand::Rng;

use crate::env::NUM_BINS;
use crate::scalar::Real;

/// Log-softmax of one coordinate's logits.
pub fn log_softmax<S: Real>(logits: &[S], out: &mut [S]) {
    let m = logits.iter().copied().fold(S::neg_infinity(), S::max);
    let z: S = logits.iter().map(|&l| (l - m).exp()).sum();
    let lz = z.ln() + m;
    for (o, &l) in out.iter_mut().zip(logits) {
        *o = l - lz;
    }
}

/// Samples one bin per coordinate. Returns the bins and the joint log-prob.
pub fn sample_action<S: Real, R: Rng + ?Sized>(logits: &[S], rng: &mut R) -> (Vec<usize>, f64) {
    assert_eq!(logits.len() % NUM_BINS, 0, "logits must be K x {NUM_BINS}");
    let mut bins = Vec::with_capacity(logits.len() / NUM_BINS);
    let mut total = 0.0;
    let mut lp = [0.0f64; NUM_BINS];
    for row in logits.chunks_exact(NUM_BINS) {
        let r64: Vec<f64> = row.iter().map(|v| v.as_f64()).collect();
        log_softmax(&r64, &mut lp);
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut chosen = NUM_BINS - 1;
        for (b, l) in lp.iter().enumerate() {
            acc += l.exp();
            if u < acc {
                chosen = b;
                break;
            }
        }
        bins.push(chosen);
        total += lp[chosen];
    }
    (bins, total)
}

/// Most likely bin per coordinate.
pub fn greedy_action<S: Real>(logits: &[S]) -> Vec<usize> {
    logits
        .chunks_exact(NUM_BINS)
        .map(|row| {
            let mut best = 0;
            for b in 1..NUM_BINS {
                if row[b] > row[best] {
                    best = b;
                }
            }
            best
        })
        .collect()
}

pub fn log_prob<S: Real>(logits: &[S], bins: &[usize]) -> S {
    let mut lp = [S::zero(); NUM_BINS];
    let mut total = S::zero();
    for (row, &b) in logits.chunks_exact(NUM_BINS).zip(bins) {
        log_softmax(row, &mut lp);
        total += lp[b];
    }
    total
}

pub fn entropy<S: Real>(logits: &[S]) -> S {
    let mut lp = [S::zero(); NUM_BINS];
    let mut total = S::zero();
    for row in logits.chunks_exact(NUM_BINS) {
        log_softmax(row, &mut lp);
        for &l in &lp {
            total -= l.exp() * l;
        }
    }
    total
}

/// Log-prob of `bins` and entropy, with their gradients with respect to the
/// logits written into `d_logp` and `d_ent`.
pub fn log_prob_entropy_grad<S: Real>(
    logits: &[S],
    bins: &[usize],
    d_logp: &mut [S],
    d_ent: &mut [S],
) -> (S, S) {
    let mut lp = [S::zero(); NUM_BINS];
    let mut logp = S::zero();
    let mut ent = S::zero();
    for (c, row) in logits.chunks_exact(NUM_BINS).enumerate() {
        log_softmax(row, &mut lp);
        let h: S = lp.iter().map(|&l| -l.exp() * l).sum();
        ent += h;
        logp += lp[bins[c]];
        for b in 0..NUM_BINS {
            let p = lp[b].exp();
            let i = c * NUM_BINS + b;
            d_logp[i] = if b == bins[c] { S::one() - p } else { -p };
            // dH/dl_b = -p_b (log p_b + H)
            d_ent[i] = -p * (lp[b] + h);
        }
    }
    (logp, ent)
}
