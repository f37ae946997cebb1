//! Contrastive loss over (anchor, positive, hard negative) triplets with
//! in-batch negatives, and its analytic gradient through a linear head.
//!
//! For anchor `n` with positive `p` and negative pool `N_n`:
//!
//! ```text
//! l_n = -log( exp(cos(z_n, z_p)/T) / (exp(cos(z_n, z_p)/T) + sum_{z in N_n} exp(cos(z_n, z)/T)) )
//! ```
//!
//! and the batch loss is the mean of `l_n`. `N_n` holds the anchor's own hard
//! negative plus one vector from every other batch member.

use serde::{Deserialize, Serialize};

use super::head::ProjectionHead;
use crate::error::{Error, Result};
use crate::vector;

/// Which representation of the other batch members joins an anchor's negative pool.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum InBatchNegatives {
    #[default]
    Anchors,
    Positives,
    Negatives,
}

#[derive(Debug, Clone, Copy)]
pub struct Triplet<'a> {
    pub anchor: &'a [f64],
    pub positive: &'a [f64],
    pub negative: &'a [f64],
}

/// Gradient of the loss w.r.t. head parameters, same layout as the head.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadGradient {
    pub weights: Vec<f64>,
    pub bias: Option<Vec<f64>>,
}

impl HeadGradient {
    /// Flattened, weights first then bias.
    pub fn flat(&self) -> Vec<f64> {
        self.weights
            .iter()
            .chain(self.bias.iter().flatten())
            .copied()
            .collect()
    }
}

fn check_batch(batch: &[Triplet<'_>], temperature: f64) -> Result<usize> {
    if batch.is_empty() {
        return Err(Error::InvalidParams("empty batch".into()));
    }
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(Error::InvalidParams("temperature must be positive".into()));
    }
    let dim = batch[0].anchor.len();
    for t in batch {
        for v in [t.anchor, t.positive, t.negative] {
            if v.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: v.len(),
                });
            }
        }
    }
    Ok(dim)
}

/// Pool member of batch item `m` seen as a negative, as an index into the
/// stacked `[anchors; positives; negatives]` layout.
fn pool_index(pool: InBatchNegatives, b: usize, m: usize) -> usize {
    match pool {
        InBatchNegatives::Anchors => m,
        InBatchNegatives::Positives => b + m,
        InBatchNegatives::Negatives => 2 * b + m,
    }
}

/// Loss over stacked vectors `z = [anchors; positives; negatives]`, optionally
/// accumulating `dloss/dz` into `grad`.
fn loss_stacked(z: &[Vec<f64>], b: usize, temperature: f64, pool: InBatchNegatives, mut grad: Option<&mut [Vec<f64>]>) -> Result<f64> {
    let norms: Vec<f64> = z.iter().map(|v| vector::norm(v)).collect();
    if norms.contains(&0.0) {
        return Err(Error::ZeroVector("contrastive loss operand".into()));
    }
    let cos = |i: usize, j: usize| vector::dot(&z[i], &z[j]) / (norms[i] * norms[j]);
    let mut total = 0.0;
    let mut others: Vec<usize> = Vec::with_capacity(b + 1);
    let mut logits: Vec<f64> = Vec::with_capacity(b + 1);
    for n in 0..b {
        // others[0] is the positive
        others.clear();
        others.push(b + n);
        others.push(2 * b + n);
        others.extend((0..b).filter(|&m| m != n).map(|m| pool_index(pool, b, m)));
        logits.clear();
        logits.extend(others.iter().map(|&j| cos(n, j) / temperature));
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = logits.iter().map(|l| (l - max).exp()).sum();
        let lse = max + sum.ln();
        total += lse - logits[0];

        if let Some(g) = grad.as_deref_mut() {
            let scale = 1.0 / (b as f64 * temperature);
            for (slot, (&j, &l)) in others.iter().zip(&logits).enumerate() {
                let p = (l - max).exp() / sum;
                let dl = (p - if slot == 0 { 1.0 } else { 0.0 }) * scale;
                if dl == 0.0 {
                    continue;
                }
                // d cos(a, c) / d a = c / (|a||c|) - cos * a / |a|^2
                let c = cos(n, j);
                let (na, nc) = (norms[n], norms[j]);
                for d in 0..z[n].len() {
                    let (a, o) = (z[n][d], z[j][d]);
                    g[n][d] += dl * (o / (na * nc) - c * a / (na * na));
                    g[j][d] += dl * (a / (na * nc) - c * o / (nc * nc));
                }
            }
        }
    }
    Ok(total / b as f64)
}

fn stack(batch: &[Triplet<'_>]) -> Vec<Vec<f64>> {
    let mut z: Vec<Vec<f64>> = batch.iter().map(|t| t.anchor.to_vec()).collect();
    z.extend(batch.iter().map(|t| t.positive.to_vec()));
    z.extend(batch.iter().map(|t| t.negative.to_vec()));
    z
}

pub fn contrastive_loss(batch: &[Triplet<'_>], temperature: f64) -> Result<f64> {
    contrastive_loss_with(batch, temperature, InBatchNegatives::Anchors)
}

pub fn contrastive_loss_with(batch: &[Triplet<'_>], temperature: f64, pool: InBatchNegatives) -> Result<f64> {
    check_batch(batch, temperature)?;
    loss_stacked(&stack(batch), batch.len(), temperature, pool, None)
}

/// Loss of raw (pre-head) triplets after projecting them through `head`.
pub fn head_loss(batch: &[Triplet<'_>], head: &ProjectionHead, temperature: f64, pool: InBatchNegatives) -> Result<f64> {
    check_batch(batch, temperature)?;
    let z = stack(batch)
        .iter()
        .map(|x| head.apply(x))
        .collect::<Result<Vec<_>>>()?;
    loss_stacked(&z, batch.len(), temperature, pool, None)
}

/// Loss and its exact gradient w.r.t. the head's weights (and bias).
pub fn loss_and_gradient(
    batch: &[Triplet<'_>],
    head: &ProjectionHead,
    temperature: f64,
    pool: InBatchNegatives,
) -> Result<(f64, HeadGradient)> {
    check_batch(batch, temperature)?;
    let x = stack(batch);
    let z = x.iter().map(|v| head.apply(v)).collect::<Result<Vec<_>>>()?;
    let mut gz = vec![vec![0.0; head.d_out()]; z.len()];
    let loss = loss_stacked(&z, batch.len(), temperature, pool, Some(&mut gz))?;

    // z = W x + b  =>  dW = sum_v g_v x_v^T,  db = sum_v g_v
    let d_in = head.d_in();
    let mut weights = vec![0.0; head.d_out() * d_in];
    for (g, xv) in gz.iter().zip(&x) {
        for (o, &go) in g.iter().enumerate() {
            if go == 0.0 {
                continue;
            }
            let row = &mut weights[o * d_in..(o + 1) * d_in];
            for (w, xi) in row.iter_mut().zip(xv) {
                *w += go * xi;
            }
        }
    }
    let bias = head.bias().map(|_| {
        let mut db = vec![0.0; head.d_out()];
        for g in &gz {
            for (d, gi) in db.iter_mut().zip(g) {
                *d += gi;
            }
        }
        db
    });
    Ok((loss, HeadGradient { weights, bias }))
}

pub fn loss_gradient(batch: &[Triplet<'_>], head: &ProjectionHead, temperature: f64) -> Result<HeadGradient> {
    loss_and_gradient(batch, head, temperature, InBatchNegatives::Anchors).map(|(_, g)| g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn t<'a>(a: &'a [f64], p: &'a [f64], n: &'a [f64]) -> Triplet<'a> {
        Triplet {
            anchor: a,
            positive: p,
            negative: n,
        }
    }

    #[test]
    fn opposite_negative_fixture() {
        let l = contrastive_loss(&[t(&[1.0, 0.0], &[2.0, 0.0], &[-1.0, 0.0])], 1.0).unwrap();
        let want = -(1f64.exp() / (1f64.exp() + (-1f64).exp())).ln();
        assert!((l - want).abs() < 1e-15);
        assert!((l - 0.126928).abs() < 1e-6);
    }

    #[test]
    #[allow(clippy::approx_constant)] // the fixture is stated to six places
    fn equal_logits_fixture() {
        let l = contrastive_loss(&[t(&[1.0, 0.0], &[1.0, 1.0], &[1.0, -1.0])], 1.0).unwrap();
        assert!((l - 2f64.ln()).abs() < 1e-15);
        assert!((l - 0.693147).abs() < 1e-6);
    }

    #[test]
    fn errors() {
        assert!(matches!(
            contrastive_loss(&[t(&[0.0, 0.0], &[1.0, 0.0], &[0.0, 1.0])], 1.0),
            Err(Error::ZeroVector(_))
        ));
        assert!(matches!(
            contrastive_loss(&[t(&[1.0, 0.0], &[1.0], &[0.0, 1.0])], 1.0),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(contrastive_loss(&[], 1.0).is_err());
    }

    /// Literal evaluation of the loss formula, independent of `loss_stacked`.
    fn direct_loss(batch: &[(Vec<f64>, Vec<f64>, Vec<f64>)]) -> f64 {
        let cos = |a: &[f64], b: &[f64]| vector::cosine(a, b).unwrap();
        let mut acc = 0.0;
        for (n, (a, p, neg)) in batch.iter().enumerate() {
            let num = cos(a, p).exp();
            let mut den = num + cos(a, neg).exp();
            for (m, (other, _, _)) in batch.iter().enumerate() {
                if m != n {
                    den += cos(a, other).exp();
                }
            }
            acc += (num / den).ln();
        }
        -acc / batch.len() as f64
    }

    #[test]
    fn identity_head_matches_direct_evaluation_when_pos_equals_neg() {
        // each anchor sees its positive and negative at the same angle, so only
        // the in-batch anchors move the loss away from ln 2
        let batch = vec![
            (vec![1.0, 0.0, 0.0], vec![1.0, 1.0, 0.0], vec![1.0, -1.0, 0.0]),
            (vec![0.0, 1.0, 0.0], vec![0.0, 1.0, 1.0], vec![0.0, 1.0, -1.0]),
            (vec![0.0, 0.0, 1.0], vec![1.0, 0.0, 1.0], vec![-1.0, 0.0, 1.0]),
        ];
        let trips: Vec<_> = batch.iter().map(|(a, p, n)| t(a, p, n)).collect();
        let head = ProjectionHead::identity(3, false);
        let got = head_loss(&trips, &head, 1.0, InBatchNegatives::Anchors).unwrap();
        assert!((got - direct_loss(&batch)).abs() < 1e-14);
        // anchors are mutually orthogonal: each term is -log(e^c / (2 e^c + 2))
        let c = 1.0 / 2f64.sqrt();
        let want = -(c.exp() / (2.0 * c.exp() + 2.0)).ln();
        assert!((got - want).abs() < 1e-14);
    }

    #[test]
    fn temperature_one_is_literal_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut v = || (0..4).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<f64>>();
        let batch: Vec<_> = (0..4).map(|_| (v(), v(), v())).collect();
        let trips: Vec<_> = batch.iter().map(|(a, p, n)| t(a, p, n)).collect();
        assert!((contrastive_loss(&trips, 1.0).unwrap() - direct_loss(&batch)).abs() < 1e-14);
    }

    fn finite_difference(batch: &[Triplet<'_>], head: &ProjectionHead, pool: InBatchNegatives, h: f64) -> Vec<f64> {
        let mut out = Vec::with_capacity(head.num_params());
        for i in 0..head.num_params() {
            let eval = |delta: f64| {
                let mut hh = head.clone();
                let nw = hh.weights().len();
                if i < nw {
                    hh.weights_mut()[i] += delta;
                } else {
                    hh.bias_mut().unwrap()[i - nw] += delta;
                }
                head_loss(batch, &hh, 1.0, pool).unwrap()
            };
            out.push((eval(h) - eval(-h)) / (2.0 * h));
        }
        out
    }

    #[test]
    fn gradient_matches_finite_differences_for_every_pool() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let dim = 4;
        let raw: Vec<Vec<f64>> = (0..9)
            .map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let trips: Vec<_> = raw.chunks(3).map(|c| t(&c[0], &c[1], &c[2])).collect();
        let weights: Vec<f64> = (0..dim * dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let bias: Vec<f64> = (0..dim).map(|_| rng.random_range(-0.5..0.5)).collect();
        let head = ProjectionHead::new(dim, dim, weights, Some(bias)).unwrap();
        for pool in [InBatchNegatives::Anchors, InBatchNegatives::Positives, InBatchNegatives::Negatives] {
            let (_, g) = loss_and_gradient(&trips, &head, 1.0, pool).unwrap();
            let fd = finite_difference(&trips, &head, pool, 1e-5);
            for (a, n) in g.flat().iter().zip(&fd) {
                let rel = (a - n).abs() / a.abs().max(n.abs()).max(1e-6);
                assert!(rel <= 1e-4, "{pool:?}: analytic {a} vs numeric {n}");
            }
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn vecs(dim: usize, n: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
            proptest::collection::vec(
                proptest::collection::vec(-1.0f64..1.0, dim).prop_filter("non-zero", |v| vector::norm(v) > 1e-3),
                n,
            )
        }

        proptest! {
            #[test]
            fn loss_is_non_negative(
                (b, raw) in (1usize..5).prop_flat_map(|b| (Just(b), vecs(3, 3 * b))),
                temp in 0.1f64..2.0,
            ) {
                let trips: Vec<_> = raw.chunks(3).map(|c| t(&c[0], &c[1], &c[2])).collect();
                prop_assert_eq!(trips.len(), b);
                let l = contrastive_loss(&trips, temp).unwrap();
                prop_assert!(l >= 0.0);
            }
        }
    }
}
