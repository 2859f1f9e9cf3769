use super::{NetError, Real, Result, Tensor3};

pub const DEFAULT_TEMPERATURE: f64 = 0.5;

const NORM_FLOOR: f64 = 1e-12;

pub fn sigmoid<T: Real>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}

/// ln(1 + e^x) without overflow.
fn softplus<T: Real>(x: T) -> T {
    if x > T::zero() {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn check_targets<T: Real>(targets: &[T], len: usize) -> Result<()> {
    if targets.len() != len {
        return Err(NetError::ShapeMismatch(format!(
            "{len} predictions but {} targets",
            targets.len()
        )));
    }
    if let Some(t) = targets.iter().find(|&&t| t != T::zero() && t != T::one()) {
        return Err(NetError::DomainError(format!("target {t} is not binary")));
    }
    if len == 0 {
        return Err(NetError::ShapeMismatch("empty batch".into()));
    }
    Ok(())
}

/// Mean binary cross-entropy of probabilities.
pub fn bce_loss<T: Real>(probabilities: &[T], targets: &[T]) -> Result<T> {
    Ok(bce_loss_grad(probabilities, targets)?.0)
}

/// Mean binary cross-entropy of probabilities and its gradient.
pub fn bce_loss_grad<T: Real>(probabilities: &[T], targets: &[T]) -> Result<(T, Vec<T>)> {
    check_targets(targets, probabilities.len())?;
    if let Some(p) = probabilities
        .iter()
        .find(|&&p| !(p > T::zero() && p < T::one()))
    {
        return Err(NetError::DomainError(format!(
            "probability {p} outside (0, 1)"
        )));
    }
    let n = T::of(probabilities.len() as f64);
    let mut loss = T::zero();
    let mut grad = Vec::with_capacity(probabilities.len());
    for (&p, &t) in probabilities.iter().zip(targets) {
        loss -= t * p.ln() + (T::one() - t) * (T::one() - p).ln();
        grad.push((p - t) / (p * (T::one() - p)) / n);
    }
    Ok((loss / n, grad))
}

/// Mean binary cross-entropy of logits.
pub fn bce_logits_loss<T: Real>(logits: &[T], targets: &[T]) -> Result<T> {
    Ok(bce_logits_loss_grad(logits, targets)?.0)
}

/// Mean binary cross-entropy of logits and its gradient, stable for any
/// finite logit.
pub fn bce_logits_loss_grad<T: Real>(logits: &[T], targets: &[T]) -> Result<(T, Vec<T>)> {
    check_targets(targets, logits.len())?;
    let n = T::of(logits.len() as f64);
    let mut loss = T::zero();
    let mut grad = Vec::with_capacity(logits.len());
    for (&z, &t) in logits.iter().zip(targets) {
        // t*softplus(-z) + (1-t)*softplus(z)
        loss += t * softplus(-z) + (T::one() - t) * softplus(z);
        grad.push((sigmoid(z) - t) / n);
    }
    Ok((loss / n, grad))
}

/// NT-Xent over the 2N projections of N positive pairs.
pub fn ntxent_loss<T: Real>(view_i: &Tensor3<T>, view_j: &Tensor3<T>, temperature: T) -> Result<T> {
    Ok(ntxent_loss_grad(view_i, view_j, temperature)?.0)
}

/// NT-Xent and its gradients with respect to both views.
///
/// Row k of the stacked batch has its pair partner at k ± N as the positive
/// and every other row except itself as a negative.
pub fn ntxent_loss_grad<T: Real>(
    view_i: &Tensor3<T>,
    view_j: &Tensor3<T>,
    temperature: T,
) -> Result<(T, Tensor3<T>, Tensor3<T>)> {
    if view_i.n != view_j.n || view_i.sample_len() != view_j.sample_len() {
        return Err(NetError::ShapeMismatch(
            "views must have equal shapes".into(),
        ));
    }
    if view_i.n < 2 {
        return Err(NetError::BatchTooSmall(view_i.n));
    }
    if !(temperature > T::zero()) {
        return Err(NetError::DomainError("temperature must be positive".into()));
    }
    let n = view_i.n;
    let rows = 2 * n;
    let dim = view_i.sample_len();
    let stacked = Tensor3::concat(view_i, view_j)?;

    let norms: Vec<T> = (0..rows)
        .map(|k| {
            let sq: T = stacked.sample(k).iter().map(|&v| v * v).sum();
            sq.sqrt().max(T::of(NORM_FLOOR))
        })
        .collect();
    let unit: Vec<T> = (0..rows)
        .flat_map(|k| {
            stacked
                .sample(k)
                .iter()
                .map(|&v| v / norms[k])
                .collect::<Vec<_>>()
        })
        .collect();
    let z = |k: usize| &unit[k * dim..(k + 1) * dim];

    let mut sim = vec![T::zero(); rows * rows];
    for a in 0..rows {
        for b in a..rows {
            let s: T = z(a).iter().zip(z(b)).map(|(&x, &y)| x * y).sum::<T>() / temperature;
            sim[a * rows + b] = s;
            sim[b * rows + a] = s;
        }
    }

    let scale = T::one() / T::of(rows as f64);
    let mut loss = T::zero();
    // dL/dsim, zero on the diagonal
    let mut g = vec![T::zero(); rows * rows];
    for k in 0..rows {
        let pos = (k + n) % rows;
        let row = &sim[k * rows..(k + 1) * rows];
        let max = (0..rows)
            .filter(|&m| m != k)
            .map(|m| row[m])
            .fold(T::neg_infinity(), T::max);
        let denom: T = (0..rows)
            .filter(|&m| m != k)
            .map(|m| (row[m] - max).exp())
            .sum();
        loss += max + denom.ln() - row[pos];
        for m in (0..rows).filter(|&m| m != k) {
            let softmax = (row[m] - max).exp() / denom;
            let indicator = if m == pos { T::one() } else { T::zero() };
            g[k * rows + m] = scale * (softmax - indicator);
        }
    }
    loss *= scale;

    // d sim[a][b] / d z_a = z_b / tau, and symmetrically for z_b.
    let mut dz = vec![T::zero(); rows * dim];
    for a in 0..rows {
        for b in 0..rows {
            let w = (g[a * rows + b] + g[b * rows + a]) / temperature;
            if w == T::zero() {
                continue;
            }
            let zb = z(b);
            for (d, &v) in dz[a * dim..(a + 1) * dim].iter_mut().zip(zb) {
                *d += w * v;
            }
        }
    }
    // back through the normalization: dh = (dz - z (z . dz)) / |h|
    let mut dh = vec![T::zero(); rows * dim];
    for k in 0..rows {
        let zk = z(k);
        let dzk = &dz[k * dim..(k + 1) * dim];
        let proj: T = zk.iter().zip(dzk).map(|(&a, &b)| a * b).sum();
        for d in 0..dim {
            dh[k * dim + d] = (dzk[d] - zk[d] * proj) / norms[k];
        }
    }
    let grad = Tensor3::from_vec(rows, view_i.c, view_i.l, dh)?;
    let (gi, gj) = grad.split(n);
    Ok((loss, gi, gj))
}

/// `L_LP^src + lambda * (L_DC^src + L_DC^trg)`.
pub fn total_loss<T: Real>(lp_loss_src: T, dc_loss_src: T, dc_loss_trg: T, lambda: T) -> T {
    lp_loss_src + lambda * (dc_loss_src + dc_loss_trg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_rows(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Tensor3<f64> {
        Tensor3::from_vec(
            n,
            d,
            1,
            (0..n * d).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        )
        .unwrap()
    }

    /// Direct double-loop NT-Xent: for every anchor, -log of the positive's
    /// share of exp(cos/tau) over all non-self candidates.
    fn ntxent_oracle(hi: &Tensor3<f64>, hj: &Tensor3<f64>, tau: f64) -> f64 {
        let n = hi.n;
        let all: Vec<Vec<f64>> = hi.rows().into_iter().chain(hj.rows()).collect();
        let cos = |a: &[f64], b: &[f64]| {
            let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
            let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
            let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
            dot / (na * nb)
        };
        let mut total = 0.0;
        for k in 0..2 * n {
            let pos = if k < n { k + n } else { k - n };
            let mut denom = 0.0;
            for m in 0..2 * n {
                if m != k {
                    denom += (cos(&all[k], &all[m]) / tau).exp();
                }
            }
            total += -((cos(&all[k], &all[pos]) / tau).exp() / denom).ln();
        }
        total / (2 * n) as f64
    }

    #[test]
    fn identical_projections_give_log_three() {
        let h = Tensor3::from_vec(2, 3, 1, vec![0.3, -0.2, 0.9, 0.3, -0.2, 0.9]).unwrap();
        let loss = ntxent_loss(&h, &h, 0.5).unwrap();
        assert!((loss - 3f64.ln()).abs() < 1e-5);
    }

    #[test]
    fn ntxent_matches_double_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let hi = random_rows(&mut rng, 4, 6);
        let hj = random_rows(&mut rng, 4, 6);
        let loss = ntxent_loss(&hi, &hj, 0.5).unwrap();
        assert!((loss - ntxent_oracle(&hi, &hj, 0.5)).abs() < 1e-6);
    }

    #[test]
    fn ntxent_is_symmetric_in_views() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let hi = random_rows(&mut rng, 5, 4);
        let hj = random_rows(&mut rng, 5, 4);
        let a = ntxent_loss(&hi, &hj, 0.5).unwrap();
        let b = ntxent_loss(&hj, &hi, 0.5).unwrap();
        assert!((a - b).abs() < 1e-6);
    }

    #[test]
    fn ntxent_rejects_single_pair() {
        let h = Tensor3::<f64>::zeros(1, 4, 1);
        assert_eq!(ntxent_loss(&h, &h, 0.5), Err(NetError::BatchTooSmall(1)));
    }

    #[test]
    fn ntxent_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let hi = random_rows(&mut rng, 3, 4);
        let hj = random_rows(&mut rng, 3, 4);
        let (_, gi, gj) = ntxent_loss_grad(&hi, &hj, 0.5).unwrap();
        let h = 1e-6;
        for (which, grad) in [(0, &gi), (1, &gj)] {
            for idx in 0..grad.data.len() {
                let eval = |delta: f64| {
                    let (mut a, mut b) = (hi.clone(), hj.clone());
                    if which == 0 {
                        a.data[idx] += delta;
                    } else {
                        b.data[idx] += delta;
                    }
                    ntxent_loss(&a, &b, 0.5).unwrap()
                };
                let fd = (eval(h) - eval(-h)) / (2.0 * h);
                assert!(
                    (fd - grad.data[idx]).abs() < 1e-7,
                    "{which}/{idx}: {fd} vs {}",
                    grad.data[idx]
                );
            }
        }
    }

    #[test]
    fn bce_reference_values() {
        assert!((bce_loss(&[0.5], &[1.0]).unwrap() - 2f64.ln()).abs() < 1e-12);
        assert!((bce_loss(&[0.5], &[0.0]).unwrap() - 2f64.ln()).abs() < 1e-12);
        assert!((bce_logits_loss(&[0.0], &[1.0]).unwrap() - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn bce_rejects_out_of_domain() {
        assert!(matches!(
            bce_loss(&[1.0], &[1.0]),
            Err(NetError::DomainError(_))
        ));
        assert!(matches!(
            bce_loss(&[0.0], &[0.0]),
            Err(NetError::DomainError(_))
        ));
        assert!(matches!(
            bce_loss(&[0.5], &[0.5]),
            Err(NetError::DomainError(_))
        ));
    }

    #[test]
    fn bce_logits_is_stable_at_extremes() {
        for z in [-50.0f32, -30.0, 30.0, 50.0] {
            for t in [0.0, 1.0] {
                let (l, g) = bce_logits_loss_grad(&[z], &[t]).unwrap();
                assert!(l.is_finite() && g[0].is_finite());
            }
        }
        let (l, _) = bce_logits_loss_grad(&[50.0f64], &[0.0]).unwrap();
        assert!((l - 50.0).abs() < 1e-9);
    }

    #[test]
    fn total_loss_arithmetic() {
        assert_eq!(total_loss(1.0, 0.5, 0.7, 0.0), 1.0);
        assert!((total_loss(1.0, 0.5, 0.7, 1.0) - 2.2f64).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn logit_and_probability_forms_agree(seed in any::<u64>(), n in 1usize..32) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let z: Vec<f64> = (0..n).map(|_| rng.gen_range(-10.0..10.0)).collect();
            let t: Vec<f64> = (0..n).map(|_| if rng.gen_bool(0.5) { 1.0 } else { 0.0 }).collect();
            let p: Vec<f64> = z.iter().map(|&v| sigmoid(v)).collect();
            let a = bce_logits_loss(&z, &t).unwrap();
            let b = bce_loss(&p, &t).unwrap();
            prop_assert!((a - b).abs() < 1e-6);
        }

        #[test]
        fn ntxent_ignores_positive_rescaling(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let hi = random_rows(&mut rng, 4, 5);
            let hj = random_rows(&mut rng, 4, 5);
            let mut scaled = hi.clone();
            for k in 0..4 {
                let s = rng.gen_range(0.1..10.0);
                for v in &mut scaled.data[k * 5..(k + 1) * 5] {
                    *v *= s;
                }
            }
            let a = ntxent_loss(&hi, &hj, 0.5).unwrap();
            let b = ntxent_loss(&scaled, &hj, 0.5).unwrap();
            prop_assert!((a - b).abs() < 1e-6);
        }
    }
}
