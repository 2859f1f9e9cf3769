//! Losses and gradients of each training stage's graph.

use super::layers::{Grads, Mode, Tape};
use super::{
    bce_logits_loss_grad, ntxent_loss_grad, sigmoid, total_loss, Model, NetError, Real, Result,
    Tensor3,
};

pub(crate) fn add_grads<T: Real>(acc: &mut Grads<T>, other: &Grads<T>) {
    debug_assert_eq!(acc.len(), other.len());
    for (a, b) in acc.iter_mut().zip(other) {
        for (x, &y) in a.iter_mut().zip(b) {
            *x += y;
        }
    }
}

fn scale_grads<T: Real>(grads: &mut Grads<T>, s: T) {
    for g in grads.iter_mut() {
        for v in g.iter_mut() {
            *v *= s;
        }
    }
}

fn logits_column<T: Real>(t: &Tensor3<T>) -> Vec<T> {
    debug_assert_eq!(t.sample_len(), 1);
    t.data.clone()
}

fn column_tensor<T: Real>(values: Vec<T>) -> Tensor3<T> {
    let n = values.len();
    Tensor3::from_vec(n, 1, 1, values).expect("column shape")
}

/// Stage 1: encoder + projector trained on NT-Xent between two views.
pub struct ContrastiveOutcome<T> {
    pub loss: T,
    pub encoder_grads: Grads<T>,
    pub projector_grads: Grads<T>,
    pub encoder_tape: Tape<T>,
    pub projector_tape: Tape<T>,
}

pub fn contrastive_objective<T: Real>(
    model: &Model<T>,
    view_i: &Tensor3<T>,
    view_j: &Tensor3<T>,
    temperature: T,
) -> Result<ContrastiveOutcome<T>> {
    if view_i.n != view_j.n {
        return Err(NetError::ShapeMismatch("views must pair up".into()));
    }
    let n = view_i.n;
    let both = Tensor3::concat(view_i, view_j)?;
    let (emb, encoder_tape) = model.fe_forward(&both, Mode::Train)?;
    let (proj, projector_tape) = model.projector_forward(&emb, Mode::Train)?;
    let (hi, hj) = proj.split(n);
    let (loss, gi, gj) = ntxent_loss_grad(&hi, &hj, temperature)?;
    let dproj = Tensor3::concat(&gi, &gj)?;
    let (demb, projector_grads) = model.projector.backward(&projector_tape, dproj, true);
    let (_, encoder_grads) =
        model
            .encoder
            .backward(&encoder_tape, demb.expect("requested input grad"), false);
    Ok(ContrastiveOutcome {
        loss,
        encoder_grads,
        projector_grads,
        encoder_tape,
        projector_tape,
    })
}

/// Stage 2: domain classifier trained on fixed embeddings.
pub struct DomainOutcome<T> {
    pub loss: T,
    /// Fraction of items classified correctly at threshold 0.5.
    pub accuracy: f64,
    pub dc_grads: Grads<T>,
    pub dc_tape: Tape<T>,
}

/// Source embeddings are labelled 0, target embeddings 1. Both halves share
/// one batch so batch-norm statistics mix the domains.
pub fn domain_objective<T: Real>(
    model: &Model<T>,
    src: &Tensor3<T>,
    trg: &Tensor3<T>,
) -> Result<DomainOutcome<T>> {
    let both = Tensor3::concat(src, trg)?;
    let targets: Vec<T> = std::iter::repeat_n(T::zero(), src.n)
        .chain(std::iter::repeat_n(T::one(), trg.n))
        .collect();
    let (logits, dc_tape) = model.dc_logits(&both, Mode::Train)?;
    let z = logits_column(&logits);
    let (loss, dz) = bce_logits_loss_grad(&z, &targets)?;
    let correct = z
        .iter()
        .zip(&targets)
        .filter(|(&zi, &t)| (sigmoid(zi) >= T::of(0.5)) == (t == T::one()))
        .count();
    let (_, dc_grads) = model.dc.backward(&dc_tape, column_tensor(dz), false);
    Ok(DomainOutcome {
        loss,
        accuracy: correct as f64 / z.len() as f64,
        dc_grads,
        dc_tape,
    })
}

/// Which losses drive the final stage.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum FinetuneMode {
    /// Tag loss on source items only.
    Supervised,
    /// Tag loss on both source and (tagged) target items.
    Oracle,
    /// Tag loss on source plus the reversed domain loss on both domains.
    Adversarial { lambda: f64 },
}

pub struct FinetuneBatch<'a, T> {
    pub src: &'a Tensor3<T>,
    /// Row-major `[src.n, n_tags]` in {0, 1}.
    pub src_tags: &'a [T],
    pub trg: Option<&'a Tensor3<T>>,
    pub trg_tags: Option<&'a [T]>,
}

pub struct FinetuneOutcome<T> {
    pub lp_loss_src: T,
    pub lp_loss_trg: Option<T>,
    pub dc_loss_src: Option<T>,
    pub dc_loss_trg: Option<T>,
    pub total: T,
    pub encoder_grads: Grads<T>,
    pub lp_grads: Grads<T>,
    /// Gradient of the total loss w.r.t. the domain classifier
    /// (`lambda * grad(L_DC)`); adversarial mode only.
    pub dc_grads: Option<Grads<T>>,
    /// Train-mode tape of the source pass; the only one whose batch
    /// statistics are folded into the encoder's running statistics.
    pub src_encoder_tape: Tape<T>,
}

/// Stage 3 graph. The domain classifier's loss reaches the encoder only
/// through a gradient reversal of strength `lambda`, so the encoder receives
/// `grad(L_LP) - lambda * grad(L_DC)`.
///
/// Source items pass through the encoder with batch statistics. Target items
/// pass separately with the running statistics, as they would at inference,
/// so the source batch alone drives the running-statistics update. The frozen
/// DC sees source and target embeddings as one batch and normalizes with
/// that batch's statistics, as during its own training; its running
/// statistics are left alone.
pub fn finetune_objective<T: Real>(
    model: &Model<T>,
    batch: &FinetuneBatch<'_, T>,
    mode: FinetuneMode,
) -> Result<FinetuneOutcome<T>> {
    let n_tags = model.config.n_tags;
    if batch.src_tags.len() != batch.src.n * n_tags {
        return Err(NetError::ShapeMismatch(format!(
            "{} source tag values for {} items x {n_tags} tags",
            batch.src_tags.len(),
            batch.src.n
        )));
    }

    let (e_src, src_encoder_tape) = model.fe_forward(batch.src, Mode::Train)?;
    let (logits_src, lp_tape_src) = model.lp_forward(&e_src, Mode::Train)?;
    let (lp_loss_src, dlogits) = bce_logits_loss_grad(&logits_src.data, batch.src_tags)?;
    let (de_src_lp, mut lp_grads) = model.lp.backward(
        &lp_tape_src,
        Tensor3::from_vec(logits_src.n, logits_src.c, 1, dlogits)?,
        true,
    );
    let mut de_src = de_src_lp.expect("requested input grad");

    let mut outcome_trg_lp = None;
    let mut dc_losses = None;
    let mut dc_grads = None;
    let mut trg_pass: Option<(Tape<T>, Tensor3<T>)> = None;

    match mode {
        FinetuneMode::Supervised => {}
        FinetuneMode::Oracle => {
            let trg = batch
                .trg
                .ok_or_else(|| NetError::ShapeMismatch("oracle mode needs target items".into()))?;
            let tags = batch
                .trg_tags
                .ok_or_else(|| NetError::ShapeMismatch("oracle mode needs target tags".into()))?;
            if tags.len() != trg.n * n_tags {
                return Err(NetError::ShapeMismatch(
                    "target tag matrix has the wrong size".into(),
                ));
            }
            let (e_trg, trg_tape) = model.fe_forward(trg, Mode::Eval)?;
            let (logits_trg, lp_tape_trg) = model.lp_forward(&e_trg, Mode::Train)?;
            let (loss, dl) = bce_logits_loss_grad(&logits_trg.data, tags)?;
            let (de_trg, g) = model.lp.backward(
                &lp_tape_trg,
                Tensor3::from_vec(logits_trg.n, logits_trg.c, 1, dl)?,
                true,
            );
            add_grads(&mut lp_grads, &g);
            outcome_trg_lp = Some(loss);
            trg_pass = Some((trg_tape, de_trg.expect("requested input grad")));
        }
        FinetuneMode::Adversarial { lambda } => {
            let trg = batch.trg.ok_or_else(|| {
                NetError::ShapeMismatch("adversarial mode needs target items".into())
            })?;
            let lam = T::of(lambda);
            let (e_trg, trg_tape) = model.fe_forward(trg, Mode::Eval)?;

            // Frozen DC: fixed parameters, batch statistics over the joint
            // src+trg batch (as in its own training), nothing committed.
            let both = Tensor3::concat(&e_src, &e_trg)?;
            let (reversed, grl) = super::gradient_reverse(&both, lam)?;
            let (logits, tape) = model.dc_logits(&reversed, Mode::Train)?;
            let z = logits_column(&logits);
            let (z_src, z_trg) = z.split_at(e_src.n);
            let (dc_src, mut dz) = bce_logits_loss_grad(z_src, &vec![T::zero(); z_src.len()])?;
            let (dc_trg, dz_trg) = bce_logits_loss_grad(z_trg, &vec![T::one(); z_trg.len()])?;
            dz.extend(dz_trg);
            let (de, mut g_dc) = model.dc.backward(&tape, column_tensor(dz), true);
            scale_grads(&mut g_dc, lam);
            let (rev_src, rev_trg) = grl
                .backward(&de.expect("requested input grad"))
                .split(e_src.n);
            de_src.add_assign(&rev_src);
            dc_losses = Some((dc_src, dc_trg));
            dc_grads = Some(g_dc);
            trg_pass = Some((trg_tape, rev_trg));
        }
    }

    let (_, mut encoder_grads) = model.encoder.backward(&src_encoder_tape, de_src, false);
    if let Some((tape, de_trg)) = trg_pass {
        let (_, g) = model.encoder.backward(&tape, de_trg, false);
        add_grads(&mut encoder_grads, &g);
    }

    let total = match (mode, dc_losses, outcome_trg_lp) {
        (FinetuneMode::Adversarial { lambda }, Some((s, t)), _) => {
            total_loss(lp_loss_src, s, t, T::of(lambda))
        }
        (FinetuneMode::Oracle, _, Some(trg)) => lp_loss_src + trg,
        _ => lp_loss_src,
    };

    Ok(FinetuneOutcome {
        lp_loss_src,
        lp_loss_trg: outcome_trg_lp,
        dc_loss_src: dc_losses.map(|d| d.0),
        dc_loss_trg: dc_losses.map(|d| d.1),
        total,
        encoder_grads,
        lp_grads,
        dc_grads,
        src_encoder_tape,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netlab::{EncoderConfig, ModelConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tiny_config() -> ModelConfig {
        let mut cfg = ModelConfig::with_encoder(
            EncoderConfig {
                input_length: 81,
                n_blocks: 3,
                base_channels: 3,
                embedding_dim: 6,
            },
            3,
        );
        cfg.dc_hidden = [5, 4];
        cfg
    }

    fn waves(rng: &mut ChaCha8Rng, n: usize, len: usize) -> Tensor3<f64> {
        Tensor3::from_vec(
            n,
            1,
            len,
            (0..n * len).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        )
        .unwrap()
    }

    #[test]
    fn contrastive_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let model = Model::<f64>::init(tiny_config(), 3).unwrap();
        let vi = waves(&mut rng, 3, 81);
        let vj = waves(&mut rng, 3, 81);
        let out = contrastive_objective(&model, &vi, &vj, 0.5).unwrap();
        let h = 1e-6;
        for (ti, g) in out.projector_grads.iter().enumerate().take(2) {
            for j in (0..g.len()).step_by(5) {
                let f = |d: f64| {
                    let mut m = model.clone();
                    m.projector.params_mut()[ti][j] += d;
                    contrastive_objective(&m, &vi, &vj, 0.5).unwrap().loss
                };
                let fd = (f(h) - f(-h)) / (2.0 * h);
                assert!(
                    (fd - g[j]).abs() < 1e-6 * (1.0 + fd.abs()),
                    "proj {ti}[{j}] {fd} vs {}",
                    g[j]
                );
            }
        }
        for (ti, g) in out.encoder_grads.iter().enumerate() {
            for j in (0..g.len()).step_by(3) {
                let f = |d: f64| {
                    let mut m = model.clone();
                    m.encoder.params_mut()[ti][j] += d;
                    contrastive_objective(&m, &vi, &vj, 0.5).unwrap().loss
                };
                let fd = (f(h) - f(-h)) / (2.0 * h);
                assert!(
                    (fd - g[j]).abs() < 1e-6 * (1.0 + fd.abs()),
                    "enc {ti}[{j}] {fd} vs {}",
                    g[j]
                );
            }
        }
    }

    #[test]
    fn domain_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let model = Model::<f64>::init(tiny_config(), 4).unwrap();
        let src = Tensor3::from_vec(4, 6, 1, (0..24).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .unwrap();
        let trg = Tensor3::from_vec(3, 6, 1, (0..18).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .unwrap();
        let out = domain_objective(&model, &src, &trg).unwrap();
        let h = 1e-6;
        for (ti, g) in out.dc_grads.iter().enumerate() {
            for j in 0..g.len() {
                let f = |d: f64| {
                    let mut m = model.clone();
                    m.dc.params_mut()[ti][j] += d;
                    domain_objective(&m, &src, &trg).unwrap().loss
                };
                let fd = (f(h) - f(-h)) / (2.0 * h);
                assert!(
                    (fd - g[j]).abs() < 1e-6 * (1.0 + fd.abs()),
                    "dc {ti}[{j}] {fd} vs {}",
                    g[j]
                );
            }
        }
    }

    #[test]
    fn oracle_mode_adds_target_tag_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let model = Model::<f64>::init(tiny_config(), 6).unwrap();
        let src = waves(&mut rng, 3, 81);
        let trg = waves(&mut rng, 3, 81);
        let tags: Vec<f64> = (0..9).map(|i| (i % 2) as f64).collect();
        let batch = FinetuneBatch {
            src: &src,
            src_tags: &tags,
            trg: Some(&trg),
            trg_tags: Some(&tags),
        };
        let out = finetune_objective(&model, &batch, FinetuneMode::Oracle).unwrap();
        let trg_loss = out.lp_loss_trg.unwrap();
        assert!((out.total - (out.lp_loss_src + trg_loss)).abs() < 1e-12);
        assert!(out.dc_grads.is_none());
    }

    #[test]
    fn supervised_mode_ignores_target_items() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let model = Model::<f64>::init(tiny_config(), 8).unwrap();
        let src = waves(&mut rng, 3, 81);
        let trg = waves(&mut rng, 3, 81);
        let tags: Vec<f64> = (0..9).map(|i| (i % 3 == 0) as u8 as f64).collect();
        let with = finetune_objective(
            &model,
            &FinetuneBatch {
                src: &src,
                src_tags: &tags,
                trg: Some(&trg),
                trg_tags: None,
            },
            FinetuneMode::Supervised,
        )
        .unwrap();
        let without = finetune_objective(
            &model,
            &FinetuneBatch {
                src: &src,
                src_tags: &tags,
                trg: None,
                trg_tags: None,
            },
            FinetuneMode::Supervised,
        )
        .unwrap();
        assert_eq!(with.total, without.total);
        assert_eq!(with.encoder_grads, without.encoder_grads);
    }

    #[test]
    fn adversarial_mode_requires_target_items() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let model = Model::<f64>::init(tiny_config(), 8).unwrap();
        let src = waves(&mut rng, 2, 81);
        let tags = vec![0.0; 6];
        let batch = FinetuneBatch {
            src: &src,
            src_tags: &tags,
            trg: None,
            trg_tags: None,
        };
        assert!(
            finetune_objective(&model, &batch, FinetuneMode::Adversarial { lambda: 1.0 }).is_err()
        );
    }
}
