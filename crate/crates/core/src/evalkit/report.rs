use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::corpus::{EvalCondition, EvalSet, ProbeSet};
use crate::netlab::{sigmoid, Mode, Model, NetError, Real, Tensor3};

use super::{macro_over_tags, EvalError, Metric};

/// Items embedded per forward pass.
const CHUNK: usize = 64;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionScore {
    pub condition: EvalCondition,
    /// `None` when every tag was single-class under this condition.
    pub macro_auc: Option<f64>,
    pub macro_ap: Option<f64>,
    pub skipped_tags: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub conditions: Vec<ConditionScore>,
    /// Balanced accuracy of the domain classifier on clean vs noisy items.
    pub dc_probe_accuracy: Option<f64>,
}

impl EvalReport {
    pub fn score(&self, condition: EvalCondition) -> Option<&ConditionScore> {
        self.conditions.iter().find(|c| c.condition == condition)
    }

    pub fn clean_auc(&self) -> Option<f64> {
        self.score(EvalCondition::Clean).and_then(|c| c.macro_auc)
    }

    /// Mean macro AUC over the noisy conditions that could be scored.
    pub fn mean_noisy_auc(&self) -> Option<f64> {
        mean(
            self.conditions
                .iter()
                .filter(|c| c.condition.is_noisy())
                .filter_map(|c| c.macro_auc),
        )
    }

    pub fn mean_noisy_ap(&self) -> Option<f64> {
        mean(
            self.conditions
                .iter()
                .filter(|c| c.condition.is_noisy())
                .filter_map(|c| c.macro_ap),
        )
    }

    /// One JSON object per condition plus a summary line, tagged by `label`.
    pub fn to_jsonl(&self, label: &str) -> String {
        let mut out = String::new();
        for c in &self.conditions {
            let line = serde_json::json!({
                "setting": label,
                "condition": c.condition,
                "macro_auc": c.macro_auc,
                "macro_ap": c.macro_ap,
                "skipped_tags": c.skipped_tags,
            });
            out.push_str(&line.to_string());
            out.push('\n');
        }
        let summary = serde_json::json!({
            "setting": label,
            "mean_noisy_auc": self.mean_noisy_auc(),
            "mean_noisy_ap": self.mean_noisy_ap(),
            "dc_probe_accuracy": self.dc_probe_accuracy,
        });
        out.push_str(&summary.to_string());
        out.push('\n');
        out
    }
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

fn embed_all<T: Real, W: AsRef<[f32]>>(
    model: &Model<T>,
    waves: &[W],
) -> Result<Tensor3<T>, NetError> {
    let dim = model.config.encoder.embedding_dim;
    let mut data = Vec::with_capacity(waves.len() * dim);
    for chunk in waves.chunks(CHUNK) {
        data.extend(model.embed(&Tensor3::from_waveforms(chunk)?)?.data);
    }
    Tensor3::from_vec(waves.len(), dim, 1, data)
}

/// Balanced accuracy of the DC at threshold 0.5 (clean is class 0).
fn balanced_accuracy<T: Real>(
    model: &Model<T>,
    clean: &Tensor3<T>,
    noisy: &Tensor3<T>,
) -> Result<f64, NetError> {
    let half = T::of(0.5);
    let hit = |probs: Vec<T>, noisy: bool| -> f64 {
        let n = probs.len();
        probs.into_iter().filter(|&p| (p >= half) == noisy).count() as f64 / n as f64
    };
    Ok(0.5 * (hit(model.dc_forward(clean)?, false) + hit(model.dc_forward(noisy)?, true)))
}

/// DC accuracy on a balanced probe set, embedding with the current encoder.
pub fn probe_accuracy<T: Real>(model: &Model<T>, probe: &ProbeSet) -> Result<f64, EvalError> {
    if probe.clean.is_empty() || probe.noisy.is_empty() {
        return Err(EvalError::EmptySet);
    }
    let clean = embed_all(model, &probe.clean)?;
    let noisy = embed_all(model, &probe.noisy)?;
    Ok(balanced_accuracy(model, &clean, &noisy)?)
}

/// Scores `model` on every condition of `set`. Tag scores are the sigmoid of
/// the label-predictor logits. With `probe_dc`, the domain classifier is
/// also scored on clean against noisy items.
pub fn evaluate<T: Real>(
    model: &Model<T>,
    set: &EvalSet,
    probe_dc: bool,
) -> Result<EvalReport, EvalError> {
    if set.is_empty() {
        return Err(EvalError::EmptySet);
    }
    let waves: Vec<&[f32]> = set.items.iter().map(|i| i.waveform.as_slice()).collect();
    let emb = embed_all(model, &waves)?;
    let (logits, _) = model.lp_forward(&emb, Mode::Eval)?;
    let n_tags = logits.c;
    let scores: Vec<Vec<f64>> = (0..logits.n)
        .map(|i| {
            logits
                .sample(i)
                .iter()
                .map(|&z| sigmoid(z).as_f64())
                .collect()
        })
        .collect();

    let mut conditions = Vec::with_capacity(set.conditions.len());
    for (ci, &condition) in set.conditions.iter().enumerate() {
        let rows: Vec<usize> = (0..set.items.len())
            .filter(|&i| set.items[i].condition == ci)
            .collect();
        let s: Vec<Vec<f64>> = rows.iter().map(|&i| scores[i].clone()).collect();
        let l: Vec<Vec<u8>> = rows
            .iter()
            .map(|&i| set.tags[set.items[i].track].clone())
            .collect();
        if l.iter().any(|r| r.len() != n_tags) {
            return Err(EvalError::Ragged);
        }
        let score = |m| match macro_over_tags(m, &s, &l) {
            Ok(v) => Ok((Some(v.value), v.skipped_tags)),
            Err(EvalError::AllTagsDegenerate) => Ok((None, n_tags)),
            Err(e) => Err(e),
        };
        let (macro_auc, skipped_tags) = score(Metric::RocAuc)?;
        let (macro_ap, _) = score(Metric::AveragePrecision)?;
        conditions.push(ConditionScore {
            condition,
            macro_auc,
            macro_ap,
            skipped_tags,
        });
    }

    let dc_probe_accuracy = if probe_dc {
        let pick = |noisy: bool| -> Vec<usize> {
            (0..set.items.len())
                .filter(|&i| set.conditions[set.items[i].condition].is_noisy() == noisy)
                .collect()
        };
        let (clean_rows, noisy_rows) = (pick(false), pick(true));
        if clean_rows.is_empty() || noisy_rows.is_empty() {
            None
        } else {
            let gather = |rows: &[usize]| {
                let data = rows.iter().flat_map(|&i| emb.sample(i).to_vec()).collect();
                Tensor3::from_vec(rows.len(), emb.c, 1, data)
            };
            Some(balanced_accuracy(
                model,
                &gather(&clean_rows)?,
                &gather(&noisy_rows)?,
            )?)
        }
    } else {
        None
    };
    Ok(EvalReport {
        conditions,
        dc_probe_accuracy,
    })
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "  -   ".to_string(), |x| format!("{x:.4}"))
}

/// Aligned table: one row per labelled report, one AUC/AP column pair per
/// condition, plus the noisy-condition means.
pub fn render_table(rows: &[(String, EvalReport)]) -> String {
    let Some((_, first)) = rows.first() else {
        return String::new();
    };
    let label_w = rows.iter().map(|(l, _)| l.len()).max().unwrap_or(0).max(7);
    let mut heads: Vec<String> = first
        .conditions
        .iter()
        .map(|c| c.condition.to_string())
        .collect();
    heads.push("noisy mean".into());
    let mut out = String::new();
    let _ = write!(out, "{:label_w$}", "setting");
    for h in &heads {
        let _ = write!(out, " | {h:^13}");
    }
    out.push('\n');
    let _ = write!(out, "{:label_w$}", "");
    for _ in &heads {
        let _ = write!(out, " | {:^6} {:^6}", "AUC", "AP");
    }
    out.push('\n');
    out.push_str(&"-".repeat(label_w + heads.len() * 16));
    out.push('\n');
    for (label, report) in rows {
        let _ = write!(out, "{label:label_w$}");
        for c in &first.conditions {
            let s = report.score(c.condition);
            let _ = write!(
                out,
                " | {} {}",
                cell(s.and_then(|s| s.macro_auc)),
                cell(s.and_then(|s| s.macro_ap))
            );
        }
        let _ = write!(
            out,
            " | {} {}",
            cell(report.mean_noisy_auc()),
            cell(report.mean_noisy_ap())
        );
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{build_eval_set, AudioBank, Split, SyntheticCorpus, SyntheticCorpusConfig};
    use crate::netlab::{EncoderConfig, ModelConfig};

    fn fixture() -> (Model<f32>, EvalSet) {
        let cfg = SyntheticCorpusConfig {
            n_tracks: 200,
            test_fraction: 0.5,
            n_extra: 0,
            n_pretrain: 0,
            n_noise_train: 0,
            n_noise_valid: 0,
            n_noise_test: 4,
            track_duration_s: 0.05,
            noise_duration_s: 0.1,
            ..SyntheticCorpusConfig::default()
        };
        let c = SyntheticCorpus::generate(&cfg).unwrap();
        let test = c.split(Split::Test);
        let mut bank = AudioBank::new();
        bank.load_tracks(&test).unwrap();
        bank.load_noises(&c.noise_test).unwrap();
        let noise: Vec<String> = c.noise_test.iter().map(|n| n.id.clone()).collect();
        let set = build_eval_set(
            &test,
            &EvalCondition::default_grid(),
            3,
            &bank,
            &noise,
            2,
            243,
        )
        .unwrap();
        let enc = EncoderConfig {
            input_length: 243,
            n_blocks: 4,
            base_channels: 8,
            embedding_dim: 32,
        };
        (
            Model::init(ModelConfig::with_encoder(enc, 8), 5).unwrap(),
            set,
        )
    }

    #[test]
    fn random_model_scores_near_chance() {
        let (model, set) = fixture();
        let report = evaluate(&model, &set, true).unwrap();
        assert_eq!(report.conditions.len(), 5);
        for c in &report.conditions {
            let auc = c.macro_auc.unwrap();
            assert!((0.35..=0.65).contains(&auc), "{}: {auc}", c.condition);
            assert!((0.0..=1.0).contains(&c.macro_ap.unwrap()));
        }
        let acc = report.dc_probe_accuracy.unwrap();
        assert!((0.0..=1.0).contains(&acc));
        assert_eq!(report, evaluate(&model, &set, true).unwrap());
        assert_eq!(
            evaluate(&model, &set, false).unwrap().dc_probe_accuracy,
            None
        );
    }

    #[test]
    fn table_and_jsonl_have_fixed_shape() {
        let (model, set) = fixture();
        let report = evaluate(&model, &set, false).unwrap();
        let jsonl = report.to_jsonl("baseline");
        assert_eq!(jsonl.lines().count(), 6);
        for line in jsonl.lines() {
            serde_json::from_str::<serde_json::Value>(line).unwrap();
        }
        let table = render_table(&[
            ("baseline".into(), report.clone()),
            ("proposed_a".into(), report),
        ]);
        let lines: Vec<&str> = table.lines().collect();
        assert_eq!(lines.len(), 5);
        assert!(
            lines[0].contains("clean") && lines[0].contains("-5dB") && lines[0].contains("10dB")
        );
        assert_eq!(lines[3].len(), lines[4].len());
    }

    #[test]
    fn macro_matches_per_tag_recomputation() {
        let (model, set) = fixture();
        let report = evaluate(&model, &set, false).unwrap();
        // recompute the clean condition tag by tag
        let clean = set.condition_items(0);
        let waves: Vec<&[f32]> = clean.iter().map(|i| i.waveform.as_slice()).collect();
        let emb = model
            .embed(&Tensor3::from_waveforms(&waves).unwrap())
            .unwrap();
        let logits = model.lp_forward(&emb, Mode::Eval).unwrap().0;
        let mut per_tag = Vec::new();
        for t in 0..8 {
            let s: Vec<f64> = (0..clean.len())
                .map(|i| sigmoid(logits.sample(i)[t]).as_f64())
                .collect();
            let l: Vec<u8> = clean.iter().map(|i| set.tags[i.track][t]).collect();
            if let Ok(v) = crate::evalkit::roc_auc(&s, &l) {
                per_tag.push(v);
            }
        }
        let expected = per_tag.iter().sum::<f64>() / per_tag.len() as f64;
        assert!((report.clean_auc().unwrap() - expected).abs() < 1e-12);
    }
}
