//! Track and noise manifests, experiment settings, batch assembly and frozen
//! evaluation sets.

mod bank;
mod eval_set;
mod sampling;
mod synthetic;

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::signal::{SignalError, SynthSpec};

pub use bank::AudioBank;
pub use eval_set::{build_eval_set, build_probe_set, EvalItem, EvalSet, ProbeSet};
pub use sampling::{
    assemble_stage23_batch, sample_stage1_batch, sample_stage23_batch, stage1_views, AugmentConfig,
    LabeledTrack, SourceItem, Stage1Batch, Stage23Batch, TargetItem, TargetOrigin, TrainingPools,
};
pub use synthetic::{
    derive_tags, AudioMode, SyntheticCorpus, SyntheticCorpusConfig, EXTRA_FILE, NOISE_TEST_FILE,
    NOISE_TRAIN_FILE, NOISE_VALID_FILE, PRETRAIN_FILE, TAG_NAMES, TRACKS_FILE,
};

pub const MANIFEST_SCHEMA: &str = "robustag-manifest";
pub const MANIFEST_VERSION: u32 = 1;
pub const DEFAULT_N_TAGS: usize = 50;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("record {id}: {reason}")]
    InvariantViolation { id: String, reason: String },
    #[error("duplicate record id {0}")]
    DuplicateId(String),
    #[error("empty pool: {0}")]
    EmptyPool(String),
    #[error("track {0} appears in both the source and target halves")]
    OverlapViolation(String),
    #[error("record {0} has no tags but evaluation needs labels")]
    MissingTags(String),
    #[error("unknown audio id {0}")]
    UnknownAudio(String),
    #[error("invalid setting: {0}")]
    Setting(String),
    #[error("audio for {id}: {source}")]
    Signal {
        id: String,
        #[source]
        source: SignalError,
    },
}

pub type Result<T, E = CorpusError> = std::result::Result<T, E>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    Source,
    Target,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Valid,
    Test,
}

/// Where a clip's samples come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AudioSource {
    Path(PathBuf),
    Synth(SynthSpec),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrackRecord {
    pub id: String,
    pub source: AudioSource,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tags: Option<Vec<u8>>,
    pub domain: Domain,
    pub split: Split,
    /// Noise ids a target track may be mixed with; empty means any.
    #[serde(default)]
    pub noise_refs: Vec<String>,
}

impl TrackRecord {
    pub fn check(&self, n_tags: usize) -> Result<()> {
        let violation = |reason: String| CorpusError::InvariantViolation {
            id: self.id.clone(),
            reason,
        };
        if self.id.is_empty() {
            return Err(violation("empty id".into()));
        }
        if self.domain == Domain::Source && !self.noise_refs.is_empty() {
            return Err(violation(
                "source-domain track lists noise references".into(),
            ));
        }
        if let Some(tags) = &self.tags {
            if tags.len() != n_tags {
                return Err(violation(format!(
                    "tag vector has {} entries, expected {n_tags}",
                    tags.len()
                )));
            }
            if tags.iter().any(|&t| t > 1) {
                return Err(violation("tag entries must be 0 or 1".into()));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseRecord {
    pub id: String,
    pub source: AudioSource,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ManifestKind {
    Tracks,
    Noise,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestHeader {
    pub schema: String,
    pub version: u32,
    pub kind: ManifestKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_tags: Option<usize>,
}

impl ManifestHeader {
    pub fn tracks(n_tags: usize) -> Self {
        Self {
            schema: MANIFEST_SCHEMA.into(),
            version: MANIFEST_VERSION,
            kind: ManifestKind::Tracks,
            n_tags: Some(n_tags),
        }
    }

    pub fn noise() -> Self {
        Self {
            schema: MANIFEST_SCHEMA.into(),
            version: MANIFEST_VERSION,
            kind: ManifestKind::Noise,
            n_tags: None,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CorpusError + '_ {
    move |source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Reads the header and the raw record lines (with 1-based line numbers).
fn read_lines(path: &Path, kind: ManifestKind) -> Result<(ManifestHeader, Vec<(usize, String)>)> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    let mut header = None;
    let mut body = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        if header.is_none() {
            let h: ManifestHeader =
                serde_json::from_str(&line).map_err(|e| CorpusError::Parse {
                    line: lineno,
                    message: format!("bad header: {e}"),
                })?;
            if h.schema != MANIFEST_SCHEMA || h.version != MANIFEST_VERSION {
                return Err(CorpusError::Parse {
                    line: lineno,
                    message: format!("unsupported schema {} v{}", h.schema, h.version),
                });
            }
            if h.kind != kind {
                return Err(CorpusError::Parse {
                    line: lineno,
                    message: format!("expected a {kind:?} manifest, found {:?}", h.kind),
                });
            }
            header = Some(h);
        } else {
            body.push((lineno, line));
        }
    }
    let header = header.ok_or(CorpusError::Parse {
        line: 1,
        message: "missing schema header".into(),
    })?;
    Ok((header, body))
}

fn resolve(source: AudioSource, base: &Path) -> AudioSource {
    match source {
        AudioSource::Path(p) if p.is_relative() => AudioSource::Path(base.join(p)),
        other => other,
    }
}

fn base_dir(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

/// Loads a track manifest. Relative audio paths are resolved against the
/// manifest's directory.
pub fn load_manifest(path: &Path) -> Result<Vec<TrackRecord>> {
    let (header, lines) = read_lines(path, ManifestKind::Tracks)?;
    let n_tags = header.n_tags.unwrap_or(DEFAULT_N_TAGS);
    let base = base_dir(path);
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(lines.len());
    for (line, text) in lines {
        let mut rec: TrackRecord = serde_json::from_str(&text).map_err(|e| CorpusError::Parse {
            line,
            message: e.to_string(),
        })?;
        rec.check(n_tags)?;
        if !seen.insert(rec.id.clone()) {
            return Err(CorpusError::DuplicateId(rec.id));
        }
        rec.source = resolve(rec.source, &base);
        out.push(rec);
    }
    Ok(out)
}

pub fn load_noise_manifest(path: &Path) -> Result<Vec<NoiseRecord>> {
    let (_, lines) = read_lines(path, ManifestKind::Noise)?;
    let base = base_dir(path);
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(lines.len());
    for (line, text) in lines {
        let mut rec: NoiseRecord = serde_json::from_str(&text).map_err(|e| CorpusError::Parse {
            line,
            message: e.to_string(),
        })?;
        if rec.id.is_empty() {
            return Err(CorpusError::InvariantViolation {
                id: rec.id,
                reason: "empty id".into(),
            });
        }
        if !seen.insert(rec.id.clone()) {
            return Err(CorpusError::DuplicateId(rec.id));
        }
        rec.source = resolve(rec.source, &base);
        out.push(rec);
    }
    Ok(out)
}

fn write_lines<S: Serialize>(path: &Path, header: &ManifestHeader, records: &[S]) -> Result<()> {
    let mut buf = serde_json::to_string(header).expect("header serializes");
    buf.push('\n');
    for r in records {
        buf.push_str(&serde_json::to_string(r).expect("records serialize"));
        buf.push('\n');
    }
    let mut file = fs::File::create(path).map_err(io_err(path))?;
    file.write_all(buf.as_bytes()).map_err(io_err(path))
}

pub fn write_manifest(path: &Path, n_tags: usize, records: &[TrackRecord]) -> Result<()> {
    for r in records {
        r.check(n_tags)?;
    }
    write_lines(path, &ManifestHeader::tracks(n_tags), records)
}

pub fn write_noise_manifest(path: &Path, records: &[NoiseRecord]) -> Result<()> {
    write_lines(path, &ManifestHeader::noise(), records)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SettingName {
    Baseline,
    Oracle,
    ProposedA,
    ProposedB,
}

impl SettingName {
    pub const ALL: [SettingName; 4] = [
        SettingName::Baseline,
        SettingName::Oracle,
        SettingName::ProposedA,
        SettingName::ProposedB,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SettingName::Baseline => "baseline",
            SettingName::Oracle => "oracle",
            SettingName::ProposedA => "proposed_a",
            SettingName::ProposedB => "proposed_b",
        }
    }
}

impl fmt::Display for SettingName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SettingName {
    type Err = CorpusError;
    fn from_str(s: &str) -> Result<Self> {
        SettingName::ALL
            .into_iter()
            .find(|n| n.as_str() == s)
            .ok_or_else(|| CorpusError::Setting(format!("unknown setting {s:?}")))
    }
}

/// Which data a run trains on and whether the domain classifier takes part.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSetting {
    pub name: SettingName,
    pub uses_dc: bool,
    pub target_tagged: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub extra_unlabeled_pool: Option<PathBuf>,
}

impl ExperimentSetting {
    pub fn baseline() -> Self {
        Self {
            name: SettingName::Baseline,
            uses_dc: false,
            target_tagged: false,
            extra_unlabeled_pool: None,
        }
    }

    pub fn oracle() -> Self {
        Self {
            name: SettingName::Oracle,
            uses_dc: false,
            target_tagged: true,
            extra_unlabeled_pool: None,
        }
    }

    pub fn proposed_a() -> Self {
        Self {
            name: SettingName::ProposedA,
            uses_dc: true,
            target_tagged: false,
            extra_unlabeled_pool: None,
        }
    }

    pub fn proposed_b(extra_pool: impl Into<PathBuf>) -> Self {
        Self {
            name: SettingName::ProposedB,
            uses_dc: true,
            target_tagged: false,
            extra_unlabeled_pool: Some(extra_pool.into()),
        }
    }

    /// The canonical setting for `name`; proposed_b needs its pool reference.
    pub fn named(name: SettingName, extra_pool: Option<PathBuf>) -> Result<Self> {
        let s = match name {
            SettingName::Baseline => Self::baseline(),
            SettingName::Oracle => Self::oracle(),
            SettingName::ProposedA => Self::proposed_a(),
            SettingName::ProposedB => Self::proposed_b(extra_pool.ok_or_else(|| {
                CorpusError::Setting("proposed_b needs an extra unlabeled pool".into())
            })?),
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(CorpusError::Setting(format!("{}: {m}", self.name)));
        match self.name {
            SettingName::Baseline | SettingName::Oracle if self.uses_dc => {
                bad("two-step settings do not use the DC")
            }
            SettingName::Baseline if self.target_tagged => bad("baseline never sees target tags"),
            SettingName::Oracle if !self.target_tagged => bad("oracle needs target tags"),
            SettingName::ProposedA | SettingName::ProposedB if !self.uses_dc => {
                bad("proposed settings use the DC")
            }
            SettingName::ProposedA | SettingName::ProposedB if self.target_tagged => {
                bad("proposed settings cannot read target tags")
            }
            SettingName::ProposedB if self.extra_unlabeled_pool.is_none() => {
                bad("extra unlabeled pool missing")
            }
            SettingName::Baseline | SettingName::Oracle | SettingName::ProposedA
                if self.extra_unlabeled_pool.is_some() =>
            {
                bad("only proposed_b takes an extra pool")
            }
            _ => Ok(()),
        }
    }

    /// Whether stage 3 draws a target half at all.
    pub fn uses_target(&self) -> bool {
        self.uses_dc || self.target_tagged
    }
}

/// One evaluation condition: the clean source or a mixture at a fixed SNR.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum EvalCondition {
    Clean,
    SnrDb(f64),
}

impl EvalCondition {
    pub fn default_grid() -> Vec<EvalCondition> {
        vec![
            EvalCondition::Clean,
            EvalCondition::SnrDb(-5.0),
            EvalCondition::SnrDb(0.0),
            EvalCondition::SnrDb(5.0),
            EvalCondition::SnrDb(10.0),
        ]
    }

    pub fn is_noisy(&self) -> bool {
        matches!(self, EvalCondition::SnrDb(_))
    }

    /// Parses a comma-separated list such as `clean,-5,0,5,10`.
    pub fn parse_list(s: &str) -> Result<Vec<EvalCondition>> {
        let list: Vec<EvalCondition> = s
            .split(',')
            .map(|p| p.trim().parse())
            .collect::<Result<_>>()?;
        if list.is_empty() {
            return Err(CorpusError::Setting("empty condition list".into()));
        }
        Ok(list)
    }
}

impl fmt::Display for EvalCondition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EvalCondition::Clean => f.write_str("clean"),
            EvalCondition::SnrDb(db) => write!(f, "{db}dB"),
        }
    }
}

impl FromStr for EvalCondition {
    type Err = CorpusError;
    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim();
        if t.eq_ignore_ascii_case("clean") {
            return Ok(EvalCondition::Clean);
        }
        let num = t
            .strip_suffix("dB")
            .or_else(|| t.strip_suffix("db"))
            .unwrap_or(t);
        match num.trim().parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(EvalCondition::SnrDb(v)),
            _ => Err(CorpusError::Setting(format!(
                "bad evaluation condition {s:?}"
            ))),
        }
    }
}

impl TryFrom<String> for EvalCondition {
    type Error = CorpusError;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<EvalCondition> for String {
    fn from(c: EvalCondition) -> String {
        c.to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::{MusicParams, SynthParams};

    fn synth_source(seed: u64) -> AudioSource {
        AudioSource::Synth(SynthSpec {
            seed,
            duration_s: 0.2,
            sample_rate_hz: 22_050,
            params: SynthParams::Music(MusicParams::default()),
        })
    }

    fn record(id: &str, tags: Option<Vec<u8>>, domain: Domain) -> TrackRecord {
        TrackRecord {
            id: id.into(),
            source: synth_source(id.len() as u64),
            tags,
            domain,
            split: Split::Train,
            noise_refs: vec![],
        }
    }

    #[test]
    fn empty_manifest_loads_empty() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.jsonl");
        write_manifest(&path, 8, &[]).unwrap();
        assert!(load_manifest(&path).unwrap().is_empty());
    }

    #[test]
    fn round_trip_three_records() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.jsonl");
        let mut recs = vec![
            record("a", Some(vec![1, 0, 0]), Domain::Source),
            record("bb", None, Domain::Target),
            record("ccc", Some(vec![0, 1, 1]), Domain::Target),
        ];
        recs[1].noise_refs = vec!["n1".into()];
        recs[2].source = AudioSource::Path(PathBuf::from("/abs/x.wav"));
        write_manifest(&path, 3, &recs).unwrap();
        assert_eq!(load_manifest(&path).unwrap(), recs);
    }

    #[test]
    fn wrong_tag_dimension_names_the_record() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.jsonl");
        let header = serde_json::to_string(&ManifestHeader::tracks(50)).unwrap();
        let rec =
            serde_json::to_string(&record("short", Some(vec![0; 49]), Domain::Source)).unwrap();
        fs::write(&path, format!("{header}\n{rec}\n")).unwrap();
        match load_manifest(&path) {
            Err(CorpusError::InvariantViolation { id, .. }) => assert_eq!(id, "short"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.jsonl");
        let header = serde_json::to_string(&ManifestHeader::tracks(3)).unwrap();
        let good = serde_json::to_string(&record("a", None, Domain::Source)).unwrap();
        fs::write(&path, format!("{header}\n{good}\n{{not json\n")).unwrap();
        assert!(matches!(
            load_manifest(&path),
            Err(CorpusError::Parse { line: 3, .. })
        ));

        fs::write(&path, format!("{good}\n")).unwrap();
        assert!(matches!(
            load_manifest(&path),
            Err(CorpusError::Parse { line: 1, .. })
        ));

        fs::write(&path, "").unwrap();
        assert!(matches!(
            load_manifest(&path),
            Err(CorpusError::Parse { .. })
        ));
    }

    #[test]
    fn duplicates_and_noisy_sources_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.jsonl");
        let header = serde_json::to_string(&ManifestHeader::tracks(3)).unwrap();
        let a = serde_json::to_string(&record("a", None, Domain::Source)).unwrap();
        fs::write(&path, format!("{header}\n{a}\n{a}\n")).unwrap();
        assert!(matches!(load_manifest(&path), Err(CorpusError::DuplicateId(id)) if id == "a"));

        let mut bad = record("b", None, Domain::Source);
        bad.noise_refs = vec!["n".into()];
        assert!(matches!(
            bad.check(3),
            Err(CorpusError::InvariantViolation { .. })
        ));
        let mut nonbinary = record("c", Some(vec![0, 2, 1]), Domain::Source);
        assert!(nonbinary.check(3).is_err());
        nonbinary.tags = Some(vec![0, 1, 1]);
        assert!(nonbinary.check(3).is_ok());
    }

    #[test]
    fn relative_paths_resolve_against_manifest_dir() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.jsonl");
        let mut r = record("a", None, Domain::Source);
        r.source = AudioSource::Path("audio/a.wav".into());
        write_manifest(&path, 3, &[r]).unwrap();
        let loaded = load_manifest(&path).unwrap();
        assert_eq!(
            loaded[0].source,
            AudioSource::Path(dir.path().join("audio/a.wav"))
        );
    }

    #[test]
    fn settings_follow_their_rules() {
        for name in SettingName::ALL {
            let s = ExperimentSetting::named(name, Some("extra.jsonl".into())).unwrap();
            assert_eq!(
                s.uses_dc,
                matches!(name, SettingName::ProposedA | SettingName::ProposedB)
            );
            assert_eq!(s.target_tagged, name == SettingName::Oracle);
        }
        assert!(ExperimentSetting::named(SettingName::ProposedB, None).is_err());
        let mut s = ExperimentSetting::baseline();
        s.uses_dc = true;
        assert!(s.validate().is_err());
        let mut s = ExperimentSetting::proposed_a();
        s.target_tagged = true;
        assert!(s.validate().is_err());
        assert_eq!(
            "proposed_b".parse::<SettingName>().unwrap(),
            SettingName::ProposedB
        );
    }

    #[test]
    fn condition_grid_and_parsing() {
        let grid = EvalCondition::parse_list("clean,-5,0,5,10").unwrap();
        assert_eq!(grid, EvalCondition::default_grid());
        assert_eq!(grid.iter().filter(|c| c.is_noisy()).count(), 4);
        assert_eq!(
            "-5dB".parse::<EvalCondition>().unwrap(),
            EvalCondition::SnrDb(-5.0)
        );
        assert!("loud".parse::<EvalCondition>().is_err());
        let json = serde_json::to_string(&grid).unwrap();
        assert_eq!(json, r#"["clean","-5dB","0dB","5dB","10dB"]"#);
        assert_eq!(
            serde_json::from_str::<Vec<EvalCondition>>(&json).unwrap(),
            grid
        );
    }
}
