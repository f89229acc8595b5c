//! End-to-end experiment: configuration, the individual stages, and a
//! runner that writes every artifact under one output directory.
//!
//! Every stage seed is derived from the single master seed, so a rerun
//! with the same configuration reproduces every report byte for byte.
//! Reports never contain wall-clock measurements; only the benchmark does.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::attacks::{
    run_attack_grid, AttackConfig, AttackData, FinetuneMode, PreprocessOp, RobustnessReport,
};
use crate::baseline::{bench_efficiency, embed_pattern_watermark, BenchConfig, BenchTarget, EfficiencyReport, PatternSpec};
use crate::data::{gen_shapescape, load_dataset, save_dataset, BenignFamily, Dataset, PoisonConfig, ShapeScapeConfig};
use crate::error::{Error, Result};
use crate::fusion::{inject, FusedModel, NetworkOracle};
use crate::image::Image;
use crate::models::TargetArch;
use crate::nn::{self, Augment, EpochStats, Network, TrainConfig};
use crate::ptynet::{
    self, poison_set_for_key, silence_report, PtyNetConfig, PtyNetReport, Sidecar, SilenceReport, TrainedPtyNet,
};
use crate::report::{json_hash, write_json};
use crate::seed;
use crate::trigger::{make_key, make_verification_set, BlendMode, KeyConfig, StrategyKind, VerificationKey, VerificationSet};
use crate::verify::{
    effectiveness, fidelity_report, ownership_decision, EffectivenessReport, FidelityReport, OwnershipDecision,
    DEFAULT_P_MAX, DEFAULT_THETA,
};

pub const SCHEMA: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema: u32,
    #[serde(default)]
    pub seed: u64,
    pub dataset: DatasetSection,
    #[serde(default)]
    pub target: TargetSection,
    #[serde(default)]
    pub key: KeySection,
    #[serde(default)]
    pub ptynet: PtyNetSection,
    #[serde(default)]
    pub poison: PoisonSection,
    #[serde(default)]
    pub verify: VerifySection,
    #[serde(default)]
    pub attack: AttackSection,
    #[serde(default)]
    pub baseline: BaselineSection,
    #[serde(default)]
    pub bench: BenchSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSection {
    pub classes: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub height: usize,
    pub width: usize,
}

impl Default for DatasetSection {
    fn default() -> Self {
        DatasetSection {
            classes: 8,
            n_train: 4000,
            n_test: 1000,
            height: 32,
            width: 32,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TargetSection {
    pub arch: TargetArch,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub augment: Augment,
    pub label_smoothing: f64,
}

impl Default for TargetSection {
    fn default() -> Self {
        TargetSection {
            arch: TargetArch::SmallCnn,
            epochs: 30,
            lr: 0.001,
            batch_size: 64,
            augment: Augment::default(),
            label_smoothing: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KeySection {
    pub strategy: StrategyKind,
    pub watermark_classes: usize,
    pub pool_size: usize,
    pub mapping: Option<Vec<usize>>,
    pub alpha: f64,
    pub blend: BlendMode,
}

impl Default for KeySection {
    fn default() -> Self {
        KeySection {
            strategy: StrategyKind::Search,
            watermark_classes: 3,
            pool_size: crate::trigger::DEFAULT_POOL,
            mapping: None,
            alpha: 1.0,
            blend: BlendMode::Replace,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PtyNetSection {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub holdout_fraction: f64,
}

impl Default for PtyNetSection {
    fn default() -> Self {
        let d = PtyNetConfig::new(1, 0);
        PtyNetSection {
            epochs: d.epochs,
            lr: d.lr,
            batch_size: d.batch_size,
            holdout_fraction: d.holdout_fraction,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PoisonSection {
    pub n_trigger: usize,
    pub n_wild: usize,
    pub wild_foreground: f64,
}

impl Default for PoisonSection {
    fn default() -> Self {
        let d = PoisonConfig::default();
        PoisonSection {
            n_trigger: d.n_trigger,
            n_wild: d.n_wild,
            wild_foreground: d.wild_foreground,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifySection {
    pub n: usize,
    pub theta: f64,
    pub p_max: f64,
}

impl Default for VerifySection {
    fn default() -> Self {
        VerifySection {
            n: 200,
            theta: DEFAULT_THETA,
            p_max: DEFAULT_P_MAX,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransferSection {
    pub classes: usize,
    /// First shape of the variant dataset's vocabulary.
    pub shape_offset: usize,
    pub n_train: usize,
    pub n_test: usize,
}

impl Default for TransferSection {
    fn default() -> Self {
        TransferSection {
            classes: 4,
            shape_offset: 4,
            n_train: 2000,
            n_test: 500,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttackSection {
    pub grid: Vec<AttackConfig>,
    /// Size of the attacker's own benign dataset.
    pub attacker_samples: usize,
    pub transfer: TransferSection,
}

impl Default for AttackSection {
    fn default() -> Self {
        AttackSection {
            grid: default_grid(),
            attacker_samples: 2000,
            transfer: TransferSection::default(),
        }
    }
}

/// Pruning and blur sweeps, small rotations and rescales, relighting and
/// the three fine-tuning modes.
pub fn default_grid() -> Vec<AttackConfig> {
    let mut grid: Vec<AttackConfig> = (0..10).map(|i| AttackConfig::prune(i as f64 / 10.0)).collect();
    for k in [1, 3, 5, 7] {
        grid.push(AttackConfig::preprocess(PreprocessOp::Blur { kernel: k }));
    }
    for d in [0.0, 5.0, 10.0, 15.0] {
        grid.push(AttackConfig::preprocess(PreprocessOp::Rotate { degrees: d }));
    }
    for f in [0.9, 1.0, 1.1] {
        grid.push(AttackConfig::preprocess(PreprocessOp::Scale { factor: f }));
    }
    for (gamma, amplitude) in [(1.0, 0.0), (0.8, 0.1), (1.2, 0.2)] {
        grid.push(AttackConfig::preprocess(PreprocessOp::Relight { gamma, amplitude }));
    }
    for mode in [FinetuneMode::Rtll, FinetuneMode::Ftal, FinetuneMode::Transfer] {
        grid.push(AttackConfig::finetune(mode));
    }
    grid
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineSection {
    pub epochs: usize,
    pub lr: f64,
    pub fraction: f64,
    pub label: usize,
}

impl Default for BaselineSection {
    fn default() -> Self {
        BaselineSection {
            epochs: 5,
            lr: 0.001,
            fraction: 0.1,
            label: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchSection {
    /// Additional targets after the trained one; these start untrained.
    pub extra_models: Vec<TargetArch>,
}

impl Default for BenchSection {
    fn default() -> Self {
        BenchSection {
            extra_models: vec![TargetArch::WideCnn, TargetArch::Mlp, TargetArch::SmallCnn],
        }
    }
}

impl ExperimentConfig {
    /// All defaults with the given master seed.
    pub fn default_with_seed(seed: u64) -> Self {
        ExperimentConfig {
            schema: SCHEMA,
            seed,
            dataset: DatasetSection::default(),
            target: TargetSection::default(),
            key: KeySection::default(),
            ptynet: PtyNetSection::default(),
            poison: PoisonSection::default(),
            verify: VerifySection::default(),
            attack: AttackSection::default(),
            baseline: BaselineSection::default(),
            bench: BenchSection::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema != SCHEMA {
            return Err(Error::InvalidParameter(format!(
                "schema: expected {SCHEMA}, found {}",
                self.schema
            )));
        }
        if self.verify.n == 0 {
            return Err(Error::InvalidParameter("verify.n: must be at least 1".into()));
        }
        if self.attack.grid.is_empty() {
            return Err(Error::InvalidParameter("attack.grid: must not be empty".into()));
        }
        for (i, a) in self.attack.grid.iter().enumerate() {
            a.validate()
                .map_err(|e| Error::InvalidParameter(format!("attack.grid[{i}]: {e}")))?;
        }
        Ok(())
    }

    pub fn hash(&self) -> String {
        json_hash(self).expect("config serializes")
    }

    fn derive(&self, tag: &str) -> u64 {
        seed::derive(self.seed, tag, 0)
    }

    pub fn shapescape(&self) -> ShapeScapeConfig {
        ShapeScapeConfig {
            classes: self.dataset.classes,
            n_train: self.dataset.n_train,
            n_test: self.dataset.n_test,
            height: self.dataset.height,
            width: self.dataset.width,
            families: BenignFamily::ALL.to_vec(),
            shape_offset: 0,
        }
    }

    pub fn key_config(&self) -> KeyConfig {
        KeyConfig {
            strategy: self.key.strategy,
            watermark_classes: self.key.watermark_classes,
            pool_size: self.key.pool_size,
            mapping: self.key.mapping.clone(),
            alpha: self.key.alpha,
            blend: self.key.blend,
            height: self.dataset.height,
            width: self.dataset.width,
            seed: self.derive("key"),
        }
    }

    pub fn poison_config(&self) -> PoisonConfig {
        PoisonConfig {
            n_trigger: self.poison.n_trigger,
            n_wild: self.poison.n_wild,
            wild_foreground: self.poison.wild_foreground,
            seed: self.derive("poison"),
        }
    }

    pub fn ptynet_config(&self, watermark_classes: usize) -> PtyNetConfig {
        PtyNetConfig {
            watermark_classes,
            layers: None,
            epochs: self.ptynet.epochs,
            lr: self.ptynet.lr,
            batch_size: self.ptynet.batch_size,
            holdout_fraction: self.ptynet.holdout_fraction,
            height: self.dataset.height,
            width: self.dataset.width,
            seed: self.derive("ptynet"),
        }
    }

    pub fn target_train_config(&self) -> TrainConfig {
        let mut c = TrainConfig::adam(self.target.epochs, self.target.lr, self.derive("target-train"));
        c.batch_size = self.target.batch_size;
        c.augment = self.target.augment;
        c.label_smoothing = self.target.label_smoothing;
        c
    }

    pub fn vset_seed(&self) -> u64 {
        self.derive("verification")
    }
}

// ---- stages ----

pub fn gen_data(cfg: &ExperimentConfig) -> Result<(Dataset, Dataset)> {
    gen_shapescape(&cfg.shapescape(), cfg.derive("data"))
}

pub fn train_target(cfg: &ExperimentConfig, train: &Dataset) -> Result<nn::Trained> {
    let d = &cfg.dataset;
    let net = cfg.target.arch.build(d.height, d.width, d.classes, cfg.derive("target"))?;
    nn::train(net, train, &cfg.target_train_config())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetReport {
    pub config_hash: String,
    pub data_hash: String,
    pub target_hash: String,
    pub test_accuracy: f64,
    pub history: Vec<EpochStats>,
}

pub fn target_report(cfg: &ExperimentConfig, trained: &nn::Trained, train: &Dataset, test: &Dataset) -> Result<TargetReport> {
    Ok(TargetReport {
        config_hash: cfg.hash(),
        data_hash: data_hash(train, test),
        target_hash: trained.net.param_hash(),
        test_accuracy: nn::accuracy(&trained.net, test)?,
        history: trained.history.clone(),
    })
}

pub fn data_hash(train: &Dataset, test: &Dataset) -> String {
    seed::sha256_hex(format!("{}{}", train.content_hash(), test.content_hash()).as_bytes())
}

pub fn create_key(cfg: &ExperimentConfig, train: &Dataset) -> Result<VerificationKey> {
    make_key(&cfg.key_config(), Some(&train.provenance))
}

pub fn train_ptynet_for_key(cfg: &ExperimentConfig, key: &VerificationKey) -> Result<TrainedPtyNet> {
    let poison = poison_set_for_key(key, &cfg.poison_config())?;
    ptynet::train_ptynet(&cfg.ptynet_config(key.watermark_classes()), &poison)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PtyNetStageReport {
    pub config_hash: String,
    pub key_hash: String,
    pub ptynet_hash: String,
    #[serde(flatten)]
    pub training: PtyNetReport,
}

pub fn ptynet_report(cfg: &ExperimentConfig, key: &VerificationKey, pty: &TrainedPtyNet) -> PtyNetStageReport {
    PtyNetStageReport {
        config_hash: cfg.hash(),
        key_hash: key.hash(),
        ptynet_hash: pty.net.param_hash(),
        training: pty.report.clone(),
    }
}

pub fn verification_set(cfg: &ExperimentConfig, key: &VerificationKey, test: &Dataset) -> Result<VerificationSet> {
    make_verification_set(test, key, cfg.verify.n, cfg.vset_seed())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub config_hash: String,
    pub key_hash: String,
    pub target_hash: String,
    pub ptynet_hash: String,
    pub fidelity: FidelityReport,
    pub effectiveness: EffectivenessReport,
    /// The unwatermarked target on the same verification samples.
    pub original_effectiveness: EffectivenessReport,
    pub decision: OwnershipDecision,
    /// Watermark network on the benign test images.
    pub silence: SilenceReport,
}

pub fn verify_stage(
    cfg: &ExperimentConfig,
    fm: &FusedModel,
    original: &Network,
    key: &VerificationKey,
    test: &Dataset,
) -> Result<VerifyReport> {
    let vset = verification_set(cfg, key, test)?;
    let orig = NetworkOracle::new(original);
    let fused = fm.as_oracle();
    let eff = effectiveness(&fused, &vset)?;
    let decision = ownership_decision(&eff, fm.classes(), cfg.verify.theta, cfg.verify.p_max)?;
    let images: Vec<&Image> = test.samples.iter().map(|s| &s.image).collect();
    Ok(VerifyReport {
        config_hash: cfg.hash(),
        key_hash: key.hash(),
        target_hash: fm.target().param_hash(),
        ptynet_hash: fm.ptynet().param_hash(),
        fidelity: fidelity_report(&orig, &fused, test)?,
        original_effectiveness: effectiveness(&orig, &vset)?,
        effectiveness: eff,
        decision,
        silence: silence_report(fm.ptynet(), &images)?,
    })
}

/// The attacker's benign data and the label-space variant used for the
/// transfer attack, generated on streams disjoint from the owner's data.
pub fn attacker_data(cfg: &ExperimentConfig) -> Result<(Dataset, (Dataset, Dataset))> {
    let mut own = cfg.shapescape();
    own.n_train = cfg.attack.attacker_samples;
    own.n_test = 0;
    let (finetune, _) = gen_shapescape(&own, cfg.derive("attacker"))?;
    let t = &cfg.attack.transfer;
    let variant = ShapeScapeConfig {
        classes: t.classes,
        shape_offset: t.shape_offset,
        n_train: t.n_train,
        n_test: t.n_test,
        ..cfg.shapescape()
    };
    let transfer = gen_shapescape(&variant, cfg.derive("transfer"))?;
    Ok((finetune, transfer))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackReport {
    pub config_hash: String,
    pub key_hash: String,
    pub robustness: RobustnessReport,
}

pub fn attack_stage(
    cfg: &ExperimentConfig,
    fm: &FusedModel,
    key: &VerificationKey,
    test: &Dataset,
) -> Result<AttackReport> {
    let vset = verification_set(cfg, key, test)?;
    let (finetune, (tr, te)) = attacker_data(cfg)?;
    let data = AttackData {
        finetune: &finetune,
        transfer: Some((&tr, &te)),
    };
    let grid: Vec<AttackConfig> = cfg
        .attack
        .grid
        .iter()
        .map(|a| AttackConfig {
            seed: if a.seed == 0 { cfg.derive("attack") } else { a.seed },
            ..a.clone()
        })
        .collect();
    Ok(AttackReport {
        config_hash: cfg.hash(),
        key_hash: key.hash(),
        robustness: run_attack_grid(fm, &vset, test, data, &grid)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineReport {
    pub config_hash: String,
    pub target_hash_before: String,
    pub target_hash_after: String,
    pub poisoned_samples: usize,
    pub fidelity: FidelityReport,
    pub effectiveness: EffectivenessReport,
}

pub fn baseline_stage(cfg: &ExperimentConfig, target: &Network, train: &Dataset, test: &Dataset) -> Result<BaselineReport> {
    let b = &cfg.baseline;
    let mut spec = PatternSpec::new(b.label);
    spec.fraction = b.fraction;
    let ft = TrainConfig::adam(b.epochs, b.lr, cfg.derive("baseline"));
    let wm = embed_pattern_watermark(target, train, test, &spec, &ft, cfg.verify.n)?;
    Ok(BaselineReport {
        config_hash: cfg.hash(),
        target_hash_before: target.param_hash(),
        target_hash_after: wm.net.param_hash(),
        poisoned_samples: wm.poisoned,
        fidelity: fidelity_report(&NetworkOracle::new(target), &NetworkOracle::new(&wm.net), test)?,
        effectiveness: effectiveness(&NetworkOracle::new(&wm.net), &wm.vset)?,
    })
}

/// Timings are wall-clock and vary between runs; the report is therefore
/// excluded from the pipeline summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub config_hash: String,
    pub target_hash: String,
    pub efficiency: EfficiencyReport,
}

pub fn bench_report(cfg: &ExperimentConfig, target: &Network, train: &Dataset, test: &Dataset) -> Result<BenchReport> {
    Ok(BenchReport {
        config_hash: cfg.hash(),
        target_hash: target.param_hash(),
        efficiency: bench_stage(cfg, target, train, test)?,
    })
}

pub fn bench_stage(cfg: &ExperimentConfig, target: &Network, train: &Dataset, test: &Dataset) -> Result<EfficiencyReport> {
    let d = &cfg.dataset;
    let mut targets = vec![BenchTarget {
        name: format!("{}-trained", cfg.target.arch.name()),
        net: target.clone(),
    }];
    for (i, arch) in cfg.bench.extra_models.iter().enumerate() {
        targets.push(BenchTarget {
            name: format!("{}-{}", arch.name(), i + 1),
            net: arch.build(d.height, d.width, d.classes, seed::derive(cfg.seed, "bench-model", i as u64))?,
        });
    }
    let mut pattern = PatternSpec::new(cfg.baseline.label);
    pattern.fraction = cfg.baseline.fraction;
    let mut key = cfg.key_config();
    key.seed = cfg.derive("bench-key");
    let bc = BenchConfig {
        ptynet: cfg.ptynet_config(if key.strategy == StrategyKind::Fixed { 1 } else { key.watermark_classes }),
        key,
        poison: cfg.poison_config(),
        baseline_epochs: cfg.baseline.epochs,
        baseline_lr: cfg.baseline.lr,
        pattern,
        n_verify: cfg.verify.n,
        seed: cfg.derive("bench"),
    };
    bench_efficiency(&targets, train, test, &bc)
}

// ---- artifacts ----

/// File layout under an output directory.
#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Layout { root: root.into() }
    }
    pub fn train_dir(&self) -> PathBuf {
        self.root.join("data/train")
    }
    pub fn test_dir(&self) -> PathBuf {
        self.root.join("data/test")
    }
    pub fn target(&self) -> PathBuf {
        self.root.join("models/target.ptyw")
    }
    pub fn ptynet(&self) -> PathBuf {
        self.root.join("models/ptynet.ptyw")
    }
    pub fn key(&self) -> PathBuf {
        self.root.join("key.json")
    }
    pub fn fused_dir(&self) -> PathBuf {
        self.root.join("fused")
    }
    pub fn report(&self, name: &str) -> PathBuf {
        self.root.join("reports").join(name)
    }
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    Ok(())
}

pub fn save_target(layout: &Layout, net: &Network) -> Result<()> {
    ensure_parent(&layout.target())?;
    nn::save_weights(net, layout.target())
}

pub fn save_ptynet_artifact(layout: &Layout, pty: &TrainedPtyNet, key: &VerificationKey) -> Result<()> {
    ensure_parent(&layout.ptynet())?;
    ptynet::save_ptynet(
        layout.ptynet(),
        &pty.net,
        &Sidecar {
            watermark_classes: key.watermark_classes(),
            mapping_hint: Some(key.mapping.clone()),
            poison_hash: pty.report.poison_hash.clone(),
            param_hash: pty.net.param_hash(),
        },
    )
}

/// Load the datasets from `layout`, or generate them if absent.
pub fn load_or_gen_data(cfg: &ExperimentConfig, layout: &Layout) -> Result<(Dataset, Dataset)> {
    if layout.train_dir().join("manifest.json").exists() && layout.test_dir().join("manifest.json").exists() {
        Ok((load_dataset(layout.train_dir())?, load_dataset(layout.test_dir())?))
    } else {
        gen_data(cfg)
    }
}

pub fn save_data(layout: &Layout, train: &Dataset, test: &Dataset) -> Result<()> {
    save_dataset(train, layout.train_dir())?;
    save_dataset(test, layout.test_dir())
}

/// A failed stage, named.
#[derive(Debug, thiserror::Error)]
#[error("stage {stage} failed: {error}")]
pub struct StageFailure {
    pub stage: &'static str,
    #[source]
    pub error: Error,
}

trait Stage<T> {
    fn stage(self, name: &'static str) -> std::result::Result<T, StageFailure>;
}

impl<T> Stage<T> for Result<T> {
    fn stage(self, name: &'static str) -> std::result::Result<T, StageFailure> {
        self.map_err(|error| StageFailure { stage: name, error })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineSummary {
    pub config_hash: String,
    pub data_hash: String,
    pub key_hash: String,
    pub target_hash: String,
    pub ptynet_hash: String,
    /// Report file name to SHA-256 of its contents.
    pub reports: BTreeMap<String, String>,
    pub verdict: crate::verify::Verdict,
}

impl PipelineSummary {
    pub fn hash(&self) -> String {
        json_hash(self).expect("summary serializes")
    }
}

fn write_report<T: Serialize>(layout: &Layout, name: &str, value: &T, hashes: &mut BTreeMap<String, String>) -> Result<()> {
    write_json(layout.report(name), value)?;
    hashes.insert(name.to_string(), json_hash(value)?);
    Ok(())
}

/// gen-data → train-target → make-key → train-ptynet → inject → verify →
/// attack → baseline. Artifacts of completed stages stay on disk when a
/// later stage fails.
pub fn run_pipeline(cfg: &ExperimentConfig, out: &Path) -> std::result::Result<PipelineSummary, StageFailure> {
    cfg.validate().stage("config")?;
    let layout = Layout::new(out);
    let mut reports = BTreeMap::new();

    let (train, test) = gen_data(cfg).stage("gen-data")?;
    save_data(&layout, &train, &test).stage("gen-data")?;

    let target = train_target(cfg, &train).stage("train-target")?;
    save_target(&layout, &target.net).stage("train-target")?;
    let tr = target_report(cfg, &target, &train, &test).stage("train-target")?;
    write_report(&layout, "target.json", &tr, &mut reports).stage("train-target")?;
    let target = target.net;

    let key = create_key(cfg, &train).stage("make-key")?;
    key.save(layout.key()).stage("make-key")?;

    let pty = train_ptynet_for_key(cfg, &key).stage("train-ptynet")?;
    save_ptynet_artifact(&layout, &pty, &key).stage("train-ptynet")?;
    write_report(&layout, "ptynet.json", &ptynet_report(cfg, &key, &pty), &mut reports).stage("train-ptynet")?;

    let fm = inject(target.clone(), pty.net.clone(), &key.mapping, key.alpha).stage("inject")?;
    fm.save(layout.fused_dir()).stage("inject")?;

    let verify = verify_stage(cfg, &fm, &target, &key, &test).stage("verify")?;
    write_report(&layout, "verify.json", &verify, &mut reports).stage("verify")?;

    let attack = attack_stage(cfg, &fm, &key, &test).stage("attack")?;
    write_report(&layout, "attack.json", &attack, &mut reports).stage("attack")?;
    attack.robustness.csv().write(layout.report("attack.csv")).stage("attack")?;

    let baseline = baseline_stage(cfg, &target, &train, &test).stage("baseline")?;
    write_report(&layout, "baseline.json", &baseline, &mut reports).stage("baseline")?;

    let summary = PipelineSummary {
        config_hash: cfg.hash(),
        data_hash: data_hash(&train, &test),
        key_hash: key.hash(),
        target_hash: target.param_hash(),
        ptynet_hash: pty.net.param_hash(),
        reports,
        verdict: verify.decision.verdict,
    };
    write_json(layout.report("summary.json"), &summary).stage("report")?;
    Ok(summary)
}
