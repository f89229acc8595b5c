//! Watermark-removal attacks against the composite: fine-tuning, magnitude
//! pruning and input preprocessing, plus a grid runner.

mod finetune;
mod preprocess;
mod prune;

pub use finetune::{finetune_attack, FinetuneMode};
pub use preprocess::{preprocess_input, PreprocessOp, PreprocessedOracle};
pub use prune::{prunable_count, prune, prune_slice, PruneScope};

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::fusion::{FusedModel, LabelOracle};
use crate::report::{fmt_f64, Csv};
use crate::seed;
use crate::trigger::VerificationSet;
use crate::verify::{effectiveness, oracle_accuracy};

pub const DEFAULT_FINETUNE_EPOCHS: usize = 5;
pub const DEFAULT_FINETUNE_LR: f64 = 0.001;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AttackKind {
    Finetune {
        mode: FinetuneMode,
        #[serde(default = "default_epochs")]
        epochs: usize,
        #[serde(default = "default_lr")]
        lr: f64,
    },
    Prune {
        rate: f64,
        #[serde(default)]
        scope: PruneScope,
    },
    Preprocess {
        #[serde(flatten)]
        op: PreprocessOp,
    },
}

fn default_epochs() -> usize {
    DEFAULT_FINETUNE_EPOCHS
}
fn default_lr() -> f64 {
    DEFAULT_FINETUNE_LR
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackConfig {
    #[serde(flatten)]
    pub kind: AttackKind,
    #[serde(default)]
    pub seed: u64,
}

impl AttackConfig {
    pub fn new(kind: AttackKind) -> Self {
        AttackConfig { kind, seed: 0 }
    }

    pub fn prune(rate: f64) -> Self {
        Self::new(AttackKind::Prune {
            rate,
            scope: PruneScope::Global,
        })
    }

    pub fn preprocess(op: PreprocessOp) -> Self {
        Self::new(AttackKind::Preprocess { op })
    }

    pub fn finetune(mode: FinetuneMode) -> Self {
        Self::new(AttackKind::Finetune {
            mode,
            epochs: DEFAULT_FINETUNE_EPOCHS,
            lr: DEFAULT_FINETUNE_LR,
        })
    }

    pub fn validate(&self) -> Result<()> {
        match &self.kind {
            AttackKind::Prune { rate, .. } if !(0.0..=1.0).contains(rate) => {
                Err(Error::InvalidParameter(format!("pruning rate {rate} outside [0, 1]")))
            }
            AttackKind::Finetune { lr, .. } if !lr.is_finite() || *lr <= 0.0 => {
                Err(Error::InvalidParameter(format!("learning rate {lr}")))
            }
            AttackKind::Preprocess { op } => op.validate(),
            _ => Ok(()),
        }
    }

    /// Short attack name for tables.
    pub fn label(&self) -> String {
        match &self.kind {
            AttackKind::Finetune { mode, .. } => format!("finetune-{}", mode.name()),
            AttackKind::Prune { .. } => "prune".into(),
            AttackKind::Preprocess { op } => op.label().into(),
        }
    }

    /// Parameters as `key=value` pairs separated by `;`.
    pub fn params(&self) -> String {
        match &self.kind {
            AttackKind::Finetune { epochs, lr, .. } => format!("epochs={epochs};lr={lr}"),
            AttackKind::Prune { rate, scope } => format!(
                "rate={rate};scope={}",
                match scope {
                    PruneScope::Global => "global",
                    PruneScope::PerLayer => "per-layer",
                }
            ),
            AttackKind::Preprocess { op } => match op {
                PreprocessOp::Blur { kernel } => format!("kernel={kernel}"),
                PreprocessOp::Rotate { degrees } => format!("degrees={degrees}"),
                PreprocessOp::Scale { factor } => format!("factor={factor}"),
                PreprocessOp::Relight { gamma, amplitude } => format!("gamma={gamma};amplitude={amplitude}"),
            },
        }
    }
}

/// Data available to the attacker.
#[derive(Debug, Clone, Copy)]
pub struct AttackData<'a> {
    /// Benign data in the target's label space.
    pub finetune: &'a Dataset,
    /// Train and test splits of a dataset with a different label space.
    pub transfer: Option<(&'a Dataset, &'a Dataset)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    /// Benign accuracy of the attacked model on the relevant test set.
    pub accuracy: f64,
    pub effectiveness: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessCell {
    /// `None` for the unattacked baseline.
    pub config: Option<AttackConfig>,
    pub label: String,
    pub params: String,
    pub result: Option<CellResult>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessReport {
    pub baseline: RobustnessCell,
    pub cells: Vec<RobustnessCell>,
    pub vset_hash: String,
    pub test_hash: String,
    pub target_hash: String,
    pub ptynet_hash: String,
}

impl RobustnessReport {
    pub fn csv(&self) -> Csv {
        let mut csv = Csv::new(&["attack", "params", "status", "accuracy", "effectiveness"]);
        for cell in std::iter::once(&self.baseline).chain(&self.cells) {
            let (status, acc, eff) = match &cell.result {
                Some(r) => ("ok".to_string(), fmt_f64(r.accuracy), fmt_f64(r.effectiveness)),
                None => (
                    format!("failed: {}", cell.error.as_deref().unwrap_or("")),
                    String::new(),
                    String::new(),
                ),
            };
            csv.push(vec![cell.label.clone(), cell.params.clone(), status, acc, eff]);
        }
        csv
    }

    pub fn hash(&self) -> String {
        crate::report::json_hash(self).expect("report serializes")
    }

    /// Result of the first cell whose config equals `config`.
    pub fn find(&self, config: &AttackConfig) -> Option<&CellResult> {
        self.cells
            .iter()
            .find(|c| c.config.as_ref() == Some(config))
            .and_then(|c| c.result.as_ref())
    }
}

fn measure(oracle: &dyn LabelOracle, vset: &VerificationSet, test: &Dataset) -> Result<CellResult> {
    Ok(CellResult {
        accuracy: oracle_accuracy(oracle, test)?,
        effectiveness: effectiveness(oracle, vset)?.success_rate,
    })
}

/// Run one attack and measure the attacked composite.
pub fn run_attack(
    fm: &FusedModel,
    cfg: &AttackConfig,
    vset: &VerificationSet,
    test: &Dataset,
    data: AttackData<'_>,
    cell_seed: u64,
) -> Result<CellResult> {
    cfg.validate()?;
    match &cfg.kind {
        AttackKind::Preprocess { op } => {
            let inner = fm.as_oracle();
            let oracle = PreprocessedOracle::new(&inner, *op, cell_seed)?;
            measure(&oracle, vset, test)
        }
        AttackKind::Prune { rate, scope } => {
            let attacked = prune(fm, *rate, *scope)?;
            measure(&attacked.as_oracle(), vset, test)
        }
        AttackKind::Finetune { mode, epochs, lr } => {
            let (train_set, eval_set) = match mode {
                FinetuneMode::Transfer => data
                    .transfer
                    .ok_or_else(|| Error::InvalidParameter("transfer attack needs a transfer dataset".into()))?,
                _ => (data.finetune, test),
            };
            let attacked = finetune_attack(fm, *mode, *epochs, *lr, train_set, cell_seed)?;
            measure(&attacked.as_oracle(), vset, eval_set)
        }
    }
}

/// Run every attack in `grid`. A failing cell records its error and the
/// grid continues.
pub fn run_attack_grid(
    fm: &FusedModel,
    vset: &VerificationSet,
    test: &Dataset,
    data: AttackData<'_>,
    grid: &[AttackConfig],
) -> Result<RobustnessReport> {
    if grid.is_empty() {
        return Err(Error::Empty("attack grid"));
    }
    let baseline = measure(&fm.as_oracle(), vset, test)?;
    let cells = grid
        .iter()
        .enumerate()
        .map(|(i, cfg)| {
            let cell_seed = seed::derive(cfg.seed, "attack-cell", i as u64);
            let outcome = run_attack(fm, cfg, vset, test, data, cell_seed);
            RobustnessCell {
                config: Some(cfg.clone()),
                label: cfg.label(),
                params: cfg.params(),
                error: outcome.as_ref().err().map(|e| e.to_string()),
                result: outcome.ok(),
            }
        })
        .collect();
    Ok(RobustnessReport {
        baseline: RobustnessCell {
            config: None,
            label: "none".into(),
            params: String::new(),
            result: Some(baseline),
            error: None,
        },
        cells,
        vset_hash: vset.content_hash(),
        test_hash: test.content_hash(),
        target_hash: fm.target().param_hash(),
        ptynet_hash: fm.ptynet().param_hash(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_serde_round_trip() {
        let grid = vec![
            AttackConfig::prune(0.3),
            AttackConfig::preprocess(PreprocessOp::Blur { kernel: 3 }),
            AttackConfig::finetune(FinetuneMode::Rtll),
            AttackConfig::preprocess(PreprocessOp::Relight { gamma: 0.9, amplitude: 0.1 }),
        ];
        let text = serde_json::to_string(&grid).unwrap();
        assert!(text.contains(r#""kind":"preprocess","op":"blur","kernel":3"#), "{text}");
        let back: Vec<AttackConfig> = serde_json::from_str(&text).unwrap();
        assert_eq!(back, grid);
        let minimal: AttackConfig = serde_json::from_str(r#"{"kind":"finetune","mode":"ftal"}"#).unwrap();
        assert_eq!(minimal, AttackConfig::finetune(FinetuneMode::Ftal));
    }

    #[test]
    fn validation() {
        assert!(AttackConfig::prune(1.2).validate().is_err());
        assert!(AttackConfig::preprocess(PreprocessOp::Blur { kernel: 2 }).validate().is_err());
        assert!(AttackConfig::prune(0.0).validate().is_ok());
    }
}
