//! Plain-text `key = value` configuration files.
//!
//! Blank lines and text after `#` are ignored. Unknown keys and unparsable
//! values are errors.

use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::harness::ExperimentConfig;
use crate::tta::BaseTta;

/// Help text listing every recognized key.
pub const KEYS_HELP: &str = "\
Config file keys (key = value, # starts a comment):
  seed                 base seed
  hidden               hidden width (32)
  hops                 propagation hops K (9)
  norm                 sym | row (sym)
  nodes                CSBM nodes per graph (5000)
  dim                  CSBM feature dimension (2000)
  train.lr             pretraining learning rate (0.05)
  train.epochs         pretraining epochs (500)
  train.weight_decay   pretraining L2 penalty (0.1)
  train.patience       early-stopping patience (50)
  adapt.lr             hop-weight learning rate (0.5)
  adapt.epochs         adaptation epochs (50)
  adapt.loss           pic | entropy | pseudo | diff (pic)
  adapt.base           erm | tent | t3a (erm)
  adapt.persist_base   keep the tent normalization between epochs (false)
  tent.steps           entropy steps per call (10)
  tent.lr              entropy step size (0.05)
  t3a.keep             supports kept per class (100)";

#[derive(Debug, Clone, PartialEq)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub experiment: ExperimentConfig,
    base_name: String,
}

impl Default for FileConfig {
    fn default() -> Self {
        Self {
            seed: None,
            experiment: ExperimentConfig::default(),
            base_name: "erm".into(),
        }
    }
}

fn value<T: FromStr>(key: &str, raw: &str, line: usize) -> Result<T> {
    raw.parse()
        .map_err(|_| Error::InvalidParameter(format!("line {line}: bad value `{raw}` for `{key}`")))
}

impl FileConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut c = FileConfig::default();
        for (idx, raw_line) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw_line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, raw) = line
                .split_once('=')
                .ok_or_else(|| Error::InvalidParameter(format!("line {line_no}: expected key = value")))?;
            let (key, raw) = (key.trim(), raw.trim());
            let e = &mut c.experiment;
            match key {
                "seed" => c.seed = Some(value(key, raw, line_no)?),
                "hidden" => e.hidden = value(key, raw, line_no)?,
                "hops" => e.hops = value(key, raw, line_no)?,
                "norm" => e.normalization = value(key, raw, line_no)?,
                "nodes" => e.num_nodes = value(key, raw, line_no)?,
                "dim" => e.dim = value(key, raw, line_no)?,
                "train.lr" => e.train.learning_rate = value(key, raw, line_no)?,
                "train.epochs" => e.train.epochs = value(key, raw, line_no)?,
                "train.weight_decay" => e.train.weight_decay = value(key, raw, line_no)?,
                "train.patience" => e.train.patience = value(key, raw, line_no)?,
                "adapt.lr" => e.adapt.learning_rate = value(key, raw, line_no)?,
                "adapt.epochs" => e.adapt.epochs = value(key, raw, line_no)?,
                "adapt.loss" => e.adapt.loss = value(key, raw, line_no)?,
                "adapt.base" => c.base_name = raw.to_owned(),
                "adapt.persist_base" => e.adapt.persist_base_tta = value(key, raw, line_no)?,
                "tent.steps" => e.tent_steps = value(key, raw, line_no)?,
                "tent.lr" => e.tent_lr = value(key, raw, line_no)?,
                "t3a.keep" => e.t3a_keep = value(key, raw, line_no)?,
                other => {
                    return Err(Error::InvalidParameter(format!("line {line_no}: unknown key `{other}`")))
                }
            }
        }
        c.resolve_base()?;
        c.experiment.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Selects the base routine by name using the current variant options.
    pub fn set_base(&mut self, name: &str) -> Result<()> {
        self.base_name = name.to_owned();
        self.resolve_base()
    }

    /// Re-derives the adaptation base after variant options changed.
    pub fn resolve_base(&mut self) -> Result<()> {
        let e = &mut self.experiment;
        e.adapt.base = BaseTta::parse(&self.base_name, e.tent_steps, e.tent_lr, e.t3a_keep)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Normalization;
    use crate::losses::LossKind;

    #[test]
    fn empty_file_gives_defaults() {
        let c = FileConfig::parse("# nothing\n\n").unwrap();
        assert_eq!(c.experiment, ExperimentConfig::default());
        assert_eq!(c.seed, None);
    }

    #[test]
    fn keys_are_applied() {
        let c = FileConfig::parse(
            "seed = 7\nhops=4 # fewer\nnorm = row\nadapt.loss = entropy\nadapt.base = tent\ntent.steps = 3\n",
        )
        .unwrap();
        assert_eq!(c.seed, Some(7));
        assert_eq!(c.experiment.hops, 4);
        assert_eq!(c.experiment.normalization, Normalization::Row);
        assert_eq!(c.experiment.adapt.loss, LossKind::Entropy);
        assert!(matches!(c.experiment.adapt.base, BaseTta::Tent { steps: 3, .. }));
    }

    #[test]
    fn errors_are_reported() {
        assert!(FileConfig::parse("colour = blue").is_err());
        assert!(FileConfig::parse("hops = many").is_err());
        assert!(FileConfig::parse("just a line").is_err());
        assert!(FileConfig::parse("adapt.epochs = 0").is_err());
    }
}
