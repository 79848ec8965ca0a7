use std::fs;
use std::path::{Path, PathBuf};

use devimplicit::eval::EvalConfig;
use devimplicit::mesher::MeshingConfig;
use devimplicit::mlp::NetworkConfig;
use devimplicit::regularizers::{RegularizerConfig, RegularizerKind};
use devimplicit::sampling::SamplingConfig;
use devimplicit::trainer::TrainingConfig;
use devimplicit::Error;
use serde::{Deserialize, Serialize};

use crate::cli::Overrides;

/// One JSON document configuring every stage. All sections are optional.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Oriented point cloud (`.xyz`, `.obj` or `.ply`).
    pub input: Option<PathBuf>,
    /// Ground truth for `eval`, `sweep` and `noise`: a mesh or a cloud.
    /// Defaults to `input`.
    pub reference: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
    /// Map the cloud into the unit box before sampling.
    #[serde(default = "yes")]
    pub normalize: bool,
    pub network: NetworkConfig,
    pub sampling: SamplingConfig,
    pub training: TrainingConfig,
    pub meshing: MeshingConfig,
    pub eval: EvalConfig,
}

fn yes() -> bool {
    true
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, Error> {
        let text = fs::read_to_string(path).map_err(|e| Error::Io { path: path.into(), source: e })?;
        serde_json::from_str(&text).map_err(|e| Error::Json { path: path.into(), source: e })
    }

    pub fn load_or_default(path: Option<&Path>) -> Result<Self, Error> {
        match path {
            Some(p) => Self::load(p),
            None => Ok(Self { normalize: true, ..Self::default() }),
        }
    }

    pub fn apply(&mut self, o: &Overrides) -> Result<(), Error> {
        if let Some(p) = &o.input {
            self.input = Some(p.clone());
        }
        if let Some(p) = &o.out_dir {
            self.output_dir = Some(p.clone());
        }
        if let Some(s) = o.seed {
            self.network.seed = s;
            self.sampling.seed = s;
            self.training.seed = s;
            self.eval.seed = s;
        }
        let t = &mut self.training;
        if let Some(e) = o.epochs_fit {
            t.max_epochs_fit = e;
        }
        if let Some(e) = o.epochs_finetune {
            t.max_epochs_finetune = e;
        }
        if let Some(lr) = o.lr_fit {
            t.lr_fit = lr;
        }
        if let Some(lr) = o.lr_finetune {
            t.lr_finetune = lr;
        }
        if let Some(b) = o.batch_size {
            t.batch_size = b;
        }
        if let Some(r) = o.resolution {
            self.meshing.resolution = r;
        }
        if let Some(n) = o.eval_samples {
            self.eval.samples = n;
            self.eval.curvature_samples = n;
        }
        match (o.reg.as_deref(), o.lambda, self.training.reg.as_mut()) {
            (None, None, _) => {}
            (kind, lambda, Some(reg)) => {
                if let Some(k) = kind {
                    reg.kind = k.parse()?;
                }
                if let Some(l) = lambda {
                    reg.lambda = l;
                }
            }
            (kind, Some(lambda), None) => {
                let kind = kind.map(str::parse).transpose()?.unwrap_or(RegularizerKind::Hdet);
                self.training.reg = Some(RegularizerConfig::new(kind, lambda));
            }
            (Some(k), None, None) => {
                return Err(Error::Config(format!(
                    "regularizer `{k}` given without a weight; pass --lambda or set training.reg.lambda"
                )))
            }
        }
        self.validate()
    }

    pub fn validate(&self) -> Result<(), Error> {
        self.network.validate()?;
        self.sampling.validate()?;
        self.training.validate()?;
        self.meshing.validate()?;
        if self.eval.samples == 0 || self.eval.curvature_samples == 0 {
            return Err(Error::Config("eval sample counts must be positive".into()));
        }
        Ok(())
    }

    pub fn input(&self) -> Result<&Path, Error> {
        self.input
            .as_deref()
            .ok_or_else(|| Error::Config("no input cloud: set `input` in the config or pass --input".into()))
    }

    pub fn reference(&self) -> Result<&Path, Error> {
        match &self.reference {
            Some(p) => Ok(p),
            None => self.input(),
        }
    }

    pub fn output_dir(&self) -> Result<PathBuf, Error> {
        let dir = self.output_dir.clone().unwrap_or_else(|| PathBuf::from("."));
        fs::create_dir_all(&dir).map_err(|e| Error::Io { path: dir.clone(), source: e })?;
        Ok(dir)
    }

    /// Fine-tuning requires an explicit regularizer weight.
    pub fn regularizer(&self) -> Result<RegularizerConfig, Error> {
        self.training.reg.ok_or_else(|| {
            Error::Config("fine-tuning needs a regularizer weight: pass --lambda or set training.reg".into())
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_is_all_defaults() {
        let c: RunConfig = serde_json::from_str("{}").unwrap();
        assert!(c.normalize);
        assert_eq!(c.network, NetworkConfig::default());
        assert_eq!(c.training, TrainingConfig::default());
    }

    #[test]
    fn unknown_keys_are_rejected_at_every_level() {
        for doc in [r#"{"inptu": "a.xyz"}"#, r#"{"training": {"lr": 1}}"#, r#"{"network": {"depht": 2}}"#] {
            assert!(serde_json::from_str::<RunConfig>(doc).is_err(), "{doc}");
        }
    }

    #[test]
    fn partial_sections_merge_with_defaults() {
        let c: RunConfig =
            serde_json::from_str(r#"{"network": {"width": 32}, "training": {"reg": {"kind": "pnn", "lambda": 0.5}}}"#)
                .unwrap();
        assert_eq!(c.network.width, 32);
        assert_eq!(c.network.depth, 4);
        let reg = c.regularizer().unwrap();
        assert_eq!((reg.kind, reg.lambda, reg.r), (RegularizerKind::Pnn, 0.5, 2));
    }

    #[test]
    fn flags_override_config() {
        let mut c: RunConfig = serde_json::from_str(r#"{"training": {"reg": {"kind": "nn", "lambda": 1}}}"#).unwrap();
        let o = Overrides { seed: Some(9), lambda: Some(10.0), reg: Some("hdet".into()), ..Default::default() };
        c.apply(&o).unwrap();
        assert_eq!(c.training.seed, 9);
        assert_eq!(c.network.seed, 9);
        let reg = c.regularizer().unwrap();
        assert_eq!((reg.kind, reg.lambda), (RegularizerKind::Hdet, 10.0));
    }

    #[test]
    fn regularizer_without_weight_is_an_error() {
        let mut c = RunConfig::load_or_default(None).unwrap();
        assert!(c.regularizer().is_err());
        let o = Overrides { reg: Some("hdet".into()), ..Default::default() };
        assert!(matches!(c.apply(&o), Err(Error::Config(_))));
        let o = Overrides { reg: Some("bogus".into()), lambda: Some(1.0), ..Default::default() };
        assert!(matches!(c.apply(&o), Err(Error::Config(_))));
    }
}
