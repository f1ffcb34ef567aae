use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use serde::{Deserialize, Serialize};
use tsr_core::{Mode, RerankParams, RetrievalParams};

/// Run configuration as read from a TOML file. Every field is optional so
/// that flags can fill in or override any of them.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub mode: Option<Mode>,
    pub collection: Option<PathBuf>,
    pub index: Option<PathBuf>,
    pub features: Option<PathBuf>,
    pub idf: Option<PathBuf>,
    pub kbest: Option<PathBuf>,
    pub queries: Option<PathBuf>,
    pub references: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
    pub skip_empty_captions: Option<bool>,
    pub seed: Option<u64>,
    pub trials: Option<u64>,
    #[serde(default)]
    pub retrieval: PartialRetrieval,
    #[serde(default)]
    pub rerank: PartialRerank,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartialRetrieval {
    pub k_n: Option<usize>,
    pub k_m: Option<usize>,
    pub b: Option<f64>,
    pub d: Option<f64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartialRerank {
    pub k_r: Option<usize>,
    pub lambda: Option<f64>,
}

/// Flags shared by every stage that runs retrieval or reranking.
#[derive(Debug, Clone, Default, Args)]
pub struct RunArgs {
    /// TOML configuration file; flags take precedence over its fields.
    #[arg(long, short = 'c')]
    pub config: Option<PathBuf>,
    /// Scoring mode: txt, cnn or hca.
    #[arg(long)]
    pub mode: Option<Mode>,
    /// Caption collection (`caption_id<TAB>image_id<TAB>caption[<TAB>categories]`).
    #[arg(long)]
    pub collection: Option<PathBuf>,
    /// Prebuilt collection index; used instead of `--collection` when given.
    #[arg(long)]
    pub index: Option<PathBuf>,
    /// Image features (`image_id<TAB>f1 f2 ...`); read only in CNN mode.
    #[arg(long)]
    pub features: Option<PathBuf>,
    /// IDF table written by `extract-idf`.
    #[arg(long)]
    pub idf: Option<PathBuf>,
    /// Decoder k-best lists.
    #[arg(long)]
    pub kbest: Option<PathBuf>,
    /// Source image metadata (`sent_id<TAB>image_id[<TAB>categories]`).
    #[arg(long)]
    pub queries: Option<PathBuf>,
    /// Reference translations, plain or `sent_id ||| tokens`.
    #[arg(long)]
    pub references: Option<PathBuf>,
    #[arg(long, short = 'o')]
    pub output_dir: Option<PathBuf>,
    /// Skip empty collection captions with a warning instead of failing.
    #[arg(long)]
    pub skip_empty_captions: bool,
    #[arg(long)]
    pub k_n: Option<usize>,
    #[arg(long)]
    pub k_m: Option<usize>,
    /// Visual distance decay.
    #[arg(long)]
    pub b: Option<f64>,
    /// Visual distance cutoff (`inf` disables it).
    #[arg(long)]
    pub d: Option<f64>,
    #[arg(long)]
    pub k_r: Option<usize>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub trials: Option<u64>,
}

pub const DEFAULT_SEED: u64 = 1;
pub const DEFAULT_TRIALS: u64 = 10_000;

/// Fully resolved configuration. Written next to every run's outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub mode: Mode,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub collection: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub index: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub features: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub idf: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kbest: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub queries: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub references: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub skip_empty_captions: bool,
    pub seed: u64,
    pub trials: u64,
    pub retrieval: RetrievalParams,
    pub rerank: RerankParams,
}

fn pick<T>(flag: Option<T>, file: Option<T>) -> Option<T> {
    flag.or(file)
}

impl PipelineConfig {
    pub fn resolve(args: &RunArgs) -> Result<Self> {
        let file = match &args.config {
            Some(path) => {
                let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                toml::from_str::<ConfigFile>(&text).with_context(|| format!("parsing {}", path.display()))?
            }
            None => ConfigFile::default(),
        };
        // Relative paths in a config file are taken relative to the file.
        let base = args.config.as_deref().and_then(Path::parent).map(Path::to_path_buf);
        let rel = |p: Option<PathBuf>| -> Option<PathBuf> {
            p.map(|p| match &base {
                Some(b) if p.is_relative() => b.join(p),
                _ => p,
            })
        };
        let mode = pick(args.mode, file.mode).unwrap_or(Mode::Txt);
        let rd = RetrievalParams::defaults(mode);
        let kd = RerankParams::defaults(mode);
        let cfg = PipelineConfig {
            mode,
            collection: pick(args.collection.clone(), rel(file.collection)),
            index: pick(args.index.clone(), rel(file.index)),
            features: pick(args.features.clone(), rel(file.features)),
            idf: pick(args.idf.clone(), rel(file.idf)),
            kbest: pick(args.kbest.clone(), rel(file.kbest)),
            queries: pick(args.queries.clone(), rel(file.queries)),
            references: pick(args.references.clone(), rel(file.references)),
            output_dir: pick(args.output_dir.clone(), rel(file.output_dir)).unwrap_or_else(|| PathBuf::from(".")),
            skip_empty_captions: args.skip_empty_captions || file.skip_empty_captions.unwrap_or(false),
            seed: pick(args.seed, file.seed).unwrap_or(DEFAULT_SEED),
            trials: pick(args.trials, file.trials).unwrap_or(DEFAULT_TRIALS),
            retrieval: RetrievalParams {
                k_n: pick(args.k_n, file.retrieval.k_n).unwrap_or(rd.k_n),
                k_m: pick(args.k_m, file.retrieval.k_m).unwrap_or(rd.k_m),
                b: pick(args.b, file.retrieval.b).unwrap_or(rd.b),
                d: pick(args.d, file.retrieval.d).unwrap_or(rd.d),
            },
            rerank: RerankParams {
                k_r: pick(args.k_r, file.rerank.k_r).unwrap_or(kd.k_r),
                lambda: pick(args.lambda, file.rerank.lambda).unwrap_or(kd.lambda),
            },
        };
        cfg.retrieval.validate()?;
        cfg.rerank.validate()?;
        if cfg.mode == Mode::Cnn && cfg.features.is_none() {
            bail!("CNN mode needs a features file (--features)");
        }
        Ok(cfg)
    }

    pub fn require<'a>(&self, path: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path> {
        path.as_deref()
            .with_context(|| format!("missing input: pass --{flag} or set `{}` in the config", flag.replace('-', "_")))
    }

    /// Writes the resolved configuration into the output directory.
    pub fn persist(&self, name: &str) -> Result<PathBuf> {
        fs::create_dir_all(&self.output_dir)
            .with_context(|| format!("creating {}", self.output_dir.display()))?;
        let path = self.output_dir.join(name);
        fs::write(&path, toml::to_string(self)?).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file_and_defaults_follow_mode() {
        let dir = tempfile::tempdir().unwrap();
        let cfg_path = dir.path().join("run.toml");
        fs::write(
            &cfg_path,
            "mode = \"cnn\"\nfeatures = \"feats.txt\"\n[rerank]\nlambda = 3.0\n[retrieval]\nk_m = 7\n",
        )
        .unwrap();
        let args = RunArgs {
            config: Some(cfg_path),
            k_m: Some(9),
            ..Default::default()
        };
        let cfg = PipelineConfig::resolve(&args).unwrap();
        assert_eq!(cfg.mode, Mode::Cnn);
        assert_eq!(cfg.retrieval.k_m, 9);
        assert_eq!(cfg.retrieval.k_n, 300);
        assert_eq!(cfg.rerank.lambda, 3.0);
        assert_eq!(cfg.rerank.k_r, 5);
        assert_eq!(cfg.features.unwrap(), dir.path().join("feats.txt"));
    }

    #[test]
    fn cnn_without_features_is_rejected() {
        let args = RunArgs {
            mode: Some(Mode::Cnn),
            ..Default::default()
        };
        assert!(PipelineConfig::resolve(&args).is_err());
    }

    #[test]
    fn resolved_config_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let args = RunArgs {
            mode: Some(Mode::Hca),
            output_dir: Some(dir.path().to_path_buf()),
            d: Some(f64::INFINITY),
            ..Default::default()
        };
        let cfg = PipelineConfig::resolve(&args).unwrap();
        let path = cfg.persist("config.toml").unwrap();
        let back: PipelineConfig = toml::from_str(&fs::read_to_string(path).unwrap()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.rerank.lambda, 10.0e4);
    }
}
