use std::path::{Path, PathBuf};

use clap::Args;
use ppdns_core::pir::SUPPORTED_MODULUS_BITS;
use ppdns_core::store::DEFAULT_BLOCK_BITS;
use ppdns_core::QueryMode;
use serde::Deserialize;

use crate::CliError;

pub const CONFIG_ENV: &str = "PPDNS_CONFIG";

/// Flags shared by every subcommand. Each may also come from the file named
/// by `PPDNS_CONFIG`; a flag on the command line wins.
#[derive(Args, Clone, Debug, Default)]
pub struct CommonArgs {
    /// Names file, one name per line.
    #[arg(long, global = true)]
    pub names: Option<PathBuf>,
    /// Trace CSV; supplies TTLs to `build` and queries to `simulate`.
    #[arg(long, global = true)]
    pub trace: Option<PathBuf>,
    /// Store snapshot written by `build`.
    #[arg(long, global = true)]
    pub snapshot: Option<PathBuf>,
    /// Ring size.
    #[arg(long, global = true)]
    pub nodes: Option<usize>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Expected non-empty identifiers per range.
    #[arg(long, global = true)]
    pub m: Option<u64>,
    /// Retrieve the target block by cPIR.
    #[arg(long, global = true)]
    pub pir: bool,
    /// Blocks per range for cPIR; in `pir-bench`, the database size.
    #[arg(long, global = true)]
    pub npir: Option<u64>,
    #[arg(long = "modulus-bits", global = true)]
    pub modulus_bits: Option<u32>,
    #[arg(long = "block-bits", global = true)]
    pub block_bits: Option<u64>,
    /// Query mode; repeat to sweep: single, range:M, random-set:M, fixed-set:M.
    #[arg(long, global = true)]
    pub mode: Vec<String>,
    /// Output path; standard output when absent.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
struct FileConfig {
    names: Option<PathBuf>,
    trace: Option<PathBuf>,
    snapshot: Option<PathBuf>,
    nodes: Option<usize>,
    seed: Option<u64>,
    m: Option<u64>,
    pir: Option<bool>,
    npir: Option<u64>,
    #[serde(alias = "modulus_bits")]
    modulus_bits: Option<u32>,
    #[serde(alias = "block_bits")]
    block_bits: Option<u64>,
    mode: Option<OneOrMany>,
    out: Option<PathBuf>,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum OneOrMany {
    One(String),
    Many(Vec<String>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub names: Option<PathBuf>,
    pub trace: Option<PathBuf>,
    pub snapshot: Option<PathBuf>,
    pub nodes: usize,
    pub seed: u64,
    pub m: u64,
    pub pir: bool,
    pub npir: u64,
    pub modulus_bits: u32,
    pub block_bits: u64,
    pub modes: Vec<QueryMode>,
    pub out: Option<PathBuf>,
}

impl RunConfig {
    pub fn load(args: &CommonArgs) -> Result<Self, CliError> {
        let file = match std::env::var_os(CONFIG_ENV) {
            Some(path) if !path.is_empty() => read_file_config(Path::new(&path))?,
            _ => FileConfig::default(),
        };
        Self::merge(args, file)
    }

    fn merge(args: &CommonArgs, file: FileConfig) -> Result<Self, CliError> {
        let m = args.m.or(file.m).unwrap_or(128);
        let mode_strings = if !args.mode.is_empty() {
            args.mode.clone()
        } else {
            match file.mode {
                Some(OneOrMany::One(s)) => vec![s],
                Some(OneOrMany::Many(v)) => v,
                None => vec![format!("range:{m}")],
            }
        };
        let modes = mode_strings
            .iter()
            .map(|s| s.parse::<QueryMode>().map_err(CliError::Usage))
            .collect::<Result<Vec<_>, _>>()?;
        let config = RunConfig {
            names: args.names.clone().or(file.names),
            trace: args.trace.clone().or(file.trace),
            snapshot: args.snapshot.clone().or(file.snapshot),
            nodes: args.nodes.or(file.nodes).unwrap_or(64),
            seed: args.seed.or(file.seed).unwrap_or(0),
            m,
            pir: args.pir || file.pir.unwrap_or(false),
            npir: args.npir.or(file.npir).unwrap_or(128),
            modulus_bits: args.modulus_bits.or(file.modulus_bits).unwrap_or(2048),
            block_bits: args.block_bits.or(file.block_bits).unwrap_or(DEFAULT_BLOCK_BITS),
            modes,
            out: args.out.clone().or(file.out),
        };
        config.validate()?;
        Ok(config)
    }

    fn validate(&self) -> Result<(), CliError> {
        if self.m == 0 {
            return Err(CliError::Usage("--m must be at least 1".into()));
        }
        if self.nodes == 0 {
            return Err(CliError::Usage("--nodes must be at least 1".into()));
        }
        if !SUPPORTED_MODULUS_BITS.contains(&self.modulus_bits) {
            return Err(CliError::Usage(format!(
                "--modulus-bits {} is not one of {:?}",
                self.modulus_bits, SUPPORTED_MODULUS_BITS
            )));
        }
        if self.npir == 0 || !self.npir.is_power_of_two() {
            return Err(CliError::Usage(format!("--npir {} is not a power of two", self.npir)));
        }
        if self.block_bits == 0 {
            return Err(CliError::Usage("--block-bits must be positive".into()));
        }
        Ok(())
    }

    /// A per-component seed derived from `--seed`.
    pub fn derived_seed(&self, component: u64) -> u64 {
        let mut z = self.seed ^ component.wrapping_mul(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }
}

fn read_file_config(path: &Path) -> Result<FileConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("{CONFIG_ENV}={}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| CliError::Usage(format!("{CONFIG_ENV}={}: {e}", path.display())))
}
