//! Command-line front end: `run`, `diagnose`, `oracle`, `synth`.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::data::{
    discretize, load_csv, split_and_subsample, synth_generate, Dataset, SyntheticSpec,
};
use crate::diagnostics::{cusum, diagnose, root_split_stats};
use crate::error::{Error, Result};
use crate::mcmc::{run_multi_chain, write_atomic, ChainSettings, ChainTrace, Preset, SplitRule};
use crate::model::{ModelConfig, MoveProbs};
use crate::oracle::{count_states, verify_bounds, OracleOptions, PhiMode};
use crate::rng::chain_seed;
use crate::tree::FeatureDomain;

/// Environment variable capping worker threads.
pub const THREADS_ENV: &str = "TREEMIX_THREADS";

#[derive(Debug, Parser)]
#[command(
    name = "treemix",
    version,
    about = "Tree-ensemble MCMC samplers and exact mixing analysis"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run independent MCMC chains and write their traces.
    Run(RunArgs),
    /// Summarize chain traces in a directory.
    Diagnose(DiagnoseArgs),
    /// Exact conductance, mixing time and bound checks on a small grid.
    Oracle(OracleArgs),
    /// Generate a synthetic data set.
    Synth(SynthArgs),
}

/// Resolved settings of a `run`. Every field has a default, so a config file
/// may list any subset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub preset: Preset,
    pub alpha: f64,
    pub beta: f64,
    pub sigma2: f64,
    pub a: f64,
    pub mu_bar: f64,
    /// Overrides the preset's tree count.
    pub num_trees: Option<usize>,
    /// Overrides the preset's move probabilities.
    pub move_probs: Option<MoveProbs<f64>>,
    pub iters: usize,
    pub burn_in: usize,
    pub chains: usize,
    pub seed: u64,
    /// Seed for data generation and the train/test split; defaults to `seed`.
    pub data_seed: Option<u64>,
    pub synth: Option<PathBuf>,
    pub n: Option<usize>,
    pub data: Option<PathBuf>,
    pub response: Option<String>,
    pub bins: u32,
    pub dataset: Option<PathBuf>,
    pub domain: Option<FeatureDomain>,
    /// Zero disables the held-out set.
    pub test_frac: f64,
    pub n_sub: Option<usize>,
    pub split_rule: SplitRule,
    pub record_keys: bool,
    pub out: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let m = ModelConfig::<f64>::default();
        Self {
            preset: Preset::Bart,
            alpha: m.alpha,
            beta: m.beta,
            sigma2: m.sigma2,
            a: m.a,
            mu_bar: m.mu_bar,
            num_trees: None,
            move_probs: None,
            iters: 6000,
            burn_in: 5000,
            chains: 8,
            seed: 0,
            data_seed: None,
            synth: None,
            n: None,
            data: None,
            response: None,
            bins: 32,
            dataset: None,
            domain: None,
            test_frac: 0.1,
            n_sub: None,
            split_rule: SplitRule::Grid,
            record_keys: false,
            out: None,
        }
    }
}

impl RunConfig {
    pub fn model(&self) -> ModelConfig<f64> {
        ModelConfig {
            alpha: self.alpha,
            beta: self.beta,
            sigma2: self.sigma2,
            a: self.a,
            mu_bar: self.mu_bar,
            move_probs: self.move_probs.unwrap_or_else(|| self.preset.move_probs()),
            num_trees: self.num_trees.unwrap_or_else(|| self.preset.num_trees()),
        }
    }

    pub fn settings(&self) -> ChainSettings {
        ChainSettings {
            iters: self.iters,
            burn_in: self.burn_in,
            seed: self.seed,
            split_rule: self.split_rule,
            record_keys: self.record_keys,
        }
    }

    pub fn data_seed(&self) -> u64 {
        self.data_seed.unwrap_or(self.seed)
    }

    /// Reads a flat config, or the `config` object of a `run.json`.
    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let mut value: serde_json::Value = serde_json::from_str(&text)?;
        if let Some(inner) = value.get_mut("config") {
            value = inner.take();
        }
        Ok(serde_json::from_value(value)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.model().validate()?;
        self.settings().validate()?;
        if self.chains == 0 {
            return Err(Error::InvalidConfig(
                "at least one chain is required".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.test_frac) {
            return Err(Error::InvalidConfig(format!(
                "test_frac {} not in [0, 1)",
                self.test_frac
            )));
        }
        let sources = [
            self.synth.is_some(),
            self.data.is_some(),
            self.dataset.is_some(),
        ];
        match sources.iter().filter(|s| **s).count() {
            1 => Ok(()),
            0 => Err(Error::InvalidInput(
                "no data source: give --synth, --data or --dataset".into(),
            )),
            _ => Err(Error::InvalidInput(
                "give exactly one of --synth, --data, --dataset".into(),
            )),
        }
    }

    /// Loads (or generates) the data and splits off the test set.
    pub fn load_data(&self) -> Result<(Dataset<f64>, Option<Dataset<f64>>)> {
        let full = if let Some(spec) = &self.synth {
            let spec = SyntheticSpec::read_json(spec)?;
            let n = self.n.unwrap_or(spec.n);
            synth_generate(&spec.with_n(n), self.data_seed())?
        } else if let Some(path) = &self.data {
            let response = self
                .response
                .as_deref()
                .ok_or_else(|| Error::InvalidInput("--data needs --response".into()))?;
            discretize(&load_csv(path, response)?, self.bins)?
        } else if let Some(path) = &self.dataset {
            Dataset::read_csv(path, self.domain.clone())?
        } else {
            return Err(Error::InvalidInput("no data source".into()));
        };
        if self.test_frac == 0.0 {
            if self.n_sub.is_some() {
                return Err(Error::InvalidConfig(
                    "n_sub needs a nonzero test_frac".into(),
                ));
            }
            return Ok((full, None));
        }
        let (train, test) =
            split_and_subsample(&full, self.test_frac, self.n_sub, self.data_seed())?;
        Ok((train, Some(test)))
    }
}

#[derive(Debug, Args, Default)]
pub struct RunArgs {
    /// JSON config with flat keys, or a previous run.json.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub preset: Option<Preset>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub sigma2: Option<f64>,
    #[arg(long)]
    pub a: Option<f64>,
    #[arg(long)]
    pub mu_bar: Option<f64>,
    #[arg(long)]
    pub num_trees: Option<usize>,
    #[arg(long)]
    pub iters: Option<usize>,
    #[arg(long, alias = "burn-in")]
    pub burnin: Option<usize>,
    #[arg(long)]
    pub chains: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub data_seed: Option<u64>,
    /// Synthetic spec JSON.
    #[arg(long)]
    pub synth: Option<PathBuf>,
    #[arg(long)]
    pub n: Option<usize>,
    /// Raw numeric CSV to discretize.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub response: Option<String>,
    #[arg(long)]
    pub bins: Option<u32>,
    /// Already discretized CSV (`x1..xd,y`).
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub domain: Option<FeatureDomain>,
    #[arg(long)]
    pub test_frac: Option<f64>,
    #[arg(long)]
    pub n_sub: Option<usize>,
    #[arg(long)]
    pub split_rule: Option<SplitRule>,
    #[arg(long)]
    pub record_keys: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl RunArgs {
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut c = match &self.config {
            Some(p) => RunConfig::read(p)?,
            None => RunConfig::default(),
        };
        macro_rules! set {
            ($($f:ident => $g:ident),*) => {$(if let Some(v) = &self.$f { c.$g = v.clone(); })*};
        }
        macro_rules! set_opt {
            ($($f:ident),*) => {$(if let Some(v) = &self.$f { c.$f = Some(v.clone()); })*};
        }
        set!(preset => preset, alpha => alpha, beta => beta, sigma2 => sigma2, a => a,
             mu_bar => mu_bar, iters => iters, burnin => burn_in, chains => chains, seed => seed,
             bins => bins, test_frac => test_frac, split_rule => split_rule);
        set_opt!(num_trees, data_seed, synth, n, data, response, dataset, domain, n_sub, out);
        if self.synth.is_some() || self.data.is_some() || self.dataset.is_some() {
            // a source given on the command line replaces the file's source
            if self.synth.is_none() {
                c.synth = None;
            }
            if self.data.is_none() {
                c.data = None;
            }
            if self.dataset.is_none() {
                c.dataset = None;
            }
        }
        c.record_keys |= self.record_keys;
        Ok(c)
    }
}

impl std::str::FromStr for SplitRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "grid" => Ok(SplitRule::Grid),
            "observed" => Ok(SplitRule::Observed),
            _ => Err(Error::InvalidInput(format!("unknown split rule {s:?}"))),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct RunRecord {
    pub config: RunConfig,
    pub seeds: Vec<u64>,
    pub data_seed: u64,
    pub version: String,
    pub wall_time: f64,
}

/// Worker count from `TREEMIX_THREADS`, else the available parallelism.
pub fn thread_count() -> usize {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&t| t > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

pub fn chain_file(j: usize) -> String {
    format!("chain_{j}.csv")
}

/// Runs the chains and writes `chain_<j>.csv` (j from 1) and `run.json`.
pub fn cmd_run(args: &RunArgs) -> Result<PathBuf> {
    let config = args.resolve()?;
    config.validate()?;
    let out = config
        .out
        .clone()
        .ok_or_else(|| Error::InvalidInput("--out is required".into()))?;
    let (train, test) = config.load_data()?;
    let start = Instant::now();
    let traces = run_multi_chain(
        &train,
        &config.model(),
        &config.settings(),
        test.as_ref(),
        config.chains,
        thread_count(),
    )?;
    let bytes: Vec<Vec<u8>> = traces
        .iter()
        .map(ChainTrace::to_csv_bytes)
        .collect::<Result<_>>()?;
    let record = RunRecord {
        seeds: (0..config.chains)
            .map(|j| chain_seed(config.seed, j))
            .collect(),
        data_seed: config.data_seed(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        wall_time: start.elapsed().as_secs_f64(),
        config,
    };
    fs::create_dir_all(&out)?;
    for (j, b) in bytes.iter().enumerate() {
        write_atomic(&out.join(chain_file(j + 1)), b)?;
    }
    write_atomic(&out.join("run.json"), &serde_json::to_vec_pretty(&record)?)?;
    let rmse: Vec<String> = traces
        .iter()
        .map(|t| {
            let r = t.sample_rmse();
            if r.is_empty() {
                "NA".into()
            } else {
                format!("{:.4}", r.iter().sum::<f64>() / r.len() as f64)
            }
        })
        .collect();
    println!(
        "wrote {} chains to {} (train {}, mean test rmse per chain: {})",
        traces.len(),
        out.display(),
        train.len(),
        rmse.join(" ")
    );
    Ok(out)
}

#[derive(Debug, Args)]
pub struct DiagnoseArgs {
    /// Directory holding `chain_<j>.csv` files.
    pub dir: PathBuf,
    /// Output directory; defaults to the trace directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Chain traces in `dir`, ordered by chain number.
pub fn read_traces(dir: &Path) -> Result<Vec<ChainTrace>> {
    let mut files: Vec<(usize, PathBuf)> = Vec::new();
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        let name = path
            .file_name()
            .and_then(|n| n.to_str())
            .unwrap_or_default();
        if let Some(j) = name
            .strip_prefix("chain_")
            .and_then(|r| r.strip_suffix(".csv"))
            .and_then(|r| r.parse::<usize>().ok())
        {
            files.push((j, path));
        }
    }
    if files.is_empty() {
        return Err(Error::InvalidInput(format!(
            "no chain_<j>.csv files in {}",
            dir.display()
        )));
    }
    files.sort();
    files.iter().map(|(_, p)| ChainTrace::read_csv(p)).collect()
}

fn csv_bytes(header: &[String], rows: &[Vec<String>]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

fn strings(xs: &[&str]) -> Vec<String> {
    xs.iter().map(|s| s.to_string()).collect()
}

/// Writes `diagnostics.json`, `rmse_values.csv`, `cusum.csv` and `root_splits.csv`.
pub fn cmd_diagnose(args: &DiagnoseArgs) -> Result<PathBuf> {
    let traces = read_traces(&args.dir)?;
    let out = args.out.clone().unwrap_or_else(|| args.dir.clone());
    let report = diagnose(&traces);

    let mut rmse_rows = Vec::new();
    let mut cusum_rows = Vec::new();
    for (j, t) in traces.iter().enumerate() {
        let samples: Vec<_> = t.samples().filter(|r| r.rmse.is_some()).collect();
        let values: Vec<f64> = samples.iter().filter_map(|r| r.rmse).collect();
        for (r, s) in samples.iter().zip(cusum(&values)) {
            let v = r.rmse.unwrap_or_default();
            rmse_rows.push(vec![(j + 1).to_string(), r.iter.to_string(), v.to_string()]);
            cusum_rows.push(vec![(j + 1).to_string(), r.iter.to_string(), s.to_string()]);
        }
    }
    let max_feature = traces
        .iter()
        .flat_map(|t| {
            t.rows
                .iter()
                .flat_map(|r| r.roots.iter().flatten().copied())
        })
        .max()
        .map_or(0, |v| v + 1);
    let mut header = strings(&["chain", "tree", "empty"]);
    header.extend((1..=max_feature).map(|v| format!("feature_{v}")));
    let mut root_rows = Vec::new();
    for (j, t) in traces.iter().enumerate() {
        for tree in 0..t.num_trees {
            let stats = root_split_stats(t, tree);
            let mut row = vec![
                (j + 1).to_string(),
                (tree + 1).to_string(),
                stats.count(None).to_string(),
            ];
            row.extend((0..max_feature).map(|v| stats.count(Some(v)).to_string()));
            root_rows.push(row);
        }
    }

    fs::create_dir_all(&out)?;
    write_atomic(
        &out.join("diagnostics.json"),
        &serde_json::to_vec_pretty(&report)?,
    )?;
    write_atomic(
        &out.join("rmse_values.csv"),
        &csv_bytes(&strings(&["chain", "iter", "rmse"]), &rmse_rows)?,
    )?;
    write_atomic(
        &out.join("cusum.csv"),
        &csv_bytes(&strings(&["chain", "iter", "cusum"]), &cusum_rows)?,
    )?;
    write_atomic(
        &out.join("root_splits.csv"),
        &csv_bytes(&header, &root_rows)?,
    )?;
    match report.gelman_rubin {
        Some(r) => println!("gelman-rubin {r:.6} over {} chains", traces.len()),
        None => println!(
            "gelman-rubin unavailable: {}",
            report.warning.as_deref().unwrap_or("")
        ),
    }
    Ok(out)
}

/// Oracle settings; a config file may list any subset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleConfig {
    pub domain: Option<FeatureDomain>,
    /// Synthetic spec JSON supplying `f0`, `px` and the noise half-width.
    pub f0: Option<PathBuf>,
    /// Noise half-width for the default step function.
    pub noise: f64,
    pub ngrid: Vec<usize>,
    pub seeds: usize,
    pub seed: u64,
    pub phi: PhiMode,
    pub tcap: u64,
    pub eps: f64,
    pub limit: usize,
    pub preset: Preset,
    pub alpha: f64,
    pub beta: f64,
    pub sigma2: f64,
    pub a: f64,
    pub mu_bar: f64,
    pub out: Option<PathBuf>,
}

impl Default for OracleConfig {
    fn default() -> Self {
        let m = ModelConfig::<f64>::default();
        let o = OracleOptions::default();
        Self {
            domain: None,
            f0: None,
            noise: 0.1,
            ngrid: vec![16, 32, 64, 128],
            seeds: 20,
            seed: 0,
            phi: o.phi_mode,
            tcap: o.t_cap,
            eps: o.eps,
            limit: o.state_limit,
            preset: Preset::Simplified,
            alpha: m.alpha,
            beta: m.beta,
            sigma2: 0.25,
            a: 1.0,
            mu_bar: 0.0,
            out: None,
        }
    }
}

#[derive(Debug, Args, Default)]
pub struct OracleArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Grid such as `2x2`.
    #[arg(long)]
    pub domain: Option<FeatureDomain>,
    #[arg(long)]
    pub f0: Option<PathBuf>,
    #[arg(long)]
    pub noise: Option<f64>,
    /// Comma-separated sample sizes.
    #[arg(long, value_delimiter = ',')]
    pub ngrid: Option<Vec<usize>>,
    /// Number of data seeds per sample size.
    #[arg(long)]
    pub seeds: Option<usize>,
    /// First data seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub phi: Option<PhiMode>,
    #[arg(long)]
    pub tcap: Option<u64>,
    #[arg(long)]
    pub eps: Option<f64>,
    #[arg(long)]
    pub limit: Option<usize>,
    #[arg(long)]
    pub preset: Option<Preset>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub sigma2: Option<f64>,
    #[arg(long)]
    pub a: Option<f64>,
    #[arg(long)]
    pub mu_bar: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl OracleArgs {
    pub fn resolve(&self) -> Result<OracleConfig> {
        let mut c = match &self.config {
            Some(p) => serde_json::from_str(&fs::read_to_string(p)?)?,
            None => OracleConfig::default(),
        };
        macro_rules! set {
            ($($f:ident),*) => {$(if let Some(v) = &self.$f { c.$f = v.clone(); })*};
        }
        set!(
            noise, ngrid, seeds, seed, phi, tcap, eps, limit, preset, alpha, beta, sigma2, a,
            mu_bar
        );
        if self.domain.is_some() {
            c.domain = self.domain.clone();
        }
        if self.f0.is_some() {
            c.f0 = self.f0.clone();
        }
        if self.out.is_some() {
            c.out = self.out.clone();
        }
        Ok(c)
    }
}

/// Step function on the first feature: `-1/2` on the lower half, `+1/2` above.
pub fn default_step(domain: &FeatureDomain, noise: f64) -> Result<SyntheticSpec> {
    let half = domain.arity()[0] / 2;
    SyntheticSpec::from_fn(
        domain.clone(),
        |x| if x[0] <= half { -0.5 } else { 0.5 },
        noise,
        0,
    )
}

/// Writes `bounds.json` and `bounds.csv`.
pub fn cmd_oracle(args: &OracleArgs) -> Result<PathBuf> {
    let c = args.resolve()?;
    let out = c
        .out
        .clone()
        .ok_or_else(|| Error::InvalidInput("--out is required".into()))?;
    if let Some(domain) = &c.domain {
        let projected = count_states(domain, None);
        if !(projected <= c.limit as f64) {
            return Err(Error::StateSpaceTooLarge {
                projected,
                limit: c.limit,
            });
        }
    }
    let synth = match (&c.f0, &c.domain) {
        (Some(path), domain) => {
            let spec = SyntheticSpec::read_json(path)?;
            if domain.as_ref().is_some_and(|d| *d != spec.domain) {
                return Err(Error::InvalidInput(format!(
                    "--domain {} differs from the f0 spec's domain {}",
                    domain.as_ref().expect("checked"),
                    spec.domain
                )));
            }
            spec
        }
        (None, Some(domain)) => default_step(domain, c.noise)?,
        (None, None) => return Err(Error::InvalidInput("give --domain or --f0".into())),
    };
    let config = ModelConfig {
        alpha: c.alpha,
        beta: c.beta,
        sigma2: c.sigma2,
        a: c.a,
        mu_bar: c.mu_bar,
        move_probs: c.preset.move_probs(),
        num_trees: 1,
    };
    let options = OracleOptions {
        phi_mode: c.phi,
        eps: c.eps,
        t_cap: c.tcap,
        state_limit: c.limit,
        ..OracleOptions::default()
    };
    let seeds: Vec<u64> = (0..c.seeds as u64).map(|s| c.seed + s).collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(thread_count())
        .build()
        .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
    let report = pool.install(|| verify_bounds(&synth, &c.ngrid, &config, &seeds, &options))?;
    fs::create_dir_all(&out)?;
    write_atomic(
        &out.join("bounds.json"),
        &serde_json::to_vec_pretty(&report)?,
    )?;
    write_atomic(&out.join("bounds.csv"), &report.to_csv_bytes()?)?;
    println!(
        "{} states; lemma2 {}, lemma3 {}, lemma4 {}; slope {} (predicted {:.4})",
        report.num_states,
        report.lemma2_all_ok,
        report.lemma3_all_ok,
        report.lemma4_all_ok,
        report.fit.map_or("NA".to_string(), |f| format!(
            "{:.4} (R^2 {:.4})",
            f.slope, f.r_squared
        )),
        report.predicted_slope
    );
    Ok(out)
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Synthetic spec JSON.
    #[arg(long)]
    pub spec: PathBuf,
    /// Overrides the spec's `n`.
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

/// Writes the generated data set and reports `K`.
pub fn cmd_synth(args: &SynthArgs) -> Result<PathBuf> {
    let spec = SyntheticSpec::read_json(&args.spec)?;
    let spec = match args.n {
        Some(n) => spec.with_n(n),
        None => spec,
    };
    let data = synth_generate(&spec, args.seed)?;
    data.write_csv(&args.out)?;
    println!("K = {}", spec.bound());
    Ok(args.out.clone())
}

/// Process exit code for an error: 2 input, 3 guard refusal, 1 internal.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::StateSpaceTooLarge { .. } => 3,
        Error::MarkovInvariant(_) | Error::DegenerateChains | Error::InvalidTree(_) => 1,
        _ => 2,
    }
}

pub fn execute(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Run(a) => cmd_run(a).map(drop),
        Command::Diagnose(a) => cmd_diagnose(a).map(drop),
        Command::Oracle(a) => cmd_oracle(a).map(drop),
        Command::Synth(a) => cmd_synth(a).map(drop),
    }
}

/// Parses `args` and runs the command; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
