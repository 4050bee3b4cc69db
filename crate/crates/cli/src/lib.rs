//! `rmps-lab` command-line front end.

pub mod config;
pub mod error;
pub mod plot;

use std::ffi::OsString;
use std::fs;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rmps_core::acceptance::{run_criterion, CRITERIA};
use rmps_core::experiments::{run_experiment, ExperimentKind, ExperimentReport, HamiltonianKind};
use rmps_core::statmech::{self, SpinChainPattern};
use rmps_core::weingarten;
use serde_json::json;

use config::{BoundaryChoice, ExperimentConfig, ObservableChoice, PartialConfig};
use error::{CliError, EXIT_FAIL, EXIT_PASS};

#[derive(Debug, Parser)]
#[command(name = "rmps-lab", version, about = "Random matrix product state laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Effective dimension and equilibration under a random Hamiltonian.
    Equilibration(RunArgs),
    /// Tails of <psi|psi> around 1.
    NormConcentration(RunArgs),
    /// Purity of a periodic region of blocks.
    Extensivity(RunArgs),
    /// Purity of a contiguous block.
    MaxEntropy(RunArgs),
    /// Second moment of a single-site observable.
    LocalObs(RunArgs),
    /// Frame potential and design distance.
    FramePotential(RunArgs),
    /// Exact statmech or oracle values; prints JSON.
    Exact(ExactArgs),
    /// Runs the acceptance grid.
    Selftest {
        /// Comma-separated criterion ids (default: all).
        #[arg(long, value_delimiter = ',')]
        only: Vec<u8>,
    },
}

#[derive(Debug, Args)]
struct RunArgs {
    /// TOML (or `.json`) config; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    d: Option<usize>,
    #[arg(long)]
    n: Option<usize>,
    /// Bond dimension.
    #[arg(long = "D")]
    bond_dim: Option<usize>,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    l: Option<usize>,
    #[arg(long)]
    epsilon: Option<f64>,
    /// `pauli-z`, `traceless-z` or a matrix file with `re`/`im` rows.
    #[arg(long)]
    observable: Option<String>,
    /// `periodic` or `open`.
    #[arg(long)]
    boundary: Option<BoundaryChoice>,
    #[arg(long, value_enum)]
    hamiltonian: Option<HamiltonianArg>,
    #[arg(long, value_delimiter = ',')]
    sweep_n: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    sweep_bond: Option<Vec<usize>>,
    /// Skip writing plot.gp.
    #[arg(long)]
    no_plot: bool,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum HamiltonianArg {
    Gue,
    DisorderedIsing,
}

impl From<HamiltonianArg> for HamiltonianKind {
    fn from(h: HamiltonianArg) -> Self {
        match h {
            HamiltonianArg::Gue => HamiltonianKind::Gue,
            HamiltonianArg::DisorderedIsing => HamiltonianKind::DisorderedIsing,
        }
    }
}

impl RunArgs {
    fn flags(&self, kind: ExperimentKind) -> PartialConfig {
        PartialConfig {
            kind: Some(kind.name().to_string()),
            d: self.d,
            n: self.n,
            bond_dim: self.bond_dim,
            k: self.k,
            l: self.l,
            samples: self.samples,
            seed: self.seed,
            epsilon: self.epsilon,
            observable: self.observable.as_deref().map(ObservableChoice::from_flag),
            boundary: self.boundary,
            hamiltonian: self.hamiltonian.map(Into::into),
            sweep_n: self.sweep_n.clone(),
            sweep_bond: self.sweep_bond.clone(),
            output_dir: self.out.clone(),
        }
    }

    fn resolve(&self, kind: ExperimentKind) -> Result<ExperimentConfig, CliError> {
        let file = match &self.config {
            Some(path) => PartialConfig::load(path)?,
            None => PartialConfig::default(),
        };
        if let Some(k) = &file.kind {
            if k != kind.name() {
                eprintln!("note: config kind `{k}` replaced by subcommand `{}`", kind.name());
            }
        }
        ExperimentConfig::from_partial(file.overlay(self.flags(kind)))
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Quantity {
    /// eta(d, D) and eta(D, d), plus the decay rate alpha.
    Eta,
    /// E<psi|psi>^2.
    NormSecondMoment,
    /// E<psi|psi>^2 from the Weingarten oracle (small d D only).
    OracleNorm,
    /// E tr[rho_A^2] for a block of `l` sites, with its bound.
    ConnectedPurity,
    /// E tr[rho_A^2] for every k-th block, with its bound.
    DisconnectedPurity,
    /// E<psi|O (x) 1|psi>^2 with its bound.
    LocalObs,
    /// Exact F_2 of the ensemble and the Haar value.
    FramePotential,
    /// Squared Frobenius distance to the Haar second moment.
    DesignDistance,
    /// Tail bound for |<psi|psi> - 1| >= epsilon.
    NormTailBound,
}

#[derive(Debug, Args)]
struct ExactArgs {
    #[arg(value_enum)]
    quantity: Quantity,
    #[arg(long)]
    d: usize,
    #[arg(long, default_value_t = 1)]
    n: usize,
    #[arg(long = "D")]
    bond_dim: usize,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    l: Option<usize>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    observable: Option<String>,
}

fn exact_query(a: &ExactArgs) -> Result<serde_json::Value, CliError> {
    let (d, n, bond) = (a.d, a.n, a.bond_dim);
    if d == 0 || bond == 0 {
        return Err(CliError::Usage("d and D must be >= 1".into()));
    }
    let need = |v: Option<usize>, field: &'static str, ctx: &str| v.ok_or_else(|| CliError::missing(field, format!(" for {ctx}")));
    let base = json!({ "d": d, "n": n, "D": bond });
    let extra = match a.quantity {
        Quantity::Eta => json!({
            "eta": statmech::eta(d as f64, bond as f64)?,
            "eta_prime": statmech::eta(bond as f64, d as f64)?,
            "alpha": statmech::alpha(d, bond),
        }),
        Quantity::NormSecondMoment => json!({ "value": statmech::norm_second_moment(d, n, bond)? }),
        Quantity::OracleNorm => json!({ "value": weingarten::oracle_second_moment(&SpinChainPattern::all_blue(n)?, d, bond)? }),
        Quantity::ConnectedPurity => {
            let l = need(a.l, "l", "connected-purity")?;
            json!({
                "value": statmech::connected_purity_expectation(d, n, bond, l)?,
                "bound": statmech::connected_purity_bound(d, n, bond, l),
                "l": l,
            })
        }
        Quantity::DisconnectedPurity => {
            let k = need(a.k, "k", "disconnected-purity")?;
            json!({
                "value": statmech::disconnected_purity_expectation(d, n, bond, k)?,
                "bound": statmech::extensivity_purity_bound(d, n, bond, k)?,
                "k": k,
            })
        }
        Quantity::LocalObs => {
            let choice = a.observable.as_deref().map(ObservableChoice::from_flag).unwrap_or(if d == 2 {
                ObservableChoice::PauliZ
            } else {
                ObservableChoice::TracelessZ
            });
            let m = statmech::local_observable_second_moment(d, n, bond, &choice.resolve(d)?)?;
            json!({ "value": m.exact, "bound": m.bound })
        }
        Quantity::FramePotential => json!({
            "value": statmech::frame_potential_2(d, n, bond)?,
            "haar": statmech::haar_frame_potential(d, n),
        }),
        Quantity::DesignDistance => json!({
            "value": statmech::design_distance_sq(d, n, bond)?,
            "threshold": (d as f64).powi(-(n as i32)) / bond as f64,
        }),
        Quantity::NormTailBound => {
            let eps = a.epsilon.ok_or_else(|| CliError::missing("epsilon", " for norm-tail-bound"))?;
            json!({ "value": statmech::norm_tail_bound(d, n, eps), "epsilon": eps })
        }
    };
    let mut out = base;
    out["quantity"] = json!(a.quantity.to_possible_value().map(|v| v.get_name().to_string()));
    out.as_object_mut().unwrap().extend(extra.as_object().unwrap().clone());
    Ok(out)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.6}"))
}

/// Fixed-width summary of the records.
pub fn summary_table(report: &ExperimentReport) -> String {
    let width = report.records.iter().map(|r| r.name.len()).max().unwrap_or(8).max(8);
    let mut s = format!(
        "{:<width$}  {:>12}  {:>10}  {:>12}  {:>12}  {:>12}  pass\n",
        "quantity", "mean", "stderr", "exact", "bound", "floor"
    );
    for r in &report.records {
        s += &format!(
            "{:<width$}  {:>12.6}  {:>10.3e}  {:>12}  {:>12}  {:>12}  {}\n",
            r.name,
            r.mean,
            r.stderr,
            fmt_opt(r.exact),
            fmt_opt(r.bound),
            fmt_opt(r.floor),
            if r.pass { "yes" } else { "NO" }
        );
    }
    s
}

fn run_kind(kind: ExperimentKind, args: &RunArgs) -> Result<i32, CliError> {
    let cfg = args.resolve(kind)?;
    let report = run_experiment(&cfg.to_spec()?)?;
    let dir = &cfg.output_dir;
    fs::create_dir_all(dir).map_err(|e| CliError::io(format!("creating {}", dir.display()), e))?;
    let json_path = dir.join("report.json");
    report.write_json(&json_path).map_err(|e| CliError::io(format!("writing {}", json_path.display()), e))?;
    let csv_path = dir.join("samples.csv");
    let file = fs::File::create(&csv_path).map_err(|e| CliError::io(format!("creating {}", csv_path.display()), e))?;
    report.write_csv(std::io::BufWriter::new(file)).map_err(|e| CliError::io(format!("writing {}", csv_path.display()), e))?;
    if !args.no_plot {
        let plot_path = dir.join("plot.gp");
        fs::write(&plot_path, plot::emit_plot_script(&report)?).map_err(|e| CliError::io(format!("writing {}", plot_path.display()), e))?;
    }
    print!("{}", summary_table(&report));
    println!("{} in {:.2} s: {}", kind.name(), report.wall_clock_seconds, if report.pass { "PASS" } else { "FAIL" });
    Ok(if report.pass { EXIT_PASS } else { EXIT_FAIL })
}

fn selftest(only: &[u8]) -> Result<i32, CliError> {
    let ids: Vec<u8> = if only.is_empty() { CRITERIA.to_vec() } else { only.to_vec() };
    let mut outcomes = Vec::new();
    for id in ids {
        let o = run_criterion(id)?;
        println!("{}", o.line());
        outcomes.push(o);
    }
    for o in &outcomes {
        print!("{o}");
    }
    Ok(if outcomes.iter().all(|o| o.pass()) { EXIT_PASS } else { EXIT_FAIL })
}

fn dispatch(cli: Cli) -> Result<i32, CliError> {
    match &cli.command {
        Command::Equilibration(a) => run_kind(ExperimentKind::Equilibration, a),
        Command::NormConcentration(a) => run_kind(ExperimentKind::NormConcentration, a),
        Command::Extensivity(a) => run_kind(ExperimentKind::Extensivity, a),
        Command::MaxEntropy(a) => run_kind(ExperimentKind::MaxEntropy, a),
        Command::LocalObs(a) => run_kind(ExperimentKind::LocalObs, a),
        Command::FramePotential(a) => run_kind(ExperimentKind::FramePotential, a),
        Command::Exact(a) => {
            println!("{}", serde_json::to_string_pretty(&exact_query(a)?).expect("JSON values always encode"));
            Ok(EXIT_PASS)
        }
        Command::Selftest { only } => selftest(only),
    }
}

/// Parses `args` (program name first), runs the command and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            if let Some(h) = e.hint() {
                eprintln!("{h}");
            }
            e.exit_code()
        }
    }
}
