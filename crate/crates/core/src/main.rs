use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use tangent_ig::attribution::{write_attribution_csv, AttributionRow};
use tangent_ig::basepoint::{AlignmentObjective, DEFAULT_HESSIAN_CAP};
use tangent_ig::error::Category;
use tangent_ig::experiment::{
    build_autoencoder, build_model, gallery, load_dataset, report, run_comparison, Experiment, ExperimentConfig,
    MethodSpec, ProviderSpec, SummaryRow,
};
use tangent_ig::nn::accuracy;
use tangent_ig::plot::Metric;
use tangent_ig::{Error, Result};

/// Tangent-space alignment of gradient attributions.
#[derive(Parser)]
#[command(name = "tgig", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the configuration's `seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the configuration's `output_dir`.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Train the autoencoder of the `[autoencoder.train]` section.
    TrainAe(Common),
    /// Train the classifier of the `[model.train]` section.
    TrainClf(Common),
    /// Attributions for selected points, as CSV.
    Explain {
        #[command(flatten)]
        common: Common,
        /// Dataset indices, comma separated.
        #[arg(long, value_delimiter = ',', required = true)]
        points: Vec<usize>,
        /// Methods to run; defaults to the configuration's list.
        #[arg(long, value_delimiter = ',')]
        methods: Vec<MethodSpec>,
    },
    /// Search for a tangentially aligned base-point for one point.
    OptimizeBasepoint {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        point: usize,
    },
    /// Run the full method comparison.
    Evaluate(Common),
    /// Rebuild summary and histogram from an existing metrics.csv.
    Report {
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value = "mu")]
        metric: Metric,
        #[arg(long, default_value_t = tangent_ig::plot::DEFAULT_BINS)]
        bins: usize,
        /// Overlay kernel density estimates.
        #[arg(long)]
        kde: bool,
    },
    /// SVG grid of images and attribution heatmaps.
    Gallery {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', required = true)]
        points: Vec<usize>,
    },
}

impl Common {
    fn load(&self) -> Result<(ExperimentConfig, PathBuf)> {
        let mut cfg = ExperimentConfig::read(&self.config)?;
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        let out = self.out_dir.clone().unwrap_or_else(|| cfg.output_dir.clone());
        fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
        Ok((cfg, out))
    }
}

fn write_file(path: &Path, contents: &[u8]) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))?;
    println!("wrote {}", path.display());
    Ok(())
}

fn print_summary(rows: &[SummaryRow]) {
    println!(
        "{:<22} {:>6} {:>10} {:>10} {:>10}",
        "method", "count", "median_mu", "mean_mu", "above_ref"
    );
    for r in rows {
        println!(
            "{:<22} {:>6} {:>10.4} {:>10.4} {:>10.4}",
            r.method, r.count, r.median_mu, r.mean_mu, r.frac_above_reference
        );
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::TrainAe(common) => {
            let (cfg, out) = common.load()?;
            let ProviderSpec::Decoder { latent } = cfg.provider else {
                return Err(Error::Config("train-ae needs a decoder provider".into()));
            };
            let ds = load_dataset(&cfg)?;
            let ae = build_autoencoder(&cfg, &ds, latent)?;
            println!("reconstruction mse {}", ae.reconstruction_mse(ds.points())?);
            for (name, net) in [("encoder.tgnn", ae.encoder()), ("decoder.tgnn", ae.decoder())] {
                let path = out.join(name);
                net.save(&path)?;
                println!("wrote {}", path.display());
            }
        }
        Command::TrainClf(common) => {
            let (cfg, out) = common.load()?;
            let ds = load_dataset(&cfg)?;
            let net = build_model(&cfg, &ds)?;
            if let Some(labels) = ds.labels() {
                println!("training accuracy {}", accuracy(&net, &ds, labels)?);
            }
            let path = out.join("classifier.tgnn");
            net.save(&path)?;
            println!("wrote {}", path.display());
        }
        Command::Explain {
            common,
            points,
            methods,
        } => {
            let (cfg, out) = common.load()?;
            let methods = if methods.is_empty() { cfg.methods.clone() } else { methods };
            let exp = Experiment::load(cfg)?;
            let mut results = Vec::new();
            for &p in &points {
                let tangent = exp.provider.tangent_basis_at(exp.point(p)?)?;
                for &m in &methods {
                    let outcome = exp.attribute(p, m, &tangent).map_err(|e| e.at_point(p, m.name()))?;
                    results.push((p, m, outcome, tangent.clone()));
                }
            }
            let rows = results.iter().map(|(p, m, o, tb)| {
                (
                    AttributionRow {
                        point_id: *p,
                        label: m.name(),
                        target: o.target,
                        values: &o.values,
                    },
                    tb,
                )
            });
            let mut buf = Vec::new();
            write_attribution_csv(&mut buf, rows, exp.dataset.dim()).expect("writing to memory");
            write_file(&out.join("attributions.csv"), &buf)?;
        }
        Command::OptimizeBasepoint { common, point } => {
            let (cfg, out) = common.load()?;
            let exp = Experiment::load(cfg)?;
            let x = exp.point(point)?;
            let tangent = exp.provider.tangent_basis_at(x)?;
            let outcome = exp
                .attribute(point, MethodSpec::IgTangential, &tangent)
                .map_err(|e| e.at_point(point, "ig_tangential"))?;
            let trace = outcome.trace.as_ref().expect("tangential IG records a trace");
            let alpha = outcome.base_point.as_ref().expect("IG has a base-point");
            let mut buf = Vec::new();
            trace.write_csv(&mut buf).expect("writing to memory");
            write_file(&out.join("trace.csv"), &buf)?;
            let mut buf = Vec::new();
            for v in alpha.iter() {
                writeln!(buf, "{v}").expect("writing to memory");
            }
            write_file(&out.join("basepoint.csv"), &buf)?;
            let steps = exp.config.quadrature_steps;
            let objective = AlignmentObjective::new(&exp.model, x, &tangent, steps, outcome.target)?;
            let diagnostics = objective.diagnostics(alpha, exp.config.optimizer.fd_step, DEFAULT_HESSIAN_CAP)?;
            let json = serde_json::to_string_pretty(&diagnostics).expect("diagnostics serialize");
            write_file(&out.join("diagnostics.json"), json.as_bytes())?;
            let last = trace.final_record();
            println!(
                "status {} after {} iterations: E = {}, mu = {}",
                trace.status,
                trace.records.len(),
                last.energy,
                last.mu.map(|m| m.to_string()).unwrap_or_else(|| "undefined".into())
            );
        }
        Command::Evaluate(common) => {
            let (cfg, out) = common.load()?;
            let exp = Experiment::load(cfg)?;
            let bundle = run_comparison(&exp, &out)?;
            print_summary(&bundle.summary);
            println!("wrote {}", bundle.metrics_csv.display());
        }
        Command::Report {
            out_dir,
            metric,
            bins,
            kde,
        } => {
            let bundle = report(&out_dir, bins, kde, &[metric])?;
            print_summary(&bundle.summary);
            for h in &bundle.histograms {
                println!("wrote {}", h.display());
            }
        }
        Command::Gallery { common, points } => {
            let (cfg, out) = common.load()?;
            let exp = Experiment::load(cfg)?;
            let svg = gallery(&exp, &points)?;
            write_file(&out.join("gallery.svg"), svg.as_bytes())?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e.category() {
                Category::Config => 2,
                Category::Data => 3,
                Category::Numerical => 4,
            })
        }
    }
}
