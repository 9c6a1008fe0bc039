//! `isp`: synthesize measurements, run the classical and learned inversions
//! and tabulate their metrics.
//!
//! Every subcommand writes into `--out` and prints one JSON line listing the
//! files it produced. Failures print `{"error": kind, "message": ...}` on
//! stderr and exit nonzero.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use isp_core::config::{PermittivityMap, ProblemConfig, WorkbenchConfig};
use isp_core::data::shapes::random_scatterer;
use isp_core::data::{
    export_measured_csv, generate_dataset, import_measured_csv, metrics, rasterize_circles, Circle,
    Dataset, MeasuredData, Workspace,
};
use isp_core::io::{load_field, save_field, write_pgm, Field};
use isp_core::operators::{add_noise, simulate, OperatorSet};
use isp_core::som::{som_invert, write_history_csv};
use isp_core::somnet::{evaluate, infer, train, NetInput, Physics, SomNetModel, TrainingSample};
use isp_core::spectral::{bp_init, contrast};
use isp_core::{CMatrix, Complex64, Error, Result};
use serde_json::json;

#[derive(Parser, Debug)]
#[command(name = "isp", version, about = "2-D TM inverse scattering workbench")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Global {
    /// TOML configuration file; absent keys keep their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for datasets, noise and parameter initialization.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory, created if missing.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    /// Configuration override such as `inv_grid=16` or `train.epochs=2`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Scattered field of a scatterer, synthesized on the simulation grid.
    Simulate {
        /// Disc `cx,cy,radius,eps_re[,eps_im]`; repeatable. Without discs or
        /// `--truth` a random scatterer is drawn from the dataset ranges.
        #[arg(long = "circle", value_name = "SPEC")]
        circles: Vec<String>,
        /// Permittivity map on the simulation grid (ISPFLD01, n × n).
        #[arg(long, conflicts_with = "circles")]
        truth: Option<PathBuf>,
    },
    /// Back-propagation initialization and deterministic currents.
    Init {
        /// Scattered field, ISPFLD01 or measured CSV.
        #[arg(long)]
        es: PathBuf,
    },
    /// Classical subspace-based optimization.
    Som {
        #[arg(long)]
        es: PathBuf,
        /// Inversion-grid truth, for an RMSE column in the history.
        #[arg(long)]
        truth: Option<PathBuf>,
    },
    /// Trains the unrolled network.
    Train {
        /// Dataset bundle; generated from the configuration when absent.
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Runs a trained network on one measurement.
    Infer {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        es: PathBuf,
    },
    /// Per-sample SSIM and RMSE of every method on the validation split.
    Eval {
        /// Trained network to include.
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Also run the classical optimization on every sample.
        #[arg(long)]
        som: bool,
    },
}

struct Context {
    cfg: WorkbenchConfig,
    seed: u64,
    out: PathBuf,
    written: Vec<PathBuf>,
}

impl Context {
    fn new(global: &Global) -> Result<Self> {
        let mut cfg = WorkbenchConfig::load(global.config.as_deref(), &global.overrides)?;
        if let Some(seed) = global.seed {
            cfg.dataset.seed = seed;
            cfg.train.seed = seed;
        }
        std::fs::create_dir_all(&global.out)?;
        let seed = cfg.dataset.seed;
        Ok(Self { cfg, seed, out: global.out.clone(), written: Vec::new() })
    }

    fn problem(&self) -> &ProblemConfig {
        &self.cfg.problem
    }

    /// Path of an output file, recorded for the summary line.
    fn output(&mut self, name: &str) -> PathBuf {
        let p = self.out.join(name);
        self.written.push(p.clone());
        p
    }

    fn write_map(&mut self, stem: &str, map: &PermittivityMap) -> Result<()> {
        let fld = self.output(&format!("{stem}.fld"));
        save_field(&fld, &map_field(map))?;
        let pgm = self.output(&format!("{stem}.pgm"));
        write_pgm(&pgm, &map.real(), map.n, map.n)
    }
}

fn map_field(map: &PermittivityMap) -> Field {
    Field::Complex { rows: map.n, cols: map.n, data: map.values.clone() }
}

fn load_map(path: &Path, n: usize) -> Result<PermittivityMap> {
    let m = load_field(path)?.to_cmatrix();
    if m.shape() != (n, n) {
        return Err(Error::Dimension(format!("{}: map is {}x{}, grid is {n}x{n}", path.display(), m.nrows(), m.ncols())));
    }
    let values = (0..n).flat_map(|r| (0..n).map(move |c| (r, c))).map(|ix| m[ix]).collect();
    Ok(PermittivityMap { n, values })
}

/// ISPFLD01 or measured CSV, chosen by extension.
fn load_es(path: &Path, problem: &ProblemConfig) -> Result<CMatrix> {
    let es = if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
        let m = import_measured_csv(path)?;
        if (m.frequency - problem.frequency).abs() > 1e-9 * problem.frequency {
            return Err(Error::Config(format!(
                "{} was measured at {} Hz, configuration uses {} Hz",
                path.display(),
                m.frequency,
                problem.frequency
            )));
        }
        m.es
    } else {
        load_field(path)?.to_cmatrix()
    };
    if es.shape() != (problem.n_receivers, problem.n_sources) {
        return Err(Error::Dimension(format!(
            "{}: field is {}x{}, configuration has {} receivers and {} sources",
            path.display(),
            es.nrows(),
            es.ncols(),
            problem.n_receivers,
            problem.n_sources
        )));
    }
    Ok(es)
}

fn parse_circle(spec: &str) -> Result<Circle> {
    let v: Vec<f64> = spec
        .split(',')
        .map(|s| s.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::Config(format!("circle `{spec}`: {e}")))?;
    match v[..] {
        [cx, cy, radius, re] => Ok(Circle { cx, cy, radius, eps: Complex64::new(re, 0.0) }),
        [cx, cy, radius, re, im] => Ok(Circle { cx, cy, radius, eps: Complex64::new(re, im) }),
        _ => Err(Error::Config(format!("circle `{spec}` needs cx,cy,radius,eps_re[,eps_im]"))),
    }
}

fn dataset(ctx: &mut Context, ws: &Workspace, path: Option<&Path>) -> Result<Dataset> {
    match path {
        Some(p) => Dataset::load(p),
        None => {
            let ds = generate_dataset(ws, ctx.problem(), &ctx.cfg.dataset)?;
            ds.save(&ctx.output("dataset.bundle"))?;
            Ok(ds)
        }
    }
}

fn prepare(ctx: &Context, ops: &OperatorSet, samples: &[isp_core::data::Sample], offset: u64) -> Result<Vec<TrainingSample>> {
    let p = ctx.problem();
    samples
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let seed = ctx.seed.wrapping_add(offset + i as u64);
            TrainingSample::prepare(ops, s, p.subspace_dim, p.noise_level, seed, p.lossy)
        })
        .collect()
}

fn run(cli: &Cli) -> Result<serde_json::Value> {
    let mut ctx = Context::new(&cli.global)?;
    let problem = ctx.problem().clone();
    let name = match &cli.command {
        Command::Simulate { circles, truth } => {
            let sim = OperatorSet::simulation(&problem)?;
            let (sim_eps, inv_truth) = match truth {
                Some(path) => (load_map(path, problem.sim_grid)?, None),
                None => {
                    let circles = if circles.is_empty() {
                        random_scatterer(ctx.seed, &ctx.cfg.dataset.ranges(problem.lossy), problem.doi_side).circles
                    } else {
                        circles.iter().map(|c| parse_circle(c)).collect::<Result<_>>()?
                    };
                    let ss = ctx.cfg.dataset.supersample;
                    let inv = rasterize_circles(&circles, &problem.inv(), ss);
                    (rasterize_circles(&circles, &sim.grid, ss), Some(inv))
                }
            };
            let clean = simulate(&sim, &contrast(&sim, &sim_eps))?.scattered;
            let es = add_noise(&clean, problem.noise_level, ctx.seed)?;
            save_field(&ctx.output("es.fld"), &Field::from_cmatrix(&es))?;
            let measured = MeasuredData {
                es,
                frequency: problem.frequency,
                ring_radius: Some(problem.ring_radius),
                aperture: Some(problem.aperture),
            };
            export_measured_csv(&ctx.output("es.csv"), &measured)?;
            if let Some(inv) = inv_truth {
                ctx.write_map("truth", &inv)?;
            }
            "simulate"
        }
        Command::Init { es } => {
            let ops = OperatorSet::inversion(&problem)?;
            let es = load_es(es, &problem)?;
            let init = bp_init(&ops, &es, problem.subspace_dim, problem.lossy)?;
            save_field(&ctx.output("j_plus.fld"), &Field::from_cmatrix(&init.subspace.j_plus))?;
            ctx.write_map("eps_bp", &init.eps_bp)?;
            "init"
        }
        Command::Som { es, truth } => {
            let ops = OperatorSet::inversion(&problem)?;
            let es = load_es(es, &problem)?;
            let truth = truth.as_deref().map(|p| load_map(p, problem.inv_grid)).transpose()?;
            let init = bp_init(&ops, &es, problem.subspace_dim, problem.lossy)?;
            let res = som_invert(&es, &ops, &init, &ctx.cfg.som, problem.lossy, truth.as_ref())?;
            ctx.write_map("eps_som", &res.eps)?;
            write_history_csv(BufWriter::new(File::create(ctx.output("som_history.csv"))?), &res.history)?;
            "som"
        }
        Command::Train { dataset: path } => {
            let ws = Workspace::new(&problem)?;
            let ds = dataset(&mut ctx, &ws, path.as_deref())?;
            let samples = prepare(&ctx, &ws.inv, &ds.train, 0)?;
            let phys = Physics::new(&ws.inv);
            let tc = ctx.cfg.train.clone();
            let mut model = SomNetModel::new(problem.stages, &tc, problem.lossy, tc.seed)?;
            let ckpt = ctx.out.join("checkpoints");
            std::fs::create_dir_all(&ckpt)?;
            let report = train(&mut model, &samples, &phys, &tc, Some(&ckpt))?;
            model.save(&ctx.output("model.ckpt"))?;
            report.write_csv(BufWriter::new(File::create(ctx.output("train_history.csv"))?))?;
            "train"
        }
        Command::Infer { model, es } => {
            let ops = OperatorSet::inversion(&problem)?;
            let model = SomNetModel::load(model)?;
            let es = load_es(es, &problem)?;
            let input = NetInput::from_measurements(&ops, &es, problem.subspace_dim, model.lossy)?;
            let pred = infer(&model, &Physics::new(&ops), &input)?;
            ctx.write_map("eps_net", &pred.eps)?;
            "infer"
        }
        Command::Eval { model, dataset: path, som } => {
            let ws = Workspace::new(&problem)?;
            let ds = dataset(&mut ctx, &ws, path.as_deref())?;
            let val = prepare(&ctx, &ws.inv, &ds.val, ds.train.len() as u64)?;
            let mut rows: Vec<(usize, &str, f64, f64)> = Vec::new();
            for (i, s) in val.iter().enumerate() {
                let (ssim, rmse) = metrics(&s.input.eps_bp, &s.target.truth)?;
                rows.push((i, "bp", ssim, rmse));
                if *som {
                    let es = &s.target.es;
                    let init = bp_init(&ws.inv, es, problem.subspace_dim, problem.lossy)?;
                    let res = som_invert(es, &ws.inv, &init, &ctx.cfg.som, problem.lossy, None)?;
                    let (ssim, rmse) = metrics(&res.eps, &s.target.truth)?;
                    rows.push((i, "som", ssim, rmse));
                }
            }
            if let Some(path) = model {
                let model = SomNetModel::load(path)?;
                for (i, (ssim, rmse)) in evaluate(&model, &Physics::new(&ws.inv), &val)?.into_iter().enumerate() {
                    rows.push((i, "somnet", ssim, rmse));
                }
            }
            rows.sort_by_key(|r| r.0);
            let mut table = String::from("sample,method,ssim,rmse\n");
            for (i, m, ssim, rmse) in &rows {
                table.push_str(&format!("{i},{m},{ssim:.12e},{rmse:.12e}\n"));
            }
            std::fs::write(ctx.output("metrics.csv"), table)?;
            let mut summary = String::from("method,samples,mean_ssim,mean_rmse\n");
            for m in ["bp", "som", "somnet"] {
                let sel: Vec<_> = rows.iter().filter(|r| r.1 == m).collect();
                if !sel.is_empty() {
                    let k = sel.len() as f64;
                    let (s, r) = sel.iter().fold((0.0, 0.0), |a, r| (a.0 + r.2, a.1 + r.3));
                    summary.push_str(&format!("{m},{},{:.12e},{:.12e}\n", sel.len(), s / k, r / k));
                }
            }
            std::fs::write(ctx.output("summary.csv"), summary)?;
            "eval"
        }
    };
    let outputs: Vec<String> = ctx.written.iter().map(|p| p.display().to_string()).collect();
    Ok(json!({ "command": name, "outputs": outputs }))
}

fn fail(kind: &str, message: &str) -> ExitCode {
    eprintln!("{}", json!({ "error": kind, "message": message }));
    ExitCode::FAILURE
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            return fail("usage", msg.lines().next().unwrap_or_default().trim_start_matches("error: "));
        }
    };
    match run(&cli) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => fail(e.kind(), &e.to_string()),
    }
}
