use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use guidelight::config::{generate_flow_patterns, ConfigError, RunManifest, ScenarioConfig};
use guidelight::env::save_trace;
use guidelight::eval::{ablation_suite, evaluate, Ablation, Controller, EvalReport, MethodReport};
use guidelight::nn::checkpoint;
use guidelight::teachers::{Teacher, TeacherKind};
use guidelight::trainer::{save_log, Trainer};

#[derive(Parser, Debug)]
#[command(name = "guidelight", version, about = "Teacher-guided cyclic signal control: train, evaluate, ablate")]
struct Cli {
    /// Scenario file (TOML); built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for initialization and rollouts (train, ablate) or pattern generation (gen-flows).
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
    /// Dotted-path override, e.g. `train.kappa=0`; repeatable.
    #[arg(long = "override", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a policy and write checkpoints, the per-update log and a manifest.
    Train {
        /// Also checkpoint every N episodes.
        #[arg(long)]
        checkpoint_every: Option<usize>,
    },
    /// Score checkpoints and teachers on held-out patterns and the staircase.
    Eval {
        #[arg(long)]
        checkpoint: Vec<PathBuf>,
        /// Teachers to score; all of them when neither teachers nor checkpoints are given.
        #[arg(long)]
        teacher: Vec<String>,
    },
    /// Train and score the ablation variants over the configured training seeds.
    Ablate {
        /// Subset of full, wo_l, wo_s, wo_bc.
        #[arg(long, value_delimiter = ',')]
        variants: Vec<String>,
    },
    /// Tabulate each teacher's plan across a grid of total flows.
    Teachers {
        #[arg(long)]
        teacher: Vec<String>,
        #[arg(long, default_value_t = 2000)]
        max_flow: u32,
        #[arg(long, default_value_t = 10)]
        step: u32,
    },
    /// Write the training demand patterns as CSV files.
    GenFlows {
        #[arg(long)]
        count: Option<usize>,
    },
}

enum Failure {
    Config(String),
    Runtime(String),
}

impl Failure {
    fn runtime(e: impl std::fmt::Display) -> Self {
        Failure::Runtime(e.to_string())
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e.to_string())
    }
}

fn parse_teachers(names: &[String]) -> Result<Vec<TeacherKind>, Failure> {
    if names.is_empty() {
        return Ok(TeacherKind::ALL.to_vec());
    }
    names.iter().map(|n| n.parse().map_err(|e: guidelight::teachers::TeacherError| Failure::Config(e.to_string()))).collect()
}

fn write_toml(path: &Path, scenario: &ScenarioConfig) -> Result<(), Failure> {
    std::fs::write(path, scenario.to_toml_string()?).map_err(Failure::runtime)
}

struct Run<'a> {
    cli: &'a Cli,
    scenario: ScenarioConfig,
    manifest: RunManifest,
}

impl Run<'_> {
    fn output(&mut self, name: impl AsRef<Path>) -> Result<PathBuf, Failure> {
        let path = self.cli.out_dir.join(name);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(Failure::runtime)?;
        }
        self.manifest.outputs.push(path.clone());
        Ok(path)
    }

    fn finish(mut self) -> Result<(), Failure> {
        let snapshot = self.output("config.toml")?;
        write_toml(&snapshot, &self.scenario)?;
        let path = self.cli.out_dir.join("manifest.json");
        self.manifest.outputs.push(path.clone());
        self.manifest.save(&path)?;
        Ok(())
    }

    fn train(&mut self, checkpoint_every: Option<usize>) -> Result<(), Failure> {
        let setup = self.scenario.train_setup()?;
        let mut trainer = Trainer::new(setup.net, setup.train, setup.env, setup.teachers).map_err(Failure::runtime)?;
        let mut saved = Vec::new();
        let dir = self.cli.out_dir.join("checkpoints");
        trainer
            .train(&setup.profiles, |t, s| {
                if let Some(n) = checkpoint_every.filter(|n| *n > 0) {
                    if (s.episode + 1) % n == 0 {
                        std::fs::create_dir_all(&dir)?;
                        let path = dir.join(format!("episode_{:05}.ckpt", s.episode + 1));
                        checkpoint::save(t.net(), &path)?;
                        saved.push(path);
                    }
                }
                Ok(())
            })
            .map_err(Failure::runtime)?;
        self.manifest.outputs.extend(saved);
        let log = self.output("train_log.csv")?;
        save_log(trainer.log(), &log).map_err(Failure::runtime)?;
        let ckpt = self.output("policy.ckpt")?;
        checkpoint::save(trainer.net(), &ckpt).map_err(Failure::runtime)?;
        self.manifest.checksum = Some(trainer.net().params().checksum());
        eprintln!(
            "trained {} episodes, {} updates, {} remapped labels",
            trainer.config().episodes,
            trainer.updates(),
            trainer.remapped_labels()
        );
        Ok(())
    }

    fn write_report(&mut self, methods: Vec<MethodReport>) -> Result<(), Failure> {
        let report = EvalReport { methods, tolerance: self.scenario.eval.tolerance };
        let csv = self.output("report.csv")?;
        let json = self.output("report.json")?;
        report.write_csv(std::fs::File::create(&csv).map_err(Failure::runtime)?).map_err(Failure::runtime)?;
        std::fs::write(&json, serde_json::to_string_pretty(&report).map_err(Failure::runtime)?).map_err(Failure::runtime)?;
        for m in &report.methods {
            let path = self.output(format!("traces/{}_staircase.csv", m.method))?;
            let mut w = csv_writer(&path)?;
            w.write_record(["total_flow", "cycle_time"]).map_err(Failure::runtime)?;
            for (flow, cycle) in &m.staircase_pairs {
                w.write_record([flow.to_string(), cycle.to_string()]).map_err(Failure::runtime)?;
            }
            w.flush().map_err(Failure::runtime)?;
        }
        for m in &report.methods {
            println!(
                "{:<16} All {:>9.4} ± {:.4}  v {:.2}  l {:.1}  gr {:.3}  gi {:.3}  rho {}",
                m.method,
                m.all.mean,
                m.all.std,
                m.v.mean,
                m.l.mean,
                m.gr.mean,
                m.gi.mean,
                m.monotonicity.rho().map_or("n/a".to_string(), |r| format!("{r:.3}"))
            );
        }
        Ok(())
    }

    fn eval(&mut self, checkpoints: &[PathBuf], teachers: &[String]) -> Result<(), Failure> {
        let setup = self.scenario.eval_setup()?;
        let kinds = if teachers.is_empty() && !checkpoints.is_empty() { Vec::new() } else { parse_teachers(teachers)? };
        let mut methods = Vec::new();
        for path in checkpoints {
            let net = checkpoint::load(path).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
            let name = path.file_stem().map_or("policy".into(), |s| s.to_string_lossy().into_owned());
            methods.push(evaluate(&Controller::Policy(net), &name, &setup).map_err(Failure::runtime)?);
        }
        for kind in kinds {
            let teacher = Teacher::new(kind, self.scenario.teachers.clone(), self.scenario.env.bounds)
                .map_err(|e| Failure::Config(e.to_string()))?;
            let controller = Controller::Teacher(teacher);
            methods.push(evaluate(&controller, kind.name(), &setup).map_err(Failure::runtime)?);
            if let Some(profile) = setup.profiles.first() {
                let mut env = guidelight::env::TrafficEnv::new(setup.env.clone(), profile.clone()).map_err(Failure::runtime)?;
                controller.run_episode(&mut env, setup.seeds[0]).map_err(Failure::runtime)?;
                let path = self.output(format!("traces/{}_pattern0.csv", kind.name()))?;
                save_trace(env.trace(), &path).map_err(Failure::runtime)?;
            }
        }
        self.write_report(methods)
    }

    fn ablate(&mut self, variants: &[String]) -> Result<(), Failure> {
        let variants: Vec<Ablation> = if variants.is_empty() {
            self.scenario.eval.ablations.clone()
        } else {
            variants.iter().map(|v| v.parse().map_err(Failure::Config)).collect::<Result<_, _>>()?
        };
        let train = self.scenario.train_setup()?;
        let eval = self.scenario.eval_setup()?;
        let seeds = match self.cli.seed {
            Some(s) => vec![s],
            None => self.scenario.eval.train_seeds.clone(),
        };
        let methods = ablation_suite(&train, &eval, &variants, &seeds).map_err(Failure::runtime)?;
        self.write_report(methods)
    }

    fn teachers(&mut self, names: &[String], max_flow: u32, step: u32) -> Result<(), Failure> {
        if step == 0 {
            return Err(Failure::Config("--step must be positive".into()));
        }
        let shares = self.scenario.flows.base.shares;
        for kind in parse_teachers(names)? {
            let teacher = Teacher::new(kind, self.scenario.teachers.clone(), self.scenario.env.bounds)
                .map_err(|e| Failure::Config(e.to_string()))?;
            let path = self.output(format!("teacher_{}.csv", kind.name()))?;
            let mut w = csv_writer(&path)?;
            w.write_record(["total_flow", "cycle", "d_a", "d_d", "d_e", "d_h"]).map_err(Failure::runtime)?;
            for total in (0..=max_flow).step_by(step as usize) {
                let flows = shares.map(|s| s * f64::from(total));
                let plan = teacher.target_plan(&flows).map_err(Failure::runtime)?;
                let cycle = teacher.cycle_curve(&flows).map_or(plan.cycle_time(), |c| c as u32);
                let d = plan.durations();
                let row = [total, cycle, d[0], d[1], d[2], d[3]].map(|x| x.to_string());
                w.write_record(&row).map_err(Failure::runtime)?;
            }
            w.flush().map_err(Failure::runtime)?;
        }
        Ok(())
    }

    fn gen_flows(&mut self, count: Option<usize>) -> Result<(), Failure> {
        let src = &self.scenario.flows;
        let count = count.unwrap_or(src.patterns);
        let seed = self.cli.seed.unwrap_or(src.seed);
        let base = src.base.profile().map_err(|e| Failure::Config(e.to_string()))?;
        let noise = src.noise;
        let patterns = generate_flow_patterns(&base, count, seed, &noise).map_err(|e| Failure::Config(e.to_string()))?;
        for (i, p) in patterns.iter().enumerate() {
            let path = self.output(format!("flows/pattern_{i:04}.csv"))?;
            p.save(&path).map_err(Failure::runtime)?;
        }
        Ok(())
    }
}

fn csv_writer(path: &Path) -> Result<csv::Writer<std::fs::File>, Failure> {
    csv::Writer::from_path(path).map_err(Failure::runtime)
}

fn run(cli: &Cli) -> Result<(), Failure> {
    let mut scenario = ScenarioConfig::load(cli.config.as_deref(), &cli.overrides)?;
    if let (Some(seed), Command::Train { .. }) = (cli.seed, &cli.command) {
        scenario = scenario.with_seed(seed);
    }
    let name = match cli.command {
        Command::Train { .. } => "train",
        Command::Eval { .. } => "eval",
        Command::Ablate { .. } => "ablate",
        Command::Teachers { .. } => "teachers",
        Command::GenFlows { .. } => "gen-flows",
    };
    let seed = cli.seed.unwrap_or(scenario.train.seed);
    std::fs::create_dir_all(&cli.out_dir).map_err(Failure::runtime)?;
    let manifest = RunManifest::new(name, seed, cli.config.as_deref(), &cli.overrides, &scenario);
    let mut run = Run { cli, scenario, manifest };
    match &cli.command {
        Command::Train { checkpoint_every } => run.train(*checkpoint_every)?,
        Command::Eval { checkpoint, teacher } => run.eval(checkpoint, teacher)?,
        Command::Ablate { variants } => run.ablate(variants)?,
        Command::Teachers { teacher, max_flow, step } => run.teachers(teacher, *max_flow, *step)?,
        Command::GenFlows { count } => run.gen_flows(*count)?,
    }
    run.finish()
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("config error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(3)
        }
    }
}
