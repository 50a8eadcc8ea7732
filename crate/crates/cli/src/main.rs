//! Command-line interface: data generation, training, sampling, baselines,
//! evaluation, ablation, and rendering over the grid-file formats.
//!
//! Configuration comes from an optional `--config` file; every config key
//! is also available as a `--<key> <value>` override flag. Thread count is
//! controlled only by the `RAYON_NUM_THREADS` environment variable.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Arg, ArgAction, ArgMatches, Command};

use swathfill_core::io::config::{RunConfig, CONFIG_KEYS};
use swathfill_core::pipeline::{self, BaselineMethod};
use swathfill_core::Error;

fn with_config_flags(cmd: Command) -> Command {
    let mut cmd = cmd.arg(
        Arg::new("config")
            .long("config")
            .value_name("FILE")
            .help("Configuration file (key = value lines)"),
    );
    for &key in CONFIG_KEYS {
        cmd = cmd.arg(
            Arg::new(key)
                .long(key)
                .value_name("VALUE")
                .help("Override the config key of the same name"),
        );
    }
    cmd
}

fn cli() -> Command {
    let paths = |c: Command, names: &[(&'static str, &'static str, bool)]| {
        let mut c = c;
        for &(name, help, multi) in names {
            let mut a = Arg::new(name)
                .long(name)
                .value_name("PATH")
                .help(help.to_string())
                .required(true);
            if multi {
                a = a.action(ArgAction::Append);
            }
            c = c.arg(a);
        }
        c
    };
    Command::new("swathfill")
        .about("Inpaints masked gridded field sequences with a conditional diffusion model")
        .subcommand_required(true)
        .arg_required_else_help(true)
        .subcommand(with_config_flags(paths(
            Command::new("gen-data").about("Generate the synthetic training corpus and evaluation windows"),
            &[("out", "Output directory", false)],
        )))
        .subcommand(with_config_flags(
            paths(
                Command::new("train").about("Train the configured model; writes a checkpoint per epoch"),
                &[
                    ("data", "Data directory from gen-data", false),
                    ("out", "Output directory", false),
                ],
            )
            .arg(
                Arg::new("resume")
                    .long("resume")
                    .value_name("PATH")
                    .help("Checkpoint base to resume from"),
            ),
        ))
        .subcommand(with_config_flags(
            paths(
                Command::new("sample").about("Draw an ensemble of inpainted samples and their mean"),
                &[
                    ("checkpoint", "Checkpoint base path", false),
                    ("input", "Masked-field grid base path", false),
                    ("mask", "Mask grid base path", false),
                    ("aux", "Auxiliary-channels grid base path", false),
                    ("out", "Output directory", false),
                ],
            )
            .arg(
                Arg::new("k")
                    .long("k")
                    .value_name("N")
                    .help("Ensemble size (defaults to config `ensemble`)"),
            ),
        ))
        .subcommand(
            paths(
                Command::new("baseline").about("Run a non-learned baseline over one masked input"),
                &[
                    ("input", "Masked-field grid base path", false),
                    ("out", "Output grid base path", false),
                ],
            )
            .arg(
                Arg::new("method")
                    .long("method")
                    .value_name("tli|tli-lf")
                    .required(true)
                    .help("Interpolation method"),
            ),
        )
        .subcommand(with_config_flags(paths(
            Command::new("evaluate").about("Compute hole-domain metrics over aligned windows"),
            &[
                ("pred", "Prediction grid base (repeat per window)", true),
                ("truth", "Truth grid base (repeat per window)", true),
                ("mask", "Mask grid base (repeat per window)", true),
                ("out", "Report output file", false),
            ],
        )))
        .subcommand(with_config_flags(paths(
            Command::new("ablate").about("Sensitivity analysis: re-sample with each condition group blanked"),
            &[
                ("checkpoint", "Checkpoint base path", false),
                ("data", "Data directory holding eval windows", false),
                ("out", "Table output file", false),
            ],
        )))
        .subcommand(paths(
            Command::new("render").about("Render each frame of a field grid as a PPM image"),
            &[
                ("input", "Field grid base path", false),
                ("out", "Output directory", false),
            ],
        ))
}

fn load_config(m: &ArgMatches) -> Result<RunConfig, Error> {
    let mut cfg = match m.try_get_one::<String>("config") {
        Ok(Some(path)) => RunConfig::load(&PathBuf::from(path))?,
        _ => RunConfig::default(),
    };
    for &key in CONFIG_KEYS {
        if let Ok(Some(value)) = m.try_get_one::<String>(key) {
            cfg.set(key, value)?;
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn path_arg(m: &ArgMatches, name: &str) -> PathBuf {
    PathBuf::from(m.get_one::<String>(name).expect("required arg"))
}

fn path_list(m: &ArgMatches, name: &str) -> Vec<PathBuf> {
    m.get_many::<String>(name)
        .map(|vals| vals.map(PathBuf::from).collect())
        .unwrap_or_default()
}

fn run() -> Result<(), Error> {
    let matches = cli().get_matches();
    match matches.subcommand() {
        Some(("gen-data", m)) => {
            let cfg = load_config(m)?;
            let (train, eval) = pipeline::cmd_gen_data(&cfg, &path_arg(m, "out"))?;
            println!("wrote {train} training sequences and {eval} evaluation windows");
        }
        Some(("train", m)) => {
            let cfg = load_config(m)?;
            let resume = m.get_one::<String>("resume").map(PathBuf::from);
            let summary = pipeline::cmd_train(&cfg, &path_arg(m, "data"), &path_arg(m, "out"), resume.as_deref())?;
            for (i, loss) in summary.epoch_losses.iter().enumerate() {
                println!("epoch {} loss {loss}", i + 1);
            }
            println!("checkpoint: {}", summary.checkpoint.display());
        }
        Some(("sample", m)) => {
            let cfg = load_config(m)?;
            let k = match m.get_one::<String>("k") {
                Some(v) => v
                    .parse::<usize>()
                    .map_err(|_| Error::Config(format!("bad ensemble size {v:?}")))?,
                None => cfg.ensemble,
            };
            let written = pipeline::cmd_sample(
                &cfg,
                &path_arg(m, "checkpoint"),
                &path_arg(m, "input"),
                &path_arg(m, "mask"),
                &path_arg(m, "aux"),
                &path_arg(m, "out"),
                k,
            )?;
            for p in written {
                println!("wrote {}", p.display());
            }
        }
        Some(("baseline", m)) => {
            let method = BaselineMethod::parse(m.get_one::<String>("method").expect("required"))?;
            pipeline::cmd_baseline(method, &path_arg(m, "input"), &path_arg(m, "out"))?;
            println!("wrote {}", path_arg(m, "out").display());
        }
        Some(("evaluate", m)) => {
            let cfg = load_config(m)?;
            let report = pipeline::cmd_evaluate(
                &cfg,
                &path_list(m, "pred"),
                &path_list(m, "truth"),
                &path_list(m, "mask"),
                &path_arg(m, "out"),
            )?;
            print!("{}", report.to_text());
        }
        Some(("ablate", m)) => {
            let cfg = load_config(m)?;
            let table =
                pipeline::cmd_ablate(&cfg, &path_arg(m, "checkpoint"), &path_arg(m, "data"), &path_arg(m, "out"))?;
            for (i, g) in table.groups.iter().enumerate() {
                let r = table
                    .contribution
                    .as_ref()
                    .map(|c| c[i].to_string())
                    .unwrap_or_else(|| "undef".into());
                println!("{g} delta={} contribution={r}", table.delta[i]);
            }
        }
        Some(("render", m)) => {
            let written = pipeline::cmd_render(&path_arg(m, "input"), &path_arg(m, "out"))?;
            for p in written {
                println!("wrote {}", p.display());
            }
        }
        _ => unreachable!("subcommand required"),
    }
    Ok(())
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
