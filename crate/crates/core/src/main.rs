use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use ridgefuse::alignment::{GAConfig, RefineMode};
use ridgefuse::evaluation::{self, EvalError, GenuineMode, Protocol};
use ridgefuse::pnm;
use ridgefuse::store;
use ridgefuse::synthesis::{synthesize, FingerprintTemplate, PreprocessParams, SynthesisError};
use ridgefuse::synthgen::{gen_db, DbParams, GenDbError, NoiseParams};

/// Exit codes: 0 ok, 1 usage, 2 data error, 3 internal.
enum CliError {
    Usage(String),
    Data(String),
    Internal(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Internal(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::Internal(m) => m,
        }
    }
}

fn data(e: impl std::fmt::Display) -> CliError {
    CliError::Data(e.to_string())
}

fn internal(e: impl std::fmt::Display) -> CliError {
    CliError::Internal(e.to_string())
}

#[derive(Copy, Clone, ValueEnum)]
enum RefineModeArg {
    Paper,
    Exact,
}

#[derive(Copy, Clone, ValueEnum)]
enum GenuineModeArg {
    Meanf,
    Pairs,
}

#[derive(Parser)]
#[command(name = "ridgefuse", version, about = "Fingerprint template fusion and evaluation")]
struct Cli {
    /// Defaults file with `key = value` lines; explicit flags override it.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// RNG seed shared by every seeded stage.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// GA population size N_p.
    #[arg(long, global = true)]
    pop: Option<usize>,

    /// GA generation count N_t.
    #[arg(long, global = true)]
    gens: Option<usize>,

    /// GA mutation probability P_m.
    #[arg(long, global = true)]
    pm: Option<f64>,

    /// GA crossover probability P_s.
    #[arg(long, global = true)]
    ps: Option<f64>,

    /// Minutiae correspondence distance threshold T_d, pixels.
    #[arg(long, global = true)]
    td: Option<f64>,

    /// Ridge-fusion dedup radius r, pixels.
    #[arg(long, global = true)]
    r: Option<f64>,

    /// Minutiae correspondence angle tolerance, degrees.
    #[arg(long = "angle-tol", global = true)]
    angle_tol: Option<f64>,

    /// Transform refinement after the GA: the literal formulas or the
    /// closed-form two-point solution.
    #[arg(long = "refine-mode", global = true, value_enum)]
    refine_mode: Option<RefineModeArg>,

    /// Genuine pairing: meanF vs each impression, or impression pairs.
    #[arg(long = "genuine-mode", global = true, value_enum)]
    genuine_mode: Option<GenuineModeArg>,

    /// Worker thread count; defaults to all cores. Outputs do not depend
    /// on it.
    #[arg(long, global = true)]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Preprocess one PGM image into mask, skeleton, and minutiae files.
    Preprocess {
        image: PathBuf,
        out_dir: PathBuf,
    },
    /// Fuse every PGM impression in a directory into a meanF bundle.
    Synthesize {
        dir: PathBuf,
        out_bundle: PathBuf,
    },
    /// Score one query PGM against a meanF bundle.
    Match {
        bundle: PathBuf,
        query: PathBuf,
    },
    /// Run the genuine/impostor protocol over a `<finger>_<impression>.pgm`
    /// directory and write the threshold sweep.
    Evaluate {
        db_dir: PathBuf,
        out_csv: PathBuf,
        /// Impostor pair count.
        #[arg(long)]
        impostors: Option<usize>,
    },
    /// Generate a synthetic DB with ground-truth transform files.
    Gen {
        out_dir: PathBuf,
        #[arg(long, default_value_t = 10)]
        fingers: u32,
        #[arg(long, default_value_t = 8)]
        impressions: u32,
        #[arg(long, default_value_t = 288)]
        width: usize,
        #[arg(long, default_value_t = 384)]
        height: usize,
        /// Ridge spacing of the master pattern, pixels.
        #[arg(long, default_value_t = 10)]
        period: u32,
        /// Impressions translate by up to this much on each axis.
        #[arg(long = "max-shift", default_value_t = 12.0)]
        max_shift: f64,
        /// Per-pixel skeleton dropout probability.
        #[arg(long, default_value_t = 0.0)]
        dropout: f64,
        /// Random 3-px ridge breaks per impression.
        #[arg(long, default_value_t = 0)]
        breaks: usize,
    },
}

/// Global knobs after merging defaults, the config file, and flags.
struct Settings {
    ga: GAConfig,
    r: f64,
    refine_mode: RefineMode,
    genuine_mode: GenuineMode,
    impostors: usize,
    seed: u64,
}

const KNOWN_KEYS: [&str; 12] = [
    "seed",
    "pop",
    "gens",
    "pm",
    "ps",
    "td",
    "r",
    "angle-tol",
    "refine-mode",
    "genuine-mode",
    "jobs",
    "impostors",
];

fn read_config(path: &Path) -> Result<HashMap<String, String>, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))?;
    let mut map = HashMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            CliError::Usage(format!("{}:{}: expected `key = value`", path.display(), i + 1))
        })?;
        let key = key.trim();
        if !KNOWN_KEYS.contains(&key) {
            return Err(CliError::Usage(format!(
                "{}:{}: unknown key `{key}`",
                path.display(),
                i + 1
            )));
        }
        map.insert(key.to_string(), value.trim().to_string());
    }
    Ok(map)
}

fn file_value<T: std::str::FromStr>(
    file: &HashMap<String, String>,
    key: &str,
) -> Result<Option<T>, CliError>
where
    T::Err: std::fmt::Display,
{
    match file.get(key) {
        None => Ok(None),
        Some(raw) => raw
            .parse()
            .map(Some)
            .map_err(|e| CliError::Usage(format!("config key `{key}`: {e}"))),
    }
}

fn merge_settings(cli: &Cli, file: &HashMap<String, String>) -> Result<Settings, CliError> {
    let d = GAConfig::default();
    let seed = cli.seed.or(file_value(file, "seed")?).unwrap_or(42);
    let refine_mode = match cli.refine_mode {
        Some(RefineModeArg::Paper) => RefineMode::Paper,
        Some(RefineModeArg::Exact) => RefineMode::Exact,
        None => match file.get("refine-mode").map(String::as_str) {
            None => RefineMode::Exact,
            Some("paper") => RefineMode::Paper,
            Some("exact") => RefineMode::Exact,
            Some(other) => {
                return Err(CliError::Usage(format!(
                    "config key `refine-mode`: expected paper|exact, got `{other}`"
                )))
            }
        },
    };
    let genuine_mode = match cli.genuine_mode {
        Some(GenuineModeArg::Meanf) => GenuineMode::MeanF,
        Some(GenuineModeArg::Pairs) => GenuineMode::Pairs,
        None => match file.get("genuine-mode").map(String::as_str) {
            None => GenuineMode::MeanF,
            Some("meanf") => GenuineMode::MeanF,
            Some("pairs") => GenuineMode::Pairs,
            Some(other) => {
                return Err(CliError::Usage(format!(
                    "config key `genuine-mode`: expected meanf|pairs, got `{other}`"
                )))
            }
        },
    };
    Ok(Settings {
        ga: GAConfig {
            population: cli.pop.or(file_value(file, "pop")?).unwrap_or(d.population),
            generations: cli.gens.or(file_value(file, "gens")?).unwrap_or(d.generations),
            mutation_p: cli.pm.or(file_value(file, "pm")?).unwrap_or(d.mutation_p),
            crossover_p: cli.ps.or(file_value(file, "ps")?).unwrap_or(d.crossover_p),
            t_d: cli.td.or(file_value(file, "td")?).unwrap_or(d.t_d),
            angle_tol_deg: cli.angle_tol.or(file_value(file, "angle-tol")?).unwrap_or(d.angle_tol_deg),
            seed,
        },
        r: cli.r.or(file_value(file, "r")?).unwrap_or(3.0),
        refine_mode,
        genuine_mode,
        impostors: file_value(file, "impostors")?.unwrap_or(1000),
        seed,
    })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}

fn run(cli: &Cli) -> Result<(), CliError> {
    let file = match &cli.config {
        Some(path) => read_config(path)?,
        None => HashMap::new(),
    };
    let settings = merge_settings(cli, &file)?;
    let jobs = cli.jobs.or(file_value(&file, "jobs")?);
    if let Some(jobs) = jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(internal)?;
    }
    match &cli.command {
        Command::Preprocess { image, out_dir } => cmd_preprocess(image, out_dir),
        Command::Synthesize { dir, out_bundle } => cmd_synthesize(dir, out_bundle, &settings),
        Command::Match { bundle, query } => cmd_match(bundle, query, &settings),
        Command::Evaluate { db_dir, out_csv, impostors } => {
            cmd_evaluate(db_dir, out_csv, *impostors, &settings)
        }
        Command::Gen {
            out_dir,
            fingers,
            impressions,
            width,
            height,
            period,
            max_shift,
            dropout,
            breaks,
        } => {
            let params = DbParams {
                fingers: *fingers,
                impressions: *impressions,
                width: *width,
                height: *height,
                ridge_period: *period,
                max_shift: *max_shift,
                noise: NoiseParams { dropout: *dropout, ridge_breaks: *breaks, crop: None },
                seed: settings.seed,
            };
            cmd_gen(out_dir, &params)
        }
    }
}

fn stem_of(path: &Path) -> String {
    path.file_stem().map_or_else(|| "image".to_string(), |s| s.to_string_lossy().into_owned())
}

fn load_template(path: &Path) -> Result<FingerprintTemplate, CliError> {
    let img = pnm::read_pgm(path).map_err(data)?;
    Ok(FingerprintTemplate::from_image(&stem_of(path), &img, &PreprocessParams::default()))
}

fn cmd_preprocess(image: &Path, out_dir: &Path) -> Result<(), CliError> {
    let tpl = load_template(image)?;
    if tpl.mask.count_ones() == 0 {
        eprintln!("warning: {}: empty mask, no fingerprint area found", image.display());
    }
    fs::create_dir_all(out_dir)
        .map_err(|e| internal(format!("cannot create {}: {e}", out_dir.display())))?;
    let stem = stem_of(image);
    pnm::write_pbm(&out_dir.join(format!("{stem}.mask.pbm")), &tpl.mask).map_err(internal)?;
    pnm::write_pbm(&out_dir.join(format!("{stem}.skeleton.pbm")), &tpl.skeleton)
        .map_err(internal)?;
    store::write_minutiae(&out_dir.join(format!("{stem}.minutiae.txt")), &tpl.minutiae)
        .map_err(internal)?;
    println!("{}: {} minutiae", stem, tpl.minutiae.len());
    Ok(())
}

fn cmd_synthesize(dir: &Path, out_bundle: &Path, settings: &Settings) -> Result<(), CliError> {
    let mut images: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| data(format!("cannot read {}: {e}", dir.display())))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "pgm"))
        .collect();
    images.sort();
    if images.is_empty() {
        return Err(CliError::Data(format!("no .pgm images in {}", dir.display())));
    }
    let templates: Vec<FingerprintTemplate> =
        images.iter().map(|p| load_template(p)).collect::<Result<_, _>>()?;
    let mf = synthesize(&templates, &settings.ga, settings.r, settings.refine_mode)
        .map_err(|e: SynthesisError| data(e))?;
    store::write_meanf(out_bundle, &mf).map_err(internal)?;
    println!(
        "meanF base {} from {} impressions: {} minutiae, {} aligned",
        mf.base_id,
        templates.len(),
        mf.minutiae.len(),
        mf.params
            .entries
            .iter()
            .filter(|e| matches!(e, ridgefuse::geometry::ParamEntry::Aligned { .. }))
            .count(),
    );
    Ok(())
}

fn cmd_match(bundle: &Path, query: &Path, settings: &Settings) -> Result<(), CliError> {
    let mf = store::read_meanf(bundle).map_err(data)?;
    let tpl = load_template(query)?;
    let score = evaluation::match_score(&mf, &tpl, &settings.ga);
    println!(
        "score {:.6} matched {} query {} ref {}",
        score.score, score.matched, score.query_size, score.ref_size
    );
    if let Some(t) = score.transform {
        println!("{}", store::transform_line(&t));
    }
    Ok(())
}

fn cmd_evaluate(
    db_dir: &Path,
    out_csv: &Path,
    impostors: Option<usize>,
    settings: &Settings,
) -> Result<(), CliError> {
    let (entries, warnings) = evaluation::ingest_db(db_dir).map_err(data)?;
    for w in &warnings {
        eprintln!("warning: {w}");
    }
    let protocol = Protocol {
        genuine_mode: settings.genuine_mode,
        impostor_pairs: impostors.unwrap_or(settings.impostors),
        r: settings.r,
        refine_mode: settings.refine_mode,
        seed: settings.seed,
    };
    let report = evaluation::evaluate(&entries, &settings.ga, &protocol).map_err(|e| match e {
        EvalError::Io { .. } | EvalError::Pnm(_) => internal(e),
        other => data(other),
    })?;
    evaluation::write_report(out_csv, &report).map_err(internal)?;
    println!(
        "{} genuine, {} impostor scores over {} fingers",
        report.genuine.len(),
        report.impostor.len(),
        report.fingers
    );
    match report.operating_point_at(0.05) {
        Some(row) => println!(
            "operating point: threshold {:.2} GAR {:.6} FAR {:.6}",
            row.threshold, row.gar, row.far
        ),
        None => println!("no threshold reaches FAR <= 0.05"),
    }
    Ok(())
}

fn cmd_gen(out_dir: &Path, params: &DbParams) -> Result<(), CliError> {
    // Sampled shifts must stay inside the transform search box on both axes.
    if !(0.0..=114.0).contains(&params.max_shift) {
        return Err(CliError::Data(format!(
            "max shift {} leaves the transform range [-114, 114]",
            params.max_shift
        )));
    }
    gen_db(out_dir, params).map_err(|e| match e {
        GenDbError::Gen(g) => data(g),
        other => internal(other),
    })?;
    println!(
        "wrote {} fingers x {} impressions to {}",
        params.fingers,
        params.impressions,
        out_dir.display()
    );
    Ok(())
}
