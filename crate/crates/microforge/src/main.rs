use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use microforge::config::{self, ConfigMap, PipelineConfig, RecipeSpec};
use microforge::pipeline::{self, AblationMode, PipelineError, RunOptions};
use microforge::tables::{self, MetricTable};
use microforge::{io, parallel};
use microforge_core::homog::{homogenize, DEFAULT_TOL};
use microforge_core::image::{extract_patches, Phase};
use microforge_core::metrology::{minkowski, MinkowskiTriple, DEFAULT_BINS};
use microforge_core::quilt::assemble_grid_with;
use microforge_core::stylenet::{init_critic, init_generator};
use microforge_core::train::{sample_images, StyleGan, Trainer};
use microforge_core::SquaresRng;

/// Synthesize two-phase microstructures from one exemplar image and
/// characterize them.
#[derive(Parser)]
#[command(name = "microforge", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Cut random square patches from an exemplar image.
    Cut {
        exemplar: PathBuf,
        /// Output patch set (.mgpt).
        out: PathBuf,
        #[arg(long, default_value_t = 64)]
        patch_size: usize,
        #[arg(long, default_value_t = 1024)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train a generator/critic pair on a patch set.
    Train {
        patches: PathBuf,
        /// Output checkpoint (.mgck).
        out: PathBuf,
        /// Loss trace CSV.
        #[arg(long)]
        trace: Option<PathBuf>,
        #[command(flatten)]
        settings: Settings,
    },
    /// Sample images from a checkpoint.
    Generate {
        checkpoint: PathBuf,
        out_dir: PathBuf,
        #[arg(long, default_value_t = 64)]
        count: usize,
        #[arg(long, default_value_t = 16)]
        batch: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Quilt a grid of images drawn at random from a directory.
    Quilt {
        in_dir: PathBuf,
        out: PathBuf,
        #[arg(long, default_value_t = 4)]
        rows: usize,
        #[arg(long, default_value_t = 4)]
        cols: usize,
        /// Overlap width; defaults to an eighth of the tile size.
        #[arg(long)]
        overlap: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Binarize an image, or every image of a directory.
    Postprocess {
        input: PathBuf,
        out: PathBuf,
        /// Preset name (alporas, digitalrock) or recipe file.
        #[arg(long, default_value = "digitalrock")]
        recipe: String,
    },
    /// Minkowski functionals of binary masks, optionally against a reference set.
    Stats {
        input: PathBuf,
        /// Reference (real) masks; writes a comparison report.
        #[arg(long)]
        compare: Option<PathBuf>,
        #[arg(long, default_value = "solid")]
        phase: String,
        #[arg(long, default_value_t = DEFAULT_BINS)]
        bins: usize,
        /// Output directory for CSV and JSON tables; prints CSV when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Effective elastic properties of binary masks.
    Homog {
        input: PathBuf,
        #[arg(long, default_value_t = 1.0)]
        e_solid: f64,
        #[arg(long, default_value_t = 0.3)]
        nu_solid: f64,
        #[arg(long, default_value_t = 1e-6)]
        contrast: f64,
        #[arg(long, default_value = "stress")]
        plane: String,
        #[arg(long, default_value_t = DEFAULT_TOL)]
        tol: f64,
        /// CSV output; prints when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Rebuild report.json and manifest.json of a run directory.
    Report {
        run_dir: PathBuf,
        /// Only check the manifest hashes.
        #[arg(long)]
        verify: bool,
    },
    /// Run every stage under one config file.
    Pipeline {
        #[command(flatten)]
        settings: Settings,
    },
    /// Compare training modes with shared seed and data.
    Ablation {
        /// Comma-separated: progressive, single_resolution, resolution_increase.
        #[arg(long, default_value = "progressive,single_resolution")]
        modes: String,
        #[command(flatten)]
        settings: Settings,
    },
}

#[derive(Args)]
struct Settings {
    /// key = value config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Print stage progress.
    #[arg(long, short)]
    verbose: bool,
    /// Config overrides, as --key=value or --key value.
    #[arg(trailing_var_arg = true, allow_hyphen_values = true, value_name = "--KEY=VALUE")]
    overrides: Vec<String>,
}

impl Settings {
    fn map(&self) -> Result<ConfigMap, Failure> {
        let mut map = match &self.config {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| invalid(format!("{}: {e}", p.display())))?;
                ConfigMap::parse(&text).map_err(invalid)?
            }
            None => ConfigMap::default(),
        };
        map.apply_overrides(&self.overrides).map_err(invalid)?;
        Ok(map)
    }
}

/// An error and its exit code.
struct Failure(u8, String);

fn invalid(e: impl std::fmt::Display) -> Failure {
    Failure(2, e.to_string())
}

fn failed(e: impl std::fmt::Display) -> Failure {
    Failure(3, e.to_string())
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Validation(_) => invalid(e),
            PipelineError::Stage { .. } => failed(e),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure(code, msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(code)
        }
    }
}

/// Image files of a directory, or the file itself.
fn inputs(path: &Path) -> Result<Vec<PathBuf>, Failure> {
    if path.is_dir() {
        io::list_images(path).map_err(invalid)
    } else if path.is_file() {
        Ok(vec![path.to_path_buf()])
    } else {
        Err(invalid(format!("{} does not exist", path.display())))
    }
}

fn stem(p: &Path) -> String {
    p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

fn emit(out: Option<&Path>, bytes: &[u8]) -> Result<(), Failure> {
    match out {
        Some(p) => io::write_atomic(p, bytes).map_err(failed),
        None => {
            print!("{}", String::from_utf8_lossy(bytes));
            Ok(())
        }
    }
}

fn run(cmd: Command) -> Result<(), Failure> {
    let threads = parallel::thread_count();
    match cmd {
        Command::Cut { exemplar, out, patch_size, count, seed } => {
            let img = io::read_image(&exemplar).map_err(invalid)?;
            let set = extract_patches(&img, patch_size, count, seed).map_err(invalid)?;
            io::write_patches(&out, &set).map_err(failed)
        }
        Command::Train { patches, out, trace, settings } => {
            let map = settings.map()?;
            let set = io::read_patches(&patches).map_err(invalid)?;
            let seed: u64 = map.get("seed").parse().map_err(|_| invalid("seed must be an integer"))?;
            let net = config::net_from_map(&map, set.patch_size()).map_err(invalid)?;
            let train = config::train_from_map(&map, seed).map_err(invalid)?;
            let mut rng = SquaresRng::new(seed).split(1);
            let g = init_generator(&net, &mut rng).map_err(invalid)?;
            let d = init_critic(&net, &mut rng).map_err(invalid)?;
            let mut trainer = Trainer::new(StyleGan { net }, train, g, d, set).map_err(invalid)?;
            let mut rows = Vec::new();
            trainer
                .run(|r| {
                    if settings.verbose && r.iter % 100 == 0 {
                        eprintln!("iter {} phase {} loss_d {:.4} loss_g {:.4} w {:.4}", r.iter, r.phase, r.loss_d, r.loss_g, r.w_estimate);
                    }
                    rows.push(*r);
                })
                .map_err(failed)?;
            io::write_checkpoint(&out, &trainer.checkpoint()).map_err(failed)?;
            if let Some(t) = trace {
                io::write_atomic(&t, &tables::trace_to_csv(&rows)).map_err(failed)?;
            }
            Ok(())
        }
        Command::Generate { checkpoint, out_dir, count, batch, seed } => {
            let ckpt = io::read_checkpoint(&checkpoint).map_err(invalid)?;
            let net = pipeline::net_from_checkpoint(&ckpt, true).map_err(invalid)?;
            let (g, _) = ckpt.params();
            let images = sample_images(&net, &g, count, batch, &mut SquaresRng::new(seed)).map_err(failed)?;
            io::create_dir(&out_dir).map_err(failed)?;
            for (i, img) in images.iter().enumerate() {
                io::write_image(&out_dir.join(format!("sample_{i:04}.png")), img).map_err(failed)?;
            }
            Ok(())
        }
        Command::Quilt { in_dir, out, rows, cols, overlap, seed } => {
            let tiles = inputs(&in_dir)?
                .iter()
                .map(|p| io::read_image(p))
                .collect::<Result<Vec<_>, _>>()
                .map_err(invalid)?;
            if tiles.is_empty() {
                return Err(invalid(format!("no images in {}", in_dir.display())));
            }
            let overlap = overlap.unwrap_or(tiles[0].width() / 8);
            let mut rng = SquaresRng::new(seed);
            let mosaic =
                assemble_grid_with(rows, cols, overlap, |_, _| Ok(tiles[rng.below(tiles.len() as u64) as usize].clone()))
                    .map_err(failed)?;
            io::write_image(&out, &mosaic).map_err(failed)
        }
        Command::Postprocess { input, out, recipe } => {
            let recipe = RecipeSpec::load(&recipe).map_err(invalid)?.recipe;
            let files = inputs(&input)?;
            let single = input.is_file();
            if !single {
                io::create_dir(&out).map_err(failed)?;
            }
            parallel::try_map(&files, threads, |f| -> Result<(), String> {
                let img = io::read_image(f).map_err(|e| e.to_string())?;
                let mask = pipeline::binarize(&recipe, &img).map_err(|e| format!("{}: {e}", f.display()))?;
                let dest = if single { out.clone() } else { out.join(format!("{}.png", stem(f))) };
                io::write_mask(&dest, &mask).map_err(|e| e.to_string())
            })
            .map_err(failed)?;
            Ok(())
        }
        Command::Stats { input, compare, phase, bins, out } => {
            let phase = Phase::parse(&phase).ok_or_else(|| invalid(format!("unknown phase {phase:?}")))?;
            let table = |dir: &Path| -> Result<MetricTable, Failure> {
                let files = inputs(dir)?;
                let masks = parallel::try_map(&files, threads, |f| io::read_mask(f)).map_err(invalid)?;
                let triples: Vec<MinkowskiTriple> = parallel::map(&masks, threads, |m| minkowski(m, phase));
                Ok(MetricTable::minkowski(&files.iter().map(|f| stem(f)).collect::<Vec<_>>(), &triples))
            };
            let generated = table(&input)?;
            let Some(reference) = compare else {
                return match &out {
                    Some(d) => {
                        io::create_dir(d).map_err(failed)?;
                        generated.write(&d.join(pipeline::MINKOWSKI_GENERATED)).map_err(failed)
                    }
                    None => emit(None, &generated.to_csv()),
                };
            };
            let real = table(&reference)?;
            let cmp = pipeline::compare_tables(&real, &generated, &MinkowskiTriple::NAMES, bins).map_err(failed)?;
            let json = tables::json_bytes(&tables::comparison_json(&cmp));
            match &out {
                Some(d) => {
                    io::create_dir(d).map_err(failed)?;
                    real.write(&d.join(pipeline::MINKOWSKI_REAL)).map_err(failed)?;
                    generated.write(&d.join(pipeline::MINKOWSKI_GENERATED)).map_err(failed)?;
                    io::write_atomic(&d.join(pipeline::HISTOGRAM), &tables::histograms_to_csv(&cmp)).map_err(failed)?;
                    io::write_atomic(&d.join(pipeline::MINKOWSKI_JSON), &json).map_err(failed)
                }
                None => emit(None, &json),
            }
        }
        Command::Homog { input, e_solid, nu_solid, contrast, plane, tol, out } => {
            let mut map = ConfigMap::default();
            for (k, v) in [
                ("homog.e_solid", e_solid.to_string()),
                ("homog.nu_solid", nu_solid.to_string()),
                ("homog.contrast", contrast.to_string()),
                ("homog.plane", plane),
            ] {
                map.set(k, &v).map_err(invalid)?;
            }
            let mat = config::material_from_map(&map).map_err(invalid)?;
            let files = inputs(&input)?;
            let masks = parallel::try_map(&files, threads, |f| io::read_mask(f)).map_err(invalid)?;
            let results = parallel::try_map(&masks, threads, |m| homogenize(m, &mat, tol)).map_err(failed)?;
            let ids: Vec<String> = files.iter().map(|f| stem(f)).collect();
            emit(out.as_deref(), &MetricTable::elastic(&ids, &results).to_csv())
        }
        Command::Report { run_dir, verify } => {
            if !verify {
                pipeline::rebuild_report(&run_dir)?;
            }
            let n = pipeline::verify_manifest(&run_dir).map_err(failed)?;
            eprintln!("{n} artifacts match the manifest");
            Ok(())
        }
        Command::Pipeline { settings } => {
            let cfg = PipelineConfig::from_map(settings.map()?).map_err(invalid)?;
            let opts = RunOptions { verbose: settings.verbose, ..RunOptions::default() };
            let rep = pipeline::run_pipeline(&cfg, &opts)?;
            println!("{}", rep.dir.join(pipeline::REPORT).display());
            Ok(())
        }
        Command::Ablation { modes, settings } => {
            let modes = modes
                .split(',')
                .map(|m| AblationMode::parse(m.trim()).ok_or_else(|| invalid(format!("unknown ablation mode {m:?}"))))
                .collect::<Result<Vec<_>, _>>()?;
            let cfg = PipelineConfig::from_map(settings.map()?).map_err(invalid)?;
            let opts = RunOptions { verbose: settings.verbose, ..RunOptions::default() };
            let rows = pipeline::ablation_compare(&cfg, &modes, &opts)?;
            for r in &rows {
                let cells: Vec<String> = r
                    .minkowski
                    .iter()
                    .map(|(m, c)| format!("{m} {:.4} ± {:.4}", c.generated.mean, c.generated.std))
                    .collect();
                println!("{}: {}", r.label, cells.join(", "));
            }
            Ok(())
        }
    }
}
