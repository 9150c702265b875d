//! Command-line front end: dataset synthesis, mask degradation, training,
//! evaluation, inference and refinement of external masks.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

use coarsematte::degrade::{degrade, DegradeSpec};
use coarsematte::imagery::{load_image, load_mask, save_image, save_mask, Rng};
use coarsematte::metrics::{evaluate, MetricParams};
use coarsematte::nets::{load_checkpoint, save_checkpoint, NetKind};
use coarsematte::pipeline::{checkpoint_name, infer, recomposite, refine_external_mask, MatteResult, ModelBundle};
use coarsematte::synthdata::{
    build_dataset, list_pngs, load_backgrounds, load_foregrounds, load_manifest, procedural_corpus, save_corpus,
};
use coarsematte::train::{self, Output, TrainConfig};
use coarsematte::Error;

#[derive(Parser)]
#[command(name = "coarsematte", version, about = "Human matting from mixed fine and coarse annotations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Stage {
    Mpn,
    Qun,
    Mrn,
    All,
}

#[derive(Subcommand)]
enum Command {
    /// Composite foregrounds onto backgrounds and write a manifest.
    Synth {
        /// RGBA foregrounds, optionally split into fine/, coarse/ and test/.
        #[arg(long)]
        fg: PathBuf,
        #[arg(long)]
        bg: PathBuf,
        /// Backgrounds per foreground.
        #[arg(long, default_value_t = 10)]
        k: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Write procedural foregrounds and backgrounds for `synth`.
    Generate {
        #[arg(long)]
        fg: PathBuf,
        #[arg(long)]
        bg: PathBuf,
        #[arg(long, default_value_t = 16)]
        fine: usize,
        #[arg(long, default_value_t = 16)]
        coarse: usize,
        /// Fine foregrounds held out for testing, taken from `--fine`.
        #[arg(long, default_value_t = 4)]
        test: usize,
        #[arg(long, default_value_t = 8)]
        backgrounds: usize,
        #[arg(long, default_value_t = 192)]
        height: usize,
        #[arg(long, default_value_t = 160)]
        width: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Coarsen every mask in a directory.
    Degrade {
        #[arg(long)]
        alpha: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Key/value degradation parameters; defaults when omitted.
        #[arg(long)]
        spec: Option<PathBuf>,
    },
    /// Train one stage, or all three in order.
    Train {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, value_enum, default_value = "all")]
        stage: Stage,
        /// Key/value training configuration; defaults when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Checkpoints and the step log go here. Later stages read the
        /// earlier checkpoints from the same directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a model bundle on the test records of a manifest.
    Eval {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        models: PathBuf,
        #[arg(long)]
        report: PathBuf,
    },
    /// Predict alpha and foreground colour for one or more images.
    Infer {
        #[arg(long, required = true, num_args = 1..)]
        image: Vec<PathBuf>,
        #[arg(long)]
        models: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also composite the prediction over this background.
        #[arg(long)]
        bg: Option<PathBuf>,
        /// Composite with the input image instead of the predicted colour.
        #[arg(long)]
        input_fg: bool,
    },
    /// Refine an externally supplied coarse mask.
    Refine {
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        mask: PathBuf,
        #[arg(long)]
        models: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "image".into())
}

fn create_dir(dir: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn write_result(r: &MatteResult, out: &Path, name: &str) -> anyhow::Result<()> {
    save_mask(&r.alpha.alpha, out.join(format!("{name}_alpha.png")))?;
    save_image(&r.fg_rgb, out.join(format!("{name}_fg.png")))?;
    Ok(())
}

fn load_config(path: Option<&Path>) -> anyhow::Result<TrainConfig> {
    let cfg = match path {
        Some(p) => TrainConfig::load(p)?,
        None => TrainConfig::default(),
    };
    cfg.validate()?;
    Ok(cfg)
}

fn synth(fg: &Path, bg: &Path, k: usize, out: &Path, seed: u64) -> anyhow::Result<()> {
    let fgs = load_foregrounds(fg)?;
    let bgs = load_backgrounds(bg)?;
    log::info!("{} foregrounds, {} backgrounds", fgs.len(), bgs.len());
    if k > bgs.len() {
        log::warn!("k = {k} exceeds {} backgrounds; some will repeat", bgs.len());
    }
    let m = build_dataset(&fgs, &bgs, k, &Rng::new(seed), out)?;
    println!("{} records -> {}", m.records.len(), out.join("manifest.tsv").display());
    Ok(())
}

fn degrade_dir(alpha: &Path, out: &Path, seed: u64, spec: Option<&Path>) -> anyhow::Result<()> {
    let spec = match spec {
        Some(p) => DegradeSpec::load(p)?,
        None => DegradeSpec::default(),
    };
    spec.validate()?;
    let files = list_pngs(alpha)?;
    if files.is_empty() {
        bail!(Error::Empty(format!("no PNG masks in {}", alpha.display())));
    }
    create_dir(out)?;
    let root = Rng::new(seed);
    files.par_iter().enumerate().try_for_each(|(i, path)| -> anyhow::Result<()> {
        let mask = load_mask(path)?;
        let coarse = degrade(&mask, &spec, &mut root.split(i as u64))?;
        save_mask(&coarse, out.join(path.file_name().expect("listed files have names")))?;
        Ok(())
    })?;
    println!("{} masks -> {}", files.len(), out.display());
    Ok(())
}

fn run_train(manifest: &Path, stage: Stage, config: Option<&Path>, out: &Path) -> anyhow::Result<()> {
    let m = load_manifest(manifest)?;
    let cfg = load_config(config)?;
    create_dir(out)?;
    fs::write(out.join("train_config.txt"), cfg.to_text())?;
    let output = Output::dir(out);
    let load = |kind: NetKind| {
        let path = out.join(checkpoint_name(kind));
        load_checkpoint(&path, kind, Some(&cfg.net_config(kind)))
            .with_context(|| format!("stage {kind} needs {}", path.display()))
    };
    let reports = match stage {
        Stage::All => train::train_all(&m, &train::degrade_spec(&cfg)?, &cfg, &output)?.1,
        Stage::Mpn => {
            let (p, r) = train::train_mpn(&m, &cfg, &output)?;
            save_checkpoint(&p, out.join(checkpoint_name(NetKind::Mpn)))?;
            vec![r]
        }
        Stage::Qun => {
            let mpn = load(NetKind::Mpn)?;
            let (p, r) = train::train_qun(&m, &mpn, &train::degrade_spec(&cfg)?, &cfg, &output)?;
            save_checkpoint(&p, out.join(checkpoint_name(NetKind::Qun)))?;
            vec![r]
        }
        Stage::Mrn => {
            let (mpn, qun) = (load(NetKind::Mpn)?, load(NetKind::Qun)?);
            let (p, r) = train::train_mrn(&m, &mpn, &qun, &cfg, &output)?;
            ModelBundle::new(mpn, qun, p)?.save(out)?;
            vec![r]
        }
    };
    for r in &reports {
        println!(
            "{}\tsteps {}\tepochs {}\tfinal loss {:.6}{}",
            r.stage,
            r.steps,
            r.epochs,
            r.final_loss(),
            if r.stopped_early { "\tstopped early" } else { "" }
        );
    }
    Ok(())
}

fn eval(manifest: &Path, models: &Path, report: &Path) -> anyhow::Result<()> {
    let m = load_manifest(manifest)?;
    let bundle = ModelBundle::load(models)?;
    let r = evaluate(&m, &MetricParams::default(), |_, img| Ok(infer(img, &bundle)?.alpha.alpha))?;
    r.save(report)?;
    let a = &r.aggregate;
    println!("images\tSAD\tMSE\tGradient\tConnectivity");
    println!("{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}", r.per_image.len(), a.sad, a.mse, a.grad, a.conn);
    Ok(())
}

fn run_infer(images: &[PathBuf], models: &Path, out: &Path, bg: Option<&Path>, input_fg: bool) -> anyhow::Result<()> {
    let bundle = ModelBundle::load(models)?;
    let bg = bg.map(load_image).transpose()?.map(|l| l.image);
    create_dir(out)?;
    images.par_iter().try_for_each(|path| -> anyhow::Result<()> {
        let img = load_image(path)?.image;
        let r = infer(&img, &bundle)?;
        let name = stem(path);
        write_result(&r, out, &name)?;
        if let Some(bg) = &bg {
            let comp = recomposite(&r, bg, input_fg.then_some(&img))?;
            save_image(&comp, out.join(format!("{name}_composite.png")))?;
        }
        println!("{} -> {}x{} alpha", path.display(), r.alpha.size().0, r.alpha.size().1);
        Ok(())
    })
}

fn refine(image: &Path, mask: &Path, models: &Path, out: &Path) -> anyhow::Result<()> {
    let bundle = ModelBundle::load(models)?;
    let img = load_image(image)?.image;
    let coarse = load_mask(mask)?;
    let r = refine_external_mask(&img, &coarse, &bundle)?;
    create_dir(out)?;
    write_result(&r, out, &stem(image))?;
    println!("{} refined -> {}", image.display(), out.display());
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Synth { fg, bg, k, out, seed } => synth(&fg, &bg, k, &out, seed),
        Command::Generate {
            fg,
            bg,
            fine,
            coarse,
            test,
            backgrounds,
            height,
            width,
            seed,
        } => {
            let corpus = procedural_corpus(fine, coarse, test, backgrounds, (height, width), &Rng::new(seed))?;
            save_corpus(&corpus, &fg, &bg)?;
            println!("{} foregrounds, {} backgrounds", corpus.foregrounds.len(), corpus.backgrounds.len());
            Ok(())
        }
        Command::Degrade { alpha, out, seed, spec } => degrade_dir(&alpha, &out, seed, spec.as_deref()),
        Command::Train {
            manifest,
            stage,
            config,
            out,
        } => run_train(&manifest, stage, config.as_deref(), &out),
        Command::Eval { manifest, models, report } => eval(&manifest, &models, &report),
        Command::Infer {
            image,
            models,
            out,
            bg,
            input_fg,
        } => run_infer(&image, &models, &out, bg.as_deref(), input_fg),
        Command::Refine { image, mask, models, out } => refine(&image, &mask, &models, &out),
    }
}

/// 1 for bad arguments, 2 for unusable data, 3 for numerical failure.
fn exit_code(err: &anyhow::Error) -> u8 {
    match err.chain().find_map(|e| e.downcast_ref::<Error>()) {
        Some(Error::NonFinite { .. }) => 3,
        Some(Error::InvalidArgument(_)) => 1,
        _ => 2,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
