//! Command-line driver. [`run`] parses arguments, resolves the run
//! configuration, writes a provenance record and dispatches to the
//! subcommand.
//!
//! Exit codes: 0 on success, 1 for invalid input or arguments, 2 for internal
//! failures.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::Display;
use std::io::Write;
use std::path::{Component, Path, PathBuf};

use clap::{Arg, ArgAction};
use feathernet_core::arch::{ArchSpec, HeadKind, Variant};
use feathernet_core::augment::{augment_depth, draw_augment_params};
use feathernet_core::fusion::cascade_decide;
use feathernet_core::gradcheck::{run_suite, TOLERANCE};
use feathernet_core::image::{Label, Modality};
use feathernet_core::metrics::{best_threshold, MetricsReport, ScoredSet, DEFAULT_THRESHOLD};
use feathernet_core::model::{build_feathernet, MADDS_CONVENTION};
use feathernet_core::synth::synthesize_sample;
use feathernet_core::train::{fit, score_samples, TrainConfig};
use feathernet_core::Model;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::{Command, KeyKind, RunConfig, GLOBAL_KEYS};
use crate::files::{load_weights, read_scores, save_weights, write_scores, ScoreRow};
use crate::fuse_io::{parse_fusion_config, parse_score_table, write_decisions};
use crate::manifest::{Manifest, Record};
use crate::pgm::{read_pgm, write_pgm};

pub const PROVENANCE_FILE: &str = "provenance.txt";

pub const PARAMS_CONVENTION: &str = "weights, biases and batch-norm scale/shift; running statistics excluded";

#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

trait Context<T> {
    fn user(self, origin: &str) -> Result<T, Failure>;
    fn internal(self, origin: &str) -> Result<T, Failure>;
}

impl<T, E: Display> Context<T> for Result<T, E> {
    fn user(self, origin: &str) -> Result<T, Failure> {
        self.map_err(|e| Failure {
            code: 1,
            message: format!("{origin}: {e}"),
        })
    }

    fn internal(self, origin: &str) -> Result<T, Failure> {
        self.map_err(|e| Failure {
            code: 2,
            message: format!("{origin}: {e}"),
        })
    }
}

fn fail<T>(origin: &str, message: impl Display) -> Result<T, Failure> {
    Err(()).map_err(|_: ()| message).user(origin)
}

pub fn command() -> clap::Command {
    let mut app = clap::Command::new("feathernet")
        .about("FeatherNet face anti-spoofing: cost counting, gradient checks, data, training, evaluation and fusion")
        .version(env!("CARGO_PKG_VERSION"))
        .subcommand_required(true);
    for c in Command::ALL {
        let mut sub = clap::Command::new(c.name()).about(c.about()).arg(
            Arg::new("config")
                .long("config")
                .value_name("FILE")
                .help("Read option values from a key = value file; flags take precedence"),
        );
        for spec in GLOBAL_KEYS.iter().chain(c.keys()) {
            let mut help = spec.help.to_string();
            if let (KeyKind::Value, Some(d)) = (spec.kind, spec.default) {
                help.push_str(&format!(" [default: {d}]"));
            }
            if spec.key == "out" && c.needs_out() {
                help.push_str(" (required)");
            }
            let arg = Arg::new(spec.key).long(spec.key).help(help);
            sub = sub.arg(match spec.kind {
                KeyKind::Value => arg.value_name(spec.key.to_uppercase()).num_args(1),
                KeyKind::Switch => arg.action(ArgAction::SetTrue),
            });
        }
        app = app.subcommand(sub);
    }
    app
}

/// Parses `args` (program name first) and runs the selected subcommand.
pub fn run<I, S>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let matches = match command().try_get_matches_from(args) {
        Ok(m) => m,
        Err(e) => {
            use clap::error::ErrorKind::{DisplayHelp, DisplayVersion};
            let text = e.render().to_string();
            return if matches!(e.kind(), DisplayHelp | DisplayVersion) {
                let _ = write!(stdout, "{text}");
                0
            } else {
                let _ = write!(stderr, "{text}");
                1
            };
        }
    };
    match resolve_and_run(&matches, stdout, stderr) {
        Ok(()) => 0,
        Err(f) => {
            let _ = writeln!(stderr, "error: {}", f.message);
            f.code
        }
    }
}

fn resolve_and_run(matches: &clap::ArgMatches, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<(), Failure> {
    let (name, sub) = matches.subcommand().expect("subcommand is required");
    let command: Command = name.parse().internal("cli")?;
    let mut flags = BTreeMap::new();
    for spec in GLOBAL_KEYS.iter().chain(command.keys()) {
        match spec.kind {
            KeyKind::Value => {
                if let Some(v) = sub.get_one::<String>(spec.key) {
                    flags.insert(spec.key.to_string(), v.clone());
                }
            }
            KeyKind::Switch => {
                if sub.get_flag(spec.key) {
                    flags.insert(spec.key.to_string(), "true".to_string());
                }
            }
        }
    }
    let file = match sub.get_one::<String>("config") {
        Some(p) => Some(std::fs::read_to_string(p).user(&format!("config {p}"))?),
        None => None,
    };
    let cfg = RunConfig::resolve(command, file.as_deref(), &flags).user("config")?;
    execute(&cfg, stdout, stderr)
}

/// Runs an already resolved configuration.
pub fn execute(cfg: &RunConfig, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<(), Failure> {
    let out: Option<PathBuf> = cfg.opt("out").user("config")?;
    if cfg.command.needs_out() && out.is_none() {
        return fail("config", format!("{} requires --out", cfg.command));
    }
    let provenance = format!("# feathernet {}\n{}", env!("CARGO_PKG_VERSION"), cfg.serialize());
    match &out {
        Some(dir) => {
            std::fs::create_dir_all(dir).user(&format!("out {}", dir.display()))?;
            std::fs::write(dir.join(PROVENANCE_FILE), &provenance).user(&format!("out {}", dir.display()))?;
        }
        None => {
            let _ = write!(stderr, "{provenance}");
        }
    }
    let mut run = Run {
        cfg,
        out: out.as_deref(),
        stdout,
        stderr,
    };
    match cfg.command {
        Command::Count => run.count(),
        Command::Gradcheck => run.gradcheck(),
        Command::Synth => run.synth(),
        Command::Augment => run.augment(),
        Command::Train => run.train(),
        Command::Eval => run.eval(),
        Command::Fuse => run.fuse(),
    }
}

struct Run<'a> {
    cfg: &'a RunConfig,
    out: Option<&'a Path>,
    stdout: &'a mut dyn Write,
    stderr: &'a mut dyn Write,
}

macro_rules! say {
    ($w:expr, $($arg:tt)*) => {{
        let _ = writeln!($w, $($arg)*);
    }};
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), Failure> {
    std::fs::write(path, contents).internal(&path.display().to_string())
}

fn read_manifest(origin: &str, path: &Path) -> Result<Manifest, Failure> {
    Manifest::read(path).user(&format!("{origin}: {}", path.display()))
}

/// Mirrors `path` under the output directory when it is a plain relative
/// path; anything else is renamed by position.
fn output_relative(path: &str, index: usize) -> PathBuf {
    let p = Path::new(path);
    if p.components().all(|c| matches!(c, Component::Normal(_))) {
        p.to_path_buf()
    } else {
        PathBuf::from(format!("images/{index:05}.pgm"))
    }
}

#[derive(Serialize)]
struct OperatingPointJson {
    target_fpr: f64,
    tpr: f64,
    /// `null` when no finite threshold reaches the target.
    threshold: Option<f64>,
}

#[derive(Serialize)]
struct ReportJson {
    threshold: f64,
    threshold_source: &'static str,
    apcer: f64,
    npcer: f64,
    acer: f64,
    auc: f64,
    tpr_at_fpr: Vec<OperatingPointJson>,
    samples: usize,
    reals: usize,
    fakes: usize,
}

impl Run<'_> {
    fn out(&self) -> &Path {
        self.out.expect("checked by execute")
    }

    fn count(&mut self) -> Result<(), Failure> {
        let variant: Variant = self.cfg.get("variant").user("count")?;
        let head: HeadKind = self.cfg.get("head").user("count")?;
        let input: usize = self.cfg.get("input").user("count")?;
        if self.cfg.switch("csv") && self.out.is_none() {
            return fail("count", "--csv requires --out");
        }
        let model = Model::<f32>::new(ArchSpec::feathernet(variant, head)).internal("count")?;
        let report = model.cost_report(input).user("count")?;
        say!(self.stdout, "FeatherNet{} head={} input={input}x{input}x3", variant.name(), head.name());
        say!(self.stdout, "Params: {}", report.params);
        say!(self.stdout, "MAdds: {}", report.madds);
        say!(self.stdout, "Params convention: {PARAMS_CONVENTION}");
        say!(self.stdout, "MAdds convention: {MADDS_CONVENTION}");
        say!(self.stdout, "");
        let shape = |o: (usize, usize, usize)| format!("{}x{}x{}", o.0, o.1, o.2);
        let wn = report.layers.iter().map(|l| l.name.len()).max().unwrap_or(5).max(5);
        let wk = report.layers.iter().map(|l| l.kind.len()).max().unwrap_or(4).max(4);
        say!(self.stdout, "{:<wn$}  {:<wk$}  {:>10}  {:>8}  {:>11}", "layer", "kind", "output", "params", "madds");
        for l in &report.layers {
            say!(self.stdout, "{:<wn$}  {:<wk$}  {:>10}  {:>8}  {:>11}", l.name, l.kind, shape(l.output), l.params, l.madds);
        }
        if self.cfg.switch("csv") {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(["layer", "kind", "channels", "height", "width", "params", "madds"]).internal("count")?;
            for l in &report.layers {
                let (c, h, wd) = l.output;
                w.write_record([&l.name, l.kind, &c.to_string(), &h.to_string(), &wd.to_string(), &l.params.to_string(), &l.madds.to_string()])
                    .internal("count")?;
            }
            write_file(&self.out().join("cost.csv"), w.into_inner().internal("count")?)?;
        }
        Ok(())
    }

    fn gradcheck(&mut self) -> Result<(), Failure> {
        let seed: u64 = self.cfg.get("seed").user("gradcheck")?;
        let configs: usize = self.cfg.get("configs").user("gradcheck")?;
        if configs == 0 {
            return fail("gradcheck", "configs must be positive");
        }
        let report = run_suite(seed, configs).internal("gradcheck")?;
        let mut csv_text = String::from("component,config,checked,max_rel_err\n");
        for r in &report.results {
            say!(self.stdout, "{:<26} {:<44} entries={:<6} max_rel_err={:.3e}", r.name, r.config, r.checked, r.max_rel_err);
            csv_text.push_str(&format!("{},\"{}\",{},{:e}\n", r.name, r.config, r.checked, r.max_rel_err));
        }
        let coverage: Vec<String> = report.coverage().iter().map(|(n, c)| format!("{n}x{c}")).collect();
        say!(self.stdout, "coverage: {}", coverage.join(" "));
        say!(self.stdout, "worst relative error: {:.3e} (tolerance {TOLERANCE:e})", report.worst());
        if let Some(dir) = self.out {
            write_file(&dir.join("gradcheck.csv"), csv_text)?;
        }
        if !report.passed() {
            return Err(Failure {
                code: 2,
                message: format!("gradcheck: worst relative error {:.3e} exceeds {TOLERANCE:e}", report.worst()),
            });
        }
        Ok(())
    }

    fn synth(&mut self) -> Result<(), Failure> {
        let seed: u64 = self.cfg.get("seed").user("synth")?;
        let reals: usize = self.cfg.get("real").user("synth")?;
        let fakes: usize = self.cfg.get("fake").user("synth")?;
        if reals + fakes == 0 {
            return fail("synth", "nothing to generate (--real and --fake are both 0)");
        }
        let out = self.out().to_path_buf();
        std::fs::create_dir_all(out.join("images")).internal("synth")?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut manifest = Manifest::new(&out);
        for (label, n, stem) in [(Label::Real, reals, "real"), (Label::Fake, fakes, "fake")] {
            for i in 0..n {
                let sample = synthesize_sample(label, rng.random());
                let rel = format!("images/{stem}_{i:05}.pgm");
                write_pgm(&sample.image, &out.join(&rel)).internal("synth")?;
                manifest.records.push(Record {
                    path: rel,
                    label,
                    modality: Modality::Depth,
                });
            }
        }
        manifest.write(&out.join("manifest.csv")).internal("synth")?;
        say!(self.stdout, "wrote {reals} real and {fakes} fake samples; manifest {}", out.join("manifest.csv").display());
        Ok(())
    }

    fn augment(&mut self) -> Result<(), Failure> {
        let seed: u64 = self.cfg.get("seed").user("augment")?;
        let path: PathBuf = self.cfg.get("manifest").user("augment")?;
        let all = self.cfg.switch("all");
        let input = read_manifest("augment", &path)?;
        let out = self.out().to_path_buf();
        let same_dir = match (std::fs::canonicalize(&out), std::fs::canonicalize(if input.base.as_os_str().is_empty() { Path::new(".") } else { &input.base })) {
            (Ok(a), Ok(b)) => a == b,
            _ => false,
        };
        if same_dir {
            return fail("augment", "--out must differ from the manifest's directory");
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut manifest = Manifest::new(&out);
        let mut log = String::from("path,augmented,scaler,offset\n");
        let mut changed = 0usize;
        for (i, r) in input.records.iter().enumerate() {
            let image = read_pgm(&input.resolve(r)).user(&format!("augment: {}", r.path))?;
            let rel = output_relative(&r.path, i);
            let rel_str = rel.to_string_lossy().replace('\\', "/");
            let image = if all || (r.label == Label::Real && r.modality == Modality::Depth) {
                let p = draw_augment_params(&mut rng);
                log.push_str(&format!("{rel_str},1,{},{}\n", p.scaler, p.offset));
                changed += 1;
                augment_depth(&image, &p)
            } else {
                log.push_str(&format!("{rel_str},0,,\n"));
                image
            };
            let dest = out.join(&rel);
            if let Some(parent) = dest.parent() {
                std::fs::create_dir_all(parent).internal("augment")?;
            }
            write_pgm(&image, &dest).internal("augment")?;
            manifest.records.push(Record {
                path: rel_str,
                label: r.label,
                modality: r.modality,
            });
        }
        manifest.write(&out.join("manifest.csv")).internal("augment")?;
        write_file(&out.join("augment_log.csv"), log)?;
        say!(self.stdout, "augmented {changed} of {} samples; manifest {}", input.records.len(), out.join("manifest.csv").display());
        Ok(())
    }

    fn train(&mut self) -> Result<(), Failure> {
        let cfg = self.cfg;
        let variant: Variant = cfg.get("variant").user("train")?;
        let head: HeadKind = cfg.get("head").user("train")?;
        if head == HeadKind::None {
            return fail("train", "head 'none' produces no logits to train");
        }
        let config = TrainConfig {
            lr0: cfg.get("lr").user("train")?,
            epochs: cfg.get("epochs").user("train")?,
            batch_size: cfg.get("batch-size").user("train")?,
            seed: cfg.get("seed").user("train")?,
            ..TrainConfig::default()
        };
        config.validate().user("train")?;
        let train = read_manifest("train", &cfg.get::<PathBuf>("manifest").user("train")?)?;
        let val = read_manifest("train", &cfg.get::<PathBuf>("val-manifest").user("train")?)?;
        let train = train.load_samples().user("train")?;
        let val = val.load_samples().user("train")?;
        let model = build_feathernet::<f32>(variant, head, config.seed).internal("train")?;
        let stderr = &mut *self.stderr;
        let epochs = config.epochs;
        let outcome = fit(model, &train, &val, &config, |r| {
            say!(stderr, "epoch {}/{epochs}  lr {}  train_loss {:.6}  val_acer {:.4}", r.epoch + 1, r.lr, r.train_loss, r.val_acer);
        })
        .user("train")?;
        let mut log = String::from("epoch,lr,train_loss,val_acer\n");
        for r in &outcome.log {
            log.push_str(&format!("{},{},{},{}\n", r.epoch, r.lr, r.train_loss, r.val_acer));
        }
        let out = self.out();
        write_file(&out.join("train_log.csv"), log)?;
        save_weights(&outcome.best, &out.join("best.fthn")).internal("train")?;
        save_weights(&outcome.last, &out.join("last.fthn")).internal("train")?;
        let best = &outcome.log[outcome.best_epoch];
        say!(self.stdout, "best epoch {} (val ACER {}); weights {}", best.epoch, best.val_acer, out.join("best.fthn").display());
        Ok(())
    }

    fn eval(&mut self) -> Result<(), Failure> {
        let cfg = self.cfg;
        let weights: Option<PathBuf> = cfg.opt("weights").user("eval")?;
        let manifest: Option<PathBuf> = cfg.opt("manifest").user("eval")?;
        let scores_path: Option<PathBuf> = cfg.opt("scores").user("eval")?;
        let tune_manifest: Option<PathBuf> = cfg.opt("tune-manifest").user("eval")?;
        let tune_scores: Option<PathBuf> = cfg.opt("tune-scores").user("eval")?;
        let given: Option<f64> = cfg.opt("threshold").user("eval")?;

        let model = match (&weights, &manifest, &scores_path) {
            (Some(w), Some(_), None) => Some(load_weights(w).user("eval")?),
            (None, None, Some(_)) => None,
            _ => return fail("eval", "give either --weights with --manifest, or --scores"),
        };
        let score_manifest = |path: &Path, model: &Model<f32>| -> Result<Vec<ScoreRow>, Failure> {
            let m = read_manifest("eval", path)?;
            let samples = m.load_samples().user("eval")?;
            let scores = score_samples(model, &samples).user("eval")?;
            Ok(m.records.iter().zip(scores).map(|(r, score)| ScoreRow { path: r.path.clone(), score, label: r.label }).collect())
        };
        let to_set = |rows: &[ScoreRow], what: &str| {
            ScoredSet::new(rows.iter().map(|r| r.score).collect(), rows.iter().map(|r| r.label).collect()).user(&format!("eval: {what}"))
        };

        let rows = match (&model, &manifest, &scores_path) {
            (Some(m), Some(p), _) => {
                let rows = score_manifest(p, m)?;
                write_scores(&rows, &self.out().join("scores.csv")).internal("eval")?;
                rows
            }
            (_, _, Some(p)) => read_scores(p).user("eval")?,
            _ => unreachable!("checked above"),
        };
        let set = to_set(&rows, "scores")?;

        let (threshold, source) = match (given, &tune_manifest, &tune_scores) {
            (None, None, None) => (DEFAULT_THRESHOLD, "default"),
            (Some(t), None, None) => (t, "given"),
            (None, Some(p), None) => {
                let m = model.as_ref().ok_or(()).or_else(|_| fail("eval", "--tune-manifest needs --weights"))?;
                (best_threshold(&to_set(&score_manifest(p, m)?, "tuning set")?), "tuned")
            }
            (None, None, Some(p)) => (best_threshold(&to_set(&read_scores(p).user("eval")?, "tuning set")?), "tuned"),
            _ => return fail("eval", "--threshold, --tune-manifest and --tune-scores are mutually exclusive"),
        };
        if !(0.0..=1.0).contains(&threshold) {
            return fail("eval", format!("threshold {threshold} outside [0, 1]"));
        }
        let r = MetricsReport::compute(&set, threshold);
        let report = ReportJson {
            threshold,
            threshold_source: source,
            apcer: r.apcer,
            npcer: r.npcer,
            acer: r.acer,
            auc: r.auc,
            tpr_at_fpr: r
                .tpr_at_fpr
                .iter()
                .map(|p| OperatingPointJson {
                    target_fpr: p.target_fpr,
                    tpr: p.tpr,
                    threshold: p.threshold.is_finite().then_some(p.threshold),
                })
                .collect(),
            samples: set.len(),
            reals: r.reals,
            fakes: r.fakes,
        };
        let json = serde_json::to_string_pretty(&report).internal("eval")? + "\n";
        write_file(&self.out().join("report.json"), &json)?;
        let _ = write!(self.stdout, "{json}");
        Ok(())
    }

    fn fuse(&mut self) -> Result<(), Failure> {
        let scores: PathBuf = self.cfg.get("scores").user("fuse")?;
        let config_path: PathBuf = self.cfg.get("fusion-config").user("fuse")?;
        let config_text = std::fs::read_to_string(&config_path).user(&format!("fuse: {}", config_path.display()))?;
        let config = parse_fusion_config(&config_text).user("fuse")?;
        let table = std::fs::read_to_string(&scores).user(&format!("fuse: {}", scores.display()))?;
        let records = parse_score_table(&table, &config).user("fuse")?;
        let mut decisions = Vec::with_capacity(records.len());
        let mut branches: BTreeMap<&str, usize> = BTreeMap::new();
        for r in &records {
            let d = cascade_decide(r, &config).user(&format!("fuse: sample {}", r.id))?;
            *branches.entry(d.trace.branch.name()).or_default() += 1;
            decisions.push((r.id.clone(), d));
        }
        write_file(&self.out().join("fused.csv"), write_decisions(&decisions))?;
        let counts: Vec<String> = branches.iter().map(|(b, n)| format!("{b}={n}")).collect();
        say!(self.stdout, "fused {} samples ({})", decisions.len(), counts.join(", "));
        Ok(())
    }
}
