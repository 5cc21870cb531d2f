//! The `skin-audit` command line.
//!
//! Each subcommand is a thin composition of library calls. Output files are
//! written in a fixed order with fixed formatting, so repeated runs over the
//! same inputs and the built-in model produce byte-identical directories.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::audit::{group_code, load_manifest, Attribute, Manifest, ManifestRow, SkinType};
use crate::explain::{average_mask, export_delta, search_c, CemParams, ExplainError};
use crate::imaging::{
    crop_face, detect_skin, rgb_to_ycrcb, skin_luminance_histogram, ycrcb_to_rgb, RasterImage,
    SkinRule,
};
use crate::model::{
    train, Classifier, CompactNet, Gender, GenderScore, ModelError, NetClassifier, Preprocessor,
    RemoteClassifier, RemoteConfig, TrainConfig, ENDPOINT_ENV,
};
use crate::stability::{
    export_plot_data, run_stability, ReportConfig, StabilityInput, StabilityReport,
};
use crate::transform::{
    apply_transport, luminance_mode, mode_shift, transport_map_to_masses, Direction,
    EnsembleConfig, Method, ModeShiftSpec, Palette, ShiftScope,
};
use crate::{Error, Result};

#[derive(Debug, Parser)]
#[command(name = "skin-audit", version, about = "Skin-tone stability audits for face gender classifiers")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Detect skin pixels and write the mask and luminance histogram.
    DetectSkin(DetectSkinArgs),
    /// Re-tone the skin of one image.
    Transform(TransformArgs),
    /// Train the built-in network on a manifest.
    TrainModel(TrainArgs),
    /// Intersectional accuracy of a classifier over a manifest.
    AccuracyTable(AccuracyArgs),
    /// Lighten/darken ensembles and stability statistics.
    AuditStability(StabilityArgs),
    /// Pertinent-positive explanations and per-gender average masks.
    Explain(ExplainArgs),
    /// Write a seeded synthetic face dataset and reference palettes.
    SynthDataset(SynthArgs),
}

#[derive(Debug, Args)]
pub struct RuleArgs {
    #[arg(long, default_value_t = 90)]
    pub cr_min: u8,
    #[arg(long, default_value_t = 115)]
    pub cr_max: u8,
    #[arg(long, default_value_t = 140)]
    pub cb_min: u8,
    #[arg(long, default_value_t = 195)]
    pub cb_max: u8,
}

impl RuleArgs {
    fn rule(&self) -> Result<SkinRule> {
        Ok(SkinRule::new(self.cr_min, self.cr_max, self.cb_min, self.cb_max)?)
    }
}

#[derive(Debug, Args)]
pub struct DetectSkinArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Directory receiving mask.png and histogram.txt.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub rule: RuleArgs,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum MethodArg {
    ModeShift,
    Ot,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::ModeShift => Method::ModeShift,
            MethodArg::Ot => Method::OptimalTransport,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ScopeArg {
    Whole,
    Skin,
}

impl From<ScopeArg> for ShiftScope {
    fn from(s: ScopeArg) -> Self {
        match s {
            ScopeArg::Whole => ShiftScope::WholeImage,
            ScopeArg::Skin => ShiftScope::SkinOnly,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum DirectionArg {
    Lighten,
    Darken,
}

impl From<DirectionArg> for Direction {
    fn from(d: DirectionArg) -> Self {
        match d {
            DirectionArg::Lighten => Direction::Lighten,
            DirectionArg::Darken => Direction::Darken,
        }
    }
}

#[derive(Debug, Args)]
pub struct TransformArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, value_enum)]
    pub method: MethodArg,
    /// Target skin luminance mode (mode-shift).
    #[arg(long)]
    pub target_mode: Option<u8>,
    /// Palette file with 256 `y mass` lines (ot).
    #[arg(long)]
    pub palette: Option<PathBuf>,
    /// Pixels a mode shift applies to.
    #[arg(long, value_enum, default_value_t = ScopeArg::Whole)]
    pub scope: ScopeArg,
    #[arg(long)]
    pub output: PathBuf,
    #[command(flatten)]
    pub rule: RuleArgs,
}

#[derive(Debug, Args)]
pub struct ClassifierArgs {
    /// Checkpoint of the built-in network.
    #[arg(long, conflicts_with = "endpoint")]
    pub model: Option<PathBuf>,
    /// Remote scoring endpoint; defaults to $SKIN_AUDIT_ENDPOINT.
    #[arg(long)]
    pub endpoint: Option<String>,
}

impl ClassifierArgs {
    fn load(&self) -> Result<Box<dyn Classifier>> {
        if let Some(path) = &self.model {
            return Ok(Box::new(NetClassifier::new(CompactNet::load(path)?)));
        }
        let endpoint = match &self.endpoint {
            Some(e) => e.clone(),
            None => std::env::var(ENDPOINT_ENV).map_err(|_| {
                Error::Usage(format!("--model or --endpoint required (or set {ENDPOINT_ENV})"))
            })?,
        };
        Ok(Box::new(RemoteClassifier::new(RemoteConfig::new(endpoint))))
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Checkpoint path to write.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 32)]
    pub side: usize,
    #[arg(long, default_value_t = 3)]
    pub channels: usize,
    #[arg(long, default_value_t = 30)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0.05)]
    pub learning_rate: f64,
    #[arg(long, default_value_t = 8)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Train on the manifest's face crops.
    #[arg(long)]
    pub crop: bool,
    #[arg(long, default_value_t = 0.0)]
    pub pad: f64,
}

#[derive(Debug, Args)]
pub struct AccuracyArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[command(flatten)]
    pub classifier: ClassifierArgs,
    /// Comma-separated attributes: gender, skin_type, hair_length.
    #[arg(long, default_value = "skin_type,gender")]
    pub group_by: String,
    /// Score the manifest's face crops instead of whole images.
    #[arg(long)]
    pub crop: bool,
    /// Padding per side as a fraction of the crop size.
    #[arg(long, default_value_t = 0.0)]
    pub pad: f64,
    /// Also write the table as CSV here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct StabilityArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[command(flatten)]
    pub classifier: ClassifierArgs,
    #[arg(long, value_enum)]
    pub direction: DirectionArg,
    #[arg(long, value_enum)]
    pub method: MethodArg,
    /// Directory of palette files (ot).
    #[arg(long)]
    pub palettes: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = ScopeArg::Whole)]
    pub scope: ScopeArg,
    #[arg(long, default_value_t = 10)]
    pub step: u8,
    #[arg(long, default_value_t = 0.1)]
    pub threshold: f64,
    #[arg(long, default_value_t = 0.95)]
    pub level: f64,
    #[arg(long, default_value_t = 20)]
    pub bins: usize,
    #[arg(long, default_value_t = 4)]
    pub threads: usize,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub rule: RuleArgs,
}

#[derive(Debug, Args)]
pub struct ExplainArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, default_value_t = 10.0)]
    pub kappa: f64,
    #[arg(long, default_value_t = 0.1)]
    pub beta: f64,
    /// Comma-separated c values.
    #[arg(long, default_value = "0.1,1,10,100")]
    pub c_grid: String,
    #[arg(long, default_value_t = 1000)]
    pub max_iters: usize,
    /// Explain at most this many rows per gender.
    #[arg(long)]
    pub limit: Option<usize>,
    #[arg(long, default_value_t = 4)]
    pub threads: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 40)]
    pub n: usize,
    #[arg(long, default_value_t = 48)]
    pub side: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Reference palettes written to <out>/palettes.
    #[arg(long, default_value_t = 10)]
    pub palettes: usize,
}

/// Runs a parsed command; human-readable progress goes to stdout.
pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::DetectSkin(a) => detect_skin_cmd(&a),
        Command::Transform(a) => transform_cmd(&a),
        Command::TrainModel(a) => train_cmd(&a),
        Command::AccuracyTable(a) => accuracy_cmd(&a),
        Command::AuditStability(a) => stability_cmd(&a),
        Command::Explain(a) => explain_cmd(&a),
        Command::SynthDataset(a) => synth_cmd(&a),
    }
}

fn detect_skin_cmd(a: &DetectSkinArgs) -> Result<()> {
    let ycc = rgb_to_ycrcb(&RasterImage::load(&a.input)?);
    let mask = detect_skin(&ycc, &a.rule.rule()?);
    fs::create_dir_all(&a.out)?;
    mask.to_image().save(a.out.join("mask.png"))?;
    println!("skin pixels {} of {}", mask.count(), mask.bits().len());
    if !mask.is_empty() {
        let hist = skin_luminance_histogram(&ycc, &mask)?;
        fs::write(a.out.join("histogram.txt"), hist.to_text())?;
        println!("skin luminance mode {}", luminance_mode(&hist)?);
    }
    Ok(())
}

fn transform_cmd(a: &TransformArgs) -> Result<()> {
    let ycc = rgb_to_ycrcb(&RasterImage::load(&a.input)?);
    let mask = detect_skin(&ycc, &a.rule.rule()?);
    let out = match a.method {
        MethodArg::ModeShift => {
            let target = a
                .target_mode
                .ok_or_else(|| Error::Usage("--target-mode is required for mode-shift".into()))?;
            let mut spec = ModeShiftSpec::new(target);
            spec.scope = a.scope.into();
            mode_shift(&ycc, &mask, spec)?
        }
        MethodArg::Ot => {
            let path = a
                .palette
                .as_ref()
                .ok_or_else(|| Error::Usage("--palette is required for ot".into()))?;
            let palette = Palette::load(path)?;
            let hist = skin_luminance_histogram(&ycc, &mask)?;
            let map = transport_map_to_masses(&hist, &palette.masses)?;
            apply_transport(&ycc, &mask, &map)?
        }
    };
    ycrcb_to_rgb(&out).save(&a.output)?;
    let hist = skin_luminance_histogram(&out, &mask)?;
    println!("wrote {} (skin mode {})", a.output.display(), luminance_mode(&hist)?);
    Ok(())
}

fn load_image(manifest: &Manifest, row: &ManifestRow, crop: bool, pad: f64) -> Result<RasterImage> {
    let img = RasterImage::load(manifest.image_path(row))?;
    match (crop, row.crop) {
        (true, Some(b)) => Ok(crop_face(&img, b, pad)?),
        (true, None) => Err(Error::Usage(format!("--crop: row {} has no crop box", row.id()))),
        (false, _) => Ok(img),
    }
}

fn train_cmd(a: &TrainArgs) -> Result<()> {
    let manifest = load_manifest(&a.manifest)?;
    let data = manifest
        .rows
        .iter()
        .map(|r| Ok((load_image(&manifest, r, a.crop, a.pad)?, r.gender)))
        .collect::<Result<Vec<_>>>()?;
    let config = TrainConfig {
        side: a.side,
        channels: a.channels,
        learning_rate: a.learning_rate,
        epochs: a.epochs,
        batch_size: a.batch_size,
        seed: a.seed,
        ..TrainConfig::default()
    };
    let net = train(&config, &data)?;
    net.save(&a.out)?;
    let classifier = NetClassifier::new(net);
    let mut correct = 0;
    for (img, g) in &data {
        if classifier.score(img)?.decision() == *g {
            correct += 1;
        }
    }
    println!(
        "trained on {} images, training accuracy {}/{}; wrote {}",
        data.len(),
        correct,
        data.len(),
        a.out.display()
    );
    Ok(())
}

fn accuracy_cmd(a: &AccuracyArgs) -> Result<()> {
    let group_by = Attribute::parse_list(&a.group_by)?;
    if group_by.is_empty() {
        return Err(Error::Usage("--group-by lists no attribute".into()));
    }
    let manifest = load_manifest(&a.manifest)?;
    let classifier = a.classifier.load()?;
    let mut scores: Vec<Option<GenderScore>> = Vec::with_capacity(manifest.rows.len());
    let mut no_face = 0;
    for row in &manifest.rows {
        let img = load_image(&manifest, row, a.crop, a.pad)?;
        match classifier.score(&img) {
            Ok(s) => scores.push(Some(s)),
            Err(ModelError::NoFace) => {
                no_face += 1;
                scores.push(None);
            }
            Err(e) => return Err(e.into()),
        }
    }
    // rows without a detected face are left out of every cell
    let (rows, scores): (Vec<ManifestRow>, Vec<Option<GenderScore>>) = manifest
        .rows
        .iter()
        .cloned()
        .zip(scores)
        .filter(|(_, s)| s.is_some())
        .unzip();
    let table = crate::audit::group_accuracy(&rows, &scores, &group_by)?;
    let csv = table.to_csv();
    print!("{csv}");
    if no_face > 0 {
        println!("# excluded (no face): {no_face}");
    }
    if let Some(out) = &a.out {
        fs::write(out, csv)?;
    }
    Ok(())
}

fn stability_cmd(a: &StabilityArgs) -> Result<()> {
    let method: Method = a.method.into();
    let direction: Direction = a.direction.into();
    let palettes = match (method, &a.palettes) {
        (Method::OptimalTransport, Some(dir)) => Palette::load_dir(dir)?,
        (Method::OptimalTransport, None) => {
            return Err(Error::Usage("--palettes is required for --method ot".into()))
        }
        (Method::ModeShift, _) => Vec::new(),
    };
    let config = EnsembleConfig {
        step: a.step,
        scope: a.scope.into(),
        palettes,
        ..EnsembleConfig::default()
    };
    let report_config = ReportConfig {
        threshold: a.threshold,
        level: a.level,
        bins: a.bins,
    };
    // lightening audits dark-skinned rows, darkening light-skinned rows
    let skin = match direction {
        Direction::Lighten => SkinType::Dark,
        Direction::Darken => SkinType::Light,
    };
    let manifest = load_manifest(&a.manifest)?;
    let classifier = a.classifier.load()?;
    let rule = a.rule.rule()?;
    fs::create_dir_all(&a.out)?;
    let mut report_txt = String::new();
    let mut exclusions = String::from("group,image_id,reason\n");
    for gender in [Gender::Female, Gender::Male] {
        let group = group_code(skin, gender);
        let mut inputs = Vec::new();
        for row in manifest
            .rows
            .iter()
            .filter(|r| r.skin_type == skin && r.gender == gender)
        {
            let image = RasterImage::load(manifest.image_path(row))?;
            let mask = detect_skin(&rgb_to_ycrcb(&image), &rule);
            inputs.push(StabilityInput {
                id: row.id(),
                image,
                mask,
                gender: Some(gender),
            });
        }
        if inputs.is_empty() {
            continue;
        }
        let run = run_stability(classifier.as_ref(), &inputs, direction, method, &config, a.threads)?;
        for ex in &run.excluded {
            let _ = writeln!(exclusions, "{group},{},{}", ex.image_id, ex.reason);
        }
        if run.records.is_empty() {
            let _ = writeln!(report_txt, "group {group}\nn 0\nexcluded {}\n", run.excluded.len());
            continue;
        }
        let report = StabilityReport::build(
            group.clone(),
            direction,
            method,
            run.records,
            run.excluded.len(),
            &report_config,
        )?;
        report_txt.push_str(&report.to_text());
        report_txt.push('\n');
        export_plot_data(&report, &a.out)?;
        fs::write(a.out.join(format!("records_{group}.csv")), report.records_csv())?;
        println!(
            "{group}: n {} stable {} flips +{} -{}",
            report.n(),
            crate::stability::sig6(report.fraction_stable),
            report.flips.to_correct,
            report.flips.to_incorrect
        );
    }
    fs::write(a.out.join("report.txt"), &report_txt)?;
    fs::write(a.out.join("exclusions.csv"), exclusions)?;
    println!("wrote {}", a.out.join("report.txt").display());
    Ok(())
}

fn parse_c_grid(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|p| {
            p.trim()
                .parse::<f64>()
                .map_err(|_| Error::Usage(format!("--c-grid: bad value {p:?}")))
        })
        .collect()
}

fn explain_cmd(a: &ExplainArgs) -> Result<()> {
    let manifest = load_manifest(&a.manifest)?;
    let net = CompactNet::load(&a.model)?;
    let shape = net.input_shape();
    let pre = Preprocessor::for_shape(shape);
    let params = CemParams {
        kappa: a.kappa,
        beta: a.beta,
        c_grid: parse_c_grid(&a.c_grid)?,
        max_iters: a.max_iters,
        ..CemParams::default()
    };
    // correctly classified rows only, capped per gender
    let mut jobs: Vec<(&ManifestRow, Vec<f64>)> = Vec::new();
    let mut taken = [0usize; 2];
    for row in &manifest.rows {
        if a.limit.is_some_and(|l| taken[row.gender.index()] >= l) {
            continue;
        }
        let x = pre.apply(&RasterImage::load(manifest.image_path(row))?);
        if net.logits(&x)?.argmax() == row.gender {
            taken[row.gender.index()] += 1;
            jobs.push((row, x));
        }
    }
    let results = solve_all(&net, &jobs, &params, a.threads.max(1))?;
    let masks = a.out.join("masks");
    fs::create_dir_all(&masks)?;
    let mut summary =
        String::from("image_id,gender,c,l1,support,f_kappa,objective,iterations,converged\n");
    let mut by_gender: [Vec<_>; 2] = [Vec::new(), Vec::new()];
    for ((row, _), pp) in jobs.iter().zip(results) {
        let stem = row
            .path
            .file_stem()
            .map_or_else(|| row.id(), |s| s.to_string_lossy().into_owned());
        export_delta(&masks, &stem, &pp.delta, shape, Some(&pp.diagnostics()))?;
        let _ = writeln!(
            summary,
            "{},{},{},{},{},{},{},{},{}",
            row.id(),
            row.gender,
            crate::stability::sig6(pp.chosen_c),
            crate::stability::sig6(pp.l1()),
            pp.support(),
            crate::stability::sig6(pp.achieved_f_kappa),
            crate::stability::sig6(pp.objective),
            pp.iterations,
            pp.converged
        );
        by_gender[row.gender.index()].push(pp);
    }
    fs::write(a.out.join("explanations.csv"), summary)?;
    for g in [Gender::Female, Gender::Male] {
        match average_mask(g.as_str(), &by_gender[g.index()]) {
            Ok(avg) => {
                export_delta(&a.out, &format!("average_{g}"), &avg.mean, shape, None)?;
                println!("{g}: averaged {} explanations", avg.count);
            }
            Err(ExplainError::EmptyGroup(_)) => println!("{g}: no converged explanation"),
            Err(e) => return Err(e.into()),
        }
    }
    Ok(())
}

/// Solves jobs over scoped threads; results come back in job order.
fn solve_all(
    net: &CompactNet,
    jobs: &[(&ManifestRow, Vec<f64>)],
    params: &CemParams,
    threads: usize,
) -> Result<Vec<crate::explain::PertinentPositive>> {
    let chunk = jobs.len().div_ceil(threads).max(1);
    std::thread::scope(|scope| {
        let handles: Vec<_> = jobs
            .chunks(chunk)
            .map(|part| {
                scope.spawn(move || {
                    part.iter()
                        .map(|(row, x)| search_c(net, x, row.gender, params))
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        let mut out = Vec::with_capacity(jobs.len());
        for h in handles {
            for r in h.join().expect("solver thread panicked") {
                out.push(r?);
            }
        }
        Ok(out)
    })
}

fn synth_cmd(a: &SynthArgs) -> Result<()> {
    let manifest = crate::synthetic::write_dataset(&a.out, a.n, a.side, a.seed)?;
    if a.palettes > 0 {
        write_palettes(&a.out.join("palettes"), a.palettes, a.seed)?;
    }
    println!(
        "wrote {} images and manifest.csv to {}",
        manifest.rows.len(),
        a.out.display()
    );
    Ok(())
}

/// Reference palettes with skin centers spread over [40, 220].
pub fn write_palettes(dir: &Path, count: usize, seed: u64) -> Result<()> {
    fs::create_dir_all(dir)?;
    for p in crate::synthetic::reference_palettes(count, 40, 220, seed) {
        fs::write(dir.join(format!("{}.txt", p.id)), p.to_text())?;
    }
    Ok(())
}
