//! The `nmfx` command line.
//!
//! Every subcommand is a thin wrapper over the library; all failures surface
//! as [`Error`] and map to the process exit code through
//! [`Error::exit_code`].

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use image::{GrayImage, Luma};
use log::info;
use ndarray::{Array4, Axis};

use crate::error::{Error, Result};
use crate::fixtures::{generate, generate_two_group, MaskGenerator, PlantedSpec, TwoGroupSpec};
use crate::heatmap::{palette, render_overlay, topic_image, HeatmapStack};
use crate::manifest::{DatasetManifest, ManifestEntry};
use crate::model::SavedModel;
use crate::nmf::NmfConfig;
use crate::nnls::{project, NnlsConfig};
use crate::npy::{load_array, load_header, save_array, NpyArray};
use crate::pipeline::factorize;
use crate::ssnmf::SsnmfConfig;
use crate::tensor::{flatten_features, unflatten_weights, FeatureTensor};

#[derive(Debug, Parser)]
#[command(name = "nmfx", version, about = "Nonnegative factorization of CNN feature maps into spatial concepts")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Factorize a feature tensor into topics (NMF, or SSNMF with labels).
    Factorize(FactorizeArgs),
    /// Project held-out features onto a fitted model's frozen topics.
    Project(ProjectArgs),
    /// Paint heat maps over the source images.
    Render(RenderArgs),
    /// Write a synthetic dataset with planted topics.
    Fixture(FixtureArgs),
    /// Check feature files, manifests and model directories.
    Validate(ValidateArgs),
    /// Summarize a feature file, manifest or model directory.
    Info(InfoArgs),
}

#[derive(Debug, Args)]
pub struct SolverArgs {
    /// Maximum number of multiplicative-update iterations.
    #[arg(long, default_value_t = NmfConfig::DEFAULT_MAX_ITERS)]
    pub max_iters: usize,
    /// Stop once the relative objective decrease falls below this.
    #[arg(long, default_value_t = NmfConfig::DEFAULT_REL_TOL)]
    pub tol: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Denominator guard of the multiplicative updates.
    #[arg(long, default_value_t = NmfConfig::DEFAULT_EPS)]
    pub eps: f64,
}

#[derive(Debug, Args)]
pub struct FactorizeArgs {
    /// Feature tensor `(n, p, d1, d2)` as .npy.
    pub features: PathBuf,
    /// Dataset manifest; supplies labels for SSNMF.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Number of topics; defaults to the label count when labels are present.
    #[arg(long)]
    pub k: Option<usize>,
    /// Label-fit weight. Defaults to 1.0 with labels; 0 forces plain NMF.
    #[arg(long)]
    pub lambda: Option<f64>,
    #[command(flatten)]
    pub solver: SolverArgs,
    /// Output model directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ProjectArgs {
    /// Fitted model directory.
    #[arg(long)]
    pub model: PathBuf,
    /// Held-out feature tensor `(n, p, d1, d2)` as .npy.
    pub features: PathBuf,
    #[arg(long, default_value_t = NnlsConfig::default().kkt_tol)]
    pub kkt_tol: f64,
    #[arg(long, default_value_t = NnlsConfig::default().max_iters)]
    pub nnls_max_iters: usize,
    /// Output directory for S_test.npy and heat.npy.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    /// Model directory or heat tensor `(n, K, d1, d2)` as .npy.
    pub source: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    /// Peak overlay opacity in [0, 1].
    #[arg(long, default_value_t = 0.5)]
    pub alpha: f64,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Skip the per-topic grayscale maps.
    #[arg(long)]
    pub no_topic_maps: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum MaskKind {
    Rectangles,
    Disjoint,
    Full,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum FixtureKind {
    /// Planted topics with ground-truth masks.
    Planted,
    /// Two labeled groups sharing dominant topics.
    TwoGroup,
}

#[derive(Debug, Args)]
pub struct FixtureArgs {
    #[arg(long, value_enum, default_value_t = FixtureKind::Planted)]
    pub kind: FixtureKind,
    /// Number of images (per group for `two-group`).
    #[arg(long, default_value_t = 40)]
    pub n: usize,
    #[arg(long, default_value_t = 64)]
    pub p: usize,
    #[arg(long, default_value_t = 14)]
    pub d1: usize,
    #[arg(long, default_value_t = 14)]
    pub d2: usize,
    #[arg(long, default_value_t = 3)]
    pub topics: usize,
    #[arg(long, value_enum, default_value_t = MaskKind::Rectangles)]
    pub masks: MaskKind,
    /// Standard deviation of the additive |N(0, sigma)| noise.
    #[arg(long, default_value_t = 0.01)]
    pub noise: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Label each planted image by its dominant topic.
    #[arg(long)]
    pub labels: bool,
    /// Source image size as WIDTHxHEIGHT; defaults to 16 pixels per cell.
    #[arg(long, value_parser = parse_size)]
    pub image_size: Option<(usize, usize)>,
    /// Store features as float32 instead of float64.
    #[arg(long)]
    pub f32: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    /// .npy files, manifest .json files or model directories.
    #[arg(required = true)]
    pub paths: Vec<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InfoArgs {
    pub path: PathBuf,
}

fn parse_size(s: &str) -> std::result::Result<(usize, usize), String> {
    let (w, h) = s.split_once(['x', 'X']).ok_or_else(|| format!("expected WIDTHxHEIGHT, got '{s}'"))?;
    let parse = |v: &str| v.trim().parse::<usize>().map_err(|e| format!("'{v}': {e}"));
    let (w, h) = (parse(w)?, parse(h)?);
    if w == 0 || h == 0 {
        return Err("image size must be positive".into());
    }
    Ok((w, h))
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Factorize(a) => cmd_factorize(a),
        Command::Project(a) => cmd_project(a),
        Command::Render(a) => cmd_render(a),
        Command::Fixture(a) => cmd_fixture(a),
        Command::Validate(a) => cmd_validate(a),
        Command::Info(a) => cmd_info(a),
    }
}

fn load_manifest_for(path: &Path, features: &FeatureTensor) -> Result<(DatasetManifest, PathBuf)> {
    let (manifest, base) = DatasetManifest::load(path)?;
    manifest.validate()?;
    manifest.check_feature_shape(&features.shape())?;
    Ok((manifest, base))
}

fn cmd_factorize(args: FactorizeArgs) -> Result<()> {
    let features = FeatureTensor::load(&args.features)?;
    let manifest = match &args.manifest {
        Some(p) => Some(load_manifest_for(p, &features)?.0),
        None => None,
    };
    let labeled = manifest.as_ref().filter(|m| m.has_labels());
    let lambda = match (args.lambda, labeled) {
        (Some(l), _) if !(l.is_finite() && l >= 0.0) => {
            return Err(Error::InvalidConfig(format!("lambda must be finite and >= 0, got {l}")))
        }
        (Some(l), None) if l > 0.0 => {
            return Err(Error::InvalidInput(format!(
                "--lambda {l} needs labels; pass a manifest whose entries carry classes"
            )))
        }
        (Some(l), _) => l,
        (None, Some(_)) => SsnmfConfig::DEFAULT_LAMBDA,
        (None, None) => 0.0,
    };
    let k = match (args.k, labeled) {
        (Some(k), _) => k,
        (None, Some(m)) => m.labels.len(),
        (None, None) => return Err(Error::InvalidConfig("--k is required when no labels are given".into())),
    };
    let cfg = NmfConfig {
        k,
        max_iters: args.solver.max_iters,
        rel_tol: args.solver.tol,
        seed: args.solver.seed,
        eps: args.solver.eps,
    };
    let per_image = labeled.map(|m| m.image_labels());
    let labels = match (labeled, &per_image) {
        (Some(m), Some(per_image)) if lambda > 0.0 => Some((per_image.as_slice(), m.labels.clone())),
        _ => None,
    };
    let label_names = labels.as_ref().map(|(_, n)| n.clone()).unwrap_or_default();
    let model = factorize(&features, &cfg, labels, lambda)?;
    info!(
        "{:?} fit: k={} iterations={} objective={:e}",
        model.method(),
        model.k(),
        model.iterations_run,
        model.final_objective()
    );
    let saved = SavedModel { model, dims: features.grid(), label_names };
    saved.save(&args.out)?;
    println!(
        "wrote {} ({:?}, k={}, {} iterations, objective {:e})",
        args.out.display(),
        saved.model.method(),
        saved.model.k(),
        saved.model.iterations_run,
        saved.model.final_objective()
    );
    Ok(())
}

fn cmd_project(args: ProjectArgs) -> Result<()> {
    let saved = SavedModel::load(&args.model)?;
    let features = FeatureTensor::load(&args.features)?;
    if features.channels() != saved.model.channels() {
        return Err(Error::shape(
            format!("{} channels (model {})", saved.model.channels(), args.model.display()),
            format!("{} channels in {}", features.channels(), args.features.display()),
        ));
    }
    let cfg = NnlsConfig { kkt_tol: args.kkt_tol, max_iters: args.nnls_max_iters };
    cfg.validate()?;
    let x = flatten_features(&features);
    let s = project(saved.model.topics.view(), x.view(), &cfg)?;
    let heat = unflatten_weights(s.view(), features.grid())?;
    fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;
    save_array(args.out.join("S_test.npy"), &NpyArray::from(s.into_dyn()))?;
    save_array(args.out.join("heat.npy"), &NpyArray::from(heat.into_dyn()))?;
    println!("wrote {}/S_test.npy and heat.npy", args.out.display());
    Ok(())
}

fn load_heat(source: &Path) -> Result<Array4<f64>> {
    if source.is_dir() {
        let saved = SavedModel::load(source)?;
        return unflatten_weights(saved.model.weights.view(), saved.dims);
    }
    let array = load_array(source)?.into_f64();
    let heat = array
        .into_dimensionality()
        .map_err(|e| Error::shape("heat tensor (n, K, d1, d2)", format!("{}: {e}", source.display())))?;
    Ok(heat)
}

fn cmd_render(args: RenderArgs) -> Result<()> {
    if !(0.0..=1.0).contains(&args.alpha) {
        return Err(Error::InvalidConfig(format!("--alpha must be in [0, 1], got {}", args.alpha)));
    }
    let heat = load_heat(&args.source)?;
    let (manifest, base) = DatasetManifest::load(&args.manifest)?;
    manifest.validate()?;
    let (n, k, d1, d2) = heat.dim();
    if [n, d1, d2] != [manifest.dims[0], manifest.dims[2], manifest.dims[3]] {
        return Err(Error::shape(
            format!("heat over manifest grid ({}, K, {}, {})", manifest.dims[0], manifest.dims[2], manifest.dims[3]),
            format!("({n}, {k}, {d1}, {d2})"),
        ));
    }
    let rows = manifest.row_images(&base);
    let missing: Vec<PathBuf> = {
        let mut seen: Vec<PathBuf> = rows.iter().map(|r| r.path.clone()).filter(|p| !p.is_file()).collect();
        seen.dedup();
        seen
    };
    if !missing.is_empty() {
        return Err(Error::MissingImages(missing));
    }
    let stack = HeatmapStack::build(heat.view(), manifest.height(), manifest.width())?;
    let colors = palette(k);
    fs::create_dir_all(&args.out_dir).map_err(|e| Error::io(&args.out_dir, e))?;
    for (i, row) in rows.iter().enumerate() {
        let base_img = image::open(&row.path)
            .map_err(|e| Error::Image { path: row.path.clone(), source: e })?
            .to_rgba8();
        if (base_img.width() as usize, base_img.height() as usize) != (manifest.width(), manifest.height()) {
            return Err(Error::shape(
                format!("{}x{} image (manifest image_size)", manifest.width(), manifest.height()),
                format!("{}x{} in {}", base_img.width(), base_img.height(), row.path.display()),
            ));
        }
        let maps = stack.maps.index_axis(Axis(0), i);
        let overlay = render_overlay(&base_img, maps, &colors, args.alpha)?;
        let out = args.out_dir.join(format!("{}_overlay.png", row.id));
        overlay.save(&out).map_err(|e| Error::Image { path: out.clone(), source: e })?;
        if !args.no_topic_maps {
            for j in 0..k {
                let out = args.out_dir.join(format!("{}_topic{j}.png", row.id));
                topic_image(maps.index_axis(Axis(0), j))
                    .save(&out)
                    .map_err(|e| Error::Image { path: out.clone(), source: e })?;
            }
        }
    }
    println!("rendered {n} images x {k} topics into {}", args.out_dir.display());
    Ok(())
}

/// Smooth deterministic grayscale backdrop so overlays have something to sit on.
fn backdrop(index: usize, width: usize, height: usize) -> GrayImage {
    let phase = index as f64 * 0.7;
    GrayImage::from_fn(width as u32, height as u32, |x, y| {
        let u = x as f64 / width as f64;
        let v = y as f64 / height as f64;
        let t = 0.5 + 0.25 * (6.0 * u + phase).sin() * (4.0 * v + 0.5 * phase).cos();
        Luma([(40.0 + 160.0 * t).round() as u8])
    })
}

fn cmd_fixture(args: FixtureArgs) -> Result<()> {
    let (features, masks, labels, label_names) = match args.kind {
        FixtureKind::Planted => {
            let mut spec = PlantedSpec::new(args.n, args.p, args.d1, args.d2, args.topics)
                .with_noise(args.noise)
                .with_seed(args.seed)
                .labeled(args.labels);
            match args.masks {
                MaskKind::Rectangles => {}
                MaskKind::Disjoint => spec = spec.with_masks(MaskGenerator::Disjoint),
                MaskKind::Full => spec = spec.with_masks(MaskGenerator::Full),
            }
            let fx = generate(&spec)?;
            let names = if args.labels { (0..args.topics).map(|j| format!("topic{j}")).collect() } else { vec![] };
            (fx.features, Some(fx.masks), fx.labels, names)
        }
        FixtureKind::TwoGroup => {
            let spec = TwoGroupSpec {
                images_per_group: args.n,
                channels: args.p,
                rows: args.d1,
                cols: args.d2,
                noise: args.noise,
                seed: args.seed,
                ..TwoGroupSpec::default()
            };
            let fx = generate_two_group(&spec)?;
            (fx.features, None, Some(fx.labels), vec!["group0".into(), "group1".into()])
        }
    };
    let (width, height) = args.image_size.unwrap_or((16 * args.d2, 16 * args.d1));
    let shape = features.shape();
    let n = shape[0];
    fs::create_dir_all(args.out.join("images")).map_err(|e| Error::io(&args.out, e))?;

    let data = features.into_inner().into_dyn();
    let array = if args.f32 { NpyArray::from(data.mapv(|v| v as f32)) } else { NpyArray::from(data) };
    save_array(args.out.join("features.npy"), &array)?;
    if let Some(masks) = masks {
        save_array(args.out.join("masks.npy"), &NpyArray::from(masks.mapv(|m| if m { 1.0 } else { 0.0 }).into_dyn()))?;
    }
    let mut entries = Vec::with_capacity(n);
    for i in 0..n {
        let rel = format!("images/img_{i:04}.png");
        let path = DatasetManifest::resolve(&args.out, &rel);
        backdrop(i, width, height).save(&path).map_err(|e| Error::Image { path: path.clone(), source: e })?;
        let class = labels.as_ref().filter(|_| !label_names.is_empty()).map(|l| label_names[l[i]].clone());
        entries.push(ManifestEntry { image: rel, class, rows: [i, i + 1] });
    }
    let manifest = DatasetManifest {
        features: "features.npy".into(),
        dims: shape,
        image_size: [width, height],
        labels: label_names,
        entries,
    };
    manifest.save(args.out.join("manifest.json"))?;
    println!("wrote fixture {:?} to {}", shape, args.out.display());
    Ok(())
}

fn check_nonnegative(array: &NpyArray) -> Result<()> {
    let data = array.to_f64();
    if let Some((index, _)) = data.iter().enumerate().find(|(_, v)| !v.is_finite()) {
        return Err(Error::NonFiniteEntry(index));
    }
    if let Some((index, &value)) = data.iter().enumerate().find(|(_, v)| **v < 0.0) {
        return Err(Error::NegativeEntry { index, value });
    }
    Ok(())
}

fn validate_path(path: &Path) -> Result<String> {
    if path.is_dir() {
        let saved = SavedModel::load(path)?;
        return Ok(format!(
            "model {:?} k={} channels={} grid={}x{}x{}",
            saved.model.method(),
            saved.model.k(),
            saved.model.channels(),
            saved.dims.images,
            saved.dims.rows,
            saved.dims.cols
        ));
    }
    match path.extension().and_then(|e| e.to_str()) {
        Some("npy") => {
            let array = load_array(path)?;
            check_nonnegative(&array)?;
            Ok(format!("array {:?} {:?}", array.dtype(), array.shape()))
        }
        Some("json") => {
            let (manifest, base) = DatasetManifest::load(path)?;
            manifest.validate()?;
            let features = DatasetManifest::resolve(&base, &manifest.features);
            let header = load_header(&features)?;
            manifest.check_feature_shape(&header.shape)?;
            let missing: Vec<String> = manifest
                .entries
                .iter()
                .map(|e| DatasetManifest::resolve(&base, &e.image))
                .filter(|p| !p.is_file())
                .map(|p| p.display().to_string())
                .collect();
            if !missing.is_empty() {
                return Err(Error::InvalidInput(format!("images not found: {}", missing.join(", "))));
            }
            Ok(format!("manifest {} images, {} labels", manifest.images(), manifest.labels.len()))
        }
        _ => Err(Error::InvalidInput(format!(
            "{}: expected a .npy file, a manifest .json or a model directory",
            path.display()
        ))),
    }
}

fn cmd_validate(args: ValidateArgs) -> Result<()> {
    for path in &args.paths {
        let summary = validate_path(path).inspect_err(|_| eprintln!("invalid {}", path.display()))?;
        println!("ok {}: {summary}", path.display());
    }
    Ok(())
}

fn cmd_info(args: InfoArgs) -> Result<()> {
    let path = &args.path;
    if path.is_dir() {
        let meta = SavedModel::load(path)?.meta();
        let text = serde_json::to_string_pretty(&meta).map_err(|e| Error::Json { path: path.clone(), source: e })?;
        println!("{text}");
        return Ok(());
    }
    match path.extension().and_then(|e| e.to_str()) {
        Some("json") => {
            let (manifest, _) = DatasetManifest::load(path)?;
            println!("features:   {}", manifest.features);
            println!("dims:       {:?}", manifest.dims);
            println!("image size: {}x{}", manifest.width(), manifest.height());
            println!("labels:     {:?}", manifest.labels);
            println!("entries:    {}", manifest.entries.len());
        }
        _ => {
            let header = load_header(path)?;
            println!("dtype:         {}", header.dtype.descr());
            println!("fortran_order: {}", header.fortran_order);
            println!("shape:         {:?}", header.shape);
        }
    }
    Ok(())
}
