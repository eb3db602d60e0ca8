//! `deforma` command-line front end.
//!
//! Every subcommand reads and writes files in the formats of
//! [`crate::tensor`]; numbers on stdout carry 9 significant digits. Wall-clock
//! timings go to stderr so that stdout stays reproducible.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::affine::{fit_affine, rescale_affine, AffineTransform};
use crate::config::{Config, MergeKind};
use crate::error::{Error, Result};
use crate::geometry::Point2;
use crate::metrics::{masked_ssim, ssim, SsimParams};
use crate::nnloss::{nn_loss_bruteforce, nn_loss_fast};
use crate::pose::{encode_heatmaps_with, perturb_pose, DistanceMode, LimbGroup};
use crate::regions::{apply_symmetry, decompose, rasterize_mask, Mask, Part, Region, NUM_PARTS};
use crate::tensor::{read_pose_with_threshold, read_tensor, write_pose, write_tensor, Keypoints, Tensor};
use crate::warp::{build_plan, deform_with, MergeStrategy, WarpMode};

/// Environment variable capping the worker thread count (0 = automatic).
pub const THREADS_ENV: &str = "DEFORMA_THREADS";

#[derive(Debug, Parser)]
#[command(name = "deforma", version, about = "Pose-conditioned feature warping and losses")]
struct Cli {
    /// JSON file overriding the default configuration.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Encode a pose as an 18-channel heatmap tensor.
    Heatmap(HeatmapArgs),
    /// Decompose two poses into body-part regions.
    Regions(RegionsArgs),
    /// Rasterise one region of a regions file.
    Mask(MaskArgs),
    /// Fit the affine transform of one part.
    Affine(AffineArgs),
    /// Deform a feature tensor from pose A to pose B.
    Warp(WarpArgs),
    /// Nearest-neighbour loss between two tensors.
    Nnloss(NnlossArgs),
    /// SSIM (or mask-SSIM) between two images.
    Ssim(SsimArgs),
    /// Add Gaussian noise to limb joints.
    Perturb(PerturbArgs),
    /// Deform an image from pose A to pose B in pixel space.
    DeformImage(DeformImageArgs),
    /// Time the fast and brute-force nearest-neighbour loss.
    Bench(BenchArgs),
}

#[derive(Debug, Args)]
struct HeatmapArgs {
    #[arg(long)]
    pose: PathBuf,
    #[arg(long)]
    height: usize,
    #[arg(long)]
    width: usize,
    #[arg(long)]
    sigma: Option<f32>,
    /// Use the squared distance in the exponent.
    #[arg(long)]
    squared_distance: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct SymmetryFlags {
    /// Fill missing limbs of pose A from their twin.
    #[arg(long, overrides_with = "no_symmetry")]
    symmetry: bool,
    #[arg(long, overrides_with = "symmetry")]
    no_symmetry: bool,
}

impl SymmetryFlags {
    fn resolve(&self, cfg: &Config) -> bool {
        if self.symmetry {
            true
        } else if self.no_symmetry {
            false
        } else {
            cfg.symmetry
        }
    }
}

#[derive(Debug, Args)]
struct RegionsArgs {
    #[arg(long)]
    pose_a: PathBuf,
    #[arg(long)]
    pose_b: PathBuf,
    #[arg(long)]
    height: usize,
    #[arg(long)]
    width: usize,
    #[command(flatten)]
    symmetry: SymmetryFlags,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
enum Which {
    A,
    B,
}

#[derive(Debug, Args)]
struct MaskArgs {
    #[arg(long)]
    regions: PathBuf,
    #[arg(long)]
    part: String,
    /// Which pose's region to rasterise.
    #[arg(long, value_enum, default_value = "a")]
    pose: Which,
    /// Output size as HxW (defaults to the regions' image size).
    #[arg(long)]
    size: Option<String>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct AffineArgs {
    #[arg(long)]
    regions: PathBuf,
    #[arg(long)]
    part: String,
    /// Resolution the transform is fitted at, HxW.
    #[arg(long)]
    from: Option<String>,
    /// Resolution the transform is expressed at, HxW.
    #[arg(long)]
    to: Option<String>,
}

#[derive(Debug, Args)]
struct MergeArgs {
    /// max, average or linear.
    #[arg(long)]
    strategy: Option<String>,
    /// DFT1 tensor with one weight channel per part (linear strategy).
    #[arg(long)]
    weights: Option<PathBuf>,
    /// Nearest-pixel forward splatting instead of bilinear inverse mapping.
    #[arg(long)]
    forward_splat: bool,
}

#[derive(Debug, Args)]
struct WarpArgs {
    #[arg(long)]
    features: PathBuf,
    #[arg(long)]
    pose_a: PathBuf,
    #[arg(long)]
    pose_b: PathBuf,
    /// Image height the poses refer to (defaults to the feature height).
    #[arg(long)]
    image_height: Option<usize>,
    /// Image width the poses refer to (defaults to the feature width).
    #[arg(long)]
    image_width: Option<usize>,
    #[command(flatten)]
    merge: MergeArgs,
    #[command(flatten)]
    symmetry: SymmetryFlags,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct NnlossArgs {
    #[arg(long)]
    a: PathBuf,
    #[arg(long)]
    b: PathBuf,
    #[arg(long)]
    n: Option<usize>,
    /// Use the per-location window scan.
    #[arg(long)]
    bruteforce: bool,
    /// Run both paths and report their wall-clock time on stderr.
    #[arg(long)]
    time: bool,
}

#[derive(Debug, Args)]
struct SsimArgs {
    #[arg(long)]
    a: PathBuf,
    #[arg(long)]
    b: PathBuf,
    #[arg(long)]
    mask: Option<PathBuf>,
    #[arg(long)]
    dynamic_range: Option<f64>,
}

#[derive(Debug, Args)]
struct PerturbArgs {
    #[arg(long)]
    pose: PathBuf,
    #[arg(long)]
    sigma_noise: f32,
    /// Comma-separated joint groups: arms, legs, head.
    #[arg(long, default_value = "arms,legs")]
    parts: String,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct DeformImageArgs {
    #[arg(long)]
    image: PathBuf,
    #[arg(long)]
    pose_a: PathBuf,
    #[arg(long)]
    pose_b: PathBuf,
    #[command(flatten)]
    merge: MergeArgs,
    #[command(flatten)]
    symmetry: SymmetryFlags,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct BenchArgs {
    #[arg(long, default_value_t = 128)]
    height: usize,
    #[arg(long, default_value_t = 64)]
    width: usize,
    #[arg(long, default_value_t = 64)]
    channels: usize,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Timed runs per implementation; the fastest is reported.
    #[arg(long, default_value_t = 3)]
    repeats: usize,
}

/// Parses `argv` (including the program name), runs the subcommand and
/// returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    run_with(argv, &mut stdout.lock(), &mut stderr.lock())
}

/// [`run`] with explicit output streams.
pub fn run_with<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            let text = e.render().to_string();
            let _ = if code == 0 {
                write!(out, "{text}")
            } else {
                write!(err, "{text}")
            };
            return code;
        }
    };
    configure_threads();
    match execute(cli, out, err) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            1
        }
    }
}

fn configure_threads() {
    let Ok(value) = std::env::var(THREADS_ENV) else {
        return;
    };
    if let Ok(n) = value.trim().parse::<usize>() {
        if n > 0 {
            // fails harmlessly if the global pool already exists
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
    }
}

/// Formats a value with 9 significant digits.
pub fn format_number(v: f64) -> String {
    if v == 0.0 {
        return "0.0".to_string();
    }
    if !v.is_finite() {
        return v.to_string();
    }
    let exp = v.abs().log10().floor() as i32;
    if !(-5..9).contains(&exp) {
        return format!("{v:.8e}");
    }
    let decimals = (8 - exp).max(1) as usize;
    let s = format!("{v:.decimals$}");
    // a carry can add a digit (9.9999999995 -> 10.00000000); harmless
    let trimmed = s.trim_end_matches('0');
    if trimmed.ends_with('.') {
        format!("{trimmed}0")
    } else {
        trimmed.to_string()
    }
}

fn io_err(e: std::io::Error) -> Error {
    Error::io("<stdout>", e)
}

fn parse_dims(s: &str) -> Result<(usize, usize)> {
    let (h, w) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| Error::Domain(format!("expected HxW, got {s:?}")))?;
    let parse = |v: &str| {
        v.trim()
            .parse::<usize>()
            .ok()
            .filter(|&v| v > 0)
            .ok_or_else(|| Error::Domain(format!("bad dimension {v:?} in {s:?}")))
    };
    Ok((parse(h)?, parse(w)?))
}

fn execute(cli: Cli, out: &mut dyn Write, err: &mut dyn Write) -> Result<()> {
    let cfg = match &cli.config {
        Some(path) => Config::load(path)?,
        None => Config::default(),
    };
    match cli.command {
        Command::Heatmap(a) => cmd_heatmap(&cfg, a),
        Command::Regions(a) => cmd_regions(&cfg, a),
        Command::Mask(a) => cmd_mask(a),
        Command::Affine(a) => cmd_affine(a, out),
        Command::Warp(a) => cmd_warp(&cfg, a),
        Command::Nnloss(a) => cmd_nnloss(&cfg, a, out, err),
        Command::Ssim(a) => cmd_ssim(a, out),
        Command::Perturb(a) => cmd_perturb(&cfg, a),
        Command::DeformImage(a) => cmd_deform_image(&cfg, a),
        Command::Bench(a) => cmd_bench(&cfg, a, out, err),
    }
}

fn read_pose(cfg: &Config, path: &Path) -> Result<Keypoints> {
    read_pose_with_threshold(path, cfg.confidence_threshold)
}

fn cmd_heatmap(cfg: &Config, a: HeatmapArgs) -> Result<()> {
    let kp = read_pose(cfg, &a.pose)?;
    let sigma = a.sigma.unwrap_or(cfg.sigma);
    let mode = if a.squared_distance {
        DistanceMode::Squared
    } else {
        DistanceMode::Euclidean
    };
    let maps = encode_heatmaps_with(&kp, a.height, a.width, sigma, mode)?;
    write_tensor(maps.tensor(), &a.out)
}

/// Regions of both poses at one image size, as stored by `regions`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionsFile {
    pub height: usize,
    pub width: usize,
    pub symmetry: bool,
    pub a: Vec<PartCorners>,
    pub b: Vec<PartCorners>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartCorners {
    pub part: Part,
    pub corners: Option<[[f64; 2]; 4]>,
}

impl RegionsFile {
    pub fn new(regions_a: &[Region], regions_b: &[Region], dims: (usize, usize), symmetry: bool) -> Self {
        let pack = |rs: &[Region]| {
            rs.iter()
                .map(|r| PartCorners {
                    part: r.part,
                    corners: r.corners.map(|cs| cs.map(|p| [p.x, p.y])),
                })
                .collect()
        };
        Self {
            height: dims.0,
            width: dims.1,
            symmetry,
            a: pack(regions_a),
            b: pack(regions_b),
        }
    }

    fn unpack(&self, list: &[PartCorners]) -> Result<Vec<Region>> {
        if list.len() != NUM_PARTS {
            return Err(Error::Format(format!(
                "regions file lists {} parts, expected {NUM_PARTS}",
                list.len()
            )));
        }
        list.iter()
            .zip(Part::ALL)
            .map(|(pc, expected)| {
                if pc.part != expected {
                    return Err(Error::Format(format!(
                        "regions out of order: found {} where {} was expected",
                        pc.part, expected
                    )));
                }
                Ok(Region {
                    part: pc.part,
                    corners: pc.corners.map(|cs| cs.map(|[x, y]| Point2::new(x, y))),
                    source_dims: (self.height, self.width),
                })
            })
            .collect()
    }

    pub fn regions_a(&self) -> Result<Vec<Region>> {
        self.unpack(&self.a)
    }

    pub fn regions_b(&self) -> Result<Vec<Region>> {
        self.unpack(&self.b)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: RegionsFile = serde_json::from_str(&text)
            .map_err(|e| Error::Format(format!("regions file {}: {e}", path.display())))?;
        if file.height == 0 || file.width == 0 {
            return Err(Error::Format("regions file has a zero dimension".into()));
        }
        Ok(file)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self).expect("regions serialization");
        text.push('\n');
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

/// Decomposes both poses and applies the symmetry fallback to pose A.
pub fn region_pair(
    cfg: &Config,
    kp_a: &Keypoints,
    kp_b: &Keypoints,
    dims: (usize, usize),
    symmetry: bool,
) -> (Vec<Region>, Vec<Region>) {
    let rc = cfg.region_config();
    let ra = decompose(kp_a, dims.0, dims.1, &rc);
    let rb = decompose(kp_b, dims.0, dims.1, &rc);
    let ra = if symmetry { apply_symmetry(&ra, &rb) } else { ra };
    (ra, rb)
}

fn cmd_regions(cfg: &Config, a: RegionsArgs) -> Result<()> {
    if a.height == 0 || a.width == 0 {
        return Err(Error::Domain("image size must be positive".into()));
    }
    let symmetry = a.symmetry.resolve(cfg);
    let kp_a = read_pose(cfg, &a.pose_a)?;
    let kp_b = read_pose(cfg, &a.pose_b)?;
    let dims = (a.height, a.width);
    let (ra, rb) = region_pair(cfg, &kp_a, &kp_b, dims, symmetry);
    RegionsFile::new(&ra, &rb, dims, symmetry).save(&a.out)
}

fn cmd_mask(a: MaskArgs) -> Result<()> {
    let file = RegionsFile::load(&a.regions)?;
    let part: Part = a.part.parse()?;
    let regions = match a.pose {
        Which::A => file.regions_a()?,
        Which::B => file.regions_b()?,
    };
    let dims = match &a.size {
        Some(s) => parse_dims(s)?,
        None => (file.height, file.width),
    };
    let region = regions[part.index()].rescaled(dims);
    write_tensor(rasterize_mask(&region, dims.0, dims.1).tensor(), &a.out)
}

fn affine_json(t: &AffineTransform) -> String {
    let names = ["a11", "a12", "a21", "a22", "tx", "ty"];
    let fields: Vec<String> = names
        .iter()
        .zip(t.params())
        .map(|(n, v)| format!("\"{n}\": {}", format_number(v)))
        .collect();
    format!("{{{}}}", fields.join(", "))
}

fn cmd_affine(a: AffineArgs, out: &mut dyn Write) -> Result<()> {
    let file = RegionsFile::load(&a.regions)?;
    let part: Part = a.part.parse()?;
    let file_dims = (file.height, file.width);
    let from = a.from.as_deref().map(parse_dims).transpose()?.unwrap_or(file_dims);
    let to = a.to.as_deref().map(parse_dims).transpose()?.unwrap_or(from);
    let ra = file.regions_a()?[part.index()].rescaled(from);
    let rb = file.regions_b()?[part.index()].rescaled(from);
    let (Some(src), Some(dst)) = (ra.corners, rb.corners) else {
        return Err(Error::Degenerate(format!(
            "part {part} is empty in at least one pose"
        )));
    };
    let t = rescale_affine(&fit_affine(&src, &dst)?, from, to);
    writeln!(out, "{}", affine_json(&t)).map_err(io_err)
}

fn merge_strategy(cfg: &Config, m: &MergeArgs, feature_dims: (usize, usize)) -> Result<MergeStrategy> {
    let kind = match &m.strategy {
        Some(s) => s.parse()?,
        None => cfg.merge,
    };
    match kind {
        MergeKind::Max => Ok(MergeStrategy::Max),
        MergeKind::Average => Ok(MergeStrategy::Average),
        MergeKind::Linear => {
            let path = m.weights.as_ref().ok_or_else(|| {
                Error::Domain("the linear strategy needs --weights".into())
            })?;
            let w = read_tensor(path)?;
            if w.dims() != feature_dims || w.channels() != NUM_PARTS {
                return Err(Error::Shape(format!(
                    "weights must be {}x{}x{NUM_PARTS}, got {:?}",
                    feature_dims.0,
                    feature_dims.1,
                    w.shape()
                )));
            }
            Ok(MergeStrategy::Linear(
                (0..NUM_PARTS).map(|c| w.channel(c)).collect::<Result<_>>()?,
            ))
        }
    }
}

fn warp_mode(m: &MergeArgs) -> WarpMode {
    if m.forward_splat {
        WarpMode::ForwardSplat
    } else {
        WarpMode::Backward
    }
}

#[allow(clippy::too_many_arguments)]
fn deform_file(
    cfg: &Config,
    features: &Path,
    pose_a: &Path,
    pose_b: &Path,
    image_dims: Option<(usize, usize)>,
    merge: &MergeArgs,
    symmetry: bool,
    out: &Path,
) -> Result<()> {
    let f = read_tensor(features)?;
    let feature_dims = f.dims();
    let image_dims = image_dims.unwrap_or(feature_dims);
    let kp_a = read_pose(cfg, pose_a)?;
    let kp_b = read_pose(cfg, pose_b)?;
    let (ra, rb) = region_pair(cfg, &kp_a, &kp_b, image_dims, symmetry);
    let plan = build_plan(&ra, &rb, image_dims, feature_dims)?;
    let strategy = merge_strategy(cfg, merge, feature_dims)?;
    let d = deform_with(&f, &plan, &strategy, warp_mode(merge))?;
    write_tensor(&d, out)
}

fn cmd_warp(cfg: &Config, a: WarpArgs) -> Result<()> {
    let image_dims = match (a.image_height, a.image_width) {
        (Some(h), Some(w)) if h > 0 && w > 0 => Some((h, w)),
        (None, None) => None,
        _ => {
            return Err(Error::Domain(
                "--image-height and --image-width must be given together and be positive".into(),
            ))
        }
    };
    deform_file(
        cfg,
        &a.features,
        &a.pose_a,
        &a.pose_b,
        image_dims,
        &a.merge,
        a.symmetry.resolve(cfg),
        &a.out,
    )
}

fn cmd_deform_image(cfg: &Config, a: DeformImageArgs) -> Result<()> {
    deform_file(
        cfg,
        &a.image,
        &a.pose_a,
        &a.pose_b,
        None,
        &a.merge,
        a.symmetry.resolve(cfg),
        &a.out,
    )
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, f64) {
    let start = Instant::now();
    let v = f();
    (v, start.elapsed().as_secs_f64())
}

fn cmd_nnloss(cfg: &Config, a: NnlossArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<()> {
    let x = read_tensor(&a.a)?;
    let y = read_tensor(&a.b)?;
    let n = a.n.unwrap_or(cfg.n);
    if a.time {
        let (fast, t_fast) = timed(|| nn_loss_fast(&x, &y, n));
        let (brute, t_brute) = timed(|| nn_loss_bruteforce(&x, &y, n));
        let value = if a.bruteforce { brute? } else { fast? };
        writeln!(out, "{}", format_number(value)).map_err(io_err)?;
        writeln!(err, "fast_seconds {}", format_number(t_fast)).map_err(io_err)?;
        writeln!(err, "bruteforce_seconds {}", format_number(t_brute)).map_err(io_err)?;
        return Ok(());
    }
    let value = if a.bruteforce {
        nn_loss_bruteforce(&x, &y, n)?
    } else {
        nn_loss_fast(&x, &y, n)?
    };
    writeln!(out, "{}", format_number(value)).map_err(io_err)
}

fn cmd_ssim(a: SsimArgs, out: &mut dyn Write) -> Result<()> {
    let x = read_tensor(&a.a)?;
    let y = read_tensor(&a.b)?;
    let mut params = SsimParams::default();
    if let Some(r) = a.dynamic_range {
        params.dynamic_range = r;
    }
    let score = match &a.mask {
        Some(path) => masked_ssim(&x, &y, &Mask::from_tensor(read_tensor(path)?)?, &params)?,
        None => ssim(&x, &y, &params)?,
    };
    writeln!(out, "{}", format_number(score)).map_err(io_err)
}

fn cmd_perturb(cfg: &Config, a: PerturbArgs) -> Result<()> {
    let kp = read_pose(cfg, &a.pose)?;
    let groups = a
        .parts
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(LimbGroup::parse)
        .collect::<Result<Vec<_>>>()?;
    let noisy = perturb_pose(&kp, a.sigma_noise, &groups, a.seed)?;
    write_pose(&noisy, &a.out)
}

fn random_tensor(rng: &mut ChaCha8Rng, h: usize, w: usize, c: usize) -> Result<Tensor> {
    Tensor::from_fn(h, w, c, |_, _, _| rng.random_range(0.0f32..1.0))
}

fn cmd_bench(cfg: &Config, a: BenchArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<()> {
    let n = a.n.unwrap_or(cfg.n);
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let x = random_tensor(&mut rng, a.height, a.width, a.channels)?;
    let y = random_tensor(&mut rng, a.height, a.width, a.channels)?;
    let repeats = a.repeats.max(1);
    let best_of = |f: &dyn Fn() -> Result<f64>| -> Result<(f64, f64)> {
        let mut best = f64::INFINITY;
        let mut value = 0.0;
        for _ in 0..repeats {
            let (v, t) = timed(f);
            value = v?;
            best = best.min(t);
        }
        Ok((value, best))
    };
    let (fast, t_fast) = best_of(&|| nn_loss_fast(&x, &y, n))?;
    let (brute, t_brute) = best_of(&|| nn_loss_bruteforce(&x, &y, n))?;
    writeln!(out, "fast_loss {}", format_number(fast)).map_err(io_err)?;
    writeln!(out, "bruteforce_loss {}", format_number(brute)).map_err(io_err)?;
    let rel = (fast - brute).abs() / brute.abs().max(f64::MIN_POSITIVE);
    writeln!(out, "relative_difference {}", format_number(rel)).map_err(io_err)?;
    writeln!(err, "fast_seconds {}", format_number(t_fast)).map_err(io_err)?;
    writeln!(err, "bruteforce_seconds {}", format_number(t_brute)).map_err(io_err)?;
    writeln!(err, "speedup {}", format_number(t_brute / t_fast.max(1e-12))).map_err(io_err)?;
    Ok(())
}
