//! Monte Carlo experiment driver.
//!
//! A point is evaluated over `n_geometries × n_channel_draws` channel
//! estimates, each followed by `n_error_draws` redraws of the estimation
//! error. Every random draw comes from a stream keyed by the master seed and
//! the trial indices alone, so
//!
//! * all schemes see the same draws (paired comparisons),
//! * all sweep points see the same underlying draws (common random numbers),
//! * results do not depend on the number of workers.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::channel::{
    draw_channel_triple, large_scale_coefficients, noise_variance, place_network, power_for_snr,
    redraw_error, tau, Geometry, LargeScaleMatrix,
};
use crate::config::{AxisName, Scheme, SimConfig};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::linalg::CMatrix;
use crate::metrics::{
    ergodic_sum_rate, instantaneous_rate, sinr_all, true_channel_sinr, RateReport, SinrModel,
};
use crate::precoders::{
    error_covariance, mmse_conventional, robust_mmse, robust_mmse_clustered_with,
    robust_mmse_sparse, ErrorCovariance, PrecoderMatrix,
};
use crate::rng::{substream, Purpose};
use crate::selection::{build_clusters, select_aps, sparse_channel, ApSelection, ClusterPlan};
use crate::units::db_to_linear;

/// Largest tolerated fraction of dropped SINR samples per scheme.
pub const MAX_DROPPED_FRACTION: f64 = 1e-3;
/// Largest tolerated fraction of failed channel trials per scheme.
pub const MAX_FAILED_FRACTION: f64 = 1e-2;

/// Deployment and large-scale fading of one geometry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeometryRecord {
    pub index: usize,
    pub geometry: Geometry,
    pub zeta: LargeScaleMatrix,
}

/// Draws geometry `index` of a run. Independent of the sweep point.
pub fn draw_geometry(cfg: &SimConfig, index: usize) -> Result<GeometryRecord> {
    let mut placement = substream(cfg.seed, Purpose::Geometry, &[index as u64]);
    let geometry = place_network(cfg.n_aps, cfg.n_users, cfg.area_side, &mut placement)?;
    let mut shadowing = substream(cfg.seed, Purpose::Shadowing, &[index as u64]);
    let zeta = large_scale_coefficients(&geometry, &cfg.propagation, &mut shadowing)?;
    Ok(GeometryRecord {
        index,
        geometry,
        zeta,
    })
}

pub fn draw_geometries(cfg: &SimConfig) -> Result<Vec<GeometryRecord>> {
    (0..cfg.n_geometries)
        .map(|g| draw_geometry(cfg, g))
        .collect()
}

/// Per-scheme bookkeeping for one point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemeDiagnostics {
    /// Channel estimates for which a precoder was requested.
    pub trials: usize,
    pub failed_trials: usize,
    /// Trials whose solve needed the diagonal jitter.
    pub jittered_trials: usize,
    /// Per-user SINR samples evaluated.
    pub n_samples: usize,
    /// Per-user SINR samples excluded for a nonpositive denominator.
    pub n_dropped: usize,
    pub mean_iterations: f64,
    pub max_residual: f64,
    /// Mean global rescale of the assembled clustered precoder (1 for other schemes).
    pub mean_rescale: f64,
    /// Up to five failure messages.
    pub failures: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemeResult {
    pub scheme: Scheme,
    pub report: RateReport,
    pub diagnostics: SchemeDiagnostics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointResult {
    pub sigma_e: f64,
    pub snr_db: f64,
    /// Calibrated transmit power per geometry, watts.
    pub p_t: Vec<f64>,
    /// Mean cluster size per geometry (0 when the clustered scheme is off).
    pub mean_cluster_size: Vec<f64>,
    pub schemes: Vec<SchemeResult>,
}

impl PointResult {
    pub fn get(&self, scheme: Scheme) -> Option<&SchemeResult> {
        self.schemes.iter().find(|s| s.scheme == scheme)
    }

    pub fn esr(&self, scheme: Scheme) -> Option<f64> {
        self.get(scheme).map(|s| s.report.esr)
    }
}

/// Everything fixed per geometry at a given point.
struct GeometryContext {
    zeta: LargeScaleMatrix,
    p_t: f64,
    theta: ErrorCovariance,
    selection: Option<ApSelection>,
    plan: Option<ClusterPlan>,
}

struct TrialOutcome {
    per_user: Vec<f64>,
    n_samples: usize,
    n_dropped: usize,
    iterations: usize,
    residual: f64,
    jittered: bool,
    rescale: f64,
}

fn build_precoder(
    scheme: Scheme,
    cfg: &SimConfig,
    ctx: &GeometryContext,
    g_hat: &CMatrix,
    sigma_e: f64,
    sigma_n2: f64,
) -> Result<PrecoderMatrix> {
    let t = tau(sigma_e);
    match scheme {
        Scheme::Mmse => mmse_conventional(g_hat, ctx.p_t, sigma_n2),
        Scheme::Robust => robust_mmse(g_hat, &ctx.theta, ctx.p_t, sigma_n2, t, &cfg.solver),
        Scheme::RobustSparse => {
            let sel = ctx
                .selection
                .as_ref()
                .expect("selection built for the sparse scheme");
            let sparse = sparse_channel(g_hat, sel)?;
            robust_mmse_sparse(&sparse, &ctx.theta, ctx.p_t, sigma_n2, t, &cfg.solver)
        }
        Scheme::RobustClustered => {
            let plan = ctx
                .plan
                .as_ref()
                .expect("clusters built for the clustered scheme");
            robust_mmse_clustered_with(
                g_hat,
                plan,
                &ctx.theta,
                ctx.p_t,
                sigma_n2,
                t,
                &cfg.solver,
                Execution::Sequential,
            )
        }
    }
}

/// One channel estimate: precoders for every scheme, then the error redraws.
fn run_trial(
    cfg: &SimConfig,
    ctx: &GeometryContext,
    geometry: usize,
    draw: usize,
    sigma_e: f64,
    sigma_n2: f64,
) -> Result<Vec<std::result::Result<TrialOutcome, String>>> {
    let mut estimate_rng = substream(cfg.seed, Purpose::Estimate, &[geometry as u64, draw as u64]);
    let set = draw_channel_triple(&ctx.zeta, sigma_e, &mut estimate_rng)?;
    let t = set.tau;
    let k = cfg.n_users;

    let precoders: Vec<std::result::Result<PrecoderMatrix, String>> = cfg
        .schemes
        .iter()
        .map(|&s| {
            build_precoder(s, cfg, ctx, &set.g_hat, sigma_e, sigma_n2).map_err(|e| e.to_string())
        })
        .collect();

    let mut sums = vec![vec![0.0; k]; precoders.len()];
    let mut counts = vec![vec![0usize; k]; precoders.len()];
    let mut dropped = vec![0usize; precoders.len()];
    for e in 0..cfg.n_error_draws {
        let mut error_rng = substream(
            cfg.seed,
            Purpose::Error,
            &[geometry as u64, draw as u64, e as u64],
        );
        let (g_err, g_true) = redraw_error(&set.g_hat, &ctx.zeta, sigma_e, &mut error_rng)?;
        for (s, pre) in precoders.iter().enumerate() {
            let Ok(pre) = pre else { continue };
            let gammas: Vec<Option<f64>> = match cfg.sinr_model {
                SinrModel::TrueChannel => true_channel_sinr(&g_true, &pre.p, sigma_n2)?
                    .into_iter()
                    .map(Some)
                    .collect(),
                SinrModel::EstimateReferenced => sinr_all(&set.g_hat, &g_err, &pre.p, t, sigma_n2)?
                    .into_iter()
                    .map(|b| b.ok().map(|b| b.gamma))
                    .collect(),
            };
            for (u, gamma) in gammas.into_iter().enumerate() {
                match gamma {
                    Some(g) => {
                        sums[s][u] += instantaneous_rate(g)?;
                        counts[s][u] += 1;
                    }
                    None => dropped[s] += 1,
                }
            }
        }
    }

    Ok(precoders
        .into_iter()
        .enumerate()
        .map(|(s, pre)| {
            let pre = pre?;
            if counts[s].contains(&0) {
                return Err("every SINR sample of a user was dropped".to_string());
            }
            Ok(TrialOutcome {
                per_user: sums[s]
                    .iter()
                    .zip(&counts[s])
                    .map(|(r, &c)| r / c as f64)
                    .collect(),
                n_samples: k * cfg.n_error_draws,
                n_dropped: dropped[s],
                iterations: pre.iterations_run,
                residual: pre.residual,
                jittered: pre.jittered,
                rescale: pre.rescale,
            })
        })
        .collect())
}

fn point_values(cfg: &SimConfig) -> Result<(f64, f64)> {
    match (cfg.sigma_e.scalar(), cfg.snr_db.scalar()) {
        (Some(s), Some(r)) => Ok((s, r)),
        _ => Err(Error::Config(
            "a single point needs scalar sigma_e and snr_db".into(),
        )),
    }
}

/// Evaluates one `(σe, SNR)` point with the default execution mode.
pub fn run_point(cfg: &SimConfig) -> Result<PointResult> {
    run_point_with(cfg, Execution::default())
}

pub fn run_point_with(cfg: &SimConfig, exec: Execution) -> Result<PointResult> {
    cfg.validate()?;
    let geometries = draw_geometries(cfg)?;
    run_point_on(cfg, &geometries, exec)
}

fn run_point_on(
    cfg: &SimConfig,
    geometries: &[GeometryRecord],
    exec: Execution,
) -> Result<PointResult> {
    let (sigma_e, snr_db) = point_values(cfg)?;
    let sigma_n2 = noise_variance(&cfg.propagation);
    let wants = |s: Scheme| cfg.schemes.contains(&s);

    let contexts = geometries
        .iter()
        .map(|rec| -> Result<GeometryContext> {
            let p_t = power_for_snr(&rec.zeta, db_to_linear(snr_db), sigma_n2)?;
            let theta = error_covariance(&rec.zeta, sigma_e, cfg.theta_mode)?;
            let needs_selection = wants(Scheme::RobustSparse) || wants(Scheme::RobustClustered);
            let selection = needs_selection
                .then(|| select_aps(&rec.zeta, cfg.aps_per_user))
                .transpose()?;
            let plan = match (&selection, wants(Scheme::RobustClustered)) {
                (Some(sel), true) => Some(build_clusters(sel, cfg.min_shared_aps)?),
                _ => None,
            };
            Ok(GeometryContext {
                zeta: rec.zeta.clone(),
                p_t,
                theta,
                selection,
                plan,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let draws = cfg.n_channel_draws;
    let trials = exec.map(0..contexts.len() * draws, |i| {
        let (g, d) = (i / draws, i % draws);
        run_trial(cfg, &contexts[g], g, d, sigma_e, sigma_n2)
    });
    let trials = trials.into_iter().collect::<Result<Vec<_>>>()?;

    let mut schemes = Vec::with_capacity(cfg.schemes.len());
    for (s, &scheme) in cfg.schemes.iter().enumerate() {
        let mut diag = SchemeDiagnostics {
            trials: trials.len(),
            failed_trials: 0,
            jittered_trials: 0,
            n_samples: 0,
            n_dropped: 0,
            mean_iterations: 0.0,
            max_residual: 0.0,
            mean_rescale: 0.0,
            failures: Vec::new(),
        };
        let mut per_draw = Vec::with_capacity(trials.len());
        for trial in &trials {
            match &trial[s] {
                Ok(out) => {
                    per_draw.push(out.per_user.clone());
                    diag.n_samples += out.n_samples;
                    diag.n_dropped += out.n_dropped;
                    diag.jittered_trials += usize::from(out.jittered);
                    diag.mean_iterations += out.iterations as f64;
                    diag.max_residual = diag.max_residual.max(out.residual);
                    diag.mean_rescale += out.rescale;
                }
                Err(msg) => {
                    diag.failed_trials += 1;
                    if diag.failures.len() < 5 {
                        diag.failures.push(msg.clone());
                    }
                }
            }
        }
        let ok = per_draw.len();
        if ok > 0 {
            diag.mean_iterations /= ok as f64;
            diag.mean_rescale /= ok as f64;
        }
        if diag.failed_trials as f64 > MAX_FAILED_FRACTION * diag.trials as f64 || ok == 0 {
            return Err(Error::Numerical(format!(
                "{scheme}: {} of {} trials failed (first: {})",
                diag.failed_trials,
                diag.trials,
                diag.failures.first().map(String::as_str).unwrap_or("none")
            )));
        }
        if diag.n_dropped as f64 > MAX_DROPPED_FRACTION * diag.n_samples as f64 {
            return Err(Error::Numerical(format!(
                "{scheme}: {} of {} SINR samples had a nonpositive denominator",
                diag.n_dropped, diag.n_samples
            )));
        }
        let report = ergodic_sum_rate(&per_draw, cfg.n_error_draws)?;
        schemes.push(SchemeResult {
            scheme,
            report,
            diagnostics: diag,
        });
    }

    Ok(PointResult {
        sigma_e,
        snr_db,
        p_t: contexts.iter().map(|c| c.p_t).collect(),
        mean_cluster_size: contexts
            .iter()
            .map(|c| c.plan.as_ref().map_or(0.0, ClusterPlan::mean_cluster_size))
            .collect(),
        schemes,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub axis_value: f64,
    pub result: PointResult,
}

/// Results of a sweep, ordered by ascending axis value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub axis: AxisName,
    pub seed: u64,
    pub config_hash: String,
    pub points: Vec<SweepPoint>,
}

impl SweepTable {
    pub fn schemes(&self) -> Vec<Scheme> {
        self.points
            .first()
            .map(|p| p.result.schemes.iter().map(|s| s.scheme).collect())
            .unwrap_or_default()
    }

    /// `(axis value, report)` pairs of one scheme.
    pub fn series(&self, scheme: Scheme) -> Vec<(f64, &RateReport)> {
        self.points
            .iter()
            .filter_map(|p| p.result.get(scheme).map(|s| (p.axis_value, &s.report)))
            .collect()
    }

    pub fn rows(&self) -> Vec<SweepRow> {
        self.points
            .iter()
            .flat_map(|p| {
                p.result.schemes.iter().map(move |s| SweepRow {
                    axis_name: self.axis.as_str().to_string(),
                    axis_value: p.axis_value,
                    scheme: s.scheme.label().to_string(),
                    esr_bits_per_hz: s.report.esr,
                    ci95_halfwidth: s.report.ci_halfwidth,
                    n_samples: s.diagnostics.n_samples,
                    n_dropped: s.diagnostics.n_dropped,
                })
            })
            .collect()
    }
}

/// Runs one point per value of `axis`. The other axis must be scalar; a
/// scalar `axis` gives a single-point sweep.
pub fn run_sweep(cfg: &SimConfig, axis: AxisName) -> Result<SweepTable> {
    run_sweep_with(cfg, axis, Execution::default())
}

pub fn run_sweep_with(cfg: &SimConfig, axis: AxisName, exec: Execution) -> Result<SweepTable> {
    cfg.validate()?;
    let (values, other) = match axis {
        AxisName::SnrDb => (cfg.snr_db.values(), &cfg.sigma_e),
        AxisName::SigmaE => (cfg.sigma_e.values(), &cfg.snr_db),
    };
    let Some(other) = other.scalar() else {
        return Err(Error::Config(format!(
            "sweeping {axis} needs the other axis to be a scalar"
        )));
    };
    let mut values = values;
    values.sort_by(f64::total_cmp);

    let geometries = draw_geometries(cfg)?;
    let points = values
        .into_iter()
        .map(|v| {
            let point = match axis {
                AxisName::SnrDb => cfg.at_point(other, v),
                AxisName::SigmaE => cfg.at_point(v, other),
            };
            run_point_on(&point, &geometries, exec).map(|result| SweepPoint {
                axis_value: v,
                result,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepTable {
        axis,
        seed: cfg.seed,
        config_hash: cfg.hash(),
        points,
    })
}

/// Outcome of one built-in invariant check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

/// Invariant suite on the first geometry and a few channel estimates of
/// `cfg`: channel consistency, perfect-CSIT reduction, power constraint of
/// every scheme, and the robust fixed point (stationarity and `λ`).
pub fn invariant_checks(cfg: &SimConfig) -> Result<Vec<CheckOutcome>> {
    const DRAWS: usize = 5;
    let sigma_e = cfg
        .sigma_e
        .values()
        .into_iter()
        .fold(0.0, f64::max)
        .max(0.1);
    let snr_db = cfg.snr_db.values()[0];
    let point = cfg.at_point(sigma_e, snr_db);
    point.validate()?;
    let rec = draw_geometry(&point, 0)?;
    let sigma_n2 = noise_variance(&point.propagation);
    let p_t = power_for_snr(&rec.zeta, db_to_linear(snr_db), sigma_n2)?;
    let selection = select_aps(&rec.zeta, point.aps_per_user)?;
    let ctx = GeometryContext {
        theta: error_covariance(&rec.zeta, sigma_e, point.theta_mode)?,
        plan: Some(build_clusters(&selection, point.min_shared_aps)?),
        selection: Some(selection),
        zeta: rec.zeta,
        p_t,
    };
    let zero_theta = error_covariance(&ctx.zeta, 0.0, point.theta_mode)?;

    let (mut consistency, mut reduction, mut residual, mut lambda_gap) =
        (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    let mut power_gap = vec![0.0f64; Scheme::ALL.len()];
    for d in 0..DRAWS {
        let mut rng = substream(point.seed, Purpose::Check, &[d as u64]);
        let set = draw_channel_triple(&ctx.zeta, sigma_e, &mut rng)?;
        consistency = consistency.max(set.consistency_error());

        let conventional = mmse_conventional(&set.g_hat, p_t, sigma_n2)?;
        let reduced = robust_mmse(&set.g_hat, &zero_theta, p_t, sigma_n2, 1.0, &point.solver)?;
        reduction = reduction.max(crate::linalg::max_abs_diff(&conventional.p, &reduced.p));

        for (i, &scheme) in Scheme::ALL.iter().enumerate() {
            let pre = build_precoder(scheme, &point, &ctx, &set.g_hat, sigma_e, sigma_n2)?;
            power_gap[i] = power_gap[i].max((pre.power() - p_t).abs() / p_t);
            if scheme == Scheme::Robust {
                residual = residual.max(pre.residual);
                let again = crate::precoders::update_lambda(
                    &pre.p,
                    pre.f,
                    cfg.n_users as f64 * sigma_n2,
                    &ctx.theta,
                    set.tau,
                    p_t,
                )?;
                lambda_gap = lambda_gap
                    .max((again - pre.lambda).abs() / pre.lambda.abs().max(f64::MIN_POSITIVE));
            }
        }
    }

    let mut out = vec![
        outcome("channel consistency", consistency < 1e-12, consistency),
        outcome(
            "perfect-CSIT reduction (max-abs)",
            reduction < 1e-8,
            reduction,
        ),
    ];
    for (scheme, gap) in Scheme::ALL.iter().zip(power_gap) {
        out.push(outcome(
            &format!("power constraint {scheme}"),
            gap < 1e-8,
            gap,
        ));
    }
    out.push(outcome(
        "stationarity residual MMSE-RB",
        residual < 1e-6,
        residual,
    ));
    out.push(outcome(
        "lambda consistency MMSE-RB",
        lambda_gap < 1e-8,
        lambda_gap,
    ));
    Ok(out)
}

fn outcome(name: &str, passed: bool, value: f64) -> CheckOutcome {
    CheckOutcome {
        name: name.to_string(),
        passed,
        detail: format!("{value:.3e}"),
    }
}

/// One CSV line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub axis_name: String,
    pub axis_value: f64,
    pub scheme: String,
    pub esr_bits_per_hz: f64,
    pub ci95_halfwidth: f64,
    pub n_samples: usize,
    pub n_dropped: usize,
}

/// Reproduction record written next to every CSV table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub seed: u64,
    pub config_hash: String,
    pub config: SimConfig,
    pub geometries: Vec<GeometryRecord>,
    pub table: SweepTable,
    pub wall_clock_s: f64,
    pub notes: Vec<String>,
}

impl RunManifest {
    pub fn new(
        command: &str,
        cfg: &SimConfig,
        table: SweepTable,
        started: Instant,
    ) -> Result<Self> {
        let mut notes = vec![
            "transmit power is calibrated per geometry from the expected channel trace".to_string(),
            "all schemes and all sweep points share the same random draws".to_string(),
        ];
        if cfg.schemes.contains(&Scheme::RobustClustered) {
            notes.push(
                "the assembled clustered precoder is rescaled to the total power budget"
                    .to_string(),
            );
        }
        Ok(Self {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            seed: cfg.seed,
            config_hash: cfg.hash(),
            config: cfg.clone(),
            geometries: draw_geometries(cfg)?,
            table,
            wall_clock_s: started.elapsed().as_secs_f64(),
            notes,
        })
    }
}

/// Paths written by [`persist`].
#[derive(Debug, Clone, PartialEq)]
pub struct Persisted {
    pub csv: PathBuf,
    pub manifest: PathBuf,
}

/// Writes `<dir>/<stem>.csv` and `<dir>/<stem>.manifest.json`, each
/// atomically.
pub fn persist(manifest: &RunManifest, dir: &Path, stem: &str) -> Result<Persisted> {
    let csv_path = dir.join(format!("{stem}.csv"));
    let manifest_path = dir.join(format!("{stem}.manifest.json"));
    write_atomic(&csv_path, &render_csv(&manifest.table)?)?;
    let json = serde_json::to_vec_pretty(manifest).map_err(|e| Error::Format {
        path: manifest_path.clone(),
        message: e.to_string(),
    })?;
    write_atomic(&manifest_path, &json)?;
    Ok(Persisted {
        csv: csv_path,
        manifest: manifest_path,
    })
}

/// CSV body with `#` header lines carrying the seed and config hash.
pub fn render_csv(table: &SweepTable) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    writeln!(out, "# seed={}", table.seed).expect("writing to memory");
    writeln!(out, "# config_hash={}", table.config_hash).expect("writing to memory");
    let mut writer = csv::Writer::from_writer(out);
    for row in table.rows() {
        writer
            .serialize(row)
            .map_err(|e| Error::Numerical(format!("cannot encode CSV row: {e}")))?;
    }
    writer
        .into_inner()
        .map_err(|e| Error::Numerical(format!("cannot encode CSV: {e}")))
}

pub fn read_csv(path: &Path) -> Result<Vec<SweepRow>> {
    let text = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(text.as_slice());
    reader
        .deserialize()
        .collect::<std::result::Result<Vec<SweepRow>, _>>()
        .map_err(|e| Error::Format {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
}

pub fn read_manifest(path: &Path) -> Result<RunManifest> {
    let text = fs::read(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_slice(&text).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// Writes through a sibling temporary file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    static COUNTER: AtomicU64 = AtomicU64::new(0);
    let name = path.file_name().ok_or_else(|| {
        Error::io(
            path,
            std::io::Error::new(std::io::ErrorKind::InvalidInput, "no file name"),
        )
    })?;
    let tmp = path.with_file_name(format!(
        ".{}.{}.{}.tmp",
        name.to_string_lossy(),
        std::process::id(),
        COUNTER.fetch_add(1, Ordering::Relaxed)
    ));
    let result = fs::File::create(&tmp)
        .and_then(|mut f| {
            f.write_all(bytes)?;
            f.sync_all()
        })
        .and_then(|_| fs::rename(&tmp, path));
    if let Err(e) = result {
        let _ = fs::remove_file(&tmp);
        return Err(Error::io(path, e));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Axis;

    fn tiny() -> SimConfig {
        SimConfig {
            n_aps: 8,
            n_users: 3,
            aps_per_user: 4,
            min_shared_aps: 1,
            n_channel_draws: 4,
            n_error_draws: 3,
            ..SimConfig::desk()
        }
    }

    #[test]
    fn point_is_deterministic() {
        let cfg = SimConfig {
            schemes: vec![Scheme::Mmse],
            n_channel_draws: 1,
            n_error_draws: 1,
            ..tiny()
        };
        let a = run_point(&cfg).unwrap();
        let b = run_point(&cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn sequential_matches_default_execution() {
        let cfg = tiny();
        assert_eq!(
            run_point_with(&cfg, Execution::Sequential).unwrap(),
            run_point_with(&cfg, Execution::default()).unwrap()
        );
    }

    #[test]
    fn trial_accounting() {
        let cfg = SimConfig {
            n_geometries: 2,
            ..tiny()
        };
        let r = run_point(&cfg).unwrap();
        assert_eq!(r.p_t.len(), 2);
        for s in &r.schemes {
            assert_eq!(s.diagnostics.trials, 8);
            assert_eq!(s.diagnostics.n_samples, 8 * 3 * 3);
            assert_eq!(s.report.n_channel_draws, 8);
            assert!(s.report.esr > 0.0);
            assert!(s.report.per_user_avg_rate.iter().all(|&r| r >= 0.0));
        }
    }

    #[test]
    fn perfect_csit_makes_robust_conventional() {
        let cfg = SimConfig {
            sigma_e: Axis::Scalar(0.0),
            schemes: vec![Scheme::Mmse, Scheme::Robust],
            ..tiny()
        };
        let r = run_point(&cfg).unwrap();
        let (a, b) = (r.esr(Scheme::Mmse).unwrap(), r.esr(Scheme::Robust).unwrap());
        assert!((a - b).abs() < 1e-6, "{a} vs {b}");
    }

    #[test]
    fn sweep_is_ordered_and_single_value_matches_point() {
        let mut cfg = tiny();
        cfg.snr_db = Axis::List(vec![10.0, 0.0]);
        let t = run_sweep(&cfg, AxisName::SnrDb).unwrap();
        assert_eq!(
            t.points.iter().map(|p| p.axis_value).collect::<Vec<_>>(),
            vec![0.0, 10.0]
        );
        assert_eq!(t.rows().len(), 2 * 4);

        let single = run_sweep(&tiny(), AxisName::SnrDb).unwrap();
        assert_eq!(single.points.len(), 1);
        assert_eq!(single.points[0].result, run_point(&tiny()).unwrap());
    }

    #[test]
    fn sweep_rejects_list_on_other_axis() {
        let mut cfg = tiny();
        cfg.sigma_e = Axis::List(vec![0.0, 0.1]);
        assert!(matches!(
            run_sweep(&cfg, AxisName::SnrDb),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn scalar_point_required() {
        let mut cfg = tiny();
        cfg.snr_db = Axis::List(vec![0.0]);
        assert!(matches!(run_point(&cfg), Err(Error::Config(_))));
    }

    #[test]
    fn estimate_referenced_model_counts_drops() {
        let cfg = SimConfig {
            sinr_model: SinrModel::EstimateReferenced,
            sigma_e: Axis::Scalar(0.0),
            ..tiny()
        };
        let r = run_point(&cfg).unwrap();
        for s in &r.schemes {
            assert_eq!(s.diagnostics.n_dropped, 0);
        }
    }

    #[test]
    fn invariant_suite_passes_on_defaults() {
        for check in invariant_checks(&SimConfig::desk()).unwrap() {
            assert!(check.passed, "{} {}", check.name, check.detail);
        }
    }

    #[test]
    fn persist_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny();
        let table = run_sweep(&cfg, AxisName::SnrDb).unwrap();
        let manifest = RunManifest::new("run", &cfg, table.clone(), Instant::now()).unwrap();
        let out = persist(&manifest, dir.path(), "point").unwrap();
        assert_eq!(read_csv(&out.csv).unwrap(), table.rows());
        assert_eq!(read_manifest(&out.manifest).unwrap(), manifest);
        let text = fs::read_to_string(&out.csv).unwrap();
        assert!(text.starts_with(&format!(
            "# seed={}\n# config_hash={}\n",
            cfg.seed,
            cfg.hash()
        )));
        let leftovers = fs::read_dir(dir.path()).unwrap().count();
        assert_eq!(leftovers, 2);
    }

    #[test]
    fn persist_into_missing_directory_names_the_path() {
        let dir = tempfile::tempdir().unwrap();
        let missing = dir.path().join("nope");
        let cfg = tiny();
        let table = run_sweep(&cfg, AxisName::SnrDb).unwrap();
        let manifest = RunManifest::new("run", &cfg, table, Instant::now()).unwrap();
        let err = persist(&manifest, &missing, "x").unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
        assert!(err.to_string().contains("nope"), "{err}");
    }

    #[test]
    fn concurrent_writers_to_distinct_paths() {
        let dir = tempfile::tempdir().unwrap();
        let paths: Vec<PathBuf> = (0..4)
            .map(|i| dir.path().join(format!("f{i}.txt")))
            .collect();
        std::thread::scope(|s| {
            for (i, p) in paths.iter().enumerate() {
                s.spawn(move || write_atomic(p, format!("{i}").as_bytes()).unwrap());
            }
        });
        for (i, p) in paths.iter().enumerate() {
            assert_eq!(fs::read_to_string(p).unwrap(), i.to_string());
        }
    }
}
