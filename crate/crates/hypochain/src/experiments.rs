//! The experiments behind each subcommand.

use std::fmt;

use hypochain_core::density::{
    chi_radii, diagonal_decay, estimate_density, fit_envelope, moment_norm, moment_slope, quantile_levels,
    sup_radii, BandwidthRule, DensityEstimate, EnvelopeFit, LinearGaussianLaw, Regime, TailCurve, BAND_Z,
    MIN_TAIL_COUNT, TAIL_P_MAX,
};
use hypochain_core::field::{finite_difference_block, jacobian_block};
use hypochain_core::flow::{default_theta_steps, solve_theta, ScalingMatrix};
use hypochain_core::limit::{build_q, hormander_matrix, q_n, q_n_factorial, LimitModel};
use hypochain_core::mc::{residuals, Record, SampleBatch, Scheme, SimConfig};
use hypochain_core::model::{check_h1, probe_points, validate_structure, Regularity};
use hypochain_core::pricing::{atm_asymptotic_price, beta_samples, limit_variance, price_from_batch, OptionKind};
use hypochain_core::stats::{covariance_with_se, linear_fit, Estimate};
use hypochain_core::ChainedSystem;
use nalgebra::DMatrix;
use serde_json::{json, Value};

use crate::config::{BandwidthConfig, KindName, RecordName, RunConfig, SchemeName};
use crate::engine::Engine;
use crate::error::AppError;
use crate::output::{Cell, Check, Report, Table};
use crate::registry::BuiltModel;

/// Entries of the simulated covariance must sit within this many standard errors.
pub const COVARIANCE_Z: f64 = 3.0;
/// Tolerance on the log-log slope of the Taylor residuals.
pub const RESIDUAL_SLOPE_TOL: f64 = 0.2;
/// Tolerance on the log-log slope of the multi-scale moments.
pub const MOMENT_SLOPE_TOL: f64 = 0.15;
/// Relative size of the residual accepted as zero on linear models.
pub const LINEAR_RESIDUAL_TOL: f64 = 1e-6;
/// Relative Frobenius tolerance on the Hessian estimate.
pub const HESSIAN_TOL: f64 = 0.15;
/// A density estimate with a larger relative standard error lacks tail mass.
pub const MAX_RELATIVE_SE: f64 = 0.1;
/// Accepted band for the ratio of the MC price to the asymptotic price.
pub const PRICE_RATIO_BAND: (f64, f64) = (0.98, 1.02);
/// Accepted band for the Gaussian decay scale over the largest eigenvalue of the
/// rescaled covariance.
pub const GAUSSIAN_RATE_BAND: (f64, f64) = (1.8, 2.2);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Subcommand {
    Validate,
    Limits,
    Simulate,
    TaylorCheck,
    Density,
    Tails,
    Converge,
    Derivatives,
    DiagonalDecay,
    Price,
}

impl Subcommand {
    pub const ALL: [Subcommand; 10] = [
        Subcommand::Validate,
        Subcommand::Limits,
        Subcommand::Simulate,
        Subcommand::TaylorCheck,
        Subcommand::Density,
        Subcommand::Tails,
        Subcommand::Converge,
        Subcommand::Derivatives,
        Subcommand::DiagonalDecay,
        Subcommand::Price,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Subcommand::Validate => "validate",
            Subcommand::Limits => "limits",
            Subcommand::Simulate => "simulate",
            Subcommand::TaylorCheck => "taylor-check",
            Subcommand::Density => "density",
            Subcommand::Tails => "tails",
            Subcommand::Converge => "converge",
            Subcommand::Derivatives => "derivatives",
            Subcommand::DiagonalDecay => "diagonal-decay",
            Subcommand::Price => "price",
        }
    }
}

impl fmt::Display for Subcommand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Inputs shared by every experiment.
pub struct Context<'a> {
    pub run: &'a RunConfig,
    pub model: &'a BuiltModel,
    pub engine: &'a Engine,
}

impl Context<'_> {
    fn sys(&self) -> &ChainedSystem {
        &self.model.system
    }

    fn simulate(&self, t: f64, record: Record) -> Result<SampleBatch, AppError> {
        let scheme = match self.run.scheme {
            SchemeName::Euler => Scheme::Euler,
            SchemeName::EulerTrapezoid => Scheme::EulerTrapezoid,
        };
        let cfg = SimConfig::new(t, self.run.steps, self.run.paths, self.run.seed)
            .with_scheme(scheme)
            .with_record(record);
        self.engine.simulate(self.sys(), cfg)
    }

    fn theta(&self, t: f64) -> Result<Vec<f64>, AppError> {
        let steps = self.run.theta_steps.unwrap_or_else(|| default_theta_steps(t));
        Ok(solve_theta(self.sys(), t, steps)?.terminal().to_vec())
    }

    fn y_bar(&self) -> Result<Vec<f64>, AppError> {
        let dim = self.sys().dim();
        match &self.run.y_bar {
            Some(y) if y.len() != dim => Err(AppError::Config(format!(
                "run.y_bar: expected {dim} entries, got {}",
                y.len()
            ))),
            Some(y) => Ok(y.clone()),
            None => Ok(vec![0.0; dim]),
        }
    }

    fn times(&self) -> Result<Vec<f64>, AppError> {
        let times = self.run.times();
        if times.iter().any(|t| !(*t > 0.0) || !t.is_finite()) {
            return Err(AppError::Config("run.t and run.t_grid entries must be positive".into()));
        }
        Ok(times)
    }

    /// Relative tolerance for density comparisons.
    fn density_tolerance(&self) -> f64 {
        self.run.tolerance.unwrap_or(match self.sys().meta().regularity {
            Regularity::Lognormal => 0.10,
            _ => 0.05,
        })
    }
}

fn bandwidth(cfg: &BandwidthConfig) -> BandwidthRule {
    match cfg {
        BandwidthConfig::Silverman => BandwidthRule::Silverman,
        BandwidthConfig::SilvermanSphered => BandwidthRule::SilvermanSphered,
        BandwidthConfig::NormalReference { order } => BandwidthRule::NormalReference {
            derivative_order: *order,
        },
        BandwidthConfig::Fixed { h } => BandwidthRule::Fixed(h.clone()),
    }
}

fn record(cfg: RecordName) -> Record {
    match cfg {
        RecordName::Terminal => Record::Terminal,
        RecordName::SupNorm => Record::SupNorm,
        RecordName::JointN => Record::JointN,
    }
}

fn fmt_t(t: f64) -> String {
    format!("{t}")
}

pub fn run(cmd: Subcommand, ctx: &Context) -> Result<Report, AppError> {
    match cmd {
        Subcommand::Validate => validate(ctx),
        Subcommand::Limits => limits(ctx),
        Subcommand::Simulate => simulate(ctx),
        Subcommand::TaylorCheck => taylor_check(ctx),
        Subcommand::Density => density(ctx),
        Subcommand::Tails => tails(ctx),
        Subcommand::Converge => converge(ctx),
        Subcommand::Derivatives => derivatives(ctx),
        Subcommand::DiagonalDecay => decay(ctx),
        Subcommand::Price => price(ctx),
    }
}

/// Tolerance for analytic against finite-difference Jacobians.
const JACOBIAN_TOL: f64 = 1e-5;

fn validate(ctx: &Context) -> Result<Report, AppError> {
    let sys = ctx.sys();
    let (n, dim) = (sys.n(), sys.dim());
    let probes = probe_points(sys, ctx.run.probes.max(1), ctx.run.seed);
    let structure = validate_structure(sys, &probes)?;
    let h1 = check_h1(sys)?;

    let mut header = vec!["probe".to_owned()];
    header.extend((1..=dim).map(|h| format!("x{h}")));
    header.push("jacobian_error".into());
    let mut table = Table {
        header,
        rows: Vec::new(),
    };
    let mut worst: f64 = 0.0;
    for (k, p) in probes.iter().enumerate() {
        let mut err: f64 = 0.0;
        let fields = (0..n).map(|j| sys.drift_block(j)).chain(std::iter::once(sys.sigma_field()));
        for field in fields.filter(|f| f.has_analytic_jacobian() && !f.is_constant()) {
            for l in 0..n {
                let exact = jacobian_block(field, l, 0.0, p)?;
                let fd = finite_difference_block(field, l, 0.0, p)?;
                err = err.max((exact - &fd).norm() / fd.norm().max(1.0));
            }
        }
        worst = worst.max(err);
        let mut row: Vec<Cell> = vec![k.into()];
        row.extend(p.iter().map(|v| Cell::from(*v)));
        row.push(err.into());
        table.push(row);
    }

    let checks = vec![
        Check::assert(
            "chain_structure",
            structure.structure_ok,
            format!("forbidden dependencies (j, l): {:?}", structure.violations),
        ),
        Check::assert(
            "weak_hormander",
            h1.holds(),
            format!("smallest singular value {:.6e}", h1.lambda),
        ),
        Check::assert(
            "jacobian_agreement",
            worst <= JACOBIAN_TOL,
            format!("max relative analytic vs finite-difference error {worst:.3e}"),
        ),
    ];
    Ok(Report {
        table,
        extra: Vec::new(),
        checks,
        results: json!({
            "h1_lambda": h1.lambda,
            "h1_product": matrix_json(&h1.product),
            "derivative_box_bound": structure.h2_box_bound,
            "violations": structure.violations,
            "regularity": format!("{:?}", sys.meta().regularity),
            "linear": sys.meta().linear.is_some(),
        }),
        warnings: structure.warnings,
    })
}

fn matrix_json(m: &DMatrix<f64>) -> Value {
    Value::from(
        (0..m.nrows())
            .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect::<Vec<_>>())
            .collect::<Vec<_>>(),
    )
}

fn push_matrix(table: &mut Table, name: &str, m: &DMatrix<f64>) {
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            table.push(vec![name.into(), (i + 1).into(), (j + 1).into(), m[(i, j)].into()]);
        }
    }
}

/// Central differences of a scalar function, step `h`.
fn fd_gradient(f: &dyn Fn(&[f64]) -> f64, y: &[f64], h: f64) -> Vec<f64> {
    let mut p = y.to_vec();
    (0..y.len())
        .map(|i| {
            p[i] = y[i] + h;
            let up = f(&p);
            p[i] = y[i] - h;
            let down = f(&p);
            p[i] = y[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

fn rel_diff(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    num / den.max(f64::MIN_POSITIVE)
}

fn limits(ctx: &Context) -> Result<Report, AppError> {
    let sys = ctx.sys();
    let (n, d, dim) = (sys.n(), sys.d(), sys.dim());
    let lim = LimitModel::from_system(sys)?;
    let y_bar = ctx.y_bar()?;
    let hormander = hormander_matrix(sys)?;

    let mut table = Table::new(&["matrix", "i", "j", "value"]);
    push_matrix(&mut table, "A", lim.a());
    push_matrix(&mut table, "Q", lim.q());
    push_matrix(&mut table, "AQAt", lim.covariance());
    push_matrix(&mut table, "hormander", &hormander.matrix);

    let qn_det = q_n(n, d)?;
    let qn_fact = q_n_factorial(n);
    let qn_gap = (qn_det - qn_fact).abs() / qn_det;

    // Gradient orientation: compare both signs with finite differences at a
    // point where the gradient does not vanish.
    let probe: Vec<f64> = if y_bar.iter().all(|v| *v == 0.0) {
        vec![0.5; dim]
    } else {
        y_bar.clone()
    };
    let density = |y: &[f64]| lim.density(y).unwrap_or(f64::NAN);
    let fd = fd_gradient(&density, &probe, 1e-5);
    let grad = lim.gradient(&probe)?;
    let flipped: Vec<f64> = grad.iter().map(|v| -v).collect();
    let minus_err = rel_diff(&grad, &fd);
    let plus_err = rel_diff(&flipped, &fd);
    let hess = lim.hessian(&probe)?;
    let mut hess_fd = DMatrix::zeros(dim, dim);
    for i in 0..dim {
        let gi = |y: &[f64]| lim.gradient(y).map(|g| g[i]).unwrap_or(f64::NAN);
        for (j, v) in fd_gradient(&gi, &probe, 1e-5).into_iter().enumerate() {
            hess_fd[(i, j)] = v;
        }
    }
    let hess_err = (&hess - &hess_fd).norm() / hess_fd.norm();

    let checks = vec![
        Check::assert(
            "qn_routes_agree",
            qn_gap <= 1e-10,
            format!("determinant route {qn_det:.17e}, factorial route {qn_fact:.17e}"),
        ),
        Check::assert(
            "hormander_block_upper_triangular",
            hormander.lower_ok,
            format!(
                "below-diagonal mass {:.3e} of total {:.3e}",
                hormander.below_diagonal_mass, hormander.total_mass
            ),
        ),
        Check::assert(
            "hormander_diagonal_is_a",
            hormander.diagonal_ok,
            format!("diagonal block errors {:?}", hormander.diagonal_errors),
        ),
        Check::assert(
            "gradient_matches_finite_differences",
            minus_err <= 1e-5,
            format!("relative error {minus_err:.3e} for -p (AQAt)^-1 y"),
        ),
        Check::report(
            "positive_gradient_sign_matches",
            plus_err <= 1e-5,
            format!("relative error {plus_err:.3e} for +p (AQAt)^-1 y"),
        ),
        Check::assert(
            "hessian_matches_finite_differences",
            hess_err <= 1e-5,
            format!("relative Frobenius error {hess_err:.3e}"),
        ),
    ];
    let results = json!({
        "n": n,
        "d": d,
        "qn": lim.qn(),
        "det_a_abs": lim.det_a_abs(),
        "normalization": lim.normalization(),
        "y_bar": y_bar,
        "density": lim.density(&y_bar)?,
        "gradient": lim.gradient(&y_bar)?,
        "hessian": matrix_json(&lim.hessian(&y_bar)?),
        "gradient_sign_probe": probe,
        "gradient_sign": if minus_err <= plus_err { "negative" } else { "positive" },
        "a": matrix_json(lim.a()),
        "q": matrix_json(lim.q()),
        "covariance": matrix_json(lim.covariance()),
    });
    Ok(Report {
        table,
        extra: Vec::new(),
        checks,
        results,
        warnings: Vec::new(),
    })
}

fn stat_rows(table: &mut Table, quantity: &str, est: &[Estimate], reference: &[f64]) -> f64 {
    let mut worst: f64 = 0.0;
    for (k, (e, r)) in est.iter().zip(reference).enumerate() {
        let z = e.z_score(*r);
        if r.is_finite() {
            worst = worst.max(z);
        }
        table.push(vec![
            quantity.into(),
            (k + 1).into(),
            0usize.into(),
            e.value.into(),
            e.se.into(),
            (*r).into(),
            z.into(),
        ]);
    }
    worst
}

fn cov_rows(table: &mut Table, quantity: &str, cov: &DMatrix<f64>, se: &DMatrix<f64>, reference: Option<&DMatrix<f64>>) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..cov.nrows() {
        for j in i..cov.ncols() {
            let r = reference.map_or(f64::NAN, |m| m[(i, j)]);
            let z = (cov[(i, j)] - r).abs() / se[(i, j)];
            if r.is_finite() {
                worst = worst.max(z);
            }
            table.push(vec![
                quantity.into(),
                (i + 1).into(),
                (j + 1).into(),
                cov[(i, j)].into(),
                se[(i, j)].into(),
                r.into(),
                z.into(),
            ]);
        }
    }
    worst
}

fn simulate(ctx: &Context) -> Result<Report, AppError> {
    let sys = ctx.sys();
    let (n, dim) = (sys.n(), sys.dim());
    let t = ctx.run.t;
    let rec = record(ctx.run.record);
    let batch = ctx.simulate(t, rec)?;
    let theta = ctx.theta(t)?;
    let law = match sys.meta().linear {
        Some(_) => Some(LinearGaussianLaw::new(sys, t)?),
        None => None,
    };

    let mut table = Table::new(&["quantity", "i", "j", "estimate", "se", "reference", "z"]);
    let means: Vec<Estimate> = (0..dim)
        .map(|i| Estimate::from_terms(batch.terminal().chunks_exact(dim).map(|r| r[i])))
        .collect();
    let mean_ref: Vec<f64> = match &law {
        Some(l) => l.mean().to_vec(),
        None => vec![f64::NAN; dim],
    };
    let mean_z = stat_rows(&mut table, "mean_x", &means, &mean_ref);
    let (cov, se) = covariance_with_se(batch.terminal(), dim)?;
    let exact = law.as_ref().map(LinearGaussianLaw::covariance);
    let cov_z = cov_rows(&mut table, "cov_x", &cov, &se, exact.as_ref());
    let theta_ref: Vec<Estimate> = theta.iter().map(|v| Estimate { value: *v, se: 0.0 }).collect();
    stat_rows(&mut table, "theta_t", &theta_ref, &vec![f64::NAN; dim]);

    let mut checks = vec![Check::report(
        "flagged_paths",
        batch.flagged().is_empty(),
        format!("{} of {} paths flagged", batch.flagged().len(), batch.len()),
    )];
    if law.is_some() {
        checks.push(Check::assert(
            "covariance_matches_exact_law",
            cov_z <= COVARIANCE_Z,
            format!("max |z| = {cov_z:.3} over covariance entries"),
        ));
        checks.push(Check::report(
            "mean_matches_exact_law",
            mean_z <= COVARIANCE_Z,
            format!("max |z| = {mean_z:.3} over mean entries"),
        ));
    }
    if let Some(nt) = batch.joint_n() {
        let d = sys.d();
        let scaled: Vec<f64> = nt
            .chunks_exact(dim)
            .flat_map(|r| (0..dim).map(move |h| r[h] / t.powf((h / d) as f64 + 0.5)))
            .collect();
        let means: Vec<Estimate> = (0..dim)
            .map(|i| Estimate::from_terms(scaled.chunks_exact(dim).map(|r| r[i])))
            .collect();
        let theta_mean_z = stat_rows(&mut table, "mean_theta", &means, &vec![0.0; dim]);
        let (c, s) = covariance_with_se(&scaled, dim)?;
        let q = build_q(n, d);
        let q_z = cov_rows(&mut table, "cov_theta", &c, &s, Some(&q));
        checks.push(Check::assert(
            "theta_covariance_is_q",
            q_z <= COVARIANCE_Z,
            format!("max |z| = {q_z:.3} over covariance entries"),
        ));
        checks.push(Check::report(
            "theta_mean_is_zero",
            theta_mean_z <= COVARIANCE_Z,
            format!("max |z| = {theta_mean_z:.3}"),
        ));
    }
    if let Some(sup) = batch.sup() {
        let means: Vec<Estimate> = (0..n)
            .map(|j| Estimate::from_terms(sup.chunks_exact(n).map(|r| r[j])))
            .collect();
        stat_rows(&mut table, "mean_sup", &means, &vec![f64::NAN; n]);
    }

    let mut extra = Vec::new();
    if ctx.run.write_samples {
        extra.push(("samples".to_owned(), sample_table(&batch)));
    }
    Ok(Report {
        table,
        extra,
        checks,
        results: json!({
            "t": t,
            "steps": ctx.run.steps,
            "record": format!("{:?}", ctx.run.record),
            "flagged": batch.flagged(),
        }),
        warnings: Vec::new(),
    })
}

/// Per-path samples: `X` columns, then `N`, then running sups when recorded.
fn sample_table(batch: &SampleBatch) -> Table {
    let (n, dim) = (batch.n(), batch.dim());
    let mut header: Vec<String> = (1..=dim).map(|h| format!("x{h}")).collect();
    if batch.joint_n().is_some() {
        header.extend((1..=dim).map(|h| format!("n{h}")));
    }
    if batch.sup().is_some() {
        header.extend((1..=n).map(|j| format!("sup{j}")));
    }
    let mut table = Table {
        header,
        rows: Vec::with_capacity(batch.len()),
    };
    for i in 0..batch.len() {
        let mut row: Vec<Cell> = batch.terminal_row(i).iter().map(|v| Cell::from(*v)).collect();
        if let Some(nt) = batch.joint_n() {
            row.extend(nt[i * dim..(i + 1) * dim].iter().map(|v| Cell::from(*v)));
        }
        if let Some(sup) = batch.sup() {
            row.extend(sup[i * n..(i + 1) * n].iter().map(|v| Cell::from(*v)));
        }
        table.push(row);
    }
    table
}

fn spans_a_decade(times: &[f64]) -> bool {
    let lo = times.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = times.iter().copied().fold(0.0, f64::max);
    hi >= 10.0 * lo * (1.0 - 1e-12)
}

fn taylor_check(ctx: &Context) -> Result<Report, AppError> {
    let sys = ctx.sys();
    let (n, d, dim) = (sys.n(), sys.d(), sys.dim());
    let times = ctx.times()?;
    let lim = LimitModel::from_system(sys)?;
    let p = ctx.run.moment_p;
    let linear = sys.meta().linear.is_some();

    let mut table = Table::new(&[
        "t",
        "block",
        "residual_l2",
        "deviation_l2",
        "relative_residual",
        "moment_norm",
    ]);
    let mut residual_l2 = vec![Vec::new(); n];
    let mut moments = vec![Vec::new(); n];
    let mut worst_relative: f64 = 0.0;
    for &t in &times {
        let batch = ctx.simulate(t, Record::JointN)?;
        let theta = ctx.theta(t)?;
        let res = residuals(&batch, &theta, lim.a())?;
        for j in 0..n {
            let r = res.block_l2(j);
            let dev = (batch
                .terminal()
                .chunks_exact(dim)
                .map(|x| (j * d..(j + 1) * d).map(|h| (x[h] - theta[h]).powi(2)).sum::<f64>())
                .sum::<f64>()
                / batch.len() as f64)
                .sqrt();
            let rel = r / dev;
            worst_relative = worst_relative.max(rel);
            let m = moment_norm(&batch, &theta, j, p)?;
            residual_l2[j].push(r);
            moments[j].push(m);
            table.push(vec![t.into(), (j + 1).into(), r.into(), dev.into(), rel.into(), m.into()]);
        }
    }

    let mut checks = Vec::new();
    let mut warnings = Vec::new();
    let mut slopes = Vec::new();
    if linear {
        checks.push(Check::assert(
            "linear_residual_vanishes",
            worst_relative <= LINEAR_RESIDUAL_TOL,
            format!("max relative residual {worst_relative:.3e}"),
        ));
    } else if times.len() >= 2 {
        let lt: Vec<f64> = times.iter().map(|t| t.ln()).collect();
        for (j, r) in residual_l2.iter().enumerate() {
            let lr: Vec<f64> = r.iter().map(|v| v.ln()).collect();
            let fit = linear_fit(&lt, &lr)?;
            let target = (j + 1) as f64;
            slopes.push(json!({"block": j + 1, "residual_slope": fit.slope, "se": fit.slope_se}));
            checks.push(Check::assert(
                &format!("residual_slope_block_{}", j + 1),
                (fit.slope - target).abs() <= RESIDUAL_SLOPE_TOL,
                format!("slope {:.4} (se {:.2e}), expected {target}", fit.slope, fit.slope_se),
            ));
        }
    } else {
        warnings.push("residual slopes need at least two times".into());
    }

    let mut moment_slopes = Vec::new();
    if times.len() >= 2 {
        let decade = spans_a_decade(&times);
        if !decade {
            warnings.push("the time grid spans less than a decade; moment slopes are reported only".into());
        }
        for (j, m) in moments.iter().enumerate() {
            let fit = moment_slope(&times, m)?;
            let target = j as f64 + 0.5;
            moment_slopes.push(json!({"block": j + 1, "moment_slope": fit.slope, "se": fit.slope_se}));
            let name = format!("moment_slope_block_{}", j + 1);
            let passed = (fit.slope - target).abs() <= MOMENT_SLOPE_TOL;
            let detail = format!("slope {:.4} (se {:.2e}), expected {target}", fit.slope, fit.slope_se);
            checks.push(if decade {
                Check::assert(&name, passed, detail)
            } else {
                Check::report(&name, passed, detail)
            });
        }
    }
    Ok(Report {
        table,
        extra: Vec::new(),
        checks,
        results: json!({
            "times": times,
            "moment_p": p,
            "linear": linear,
            "residual_slopes": slopes,
            "moment_slopes": moment_slopes,
            "max_relative_residual": worst_relative,
        }),
        warnings,
    })
}

/// Estimate of `p̂_χ(ȳ)` at one time, with the change-of-variables identity.
struct PointEstimate {
    chi: Estimate,
    scaled_heat_kernel: f64,
    identity_error: f64,
    limit: f64,
}

impl PointEstimate {
    fn rel_error(&self) -> f64 {
        (self.chi.value - self.limit).abs() / self.limit
    }

    fn rel_se(&self) -> f64 {
        self.chi.se / self.chi.value
    }

    fn insufficient(&self) -> bool {
        !(self.chi.value > 0.0) || self.rel_se() > MAX_RELATIVE_SE
    }
}

fn point_estimate(
    ctx: &Context,
    kde: &DensityEstimate,
    theta: &[f64],
    lim: &LimitModel,
    y_bar: &[f64],
) -> Result<PointEstimate, AppError> {
    let sys = ctx.sys();
    let t = kde.t();
    let scaling = ScalingMatrix::new(t, sys.n(), sys.d())?;
    let mut y = vec![0.0; sys.dim()];
    scaling.unrescale_point(theta, y_bar, &mut y);
    let chi = kde.density_chi(y_bar)?;
    let heat = kde.heat_kernel(&y)?;
    let scaled = heat.value * scaling.log_det().exp();
    Ok(PointEstimate {
        chi,
        scaled_heat_kernel: scaled,
        identity_error: (scaled - chi.value).abs() / chi.value.abs().max(f64::MIN_POSITIVE),
        limit: lim.density(y_bar)?,
    })
}

fn density(ctx: &Context) -> Result<Report, AppError> {
    let sys = ctx.sys();
    let dim = sys.dim();
    let times = ctx.times()?;
    let lim = LimitModel::from_system(sys)?;
    let y_bar = ctx.y_bar()?;
    let tol = ctx.density_tolerance();
    let rule = bandwidth(&ctx.run.bandwidth);

    let mut header = vec!["t".to_owned(), "point".to_owned()];
    header.extend((1..=dim).map(|h| format!("z{h}")));
    header.extend(["chi_density", "se", "limit", "rel_error"].map(String::from));
    let mut table = Table {
        header,
        rows: Vec::new(),
    };
    let mut checks = Vec::new();
    let mut warnings = Vec::new();
    let mut per_t = Vec::new();
    for &t in &times {
        let batch = ctx.simulate(t, Record::Terminal)?;
        let theta = ctx.theta(t)?;
        let kde = estimate_density(&batch, &theta, rule.clone())?;
        warnings.extend(kde.warnings().iter().map(|w| format!("t = {t}: {w}")));
        let pe = point_estimate(ctx, &kde, &theta, &lim, &y_bar)?;

        // Grid of points along each axis around ȳ; the sup error is taken
        // relative to the peak of the limit density.
        let mut points = vec![y_bar.clone()];
        for h in 0..dim {
            for off in [-1.0, -0.5, 0.5, 1.0] {
                let mut z = y_bar.clone();
                z[h] += off;
                points.push(z);
            }
        }
        let peak = 1.0 / lim.normalization();
        let mut sup_error: f64 = 0.0;
        for (k, z) in points.iter().enumerate() {
            let e = kde.density_chi(z)?;
            let l = lim.density(z)?;
            sup_error = sup_error.max((e.value - l).abs() / peak);
            let mut row: Vec<Cell> = vec![t.into(), k.into()];
            row.extend(z.iter().map(|v| Cell::from(*v)));
            row.extend([e.value, e.se, l, (e.value - l).abs() / l].map(Cell::from));
            table.push(row);
        }
        let integral = match ctx.run.integral_points {
            0 => None,
            points => Some(kde.integral(points, ctx.run.seed)?),
        };

        let tag = fmt_t(t);
        checks.push(Check::assert(
            &format!("change_of_variables_t={tag}"),
            pe.identity_error <= 1e-10,
            format!("relative gap {:.3e}", pe.identity_error),
        ));
        checks.push(Check::assert(
            &format!("density_limit_t={tag}"),
            pe.rel_error() <= tol,
            format!(
                "scaled estimate {:.6} (se {:.2e}) vs limit {:.6}: relative error {:.4}, tolerance {tol}",
                pe.scaled_heat_kernel,
                pe.chi.se,
                pe.limit,
                pe.rel_error()
            ),
        ));
        checks.push(Check::report(
            &format!("grid_sup_error_t={tag}"),
            sup_error <= tol,
            format!("sup |estimate - limit| / peak = {sup_error:.4}"),
        ));
        if let Some(i) = integral {
            checks.push(Check::report(
                &format!("integral_t={tag}"),
                (i.value - 1.0).abs() <= 0.01,
                format!("{:.5} (se {:.2e})", i.value, i.se),
            ));
        }
        per_t.push(json!({
            "t": t,
            "chi_density": pe.chi.value,
            "se": pe.chi.se,
            "scaled_heat_kernel": pe.scaled_heat_kernel,
            "limit": pe.limit,
            "rel_error": pe.rel_error(),
            "grid_sup_error": sup_error,
            "integral": integral.map(|i| i.value),
            "integral_se": integral.map(|i| i.se),
            "bandwidth": matrix_json(kde.bandwidth()),
        }));
    }
    Ok(Report {
        table,
        extra: Vec::new(),
        checks,
        results: json!({"y_bar": y_bar, "tolerance": tol, "rule": format!("{rule:?}"), "times": per_t}),
        warnings,
    })
}

fn converge(ctx: &Context) -> Result<Report, AppError> {
    let sys = ctx.sys();
    let times = ctx.times()?;
    let lim = LimitModel::from_system(sys)?;
    let y_bar = ctx.y_bar()?;
    let tol = ctx.density_tolerance();
    let rule = bandwidth(&ctx.run.bandwidth);

    let mut table = Table::new(&["t", "scaled_estimate", "se", "limit", "rel_error", "status"]);
    let mut checks = Vec::new();
    let mut warnings = Vec::new();
    let mut rows = Vec::new();
    for &t in &times {
        let batch = ctx.simulate(t, Record::Terminal)?;
        let theta = ctx.theta(t)?;
        let kde = estimate_density(&batch, &theta, rule.clone())?;
        warnings.extend(kde.warnings().iter().map(|w| format!("t = {t}: {w}")));
        let pe = point_estimate(ctx, &kde, &theta, &lim, &y_bar)?;
        let status = if pe.insufficient() {
            "insufficient tail mass"
        } else {
            "ok"
        };
        table.push(vec![
            t.into(),
            pe.scaled_heat_kernel.into(),
            pe.chi.se.into(),
            pe.limit.into(),
            pe.rel_error().into(),
            status.into(),
        ]);
        let name = format!("converge_t={}", fmt_t(t));
        if pe.insufficient() {
            checks.push(Check::report(
                &name,
                false,
                format!(
                    "insufficient tail mass: estimate {:.3e} with relative se {:.3}",
                    pe.chi.value,
                    pe.rel_se()
                ),
            ));
        } else {
            checks.push(Check::assert(
                &name,
                pe.rel_error() <= tol,
                format!("relative error {:.4}, tolerance {tol}", pe.rel_error()),
            ));
        }
        rows.push((t, pe));
    }
    // Error trend as t decreases.
    let mut sorted: Vec<&(f64, PointEstimate)> = rows.iter().collect();
    sorted.sort_by(|a, b| b.0.total_cmp(&a.0));
    let errors: Vec<f64> = sorted.iter().map(|(_, p)| p.rel_error()).collect();
    let decreasing = errors.windows(2).all(|w| w[1] <= w[0]);
    checks.push(Check::report(
        "error_decreases_with_t",
        decreasing,
        format!("relative errors by decreasing t: {errors:?}"),
    ));
    Ok(Report {
        table,
        extra: Vec::new(),
        checks,
        results: json!({
            "y_bar": y_bar,
            "tolerance": tol,
            "insufficient": rows.iter().filter(|(_, p)| p.insufficient()).map(|(t, _)| *t).collect::<Vec<_>>(),
            "errors_by_decreasing_t": errors,
        }),
        warnings,
    })
}

fn derivatives(ctx: &Context) -> Result<Report, AppError> {
    let sys = ctx.sys();
    let dim = sys.dim();
    let times = ctx.times()?;
    let lim = LimitModel::from_system(sys)?;
    let y_bar = ctx.y_bar()?;
    let rule = bandwidth(&ctx.run.derivative_bandwidth);
    let grad_lim = lim.gradient(&y_bar)?;
    let hess_lim = lim.hessian(&y_bar)?;

    let mut table = Table::new(&["t", "quantity", "i", "j", "estimate", "se", "limit"]);
    let mut checks = Vec::new();
    let mut warnings = Vec::new();
    let mut per_t = Vec::new();
    for &t in &times {
        let batch = ctx.simulate(t, Record::Terminal)?;
        let theta = ctx.theta(t)?;
        let kde = estimate_density(&batch, &theta, rule.clone())?;
        warnings.extend(kde.warnings().iter().map(|w| format!("t = {t}: {w}")));
        let est = kde.derivatives_chi(&y_bar)?;
        table.push(vec![
            t.into(),
            "density".into(),
            0usize.into(),
            0usize.into(),
            est.density.value.into(),
            est.density.se.into(),
            lim.density(&y_bar)?.into(),
        ]);
        let mut grad_z: f64 = 0.0;
        for (i, (g, l)) in est.gradient.iter().zip(&grad_lim).enumerate() {
            grad_z = grad_z.max(g.z_score(*l));
            table.push(vec![
                t.into(),
                "gradient".into(),
                (i + 1).into(),
                0usize.into(),
                g.value.into(),
                g.se.into(),
                (*l).into(),
            ]);
        }
        for i in 0..dim {
            for j in 0..dim {
                table.push(vec![
                    t.into(),
                    "hessian".into(),
                    (i + 1).into(),
                    (j + 1).into(),
                    est.hessian[(i, j)].into(),
                    est.hessian_se[(i, j)].into(),
                    hess_lim[(i, j)].into(),
                ]);
            }
        }
        let hess_err = (&est.hessian - &hess_lim).norm() / hess_lim.norm();
        let tag = fmt_t(t);
        checks.push(Check::assert(
            &format!("gradient_t={tag}"),
            grad_z <= COVARIANCE_Z,
            format!("max |z| = {grad_z:.3}"),
        ));
        checks.push(Check::assert(
            &format!("hessian_t={tag}"),
            hess_err <= HESSIAN_TOL,
            format!("relative Frobenius error {hess_err:.4}, tolerance {HESSIAN_TOL}"),
        ));
        per_t.push(json!({
            "t": t,
            "gradient_max_z": grad_z,
            "hessian_rel_error": hess_err,
            "bandwidth": matrix_json(kde.bandwidth()),
        }));
    }
    Ok(Report {
        table,
        extra: Vec::new(),
        checks,
        results: json!({"y_bar": y_bar, "rule": format!("{rule:?}"), "times": per_t}),
        warnings,
    })
}

fn fit_json(fit: &Result<EnvelopeFit, hypochain_core::Error>) -> Value {
    match fit {
        Ok(f) => json!({
            "amplitude": f.amplitude,
            "rate": f.rate,
            "constant": f.constant,
            "knee": f.knee,
            "calibration_levels": f.calibration_levels,
            "tail_levels": f.levels.len(),
            "passed": f.passed,
        }),
        Err(e) => json!({"error": e.to_string()}),
    }
}

const REGIMES: [Regime; 3] = [Regime::Polynomial, Regime::Gaussian, Regime::Lognormal];

fn tail_rows(table: &mut Table, source: &str, curve: &TailCurve, fits: &[Result<EnvelopeFit, hypochain_core::Error>]) {
    let probs = curve.probabilities();
    for i in 0..curve.len() {
        let a = curve.levels[i];
        let mut row: Vec<Cell> = vec![
            source.into(),
            a.into(),
            curve.counts[i].into(),
            probs[i].into(),
            curve.lower[i].into(),
            curve.upper[i].into(),
        ];
        row.extend(
            fits.iter()
                .map(|f| Cell::from(f.as_ref().map_or(f64::NAN, |f| f.envelope_at(a)))),
        );
        table.push(row);
    }
}

fn tails(ctx: &Context) -> Result<Report, AppError> {
    let sys = ctx.sys();
    let n = sys.n();
    let t = ctx.run.t;
    let batch = ctx.simulate(t, Record::SupNorm)?;
    let theta = ctx.theta(t)?;
    let count = ctx.run.tail_levels;

    let mut table = Table::new(&[
        "source",
        "level",
        "count",
        "probability",
        "lower",
        "upper",
        "polynomial",
        "gaussian",
        "lognormal",
    ]);
    let radii = chi_radii(&batch, &theta)?;
    let levels = quantile_levels(&radii, count, TAIL_P_MAX, MIN_TAIL_COUNT)?;
    let curve = TailCurve::new(&radii, &levels, BAND_Z)?;
    let fits: Vec<_> = REGIMES.iter().map(|r| fit_envelope(&curve, *r, t)).collect();
    tail_rows(&mut table, "chi", &curve, &fits);

    let mut sup_results = Vec::new();
    for j in 0..n {
        let radii = sup_radii(&batch, j)?;
        let source = format!("sup_block_{}", j + 1);
        let fitted = quantile_levels(&radii, count, TAIL_P_MAX, MIN_TAIL_COUNT)
            .and_then(|levels| TailCurve::new(&radii, &levels, BAND_Z));
        match fitted {
            Ok(c) => {
                let f: Vec<_> = REGIMES.iter().map(|r| fit_envelope(&c, *r, t)).collect();
                tail_rows(&mut table, &source, &c, &f);
                sup_results.push(json!({
                    "block": j + 1,
                    "polynomial": fit_json(&f[0]),
                    "gaussian": fit_json(&f[1]),
                    "lognormal": fit_json(&f[2]),
                }));
            }
            Err(e) => sup_results.push(json!({"block": j + 1, "error": e.to_string()})),
        }
    }

    let passes = |i: usize| fits[i].as_ref().is_ok_and(|f| f.passed);
    let detail = |i: usize| match &fits[i] {
        Ok(f) => format!("rate {:.4e}, amplitude {:.4e}, knee {:?}, passed {}", f.rate, f.amplitude, f.knee, f.passed),
        Err(e) => format!("fit failed: {e}"),
    };
    let mut checks = vec![Check::assert("polynomial_envelope_passes", passes(0), detail(0))];
    let mut results = json!({
        "t": t,
        "levels": levels,
        "polynomial": fit_json(&fits[0]),
        "gaussian": fit_json(&fits[1]),
        "lognormal": fit_json(&fits[2]),
        "sup": sup_results,
    });
    match sys.meta().regularity {
        Regularity::Lognormal => {
            checks.push(Check::assert("lognormal_envelope_passes", passes(2), detail(2)));
            checks.push(Check::assert("gaussian_envelope_fails", !passes(1), detail(1)));
        }
        Regularity::Bounded | Regularity::BoundedDiffusion => {
            checks.push(Check::assert("gaussian_envelope_passes", passes(1), detail(1)));
            checks.push(Check::report("lognormal_envelope_passes", passes(2), detail(2)));
        }
    }
    if sys.meta().linear.is_some() {
        if let Ok(f) = &fits[1] {
            let law = LinearGaussianLaw::new(sys, t)?;
            let lambda_max = law.chi_covariance().symmetric_eigenvalues().max();
            let ratio = f.rate / lambda_max;
            results["gaussian_rate_ratio"] = json!(ratio);
            // Reported only: at resolvable levels the planar tail prefactor
            // biases the fitted scale to about 1.8 times the eigenvalue.
            checks.push(Check::report(
                "gaussian_rate_matches_exact_law",
                (GAUSSIAN_RATE_BAND.0..=GAUSSIAN_RATE_BAND.1).contains(&ratio),
                format!("rate / largest eigenvalue = {ratio:.4}"),
            ));
        }
    }
    Ok(Report {
        table,
        extra: Vec::new(),
        checks,
        results,
        warnings: Vec::new(),
    })
}

fn decay(ctx: &Context) -> Result<Report, AppError> {
    let times = ctx.times()?;
    let table_data = diagonal_decay(ctx.sys(), &times)?;
    let mut table = Table::new(&["t", "log_density", "scaled"]);
    for r in &table_data.rows {
        table.push(vec![r.t.into(), r.log_density.into(), r.scaled.into()]);
    }
    let mut checks = vec![Check::report(
        "decay_regime_applicable",
        table_data.applicable(),
        match table_data.j_star {
            Some(j) => format!("first block with nonzero drift at the initial point: {j}"),
            None => "not applicable: the drift vanishes at the initial point beyond block 1".into(),
        },
    )];
    if table_data.applicable() {
        checks.push(Check::assert(
            "scaled_log_density_bounded_negative",
            table_data.bounded_negative(),
            format!("largest tabulated value {:?}", table_data.sup_scaled()),
        ));
    }
    Ok(Report {
        table,
        extra: Vec::new(),
        checks,
        results: json!({
            "j_star": table_data.j_star,
            "applicable": table_data.applicable(),
            "sup_scaled": table_data.sup_scaled(),
        }),
        warnings: Vec::new(),
    })
}

fn price(ctx: &Context) -> Result<Report, AppError> {
    let basket = ctx
        .model
        .basket
        .as_ref()
        .ok_or_else(|| AppError::Config("price needs a basket or bs_asian model".into()))?;
    let times = ctx.times()?;
    let atm = basket.atm_strike();
    let strike = ctx.run.strike.unwrap_or(atm);
    let is_atm = (strike - atm).abs() <= 1e-12 * atm.abs().max(1.0);
    let kind = match ctx.run.kind {
        KindName::Call => OptionKind::Call,
        KindName::Put => OptionKind::Put,
    };
    let other = match kind {
        OptionKind::Call => OptionKind::Put,
        OptionKind::Put => OptionKind::Call,
    };
    let lv = limit_variance(basket)?;

    let mut table = Table::new(&[
        "t",
        "mc",
        "se",
        "asymptotic",
        "ratio",
        "ratio_se",
        "other_kind",
        "other_se",
        "beta_variance",
        "beta_variance_se",
        "limit_variance",
    ]);
    let mut rows = Vec::new();
    for &t in &times {
        let batch = ctx.simulate(t, Record::Terminal)?;
        let main = price_from_batch(&batch, strike, kind, ctx.run.discount_rate)?;
        let alt = price_from_batch(&batch, strike, other, ctx.run.discount_rate)?;
        let asym = atm_asymptotic_price(basket, t)?;
        let beta = beta_samples(&batch, basket);
        let mean = beta.iter().sum::<f64>() / beta.len() as f64;
        let var = Estimate::from_terms(beta.iter().map(|b| (b - mean) * (b - mean)));
        let ratio = main.value / asym;
        table.push(
            [
                t,
                main.value,
                main.se,
                asym,
                ratio,
                main.se / asym,
                alt.value,
                alt.se,
                var.value,
                var.se,
                lv.variance,
            ]
            .map(Cell::from)
            .to_vec(),
        );
        rows.push((t, main, ratio, var));
    }

    let mut checks = vec![Check::assert(
        "limit_variance_routes_agree",
        lv.max_abs_difference() <= 1e-10,
        format!("max |block formula - A Q At| = {:.3e}", lv.max_abs_difference()),
    )];
    let mut sorted: Vec<_> = rows.iter().collect();
    sorted.sort_by(|a, b| b.0.total_cmp(&a.0));
    let gaps: Vec<f64> = sorted.iter().map(|r| (r.2 - 1.0).abs()).collect();
    if is_atm {
        let (t_min, _, ratio, _) = sorted.last().expect("at least one time");
        checks.push(Check::assert(
            "atm_ratio_at_smallest_t",
            (PRICE_RATIO_BAND.0..=PRICE_RATIO_BAND.1).contains(ratio),
            format!("t = {t_min}: ratio {ratio:.5}"),
        ));
        if gaps.len() >= 2 {
            checks.push(Check::assert(
                "ratio_approaches_one_monotonically",
                gaps.windows(2).all(|w| w[1] <= w[0]),
                format!("|ratio - 1| by decreasing t: {gaps:?}"),
            ));
        }
    } else {
        checks.push(Check::report(
            "atm_ratio_at_smallest_t",
            false,
            format!("strike {strike} is not at the money ({atm}); the asymptotic formula does not apply"),
        ));
    }
    if let Some((t, _, _, var)) = sorted.last() {
        checks.push(Check::report(
            "beta_variance_near_limit",
            (var.value - lv.variance).abs() <= 0.05 * lv.variance,
            format!("t = {t}: {:.5e} vs limit {:.5e}", var.value, lv.variance),
        ));
    }
    Ok(Report {
        table,
        extra: Vec::new(),
        checks,
        results: json!({
            "strike": strike,
            "atm_strike": atm,
            "kind": format!("{:?}", kind),
            "discount_rate": ctx.run.discount_rate,
            "limit_variance": lv.variance,
            "block_formula": matrix_json(&lv.block_formula),
            "generic": matrix_json(&lv.generic),
            "gaps_by_decreasing_t": gaps,
        }),
        warnings: Vec::new(),
    })
}
