//! Command-line front end for the series pipelines and verifiers.
//!
//! Exit codes: 0 pass, 2 config error, 3 model error, 4 assertion failure,
//! 5 numeric-stability abort.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use num_rational::BigRational;

use lindstedt_core::cluster::verify_counting;
use lindstedt_core::error::Error;
use lindstedt_core::freq::{
    check_divisor_dichotomy, check_scale_gap_and_chains, PsiShape, ScalePartition,
};
use lindstedt_core::model::{
    derive_force_table, load_model_file, ForceTable, LoadedModel, ModelView,
};
use lindstedt_core::scalar::{bigfloat, parse::parse_scalar, Bf, CScalar, QuadReal, RealScalar};
use lindstedt_core::selfenergy::{
    build_matrix, chain_product, mode_family, verify_pair_gain, verify_symmetries, E1, E2,
};
use lindstedt_core::series::{solve_up_to, verify_table_invariants};
use lindstedt_core::trees::Enumerator;
use lindstedt_core::validator::{growth_diagnostics, residual_sweep};
use lindstedt_core::{mode_ball, Mode, Sign, Variant};

#[derive(Parser)]
#[command(
    name = "lindstedt",
    about = "Perturbation series, counterterms and diagrammatic verifiers for quasi-periodic oscillator solutions",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Model definition file (JSON)
    #[arg(long)]
    model: PathBuf,
    /// Output directory for reports
    #[arg(long, default_value = "reports")]
    out: PathBuf,
    /// Scalar kernel: auto, rational, quadratic, bigfloat
    #[arg(long, default_value = "auto")]
    kernel: String,
    /// Working precision in bits for the big-float kernel
    #[arg(long, env = "LINDSTEDT_PRECISION_BITS", default_value_t = 256)]
    precision: usize,
    /// Zero-pruning knob: big-float coefficients below
    /// 2^-(precision/div) prune to zero
    #[arg(long, default_value_t = 2)]
    prune_div: usize,
    /// Worker bound for parallel sections
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Seed for randomized sweeps
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the bifurcation and range equations order by order and write
    /// the coefficient table
    Expand {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 4)]
        order: usize,
    },
    /// Print the counterterm coefficients only
    Eta {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 4)]
        order: usize,
    },
    /// Compare the tree expansion against the direct solver on every
    /// coefficient
    VerifyTrees {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 3)]
        order: usize,
    },
    /// Check the localized-value family identities on enumerated
    /// self-energy clusters
    VerifySymmetry {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 2)]
        order: usize,
        /// Base mode of the divisor class, comma separated; auto-selected
        /// when omitted
        #[arg(long)]
        base: Option<String>,
        /// Apply localisation regardless of the size cutoff
        #[arg(long, default_value_t = true)]
        force_localize: bool,
    },
    /// Check the propagator-pair collapse and, for Hamiltonian models, the
    /// localized-matrix chain cancellation
    VerifyCancellation {
        #[command(flatten)]
        common: Common,
        /// Scale window for the pair sweep
        #[arg(long, default_value_t = 4)]
        scale_lo: i32,
        #[arg(long, default_value_t = 12)]
        scale_hi: i32,
        #[arg(long, default_value_t = 1000)]
        samples: usize,
        #[arg(long)]
        base: Option<String>,
        #[arg(long, default_value_t = true)]
        force_localize: bool,
    },
    /// Scan scaled trees for cluster statistics and structural bounds
    VerifyCounting {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 3)]
        order: usize,
    },
    /// Run the small-divisor lattice scans
    Divisors {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 6)]
        radius: i64,
    },
    /// Evaluate the truncated series on a torus grid and report residual
    /// scaling (CSV)
    Residual {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 2)]
        order: usize,
        /// Amplitude values, one literal per component (semicolon separated)
        #[arg(long, value_delimiter = ';', default_value = "0.3")]
        c: Vec<String>,
        /// Epsilon values as decimal literals
        #[arg(
            long,
            value_delimiter = ';',
            default_value = "0.01;0.003;0.001;0.0003"
        )]
        eps: Vec<String>,
        #[arg(long, default_value_t = 32)]
        grid: usize,
    },
}

#[derive(Clone, Copy, PartialEq)]
enum KernelKind {
    Rational,
    Quadratic,
    BigFloat,
}

fn detect_kernel(common: &Common) -> Result<KernelKind, Error> {
    match common.kernel.as_str() {
        "rational" => Ok(KernelKind::Rational),
        "quadratic" => Ok(KernelKind::Quadratic),
        "bigfloat" => Ok(KernelKind::BigFloat),
        "auto" => {
            let text = std::fs::read_to_string(&common.model)?;
            let file: serde_json::Value = serde_json::from_str(&text)?;
            let omegas = file["omega"].as_array().cloned().unwrap_or_default();
            if omegas.iter().any(|o| o.as_str().is_some_and(|s| s.contains("sqrt"))) {
                Ok(KernelKind::Quadratic)
            } else if omegas.iter().any(|o| o.as_str().is_some_and(|s| s.contains('.'))) {
                Ok(KernelKind::BigFloat)
            } else {
                Ok(KernelKind::Rational)
            }
        }
        other => Err(Error::Parse(format!("unknown kernel `{other}`"))),
    }
}

fn exit_code_for(err: &Error) -> ExitCode {
    match err {
        Error::Parse(_) | Error::Io(_) | Error::Json(_) => ExitCode::from(2),
        Error::Model(_) | Error::DimensionMismatch(_, _) => ExitCode::from(3),
        Error::Assertion(_) => ExitCode::from(4),
        Error::ResonantMode { .. } | Error::Numeric(_) => ExitCode::from(5),
    }
}

fn main() -> ExitCode {
    // die quietly when stdout closes under us (e.g. piped into head)
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(4),
        Err(e) => {
            eprintln!("error: {e}");
            exit_code_for(&e)
        }
    }
}

fn dispatch(cli: Cli) -> Result<bool, Error> {
    macro_rules! with_kernel {
        ($common:expr, $K:ident, $body:expr) => {{
            bigfloat::set_default_precision($common.precision);
            bigfloat::set_prune_divisor($common.prune_div);
            // worker bound for the parallel sections; ignore a second call
            let _ = rayon::ThreadPoolBuilder::new()
                .num_threads($common.jobs.max(1))
                .build_global();
            std::fs::create_dir_all(&$common.out)?;
            match detect_kernel($common)? {
                KernelKind::Rational => {
                    type $K = BigRational;
                    $body
                }
                KernelKind::Quadratic => {
                    type $K = QuadReal;
                    $body
                }
                KernelKind::BigFloat => {
                    type $K = Bf;
                    $body
                }
            }
        }};
    }

    match &cli.command {
        Command::Expand { common, order } => {
            with_kernel!(common, K, run_expand::<K>(common, *order, false))
        }
        Command::Eta { common, order } => {
            with_kernel!(common, K, run_expand::<K>(common, *order, true))
        }
        Command::VerifyTrees { common, order } => {
            with_kernel!(common, K, run_verify_trees::<K>(common, *order))
        }
        Command::VerifySymmetry {
            common,
            order,
            base,
            force_localize,
        } => with_kernel!(
            common,
            K,
            run_verify_symmetry::<K>(common, *order, base.as_deref(), *force_localize)
        ),
        Command::VerifyCancellation {
            common,
            scale_lo,
            scale_hi,
            samples,
            base,
            force_localize,
        } => with_kernel!(
            common,
            K,
            run_verify_cancellation::<K>(
                common,
                *scale_lo,
                *scale_hi,
                *samples,
                base.as_deref(),
                *force_localize
            )
        ),
        Command::VerifyCounting { common, order } => {
            with_kernel!(common, K, run_verify_counting::<K>(common, *order))
        }
        Command::Divisors { common, radius } => {
            with_kernel!(common, K, run_divisors::<K>(common, *radius))
        }
        Command::Residual {
            common,
            order,
            c,
            eps,
            grid,
        } => with_kernel!(common, K, run_residual::<K>(common, *order, c, eps, *grid)),
    }
}

fn load<K: RealScalar>(common: &Common) -> Result<LoadedModel<K>, Error> {
    load_model_file::<K>(&common.model)
}

fn write_report(common: &Common, name: &str, value: &serde_json::Value) -> Result<(), Error> {
    let path = common.out.join(name);
    std::fs::write(&path, serde_json::to_string_pretty(value)?)?;
    println!("wrote {}", path.display());
    Ok(())
}

/// The solver view plus an owned force table when the model is Hamiltonian.
struct Solvable<K: RealScalar> {
    model: LoadedModel<K>,
    force: Option<ForceTable<K>>,
}

impl<K: RealScalar> Solvable<K> {
    fn new(model: LoadedModel<K>) -> Result<Self, Error> {
        let force = match &model {
            LoadedModel::Real(_) => None,
            LoadedModel::Hamiltonian(h) => Some(derive_force_table(h)?),
        };
        Ok(Solvable { model, force })
    }

    fn view(&self) -> ModelView<'_, K> {
        match (&self.model, &self.force) {
            (LoadedModel::Real(m), _) => ModelView::Real(m),
            (LoadedModel::Hamiltonian(h), Some(f)) => ModelView::Zw {
                spec: &h.spec,
                force: f,
            },
            _ => unreachable!(),
        }
    }
}

fn run_expand<K: RealScalar>(common: &Common, order: usize, eta_only: bool) -> Result<bool, Error> {
    let solvable = Solvable::new(load::<K>(common)?)?;
    let view = solvable.view();
    let table = solve_up_to(&view, order)?;
    let real_coeffs = matches!(&solvable.model, LoadedModel::Real(_));
    verify_table_invariants(&table, real_coeffs)?;

    let mut eta_entries = serde_json::Map::new();
    for ((k, j, sign), p) in &table.eta {
        let key = match table.variant {
            Variant::RealX => format!("k={k}/j={j}"),
            Variant::ComplexZw => format!("k={k}/j={j}/sigma={sign}"),
        };
        eta_entries.insert(key.clone(), p.to_canonical_string().into());
        println!("eta {key}: {}", p.to_canonical_string());
    }
    let mut value = serde_json::Map::new();
    value.insert("model".into(), solvable.model.name().into());
    value.insert("variant".into(), format!("{}", table.variant).into());
    value.insert("order".into(), order.into());
    value.insert("kernel".into(), K::KERNEL_NAME.into());
    value.insert("eta".into(), eta_entries.into());
    if !eta_only {
        let mut x_entries = serde_json::Map::new();
        for ((k, j, nu, sign), p) in &table.x {
            let key = match table.variant {
                Variant::RealX => format!("k={k}/j={j}/nu={nu}"),
                Variant::ComplexZw => format!("k={k}/j={j}/nu={nu}/sigma={sign}"),
            };
            x_entries.insert(key, p.to_canonical_string().into());
        }
        value.insert("x".into(), x_entries.into());
    }
    write_report(
        common,
        if eta_only { "eta.json" } else { "table.json" },
        &value.into(),
    )?;
    Ok(true)
}

fn run_verify_trees<K: RealScalar>(common: &Common, order: usize) -> Result<bool, Error> {
    let solvable = Solvable::new(load::<K>(common)?)?;
    let view = solvable.view();
    let d = view.spec().d;
    let table = solve_up_to(&view, order)?;
    let en = Enumerator::new(&view);
    let signs: &[Sign] = match view.variant() {
        Variant::RealX => &[Sign::Plus],
        Variant::ComplexZw => &[Sign::Plus, Sign::Minus],
    };
    let mut checked = 0u64;
    let mut mismatches = Vec::new();
    for k in 1..=order {
        for j in 1..=d {
            for &sign in signs {
                for nu in mode_ball(d, 3 * k as i64) {
                    let skip = match view.variant() {
                        Variant::RealX => {
                            nu.is_unit(j, Sign::Plus) || nu.is_unit(j, Sign::Minus)
                        }
                        Variant::ComplexZw => nu.is_unit(j, sign),
                    };
                    if skip {
                        continue;
                    }
                    let lhs = en.x_coefficient(k, j, &nu, sign)?;
                    let rhs = table.coeff(k, j, &nu, sign);
                    checked += 1;
                    if !lhs.sub(&rhs)?.is_zero() {
                        mismatches.push(format!("k={k} j={j} nu={nu} sign={sign}"));
                    }
                }
                let lhs = en.counterterm(k, j, sign)?;
                let rhs = match view.variant() {
                    Variant::RealX => table.eta_coeff(k, j, Sign::Plus),
                    Variant::ComplexZw => table.eta_coeff(k, j, sign),
                };
                checked += 1;
                if !lhs.sub(&rhs)?.is_zero() {
                    mismatches.push(format!("counterterm k={k} j={j} sign={sign}"));
                }
            }
        }
    }
    let pass = mismatches.is_empty();
    println!(
        "verify-trees: {} coefficients checked, {}",
        checked,
        if pass {
            "match: all (k,j,nu)"
        } else {
            "MISMATCH"
        }
    );
    let value = serde_json::json!({
        "model": solvable.model.name(),
        "order": order,
        "checked": checked,
        "mismatches": mismatches,
    });
    write_report(common, "verify_trees.json", &value)?;
    Ok(pass)
}

/// Base-mode selection for the divisor-class families: the longest scan
/// mode with plus minimizer at component 1, small divisor below gamma, and
/// no family member reaching the shell within the order budget.
fn auto_base<K: RealScalar>(
    view: &ModelView<K>,
    order: usize,
    requested: Option<&str>,
) -> Result<Mode, Error> {
    let spec = view.spec();
    if let Some(text) = requested {
        let parts: Vec<i64> = text
            .split(',')
            .map(|p| {
                p.trim()
                    .parse()
                    .map_err(|_| Error::Parse(format!("bad base `{text}`")))
            })
            .collect::<Result<_, _>>()?;
        if parts.len() != spec.d {
            return Err(Error::Parse(format!("base must have {} entries", spec.d)));
        }
        return Ok(Mode::from_slice(&parts));
    }
    let all: Vec<Mode> = mode_ball(spec.d, spec.scan_radius)
        .into_iter()
        .filter(|nu| !nu.is_zero() && nu.as_unit().is_none())
        .filter(|nu| spec.small_divisor(1, nu).1 == Sign::Plus)
        .collect();
    // prefer classes with genuinely small divisors; systems without any
    // (like integer frequencies at d = 1) still get an algebraically valid
    // class
    let mut candidates: Vec<Mode> = all
        .iter()
        .filter(|nu| spec.small_divisor(1, nu).0.le(&spec.gamma))
        .cloned()
        .collect();
    if candidates.is_empty() {
        candidates = all;
    }
    candidates.sort_by_key(|nu| std::cmp::Reverse(nu.norm1()));
    for cand in candidates {
        let clean = mode_family(spec, &cand).iter().all(|(jf, _sf, nuf)| {
            mode_ball(spec.d, order as i64).iter().all(|own| {
                let total = own.add(nuf);
                total.as_unit().map(|(jj, _)| jj != *jf).unwrap_or(true)
            })
        });
        if clean {
            return Ok(cand);
        }
    }
    Err(Error::Assertion(
        "no degeneracy-free divisor class found in the scan ball".into(),
    ))
}

fn run_verify_symmetry<K: RealScalar>(
    common: &Common,
    order: usize,
    base: Option<&str>,
    force_localize: bool,
) -> Result<bool, Error> {
    if !force_localize {
        println!(
            "note: without force-localize every desk-scale localized value is zero and the identities hold vacuously"
        );
    }
    let solvable = Solvable::new(load::<K>(common)?)?;
    let view = solvable.view();
    let base = auto_base(&view, order, base)?;
    println!("divisor-class base mode: {base}");
    let reports = verify_symmetries(&view, &base, order)?;
    let mut pass = true;
    for r in &reports {
        println!(
            "{}: {} instances, {} skipped, {} violations",
            r.lemma,
            r.instances,
            r.skipped,
            r.violations.len()
        );
        pass &= r.ok();
    }
    let value = serde_json::json!({
        "model": solvable.model.name(),
        "base": format!("{base}"),
        "order": order,
        "reports": reports,
    });
    write_report(common, "verify_symmetry.json", &value)?;
    Ok(pass)
}

fn run_verify_cancellation<K: RealScalar>(
    common: &Common,
    scale_lo: i32,
    scale_hi: i32,
    samples: usize,
    base: Option<&str>,
    force_localize: bool,
) -> Result<bool, Error> {
    let solvable = Solvable::new(load::<K>(common)?)?;
    let view = solvable.view();
    let spec = view.spec();
    let part = ScalePartition::new(spec.gamma.clone(), PsiShape::SmoothstepC1);
    let mut pass = true;
    let mut value = serde_json::Map::new();
    value.insert("model".into(), solvable.model.name().into());

    // propagator-pair collapse, swept per scale
    let pair = verify_pair_gain(spec, &part, 1, scale_lo, scale_hi, samples)?;
    println!(
        "propagator-pair gain: {} samples, {} violations",
        pair.instances,
        pair.violations.len()
    );
    for row in &pair.gain_rows {
        println!(
            "  scale {:2}: max |G+G'| = {:.3e}, max |G| = {:.3e}, gain = {:.3e}",
            row.scale, row.max_pair_sum, row.max_single, row.gain_ratio
        );
    }
    pass &= pair.ok();
    value.insert("pair_gain".into(), serde_json::to_value(&pair)?);

    // localized-matrix chain cancellation (complex formulation)
    if matches!(view.variant(), Variant::ComplexZw) {
        let base = auto_base(&view, 2, base)?;
        println!("matrix divisor-class base mode: {base}");
        let mut chain_checked = 0u64;
        let mut chain_failures = Vec::new();
        let window: Vec<i32> = (scale_lo..scale_lo + 8).collect();
        for &n_l in &window {
            for n_t in [0.max(n_l - 2), 0.max(n_l - 4)] {
                let m1 = build_matrix(&view, &base, 1, n_t, force_localize, &part)?;
                let m2 = build_matrix(&view, &base, 2, n_t, force_localize, &part)?;
                // sandwiched propagator scalar inside the scale window
                let delta = spec.gamma.mul(&K::from_i64(3)).scale_pow2(-2 - n_l);
                let psi = part.big_psi(&delta, n_l)?;
                if psi.is_zero() {
                    return Err(Error::Assertion("empty window sample".into()));
                }
                let g = psi.div(&delta);
                for (a, b) in [(&m1, &m1), (&m1, &m2), (&m2, &m1), (&m2, &m2)] {
                    chain_checked += 1;
                    let prod = chain_product(a, b, &g)?;
                    if prod.iter().any(|p| !p.is_zero()) {
                        chain_failures.push(format!("n_l={n_l} n_t={n_t} k=({},{})", a.k, b.k));
                    }
                }
            }
        }
        println!(
            "matrix chain cancellation: {chain_checked} products, {} failures",
            chain_failures.len()
        );
        pass &= chain_failures.is_empty();
        value.insert(
            "matrix_chain".into(),
            serde_json::json!({
                "base": format!("{base}"),
                "products_checked": chain_checked,
                "failures": chain_failures,
            }),
        );
    }

    write_report(common, "verify_cancellation.json", &value.into())?;
    Ok(pass)
}

fn run_verify_counting<K: RealScalar>(common: &Common, order: usize) -> Result<bool, Error> {
    let solvable = Solvable::new(load::<K>(common)?)?;
    let view = solvable.view();
    let part = ScalePartition::new(view.spec().gamma.clone(), PsiShape::SmoothstepC1);
    let report = verify_counting(&view, &part, order, E1, E2)?;
    println!(
        "counting: {} trees, {} scale assignments, {} self-energy clusters, {} resonant lines",
        report.trees_scanned,
        report.assignments_scanned,
        report.self_energy_found,
        report.resonant_lines_found
    );
    for (n, sup) in &report.counting_sup {
        println!("  scale >= {n}: sup N_n 2^(n/tau) / k = {sup:.3}");
    }
    let pass = report.ok();
    let value = serde_json::to_value(&report)?;
    write_report(common, "verify_counting.json", &value)?;
    Ok(pass)
}

fn run_divisors<K: RealScalar>(common: &Common, radius: i64) -> Result<bool, Error> {
    let solvable = Solvable::new(load::<K>(common)?)?;
    let spec = solvable.view().spec().clone();
    let r1 = check_divisor_dichotomy(&spec, radius);
    let (r2, r3) = check_scale_gap_and_chains(&spec, radius, 8);
    let mut pass = true;
    for r in [&r1, &r2, &r3] {
        println!(
            "{}: scanned {}, {} violations",
            r.lemma,
            r.scanned_count,
            r.violations.len()
        );
        pass &= r.ok();
    }
    let value = serde_json::json!({
        "model": solvable.model.name(),
        "radius": radius,
        "reports": [r1, r2, r3],
    });
    write_report(common, "divisors.json", &value)?;
    Ok(pass)
}

fn run_residual<K: RealScalar>(
    common: &Common,
    order: usize,
    c: &[String],
    eps: &[String],
    grid: usize,
) -> Result<bool, Error> {
    let solvable = Solvable::new(load::<K>(common)?)?;
    let view = solvable.view();
    let prec = bigfloat::default_precision();
    let d = view.spec().d;
    let c_vals: Vec<CScalar<Bf>> = if c.len() == 1 && d > 1 {
        vec![parse_scalar::<Bf>(&c[0])?; d]
    } else if c.len() == d {
        c.iter()
            .map(|s| parse_scalar::<Bf>(s))
            .collect::<Result<_, _>>()?
    } else {
        return Err(Error::Parse(format!("need {d} amplitude values")));
    };
    let eps_vals: Vec<Bf> = eps
        .iter()
        .map(|s| parse_scalar::<Bf>(s).map(|v| v.re))
        .collect::<Result<_, _>>()?;
    let table = solve_up_to(&view, order)?;
    let mut report = residual_sweep(&view, &table, &c_vals, &eps_vals, grid)?;
    report.model = solvable.model.name().to_string();
    let growth = growth_diagnostics(&table, &c_vals)?;

    // CSV per the interface: epsilon, residual, per-component residuals
    let mut csv = String::from("epsilon,residual");
    for j in 1..=d {
        csv.push_str(&format!(",component_{j}"));
    }
    csv.push('\n');
    for row in &report.rows {
        csv.push_str(&format!("{:e},{:e}", row.epsilon, row.residual));
        for v in &row.per_component {
            csv.push_str(&format!(",{v:e}"));
        }
        csv.push('\n');
    }
    let csv_path = common.out.join("residual.csv");
    std::fs::write(&csv_path, &csv)?;
    println!("wrote {}", csv_path.display());
    if let Some(slope) = report.slope {
        println!("log-log slope: {slope:.3} (expected about {})", order + 1);
    }
    let value = serde_json::json!({
        "residual": report,
        "growth": growth,
        "precision_bits": prec,
    });
    write_report(common, "residual.json", &value)?;
    Ok(true)
}
