use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use snoopband::bands::{
    band_with_critval, linear_grid, resolve_critval, sensitivity_ratio, snooping_adjusted_ci, CritVal, CritValCurve,
    CritValSource, EstimateCurve, Sensitivity,
};
use snoopband::critval::{emit_table, ev_approx_critval, Sides, TableColumn, TableOptions, TABLE1_RATIOS};
use snoopband::kernels::{equivalent_kernel, KernelSpec};
use snoopband::locpoly::{rd_fuzzy, rd_grid, rd_sharp, RDData, Variance, VarianceMethod};
use snoopband::mc::{run_coverage, Baseline, DesignSpec, MCConfig};
use snoopband::treatment::{
    ate_band_from_summaries, ate_trim_estimate, late_band, trim_that, validate_ate, AteSample, LateData, LateSample,
};

use crate::cache::CacheKey;
use crate::csvio::{read_csv, Schema, Table};
use crate::{
    AdjustArgs, AteTrimArgs, BandArgs, CliError, Command, Context, CritvalArgs, KernelArgs, LateArgs, McArgs, Preset,
    RdArgs, SimArgs, TablesArgs,
};

const DEFAULT_MANIFEST: &str = "snoopband.manifest";

/// Runs one command and returns the default manifest path for its output.
pub(crate) fn dispatch(cmd: &Command, ctx: &mut Context) -> Result<PathBuf, CliError> {
    match cmd {
        Command::Critval(a) => critval(a, ctx),
        Command::Tables(a) => tables(a, ctx),
        Command::Rd(a) => rd(a, ctx),
        Command::Band(a) => band(a, ctx),
        Command::Adjust(a) => adjust(a, ctx),
        Command::Late(a) => late(a, ctx),
        Command::AteTrim(a) => ate_trim(a, ctx),
        Command::Mc(a) => mc(a, ctx),
    }
}

fn load_kernel(a: &KernelArgs) -> Result<KernelSpec, CliError> {
    match &a.kernel_file {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Validation(format!("--kernel-file {}: {e}", path.display())))?;
            KernelSpec::parse_config(&text)
                .map_err(|e| CliError::Validation(format!("--kernel-file {}: {e}", path.display())))
        }
        None => builtin_kernel(&a.kernel),
    }
}

fn builtin_kernel(name: &str) -> Result<KernelSpec, CliError> {
    KernelSpec::builtin(name).map_err(|e| CliError::Validation(format!("--kernel: {e}")))
}

/// Writes `text` to `out` or standard output and returns the manifest path.
fn emit(out: &Option<PathBuf>, text: &str, ctx: &mut Context) -> Result<PathBuf, CliError> {
    match out {
        Some(path) => {
            std::fs::write(path, text)?;
            ctx.manifest.set("output", path.display());
            Ok(sidecar(path))
        }
        None => {
            print!("{text}");
            ctx.manifest.set("output", "stdout");
            Ok(PathBuf::from(DEFAULT_MANIFEST))
        }
    }
}

fn sidecar(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".manifest");
    PathBuf::from(s)
}

/// Simulated critical value, read from or appended to the ledger.
fn cached_critval(
    ctx: &mut Context,
    kstar: &KernelSpec,
    order: usize,
    ratio: f64,
    alpha: f64,
    sides: Sides,
    sim: &SimArgs,
) -> Result<CritVal, CliError> {
    let compute = || {
        resolve_critval(
            kstar,
            order,
            ratio,
            alpha,
            sides,
            CritValSource::Simulate { n_reps: sim.reps, grid_per_log: sim.grid_per_log, seed: sim.seed },
        )
        .map_err(CliError::from)
    };
    match &mut ctx.ledger {
        Some(ledger) => {
            let key = CacheKey::new(kstar, order, sides, alpha, ratio, sim.reps, sim.grid_per_log, sim.seed);
            ledger.get_or_insert_with(key, compute)
        }
        None => compute(),
    }
}

fn check_range(lo: f64, hi: f64) -> Result<(), CliError> {
    if hi < lo {
        return Err(CliError::Validation(format!("--hmax ({hi}) must be at least --hmin ({lo})")));
    }
    Ok(())
}

fn check_grid(lo: f64, hi: f64, n: usize) -> Result<(), CliError> {
    check_range(lo, hi)?;
    if hi > lo && n < 2 {
        return Err(CliError::Validation("--grid must be at least 2 when --hmin < --hmax".into()));
    }
    Ok(())
}

fn critval(a: &CritvalArgs, ctx: &mut Context) -> Result<PathBuf, CliError> {
    let kstar = load_kernel(&a.kernel)?;
    let (value, mc_se) = if a.ev_approx {
        eprintln!("note: extreme-value critical values are approximate and not recommended for use");
        let k = equivalent_kernel(&kstar, a.order)?.result;
        (ev_approx_critval(&k, a.ratio, a.alpha, a.sides)?, String::new())
    } else {
        let c = cached_critval(ctx, &kstar, a.order, a.ratio, a.alpha, a.sides, &a.sim)?;
        (c.value, format!("{:.6}", c.mc_se))
    };
    let text = format!(
        "ratio,kernel,order,sides,alpha,critval,mc_se\n{},{},{},{},{},{:.6},{}\n",
        a.ratio,
        kstar.name(),
        a.order,
        a.sides,
        a.alpha,
        value,
        mc_se
    );
    emit(&a.out, &text, ctx)
}

fn preset_layout(p: Preset) -> (Vec<TableColumn>, Vec<f64>, &'static str) {
    let kernels = [KernelSpec::uniform(), KernelSpec::triangular(), KernelSpec::epanechnikov()];
    let cols = |sides: &[Sides], orders: &[usize]| {
        let mut v = Vec::new();
        for &s in sides {
            for &r in orders {
                for k in &kernels {
                    v.push(TableColumn { base: k.clone(), order: r, sides: s });
                }
            }
        }
        v
    };
    let levels = vec![0.1, 0.05, 0.01];
    match p {
        Preset::Table1 => (cols(&[Sides::One, Sides::Two], &[0, 1]), vec![0.05], "table1"),
        Preset::S1 => (cols(&[Sides::One], &[0]), levels, "s1"),
        Preset::S2 => (cols(&[Sides::Two], &[0]), levels, "s2"),
        Preset::S3 => (cols(&[Sides::One], &[1]), levels, "s3"),
        Preset::S4 => (cols(&[Sides::Two], &[1]), levels, "s4"),
        Preset::S5 => (cols(&[Sides::One], &[2]), levels, "s5"),
        Preset::S6 => (cols(&[Sides::Two], &[2]), levels, "s6"),
    }
}

fn tables(a: &TablesArgs, ctx: &mut Context) -> Result<PathBuf, CliError> {
    let (columns, alphas, name) = preset_layout(a.preset);
    let opts =
        TableOptions { n_reps: a.reps, grid_per_log: a.grid_per_log, seed: a.seed, richardson: !a.no_richardson };
    let table = emit_table(&columns, &TABLE1_RATIOS, &alphas, opts)?;
    std::fs::create_dir_all(&a.out)?;
    let csv_path = a.out.join(format!("{name}.csv"));
    let txt_path = a.out.join(format!("{name}.txt"));
    std::fs::write(&csv_path, table.to_csv())?;
    let mut text = table.to_text();
    if !table.richardson.is_empty() {
        text.push_str("\nGrid check (density doubled at the largest ratio)\n");
        let mut failed = 0;
        for r in &table.richardson {
            let verdict = if r.passes() { "ok" } else { "CHANGED" };
            failed += usize::from(!r.passes());
            let _ = writeln!(
                text,
                "{:<24} alpha={:<5} ratio={:<6} base={:.4} doubled={:.4} change={:.4} {verdict}",
                r.column,
                r.alpha,
                r.ratio,
                r.base,
                r.doubled,
                r.change()
            );
        }
        ctx.manifest.set("grid_check_failures", failed);
        if failed > 0 {
            eprintln!("warning: {failed} critical values moved by 0.01 or more when the grid density was doubled");
        }
    }
    std::fs::write(&txt_path, &text)?;
    print!("{text}");
    ctx.manifest.set("output", csv_path.display());
    Ok(a.out.join(format!("{name}.manifest")))
}

fn read_rd(path: &Path) -> Result<(RDData, bool), CliError> {
    let t = read_csv(path, &[Schema::Sharp, Schema::Fuzzy])?;
    eprintln!("read {} rows from {}", t.len(), path.display());
    let fuzzy = t.schema == Schema::Fuzzy;
    let d = fuzzy.then(|| t.column("d"));
    Ok((RDData::new(t.column("x"), t.column("y"), d)?, fuzzy))
}

fn sample_variance(m: VarianceMethod) -> Variance<'static> {
    match m {
        VarianceMethod::Ehw => Variance::Ehw,
        VarianceMethod::Nn => Variance::Nn,
        VarianceMethod::Plugin => Variance::Plugin,
        VarianceMethod::Exact => unreachable!("rejected while parsing"),
    }
}

fn rd(a: &RdArgs, ctx: &mut Context) -> Result<PathBuf, CliError> {
    let kstar = load_kernel(&a.kernel)?;
    let (data, fuzzy) = read_rd(&a.data)?;
    let var = sample_variance(a.var);
    let e =
        if fuzzy { rd_fuzzy(&data, a.h, a.order, &kstar, var)? } else { rd_sharp(&data, a.h, a.order, &kstar, var)? };
    let z = Sides::Two.normal_quantile(a.alpha);
    let text = format!(
        "h,theta,se,lo_pw,hi_pw,n_eff_left,n_eff_right\n{},{},{},{},{},{},{}\n",
        e.h,
        e.theta_hat,
        e.se,
        e.theta_hat - z * e.se,
        e.theta_hat + z * e.se,
        e.n_eff_left,
        e.n_eff_right
    );
    emit(&a.out, &text, ctx)
}

fn band(a: &BandArgs, ctx: &mut Context) -> Result<PathBuf, CliError> {
    check_grid(a.hmin, a.hmax, a.grid)?;
    let kstar = load_kernel(&a.kernel)?;
    let (data, fuzzy) = read_rd(&a.data)?;
    let grid = linear_grid(a.hmin, a.hmax, a.grid)?;
    let est = rd_grid(&data, &grid, a.order, &kstar, sample_variance(a.var), fuzzy)?;
    let curve =
        EstimateCurve::from_estimates(&est, kstar.clone(), a.order, if fuzzy { "rd-fuzzy" } else { "rd-sharp" })?;
    let c = cached_critval(ctx, &kstar, a.order, curve.ratio(), a.alpha, a.sides, &a.sim)?;
    eprintln!("adjusted critical value {:.4} (mc_se {:.4}) at ratio {}", c.value, c.mc_se, curve.ratio());
    ctx.manifest.set("critval", c.value);
    let b = band_with_critval(curve, a.alpha, a.sides, c);
    emit(&a.out, &b.to_csv(), ctx)
}

fn adjust(a: &AdjustArgs, ctx: &mut Context) -> Result<PathBuf, CliError> {
    let kstar = load_kernel(&a.kernel)?;
    let z = a.sides.normal_quantile(a.alpha);
    let se = match (a.se, a.pw_lo, a.pw_hi) {
        (Some(se), _, _) => se,
        (None, Some(lo), Some(hi)) => {
            if a.sides != Sides::Two {
                return Err(CliError::Validation("--pw-lo/--pw-hi need --sides two".into()));
            }
            if !(hi > lo) {
                return Err(CliError::Validation("--pw-hi must exceed --pw-lo".into()));
            }
            (hi - lo) / (2.0 * z)
        }
        _ => return Err(CliError::Validation("give --se or both --pw-lo and --pw-hi".into())),
    };
    let c = cached_critval(ctx, &kstar, a.order, a.ratio, a.alpha, a.sides, &a.sim)?;
    let ci =
        snooping_adjusted_ci(a.theta, se, a.ratio, &kstar, a.order, a.alpha, a.sides, CritValSource::Fixed(c.value))?;
    let pw_hi = match a.sides {
        Sides::Two => a.theta + z * se,
        Sides::One => f64::INFINITY,
    };
    let mut header = String::from("theta,se,ratio,critval,mc_se,lo_pw,hi_pw,lo,hi");
    let mut row = format!(
        "{},{:.6},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
        a.theta,
        se,
        a.ratio,
        c.value,
        c.mc_se,
        a.theta - z * se,
        pw_hi,
        ci.lo,
        ci.hi
    );
    if let Some(x) = a.exclude {
        let k = equivalent_kernel(&kstar, a.order)?.result;
        let curve = CritValCurve::simulate(&k, a.alpha, a.sides, a.sim.reps, a.sim.grid_per_log, a.sim.seed)?;
        let cell = match sensitivity_ratio(a.theta, se, x, &curve) {
            Ok(Sensitivity::Ratio(t)) => format!("{t:.4}"),
            Ok(Sensitivity::UnboundedAtCap(cap)) => format!(">={cap}"),
            Err(snoopband::bands::BandError::NotExcludedPointwise { .. }) => "not_excluded".to_string(),
            Err(e) => return Err(e.into()),
        };
        header.push_str(",excluded,max_ratio");
        let _ = write!(row, ",{x},{cell}");
    }
    emit(&a.out, &format!("{header}\n{row}\n"), ctx)
}

fn late(a: &LateArgs, ctx: &mut Context) -> Result<PathBuf, CliError> {
    check_grid(a.hmin, a.hmax, a.grid)?;
    let t = read_csv(&a.data, &[Schema::Late])?;
    eprintln!("read {} rows from {}", t.len(), a.data.display());
    let rows = t.rows.iter().map(|r| LateSample { z: r[0], d: r[1], y: r[2] }).collect();
    let data = LateData::new(rows, a.zmin.zip(a.zmax))?;
    let grid = linear_grid(a.hmin, a.hmax, a.grid)?;
    let ratio = a.hmax / a.hmin;
    let c = cached_critval(ctx, &KernelSpec::uniform(), 0, ratio, a.alpha, a.sides, &a.sim)?;
    let (_, b) = late_band(&data, &grid, a.alpha, a.sides, CritValSource::Fixed(c.value))?;
    ctx.manifest.set("critval", c.value);
    let text = format!("# t_hat={ratio},critval={},mc_se={}\n{}", c.value, c.mc_se, b.to_csv());
    emit(&a.out, &text, ctx)
}

fn ate_samples(t: &Table) -> Vec<AteSample> {
    t.rows.iter().map(|r| AteSample { y: r[0], d: r[1], e: r[2], mu0: r[3], mu1: r[4] }).collect()
}

fn ate_trim(a: &AteTrimArgs, ctx: &mut Context) -> Result<PathBuf, CliError> {
    check_grid(a.hmin, a.hmax, a.grid)?;
    let t = read_csv(&a.data, &[Schema::Ate])?;
    eprintln!("read {} rows from {}", t.len(), a.data.display());
    let data = ate_samples(&t);
    validate_ate(&data)?;
    let levels: Vec<f64> = if a.hmax == a.hmin {
        vec![a.hmin]
    } else {
        let step = (a.hmax - a.hmin) / (a.grid - 1) as f64;
        let mut g: Vec<f64> = (0..a.grid).map(|i| a.hmin + step * i as f64).collect();
        g[a.grid - 1] = a.hmax;
        g
    };
    let estimates = levels.par_iter().map(|&h| ate_trim_estimate(&data, h)).collect::<Result<Vec<_>, _>>()?;
    let (first, last) = (estimates[0], *estimates.last().unwrap());
    let t_hat = trim_that(first.se, first.n_trim as f64, last.se, last.n_trim as f64)?;
    let c = cached_critval(ctx, &KernelSpec::uniform(), 0, t_hat.max(1.0), a.alpha, Sides::Two, &a.sim)?;
    let b = ate_band_from_summaries(estimates, a.alpha, CritValSource::Fixed(c.value))?;
    ctx.manifest.set("t_hat", t_hat);
    ctx.manifest.set("critval", c.value);
    let text = format!("# t_hat={t_hat},critval={},mc_se={}\n{}", c.value, c.mc_se, b.band.to_csv());
    emit(&a.out, &text, ctx)
}

fn mc(a: &McArgs, ctx: &mut Context) -> Result<PathBuf, CliError> {
    let design = DesignSpec::new(a.design)?;
    let baseline = match a.baseline.as_str() {
        "pilot" => Baseline::Pilot,
        "ik" => Baseline::Ik,
        s => match s.parse::<f64>() {
            Ok(h) if h > 0.0 && h.is_finite() => Baseline::Fixed(h),
            _ => {
                return Err(CliError::Validation(format!(
                    "--baseline must be `pilot`, `ik` or a positive bandwidth, got `{s}`"
                )))
            }
        },
    };
    let kernels = a.kernel.iter().map(|k| builtin_kernel(k)).collect::<Result<Vec<_>, _>>()?;
    let mut cfg = MCConfig::new(a.seed);
    cfg.reps = a.reps;
    cfg.n = a.n;
    cfg.h_grid_points = a.h_grid;
    cfg.range_rule = a.range;
    cfg.baseline = baseline;
    cfg.kernels = kernels;
    cfg.orders = a.order.clone();
    cfg.variances = a.var.clone();
    cfg.target = a.target;
    cfg.alpha = a.alpha;
    cfg.critval_reps = a.critval_reps;
    cfg.critval_grid_per_log = a.grid_per_log;
    let table = run_coverage(&design, &cfg)?;
    emit(&a.out, &table.to_csv(), ctx)
}
