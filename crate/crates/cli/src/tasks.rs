//! Task runners. Each writes CSV files into the output directory and returns
//! their paths.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use log::{info, warn};
use markabs_core::abstraction::{self, build_chain_averaged, density_estimate, initial_pmf, propagate_all};
use markabs_core::export::{self, Header, DEFAULT_TRA_THRESHOLD};
use markabs_core::invariance::{self, compare_bounds, InvarianceResult};
use markabs_core::oracle::{mc_invariance, AnalyticLinGauss, McEstimate};
use markabs_core::projection::{algorithm1, estimate_mfh, projection_budgets};
use markabs_core::truncation::{working_domain, working_partition};
use markabs_core::{
    DensityApprox, ErrorBudget, FiniteAbstraction, InterpOrder, InvarianceProblem, Partition, Quadrature,
};

use crate::config::{Experiment, Task};
use crate::CliError;

pub fn run(exp: &Experiment) -> Result<Vec<PathBuf>, CliError> {
    let out = &exp.config.output_dir;
    std::fs::create_dir_all(out).map_err(|e| CliError::Output(format!("cannot create {}: {e}", out.display())))?;
    let quad = Quadrature::new(exp.config.quadrature)?;
    match exp.config.task {
        Task::Density => density(exp, &quad),
        Task::InvarianceForward | Task::InvarianceBackward => invariance_task(exp, &quad),
        Task::Compare => compare(exp, &quad),
        Task::Export => export_task(exp, &quad),
    }
}

fn create(dir: &Path, name: &str) -> Result<(PathBuf, BufWriter<File>), CliError> {
    let path = dir.join(name);
    let file = File::create(&path).map_err(|e| CliError::Output(format!("cannot write {}: {e}", path.display())))?;
    Ok((path, BufWriter::new(file)))
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "none".to_string(), |x| x.to_string())
}

/// Config hash, task and every constant entering the bounds.
fn base_header(exp: &Experiment, delta: f64, certified: bool) -> Header {
    let k = &exp.kernel;
    vec![
        ("config_sha256".into(), exp.sha256.clone()),
        ("task".into(), exp.config.task.name().into()),
        ("model".into(), k.label().into()),
        ("lambda_f".into(), k.lambda_f().to_string()),
        ("lambda_b".into(), opt(k.lambda_b())),
        ("m_f".into(), k.m_f().to_string()),
        ("m_b".into(), opt(k.m_b())),
        ("lambda_0".into(), exp.init.lambda_0().to_string()),
        ("epsilon_tail".into(), k.epsilon_tail().to_string()),
        ("delta".into(), delta.to_string()),
        (
            "alpha".into(),
            if exp.alpha.is_nan() {
                "band".into()
            } else {
                exp.alpha.to_string()
            },
        ),
        ("horizon".into(), exp.config.horizon.to_string()),
        ("seed".into(), exp.config.seed.to_string()),
        ("certified".into(), certified.to_string()),
    ]
}

fn budget_header(h: &mut Header, budgets: &[ErrorBudget]) {
    for b in budgets {
        h.push((
            format!("budget_t{}", b.inputs.t),
            format!(
                "eps={} e={} total={} uncertified_extra={}",
                b.eps_t, b.e_t, b.total, b.uncertified_extra
            ),
        ));
    }
}

fn density(exp: &Experiment, quad: &Quadrature) -> Result<Vec<PathBuf>, CliError> {
    let cfg = &exp.config;
    let (k, init, n) = (&exp.kernel, &exp.init, cfg.horizon);
    let partition = Arc::new(match (&cfg.partition.domain, cfg.partition.delta) {
        (Some(d), _) => exp.partition_of(d)?,
        (None, Some(delta)) => working_partition(k, init, n, delta)?,
        (None, None) => exp.partition_of(&working_domain(k, init, n)?)?,
    });
    check_cells(exp, &partition)?;
    let delta = partition.delta();
    info!("density: {} cells, delta {delta}", partition.len());
    let mut files = Vec::new();
    let (approxs, budgets, chain) = if cfg.scheme == InterpOrder::Constant {
        let chain = build_chain_averaged(k, Arc::clone(&partition), quad)?;
        let p0 = initial_pmf(init, &partition, quad)?;
        let traj = propagate_all(&p0, &chain, n)?;
        let approxs = traj[1..]
            .iter()
            .map(|p| density_estimate(p, Arc::clone(&partition)))
            .collect::<Result<Vec<_>, _>>()?;
        (approxs, abstraction::budgets(k, init, delta, n, false)?, Some(chain))
    } else {
        let m_fh = estimate_mfh(k, &partition, &exp.scheme, cfg.mf_samples, quad)?;
        if !m_fh.1 {
            warn!("M_f^h = {} is a sampled estimate; bounds are uncertified", m_fh.0);
        }
        let approxs = algorithm1(k, init, Arc::clone(&partition), exp.scheme, n, quad)?;
        (
            approxs,
            projection_budgets(k, init, &partition, &exp.scheme, n, m_fh)?,
            None,
        )
    };
    let certified = budgets.iter().all(|b| b.certified);
    let mut header = base_header(exp, delta, certified);
    header.push(("scheme".into(), format!("{:?}", cfg.scheme)));
    header.push(("cells".into(), partition.len().to_string()));
    budget_header(&mut header, &budgets);

    let (path, mut w) = create(&cfg.output_dir, "budgets.csv")?;
    let rows: Vec<Vec<f64>> = budgets
        .iter()
        .map(|b| {
            vec![
                b.inputs.t as f64,
                b.eps_t,
                b.e_t,
                b.total,
                b.uncertified_extra,
                b.inputs.interp_error.unwrap_or(f64::NAN),
                f64::from(u8::from(b.certified)),
            ]
        })
        .collect();
    export::write_table(
        &mut w,
        &header,
        &[
            "t",
            "eps_t",
            "e_t",
            "total",
            "uncertified_extra",
            "interp_error",
            "certified",
        ],
        &rows,
    )?;
    finish(w, &path)?;
    files.push(path);

    let (path, mut w) = create(&cfg.output_dir, "density.csv")?;
    write_density(exp, &mut w, &header, &partition, &approxs, &budgets)?;
    finish(w, &path)?;
    files.push(path);

    let (path, mut w) = create(&cfg.output_dir, "coefficients.csv")?;
    export::write_coefficients(&mut w, &header, &approxs)?;
    finish(w, &path)?;
    files.push(path);

    if let Some(chain) = chain {
        files.extend(write_chain_files(exp, &header, &chain)?);
    }
    Ok(files)
}

fn write_density<W: Write>(
    exp: &Experiment,
    w: &mut W,
    header: &Header,
    partition: &Partition,
    approxs: &[DensityApprox],
    budgets: &[ErrorBudget],
) -> Result<(), CliError> {
    let analytic = exp
        .config
        .model
        .lin_gauss()
        .filter(|p| p.0 > 0.0)
        .map(|(a, b, s, lo, hi)| AnalyticLinGauss::new(a, b, s, lo, hi))
        .transpose()?;
    let d = partition.dim();
    let points: Vec<Vec<f64>> = if d == 1 {
        let dom = partition.domain();
        let (lo, hi) = (dom.lower()[0], dom.upper()[0]);
        let m = exp.config.grid_points;
        (0..m)
            .map(|i| vec![lo + (hi - lo) * i as f64 / (m - 1) as f64])
            .collect()
    } else {
        partition.cells().map(|c| c.center()).collect()
    };
    let mut columns: Vec<String> = vec!["t".into()];
    if d == 1 {
        columns.push("x".into());
    } else {
        columns.extend((0..d).map(|k| format!("x{k}")));
    }
    columns.push("psi".into());
    if analytic.is_some() {
        columns.push("analytic".into());
    }
    columns.push("bound".into());
    let mut rows = Vec::with_capacity(points.len() * approxs.len());
    for approx in approxs {
        let t = approx.t();
        let bound = budgets[t].total;
        for x in &points {
            let mut row = Vec::with_capacity(columns.len());
            row.push(t as f64);
            row.extend_from_slice(x);
            row.push(approx.eval(x));
            if let Some(m) = &analytic {
                row.push(m.density(t, x[0])?);
            }
            row.push(bound);
            rows.push(row);
        }
    }
    let cols: Vec<&str> = columns.iter().map(String::as_str).collect();
    export::write_table(w, header, &cols, &rows)?;
    Ok(())
}

fn check_cells(exp: &Experiment, partition: &Partition) -> Result<(), CliError> {
    abstraction::check_size(partition.len(), exp.config.max_cells)?;
    Ok(())
}

fn finish(mut w: BufWriter<File>, path: &Path) -> Result<(), CliError> {
    w.flush()
        .map_err(|e| CliError::Output(format!("cannot write {}: {e}", path.display())))
}

fn problem(exp: &Experiment) -> Result<(InvarianceProblem, Partition), CliError> {
    let safe = exp.config.safe_set.clone().expect("checked when loading");
    if let Some(d) = &exp.config.partition.domain {
        if d != &safe {
            return Err(CliError::Config(
                "for invariance tasks the partition domain must equal safe_set".into(),
            ));
        }
    }
    let partition = exp.partition_of(&safe)?;
    let problem = InvarianceProblem::new(safe, exp.config.horizon, exp.kernel.clone(), exp.init.clone())?;
    Ok((problem, partition))
}

fn monte_carlo(exp: &Experiment) -> Result<Option<McEstimate>, CliError> {
    let Some(trials) = exp.config.monte_carlo_trials else {
        return Ok(None);
    };
    let Some((a, b, s, lo, hi)) = exp.config.model.lin_gauss() else {
        warn!("monte_carlo_trials is only supported for the linear Gaussian model");
        return Ok(None);
    };
    let model = AnalyticLinGauss::new(a, b, s, lo, hi)?;
    let safe = exp.config.safe_set.as_ref().expect("checked when loading");
    Ok(Some(mc_invariance(
        &model,
        safe,
        exp.config.horizon,
        trials,
        exp.config.seed,
    )?))
}

fn mc_header(h: &mut Header, mc: &Option<McEstimate>) {
    if let Some(m) = mc {
        h.push(("mc_estimate".into(), m.estimate.to_string()));
        h.push(("mc_stderr".into(), m.stderr.to_string()));
        h.push(("mc_trials".into(), m.trials.to_string()));
    }
}

fn invariance_task(exp: &Experiment, quad: &Quadrature) -> Result<Vec<PathBuf>, CliError> {
    let (problem, partition) = problem(exp)?;
    check_cells(exp, &partition)?;
    let partition = Arc::new(partition);
    let result = if exp.config.task == Task::InvarianceForward {
        invariance::forward_on(&problem, partition, quad)?
    } else {
        invariance::backward_on(&problem, partition, None, quad)?
    };
    let mc = monte_carlo(exp)?;
    let mut header = base_header(exp, result.delta, result.certified);
    header.push(("cells".into(), result.cells.to_string()));
    header.push(("estimate".into(), result.estimate.to_string()));
    header.push(("bound".into(), result.bound.to_string()));
    mc_header(&mut header, &mc);
    println!(
        "{}: estimate {} ± {} (delta {}, {} cells)",
        exp.config.task.name(),
        result.estimate,
        result.bound,
        result.delta,
        result.cells
    );
    let (path, mut w) = create(&exp.config.output_dir, "invariance.csv")?;
    write_curve(&mut w, &header, &result)?;
    finish(w, &path)?;
    Ok(vec![path])
}

fn write_curve<W: Write>(w: &mut W, header: &Header, r: &InvarianceResult) -> Result<(), CliError> {
    let mut columns = vec!["horizon", "estimate", "bound", "lower", "upper"];
    if r.value_ranges.is_some() {
        columns.extend(["v_min", "v_max"]);
    }
    let n = r.curve.len() - 1;
    let rows: Vec<Vec<f64>> = (0..=n)
        .map(|k| {
            let (e, b) = (r.curve[k], r.curve_bounds[k]);
            let mut row = vec![k as f64, e, b, (e - b).max(0.0), (e + b).min(1.0)];
            if let Some(ranges) = &r.value_ranges {
                // k steps to go is time N - k
                let (lo, hi) = ranges[n - k];
                row.extend([lo, hi]);
            }
            row
        })
        .collect();
    export::write_table(w, header, &columns, &rows)?;
    Ok(())
}

fn compare(exp: &Experiment, quad: &Quadrature) -> Result<Vec<PathBuf>, CliError> {
    let (problem, partition) = problem(exp)?;
    let bounds = compare_bounds(&problem, partition.delta())?;
    let method = |m| match m {
        markabs_core::InvarianceMethod::Forward => "forward",
        markabs_core::InvarianceMethod::Backward => "backward",
    };
    println!(
        "smaller bound: {} (E_f = {}, E_b = {}, delta = {})",
        method(bounds.winner),
        bounds.forward,
        bounds.backward,
        bounds.delta
    );
    let certified = exp.kernel.m_f_certified();
    let mut header = base_header(exp, bounds.delta, certified);
    header.push(("winner".into(), method(bounds.winner).into()));
    header.push(("forward_bound".into(), bounds.forward.to_string()));
    header.push(("backward_bound".into(), bounds.backward.to_string()));
    header.push(("m_b_used".into(), bounds.m_b.to_string()));
    header.push(("cells".into(), partition.len().to_string()));
    let horizon = exp.config.horizon;
    let measure = problem.safe_set.volume();
    let bound_rows = |k: usize| {
        vec![
            k as f64,
            invariance::forward_bound(bounds.lambda_f, bounds.m_f, bounds.delta, measure, k),
            invariance::backward_bound(bounds.lambda_b, bounds.m_b, bounds.delta, measure, k),
        ]
    };
    let (columns, rows): (Vec<&str>, Vec<Vec<f64>>) = if partition.len() <= exp.config.max_cells {
        let partition = Arc::new(partition);
        let f = invariance::forward_on(&problem, Arc::clone(&partition), quad)?;
        let b = invariance::backward_on(&problem, partition, None, quad)?;
        header.push(("chains_built".into(), "true".into()));
        header.push(("forward_estimate".into(), f.estimate.to_string()));
        header.push(("backward_estimate".into(), b.estimate.to_string()));
        println!("forward estimate {} ; backward estimate {}", f.estimate, b.estimate);
        (
            vec![
                "horizon",
                "forward_bound",
                "backward_bound",
                "forward_estimate",
                "backward_estimate",
            ],
            (0..=horizon)
                .map(|k| {
                    let mut r = bound_rows(k);
                    r.extend([f.curve[k], b.curve[k]]);
                    r
                })
                .collect(),
        )
    } else {
        warn!(
            "{} cells exceed max_cells = {}; reporting bounds only",
            partition.len(),
            exp.config.max_cells
        );
        header.push(("chains_built".into(), "false".into()));
        (
            vec!["horizon", "forward_bound", "backward_bound"],
            (0..=horizon).map(bound_rows).collect(),
        )
    };
    mc_header(&mut header, &monte_carlo(exp)?);
    let (path, mut w) = create(&exp.config.output_dir, "compare.csv")?;
    export::write_table(&mut w, &header, &columns, &rows)?;
    finish(w, &path)?;
    Ok(vec![path])
}

fn export_task(exp: &Experiment, quad: &Quadrature) -> Result<Vec<PathBuf>, CliError> {
    let cfg = &exp.config;
    let domain = match (&cfg.partition.domain, &cfg.safe_set) {
        (Some(d), _) => d.clone(),
        (None, Some(s)) => s.clone(),
        (None, None) => working_domain(&exp.kernel, &exp.init, cfg.horizon)?,
    };
    let partition = Arc::new(exp.partition_of(&domain)?);
    check_cells(exp, &partition)?;
    let chain = build_chain_averaged(&exp.kernel, Arc::clone(&partition), quad)?;
    let header = base_header(exp, partition.delta(), exp.kernel.m_f_certified());
    write_chain_files(exp, &header, &chain)
}

/// `chain.csv`, `chain.tra`, `chain.lab` and the `chain.meta` sidecar.
fn write_chain_files(exp: &Experiment, header: &Header, chain: &FiniteAbstraction) -> Result<Vec<PathBuf>, CliError> {
    let dir = &exp.config.output_dir;
    let mut files = Vec::new();
    let (path, mut w) = create(dir, "chain.csv")?;
    export::write_chain_csv(&mut w, chain, header)?;
    finish(w, &path)?;
    files.push(path);
    files.extend(write_tra_files(
        dir,
        "chain",
        chain.matrix(),
        chain.size(),
        header,
        DEFAULT_TRA_THRESHOLD,
    )?);
    Ok(files)
}

/// `.tra` and `.lab` stay free of comments so model checkers can read them;
/// the metadata goes to `<stem>.meta`.
pub fn write_tra_files(
    dir: &Path,
    stem: &str,
    matrix: &[f64],
    size: usize,
    header: &[(String, String)],
    threshold: f64,
) -> Result<Vec<PathBuf>, CliError> {
    let (tra, mut w) = create(dir, &format!("{stem}.tra"))?;
    export::write_tra(&mut w, matrix, size, threshold)?;
    finish(w, &tra)?;
    let (lab, mut w) = create(dir, &format!("{stem}.lab"))?;
    export::write_lab(&mut w, size)?;
    finish(w, &lab)?;
    let (meta, mut w) = create(dir, &format!("{stem}.meta"))?;
    let mut h = header.to_vec();
    h.push(("tra_threshold".into(), threshold.to_string()));
    export::write_table(&mut w, &h, &[], &[])?;
    finish(w, &meta)?;
    Ok(vec![tra, lab, meta])
}
