use cicmed::cic::{estimate_all, validate_quantile_grid, CellModel, Estimand, EstimationOptions, Method};
use cicmed::dataio::{load_dataset, partition_cells, residualize_covariates, write_dataset, ColumnMap, Dataset, Design};
use cicmed::diagnostics::{attrition_check, balance_test, exclusion_restriction_test, pretrend_implication_test};
use cicmed::inference::{cluster_bootstrap, BootstrapConfig, ClusterMode};
use cicmed::simkit::{draw_dgp, run_monte_carlo, true_effects_oracle, Assignment, Link, SimulationDesign};
use cicmed::{Error, Result};

use crate::render::{
    BootstrapInfo, DiagnoseReport, DiagnosticRow, EffectRow, EstimateReport, QuantileRow, Report, SampleInfo, SimulateReport, TruthRow,
    SCHEMA_VERSION,
};
use crate::{AssignmentArg, BootstrapArgs, DesignArg, DiagnoseArgs, EstimateArgs, InputArgs, LinkArg, SimulateArgs};

/// Share of tied values in a cell above which a warning is emitted.
const TIE_WARNING_SHARE: f64 = 0.5;

pub const SKIPPED_NO_ALWAYS_TAKERS: &str = "skipped: no always-takers";

fn load(args: &InputArgs) -> Result<Dataset> {
    let schema = ColumnMap {
        cluster: args.cluster.clone(),
        outcome: args.outcome.clone(),
        treatment: args.treatment.clone(),
        mediator: args.mediator.clone(),
        time: args.time.clone(),
        covariates: args.covariates.clone(),
    };
    let design = match args.design {
        DesignArg::Panel => Design::Panel,
        DesignArg::CrossSection => Design::RepeatedCrossSection,
    };
    let data = load_dataset(&args.input, &schema, design)?;
    if args.covariates.is_empty() {
        Ok(data)
    } else {
        residualize_covariates(&data)
    }
}

fn sample_info(args: &InputArgs, data: &Dataset) -> SampleInfo {
    SampleInfo {
        input: args.input.display().to_string(),
        design: data.design(),
        observations: data.len(),
        clusters: data.n_clusters(),
        dropped_rows: data.dropped_rows(),
        covariates: args.covariates.clone(),
    }
}

fn bootstrap_config(args: &BootstrapArgs) -> Result<Option<BootstrapConfig>> {
    match args.bootstrap {
        0 => Ok(None),
        b => BootstrapConfig::new(b, args.seed, ClusterMode::Cluster).map(Some),
    }
}

fn parse_effects(tags: &[String]) -> Result<Vec<Estimand>> {
    if tags.iter().any(|t| t == "all") {
        return Ok(Estimand::ALL.to_vec());
    }
    let mut out = Vec::new();
    for tag in tags {
        let e = Estimand::from_tag(tag).ok_or_else(|| {
            let known: Vec<&str> = Estimand::ALL.iter().map(|e| e.tag()).collect();
            Error::InvalidConfig(format!("unknown effect `{tag}`; expected one of {}", known.join(", ")))
        })?;
        if !out.contains(&e) {
            out.push(e);
        }
    }
    Ok(out)
}

fn method_tag(method: Method) -> &'static str {
    match method {
        Method::ChangesInChanges => "cic",
        Method::MeanShift => "did",
    }
}

fn skip_reason(err: &Error, data: &Dataset) -> String {
    match err {
        Error::NoAlwaysTakers { .. } => SKIPPED_NO_ALWAYS_TAKERS.to_string(),
        Error::CellUnavailable { .. } if !data.has_always_taker_cells() => SKIPPED_NO_ALWAYS_TAKERS.to_string(),
        other => format!("skipped: {other}"),
    }
}

/// Flattened statistics of one sample: per available (method, estimand),
/// the average followed by its quantile curve.
fn statistics(data: &Dataset, wanted: &[(Method, Estimand)], opts: &EstimationOptions) -> Result<Vec<f64>> {
    let part = partition_cells(data);
    let mut out = Vec::new();
    let mut model: Option<CellModel> = None;
    for &(method, e) in wanted {
        if model.as_ref().is_none_or(|m| m.method() != method) {
            model = Some(CellModel::new(&part, method)?);
        }
        let est = model.as_ref().expect("just built").estimate(e, &opts.quantiles, opts.min_share)?;
        out.push(est.average);
        out.extend(est.quantiles.iter().map(|&(_, v)| v));
    }
    Ok(out)
}

pub fn estimate(args: &EstimateArgs) -> Result<Report> {
    validate_quantile_grid(&args.quantiles)?;
    if !(0.0..1.0).contains(&args.min_share) {
        return Err(Error::InvalidConfig("--min-share must lie in [0, 1)".into()));
    }
    let effects = parse_effects(&args.effects)?;
    let boot = bootstrap_config(&args.bootstrap)?;
    let data = load(&args.input)?;
    let part = partition_cells(&data);
    let opts = EstimationOptions {
        quantiles: args.quantiles.clone(),
        min_share: args.min_share,
    };
    let methods: Vec<Method> = if args.did {
        vec![Method::ChangesInChanges, Method::MeanShift]
    } else {
        vec![Method::ChangesInChanges]
    };

    let mut warnings = Vec::new();
    if data.dropped_rows() > 0 {
        warnings.push(format!("{} rows with missing values dropped", data.dropped_rows()));
    }
    let model = CellModel::new(&part, Method::ChangesInChanges)?;
    for cell in model.heavily_tied_cells(TIE_WARNING_SHARE) {
        let msg = format!("cell (d={}, m={}, t={}) is heavily tied", cell.d as u8, cell.m as u8, cell.t as u8);
        log::warn!("{msg}");
        warnings.push(msg);
    }

    let mut rows = Vec::new();
    let mut wanted = Vec::new();
    let mut shares = None;
    for &method in &methods {
        let set = estimate_all(&part, method, &opts)?;
        shares.get_or_insert(set.shares);
        for &e in &effects {
            let result = &set.effects.iter().find(|(x, _)| *x == e).expect("every estimand is attempted").1;
            let mut row = EffectRow {
                method: method_tag(method),
                estimand: e.tag(),
                status: "ok".to_string(),
                est: None,
                se: None,
                pval: None,
                ci_lower: None,
                ci_upper: None,
                quantiles: Vec::new(),
            };
            match result {
                Ok(est) => {
                    row.est = Some(est.average);
                    row.quantiles = est
                        .quantiles
                        .iter()
                        .map(|&(q, v)| QuantileRow {
                            q,
                            est: v,
                            se: None,
                            pval: None,
                        })
                        .collect();
                    wanted.push((method, e));
                }
                Err(err) => row.status = skip_reason(err, &data),
            }
            rows.push(row);
        }
    }

    let mut bootstrap = None;
    if let (Some(cfg), false) = (boot, wanted.is_empty()) {
        let results = cluster_bootstrap(&data, |s| statistics(s, &wanted, &opts), &cfg)?;
        let mut it = results.into_iter();
        let mut failed = 0;
        for row in rows.iter_mut().filter(|r| r.status == "ok") {
            let avg = it.next().expect("one statistic per average");
            failed = avg.failed;
            row.se = Some(avg.se);
            row.pval = Some(avg.p_value);
            row.ci_lower = Some(avg.ci_lower);
            row.ci_upper = Some(avg.ci_upper);
            for q in row.quantiles.iter_mut() {
                let r = it.next().expect("one statistic per quantile");
                q.se = Some(r.se);
                q.pval = Some(r.p_value);
            }
        }
        bootstrap = Some(BootstrapInfo {
            replications: cfg.replications,
            seed: cfg.seed,
            failed,
        });
    }

    Ok(Report::Estimate(EstimateReport {
        schema_version: SCHEMA_VERSION,
        command: "estimate",
        sample: sample_info(&args.input, &data),
        shares: shares.expect("at least one method"),
        bootstrap,
        warnings,
        results: rows,
    }))
}

pub fn simulate(args: &SimulateArgs) -> Result<Report> {
    let link = match args.link {
        LinkArg::Identity => Link::Identity,
        LinkArg::Exp => Link::Exponential,
    };
    let assignment = match args.assignment {
        AssignmentArg::Random => Assignment::Random,
        AssignmentArg::Selective => Assignment::Selective,
    };
    let design = SimulationDesign::new(link, assignment, args.n, args.reps, args.seed)?;
    let truth = true_effects_oracle(&design, args.oracle_draws)?;
    if let Some(path) = &args.dump_data {
        let data = draw_dgp(&design, 0)?;
        write_dataset(&data, std::fs::File::create(path)?)?;
    }
    let mut warnings = Vec::new();
    if design.reps == 1 {
        warnings.push("a single replication gives zero standard deviations".to_string());
    }
    let reports = run_monte_carlo(&design, &truth, &[Method::ChangesInChanges, Method::MeanShift])?;
    Ok(Report::Simulate(SimulateReport {
        schema_version: SCHEMA_VERSION,
        command: "simulate",
        design,
        p_a: truth.p_a,
        p_c: truth.p_c,
        p_n: truth.p_n,
        truth: truth
            .effects
            .iter()
            .map(|&(e, value)| TruthRow { estimand: e.tag(), value })
            .collect(),
        warnings,
        reports,
    }))
}

fn diagnostic_row(r: cicmed::diagnostics::DiagnosticReport) -> DiagnosticRow {
    DiagnosticRow {
        name: r.name,
        estimate: Some(r.estimate),
        p_value: Some(r.p_value),
        std_diff: r.std_diff,
        flagged: Some(r.flagged),
        verdict: r.verdict,
    }
}

pub fn diagnose(args: &DiagnoseArgs) -> Result<Report> {
    let boot = bootstrap_config(&args.bootstrap)?;
    let data = load(&args.input)?;
    let mut rows = vec![
        diagnostic_row(balance_test(&data, 0)?),
        diagnostic_row(balance_test(&data, 1)?),
        diagnostic_row(pretrend_implication_test(&data)?),
    ];
    rows.push(match attrition_check(&data) {
        Ok(r) => diagnostic_row(r),
        Err(Error::NotPanel) => DiagnosticRow {
            name: "attrition".to_string(),
            estimate: None,
            p_value: None,
            std_diff: None,
            flagged: None,
            verdict: "n/a".to_string(),
        },
        Err(e) => return Err(e),
    });
    if let Some(cfg) = boot {
        rows.extend(exclusion_restriction_test(&data, &cfg)?.into_iter().map(diagnostic_row));
    }
    Ok(Report::Diagnose(DiagnoseReport {
        schema_version: SCHEMA_VERSION,
        command: "diagnose",
        sample: sample_info(&args.input, &data),
        diagnostics: rows,
    }))
}
