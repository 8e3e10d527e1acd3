//! The four subcommands. Each returns a report table; files go under the
//! output directory.

use std::path::{Path, PathBuf};

use qobs::design;
use qobs::numerics::{induced_max_norm, vec_max_norm, Matrix};
use qobs::schedule::{
    self, certify_full, certify_general, deadbeat_constants, min_levels_deadbeat, BoundLaw, BoundSchedule,
    Levels,
};
use qobs::simulator::{intersample_trajectory, simulate as run_simulation, SimConfig, SimOutcome};
use serde_json::{json, Value};

use crate::config::{Experiment, ExperimentConfig, Protocol};
use crate::plot::{self, Panel, Series};
use crate::{CliError, Table};

fn write_file(dir: &Path, name: &str, contents: &str) -> Result<PathBuf, CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let path = dir.join(name);
    std::fs::write(&path, contents).map_err(|e| CliError::io(&path, e))?;
    Ok(path)
}

fn matrix_json(m: &Matrix) -> Value {
    let rows: Vec<Vec<f64>> = (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect();
    json!(rows)
}

/// A certified bound schedule together with its report.
#[derive(Debug, Clone)]
pub struct Certified {
    pub schedule: BoundSchedule,
    pub report: Table,
}

/// Computes certificates and the bound schedule for the configured
/// protocol, resolving `auto` levels to the smallest contractive ones.
pub fn certify_experiment(cfg: &ExperimentConfig, exp: &Experiment) -> Result<Certified, CliError> {
    let (dp, gains) = (&exp.dp, &exp.gains);
    let c_norm = induced_max_norm(&dp.c);
    let fixed = cfg.levels.fixed(cfg.protocol)?;
    let mut t = Table::new(&["quantity", "value"]);
    t.kv("protocol", serde_json::to_value(cfg.protocol).expect("enum serializes"));
    t.kv("observer_radius", gains.observer_radius()?);
    t.kv("closed_loop_radius", gains.closed_loop_radius()?);

    let (law, levels) = match cfg.protocol {
        Protocol::OutputOnlyGeneral => {
            let (certs, min_n) = certify_general(dp, gains, cfg.rho)?;
            t.kv("rho", certs.gain.rho);
            t.kv("M0", certs.output.m);
            t.kv("M0_l_star", certs.output.l_star);
            t.kv("M", certs.gain.m);
            t.kv("M_l_star", certs.gain.l_star);
            t.kv("min_N", min_n);
            let levels = fixed.unwrap_or(Levels::output_only(min_n));
            (BoundLaw::General(certs.constants()), levels)
        }
        Protocol::OutputOnlyDeadbeat => {
            let consts = deadbeat_constants(dp, &gains.l)?;
            let min_n = min_levels_deadbeat(&consts)?;
            t.kv("eta", consts.eta());
            t.kv("gain_norms", json!(consts.gain_norms));
            t.kv("min_N", min_n);
            let levels = fixed.unwrap_or(Levels::output_only(min_n));
            (BoundLaw::Deadbeat(consts), levels)
        }
        Protocol::Full => {
            let fc = certify_full(dp, gains, cfg.rho, fixed)?;
            let c = fc.certificates.constants();
            t.kv("rho", c.rho);
            t.kv("rho_bar", c.rho_bar);
            for (name, cert) in ["M0", "M1", "M2", "M3", "M4"].iter().zip(fc.certificates.all()) {
                t.kv(name, cert.m);
                t.kv(&format!("{name}_l_star"), cert.l_star);
            }
            (BoundLaw::Full(c), fc.levels)
        }
    };
    t.kv("levels_auto", fixed.is_none());
    t.kv("N", levels.n);
    if cfg.protocol == Protocol::Full {
        t.kv("N1", levels.n1);
        t.kv("N2", levels.n2);
    }
    let schedule = BoundSchedule::build(law, levels, c_norm, cfg.e_st, cfg.k_max)?;
    t.kv("F", matrix_json(&schedule.companion));
    t.kv("r(F)", schedule.radius);
    t.kv("contractive", schedule.contractive);
    Ok(Certified { schedule, report: t })
}

/// `certify`: the certificates, `F` and `r(F)`, also written to
/// `certify.csv`.
pub fn certify(cfg: &ExperimentConfig, base: &Path, out: &Path) -> Result<Table, CliError> {
    let exp = cfg.build(base)?;
    let certified = certify_experiment(cfg, &exp)?;
    write_file(out, "certify.csv", &certified.report.to_csv())?;
    Ok(certified.report)
}

/// `min-levels`: the four data-rate conditions side by side.
pub fn min_levels(cfg: &ExperimentConfig, base: &Path, out: &Path) -> Result<Table, CliError> {
    let exp = cfg.build(base)?;
    let dp = &exp.dp;
    let (n, p) = (dp.n() as u32, dp.p() as u32);
    let size = |levels: u64, exp: u32| (levels as u128).checked_pow(exp).map_or(json!(null), |s| json!(s.to_string()));
    let mut t = Table::new(&["method", "condition", "N", "exponent", "data_size"]);

    let (_, general_n) = certify_general(dp, &exp.gains, cfg.rho)?;
    t.push(vec![
        "configured_observer".into(),
        "M/(1-rho) < N".into(),
        json!(general_n),
        json!(p),
        size(general_n, p),
    ]);

    let l = design::deadbeat_observer_gain(dp)?;
    let deadbeat_n = min_levels_deadbeat(&deadbeat_constants(dp, &l)?)?;
    t.push(vec!["deadbeat".into(), "r(F) < 1".into(), json!(deadbeat_n), json!(p), size(deadbeat_n, p)]);

    let pinv = schedule::baseline_pseudo_inverse_min_n(dp)?;
    t.push(vec![
        "pseudo_inverse".into(),
        "|C A_d Cbf^+| < N".into(),
        json!(pinv.n),
        json!(pinv.exponent),
        json!(pinv.data_size.to_string()),
    ]);

    let state = schedule::baseline_state_encoding_min_n(dp);
    t.push(vec![
        "state_encoding".into(),
        "|A_d| < N".into(),
        json!(state.n),
        json!(n),
        json!(state.data_size.to_string()),
    ]);
    write_file(out, "min_levels.csv", &t.to_csv())?;
    Ok(t)
}

fn response_plot(exp: &Experiment, outcome: &SimOutcome, substeps: usize) -> Result<String, CliError> {
    let dense = intersample_trajectory(&exp.cp, outcome, substeps)?;
    let states = (0..exp.cp.n())
        .map(|i| Series {
            label: exp.cp.state_names[i].clone(),
            points: dense.iter().map(|(t, x)| (*t, x[i])).collect(),
        })
        .collect();
    let tr = &outcome.trace;
    let mut bounds = vec![
        Series {
            label: "E".into(),
            points: tr.iter().map(|r| (r.t, r.bounds.e)).collect(),
        },
        Series {
            label: "|y - center|".into(),
            points: tr.iter().map(|r| (r.t, vec_max_norm(&(&r.y - &r.q1_yhat)))).collect(),
        },
    ];
    if tr.iter().any(|r| r.bounds.e1 > 0.0) {
        bounds.push(Series {
            label: "E1".into(),
            points: tr.iter().map(|r| (r.t, r.bounds.e1)).collect(),
        });
        bounds.push(Series {
            label: "E2".into(),
            points: tr.iter().map(|r| (r.t, r.bounds.e2)).collect(),
        });
    }
    Ok(plot::render(&[
        Panel {
            title: "State".into(),
            series: states,
            log_y: false,
        },
        Panel {
            title: "Bounds (log scale)".into(),
            series: bounds,
            log_y: true,
        },
    ]))
}

/// Result of one `simulate` run: the summary table and the outcome.
#[derive(Debug, Clone)]
pub struct SimulationRun {
    pub summary: Table,
    pub outcome: SimOutcome,
}

/// `simulate`: writes the run config, the trace, the schedule and the
/// plot. Overflow is returned as an error after the files are written.
pub fn simulate(cfg: &ExperimentConfig, base: &Path, out: &Path) -> Result<SimulationRun, CliError> {
    write_file(out, "run.toml", &cfg.to_toml())?;
    let exp = cfg.build(base)?;
    let certified = certify_experiment(cfg, &exp)?;
    let x0 = qobs::numerics::Vector::from_column_slice(&cfg.x0);
    let sim = SimConfig::new_unchecked_bound(exp.dp.clone(), exp.gains.clone(), certified.schedule.clone(), x0, cfg.k_max)?;
    if !sim.initial_bound_holds() {
        eprintln!("qobs: warning: |x0| exceeds e_st = {}; expect an overflow", cfg.e_st);
    }
    let outcome = run_simulation(&sim)?;

    write_file(out, &cfg.output.trace, &outcome.to_csv())?;
    write_file(out, &cfg.output.schedule, &certified.schedule.to_csv())?;
    write_file(out, &cfg.output.plot, &response_plot(&exp, &outcome, cfg.substeps)?)?;

    let last = outcome.final_record();
    let mut t = Table::new(&["quantity", "value"]);
    t.kv("steps", last.k);
    t.kv("overflow", outcome.overflow.is_some());
    t.kv("synchronized", outcome.synchronized);
    t.kv("contractive", certified.schedule.contractive);
    t.kv("r(F)", certified.schedule.radius);
    t.kv("final_state_norm", vec_max_norm(&last.x));
    t.kv("final_E", last.bounds.e);
    outcome.check()?;
    Ok(SimulationRun { summary: t, outcome })
}

/// `batch`: runs `simulate` for every config in parallel, each into its
/// own subdirectory named after the config file.
pub fn batch(configs: &[PathBuf], out: &Path) -> (Table, i32) {
    let results: Vec<(String, Result<SimulationRun, CliError>)> = std::thread::scope(|scope| {
        let handles: Vec<_> = configs
            .iter()
            .map(|path| {
                scope.spawn(move || {
                    let stem = path
                        .file_stem()
                        .map(|s| s.to_string_lossy().into_owned())
                        .unwrap_or_else(|| "run".into());
                    let base = path.parent().unwrap_or(Path::new("."));
                    let result = ExperimentConfig::load(path).and_then(|cfg| simulate(&cfg, base, &out.join(&stem)));
                    (stem, result)
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("batch worker panicked")).collect()
    });

    let mut t = Table::new(&["config", "exit_code", "message"]);
    let mut worst = 0;
    for (stem, result) in results {
        let (code, msg) = match result {
            Ok(run) => (0, format!("ok, final |x| = {}", run.summary.get("final_state_norm").cloned().unwrap_or_default())),
            Err(e) => (e.exit_code(), e.to_string()),
        };
        worst = worst.max(code);
        t.push(vec![stem.into(), code.into(), msg.into()]);
    }
    (t, worst)
}
