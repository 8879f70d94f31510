use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use super::run::RunResult;
use crate::error::Result;

pub const ORDERS_FILE: &str = "orders.csv";
pub const THETA_FILE: &str = "theta.csv";
pub const CRITERION_FILE: &str = "criterion.csv";
pub const EXCITATION_FILE: &str = "excitation.csv";
pub const TRACES_FILE: &str = "traces.csv";
pub const ORACLE_FILE: &str = "oracle.csv";

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// One row per `(t, sensor)`. Fields that do not apply to the run's case are empty.
pub fn write_orders_csv<W: Write>(result: &RunResult, out: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    wtr.write_record([
        "t",
        "sensor",
        "p_hat",
        "q_hat",
        "p_hat_decoupled",
        "q_hat_decoupled",
        "m_hat",
        "search_range",
        "param_error",
        "param_error_decoupled",
        "criterion",
        "criterion_true",
        "warm_up",
    ])?;
    for r in &result.records {
        wtr.write_record([
            r.t.to_string(),
            r.sensor.to_string(),
            r.p_hat.to_string(),
            r.q_hat.to_string(),
            opt(r.decoupled.map(|d| d.0)),
            opt(r.decoupled.map(|d| d.1)),
            opt(r.m_hat),
            opt(r.search_range),
            r.param_error.to_string(),
            opt(r.decoupled_param_error),
            r.criterion.to_string(),
            opt(r.criterion_true),
            r.warm_up.to_string(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

/// Long format `t,sensor,p,q,index,value` of the estimate at the selected order.
pub fn write_theta_csv<W: Write>(result: &RunResult, out: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    wtr.write_record(["t", "sensor", "p", "q", "index", "value"])?;
    for r in &result.records {
        for (k, v) in r.theta.iter().enumerate() {
            wtr.serialize((r.t, r.sensor, r.p_hat, r.q_hat, k, v))?;
        }
    }
    wtr.flush()?;
    Ok(())
}

/// Criterion values that entered the final selection, `sensor,p,q,value`.
pub fn write_criterion_csv<W: Write>(result: &RunResult, out: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    wtr.write_record(["sensor", "p", "q", "value"])?;
    for (i, est) in result.final_estimates.iter().enumerate() {
        for &((p, q), v) in &est.criterion_values {
            wtr.serialize((i, p, q, v))?;
        }
    }
    wtr.flush()?;
    Ok(())
}

/// Write every report of a run into `dir` and return the paths.
pub fn write_run(result: &RunResult, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let paths: Vec<PathBuf> = [ORDERS_FILE, THETA_FILE, CRITERION_FILE, EXCITATION_FILE].iter().map(|f| dir.join(f)).collect();
    write_orders_csv(result, create(&paths[0])?)?;
    write_theta_csv(result, create(&paths[1])?)?;
    write_criterion_csv(result, create(&paths[2])?)?;
    result.excitation.write_csv(create(&paths[3])?)?;
    Ok(paths)
}

pub(crate) fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}
