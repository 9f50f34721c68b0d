//! CSV and table emission. CSV output uses dot decimals and fixed orderings,
//! so identical runs produce byte-identical files.

use porofem::error::{Error, Result};
use porofem::verify::{MonitorLog, RateTable};
use std::io::Write as _;
use std::path::Path;

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> Error + '_ {
    move |e| Error::Io { path: path.display().to_string(), message: e.to_string() }
}

/// Write through a temporary file in the same directory, then rename, so a
/// failing run leaves no partial file behind.
pub fn write_atomically(path: &Path, content: &str) -> Result<()> {
    let err = io_err(path);
    let tmp = path.with_extension("tmp");
    {
        let mut f = std::fs::File::create(&tmp)
            .map_err(|e| Error::Io { path: tmp.display().to_string(), message: e.to_string() })?;
        f.write_all(content.as_bytes())
            .map_err(|e| Error::Io { path: tmp.display().to_string(), message: e.to_string() })?;
        f.flush()
            .map_err(|e| Error::Io { path: tmp.display().to_string(), message: e.to_string() })?;
    }
    std::fs::rename(&tmp, path).map_err(&err)?;
    Ok(())
}

fn fmt_rate(r: Option<f64>) -> String {
    match r {
        Some(v) => format!("{v:.4}"),
        None => String::new(),
    }
}

/// rates.csv matching the study-table layout:
/// h,L2_u,rate,H1_u,rate,L2_p,rate,H1_p,rate
pub fn rates_csv(table: &RateTable) -> String {
    let mut out = String::from("h,L2_u,rate,H1_u,rate,L2_p,rate,H1_p,rate\n");
    for row in &table.rows {
        out.push_str(&format!(
            "1/{},{:.6e},{},{:.6e},{},{:.6e},{},{:.6e},{}\n",
            row.subdivisions,
            row.errors[0],
            fmt_rate(row.rates[0]),
            row.errors[1],
            fmt_rate(row.rates[1]),
            row.errors[2],
            fmt_rate(row.rates[2]),
            row.errors[3],
            fmt_rate(row.rates[3]),
        ));
    }
    out
}

/// Human-readable aligned table of the same content.
pub fn rates_pretty(table: &RateTable) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{:>6} {:>13} {:>8} {:>13} {:>8} {:>13} {:>8} {:>13} {:>8}\n",
        "h", "L2(u)", "rate", "H1(u)", "rate", "L2(p)", "rate", "H1(p)", "rate"
    ));
    for row in &table.rows {
        let r = |k: usize| match row.rates[k] {
            Some(v) => format!("{v:.4}"),
            None => "-".into(),
        };
        out.push_str(&format!(
            "{:>6} {:>13.6e} {:>8} {:>13.6e} {:>8} {:>13.6e} {:>8} {:>13.6e} {:>8}\n",
            format!("1/{}", row.subdivisions),
            row.errors[0],
            r(0),
            row.errors[1],
            r(1),
            row.errors[2],
            r(2),
            row.errors[3],
            r(3),
        ));
    }
    out
}

fn fmt_opt(v: Option<f64>) -> String {
    match v {
        Some(x) => format!("{x:.9e}"),
        None => String::new(),
    }
}

/// monitors.csv: one row per time step.
pub fn monitors_csv(log: &MonitorLog) -> String {
    let mut out = String::from(
        "step,time,newton_iterations,cons_eta,cons_xi,cons_flux,energy_residual,energy_scale,J,S,S_hat,S_alt\n",
    );
    for row in &log.rows {
        out.push_str(&format!(
            "{},{:.9e},{},{:.9e},{:.9e},{:.9e},{:.9e},{:.9e},{:.9e},{:.9e},{},{}\n",
            row.step,
            row.time,
            row.newton_iterations,
            row.conservation_eta,
            row.conservation_xi,
            row.conservation_flux,
            row.energy_residual,
            row.energy_scale,
            row.j_value,
            row.s_value,
            fmt_opt(row.s_hat),
            fmt_opt(row.s_alt),
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use porofem::verify::RateTable;

    #[test]
    fn rates_csv_layout() {
        let table = RateTable::from_errors(&[
            (3, [1.0e-2, 2.0e-2, 3.0e-2, 4.0e-2]),
            (6, [2.5e-3, 5.0e-3, 7.5e-3, 1.0e-2]),
        ]);
        let csv = rates_csv(&table);
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), "h,L2_u,rate,H1_u,rate,L2_p,rate,H1_p,rate");
        let first = lines.next().unwrap();
        assert!(first.starts_with("1/3,"));
        assert!(first.contains(",,"), "first row has empty rate cells");
        let second = lines.next().unwrap();
        assert!(second.starts_with("1/6,"));
        assert!(second.contains("2.0000"));
    }
}
