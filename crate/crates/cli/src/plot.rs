use std::fmt::Write;

use rmps_core::experiments::ExperimentReport;

use crate::error::CliError;

/// Gnuplot script with the sweep inlined as a data block.
///
/// Columns: `x mean mean-3se mean+3se exact bound`, with `NaN` for absent
/// references.
pub fn emit_plot_script(report: &ExperimentReport) -> Result<String, CliError> {
    let sweep = match &report.sweep {
        Some(s) if !s.points.is_empty() => s,
        _ => return Err(CliError::Usage(format!("report for {} has no sweep points to plot", report.kind))),
    };
    let opt = |v: Option<f64>| v.map_or_else(|| "NaN".to_string(), |x| format!("{x:e}"));
    let mut s = String::new();
    writeln!(s, "# rmps-lab {} (seed {})", report.kind, report.seed).unwrap();
    writeln!(s, "set terminal pngcairo size 800,600").unwrap();
    writeln!(s, "set output '{}.png'", report.kind).unwrap();
    writeln!(s, "set xlabel \"{}\"", escape(&sweep.x_label)).unwrap();
    writeln!(s, "set ylabel \"{}\"", escape(&sweep.y_label)).unwrap();
    writeln!(s, "set key top right").unwrap();
    writeln!(s, "set datafile missing NaN").unwrap();
    writeln!(s, "$data << EOD").unwrap();
    for p in &sweep.points {
        let band = 3.0 * p.stderr;
        writeln!(s, "{:e} {:e} {:e} {:e} {} {}", p.x, p.mean, p.mean - band, p.mean + band, opt(p.exact), opt(p.bound)).unwrap();
    }
    writeln!(s, "EOD").unwrap();
    if sweep.points.len() == 1 {
        let x = sweep.points[0].x;
        let pad = if x == 0.0 { 1.0 } else { 0.5 * x.abs() };
        writeln!(s, "set xrange [{:e}:{:e}]", x - pad, x + pad).unwrap();
        let refs = [("exact", sweep.points[0].exact, "dashtype 2"), ("bound", sweep.points[0].bound, "dashtype 3")];
        let mut parts = vec![
            "$data using 1:3:4 with filledcurves fillcolor rgb '#c0d0f0' title 'estimate +- 3 sigma'".to_string(),
            "$data using 1:2 with points pointtype 7 title 'estimate'".to_string(),
        ];
        for (name, v, dash) in refs {
            if let Some(v) = v {
                parts.push(format!("{v:e} with lines {dash} title '{name}'"));
            }
        }
        writeln!(s, "plot {}", parts.join(", \\\n     ")).unwrap();
    } else {
        writeln!(
            s,
            "plot $data using 1:3:4 with filledcurves fillcolor rgb '#c0d0f0' title 'estimate +- 3 sigma', \\\n     \
             $data using 1:2 with linespoints pointtype 7 title 'estimate', \\\n     \
             $data using 1:5 with linespoints dashtype 2 title 'exact', \\\n     \
             $data using 1:6 with lines dashtype 3 title 'bound'"
        )
        .unwrap();
    }
    Ok(s)
}

fn escape(label: &str) -> String {
    label.replace('\\', "\\\\").replace('"', "\\\"")
}

/// Number of data rows in a script produced by [`emit_plot_script`].
pub fn data_rows(script: &str) -> usize {
    script.lines().skip_while(|l| !l.starts_with("$data <<")).skip(1).take_while(|l| *l != "EOD").count()
}
