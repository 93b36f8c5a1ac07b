use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use metasum::metatrain::StepRecord;
use metasum::report::read_csv;

use crate::sparkline::sparkline;

/// Summary statistics of one log's gradient norms.
#[derive(Debug, Clone, PartialEq)]
pub struct NormStats {
    pub steps: usize,
    pub finite: usize,
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    pub variance: f64,
}

pub fn norm_stats(norms: &[f64]) -> NormStats {
    let finite: Vec<f64> = norms.iter().copied().filter(|x| x.is_finite()).collect();
    let n = finite.len().max(1) as f64;
    let mean = finite.iter().sum::<f64>() / n;
    NormStats {
        steps: norms.len(),
        finite: finite.len(),
        min: finite.iter().copied().fold(f64::INFINITY, f64::min),
        max: finite.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        mean,
        variance: finite.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n,
    }
}

pub fn render(logs: &[(PathBuf, Vec<StepRecord>)], width: usize) -> String {
    let mut s = String::new();
    let mut first_var = None;
    for (path, rows) in logs {
        let norms: Vec<f64> = rows.iter().map(|r| r.grad_norm).collect();
        let st = norm_stats(&norms);
        let _ = writeln!(s, "{}", path.display());
        let _ = writeln!(
            s,
            "  steps {}  finite {}/{}  min {:.3e}  max {:.3e}  mean {:.3e}  variance {:.3e}",
            st.steps, st.finite, st.steps, st.min, st.max, st.mean, st.variance
        );
        let _ = writeln!(s, "  {}", sparkline(&norms, width));
        match first_var {
            None => first_var = Some(st.variance),
            Some(v0) if v0 > 0.0 => {
                let _ = writeln!(s, "  variance ratio to first log: {:.3}", st.variance / v0);
            }
            Some(_) => {}
        }
    }
    s
}

pub fn run(logs: &[PathBuf], width: usize, out: Option<&Path>) -> Result<()> {
    let loaded = logs
        .iter()
        .map(|p| {
            read_csv::<StepRecord>(p)
                .with_context(|| format!("reading {}", p.display()))
                .map(|rows| (p.clone(), rows))
        })
        .collect::<Result<Vec<_>>>()?;
    let text = render(&loaded, width);
    print!("{text}");
    if let Some(p) = out {
        std::fs::write(p, &text).with_context(|| format!("writing {}", p.display()))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stats_ignore_non_finite() {
        let st = norm_stats(&[1.0, 3.0, f64::NAN]);
        assert_eq!((st.steps, st.finite), (3, 2));
        assert_eq!((st.min, st.max, st.mean, st.variance), (1.0, 3.0, 2.0, 1.0));
    }
}
