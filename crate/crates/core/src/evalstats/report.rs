use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::experiment::{user_mode_means, ExperimentKind, Trial, TrialSet};
use super::stats::{mean, one_way_anova, pairwise_tests, rm_anova_gg, standard_error};
use crate::error::StatsError;
use crate::selection::SelectionKind;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeSummary {
    pub mode: SelectionKind,
    pub n_users: usize,
    /// Mean over per-user means.
    pub mean: f64,
    /// Standard error across users.
    pub se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Omnibus {
    pub test: String,
    pub statistic: f64,
    pub df1: f64,
    pub df2: f64,
    pub p: f64,
    pub correction: Option<String>,
    pub epsilon: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseRow {
    pub a: SelectionKind,
    pub b: SelectionKind,
    pub mean_diff: f64,
    pub t: f64,
    pub df: f64,
    pub raw_p: Option<f64>,
    pub corrected_p: Option<f64>,
    pub zero_variance: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasureReport {
    pub measure: String,
    pub summaries: Vec<ModeSummary>,
    pub omnibus: Option<Omnibus>,
    pub pairwise: Vec<PairwiseRow>,
}

impl MeasureReport {
    pub fn summary(&self, mode: SelectionKind) -> Option<&ModeSummary> {
        self.summaries.iter().find(|s| s.mode == mode)
    }

    /// The comparison between two modes, in either order.
    pub fn pair(&self, a: SelectionKind, b: SelectionKind) -> Option<&PairwiseRow> {
        self.pairwise.iter().find(|p| (p.a == a && p.b == b) || (p.a == b && p.b == a))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsReport {
    pub kind: ExperimentKind,
    pub n_users: usize,
    pub measures: Vec<MeasureReport>,
}

impl StatsReport {
    pub fn measure(&self, name: &str) -> Option<&MeasureReport> {
        self.measures.iter().find(|m| m.measure == name)
    }

    /// `measure,mode,n_users,mean,se` — one row per bar of the figure.
    pub fn summary_csv(&self) -> String {
        let mut s = String::from("measure,mode,n_users,mean,se\n");
        for m in &self.measures {
            for r in &m.summaries {
                let _ = writeln!(s, "{},{},{},{},{}", m.measure, r.mode, r.n_users, r.mean, r.se);
            }
        }
        s
    }

    pub fn omnibus_csv(&self) -> String {
        let mut s = String::from("measure,test,statistic,df1,df2,p,correction,epsilon\n");
        for m in &self.measures {
            if let Some(o) = &m.omnibus {
                let _ = writeln!(
                    s,
                    "{},{},{},{},{},{},{},{}",
                    m.measure,
                    o.test,
                    o.statistic,
                    o.df1,
                    o.df2,
                    o.p,
                    o.correction.as_deref().unwrap_or(""),
                    o.epsilon.map(|e| e.to_string()).unwrap_or_default()
                );
            }
        }
        s
    }

    pub fn pairwise_csv(&self) -> String {
        let opt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
        let mut s = String::from("measure,a,b,mean_diff,t,df,raw_p,corrected_p,zero_variance\n");
        for m in &self.measures {
            for p in &m.pairwise {
                let _ = writeln!(
                    s,
                    "{},{},{},{},{},{},{},{},{}",
                    m.measure,
                    p.a,
                    p.b,
                    p.mean_diff,
                    p.t,
                    p.df,
                    opt(p.raw_p),
                    opt(p.corrected_p),
                    p.zero_variance
                );
            }
        }
        s
    }
}

#[derive(Clone, Copy)]
enum OmnibusKind {
    RepeatedMeasures,
    OneWay,
}

fn measure_report(
    name: &str,
    set: &TrialSet,
    users: &[usize],
    modes: &[SelectionKind],
    omnibus: OmnibusKind,
    f: impl Fn(&Trial) -> Option<f64>,
) -> Result<MeasureReport, StatsError> {
    let matrix = user_mode_means(set, users, modes, f);
    if matrix.iter().flatten().any(|x| x.is_nan()) {
        return Err(StatsError::InvalidInput(format!("{name}: some user has no trials in some mode")));
    }
    let columns: Vec<Vec<f64>> = (0..modes.len()).map(|j| matrix.iter().map(|r| r[j]).collect()).collect();
    let summaries = modes
        .iter()
        .zip(&columns)
        .map(|(m, c)| ModeSummary { mode: *m, n_users: c.len(), mean: mean(c), se: standard_error(c) })
        .collect();

    if modes.len() < 2 || users.len() < 2 {
        return Ok(MeasureReport { measure: name.into(), summaries, omnibus: None, pairwise: Vec::new() });
    }

    let omnibus = match omnibus {
        OmnibusKind::RepeatedMeasures if users.len() >= 3 => match rm_anova_gg(&matrix) {
            Ok(r) => Some(Omnibus {
                test: "rm_anova".into(),
                statistic: r.f,
                df1: r.df_conditions_gg,
                df2: r.df_error_gg,
                p: r.p_gg,
                correction: Some("greenhouse-geisser".into()),
                epsilon: Some(r.epsilon_gg),
            }),
            Err(StatsError::Degenerate(_)) => None,
            Err(e) => return Err(e),
        },
        OmnibusKind::RepeatedMeasures => None,
        OmnibusKind::OneWay => match one_way_anova(&columns) {
            Ok(r) => Some(Omnibus {
                test: "one_way_anova".into(),
                statistic: r.f,
                df1: r.df_between,
                df2: r.df_within,
                p: r.p,
                correction: None,
                epsilon: None,
            }),
            Err(StatsError::Degenerate(_)) => None,
            Err(e) => return Err(e),
        },
    };

    let names: Vec<String> = modes.iter().map(|m| m.to_string()).collect();
    let pairwise = pairwise_tests(&matrix, &names)?
        .into_iter()
        .map(|c| PairwiseRow {
            a: c.a.parse().expect("mode name round-trips"),
            b: c.b.parse().expect("mode name round-trips"),
            mean_diff: c.test.mean_diff,
            t: c.test.t,
            df: c.test.df,
            raw_p: c.raw_p,
            corrected_p: c.corrected_p,
            zero_variance: c.test.zero_variance,
        })
        .collect();
    Ok(MeasureReport { measure: name.into(), summaries, omnibus, pairwise })
}

/// Per-mode means and SEs over per-user means, the omnibus test and
/// Bonferroni-corrected paired comparisons.
///
/// Selection sets report `error_deg` and `time_s` with a repeated-measures
/// ANOVA (Greenhouse–Geisser corrected); classification sets report
/// `accuracy` with a one-way ANOVA. A single mode gets summaries only.
pub fn report(set: &TrialSet) -> Result<StatsReport, StatsError> {
    if set.trials.is_empty() {
        return Err(StatsError::InvalidInput("empty trial set".into()));
    }
    let users = set.users();
    let modes = set.modes();
    let measures = match set.kind {
        ExperimentKind::Selection => vec![
            measure_report("error_deg", set, &users, &modes, OmnibusKind::RepeatedMeasures, |t| Some(t.error_deg))?,
            measure_report("time_s", set, &users, &modes, OmnibusKind::RepeatedMeasures, |t| Some(t.time_s))?,
        ],
        ExperimentKind::Classification => vec![
            measure_report("accuracy", set, &users, &modes, OmnibusKind::OneWay, |t| {
                t.correct.map(|c| if c { 1.0 } else { 0.0 })
            })?,
            measure_report("error_deg", set, &users, &modes, OmnibusKind::RepeatedMeasures, |t| Some(t.error_deg))?,
        ],
    };
    Ok(StatsReport { kind: set.kind, n_users: users.len(), measures })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evalstats::experiment::{run_selection_experiment, SelectionExperimentConfig};
    use crate::selection::default_mode;

    #[test]
    fn single_mode_has_no_tests() {
        let cfg = SelectionExperimentConfig { users: 3, ..Default::default() };
        let set = run_selection_experiment(&cfg, &[default_mode(SelectionKind::Head)], 1).unwrap();
        let r = report(&set).unwrap();
        let e = r.measure("error_deg").unwrap();
        assert_eq!(e.summaries.len(), 1);
        assert!(e.omnibus.is_none() && e.pairwise.is_empty());
        assert!(e.summaries[0].se > 0.0);
    }

    #[test]
    fn csv_tables_have_one_row_per_entry() {
        let cfg = SelectionExperimentConfig { users: 4, ..Default::default() };
        let set = run_selection_experiment(&cfg, &crate::selection::default_modes(), 2).unwrap();
        let r = report(&set).unwrap();
        assert_eq!(r.summary_csv().lines().count(), 1 + 2 * 4);
        assert_eq!(r.pairwise_csv().lines().count(), 1 + 2 * 6);
        assert_eq!(r.omnibus_csv().lines().count(), 1 + 2);
    }
}
