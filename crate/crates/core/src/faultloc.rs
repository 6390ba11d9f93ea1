//! Localizing a culprit line by comparing off-line and on-line utilities.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sarsa::UtilityTable;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("tables have different shapes: {0}")]
pub struct ShapeError(pub String);

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("off-line and on-line slices are identical; no culprit")]
pub struct DegenerateError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Region {
    pub terrain: u8,
    pub p_lo: usize,
    pub p_hi: usize,
}

impl Region {
    pub fn contains(&self, m: usize, p: usize) -> bool {
        m == self.terrain as usize && (self.p_lo..=self.p_hi).contains(&p)
    }
}

/// Per-(terrain, bin) total absolute utility difference.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffMap {
    pub bins: usize,
    pub d: [Vec<f64>; 2],
}

pub fn diff_map(q_off: &UtilityTable, q_on: &UtilityTable) -> Result<DiffMap, ShapeError> {
    if q_off.bins != q_on.bins {
        return Err(ShapeError(format!("{} vs {} odometry bins", q_off.bins, q_on.bins)));
    }
    if q_off.lines != q_on.lines {
        return Err(ShapeError(format!("lines {:?} vs {:?}", q_off.lines, q_on.lines)));
    }
    let bins = q_off.bins;
    let mut d = [vec![0.0; bins], vec![0.0; bins]];
    for (m, row) in d.iter_mut().enumerate() {
        for (p, cell) in row.iter_mut().enumerate() {
            *cell = (0..q_off.lines_len())
                .map(|n| (q_off.get(m, p, n) - q_on.get(m, p, n)).abs())
                .sum();
        }
    }
    Ok(DiffMap { bins, d })
}

/// Default window: a quarter of the bins, rounded up.
pub fn default_window(bins: usize) -> usize {
    bins.div_ceil(4).max(1)
}

/// Width-`w` window with the largest summed difference. `w` is clamped to
/// `[1, bins]`; ties go to the smaller terrain bit, then the smaller start.
pub fn max_diff_region(d: &DiffMap, w: usize) -> Region {
    let w = w.clamp(1, d.bins.max(1));
    let mut best: Option<(f64, Region)> = None;
    for m in 0..2 {
        for lo in 0..=d.bins.saturating_sub(w) {
            let sum: f64 = d.d[m][lo..lo + w].iter().sum();
            if best.is_none_or(|(b, _)| sum > b) {
                best = Some((
                    sum,
                    Region {
                        terrain: m as u8,
                        p_lo: lo,
                        p_hi: lo + w - 1,
                    },
                ));
            }
        }
    }
    best.map(|(_, r)| r).unwrap_or(Region {
        terrain: 0,
        p_lo: 0,
        p_hi: 0,
    })
}

/// Sum of utilities over the region for each instrumented line.
pub fn utility_slice(q: &UtilityTable, region: &Region) -> BTreeMap<usize, f64> {
    let m = region.terrain as usize;
    let hi = region.p_hi.min(q.bins.saturating_sub(1));
    q.lines
        .iter()
        .enumerate()
        .map(|(n, &line)| {
            let s: f64 = (region.p_lo..=hi).map(|p| q.get(m, p, n)).sum();
            (line, s)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Culprit {
    pub line: usize,
    /// Gap between the largest and second-largest |Δqs|.
    pub margin: f64,
}

/// Line with the largest |qs_off − qs_on|; ties go to the larger line.
pub fn locate_culprit(
    qs_off: &BTreeMap<usize, f64>,
    qs_on: &BTreeMap<usize, f64>,
) -> Result<Culprit, DegenerateError> {
    let mut diffs: Vec<(f64, usize)> = qs_off
        .iter()
        .map(|(line, a)| ((a - qs_on.get(line).copied().unwrap_or(0.0)).abs(), *line))
        .collect();
    diffs.sort_by(|a, b| b.0.total_cmp(&a.0).then(b.1.cmp(&a.1)));
    let Some(&(top, line)) = diffs.first() else {
        return Err(DegenerateError);
    };
    if top == 0.0 {
        return Err(DegenerateError);
    }
    let second = diffs.get(1).map_or(0.0, |d| d.0);
    Ok(Culprit {
        line,
        margin: top - second,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalizationReport {
    pub region: Region,
    pub qs_offline: BTreeMap<usize, f64>,
    pub qs_online: BTreeMap<usize, f64>,
    pub culprit_line: usize,
    pub culprit_text: String,
    pub margin: f64,
}

impl LocalizationReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LocalizeError {
    #[error(transparent)]
    Shape(#[from] ShapeError),
    #[error(transparent)]
    Degenerate(#[from] DegenerateError),
}

/// Full pipeline: difference map, region, slices and culprit. `text_of`
/// names the statement on a line.
pub fn localize(
    q_off: &UtilityTable,
    q_on: &UtilityTable,
    window: usize,
    text_of: &dyn Fn(usize) -> String,
) -> Result<LocalizationReport, LocalizeError> {
    let d = diff_map(q_off, q_on)?;
    let region = max_diff_region(&d, window);
    let qs_offline = utility_slice(q_off, &region);
    let qs_online = utility_slice(q_on, &region);
    let c = locate_culprit(&qs_offline, &qs_online)?;
    Ok(LocalizationReport {
        region,
        culprit_text: text_of(c.line),
        culprit_line: c.line,
        margin: c.margin,
        qs_offline,
        qs_online,
    })
}
