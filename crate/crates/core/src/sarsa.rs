//! Tabular temporal-difference utility learning over hook-event streams.
//!
//! The running program is a fixed policy, so learning is policy evaluation:
//! each hook event is a state `(m, p, n)` and consecutive events form the
//! transitions. The TD target carries an extra flow term, the normalized
//! value computed at the line scaled by the episode's monitor reward.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::executor::{episode_seed, run_episode, EpisodeTrace, ExecError, InstrumentedProgram};
use crate::world::EnvConfig;

/// Smallest normalizer, so an all-zero flow history yields ṽ = 0.
const TINY: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearnParams {
    pub alpha: f64,
    pub gamma: f64,
    pub kappa: f64,
    pub episodes: usize,
    /// Episodes per convergence block.
    pub block: usize,
    pub tol: f64,
    pub seed: u64,
}

impl Default for LearnParams {
    fn default() -> Self {
        Self {
            alpha: 0.1,
            gamma: 0.95,
            kappa: 0.5,
            episodes: 3000,
            block: 200,
            tol: 0.05,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid learning parameters: {0}")]
pub struct ParamError(pub String);

impl LearnParams {
    // Negated comparisons so that NaN fails every check.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<(), ParamError> {
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(ParamError("alpha must lie in (0, 1]".into()));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(ParamError("gamma must lie in [0, 1)".into()));
        }
        if !(self.kappa >= 0.0 && self.kappa.is_finite()) {
            return Err(ParamError("kappa must be non-negative".into()));
        }
        if self.block == 0 {
            return Err(ParamError("block must be positive".into()));
        }
        if !(self.tol >= 0.0) {
            return Err(ParamError("tol must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct State {
    pub m: usize,
    pub p: usize,
    pub n: usize,
}

/// Utility over terrain bit × odometry bin × instrumented line.
#[derive(Debug, Clone, PartialEq)]
pub struct UtilityTable {
    pub bins: usize,
    /// Source line of each instrumented statement, by `stmt_index`.
    pub lines: Vec<usize>,
    q: Vec<f64>,
    visited: Vec<bool>,
    /// Running maximum of |v| over every flow value seen so far.
    pub flow_norm: f64,
}

impl UtilityTable {
    pub fn new(bins: usize, lines: Vec<usize>) -> Self {
        let len = 2 * bins * lines.len();
        Self {
            bins,
            lines,
            q: vec![0.0; len],
            visited: vec![false; len],
            flow_norm: 0.0,
        }
    }

    pub fn for_program(iprog: &InstrumentedProgram, config: &EnvConfig) -> Self {
        Self::new(config.odometry_bins, iprog.lines.clone())
    }

    pub fn lines_len(&self) -> usize {
        self.lines.len()
    }

    fn idx(&self, s: State) -> usize {
        debug_assert!(s.m < 2 && s.p < self.bins && s.n < self.lines.len());
        (s.m * self.bins + s.p) * self.lines.len() + s.n
    }

    pub fn get(&self, m: usize, p: usize, n: usize) -> f64 {
        self.q[self.idx(State { m, p, n })]
    }

    pub fn set(&mut self, m: usize, p: usize, n: usize, value: f64) {
        let i = self.idx(State { m, p, n });
        self.q[i] = value;
        self.visited[i] = true;
    }

    pub fn is_visited(&self, m: usize, p: usize, n: usize) -> bool {
        self.visited[self.idx(State { m, p, n })]
    }

    pub fn values(&self) -> &[f64] {
        &self.q
    }

    pub fn max_abs(&self) -> f64 {
        self.q.iter().fold(0.0, |a, &x| a.max(x.abs()))
    }

    /// Largest |Δq| against an earlier snapshot, over visited states only.
    pub fn max_change_since(&self, before: &[f64]) -> f64 {
        self.q
            .iter()
            .zip(before)
            .zip(&self.visited)
            .filter(|(_, &v)| v)
            .fold(0.0, |a, ((x, y), _)| a.max((x - y).abs()))
    }

    pub fn scaled(&self, c: f64) -> UtilityTable {
        let mut t = self.clone();
        for x in &mut t.q {
            *x *= c;
        }
        t
    }

    /// Writes `terrain,odometry_bin,line,stmt_index,q` rows.
    pub fn save_csv<W: Write>(&self, out: W) -> Result<(), FormatError> {
        if let Some(i) = self.q.iter().position(|x| !x.is_finite()) {
            return Err(FormatError(format!("non-finite utility at row {}", i + 1)));
        }
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["terrain", "odometry_bin", "line", "stmt_index", "q"])?;
        for m in 0..2 {
            for p in 0..self.bins {
                for (n, line) in self.lines.iter().enumerate() {
                    w.write_record([
                        m.to_string(),
                        p.to_string(),
                        line.to_string(),
                        n.to_string(),
                        format!("{}", self.get(m, p, n)),
                    ])?;
                }
            }
        }
        w.flush().map_err(|e| FormatError(e.to_string()))?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> Result<String, FormatError> {
        let mut buf = Vec::new();
        self.save_csv(&mut buf)?;
        Ok(String::from_utf8(buf).expect("csv output is utf-8"))
    }

    /// Reads a table written by [`UtilityTable::save_csv`]. Every
    /// `(terrain, bin, stmt_index)` cell must appear exactly once. Cells with
    /// a non-zero value are marked visited.
    pub fn load_csv<R: Read>(input: R) -> Result<UtilityTable, FormatError> {
        let mut rdr = csv::Reader::from_reader(input);
        let header = rdr.headers()?.clone();
        if header.iter().collect::<Vec<_>>() != ["terrain", "odometry_bin", "line", "stmt_index", "q"] {
            return Err(FormatError("unexpected header".into()));
        }
        let mut rows = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let bad = |what: &str| FormatError(format!("row {}: bad {what}", i + 2));
            if rec.len() != 5 {
                return Err(bad("field count"));
            }
            let m: usize = rec[0].trim().parse().map_err(|_| bad("terrain"))?;
            let p: usize = rec[1].trim().parse().map_err(|_| bad("odometry_bin"))?;
            let line: usize = rec[2].trim().parse().map_err(|_| bad("line"))?;
            let n: usize = rec[3].trim().parse().map_err(|_| bad("stmt_index"))?;
            let q: f64 = rec[4].trim().parse().map_err(|_| bad("q"))?;
            if m > 1 {
                return Err(bad("terrain"));
            }
            if !q.is_finite() {
                return Err(bad("q"));
            }
            rows.push((m, p, line, n, q));
        }
        if rows.is_empty() {
            return Ok(UtilityTable::new(0, Vec::new()));
        }
        let bins = rows.iter().map(|r| r.1).max().unwrap() + 1;
        let count = rows.iter().map(|r| r.3).max().unwrap() + 1;
        let mut lines = vec![None; count];
        for &(_, _, line, n, _) in &rows {
            match lines[n] {
                None => lines[n] = Some(line),
                Some(l) if l != line => {
                    return Err(FormatError(format!("stmt_index {n} maps to lines {l} and {line}")))
                }
                _ => {}
            }
        }
        let lines: Vec<usize> = lines
            .into_iter()
            .enumerate()
            .map(|(n, l)| l.ok_or_else(|| FormatError(format!("stmt_index {n} missing"))))
            .collect::<Result<_, _>>()?;
        let mut t = UtilityTable::new(bins, lines);
        let mut seen = vec![false; t.q.len()];
        for (m, p, _, n, q) in rows {
            let i = t.idx(State { m, p, n });
            if std::mem::replace(&mut seen[i], true) {
                return Err(FormatError(format!("duplicate cell ({m}, {p}, {n})")));
            }
            t.q[i] = q;
            t.visited[i] = q != 0.0;
        }
        if seen.iter().any(|s| !s) {
            return Err(FormatError("table is missing cells".into()));
        }
        Ok(t)
    }
}

#[derive(Debug, Error)]
#[error("malformed utility table: {0}")]
pub struct FormatError(pub String);

impl From<csv::Error> for FormatError {
    fn from(e: csv::Error) -> Self {
        FormatError(e.to_string())
    }
}

/// One TD step. `flow_reward` scales the normalized flow value; the caller
/// updates `flow_norm` with |v| beforehand.
#[allow(clippy::too_many_arguments)]
pub fn td_update(
    table: &mut UtilityTable,
    s: State,
    v: f64,
    r: f64,
    flow_reward: f64,
    next: Option<State>,
    alpha: f64,
    gamma: f64,
    kappa: f64,
) {
    let norm = table.flow_norm.max(TINY);
    let v_tilde = (v / norm).clamp(-1.0, 1.0);
    let mut target = r + kappa * flow_reward * v_tilde;
    if let Some(sn) = next {
        target += gamma * table.q[table.idx(sn)];
    }
    let i = table.idx(s);
    table.q[i] += alpha * (target - table.q[i]);
    table.visited[i] = true;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnStats {
    pub episodes: usize,
    pub successes: usize,
    pub success_rate: f64,
    pub mud_episodes: usize,
    /// Largest utility change over visited states within each block.
    pub block_max_delta: Vec<f64>,
    pub max_abs_q: f64,
    /// `None` when fewer than two blocks ran.
    pub converged: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("episode {episode}: {source}")]
pub struct LearnError {
    pub episode: usize,
    #[source]
    pub source: ExecError,
}

/// Applies the TD rule along one episode's events.
pub fn learn_from_trace(table: &mut UtilityTable, trace: &EpisodeTrace, params: &LearnParams) {
    let n = trace.events.len();
    let r_ep = trace.verdict.reward_total;
    for (i, e) in trace.events.iter().enumerate() {
        table.flow_norm = table.flow_norm.max(e.v.abs());
        let last = i + 1 == n;
        let r = trace.step_rewards[i] + if last { r_ep } else { 0.0 };
        let next = (!last).then(|| {
            let x = &trace.events[i + 1];
            State {
                m: x.m as usize,
                p: x.p,
                n: x.stmt_index,
            }
        });
        let s = State {
            m: e.m as usize,
            p: e.p,
            n: e.stmt_index,
        };
        td_update(table, s, e.v, r, r_ep, next, params.alpha, params.gamma, params.kappa);
    }
}

/// Runs `params.episodes` monitored transits towards `config.g2` and learns
/// the utility table from their hook events.
pub fn learn(
    iprog: &InstrumentedProgram,
    config: &EnvConfig,
    params: &LearnParams,
) -> Result<(UtilityTable, LearnStats), LearnError> {
    learn_observed(iprog, config, params, &mut |_, _| {})
}

/// [`learn`], handing each episode's trace to `observe` before it is used.
pub fn learn_observed(
    iprog: &InstrumentedProgram,
    config: &EnvConfig,
    params: &LearnParams,
    observe: &mut dyn FnMut(usize, &EpisodeTrace),
) -> Result<(UtilityTable, LearnStats), LearnError> {
    let mut table = UtilityTable::for_program(iprog, config);
    let mut stats = LearnStats {
        episodes: params.episodes,
        successes: 0,
        success_rate: 0.0,
        mud_episodes: 0,
        block_max_delta: Vec::new(),
        max_abs_q: 0.0,
        converged: None,
    };
    let mut snapshot = table.q.clone();
    for e in 0..params.episodes {
        let seed = episode_seed(params.seed, e as u64);
        let trace = run_episode(iprog, config, config.g2, seed).map_err(|source| LearnError { episode: e, source })?;
        observe(e, &trace);
        stats.successes += trace.verdict.success as usize;
        stats.mud_episodes += trace.mud as usize;
        learn_from_trace(&mut table, &trace, params);
        if (e + 1) % params.block == 0 || e + 1 == params.episodes {
            stats.block_max_delta.push(table.max_change_since(&snapshot));
            snapshot.copy_from_slice(&table.q);
        }
    }
    if params.episodes > 0 {
        stats.success_rate = stats.successes as f64 / params.episodes as f64;
    }
    stats.max_abs_q = table.max_abs();
    stats.converged = converged(&stats.block_max_delta, params.tol, stats.max_abs_q).ok();
    Ok((table, stats))
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("convergence needs at least two blocks, got {0}")]
pub struct InsufficientHistory(pub usize);

/// True iff the last block moved the table by less than `tol · max|q|`.
/// A last block with no movement at all counts as converged.
pub fn converged(history: &[f64], tol: f64, max_abs_q: f64) -> Result<bool, InsufficientHistory> {
    if history.len() < 2 {
        return Err(InsufficientHistory(history.len()));
    }
    let last = *history.last().unwrap();
    Ok(last == 0.0 || last < tol * max_abs_q)
}

/// Upper bound on |q| for any number of updates.
pub fn utility_bound(config: &EnvConfig, params: &LearnParams) -> f64 {
    (1.0 + params.kappa) * config.reward_bound() / (1.0 - params.gamma)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(n: usize) -> State {
        State { m: 0, p: 0, n }
    }

    #[test]
    fn terminal_update_with_flow() {
        let mut t = UtilityTable::new(2, vec![10]);
        t.flow_norm = 1.0;
        td_update(&mut t, s(0), 1.0, 100.0, 100.0, None, 0.1, 0.9, 0.5);
        assert!((t.get(0, 0, 0) - 15.0).abs() < 1e-12);
    }

    #[test]
    fn textbook_step() {
        let mut t = UtilityTable::new(2, vec![10, 11]);
        t.set(0, 0, 1, 10.0);
        td_update(&mut t, s(0), 3.0, 0.0, 0.0, Some(s(1)), 0.1, 0.9, 0.0);
        assert!((t.get(0, 0, 0) - 0.9).abs() < 1e-12);
    }

    #[test]
    fn convergence_rule() {
        assert!(converged(&[50.0, 4.0, 0.3], 0.01, 150.0).unwrap());
        assert!(!converged(&[50.0, 4.0, 3.0], 0.01, 150.0).unwrap());
        assert_eq!(converged(&[1.0], 0.01, 1.0), Err(InsufficientHistory(1)));
        assert!(converged(&[0.0, 0.0, 0.0], 0.05, 0.0).unwrap());
    }

    #[test]
    fn csv_round_trip() {
        let mut t = UtilityTable::new(3, vec![22, 27]);
        t.set(1, 2, 1, -3.25);
        t.set(0, 1, 0, 1.0 / 3.0);
        let text = t.to_csv_string().unwrap();
        let back = UtilityTable::load_csv(text.as_bytes()).unwrap();
        assert_eq!(back.values(), t.values());
        assert_eq!(back.lines, t.lines);
        assert_eq!(back.bins, t.bins);
    }

    #[test]
    fn empty_table_is_header_only() {
        let t = UtilityTable::new(20, Vec::new());
        assert_eq!(t.to_csv_string().unwrap(), "terrain,odometry_bin,line,stmt_index,q\n");
    }

    #[test]
    fn nan_is_refused() {
        let mut t = UtilityTable::new(2, vec![1]);
        t.set(0, 1, 0, f64::NAN);
        assert!(t.to_csv_string().is_err());
    }

    #[test]
    fn malformed_rows_are_rejected() {
        let text = "terrain,odometry_bin,line,stmt_index,q\n0,0,5,0,abc\n";
        assert!(UtilityTable::load_csv(text.as_bytes()).is_err());
        let text = "terrain,odometry_bin,line,stmt_index,q\n0,0,5,0,1\n";
        assert!(UtilityTable::load_csv(text.as_bytes()).is_err());
    }
}
