//! Repair by guarded constant mutation, searched with an ε-greedy bandit.
//!
//! Each arm rewrites the culprit statement as
//! `if <region guard>: <mutated stmt> else: <original stmt>` so that the
//! change only applies where localization saw the utility diverge.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::executor::{episode_seed, run_episode, uninstrumented, ExecError, InstrumentError, InstrumentedProgram};
use crate::faultloc::Region;
use crate::lang::{
    find_numeric_literals, parse, replace_numeric_literal, unparse, BoolOp, CmpOp, Expr, LiteralRef, NumLit,
    Program, Stmt, StmtKind, Target,
};
use crate::taintflow::as_subscriber;
use crate::world::{EnvConfig, ODOMETRY_TOPIC, TERRAIN_TOPIC};

/// Separates validation episodes from search episodes that share a seed.
const EVAL_SALT: u64 = 0x5EED_0000_E7A1_0001;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RepairParams {
    pub mutation_factors: Vec<f64>,
    pub epsilon0: f64,
    pub epsilon_min: f64,
    pub epsilon_decay: f64,
    pub search_episodes: usize,
    pub eval_episodes: usize,
    pub seed: u64,
}

impl Default for RepairParams {
    fn default() -> Self {
        Self {
            mutation_factors: vec![0.25, 0.5, 2.0, 4.0, 8.0],
            epsilon0: 0.3,
            epsilon_min: 0.05,
            epsilon_decay: 0.995,
            search_episodes: 400,
            eval_episodes: 200,
            seed: 0,
        }
    }
}

impl RepairParams {
    pub fn validate(&self) -> Result<(), MendError> {
        let bad = |m: &str| Err(MendError::Params(m.to_string()));
        if self.mutation_factors.is_empty() || self.mutation_factors.iter().any(|f| !(*f > 0.0 && f.is_finite())) {
            return bad("mutation_factors must be non-empty and positive");
        }
        if !(0.0 <= self.epsilon_min && self.epsilon_min <= self.epsilon0 && self.epsilon0 <= 1.0) {
            return bad("need 0 <= epsilon_min <= epsilon0 <= 1");
        }
        if !(self.epsilon_decay > 0.0 && self.epsilon_decay <= 1.0) {
            return bad("epsilon_decay must lie in (0, 1]");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MendError {
    #[error("line {0} has no numeric constants to mutate")]
    NoConstants(usize),
    #[error("line {0}: no statement starts here")]
    MissingLine(usize),
    #[error("injected name `{0}` already exists in the program")]
    NameCollision(String),
    #[error("no arm reached the pull floor of {floor} (most pulls: {best})")]
    InsufficientData { floor: usize, best: usize },
    #[error("no arms to search")]
    NoArms,
    #[error("invalid repair parameters: {0}")]
    Params(String),
    #[error("arm {arm}: {source}")]
    Exec {
        arm: usize,
        #[source]
        source: ExecError,
    },
    #[error("arm {arm}: {source}")]
    Instrument {
        arm: usize,
        #[source]
        source: InstrumentError,
    },
}

#[derive(Debug, Clone)]
pub struct MutantArm {
    pub id: usize,
    /// `None` for the identity arm.
    pub constant_ref: Option<LiteralRef>,
    pub original: f64,
    pub value: f64,
    pub factor: f64,
    /// Guard predicate as source text; empty for the identity arm.
    pub guard: String,
    pub program: Program,
    pub source: String,
}

impl MutantArm {
    pub fn is_identity(&self) -> bool {
        self.constant_ref.is_none()
    }
}

fn sensor_names(topic: &str) -> (String, String) {
    let lower = topic.to_lowercase();
    (format!("__tarl_{lower}"), format!("__tarl_{lower}_cb"))
}

/// Every name the program mentions: variables, attribute roots, callees,
/// functions, parameters and global declarations.
fn mentioned_names(program: &Program) -> BTreeSet<String> {
    let mut names = BTreeSet::new();
    for s in program.all_statements() {
        match &s.kind {
            StmtKind::FuncDef { name, params, .. } => {
                names.insert(name.clone());
                names.extend(params.iter().cloned());
            }
            StmtKind::Global(g) => names.extend(g.iter().cloned()),
            StmtKind::Assign { target, .. } => {
                names.insert(target.root().to_string());
            }
            StmtKind::MultiAssign { targets, .. } => names.extend(targets.iter().map(|t| t.root().to_string())),
            _ => {}
        }
        for e in s.own_exprs() {
            e.walk(&mut |x| match x {
                Expr::Ident(n) => {
                    names.insert(n.clone());
                }
                Expr::Attr(p) => {
                    names.insert(p[0].clone());
                }
                Expr::Call { callee, .. } => {
                    names.insert(callee[0].clone());
                }
                _ => {}
            });
        }
    }
    names
}

fn already_injected(program: &Program, topic: &str) -> bool {
    let (_, cb) = sensor_names(topic);
    let defined = program.functions().iter().any(|(n, _, _)| *n == cb);
    let registered = program.all_statements().iter().any(|s| {
        s.own_exprs()
            .iter()
            .any(|e| as_subscriber(e).is_some_and(|(t, c)| t == topic && c == cb))
    });
    defined && registered
}

fn stmt(kind: StmtKind) -> Stmt {
    Stmt::new(0, 0, kind)
}

fn ident(n: &str) -> Expr {
    Expr::Ident(n.to_string())
}

/// Adds the sensor subscription on the AST without renumbering.
fn inject_raw(program: &mut Program, topic: &str) -> Result<(), MendError> {
    if already_injected(program, topic) {
        return Ok(());
    }
    let (var, cb) = sensor_names(topic);
    let names = mentioned_names(program);
    for n in [&var, &cb] {
        if names.contains(n) {
            return Err(MendError::NameCollision(n.clone()));
        }
    }
    let field: Vec<String> = if topic == TERRAIN_TOPIC {
        vec!["msg".into(), "data".into()]
    } else {
        ["msg", "pose", "pose", "position"].iter().map(|s| s.to_string()).collect()
    };
    let def = stmt(StmtKind::FuncDef {
        name: cb.clone(),
        params: vec!["msg".into()],
        body: vec![
            stmt(StmtKind::Global(vec![var.clone()])),
            stmt(StmtKind::Assign {
                target: Target::Ident(var),
                value: Expr::Attr(field),
            }),
        ],
    });
    let register = stmt(StmtKind::Expr(Expr::Call {
        callee: vec!["rospy".into(), "Subscriber".into()],
        args: vec![ident(topic), ident(&cb)],
        kwargs: Vec::new(),
    }));

    let first_sub = program
        .all_statements()
        .into_iter()
        .find(|s| s.line > 0 && matches!(&s.kind, StmtKind::Expr(e) if as_subscriber(e).is_some()))
        .map(|s| s.line);
    match first_sub {
        Some(line) => {
            let mut reg = Some(register);
            program.replace_at_line(line, &mut |old| vec![reg.take().expect("single replacement"), old]);
        }
        None => match program.entry {
            Some(i) => {
                if let StmtKind::If { body, .. } = &mut program.statements[i].kind {
                    body.insert(0, register);
                }
            }
            None => program.statements.push(register),
        },
    }
    program.statements.insert(0, def);
    program.entry = program.statements.iter().position(crate::lang::is_main_guard);
    Ok(())
}

/// Re-emits and re-parses so that every statement gets a real line number.
fn canonical(program: &Program) -> (Program, String) {
    let src = unparse(program);
    let reparsed = parse(&src).expect("unparsed programs always reparse");
    (reparsed, src.text)
}

/// Subscribes the program to `topic` through a synthesized callback storing
/// the message in the global `__tarl_<topic>`. Programs that already carry
/// this binding are returned unchanged.
pub fn inject_sensor_binding(program: &Program, topic: &str) -> Result<Program, MendError> {
    if already_injected(program, topic) {
        return Ok(program.clone());
    }
    let mut p = program.clone();
    inject_raw(&mut p, topic)?;
    Ok(canonical(&p).0)
}

fn num(x: f64) -> Expr {
    Expr::Num(NumLit::from_value(x))
}

fn and(a: Expr, b: Expr) -> Expr {
    Expr::Logical {
        op: BoolOp::And,
        lhs: Box::new(a),
        rhs: Box::new(b),
    }
}

/// Runtime predicate for a region: terrain bit plus odometry bounds of the
/// bin window. Bounds at the ends of the odometry range are left out.
pub fn guard_expr(region: &Region, config: &EnvConfig) -> Expr {
    let (terrain, _) = sensor_names(TERRAIN_TOPIC);
    let (odom, _) = sensor_names(ODOMETRY_TOPIC);
    let cmp = |op, lhs: Expr, rhs: Expr| Expr::Compare {
        op,
        lhs: Box::new(lhs),
        rhs: Box::new(rhs),
    };
    let mut g = cmp(CmpOp::Eq, ident(&terrain), Expr::Bool(region.terrain == 1));
    if region.p_lo > 0 {
        g = and(g, cmp(CmpOp::Ge, ident(&odom), num(config.bin_lower(region.p_lo))));
    }
    if region.p_hi + 1 < config.odometry_bins {
        g = and(g, cmp(CmpOp::Lt, ident(&odom), num(config.bin_lower(region.p_hi + 1))));
    }
    g
}

/// One arm per (literal, factor) pair plus the identity arm (id 0, the
/// unmodified program).
pub fn generate_mutants(
    program: &Program,
    culprit_line: usize,
    region: &Region,
    config: &EnvConfig,
    params: &RepairParams,
) -> Result<Vec<MutantArm>, MendError> {
    let target = program.find_line(culprit_line).ok_or(MendError::MissingLine(culprit_line))?;
    let literals = find_numeric_literals(target);
    if literals.is_empty() {
        return Err(MendError::NoConstants(culprit_line));
    }
    let guard = guard_expr(region, config);
    let guard_text = crate::lang::expr_text(&guard);
    let (_, identity_src) = canonical(program);
    let mut arms = vec![MutantArm {
        id: 0,
        constant_ref: None,
        original: literals[0].1,
        value: literals[0].1,
        factor: 1.0,
        guard: String::new(),
        program: program.clone(),
        source: identity_src,
    }];
    for (lit, original) in &literals {
        for &factor in &params.mutation_factors {
            let value = original * factor;
            let mut mutated = target.clone();
            replace_numeric_literal(&mut mutated, lit.ordinal, NumLit::from_value(value));
            let mut p = program.clone();
            inject_raw(&mut p, TERRAIN_TOPIC)?;
            inject_raw(&mut p, ODOMETRY_TOPIC)?;
            let mut replacement = Some(Stmt::new(
                target.line,
                target.col,
                StmtKind::If {
                    cond: guard.clone(),
                    body: vec![mutated],
                    orelse: vec![target.clone()],
                },
            ));
            p.replace_at_line(culprit_line, &mut |_| vec![replacement.take().expect("single replacement")]);
            let (program, source) = canonical(&p);
            arms.push(MutantArm {
                id: arms.len(),
                constant_ref: Some(*lit),
                original: *original,
                value,
                factor,
                guard: guard_text.clone(),
                program,
                source,
            });
        }
    }
    Ok(arms)
}

/// Running average total reward: element `E` is the mean of the first `E`
/// rewards.
pub fn atr(rewards: &[f64]) -> Vec<f64> {
    let mut sum = 0.0;
    rewards
        .iter()
        .enumerate()
        .map(|(i, r)| {
            sum += r;
            sum / (i + 1) as f64
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchRecord {
    pub episode: usize,
    pub arm: usize,
    pub reward: f64,
    pub atr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmStats {
    pub pulls: usize,
    pub total: f64,
}

impl ArmStats {
    /// Mean return; an unpulled arm counts as 0.
    pub fn mean(&self) -> f64 {
        if self.pulls == 0 {
            0.0
        } else {
            self.total / self.pulls as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchLog {
    pub records: Vec<SearchRecord>,
    pub arms: Vec<ArmStats>,
    pub selected: Option<usize>,
}

impl SearchLog {
    pub fn final_atr(&self) -> Option<f64> {
        self.records.last().map(|r| r.atr)
    }

    pub fn to_csv_string(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["episode", "arm", "reward", "atr"]).expect("in-memory write");
        for r in &self.records {
            w.write_record([
                r.episode.to_string(),
                r.arm.to_string(),
                format!("{}", r.reward),
                format!("{}", r.atr),
            ])
            .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8")
    }
}

/// Highest mean return; ties go to the lowest id.
fn greedy(stats: &[ArmStats]) -> usize {
    let mut best = 0;
    for (i, s) in stats.iter().enumerate() {
        if s.mean() > stats[best].mean() {
            best = i;
        }
    }
    best
}

fn compile_arms(arms: &[MutantArm]) -> Result<Vec<InstrumentedProgram>, MendError> {
    arms.iter()
        .map(|a| uninstrumented(&a.program).map_err(|source| MendError::Instrument { arm: a.id, source }))
        .collect()
}

/// Rewards of `episodes` monitored transits with seeds derived from `seed`.
pub fn episode_rewards(
    iprog: &InstrumentedProgram,
    config: &EnvConfig,
    seed: u64,
    episodes: usize,
) -> Result<Vec<f64>, ExecError> {
    (0..episodes)
        .map(|t| Ok(run_episode(iprog, config, config.g2, episode_seed(seed, t as u64))?.total_reward()))
        .collect()
}

pub fn epsilon_greedy_search(
    arms: &[MutantArm],
    config: &EnvConfig,
    params: &RepairParams,
) -> Result<SearchLog, MendError> {
    if arms.is_empty() {
        return Err(MendError::NoArms);
    }
    let compiled = compile_arms(arms)?;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    rng.set_stream(1);
    let mut stats = vec![
        ArmStats {
            pulls: 0,
            total: 0.0
        };
        arms.len()
    ];
    let mut records = Vec::with_capacity(params.search_episodes);
    let mut eps = params.epsilon0;
    let mut sum = 0.0;
    for t in 0..params.search_episodes {
        let explore = rng.gen::<f64>() < eps;
        let arm = if explore {
            rng.gen_range(0..arms.len())
        } else {
            greedy(&stats)
        };
        let trace = run_episode(&compiled[arm], config, config.g2, episode_seed(params.seed, t as u64))
            .map_err(|source| MendError::Exec { arm, source })?;
        let reward = trace.total_reward();
        stats[arm].pulls += 1;
        stats[arm].total += reward;
        sum += reward;
        records.push(SearchRecord {
            episode: t + 1,
            arm,
            reward,
            atr: sum / (t + 1) as f64,
        });
        eps = (eps * params.epsilon_decay).max(params.epsilon_min);
    }
    Ok(SearchLog {
        records,
        arms: stats,
        selected: None,
    })
}

/// Fewest pulls an arm needs before it may be selected.
pub fn pull_floor(search_episodes: usize, arms: usize) -> usize {
    3.max(search_episodes / (4 * arms.max(1)))
}

/// Arm with the highest mean among those meeting the pull floor.
pub fn select_arm(log: &SearchLog, search_episodes: usize) -> Result<usize, MendError> {
    let floor = pull_floor(search_episodes, log.arms.len());
    let mut best: Option<usize> = None;
    for (i, s) in log.arms.iter().enumerate() {
        if s.pulls >= floor && best.is_none_or(|b| s.mean() > log.arms[b].mean()) {
            best = Some(i);
        }
    }
    best.ok_or(MendError::InsufficientData {
        floor,
        best: log.arms.iter().map(|s| s.pulls).max().unwrap_or(0),
    })
}

#[derive(Debug, Clone)]
pub struct FinalPatch {
    pub arm: usize,
    pub value: f64,
    pub program: Program,
    pub source: String,
    pub rewards: Vec<f64>,
    pub atr_series: Vec<f64>,
    pub atr_eval: f64,
}

/// Picks the best arm and re-runs it alone on fresh episodes.
pub fn select_and_validate(
    log: &mut SearchLog,
    arms: &[MutantArm],
    config: &EnvConfig,
    params: &RepairParams,
) -> Result<FinalPatch, MendError> {
    let arm = select_arm(log, params.search_episodes)?;
    log.selected = Some(arm);
    let chosen = &arms[arm];
    let iprog = uninstrumented(&chosen.program).map_err(|source| MendError::Instrument { arm, source })?;
    let rewards = episode_rewards(&iprog, config, params.seed ^ EVAL_SALT, params.eval_episodes)
        .map_err(|source| MendError::Exec { arm, source })?;
    let atr_series = atr(&rewards);
    Ok(FinalPatch {
        arm,
        value: chosen.value,
        program: chosen.program.clone(),
        source: chosen.source.clone(),
        atr_eval: atr_series.last().copied().unwrap_or(0.0),
        rewards,
        atr_series,
    })
}

/// Seed under which validation episodes of a repair run are drawn; baselines
/// compared against a patch should use the same one.
pub fn eval_seed(params: &RepairParams) -> u64 {
    params.seed ^ EVAL_SALT
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lang::parse_str;

    #[test]
    fn prefix_means() {
        assert_eq!(atr(&[100.0]), vec![100.0]);
        let a = atr(&[100.0, -100.0, 100.0]);
        assert_eq!(a[0], 100.0);
        assert_eq!(a[1], 0.0);
        assert!((a[2] - 33.333333333333336).abs() < 1e-12);
        assert!(atr(&[]).is_empty());
    }

    #[test]
    fn injection_is_idempotent_and_checks_names() {
        let p = parse_str("def cb(d):\n    pass\nrospy.Subscriber(Odometry, cb)\n").unwrap();
        let once = inject_sensor_binding(&p, TERRAIN_TOPIC).unwrap();
        let text = unparse(&once).text;
        assert!(text.contains("rospy.Subscriber(Terrain, __tarl_terrain_cb)"));
        assert!(text.contains("__tarl_terrain = msg.data"));
        let twice = inject_sensor_binding(&once, TERRAIN_TOPIC).unwrap();
        assert_eq!(unparse(&twice).text, text);

        let clash = parse_str("__tarl_terrain = 1\n").unwrap();
        assert_eq!(
            inject_sensor_binding(&clash, TERRAIN_TOPIC).unwrap_err(),
            MendError::NameCollision("__tarl_terrain".into())
        );
    }

    #[test]
    fn guard_text_for_interior_region() {
        let c = EnvConfig::default();
        let g = guard_expr(&Region { terrain: 1, p_lo: 7, p_hi: 11 }, &c);
        assert_eq!(
            crate::lang::expr_text(&g),
            "__tarl_terrain == True and __tarl_odometry >= 3.5 and __tarl_odometry < 6"
        );
        let edge = guard_expr(&Region { terrain: 0, p_lo: 0, p_hi: 19 }, &c);
        assert_eq!(crate::lang::expr_text(&edge), "__tarl_terrain == False");
    }

    #[test]
    fn greedy_ties_go_low() {
        let s = vec![
            ArmStats { pulls: 2, total: 10.0 },
            ArmStats { pulls: 1, total: 5.0 },
        ];
        assert_eq!(greedy(&s), 0);
    }

    #[test]
    fn selection_needs_pulls() {
        let log = SearchLog {
            records: Vec::new(),
            arms: vec![ArmStats { pulls: 0, total: 0.0 }; 3],
            selected: None,
        };
        assert!(matches!(select_arm(&log, 0), Err(MendError::InsufficientData { .. })));
    }

    #[test]
    fn equal_returns_select_lowest_id() {
        let log = SearchLog {
            records: Vec::new(),
            arms: vec![ArmStats { pulls: 10, total: 500.0 }; 3],
            selected: None,
        };
        assert_eq!(select_arm(&log, 40).unwrap(), 0);
    }

    #[test]
    fn no_constants() {
        let p = parse_str("x = 1\nerr = abs(x)\n").unwrap();
        let r = Region { terrain: 1, p_lo: 0, p_hi: 4 };
        let err = generate_mutants(&p, 2, &r, &EnvConfig::default(), &RepairParams::default()).unwrap_err();
        assert_eq!(err, MendError::NoConstants(2));
    }
}
