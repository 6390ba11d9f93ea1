//! Interpreter for MiniBot programs wired to the simulated world.
//!
//! Programs are lowered to a slot-resolved form before running. Every
//! instrumented statement emits a [`HookEvent`] when it executes; a
//! subscriber's source binding emits one each time a message is delivered.

use std::collections::{BTreeSet, HashMap};
use std::rc::Rc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lang::{
    function_locals, statement_text, BinOp, BoolOp, CmpOp, Expr, Program, Stmt, StmtKind, Target, UnaryOp,
};
use crate::taintflow::{as_publisher, as_subscriber, TaintReport};
use crate::world::{self, EnvConfig, Message, MonitorVerdict, WorldState, VELOCITY_TOPIC};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum InstrumentError {
    #[error("line {line}: no statement starts here (expected `{expected}`)")]
    MissingLine { line: usize, expected: String },
    #[error("line {line}: report expects `{expected}` but the program has `{found}`")]
    Stale {
        line: usize,
        expected: String,
        found: String,
    },
    #[error("line {line}: {message}")]
    Unsupported { line: usize, message: String },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExecError {
    #[error("line {line}: {message}")]
    Runtime { line: usize, message: String },
    #[error("no verdict after {publishes} publishes and {statements} statements")]
    Divergence { publishes: u64, statements: u64 },
    #[error("program finished without a monitor verdict")]
    NoVerdict,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HookEvent {
    pub line: usize,
    pub stmt_index: usize,
    /// Terrain bit when the statement ran.
    pub m: u8,
    /// Odometry bin when the statement ran.
    pub p: usize,
    /// Flow value produced by the statement.
    pub v: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeTrace {
    pub events: Vec<HookEvent>,
    /// Reward collected right after each event (step penalties).
    pub step_rewards: Vec<f64>,
    pub verdict: MonitorVerdict,
    pub publish_count: u64,
    /// Velocity commands in publish order.
    pub actuation: Vec<f64>,
    pub mud: bool,
}

impl EpisodeTrace {
    /// Monitor reward plus every step penalty.
    pub fn total_reward(&self) -> f64 {
        self.verdict.reward_total + self.step_rewards.iter().sum::<f64>()
    }

    /// One JSON object per event.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.events {
            out.push_str(&serde_json::to_string(e).expect("event serializes"));
            out.push('\n');
        }
        out
    }
}

/// Derives the seed of one episode from a run seed.
pub fn episode_seed(base: u64, episode: u64) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    mix(base ^ mix(episode))
}

#[derive(Debug, Clone, PartialEq)]
enum Value {
    Undef,
    None,
    Num(f64),
    Bool(bool),
    Str(Rc<str>),
    Topic(Rc<str>),
    Type(Rc<str>),
    Publisher(Rc<str>),
    Msg(Message),
}

impl Value {
    fn truthy(&self) -> bool {
        match self {
            Value::Undef | Value::None => false,
            Value::Num(x) => *x != 0.0,
            Value::Bool(b) => *b,
            Value::Str(s) => !s.is_empty(),
            _ => true,
        }
    }

    fn number(&self) -> Option<f64> {
        match self {
            Value::Num(x) => Some(*x),
            Value::Bool(b) => Some(if *b { 1.0 } else { 0.0 }),
            _ => None,
        }
    }

    fn flow(&self) -> f64 {
        match self {
            Value::Msg(m) => m.scalar(),
            v => v.number().unwrap_or(0.0),
        }
    }

    fn type_name(&self) -> &'static str {
        match self {
            Value::Undef => "undefined",
            Value::None => "None",
            Value::Num(_) => "number",
            Value::Bool(_) => "bool",
            Value::Str(_) => "string",
            Value::Topic(_) => "topic",
            Value::Type(_) => "message type",
            Value::Publisher(_) => "publisher",
            Value::Msg(_) => "message",
        }
    }
}

fn values_equal(a: &Value, b: &Value) -> bool {
    match (a.number(), b.number()) {
        (Some(x), Some(y)) => x == y,
        _ => match (a, b) {
            (Value::Str(x), Value::Str(y)) => x == y,
            (Value::Topic(x), Value::Topic(y)) => x == y,
            (Value::Type(x), Value::Type(y)) => x == y,
            (Value::Publisher(x), Value::Publisher(y)) => x == y,
            (Value::None, Value::None) => true,
            _ => false,
        },
    }
}

#[derive(Debug, Clone, Copy)]
enum Slot {
    Local(usize),
    Global(usize),
}

#[derive(Debug, Clone)]
enum CExpr {
    Const(Value),
    Var(Slot),
    Attr(Slot, Vec<String>),
    Binary(BinOp, Box<CExpr>, Box<CExpr>),
    Compare(CmpOp, Box<CExpr>, Box<CExpr>),
    Logical(BoolOp, Box<CExpr>, Box<CExpr>),
    Not(Box<CExpr>),
    Neg(Box<CExpr>),
    Abs(Box<CExpr>),
    InitNode,
    Subscriber {
        topic: Rc<str>,
        func: usize,
        hook: Option<usize>,
    },
    Publisher(Rc<str>),
    Publish(Slot, Box<CExpr>),
    Call(usize, Vec<CExpr>),
}

#[derive(Debug, Clone)]
enum CTarget {
    Var(Slot),
    Attr,
}

#[derive(Debug, Clone)]
enum CKind {
    Assign(Vec<(CTarget, CExpr)>),
    While(CExpr, Vec<CStmt>),
    If(CExpr, Vec<CStmt>, Vec<CStmt>),
    Block(Vec<CStmt>),
    Expr(CExpr),
    Nop,
}

#[derive(Debug, Clone)]
struct CStmt {
    line: usize,
    hook: Option<usize>,
    kind: CKind,
}

#[derive(Debug, Clone)]
struct CFunc {
    params: usize,
    locals: Vec<String>,
    body: Vec<CStmt>,
}

#[derive(Debug, Clone)]
struct Compiled {
    globals: Vec<String>,
    funcs: Vec<CFunc>,
    main: Vec<CStmt>,
    /// Whether module-level code calls a user function at all; if so the
    /// monitored leg starts at the call that targets the goal.
    has_entry_calls: bool,
}

/// A program plus the hook sites from a taint report, ready to run.
#[derive(Debug, Clone)]
pub struct InstrumentedProgram {
    pub program: Program,
    /// Line of each hook site, indexed by `stmt_index`.
    pub lines: Vec<usize>,
    pub texts: Vec<String>,
    compiled: Compiled,
}

impl InstrumentedProgram {
    pub fn hook_count(&self) -> usize {
        self.lines.len()
    }

    pub fn line_index(&self, line: usize) -> Option<usize> {
        self.lines.iter().position(|&l| l == line)
    }
}

/// Wraps every statement of `report.instrumented` with a hook.
pub fn instrument(program: &Program, report: &TaintReport) -> Result<InstrumentedProgram, InstrumentError> {
    let mut stmt_hooks = HashMap::new();
    let mut source_hooks = HashMap::new();
    let mut lines = Vec::new();
    let mut texts = Vec::new();
    for (idx, entry) in report.instrumented.iter().enumerate() {
        let stmt = program.find_line(entry.line).ok_or_else(|| InstrumentError::MissingLine {
            line: entry.line,
            expected: entry.text.clone(),
        })?;
        let text = statement_text(stmt);
        if text == entry.text {
            stmt_hooks.insert(entry.line, idx);
        } else if source_binding_text(stmt, program).as_deref() == Some(entry.text.as_str()) {
            source_hooks.insert(entry.line, idx);
        } else {
            return Err(InstrumentError::Stale {
                line: entry.line,
                expected: entry.text.clone(),
                found: text,
            });
        }
        lines.push(entry.line);
        texts.push(entry.text.clone());
    }
    let compiled = Compiler::compile(program, &stmt_hooks, &source_hooks)?;
    Ok(InstrumentedProgram {
        program: program.clone(),
        lines,
        texts,
        compiled,
    })
}

/// The program with no hook sites.
pub fn uninstrumented(program: &Program) -> Result<InstrumentedProgram, InstrumentError> {
    instrument(
        program,
        &TaintReport {
            source_topic: String::new(),
            sink_topic: String::new(),
            chain: Vec::new(),
            instrumented: Vec::new(),
        },
    )
}

/// `param = Topic` for a statement that registers a subscriber.
fn source_binding_text(stmt: &Stmt, program: &Program) -> Option<String> {
    let StmtKind::Expr(e) = &stmt.kind else { return None };
    let (topic, cb) = as_subscriber(e)?;
    let param = program
        .functions()
        .into_iter()
        .find(|(n, _, _)| *n == cb)
        .and_then(|(_, p, _)| p.first().cloned())?;
    Some(format!("{param} = {topic}"))
}

const BUILTIN_NAMES: &[&str] = &["__name__", "G1", "G2", "Epsilon", "Odometry", "Velocity", "Terrain", "Twist"];

struct Compiler<'a> {
    globals: Vec<String>,
    global_index: HashMap<String, usize>,
    func_index: HashMap<&'a str, usize>,
    stmt_hooks: &'a HashMap<usize, usize>,
    source_hooks: &'a HashMap<usize, usize>,
    has_entry_calls: bool,
}

struct FnScope {
    locals: Vec<String>,
}

impl<'a> Compiler<'a> {
    fn compile(
        program: &'a Program,
        stmt_hooks: &'a HashMap<usize, usize>,
        source_hooks: &'a HashMap<usize, usize>,
    ) -> Result<Compiled, InstrumentError> {
        let defs = program.functions();
        let mut c = Compiler {
            globals: Vec::new(),
            global_index: HashMap::new(),
            func_index: defs.iter().enumerate().map(|(i, (n, _, _))| (*n, i)).collect(),
            stmt_hooks,
            source_hooks,
            has_entry_calls: false,
        };
        for name in BUILTIN_NAMES {
            c.global(name);
        }
        let main = c.block(&program.statements, None)?;
        let entry_calls = c.has_entry_calls;
        let mut funcs = Vec::new();
        for (_, params, body) in &defs {
            let mut locals: Vec<String> = params.to_vec();
            let names: BTreeSet<String> = function_locals(params, body);
            locals.extend(names.into_iter().filter(|n| !params.contains(n)));
            let scope = FnScope { locals };
            let cbody = c.block(body, Some(&scope))?;
            funcs.push(CFunc {
                params: params.len(),
                locals: scope.locals,
                body: cbody,
            });
        }
        Ok(Compiled {
            globals: c.globals,
            funcs,
            main,
            has_entry_calls: entry_calls,
        })
    }

    fn global(&mut self, name: &str) -> usize {
        if let Some(&i) = self.global_index.get(name) {
            return i;
        }
        self.globals.push(name.to_string());
        self.global_index.insert(name.to_string(), self.globals.len() - 1);
        self.globals.len() - 1
    }

    fn slot(&mut self, name: &str, scope: Option<&FnScope>) -> Slot {
        if let Some(i) = scope.and_then(|s| s.locals.iter().position(|l| l == name)) {
            return Slot::Local(i);
        }
        Slot::Global(self.global(name))
    }

    fn block(&mut self, stmts: &[Stmt], scope: Option<&FnScope>) -> Result<Vec<CStmt>, InstrumentError> {
        stmts.iter().map(|s| self.stmt(s, scope)).collect()
    }

    fn stmt(&mut self, s: &Stmt, scope: Option<&FnScope>) -> Result<CStmt, InstrumentError> {
        let kind = match &s.kind {
            StmtKind::FuncDef { .. } | StmtKind::Global(_) | StmtKind::Pass => CKind::Nop,
            StmtKind::Assign { target, value } => {
                CKind::Assign(vec![(self.target(target, scope), self.expr(value, s.line, scope)?)])
            }
            StmtKind::MultiAssign { targets, values } => {
                let mut pairs = Vec::new();
                for (t, v) in targets.iter().zip(values) {
                    pairs.push((self.target(t, scope), self.expr(v, s.line, scope)?));
                }
                CKind::Assign(pairs)
            }
            StmtKind::While { cond, body } => CKind::While(self.expr(cond, s.line, scope)?, self.block(body, scope)?),
            StmtKind::If { cond, body, orelse } => CKind::If(
                self.expr(cond, s.line, scope)?,
                self.block(body, scope)?,
                self.block(orelse, scope)?,
            ),
            // Handlers never run: faults end the episode.
            StmtKind::TryExcept { body, .. } => CKind::Block(self.block(body, scope)?),
            StmtKind::Expr(e) => CKind::Expr(self.expr(e, s.line, scope)?),
        };
        Ok(CStmt {
            line: s.line,
            hook: self.stmt_hooks.get(&s.line).copied(),
            kind,
        })
    }

    fn target(&mut self, t: &Target, scope: Option<&FnScope>) -> CTarget {
        match t {
            Target::Ident(n) => CTarget::Var(self.slot(n, scope)),
            Target::Attr(_) => CTarget::Attr,
        }
    }

    fn expr(&mut self, e: &Expr, line: usize, scope: Option<&FnScope>) -> Result<CExpr, InstrumentError> {
        let unsupported = |message: String| InstrumentError::Unsupported { line, message };
        Ok(match e {
            Expr::Num(n) => CExpr::Const(Value::Num(n.value)),
            Expr::Bool(b) => CExpr::Const(Value::Bool(*b)),
            Expr::Str(s) => CExpr::Const(Value::Str(s.as_str().into())),
            Expr::Ident(n) => CExpr::Var(self.slot(n, scope)),
            Expr::Attr(p) => CExpr::Attr(self.slot(&p[0], scope), p[1..].to_vec()),
            Expr::Binary { op, lhs, rhs } => CExpr::Binary(
                *op,
                Box::new(self.expr(lhs, line, scope)?),
                Box::new(self.expr(rhs, line, scope)?),
            ),
            Expr::Compare { op, lhs, rhs } => CExpr::Compare(
                *op,
                Box::new(self.expr(lhs, line, scope)?),
                Box::new(self.expr(rhs, line, scope)?),
            ),
            Expr::Logical { op, lhs, rhs } => CExpr::Logical(
                *op,
                Box::new(self.expr(lhs, line, scope)?),
                Box::new(self.expr(rhs, line, scope)?),
            ),
            Expr::Unary { op: UnaryOp::Not, operand } => CExpr::Not(Box::new(self.expr(operand, line, scope)?)),
            Expr::Unary { op: UnaryOp::Neg, operand } => CExpr::Neg(Box::new(self.expr(operand, line, scope)?)),
            Expr::Call { callee, args, .. } => {
                let path: Vec<&str> = callee.iter().map(String::as_str).collect();
                match path.as_slice() {
                    ["abs"] => {
                        let [a] = args.as_slice() else {
                            return Err(unsupported("abs takes one argument".into()));
                        };
                        CExpr::Abs(Box::new(self.expr(a, line, scope)?))
                    }
                    ["rospy", "init_node"] => CExpr::InitNode,
                    ["rospy", "Subscriber"] => {
                        let (topic, cb) =
                            as_subscriber(e).ok_or_else(|| unsupported("malformed Subscriber call".into()))?;
                        let func = *self
                            .func_index
                            .get(cb.as_str())
                            .ok_or_else(|| unsupported(format!("undefined callback `{cb}`")))?;
                        CExpr::Subscriber {
                            topic: topic.as_str().into(),
                            func,
                            hook: self.source_hooks.get(&line).copied(),
                        }
                    }
                    ["rospy", "Publisher"] => {
                        let topic = as_publisher(e).ok_or_else(|| unsupported("malformed Publisher call".into()))?;
                        CExpr::Publisher(topic.as_str().into())
                    }
                    [handle, "publish"] => {
                        let [a] = args.as_slice() else {
                            return Err(unsupported("publish takes one argument".into()));
                        };
                        CExpr::Publish(self.slot(handle, scope), Box::new(self.expr(a, line, scope)?))
                    }
                    [name] if self.func_index.contains_key(name) => {
                        let f = self.func_index[name];
                        if scope.is_none() {
                            self.has_entry_calls = true;
                        }
                        let cargs = args
                            .iter()
                            .map(|a| self.expr(a, line, scope))
                            .collect::<Result<Vec<_>, _>>()?;
                        CExpr::Call(f, cargs)
                    }
                    _ => return Err(unsupported(format!("call to undefined function `{}`", callee.join(".")))),
                }
            }
        })
    }
}

/// Ends execution early without being an error.
enum Halt {
    Fault(ExecError),
    Verdict,
}

impl From<ExecError> for Halt {
    fn from(e: ExecError) -> Self {
        Halt::Fault(e)
    }
}

type Flow<T> = Result<T, Halt>;

const MAX_DEPTH: usize = 64;
const STATEMENTS_PER_PUBLISH_LIMIT: u64 = 1000;

struct Machine<'a> {
    code: &'a Compiled,
    config: &'a EnvConfig,
    goal: f64,
    world: WorldState,
    globals: Vec<Value>,
    frames: Vec<Vec<Value>>,
    subscriptions: Vec<(Rc<str>, usize, Option<usize>)>,
    events: Vec<HookEvent>,
    step_rewards: Vec<f64>,
    actuation: Vec<f64>,
    lines: &'a [usize],
    leg_started: bool,
    verdict: Option<MonitorVerdict>,
    total_publishes: u64,
    statements: u64,
    statement_budget: u64,
    line: usize,
}

impl<'a> Machine<'a> {
    fn fault(&self, message: impl Into<String>) -> Halt {
        Halt::Fault(ExecError::Runtime {
            line: self.line,
            message: message.into(),
        })
    }

    fn emit(&mut self, idx: usize, v: f64) {
        let s = world::read_sensors(&self.world, self.config);
        self.events.push(HookEvent {
            line: self.lines[idx],
            stmt_index: idx,
            m: s.terrain as u8,
            p: s.odometry_bin,
            v,
        });
        self.step_rewards.push(0.0);
    }

    fn start_leg(&mut self) {
        self.leg_started = true;
        self.world.restart_clock();
        self.events.clear();
        self.step_rewards.clear();
        self.actuation.clear();
    }

    fn read(&self, slot: Slot) -> Flow<Value> {
        let v = match slot {
            Slot::Local(i) => &self.frames.last().expect("local slot outside a call")[i],
            Slot::Global(i) => &self.globals[i],
        };
        if let Value::Undef = v {
            let name = match slot {
                Slot::Global(i) => self.code.globals[i].clone(),
                Slot::Local(_) => "local".to_string(),
            };
            return Err(self.fault(format!("undefined variable `{name}`")));
        }
        Ok(v.clone())
    }

    fn write(&mut self, slot: Slot, v: Value) {
        match slot {
            Slot::Local(i) => self.frames.last_mut().expect("local slot outside a call")[i] = v,
            Slot::Global(i) => self.globals[i] = v,
        }
    }

    fn num(&self, v: &Value) -> Flow<f64> {
        v.number()
            .ok_or_else(|| self.fault(format!("expected a number, found {}", v.type_name())))
    }

    fn eval(&mut self, e: &CExpr) -> Flow<Value> {
        Ok(match e {
            CExpr::Const(v) => v.clone(),
            CExpr::Var(s) => self.read(*s)?,
            CExpr::Attr(s, path) => match self.read(*s)? {
                Value::Msg(Message::Terrain(b)) if path.len() == 1 && path[0] == "data" => Value::Bool(b),
                Value::Msg(m) => match m.field(path) {
                    Some(x) => Value::Num(x),
                    None => return Err(self.fault(format!("message has no field `{}`", path.join(".")))),
                },
                other => return Err(self.fault(format!("{} has no attribute `{}`", other.type_name(), path.join(".")))),
            },
            CExpr::Binary(op, a, b) => {
                let x = self.eval(a)?;
                let y = self.eval(b)?;
                let (x, y) = (self.num(&x)?, self.num(&y)?);
                Value::Num(match op {
                    BinOp::Add => x + y,
                    BinOp::Sub => x - y,
                    BinOp::Mul => x * y,
                    BinOp::Div => {
                        if y == 0.0 {
                            return Err(self.fault("division by zero"));
                        }
                        x / y
                    }
                })
            }
            CExpr::Compare(op, a, b) => {
                let x = self.eval(a)?;
                let y = self.eval(b)?;
                Value::Bool(match op {
                    CmpOp::Eq => values_equal(&x, &y),
                    CmpOp::Ne => !values_equal(&x, &y),
                    _ => {
                        let (x, y) = (self.num(&x)?, self.num(&y)?);
                        match op {
                            CmpOp::Lt => x < y,
                            CmpOp::Gt => x > y,
                            CmpOp::Le => x <= y,
                            _ => x >= y,
                        }
                    }
                })
            }
            CExpr::Logical(op, a, b) => {
                let x = self.eval(a)?;
                match (op, x.truthy()) {
                    (BoolOp::And, false) | (BoolOp::Or, true) => x,
                    _ => self.eval(b)?,
                }
            }
            CExpr::Not(a) => Value::Bool(!self.eval(a)?.truthy()),
            CExpr::Neg(a) => {
                let x = self.eval(a)?;
                Value::Num(-self.num(&x)?)
            }
            CExpr::Abs(a) => {
                let x = self.eval(a)?;
                Value::Num(self.num(&x)?.abs())
            }
            CExpr::InitNode => Value::None,
            CExpr::Subscriber { topic, func, hook } => {
                self.subscriptions.push((topic.clone(), *func, *hook));
                // Topics are latched: the new subscriber hears the current value.
                if let Some(msg) = Message::on_topic(topic, &self.world) {
                    self.deliver(*func, *hook, msg)?;
                }
                Value::None
            }
            CExpr::Publisher(t) => Value::Publisher(t.clone()),
            CExpr::Publish(..) => return Err(self.fault("publish must be a statement of its own")),
            CExpr::Call(f, args) => {
                let mut vals = Vec::with_capacity(args.len());
                for a in args {
                    vals.push(self.eval(a)?);
                }
                let starts_leg = self.frames.is_empty()
                    && self.code.has_entry_calls
                    && !self.leg_started
                    && vals.iter().any(|v| v.number() == Some(self.goal));
                if starts_leg {
                    self.start_leg();
                }
                self.call(*f, vals)?;
                if starts_leg {
                    // The monitored call came back without reaching the goal.
                    self.verdict = Some(MonitorVerdict::failure(self.config));
                    return Err(Halt::Verdict);
                }
                Value::None
            }
        })
    }

    fn call(&mut self, f: usize, args: Vec<Value>) -> Flow<()> {
        let func = &self.code.funcs[f];
        if args.len() != func.params {
            return Err(self.fault(format!("expected {} arguments, got {}", func.params, args.len())));
        }
        if self.frames.len() >= MAX_DEPTH {
            return Err(self.fault("call depth limit exceeded"));
        }
        let mut frame = vec![Value::Undef; func.locals.len()];
        for (i, a) in args.into_iter().enumerate() {
            frame[i] = a;
        }
        self.frames.push(frame);
        let saved = self.line;
        let r = self.block(&func.body);
        self.line = saved;
        self.frames.pop();
        r
    }

    fn deliver(&mut self, func: usize, hook: Option<usize>, msg: Message) -> Flow<()> {
        if let Some(h) = hook {
            self.emit(h, msg.scalar());
        }
        self.call(func, vec![Value::Msg(msg)])
    }

    fn publish(&mut self, topic: &str, v: f64) -> Flow<()> {
        self.total_publishes += 1;
        if self.total_publishes > self.config.max_publishes() {
            return Err(Halt::Fault(ExecError::Divergence {
                publishes: self.total_publishes,
                statements: self.statements,
            }));
        }
        self.statement_budget += STATEMENTS_PER_PUBLISH_LIMIT;
        if topic != VELOCITY_TOPIC {
            return Ok(());
        }
        self.actuation.push(v);
        self.world = world::apply_velocity(&self.world, v, self.config);
        if let Some(r) = self.step_rewards.last_mut() {
            *r += self.config.step_penalty;
        }
        if self.leg_started {
            if let Some(verdict) = world::judge(&self.world, self.goal, self.config) {
                self.verdict = Some(verdict);
                return Err(Halt::Verdict);
            }
        }
        let subs = self.subscriptions.clone();
        for (t, func, hook) in subs {
            if let Some(msg) = Message::on_topic(&t, &self.world) {
                self.deliver(func, hook, msg)?;
            }
        }
        Ok(())
    }

    fn block(&mut self, stmts: &[CStmt]) -> Flow<()> {
        for s in stmts {
            self.stmt(s)?;
        }
        Ok(())
    }

    fn tick(&mut self, line: usize) -> Flow<()> {
        self.line = line;
        self.statements += 1;
        if self.statements > self.statement_budget {
            return Err(Halt::Fault(ExecError::Divergence {
                publishes: self.total_publishes,
                statements: self.statements,
            }));
        }
        Ok(())
    }

    fn stmt(&mut self, s: &CStmt) -> Flow<()> {
        self.tick(s.line)?;
        match &s.kind {
            CKind::Nop => {}
            CKind::Assign(pairs) => {
                let mut vals = Vec::with_capacity(pairs.len());
                for (_, e) in pairs {
                    vals.push(self.eval(e)?);
                }
                self.line = s.line;
                let first = vals[0].flow();
                for ((t, _), v) in pairs.iter().zip(vals) {
                    match t {
                        CTarget::Var(slot) => self.write(*slot, v),
                        CTarget::Attr => return Err(self.fault("attribute assignment is not supported")),
                    }
                }
                if let Some(h) = s.hook {
                    self.emit(h, first);
                }
            }
            CKind::While(cond, body) => loop {
                self.line = s.line;
                let c = self.eval(cond)?.truthy();
                if let Some(h) = s.hook {
                    self.emit(h, c as u8 as f64);
                }
                if !c {
                    break;
                }
                self.block(body)?;
                self.tick(s.line)?;
            },
            CKind::If(cond, body, orelse) => {
                let c = self.eval(cond)?.truthy();
                if let Some(h) = s.hook {
                    self.emit(h, c as u8 as f64);
                }
                self.block(if c { body } else { orelse })?;
            }
            CKind::Block(body) => {
                if let Some(h) = s.hook {
                    self.emit(h, 0.0);
                }
                self.block(body)?;
            }
            CKind::Expr(CExpr::Publish(handle, arg)) => {
                let topic = match self.read(*handle)? {
                    Value::Publisher(t) => t,
                    other => return Err(self.fault(format!("cannot publish through a {}", other.type_name()))),
                };
                let v = self.eval(arg)?;
                let v = self.num(&v)?;
                self.line = s.line;
                if let Some(h) = s.hook {
                    self.emit(h, v);
                }
                self.publish(&topic, v)?;
            }
            CKind::Expr(e) => {
                let v = self.eval(e)?;
                if let Some(h) = s.hook {
                    self.emit(h, v.flow());
                }
            }
        }
        Ok(())
    }
}

/// Runs the program for one monitored transit towards `goal`.
pub fn run_episode(iprog: &InstrumentedProgram, config: &EnvConfig, goal: f64, seed: u64) -> Result<EpisodeTrace, ExecError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let world = world::reset(config, &mut rng);
    run_from(iprog, config, goal, world)
}

/// Runs the program from a prepared world state.
pub fn run_from(iprog: &InstrumentedProgram, config: &EnvConfig, goal: f64, world: WorldState) -> Result<EpisodeTrace, ExecError> {
    let code = &iprog.compiled;
    let mut globals = vec![Value::Undef; code.globals.len()];
    let builtins: [(&str, Value); 8] = [
        ("__name__", Value::Str("__main__".into())),
        ("G1", Value::Num(config.g1)),
        ("G2", Value::Num(config.g2)),
        ("Epsilon", Value::Num(config.epsilon_spec)),
        ("Odometry", Value::Topic("Odometry".into())),
        ("Velocity", Value::Topic("Velocity".into())),
        ("Terrain", Value::Topic("Terrain".into())),
        ("Twist", Value::Type("Twist".into())),
    ];
    for (i, (_, v)) in builtins.into_iter().enumerate() {
        globals[i] = v;
    }
    let mud = world.episode_mud.is_some();
    let mut m = Machine {
        code,
        config,
        goal,
        world,
        globals,
        frames: Vec::new(),
        subscriptions: Vec::new(),
        events: Vec::new(),
        step_rewards: Vec::new(),
        actuation: Vec::new(),
        lines: &iprog.lines,
        leg_started: !code.has_entry_calls,
        verdict: None,
        total_publishes: 0,
        statements: 0,
        statement_budget: 10 * STATEMENTS_PER_PUBLISH_LIMIT,
        line: 0,
    };
    match m.block(&code.main) {
        Ok(()) => Err(ExecError::NoVerdict),
        Err(Halt::Fault(e)) => Err(e),
        Err(Halt::Verdict) => {
            let publish_count = m.world.steps;
            Ok(EpisodeTrace {
                events: m.events,
                step_rewards: m.step_rewards,
                verdict: m.verdict.expect("verdict recorded"),
                publish_count,
                actuation: m.actuation,
                mud,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lang::parse_str;
    use crate::taintflow::taint_analyze;

    const SHUTTLE: &str = "\
def callback(data):
    global pos
    pos = data.pose.pose.position
def travel(goal, vout):
    global pos
    err, delta, vel = 1, 0, 0
    while err > Epsilon:
        delta = goal - pos
        err = abs(delta)
        vel = 5 * delta
        vout.publish(vel)
if __name__ == '__main__':
    rospy.init_node('T', anonymous=True)
    rospy.Subscriber(Odometry, callback)
    vpub = rospy.Publisher(Velocity, Twist, 10)
    while True:
        travel(G1, vpub)
        travel(G2, vpub)
";

    fn shuttle() -> InstrumentedProgram {
        let p = parse_str(SHUTTLE).unwrap();
        let r = taint_analyze(&p, "Odometry", "Velocity").unwrap();
        instrument(&p, &r).unwrap()
    }

    #[test]
    fn offline_transit_succeeds() {
        let c = EnvConfig::default().for_env(world::Environment::Offline);
        let t = run_episode(&shuttle(), &c, c.g2, 1).unwrap();
        assert!(t.verdict.success);
        assert!((100..=112).contains(&t.publish_count), "{}", t.publish_count);
    }

    #[test]
    fn never_publishing_has_no_verdict() {
        let p = parse_str("x = 1\n").unwrap();
        let ip = uninstrumented(&p).unwrap();
        let err = run_episode(&ip, &EnvConfig::default(), 10.0, 0).unwrap_err();
        assert_eq!(err, ExecError::NoVerdict);
    }

    #[test]
    fn busy_loop_diverges() {
        let p = parse_str("while True:\n    pass\n").unwrap();
        let ip = uninstrumented(&p).unwrap();
        let err = run_episode(&ip, &EnvConfig::default(), 10.0, 0).unwrap_err();
        assert!(matches!(err, ExecError::Divergence { .. }));
    }

    #[test]
    fn undefined_variable_reports_line() {
        let p = parse_str("x = 1\ny = z + 1\n").unwrap();
        let ip = uninstrumented(&p).unwrap();
        match run_episode(&ip, &EnvConfig::default(), 10.0, 0).unwrap_err() {
            ExecError::Runtime { line, .. } => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn string_arithmetic_is_a_fault() {
        let p = parse_str("x = 'a' * 2\n").unwrap();
        let ip = uninstrumented(&p).unwrap();
        assert!(matches!(
            run_episode(&ip, &EnvConfig::default(), 10.0, 0),
            Err(ExecError::Runtime { line: 1, .. })
        ));
    }

    #[test]
    fn empty_instrumentation_has_no_events() {
        let p = parse_str(SHUTTLE).unwrap();
        let ip = uninstrumented(&p).unwrap();
        let t = run_episode(&ip, &EnvConfig::default(), 10.0, 4).unwrap();
        assert!(t.events.is_empty());
    }

    #[test]
    fn stale_report_is_rejected() {
        let p = parse_str(SHUTTLE).unwrap();
        let r = taint_analyze(&p, "Odometry", "Velocity").unwrap();
        let edited = parse_str(&SHUTTLE.replace("vel = 5 * delta", "vel = 6 * delta")).unwrap();
        assert!(matches!(instrument(&edited, &r), Err(InstrumentError::Stale { line: 10, .. })));
    }

    #[test]
    fn seeds_are_spread() {
        assert_ne!(episode_seed(0, 0), episode_seed(0, 1));
        assert_ne!(episode_seed(0, 1), episode_seed(1, 0));
    }
}
