//! Control-flow graph construction and sensor-to-actuator taint tracking.
//!
//! The graph is built by walking the program from the top, linking each
//! subscriber callback at its registration site and inlining every called
//! function body at its call site, so a function called twice appears twice.
//! Node ids follow creation order, which is also the order in which
//! statements first execute.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lang::{function_locals, statement_text, Expr, Program, Stmt, StmtKind, Target};

pub type NodeId = usize;

/// A variable after scope resolution. `scope` is the inlined call instance
/// for function locals and `None` for globals.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var {
    pub scope: Option<usize>,
    pub name: String,
}

impl Var {
    fn global(name: &str) -> Self {
        Var {
            scope: None,
            name: name.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum NodeKind {
    Statement,
    /// The point where a subscriber callback receives a message: its first
    /// parameter is bound to the topic's data.
    SourceBinding { topic: String, param: String },
}

#[derive(Debug, Clone, PartialEq)]
struct Assignment {
    target: Var,
    sources: BTreeSet<Var>,
    /// Plain identifier targets overwrite; attribute targets only add.
    strong: bool,
}

#[derive(Debug, Clone, PartialEq)]
enum HandleSource {
    Topic(String),
    Copy(Var),
}

#[derive(Debug, Clone)]
pub struct FlowNode {
    pub line: usize,
    pub text: String,
    pub kind: NodeKind,
    pub defs: Vec<Var>,
    pub uses: Vec<Var>,
    /// Compound statements and call sites enclosing this node, outermost first.
    pub enclosing: Vec<NodeId>,
    pub is_loop: bool,
    pub is_entry_guard: bool,
    assigns: Vec<Assignment>,
    test: Option<BTreeSet<Var>>,
    publish: Option<(Var, BTreeSet<Var>)>,
    handles: Vec<(Var, HandleSource)>,
}

#[derive(Debug, Clone)]
pub struct FlowGraph {
    pub nodes: Vec<FlowNode>,
    pub succ: Vec<Vec<NodeId>>,
}

impl FlowGraph {
    pub fn preds(&self) -> Vec<Vec<NodeId>> {
        let mut preds = vec![Vec::new(); self.nodes.len()];
        for (a, outs) in self.succ.iter().enumerate() {
            for &b in outs {
                preds[b].push(a);
            }
        }
        preds
    }

    /// Nodes that publish, with the topics their handle may refer to.
    pub fn publish_topics(&self) -> Vec<(NodeId, BTreeSet<String>)> {
        let topics = self.resolve_handles();
        self.nodes
            .iter()
            .enumerate()
            .filter_map(|(i, n)| {
                let (h, _) = n.publish.as_ref()?;
                Some((i, topics.get(h).cloned().unwrap_or_default()))
            })
            .collect()
    }

    /// Flow-insensitive resolution of which topics each variable may hold a
    /// publisher handle for.
    fn resolve_handles(&self) -> BTreeMap<Var, BTreeSet<String>> {
        let mut map: BTreeMap<Var, BTreeSet<String>> = BTreeMap::new();
        loop {
            let mut changed = false;
            for n in &self.nodes {
                for (var, src) in &n.handles {
                    let add: BTreeSet<String> = match src {
                        HandleSource::Topic(t) => [t.clone()].into(),
                        HandleSource::Copy(v) => map.get(v).cloned().unwrap_or_default(),
                    };
                    let entry = map.entry(var.clone()).or_default();
                    for t in add {
                        changed |= entry.insert(t);
                    }
                }
            }
            if !changed {
                return map;
            }
        }
    }

    fn reach(&self, start: &[NodeId], edges: &[Vec<NodeId>]) -> Vec<bool> {
        let mut seen = vec![false; self.nodes.len()];
        let mut stack: Vec<NodeId> = start.to_vec();
        while let Some(n) = stack.pop() {
            if std::mem::replace(&mut seen[n], true) {
                continue;
            }
            stack.extend(edges[n].iter().copied());
        }
        seen
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AnalysisError {
    #[error("line {line}: call to undefined function `{name}`")]
    UndefinedFunction { name: String, line: usize },
    #[error("line {line}: recursive call to `{name}` cannot be inlined")]
    RecursiveCall { name: String, line: usize },
    #[error("topic {topic} is published from more than one statement (lines {lines:?})")]
    DuplicateSink { topic: String, lines: Vec<usize> },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("no taint flow from {source_topic} to {sink_topic}: {reason}")]
pub struct NoFlowError {
    pub source_topic: String,
    pub sink_topic: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TaintError {
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error(transparent)]
    NoFlow(#[from] NoFlowError),
}

const BUILTIN_CALLS: &[&str] = &["abs", "rospy.init_node", "rospy.Subscriber", "rospy.Publisher"];

fn is_builtin_call(callee: &[String]) -> bool {
    let joined = callee.join(".");
    BUILTIN_CALLS.contains(&joined.as_str()) || (callee.len() > 1 && callee.last().unwrap() == "publish")
}

/// Name of a topic argument: a bare identifier, dotted path or string.
pub fn topic_name(e: &Expr) -> Option<String> {
    match e {
        Expr::Ident(n) => Some(n.clone()),
        Expr::Attr(p) => Some(p.join(".")),
        Expr::Str(s) => Some(s.clone()),
        _ => None,
    }
}

/// `(topic, callback name)` if the expression is a subscriber registration.
pub fn as_subscriber(e: &Expr) -> Option<(String, String)> {
    let (callee, args) = e.as_call()?;
    if callee != ["rospy", "Subscriber"] || args.len() < 2 {
        return None;
    }
    let cb = match &args[1] {
        Expr::Ident(n) => n.clone(),
        _ => return None,
    };
    Some((topic_name(&args[0])?, cb))
}

pub fn as_publisher(e: &Expr) -> Option<String> {
    let (callee, args) = e.as_call()?;
    if callee != ["rospy", "Publisher"] {
        return None;
    }
    topic_name(args.first()?)
}

struct Scope {
    instance: Option<usize>,
    locals: BTreeSet<String>,
}

impl Scope {
    fn module() -> Self {
        Scope {
            instance: None,
            locals: BTreeSet::new(),
        }
    }

    fn resolve(&self, name: &str) -> Var {
        if self.locals.contains(name) {
            Var {
                scope: self.instance,
                name: name.to_string(),
            }
        } else {
            Var::global(name)
        }
    }
}

struct Builder<'p> {
    funcs: HashMap<&'p str, (&'p [String], &'p [Stmt])>,
    nodes: Vec<FlowNode>,
    succ: Vec<Vec<NodeId>>,
    instances: usize,
    call_stack: Vec<String>,
    enclosing: Vec<NodeId>,
    inlined: BTreeSet<String>,
}

impl<'p> Builder<'p> {
    fn add(&mut self, line: usize, text: String, kind: NodeKind, preds: &[NodeId]) -> NodeId {
        let id = self.nodes.len();
        self.nodes.push(FlowNode {
            line,
            text,
            kind,
            defs: Vec::new(),
            uses: Vec::new(),
            enclosing: self.enclosing.clone(),
            is_loop: false,
            is_entry_guard: false,
            assigns: Vec::new(),
            test: None,
            publish: None,
            handles: Vec::new(),
        });
        self.succ.push(Vec::new());
        for &p in preds {
            self.succ[p].push(id);
        }
        id
    }

    fn reads(scope: &Scope, e: &Expr) -> BTreeSet<Var> {
        e.read_roots().iter().map(|n| scope.resolve(n)).collect()
    }

    fn block(&mut self, stmts: &'p [Stmt], scope: &Scope, preds: Vec<NodeId>) -> Result<Vec<NodeId>, AnalysisError> {
        let mut exits = preds;
        for s in stmts {
            exits = self.stmt(s, scope, exits)?;
        }
        Ok(exits)
    }

    fn stmt(&mut self, s: &'p Stmt, scope: &Scope, preds: Vec<NodeId>) -> Result<Vec<NodeId>, AnalysisError> {
        let text = statement_text(s);
        match &s.kind {
            StmtKind::While { cond, body } => {
                let id = self.add(s.line, text, NodeKind::Statement, &preds);
                let reads = Self::reads(scope, cond);
                self.nodes[id].uses = reads.iter().cloned().collect();
                self.nodes[id].test = Some(reads);
                self.nodes[id].is_loop = true;
                self.enclosing.push(id);
                let body_exits = self.block(body, scope, vec![id])?;
                self.enclosing.pop();
                for b in body_exits {
                    self.succ[b].push(id);
                }
                Ok(vec![id])
            }
            StmtKind::If { cond, body, orelse } => {
                let id = self.add(s.line, text, NodeKind::Statement, &preds);
                let reads = Self::reads(scope, cond);
                self.nodes[id].uses = reads.iter().cloned().collect();
                self.nodes[id].test = Some(reads);
                self.nodes[id].is_entry_guard = crate::lang::is_main_guard(s) && scope.instance.is_none();
                self.enclosing.push(id);
                let mut exits = self.block(body, scope, vec![id])?;
                if orelse.is_empty() {
                    exits.push(id);
                } else {
                    exits.extend(self.block(orelse, scope, vec![id])?);
                }
                self.enclosing.pop();
                Ok(exits)
            }
            StmtKind::TryExcept { body, handler, .. } => {
                let id = self.add(s.line, text, NodeKind::Statement, &preds);
                self.enclosing.push(id);
                let mut exits = self.block(body, scope, vec![id])?;
                exits.extend(self.block(handler, scope, vec![id])?);
                self.enclosing.pop();
                Ok(exits)
            }
            StmtKind::FuncDef { .. } | StmtKind::Global(_) | StmtKind::Pass => {
                Ok(vec![self.add(s.line, text, NodeKind::Statement, &preds)])
            }
            StmtKind::Assign { .. } | StmtKind::MultiAssign { .. } | StmtKind::Expr(_) => {
                self.simple(s, text, scope, preds)
            }
        }
    }

    fn simple(&mut self, s: &'p Stmt, text: String, scope: &Scope, preds: Vec<NodeId>) -> Result<Vec<NodeId>, AnalysisError> {
        let id = self.add(s.line, text, NodeKind::Statement, &preds);
        let pairs: Vec<(&Target, &Expr)> = match &s.kind {
            StmtKind::Assign { target, value } => vec![(target, value)],
            StmtKind::MultiAssign { targets, values } => targets.iter().zip(values).collect(),
            _ => Vec::new(),
        };
        let mut uses = BTreeSet::new();
        for e in s.own_exprs() {
            uses.extend(Self::reads(scope, e));
        }
        for (target, value) in pairs {
            let var = scope.resolve(target.root());
            let sources = Self::reads(scope, value);
            if let Some(topic) = as_publisher(value) {
                self.nodes[id].handles.push((var.clone(), HandleSource::Topic(topic)));
            } else if let Expr::Ident(n) = value {
                self.nodes[id].handles.push((var.clone(), HandleSource::Copy(scope.resolve(n))));
            }
            self.nodes[id].defs.push(var.clone());
            self.nodes[id].assigns.push(Assignment {
                target: var,
                sources,
                strong: matches!(target, Target::Ident(_)),
            });
        }
        if let StmtKind::Expr(Expr::Call { callee, args, .. }) = &s.kind {
            if callee.len() > 1 && callee.last().unwrap() == "publish" {
                let handle = scope.resolve(&callee[0]);
                let mut data = BTreeSet::new();
                for a in args {
                    data.extend(Self::reads(scope, a));
                }
                self.nodes[id].publish = Some((handle, data));
            }
        }
        self.nodes[id].uses = uses.into_iter().collect();

        // Calls nested in the statement's expressions, left to right.
        let mut calls: Vec<&'p Expr> = Vec::new();
        for e in s.own_exprs() {
            e.walk(&mut |x| {
                if matches!(x, Expr::Call { .. }) {
                    calls.push(x);
                }
            });
        }
        let mut exits = vec![id];
        self.enclosing.push(id);
        for call in calls {
            let Expr::Call { callee, args, .. } = call else { unreachable!() };
            if let Some((topic, cb)) = as_subscriber(call) {
                let (params, body) = self.lookup(&cb, s.line)?;
                let param = params.first().cloned().unwrap_or_else(|| "data".to_string());
                let inner = self.enter(params, body);
                let bind = self.add(
                    s.line,
                    format!("{param} = {topic}"),
                    NodeKind::SourceBinding {
                        topic,
                        param: param.clone(),
                    },
                    &exits,
                );
                let pvar = inner.resolve(&param);
                self.nodes[bind].defs.push(pvar.clone());
                self.nodes[bind].assigns.push(Assignment {
                    target: pvar,
                    sources: BTreeSet::new(),
                    strong: true,
                });
                exits = self.inline(&cb, body, &inner, vec![bind], s.line)?;
                continue;
            }
            if is_builtin_call(callee) {
                continue;
            }
            let name = callee.join(".");
            let (params, body) = self.lookup(&name, s.line)?;
            let inner = self.enter(params, body);
            for (p, a) in params.iter().zip(args) {
                let pvar = inner.resolve(p);
                if let Expr::Ident(n) = a {
                    self.nodes[id].handles.push((pvar.clone(), HandleSource::Copy(scope.resolve(n))));
                }
                self.nodes[id].defs.push(pvar.clone());
                self.nodes[id].assigns.push(Assignment {
                    target: pvar,
                    sources: Self::reads(scope, a),
                    strong: true,
                });
            }
            exits = self.inline(&name, body, &inner, exits, s.line)?;
        }
        self.enclosing.pop();
        Ok(exits)
    }

    fn lookup(&self, name: &str, line: usize) -> Result<(&'p [String], &'p [Stmt]), AnalysisError> {
        self.funcs
            .get(name)
            .copied()
            .ok_or_else(|| AnalysisError::UndefinedFunction {
                name: name.to_string(),
                line,
            })
    }

    fn enter(&mut self, params: &[String], body: &[Stmt]) -> Scope {
        self.instances += 1;
        Scope {
            instance: Some(self.instances),
            locals: function_locals(params, body),
        }
    }

    fn inline(&mut self, name: &str, body: &'p [Stmt], scope: &Scope, preds: Vec<NodeId>, line: usize) -> Result<Vec<NodeId>, AnalysisError> {
        if self.call_stack.iter().any(|c| c == name) {
            return Err(AnalysisError::RecursiveCall {
                name: name.to_string(),
                line,
            });
        }
        self.call_stack.push(name.to_string());
        self.inlined.insert(name.to_string());
        let exits = self.block(body, scope, preds);
        self.call_stack.pop();
        exits
    }
}

/// Builds the inlined control-flow graph. Function bodies that are never
/// called or registered are appended as unreachable fragments so that every
/// statement has at least one node.
pub fn build_flow_graph(program: &Program) -> Result<FlowGraph, AnalysisError> {
    let mut funcs = HashMap::new();
    for (name, params, body) in program.functions() {
        funcs.insert(name, (params, body));
    }
    let mut b = Builder {
        funcs,
        nodes: Vec::new(),
        succ: Vec::new(),
        instances: 0,
        call_stack: Vec::new(),
        enclosing: Vec::new(),
        inlined: BTreeSet::new(),
    };
    b.block(&program.statements, &Scope::module(), Vec::new())?;
    for (name, params, body) in program.functions() {
        if !b.inlined.contains(name) {
            let scope = b.enter(params, body);
            b.inline(name, body, &scope, Vec::new(), 0)?;
        }
    }
    Ok(FlowGraph {
        nodes: b.nodes,
        succ: b.succ,
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SourceSite {
    pub topic: String,
    pub callback: String,
    /// The callback's first parameter, if the callback is defined.
    pub param: Option<String>,
    pub line: usize,
}

pub fn find_sources(program: &Program) -> Vec<SourceSite> {
    let funcs: HashMap<&str, &[String]> = program.functions().into_iter().map(|(n, p, _)| (n, p)).collect();
    let mut out = Vec::new();
    for s in program.all_statements() {
        for e in s.own_exprs() {
            e.walk(&mut |x| {
                if let Some((topic, callback)) = as_subscriber(x) {
                    let param = funcs.get(callback.as_str()).and_then(|p| p.first().cloned());
                    out.push(SourceSite {
                        topic,
                        callback,
                        param,
                        line: s.line,
                    });
                }
            });
        }
    }
    out
}

/// Publish statements with the topic their handle resolves to, in source
/// order. A statement reachable with several handles is listed once per topic.
pub fn find_sinks(program: &Program) -> Result<Vec<(String, &Stmt)>, AnalysisError> {
    let graph = build_flow_graph(program)?;
    let mut seen = BTreeSet::new();
    for (id, topics) in graph.publish_topics() {
        for t in topics {
            seen.insert((graph.nodes[id].line, t));
        }
    }
    Ok(seen
        .into_iter()
        .filter_map(|(line, t)| program.find_line(line).map(|s| (t, s)))
        .collect())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportEntry {
    pub text: String,
    pub line: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaintReport {
    pub source_topic: String,
    pub sink_topic: String,
    pub chain: Vec<ReportEntry>,
    pub instrumented: Vec<ReportEntry>,
}

impl TaintReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn sink(&self) -> Option<&ReportEntry> {
        self.chain.last()
    }
}

type VarSet = BTreeSet<Var>;

fn taint_fixpoint(graph: &FlowGraph, preds: &[Vec<NodeId>], source_topic: &str) -> Vec<VarSet> {
    let n = graph.nodes.len();
    let mut inn: Vec<VarSet> = vec![VarSet::new(); n];
    let mut out: Vec<VarSet> = vec![VarSet::new(); n];
    let mut dirty = vec![true; n];
    let mut any = true;
    while any {
        any = false;
        for i in 0..n {
            if !dirty[i] {
                continue;
            }
            dirty[i] = false;
            let mut s = VarSet::new();
            for &p in &preds[i] {
                s.extend(out[p].iter().cloned());
            }
            let node = &graph.nodes[i];
            let mut o = s.clone();
            let seeded = matches!(&node.kind, NodeKind::SourceBinding { topic, .. } if topic == source_topic);
            for a in &node.assigns {
                if seeded || a.sources.iter().any(|v| s.contains(v)) {
                    o.insert(a.target.clone());
                } else if a.strong {
                    o.remove(&a.target);
                }
            }
            inn[i] = s;
            if o != out[i] {
                out[i] = o;
                for &q in &graph.succ[i] {
                    dirty[q] = true;
                    any = true;
                }
            }
        }
    }
    inn
}

type DefSet = BTreeSet<(Var, NodeId)>;

fn reaching_defs(graph: &FlowGraph, preds: &[Vec<NodeId>]) -> Vec<DefSet> {
    let n = graph.nodes.len();
    let mut inn: Vec<DefSet> = vec![DefSet::new(); n];
    let mut out: Vec<DefSet> = vec![DefSet::new(); n];
    let mut dirty = vec![true; n];
    let mut any = true;
    while any {
        any = false;
        for i in 0..n {
            if !dirty[i] {
                continue;
            }
            dirty[i] = false;
            let mut s = DefSet::new();
            for &p in &preds[i] {
                s.extend(out[p].iter().cloned());
            }
            let mut o = s.clone();
            for a in &graph.nodes[i].assigns {
                if a.strong {
                    o.retain(|(v, _)| v != &a.target);
                }
            }
            for a in &graph.nodes[i].assigns {
                o.insert((a.target.clone(), i));
            }
            inn[i] = s;
            if o != out[i] {
                out[i] = o;
                for &q in &graph.succ[i] {
                    dirty[q] = true;
                    any = true;
                }
            }
        }
    }
    inn
}

/// Extracts the display chain and the instrumentation set for one
/// source/sink topic pair.
pub fn taint_analyze(program: &Program, source_topic: &str, sink_topic: &str) -> Result<TaintReport, TaintError> {
    let graph = build_flow_graph(program)?;
    let no_flow = |reason: &str| NoFlowError {
        source_topic: source_topic.to_string(),
        sink_topic: sink_topic.to_string(),
        reason: reason.to_string(),
    };

    let sinks: Vec<NodeId> = graph
        .publish_topics()
        .into_iter()
        .filter(|(_, t)| t.contains(sink_topic))
        .map(|(i, _)| i)
        .collect();
    let sink_lines: BTreeSet<usize> = sinks.iter().map(|&i| graph.nodes[i].line).collect();
    if sink_lines.len() > 1 {
        return Err(AnalysisError::DuplicateSink {
            topic: sink_topic.to_string(),
            lines: sink_lines.into_iter().collect(),
        }
        .into());
    }
    if sinks.is_empty() {
        return Err(no_flow("no statement publishes to the sink topic").into());
    }
    let bindings: Vec<NodeId> = (0..graph.nodes.len())
        .filter(|&i| matches!(&graph.nodes[i].kind, NodeKind::SourceBinding { topic, .. } if topic == source_topic))
        .collect();
    if bindings.is_empty() {
        return Err(no_flow("no subscriber reads the source topic").into());
    }

    let preds = graph.preds();
    let taint_in = taint_fixpoint(&graph, &preds, source_topic);
    let tainted_sinks: Vec<NodeId> = sinks
        .iter()
        .copied()
        .filter(|&i| {
            let (_, data) = graph.nodes[i].publish.as_ref().unwrap();
            data.iter().any(|v| taint_in[i].contains(v))
        })
        .collect();
    if tainted_sinks.is_empty() {
        return Err(no_flow("published values never depend on the source").into());
    }

    let from_source = graph.reach(&bindings, &graph.succ);
    let to_sink = graph.reach(&tainted_sinks, &preds);
    let on_path = |i: NodeId| from_source[i] && to_sink[i];

    let tainted_node = |i: NodeId| -> bool {
        let node = &graph.nodes[i];
        let s = &taint_in[i];
        if matches!(&node.kind, NodeKind::SourceBinding { topic, .. } if topic == source_topic) {
            return true;
        }
        node.assigns.iter().any(|a| a.sources.iter().any(|v| s.contains(v)))
            || node.test.as_ref().is_some_and(|t| t.iter().any(|v| s.contains(v)))
            || node.publish.as_ref().is_some_and(|(_, d)| d.iter().any(|v| s.contains(v)))
    };

    // Display chain.
    let mut chain: BTreeSet<NodeId> = BTreeSet::new();
    for &sink in &tainted_sinks {
        chain.insert(sink);
        let enc = &graph.nodes[sink].enclosing;
        if let Some(&g) = enc.iter().find(|&&e| graph.nodes[e].is_entry_guard) {
            chain.insert(g);
        }
        if let Some(&l) = enc.iter().find(|&&e| graph.nodes[e].is_loop) {
            chain.insert(l);
        }
    }
    for &b in &bindings {
        if on_path(b) {
            chain.insert(b);
        }
    }
    let rd = reaching_defs(&graph, &preds);
    let mut work: Vec<(NodeId, Var)> = Vec::new();
    for &sink in &tainted_sinks {
        let (_, data) = graph.nodes[sink].publish.as_ref().unwrap();
        work.extend(data.iter().map(|v| (sink, v.clone())));
    }
    let mut visited = BTreeSet::new();
    while let Some((at, var)) = work.pop() {
        if !visited.insert((at, var.clone())) {
            continue;
        }
        for (v, def) in rd[at].iter() {
            if v != &var {
                continue;
            }
            let node = &graph.nodes[*def];
            let s = &taint_in[*def];
            for a in node.assigns.iter().filter(|a| &a.target == v) {
                let binding = matches!(node.kind, NodeKind::SourceBinding { .. });
                if binding || a.sources.iter().any(|x| s.contains(x)) {
                    chain.insert(*def);
                    work.extend(a.sources.iter().map(|x| (*def, x.clone())));
                }
            }
        }
    }

    let instrumented: BTreeSet<NodeId> = (0..graph.nodes.len())
        .filter(|&i| on_path(i) && tainted_node(i))
        .chain(chain.iter().copied())
        .collect();

    // Order every line by the first node created for it.
    let mut first: BTreeMap<usize, NodeId> = BTreeMap::new();
    for (i, n) in graph.nodes.iter().enumerate() {
        first.entry(n.line).or_insert(i);
    }
    let entries = |ids: &BTreeSet<NodeId>| -> Vec<ReportEntry> {
        let mut by_line: BTreeMap<usize, NodeId> = BTreeMap::new();
        for &i in ids {
            let e = by_line.entry(graph.nodes[i].line).or_insert(i);
            if i < *e {
                *e = i;
            }
        }
        let mut v: Vec<(NodeId, ReportEntry)> = by_line
            .into_iter()
            .map(|(line, i)| {
                (
                    first[&line],
                    ReportEntry {
                        text: graph.nodes[i].text.clone(),
                        line,
                    },
                )
            })
            .collect();
        v.sort_by_key(|(k, _)| *k);
        v.into_iter().map(|(_, e)| e).collect()
    };

    let mut chain_entries = entries(&chain);
    // The sink closes the chain even when a loop header shares its order key.
    let sink_line = graph.nodes[tainted_sinks[0]].line;
    if let Some(pos) = chain_entries.iter().position(|e| e.line == sink_line) {
        let e = chain_entries.remove(pos);
        chain_entries.push(e);
    }
    Ok(TaintReport {
        source_topic: source_topic.to_string(),
        sink_topic: sink_topic.to_string(),
        chain: chain_entries,
        instrumented: entries(&instrumented),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lang::parse_str;

    #[test]
    fn single_statement_graph() {
        let g = build_flow_graph(&parse_str("x = 1\n").unwrap()).unwrap();
        assert_eq!(g.nodes.len(), 1);
        assert!(g.succ[0].is_empty());
    }

    #[test]
    fn undefined_callee() {
        let err = build_flow_graph(&parse_str("foo()\n").unwrap()).unwrap_err();
        assert!(matches!(err, AnalysisError::UndefinedFunction { .. }));
    }

    #[test]
    fn recursion_is_rejected() {
        let p = parse_str("def f(x):\n    f(x)\nf(1)\n").unwrap();
        assert!(matches!(build_flow_graph(&p), Err(AnalysisError::RecursiveCall { .. })));
    }

    #[test]
    fn no_subscriber_means_no_sources() {
        assert!(find_sources(&parse_str("x = 1\n").unwrap()).is_empty());
    }

    #[test]
    fn two_sources_in_order() {
        let src = "def a(m):\n    pass\ndef b(n):\n    pass\nrospy.Subscriber(Odometry, a)\nrospy.Subscriber(Terrain, b)\n";
        let s = find_sources(&parse_str(src).unwrap());
        assert_eq!(s.len(), 2);
        assert_eq!((s[0].topic.as_str(), s[0].param.as_deref()), ("Odometry", Some("m")));
        assert_eq!((s[1].topic.as_str(), s[1].param.as_deref()), ("Terrain", Some("n")));
    }

    #[test]
    fn no_publisher_means_no_sinks() {
        assert!(find_sinks(&parse_str("x = 1\n").unwrap()).unwrap().is_empty());
    }

    #[test]
    fn untainted_publish_is_no_flow() {
        let src = "def cb(d):\n    y = d\nrospy.Subscriber(Odometry, cb)\np = rospy.Publisher(Velocity, Twist, 10)\np.publish(3)\n";
        let err = taint_analyze(&parse_str(src).unwrap(), "Odometry", "Velocity").unwrap_err();
        assert!(matches!(err, TaintError::NoFlow(_)));
    }

    #[test]
    fn duplicate_sink_is_rejected() {
        let src = "def cb(d):\n    global y\n    y = d\nrospy.Subscriber(Odometry, cb)\np = rospy.Publisher(Velocity, Twist, 10)\np.publish(y)\np.publish(y)\n";
        let err = taint_analyze(&parse_str(src).unwrap(), "Odometry", "Velocity").unwrap_err();
        assert!(matches!(err, TaintError::Analysis(AnalysisError::DuplicateSink { .. })));
    }

    #[test]
    fn overwritten_value_loses_taint() {
        let src = "def cb(d):\n    global y\n    y = d\n    y = 2\nrospy.Subscriber(Odometry, cb)\np = rospy.Publisher(Velocity, Twist, 10)\np.publish(y)\n";
        let err = taint_analyze(&parse_str(src).unwrap(), "Odometry", "Velocity").unwrap_err();
        assert!(matches!(err, TaintError::NoFlow(_)));
    }
}
