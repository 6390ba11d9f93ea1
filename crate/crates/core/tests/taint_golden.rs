use std::path::PathBuf;

use tarl::lang::{parse, SourceFile};
use tarl::taintflow::{build_flow_graph, find_sinks, find_sources, taint_analyze};

fn program(name: &str) -> tarl::lang::Program {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../programs").join(name);
    parse(&SourceFile::read(&path).unwrap()).unwrap()
}

fn squash(s: &str) -> String {
    s.chars().filter(|c| !c.is_whitespace()).collect()
}

fn lines(entries: &[tarl::taintflow::ReportEntry]) -> Vec<usize> {
    entries.iter().map(|e| e.line).collect()
}

#[test]
fn traveller_chain_matches_listing() {
    let report = taint_analyze(&program("traveller.mb"), "Odometry", "Velocity").unwrap();
    let expected = [
        ("if __name__ == '__main__'", 33),
        ("data=Odometry", 36),
        ("pos=data.pose.pose.position", 22),
        ("while True", 38),
        ("delta=goal - pos", 28),
        ("vel=5*delta", 30),
        ("vout.publish(vel)", 31),
    ];
    assert_eq!(report.chain.len(), expected.len());
    for (got, (text, line)) in report.chain.iter().zip(expected) {
        assert_eq!(squash(&got.text), squash(text));
        assert_eq!(got.line, line);
    }
    assert_eq!(lines(&report.instrumented), vec![33, 36, 22, 38, 27, 28, 29, 30, 31]);
    let texts: Vec<&str> = report.instrumented.iter().map(|e| e.text.as_str()).collect();
    assert!(texts.contains(&"err = abs(delta)"));
    assert!(texts.contains(&"while err > Epsilon"));
}

#[test]
fn swapped_lines_follow_source_order() {
    let report = taint_analyze(&program("traveller_swapped.mb"), "Odometry", "Velocity").unwrap();
    assert_eq!(lines(&report.instrumented), vec![33, 36, 22, 38, 27, 28, 29, 30, 31]);
    assert_eq!(report.instrumented[6].text, "vel = 5 * delta");
    assert_eq!(report.instrumented[7].text, "err = abs(delta)");
    assert_eq!(lines(&report.chain), vec![33, 36, 22, 38, 28, 29, 31]);
}

#[test]
fn travel_body_is_inlined_at_both_call_sites() {
    let g = build_flow_graph(&program("traveller.mb")).unwrap();
    let publishes = g.nodes.iter().filter(|n| n.line == 31).count();
    assert_eq!(publishes, 2);
}

#[test]
fn sources_and_sinks() {
    let p = program("traveller.mb");
    let sources = find_sources(&p);
    assert_eq!(sources.len(), 1);
    assert_eq!(sources[0].topic, "Odometry");
    assert_eq!(sources[0].callback, "callback");
    assert_eq!(sources[0].param.as_deref(), Some("data"));
    let sinks = find_sinks(&p).unwrap();
    assert_eq!(sinks.len(), 1);
    assert_eq!(sinks[0].0, "Velocity");
    assert_eq!(sinks[0].1.line, 31);
}

#[test]
fn report_is_deterministic() {
    let a = taint_analyze(&program("traveller.mb"), "Odometry", "Velocity").unwrap().to_json();
    let b = taint_analyze(&program("traveller.mb"), "Odometry", "Velocity").unwrap().to_json();
    assert_eq!(a, b);
}
