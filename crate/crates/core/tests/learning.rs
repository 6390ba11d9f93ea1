use std::collections::HashMap;
use std::path::PathBuf;

use proptest::prelude::*;
use tarl::executor::{episode_seed, instrument, run_episode, InstrumentedProgram};
use tarl::faultloc::{diff_map, locate_culprit, max_diff_region, utility_slice};
use tarl::lang::{parse, SourceFile};
use tarl::sarsa::{learn, td_update, utility_bound, LearnParams, State, UtilityTable};
use tarl::taintflow::taint_analyze;
use tarl::world::{EnvConfig, Environment};

fn traveller() -> InstrumentedProgram {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../programs/traveller.mb");
    let p = parse(&SourceFile::read(&path).unwrap()).unwrap();
    let report = taint_analyze(&p, "Odometry", "Velocity").unwrap();
    instrument(&p, &report).unwrap()
}

fn st(n: usize) -> State {
    State { m: 0, p: 0, n }
}

#[test]
fn three_state_chain_reaches_fixed_point() {
    let (gamma, r) = (0.9, 100.0);
    // Fixed point by value iteration: V2 = r, Vi = γ·V(i+1).
    let mut oracle = [0.0f64; 3];
    loop {
        let next = [gamma * oracle[1], gamma * oracle[2], r];
        let change = next.iter().zip(&oracle).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        oracle = next;
        if change < 1e-12 {
            break;
        }
    }
    assert_eq!(oracle, [81.0, 90.0, 100.0]);

    let mut t = UtilityTable::new(1, vec![1, 2, 3]);
    for _ in 0..2000 {
        td_update(&mut t, st(0), 0.0, 0.0, 0.0, Some(st(1)), 0.1, gamma, 0.0);
        td_update(&mut t, st(1), 0.0, 0.0, 0.0, Some(st(2)), 0.1, gamma, 0.0);
        td_update(&mut t, st(2), 0.0, r, r, None, 0.1, gamma, 0.0);
    }
    for (n, want) in oracle.iter().enumerate() {
        assert!((t.get(0, 0, n) - want).abs() < 1e-6, "{n}: {}", t.get(0, 0, n));
    }
}

#[test]
fn no_flow_term_is_plain_td0() {
    let ip = traveller();
    let config = EnvConfig::default();
    let params = LearnParams {
        kappa: 0.0,
        episodes: 60,
        seed: 9,
        ..LearnParams::default()
    };
    let (table, _) = learn(&ip, &config, &params).unwrap();

    let mut q: HashMap<(u8, usize, usize), f64> = HashMap::new();
    for e in 0..params.episodes {
        let trace = run_episode(&ip, &config, config.g2, episode_seed(params.seed, e as u64)).unwrap();
        let n = trace.events.len();
        for i in 0..n {
            let ev = trace.events[i];
            let key = (ev.m, ev.p, ev.stmt_index);
            let mut target = trace.step_rewards[i];
            if i + 1 == n {
                target += trace.verdict.reward_total;
            } else {
                let nx = trace.events[i + 1];
                target += params.gamma * q.get(&(nx.m, nx.p, nx.stmt_index)).copied().unwrap_or(0.0);
            }
            let cur = q.entry(key).or_insert(0.0);
            *cur += params.alpha * (target - *cur);
        }
    }
    for m in 0..2u8 {
        for p in 0..table.bins {
            for n in 0..table.lines_len() {
                let want = q.get(&(m, p, n)).copied().unwrap_or(0.0);
                assert_eq!(table.get(m as usize, p, n).to_bits(), want.to_bits(), "({m},{p},{n})");
            }
        }
    }
}

#[test]
fn learning_is_deterministic() {
    let ip = traveller();
    let config = EnvConfig::default();
    let params = LearnParams {
        episodes: 100,
        seed: 4,
        ..LearnParams::default()
    };
    let (a, sa) = learn(&ip, &config, &params).unwrap();
    let (b, sb) = learn(&ip, &config, &params).unwrap();
    assert_eq!(a.to_csv_string().unwrap(), b.to_csv_string().unwrap());
    assert_eq!(sa, sb);
}

#[test]
fn learned_tables_stay_bounded() {
    let ip = traveller();
    for env in [Environment::Offline, Environment::Online] {
        let config = EnvConfig {
            step_penalty: -1.0,
            ..EnvConfig::default()
        }
        .for_env(env);
        let params = LearnParams {
            episodes: 200,
            kappa: 2.0,
            ..LearnParams::default()
        };
        let (t, _) = learn(&ip, &config, &params).unwrap();
        assert!(t.max_abs() <= utility_bound(&config, &params));
    }
}

fn step() -> impl Strategy<Value = (usize, f64, f64, f64, bool)> {
    (0usize..4, -1e6f64..1e6, -1.0f64..=1.0, -1.0f64..=1.0, any::<bool>())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn utility_bound_holds_after_every_update(
        steps in prop::collection::vec(step(), 1..300),
        alpha in 0.01f64..=1.0,
        gamma in 0.0f64..0.99,
        kappa in 0.0f64..3.0,
        penalty in -5.0f64..=0.0,
    ) {
        let config = EnvConfig { step_penalty: penalty, ..EnvConfig::default() };
        let params = LearnParams { alpha, gamma, kappa, ..LearnParams::default() };
        let bound = utility_bound(&config, &params);
        let r_max = config.reward_bound();
        let mut t = UtilityTable::new(1, vec![1, 2, 3, 4]);
        for (n, v, r_frac, ep_frac, terminal) in steps {
            t.flow_norm = t.flow_norm.max(v.abs());
            let next = (!terminal).then(|| st((n + 1) % 4));
            td_update(&mut t, st(n), v, r_frac * r_max, ep_frac * r_max, next, alpha, gamma, kappa);
            prop_assert!(t.max_abs() <= bound * (1.0 + 1e-12), "{} > {}", t.max_abs(), bound);
        }
    }
}

fn table(bins: usize, lines: usize) -> impl Strategy<Value = UtilityTable> {
    prop::collection::vec(-100.0f64..100.0, 2 * bins * lines).prop_map(move |vals| {
        let mut t = UtilityTable::new(bins, (1..=lines).map(|l| 10 + l).collect());
        let mut it = vals.into_iter();
        for m in 0..2 {
            for p in 0..bins {
                for n in 0..lines {
                    t.set(m, p, n, it.next().unwrap());
                }
            }
        }
        t
    })
}

fn pair() -> impl Strategy<Value = (UtilityTable, UtilityTable, UtilityTable)> {
    (2usize..7, 1usize..5).prop_flat_map(|(b, l)| (table(b, l), table(b, l), table(b, l)))
}

fn shifted(a: &UtilityTable, c: &UtilityTable) -> UtilityTable {
    let mut out = a.clone();
    for m in 0..2 {
        for p in 0..a.bins {
            for n in 0..a.lines_len() {
                out.set(m, p, n, a.get(m, p, n) + c.get(m, p, n));
            }
        }
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn difference_map_is_a_sum_of_line_differences((a, b, _) in pair()) {
        let d = diff_map(&a, &b).unwrap();
        for m in 0..2 {
            for p in 0..a.bins {
                let by_hand: f64 = (0..a.lines_len()).map(|n| (a.get(m, p, n) - b.get(m, p, n)).abs()).sum();
                prop_assert!((d.d[m][p] - by_hand).abs() <= 1e-9 * by_hand.max(1.0));
            }
        }
    }

    #[test]
    fn difference_map_scales_and_ignores_shifts((a, b, c) in pair(), k in 0.01f64..50.0, w in 1usize..4) {
        let d = diff_map(&a, &b).unwrap();
        let ds = diff_map(&a.scaled(k), &b.scaled(k)).unwrap();
        let dt = diff_map(&shifted(&a, &c), &shifted(&b, &c)).unwrap();
        for m in 0..2 {
            for p in 0..a.bins {
                prop_assert!((ds.d[m][p] - k * d.d[m][p]).abs() <= 1e-9 * (k * d.d[m][p]).max(1.0));
                prop_assert!((dt.d[m][p] - d.d[m][p]).abs() <= 1e-9 * d.d[m][p].max(1.0));
            }
        }
        // Scaling both tables by a positive constant leaves the argmax alone.
        let w = w.min(a.bins);
        let r = max_diff_region(&d, w);
        prop_assert_eq!(max_diff_region(&ds, w), r);
        let c0 = locate_culprit(&utility_slice(&a, &r), &utility_slice(&b, &r));
        let c1 = locate_culprit(&utility_slice(&a.scaled(k), &r), &utility_slice(&b.scaled(k), &r));
        prop_assert_eq!(c0.map(|c| c.line), c1.map(|c| c.line));
    }

    #[test]
    fn region_maximizes_window_sum((a, b, _) in pair(), w in 1usize..4) {
        let d = diff_map(&a, &b).unwrap();
        let w = w.min(a.bins);
        let r = max_diff_region(&d, w);
        let best: f64 = d.d[r.terrain as usize][r.p_lo..=r.p_hi].iter().sum();
        for m in 0..2 {
            for lo in 0..=a.bins - w {
                let s: f64 = d.d[m][lo..lo + w].iter().sum();
                prop_assert!(s <= best);
            }
        }
    }
}
