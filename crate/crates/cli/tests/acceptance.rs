//! Acceptance checks, one line per criterion. Exits nonzero if any fails.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use wfshap_core::analysis::ModelAttributionTable;
use wfshap_core::report::{parse_structured, ReportItem};
use wfshap_core::simulator::{synthesize_game, SyntheticGameSpec};
use wfshap_core::{
    shapley_exact, shapley_permutation, synergy_matrix, AttributionResult, Coalition, ComponentSet,
    EstimatorConfig, GameTable,
};

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures")
}

fn wfshap(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wfshap"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn random_game(n: usize, rng: &mut ChaCha8Rng) -> GameTable {
    GameTable::from_fn(ComponentSet::numbered(n).unwrap(), |_| rng.gen::<f64>()).unwrap()
}

/// Average marginal contribution over all n! orderings.
fn brute_force(game: &GameTable) -> Vec<f64> {
    fn walk(
        order: &mut Vec<usize>,
        used: u64,
        n: usize,
        game: &GameTable,
        acc: &mut [f64],
        count: &mut f64,
    ) {
        if order.len() == n {
            let mut c = Coalition::EMPTY;
            for &i in order.iter() {
                let before = game.value(c).unwrap();
                c = c.with(i);
                acc[i] += game.value(c).unwrap() - before;
            }
            *count += 1.0;
            return;
        }
        for i in 0..n {
            if used & (1 << i) == 0 {
                order.push(i);
                walk(order, used | (1 << i), n, game, acc, count);
                order.pop();
            }
        }
    }
    let n = game.n();
    let mut acc = vec![0.0; n];
    let mut count = 0.0;
    walk(&mut Vec::new(), 0, n, game, &mut acc, &mut count);
    acc.iter().map(|x| x / count).collect()
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

type CheckFn<'a> = Box<dyn Fn() -> Check + 'a>;

struct Check {
    pass: bool,
    detail: String,
}

fn within(budget: Duration, started: Instant, mut check: Check) -> Check {
    let elapsed = started.elapsed();
    if elapsed > budget {
        check.pass = false;
        check
            .detail
            .push_str(&format!("; runtime {elapsed:.2?} over {budget:?}"));
    } else {
        check.detail.push_str(&format!("; {elapsed:.2?}"));
    }
    check
}

fn efficiency_on_fixtures() -> Check {
    let started = Instant::now();
    let cases = [
        ("math.json", "Claude-3.5"),
        ("atp.json", "Claude-3.5"),
        ("operating_system.json", "Claude-3.5"),
        ("robot_cooperation.json", "Claude-3.5"),
        ("algebra.json", "Claude-3.5"),
    ];
    let mut worst: f64 = 0.0;
    let mut notes = Vec::new();
    let mut pass = true;
    for (file, candidate) in cases {
        let table = ModelAttributionTable::read(fixtures().join(file)).unwrap();
        let residual = table.rows[candidate].efficiency_residual().unwrap();
        worst = worst.max(residual);
        pass &= residual <= 0.005;
        notes.push(format!("{file}:{residual:.4}"));
    }
    within(
        Duration::from_secs(1),
        started,
        Check {
            pass,
            detail: format!("max residual {worst:.4} ({})", notes.join(" ")),
        },
    )
}

fn exact_matches_brute_force() -> Check {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    let games = 120;
    for g in 0..games {
        let n = 1 + g % 6;
        let game = random_game(n, &mut rng);
        let exact = shapley_exact(&game).unwrap();
        worst = worst.max(max_abs_diff(&exact.phi, &brute_force(&game)));
    }
    within(
        Duration::from_secs(10),
        started,
        Check {
            pass: worst <= 1e-12,
            detail: format!("{games} games, max deviation {worst:.2e}"),
        },
    )
}

fn axiom_suite() -> Check {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut eff, mut sym, mut dummy, mut add): (f64, f64, f64, f64) = (0.0, 0.0, 0.0, 0.0);
    let games = 100;
    for g in 0..games {
        let n = 2 + g % 7;
        let i = rng.gen_range(0..n);
        let j = (i + 1 + rng.gen_range(0..n - 1)) % n;
        let base = random_game(n, &mut rng);
        let other = random_game(n, &mut rng);

        let r = shapley_exact(&base).unwrap();
        eff = eff.max(r.efficiency_residual());

        // swapping i and j leaves the symmetrized game unchanged
        let swap = |c: Coalition| {
            let (hi, hj) = (c.contains(i), c.contains(j));
            let c = c.without(i).without(j);
            let c = if hi { c.with(j) } else { c };
            if hj {
                c.with(i)
            } else {
                c
            }
        };
        let symmetric = GameTable::from_fn(base.components().clone(), |c| {
            base.value(c).unwrap() + base.value(swap(c)).unwrap()
        })
        .unwrap();
        let rs = shapley_exact(&symmetric).unwrap();
        sym = sym.max((rs.phi[i] - rs.phi[j]).abs());

        let null = GameTable::from_fn(base.components().clone(), |c| {
            base.value(c.without(i)).unwrap()
        })
        .unwrap();
        dummy = dummy.max(shapley_exact(&null).unwrap().phi[i].abs());

        let sum = GameTable::from_fn(base.components().clone(), |c| {
            base.value(c).unwrap() + other.value(c).unwrap()
        })
        .unwrap();
        let lhs = shapley_exact(&sum).unwrap().phi;
        let rhs: Vec<f64> = r
            .phi
            .iter()
            .zip(&shapley_exact(&other).unwrap().phi)
            .map(|(a, b)| a + b)
            .collect();
        add = add.max(max_abs_diff(&lhs, &rhs));
    }
    within(
        Duration::from_secs(30),
        started,
        Check {
            pass: eff <= 1e-9 && sym <= 1e-9 && dummy <= 1e-9 && add <= 1e-9,
            detail: format!(
                "{games} games: efficiency {eff:.1e}, symmetry {sym:.1e}, dummy {dummy:.1e}, additivity {add:.1e}"
            ),
        },
    )
}

fn synergy_recovery() -> Check {
    let started = Instant::now();
    let mut exact_matches = 0;
    let mut worst_phi: f64 = 0.0;
    let specs = 50;
    for s in 0..specs {
        let n = 2 + s % 7;
        let spec = SyntheticGameSpec::random_clamp_free(n, 4000 + s as u64);
        let game = synthesize_game(&spec).unwrap();
        let m = synergy_matrix(&game.table).unwrap();
        if m.entries == spec.interactions {
            exact_matches += 1;
        }
        let exact = shapley_exact(&game.table).unwrap();
        worst_phi = worst_phi.max(max_abs_diff(
            &exact.phi,
            game.analytic_phi.as_ref().unwrap(),
        ));
    }
    within(
        Duration::from_secs(10),
        started,
        Check {
            pass: exact_matches == specs && worst_phi <= 1e-12,
            detail: format!(
                "{exact_matches}/{specs} synergy matrices exact, analytic phi deviation {worst_phi:.2e}"
            ),
        },
    )
}

fn estimator_soundness() -> Check {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let game = random_game(8, &mut rng);
    let exact = shapley_exact(&game).unwrap();
    let small = shapley_permutation(&game, &EstimatorConfig::permutation(20_000, 5)).unwrap();
    let large = shapley_permutation(&game, &EstimatorConfig::permutation(2_000_000, 5)).unwrap();
    let again = shapley_permutation(&game, &EstimatorConfig::permutation(20_000, 5)).unwrap();
    let e_small = max_abs_diff(&small.phi, &exact.phi);
    let e_large = max_abs_diff(&large.phi, &exact.phi);
    let ratio = e_small / e_large;
    let identical = small
        .phi
        .iter()
        .zip(&again.phi)
        .all(|(a, b)| a.to_bits() == b.to_bits());
    let accuracy = e_small <= 0.01;
    let shrink = (2.0..=5.0).contains(&ratio);
    within(
        Duration::from_secs(60),
        started,
        Check {
            pass: accuracy && shrink && identical,
            detail: format!(
                "max error {e_small:.5} at 20000 [{}], {e_large:.6} at 2000000, shrink factor {ratio:.2} (required [2, 5]) [{}], reproducible [{}]",
                if accuracy { "ok" } else { "FAIL" },
                if shrink { "ok" } else { "FAIL" },
                if identical { "ok" } else { "FAIL" },
            ),
        },
    )
}

fn evaluated_count(stderr: &[u8]) -> Option<u64> {
    let text = String::from_utf8_lossy(stderr);
    let line = text.lines().find(|l| l.starts_with("coalitions:"))?;
    let mut words = line.split_whitespace();
    words.find(|w| *w == "evaluated:")?;
    words.next()?.parse().ok()
}

fn end_to_end_run(dir: &Path) -> Check {
    let started = Instant::now();
    let spec = SyntheticGameSpec::random_clamp_free(4, 6);
    let spec_path = dir.join("spec.json");
    std::fs::write(&spec_path, spec.to_json_string()).unwrap();
    let tasks: String = (0..5000).map(|k| format!("task-{k}\n")).collect();
    let tasks_path = dir.join("tasks.txt");
    std::fs::write(&tasks_path, tasks).unwrap();
    let cache = dir.join("cache");
    let run = |out: &Path| {
        wfshap(&[
            "run",
            "--adapter",
            &format!("sim:{}", spec_path.display()),
            "--components",
            "planning,reasoning,action,reflection",
            "--tasks",
            tasks_path.to_str().unwrap(),
            "--method",
            "exact",
            "--seed",
            "6",
            "--cache",
            cache.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ])
    };
    let (out1, out2) = (dir.join("first.json"), dir.join("second.json"));
    let cold = run(&out1);
    let warm = run(&out2);
    if !cold.status.success() || !warm.status.success() {
        return Check {
            pass: false,
            detail: format!(
                "run failed: {}",
                String::from_utf8_lossy(if cold.status.success() {
                    &warm.stderr
                } else {
                    &cold.stderr
                })
            ),
        };
    }
    let cold_evals = evaluated_count(&cold.stderr);
    let warm_evals = evaluated_count(&warm.stderr);
    let result =
        AttributionResult::from_json_str(&std::fs::read_to_string(&out1).unwrap()).unwrap();
    let err = max_abs_diff(&result.phi, &spec.analytic_phi());
    let read = |p: PathBuf| std::fs::read(p).unwrap();
    let identical = cold.stdout == warm.stdout
        && read(out1.clone()) == read(out2.clone())
        && read(dir.join("first.json.game.json")) == read(dir.join("second.json.game.json"));
    within(
        Duration::from_secs(120),
        started,
        Check {
            pass: cold_evals == Some(16) && warm_evals == Some(0) && err <= 0.02 && identical,
            detail: format!(
                "evaluations cold {cold_evals:?} warm {warm_evals:?}, max |phi - analytic| {err:.4}, warm outputs identical: {identical}"
            ),
        },
    )
}

fn optimal_configuration() -> Check {
    let started = Instant::now();
    let math = fixtures().join("math.json");
    let out = wfshap(&[
        "optimize",
        math.to_str().unwrap(),
        "--format",
        "structured_object",
    ]);
    let items = parse_structured(&String::from_utf8_lossy(&out.stdout)).unwrap_or_default();
    let got: Vec<(String, String)> = match items.first() {
        Some(ReportItem::Configuration(cfg)) => cfg
            .assignment
            .iter()
            .map(|(c, choice)| (c.clone(), choice.candidate.clone()))
            .collect(),
        _ => Vec::new(),
    };
    let want: Vec<(String, String)> = [
        ("planning", "doubao-pro-4k"),
        ("reasoning", "Claude-3.5"),
        ("action", "gpt-4-turbo"),
        ("reflection", "gpt-4o-mini"),
    ]
    .iter()
    .map(|(a, b)| (a.to_string(), b.to_string()))
    .collect();
    within(
        Duration::from_secs(1),
        started,
        Check {
            pass: out.status.success() && got == want,
            detail: format!("assignment {got:?}"),
        },
    )
}

fn consistency_rates(dir: &Path) -> Check {
    let started = Instant::now();
    let a = fixtures().join("consistency_a.json");
    let b = fixtures().join("consistency_b.json");
    let mut reversed = ModelAttributionTable::read(&a).unwrap();
    for row in reversed.rows.values_mut() {
        for x in row.phi.iter_mut() {
            *x = -*x;
        }
    }
    let reversed_path = dir.join("reversed.json");
    std::fs::write(&reversed_path, reversed.to_json_string()).unwrap();

    let rates = |x: &Path, y: &Path, extra: &[&str]| -> Vec<f64> {
        let mut args = vec![
            "consistency",
            x.to_str().unwrap(),
            y.to_str().unwrap(),
            "--format",
            "json",
        ];
        args.extend_from_slice(extra);
        let out = wfshap(&args);
        match parse_structured(&String::from_utf8_lossy(&out.stdout))
            .ok()
            .as_deref()
        {
            Some([ReportItem::Consistency(r)]) => r.per_component.iter().map(|c| c.rate).collect(),
            _ => Vec::new(),
        }
    };
    let constructed = rates(&a, &b, &["--component", "reasoning"]);
    let same = rates(&a, &a, &["--all"]);
    let opposite = rates(&a, &reversed_path, &["--all"]);
    let pass = constructed.len() == 1
        && (constructed[0] - 0.9167).abs() <= 1e-4
        && same.len() == 4
        && same.iter().all(|&r| r == 1.0)
        && opposite.len() == 4
        && opposite.iter().all(|&r| r == 0.0);
    within(
        Duration::from_secs(1),
        started,
        Check {
            pass,
            detail: format!(
                "constructed {constructed:?}, identical {same:?}, reversed {opposite:?}"
            ),
        },
    )
}

fn offline_coverage() -> Check {
    let blocks = [
        "online_shopping",
        "navigation_planning",
        "ticket_ordering",
        "math",
        "atp",
        "robot_cooperation",
        "operating_system",
        "algebra",
        "geometry",
    ];
    let mut missing = Vec::new();
    for b in blocks {
        match ModelAttributionTable::read(fixtures().join(format!("{b}.json"))) {
            Ok(t)
                if t.rows.len() == 9
                    && t.rows
                        .values()
                        .all(|r| r.acc.is_some() && r.baseline_acc.is_some()) => {}
            _ => missing.push(b),
        }
    }
    Check {
        pass: missing.is_empty(),
        detail: format!(
            "live-model measurements are not recomputed; {} of {} reported blocks ship as fixtures with accuracy columns{}",
            blocks.len() - missing.len(),
            blocks.len(),
            if missing.is_empty() { String::new() } else { format!(" (missing {missing:?})") }
        ),
    }
}

fn main() {
    let dir = tempfile::tempdir().unwrap();
    let checks: Vec<(&str, CheckFn)> = vec![
        (
            "efficiency identity on reported tables",
            Box::new(efficiency_on_fixtures),
        ),
        (
            "exact values match n! enumeration",
            Box::new(exact_matches_brute_force),
        ),
        ("axiom properties", Box::new(axiom_suite)),
        (
            "synergy recovery on synthetic games",
            Box::new(synergy_recovery),
        ),
        (
            "permutation estimator soundness",
            Box::new(estimator_soundness),
        ),
        (
            "end-to-end run with simulator",
            Box::new(|| end_to_end_run(dir.path())),
        ),
        ("optimal configuration", Box::new(optimal_configuration)),
        (
            "ranking consistency rates",
            Box::new(|| consistency_rates(dir.path())),
        ),
        (
            "offline coverage of live-model results",
            Box::new(offline_coverage),
        ),
    ];
    let mut failed = 0;
    for (k, (name, check)) in checks.iter().enumerate() {
        let c = check();
        if !c.pass {
            failed += 1;
        }
        println!(
            "criterion {}: {} - {name}: {}",
            k + 1,
            if c.pass { "PASS" } else { "FAIL" },
            c.detail
        );
    }
    println!(
        "{} of {} criteria passed",
        checks.len() - failed,
        checks.len()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
