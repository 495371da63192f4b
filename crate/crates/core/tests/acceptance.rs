//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fails.
//!
//! Runs without the libtest harness so the verdict lines always reach the
//! output. Pass a criterion number (e.g. `-- 4`) to run a subset.

use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use mamex::discrepancy::{l_model_based, l_model_free, TransitionLedger};
use mamex::equilibrium::{certify, solve_ce, solve_cce, solve_ne, zero_sum_selfplay, NeMode, NormalFormGame, Target};
use mamex::evaluate::{bellman_apply, evaluate_pure, gaps_on_tensor, payoff_tensor};
use mamex::experiment::{run_experiment, ExperimentConfig};
use mamex::game::{make_lock, make_random_tabular, MarkovGame, RandomTabularSpec, TransitionKernel};
use mamex::hypothesis::{true_q_hypothesis, value_under_hypothesis, Hypothesis, ModelHypothesis, QHypothesis};
use mamex::mamex::{madc_diagnostic, mu_grid, run, MamexConfig, Mode};
use mamex::policy::{JointMixedPolicy, JointPolicyTable, PolicyKind, PurePolicy, PurePolicySpace};
use mamex::testkit::{brute_force_swap, literal_l_model_based, literal_l_model_free};

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

fn random_game(rng: &mut ChaCha8Rng) -> MarkovGame<f64> {
    let states = rng.gen_range(1..=4);
    let horizon = rng.gen_range(1..=3);
    let actions = match rng.gen_range(0..3) {
        0 => vec![2, 2],
        1 => vec![2, 3],
        _ => vec![2, 2, 2],
    };
    make_random_tabular(&RandomTabularSpec::new(states, horizon, actions, 1.0, rng.gen())).unwrap()
}

/// Joint table of independent random stochastic Markov policies.
fn random_joint_policy(game: &MarkovGame<f64>, rng: &mut ChaCha8Rng) -> JointPolicyTable<f64> {
    let (h_n, s_n) = (game.horizon(), game.n_states());
    let policies: Vec<PurePolicy<f64>> = game
        .actions()
        .iter()
        .map(|&m| {
            let probs: Vec<f64> = (0..h_n * s_n)
                .flat_map(|_| {
                    let w: Vec<f64> = (0..m).map(|_| rng.gen::<f64>() + 0.05).collect();
                    let z: f64 = w.iter().sum();
                    w.into_iter().map(move |x| x / z)
                })
                .collect();
            PurePolicy::from_table(h_n, s_n, m, probs, PolicyKind::Tabular).unwrap()
        })
        .collect();
    JointPolicyTable::from_policies(&policies.iter().collect::<Vec<_>>())
}

fn random_kernel(game: &MarkovGame<f64>, rng: &mut ChaCha8Rng) -> TransitionKernel<f64> {
    let s_n = game.n_states();
    let probs: Vec<f64> = (0..game.horizon() * s_n * game.n_joint())
        .flat_map(|_| {
            let w: Vec<f64> = (0..s_n).map(|_| rng.gen::<f64>() + 1e-3).collect();
            let z: f64 = w.iter().sum();
            w.into_iter().map(move |x| x / z)
        })
        .collect();
    TransitionKernel::from_flat(game.horizon(), s_n, game.n_joint(), probs).unwrap()
}

fn filled_ledger(game: &MarkovGame<f64>, policy: &JointPolicyTable<f64>, episodes: usize, seed: u64) -> TransitionLedger {
    let mut ledger = TransitionLedger::for_game(game);
    for k in 0..episodes {
        ledger.ingest(&game.sample_episode(policy, seed, k));
    }
    ledger
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

fn loglog_slope(points: &[(f64, f64)]) -> f64 {
    let logs: Vec<(f64, f64)> = points.iter().map(|&(x, y)| (x.ln(), y.ln())).collect();
    let n = logs.len() as f64;
    let mx = logs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = logs.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = logs.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = logs.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

/// Closed-form discrepancies against their literal sums.
fn definition_equivalence() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut worst_free, mut worst_based) = (0.0f64, 0.0f64);
    for _ in 0..200 {
        let game = random_game(&mut rng);
        let behaviour = random_joint_policy(&game, &mut rng);
        let evaluated = random_joint_policy(&game, &mut rng);
        let ledger = filled_ledger(&game, &behaviour, rng.gen_range(1..60), rng.gen());
        let agent = rng.gen_range(0..game.n_agents());
        let cap = game.reward_cap();
        let tables: Vec<f64> = (0..game.horizon() * game.n_states() * game.n_joint()).map(|_| rng.gen::<f64>() * cap).collect();
        let f = QHypothesis::new(game.horizon(), game.n_states(), game.n_joint(), cap, tables).unwrap();
        let rewards = game.agent_rewards(agent);
        let fast = l_model_free(&ledger, &f, &evaluated, rewards);
        let slow = literal_l_model_free(ledger.episodes(), &f, &evaluated, rewards);
        worst_free = worst_free.max((fast - slow).abs());
        let model = random_kernel(&game, &mut rng);
        let fast = l_model_based(&ledger, &model);
        let slow = literal_l_model_based(ledger.episodes(), &model);
        worst_based = worst_based.max((fast - slow).abs());
    }
    verdict(
        worst_free <= 1e-9 && worst_based <= 1e-9,
        format!("200 instances; max |closed - literal|: model-free {worst_free:.2e}, model-based {worst_based:.2e} (tol 1e-9)"),
    )
}

/// True Q is a Bellman fixed point and realizable hypotheses reproduce exact values.
fn fixed_point_identities() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut bellman, mut realizable) = (0.0f64, 0.0f64);
    for _ in 0..50 {
        let game = random_game(&mut rng);
        let policy = random_joint_policy(&game, &mut rng);
        for agent in 0..game.n_agents() {
            let exact = evaluate_pure(&game, &policy, agent);
            let q = true_q_hypothesis(&game, &policy, agent);
            for h in 0..game.horizon() {
                let next = (h + 1 < game.horizon()).then(|| q.layer(h + 1));
                let applied = bellman_apply(&game, next, &policy, agent, h);
                for (x, y) in applied.iter().zip(q.layer(h)) {
                    bellman = bellman.max((x - y).abs());
                }
            }
            let free = value_under_hypothesis(&Hypothesis::ModelFree(q), &game, &policy, agent);
            let model = ModelHypothesis::new(game.kernel().clone()).unwrap();
            let based = value_under_hypothesis(&Hypothesis::ModelBased(model), &game, &policy, agent);
            realizable = realizable.max((free - exact.value()).abs()).max((based - exact.value()).abs());
        }
    }
    verdict(
        bellman <= 1e-12 && realizable <= 1e-12,
        format!("50 games; Bellman residual {bellman:.2e}, realizable value error {realizable:.2e} (tol 1e-12)"),
    )
}

/// With the true Q the model-free discrepancy grows sublinearly in the data.
fn concentration() -> Verdict {
    let k = 1024;
    let mut failures = 0;
    let mut worst = 0.0f64;
    for seed in 0..20u64 {
        let game = make_random_tabular::<f64>(&RandomTabularSpec::new(4, 3, vec![2, 2], 1.0, 300 + seed)).unwrap();
        let space = PurePolicySpace::deterministic_sample(&game, 8, 400 + seed, 4096).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let evaluated = JointPolicyTable::from_space(&space, rng.gen_range(0..space.joint_size()));
        let mut ledger = TransitionLedger::for_game(&game);
        for e in 0..k {
            let behaviour = JointPolicyTable::from_space(&space, rng.gen_range(0..space.joint_size()));
            ledger.ingest(&game.sample_episode(&behaviour, seed, e));
        }
        let cap = game.reward_cap();
        let ratio = (0..game.n_agents())
            .map(|i| l_model_free(&ledger, &true_q_hypothesis(&game, &evaluated, i), &evaluated, game.agent_rewards(i)) / k as f64)
            .fold(0.0, f64::max);
        worst = worst.max(ratio);
        if ratio > 0.05 * cap * cap {
            failures += 1;
        }
    }
    verdict(failures <= 2, format!("k={k}, 20 seeds; worst L/k = {worst:.4} vs 0.05 R^2; {failures} seed failures (allowed 2)"))
}

fn brute_force_deviation(game: &NormalFormGame<f64>, mixed: &JointMixedPolicy<f64>, agent: usize) -> f64 {
    let radix = game.radix();
    let u = game.payoffs(agent);
    let base: f64 = mixed.probs().iter().zip(u).map(|(p, x)| p * x).sum();
    (0..game.counts()[agent])
        .map(|d| mixed.probs().iter().enumerate().map(|(j, p)| p * u[radix.replace(j, agent, d)]).sum::<f64>() - base)
        .fold(0.0, f64::max)
}

fn equilibrium_certification() -> Verdict {
    let mut notes = Vec::new();
    let mut pass = true;

    let pennies = NormalFormGame::new(&[2, 2], vec![vec![1.0, 0.0, 0.0, 1.0], vec![0.0, 1.0, 1.0, 0.0]]).unwrap().with_zero_sum(true);
    let selfplay = zero_sum_selfplay(&pennies, 10_000).unwrap();
    let enumerated = solve_ne(&pennies, NeMode::BimatrixSupportEnum, 0).unwrap();
    let off = |sol: &JointMixedPolicy<f64>| (0..2).flat_map(|i| sol.marginal(i)).map(|p| (p - 0.5).abs()).fold(0.0, f64::max);
    let (sp, se) = (off(&selfplay.policy), off(&enumerated.policy));
    pass &= sp <= 0.05 && se <= 1e-8;
    notes.push(format!("pennies self-play {sp:.1e} (0.05), enumeration {se:.1e} (1e-8)"));

    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (mut cce_worst, mut ce_worst) = (0.0f64, 0.0f64);
    for _ in 0..20 {
        let payoffs: Vec<Vec<f64>> = (0..2).map(|_| (0..9).map(|_| rng.gen()).collect()).collect();
        let game = NormalFormGame::new(&[3, 3], payoffs).unwrap();
        let range = game.payoff_range();
        cce_worst = cce_worst.max(solve_cce(&game, 100_000).unwrap().max_gap() / range);
        ce_worst = ce_worst.max(solve_ce(&game, 100_000).unwrap().max_gap() / range);
    }
    pass &= cce_worst <= 0.02 && ce_worst <= 0.02;
    notes.push(format!("3x3 CCE gap/range {cce_worst:.4}, CE {ce_worst:.4} (0.02)"));

    let mut certifier = 0.0f64;
    for _ in 0..100 {
        let n = rng.gen_range(2..=3);
        let counts: Vec<usize> = (0..n).map(|_| rng.gen_range(2..=4)).collect();
        let size: usize = counts.iter().product();
        let payoffs: Vec<Vec<f64>> = (0..n).map(|_| (0..size).map(|_| rng.gen()).collect()).collect();
        let game = NormalFormGame::new(&counts, payoffs).unwrap();
        let w: Vec<f64> = (0..size).map(|_| if rng.gen_bool(0.3) { 0.0 } else { rng.gen() }).collect();
        let z: f64 = w.iter().sum::<f64>().max(1e-12);
        let mixed = if z > 1e-9 {
            JointMixedPolicy::from_probs(&counts, w.iter().map(|x| x / z).collect()).unwrap()
        } else {
            JointMixedPolicy::uniform(&counts).unwrap()
        };
        let cce = certify(&game, &mixed, Target::Cce).unwrap();
        let ce = certify(&game, &mixed, Target::Ce).unwrap();
        for i in 0..n {
            certifier = certifier.max((cce[i] - brute_force_deviation(&game, &mixed, i)).abs());
            certifier = certifier.max((ce[i] - brute_force_swap(&game, &mixed, i)).abs());
        }
    }
    pass &= certifier <= 1e-10;
    notes.push(format!("certifier vs enumeration {certifier:.1e} (1e-10)"));
    verdict(pass, notes.join("; "))
}

struct BenchRun {
    k: usize,
    cum_regret: f64,
    output_gap: f64,
    madc: f64,
}

/// Model-based CCE runs on the tabular benchmark, shared by three criteria.
fn benchmark() -> Vec<Vec<BenchRun>> {
    (0..5u64)
        .map(|seed| {
            let game = make_random_tabular::<f64>(&RandomTabularSpec::new(4, 3, vec![2, 2], 1.0, 1000 + seed)).unwrap();
            let space = PurePolicySpace::deterministic_sample(&game, 8, 2000 + seed, 4096).unwrap();
            let truth = payoff_tensor(&game, &space);
            [64, 256, 1024]
                .into_iter()
                .map(|k| {
                    let cfg = MamexConfig::new(k, Target::Cce, Mode::ModelBased, seed);
                    let run = run(&game, &space, &cfg).unwrap();
                    let output_gap = gaps_on_tensor(&truth, &run.output).aggregate(Target::Cce).unwrap();
                    let madc = madc_diagnostic(&run.records, game.horizon(), &mu_grid(1e-2, 1e6, 81))
                        .iter()
                        .map(|m| m.estimate)
                        .fold(0.0, f64::max);
                    BenchRun { k, cum_regret: run.cum_regret(), output_gap, madc }
                })
                .collect()
        })
        .collect()
}

fn regret_rate(bench: &[Vec<BenchRun>]) -> Verdict {
    let slopes: Vec<f64> = bench.iter().map(|runs| loglog_slope(&runs.iter().map(|r| (r.k as f64, r.cum_regret)).collect::<Vec<_>>())).collect();
    let m = median(slopes.clone());
    let shown: Vec<String> = slopes.iter().map(|s| format!("{s:.3}")).collect();
    verdict(m <= 0.75, format!("median log-log slope {m:.3} (max 0.75); per seed [{}]", shown.join(", ")))
}

fn per_k_median(bench: &[Vec<BenchRun>], value: impl Fn(&BenchRun) -> f64) -> Vec<f64> {
    (0..bench[0].len()).map(|j| median(bench.iter().map(|runs| value(&runs[j])).collect())).collect()
}

fn output_convergence(bench: &[Vec<BenchRun>]) -> Verdict {
    let gaps = per_k_median(bench, |r| r.output_gap);
    let inversions = gaps.windows(2).filter(|w| w[1] > w[0]).count();
    verdict(inversions <= 1, format!("median output CCE gap at K=64/256/1024: {gaps:.4?}; {inversions} inversions (allowed 1)"))
}

fn madc_bounded(bench: &[Vec<BenchRun>]) -> Verdict {
    let d = per_k_median(bench, |r| r.madc);
    let peak = d.iter().copied().fold(0.0, f64::max);
    let shown: Vec<String> = d.iter().map(|x| format!("{x:.3e}")).collect();
    verdict(peak <= 2.0 * d[0], format!("median decoupling estimate at K=64/256/1024: [{}]; peak {peak:.3e} vs 2x start {:.3e}", shown.join(", "), 2.0 * d[0]))
}

/// Optimism against the greedy baseline on the lock game, paired by seed.
fn exploration_ablation() -> Verdict {
    let k = 512;
    let (mut wins, mut losses) = (0u32, 0u32);
    let (mut optimistic, mut greedy) = (Vec::new(), Vec::new());
    for seed in 0..10u64 {
        let lock = make_lock::<f64>(3, 0.2, 500 + seed).unwrap();
        let space = lock.open_loop_space();
        let truth = payoff_tensor(&lock.game, &space);
        let gap = |eta: Option<f64>| {
            let mut cfg = MamexConfig::new(k, Target::Cce, Mode::ModelFree, seed);
            cfg.eta = eta;
            let run = run(&lock.game, &space, &cfg).unwrap();
            gaps_on_tensor(&truth, &run.output).aggregate(Target::Cce).unwrap()
        };
        let (a, b) = (gap(None), gap(Some(0.0)));
        optimistic.push(a);
        greedy.push(b);
        if a < b {
            wins += 1;
        } else if a > b {
            losses += 1;
        }
    }
    // One-sided sign test over untied pairs.
    let n = wins + losses;
    let choose = |n: u32, r: u32| (0..r).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64);
    let p: f64 = (wins..=n).map(|r| choose(n, r)).sum::<f64>() / 2f64.powi(n as i32);
    let (mo, mg) = (median(optimistic), median(greedy));
    verdict(
        p < 0.05 && mo < mg,
        format!("K={k}, 10 seeds; median gap {mo:.4} (eta=4/sqrt K) vs {mg:.4} (eta=0); {wins} wins, {losses} losses, sign-test p={p:.4}"),
    )
}

fn strip_timing(csv: &str) -> String {
    csv.lines().map(|l| l.rsplit_once(',').map_or(l, |(head, _)| head)).collect::<Vec<_>>().join("\n")
}

/// Reruns of the same config give byte-identical bundles apart from timing.
fn determinism() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let example = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/example.json");
    let mut cfg = ExperimentConfig::load(&example).unwrap();
    let mut mismatches = Vec::new();
    for mode in [Mode::ModelBased, Mode::ModelFree] {
        cfg.mamex.mode = mode;
        let (a, b) = (dir.path().join(format!("{}-a", mode.as_str())), dir.path().join(format!("{}-b", mode.as_str())));
        run_experiment(&cfg, &a).unwrap();
        run_experiment(&cfg, &b).unwrap();
        for file in ["record.csv", "policy_out.json", "config_echo.json"] {
            let read = |p: &Path| std::fs::read_to_string(p.join(file)).unwrap();
            let same = if file == "record.csv" { strip_timing(&read(&a)) == strip_timing(&read(&b)) } else { read(&a) == read(&b) };
            if !same {
                mismatches.push(format!("{}/{file}", mode.as_str()));
            }
        }
    }
    let detail = if mismatches.is_empty() { "two modes, three files each: identical".to_string() } else { format!("differs: {}", mismatches.join(", ")) };
    verdict(mismatches.is_empty(), detail)
}

fn main() {
    let wanted: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let want = |c: usize| wanted.is_empty() || wanted.contains(&c);
    let mut failed = 0;
    let mut report = |c: usize, name: &str, f: &mut dyn FnMut() -> Verdict| {
        if !want(c) {
            return;
        }
        let start = Instant::now();
        let v = f();
        let status = if v.pass { "PASS" } else { "FAIL" };
        println!("[{status}] criterion {c} ({name}): {} [{:.1} s]", v.detail, start.elapsed().as_secs_f64());
        if !v.pass {
            failed += 1;
        }
    };
    report(1, "definition equivalence", &mut definition_equivalence);
    report(2, "fixed point and realizability", &mut fixed_point_identities);
    report(3, "concentration", &mut concentration);
    report(4, "equilibrium certification", &mut equilibrium_certification);
    let bench = if want(5) || want(6) || want(8) {
        let start = Instant::now();
        let b = benchmark();
        println!("benchmark runs finished in {:.1} s", start.elapsed().as_secs_f64());
        Some(b)
    } else {
        None
    };
    if let Some(b) = &bench {
        report(5, "regret rate", &mut || regret_rate(b));
        report(6, "output-policy convergence", &mut || output_convergence(b));
    }
    report(7, "exploration ablation", &mut exploration_ablation);
    if let Some(b) = &bench {
        report(8, "decoupling diagnostic", &mut || madc_bounded(b));
    }
    report(9, "determinism", &mut determinism);
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
