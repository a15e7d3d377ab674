//! Property tests for the structural invariants of each module.

use coagents::moves::{apply_move, decision_set, enumerate_moves, successor_matrix, MoveKind};
use coagents::nn::{Head, ModelConfig, StepSchedule};
use coagents::psg::{EdgeKind, PsgSample};
use coagents::search::{
    alns_solve, coagents_solve, constrained_beam_search, nearest_neighbor, Agents, BeamSampling, SearchBudget, SearchConfig,
};
use coagents::train::{Dataset, DatasetKind, JumpOptions};
use coagents::vrp::{brute_force_optimum, evaluate, generate_instance, ProblemInstance, Solution, Variant};
use coagents::AgentModel;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn variant() -> impl Strategy<Value = Variant> {
    prop_oneof![Just(Variant::Cvrp), Just(Variant::Vrptw)]
}

fn random_solution(inst: &ProblemInstance, rng: &mut ChaCha8Rng) -> Solution {
    let mut ids: Vec<usize> = (1..=inst.num_customers()).collect();
    ids.shuffle(rng);
    let mut routes = vec![Vec::new()];
    for c in ids {
        if !routes.last().unwrap().is_empty() && rng.gen_bool(0.35) {
            routes.push(Vec::new());
        }
        routes.last_mut().unwrap().push(c);
    }
    Solution::new(routes, inst).unwrap()
}

fn covers_once(s: &Solution, n: usize) -> bool {
    let mut seen = vec![0; n + 1];
    s.routes().iter().flatten().for_each(|&c| seen[c] += 1);
    seen[1..].iter().all(|&k| k == 1) && s.routes().iter().all(|r| !r.is_empty())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn generated_instances_are_well_formed(n in 1usize..30, v in variant(), seed in any::<u64>()) {
        let inst = generate_instance(n, v, seed).unwrap();
        let m = inst.num_locations();
        prop_assert_eq!(m, n + 1);
        for i in 0..m {
            prop_assert_eq!(inst.dist(i, i), 0.0);
            for j in 0..m {
                prop_assert_eq!(inst.dist(i, j), inst.dist(j, i));
                for k in 0..m {
                    prop_assert!(inst.dist(i, k) <= inst.dist(i, j) + inst.dist(j, k) + 1e-9);
                }
            }
        }
        for (i, c) in inst.customers().iter().enumerate() {
            prop_assert_eq!(c.id, i + 1);
            prop_assert!(c.demand <= inst.capacity());
            if let Some(w) = c.window {
                prop_assert!(w.early <= w.late);
            }
        }
    }

    #[test]
    fn objective_matches_recomputation(n in 1usize..25, v in variant(), seed in any::<u64>()) {
        let inst = generate_instance(n, v, seed).unwrap();
        let s = random_solution(&inst, &mut ChaCha8Rng::seed_from_u64(seed));
        let mut total = 0.0;
        for r in s.routes() {
            let mut last = 0;
            for &c in r {
                total += inst.dist(last, c);
                last = c;
            }
            total += inst.dist(last, 0);
        }
        prop_assert!((s.objective() - total).abs() <= 1e-9 * total.max(1.0));
        prop_assert!(covers_once(&s, n));
        let (obj, report) = evaluate(s.routes(), &inst).unwrap();
        prop_assert_eq!(obj, s.objective());
        let clean = report.uncovered.is_empty() && report.penalty() == 0.0;
        prop_assert_eq!(s.is_feasible(), clean);
    }

    #[test]
    fn moves_keep_coverage_and_successor_structure(n in 2usize..14, v in variant(), seed in any::<u64>(), k in 0usize..6) {
        let inst = generate_instance(n, v, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = random_solution(&inst, &mut rng);
        let moves = enumerate_moves(&s, &inst, MoveKind::ALL[k]);
        if let Some(mv) = moves.choose(&mut rng) {
            let next = apply_move(&s, mv, &inst).unwrap();
            prop_assert!(covers_once(&next, n));
            prop_assert_eq!(decision_set(&next).len(), n + next.num_routes());
            let p = successor_matrix(&next, n);
            for (i, row) in p.iter().enumerate() {
                prop_assert_eq!(row.iter().sum::<f64>(), 1.0);
                prop_assert_eq!(row[i], 0.0);
            }
        }
    }

    #[test]
    fn psg_sample_stays_capped_and_closed(cap in 2usize..20, ops in 1usize..300, seed in any::<u64>()) {
        let inst = generate_instance(6, Variant::Cvrp, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut sample = PsgSample::new(0, random_solution(&inst, &mut rng), cap);
        for _ in 0..ops {
            let ids: Vec<u64> = sample.nodes().map(|n| n.id).collect();
            let parent = ids[rng.gen_range(0..ids.len())];
            let kind = EdgeKind::from_index(rng.gen_range(0..=MoveKind::COUNT)).unwrap();
            sample.add_node(parent, kind, random_solution(&inst, &mut rng)).unwrap();
            prop_assert!(sample.len() <= cap);
        }
        let k = sample.len();
        for (a, b, _) in sample.edges() {
            prop_assert!(a < k && b < k && a != b);
        }
        for node in sample.nodes() {
            for c in &node.children {
                prop_assert!(sample.contains(*c));
            }
        }
    }

    #[test]
    fn beam_search_returns_full_coverage(n in 2usize..9, v in variant(), seed in any::<u64>(), width in 1usize..8, weighted in any::<bool>()) {
        let inst = generate_instance(n, v, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p: Vec<Vec<f64>> = (0..=n).map(|_| (0..=n).map(|_| rng.gen::<f64>()).collect()).collect();
        for (i, row) in p.iter_mut().enumerate() {
            row[i] = 0.0;
            let s: f64 = row.iter().sum();
            row.iter_mut().for_each(|x| *x /= s);
        }
        let anchor = random_solution(&inst, &mut rng);
        let sampling = if weighted { BeamSampling::Weighted } else { BeamSampling::Argmax };
        let s = constrained_beam_search(&p, &anchor, &inst, width, sampling, &mut rng).unwrap();
        prop_assert!(covers_once(&s, n));
    }

    #[test]
    fn step_schedule_follows_the_decay_law(step in 0u64..100_000) {
        let lr = StepSchedule::default().at(step);
        let want = 1e-4 * 0.998f64.powi((step / 100) as i32);
        prop_assert!((lr - want).abs() <= 1e-18);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn search_traces_never_worsen(n in 3usize..9, v in variant(), seed in any::<u64>()) {
        let inst = generate_instance(n, v, seed).unwrap();
        let cfg = ModelConfig::desk();
        let sel = AgentModel::new(cfg.clone(), Head::Select, seed).unwrap();
        let jmp = AgentModel::new(cfg, Head::Jump, seed ^ 1).unwrap();
        let mut sc = SearchConfig::new(SearchBudget::iterations(30, seed));
        sc.stagnation = Some(4);
        let r = coagents_solve(&inst, Agents { select: &sel, jump: Some(&jmp) }, &sc, None).unwrap();
        let a = alns_solve(&inst, &SearchBudget::iterations(30, seed), false).unwrap();
        for trace in [&r.trace, &a.trace] {
            for w in trace.windows(2) {
                prop_assert!(w[1].best_obj <= w[0].best_obj);
            }
        }
        prop_assert!(covers_once(&r.best, n));
        prop_assert!(r.best.penalized() <= nearest_neighbor(&inst).penalized());
    }

    #[test]
    fn jump_labels_are_successor_functions(n in 3usize..7, seed in any::<u64>()) {
        let inst = generate_instance(n, Variant::Cvrp, seed).unwrap();
        let opt = brute_force_optimum(&inst).unwrap();
        let mut ds = Dataset::new(DatasetKind::Jump);
        let opts = JumpOptions { starts: 1, alns_iterations: 5, ..Default::default() };
        ds.add_jump(&inst, &opt, &opts, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let targets = &ds.jump[0].targets;
        prop_assert_eq!(&targets[0], &opt.routes().to_vec());
        for routes in targets {
            let s = Solution::new(routes.clone(), &inst).unwrap();
            prop_assert!(covers_once(&s, n));
            for (i, row) in successor_matrix(&s, n).iter().enumerate() {
                prop_assert_eq!(row.iter().sum::<f64>(), 1.0);
                prop_assert_eq!(row[i], 0.0);
            }
        }
    }
}
