//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any failure.
//!
//! Reference values come from closed-form market clearing and bisection
//! written here, independent of the crate's optimizer.

use std::panic::{self, AssertUnwindSafe};
use std::path::PathBuf;
use std::time::{Duration, Instant};

use gridprice::analysis::ConvergenceStatus;
use gridprice::controllers::Measurements;
use gridprice::io::MarketSpec;
use gridprice::runner::{self, Run, RunOptions};
use gridprice::simulator::EquilibriumOptions;
use gridprice::{Graph, PhysicalModel, PhysicalParams, PhysicalState, Scenario, Variant};
use nalgebra::SymmetricEigen;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Collects named checks for one criterion.
#[derive(Default)]
struct Checks {
    notes: Vec<String>,
    failures: Vec<String>,
}

impl Checks {
    fn at_most(&mut self, name: &str, value: f64, bound: f64) {
        self.record(value <= bound, format!("{name}={value:.3e}≤{bound:.0e}"));
    }

    fn below(&mut self, name: &str, value: f64, bound: f64) {
        self.record(value < bound, format!("{name}={value:.3e}<{bound:.0e}"));
    }

    fn holds(&mut self, name: &str, ok: bool, detail: String) {
        self.record(ok, format!("{name}: {detail}"));
    }

    fn record(&mut self, ok: bool, text: String) {
        if ok {
            self.notes.push(text);
        } else {
            self.failures.push(text);
        }
    }

    fn finish(self) -> Result<String, String> {
        if self.failures.is_empty() {
            Ok(self.notes.join(", "))
        } else {
            Err(self.failures.join(", "))
        }
    }
}

type Outcome = Result<String, String>;

fn scenario_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../scenarios")
        .join(name)
}

fn load(name: &str) -> Scenario {
    Scenario::load(scenario_path(name)).unwrap_or_else(|e| panic!("loading {name}: {e}"))
}

fn run(s: &Scenario, seed: Option<u64>) -> Run {
    runner::run(
        s,
        &RunOptions {
            seed,
            ..Default::default()
        },
    )
    .unwrap_or_else(|e| panic!("{}: {e}", s.name))
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Competitive market clearing for quadratic cost and utility with optional
/// generation caps: returns `(λ, P_g, P_d)` with `export` the net outflow
/// required from the market (zero for a single balanced market).
fn clear_market(cost: &[(f64, f64)], utility: &[(f64, f64)], pg_max: &[f64], export: f64) -> (f64, Vec<f64>, Vec<f64>) {
    let supply = |lam: f64| -> Vec<f64> {
        cost.iter()
            .zip(pg_max)
            .map(|(&(q, c), &cap)| ((lam - c) / q).min(cap))
            .collect()
    };
    let demand = |lam: f64| -> Vec<f64> { utility.iter().map(|&(q, c)| (c - lam) / q).collect() };
    let excess = |lam: f64| supply(lam).iter().sum::<f64>() - demand(lam).iter().sum::<f64>() - export;
    let (mut lo, mut hi) = (-1e3, 1e3);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if excess(mid) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let lam = 0.5 * (lo + hi);
    (lam, supply(lam), demand(lam))
}

type Market = (Vec<(f64, f64)>, Vec<(f64, f64)>, Vec<f64>);

fn market_pairs(m: &MarketSpec) -> Market {
    let cost = m.cost.iter().map(|f| (f.q, f.c)).collect::<Vec<_>>();
    let utility = m.utility.iter().map(|f| (f.q, f.c)).collect();
    let caps = m
        .bounds
        .as_ref()
        .and_then(|b| b.pg_max.clone())
        .unwrap_or_else(|| vec![f64::INFINITY; cost.len()]);
    (cost, utility, caps)
}

fn welfare(m: &MarketSpec, pg: &[f64], pd: &[f64]) -> f64 {
    let u: f64 = m
        .utility
        .iter()
        .zip(pd)
        .map(|(f, x)| -0.5 * f.q * x * x + f.c * x)
        .sum();
    let c: f64 = m.cost.iter().zip(pg).map(|(f, x)| 0.5 * f.q * x * x + f.c * x).sum();
    u - c
}

fn a1() -> Outcome {
    let s = load("three_bus_basic.toml");
    let (cost, utility, caps) = market_pairs(&s.market);
    let (_, pg_star, pd_star) = clear_market(&cost, &utility, &caps, 0.0);
    let mut c = Checks::default();
    let (mut omega, mut kkt, mut dist, mut ratio, mut wall, mut t_sim) =
        (0.0f64, 0.0f64, 0.0f64, 0.0f64, Duration::ZERO, 0.0f64);
    let mut all_converged = true;
    for seed in 11..16 {
        let start = Instant::now();
        let r = run(&s, Some(seed));
        wall = wall.max(start.elapsed());
        let sum = &r.diagnostics.summary;
        let last = r.trajectory.final_state();
        omega = omega.max(sum.max_omega);
        kkt = kkt.max(sum.kkt_residual);
        ratio = ratio.max(sum.convergence_ratio);
        t_sim = t_sim.max(sum.final_time);
        dist = dist.max(max_diff(&last.controller.pg, &pg_star).max(max_diff(&last.controller.pd, &pd_star)));
        all_converged &= sum.status == ConvergenceStatus::Converged;
    }
    c.holds("converged", all_converged, "5 seeds".into());
    c.at_most("t_sim", t_sim, 200.0);
    c.at_most("wall_s", wall.as_secs_f64(), 10.0);
    c.at_most("max|ω|", omega, 1e-6);
    c.at_most("kkt", kkt, 1e-5);
    c.at_most("oracle_dist", dist, 1e-4);
    c.below("ratio", ratio, 0.5);
    c.finish()
}

fn a2() -> Outcome {
    let mut c = Checks::default();
    let mut worst = f64::NEG_INFINITY;
    let mut violations = 0;
    let mut samples = 0;
    for (name, seeds) in [("three_bus_basic.toml", 11..16), ("two_bus_basic.toml", 1..4)] {
        let s = load(name);
        for seed in seeds {
            let r = run(&s, Some(seed));
            if r.diagnostics.summary.status != ConvergenceStatus::Converged {
                c.holds("converged", false, format!("{name} seed {seed}"));
            }
            violations += r.diagnostics.descent_violations;
            worst = worst.max(r.diagnostics.max_relative_increase);
            samples += r.trajectory.len();
        }
    }
    c.holds(
        "violations",
        violations == 0,
        format!("{violations} over {samples} steps"),
    );
    c.at_most("max ΔH̄/(1+|H̄|)", worst, 1e-8);
    c.finish()
}

fn a3() -> Outcome {
    let s = load("three_bus_nodal.toml");
    let (cost, utility, caps) = market_pairs(&s.market);
    let (lam, pg_star, pd_star) = clear_market(&cost, &utility, &caps, 0.0);
    let mu_star = lam - (cost[0].0 * caps[0] + cost[0].1);
    let mut c = Checks::default();
    c.holds("bound_binds", mu_star > 1e-3, format!("reference μ={mu_star:.4}"));
    let (mut kkt, mut comp, mut min_mu, mut dist) = (0.0f64, 0.0f64, f64::INFINITY, 0.0f64);
    for seed in [5, 6, 7] {
        let r = run(&s, Some(seed));
        let lay = r.closed_loop.layout();
        let sum = &r.diagnostics.summary;
        kkt = kkt.max(sum.kkt_residual);
        for y in &r.trajectory.states {
            min_mu = min_mu.min(y[lay.mu()].iter().copied().fold(f64::INFINITY, f64::min));
        }
        let last = r.trajectory.final_state();
        let g = r
            .closed_loop
            .controller()
            .problem()
            .eval_constraints(&last.controller.pg, &last.controller.pd);
        comp = comp.max(last.controller.mu.iter().zip(&g).map(|(m, g)| m * g).sum::<f64>().abs());
        dist = dist
            .max(max_diff(&last.controller.pg, &pg_star))
            .max(max_diff(&last.controller.pd, &pd_star))
            .max((last.controller.mu[0] - mu_star).abs());
    }
    c.at_most("kkt", kkt, 1e-5);
    c.at_most("|μᵀg|", comp, 1e-6);
    c.holds("μ≥0 every step", min_mu >= 0.0, format!("min μ={min_mu:.3e}"));
    c.at_most("oracle_dist", dist, 1e-4);
    c.finish()
}

fn simplified_scenario(s: &Scenario) -> Scenario {
    let mut s = s.clone();
    s.controller.tau_lambda = Some(s.physical.inertia.clone());
    s.controller.tau_theta = Some(s.physical.inertia.clone());
    s
}

fn a4() -> Outcome {
    let s = load("three_bus_basic.toml");
    let opts = RunOptions {
        t_end: Some(100.0),
        ..Default::default()
    };
    let mut c = Checks::default();
    let t = runner::compare(&s, Variant::Basic, Variant::Transformed, &opts, 1e-6).map_err(|e| e.to_string())?;
    c.at_most("basic~transformed", t.max_deviation, 1e-6);
    c.holds("horizon", t.t_end >= 100.0 - 1e-9, format!("{:.1}s", t.t_end));
    let ss = simplified_scenario(&s);
    let t =
        runner::compare(&ss, Variant::Basic, Variant::TransformedSimplified, &opts, 1e-6).map_err(|e| e.to_string())?;
    c.at_most("basic~simplified", t.max_deviation, 1e-6);

    for (scenario, variant) in [(&s, Variant::Transformed), (&ss, Variant::TransformedSimplified)] {
        let cl = scenario
            .with_variant(variant)
            .build_closed_loop()
            .map_err(|e| e.to_string())?;
        let x = scenario
            .with_variant(variant)
            .initial_state(&cl, None)
            .map_err(|e| e.to_string())?;
        let omega = cl.physical().omega(&x.physical.p);
        let outflow = cl.physical().nodal_outflow(&x.physical.eta, &x.physical.e_q);
        let meas = Measurements {
            omega: &omega,
            line_outflow: &outflow,
        };
        let reference = cl.controller().rhs(&x.controller, &meas).map_err(|e| e.to_string())?;
        let mut blind = true;
        for poison in [f64::NAN, 1e6, -3.0] {
            let mut y = x.controller.clone();
            y.pd.iter_mut().for_each(|p| *p = poison);
            let d = cl.controller().rhs(&y, &meas).map_err(|e| e.to_string())?;
            let same = |a: &[f64], b: &[f64]| a.iter().zip(b).all(|(a, b)| a.to_bits() == b.to_bits());
            blind &= same(&d.pg, &reference.pg) && same(&d.v, &reference.v) && same(&d.price, &reference.price);
        }
        c.holds(
            &format!("{variant} ignores P_d"),
            blind,
            "Ṗ_g, v̇, θ̇ bitwise unchanged with P_d∈{NaN,1e6,−3}".into(),
        );
    }
    c.finish()
}

fn a5() -> Outcome {
    let mut c = Checks::default();
    let two = load("two_bus_congestion.toml");
    let star = load("four_bus_star_congestion.toml");
    for s in [&two, &star] {
        let (cost, utility, _) = market_pairs(&s.market);
        let n = cost.len();
        let kappa = s.market.line_limits.clone().expect("line limits");
        // Unconstrained clearing: the flow into each leaf is its net demand.
        let (_, pg0, pd0) = clear_market(&cost, &utility, &vec![f64::INFINITY; n], 0.0);
        let mut binding = Vec::new();
        for (k, e) in s.topology.edges.iter().enumerate() {
            let leaf = e[1] - 1;
            let flow = pd0[leaf] - pg0[leaf];
            if flow.abs() > kappa[k] {
                binding.push(k);
            }
        }
        c.holds(
            &format!("{} binds", s.name),
            !binding.is_empty(),
            format!("edges {binding:?}"),
        );

        let r = run(s, None);
        let sum = &r.diagnostics.summary;
        let last = r.trajectory.final_state();
        let cl = &r.closed_loop;
        c.at_most(&format!("{} kkt", s.name), sum.kkt_residual, 1e-5);
        for &k in &binding {
            c.at_most(
                &format!("{} ||v_{k}|−κ|", s.name),
                (last.controller.v[k].abs() - kappa[k]).abs(),
                1e-6,
            );
            let mu = if last.controller.v[k] > 0.0 {
                last.controller.mu_plus[k]
            } else {
                last.controller.mu_minus[k]
            };
            c.holds(&format!("{} μ₊>0", s.name), mu > 0.0, format!("{mu:.4}"));
        }
        let flows = cl.physical().line_flows(&last.physical.eta, &last.physical.e_q);
        c.at_most(
            &format!("{} |v−Γsinη|", s.name),
            max_diff(&last.controller.v, &flows),
            1e-6,
        );

        // Two-bus reference: each side clears its own market around the fixed export κ.
        if n == 2 && binding == [0] {
            let export = kappa[0] * (pd0[1] - pg0[1]).signum();
            let (_, g1, d1) = clear_market(&cost[..1], &utility[..1], &[f64::INFINITY], export);
            let (_, g2, d2) = clear_market(&cost[1..], &utility[1..], &[f64::INFINITY], -export);
            let dist =
                max_diff(&last.controller.pg, &[g1[0], g2[0]]).max(max_diff(&last.controller.pd, &[d1[0], d2[0]]));
            c.at_most("two-bus oracle_dist", dist, 1e-4);
        }
    }
    c.finish()
}

fn a6() -> Outcome {
    let mut c = Checks::default();
    let s = load("three_bus_augmented.toml");
    let r = run(&s, None);
    let sum = &r.diagnostics.summary;
    let last = r.trajectory.final_state();
    c.holds(
        "converged",
        sum.status == ConvergenceStatus::Converged,
        format!("{:?}", sum.status),
    );
    c.at_most("max|ω|", sum.max_omega, 1e-6);
    c.at_most("kkt", sum.kkt_residual, 1e-5);
    // The linear-cost node pins the clearing price at its marginal cost.
    let omega = r.closed_loop.physical().omega(&last.physical.p);
    let price = r.closed_loop.controller().lambda_equivalent(&last.controller, &omega);
    c.at_most(
        "|λ−c_lin|",
        price.iter().map(|l| (l - 0.5).abs()).fold(0.0, f64::max),
        1e-5,
    );

    let mut strict = load("three_bus_basic.toml");
    strict.market.rho = Some(1.0);
    let opts = EquilibriumOptions::default();
    let basic = strict
        .build_closed_loop()
        .and_then(|cl| cl.find_equilibrium(None, &opts))
        .map_err(|e| e.to_string())?;
    let aug = strict
        .with_variant(Variant::Augmented)
        .build_closed_loop()
        .and_then(|cl| cl.find_equilibrium(None, &opts))
        .map_err(|e| e.to_string())?;
    let (b, a) = (&basic.state, &aug.state);
    let neg_v: Vec<f64> = a.controller.v.iter().map(|v| -v).collect();
    let dev = [
        max_diff(&a.physical.eta, &b.physical.eta),
        max_diff(&a.physical.p, &b.physical.p),
        max_diff(&a.physical.e_q, &b.physical.e_q),
        max_diff(&a.controller.pg, &b.controller.pg),
        max_diff(&a.controller.pd, &b.controller.pd),
        max_diff(&a.controller.price, &b.controller.price),
        max_diff(&neg_v, &b.controller.v),
    ]
    .into_iter()
    .fold(0.0, f64::max);
    c.at_most("augmented~basic equilibria", dev, 1e-6);

    // The simulated augmented loop from a perturbed start reaches the basic
    // equilibrium; flows are compared through nodal net flow, which ignores
    // the conserved cycle component.
    let r = run(&strict.with_variant(Variant::Augmented), None);
    let last = r.trajectory.final_state();
    let comm = strict.communication_graph().map_err(|e| e.to_string())?;
    let net_aug: Vec<f64> = comm.incidence_apply(&last.controller.v).iter().map(|x| -x).collect();
    let net_basic = comm.incidence_apply(&b.controller.v);
    let dev = [
        max_diff(&last.controller.pg, &b.controller.pg),
        max_diff(&last.controller.pd, &b.controller.pd),
        max_diff(&last.controller.price, &b.controller.price),
        max_diff(&last.physical.e_q, &b.physical.e_q),
        max_diff(&net_aug, &net_basic),
    ]
    .into_iter()
    .fold(0.0, f64::max);
    c.at_most("simulated augmented~basic", dev, 1e-6);
    c.finish()
}

fn barrier_scenario(nu: f64) -> Scenario {
    let mut s = load("three_bus_barrier.toml");
    s.market.nu = Some(nu);
    s
}

fn a7() -> Outcome {
    let mut c = Checks::default();
    let base = load("three_bus_nodal.toml");
    let (cost, utility, caps) = market_pairs(&base.market);
    let (_, pg_star, pd_star) = clear_market(&cost, &utility, &caps, 0.0);
    let w_star = welfare(&base.market, &pg_star, &pd_star);
    let mut gaps = Vec::new();
    for nu in [1e-1, 1e-2, 1e-3] {
        let s = barrier_scenario(nu);
        let r = run(&s, None);
        let lay = r.closed_loop.layout();
        let problem = r.closed_loop.controller().problem();
        let worst = r
            .trajectory
            .states
            .iter()
            .flat_map(|y| problem.eval_constraints(&y[lay.pg()], &y[lay.pd()]))
            .fold(f64::NEG_INFINITY, f64::max);
        c.holds(
            &format!("ν={nu:.0e} min slack>0"),
            worst < 0.0,
            format!("{:.3e}", -worst),
        );
        let last = r.trajectory.final_state();
        c.at_most(&format!("ν={nu:.0e} max|ω|"), r.diagnostics.summary.max_omega, 1e-6);
        gaps.push(w_star - welfare(&s.market, &last.controller.pg, &last.controller.pd));
    }
    let monotone = gaps.windows(2).all(|w| w[1] < w[0]) && gaps.iter().all(|g| *g >= 0.0);
    c.holds(
        "gap decreasing in ν",
        monotone,
        format!("{:.3e} > {:.3e} > {:.3e}", gaps[0], gaps[1], gaps[2]),
    );
    c.finish()
}

fn random_graph(rng: &mut ChaCha8Rng, n: usize) -> Graph {
    let mut edges: Vec<(usize, usize)> = (1..n).map(|i| (rng.random_range(0..i), i)).collect();
    for _ in 0..rng.random_range(0..n) {
        let a = rng.random_range(0..n);
        let b = rng.random_range(0..n);
        if a != b && !edges.iter().any(|&(x, y)| (x, y) == (a, b) || (x, y) == (b, a)) {
            edges.push((a, b));
        }
    }
    Graph::new(n, edges).expect("valid graph")
}

fn random_params(rng: &mut ChaCha8Rng, graph: &Graph, gap: (f64, f64)) -> PhysicalParams {
    let n = graph.node_count();
    let mut draw = |lo: f64, hi: f64, k: usize| (0..k).map(|_| rng.random_range(lo..hi)).collect::<Vec<_>>();
    let x_d_prime = draw(0.1, 0.4, n);
    let x_gap = draw(gap.0, gap.1, n);
    PhysicalParams {
        inertia: draw(1.0, 8.0, n),
        damping: draw(0.5, 2.0, n),
        x_d: x_d_prime.iter().zip(&x_gap).map(|(a, b)| a + b).collect(),
        x_d_prime,
        t_d_prime: draw(4.0, 8.0, n),
        e_f: draw(0.9, 1.3, n),
        susceptance: draw(0.5, 2.0, graph.edge_count()),
    }
}

fn a8() -> Outcome {
    let mut c = Checks::default();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);

    // Admissible equilibria: node angles within ±0.15 rad, voltages in [0.8, 1.2],
    // field voltage chosen so the voltage equation balances and kept positive.
    let (mut accepted, mut draws, mut counterexamples, mut min_eig) = (0, 0, 0, f64::INFINITY);
    while accepted < 50 && draws < 5000 {
        draws += 1;
        let n = rng.random_range(2..=7);
        let graph = random_graph(&mut rng, n);
        let mut params = random_params(&mut rng, &graph, (0.05, 0.3));
        let delta: Vec<f64> = (0..n).map(|_| rng.random_range(-0.15..0.15)).collect();
        let eta = graph.incidence_t_apply(&delta);
        let e: Vec<f64> = (0..n).map(|_| rng.random_range(0.8..1.2)).collect();
        let probe = PhysicalModel::new(graph.clone(), params.clone()).map_err(|e| e.to_string())?;
        let e_f = probe.f_matrix(&eta) * nalgebra::DVector::from_column_slice(&e);
        if e_f.iter().any(|v| *v <= 0.0) {
            continue;
        }
        params.e_f = e_f.iter().copied().collect();
        let model = PhysicalModel::new(graph, params).map_err(|e| e.to_string())?;
        let state = PhysicalState {
            eta: eta.clone(),
            p: vec![0.0; n],
            e_q: e.clone(),
        };
        let voltage = max_diff(&model.voltage_equilibrium(&eta).map_err(|e| e.to_string())?, &e);
        if voltage > 1e-9 {
            return Err(format!(
                "constructed point is not a voltage equilibrium ({voltage:.2e})"
            ));
        }
        let cond = model
            .decentralized_hessian_condition(&eta, &e)
            .map_err(|e| e.to_string())?;
        if !cond.holds {
            continue;
        }
        accepted += 1;
        let eig = SymmetricEigen::new(model.hessian(&state)).eigenvalues.min();
        min_eig = min_eig.min(eig);
        if eig <= 0.0 {
            counterexamples += 1;
        }
    }
    c.holds(
        "condition cases",
        accepted == 50,
        format!("{accepted} of {draws} draws"),
    );
    c.holds(
        "counterexamples",
        counterexamples == 0,
        format!("{counterexamples}, min eig {min_eig:.3e}"),
    );

    // Gradient and Hessian of H_p against central differences.
    let (mut grad_err, mut hess_err) = (0.0f64, 0.0f64);
    for _ in 0..100 {
        let n = rng.random_range(2..=7);
        let graph = random_graph(&mut rng, n);
        let m = graph.edge_count();
        let params = random_params(&mut rng, &graph, (0.05, 1.0));
        let model = PhysicalModel::new(graph, params).map_err(|e| e.to_string())?;
        let x = PhysicalState {
            eta: (0..m).map(|_| rng.random_range(-1.4..1.4)).collect(),
            p: (0..n).map(|_| rng.random_range(-2.0..2.0)).collect(),
            e_q: (0..n).map(|_| rng.random_range(0.7..1.3)).collect(),
        };
        let flat = |x: &PhysicalState| [x.eta.clone(), x.p.clone(), x.e_q.clone()].concat();
        let unflat = |y: &[f64]| PhysicalState {
            eta: y[..m].to_vec(),
            p: y[m..m + n].to_vec(),
            e_q: y[m + n..].to_vec(),
        };
        let y0 = flat(&x);
        let g = model.hamiltonian_gradient(&x);
        let g = [g.eta, g.p, g.e_q].concat();
        let hess = model.hessian(&x);
        let h = 1e-6;
        for i in 0..y0.len() {
            let (mut yp, mut ym) = (y0.clone(), y0.clone());
            yp[i] += h;
            ym[i] -= h;
            let fd = (model.hamiltonian(&unflat(&yp)) - model.hamiltonian(&unflat(&ym))) / (2.0 * h);
            grad_err = grad_err.max((fd - g[i]).abs() / g[i].abs().max(1.0));
            let gp = model.hamiltonian_gradient(&unflat(&yp));
            let gm = model.hamiltonian_gradient(&unflat(&ym));
            let col: Vec<f64> = [gp.eta, gp.p, gp.e_q]
                .concat()
                .iter()
                .zip([gm.eta, gm.p, gm.e_q].concat())
                .map(|(a, b)| (a - b) / (2.0 * h))
                .collect();
            for (j, fd) in col.iter().enumerate() {
                hess_err = hess_err.max((fd - hess[(j, i)]).abs() / hess[(j, i)].abs().max(1.0));
            }
        }
    }
    c.at_most("∇H rel err", grad_err, 1e-6);
    c.at_most("∇²H rel err", hess_err, 1e-5);

    let mut f_min = f64::INFINITY;
    for _ in 0..1000 {
        let n = rng.random_range(2..=8);
        let graph = random_graph(&mut rng, n);
        let m = graph.edge_count();
        let params = random_params(&mut rng, &graph, (0.01, 2.0));
        let model = PhysicalModel::new(graph, params).map_err(|e| e.to_string())?;
        let eta: Vec<f64> = (0..m)
            .map(|_| rng.random_range(-std::f64::consts::PI..std::f64::consts::PI))
            .collect();
        f_min = f_min.min(SymmetricEigen::new(model.f_matrix(&eta)).eigenvalues.min());
    }
    c.holds("F(η)≻0 on 1000 draws", f_min > 0.0, format!("min eig {f_min:.3e}"));
    c.finish()
}

fn a9() -> Outcome {
    let mut c = Checks::default();
    let basic = load("three_bus_basic.toml");
    let mut augmented = basic.with_variant(Variant::Augmented);
    augmented.market.rho = Some(1.0);
    let cases = [
        basic.clone(),
        load("three_bus_nodal.toml"),
        load("two_bus_congestion.toml"),
        basic.with_variant(Variant::Transformed),
        simplified_scenario(&basic).with_variant(Variant::TransformedSimplified),
        augmented,
        barrier_scenario(1e-2),
    ];
    for s in &cases {
        let mut coarse = s.clone();
        coarse.integrator.stop_when_steady = false;
        coarse.integrator.t_end = 200.0;
        let mut fine = coarse.clone();
        coarse.integrator.dt = 1e-2;
        fine.integrator.dt = 2.5e-3;
        let a = run(&coarse, None);
        let b = run(&fine, None);
        let variant = s.controller.variant;
        let dx = max_diff(a.trajectory.states.last().unwrap(), b.trajectory.states.last().unwrap());
        c.at_most(&format!("{variant} Δx"), dx, 1e-7);
        let (va, vb) = (a.diagnostics.descent_violations, b.diagnostics.descent_violations);
        c.holds(&format!("{variant} Δviolations"), va == vb, format!("{va} vs {vb}"));
    }
    c.finish()
}

fn main() {
    type Criterion = (&'static str, &'static str, fn() -> Outcome);
    let criteria: [Criterion; 9] = [
        ("A1", "3-bus basic loop reaches the welfare optimum", a1),
        ("A2", "shifted storage never increases", a2),
        ("A3", "binding generation bound: constrained optimum", a3),
        ("A4", "transformed loops match the basic loop", a4),
        ("A5", "congested lines: limit reached, flows consistent", a5),
        ("A6", "augmented loop with a linear cost", a6),
        ("A7", "barrier loop: feasibility and gap ordering", a7),
        ("A8", "storage function checks", a8),
        ("A9", "step-size independence per variant", a9),
    ];
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (id, title, check) in criteria {
        let start = Instant::now();
        let outcome = panic::catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("{id} PASS {title} [{secs:.1}s] {detail}"),
            Err(detail) => {
                failed += 1;
                println!("{id} FAIL {title} [{secs:.1}s] {detail}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", 9 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
