use approx::assert_relative_eq;
use laptime_conic::{solve, ConeKind, ConicProgram, LinExpr, ProgramBuilder, SolveStatus, SolverSettings};
use proptest::prelude::*;

fn settings() -> SolverSettings {
    SolverSettings::default()
}

fn assert_optimal_residuals(p: &ConicProgram, sol: &laptime_conic::ConicSolution) {
    assert_eq!(sol.status, SolveStatus::Optimal, "{sol:?}");
    let tol = settings();
    assert!(sol.residuals.primal <= tol.tol_feas);
    assert!(sol.residuals.dual <= tol.tol_feas);
    assert!(sol.residuals.gap <= tol.tol_gap_rel);
    let r = p.residuals(&sol.x);
    assert!(r.eq_violation <= 1e-8 * (1.0 + p.b.iter().fold(0.0f64, |m, v| m.max(v.abs()))));
    assert!(r.cone_violation <= 1e-8 * (1.0 + p.h.iter().fold(0.0f64, |m, v| m.max(v.abs()))));
}

#[test]
fn lp_corner() {
    // min x s.t. x - 3 >= 0
    let mut b = ProgramBuilder::new(1);
    b.add_cost(0, 1.0);
    b.add_nonneg(LinExpr::var(0).add_const(-3.0));
    let p = b.finalize().unwrap();
    let sol = solve(&p, &settings());
    assert_optimal_residuals(&p, &sol);
    assert_relative_eq!(sol.x[0], 3.0, epsilon = 1e-8);
    assert_relative_eq!(sol.objective_value, 3.0, epsilon = 1e-8);
}

#[test]
fn soc_disc_maximizes_sum() {
    // min -(u+v) s.t. ‖(u, v)‖ ≤ 2
    let mut b = ProgramBuilder::new(2);
    b.add_cost(0, -1.0).add_cost(1, -1.0);
    b.add_soc(LinExpr::constant(2.0), &[LinExpr::var(0), LinExpr::var(1)]);
    let p = b.finalize().unwrap();
    let sol = solve(&p, &settings());
    assert_optimal_residuals(&p, &sol);
    // Lagrangian stationarity: the optimum lies on the boundary along (1, 1)
    let r = 2.0f64;
    let expected = r / 2.0f64.sqrt();
    assert_relative_eq!(sol.x[0], expected, epsilon = 1e-8);
    assert_relative_eq!(sol.x[1], expected, epsilon = 1e-8);
    assert_relative_eq!(sol.objective_value, -2.0 * 2.0f64.sqrt(), epsilon = 1e-8);
}

#[test]
fn norm_of_constant_vector() {
    let mut b = ProgramBuilder::new(1);
    b.add_cost(0, 1.0);
    b.add_soc(LinExpr::var(0), &[LinExpr::constant(3.0), LinExpr::constant(4.0)]);
    let p = b.finalize().unwrap();
    let sol = solve(&p, &settings());
    assert_optimal_residuals(&p, &sol);
    assert_relative_eq!(sol.x[0], 5.0, epsilon = 1e-8);
}

#[test]
fn square_linear_system_without_cones() {
    // 2x + y = 3, x - y = 0
    let mut b = ProgramBuilder::new(2);
    b.add_cost(0, 1.0).add_cost(1, 2.0);
    b.add_equality(&LinExpr::term(0, 2.0).add_term(1, 1.0).add_const(-3.0));
    b.add_equality(&LinExpr::var(0).add_term(1, -1.0));
    let p = b.finalize().unwrap();
    let sol = solve(&p, &settings());
    assert_optimal_residuals(&p, &sol);
    assert_relative_eq!(sol.x[0], 1.0, epsilon = 1e-8);
    assert_relative_eq!(sol.x[1], 1.0, epsilon = 1e-8);
}

#[test]
fn zero_cone_rows_act_as_equalities() {
    // min x + y s.t. x - 1 = 0 (zero cone), y >= 2
    let mut b = ProgramBuilder::new(2);
    b.add_cost(0, 1.0).add_cost(1, 1.0);
    b.add_cone(ConeKind::Zero(1), &[LinExpr::var(0).add_const(-1.0)]);
    b.add_nonneg(LinExpr::var(1).add_const(-2.0));
    let p = b.finalize().unwrap();
    let sol = solve(&p, &settings());
    assert_optimal_residuals(&p, &sol);
    assert_relative_eq!(sol.x[0], 1.0, epsilon = 1e-8);
    assert_relative_eq!(sol.x[1], 2.0, epsilon = 1e-8);
    // dual: c + Gᵀz = 0 with G = -I gives z = (1, 1)
    assert_relative_eq!(sol.z[0], 1.0, epsilon = 1e-7);
    assert_relative_eq!(sol.z[1], 1.0, epsilon = 1e-7);
}

#[test]
fn rotated_cone_gives_inverse() {
    // min t s.t. t·x ≥ 1, x = 4  →  t = 1/4
    let mut b = ProgramBuilder::new(2);
    b.add_cost(0, 1.0);
    b.add_equality(&LinExpr::var(1).add_const(-4.0));
    b.add_rotated_soc(&LinExpr::var(0), &LinExpr::var(1), &[LinExpr::constant(1.0)]);
    let p = b.finalize().unwrap();
    let sol = solve(&p, &settings());
    assert_optimal_residuals(&p, &sol);
    assert_relative_eq!(sol.x[0], 0.25, epsilon = 1e-8);
}

#[test]
fn contradictory_bounds_are_primal_infeasible() {
    // x ≥ 1 and −x ≥ 0
    let mut b = ProgramBuilder::new(1);
    b.add_cost(0, 1.0);
    b.add_nonneg(LinExpr::var(0).add_const(-1.0));
    b.add_nonneg(LinExpr::term(0, -1.0));
    let p = b.finalize().unwrap();
    let sol = solve(&p, &settings());
    assert_eq!(sol.status, SolveStatus::PrimalInfeasible);
    // certificate: Gᵀz = 0, z ≥ 0, hᵀz < 0
    let gtz = p.g.tmul_vec(&sol.z);
    assert!(gtz[0].abs() <= 1e-8);
    assert!(sol.z.iter().all(|&v| v >= -1e-12));
    let hz: f64 = p.h.iter().zip(&sol.z).map(|(a, b)| a * b).sum();
    assert_relative_eq!(hz, -1.0, epsilon = 1e-12);
}

#[test]
fn unbounded_objective_is_dual_infeasible() {
    // min -x s.t. x ≥ 0
    let mut b = ProgramBuilder::new(1);
    b.add_cost(0, -1.0);
    b.add_nonneg(LinExpr::var(0));
    let p = b.finalize().unwrap();
    let sol = solve(&p, &settings());
    assert_eq!(sol.status, SolveStatus::DualInfeasible);
    assert!(sol.x[0] > 0.0);
    assert_relative_eq!(p.c[0] * sol.x[0], -1.0, epsilon = 1e-12);
}

#[test]
fn infeasible_soc_certificate() {
    // ‖(x, 1)‖ ≤ 0.5 is impossible
    let mut b = ProgramBuilder::new(1);
    b.add_soc(LinExpr::constant(0.5), &[LinExpr::var(0), LinExpr::constant(1.0)]);
    let p = b.finalize().unwrap();
    let sol = solve(&p, &settings());
    assert_eq!(sol.status, SolveStatus::PrimalInfeasible);
    let gtz = p.g.tmul_vec(&sol.z);
    assert!(gtz[0].abs() <= 1e-7);
    // z in the (self-dual) second-order cone
    assert!(sol.z[0] + 1e-9 >= (sol.z[1].powi(2) + sol.z[2].powi(2)).sqrt());
}

fn random_program(seed: u64) -> ConicProgram {
    // a feasible, bounded program built from a deterministic generator
    let mut state = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
    let mut rnd = move || {
        state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        ((state >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
    };
    let n = 6;
    let mut b = ProgramBuilder::new(n);
    for j in 0..n {
        b.add_cost(j, rnd());
        // box |x_j| ≤ 1 keeps the problem bounded
        b.add_nonneg(LinExpr::var(j).add_const(1.0));
        b.add_nonneg(LinExpr::term(j, -1.0).add_const(1.0));
    }
    let mut rest = Vec::new();
    for j in 1..n {
        rest.push(LinExpr::term(j, rnd()).add_term(0, rnd()));
    }
    b.add_soc(LinExpr::constant(2.0).add_term(0, 0.5), &rest);
    b.add_equality(&LinExpr::term(1, 1.0).add_term(2, rnd()).add_const(0.1 * rnd()));
    b.finalize().unwrap()
}

#[test]
fn identical_inputs_give_bit_identical_outputs() {
    let p = random_program(7);
    let a = solve(&p, &settings());
    let b = solve(&p, &settings());
    assert_eq!(a.status, SolveStatus::Optimal);
    let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&a.x), bits(&b.x));
    assert_eq!(bits(&a.y), bits(&b.y));
    assert_eq!(bits(&a.z), bits(&b.z));
    assert_eq!(a.iterations, b.iterations);
}

#[test]
fn text_dump_solves_identically() {
    let p = random_program(3);
    let q = ConicProgram::from_text(&p.to_text()).unwrap();
    let a = solve(&p, &settings());
    let b = solve(&q, &settings());
    assert_eq!(a, b);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn weak_duality_holds(seed in 0u64..10_000) {
        let p = random_program(seed);
        let sol = solve(&p, &settings());
        prop_assert_eq!(sol.status, SolveStatus::Optimal);
        let scale = 1.0 + sol.objective_value.abs();
        prop_assert!(sol.objective_value >= sol.dual_objective - 1e-8 * scale);
    }

    #[test]
    fn cost_scaling_keeps_argmin(seed in 0u64..10_000, k in 0.01f64..100.0) {
        let p = random_program(seed);
        let mut q = p.clone();
        q.c.iter_mut().for_each(|v| *v *= k);
        let a = solve(&p, &settings());
        let b = solve(&q, &settings());
        prop_assert_eq!(a.status, SolveStatus::Optimal);
        prop_assert_eq!(b.status, SolveStatus::Optimal);
        prop_assert!((a.objective_value * k - b.objective_value).abs() <= 1e-6 * (1.0 + b.objective_value.abs()));
        for (x, y) in a.x.iter().zip(&b.x) {
            prop_assert!((x - y).abs() <= 1e-3, "{} vs {}", x, y);
        }
    }
}
