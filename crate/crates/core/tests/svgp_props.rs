mod common;

use common::svgpo::*;

#[test]
fn elbo_lower_bounds_the_evidence() {
    let excess = worst_bound_excess(50, 21);
    assert!(excess <= 1e-6, "ELBO exceeds LML by {excess:e}");
}

#[test]
fn inducing_at_data_converges_to_exact_gp() {
    let c = z_equals_x_convergence(22);
    assert!(c.gap <= 1e-3, "gap {:e}", c.gap);
    assert!(c.mean_diff <= 1e-2 && c.std_diff <= 1e-2, "mean {:e} std {:e}", c.mean_diff, c.std_diff);
}

#[test]
fn minibatch_objective_is_unbiased() {
    let bias = minibatch_bias(23);
    assert!(bias <= 1e-10, "bias {bias:e}");
}
