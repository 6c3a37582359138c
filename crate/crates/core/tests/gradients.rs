//! Gradient checks; the bodies live in `common::grad_suite`.

mod common;

use common::grad_suite;

#[test]
fn conv2d_3x3_and_1x1() {
    grad_suite::conv2d_3x3_and_1x1();
}

#[test]
fn conv_transpose() {
    grad_suite::conv_transpose();
}

#[test]
fn batch_norm_train_mode() {
    grad_suite::batch_norm_train_mode();
}

#[test]
fn relu_away_from_kink() {
    grad_suite::relu_away_from_kink();
}

#[test]
fn avg_pool() {
    grad_suite::avg_pool();
}

#[test]
fn bigru_five_steps() {
    grad_suite::bigru_five_steps();
}

#[test]
fn linear_sigmoid() {
    grad_suite::linear_sigmoid();
}

#[test]
fn weighted_bce_wrt_prediction() {
    grad_suite::weighted_bce_wrt_prediction();
}

#[test]
fn rcb_composite() {
    grad_suite::rcb_composite();
}

#[test]
fn reb_composite() {
    grad_suite::reb_composite();
}

#[test]
fn rdb_composite() {
    grad_suite::rdb_composite();
}

#[test]
fn full_model_end_to_end_loss() {
    grad_suite::full_model_end_to_end_loss();
}

#[test]
fn eval_forward_yields_probabilities() {
    grad_suite::eval_forward_yields_probabilities();
}
