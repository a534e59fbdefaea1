#[path = "support/gradcheck.rs"]
mod gradcheck;

#[test]
fn partvq_decoder_codebook_and_commitment() {
    gradcheck::partvq_decoder_and_codebook_gradients();
}

#[test]
fn partvq_straight_through() {
    gradcheck::partvq_straight_through_gradient();
}

#[test]
fn tinylm() {
    gradcheck::tinylm_gradients();
}

#[test]
fn visfuse() {
    gradcheck::visfuse_gradients();
}

#[test]
fn forward_kinematics() {
    gradcheck::forward_kinematics_jacobian();
}
